//! Finite-difference verification of the analytic gradients.
//!
//! Central differences (step 1e-6, double precision) on a random subsample of
//! every parameter group, compared against the gradients of the training
//! loss. Instances whose allocations sit next to the hard min/max kinks of
//! the constraint chain are rejected and redrawn: a step whose allocation is
//! within 1e-3 of its remaining budget (or of zero) may cross the kink inside
//! the difference stencil, where the two-sided derivative is undefined.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::Serialize;

use crate::encoder::Dropout;
use crate::error::Result;
use crate::market::features::SampleBatch;
use crate::model::LemModel;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub step: f64,
    /// Maximum admissible relative error.
    pub tolerance: f64,
    /// Absolute agreement floor: central differences resolve nothing below
    /// roughly `|loss| * ulp / step` plus curvature truncation, so gaps under
    /// this floor count as agreement regardless of the gradient's size.
    pub absolute_floor: f64,
    /// Fraction of each parameter group to probe (at least one slot).
    pub sample_fraction: f64,
    /// Kink proximity threshold on the allocation chain.
    pub kink_margin: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            step: 1e-6,
            tolerance: 1e-4,
            absolute_floor: 1e-6,
            sample_fraction: 0.01,
            kink_margin: 1e-3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GroupReport {
    pub name: String,
    pub checked_slots: usize,
    pub max_relative_error: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub groups: Vec<GroupReport>,
    pub passed: bool,
    pub max_relative_error: f64,
}

impl GradCheckReport {
    pub fn failing_groups(&self) -> Vec<&str> {
        self.groups
            .iter()
            .filter(|g| !g.passed)
            .map(|g| g.name.as_str())
            .collect()
    }
}

/// Whether any interior step's pre-projection rate sits within `margin` of
/// the hard min/max kinks. A solidly clamped step is fine (its derivative
/// flows through the budget path); only the crossing region is excluded.
pub fn kink_adjacent(model: &LemModel<f64>, batch: &SampleBatch, margin: f64) -> Result<bool> {
    Ok(model.constraint_slack(batch)? < margin)
}

/// Verify supplied analytic gradients against central differences of the
/// training loss. Exposed separately so tests can corrupt the analytic side
/// and watch the harness catch it.
pub fn verify_gradients(
    model: &LemModel<f64>,
    batch: &SampleBatch,
    cfg: &GradCheckConfig,
    analytic: &[Tensor<f64>],
) -> Result<GradCheckReport> {
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let mut groups = Vec::with_capacity(model.params.len());
    let mut worst = 0.0f64;

    // One reusable probe model; slots are nudged in place per evaluation.
    let mut probe = LemModel::<f64>::new(model.config.clone(), 0)?;
    probe.params = model.params.cast();

    for (idx, id) in model.params.ids().enumerate().collect::<Vec<_>>() {
        let n = model.params.tensor(id).numel();
        let samples = ((n as f64 * cfg.sample_fraction).ceil() as usize).clamp(1, n);
        let mut max_rel = 0.0f64;
        for _ in 0..samples {
            let slot = rng.gen_range(0..n);
            let center = probe.params.tensor(id).data()[slot];
            probe.params.tensor_mut(id).data_mut()[slot] = center + cfg.step;
            let up = probe.loss(batch)?.0.total;
            probe.params.tensor_mut(id).data_mut()[slot] = center - cfg.step;
            let down = probe.loss(batch)?.0.total;
            probe.params.tensor_mut(id).data_mut()[slot] = center;
            let numeric = (up - down) / (2.0 * cfg.step);
            let a = analytic[idx].data()[slot];
            // Pass iff |a - n| <= floor + tolerance * max(|a|, |n|); the
            // normalized form below is < tolerance exactly in that case and
            // reduces to the classic relative error for healthy gradients.
            let gap = (a - numeric).abs();
            let rel = cfg.tolerance * gap
                / (cfg.absolute_floor + cfg.tolerance * a.abs().max(numeric.abs()));
            if rel > max_rel {
                max_rel = rel;
            }
        }
        if max_rel > worst {
            worst = max_rel;
        }
        groups.push(GroupReport {
            name: model.params.name(id).to_string(),
            checked_slots: samples,
            max_relative_error: max_rel,
            passed: max_rel < cfg.tolerance,
        });
    }
    Ok(GradCheckReport {
        passed: groups.iter().all(|g| g.passed),
        groups,
        max_relative_error: worst,
    })
}

/// Full gradient check of a model on a batch. The batch must be
/// kink-clear (see [`kink_adjacent`]); callers draw batches until one
/// qualifies.
pub fn grad_check(
    model: &LemModel<f64>,
    batch: &SampleBatch,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport> {
    let (_, analytic) = model.loss_and_gradients(batch, &mut Dropout::Off)?;
    verify_gradients(model, batch, cfg, &analytic)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::features::FEATURE_DIM;
    use crate::market::{build_features, synth_market, FeatureSpec, Regime, SeasonalMode};
    use crate::model::ModelConfig;

    fn check_model(seed: u64) -> LemModel<f64> {
        let config = ModelConfig {
            feature_dim: FEATURE_DIM,
            lookback_steps: 3,
            horizon_steps: 4,
            encoder: crate::encoder::EncoderConfig {
                hidden_size: 4,
                num_heads: 2,
                tkan_sublayers: 2,
                spline_grid_size: 5,
                spline_order: 3,
                dropout_rate: 0.0,
            },
            decision: crate::decision::DecisionOptions {
                mlp_width: 6,
                ..Default::default()
            },
            objective: Default::default(),
        };
        LemModel::new(config, seed).unwrap()
    }

    fn check_batch(seed: u64) -> SampleBatch {
        let series = synth_market(seed, 80, Regime::Iid);
        let spec = FeatureSpec {
            lookback_steps: 3,
            horizon_steps: 4,
            normalization_window: 48,
            seasonal_mode: SeasonalMode::Intraday,
            frequency_tag: None,
        };
        let batch = build_features(&series, &spec).unwrap();
        batch.select(&[0, 1])
    }

    fn kink_clear_pair() -> (LemModel<f64>, SampleBatch) {
        for seed in 0..20u64 {
            let model = check_model(100 + seed);
            let batch = check_batch(200 + seed);
            if !kink_adjacent(&model, &batch, 1e-3).unwrap() {
                return (model, batch);
            }
        }
        panic!("no kink-clear instance found in 20 draws");
    }

    #[test]
    fn full_model_gradients_pass_at_tolerance() {
        let (model, batch) = kink_clear_pair();
        let cfg = GradCheckConfig {
            sample_fraction: 0.02,
            seed: 3,
            ..Default::default()
        };
        let report = grad_check(&model, &batch, &cfg).unwrap();
        assert!(
            report.passed,
            "failing groups: {:?} (max rel {})",
            report.failing_groups(),
            report.max_relative_error
        );
        assert_eq!(report.groups.len(), model.params.len());
    }

    #[test]
    fn corrupted_gradient_is_caught() {
        let (model, batch) = kink_clear_pair();
        let cfg = GradCheckConfig {
            sample_fraction: 1.0,
            seed: 4,
            ..Default::default()
        };
        let (_, mut analytic) = model
            .loss_and_gradients(&batch, &mut Dropout::Off)
            .unwrap();
        // Corrupt one group with a visible bias.
        let victim = model.params.len() / 2;
        for v in analytic[victim].data_mut().iter_mut() {
            *v += 0.37;
        }
        let report = verify_gradients(&model, &batch, &cfg, &analytic).unwrap();
        assert!(!report.passed);
        let victim_name = model
            .params
            .ids()
            .nth(victim)
            .map(|id| model.params.name(id).to_string())
            .unwrap();
        assert!(report.failing_groups().contains(&victim_name.as_str()));
    }
}
