//! Full model assembly: configuration, parameter initialization, forward
//! passes, loss/gradient extraction, and checkpointing.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::decision::{AllocationTensor, DecisionBlock, DecisionConfig, DecisionOptions};
use crate::encoder::{Dropout, Encoder, EncoderConfig};
use crate::error::{LemError, Result};
use crate::graph::{Graph, NodeId};
use crate::market::features::{SampleBatch, CH_RETURN, CH_VOLUME};
use crate::objective::{LossBreakdown, ObjectiveBuilder, ObjectiveConfig, ObjectiveNodes};
use crate::params::{Checkpoint, Init, Leaves, ParamSet};
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Engineered feature channels D.
    pub feature_dim: usize,
    /// Lookback positions L ahead of the decision horizon.
    pub lookback_steps: usize,
    /// Decision horizon N.
    pub horizon_steps: usize,
    pub encoder: EncoderConfig,
    pub decision: DecisionOptions,
    #[serde(default)]
    pub objective: ObjectiveConfig,
}

impl PartialEq for EncoderConfig {
    fn eq(&self, other: &Self) -> bool {
        self.hidden_size == other.hidden_size
            && self.num_heads == other.num_heads
            && self.tkan_sublayers == other.tkan_sublayers
            && self.spline_grid_size == other.spline_grid_size
            && self.spline_order == other.spline_order
            && self.dropout_rate == other.dropout_rate
    }
}

impl PartialEq for DecisionOptions {
    fn eq(&self, other: &Self) -> bool {
        self.mlp_depth == other.mlp_depth
            && self.mlp_width == other.mlp_width
            && self.clip_sharpness == other.clip_sharpness
            && self.max_rate == other.max_rate
    }
}

impl PartialEq for ObjectiveConfig {
    fn eq(&self, other: &Self) -> bool {
        self.completion_sharpness == other.completion_sharpness && self.epsilon == other.epsilon
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if self.feature_dim == 0 {
            return Err(LemError::validation("feature_dim must be positive"));
        }
        if self.lookback_steps == 0 {
            return Err(LemError::validation("lookback_steps must be positive"));
        }
        DecisionConfig::new(self.horizon_steps, &self.decision)?;
        Ok(())
    }

    pub fn total_steps(&self) -> usize {
        self.lookback_steps + self.horizon_steps
    }
}

/// Per-scenario execution prices and performance in the public outcome
/// layout `[B, 2, N+1, 4]`.
pub struct ExecutionOutcome<F: Real> {
    pub achieved_price: Tensor<F>,
    pub benchmark_price: Tensor<F>,
    /// `(achieved / benchmark - 1) * 100`.
    pub diff: Tensor<F>,
}

/// Graph handles for one forward pass.
pub struct ForwardNodes {
    pub context: NodeId,
    pub vsn_weights: NodeId,
    /// Path-major allocations `[M, B, N]`.
    pub allocations: NodeId,
    /// Pre-projection rates per interior step (kink diagnostics).
    pub pre_clip: Vec<NodeId>,
    /// Pre-soft-clip rates per interior step.
    pub lifted: Vec<NodeId>,
    /// Remaining budget entering each interior step.
    pub budgets: Vec<NodeId>,
    pub objective: ObjectiveNodes,
}

pub struct LemModel<F: Real> {
    pub config: ModelConfig,
    pub params: ParamSet<F>,
    encoder: Encoder,
    decision: DecisionBlock,
    objective: ObjectiveBuilder,
}

impl<F: Real> LemModel<F> {
    /// Fresh model with seeded initialization; a fixed seed gives
    /// bit-identical parameters.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamSet::new();
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut init = Init::new(&mut rng);
        let encoder = Encoder::new(&mut params, "encoder", config.feature_dim, &config.encoder, &mut init);
        let decision_cfg = DecisionConfig::new(config.horizon_steps, &config.decision)?;
        let decision = DecisionBlock::new(
            &mut params,
            "decision",
            config.encoder.hidden_size,
            config.feature_dim,
            decision_cfg.clone(),
            &mut init,
        );
        let objective = ObjectiveBuilder::new(decision_cfg.grid(), config.objective);
        Ok(LemModel {
            config,
            params,
            encoder,
            decision,
            objective,
        })
    }

    pub fn decision_config(&self) -> &DecisionConfig {
        &self.decision.config
    }

    pub fn objective_builder(&self) -> &ObjectiveBuilder {
        &self.objective
    }

    fn check_batch(&self, batch: &SampleBatch) -> Result<()> {
        batch.validate()?;
        if batch.feature_dim() != self.config.feature_dim
            || batch.lookback_steps != self.config.lookback_steps
            || batch.horizon_steps != self.config.horizon_steps
        {
            return Err(LemError::ShapeMismatch {
                context: "model input batch [lookback, horizon, features]".into(),
                expected: vec![
                    self.config.lookback_steps,
                    self.config.horizon_steps,
                    self.config.feature_dim,
                ],
                found: vec![batch.lookback_steps, batch.horizon_steps, batch.feature_dim()],
            });
        }
        Ok(())
    }

    /// Record a full forward pass (encoder, allocations, objective) on `g`.
    pub fn forward(
        &self,
        g: &mut Graph<F>,
        lv: &Leaves,
        batch: &SampleBatch,
        dropout: &mut Dropout<'_>,
    ) -> Result<ForwardNodes> {
        self.check_batch(batch)?;
        let features = g.constant(batch.features.cast::<F>());
        let encoded = self.encoder.apply(g, lv, features, dropout)?;
        let alloc_nodes = self.decision.allocate(
            g,
            lv,
            encoded.context,
            features,
            self.config.lookback_steps,
            (CH_RETURN, CH_VOLUME),
        );
        let prices = batch.target_prices.cast::<F>();
        let volumes = batch.target_volumes.cast::<F>();
        let objective = self.objective.build(g, alloc_nodes.path_major, &prices, &volumes);
        Ok(ForwardNodes {
            context: encoded.context,
            vsn_weights: encoded.vsn_weights,
            allocations: alloc_nodes.path_major,
            pre_clip: alloc_nodes.pre_clip,
            lifted: alloc_nodes.lifted,
            budgets: alloc_nodes.budgets,
            objective,
        })
    }

    /// Distance of the interior steps from the hard-clip kinks, for
    /// finite-difference safety. A kink can only bite when the budget cap can
    /// flip branches inside the difference stencil, so the raw gap
    /// `|alpha_temp - remaining|` is normalized by how far either side can
    /// move: the pre-clip rate moves proportionally to the local soft-clip
    /// slope, and the remaining budget is parameter-sensitive everywhere
    /// except step one, where it is the constant 1. A saturated clip at step
    /// one (slope ~ 0 against a constant budget) cannot cross at all. The
    /// zero floor `alpha_temp` is also included.
    pub fn constraint_slack(&self, batch: &SampleBatch) -> Result<f64> {
        let mut g = Graph::new();
        let lv = self.params.leaves(&mut g);
        let nodes = self.forward(&mut g, &lv, batch, &mut Dropout::Off)?;
        let cfg = &self.decision.config;
        let mut slack = f64::INFINITY;
        for (step, ((&pre, &lifted), &budget)) in nodes
            .pre_clip
            .iter()
            .zip(nodes.lifted.iter())
            .zip(nodes.budgets.iter())
            .enumerate()
        {
            let pre_v = g.value(pre);
            let lift_v = g.value(lifted);
            let budget_v = g.value(budget);
            for i in 0..pre_v.numel() {
                let temp = pre_v.data()[i].as_f64();
                let x = lift_v.data()[i].as_f64();
                let rem = budget_v.data()[i].as_f64();
                let slope =
                    crate::decision::soft_clip_slope(x, cfg.max_rate, cfg.clip_sharpness).abs();
                let budget_mobility = if step == 0 { 0.0 } else { 1.0 };
                let mobility = slope + budget_mobility;
                if mobility > 1e-6 {
                    slack = slack.min((temp - rem).abs() / mobility.min(1.0));
                }
                slack = slack.min(temp);
            }
        }
        Ok(slack)
    }

    /// Encoder context values `[B, T, H]` without gradients.
    pub fn context_values(&self, batch: &SampleBatch) -> Result<Tensor<F>> {
        self.check_batch(batch)?;
        let mut g = Graph::new();
        let lv = self.params.leaves(&mut g);
        let features = g.constant(batch.features.cast::<F>());
        let encoded = self.encoder.apply(&mut g, &lv, features, &mut Dropout::Off)?;
        Ok(g.value(encoded.context).clone())
    }

    /// Allocation schedules in the public layout, without gradients.
    pub fn allocations(&self, batch: &SampleBatch) -> Result<AllocationTensor<F>> {
        let mut g = Graph::new();
        let lv = self.params.leaves(&mut g);
        let nodes = self.forward(&mut g, &lv, batch, &mut Dropout::Off)?;
        Ok(AllocationTensor::from_path_major(
            g.value(nodes.allocations),
            self.decision.config.grid(),
        ))
    }

    /// Loss summary plus the per-path performance block `[B, 2, N+1, 4]`.
    pub fn loss(&self, batch: &SampleBatch) -> Result<(LossBreakdown, Tensor<F>)> {
        let mut g = Graph::new();
        let lv = self.params.leaves(&mut g);
        let nodes = self.forward(&mut g, &lv, batch, &mut Dropout::Off)?;
        let breakdown = self.objective.breakdown(&g, &nodes.objective);
        let diff = crate::objective::outcome_from_path_scalars(
            g.value(nodes.objective.diff),
            self.decision.config.grid(),
        );
        Ok((breakdown, diff))
    }

    /// Soft-mask execution outcome for every scenario: achieved prices,
    /// benchmark prices and relative performance, each `[B, 2, N+1, 4]`
    /// (batch, allocation kind, minimum period, strategy).
    pub fn execution_outcome(&self, batch: &SampleBatch) -> Result<ExecutionOutcome<F>> {
        let mut g = Graph::new();
        let lv = self.params.leaves(&mut g);
        let nodes = self.forward(&mut g, &lv, batch, &mut Dropout::Off)?;
        let grid = self.decision.config.grid();
        Ok(ExecutionOutcome {
            achieved_price: crate::objective::outcome_from_path_scalars(
                g.value(nodes.objective.achieved),
                grid,
            ),
            benchmark_price: crate::objective::outcome_from_path_scalars(
                g.value(nodes.objective.benchmark),
                grid,
            ),
            diff: crate::objective::outcome_from_path_scalars(g.value(nodes.objective.diff), grid),
        })
    }

    /// One training evaluation: loss plus gradients for every parameter, in
    /// registration order.
    pub fn loss_and_gradients(
        &self,
        batch: &SampleBatch,
        dropout: &mut Dropout<'_>,
    ) -> Result<(LossBreakdown, Vec<Tensor<F>>)> {
        let mut g = Graph::new();
        let lv = self.params.leaves(&mut g);
        let nodes = self.forward(&mut g, &lv, batch, dropout)?;
        let breakdown = self.objective.breakdown(&g, &nodes.objective);
        let grads = g.backward(nodes.objective.total);
        let out = self
            .params
            .ids()
            .map(|id| grads.for_leaf(lv.node(id), self.params.tensor(id).shape()))
            .collect();
        Ok((breakdown, out))
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let meta = serde_json::json!({
            "model": self.config,
            "precision": F::PRECISION,
        });
        Checkpoint::from_params(&self.params, meta)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        self.checkpoint().save(path)
    }

    /// Restore a model from a checkpoint, refusing mismatched geometry with
    /// an explicit diff.
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let ckpt = Checkpoint::load(path)?;
        let config: ModelConfig = serde_json::from_value(
            ckpt.meta
                .get("model")
                .cloned()
                .ok_or_else(|| LemError::validation("checkpoint lacks model metadata"))?,
        )
        .map_err(|e| LemError::json("checkpoint model metadata", e))?;
        let mut model = LemModel::new(config, 0)?;
        ckpt.apply(&mut model.params)?;
        Ok(model)
    }

    /// Verify a checkpoint's geometry against an expected configuration.
    pub fn check_compatible(expected: &ModelConfig, found: &ModelConfig) -> Result<()> {
        if expected.horizon_steps != found.horizon_steps {
            return Err(LemError::ShapeMismatch {
                context: "checkpoint horizon (allocation steps)".into(),
                expected: vec![expected.horizon_steps],
                found: vec![found.horizon_steps],
            });
        }
        if expected != found {
            return Err(LemError::validation(format!(
                "checkpoint configuration mismatch: expected {expected:?}, found {found:?}"
            )));
        }
        Ok(())
    }

    pub fn cast<G: Real>(&self) -> LemModel<G> {
        let mut clone = LemModel::<G>::new(self.config.clone(), 0).expect("config already validated");
        clone.params = self.params.cast();
        clone
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::features::FEATURE_DIM;
    use crate::market::{build_features, synth_market, FeatureSpec, Regime, SeasonalMode};

    pub(crate) fn tiny_config(l: usize, n: usize, h: usize) -> ModelConfig {
        ModelConfig {
            feature_dim: FEATURE_DIM,
            lookback_steps: l,
            horizon_steps: n,
            encoder: EncoderConfig {
                hidden_size: h,
                num_heads: 2,
                tkan_sublayers: 2,
                spline_grid_size: 5,
                spline_order: 3,
                dropout_rate: 0.0,
            },
            decision: DecisionOptions {
                mlp_width: 8,
                ..DecisionOptions::default()
            },
            objective: ObjectiveConfig::default(),
        }
    }

    pub(crate) fn tiny_batch(l: usize, n: usize, windows: usize, seed: u64) -> SampleBatch {
        let series = synth_market(seed, 60 + l + n + windows + 10, Regime::Iid);
        let spec = FeatureSpec {
            lookback_steps: l,
            horizon_steps: n,
            normalization_window: 48,
            seasonal_mode: SeasonalMode::Intraday,
            frequency_tag: None,
        };
        let batch = build_features(&series, &spec).unwrap();
        let take: Vec<usize> = (0..windows.min(batch.len())).collect();
        batch.select(&take)
    }

    #[test]
    fn forward_is_deterministic_and_conserves_budget() {
        let config = tiny_config(4, 4, 4);
        let model = LemModel::<f64>::new(config, 7).unwrap();
        let batch = tiny_batch(4, 4, 3, 1);

        let alloc_a = model.allocations(&batch).unwrap();
        let alloc_b = model.allocations(&batch).unwrap();
        assert_eq!(alloc_a.values, alloc_b.values);
        alloc_a.validate(1e-6).unwrap();

        let (loss_a, _) = model.loss(&batch).unwrap();
        let (loss_b, _) = model.loss(&batch).unwrap();
        assert_eq!(loss_a.total.to_bits(), loss_b.total.to_bits());
        assert!(loss_a.first_non_finite().is_none());
    }

    #[test]
    fn same_seed_same_model_different_seed_differs() {
        let config = tiny_config(4, 4, 4);
        let a = LemModel::<f64>::new(config.clone(), 7).unwrap();
        let b = LemModel::<f64>::new(config.clone(), 7).unwrap();
        let c = LemModel::<f64>::new(config, 8).unwrap();
        for id in a.params.ids() {
            assert_eq!(a.params.tensor(id), b.params.tensor(id));
        }
        let differs = a
            .params
            .ids()
            .any(|id| a.params.tensor(id) != c.params.tensor(id));
        assert!(differs);
    }

    #[test]
    fn checkpoint_roundtrip_forward_is_bit_identical() {
        let config = tiny_config(3, 4, 4);
        let model = LemModel::<f32>::new(config, 9).unwrap();
        let batch = tiny_batch(3, 4, 2, 2);
        let before = model.allocations(&batch).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt.json");
        model.save(&path).unwrap();
        let restored = LemModel::<f32>::load(&path).unwrap();
        let after = restored.allocations(&batch).unwrap();
        assert_eq!(before.values, after.values);
    }

    #[test]
    fn horizon_mismatch_is_an_explicit_shape_diff() {
        let a = tiny_config(3, 4, 4);
        let b = tiny_config(3, 6, 4);
        let err = LemModel::<f64>::check_compatible(&a, &b).unwrap_err();
        match err {
            LemError::ShapeMismatch { expected, found, .. } => {
                assert_eq!(expected, vec![4]);
                assert_eq!(found, vec![6]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn allocations_ignore_future_positions() {
        // Step-s allocations must be bit-identical when any later feature
        // position is perturbed.
        let config = tiny_config(4, 4, 4);
        let model = LemModel::<f64>::new(config, 11).unwrap();
        let batch = tiny_batch(4, 4, 2, 3);
        let base = model.allocations(&batch).unwrap();

        for step in 1..=4usize {
            // Perturb feature position L + step (the bar after step s).
            let mut poked = batch.clone();
            let pos = 4 + step;
            if pos >= poked.total_steps() {
                continue;
            }
            for b in 0..poked.len() {
                for ch in 0..poked.feature_dim() {
                    let v = poked.features.at(&[b, pos, ch]);
                    poked.features.set(&[b, pos, ch], v + 0.5);
                }
            }
            let after = model.allocations(&poked).unwrap();
            let grid = base.grid;
            for b in 0..base.batch_size() {
                for (_, kind, period, strategy) in grid.iter() {
                    for t in 0..step {
                        assert_eq!(
                            base.at(b, t, period, strategy, kind).to_bits(),
                            after.at(b, t, period, strategy, kind).to_bits(),
                            "step {} reacted to position {}",
                            t + 1,
                            pos
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn single_precision_conservation_holds_at_long_horizons() {
        // The 1e-6 conservation tolerance must survive f32 rounding of the
        // budget recursion even at N = 12.
        for seed in 0..8u64 {
            let config = tiny_config(2, 12, 4);
            let model = LemModel::<f32>::new(config, 100 + seed).unwrap();
            let batch = tiny_batch(2, 12, 4, seed);
            let alloc = model.allocations(&batch).unwrap();
            alloc.validate(1e-6).unwrap();
        }
    }

    #[test]
    fn execution_outcome_prices_are_positive_and_consistent() {
        let config = tiny_config(3, 4, 4);
        let model = LemModel::<f64>::new(config, 15).unwrap();
        let batch = tiny_batch(3, 4, 2, 6);
        let outcome = model.execution_outcome(&batch).unwrap();
        assert_eq!(outcome.achieved_price.shape(), &[2, 2, 5, 4]);
        for i in 0..outcome.achieved_price.numel() {
            let a = outcome.achieved_price.data()[i];
            let b = outcome.benchmark_price.data()[i];
            let d = outcome.diff.data()[i];
            assert!(a > 0.0 && b > 0.0, "prices stay positive on executing paths");
            assert!((d - (a / b - 1.0) * 100.0).abs() < 1e-9);
        }
    }

    #[test]
    fn gradients_cover_every_parameter_shape() {
        let config = tiny_config(3, 4, 4);
        let model = LemModel::<f64>::new(config, 13).unwrap();
        let batch = tiny_batch(3, 4, 2, 5);
        let (loss, grads) = model
            .loss_and_gradients(&batch, &mut Dropout::Off)
            .unwrap();
        assert!(loss.total.is_finite());
        assert_eq!(grads.len(), model.params.len());
        for (id, grad) in model.params.ids().zip(grads.iter()) {
            assert_eq!(grad.shape(), model.params.tensor(id).shape());
            assert!(grad.is_finite(), "{}", model.params.name(id));
        }
    }
}
