//! Training driver: adaptive-moment optimization with plateau learning-rate
//! reduction, early stopping, and best-checkpoint restoration.

pub mod gradcheck;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::Dropout;
use crate::error::{LemError, Result};
use crate::market::features::SampleBatch;
use crate::model::LemModel;
use crate::params::ParamSet;
use crate::real::{Precision, Real};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_stop_patience")]
    pub early_stop_patience: usize,
    #[serde(default = "default_lr_patience")]
    pub lr_reduce_patience: usize,
    #[serde(default = "default_lr_factor")]
    pub lr_reduce_factor: f64,
    #[serde(default = "default_epochs")]
    pub max_epochs: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_precision")]
    pub precision: Precision,
}

fn default_lr() -> f64 {
    1e-5
}
fn default_batch() -> usize {
    256
}
fn default_stop_patience() -> usize {
    2
}
fn default_lr_patience() -> usize {
    1
}
fn default_lr_factor() -> f64 {
    0.5
}
fn default_epochs() -> usize {
    50
}
fn default_precision() -> Precision {
    Precision::Single
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: default_lr(),
            batch_size: default_batch(),
            early_stop_patience: default_stop_patience(),
            lr_reduce_patience: default_lr_patience(),
            lr_reduce_factor: default_lr_factor(),
            max_epochs: default_epochs(),
            seed: 0,
            precision: default_precision(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 {
            return Err(LemError::validation("learning_rate must be positive"));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(LemError::validation("batch_size and max_epochs must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.lr_reduce_factor) || self.lr_reduce_factor == 0.0 {
            return Err(LemError::validation("lr_reduce_factor must lie in (0, 1)"));
        }
        if self.lr_reduce_patience > self.early_stop_patience {
            return Err(LemError::validation(
                "lr_reduce_patience must not exceed early_stop_patience",
            ));
        }
        Ok(())
    }
}

/// First-order adaptive-moment optimizer.
pub struct Adam<F: Real> {
    beta1: f64,
    beta2: f64,
    eps: f64,
    step_count: u64,
    first: Vec<Tensor<F>>,
    second: Vec<Tensor<F>>,
}

impl<F: Real> Adam<F> {
    pub fn new(params: &ParamSet<F>) -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step_count: 0,
            first: params.ids().map(|id| Tensor::zeros(params.tensor(id).shape().to_vec())).collect(),
            second: params.ids().map(|id| Tensor::zeros(params.tensor(id).shape().to_vec())).collect(),
        }
    }

    pub fn step(&mut self, params: &mut ParamSet<F>, grads: &[Tensor<F>], lr: f64) {
        assert_eq!(grads.len(), self.first.len());
        self.step_count += 1;
        let t = self.step_count as i32;
        let b1 = F::from_f64(self.beta1);
        let b2 = F::from_f64(self.beta2);
        let one = F::one();
        let corr1 = F::from_f64(1.0 - self.beta1.powi(t));
        let corr2 = F::from_f64(1.0 - self.beta2.powi(t));
        let lr = F::from_f64(lr);
        let eps = F::from_f64(self.eps);
        for (idx, id) in params.ids().enumerate().collect::<Vec<_>>() {
            let grad = &grads[idx];
            let m = &mut self.first[idx];
            let v = &mut self.second[idx];
            let theta = params.tensor_mut(id);
            for i in 0..grad.numel() {
                let g = grad.data()[i];
                let m_i = b1 * m.data()[i] + (one - b1) * g;
                let v_i = b2 * v.data()[i] + (one - b2) * g * g;
                m.data_mut()[i] = m_i;
                v.data_mut()[i] = v_i;
                let m_hat = m_i / corr1;
                let v_hat = v_i / corr2;
                theta.data_mut()[i] = theta.data()[i] - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub learning_rate: f64,
    pub events: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
}

impl TrainReport {
    /// `epoch,train_loss,val_loss,lr` progress lines.
    pub fn progress_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss,lr\n");
        for e in &self.epochs {
            out.push_str(&format!(
                "{},{},{},{}\n",
                e.epoch, e.train_loss, e.val_loss, e.learning_rate
            ));
        }
        out
    }
}

/// Shuffled index chunks for one epoch; every window appears exactly once.
pub fn epoch_batches(n_windows: usize, batch_size: usize, rng: &mut ChaCha20Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n_windows).collect();
    order.shuffle(rng);
    order.chunks(batch_size).map(|c| c.to_vec()).collect()
}

/// Mean loss over a dataset evaluated in deterministic chunks with soft
/// masks and no gradient work.
pub fn dataset_loss<F: Real>(model: &LemModel<F>, data: &SampleBatch, batch_size: usize) -> Result<f64> {
    let mut total = 0.0;
    let mut weight = 0.0;
    let indices: Vec<usize> = (0..data.len()).collect();
    for chunk in indices.chunks(batch_size) {
        let batch = data.select(chunk);
        let (loss, _) = model.loss(&batch)?;
        total += loss.total * chunk.len() as f64;
        weight += chunk.len() as f64;
    }
    Ok(total / weight)
}

/// Train in place. Returns per-epoch history; the model is left holding the
/// best-validation parameters.
pub fn train<F: Real>(
    model: &mut LemModel<F>,
    train_set: &SampleBatch,
    val_set: &SampleBatch,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(LemError::validation("training set is empty"));
    }
    if val_set.is_empty() {
        return Err(LemError::validation("validation set is empty"));
    }

    let mut adam = Adam::new(&model.params);
    let mut shuffle_rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let mut dropout_rng = ChaCha20Rng::seed_from_u64(cfg.seed.wrapping_add(0x5eed));
    let dropout_rate = model.config.encoder.dropout_rate;

    let mut lr = cfg.learning_rate;
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0usize;
    let mut best_snapshot = model.params.snapshot();
    let mut lr_wait = 0usize;
    let mut stop_wait = 0usize;
    let mut stopped_early = false;
    let mut epochs = Vec::new();

    for epoch in 1..=cfg.max_epochs {
        let mut events = Vec::new();
        let mut train_total = 0.0;
        let mut train_weight = 0.0;
        for (batch_idx, chunk) in epoch_batches(train_set.len(), cfg.batch_size, &mut shuffle_rng)
            .into_iter()
            .enumerate()
        {
            let batch = train_set.select(&chunk);
            let mut dropout = if dropout_rate > 0.0 {
                Dropout::On {
                    rate: dropout_rate,
                    rng: &mut dropout_rng,
                }
            } else {
                Dropout::Off
            };
            let (loss, grads) = model.loss_and_gradients(&batch, &mut dropout)?;
            if let Some(term) = loss.first_non_finite() {
                return Err(LemError::NonFinite {
                    term: term.to_string(),
                    epoch,
                    batch: batch_idx,
                });
            }
            adam.step(&mut model.params, &grads, lr);
            train_total += loss.total * chunk.len() as f64;
            train_weight += chunk.len() as f64;
        }
        let train_loss = train_total / train_weight;
        let val_loss = dataset_loss(model, val_set, cfg.batch_size)?;
        if !val_loss.is_finite() {
            return Err(LemError::NonFinite {
                term: "validation total".to_string(),
                epoch,
                batch: 0,
            });
        }

        if val_loss < best_val {
            best_val = val_loss;
            best_epoch = epoch;
            best_snapshot = model.params.snapshot();
            lr_wait = 0;
            stop_wait = 0;
        } else {
            lr_wait += 1;
            stop_wait += 1;
            if lr_wait >= cfg.lr_reduce_patience {
                lr *= cfg.lr_reduce_factor;
                lr_wait = 0;
                events.push(format!("lr_reduced_to_{lr}"));
            }
            if stop_wait >= cfg.early_stop_patience {
                stopped_early = true;
                events.push("early_stop".to_string());
            }
        }
        epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            learning_rate: lr,
            events,
        });
        if stopped_early {
            break;
        }
    }

    model.params.restore(&best_snapshot);
    Ok(TrainReport {
        epochs,
        best_epoch,
        best_val_loss: best_val,
        stopped_early,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::features::FEATURE_DIM;
    use crate::market::{build_features, synth_market, FeatureSpec, Regime, SeasonalMode};
    use crate::model::ModelConfig;

    fn tiny_model(seed: u64) -> LemModel<f64> {
        let config = ModelConfig {
            feature_dim: FEATURE_DIM,
            lookback_steps: 4,
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
                mlp_width: 8,
                ..Default::default()
            },
            objective: Default::default(),
        };
        LemModel::new(config, seed).unwrap()
    }

    fn tiny_data(seed: u64, windows: usize) -> SampleBatch {
        let series = synth_market(seed, 80 + windows, Regime::MeanReverting);
        let spec = FeatureSpec {
            lookback_steps: 4,
            horizon_steps: 4,
            normalization_window: 48,
            seasonal_mode: SeasonalMode::Intraday,
            frequency_tag: None,
        };
        let batch = build_features(&series, &spec).unwrap();
        batch.select(&(0..windows.min(batch.len())).collect::<Vec<_>>())
    }

    #[test]
    fn epoch_batches_form_a_permutation() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let chunks = epoch_batches(103, 16, &mut rng);
        let mut seen: Vec<usize> = chunks.into_iter().flatten().collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..103).collect::<Vec<_>>());
    }

    #[test]
    fn adam_zero_gradient_is_identity() {
        let model = tiny_model(3);
        let mut params = model.params.cast::<f64>();
        let before = params.snapshot();
        let zeros: Vec<Tensor<f64>> = params
            .ids()
            .map(|id| Tensor::zeros(params.tensor(id).shape().to_vec()))
            .collect();
        let mut adam = Adam::new(&params);
        adam.step(&mut params, &zeros, 1e-3);
        for (a, b) in before.iter().zip(params.snapshot().iter()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn adam_moves_against_the_gradient() {
        let model = tiny_model(4);
        let mut params = model.params.cast::<f64>();
        let grads: Vec<Tensor<f64>> = params
            .ids()
            .map(|id| Tensor::full(params.tensor(id).shape().to_vec(), 1.0))
            .collect();
        let before = params.snapshot();
        let mut adam = Adam::new(&params);
        adam.step(&mut params, &grads, 1e-3);
        let after = params.snapshot();
        for (a, b) in before.iter().zip(after.iter()) {
            for i in 0..a.numel() {
                assert!(b.data()[i] < a.data()[i], "positive gradient lowers the weight");
            }
        }
    }

    /// Scheduler walk-through on a fixed validation-loss trajectory: with
    /// losses [1.0, 0.9, 0.95, 0.97] and patience 2 the run stops after
    /// epoch 4 and restores the epoch-2 parameters.
    #[test]
    fn early_stopping_follows_the_patience_rule() {
        let losses = [1.0, 0.9, 0.95, 0.97, 0.8];
        let cfg = TrainConfig::default();
        let mut best = f64::INFINITY;
        let mut best_epoch = 0;
        let mut lr = 1e-3;
        let mut lr_wait = 0;
        let mut stop_wait = 0;
        let mut stopped_at = None;
        let mut lr_events = Vec::new();
        for (i, &loss) in losses.iter().enumerate() {
            let epoch = i + 1;
            if loss < best {
                best = loss;
                best_epoch = epoch;
                lr_wait = 0;
                stop_wait = 0;
            } else {
                lr_wait += 1;
                stop_wait += 1;
                if lr_wait >= cfg.lr_reduce_patience {
                    lr *= cfg.lr_reduce_factor;
                    lr_wait = 0;
                    lr_events.push(epoch);
                }
                if stop_wait >= cfg.early_stop_patience {
                    stopped_at = Some(epoch);
                    break;
                }
            }
        }
        assert_eq!(stopped_at, Some(4));
        assert_eq!(best_epoch, 2);
        assert_eq!(lr_events, vec![3, 4]);
        assert!((lr - 2.5e-4).abs() < 1e-18);
    }

    #[test]
    fn training_is_deterministic_and_improves() {
        let data = tiny_data(7, 48);
        let val = tiny_data(8, 16);
        let cfg = TrainConfig {
            learning_rate: 3e-3,
            batch_size: 16,
            max_epochs: 3,
            early_stop_patience: 3,
            lr_reduce_patience: 2,
            seed: 5,
            ..Default::default()
        };

        let mut model_a = tiny_model(9);
        let untrained = dataset_loss(&model_a, &val, 16).unwrap();
        let report_a = train(&mut model_a, &data, &val, &cfg).unwrap();

        let mut model_b = tiny_model(9);
        let report_b = train(&mut model_b, &data, &val, &cfg).unwrap();

        assert_eq!(report_a.epochs[0].train_loss, report_b.epochs[0].train_loss);
        assert!(
            report_a.best_val_loss < untrained,
            "training must beat the frozen initialization: {} vs {untrained}",
            report_a.best_val_loss
        );
        // Model holds the best-validation parameters.
        let final_val = dataset_loss(&model_a, &val, 16).unwrap();
        assert!((final_val - report_a.best_val_loss).abs() < 1e-12);

        // Best val loss is the minimum over recorded epochs.
        let min_val = report_a
            .epochs
            .iter()
            .map(|e| e.val_loss)
            .fold(f64::INFINITY, f64::min);
        assert_eq!(report_a.best_val_loss, min_val);
    }

    #[test]
    fn empty_validation_set_is_rejected() {
        let data = tiny_data(10, 8);
        let empty = data.select(&[]);
        let mut model = tiny_model(11);
        assert!(train(&mut model, &data, &empty, &TrainConfig::default()).is_err());
    }

    #[test]
    fn plateau_stops_early_and_restores_the_best_epoch() {
        // A vanishing learning rate freezes the model, so validation never
        // improves past epoch one: the learning rate halves after one stalled
        // epoch and training stops after two, restoring epoch-one parameters.
        let data = tiny_data(12, 24);
        let val = tiny_data(13, 12);
        let cfg = TrainConfig {
            learning_rate: 1e-30,
            batch_size: 8,
            max_epochs: 20,
            seed: 3,
            ..Default::default()
        };
        let mut model = tiny_model(14);
        let report = train(&mut model, &data, &val, &cfg).unwrap();
        assert!(report.stopped_early);
        assert_eq!(report.epochs.len(), 3);
        assert_eq!(report.best_epoch, 1);
        assert!(report.epochs[1].events.iter().any(|e| e.starts_with("lr_reduced")));
        assert!(report.epochs[2].events.iter().any(|e| e == "early_stop"));
        let restored = dataset_loss(&model, &val, 8).unwrap();
        assert!((restored - report.best_val_loss).abs() < 1e-12);
    }

    // Note: under validated inputs the loss is provably finite for any finite
    // parameters (achieved and benchmark prices are ratios of convex
    // combinations of the window's prices, and the budget projection even
    // absorbs NaN rates through its comparisons), so the non-finite abort in
    // the driver cannot be triggered end to end; its diagnostic pieces are
    // covered by `loss_breakdown_names_its_first_non_finite_term` in the
    // objective module.

    #[test]
    fn dropout_is_stochastic_in_training_and_off_in_eval() {
        let mut config = tiny_model(18).config;
        config.encoder.dropout_rate = 0.5;
        let model = LemModel::<f64>::new(config, 18).unwrap();
        let batch = tiny_data(19, 4);

        let mut rng_a = ChaCha20Rng::seed_from_u64(1);
        let mut rng_b = ChaCha20Rng::seed_from_u64(2);
        let (with_a, _) = model
            .loss_and_gradients(&batch, &mut crate::encoder::Dropout::On { rate: 0.5, rng: &mut rng_a })
            .unwrap();
        let (with_b, _) = model
            .loss_and_gradients(&batch, &mut crate::encoder::Dropout::On { rate: 0.5, rng: &mut rng_b })
            .unwrap();
        assert_ne!(with_a.total, with_b.total, "different masks, different losses");

        let (off_a, _) = model.loss(&batch).unwrap();
        let (off_b, _) = model.loss(&batch).unwrap();
        assert_eq!(off_a.total.to_bits(), off_b.total.to_bits(), "evaluation is mask-free");
    }
}
