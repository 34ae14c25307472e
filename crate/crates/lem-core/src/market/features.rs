//! Feature engineering: bar VWAP, leakage-safe volume normalization, seasonal
//! encodings, and windowing into model batches.
//!
//! Feature channel layout (`D = 8`):
//!
//! | index | channel |
//! |-------|------------------------------------------------|
//! | 0     | bar-VWAP simple return (0 at window start)     |
//! | 1     | normalized volume                              |
//! | 2, 3  | seasonal component 1, sin/cos                  |
//! | 4, 5  | seasonal component 2, sin/cos                  |
//! | 6     | frequency tag                                  |
//! | 7     | horizon flag (0 lookback, 1 decision horizon)  |
//!
//! Horizon positions carry the realized bar return and volume: the decision
//! at step `t` observes bar `t`'s aggregate and is assumed to execute at that
//! bar's VWAP. Causality tests guard against anything later leaking in.

use serde::{Deserialize, Serialize};

use crate::error::{LemError, Result};
use crate::market::calendar::time_parts;
use crate::market::candles::CandleSeries;
use crate::tensor::Tensor;

pub const FEATURE_DIM: usize = 8;
pub const CH_RETURN: usize = 0;
pub const CH_VOLUME: usize = 1;
pub const CH_FREQ_TAG: usize = 6;
pub const CH_HORIZON_FLAG: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeasonalMode {
    /// Hour-of-day plus day-of-week; suits intraday bars.
    Intraday,
    /// Day-of-week plus month-of-year; suits daily bars.
    Calendar,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureSpec {
    /// Lookback positions visible before the decision horizon.
    #[serde(default = "default_lookback")]
    pub lookback_steps: usize,
    /// Decision horizon length N.
    #[serde(default = "default_horizon")]
    pub horizon_steps: usize,
    /// Rolling window length for volume normalization.
    #[serde(default = "default_normalization_window")]
    pub normalization_window: usize,
    #[serde(default = "default_seasonal_mode")]
    pub seasonal_mode: SeasonalMode,
    /// Identifies the bar frequency in [0, 1] when several frequencies are
    /// merged into one training set. `None` derives a tag from the frequency.
    #[serde(default)]
    pub frequency_tag: Option<f64>,
}

fn default_lookback() -> usize {
    48
}

fn default_horizon() -> usize {
    12
}

fn default_normalization_window() -> usize {
    336
}

fn default_seasonal_mode() -> SeasonalMode {
    SeasonalMode::Intraday
}

impl FeatureSpec {
    pub fn total_steps(&self) -> usize {
        self.lookback_steps + self.horizon_steps
    }

    pub fn validate(&self) -> Result<()> {
        if self.normalization_window < 1 {
            return Err(LemError::validation("normalization_window must be >= 1"));
        }
        if self.horizon_steps < 2 {
            return Err(LemError::validation("horizon_steps must be >= 2"));
        }
        if self.lookback_steps < 1 {
            return Err(LemError::validation("lookback_steps must be >= 1"));
        }
        if let Some(tag) = self.frequency_tag {
            if !(0.0..=1.0).contains(&tag) {
                return Err(LemError::validation("frequency_tag must lie in [0, 1]"));
            }
        }
        Ok(())
    }

    /// Tag for a bar frequency: log-scaled between one minute and one day.
    pub fn tag_for_frequency(&self, frequency_minutes: u32) -> f64 {
        if let Some(tag) = self.frequency_tag {
            return tag;
        }
        let minutes = frequency_minutes.max(1) as f64;
        (minutes.log2() / (1440f64).log2()).clamp(0.0, 1.0)
    }
}

/// Per-bar VWAP with carry-forward over zero-volume bars; the first bar falls
/// back to its close.
pub fn bar_vwap(series: &CandleSeries) -> Vec<f64> {
    let mut out = Vec::with_capacity(series.len());
    let mut last = f64::NAN;
    for i in 0..series.len() {
        let v = series.volume[i];
        let vwap = if v > 0.0 {
            series.quote_volume[i] / v
        } else if last.is_nan() {
            series.close[i]
        } else {
            last
        };
        out.push(vwap);
        last = vwap;
    }
    out
}

/// Normalized volume sequence. Position `t` divides by the mean raw volume of
/// the window `[t - s - W + 1, t - s]` with `s = lookback + horizon`, so the
/// normalizer uses only bars at least a full sample older than `t`. Positions
/// without full history, or whose window mean is zero, are unusable (`None`).
pub fn normalize_volumes(series: &CandleSeries, spec: &FeatureSpec) -> Vec<Option<f64>> {
    let w = spec.normalization_window;
    let shift = spec.total_steps();
    let n = series.len();
    let mut out = vec![None; n];
    if n == 0 {
        return out;
    }
    // Prefix sums keep the rolling means exact for the oracle comparison.
    let mut prefix = vec![0.0f64; n + 1];
    for i in 0..n {
        prefix[i + 1] = prefix[i] + series.volume[i];
    }
    for (t, slot) in out.iter_mut().enumerate() {
        if t < w + shift - 1 {
            continue;
        }
        let hi = t - shift; // inclusive
        let lo = hi + 1 - w;
        let mean = (prefix[hi + 1] - prefix[lo]) / w as f64;
        if mean > 0.0 {
            *slot = Some(series.volume[t] / mean);
        }
    }
    out
}

/// Sin/cos pair for a phase in [0, 1).
fn cyclic(phase: f64) -> (f64, f64) {
    let angle = phase * std::f64::consts::TAU;
    (angle.sin(), angle.cos())
}

/// The two seasonal sin/cos pairs for a timestamp under the given mode.
pub fn seasonal_features(epoch_seconds: i64, mode: SeasonalMode) -> [f64; 4] {
    let parts = time_parts(epoch_seconds);
    let day_fraction = parts.second_of_day as f64 / 86_400.0;
    let week_phase = (parts.weekday as f64 + day_fraction) / 7.0;
    match mode {
        SeasonalMode::Intraday => {
            let (hs, hc) = cyclic(day_fraction);
            let (ws, wc) = cyclic(week_phase);
            [hs, hc, ws, wc]
        }
        SeasonalMode::Calendar => {
            let dim = crate::market::calendar::days_in_month(parts.date.year, parts.date.month) as f64;
            let month_phase =
                ((parts.date.month - 1) as f64 + ((parts.date.day - 1) as f64 + day_fraction) / dim) / 12.0;
            let (ws, wc) = cyclic(week_phase);
            let (ms, mc) = cyclic(month_phase);
            [ws, wc, ms, mc]
        }
    }
}

/// One batch of model inputs: engineered features over lookback plus horizon,
/// with the horizon bars' VWAPs and normalized volumes aligned as targets.
#[derive(Debug, Clone)]
pub struct SampleBatch {
    /// `[B, T_total, D]`.
    pub features: Tensor<f64>,
    /// `[B, N]` bar VWAP per horizon step.
    pub target_prices: Tensor<f64>,
    /// `[B, N]` normalized volume per horizon step.
    pub target_volumes: Tensor<f64>,
    pub asset_ids: Vec<String>,
    pub window_starts: Vec<i64>,
    pub frequency_tags: Vec<f64>,
    pub lookback_steps: usize,
    pub horizon_steps: usize,
}

impl SampleBatch {
    pub fn len(&self) -> usize {
        self.window_starts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.window_starts.is_empty()
    }

    pub fn total_steps(&self) -> usize {
        self.lookback_steps + self.horizon_steps
    }

    pub fn feature_dim(&self) -> usize {
        *self.features.shape().last().unwrap()
    }

    pub fn validate(&self) -> Result<()> {
        let b = self.len();
        let t = self.total_steps();
        if self.features.shape() != [b, t, self.feature_dim()] {
            return Err(LemError::ShapeMismatch {
                context: "SampleBatch.features".into(),
                expected: vec![b, t, self.feature_dim()],
                found: self.features.shape().to_vec(),
            });
        }
        if !self.features.is_finite() {
            return Err(LemError::validation("SampleBatch.features contains non-finite values"));
        }
        if self.target_prices.data().iter().any(|&p| p <= 0.0 || p.is_nan() || !p.is_finite()) {
            return Err(LemError::validation("SampleBatch.target_prices must be positive and finite"));
        }
        if self.target_volumes.data().iter().any(|&v| v < 0.0 || !v.is_finite()) {
            return Err(LemError::validation("SampleBatch.target_volumes must be non-negative"));
        }
        Ok(())
    }

    /// Select a subset of windows (used by the shuffled training loop).
    pub fn select(&self, indices: &[usize]) -> SampleBatch {
        let t = self.total_steps();
        let d = self.feature_dim();
        let n = self.horizon_steps;
        let mut features = Tensor::zeros([indices.len(), t, d]);
        let mut prices = Tensor::zeros([indices.len(), n]);
        let mut volumes = Tensor::zeros([indices.len(), n]);
        for (row, &src) in indices.iter().enumerate() {
            features.data_mut()[row * t * d..(row + 1) * t * d]
                .copy_from_slice(&self.features.data()[src * t * d..(src + 1) * t * d]);
            prices.data_mut()[row * n..(row + 1) * n]
                .copy_from_slice(&self.target_prices.data()[src * n..(src + 1) * n]);
            volumes.data_mut()[row * n..(row + 1) * n]
                .copy_from_slice(&self.target_volumes.data()[src * n..(src + 1) * n]);
        }
        SampleBatch {
            features,
            target_prices: prices,
            target_volumes: volumes,
            asset_ids: indices.iter().map(|&i| self.asset_ids[i].clone()).collect(),
            window_starts: indices.iter().map(|&i| self.window_starts[i]).collect(),
            frequency_tags: indices.iter().map(|&i| self.frequency_tags[i]).collect(),
            lookback_steps: self.lookback_steps,
            horizon_steps: self.horizon_steps,
        }
    }

    /// Concatenate batches with identical geometry (multi-asset merging).
    pub fn concat(batches: &[SampleBatch]) -> Result<SampleBatch> {
        let first = batches.first().ok_or_else(|| LemError::validation("concat of zero batches"))?;
        let (l, n, d) = (first.lookback_steps, first.horizon_steps, first.feature_dim());
        let total: usize = batches.iter().map(|b| b.len()).sum();
        let t = l + n;
        let mut features = Tensor::zeros([total, t, d]);
        let mut prices = Tensor::zeros([total, n]);
        let mut volumes = Tensor::zeros([total, n]);
        let mut asset_ids = Vec::with_capacity(total);
        let mut window_starts = Vec::with_capacity(total);
        let mut frequency_tags = Vec::with_capacity(total);
        let mut row = 0usize;
        for b in batches {
            if b.lookback_steps != l || b.horizon_steps != n || b.feature_dim() != d {
                return Err(LemError::validation("concat of batches with different geometry"));
            }
            let rows = b.len();
            features.data_mut()[row * t * d..(row + rows) * t * d].copy_from_slice(b.features.data());
            prices.data_mut()[row * n..(row + rows) * n].copy_from_slice(b.target_prices.data());
            volumes.data_mut()[row * n..(row + rows) * n].copy_from_slice(b.target_volumes.data());
            asset_ids.extend(b.asset_ids.iter().cloned());
            window_starts.extend_from_slice(&b.window_starts);
            frequency_tags.extend_from_slice(&b.frequency_tags);
            row += rows;
        }
        Ok(SampleBatch {
            features,
            target_prices: prices,
            target_volumes: volumes,
            asset_ids,
            window_starts,
            frequency_tags,
            lookback_steps: l,
            horizon_steps: n,
        })
    }
}

/// Windowable view over one asset/frequency: per-bar engineered channels plus
/// the list of valid window start positions.
#[derive(Debug, Clone)]
pub struct WindowSet {
    pub asset_id: String,
    pub frequency_minutes: u32,
    pub lookback_steps: usize,
    pub horizon_steps: usize,
    frequency_tag: f64,
    timestamps: Vec<i64>,
    vwap: Vec<f64>,
    returns: Vec<f64>,
    norm_volume: Vec<Option<f64>>,
    seasonal: Vec<[f64; 4]>,
    /// Bar indices that can start a window.
    starts: Vec<usize>,
}

impl WindowSet {
    pub fn build(series: &CandleSeries, spec: &FeatureSpec) -> Result<WindowSet> {
        spec.validate()?;
        let t_total = spec.total_steps();
        let min_len = spec.normalization_window + t_total;
        if series.len() <= min_len {
            return Err(LemError::validation(format!(
                "{}: {} bars is not enough history (need more than {})",
                series.asset_id,
                series.len(),
                min_len
            )));
        }
        let vwap = bar_vwap(series);
        let norm_volume = normalize_volumes(series, spec);
        let mut returns = vec![0.0f64; series.len()];
        for t in 1..series.len() {
            returns[t] = vwap[t] / vwap[t - 1] - 1.0;
        }
        let seasonal: Vec<[f64; 4]> = series
            .timestamps
            .iter()
            .map(|&ts| seasonal_features(ts, spec.seasonal_mode))
            .collect();

        // A window starting at p uses positions p..p+T-1; all must have a
        // defined normalized volume.
        let usable: Vec<bool> = norm_volume.iter().map(|v| v.is_some()).collect();
        let mut run = 0usize;
        let mut starts = Vec::new();
        for (p, &ok) in usable.iter().enumerate() {
            run = if ok { run + 1 } else { 0 };
            if run >= t_total {
                starts.push(p + 1 - t_total);
            }
        }

        Ok(WindowSet {
            asset_id: series.asset_id.clone(),
            frequency_minutes: series.frequency_minutes,
            lookback_steps: spec.lookback_steps,
            horizon_steps: spec.horizon_steps,
            frequency_tag: spec.tag_for_frequency(series.frequency_minutes),
            timestamps: series.timestamps.clone(),
            vwap,
            returns,
            norm_volume,
            seasonal,
            starts,
        })
    }

    pub fn window_count(&self) -> usize {
        self.starts.len()
    }

    pub fn window_start_timestamp(&self, window: usize) -> i64 {
        self.timestamps[self.starts[window]]
    }

    /// Assemble the batch for a set of window indices.
    pub fn materialize(&self, windows: &[usize]) -> SampleBatch {
        let t_total = self.lookback_steps + self.horizon_steps;
        let n = self.horizon_steps;
        let b = windows.len();
        let mut features = Tensor::zeros([b, t_total, FEATURE_DIM]);
        let mut prices = Tensor::zeros([b, n]);
        let mut volumes = Tensor::zeros([b, n]);
        let mut window_starts = Vec::with_capacity(b);
        for (row, &w) in windows.iter().enumerate() {
            let p = self.starts[w];
            window_starts.push(self.timestamps[p]);
            for i in 0..t_total {
                let bar = p + i;
                let base = (row * t_total + i) * FEATURE_DIM;
                let data = features.data_mut();
                data[base + CH_RETURN] = if i == 0 { 0.0 } else { self.returns[bar] };
                data[base + CH_VOLUME] = self.norm_volume[bar].expect("window covers usable bars");
                let s = self.seasonal[bar];
                data[base + 2] = s[0];
                data[base + 3] = s[1];
                data[base + 4] = s[2];
                data[base + 5] = s[3];
                data[base + CH_FREQ_TAG] = self.frequency_tag;
                data[base + CH_HORIZON_FLAG] = if i >= self.lookback_steps { 1.0 } else { 0.0 };
            }
            for j in 0..n {
                let bar = p + self.lookback_steps + j;
                prices.data_mut()[row * n + j] = self.vwap[bar];
                volumes.data_mut()[row * n + j] = self.norm_volume[bar].unwrap();
            }
        }
        SampleBatch {
            features,
            target_prices: prices,
            target_volumes: volumes,
            asset_ids: vec![self.asset_id.clone(); b],
            window_starts,
            frequency_tags: vec![self.frequency_tag; b],
            lookback_steps: self.lookback_steps,
            horizon_steps: self.horizon_steps,
        }
    }

    pub fn materialize_all(&self) -> SampleBatch {
        let all: Vec<usize> = (0..self.window_count()).collect();
        self.materialize(&all)
    }
}

/// Engineer features and window the full series into one batch.
pub fn build_features(series: &CandleSeries, spec: &FeatureSpec) -> Result<SampleBatch> {
    Ok(WindowSet::build(series, spec)?.materialize_all())
}
