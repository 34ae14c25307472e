//! Hard-decision evaluation: simulate every scenario's execution on held-out
//! windows, score slippage against the scenario's truncated benchmark, and
//! aggregate statistics, execution curves and baselines.
//!
//! Unlike training, evaluation never uses soft masks: each path's schedule is
//! cut at its hard completion step and both the achieved price and the
//! benchmark are computed on the truncated window only.

pub mod report;
pub mod stats;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decision::{AllocKind, ScenarioGrid, Strategy, ALLOC_KINDS, STRATEGIES};
use crate::error::{LemError, Result};
use crate::market::features::SampleBatch;
use crate::model::LemModel;
use crate::objective::{hard_execution, hard_scores, slippage_bps, BenchmarkKind};
use stats::{summary, StatsSummary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, PartialOrd, Ord)]
pub enum OrderType {
    Buy,
    Sell,
    TwapBaselineVolume,
    TwapBaselineNotional,
}

impl OrderType {
    pub fn label(&self) -> &'static str {
        match self {
            OrderType::Buy => "BUY",
            OrderType::Sell => "SELL",
            OrderType::TwapBaselineVolume => "TWAP-baseline-volume",
            OrderType::TwapBaselineNotional => "TWAP-baseline-notional",
        }
    }
}

/// Benchmark/denomination combination of a model scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, PartialOrd, Ord)]
pub enum StrategyLabel {
    VwapVolume,
    VwapNotional,
    TwapVolume,
    TwapNotional,
}

impl StrategyLabel {
    pub fn from_parts(benchmark: BenchmarkKind, kind: AllocKind) -> Self {
        match (benchmark, kind) {
            (BenchmarkKind::Vwap, AllocKind::Volume) => StrategyLabel::VwapVolume,
            (BenchmarkKind::Vwap, AllocKind::Notional) => StrategyLabel::VwapNotional,
            (BenchmarkKind::Twap, AllocKind::Volume) => StrategyLabel::TwapVolume,
            (BenchmarkKind::Twap, AllocKind::Notional) => StrategyLabel::TwapNotional,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            StrategyLabel::VwapVolume => "VWAP-vol",
            StrategyLabel::VwapNotional => "VWAP-notional",
            StrategyLabel::TwapVolume => "TWAP-vol",
            StrategyLabel::TwapNotional => "TWAP-notional",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, PartialOrd, Ord)]
pub enum MinPeriodKey {
    /// Flexible minimum period, 1-based.
    Step(usize),
    /// Benchmark-matching (risk-only) scenario.
    Match,
    /// Baseline rows spanning the full horizon.
    All,
}

impl MinPeriodKey {
    pub fn label(&self) -> String {
        match self {
            MinPeriodKey::Step(p) => p.to_string(),
            MinPeriodKey::Match => "match".to_string(),
            MinPeriodKey::All => "all".to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, PartialOrd, Ord)]
pub struct ScenarioKey {
    pub order_type: OrderType,
    pub strategy: StrategyLabel,
    pub min_period: MinPeriodKey,
}

/// Raw per-window slippage for one scenario, in window order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioSeries {
    pub key: ScenarioKey,
    pub slippage_bps: Vec<f64>,
}

/// Mean and per-decile cumulative executed fraction by step.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CurveRow {
    pub key: ScenarioKey,
    pub mean: Vec<f64>,
    /// Rows for deciles 10%..90%.
    pub deciles: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Evaluation {
    pub horizon: usize,
    pub window_count: usize,
    pub series: Vec<ScenarioSeries>,
    pub curves: Vec<CurveRow>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SlippageRow {
    pub key: ScenarioKey,
    pub stats: StatsSummary,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SlippageReport {
    pub horizon: usize,
    pub window_count: usize,
    pub rows: Vec<SlippageRow>,
}

impl Evaluation {
    pub fn series_for(&self, key: &ScenarioKey) -> Option<&ScenarioSeries> {
        self.series.iter().find(|s| &s.key == key)
    }

    /// Summarize every non-empty series.
    pub fn report(&self) -> SlippageReport {
        SlippageReport {
            horizon: self.horizon,
            window_count: self.window_count,
            rows: self
                .series
                .iter()
                .filter(|s| !s.slippage_bps.is_empty())
                .map(|s| SlippageRow {
                    key: s.key,
                    stats: summary(&s.slippage_bps),
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    /// Completion threshold for hard execution.
    #[serde(default = "default_completion_epsilon")]
    pub completion_epsilon: f64,
    /// Windows per forward pass.
    #[serde(default = "default_eval_batch")]
    pub batch_size: usize,
}

fn default_completion_epsilon() -> f64 {
    1e-6
}

fn default_eval_batch() -> usize {
    256
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            completion_epsilon: default_completion_epsilon(),
            batch_size: default_eval_batch(),
        }
    }
}

/// Cap the global worker pool from `LEM_NUM_THREADS` (first call wins).
pub fn configure_threads() {
    if let Ok(raw) = std::env::var("LEM_NUM_THREADS") {
        if let Ok(n) = raw.trim().parse::<usize>() {
            if n >= 1 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
}

fn scenario_order_type(strategy: Strategy) -> OrderType {
    if strategy.is_buy() {
        OrderType::Buy
    } else {
        OrderType::Sell
    }
}

fn scenario_benchmark(strategy: Strategy) -> BenchmarkKind {
    if strategy.is_vwap_benchmark() {
        BenchmarkKind::Vwap
    } else {
        BenchmarkKind::Twap
    }
}

/// All model scenario keys in canonical emission order, paired with their
/// grid coordinates.
fn model_scenarios(grid: ScenarioGrid) -> Vec<(ScenarioKey, AllocKind, usize, Strategy)> {
    let mut out = Vec::with_capacity(grid.paths());
    for kind in ALLOC_KINDS {
        for strategy in STRATEGIES {
            for period in 0..grid.min_periods() {
                let key = ScenarioKey {
                    order_type: scenario_order_type(strategy),
                    strategy: StrategyLabel::from_parts(scenario_benchmark(strategy), kind),
                    min_period: if period == grid.match_index() {
                        MinPeriodKey::Match
                    } else {
                        MinPeriodKey::Step(period + 1)
                    },
                };
                out.push((key, kind, period, strategy));
            }
        }
    }
    out
}

pub fn baseline_key(kind: AllocKind) -> ScenarioKey {
    ScenarioKey {
        order_type: match kind {
            AllocKind::Volume => OrderType::TwapBaselineVolume,
            AllocKind::Notional => OrderType::TwapBaselineNotional,
        },
        strategy: StrategyLabel::from_parts(BenchmarkKind::Vwap, kind),
        min_period: MinPeriodKey::All,
    }
}

/// Uniform-allocation baselines scored against the full-horizon VWAP
/// benchmark, one slippage value per window and allocation kind.
pub fn twap_baselines(test: &SampleBatch, epsilon: f64) -> Vec<ScenarioSeries> {
    let n = test.horizon_steps;
    let uniform = vec![1.0f64; n].iter().map(|_| 1.0 / n as f64).collect::<Vec<_>>();
    ALLOC_KINDS
        .iter()
        .map(|&kind| {
            let slippage = (0..test.len())
                .map(|w| {
                    let prices: Vec<f64> = (0..n).map(|t| test.target_prices.at(&[w, t])).collect();
                    let volumes: Vec<f64> = (0..n).map(|t| test.target_volumes.at(&[w, t])).collect();
                    let exec = hard_execution(&uniform, n, 1e-6);
                    let (achieved, benchmark) =
                        hard_scores(&exec, &prices, &volumes, kind, BenchmarkKind::Vwap, epsilon);
                    slippage_bps(achieved, benchmark)
                })
                .collect();
            ScenarioSeries {
                key: baseline_key(kind),
                slippage_bps: slippage,
            }
        })
        .collect()
}

/// Per-window evaluation output for one chunk.
struct ChunkScores {
    /// `[scenario][window_in_chunk]` slippage.
    slippage: Vec<Vec<f64>>,
    /// `[scenario][window_in_chunk][step]` cumulative executed fraction.
    curves: Vec<Vec<Vec<f64>>>,
}

/// Evaluate a model over a held-out set: hard execution per scenario path,
/// slippage against the truncated benchmark, and cumulative execution
/// curves.
pub fn evaluate(model: &LemModel<f64>, test: &SampleBatch, cfg: &EvalConfig) -> Result<Evaluation> {
    if test.is_empty() {
        return Err(LemError::validation("evaluation requires a non-empty test set"));
    }
    configure_threads();
    let grid = model.decision_config().grid();
    let n = grid.horizon;
    let epsilon = model.config.objective.epsilon;
    let scenarios = model_scenarios(grid);

    let indices: Vec<usize> = (0..test.len()).collect();
    let chunks: Vec<&[usize]> = indices.chunks(cfg.batch_size.max(1)).collect();
    let results: Vec<Result<ChunkScores>> = chunks
        .par_iter()
        .map(|chunk| {
            let batch = test.select(chunk);
            let alloc = model.allocations(&batch)?;
            let mut slippage = vec![Vec::with_capacity(chunk.len()); scenarios.len()];
            let mut curves = vec![Vec::with_capacity(chunk.len()); scenarios.len()];
            for w in 0..chunk.len() {
                let prices: Vec<f64> = (0..n).map(|t| batch.target_prices.at(&[w, t])).collect();
                let volumes: Vec<f64> = (0..n).map(|t| batch.target_volumes.at(&[w, t])).collect();
                for (s_idx, (_, kind, period, strategy)) in scenarios.iter().enumerate() {
                    let schedule = alloc.path_schedule(w, *period, *strategy, *kind);
                    let min_period = if *period == grid.match_index() { n } else { period + 1 };
                    let exec = hard_execution(&schedule, min_period, cfg.completion_epsilon);
                    let (achieved, benchmark) = hard_scores(
                        &exec,
                        &prices,
                        &volumes,
                        *kind,
                        scenario_benchmark(*strategy),
                        epsilon,
                    );
                    slippage[s_idx].push(slippage_bps(achieved, benchmark));

                    let mut cum = Vec::with_capacity(n);
                    let mut acc = 0.0;
                    for (t, &a) in schedule.iter().enumerate() {
                        if t < exec.stop_step {
                            acc += a;
                        }
                        cum.push(acc);
                    }
                    curves[s_idx].push(cum);
                }
            }
            Ok(ChunkScores { slippage, curves })
        })
        .collect();

    let mut slippage: Vec<Vec<f64>> = vec![Vec::with_capacity(test.len()); scenarios.len()];
    let mut curve_samples: Vec<Vec<Vec<f64>>> = vec![Vec::with_capacity(test.len()); scenarios.len()];
    for chunk in results {
        let chunk = chunk?;
        for (s_idx, values) in chunk.slippage.into_iter().enumerate() {
            slippage[s_idx].extend(values);
        }
        for (s_idx, values) in chunk.curves.into_iter().enumerate() {
            curve_samples[s_idx].extend(values);
        }
    }

    let mut series: Vec<ScenarioSeries> = scenarios
        .iter()
        .zip(slippage)
        .map(|((key, _, _, _), slippage_bps)| ScenarioSeries {
            key: *key,
            slippage_bps,
        })
        .collect();
    series.extend(twap_baselines(test, epsilon));

    let deciles: Vec<f64> = (1..=9).map(|d| d as f64 / 10.0).collect();
    let curves: Vec<CurveRow> = scenarios
        .iter()
        .zip(curve_samples)
        .map(|((key, _, _, _), samples)| {
            let count = samples.len() as f64;
            let mean: Vec<f64> = (0..n)
                .map(|t| samples.iter().map(|c| c[t]).sum::<f64>() / count)
                .collect();
            let decile_rows: Vec<Vec<f64>> = deciles
                .iter()
                .map(|&q| {
                    (0..n)
                        .map(|t| {
                            let mut col: Vec<f64> = samples.iter().map(|c| c[t]).collect();
                            col.sort_by(|a, b| a.partial_cmp(b).unwrap());
                            stats::percentile_sorted(&col, q)
                        })
                        .collect()
                })
                .collect();
            CurveRow {
                key: *key,
                mean,
                deciles: decile_rows,
            }
        })
        .collect();

    Ok(Evaluation {
        horizon: n,
        window_count: test.len(),
        series,
        curves,
    })
}
