//! Execution objective: differentiable masks, achieved prices, benchmarks,
//! relative performance, and the combined PnL/risk loss.
//!
//! Training works on soft masks so completion stays differentiable: the
//! reverse cumulative allocation `C_t` (budget left from `t` onward) feeds a
//! sigmoid `M_soft = sigmoid(alpha * C)`, and the effective mask combines the
//! forced minimum-duration window with that completion indicator. Achieved
//! prices weight market prices by executed volume; benchmarks weight them by
//! market volume (VWAP) or uniformly (TWAP) over the effective period. The
//! loss sums `softplus(D_buy - D_sell)` over the flexible minimum periods and
//! `softplus(|D|)` on the benchmark-matching slot, normalized by the term
//! count, and is minimized directly: lower buy prices, higher sell prices and
//! smaller matching deviations all reduce it.
//!
//! Evaluation never uses soft masks; [`hard_execution`] truncates a schedule
//! at its completion step and everything downstream is scored on the
//! truncated window.

use serde::{Deserialize, Serialize};

use crate::decision::{AllocKind, AllocationTensor, ScenarioGrid, Strategy, ALLOC_KINDS, STRATEGIES};
use crate::graph::{Graph, NodeId};
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveConfig {
    /// Sharpness of the soft completion decision.
    #[serde(default = "default_sharpness")]
    pub completion_sharpness: f64,
    /// Division guard added uniformly to numerators/denominators that may
    /// vanish.
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
}

fn default_sharpness() -> f64 {
    100.0
}

fn default_epsilon() -> f64 {
    1e-8
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        ObjectiveConfig {
            completion_sharpness: default_sharpness(),
            epsilon: default_epsilon(),
        }
    }
}

/// Which benchmark a strategy is scored against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BenchmarkKind {
    Vwap,
    Twap,
}

/// Graph handles produced by [`ObjectiveBuilder::build`].
pub struct ObjectiveNodes {
    /// Effective execution mask `[M, B, N]`.
    pub effective: NodeId,
    /// Achieved price per path `[M, B]`.
    pub achieved: NodeId,
    /// Benchmark price per path `[M, B]` (each path's own benchmark kind).
    pub benchmark: NodeId,
    /// Relative performance in percent `[M, B]`.
    pub diff: NodeId,
    pub pnl: NodeId,
    pub risk: NodeId,
    pub total: NodeId,
}

/// Scalar loss summary extracted from a forward pass.
#[derive(Debug, Clone, Copy)]
pub struct LossBreakdown {
    pub pnl_term: f64,
    pub risk_term: f64,
    pub total: f64,
    pub normalizer: f64,
}

impl LossBreakdown {
    /// Names the first non-finite term, if any.
    pub fn first_non_finite(&self) -> Option<&'static str> {
        if !self.pnl_term.is_finite() {
            Some("pnl_term")
        } else if !self.risk_term.is_finite() {
            Some("risk_term")
        } else if !self.total.is_finite() {
            Some("total")
        } else {
            None
        }
    }
}

pub struct ObjectiveBuilder {
    pub grid: ScenarioGrid,
    pub config: ObjectiveConfig,
}

impl ObjectiveBuilder {
    pub fn new(grid: ScenarioGrid, config: ObjectiveConfig) -> Self {
        ObjectiveBuilder { grid, config }
    }

    /// Base (minimum-duration) mask in path-major layout `[M, B, N]`:
    /// step `t` is forced for minimum period `n` when `t <= n`; the match
    /// slot forces the whole horizon.
    pub fn base_mask_path_major<F: Real>(&self, batch: usize) -> Tensor<F> {
        let n = self.grid.horizon;
        let m = self.grid.paths();
        Tensor::from_fn([m, batch, n], |idx| {
            let (_, period, _) = self.grid.decompose(idx[0]);
            let forced = period == self.grid.match_index() || idx[2] <= period;
            if forced {
                F::one()
            } else {
                F::zero()
            }
            })
    }

    /// Volume guard `[B, N]`: position `t` counts once any market volume has
    /// printed strictly before it (the first step always counts).
    pub fn volume_guard<F: Real>(&self, volumes: &Tensor<F>) -> Tensor<F> {
        let (b, n) = (volumes.shape()[0], volumes.shape()[1]);
        let mut out = Tensor::zeros([b, n]);
        for row in 0..b {
            let mut seen = false;
            for t in 0..n {
                out.set(&[row, t], if t == 0 || seen { F::one() } else { F::zero() });
                if volumes.at(&[row, t]) > F::zero() {
                    seen = true;
                }
            }
        }
        out
    }

    /// Per-path selector `[M, B, N]`: 1 where `pred` holds for the path.
    fn path_selector<F: Real>(&self, batch: usize, pred: impl Fn(AllocKind, usize, Strategy) -> bool) -> Tensor<F> {
        let n = self.grid.horizon;
        Tensor::from_fn([self.grid.paths(), batch, n], |idx| {
            let (kind, period, strategy) = self.grid.decompose(idx[0]);
            if pred(kind, period, strategy) {
                F::one()
            } else {
                F::zero()
            }
        })
    }

    fn repeat_const<F: Real>(&self, g: &mut Graph<F>, per_batch: &Tensor<F>) -> NodeId {
        let c = g.constant(per_batch.clone());
        g.repeat_outer(c, self.grid.paths())
    }

    /// Soft effective mask `[M, B, N]` from path-major allocations.
    pub fn effective_mask<F: Real>(&self, g: &mut Graph<F>, alloc: NodeId) -> NodeId {
        let batch = g.shape(alloc)[1];
        let base = self.base_mask_path_major::<F>(batch);
        let remaining_ahead = g.rev_cumsum_last(alloc);
        let scaled = g.scale(remaining_ahead, F::from_f64(self.config.completion_sharpness));
        let soft = g.sigmoid(scaled);
        let unforced = g.constant(base.map(|v| F::one() - v));
        let soft_part = g.mul(unforced, soft);
        let base_node = g.constant(base);
        g.add(base_node, soft_part)
    }

    /// Achieved execution price per path `[M, B]`. Volume-kind paths execute
    /// `alloc` shares at market prices; notional-kind paths spend `alloc`
    /// cash at market prices. Both reduce to a numerator/denominator pair
    /// built from per-path constant price mixes.
    pub fn achieved<F: Real>(
        &self,
        g: &mut Graph<F>,
        alloc: NodeId,
        effective: NodeId,
        prices: &Tensor<F>,
    ) -> NodeId {
        let batch = g.shape(alloc)[1];
        let executed = g.mul(alloc, effective);
        // Numerator weight: P for volume paths, 1 for notional paths.
        // Denominator weight: 1 for volume paths, 1/P for notional paths.
        let num_mix = self.kind_price_mix(batch, prices, |p| p, |_| 1.0);
        let den_mix = self.kind_price_mix(batch, prices, |_| 1.0, |p| 1.0 / p);
        let num_mix = g.constant(num_mix);
        let den_mix = g.constant(den_mix);
        let notional = g.mul(executed, num_mix);
        let shares = g.mul(executed, den_mix);
        let num = g.sum_last_keep(notional);
        let den_raw = g.sum_last_keep(shares);
        let den = g.add_scalar(den_raw, F::from_f64(self.config.epsilon));
        let ratio = g.div(num, den);
        let m = self.grid.paths();
        g.reshape(ratio, vec![m, batch])
    }

    fn kind_price_mix<F: Real>(
        &self,
        batch: usize,
        prices: &Tensor<F>,
        volume_fn: impl Fn(f64) -> f64,
        notional_fn: impl Fn(f64) -> f64,
    ) -> Tensor<F> {
        let n = self.grid.horizon;
        Tensor::from_fn([self.grid.paths(), batch, n], |idx| {
            let (kind, _, _) = self.grid.decompose(idx[0]);
            let p = prices.at(&[idx[1], idx[2]]).as_f64();
            F::from_f64(match kind {
                AllocKind::Volume => volume_fn(p),
                AllocKind::Notional => notional_fn(p),
            })
        })
    }

    /// Benchmark price per path `[M, B]`, each path scored by its own
    /// strategy's benchmark: volume-weighted over `max(effective, guard)`
    /// for VWAP paths, uniform over `effective` for TWAP paths.
    pub fn benchmark<F: Real>(
        &self,
        g: &mut Graph<F>,
        effective: NodeId,
        prices: &Tensor<F>,
        volumes: &Tensor<F>,
    ) -> NodeId {
        let batch = g.shape(effective)[1];
        let guard = self.volume_guard(volumes);
        let guard_rep = self.repeat_const(g, &guard);
        let volumes_rep = self.repeat_const(g, volumes);
        let prices_rep = self.repeat_const(g, prices);

        let vwap_window = g.maximum(effective, guard_rep);
        let vwap_weights = g.mul(volumes_rep, vwap_window);

        let sel_vwap = g.constant(self.path_selector::<F>(batch, |_, _, s| s.is_vwap_benchmark()));
        let sel_twap = g.constant(self.path_selector::<F>(batch, |_, _, s| !s.is_vwap_benchmark()));
        let vwap_part = g.mul(vwap_weights, sel_vwap);
        let twap_part = g.mul(effective, sel_twap);
        let weights = g.add(vwap_part, twap_part);

        let weighted_prices = g.mul(weights, prices_rep);
        let eps = F::from_f64(self.config.epsilon);
        let num_raw = g.sum_last_keep(weighted_prices);
        let num = g.add_scalar(num_raw, eps);
        let den_raw = g.sum_last_keep(weights);
        let den = g.add_scalar(den_raw, eps);
        let ratio = g.div(num, den);
        let m = self.grid.paths();
        g.reshape(ratio, vec![m, batch])
    }

    /// `D = (achieved / benchmark - 1) * 100`, elementwise.
    pub fn performance_diff<F: Real>(&self, g: &mut Graph<F>, achieved: NodeId, benchmark: NodeId) -> NodeId {
        let ratio = g.div(achieved, benchmark);
        let centered = g.add_scalar(ratio, -F::one());
        g.scale(centered, F::from_f64(100.0))
    }

    /// PnL, risk and total loss from the per-path performance `[M, B]`.
    pub fn loss<F: Real>(&self, g: &mut Graph<F>, diff: NodeId) -> (NodeId, NodeId, NodeId) {
        let n = self.grid.horizon;
        let batch = g.shape(diff)[1];

        let mut buy_rows = Vec::new();
        let mut sell_rows = Vec::new();
        for kind in ALLOC_KINDS {
            for period in 0..n {
                for (buy, sell) in [
                    (Strategy::BuyVwap, Strategy::SellVwap),
                    (Strategy::BuyTwap, Strategy::SellTwap),
                ] {
                    buy_rows.push(self.grid.path_index(kind, period, buy));
                    sell_rows.push(self.grid.path_index(kind, period, sell));
                }
            }
        }
        let buys = g.gather_outer(diff, &buy_rows);
        let sells = g.gather_outer(diff, &sell_rows);
        let spread = g.sub(buys, sells);
        let pnl_terms = g.softplus(spread);
        let pnl = g.sum_all(pnl_terms);

        let mut match_rows = Vec::new();
        for kind in ALLOC_KINDS {
            for strategy in STRATEGIES {
                match_rows.push(self.grid.path_index(kind, self.grid.match_index(), strategy));
            }
        }
        let matches = g.gather_outer(diff, &match_rows);
        let magnitude = g.abs(matches);
        let risk_terms = g.softplus(magnitude);
        let risk = g.sum_all(risk_terms);

        let normalizer = (batch * 2 * n * 2 + batch * 2 * 4) as f64;
        let combined = g.add(pnl, risk);
        let total = g.scale(combined, F::from_f64(1.0 / normalizer));
        (pnl, risk, total)
    }

    pub fn normalizer(&self, batch: usize) -> f64 {
        (batch * 2 * self.grid.horizon * 2 + batch * 2 * 4) as f64
    }

    /// Full pipeline from path-major allocations and market data.
    pub fn build<F: Real>(
        &self,
        g: &mut Graph<F>,
        alloc: NodeId,
        prices: &Tensor<F>,
        volumes: &Tensor<F>,
    ) -> ObjectiveNodes {
        let effective = self.effective_mask(g, alloc);
        let achieved = self.achieved(g, alloc, effective, prices);
        let benchmark = self.benchmark(g, effective, prices, volumes);
        let diff = self.performance_diff(g, achieved, benchmark);
        let (pnl, risk, total) = self.loss(g, diff);
        ObjectiveNodes {
            effective,
            achieved,
            benchmark,
            diff,
            pnl,
            risk,
            total,
        }
    }

    pub fn breakdown<F: Real>(&self, g: &Graph<F>, nodes: &ObjectiveNodes) -> LossBreakdown {
        let batch = g.shape(nodes.diff)[1];
        LossBreakdown {
            pnl_term: g.value(nodes.pnl).item().as_f64(),
            risk_term: g.value(nodes.risk).item().as_f64(),
            total: g.value(nodes.total).item().as_f64(),
            normalizer: self.normalizer(batch),
        }
    }
}

// ---------------------------------------------------------------------------
// Public value-level operations in the public tensor layouts.
// ---------------------------------------------------------------------------

/// Masks in the public layouts: `base` is `[N, N+1]`, `volume_guard`
/// `[B, N, N+1, 4]`, `effective` `[B, N, N+1, 4, 2]`.
#[derive(Debug, Clone)]
pub struct MaskSet<F: Real> {
    pub base: Tensor<F>,
    pub volume_guard: Tensor<F>,
    pub effective: Tensor<F>,
    pub completion_sharpness: f64,
}

/// Convert path-major `[M, B, N]` values to the public `[B, N, N+1, 4, 2]`
/// layout.
pub fn public_from_path_major<F: Real>(values: &Tensor<F>, grid: ScenarioGrid) -> Tensor<F> {
    let (m, b, n) = (values.shape()[0], values.shape()[1], values.shape()[2]);
    assert_eq!(m, grid.paths());
    let mut out = Tensor::zeros([b, n, grid.min_periods(), 4, 2]);
    for (path, kind, period, strategy) in grid.iter() {
        for batch in 0..b {
            for t in 0..n {
                out.set(
                    &[batch, t, period, strategy.index(), kind.index()],
                    values.at(&[path, batch, t]),
                );
            }
        }
    }
    out
}

/// Convert the public `[B, N, N+1, 4, 2]` layout to path-major `[M, B, N]`.
pub fn path_major_from_public<F: Real>(values: &Tensor<F>, grid: ScenarioGrid) -> Tensor<F> {
    let (b, n) = (values.shape()[0], values.shape()[1]);
    let mut out = Tensor::zeros([grid.paths(), b, n]);
    for (path, kind, period, strategy) in grid.iter() {
        for batch in 0..b {
            for t in 0..n {
                out.set(
                    &[path, batch, t],
                    values.at(&[batch, t, period, strategy.index(), kind.index()]),
                );
            }
        }
    }
    out
}

/// Per-path scalars `[M, B]` to the outcome layout `[B, 2, N+1, 4]`.
pub fn outcome_from_path_scalars<F: Real>(values: &Tensor<F>, grid: ScenarioGrid) -> Tensor<F> {
    let b = values.shape()[1];
    let mut out = Tensor::zeros([b, 2, grid.min_periods(), 4]);
    for (path, kind, period, strategy) in grid.iter() {
        for batch in 0..b {
            out.set(
                &[batch, kind.index(), period, strategy.index()],
                values.at(&[path, batch]),
            );
        }
    }
    out
}

/// Outcome layout `[B, 2, N+1, 4]` back to per-path scalars `[M, B]`.
pub fn path_scalars_from_outcome<F: Real>(values: &Tensor<F>, grid: ScenarioGrid) -> Tensor<F> {
    let b = values.shape()[0];
    let mut out = Tensor::zeros([grid.paths(), b]);
    for (path, kind, period, strategy) in grid.iter() {
        for batch in 0..b {
            out.set(
                &[path, batch],
                values.at(&[batch, kind.index(), period, strategy.index()]),
            );
        }
    }
    out
}

/// Build the mask set for an allocation tensor against realized volumes.
pub fn build_masks<F: Real>(
    alloc: &AllocationTensor<F>,
    market_volumes: &Tensor<F>,
    completion_sharpness: f64,
) -> MaskSet<F> {
    let grid = alloc.grid;
    let builder = ObjectiveBuilder::new(
        grid,
        ObjectiveConfig {
            completion_sharpness,
            ..ObjectiveConfig::default()
        },
    );
    let pm = path_major_from_public(&alloc.values, grid);
    let mut g = Graph::new();
    let alloc_node = g.constant(pm);
    let eff = builder.effective_mask(&mut g, alloc_node);
    let effective = public_from_path_major(g.value(eff), grid);

    let n = grid.horizon;
    let base = Tensor::from_fn([n, grid.min_periods()], |idx| {
        if idx[1] == grid.match_index() || idx[0] <= idx[1] {
            F::one()
        } else {
            F::zero()
        }
    });
    let guard_bn = builder.volume_guard(market_volumes);
    let b = market_volumes.shape()[0];
    let volume_guard = Tensor::from_fn([b, n, grid.min_periods(), 4], |idx| guard_bn.at(&[idx[0], idx[1]]));

    MaskSet {
        base,
        volume_guard,
        effective,
        completion_sharpness,
    }
}

/// Shared plumbing for the kind-specific achieved-price operations: runs the
/// graph formula over a single allocation kind laid out `[B, N, N+1, 4]`.
fn achieved_for_kind<F: Real>(
    alloc: &Tensor<F>,
    prices: &Tensor<F>,
    effective: &Tensor<F>,
    kind: AllocKind,
    epsilon: f64,
) -> Tensor<F> {
    let (b, n, mp) = (alloc.shape()[0], alloc.shape()[1], alloc.shape()[2]);
    let grid = ScenarioGrid::new(n);
    assert_eq!(mp, grid.min_periods());
    let builder = ObjectiveBuilder::new(grid, ObjectiveConfig { epsilon, ..Default::default() });

    // Expand the single-kind tensors to the full path axis; the other half is
    // zero-filled and discarded after the reduction.
    let mut alloc_pm = Tensor::zeros([grid.paths(), b, n]);
    let mut eff_pm = Tensor::zeros([grid.paths(), b, n]);
    for (path, k, period, strategy) in grid.iter() {
        if k != kind {
            continue;
        }
        for batch in 0..b {
            for t in 0..n {
                alloc_pm.set(&[path, batch, t], alloc.at(&[batch, t, period, strategy.index()]));
                eff_pm.set(&[path, batch, t], effective.at(&[batch, t, period, strategy.index()]));
            }
        }
    }
    let mut g = Graph::new();
    let alloc_node = g.constant(alloc_pm);
    let eff_node = g.constant(eff_pm);
    let achieved = builder.achieved(&mut g, alloc_node, eff_node, prices);
    let full = outcome_from_path_scalars(g.value(achieved), grid);
    Tensor::from_fn([b, mp, 4], |idx| full.at(&[idx[0], kind.index(), idx[1], idx[2]]))
}

/// Achieved price for volume-denominated schedules: executed shares at market
/// prices. Shapes: `alloc`/`eff_mask` `[B, N, N+1, 4]`, `prices` `[B, N]`;
/// returns `[B, N+1, 4]`.
pub fn achieved_price_volume<F: Real>(
    alloc_volume: &Tensor<F>,
    prices: &Tensor<F>,
    eff_mask: &Tensor<F>,
    epsilon: f64,
) -> Tensor<F> {
    achieved_for_kind(alloc_volume, prices, eff_mask, AllocKind::Volume, epsilon)
}

/// Achieved price for notional-denominated schedules: executed cash over the
/// shares it buys.
pub fn achieved_price_notional<F: Real>(
    alloc_notional: &Tensor<F>,
    prices: &Tensor<F>,
    eff_mask: &Tensor<F>,
    epsilon: f64,
) -> Tensor<F> {
    achieved_for_kind(alloc_notional, prices, eff_mask, AllocKind::Notional, epsilon)
}

/// Benchmark prices over the effective periods. `effective` and `guard` are
/// `[B, N, N+1, 4]`; returns `[B, N+1, 4]`.
pub fn benchmark_prices<F: Real>(
    market_volumes: &Tensor<F>,
    market_prices: &Tensor<F>,
    effective: &Tensor<F>,
    kind: BenchmarkKind,
    epsilon: f64,
) -> Tensor<F> {
    let (b, n, mp) = (effective.shape()[0], effective.shape()[1], effective.shape()[2]);
    let eps = epsilon;
    let guard_row = |batch: usize, t: usize| -> f64 {
        if t == 0 {
            return 1.0;
        }
        for s in 0..t {
            if market_volumes.at(&[batch, s]) > F::zero() {
                return 1.0;
            }
        }
        0.0
    };
    Tensor::from_fn([b, mp, 4], |idx| {
        let (batch, period, strategy) = (idx[0], idx[1], idx[2]);
        let mut num = eps;
        let mut den = eps;
        for t in 0..n {
            let eff = effective.at(&[batch, t, period, strategy]).as_f64();
            let weight = match kind {
                BenchmarkKind::Vwap => {
                    let window = eff.max(guard_row(batch, t));
                    market_volumes.at(&[batch, t]).as_f64() * window
                }
                BenchmarkKind::Twap => eff,
            };
            num += weight * market_prices.at(&[batch, t]).as_f64();
            den += weight;
        }
        F::from_f64(num / den)
    })
}

/// `D = (achieved / benchmark - 1) * 100`, elementwise over any matching
/// shapes.
pub fn performance_diff<F: Real>(achieved: &Tensor<F>, benchmark: &Tensor<F>) -> Tensor<F> {
    achieved.zip_map(benchmark, |a, b| (a / b - F::one()) * F::from_f64(100.0))
}

/// Loss from the performance block `[B, 2, N+1, 4]`.
pub fn total_loss<F: Real>(diff: &Tensor<F>) -> LossBreakdown {
    let mp = diff.shape()[2];
    let grid = ScenarioGrid::new(mp - 1);
    let builder = ObjectiveBuilder::new(grid, ObjectiveConfig::default());
    let pm = path_scalars_from_outcome(diff, grid);
    let mut g = Graph::new();
    let diff_node = g.constant(pm);
    let (pnl, risk, total) = builder.loss(&mut g, diff_node);
    LossBreakdown {
        pnl_term: g.value(pnl).item().as_f64(),
        risk_term: g.value(risk).item().as_f64(),
        total: g.value(total).item().as_f64(),
        normalizer: builder.normalizer(diff.shape()[0]),
    }
}

/// Evaluation-time hard completion: the first step `t >= min_period` where
/// the cumulative allocation reaches `1 - eps_complete` stops the schedule;
/// later steps are discarded.
#[derive(Debug, Clone, PartialEq)]
pub struct HardExecution<F> {
    /// 1-based stop step tau.
    pub stop_step: usize,
    /// Schedule truncated to `tau` entries.
    pub schedule: Vec<F>,
}

pub fn hard_execution<F: Real>(schedule: &[F], min_period: usize, eps_complete: f64) -> HardExecution<F> {
    let n = schedule.len();
    assert!(n >= 1);
    let min_period = min_period.clamp(1, n);
    let mut cum = F::zero();
    let mut stop = n;
    for (t, &a) in schedule.iter().enumerate() {
        cum += a;
        let step = t + 1;
        if step >= min_period && cum.as_f64() >= 1.0 - eps_complete {
            stop = step;
            break;
        }
    }
    HardExecution {
        stop_step: stop,
        schedule: schedule[..stop].to_vec(),
    }
}

/// Hard-mask scoring of a truncated schedule: achieved price plus the
/// benchmark over steps `1..=tau`.
///
/// Unlike the differentiable soft loss, which adds its guard epsilon into
/// every division, hard scoring clamps the denominators from below: healthy
/// windows are scored exactly (a uniform schedule against the TWAP benchmark
/// cancels to the last bit), and the guard only engages on degenerate
/// zero-denominator windows.
pub fn hard_scores<F: Real>(
    executed: &HardExecution<F>,
    prices: &[F],
    volumes: &[F],
    kind: AllocKind,
    benchmark: BenchmarkKind,
    epsilon: f64,
) -> (f64, f64) {
    let tau = executed.stop_step;
    let mut exec_notional = 0.0;
    let mut exec_shares = 0.0;
    let mut bench_num = 0.0;
    let mut bench_den = 0.0;
    for t in 0..tau {
        let p = prices[t].as_f64();
        let a = executed.schedule[t].as_f64();
        match kind {
            AllocKind::Volume => {
                exec_shares += a;
                exec_notional += a * p;
            }
            AllocKind::Notional => {
                exec_notional += a;
                exec_shares += a / p;
            }
        }
        let w = match benchmark {
            BenchmarkKind::Vwap => volumes[t].as_f64(),
            BenchmarkKind::Twap => 1.0,
        };
        bench_num += w * p;
        bench_den += w;
    }
    let achieved = exec_notional / exec_shares.max(epsilon);
    (achieved, bench_num / bench_den.max(epsilon))
}

/// Slippage of an achieved price against a benchmark in basis points, raw
/// sign convention: below benchmark is negative (good for buys), above is
/// positive (good for sells).
pub fn slippage_bps(achieved: f64, benchmark: f64) -> f64 {
    (achieved / benchmark - 1.0) * 1e4
}
