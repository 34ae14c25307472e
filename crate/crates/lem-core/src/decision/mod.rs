//! Execution decision block: per-step, per-path allocation networks under
//! hard budget conservation.
//!
//! Every scenario in the grid (minimum period x strategy x allocation kind)
//! runs its own small MLP at every step, fed with the shared market context,
//! the raw features, its own allocation history, its remaining budget, and
//! the current bar's return and volume. Raw rates pass through a softplus, a
//! differentiable soft clip against the maximum rate, and hard min/max
//! against zero and the remaining budget; the final step takes whatever
//! budget is left, so every path's allocations sum to one by construction.

use serde::{Deserialize, Serialize};

use crate::error::{LemError, Result};
use crate::graph::{Graph, NodeId};
use crate::params::{Init, Leaves, ParamId, ParamSet};
use crate::real::Real;
use crate::tensor::Tensor;

/// Benchmark/side combination, in output-axis order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    BuyVwap = 0,
    BuyTwap = 1,
    SellVwap = 2,
    SellTwap = 3,
}

pub const STRATEGIES: [Strategy; 4] = [
    Strategy::BuyVwap,
    Strategy::BuyTwap,
    Strategy::SellVwap,
    Strategy::SellTwap,
];

impl Strategy {
    pub fn is_buy(&self) -> bool {
        matches!(self, Strategy::BuyVwap | Strategy::BuyTwap)
    }

    pub fn is_vwap_benchmark(&self) -> bool {
        matches!(self, Strategy::BuyVwap | Strategy::SellVwap)
    }

    pub fn index(&self) -> usize {
        *self as usize
    }

    pub fn from_index(k: usize) -> Strategy {
        STRATEGIES[k]
    }
}

/// Order denomination: a fraction of shares or a fraction of notional.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AllocKind {
    Volume = 0,
    Notional = 1,
}

pub const ALLOC_KINDS: [AllocKind; 2] = [AllocKind::Volume, AllocKind::Notional];

impl AllocKind {
    pub fn index(&self) -> usize {
        *self as usize
    }
}

/// Flattening of the scenario grid onto the path axis. Allocation kind is the
/// outermost factor so the two kinds occupy contiguous halves, then minimum
/// period, then strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScenarioGrid {
    pub horizon: usize,
}

impl ScenarioGrid {
    pub fn new(horizon: usize) -> Self {
        ScenarioGrid { horizon }
    }

    /// Minimum-period axis length: periods 1..N plus the benchmark-matching
    /// slot.
    pub fn min_periods(&self) -> usize {
        self.horizon + 1
    }

    /// Index of the match (risk-only) scenario on the minimum-period axis.
    pub fn match_index(&self) -> usize {
        self.horizon
    }

    pub fn paths(&self) -> usize {
        self.min_periods() * 4 * 2
    }

    pub fn path_index(&self, kind: AllocKind, min_period_idx: usize, strategy: Strategy) -> usize {
        debug_assert!(min_period_idx < self.min_periods());
        (kind.index() * self.min_periods() + min_period_idx) * 4 + strategy.index()
    }

    pub fn decompose(&self, path: usize) -> (AllocKind, usize, Strategy) {
        let strategy = Strategy::from_index(path % 4);
        let rest = path / 4;
        let min_period_idx = rest % self.min_periods();
        let kind = ALLOC_KINDS[rest / self.min_periods()];
        (kind, min_period_idx, strategy)
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, AllocKind, usize, Strategy)> + '_ {
        (0..self.paths()).map(|m| {
            let (kind, n, k) = self.decompose(m);
            (m, kind, n, k)
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecisionOptions {
    #[serde(default = "default_depth")]
    pub mlp_depth: usize,
    #[serde(default = "default_width")]
    pub mlp_width: usize,
    #[serde(default = "default_sharpness")]
    pub clip_sharpness: f64,
    #[serde(default = "default_max_rate")]
    pub max_rate: f64,
}

fn default_depth() -> usize {
    2
}
fn default_width() -> usize {
    16
}
fn default_sharpness() -> f64 {
    50.0
}
fn default_max_rate() -> f64 {
    1.0
}

impl Default for DecisionOptions {
    fn default() -> Self {
        DecisionOptions {
            mlp_depth: default_depth(),
            mlp_width: default_width(),
            clip_sharpness: default_sharpness(),
            max_rate: default_max_rate(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct DecisionConfig {
    /// Execution horizon N (allocation steps).
    pub horizon: usize,
    pub mlp_depth: usize,
    pub mlp_width: usize,
    /// Soft-clip sharpness lambda.
    pub clip_sharpness: f64,
    /// Per-step rate ceiling; 1 leaves the maximum effectively unconstrained.
    pub max_rate: f64,
}

impl DecisionConfig {
    pub fn new(horizon: usize, opts: &DecisionOptions) -> Result<Self> {
        let cfg = DecisionConfig {
            horizon,
            mlp_depth: opts.mlp_depth,
            mlp_width: opts.mlp_width,
            clip_sharpness: opts.clip_sharpness,
            max_rate: opts.max_rate,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Minimum per-step rate while an order is incomplete: `1 / N^2`.
    pub fn min_rate(&self) -> f64 {
        1.0 / (self.horizon * self.horizon) as f64
    }

    pub fn grid(&self) -> ScenarioGrid {
        ScenarioGrid::new(self.horizon)
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon < 2 {
            return Err(LemError::validation("decision horizon must be >= 2"));
        }
        if self.mlp_depth == 0 || self.mlp_width == 0 {
            return Err(LemError::validation("mlp_depth and mlp_width must be >= 1"));
        }
        if self.clip_sharpness <= 0.0 {
            return Err(LemError::validation("clip_sharpness must be positive"));
        }
        if !(0.0 < self.max_rate && self.max_rate <= 1.0) {
            return Err(LemError::validation("max_rate must lie in (0, 1]"));
        }
        if self.min_rate() >= self.max_rate {
            return Err(LemError::validation(format!(
                "min_rate {} must stay below max_rate {}",
                self.min_rate(),
                self.max_rate
            )));
        }
        Ok(())
    }

    /// Width of each step's per-path input vector:
    /// context (H) + features (D) + own history (N-1) + remaining budget (1)
    /// + current bar return and volume (2).
    pub fn step_input_width(&self, hidden: usize, feature_dim: usize) -> usize {
        hidden + feature_dim + (self.horizon - 1) + 3
    }
}

/// Differentiable soft clip toward an upper bound `u`:
/// `S(x, u, lambda) = x * sigmoid(lambda (u - x)) + u * (1 - sigmoid(lambda (u - x)))`.
///
/// Far below `u` it is nearly the identity; far above it approaches `u` (with
/// a small overshoot of at most ~0.28 / lambda just past the bound).
pub fn soft_clip(x: f64, u: f64, lambda: f64) -> f64 {
    let gate = (lambda * (u - x)).sigmoid();
    x * gate + u * (1.0 - gate)
}

/// Derivative of [`soft_clip`] in `x`. Near the bound it is order one; deep
/// past the bound it decays like `exp(-lambda (x - u))`, which is what makes
/// saturated rates insensitive to parameter perturbations.
pub fn soft_clip_slope(x: f64, u: f64, lambda: f64) -> f64 {
    let t = lambda * (u - x);
    let s = t.sigmoid();
    s * (1.0 + t * (1.0 - s))
}

/// Graph form of [`soft_clip`], elementwise in `x` with scalar bound.
pub fn soft_clip_node<F: Real>(g: &mut Graph<F>, x: NodeId, u: f64, lambda: f64) -> NodeId {
    let u_f = F::from_f64(u);
    let neg_x = g.neg(x);
    let u_minus_x = g.add_scalar(neg_x, u_f);
    let scaled = g.scale(u_minus_x, F::from_f64(lambda));
    let gate = g.sigmoid(scaled);
    // u + (x - u) * gate.
    let x_minus_u = g.add_scalar(x, -u_f);
    let blended = g.mul(x_minus_u, gate);
    g.add_scalar(blended, u_f)
}

/// Hard budget projection after the soft clip:
/// `alpha = max(0, min(soft_clip(raw + r_min, r_max, lambda), remaining))`.
pub fn constrain_step_node<F: Real>(
    g: &mut Graph<F>,
    raw: NodeId,
    remaining: NodeId,
    cfg: &DecisionConfig,
) -> NodeId {
    let (alpha, _, _) = constrain_step_parts(g, raw, remaining, cfg);
    alpha
}

/// [`constrain_step_node`] that also returns the pre-projection rate
/// `alpha_temp`; the gradient checker uses it to detect kink proximity.
pub fn constrain_step_parts<F: Real>(
    g: &mut Graph<F>,
    raw: NodeId,
    remaining: NodeId,
    cfg: &DecisionConfig,
) -> (NodeId, NodeId, NodeId) {
    let lifted = g.add_scalar(raw, F::from_f64(cfg.min_rate()));
    let clipped = soft_clip_node(g, lifted, cfg.max_rate, cfg.clip_sharpness);
    let capped = g.minimum(clipped, remaining);
    let zeros = g.constant(Tensor::zeros(g.shape(capped).to_vec()));
    (g.maximum(capped, zeros), clipped, lifted)
}

/// One execution step's bank of per-path MLPs. Parameters are distinct per
/// step and per path; paths never share state.
pub struct FusedStep {
    pub step: usize,
    pub input_width: usize,
    layers: Vec<(ParamId, ParamId)>,
}

impl FusedStep {
    pub fn new<F: Real>(
        params: &mut ParamSet<F>,
        prefix: &str,
        step: usize,
        paths: usize,
        input_width: usize,
        cfg: &DecisionConfig,
        init: &mut Init<'_>,
    ) -> Self {
        let mut widths = vec![input_width];
        for _ in 0..cfg.mlp_depth - 1 {
            widths.push(cfg.mlp_width);
        }
        widths.push(1);
        let mut layers = Vec::with_capacity(cfg.mlp_depth);
        for l in 0..cfg.mlp_depth {
            let (w_in, w_out) = (widths[l], widths[l + 1]);
            let limit = (6.0 / (w_in + w_out) as f64).sqrt();
            let w = params.register(
                format!("{prefix}.step{step}.layer{l}.w"),
                init.uniform([paths, w_in, w_out], limit),
            );
            // The output bias starts negative so initial rates sit near the
            // minimum: budgets then survive the whole horizon and every
            // step's network trains instead of saturating the clip at the
            // first step.
            let b = if l + 1 == cfg.mlp_depth {
                params.register(
                    format!("{prefix}.step{step}.layer{l}.b"),
                    init.constant([paths, 1, w_out], -2.0),
                )
            } else {
                params.register(
                    format!("{prefix}.step{step}.layer{l}.b"),
                    init.zeros([paths, 1, w_out]),
                )
            };
            layers.push((w, b));
        }
        FusedStep {
            step,
            input_width,
            layers,
        }
    }

    /// `[M, B, F_step] -> [M, B, 1]` non-negative raw rates.
    pub fn apply<F: Real>(&self, g: &mut Graph<F>, lv: &Leaves, input: NodeId) -> NodeId {
        assert_eq!(
            g.shape(input)[2],
            self.input_width,
            "fused step {} input width",
            self.step
        );
        let depth = self.layers.len();
        let mut x = input;
        for (l, &(w, b)) in self.layers.iter().enumerate() {
            let lin = g.bmm(x, lv.node(w));
            x = g.add_mid1(lin, lv.node(b));
            if l + 1 < depth {
                x = g.elu(x);
            }
        }
        g.softplus(x)
    }
}

/// The full decision block: one [`FusedStep`] per interior step plus the
/// closing rule.
pub struct DecisionBlock {
    pub config: DecisionConfig,
    pub hidden: usize,
    pub feature_dim: usize,
    steps: Vec<FusedStep>,
}

/// Graph handles produced by one allocation pass.
pub struct AllocationNodes {
    /// Path-major allocations `[M, B, N]`.
    pub path_major: NodeId,
    /// Per-step constrained allocations `[M, B, 1]` in step order.
    pub per_step: Vec<NodeId>,
    /// Pre-projection rates `alpha_temp` for the interior steps.
    pub pre_clip: Vec<NodeId>,
    /// Pre-soft-clip rates `raw + r_min` for the interior steps.
    pub lifted: Vec<NodeId>,
    /// Remaining budget entering each interior step.
    pub budgets: Vec<NodeId>,
}

impl DecisionBlock {
    pub fn new<F: Real>(
        params: &mut ParamSet<F>,
        prefix: &str,
        hidden: usize,
        feature_dim: usize,
        config: DecisionConfig,
        init: &mut Init<'_>,
    ) -> Self {
        let paths = config.grid().paths();
        let width = config.step_input_width(hidden, feature_dim);
        let steps = (1..config.horizon)
            .map(|s| FusedStep::new(params, prefix, s, paths, width, &config, init))
            .collect();
        DecisionBlock {
            config,
            hidden,
            feature_dim,
            steps,
        }
    }

    /// Value-level single-step application for inputs laid out `[B, M, F]`;
    /// returns `[B, M]`. Step indices are 1-based and must name an interior
    /// step (the final step has no network).
    pub fn fused_step_value<F: Real>(
        &self,
        params: &ParamSet<F>,
        step: usize,
        inputs: &Tensor<F>,
    ) -> Result<Tensor<F>> {
        if step == 0 || step >= self.config.horizon {
            return Err(LemError::validation(format!(
                "step {step} out of range 1..{}",
                self.config.horizon - 1
            )));
        }
        let paths = self.config.grid().paths();
        let expected = vec![
            inputs.shape().first().copied().unwrap_or(0),
            paths,
            self.steps[step - 1].input_width,
        ];
        if inputs.shape() != expected.as_slice() {
            return Err(LemError::ShapeMismatch {
                context: format!("fused step {step} inputs"),
                expected,
                found: inputs.shape().to_vec(),
            });
        }
        let mut g = Graph::new();
        let lv = params.leaves(&mut g);
        let path_major = g.constant(inputs.permuted(&[1, 0, 2]));
        let out = self.steps[step - 1].apply(&mut g, &lv, path_major);
        let b = inputs.shape()[0];
        let flat = g.reshape(out, vec![paths, b]);
        Ok(g.value(flat).permuted(&[1, 0]))
    }

    /// Sequential allocation. `context` is `[B, T, H]`, `features` is
    /// `[B, T, D]` (a constant node), and `bar_channels` names the feature
    /// channels holding the current bar return and volume.
    pub fn allocate<F: Real>(
        &self,
        g: &mut Graph<F>,
        lv: &Leaves,
        context: NodeId,
        features: NodeId,
        lookback: usize,
        bar_channels: (usize, usize),
    ) -> AllocationNodes {
        let n = self.config.horizon;
        let paths = self.config.grid().paths();
        let batch = g.shape(context)[0];
        assert_eq!(g.shape(context)[1], lookback + n, "context covers the horizon");
        assert_eq!(g.shape(context)[2], self.hidden);
        assert_eq!(g.shape(features)[2], self.feature_dim);

        let ones = g.constant(Tensor::full(vec![paths, batch, 1], F::one()));
        let mut remaining = ones;
        let mut history: Vec<NodeId> = Vec::with_capacity(n);
        let mut per_step: Vec<NodeId> = Vec::with_capacity(n);
        let mut pre_clip: Vec<NodeId> = Vec::with_capacity(n - 1);
        let mut lifted: Vec<NodeId> = Vec::with_capacity(n - 1);
        let mut budgets: Vec<NodeId> = Vec::with_capacity(n - 1);

        for s in 1..=n {
            let position = lookback + s - 1;
            let alpha = if s < n {
                let ctx_s = g.select_mid(context, position);
                let ctx_rep = g.repeat_outer(ctx_s, paths);
                let feat_s = g.select_mid(features, position);
                let feat_rep = g.repeat_outer(feat_s, paths);
                let (ch_ret, ch_vol) = bar_channels;
                let bar_ret = g.slice_last(feat_rep, ch_ret, 1);
                let bar_vol = g.slice_last(feat_rep, ch_vol, 1);

                let mut parts: Vec<NodeId> = vec![ctx_rep, feat_rep];
                parts.extend(history.iter().copied());
                if s < n {
                    let pad = g.constant(Tensor::zeros(vec![paths, batch, n - s]));
                    parts.push(pad);
                }
                parts.push(remaining);
                parts.push(bar_ret);
                parts.push(bar_vol);
                let step_input = g.concat_last(&parts);

                let raw = self.steps[s - 1].apply(g, lv, step_input);
                let (alpha, alpha_temp, lifted_rate) = constrain_step_parts(g, raw, remaining, &self.config);
                pre_clip.push(alpha_temp);
                lifted.push(lifted_rate);
                budgets.push(remaining);
                alpha
            } else {
                // Closing rule: the last step takes the whole remaining
                // budget, bypassing the rate ceiling.
                remaining
            };
            per_step.push(alpha);
            history.push(alpha);
            if s < n {
                remaining = g.sub(remaining, alpha);
            }
        }
        let path_major_flat = g.concat_last(&per_step);
        AllocationNodes {
            path_major: path_major_flat,
            per_step,
            pre_clip,
            lifted,
            budgets,
        }
    }
}

/// Model output in the public layout `[B, N, N+1, 4, 2]`: batch, execution
/// step, minimum period (with the match slot last), strategy, allocation
/// kind. Every `(batch, min-period, strategy, kind)` path sums to one.
#[derive(Debug, Clone)]
pub struct AllocationTensor<F: Real> {
    pub values: Tensor<F>,
    pub grid: ScenarioGrid,
}

impl<F: Real> AllocationTensor<F> {
    /// Reshape path-major graph output `[M, B, N]` into the public layout.
    pub fn from_path_major(values: &Tensor<F>, grid: ScenarioGrid) -> Self {
        let (m, b, n) = (values.shape()[0], values.shape()[1], values.shape()[2]);
        assert_eq!(m, grid.paths());
        assert_eq!(n, grid.horizon);
        let mp = grid.min_periods();
        let mut out = Tensor::zeros([b, n, mp, 4, 2]);
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
        AllocationTensor { values: out, grid }
    }

    pub fn batch_size(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn at(&self, batch: usize, t: usize, period: usize, strategy: Strategy, kind: AllocKind) -> F {
        self.values
            .at(&[batch, t, period, strategy.index(), kind.index()])
    }

    /// The allocation schedule of one path.
    pub fn path_schedule(
        &self,
        batch: usize,
        period: usize,
        strategy: Strategy,
        kind: AllocKind,
    ) -> Vec<F> {
        (0..self.grid.horizon)
            .map(|t| self.at(batch, t, period, strategy, kind))
            .collect()
    }

    /// Non-negativity and exact budget conservation per path.
    pub fn validate(&self, tolerance: f64) -> Result<()> {
        for batch in 0..self.batch_size() {
            for (_, kind, period, strategy) in self.grid.iter() {
                let mut total = F::zero();
                for t in 0..self.grid.horizon {
                    let v = self.at(batch, t, period, strategy, kind);
                    if v < F::zero() {
                        return Err(LemError::validation(format!(
                            "negative allocation {v} at batch {batch}, step {t}, period {period}, strategy {strategy:?}, kind {kind:?}"
                        )));
                    }
                    total += v;
                }
                if (total.as_f64() - 1.0).abs() > tolerance {
                    return Err(LemError::validation(format!(
                        "path sums to {total} (batch {batch}, period {period}, strategy {strategy:?}, kind {kind:?})"
                    )));
                }
            }
        }
        Ok(())
    }
}
