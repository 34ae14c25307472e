//! Gated linear units and gated residual networks.
//!
//! The GRN follows the temporal-fusion convention: a two-layer ELU/linear
//! transform gated by a GLU, added to a (possibly projected) skip connection
//! and layer-normalized. The gate lets the block suppress its nonlinear
//! contribution entirely, reducing to the normalized skip path.

use rand_chacha::ChaCha20Rng;

use crate::graph::{Graph, NodeId};
use crate::params::{Init, Leaves, ParamId, ParamSet};
use crate::real::Real;
use crate::tensor::Tensor;

/// Dropout context threaded through encoder forward passes. Training passes
/// a generator when the configured rate is positive; evaluation passes `Off`.
pub enum Dropout<'r> {
    Off,
    On { rate: f64, rng: &'r mut ChaCha20Rng },
}

impl<'r> Dropout<'r> {
    fn apply<F: Real>(&mut self, g: &mut Graph<F>, x: NodeId) -> NodeId {
        match self {
            Dropout::Off => x,
            Dropout::On { rate, rng } => {
                use rand::Rng;
                let keep = 1.0 - *rate;
                let shape = g.shape(x).to_vec();
                let mask = Tensor::from_fn(shape, |_| {
                    if rng.gen_range(0.0..1.0) < keep {
                        F::from_f64(1.0 / keep)
                    } else {
                        F::zero()
                    }
                });
                let mask = g.constant(mask);
                g.mul(x, mask)
            }
        }
    }
}

/// `GLU(x) = sigmoid(W4 x + b4) .* (W5 x + b5)`, dimension preserving.
pub struct Glu {
    pub w4: ParamId,
    pub b4: ParamId,
    pub w5: ParamId,
    pub b5: ParamId,
}

impl Glu {
    pub fn new<F: Real>(
        params: &mut ParamSet<F>,
        prefix: &str,
        dim: usize,
        init: &mut Init<'_>,
    ) -> Self {
        Glu {
            w4: params.register(format!("{prefix}.w4"), init.glorot(dim, dim)),
            b4: params.register(format!("{prefix}.b4"), init.zeros([dim])),
            w5: params.register(format!("{prefix}.w5"), init.glorot(dim, dim)),
            b5: params.register(format!("{prefix}.b5"), init.zeros([dim])),
        }
    }

    pub fn apply<F: Real>(&self, g: &mut Graph<F>, lv: &Leaves, x: NodeId) -> NodeId {
        let gate_lin = g.matmul(x, lv.node(self.w4));
        let gate_aff = g.add_cols(gate_lin, lv.node(self.b4));
        let gate = g.sigmoid(gate_aff);
        let val_lin = g.matmul(x, lv.node(self.w5));
        let val = g.add_cols(val_lin, lv.node(self.b5));
        g.mul(gate, val)
    }
}

/// Gated residual network mapping `d_in -> d_out` through a `d_hidden` ELU
/// layer. When `d_in != d_out` the skip path is a learned linear projection.
pub struct Grn {
    pub d_in: usize,
    pub d_out: usize,
    pub w2: ParamId,
    pub b2: ParamId,
    pub w1: ParamId,
    pub b1: ParamId,
    pub glu: Glu,
    pub skip: Option<(ParamId, ParamId)>,
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl Grn {
    pub fn new<F: Real>(
        params: &mut ParamSet<F>,
        prefix: &str,
        d_in: usize,
        d_hidden: usize,
        d_out: usize,
        init: &mut Init<'_>,
    ) -> Self {
        let w2 = params.register(format!("{prefix}.w2"), init.glorot(d_in, d_hidden));
        let b2 = params.register(format!("{prefix}.b2"), init.zeros([d_hidden]));
        let w1 = params.register(format!("{prefix}.w1"), init.glorot(d_hidden, d_out));
        let b1 = params.register(format!("{prefix}.b1"), init.zeros([d_out]));
        let glu = Glu::new(params, &format!("{prefix}.glu"), d_out, init);
        let skip = (d_in != d_out).then(|| {
            (
                params.register(format!("{prefix}.skip_w"), init.glorot(d_in, d_out)),
                params.register(format!("{prefix}.skip_b"), init.zeros([d_out])),
            )
        });
        let gamma = params.register(format!("{prefix}.ln_gamma"), init.constant([d_out], 1.0));
        let beta = params.register(format!("{prefix}.ln_beta"), init.zeros([d_out]));
        Grn {
            d_in,
            d_out,
            w2,
            b2,
            w1,
            b1,
            glu,
            skip,
            gamma,
            beta,
        }
    }

    pub fn apply<F: Real>(
        &self,
        g: &mut Graph<F>,
        lv: &Leaves,
        x: NodeId,
        dropout: &mut Dropout<'_>,
    ) -> NodeId {
        let eta2_lin = g.matmul(x, lv.node(self.w2));
        let eta2_aff = g.add_cols(eta2_lin, lv.node(self.b2));
        let eta2 = g.elu(eta2_aff);
        let eta1_lin = g.matmul(eta2, lv.node(self.w1));
        let eta1 = g.add_cols(eta1_lin, lv.node(self.b1));
        let eta1 = dropout.apply(g, eta1);
        let gated = self.glu.apply(g, lv, eta1);
        let skip = match self.skip {
            Some((w, b)) => {
                let proj = g.matmul(x, lv.node(w));
                g.add_cols(proj, lv.node(b))
            }
            None => x,
        };
        let residual = g.add(skip, gated);
        g.layer_norm(residual, lv.node(self.gamma), lv.node(self.beta), F::from_f64(1e-6))
    }
}
