//! Causal multi-head self-attention with a gated residual output.
//!
//! Scaled dot-product attention per head with a strict lower-triangular mask
//! (weights for keys after the query position are exactly zero), heads
//! concatenated and mixed linearly, then a residual add into a GRN gate.

use crate::encoder::grn::{Dropout, Grn};
use crate::graph::{Graph, NodeId};
use crate::params::{Init, Leaves, ParamId, ParamSet};
use crate::real::Real;

pub struct CausalAttention {
    pub hidden: usize,
    pub heads: usize,
    w_q: ParamId,
    w_k: ParamId,
    w_v: ParamId,
    w_mix: ParamId,
    out_grn: Grn,
}

impl CausalAttention {
    pub fn new<F: Real>(
        params: &mut ParamSet<F>,
        prefix: &str,
        hidden: usize,
        heads: usize,
        init: &mut Init<'_>,
    ) -> Self {
        assert!(heads >= 1 && hidden.is_multiple_of(heads), "hidden must divide into heads");
        CausalAttention {
            hidden,
            heads,
            w_q: params.register(format!("{prefix}.w_q"), init.glorot(hidden, hidden)),
            w_k: params.register(format!("{prefix}.w_k"), init.glorot(hidden, hidden)),
            w_v: params.register(format!("{prefix}.w_v"), init.glorot(hidden, hidden)),
            w_mix: params.register(format!("{prefix}.w_mix"), init.glorot(hidden, hidden)),
            out_grn: Grn::new(params, &format!("{prefix}.out_grn"), hidden, hidden, hidden, init),
        }
    }

    /// `[B, T, H] -> [B, T, H]`.
    pub fn apply<F: Real>(
        &self,
        g: &mut Graph<F>,
        lv: &Leaves,
        h: NodeId,
        dropout: &mut Dropout<'_>,
    ) -> NodeId {
        let mixed = self.multi_head(g, lv, h);
        let residual = g.add(h, mixed);
        self.out_grn.apply(g, lv, residual, dropout)
    }

    /// The masked multi-head core, before the residual add and output gate.
    fn multi_head<F: Real>(&self, g: &mut Graph<F>, lv: &Leaves, h: NodeId) -> NodeId {
        let d_attn = self.hidden / self.heads;
        let scale = F::from_f64(1.0 / (d_attn as f64).sqrt());

        let q = g.matmul(h, lv.node(self.w_q));
        let k = g.matmul(h, lv.node(self.w_k));
        let v = g.matmul(h, lv.node(self.w_v));

        let mut head_outputs = Vec::with_capacity(self.heads);
        for head in 0..self.heads {
            let q_h = g.slice_last(q, head * d_attn, d_attn);
            let k_h = g.slice_last(k, head * d_attn, d_attn);
            let v_h = g.slice_last(v, head * d_attn, d_attn);
            let k_t = g.transpose_last2(k_h);
            let scores = g.bmm(q_h, k_t);
            let scaled = g.scale(scores, scale);
            let weights = g.causal_softmax(scaled);
            head_outputs.push(g.bmm(weights, v_h));
        }
        let concat = g.concat_last(&head_outputs);
        g.matmul(concat, lv.node(self.w_mix))
    }

    #[cfg(test)]
    pub(crate) fn multi_head_for_tests<F: Real>(
        &self,
        g: &mut Graph<F>,
        lv: &Leaves,
        h: NodeId,
    ) -> NodeId {
        self.multi_head(g, lv, h)
    }
}
