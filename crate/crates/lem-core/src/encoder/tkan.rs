//! Recurrent block whose sub-layers are learnable univariate-function (KAN)
//! layers, wrapped in LSTM-style gating and memory.
//!
//! Per step `t`, each sub-layer `l` forms `s_{l,t} = W_lx x_t + W_lh h~_{l,t-1}`,
//! passes it through its spline layer, and updates its own memory
//! `h~_{l,t} = w_hh .* h~_{l,t-1} + w_hz .* o~_t` with per-unit mixing
//! weights. The concatenated sub-layer outputs drive the output gate, while
//! forget/input gates and the candidate state come from `(x_t, h_{t-1})` as
//! in an LSTM. All states start at zero and the recurrence is strictly
//! forward, which is what makes the encoder causal ahead of attention.

use crate::encoder::kan::KanLayer;
use crate::graph::{Graph, NodeId};
use crate::params::{Init, Leaves, ParamId, ParamSet};
use crate::real::Real;
use crate::tensor::Tensor;

struct SubLayer {
    w_x: ParamId,
    w_h: ParamId,
    /// Diagonal (per-unit) memory mixes.
    hh: ParamId,
    hz: ParamId,
    kan: KanLayer,
}

pub struct Tkan {
    pub hidden: usize,
    pub sublayers: usize,
    subs: Vec<SubLayer>,
    w_f: ParamId,
    u_f: ParamId,
    b_f: ParamId,
    w_i: ParamId,
    u_i: ParamId,
    b_i: ParamId,
    w_c: ParamId,
    u_c: ParamId,
    b_c: ParamId,
    w_o: ParamId,
    b_o: ParamId,
}

impl Tkan {
    #[allow(clippy::too_many_arguments)]
    pub fn new<F: Real>(
        params: &mut ParamSet<F>,
        prefix: &str,
        hidden: usize,
        sublayers: usize,
        grid_size: usize,
        order: usize,
        init: &mut Init<'_>,
    ) -> Self {
        let subs = (0..sublayers)
            .map(|l| SubLayer {
                w_x: params.register(format!("{prefix}.sub{l}.w_x"), init.glorot(hidden, hidden)),
                w_h: params.register(format!("{prefix}.sub{l}.w_h"), init.glorot(hidden, hidden)),
                hh: params.register(format!("{prefix}.sub{l}.hh"), init.constant([hidden], 0.5)),
                hz: params.register(format!("{prefix}.sub{l}.hz"), init.constant([hidden], 0.5)),
                kan: KanLayer::new(
                    params,
                    &format!("{prefix}.sub{l}.kan"),
                    hidden,
                    hidden,
                    grid_size,
                    order,
                    init,
                ),
            })
            .collect();
        Tkan {
            hidden,
            sublayers,
            subs,
            w_f: params.register(format!("{prefix}.w_f"), init.glorot(hidden, hidden)),
            u_f: params.register(format!("{prefix}.u_f"), init.glorot(hidden, hidden)),
            b_f: params.register(format!("{prefix}.b_f"), init.zeros([hidden])),
            w_i: params.register(format!("{prefix}.w_i"), init.glorot(hidden, hidden)),
            u_i: params.register(format!("{prefix}.u_i"), init.glorot(hidden, hidden)),
            b_i: params.register(format!("{prefix}.b_i"), init.zeros([hidden])),
            w_c: params.register(format!("{prefix}.w_c"), init.glorot(hidden, hidden)),
            u_c: params.register(format!("{prefix}.u_c"), init.glorot(hidden, hidden)),
            b_c: params.register(format!("{prefix}.b_c"), init.zeros([hidden])),
            w_o: params.register(format!("{prefix}.w_o"), init.glorot(sublayers * hidden, hidden)),
            b_o: params.register(format!("{prefix}.b_o"), init.zeros([hidden])),
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn affine<F: Real>(
        &self,
        g: &mut Graph<F>,
        lv: &Leaves,
        x_t: NodeId,
        h_prev: NodeId,
        w: ParamId,
        u: ParamId,
        b: ParamId,
    ) -> NodeId {
        let from_x = g.matmul(x_t, lv.node(w));
        let from_h = g.matmul(h_prev, lv.node(u));
        let lin = g.add(from_x, from_h);
        g.add_cols(lin, lv.node(b))
    }

    #[allow(clippy::too_many_arguments)]
    fn gate<F: Real>(
        &self,
        g: &mut Graph<F>,
        lv: &Leaves,
        x_t: NodeId,
        h_prev: NodeId,
        w: ParamId,
        u: ParamId,
        b: ParamId,
    ) -> NodeId {
        let aff = self.affine(g, lv, x_t, h_prev, w, u, b);
        g.sigmoid(aff)
    }

    /// `[B, T, H] -> [B, T, H]`, the hidden-state sequence.
    pub fn apply<F: Real>(&self, g: &mut Graph<F>, lv: &Leaves, x: NodeId) -> NodeId {
        let shape = g.shape(x).to_vec();
        assert_eq!(shape.len(), 3, "tkan input must be [B, T, H]");
        let (batch, steps, hidden) = (shape[0], shape[1], shape[2]);
        assert_eq!(hidden, self.hidden);

        let zeros = g.constant(Tensor::zeros([batch, hidden]));
        let mut h_prev = zeros;
        let mut c_prev = zeros;
        let mut sub_states = vec![zeros; self.sublayers];
        let mut outputs = Vec::with_capacity(steps);

        for t in 0..steps {
            let x_t = g.select_mid(x, t);

            let mut sub_outputs = Vec::with_capacity(self.sublayers);
            for (l, sub) in self.subs.iter().enumerate() {
                let from_x = g.matmul(x_t, lv.node(sub.w_x));
                let from_state = g.matmul(sub_states[l], lv.node(sub.w_h));
                let s_l = g.add(from_x, from_state);
                let o_l = sub.kan.apply(g, lv, s_l);
                let kept = g.mul_cols(sub_states[l], lv.node(sub.hh));
                let fed = g.mul_cols(o_l, lv.node(sub.hz));
                sub_states[l] = g.add(kept, fed);
                sub_outputs.push(o_l);
            }
            let r_t = g.concat_last(&sub_outputs);
            let o_lin = g.matmul(r_t, lv.node(self.w_o));
            let o_aff = g.add_cols(o_lin, lv.node(self.b_o));
            let o_gate = g.sigmoid(o_aff);

            let f_gate = self.gate(g, lv, x_t, h_prev, self.w_f, self.u_f, self.b_f);
            let i_gate = self.gate(g, lv, x_t, h_prev, self.w_i, self.u_i, self.b_i);
            // Candidate state is tanh-activated so zero input with zero state
            // is a fixed point of the cell.
            let cand_aff = self.affine(g, lv, x_t, h_prev, self.w_c, self.u_c, self.b_c);
            let candidate = g.tanh(cand_aff);

            let forgotten = g.mul(f_gate, c_prev);
            let admitted = g.mul(i_gate, candidate);
            let c_t = g.add(forgotten, admitted);
            let c_act = g.tanh(c_t);
            let h_t = g.mul(o_gate, c_act);

            outputs.push(h_t);
            h_prev = h_t;
            c_prev = c_t;
        }
        g.stack_mid(&outputs)
    }
}
