//! Per-channel feature embedding: each scalar input channel gets its own
//! affine map into the hidden space, keeping channels independent so the
//! variable selection stage can weigh them separately.

use crate::graph::{Graph, NodeId};
use crate::params::{Init, Leaves, ParamId, ParamSet};
use crate::real::Real;

pub struct Embedding {
    pub feature_dim: usize,
    pub hidden: usize,
    channels: Vec<(ParamId, ParamId)>,
}

impl Embedding {
    pub fn new<F: Real>(
        params: &mut ParamSet<F>,
        prefix: &str,
        feature_dim: usize,
        hidden: usize,
        init: &mut Init<'_>,
    ) -> Self {
        let channels = (0..feature_dim)
            .map(|ch| {
                (
                    params.register(format!("{prefix}.ch{ch}.w"), init.glorot(1, hidden)),
                    params.register(format!("{prefix}.ch{ch}.b"), init.zeros([hidden])),
                )
            })
            .collect();
        Embedding {
            feature_dim,
            hidden,
            channels,
        }
    }

    /// Input `[rows, D]`, output one `[rows, H]` node per channel.
    pub fn apply<F: Real>(&self, g: &mut Graph<F>, lv: &Leaves, x: NodeId) -> Vec<NodeId> {
        assert_eq!(
            g.shape(x).last().copied(),
            Some(self.feature_dim),
            "embedding input channel count"
        );
        self.channels
            .iter()
            .enumerate()
            .map(|(ch, &(w, b))| {
                let col = g.slice_last(x, ch, 1);
                let lifted = g.matmul(col, lv.node(w));
                g.add_cols(lifted, lv.node(b))
            })
            .collect()
    }
}
