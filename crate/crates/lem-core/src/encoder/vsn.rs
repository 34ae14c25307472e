//! Variable selection network: softmax weights over per-channel embeddings,
//! each channel refined by its own GRN before the weighted combination.

use crate::encoder::grn::{Dropout, Grn};
use crate::graph::{Graph, NodeId};
use crate::params::{Init, Leaves, ParamSet};
use crate::real::Real;

pub struct Vsn {
    pub feature_dim: usize,
    pub hidden: usize,
    weight_grn: Grn,
    var_grns: Vec<Grn>,
}

impl Vsn {
    pub fn new<F: Real>(
        params: &mut ParamSet<F>,
        prefix: &str,
        feature_dim: usize,
        hidden: usize,
        init: &mut Init<'_>,
    ) -> Self {
        let weight_grn = Grn::new(
            params,
            &format!("{prefix}.weights"),
            feature_dim * hidden,
            hidden,
            feature_dim,
            init,
        );
        let var_grns = (0..feature_dim)
            .map(|j| Grn::new(params, &format!("{prefix}.var{j}"), hidden, hidden, hidden, init))
            .collect();
        Vsn {
            feature_dim,
            hidden,
            weight_grn,
            var_grns,
        }
    }

    /// `embedded` holds one `[rows, H]` node per channel. Returns the combined
    /// `[rows, H]` representation and the `[rows, D]` selection weights.
    pub fn apply<F: Real>(
        &self,
        g: &mut Graph<F>,
        lv: &Leaves,
        embedded: &[NodeId],
        dropout: &mut Dropout<'_>,
    ) -> (NodeId, NodeId) {
        assert_eq!(embedded.len(), self.feature_dim);
        let flat = g.concat_last(embedded);
        let raw = self.weight_grn.apply(g, lv, flat, dropout);
        let weights = g.softmax_last(raw);

        let mut combined: Option<NodeId> = None;
        for (j, (&emb, grn)) in embedded.iter().zip(self.var_grns.iter()).enumerate() {
            let refined = grn.apply(g, lv, emb, dropout);
            let w_j = g.slice_last(weights, j, 1);
            let weighted = g.mul_last1(refined, w_j);
            combined = Some(match combined {
                Some(acc) => g.add(acc, weighted),
                None => weighted,
            });
        }
        (combined.expect("at least one channel"), weights)
    }

    #[cfg(test)]
    pub(crate) fn var_grns_for_tests(&self) -> &[Grn] {
        &self.var_grns
    }
}
