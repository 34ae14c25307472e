//! Learnable univariate-function layer: every (input, output) pair carries a
//! scaled SiLU base term plus a B-spline with learnable coefficients on a
//! fixed grid over `[-3, 3]`, continued linearly outside. Inputs reaching the
//! layer are normalized by construction, so the fixed range covers the bulk
//! of the mass while extrapolation keeps the map defined everywhere.

use crate::graph::{Graph, NodeId, SplineGrid};
use crate::params::{Init, Leaves, ParamId, ParamSet};
use crate::real::Real;

pub const KAN_RANGE_LO: f64 = -3.0;
pub const KAN_RANGE_HI: f64 = 3.0;

pub struct KanLayer {
    pub d_in: usize,
    pub d_out: usize,
    pub grid: SplineGrid,
    pub base_weight: ParamId,
    pub coefs: ParamId,
}

impl KanLayer {
    pub fn new<F: Real>(
        params: &mut ParamSet<F>,
        prefix: &str,
        d_in: usize,
        d_out: usize,
        grid_size: usize,
        order: usize,
        init: &mut Init<'_>,
    ) -> Self {
        let grid = SplineGrid::new(KAN_RANGE_LO, KAN_RANGE_HI, grid_size, order);
        let base_weight = params.register(format!("{prefix}.base_w"), init.glorot(d_in, d_out));
        let coef_scale = 0.1 / (d_in as f64).sqrt();
        let coefs = params.register(
            format!("{prefix}.spline_c"),
            init.uniform([d_in, d_out, grid.basis_count()], coef_scale),
        );
        KanLayer {
            d_in,
            d_out,
            grid,
            base_weight,
            coefs,
        }
    }

    /// `[rows, d_in] -> [rows, d_out]`.
    pub fn apply<F: Real>(&self, g: &mut Graph<F>, lv: &Leaves, x: NodeId) -> NodeId {
        g.spline_layer(x, lv.node(self.base_weight), lv.node(self.coefs), self.grid)
    }
}

#[cfg(test)]
pub mod oracle {
    //! Independent B-spline oracle: the full Cox-de Boor recursion over every
    //! basis index, with none of the local-support shortcuts used by the
    //! production kernel.

    /// Value of basis `k` of degree `p` at `x` on the uniform extended knot
    /// vector for `size` intervals over `[lo, hi]`.
    pub fn cox_de_boor(lo: f64, hi: f64, size: usize, p: usize, k: usize, x: f64) -> f64 {
        let h = (hi - lo) / size as f64;
        let knot = |j: isize| lo + (j as f64 - p as f64) * h;
        fn rec(knot: &dyn Fn(isize) -> f64, k: isize, degree: usize, x: f64, top_degree: usize, size: usize) -> f64 {
            if degree == 0 {
                // Half-open cells; the top knot takes its left limit, i.e. it
                // belongs to the last interior cell and to nothing further
                // right.
                let top = knot((size + top_degree) as isize);
                if x == top {
                    return if k == (size + top_degree - 1) as isize { 1.0 } else { 0.0 };
                }
                if x >= knot(k) && x < knot(k + 1) {
                    1.0
                } else {
                    0.0
                }
            } else {
                let a = (x - knot(k)) / (knot(k + degree as isize) - knot(k))
                    * rec(knot, k, degree - 1, x, top_degree, size);
                let b = (knot(k + degree as isize + 1) - x)
                    / (knot(k + degree as isize + 1) - knot(k + 1))
                    * rec(knot, k + 1, degree - 1, x, top_degree, size);
                a + b
            }
        }
        rec(&knot, k as isize, p, x, p, size)
    }
}

#[cfg(test)]
#[allow(clippy::needless_range_loop)]
mod tests {
    use super::*;
    use crate::graph::SplineGrid;

    #[test]
    fn production_basis_matches_cox_de_boor_oracle() {
        for (size, order) in [(5usize, 3usize), (4, 2), (6, 1)] {
            let grid = SplineGrid::new(KAN_RANGE_LO, KAN_RANGE_HI, size, order);
            for i in 0..=50 {
                let x = KAN_RANGE_LO + (KAN_RANGE_HI - KAN_RANGE_LO) * i as f64 / 50.0;
                let (first, vals, _) = grid.basis_at(x);
                let mut full = vec![0.0; grid.basis_count()];
                for (k, &v) in vals.iter().enumerate() {
                    full[first + k] = v;
                }
                for k in 0..grid.basis_count() {
                    let oracle = oracle::cox_de_boor(KAN_RANGE_LO, KAN_RANGE_HI, size, order, k, x);
                    assert!(
                        (full[k] - oracle).abs() < 1e-12,
                        "basis {k} at x={x} (size {size}, order {order}): {} vs {}",
                        full[k],
                        oracle
                    );
                }
            }
        }
    }
}
