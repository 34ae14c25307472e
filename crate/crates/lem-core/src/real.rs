//! Scalar abstraction so the whole stack runs in either f32 or f64.
//!
//! Training defaults to single precision for speed; gradient verification and
//! report generation run in double precision.

use std::fmt::{Debug, Display};
use std::iter::Sum;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    Single,
    Double,
}

impl Display for Precision {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Precision::Single => write!(f, "single"),
            Precision::Double => write!(f, "double"),
        }
    }
}

/// Floating-point scalar used by tensors and the autodiff graph.
pub trait Real:
    num_traits::Float + num_traits::NumAssign + Sum + Default + Debug + Display + Send + Sync + 'static
{
    const PRECISION: Precision;

    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;

    /// Numerically stable logistic sigmoid.
    fn sigmoid(self) -> Self {
        if self >= Self::zero() {
            Self::one() / (Self::one() + (-self).exp())
        } else {
            let e = self.exp();
            e / (Self::one() + e)
        }
    }

    /// Numerically stable `ln(1 + exp(x))`.
    fn softplus(self) -> Self {
        let zero = Self::zero();
        let m = if self > zero { self } else { zero };
        m + ((self - m).exp() + (-m).exp()).ln()
    }

    /// Exponential linear unit with unit alpha.
    fn elu(self) -> Self {
        if self > Self::zero() {
            self
        } else {
            self.exp() - Self::one()
        }
    }

    /// `x * sigmoid(x)`.
    fn silu(self) -> Self {
        self * self.sigmoid()
    }
}

impl Real for f32 {
    const PRECISION: Precision = Precision::Single;

    fn from_f64(v: f64) -> Self {
        v as f32
    }

    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    const PRECISION: Precision = Precision::Double;

    fn from_f64(v: f64) -> Self {
        v
    }

    fn as_f64(self) -> f64 {
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_matches_naive_form() {
        for &x in &[-30.0f64, -2.5, 0.0, 1.0, 30.0] {
            let naive = 1.0 / (1.0 + (-x).exp());
            assert!((x.sigmoid() - naive).abs() < 1e-15);
        }
    }

    #[test]
    fn softplus_is_stable_for_large_inputs() {
        assert!((500.0f64.softplus() - 500.0).abs() < 1e-12);
        assert!((-500.0f64).softplus() >= 0.0);
        assert!((0.0f64.softplus() - 2.0f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn elu_and_silu_basics() {
        assert_eq!(2.0f64.elu(), 2.0);
        assert!(((-1.0f64).elu() - ((-1.0f64).exp() - 1.0)).abs() < 1e-15);
        assert_eq!(0.0f64.silu(), 0.0);
    }
}
