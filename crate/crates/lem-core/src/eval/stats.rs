//! Descriptive statistics used by the slippage reports.
//!
//! Percentiles interpolate linearly between closest ranks (index
//! `h = (n - 1) q`, blend of `floor(h)` and `ceil(h)`), and the standard
//! deviation is the sample estimate (n - 1 denominator). Both conventions are
//! pinned here so golden report files stay stable.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StatsSummary {
    pub count: usize,
    pub mean: f64,
    pub std: f64,
    pub median: f64,
    pub p5: f64,
    pub p95: f64,
    pub q25: f64,
    pub q75: f64,
}

/// Linear-interpolation percentile of a sorted slice, `q` in [0, 1].
pub fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    assert!((0.0..=1.0).contains(&q));
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
    }
}

pub fn summary(values: &[f64]) -> StatsSummary {
    assert!(!values.is_empty(), "summary of an empty sample");
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("non-finite sample"));
    StatsSummary {
        count: n,
        mean,
        std,
        median: percentile_sorted(&sorted, 0.5),
        p5: percentile_sorted(&sorted, 0.05),
        p95: percentile_sorted(&sorted, 0.95),
        q25: percentile_sorted(&sorted, 0.25),
        q75: percentile_sorted(&sorted, 0.75),
    }
}

/// Paired t statistic for the mean of `diffs` against zero. Degrees of
/// freedom are `n - 1`; with the desk-scale sample sizes (hundreds and up)
/// the normal critical values apply.
pub fn paired_t(diffs: &[f64]) -> Option<f64> {
    let n = diffs.len();
    if n < 2 {
        return None;
    }
    let mean = diffs.iter().sum::<f64>() / n as f64;
    let var = diffs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    if var <= 0.0 {
        return if mean == 0.0 { None } else { Some(f64::INFINITY * mean.signum()) };
    }
    Some(mean / (var / n as f64).sqrt())
}

/// Two-sided 5% critical value of the normal approximation.
pub const T_CRITICAL_5PCT: f64 = 1.96;

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    /// Sorted-array oracle: exhaustive definitions, no shared code paths.
    fn oracle(values: &[f64]) -> StatsSummary {
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let mut sq = 0.0;
        for v in values {
            sq += (v - mean) * (v - mean);
        }
        let std = if n > 1 { (sq / (n as f64 - 1.0)).sqrt() } else { 0.0 };
        let mut sorted = values.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let pct = |q: f64| {
            let h = (n as f64 - 1.0) * q;
            let lo = h.floor() as usize;
            let frac = h - lo as f64;
            if lo + 1 < n {
                sorted[lo] * (1.0 - frac) + sorted[lo + 1] * frac
            } else {
                sorted[lo]
            }
        };
        StatsSummary {
            count: n,
            mean,
            std,
            median: pct(0.5),
            p5: pct(0.05),
            p95: pct(0.95),
            q25: pct(0.25),
            q75: pct(0.75),
        }
    }

    #[test]
    fn matches_sorted_array_oracle_on_thousand_values() {
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(5);
        let values: Vec<f64> = (0..1000).map(|_| rng.gen_range(-250.0..250.0)).collect();
        let got = summary(&values);
        let expect = oracle(&values);
        for (a, b) in [
            (got.mean, expect.mean),
            (got.std, expect.std),
            (got.median, expect.median),
            (got.p5, expect.p5),
            (got.p95, expect.p95),
            (got.q25, expect.q25),
            (got.q75, expect.q75),
        ] {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
        // Order statistics are ordered.
        assert!(got.p5 <= got.q25 && got.q25 <= got.median);
        assert!(got.median <= got.q75 && got.q75 <= got.p95);
    }

    #[test]
    fn percentile_edge_cases() {
        let sorted = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(percentile_sorted(&sorted, 0.0), 1.0);
        assert_eq!(percentile_sorted(&sorted, 1.0), 4.0);
        assert_eq!(percentile_sorted(&sorted, 0.5), 2.5);
        assert_eq!(percentile_sorted(&[7.0], 0.5), 7.0);
    }

    #[test]
    fn paired_t_detects_a_shift() {
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(6);
        let shifted: Vec<f64> = (0..500).map(|_| rng.gen_range(-1.0..1.0) + 0.5).collect();
        let t = paired_t(&shifted).unwrap();
        assert!(t > T_CRITICAL_5PCT, "t = {t}");
        let centered: Vec<f64> = (0..500).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let t = paired_t(&centered).unwrap();
        assert!(t.abs() < T_CRITICAL_5PCT, "t = {t}");
    }
}
