//! Property tests over the pure numeric kernels.

use lem_core::decision::{soft_clip, AllocKind};
use lem_core::eval::stats::{percentile_sorted, summary};
use lem_core::market::features::{seasonal_features, SeasonalMode};
use lem_core::objective::{hard_execution, hard_scores, slippage_bps, BenchmarkKind};
use proptest::prelude::*;

proptest! {
    /// The soft clip never leaves the interval spanned by its input and
    /// bound, and it fixes the bound itself.
    #[test]
    fn soft_clip_respects_its_envelope(
        x in -5.0f64..5.0,
        u in 0.01f64..2.0,
        lambda in 1.0f64..500.0,
    ) {
        let s = soft_clip(x, u, lambda);
        prop_assert!(s >= x.min(u) - 1e-12);
        prop_assert!(s <= x.max(u) + 1e-12);
        prop_assert_eq!(soft_clip(u, u, lambda), u);
    }

    /// Seasonal encodings always land on the unit circle, in both modes.
    #[test]
    fn seasonal_features_lie_on_the_unit_circle(
        ts in -2_000_000_000i64..4_000_000_000i64,
        intraday in any::<bool>(),
    ) {
        let mode = if intraday { SeasonalMode::Intraday } else { SeasonalMode::Calendar };
        let f = seasonal_features(ts, mode);
        prop_assert!((f[0] * f[0] + f[1] * f[1] - 1.0).abs() < 1e-12);
        prop_assert!((f[2] * f[2] + f[3] * f[3] - 1.0).abs() < 1e-12);
    }

    /// Hard execution stops no earlier than the minimum period, never drops
    /// executed budget, and keeps the truncated schedule a prefix.
    #[test]
    fn hard_execution_respects_the_minimum_period(
        raw in prop::collection::vec(0.0f64..1.0, 2..12),
        min_period in 1usize..12,
    ) {
        let total: f64 = raw.iter().sum();
        prop_assume!(total > 0.0);
        let schedule: Vec<f64> = raw.iter().map(|v| v / total).collect();
        let n = schedule.len();
        let exec = hard_execution(&schedule, min_period, 1e-6);
        let bound = min_period.min(n);
        prop_assert!(exec.stop_step >= bound);
        prop_assert!(exec.stop_step <= n);
        prop_assert_eq!(&exec.schedule[..], &schedule[..exec.stop_step]);
        let executed: f64 = exec.schedule.iter().sum();
        if exec.stop_step < n {
            prop_assert!(executed >= 1.0 - 1e-6);
        }
    }

    /// A schedule proportional to market volume matches the VWAP benchmark
    /// over the full horizon, for any positive prices and volumes.
    #[test]
    fn volume_proportional_schedule_matches_vwap(
        prices in prop::collection::vec(0.5f64..500.0, 2..10),
        volumes_raw in prop::collection::vec(0.1f64..10.0, 2..10),
    ) {
        let n = prices.len().min(volumes_raw.len());
        let prices = &prices[..n];
        let volumes = &volumes_raw[..n];
        let total: f64 = volumes.iter().sum();
        let schedule: Vec<f64> = volumes.iter().map(|v| v / total).collect();
        let exec = hard_execution(&schedule, n, 1e-6);
        let (achieved, benchmark) = hard_scores(
            &exec,
            prices,
            volumes,
            AllocKind::Volume,
            BenchmarkKind::Vwap,
            1e-8,
        );
        prop_assert!(slippage_bps(achieved, benchmark).abs() < 1e-6);
    }

    /// Summary order statistics are ordered and bounded by the sample range,
    /// and percentile interpolation is monotone in the quantile.
    #[test]
    fn summary_statistics_are_ordered(
        values in prop::collection::vec(-1000.0f64..1000.0, 1..200),
        q1 in 0.0f64..1.0,
        q2 in 0.0f64..1.0,
    ) {
        let s = summary(&values);
        let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(s.p5 <= s.q25 && s.q25 <= s.median);
        prop_assert!(s.median <= s.q75 && s.q75 <= s.p95);
        prop_assert!(s.p5 >= lo - 1e-9 && s.p95 <= hi + 1e-9);
        prop_assert!(s.mean >= lo - 1e-9 && s.mean <= hi + 1e-9);

        let mut sorted = values.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let (qa, qb) = if q1 <= q2 { (q1, q2) } else { (q2, q1) };
        prop_assert!(percentile_sorted(&sorted, qa) <= percentile_sorted(&sorted, qb) + 1e-12);
    }
}
