//! Report serialization: plot-ready CSV layouts with deterministic ordering
//! and formatting, plus the evaluation archive consumed by the report stage.
//!
//! Numbers are written with six fixed decimals (negative zero normalized), so
//! regenerating a report from the same evaluation yields byte-identical
//! files.

use std::path::{Path, PathBuf};

use crate::decision::AllocKind;
use crate::error::{LemError, Result};
use crate::eval::{
    baseline_key, Evaluation, MinPeriodKey, OrderType, ScenarioKey, SlippageReport, StrategyLabel,
};
use crate::eval::stats::StatsSummary;

pub const HISTOGRAM_LO_BPS: f64 = -500.0;
pub const HISTOGRAM_HI_BPS: f64 = 500.0;
pub const HISTOGRAM_BIN_BPS: f64 = 1.0;

fn fmt(v: f64) -> String {
    let s = format!("{v:.6}");
    if s == "-0.000000" {
        "0.000000".to_string()
    } else {
        s
    }
}

fn stats_fields(s: &StatsSummary) -> String {
    format!(
        "{},{},{},{},{},{},{},{}",
        fmt(s.mean),
        fmt(s.std),
        fmt(s.median),
        fmt(s.p5),
        fmt(s.p95),
        fmt(s.q25),
        fmt(s.q75),
        s.count
    )
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents)
        .map_err(|e| LemError::io(format!("writing report {}", path.display()), e))
}

/// The minimum-period overview: both baselines plus the VWAP-volume scenario
/// by minimum period for each side.
fn min_period_csv(report: &SlippageReport) -> String {
    let mut out = String::from(
        "order_type,min_period,mean_bps,std_bps,median_bps,p5_bps,p95_bps,q25_bps,q75_bps,count\n",
    );
    let mut push_row = |key: &ScenarioKey| {
        if let Some(row) = report.rows.iter().find(|r| &r.key == key) {
            out.push_str(&format!(
                "{},{},{}\n",
                row.key.order_type.label(),
                row.key.min_period.label(),
                stats_fields(&row.stats)
            ));
        }
    };
    push_row(&baseline_key(AllocKind::Notional));
    push_row(&baseline_key(AllocKind::Volume));
    for order_type in [OrderType::Buy, OrderType::Sell] {
        for period in 1..=report.horizon {
            push_row(&ScenarioKey {
                order_type,
                strategy: StrategyLabel::VwapVolume,
                min_period: MinPeriodKey::Step(period),
            });
        }
        push_row(&ScenarioKey {
            order_type,
            strategy: StrategyLabel::VwapVolume,
            min_period: MinPeriodKey::Match,
        });
    }
    out
}

const DETAIL_STRATEGIES: [StrategyLabel; 4] = [
    StrategyLabel::TwapVolume,
    StrategyLabel::TwapNotional,
    StrategyLabel::VwapVolume,
    StrategyLabel::VwapNotional,
];

/// Per-minimum-period detail: each side against all four strategy/benchmark
/// combinations.
fn detailed_csv(report: &SlippageReport, min_period: MinPeriodKey) -> String {
    let mut out = String::from(
        "order_type,strategy,mean_bps,std_bps,median_bps,p5_bps,p95_bps,q25_bps,q75_bps,count\n",
    );
    for order_type in [OrderType::Buy, OrderType::Sell] {
        for strategy in DETAIL_STRATEGIES {
            let key = ScenarioKey {
                order_type,
                strategy,
                min_period,
            };
            if let Some(row) = report.rows.iter().find(|r| r.key == key) {
                out.push_str(&format!(
                    "{},{},{}\n",
                    order_type.label(),
                    strategy.label(),
                    stats_fields(&row.stats)
                ));
            }
        }
    }
    out
}

fn curves_csv(eval: &Evaluation) -> String {
    let mut out = String::from("order_type,strategy,min_period,step,mean");
    for d in 1..=9 {
        out.push_str(&format!(",p{}", d * 10));
    }
    out.push('\n');
    for curve in &eval.curves {
        for step in 0..eval.horizon {
            out.push_str(&format!(
                "{},{},{},{},{}",
                curve.key.order_type.label(),
                curve.key.strategy.label(),
                curve.key.min_period.label(),
                step + 1,
                fmt(curve.mean[step])
            ));
            for decile in &curve.deciles {
                out.push(',');
                out.push_str(&fmt(decile[step]));
            }
            out.push('\n');
        }
    }
    out
}

/// Binned slippage distribution for one scenario. Values outside the range
/// clip into the edge bins and are counted separately.
#[derive(Debug, Clone)]
pub struct Histogram {
    pub counts: Vec<usize>,
    pub masses: Vec<f64>,
    pub clipped_low: usize,
    pub clipped_high: usize,
}

pub fn histogram(values: &[f64]) -> Histogram {
    let bins = ((HISTOGRAM_HI_BPS - HISTOGRAM_LO_BPS) / HISTOGRAM_BIN_BPS) as usize;
    let mut counts = vec![0usize; bins];
    let mut clipped_low = 0usize;
    let mut clipped_high = 0usize;
    for &v in values {
        let idx = ((v - HISTOGRAM_LO_BPS) / HISTOGRAM_BIN_BPS).floor();
        let idx = if idx < 0.0 {
            clipped_low += 1;
            0
        } else if idx >= bins as f64 {
            clipped_high += 1;
            bins - 1
        } else {
            idx as usize
        };
        counts[idx] += 1;
    }
    let total = values.len() as f64;
    let masses = counts.iter().map(|&c| c as f64 / total).collect();
    Histogram {
        counts,
        masses,
        clipped_low,
        clipped_high,
    }
}

/// Per-scenario histogram rows at 1-bp resolution over `[-500, 500]` bps;
/// only occupied bins are emitted, with the scenario's clipped counts riding
/// along on every row.
fn histogram_csv(eval: &Evaluation) -> String {
    let mut out = String::from(
        "order_type,strategy,min_period,bin_left_bps,mass,count,clipped_low,clipped_high\n",
    );
    for series in &eval.series {
        if series.slippage_bps.is_empty() {
            continue;
        }
        let hist = histogram(&series.slippage_bps);
        for (i, &count) in hist.counts.iter().enumerate() {
            if count == 0 {
                continue;
            }
            let left = HISTOGRAM_LO_BPS + i as f64 * HISTOGRAM_BIN_BPS;
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                series.key.order_type.label(),
                series.key.strategy.label(),
                series.key.min_period.label(),
                fmt(left),
                fmt(hist.masses[i]),
                count,
                hist.clipped_low,
                hist.clipped_high
            ));
        }
    }
    out
}

/// Write the full report family; returns the created paths.
pub fn emit_reports(eval: &Evaluation, out_dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir)
        .map_err(|e| LemError::io(format!("creating {}", out_dir.display()), e))?;
    let report = eval.report();
    let mut written = Vec::new();

    let by_period = out_dir.join("slippage_by_min_period.csv");
    write_file(&by_period, &min_period_csv(&report))?;
    written.push(by_period);

    for period in 1..=eval.horizon {
        let path = out_dir.join(format!("slippage_detailed_min_{period}.csv"));
        write_file(&path, &detailed_csv(&report, MinPeriodKey::Step(period)))?;
        written.push(path);
    }
    let match_path = out_dir.join("slippage_detailed_min_match.csv");
    write_file(&match_path, &detailed_csv(&report, MinPeriodKey::Match))?;
    written.push(match_path);

    let curves = out_dir.join("execution_curves.csv");
    write_file(&curves, &curves_csv(eval))?;
    written.push(curves);

    let hist = out_dir.join("slippage_histograms.csv");
    write_file(&hist, &histogram_csv(eval))?;
    written.push(hist);

    Ok(written)
}

pub fn save_evaluation(eval: &Evaluation, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)
        .map_err(|e| LemError::io(format!("creating {}", path.display()), e))?;
    serde_json::to_writer(std::io::BufWriter::new(file), eval)
        .map_err(|e| LemError::json(format!("writing {}", path.display()), e))
}

pub fn load_evaluation(path: &Path) -> Result<Evaluation> {
    let file = std::fs::File::open(path)
        .map_err(|e| LemError::io(format!("opening {}", path.display()), e))?;
    serde_json::from_reader(std::io::BufReader::new(file))
        .map_err(|e| LemError::json(format!("parsing {}", path.display()), e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::{CurveRow, ScenarioSeries};

    fn tiny_eval() -> Evaluation {
        let key = ScenarioKey {
            order_type: OrderType::Buy,
            strategy: StrategyLabel::VwapVolume,
            min_period: MinPeriodKey::Step(1),
        };
        Evaluation {
            horizon: 2,
            window_count: 3,
            series: vec![ScenarioSeries {
                key,
                slippage_bps: vec![-700.0, 2.25, 9000.0],
            }],
            curves: vec![CurveRow {
                key,
                mean: vec![0.5, 1.0],
                deciles: vec![vec![0.4, 1.0]; 9],
            }],
        }
    }

    #[test]
    fn empty_evaluation_emits_header_only_files() {
        let eval = Evaluation {
            horizon: 2,
            window_count: 0,
            series: vec![],
            curves: vec![],
        };
        let dir = tempfile::tempdir().unwrap();
        let files = emit_reports(&eval, dir.path()).unwrap();
        assert_eq!(files.len(), 2 + 2 + 1 + 1);
        for path in files {
            let text = std::fs::read_to_string(path).unwrap();
            assert_eq!(text.lines().count(), 1, "header only");
        }
    }

    #[test]
    fn reports_are_deterministic_across_runs() {
        let eval = tiny_eval();
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let files_a = emit_reports(&eval, dir_a.path()).unwrap();
        let files_b = emit_reports(&eval, dir_b.path()).unwrap();
        for (a, b) in files_a.iter().zip(files_b.iter()) {
            assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
        }
    }

    #[test]
    fn histogram_mass_sums_to_one_and_clips_edges() {
        let eval = tiny_eval();
        let hist = histogram(&eval.series[0].slippage_bps);
        let mass: f64 = hist.masses.iter().sum();
        assert!((mass - 1.0).abs() < 1e-9);
        assert_eq!(hist.clipped_low, 1, "-700 clips into the left edge bin");
        assert_eq!(hist.clipped_high, 1, "9000 clips into the right edge bin");
        assert_eq!(hist.counts[0], 1);
        assert_eq!(hist.counts[999], 1);

        // CSV reflects the same data at its 6-decimal resolution.
        let dir = tempfile::tempdir().unwrap();
        emit_reports(&eval, dir.path()).unwrap();
        let text = std::fs::read_to_string(dir.path().join("slippage_histograms.csv")).unwrap();
        let mut csv_mass = 0.0;
        let mut rows = 0;
        for line in text.lines().skip(1) {
            let fields: Vec<&str> = line.split(',').collect();
            csv_mass += fields[4].parse::<f64>().unwrap();
            rows += 1;
            assert_eq!(fields[6].parse::<usize>().unwrap(), 1);
            assert_eq!(fields[7].parse::<usize>().unwrap(), 1);
        }
        assert_eq!(rows, 3);
        assert!((csv_mass - 1.0).abs() < rows as f64 * 1e-6);
    }

    #[test]
    fn evaluation_json_roundtrip() {
        let eval = tiny_eval();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("evaluation.json");
        save_evaluation(&eval, &path).unwrap();
        let loaded = load_evaluation(&path).unwrap();
        assert_eq!(loaded.window_count, eval.window_count);
        assert_eq!(loaded.series[0].slippage_bps, eval.series[0].slippage_bps);
    }

    #[test]
    fn negative_zero_is_normalized() {
        assert_eq!(fmt(-0.0), "0.000000");
        assert_eq!(fmt(1.25), "1.250000");
        assert_eq!(fmt(-3.5e-7), "0.000000", "tiny negatives round to plain zero");
        assert_eq!(fmt(-4.2e-6), "-0.000004");
    }
}
