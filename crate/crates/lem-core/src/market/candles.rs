//! Candle ingestion and validation.
//!
//! The CSV schema is fixed: `timestamp,open,high,low,close,volume,quote_volume`
//! with `quote_volume` optional. Timestamps are integer epoch seconds and must
//! advance in constant steps of the declared bar frequency. When the quote
//! volume column is absent it is proxied by `volume * close` per row.

use std::path::Path;

use crate::error::{GapSpan, LemError, Result};
use crate::market::calendar::parse_timestamp;

#[derive(Debug, Clone)]
pub struct CandleSeries {
    pub asset_id: String,
    pub frequency_minutes: u32,
    pub timestamps: Vec<i64>,
    pub open: Vec<f64>,
    pub high: Vec<f64>,
    pub low: Vec<f64>,
    pub close: Vec<f64>,
    pub volume: Vec<f64>,
    pub quote_volume: Vec<f64>,
}

impl CandleSeries {
    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    fn bar_seconds(&self) -> i64 {
        self.frequency_minutes as i64 * 60
    }

    /// Invariant check used by loaders and the synthesizer:
    /// strictly increasing, equally spaced timestamps; positive prices;
    /// non-negative volumes.
    pub fn validate(&self, origin: &str) -> Result<()> {
        let n = self.len();
        for field in [&self.open, &self.high, &self.low, &self.close, &self.volume, &self.quote_volume] {
            if field.len() != n {
                return Err(LemError::validation(format!(
                    "{origin}: candle columns have inconsistent lengths"
                )));
            }
        }
        let step = self.bar_seconds();
        let mut gaps = Vec::new();
        for i in 0..n {
            if self.open[i] <= 0.0 || self.high[i] <= 0.0 || self.low[i] <= 0.0 || self.close[i] <= 0.0 {
                return Err(LemError::validation(format!(
                    "{origin}: non-positive price at timestamp {}",
                    self.timestamps[i]
                )));
            }
            if self.volume[i] < 0.0 || self.quote_volume[i] < 0.0 {
                return Err(LemError::validation(format!(
                    "{origin}: negative volume at timestamp {}",
                    self.timestamps[i]
                )));
            }
            if i > 0 {
                let delta = self.timestamps[i] - self.timestamps[i - 1];
                if delta <= 0 {
                    return Err(LemError::validation(format!(
                        "{origin}: non-increasing timestamp {} after {}",
                        self.timestamps[i],
                        self.timestamps[i - 1]
                    )));
                }
                if delta != step {
                    gaps.push(GapSpan {
                        start: self.timestamps[i - 1] + step,
                        end: self.timestamps[i],
                        missing_bars: ((delta / step) - 1).max(0) as usize,
                    });
                }
            }
        }
        if !gaps.is_empty() {
            return Err(LemError::TimestampGap {
                path: origin.to_string(),
                frequency_minutes: self.frequency_minutes,
                spans: gaps,
            });
        }
        Ok(())
    }
}

/// Load and validate a candle CSV.
///
/// Rows with non-increasing timestamps are rejected with the offending line
/// number; gaps at the declared frequency are reported with their missing
/// spans.
pub fn load_candles(path: &Path, asset_id: &str, frequency_minutes: u32) -> Result<CandleSeries> {
    let display = path.display().to_string();
    let file = std::fs::File::open(path).map_err(|e| LemError::io(format!("opening {display}"), e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(std::io::BufReader::new(file));

    let headers = reader
        .headers()
        .map_err(|e| LemError::Parse {
            path: display.clone(),
            line: 1,
            msg: format!("unreadable header: {e}"),
        })?
        .clone();
    let cols: Vec<&str> = headers.iter().collect();
    let has_quote = match cols.as_slice() {
        ["timestamp", "open", "high", "low", "close", "volume", "quote_volume"] => true,
        ["timestamp", "open", "high", "low", "close", "volume"] => false,
        other => {
            return Err(LemError::Parse {
                path: display,
                line: 1,
                msg: format!(
                    "unexpected header {:?}; expected timestamp,open,high,low,close,volume[,quote_volume]",
                    other.join(",")
                ),
            })
        }
    };

    let mut series = CandleSeries {
        asset_id: asset_id.to_string(),
        frequency_minutes,
        timestamps: Vec::new(),
        open: Vec::new(),
        high: Vec::new(),
        low: Vec::new(),
        close: Vec::new(),
        volume: Vec::new(),
        quote_volume: Vec::new(),
    };

    let parse_field = |line: usize, name: &str, raw: &str| -> Result<f64> {
        raw.parse::<f64>().map_err(|_| LemError::Parse {
            path: display.clone(),
            line,
            msg: format!("invalid {name} value `{raw}`"),
        })
    };

    for (i, record) in reader.records().enumerate() {
        let line = i + 2; // 1-based, after the header
        let record = record.map_err(|e| LemError::Parse {
            path: display.clone(),
            line,
            msg: format!("malformed row: {e}"),
        })?;
        let expected_fields = if has_quote { 7 } else { 6 };
        if record.len() != expected_fields {
            return Err(LemError::Parse {
                path: display.clone(),
                line,
                msg: format!("expected {expected_fields} fields, found {}", record.len()),
            });
        }
        let ts = record[0].parse::<i64>().map_err(|_| LemError::Parse {
            path: display.clone(),
            line,
            msg: format!("invalid timestamp `{}`", &record[0]),
        })?;
        if let Some(&prev) = series.timestamps.last() {
            if ts <= prev {
                return Err(LemError::Parse {
                    path: display.clone(),
                    line,
                    msg: format!("non-increasing timestamp {ts} (previous {prev})"),
                });
            }
        }
        let open = parse_field(line, "open", &record[1])?;
        let high = parse_field(line, "high", &record[2])?;
        let low = parse_field(line, "low", &record[3])?;
        let close = parse_field(line, "close", &record[4])?;
        let volume = parse_field(line, "volume", &record[5])?;
        let quote_volume = if has_quote {
            parse_field(line, "quote_volume", &record[6])?
        } else {
            volume * close
        };
        series.timestamps.push(ts);
        series.open.push(open);
        series.high.push(high);
        series.low.push(low);
        series.close.push(close);
        series.volume.push(volume);
        series.quote_volume.push(quote_volume);
    }

    series.validate(&display)?;
    Ok(series)
}

/// Write a candle series in the canonical CSV schema.
pub fn save_candles(series: &CandleSeries, path: &Path) -> Result<()> {
    let display = path.display().to_string();
    let file = std::fs::File::create(path).map_err(|e| LemError::io(format!("creating {display}"), e))?;
    let mut w = csv::Writer::from_writer(std::io::BufWriter::new(file));
    w.write_record(["timestamp", "open", "high", "low", "close", "volume", "quote_volume"])
        .map_err(|e| LemError::validation(format!("{display}: {e}")))?;
    for i in 0..series.len() {
        w.write_record([
            series.timestamps[i].to_string(),
            format_f64(series.open[i]),
            format_f64(series.high[i]),
            format_f64(series.low[i]),
            format_f64(series.close[i]),
            format_f64(series.volume[i]),
            format_f64(series.quote_volume[i]),
        ])
        .map_err(|e| LemError::validation(format!("{display}: {e}")))?;
    }
    w.flush().map_err(|e| LemError::io(format!("writing {display}"), e))
}

fn format_f64(v: f64) -> String {
    // Shortest representation that round-trips; keeps synth -> load lossless.
    format!("{v}")
}

/// One asset file in a dataset manifest.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ManifestAsset {
    pub id: String,
    pub path: String,
    pub frequency_minutes: u32,
}

/// Dataset manifest: asset files plus split dates (epoch seconds or
/// `YYYY-MM-DD`).
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct DatasetManifest {
    pub assets: Vec<ManifestAsset>,
    pub val_date: String,
    pub test_date: String,
}

impl DatasetManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LemError::io(format!("reading manifest {}", path.display()), e))?;
        serde_json::from_str(&text)
            .map_err(|e| LemError::json(format!("parsing manifest {}", path.display()), e))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| LemError::json("serializing manifest".to_string(), e))?;
        std::fs::write(path, text)
            .map_err(|e| LemError::io(format!("writing manifest {}", path.display()), e))
    }

    pub fn split_timestamps(&self) -> Result<(i64, i64)> {
        let val = parse_timestamp(&self.val_date).ok_or_else(|| {
            LemError::validation(format!("invalid val_date `{}`", self.val_date))
        })?;
        let test = parse_timestamp(&self.test_date).ok_or_else(|| {
            LemError::validation(format!("invalid test_date `{}`", self.test_date))
        })?;
        if val >= test {
            return Err(LemError::validation(format!(
                "val_date {} must precede test_date {}",
                self.val_date, self.test_date
            )));
        }
        Ok((val, test))
    }
}
