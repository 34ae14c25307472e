//! Error types shared across the crate.
//!
//! Errors split into two broad classes that the CLI maps onto exit codes:
//! validation problems (bad input data, bad configuration, shape mismatches)
//! and runtime failures (I/O, non-finite numerics mid-training).

use thiserror::Error;

/// A half-open span of missing bar timestamps, `[start, end)` in epoch seconds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GapSpan {
    pub start: i64,
    pub end: i64,
    pub missing_bars: usize,
}

#[derive(Debug, Error)]
pub enum LemError {
    /// A malformed row in an input file; `line` is 1-based and counts the header.
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    /// Candle timestamps are not contiguous at the declared frequency.
    #[error("{path}: timestamp gaps at declared frequency ({}): {}", .frequency_minutes, format_spans(.spans))]
    TimestampGap {
        path: String,
        frequency_minutes: u32,
        spans: Vec<GapSpan>,
    },

    /// Bad configuration or inconsistent request (CLI exit code 1).
    #[error("{0}")]
    Validation(String),

    /// A tensor or checkpoint shape does not match what the consumer expects.
    #[error("shape mismatch in {context}: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        context: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    /// A loss term became non-finite during training; names the first bad term.
    #[error("non-finite value in term `{term}` (epoch {epoch}, batch {batch})")]
    NonFinite {
        term: String,
        epoch: usize,
        batch: usize,
    },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
}

impl LemError {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        LemError::Io {
            context: context.into(),
            source,
        }
    }

    pub fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        LemError::Json {
            context: context.into(),
            source,
        }
    }

    pub fn validation(msg: impl Into<String>) -> Self {
        LemError::Validation(msg.into())
    }

    /// True for errors caused by bad inputs rather than by the run itself
    /// (malformed files and configs included); I/O and numerical failures
    /// are runtime errors.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            LemError::Parse { .. }
                | LemError::TimestampGap { .. }
                | LemError::Validation(_)
                | LemError::ShapeMismatch { .. }
                | LemError::Json { .. }
        )
    }
}

fn format_spans(spans: &[GapSpan]) -> String {
    let shown: Vec<String> = spans
        .iter()
        .take(5)
        .map(|s| format!("[{}..{}) missing {}", s.start, s.end, s.missing_bars))
        .collect();
    let suffix = if spans.len() > 5 {
        format!(" and {} more", spans.len() - 5)
    } else {
        String::new()
    };
    format!("{}{}", shown.join(", "), suffix)
}

pub type Result<T> = std::result::Result<T, LemError>;
