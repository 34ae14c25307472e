//! Temporal train/validation/test splitting.
//!
//! A window belongs to a split according to its first timestamp: strictly
//! before the validation date it trains; at or after the test date it tests;
//! otherwise it validates. Ordering within each split is preserved.

use crate::error::Result;
use crate::market::features::{SampleBatch, WindowSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Validation,
    Test,
}

pub fn assign_split(window_start: i64, val_date: i64, test_date: i64) -> Split {
    if window_start >= test_date {
        Split::Test
    } else if window_start >= val_date {
        Split::Validation
    } else {
        Split::Train
    }
}

/// Window indices per split for one [`WindowSet`].
#[derive(Debug, Clone, Default)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

pub fn split_window_set(set: &WindowSet, val_date: i64, test_date: i64) -> SplitIndices {
    let mut out = SplitIndices::default();
    for w in 0..set.window_count() {
        match assign_split(set.window_start_timestamp(w), val_date, test_date) {
            Split::Train => out.train.push(w),
            Split::Validation => out.validation.push(w),
            Split::Test => out.test.push(w),
        }
    }
    out
}

/// Materialized split with per-split batches and explicit warnings for empty
/// splits (never an error).
#[derive(Debug)]
pub struct SplitBatches {
    pub train: SampleBatch,
    pub validation: SampleBatch,
    pub test: SampleBatch,
    pub warnings: Vec<String>,
}

/// Split the windows of several sets (multi-asset, multi-frequency) into
/// three concatenated batches.
pub fn split_dataset(sets: &[WindowSet], val_date: i64, test_date: i64) -> Result<SplitBatches> {
    let mut train_parts = Vec::new();
    let mut val_parts = Vec::new();
    let mut test_parts = Vec::new();
    for set in sets {
        let idx = split_window_set(set, val_date, test_date);
        train_parts.push(set.materialize(&idx.train));
        val_parts.push(set.materialize(&idx.validation));
        test_parts.push(set.materialize(&idx.test));
    }
    let train = SampleBatch::concat(&train_parts)?;
    let validation = SampleBatch::concat(&val_parts)?;
    let test = SampleBatch::concat(&test_parts)?;
    let mut warnings = Vec::new();
    for (name, batch) in [("train", &train), ("validation", &validation), ("test", &test)] {
        if batch.is_empty() {
            warnings.push(format!("{name} split is empty"));
        }
    }
    Ok(SplitBatches {
        train,
        validation,
        test,
        warnings,
    })
}
