//! Market data: candle ingestion and synthesis, feature engineering, and
//! temporal dataset splitting.

pub mod calendar;
pub mod candles;
pub mod features;
pub mod split;
pub mod synth;

pub use candles::{load_candles, save_candles, CandleSeries, DatasetManifest, ManifestAsset};
pub use features::{
    bar_vwap, build_features, normalize_volumes, FeatureSpec, SampleBatch, SeasonalMode, WindowSet,
    CH_HORIZON_FLAG, CH_RETURN, CH_VOLUME, FEATURE_DIM,
};
pub use split::{assign_split, split_dataset, Split, SplitBatches};
pub use synth::{synth_market, synth_market_with, Regime, SynthConfig};
