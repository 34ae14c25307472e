//! Run configuration: the JSON schema consumed by every CLI subcommand, the
//! run-directory layout, and the data-pipeline glue from manifest to split
//! batches.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::decision::DecisionOptions;
use crate::encoder::EncoderConfig;
use crate::error::{LemError, Result};
use crate::eval::EvalConfig;
use crate::market::features::{FeatureSpec, FEATURE_DIM};
use crate::market::{
    load_candles, split_dataset, DatasetManifest, Regime, SplitBatches, SynthConfig, WindowSet,
};
use crate::model::ModelConfig;
use crate::objective::ObjectiveConfig;
use crate::train::TrainConfig;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthDataConfig {
    pub n_bars: usize,
    pub regime: Regime,
    #[serde(default = "default_synth_frequency")]
    pub frequency_minutes: u32,
    #[serde(default)]
    pub seed: u64,
    /// Asset identifiers; each gets its own seeded series.
    #[serde(default = "default_assets")]
    pub assets: Vec<String>,
    /// Fraction of bars before the validation split date.
    #[serde(default = "default_val_fraction")]
    pub val_fraction: f64,
    /// Fraction of bars before the test split date.
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
}

fn default_synth_frequency() -> u32 {
    15
}

fn default_assets() -> Vec<String> {
    vec!["SYN".to_string()]
}

fn default_val_fraction() -> f64 {
    0.7
}

fn default_test_fraction() -> f64 {
    0.85
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Run directory; every artifact lands under it.
    pub out_dir: String,
    /// Existing dataset manifest (candle files plus split dates).
    #[serde(default)]
    pub manifest: Option<String>,
    /// Synthetic data generation, used by the `synth` subcommand.
    #[serde(default)]
    pub synth: Option<SynthDataConfig>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    pub features: FeatureSpec,
    #[serde(default)]
    pub encoder: EncoderConfig,
    #[serde(default)]
    pub decision: DecisionOptions,
    #[serde(default)]
    pub objective: ObjectiveConfig,
    #[serde(default)]
    pub training: TrainConfig,
    #[serde(default)]
    pub evaluation: EvalConfig,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.features.validate()?;
        self.model_config()?.validate()?;
        self.training.validate()?;
        if let Some(synth) = &self.data.synth {
            if synth.n_bars <= self.features.normalization_window + self.features.total_steps() {
                return Err(LemError::validation(format!(
                    "synth.n_bars {} cannot cover the normalization window plus one sample ({})",
                    synth.n_bars,
                    self.features.normalization_window + self.features.total_steps()
                )));
            }
            if !(0.0 < synth.val_fraction && synth.val_fraction < synth.test_fraction && synth.test_fraction < 1.0) {
                return Err(LemError::validation(
                    "synth split fractions must satisfy 0 < val < test < 1",
                ));
            }
        }
        Ok(())
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        let cfg = ModelConfig {
            feature_dim: FEATURE_DIM,
            lookback_steps: self.features.lookback_steps,
            horizon_steps: self.features.horizon_steps,
            encoder: self.encoder.clone(),
            decision: self.decision.clone(),
            objective: self.objective,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn paths(&self) -> RunPaths {
        RunPaths::new(Path::new(&self.data.out_dir))
    }

    /// Manifest location: explicit `data.manifest` or the synth output.
    pub fn manifest_path(&self) -> PathBuf {
        match &self.data.manifest {
            Some(p) => PathBuf::from(p),
            None => self.paths().manifest,
        }
    }
}

/// Canonical artifact layout inside a run directory.
#[derive(Debug, Clone)]
pub struct RunPaths {
    pub root: PathBuf,
    pub data_dir: PathBuf,
    pub manifest: PathBuf,
    pub prepared: PathBuf,
    pub checkpoint: PathBuf,
    pub train_report: PathBuf,
    pub training_log: PathBuf,
    pub evaluation: PathBuf,
    pub reports_dir: PathBuf,
    pub gradcheck_report: PathBuf,
}

impl RunPaths {
    pub fn new(root: &Path) -> Self {
        RunPaths {
            root: root.to_path_buf(),
            data_dir: root.join("data"),
            manifest: root.join("data/manifest.json"),
            prepared: root.join("prepared.json"),
            checkpoint: root.join("checkpoint.json"),
            train_report: root.join("train_report.json"),
            training_log: root.join("training_log.csv"),
            evaluation: root.join("evaluation.json"),
            reports_dir: root.join("reports"),
            gradcheck_report: root.join("gradcheck_report.json"),
        }
    }
}

/// Load a config file and apply `--set key=value` overrides (dotted paths
/// into the JSON document; values parse as JSON with a string fallback).
pub fn load_config(path: &Path, overrides: &[(String, String)]) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        LemError::validation(format!("cannot read config {}: {e}", path.display()))
    })?;
    let mut value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| LemError::json(format!("parsing config {}", path.display()), e))?;
    for (key, raw) in overrides {
        apply_override(&mut value, key, raw)?;
    }
    let config: RunConfig = serde_json::from_value(value)
        .map_err(|e| LemError::json(format!("validating config {}", path.display()), e))?;
    config.validate()?;
    Ok(config)
}

fn apply_override(root: &mut serde_json::Value, key: &str, raw: &str) -> Result<()> {
    let parsed: serde_json::Value = serde_json::from_str(raw)
        .unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
    let mut cursor = root;
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(LemError::validation(format!("invalid override key `{key}`")));
    }
    for part in &parts[..parts.len() - 1] {
        if !cursor.is_object() {
            return Err(LemError::validation(format!(
                "override `{key}`: `{part}` is not an object"
            )));
        }
        cursor = cursor
            .as_object_mut()
            .unwrap()
            .entry(part.to_string())
            .or_insert(serde_json::Value::Object(Default::default()));
    }
    match cursor.as_object_mut() {
        Some(map) => {
            map.insert(parts[parts.len() - 1].to_string(), parsed);
            Ok(())
        }
        None => Err(LemError::validation(format!(
            "override `{key}` does not address an object field"
        ))),
    }
}

/// Generate the synthetic dataset described by the config: one candle CSV per
/// asset plus a manifest whose split dates fall at the configured fractions.
pub fn generate_synth_data(config: &RunConfig) -> Result<DatasetManifest> {
    let synth = config
        .data
        .synth
        .as_ref()
        .ok_or_else(|| LemError::validation("config has no data.synth section"))?;
    let paths = config.paths();
    std::fs::create_dir_all(&paths.data_dir)
        .map_err(|e| LemError::io(format!("creating {}", paths.data_dir.display()), e))?;

    let mut assets = Vec::new();
    let mut first_series_bounds = None;
    for (i, asset) in synth.assets.iter().enumerate() {
        let series = crate::market::synth_market_with(&SynthConfig {
            asset_id: asset.clone(),
            frequency_minutes: synth.frequency_minutes,
            ..SynthConfig::new(synth.seed.wrapping_add(i as u64), synth.n_bars, synth.regime)
        });
        let file = format!("{}_{}m.csv", asset.to_lowercase(), synth.frequency_minutes);
        crate::market::save_candles(&series, &paths.data_dir.join(&file))?;
        if first_series_bounds.is_none() {
            let first = *series.timestamps.first().unwrap();
            let last = *series.timestamps.last().unwrap();
            first_series_bounds = Some((first, last));
        }
        assets.push(crate::market::ManifestAsset {
            id: asset.clone(),
            path: file,
            frequency_minutes: synth.frequency_minutes,
        });
    }
    let (first, last) = first_series_bounds.expect("at least one asset");
    let span = (last - first) as f64;
    let val_date = first + (span * synth.val_fraction) as i64;
    let test_date = first + (span * synth.test_fraction) as i64;
    let manifest = DatasetManifest {
        assets,
        val_date: val_date.to_string(),
        test_date: test_date.to_string(),
    };
    manifest.save(&paths.manifest)?;
    Ok(manifest)
}

/// Load every asset in a manifest and window it with the feature spec.
pub fn load_window_sets(
    manifest: &DatasetManifest,
    manifest_dir: &Path,
    spec: &FeatureSpec,
) -> Result<Vec<WindowSet>> {
    manifest
        .assets
        .iter()
        .map(|asset| {
            let path = manifest_dir.join(&asset.path);
            let series = load_candles(&path, &asset.id, asset.frequency_minutes)?;
            WindowSet::build(&series, spec)
        })
        .collect()
}

/// Full pipeline from manifest to split batches.
pub fn load_split_dataset(config: &RunConfig) -> Result<SplitBatches> {
    let manifest_path = config.manifest_path();
    let manifest = DatasetManifest::load(&manifest_path)?;
    let (val_date, test_date) = manifest.split_timestamps()?;
    let manifest_dir = manifest_path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    let sets = load_window_sets(&manifest, &manifest_dir, &config.features)?;
    split_dataset(&sets, val_date, test_date)
}

/// Summary written by the `prepare` subcommand and consumed by `train` and
/// `evaluate` as a pipeline gate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PreparedSummary {
    pub manifest: String,
    pub val_date: i64,
    pub test_date: i64,
    pub train_windows: usize,
    pub validation_windows: usize,
    pub test_windows: usize,
    pub feature_dim: usize,
    pub total_steps: usize,
    pub warnings: Vec<String>,
}

impl PreparedSummary {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| LemError::json("serializing prepared summary", e))?;
        std::fs::write(path, text).map_err(|e| LemError::io(format!("writing {}", path.display()), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            LemError::io(
                format!(
                    "reading {} (run the prepare step before train/evaluate)",
                    path.display()
                ),
                e,
            )
        })?;
        serde_json::from_str(&text).map_err(|e| LemError::json(format!("parsing {}", path.display()), e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::SeasonalMode;

    fn base_config(dir: &Path) -> RunConfig {
        RunConfig {
            data: DataConfig {
                out_dir: dir.display().to_string(),
                manifest: None,
                synth: Some(SynthDataConfig {
                    n_bars: 400,
                    regime: Regime::Iid,
                    frequency_minutes: 15,
                    seed: 3,
                    assets: vec!["AAA".into(), "BBB".into()],
                    val_fraction: 0.6,
                    test_fraction: 0.8,
                }),
            },
            features: FeatureSpec {
                lookback_steps: 4,
                horizon_steps: 4,
                normalization_window: 48,
                seasonal_mode: SeasonalMode::Intraday,
                frequency_tag: None,
            },
            encoder: EncoderConfig {
                hidden_size: 4,
                num_heads: 2,
                ..Default::default()
            },
            decision: Default::default(),
            objective: Default::default(),
            training: Default::default(),
            evaluation: Default::default(),
        }
    }

    #[test]
    fn synth_pipeline_produces_loadable_splits() {
        let dir = tempfile::tempdir().unwrap();
        let config = base_config(dir.path());
        config.validate().unwrap();
        let manifest = generate_synth_data(&config).unwrap();
        assert_eq!(manifest.assets.len(), 2);

        let splits = load_split_dataset(&config).unwrap();
        assert!(!splits.train.is_empty());
        assert!(!splits.validation.is_empty());
        assert!(!splits.test.is_empty());
        // Two assets contribute windows with distinct ids.
        assert!(splits.train.asset_ids.iter().any(|a| a == "AAA"));
        assert!(splits.train.asset_ids.iter().any(|a| a == "BBB"));
    }

    #[test]
    fn synth_is_reproducible_at_file_level() {
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let ca = base_config(dir_a.path());
        let cb = base_config(dir_b.path());
        generate_synth_data(&ca).unwrap();
        generate_synth_data(&cb).unwrap();
        let fa = std::fs::read(dir_a.path().join("data/aaa_15m.csv")).unwrap();
        let fb = std::fs::read(dir_b.path().join("data/aaa_15m.csv")).unwrap();
        assert_eq!(fa, fb);
    }

    #[test]
    fn overrides_apply_dotted_paths() {
        let dir = tempfile::tempdir().unwrap();
        let config = base_config(dir.path());
        let path = dir.path().join("config.json");
        std::fs::write(&path, serde_json::to_string_pretty(&config).unwrap()).unwrap();

        let loaded = load_config(
            &path,
            &[
                ("training.batch_size".to_string(), "32".to_string()),
                ("data.synth.regime".to_string(), "\"trending\"".to_string()),
                ("encoder.hidden_size".to_string(), "8".to_string()),
            ],
        )
        .unwrap();
        assert_eq!(loaded.training.batch_size, 32);
        assert_eq!(loaded.data.synth.unwrap().regime, Regime::Trending);
        assert_eq!(loaded.encoder.hidden_size, 8);
    }

    #[test]
    fn bad_override_and_bad_config_are_validation_errors() {
        let dir = tempfile::tempdir().unwrap();
        let config = base_config(dir.path());
        let path = dir.path().join("config.json");
        std::fs::write(&path, serde_json::to_string_pretty(&config).unwrap()).unwrap();

        let err = load_config(&path, &[("training..size".to_string(), "1".to_string())]).unwrap_err();
        assert!(err.is_validation());

        // Unknown field rejected by the schema.
        let err = load_config(&path, &[("training.bogus_knob".to_string(), "1".to_string())]).unwrap_err();
        assert!(err.is_validation());

        // Structurally valid but semantically bad.
        let err = load_config(&path, &[("encoder.hidden_size".to_string(), "5".to_string())]).unwrap_err();
        assert!(err.is_validation(), "hidden size must divide heads");
    }

    #[test]
    fn frequencies_merge_into_one_training_set() {
        // Two assets at different bar frequencies combine into one dataset,
        // distinguished by their frequency tags.
        let dir = tempfile::tempdir().unwrap();
        let mut config = base_config(dir.path());
        config.data.synth = None;

        let paths = config.paths();
        std::fs::create_dir_all(&paths.data_dir).unwrap();
        let mut assets = Vec::new();
        for (id, freq, seed) in [("FAST", 15u32, 5u64), ("SLOW", 90, 6)] {
            let series = crate::market::synth_market_with(&crate::market::SynthConfig {
                asset_id: id.to_string(),
                frequency_minutes: freq,
                ..crate::market::SynthConfig::new(seed, 400, Regime::Iid)
            });
            let file = format!("{}.csv", id.to_lowercase());
            crate::market::save_candles(&series, &paths.data_dir.join(&file)).unwrap();
            assets.push(crate::market::ManifestAsset {
                id: id.to_string(),
                path: file,
                frequency_minutes: freq,
            });
        }
        // Split dates inside the slower asset's span.
        let manifest = crate::market::DatasetManifest {
            assets,
            val_date: (super::super::market::calendar::days_from_civil(2021, 1, 20) * 86_400).to_string(),
            test_date: (super::super::market::calendar::days_from_civil(2021, 1, 25) * 86_400).to_string(),
        };
        manifest.save(&paths.manifest).unwrap();

        let splits = load_split_dataset(&config).unwrap();
        let merged = &splits.train;
        assert!(merged.asset_ids.iter().any(|a| a == "FAST"));
        assert!(merged.asset_ids.iter().any(|a| a == "SLOW"));
        let mut tags: Vec<f64> = merged.frequency_tags.clone();
        tags.sort_by(|a, b| a.partial_cmp(b).unwrap());
        tags.dedup();
        assert_eq!(tags.len(), 2, "each frequency carries its own tag");
        merged.validate().unwrap();
    }

    #[test]
    fn prepared_summary_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let summary = PreparedSummary {
            manifest: "m.json".into(),
            val_date: 100,
            test_date: 200,
            train_windows: 10,
            validation_windows: 5,
            test_windows: 5,
            feature_dim: FEATURE_DIM,
            total_steps: 8,
            warnings: vec![],
        };
        let path = dir.path().join("prepared.json");
        summary.save(&path).unwrap();
        let loaded = PreparedSummary::load(&path).unwrap();
        assert_eq!(loaded.train_windows, 10);
        assert!(PreparedSummary::load(&dir.path().join("missing.json")).is_err());
    }
}
