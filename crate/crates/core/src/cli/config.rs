//! Run configuration: one TOML file, every field defaulted, resolved
//! values echoed into the output directory for provenance.

use super::CliError;
use crate::data::SyntheticSpec;
use crate::mel::MelConfig;
use crate::model::ModelConfig;
use crate::train::TrainSettings;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    #[default]
    Synthetic,
    Directory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub source: DataSource,
    /// Dataset directory when `source = "directory"`.
    pub dir: Option<String>,
    pub synth: SyntheticSpec,
    /// Optional spectrogram cache directory.
    pub cache_dir: Option<String>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            source: DataSource::Synthetic,
            dir: None,
            synth: SyntheticSpec::default(),
            cache_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessConfig {
    pub wavelet_levels: usize,
    pub filter_order: usize,
    pub cutoff_hz: f64,
    pub clip_seconds: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            wavelet_levels: 4,
            filter_order: 5,
            cutoff_hz: 500.0,
            clip_seconds: 5.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitConfig {
    pub test_fraction: f64,
    pub val_per_class: usize,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            test_fraction: 0.2,
            val_per_class: 250,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub preprocess: PreprocessConfig,
    pub split: SplitConfig,
    pub mel: MelConfig,
    pub model: ModelConfig,
    pub train: TrainSettings,
}

impl RunConfig {
    /// Parse a TOML file, then apply `--set section.key=value` overrides on
    /// the raw tree before deserializing.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig, CliError> {
        let mut tree: toml::Value = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Input(format!("{}: {e}", p.display())))?;
                let table: toml::Table = text
                    .parse()
                    .map_err(|e| CliError::Validation(format!("{}: {e}", p.display())))?;
                toml::Value::Table(table)
            }
            None => toml::Value::Table(Default::default()),
        };
        for item in overrides {
            apply_override(&mut tree, item)?;
        }
        tree.try_into()
            .map_err(|e| CliError::Validation(format!("configuration: {e}")))
    }

    /// Collect every invalid value at once.
    pub fn validation_errors(&self) -> Vec<String> {
        let mut errors = Vec::new();
        if self.data.source == DataSource::Directory && self.data.dir.is_none() {
            errors.push("data.source = \"directory\" requires data.dir".to_string());
        }
        if let Some(dir) = &self.data.dir {
            if self.data.source == DataSource::Directory && !Path::new(dir).is_dir() {
                errors.push(format!("data.dir {dir} does not exist"));
            }
        }
        if self.preprocess.wavelet_levels == 0 {
            errors.push("preprocess.wavelet_levels must be at least 1".to_string());
        }
        if self.preprocess.filter_order == 0 {
            errors.push("preprocess.filter_order must be at least 1".to_string());
        }
        if !(self.preprocess.clip_seconds > 0.0) {
            errors.push("preprocess.clip_seconds must be positive".to_string());
        }
        let fs = self.data.synth.sample_rate_hz as f64;
        if !(self.preprocess.cutoff_hz > 0.0 && self.preprocess.cutoff_hz < fs / 2.0) {
            errors.push(format!(
                "preprocess.cutoff_hz must lie in (0, {}), got {}",
                fs / 2.0,
                self.preprocess.cutoff_hz
            ));
        }
        if !(self.split.test_fraction > 0.0 && self.split.test_fraction < 1.0) {
            errors.push("split.test_fraction must lie in (0, 1)".to_string());
        }
        if self.split.val_per_class == 0 {
            errors.push("split.val_per_class must be positive".to_string());
        }
        if let Err(e) = self.mel.validate(self.data.synth.sample_rate_hz) {
            errors.push(e.to_string());
        }
        if let Err(e) = self.model.shape_report() {
            errors.push(e.to_string());
        }
        if self.train.epochs == 0 {
            errors.push("train.epochs must be positive".to_string());
        }
        if self.train.batch_size == 0 {
            errors.push("train.batch_size must be positive".to_string());
        }
        if !(self.train.pwl.alpha > 0.0 && self.train.pwl.alpha < 1.0) {
            errors.push("train.pwl.alpha must lie in (0, 1)".to_string());
        }
        errors
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

/// Apply one `section.key=value` override onto the raw TOML tree. The value
/// side is parsed as TOML, falling back to a bare string.
fn apply_override(tree: &mut toml::Value, item: &str) -> Result<(), CliError> {
    let (key_path, raw_value) = item
        .split_once('=')
        .ok_or_else(|| CliError::Input(format!("--set {item}: expected key=value")))?;
    let parsed: toml::Value = raw_value
        .trim()
        .parse()
        .unwrap_or_else(|_| toml::Value::String(raw_value.trim().to_string()));
    let keys: Vec<&str> = key_path.trim().split('.').collect();
    if keys.is_empty() || keys.iter().any(|k| k.is_empty()) {
        return Err(CliError::Input(format!("--set {item}: bad key path")));
    }
    let mut node = tree;
    for k in &keys[..keys.len() - 1] {
        let table = node
            .as_table_mut()
            .ok_or_else(|| CliError::Input(format!("--set {item}: {k} is not a table")))?;
        node = table
            .entry(k.to_string())
            .or_insert_with(|| toml::Value::Table(Default::default()));
    }
    let table = node
        .as_table_mut()
        .ok_or_else(|| CliError::Input(format!("--set {item}: parent is not a table")))?;
    table.insert(keys[keys.len() - 1].to_string(), parsed);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_parse_from_empty_config() {
        let cfg = RunConfig::load(None, &[]).unwrap();
        assert_eq!(cfg.train.epochs, 50);
        assert_eq!(cfg.train.batch_size, 32);
        assert_eq!(cfg.mel.n_mels, 64);
        assert_eq!(cfg.model.conv_blocks, vec![16, 32, 64]);
        assert!(cfg.validation_errors().is_empty());
    }

    #[test]
    fn set_overrides_apply_to_nested_keys() {
        let cfg = RunConfig::load(
            None,
            &[
                "train.epochs=5".to_string(),
                "data.synth.n_normal=20".to_string(),
                "train.thresholding={ fixed = 0.5 }".to_string(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.train.epochs, 5);
        assert_eq!(cfg.data.synth.n_normal, 20);
        assert_eq!(cfg.train.thresholding, crate::train::Thresholding::Fixed(0.5));
    }

    #[test]
    fn config_round_trips_through_toml() {
        let cfg = RunConfig::default();
        let text = cfg.to_toml();
        let table: toml::Table = text.parse().unwrap();
        let back: RunConfig = toml::Value::Table(table).try_into().unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn validation_collects_all_errors() {
        let mut cfg = RunConfig::default();
        cfg.train.epochs = 0;
        cfg.train.batch_size = 0;
        cfg.preprocess.cutoff_hz = 5000.0;
        let errors = cfg.validation_errors();
        assert!(errors.len() >= 3, "{errors:?}");
    }
}
