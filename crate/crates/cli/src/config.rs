//! Run configuration: a TOML file plus dotted-key overrides.
//!
//! Every key is optional; absent keys take the defaults below. Unknown keys
//! are rejected with their full path.
//!
//! ```toml
//! protocol = "within-subject"   # or "loso"
//! output_dir = "runs/default"
//! jobs = 0                      # worker threads, 0 = all cores
//!
//! [model]       # channels = 72, samples = 250, filters = 5, kernel_len = 125,
//!               # shared_kernels = false, variant = "full" | "conv-only"
//! [esn]         # size = 100, spectral_radius = 0.99, leak_rate = 0.1, density = 0.1
//! [train]       # learning_rate = 1e-3, batch_size = 64, max_epochs = 40,
//!               # patience = 8, l2 = 1e-4, seeds = [0, 1, 2, 3, 4]
//! [augment]     # enabled, noise, noise_sigma = 0.01, shift, max_shift_samples = 12,
//!               # inversion, inversion_probability = 0.5
//! [preprocess]  # low_hz = 1, high_hz = 40, filter_order = 4,
//!               # window_offset_s = 0.2, window_samples = 250
//! [data]        # manifest = "path/to/manifest.json"; when absent the
//!               # [data.synth] generator is used in memory
//! [data.synth]  # subjects = 3, per_class = 300, channels = 72, sample_rate = 500,
//!               # noise_scale = 0.5, signal_amplitude = 1, subject_variability = 0.5,
//!               # events_per_trial = 60, event_spacing_s = 1, seed = 0
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use esnnet::data::{AugmentConfig, PreprocessConfig, SynthConfig};
use esnnet::eval::Protocol;
use esnnet::model::{NetConfig, TrainConfig};
use esnnet::reservoir::ReservoirConfig;
use esnnet::{Error, ModelConfig, Result};
use serde::{Deserialize, Serialize};
use toml::Value;

pub const CONFIG_FILE: &str = "config.toml";

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
    pub synth: SynthConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub protocol: Protocol,
    pub output_dir: PathBuf,
    pub jobs: usize,
    pub model: NetConfig,
    pub esn: ReservoirConfig,
    pub train: TrainConfig,
    pub augment: AugmentConfig,
    pub preprocess: PreprocessConfig,
    pub data: DataConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            protocol: Protocol::WithinSubject,
            output_dir: PathBuf::from("runs/default"),
            jobs: 0,
            model: NetConfig::default(),
            esn: ReservoirConfig::default(),
            train: TrainConfig::default(),
            augment: AugmentConfig::default(),
            preprocess: PreprocessConfig::default(),
            data: DataConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            model: self.model.clone(),
            esn: self.esn,
            train: self.train.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model_config().validate()?;
        self.preprocess.validate()?;
        self.augment.validate(self.model.samples)?;
        if self.preprocess.window_samples != self.model.samples {
            return Err(Error::config(
                "preprocess.window_samples",
                format!("{} differs from model.samples = {}", self.preprocess.window_samples, self.model.samples),
            ));
        }
        if self.data.manifest.is_none() {
            self.data.synth.validate()?;
            if self.data.synth.channels != self.model.channels {
                return Err(Error::config(
                    "data.synth.channels",
                    format!("{} differs from model.channels = {}", self.data.synth.channels, self.model.channels),
                ));
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Writes the effective config into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir)?;
        let path = dir.join(CONFIG_FILE);
        fs::write(&path, self.to_toml())?;
        Ok(path)
    }
}

/// Parses `key.path=value`. The value is read as a TOML literal, falling back
/// to a bare string, so `train.seeds=[0,1]`, `esn.leak_rate=0.3` and
/// `protocol=loso` all work.
fn parse_override(spec: &str) -> Result<(Vec<String>, Value)> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::config(spec, "override must look like key.path=value"))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(Error::config(key, "malformed key path"));
    }
    let raw = raw.trim();
    let value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("parsed key present"),
        Err(_) => Value::String(raw.to_string()),
    };
    Ok((key.split('.').map(str::to_string).collect(), value))
}

fn apply_override(root: &mut toml::Table, path: &[String], value: Value) -> Result<()> {
    let mut table = root;
    for (depth, part) in path[..path.len() - 1].iter().enumerate() {
        let entry = table
            .entry(part.clone())
            .or_insert_with(|| Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| Error::config(path[..=depth].join("."), "is not a table"))?;
    }
    table.insert(path[path.len() - 1].clone(), value);
    Ok(())
}

/// Builds a config from TOML text and overrides, resolving defaults.
pub fn parse_config_str(text: &str, overrides: &[String]) -> Result<RunConfig> {
    let mut table: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| Error::config("<config>", e.message().to_string()))?;
    for spec in overrides {
        let (path, value) = parse_override(spec)?;
        apply_override(&mut table, &path, value)?;
    }
    let cfg: RunConfig = serde_path_to_error::deserialize(Value::Table(table)).map_err(|e| {
        let key = e.path().to_string();
        Error::config(if key == "." { "<config>".into() } else { key }, e.into_inner().to_string())
    })?;
    cfg.validate()?;
    Ok(cfg)
}

/// Reads `path` (or starts from an empty document) and applies overrides.
pub fn parse_config(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig> {
    let text = match path {
        Some(p) => fs::read_to_string(p)
            .map_err(|e| Error::config(p.display().to_string(), format!("cannot read config: {e}")))?,
        None => String::new(),
    };
    parse_config_str(&text, overrides)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        let cfg = parse_config_str("", &[]).unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.esn.size, 100);
        assert_eq!(cfg.esn.spectral_radius, 0.99);
        assert_eq!(cfg.esn.leak_rate, 0.1);
        assert_eq!(cfg.train.learning_rate, 1e-3);
        assert_eq!(cfg.train.batch_size, 64);
        assert_eq!(cfg.train.max_epochs, 40);
    }

    #[test]
    fn overrides_are_typed() {
        let cfg = parse_config_str(
            "[esn]\nsize = 50\n",
            &["train.seeds=[7, 8]".into(), "protocol=loso".into(), "model.variant=conv-only".into()],
        )
        .unwrap();
        assert_eq!(cfg.esn.size, 50);
        assert_eq!(cfg.train.seeds, vec![7, 8]);
        assert_eq!(cfg.protocol, Protocol::Loso);
        assert_eq!(cfg.model.variant, esnnet::Variant::ConvOnly);
    }

    #[test]
    fn alpha_above_one_rejected() {
        let err = parse_config_str("", &["esn.alpha=1.5".into()]).unwrap_err();
        assert!(err.to_string().contains("esn.leak_rate"), "{err}");
    }

    #[test]
    fn unknown_key_names_its_path() {
        let err = parse_config_str("[train]\nlearning_rat = 0.1\n", &[]).unwrap_err();
        assert!(matches!(err, Error::Config { ref key, .. } if key.starts_with("train")), "{err}");
        assert!(err.to_string().contains("learning_rat"));
        let err = parse_config_str("", &["esn.size=\"big\"".into()]).unwrap_err();
        assert!(matches!(err, Error::Config { ref key, .. } if key == "esn.size"), "{err}");
    }

    #[test]
    fn effective_config_is_a_fixpoint() {
        let cfg = parse_config_str("jobs = 2\n[data]\nmanifest = \"d/manifest.json\"\n", &["train.l2=0.5".into()]).unwrap();
        let again = parse_config_str(&cfg.to_toml(), &[]).unwrap();
        assert_eq!(again, cfg);
        assert_eq!(again.to_toml(), cfg.to_toml());
    }

    #[test]
    fn window_must_match_model() {
        let err = parse_config_str("", &["preprocess.window_samples=200".into()]).unwrap_err();
        assert!(err.to_string().contains("preprocess.window_samples"));
    }
}
