//! Run configuration: one TOML file with the full hyperparameter surface.
//! Defaults are the published settings; flags override the file.

use std::path::{Path, PathBuf};

use rrnn_core::neural::{AttentionScale, LossMode};
use rrnn_core::synthgen::{ForceParams, SuiteConfig};
use rrnn_core::training::TrainConfig;
use rrnn_core::trajdata::{WindowConfig, DEFAULT_TARGET_RATE, DEFAULT_VALIDATION_FRACTION};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Default data root for relative dataset paths.
pub const DATA_ROOT_ENV: &str = "RRNN_DATA_ROOT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Prepared dataset directory; relative paths resolve against the data root.
    pub dataset: Option<PathBuf>,
    pub frame_rate: f64,
    pub t_obs: usize,
    pub t_pred: usize,
    /// Training window stride; defaults to `t_pred`.
    pub stride: Option<usize>,
    /// Held-out fold; defaults to the one recorded with the dataset.
    pub test_fold: Option<usize>,
    pub validation_fraction: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            dataset: None,
            frame_rate: DEFAULT_TARGET_RATE,
            t_obs: 12,
            t_pred: 12,
            stride: None,
            test_fold: None,
            validation_fraction: DEFAULT_VALIDATION_FRACTION,
        }
    }
}

impl DataConfig {
    pub fn windows(&self) -> WindowConfig {
        let cfg = WindowConfig::new(self.t_obs, self.t_pred);
        match self.stride {
            Some(s) => cfg.with_stride(s),
            None => cfg,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    #[default]
    Responsernn,
    Red,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub kind: ModelKind,
    pub loss: LossMode,
    pub edge_hidden: usize,
    pub node_hidden: usize,
    pub embedding: usize,
    pub attention_dim: usize,
    pub attention_scale: AttentionScale,
    /// Temporal feature scale; `None` derives it from the training windows.
    pub motion_scale: Option<f64>,
    /// Hidden size of the RED baseline.
    pub red_hidden: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            kind: ModelKind::Responsernn,
            loss: LossMode::Velocity,
            edge_hidden: 128,
            node_hidden: 64,
            embedding: 64,
            attention_dim: 64,
            attention_scale: AttentionScale::NeighborCount,
            motion_scale: None,
            red_hidden: 64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteSize {
    pub recordings: usize,
    /// Seconds per recording.
    pub duration: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSection {
    pub straight: SuiteSize,
    pub crossing: SuiteSize,
    pub approach: SuiteSize,
    pub forces: ForceParams,
    /// Demo windows bundled for the service.
    pub demo_scenarios: usize,
}

impl Default for SynthSection {
    fn default() -> Self {
        let d = SuiteConfig::default();
        let size = |(recordings, duration)| SuiteSize { recordings, duration };
        Self {
            straight: size(d.straight),
            crossing: size(d.crossing),
            approach: size(d.approach),
            forces: d.forces,
            demo_scenarios: 12,
        }
    }
}

impl SynthSection {
    pub fn suite(&self) -> SuiteConfig {
        let pair = |s: SuiteSize| (s.recordings, s.duration);
        SuiteConfig {
            straight: pair(self.straight),
            crossing: pair(self.crossing),
            approach: pair(self.approach),
            forces: self.forces,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ServeSection {
    pub bind: String,
}

impl Default for ServeSection {
    fn default() -> Self {
        Self { bind: "127.0.0.1:8080".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: DataConfig,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub synth: SynthSection,
    pub serve: ServeSection,
}

fn prefixed(prefix: &str, e: rrnn_core::Error) -> CliError {
    match e {
        rrnn_core::Error::Config { field, message } => CliError::Config { field: format!("{prefix}.{field}"), message },
        other => other.into(),
    }
}

impl RunConfig {
    /// Reads a config file, reporting the path of the first bad field.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config {
            field: "--config".into(),
            message: format!("cannot read {}: {e}", path.display()),
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let de = toml::Deserializer::parse(text).map_err(|e| CliError::Config { field: "<root>".into(), message: e.to_string() })?;
        serde_path_to_error::deserialize(de).map_err(|e| {
            let field = e.path().to_string();
            CliError::Config { field, message: e.into_inner().message().to_string() }
        })
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.data.windows().validate().map_err(|e| prefixed("data", e))?;
        if !(self.data.frame_rate > 0.0 && self.data.frame_rate.is_finite()) {
            return Err(CliError::config("data.frame_rate", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.data.validation_fraction) {
            return Err(CliError::config("data.validation_fraction", "must be in [0, 1)"));
        }
        if self.model.motion_scale.is_some_and(|s| !(s > 0.0 && s.is_finite())) {
            return Err(CliError::config("model.motion_scale", "must be positive"));
        }
        for (field, v) in [
            ("model.edge_hidden", self.model.edge_hidden),
            ("model.node_hidden", self.model.node_hidden),
            ("model.embedding", self.model.embedding),
            ("model.attention_dim", self.model.attention_dim),
            ("model.red_hidden", self.model.red_hidden),
        ] {
            if v == 0 {
                return Err(CliError::config(field, "must be positive"));
            }
        }
        self.train.validate().map_err(|e| prefixed("train", e))?;
        self.synth.forces.validate().map_err(|e| prefixed("synth", e))?;
        Ok(())
    }

    /// Dataset directory: the flag, else the config, resolved against the
    /// data root.
    pub fn dataset_dir(&self, flag: Option<&Path>) -> Result<PathBuf, CliError> {
        let path = flag
            .map(Path::to_path_buf)
            .or_else(|| self.data.dataset.clone())
            .ok_or_else(|| CliError::config("data.dataset", "a dataset directory is required"))?;
        let path = match std::env::var_os(DATA_ROOT_ENV) {
            Some(root) if path.is_relative() => PathBuf::from(root).join(path),
            _ => path,
        };
        if !path.is_dir() {
            return Err(CliError::config("data.dataset", format!("{} is not a directory", path.display())));
        }
        Ok(path)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::parse(&cfg.to_toml()).unwrap(), cfg);
        assert_eq!(cfg.train.adam.lr, 0.003);
        assert_eq!(cfg.train.epochs, 100);
        assert_eq!(cfg.train.adam.clip_norm, Some(10.0));
        cfg.validate().unwrap();
    }

    #[test]
    fn errors_name_the_field() {
        let e = RunConfig::parse("[train]\nepochs = \"many\"\n").unwrap_err();
        assert!(matches!(&e, CliError::Config { field, .. } if field == "train.epochs"), "{e}");
        let e = RunConfig::parse("[model]\nwidth = 3\n").unwrap_err();
        assert!(matches!(&e, CliError::Config { field, .. } if field == "model.width"), "{e}");
        let cfg = RunConfig::parse("[synth.forces]\nrobot_range = -1.0\n").unwrap();
        let e = cfg.validate().unwrap_err();
        assert!(matches!(&e, CliError::Config { field, .. } if field == "synth.forces.robot_range"), "{e}");
        let cfg = RunConfig::parse("[data]\nt_pred = 0\n").unwrap();
        assert!(matches!(cfg.validate().unwrap_err(), CliError::Config { field, .. } if field.starts_with("data.")));
    }

    #[test]
    fn missing_dataset_is_a_config_error() {
        let e = RunConfig::default().dataset_dir(None).unwrap_err();
        assert!(matches!(&e, CliError::Config { field, .. } if field == "data.dataset"));
        let e = RunConfig::default().dataset_dir(Some(Path::new("/definitely/not/here"))).unwrap_err();
        assert_eq!(e.exit_code(), 3);
    }
}
