//! Run configuration files: one TOML document with `[synth]`, `[train]` and
//! `[eval]` sections. Unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{EvalConfig, ProbeConfig};
use crate::synth::SynthSpec;
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalTask {
    #[default]
    Knn,
    Linear,
}

impl std::str::FromStr for EvalTask {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "knn" => Ok(Self::Knn),
            "linear" => Ok(Self::Linear),
            other => Err(Error::config("eval.task", format!("unknown task `{other}` (knn|linear)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    pub task: EvalTask,
    pub knn_tau: f64,
    pub knn_k: usize,
    pub probe: ProbeConfig,
}

impl Default for EvalSettings {
    fn default() -> Self {
        let e = EvalConfig::default();
        Self { task: EvalTask::Knn, knn_tau: e.knn_tau, knn_k: e.knn_k, probe: ProbeConfig::default() }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub synth: SynthSpec,
    pub train: TrainConfig,
    pub eval: EvalSettings,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config("config", e.message().to_string()))
    }

    /// Missing file is an I/O error; malformed content a config error.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::config("config", e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        Ok(std::fs::write(path, self.to_toml_string()?)?)
    }

    /// kNN settings plus the training views, which evaluation reuses.
    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig { knn_tau: self.eval.knn_tau, knn_k: self.eval.knn_k, views: self.train.views.clone() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contrastive::LossMode;

    #[test]
    fn round_trip_through_toml() {
        let mut cfg = RunConfig::default();
        cfg.train.loss.mode = LossMode::Wincon;
        cfg.train.max_steps = Some(30);
        cfg.synth.n_images = 12;
        cfg.eval.task = EvalTask::Linear;
        let text = cfg.to_toml_string().unwrap();
        assert_eq!(RunConfig::from_toml_str(&text).unwrap(), cfg);
    }

    #[test]
    fn partial_files_fill_defaults() {
        let cfg = RunConfig::from_toml_str("[train]\nbatch_size = 8\n[train.loss]\nmode = \"wincon\"\n").unwrap();
        assert_eq!(cfg.train.batch_size, 8);
        assert_eq!(cfg.train.loss.mode, LossMode::Wincon);
        assert_eq!(cfg.train.loss.tau, 0.07);
        assert_eq!(cfg.synth, SynthSpec::default());
    }

    #[test]
    fn unknown_keys_are_config_errors() {
        for text in ["[train]\nbatchsize = 8\n", "[nope]\n", "[train.loss]\ntemperature = 0.1\n"] {
            let err = RunConfig::from_toml_str(text).unwrap_err();
            assert_eq!(err.exit_code(), 2, "{err}");
        }
    }
}
