//! File form of a run: data paths, windowing, model and optimizer settings.
//!
//! ```
//! use maginet::config::RunConfig;
//!
//! let cfg: RunConfig = RunConfig::from_toml_str(r#"
//!     seed = 7
//!     [windows]
//!     width = 24
//!     [model]
//!     hidden = 8
//!     ablations = ["no_mastdec"]
//! "#).unwrap();
//! assert_eq!(cfg.windows.width, 24);
//! assert_eq!(cfg.model.heads, 3); // untouched keys keep their defaults
//! assert!(RunConfig::from_toml_str("[model]\nhiden = 8").is_err());
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::Experiment;
use crate::model::ModelConfig;
use crate::train::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub series: Option<PathBuf>,
    pub adj: Option<PathBuf>,
    pub mask: Option<PathBuf>,
    /// Fraction of observed readings held out when no mask file is given.
    pub ratio: f64,
    /// Dataset tag written into reports; defaults to the series file stem.
    pub name: Option<String>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            series: None,
            adj: None,
            mask: None,
            ratio: 0.5,
            name: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WindowConfig {
    pub width: usize,
    pub stride: usize,
    pub fractions: [f64; 3],
    pub knn_k: usize,
}

impl Default for WindowConfig {
    fn default() -> Self {
        let e = Experiment::default();
        WindowConfig {
            width: e.window,
            stride: e.stride,
            fractions: e.fractions,
            knn_k: e.knn_k,
        }
    }
}

/// Everything a command needs. Unknown keys are rejected.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Seed for mask drawing; the model and optimizer use `train.seed`.
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub data: DataConfig,
    pub windows: WindowConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Input(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Input(format!("{}: {e}", path.display())))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Input(format!("config: {e}")))
    }

    pub fn experiment(&self) -> Experiment {
        Experiment {
            window: self.windows.width,
            stride: self.windows.stride,
            fractions: self.windows.fractions,
            knn_k: self.windows.knn_k,
            model: self.model.clone(),
            train: self.train.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        if self.windows.width == 0 || self.windows.stride == 0 {
            return Err(Error::Contract("window width and stride must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.data.ratio) {
            return Err(Error::Contract(format!("missing ratio {} is outside [0, 1)", self.data.ratio)));
        }
        Ok(())
    }
}
