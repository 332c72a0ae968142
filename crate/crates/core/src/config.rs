//! Run configuration: a TOML file with `ingest`, `classify`, `outlier` and
//! `tier` sections. Command-line flags are applied on top.
//!
//! ```toml
//! [ingest]
//! format = "csv"
//!
//! [classify]
//! min_samples = 10
//! density_bins = 40
//!
//! [outlier]
//! mode = "fixed_k"   # or "tau_table"
//! k = 2.0
//! alpha = 0.05
//! min_n = 3
//!
//! [tier]
//! bins = [0, 8, 12, 25, 50, 100]
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corr::{DEFAULT_DENSITY_BINS, DEFAULT_MIN_SAMPLES};
use crate::ingest::Format;
use crate::outlier::{TauConfig, TauMode, TauModeName, DEFAULT_ALPHA, DEFAULT_K, DEFAULT_MIN_N};
use crate::tier::{TierBins, DEFAULT_EDGES};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("parsing config: {0}")]
    Parse(String),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestSection {
    pub format: Format,
}

impl Default for IngestSection {
    fn default() -> Self {
        IngestSection { format: Format::Csv }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifySection {
    pub min_samples: usize,
    pub density_bins: usize,
}

impl Default for ClassifySection {
    fn default() -> Self {
        ClassifySection {
            min_samples: DEFAULT_MIN_SAMPLES,
            density_bins: DEFAULT_DENSITY_BINS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutlierSection {
    pub mode: String,
    pub k: f64,
    pub alpha: f64,
    pub min_n: usize,
}

impl Default for OutlierSection {
    fn default() -> Self {
        OutlierSection {
            mode: TauModeName::FixedK.to_string(),
            k: DEFAULT_K,
            alpha: DEFAULT_ALPHA,
            min_n: DEFAULT_MIN_N,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TierSection {
    pub bins: Vec<f64>,
}

impl Default for TierSection {
    fn default() -> Self {
        TierSection {
            bins: DEFAULT_EDGES.to_vec(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub ingest: IngestSection,
    pub classify: ClassifySection,
    pub outlier: OutlierSection,
    pub tier: TierSection,
}

impl Config {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.display().to_string(),
            source,
        })?;
        Config::from_toml_str(&text)
    }

    pub fn tau_config(&self) -> Result<TauConfig, ConfigError> {
        let name: TauModeName = self
            .outlier
            .mode
            .parse()
            .map_err(|e| ConfigError::Invalid(format!("{e}")))?;
        let mode = match name {
            TauModeName::FixedK => TauMode::FixedK { k: self.outlier.k },
            TauModeName::TauTable => TauMode::TauTable {
                alpha: self.outlier.alpha,
            },
        };
        let cfg = TauConfig {
            mode,
            min_n: self.outlier.min_n,
        };
        cfg.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(cfg)
    }

    pub fn tier_bins(&self) -> Result<TierBins, ConfigError> {
        TierBins::new(self.tier.bins.clone()).map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    /// Checks every section; the first problem found is returned.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.classify.min_samples == 0 {
            return Err(ConfigError::Invalid("min_samples must be positive".into()));
        }
        if self.classify.density_bins == 0 {
            return Err(ConfigError::Invalid("density_bins must be positive".into()));
        }
        self.tau_config()?;
        self.tier_bins()?;
        Ok(())
    }
}
