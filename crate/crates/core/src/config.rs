//! `somonitor.toml`: one section per stage. Every key is optional and falls
//! back to the defaults below; command-line flags override the file.
//!
//! ```toml
//! [store]
//! root = ".somonitor"
//!
//! [gateway]
//! backend = "scripted"
//! embedding_backend = "hashing"
//! temperature = 0.1
//! max_parallel = 4
//!
//! [cluster]
//! k0 = 3
//! k_max = 50
//! seed = 7
//! outlier_percentile = 95.0
//!
//! [rank]
//! alpha = 1.0
//! beta = 0.0
//! classifier = "oracle"
//! ensemble_runs = 5
//! grounded = true
//!
//! [eval]
//! relevance_size = 5
//! cutoffs = [3, 5, 10]
//!
//! [service]
//! bind = "127.0.0.1:8787"
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster::ClusterConfig;
use crate::domain::ScoreLayer;
use crate::eval::EvalConfig;
use crate::gateway::GatewayConfig;
use crate::rank::{RankerConfig, ORACLE_CLASSIFIER};
use crate::story::SelectionPolicy;

pub const CONFIG_FILE: &str = "somonitor.toml";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("invalid {path}: {message}")]
    Parse { path: PathBuf, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StoreSection {
    pub root: PathBuf,
}

impl Default for StoreSection {
    fn default() -> Self {
        Self { root: PathBuf::from(".somonitor") }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RankSection {
    pub alpha: f64,
    pub beta: f64,
    pub classifier: String,
    pub ensemble_runs: usize,
    pub grounded: bool,
    pub seed_base: u64,
    pub temperature: f64,
}

impl Default for RankSection {
    fn default() -> Self {
        let ranker = RankerConfig::default();
        Self {
            alpha: 1.0,
            beta: 0.0,
            classifier: ORACLE_CLASSIFIER.to_string(),
            ensemble_runs: ranker.ensemble_runs,
            grounded: true,
            seed_base: ranker.seed_base,
            temperature: ranker.temperature,
        }
    }
}

impl RankSection {
    pub fn layer(&self) -> ScoreLayer {
        ScoreLayer { alpha: self.alpha, beta: self.beta }
    }

    pub fn ranker_config(&self, backend_id: &str) -> RankerConfig {
        RankerConfig {
            temperature: self.temperature,
            ensemble_runs: self.ensemble_runs,
            grounding_exemplars: if self.grounded { 3 } else { 0 },
            backend_id: backend_id.to_string(),
            seed_base: self.seed_base,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct StorySection {
    pub policy: SelectionPolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceSection {
    pub bind: String,
}

impl Default for ServiceSection {
    fn default() -> Self {
        Self { bind: "127.0.0.1:8787".to_string() }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    pub store: StoreSection,
    pub gateway: GatewayConfig,
    pub cluster: ClusterConfig,
    pub rank: RankSection,
    pub eval: EvalConfig,
    pub story: StorySection,
    pub service: ServiceSection,
}

impl Config {
    pub fn from_toml(text: &str, path: &Path) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse { path: path.to_path_buf(), message: e.to_string() })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        Self::from_toml(&text, path)
    }

    /// Reads `path` if given, else `somonitor.toml` in the working directory
    /// when present, else the defaults.
    pub fn discover(path: Option<&Path>) -> Result<Self, ConfigError> {
        match path {
            Some(p) => Self::load(p),
            None if Path::new(CONFIG_FILE).is_file() => Self::load(Path::new(CONFIG_FILE)),
            None => Ok(Self::default()),
        }
    }
}
