use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tama_core::aggregate::DEFAULT_THRESHOLD;
use tama_core::gateway::{
    CacheMode, ChatParams, HttpConfig, OracleFidelity, ReflectionBehavior, DEFAULT_MAX_IN_FLIGHT,
};
use tama_core::metrics::default_alpha_grid;
use tama_core::pipeline::PipelineConfig;

use crate::CliError;

pub const CACHE_DIR_ENV: &str = "TAMA_CACHE_DIR";
pub const CONFIG_SNAPSHOT: &str = "config.toml";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    /// Live OpenAI-compatible endpoint.
    #[default]
    Http,
    /// Answers derived from the manifest's labels.
    Oracle,
    /// Cached responses only; a miss is an error.
    Replay,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleSettings {
    pub fidelity: OracleFidelity,
    pub reflection: ReflectionBehavior,
}

impl Default for OracleSettings {
    fn default() -> Self {
        Self {
            fidelity: OracleFidelity::Perfect,
            reflection: ReflectionBehavior::Echo,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GatewaySettings {
    pub backend: BackendKind,
    #[serde(flatten)]
    pub chat: ChatParams,
    #[serde(flatten)]
    pub http: HttpConfig,
    pub max_in_flight: usize,
    /// Response cache directory; `TAMA_CACHE_DIR`, then `<output_dir>/cache` when unset.
    pub cache_dir: Option<PathBuf>,
    /// Ignored by the replay backend, which is always strict.
    pub cache_mode: CacheMode,
    pub oracle: OracleSettings,
}

impl Default for GatewaySettings {
    fn default() -> Self {
        Self {
            backend: BackendKind::default(),
            chat: ChatParams::default(),
            http: HttpConfig::default(),
            max_in_flight: DEFAULT_MAX_IN_FLIGHT,
            cache_dir: None,
            cache_mode: CacheMode::ReadThrough,
            oracle: OracleSettings::default(),
        }
    }
}

/// Everything a `detect` run needs. A materialized copy is written to
/// every run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub manifest: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    /// Confidence threshold c_0.
    pub threshold: f64,
    /// PAT for headline metrics.
    pub alpha: f64,
    pub alphas: Vec<f64>,
    pub parallel_series: usize,
    /// Directory of prompt overrides (`reference.txt`, `analyze.txt`, `reflect.txt`).
    pub prompt_dir: Option<PathBuf>,
    pub pipeline: PipelineConfig,
    pub gateway: GatewaySettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            manifest: None,
            output_dir: None,
            threshold: DEFAULT_THRESHOLD,
            alpha: 0.0,
            alphas: default_alpha_grid(),
            parallel_series: 1,
            prompt_dir: None,
            pipeline: PipelineConfig::default(),
            gateway: GatewaySettings::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("reading {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn from_toml(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::Config(format!("serializing config: {e}")))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if !(self.threshold.is_finite() && self.threshold >= 0.0) {
            return Err(CliError::Config(format!("threshold {} must be finite and non-negative", self.threshold)));
        }
        for a in std::iter::once(&self.alpha).chain(&self.alphas) {
            if !(0.0..=1.0).contains(a) {
                return Err(CliError::Config(format!("alpha {a} outside [0, 1]")));
            }
        }
        if self.parallel_series == 0 || self.gateway.max_in_flight == 0 {
            return Err(CliError::Config("parallel_series and max_in_flight must be positive".into()));
        }
        if self.pipeline.train_split.is_some() {
            return Err(CliError::Config(
                "train_split is set per series in the manifest, not in the run config".into(),
            ));
        }
        if let OracleFidelity::Noisy { fp_rate, .. } = self.gateway.oracle.fidelity {
            if !(0.0..=1.0).contains(&fp_rate) {
                return Err(CliError::Config(format!("oracle fp_rate {fp_rate} outside [0, 1]")));
            }
        }
        self.pipeline.validate().map_err(|e| CliError::Config(e.to_string()))
    }

    /// Cache directory after applying the environment and the run-directory default.
    pub fn resolved_cache_dir(&self, out: &Path) -> PathBuf {
        self.gateway
            .cache_dir
            .clone()
            .or_else(|| std::env::var_os(CACHE_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| out.join("cache"))
    }
}
