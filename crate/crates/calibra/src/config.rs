//! Run configuration, read from JSON.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use calibra_core::backend::{DEFAULT_MAX_TOKENS, DEFAULT_TEMPERATURE};
use calibra_core::confidence::{ExtractionConfig, ExtractionMethod, PTrueContext, PTrueMode};
use calibra_core::metrics::DEFAULT_BUCKETS;
use calibra_core::strategy::{Demonstration, ExecutionConfig, StrategyConfig, StrategyId};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Http,
    Mock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_url: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub script_path: Option<PathBuf>,
    /// Upper bound on HTTP requests per second across all workers.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub requests_per_second: Option<f64>,
}

/// One dataset file or several; several are macro-averaged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DatasetPaths {
    One(PathBuf),
    Many(Vec<PathBuf>),
}

impl DatasetPaths {
    pub fn paths(&self) -> Vec<&Path> {
        match self {
            DatasetPaths::One(p) => vec![p.as_path()],
            DatasetPaths::Many(ps) => ps.iter().map(PathBuf::as_path).collect(),
        }
    }
}

fn default_strategies() -> Vec<StrategyId> {
    vec![StrategyId::Standard]
}
fn default_methods() -> Vec<ExtractionMethod> {
    vec![ExtractionMethod::TokenProb]
}
fn default_buckets() -> usize {
    DEFAULT_BUCKETS
}
fn default_max_tokens() -> u32 {
    DEFAULT_MAX_TOKENS
}
fn default_temperature() -> f64 {
    DEFAULT_TEMPERATURE
}
fn default_sc_n() -> usize {
    10
}
fn default_sc_temperature() -> f64 {
    0.7
}
fn default_followups() -> usize {
    3
}
fn yes() -> bool {
    true
}
fn default_out() -> PathBuf {
    PathBuf::from("out")
}
fn default_workers() -> usize {
    4
}
fn default_kde_points() -> usize {
    512
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset_path: DatasetPaths,
    #[serde(default = "default_strategies")]
    pub strategy_ids: Vec<StrategyId>,
    #[serde(default = "default_methods")]
    pub extraction_method_ids: Vec<ExtractionMethod>,
    pub backend: BackendConfig,
    #[serde(default = "default_buckets")]
    pub num_buckets: usize,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_sc_n")]
    pub self_consistency_n: usize,
    #[serde(default = "default_sc_temperature")]
    pub self_consistency_temperature: f64,
    #[serde(default = "default_followups")]
    pub self_ask_max_followups: usize,
    #[serde(default = "yes")]
    pub clamp_confidences: bool,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub demonstrations: Option<Vec<Demonstration>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thought_char_budget: Option<usize>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub templates: BTreeMap<String, String>,
    #[serde(default)]
    pub p_true_mode: PTrueMode,
    #[serde(default)]
    pub p_true_context: PTrueContext,
    #[serde(default)]
    pub verbalized_percent: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub concern_lexicon: Option<PathBuf>,
    #[serde(default = "default_kde_points")]
    pub kde_points: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache_path: Option<PathBuf>,
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
    #[serde(default = "default_workers")]
    pub worker_count: usize,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut config: RunConfig =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let dir = path
            .parent()
            .filter(|d| !d.as_os_str().is_empty())
            .unwrap_or(Path::new("."));
        config.base_dir = std::path::absolute(dir).map_err(Error::io(dir))?;
        Ok(config)
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.dataset_path.paths().is_empty() {
            return fail("dataset_path is empty");
        }
        if self.strategy_ids.is_empty() {
            return fail("strategy_ids is empty");
        }
        if self.extraction_method_ids.is_empty() {
            return fail("extraction_method_ids is empty");
        }
        if self.num_buckets == 0 {
            return fail("num_buckets must be at least 1");
        }
        if self.max_tokens == 0 {
            return fail("max_tokens must be at least 1");
        }
        if !(self.temperature >= 0.0 && self.self_consistency_temperature >= 0.0) {
            return fail("temperatures must be non-negative");
        }
        if self.self_consistency_n == 0 {
            return fail("self_consistency_n must be at least 1");
        }
        if self.worker_count == 0 {
            return fail("worker_count must be at least 1");
        }
        if self.kde_points < 2 {
            return fail("kde_points must be at least 2");
        }
        match self.backend.kind {
            BackendKind::Http if self.backend.base_url.is_none() || self.backend.model.is_none() => {
                fail("http backend needs base_url and model")
            }
            BackendKind::Mock if self.backend.script_path.is_none() => fail("mock backend needs script_path"),
            _ => Ok(()),
        }
    }

    pub fn strategy_config(&self) -> StrategyConfig {
        StrategyConfig {
            self_ask_max_followups: self.self_ask_max_followups,
            self_consistency_n: self.self_consistency_n,
            self_consistency_temperature: self.self_consistency_temperature,
            demonstrations: self.demonstrations.clone().unwrap_or_default(),
            thought_char_budget: self.thought_char_budget,
            templates: self.templates.clone(),
        }
    }

    pub fn execution_config(&self) -> ExecutionConfig {
        ExecutionConfig {
            max_tokens: self.max_tokens,
            temperature: self.temperature,
            seed: self.seed,
            methods: self.extraction_method_ids.clone(),
            extraction: ExtractionConfig {
                clamp: self.clamp_confidences,
                p_true_mode: self.p_true_mode,
                p_true_context: self.p_true_context,
                verbalized_percent: self.verbalized_percent,
                ..ExtractionConfig::default()
            },
            ..ExecutionConfig::default()
        }
    }

    /// The configuration as recorded in reports. Settings that cannot change
    /// results (worker count, output and cache locations) are left out so
    /// that reports compare byte for byte.
    pub fn snapshot(&self) -> serde_json::Value {
        let mut value = serde_json::to_value(self).expect("config serializes");
        if let Some(map) = value.as_object_mut() {
            for key in ["worker_count", "out_dir", "cache_path"] {
                map.remove(key);
            }
        }
        value
    }
}
