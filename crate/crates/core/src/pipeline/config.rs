use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::evaluation::MatchMode;
use crate::gateway::{Backend, Gateway, GenerationParams, HttpBackend, MockBackend, ResponseCache, RetryPolicy};
use crate::prompting::{ContextKind, OutputGrammar, Strategy};
use crate::retrieval::SelectorKind;

fn default_concurrency() -> usize {
    4
}

fn default_timeout_secs() -> u64 {
    120
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalSettings {
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub embeddings: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    #[default]
    Http,
    Mock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    /// Mock script (JSON) when `kind = "mock"`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub script: Option<PathBuf>,
    pub timeout_secs: u64,
    pub retry: RetryPolicy,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            kind: BackendKind::Http,
            script: None,
            timeout_secs: default_timeout_secs(),
            retry: RetryPolicy::default(),
        }
    }
}

/// One experiment, usually loaded from TOML. Relative paths resolve
/// against the directory of the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub test: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<PathBuf>,
    pub output_dir: PathBuf,
    /// Defaults to `<output_dir>/cache`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache_dir: Option<PathBuf>,
    #[serde(default)]
    pub no_cache: bool,
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
    #[serde(default)]
    pub match_mode: MatchMode,
    #[serde(default)]
    pub output_grammar: OutputGrammar,
    /// Template directory; the built-in set when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub templates: Option<PathBuf>,
    pub strategy: Strategy,
    pub generation: GenerationParams,
    #[serde(default)]
    pub retrieval: RetrievalSettings,
    #[serde(default)]
    pub backend: BackendConfig,
    #[serde(skip)]
    base_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn new(test: impl Into<PathBuf>, output_dir: impl Into<PathBuf>, strategy: Strategy, generation: GenerationParams) -> Self {
        ExperimentConfig {
            name: None,
            test: test.into(),
            train: None,
            output_dir: output_dir.into(),
            cache_dir: None,
            no_cache: false,
            concurrency: default_concurrency(),
            match_mode: MatchMode::default(),
            output_grammar: OutputGrammar::default(),
            templates: None,
            strategy,
            generation,
            retrieval: RetrievalSettings::default(),
            backend: BackendConfig::default(),
            base_dir: PathBuf::new(),
        }
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path).map_err(|source| PipelineError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("")).to_path_buf();
        Self::from_toml_str(&text, base).map_err(|e| match e {
            PipelineError::Config(m) => PipelineError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn from_toml_str(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self, PipelineError> {
        let mut cfg: ExperimentConfig = toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        cfg.base_dir = base_dir.into();
        Ok(cfg)
    }

    pub fn base_dir(&self) -> &Path {
        &self.base_dir
    }

    pub fn with_base_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.base_dir = dir.into();
        self
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    pub fn output_path(&self) -> PathBuf {
        self.resolve(&self.output_dir)
    }

    /// Where responses are cached, or `None` with `no_cache`.
    pub fn cache_path(&self) -> Option<PathBuf> {
        if self.no_cache {
            return None;
        }
        Some(match &self.cache_dir {
            Some(dir) => self.resolve(dir),
            None => self.output_path().join("cache"),
        })
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        self.strategy.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        self.generation.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        if self.concurrency == 0 {
            return Err(PipelineError::Config("concurrency must be at least 1".into()));
        }
        if matches!(self.strategy.context, ContextKind::Titles | ContextKind::Demonstrations) {
            if self.train.is_none() {
                return Err(PipelineError::Config("retrieved context needs a training set (`train`)".into()));
            }
            if self.strategy.selector == Some(SelectorKind::Dense) && self.retrieval.embeddings.is_none() {
                return Err(PipelineError::Config("dense selector needs `retrieval.embeddings`".into()));
            }
        }
        if self.backend.kind == BackendKind::Mock && self.backend.script.is_none() {
            return Err(PipelineError::Config("mock backend needs `backend.script`".into()));
        }
        if self.backend.kind == BackendKind::Http && self.generation.endpoint_url.trim().is_empty() {
            return Err(PipelineError::Config("http backend needs `generation.endpoint_url`".into()));
        }
        Ok(())
    }

    /// A gateway for this config's backend, cache, retry policy and
    /// concurrency limit.
    pub fn build_gateway(&self) -> Result<Gateway, PipelineError> {
        let backend: Arc<dyn Backend> = match self.backend.kind {
            BackendKind::Http => Arc::new(HttpBackend::new(Duration::from_secs(self.backend.timeout_secs))),
            BackendKind::Mock => {
                let script = self
                    .backend
                    .script
                    .as_ref()
                    .ok_or_else(|| PipelineError::Config("mock backend needs `backend.script`".into()))?;
                Arc::new(MockBackend::from_script(&self.resolve(script)).map_err(PipelineError::Config)?)
            }
        };
        Ok(self.gateway_with(backend))
    }

    /// Like [`build_gateway`](Self::build_gateway) with a caller-supplied
    /// backend.
    pub fn gateway_with(&self, backend: Arc<dyn Backend>) -> Gateway {
        let mut gateway = Gateway::new(backend)
            .with_retry(self.backend.retry)
            .with_concurrency(self.concurrency);
        if let Some(dir) = self.cache_path() {
            gateway = gateway.with_cache(ResponseCache::new(dir));
        }
        gateway
    }
}
