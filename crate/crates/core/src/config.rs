//! Single-file JSON configuration for the command-line tool.
//!
//! Relative paths are resolved against the directory holding the config
//! file. Unknown keys are rejected; type errors and range violations are
//! reported as [`Error::Config`] naming the offending field.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::allocator::OperatorCatalog;
use crate::embedding::{Embedder, HashingEmbedder, HttpEmbedder, HttpEmbedderConfig, DEFAULT_DIM};
use crate::engine::{Engine, EngineShape};
use crate::error::{Error, Result};
use crate::executor::{Backend, BackendSet, HttpBackendConfig, HttpChatBackend, ScriptedBackend};
use crate::harness::{ExecutorEnvironment, ReportFormat, SimEnvironment};
use crate::optimizer::TrainingConfig;
use crate::router::ModelPool;
use crate::simulation::SimulationConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EmbeddingConfig {
    Hashing {
        #[serde(default = "default_dim")]
        dim: usize,
        #[serde(default)]
        seed: u64,
    },
    Http(HttpEmbedderConfig),
}

fn default_dim() -> usize {
    DEFAULT_DIM
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        EmbeddingConfig::Hashing {
            dim: DEFAULT_DIM,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    pub tau: f64,
    pub l_max: usize,
    pub temperature: f64,
    pub latent_dim: usize,
    pub head_hidden: usize,
    pub scorer_hidden: usize,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        let s = EngineShape::default();
        Self {
            tau: s.tau,
            l_max: s.l_max,
            temperature: s.temperature,
            latent_dim: s.latent_dim,
            head_hidden: s.head_hidden,
            scorer_hidden: s.scorer_hidden,
        }
    }
}

impl PolicyConfig {
    pub fn shape(&self) -> EngineShape {
        EngineShape {
            latent_dim: self.latent_dim,
            head_hidden: self.head_hidden,
            scorer_hidden: self.scorer_hidden,
            tau: self.tau,
            l_max: self.l_max,
            temperature: self.temperature,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::config("policy.tau", "must lie in (0, 1)"));
        }
        if self.l_max < 1 {
            return Err(Error::config("policy.l_max", "must be at least 1"));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::config("policy.temperature", "must be positive"));
        }
        for (field, v) in [
            ("policy.latent_dim", self.latent_dim),
            ("policy.head_hidden", self.head_hidden),
            ("policy.scorer_hidden", self.scorer_hidden),
        ] {
            if v == 0 {
                return Err(Error::config(field, "must be positive"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvironmentKind {
    #[default]
    Simulator,
    Backends,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleConfig {
    pub needle: String,
    pub response: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BackendConfig {
    Scripted {
        #[serde(default)]
        fixture: Option<PathBuf>,
        #[serde(default)]
        rules: Vec<RuleConfig>,
        #[serde(default)]
        default_response: Option<String>,
    },
    Http(HttpBackendConfig),
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub seed: u64,
    pub embedding: EmbeddingConfig,
    /// Operator profile file; the builtin catalog when absent.
    pub operators: Option<PathBuf>,
    /// Model card file; the builtin pool when absent.
    pub models: Option<PathBuf>,
    pub policy: PolicyConfig,
    pub training: TrainingConfig,
    pub train_dataset: Option<PathBuf>,
    pub eval_dataset: Option<PathBuf>,
    pub environment: EnvironmentKind,
    pub sim: SimEnvironment,
    /// Model name, or `default` for the catch-all, to backend.
    pub backends: BTreeMap<String, BackendConfig>,
    pub checkpoint: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub report_format: Option<String>,
    pub training_log: Option<PathBuf>,
    pub simulation: SimulationConfig,
}

fn resolve(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(path) = p {
        if path.is_relative() {
            *path = base.join(&*path);
        }
    }
}

fn require_file(field: &str, p: &Option<PathBuf>) -> Result<()> {
    match p {
        Some(path) if !path.is_file() => Err(Error::config(field, format!("file not found: {}", path.display()))),
        _ => Ok(()),
    }
}

impl EngineConfig {
    /// Parse JSON text; `base` anchors relative paths.
    pub fn from_json(text: &str, base: &Path) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let mut cfg: EngineConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let field = e.path().to_string();
            Error::config(if field == "." { "<root>".to_string() } else { field }, e.into_inner().to_string())
        })?;
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config("config", format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let cfg = Self::from_json(&text, base)?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        for p in [
            &mut self.operators,
            &mut self.models,
            &mut self.train_dataset,
            &mut self.eval_dataset,
            &mut self.checkpoint,
            &mut self.report,
            &mut self.training_log,
        ] {
            resolve(base, p);
        }
        for b in self.backends.values_mut() {
            if let BackendConfig::Scripted { fixture, .. } = b {
                resolve(base, fixture);
            }
        }
    }

    /// Range checks plus existence of every input file.
    pub fn validate(&self) -> Result<()> {
        self.policy.validate()?;
        self.training
            .validate()
            .map_err(|e| prefix_field(e, "training"))?;
        if !(self.sim.alpha > 0.0 && self.sim.alpha.is_finite()) {
            return Err(Error::config("sim.alpha", "must be positive"));
        }
        if !(self.sim.beta >= 0.0 && self.sim.beta.is_finite()) {
            return Err(Error::config("sim.beta", "must be non-negative"));
        }
        if let EmbeddingConfig::Hashing { dim: 0, .. } = self.embedding {
            return Err(Error::config("embedding.dim", "must be positive"));
        }
        self.report_format()?;
        require_file("operators", &self.operators)?;
        require_file("models", &self.models)?;
        require_file("train_dataset", &self.train_dataset)?;
        require_file("eval_dataset", &self.eval_dataset)?;
        for (name, b) in &self.backends {
            if let BackendConfig::Scripted { fixture, .. } = b {
                require_file(&format!("backends.{name}.fixture"), fixture)?;
            }
        }
        if self.environment == EnvironmentKind::Backends && self.backends.is_empty() {
            return Err(Error::config("backends", "the backends environment needs at least one backend"));
        }
        Ok(())
    }

    pub fn report_format(&self) -> Result<ReportFormat> {
        match &self.report_format {
            None => Ok(ReportFormat::Json),
            Some(s) => s.parse().map_err(|_| Error::config("report_format", format!("unknown format `{s}`"))),
        }
    }

    pub fn embedder(&self) -> Result<Arc<dyn Embedder>> {
        Ok(match &self.embedding {
            EmbeddingConfig::Hashing { dim, seed } => Arc::new(HashingEmbedder::new(*dim, *seed)),
            EmbeddingConfig::Http(c) => Arc::new(HttpEmbedder::new(c.clone())?),
        })
    }

    /// Fresh engine with parameters drawn from `self.seed`.
    pub fn build_engine(&self) -> Result<Engine> {
        let embedder = self.embedder()?;
        let catalog = match &self.operators {
            Some(p) => OperatorCatalog::load(p, embedder.as_ref())?,
            None => OperatorCatalog::builtin(embedder.as_ref())?,
        };
        let pool = match &self.models {
            Some(p) => ModelPool::load(p, embedder.as_ref())?,
            None => ModelPool::builtin(embedder.as_ref())?,
        };
        Engine::new(embedder, catalog, pool, self.policy.shape(), self.seed)
    }

    pub fn backend_set(&self) -> Result<BackendSet> {
        let mut set = BackendSet::new();
        for (name, cfg) in &self.backends {
            let backend: Arc<dyn Backend> = match cfg {
                BackendConfig::Scripted {
                    fixture,
                    rules,
                    default_response,
                } => {
                    let mut b = match fixture {
                        Some(p) => ScriptedBackend::load(p)?,
                        None => ScriptedBackend::new(),
                    };
                    for r in rules {
                        b = b.with_rule(r.needle.clone(), r.response.clone());
                    }
                    if let Some(d) = default_response {
                        b = b.with_default(d.clone());
                    }
                    Arc::new(b)
                }
                BackendConfig::Http(c) => Arc::new(HttpChatBackend::new(c.clone())),
            };
            if name == "default" {
                set = set.with_fallback(backend);
            } else {
                set.insert(name.clone(), backend);
            }
        }
        Ok(set)
    }

    pub fn executor_environment(&self) -> Result<ExecutorEnvironment> {
        Ok(ExecutorEnvironment {
            backends: self.backend_set()?,
        })
    }
}

fn prefix_field(e: Error, prefix: &str) -> Error {
    match e {
        Error::Config { field, message } => Error::Config {
            field: format!("{prefix}.{field}"),
            message,
        },
        other => other,
    }
}
