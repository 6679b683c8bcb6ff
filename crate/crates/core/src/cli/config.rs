use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::SDC_TEMPERATURE;
use crate::evaluator::{Embedder, EvalSettings, HashedEmbedder, HttpEmbedder, THETA};
use crate::gateway::{ChatBackend, Gateway, GatewayConfig, MockBackend, OllamaBackend, ResponseCache};
use crate::perturber::PerturbConfig;

use super::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendChoice {
    Live,
    Mock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GatewaySection {
    pub backend: BackendChoice,
    pub endpoint: String,
    pub model: String,
    /// Fixture directory of the mock backend.
    pub fixtures: Option<PathBuf>,
    /// Response cache directory; in-memory when unset.
    pub cache: Option<PathBuf>,
    pub max_attempts: u32,
    pub backoff_ms: u64,
    pub timeout_secs: u64,
}

impl Default for GatewaySection {
    fn default() -> Self {
        let g = GatewayConfig::default();
        Self {
            backend: BackendChoice::Live,
            endpoint: "http://localhost:11434".into(),
            model: g.model,
            fixtures: None,
            cache: None,
            max_attempts: g.max_attempts,
            backoff_ms: g.backoff_ms,
            timeout_secs: 600,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum EmbedderChoice {
    Hashed {
        #[serde(default = "default_dim")]
        dim: usize,
    },
    Http {
        model: String,
        #[serde(default = "default_max_chars")]
        max_chars: usize,
    },
}

fn default_dim() -> usize {
    HashedEmbedder::default().dim
}

fn default_max_chars() -> usize {
    8000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub theta: f64,
    pub embedder: EmbedderChoice,
    pub embedding_matcher: bool,
    pub judge: bool,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            theta: THETA,
            embedder: EmbedderChoice::Hashed { dim: default_dim() },
            embedding_matcher: false,
            judge: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineSection {
    pub sdc_temperature: f64,
    /// Mask honorific-introduced names in the PHI baseline.
    pub ner: bool,
}

impl Default for BaselineSection {
    fn default() -> Self {
        Self { sdc_temperature: SDC_TEMPERATURE, ner: true }
    }
}

/// The whole run configuration. `seed` drives the gateway, the perturber
/// and the judge's A/B assignment; `perturb.seed` is overwritten by it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub jobs: usize,
    pub gateway: GatewaySection,
    pub perturb: PerturbConfig,
    pub eval: EvalSection,
    pub baseline: BaselineSection,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: 0,
            jobs: 1,
            gateway: GatewaySection::default(),
            perturb: PerturbConfig::default(),
            eval: EvalSection::default(),
            baseline: BaselineSection::default(),
        }
    }
}

/// Command-line and environment overrides applied on top of the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub backend: Option<BackendChoice>,
    pub endpoint: Option<String>,
    pub model: Option<String>,
}

impl Config {
    pub fn from_yaml(text: &str) -> Result<Self, CliError> {
        serde_yaml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Load a config file. Relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_yaml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.gateway.fixtures, &mut cfg.gateway.cache].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn apply(mut self, o: &Overrides) -> Self {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(j) = o.jobs {
            self.jobs = j;
        }
        if let Some(b) = o.backend {
            self.gateway.backend = b;
        }
        if let Some(e) = &o.endpoint {
            self.gateway.endpoint = e.clone();
        }
        if let Some(m) = &o.model {
            self.gateway.model = m.clone();
        }
        self
    }

    /// The config as it is actually used.
    pub fn effective(&self) -> Self {
        let mut c = self.clone();
        c.perturb.seed = c.seed;
        c.jobs = c.jobs.max(1);
        c
    }

    pub fn check(&self) -> Result<(), CliError> {
        self.perturb.check().map_err(|e| CliError::Config(e.to_string()))?;
        if !(self.eval.theta > 0.0 && self.eval.theta <= 1.0) {
            return Err(CliError::Config("eval.theta must lie in (0, 1]".into()));
        }
        if !(0.0..=2.0).contains(&self.baseline.sdc_temperature) {
            return Err(CliError::Config("baseline.sdc_temperature must lie in [0, 2]".into()));
        }
        if self.gateway.backend == BackendChoice::Mock && self.gateway.fixtures.is_none() {
            return Err(CliError::Config("mock backend needs gateway.fixtures".into()));
        }
        Ok(())
    }

    /// sha256 of the effective config serialized as YAML.
    pub fn digest(&self) -> String {
        let yaml = serde_yaml::to_string(&self.effective()).expect("config serializes");
        hex::encode(Sha256::digest(yaml.as_bytes()))
    }

    pub fn eval_settings(&self) -> EvalSettings {
        EvalSettings {
            theta: self.eval.theta,
            embedding_matcher: self.eval.embedding_matcher,
            judge: self.eval.judge,
            seed: self.seed,
        }
    }
}

/// Everything a command needs, built once from the effective config.
pub struct RunContext {
    pub config: Config,
    pub gateway: Gateway,
    pub embedder: Arc<dyn Embedder>,
    pub pool: rayon::ThreadPool,
}

impl RunContext {
    pub fn new(config: &Config) -> Result<Self, CliError> {
        config.check()?;
        let g = &config.gateway;
        let backend: Arc<dyn ChatBackend> = match g.backend {
            BackendChoice::Mock => {
                let dir = g.fixtures.clone().expect("checked");
                if !dir.is_dir() {
                    return Err(CliError::Config(format!("fixture directory {} not found", dir.display())));
                }
                Arc::new(MockBackend::new(dir))
            }
            BackendChoice::Live => Arc::new(
                OllamaBackend::new(&g.endpoint, Duration::from_secs(g.timeout_secs))
                    .map_err(|e| CliError::Config(e.to_string()))?,
            ),
        };
        Self::with_backend(config, backend)
    }

    /// Context around a caller-supplied chat backend; `gateway.backend`
    /// and `gateway.fixtures` are not consulted.
    pub fn with_backend(config: &Config, backend: Arc<dyn ChatBackend>) -> Result<Self, CliError> {
        let config = config.effective();
        let g = &config.gateway;
        let cache = match &g.cache {
            Some(dir) => ResponseCache::on_disk(dir),
            None => ResponseCache::in_memory(),
        };
        let gw_cfg = GatewayConfig {
            model: g.model.clone(),
            seed: config.seed,
            max_attempts: g.max_attempts,
            backoff_ms: g.backoff_ms,
        };
        let gateway = Gateway::new(backend, gw_cfg, Some(cache));
        let embedder: Arc<dyn Embedder> = match &config.eval.embedder {
            EmbedderChoice::Hashed { dim } => Arc::new(HashedEmbedder { dim: (*dim).max(1) }),
            EmbedderChoice::Http { model, max_chars } => Arc::new(
                HttpEmbedder::new(&g.endpoint, model, *max_chars, Duration::from_secs(g.timeout_secs))
                    .map_err(|e| CliError::Config(e.to_string()))?,
            ),
        };
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.jobs)
            .build()
            .map_err(|e| CliError::Config(e.to_string()))?;
        Ok(Self { config, gateway, embedder, pool })
    }
}
