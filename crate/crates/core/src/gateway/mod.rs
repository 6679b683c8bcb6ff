//! Client abstraction for every model-assisted step.
//!
//! A [`Gateway`] renders a prompt template, consults the response cache,
//! calls the configured [`ChatBackend`] with retry and backoff, and records
//! every call for the per-case audit trail. The mock backend answers from
//! a fixture directory so whole pipelines run offline and reproducibly.

mod backend;
mod cache;
pub mod template;

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use backend::{FnBackend, MockBackend, OllamaBackend};
pub use cache::ResponseCache;

/// The operators whose temperatures are fixed by policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Operator {
    Convert,
    Perturb,
    Generate,
    LlmOnlyRewrite,
    LlmOnlyCritique,
}

pub fn temperature_for(op: Operator) -> f64 {
    match op {
        Operator::Convert => 0.1,
        Operator::Perturb => 0.7,
        Operator::Generate => 0.1,
        Operator::LlmOnlyRewrite => 0.2,
        Operator::LlmOnlyCritique => 0.0,
    }
}

/// Temperature of single-sentence symptom realization. Set above the
/// generation default so repeated symptoms do not read identically.
pub const SYMPTOM_SENTENCE_TEMPERATURE: f64 = 0.2;
/// Judge calls are scored, so they run greedy.
pub const JUDGE_TEMPERATURE: f64 = 0.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    pub template_id: String,
    pub messages: Vec<Message>,
    pub temperature: f64,
    pub seed: Option<u64>,
    pub model: String,
    /// Values substituted into the template; the mock backend keys on them.
    pub variables: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Live,
    Mock,
    Cache,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatResponse {
    pub text: String,
    pub backend: BackendKind,
    pub latency_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    /// Worth retrying (network errors, 5xx, timeouts).
    #[error("{0}")]
    Transient(String),
    /// Retrying cannot help (missing fixture, 4xx).
    #[error("{0}")]
    Fatal(String),
}

pub trait ChatBackend: Send + Sync {
    fn kind(&self) -> BackendKind;
    fn chat(&self, req: &ChatRequest) -> Result<String, BackendError>;
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GatewayError {
    #[error("template `{template_id}`: empty completion")]
    EmptyCompletion { template_id: String },
    #[error("template `{template_id}`: gave up after {attempts} attempts: {last}")]
    Exhausted { template_id: String, attempts: u32, last: String },
    #[error("template `{template_id}`: {message}")]
    Fatal { template_id: String, message: String },
    #[error("{0}")]
    Template(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatewayConfig {
    pub model: String,
    pub seed: u64,
    pub max_attempts: u32,
    pub backoff_ms: u64,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self { model: "gpt-oss:120b".into(), seed: 0, max_attempts: 3, backoff_ms: 500 }
    }
}

/// One gateway call as recorded in audit files.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallRecord {
    pub template_id: String,
    pub key: String,
    pub backend: BackendKind,
}

struct Inner {
    backend: Arc<dyn ChatBackend>,
    cache: Option<ResponseCache>,
    cfg: GatewayConfig,
}

/// Cheap to clone; clones share backend and cache. [`Gateway::for_case`]
/// gives a clone with its own call log.
#[derive(Clone)]
pub struct Gateway {
    inner: Arc<Inner>,
    calls: Arc<Mutex<Vec<CallRecord>>>,
}

/// Sha256 of the sorted variables, truncated to 16 hex characters. This is
/// the fixture key of the mock backend.
pub fn variables_digest(vars: &BTreeMap<String, String>) -> String {
    let mut h = Sha256::new();
    for (k, v) in vars {
        h.update(k.as_bytes());
        h.update([0x1f]);
        h.update(v.as_bytes());
        h.update([0x1e]);
    }
    hex::encode(h.finalize())[..16].to_string()
}

/// Outcome of a call whose output is checked by a validator and retried.
#[derive(Debug, Clone, PartialEq)]
pub enum Attempted<T> {
    Accepted { value: T, rejections: Vec<String> },
    Rejected { rejections: Vec<String> },
}

impl Gateway {
    pub fn new(backend: Arc<dyn ChatBackend>, cfg: GatewayConfig, cache: Option<ResponseCache>) -> Self {
        Self { inner: Arc::new(Inner { backend, cache, cfg }), calls: Arc::default() }
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.inner.cfg
    }

    pub fn backend_kind(&self) -> BackendKind {
        self.inner.backend.kind()
    }

    pub fn for_case(&self) -> Self {
        Self { inner: Arc::clone(&self.inner), calls: Arc::default() }
    }

    pub fn calls(&self) -> Vec<CallRecord> {
        self.calls.lock().unwrap().clone()
    }

    /// Render a template into a request. Attempt `n > 0` adds an `attempt`
    /// variable and offsets the seed so retries are distinct requests.
    pub fn request(
        &self,
        template_id: &str,
        vars: &BTreeMap<String, String>,
        temperature: f64,
        attempt: u32,
    ) -> Result<ChatRequest, GatewayError> {
        let t = template::get(template_id)?;
        let mut variables = vars.clone();
        if attempt > 0 {
            variables.insert("attempt".into(), attempt.to_string());
        }
        Ok(ChatRequest {
            template_id: template_id.to_string(),
            messages: t.render(vars)?,
            temperature,
            seed: Some(self.inner.cfg.seed + u64::from(attempt)),
            model: self.inner.cfg.model.clone(),
            variables,
        })
    }

    pub fn ask(
        &self,
        template_id: &str,
        vars: &BTreeMap<String, String>,
        temperature: f64,
    ) -> Result<ChatResponse, GatewayError> {
        self.complete(&self.request(template_id, vars, temperature, 0)?)
    }

    /// Ask, validate, and re-ask up to `retries` more times on rejection.
    /// Gateway errors end the loop and are returned as errors.
    pub fn ask_validated<T>(
        &self,
        template_id: &str,
        vars: &BTreeMap<String, String>,
        temperature: f64,
        retries: u32,
        mut validate: impl FnMut(&str) -> Result<T, String>,
    ) -> Result<Attempted<T>, GatewayError> {
        let mut rejections = Vec::new();
        for attempt in 0..=retries {
            let req = self.request(template_id, vars, temperature, attempt)?;
            let resp = self.complete(&req)?;
            match validate(&resp.text) {
                Ok(value) => return Ok(Attempted::Accepted { value, rejections }),
                Err(why) => rejections.push(why),
            }
        }
        Ok(Attempted::Rejected { rejections })
    }

    pub fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        if req.messages.is_empty() {
            return Err(GatewayError::Template(format!("template `{}`: no messages", req.template_id)));
        }
        let key = variables_digest(&req.variables);
        let cache_key = ResponseCache::key(req);
        if let Some(cache) = &self.inner.cache {
            if let Some(text) = cache.get(&cache_key) {
                self.record(req, &key, BackendKind::Cache);
                return Ok(ChatResponse { text, backend: BackendKind::Cache, latency_ms: 0 });
            }
        }

        let cfg = &self.inner.cfg;
        let backend = &self.inner.backend;
        let attempts = cfg.max_attempts.max(1);
        let mut last = String::new();
        let mut empty = false;
        for attempt in 0..attempts {
            if attempt > 0 && cfg.backoff_ms > 0 {
                std::thread::sleep(Duration::from_millis(cfg.backoff_ms << (attempt - 1)));
            }
            let started = std::time::Instant::now();
            match backend.chat(req) {
                Ok(text) if text.trim().is_empty() => {
                    empty = true;
                    last = "empty completion".into();
                }
                Ok(text) => {
                    let latency_ms = match backend.kind() {
                        BackendKind::Live => started.elapsed().as_millis() as u64,
                        _ => 0,
                    };
                    if let Some(cache) = &self.inner.cache {
                        cache.put(&cache_key, &text);
                    }
                    self.record(req, &key, backend.kind());
                    return Ok(ChatResponse { text, backend: backend.kind(), latency_ms });
                }
                Err(BackendError::Fatal(message)) => {
                    return Err(GatewayError::Fatal { template_id: req.template_id.clone(), message });
                }
                Err(BackendError::Transient(message)) => {
                    empty = false;
                    last = message;
                }
            }
            log::debug!("{}: attempt {} failed: {last}", req.template_id, attempt + 1);
        }
        if empty {
            return Err(GatewayError::EmptyCompletion { template_id: req.template_id.clone() });
        }
        Err(GatewayError::Exhausted { template_id: req.template_id.clone(), attempts, last })
    }

    fn record(&self, req: &ChatRequest, key: &str, backend: BackendKind) {
        self.calls.lock().unwrap().push(CallRecord {
            template_id: req.template_id.clone(),
            key: key.to_string(),
            backend,
        });
    }
}

/// Shorthand for building variable maps.
pub fn vars<const N: usize>(pairs: [(&str, String); N]) -> BTreeMap<String, String> {
    pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicU32, Ordering};

    fn gw(backend: impl ChatBackend + 'static, cache: Option<ResponseCache>) -> Gateway {
        let cfg = GatewayConfig { backoff_ms: 0, ..Default::default() };
        Gateway::new(Arc::new(backend), cfg, cache)
    }

    fn sdc_vars() -> BTreeMap<String, String> {
        vars([("case_text", "A 30-year-old man.".to_string())])
    }

    #[test]
    fn temperature_policy() {
        assert_eq!(temperature_for(Operator::Convert), 0.1);
        assert_eq!(temperature_for(Operator::Perturb), 0.7);
        assert_eq!(temperature_for(Operator::Generate), 0.1);
        assert_eq!(temperature_for(Operator::LlmOnlyRewrite), 0.2);
        assert_eq!(temperature_for(Operator::LlmOnlyCritique), 0.0);
    }

    #[test]
    fn transient_failures_are_retried() {
        let n = Arc::new(AtomicU32::new(0));
        let seen = Arc::clone(&n);
        let g = gw(
            FnBackend::new(move |_| {
                if seen.fetch_add(1, Ordering::SeqCst) < 2 {
                    Err(BackendError::Transient("503".into()))
                } else {
                    Ok("ok".into())
                }
            }),
            None,
        );
        assert_eq!(g.ask("baseline_sdc", &sdc_vars(), 0.7).unwrap().text, "ok");
        assert_eq!(n.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn exhausted_and_empty_errors_name_the_template() {
        let g = gw(FnBackend::new(|_| Err(BackendError::Transient("down".into()))), None);
        let err = g.ask("baseline_sdc", &sdc_vars(), 0.7).unwrap_err();
        assert!(matches!(err, GatewayError::Exhausted { attempts: 3, .. }));
        assert!(err.to_string().contains("baseline_sdc"));

        let g = gw(FnBackend::new(|_| Ok("  \n".into())), None);
        let err = g.ask("baseline_sdc", &sdc_vars(), 0.7).unwrap_err();
        assert!(err.to_string().contains("empty completion"));
    }

    #[test]
    fn fatal_errors_are_not_retried() {
        let n = Arc::new(AtomicU32::new(0));
        let seen = Arc::clone(&n);
        let g = gw(
            FnBackend::new(move |_| {
                seen.fetch_add(1, Ordering::SeqCst);
                Err(BackendError::Fatal("400".into()))
            }),
            None,
        );
        assert!(g.ask("baseline_sdc", &sdc_vars(), 0.7).is_err());
        assert_eq!(n.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn cache_hit_is_flagged_and_identical() {
        let g = gw(FnBackend::new(|_| Ok("rewritten".into())), Some(ResponseCache::in_memory()));
        let a = g.ask("baseline_sdc", &sdc_vars(), 0.7).unwrap();
        let b = g.ask("baseline_sdc", &sdc_vars(), 0.7).unwrap();
        assert_eq!(a.backend, BackendKind::Mock);
        assert_eq!(b.backend, BackendKind::Cache);
        assert_eq!(a.text, b.text);
        // a different temperature is a different key
        let c = g.ask("baseline_sdc", &sdc_vars(), 0.2).unwrap();
        assert_eq!(c.backend, BackendKind::Mock);
    }

    #[test]
    fn validated_retries_use_attempt_variable_and_seed() {
        let g = gw(
            FnBackend::new(|req| {
                Ok(match req.variables.get("attempt") {
                    None => "bad".into(),
                    Some(n) => format!("good {n} {}", req.seed.unwrap()),
                })
            }),
            None,
        );
        let out = g
            .ask_validated("baseline_sdc", &sdc_vars(), 0.7, 3, |t| {
                if t.starts_with("good") {
                    Ok(t.to_string())
                } else {
                    Err("rejected".into())
                }
            })
            .unwrap();
        assert_eq!(out, Attempted::Accepted { value: "good 1 1".into(), rejections: vec!["rejected".into()] });
        let calls = g.calls();
        assert_eq!(calls.len(), 2);
        assert_ne!(calls[0].key, calls[1].key);
    }

    #[test]
    fn for_case_has_separate_log() {
        let g = gw(FnBackend::new(|_| Ok("x".into())), None);
        let case = g.for_case();
        case.ask("baseline_sdc", &sdc_vars(), 0.7).unwrap();
        assert_eq!(case.calls().len(), 1);
        assert!(g.calls().is_empty());
    }
}
