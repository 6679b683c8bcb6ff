use std::path::PathBuf;
use std::time::Duration;

use serde_json::json;

use super::{variables_digest, BackendError, BackendKind, ChatBackend, ChatRequest};

/// Answers from `<dir>/<template_id>/<digest>.txt`, where the digest is
/// [`variables_digest`] of the request variables. A missing fixture is a
/// hard error naming the key.
#[derive(Debug, Clone)]
pub struct MockBackend {
    dir: PathBuf,
}

impl MockBackend {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn fixture_path(&self, req: &ChatRequest) -> PathBuf {
        self.dir.join(&req.template_id).join(format!("{}.txt", variables_digest(&req.variables)))
    }
}

impl ChatBackend for MockBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Mock
    }

    fn chat(&self, req: &ChatRequest) -> Result<String, BackendError> {
        let path = self.fixture_path(req);
        std::fs::read_to_string(&path).map_err(|_| {
            BackendError::Fatal(format!(
                "no mock fixture for key {}/{} ({})",
                req.template_id,
                variables_digest(&req.variables),
                path.display()
            ))
        })
    }
}

type Responder = dyn Fn(&ChatRequest) -> Result<String, BackendError> + Send + Sync;

/// In-process scripted backend; reports itself as a mock.
pub struct FnBackend {
    f: Box<Responder>,
}

impl FnBackend {
    pub fn new(f: impl Fn(&ChatRequest) -> Result<String, BackendError> + Send + Sync + 'static) -> Self {
        Self { f: Box::new(f) }
    }
}

impl ChatBackend for FnBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Mock
    }

    fn chat(&self, req: &ChatRequest) -> Result<String, BackendError> {
        (self.f)(req)
    }
}

/// Chat completion over HTTP in the Ollama `/api/chat` wire shape.
pub struct OllamaBackend {
    endpoint: String,
    client: reqwest::blocking::Client,
}

impl OllamaBackend {
    pub fn new(endpoint: &str, timeout: Duration) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| BackendError::Fatal(e.to_string()))?;
        Ok(Self { endpoint: endpoint.trim_end_matches('/').to_string(), client })
    }
}

impl ChatBackend for OllamaBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Live
    }

    fn chat(&self, req: &ChatRequest) -> Result<String, BackendError> {
        let mut options = json!({ "temperature": req.temperature });
        if let Some(seed) = req.seed {
            options["seed"] = json!(seed);
        }
        let body = json!({
            "model": req.model,
            "stream": false,
            "options": options,
            "messages": req.messages.iter()
                .map(|m| json!({ "role": m.role.as_str(), "content": m.content }))
                .collect::<Vec<_>>(),
        });
        let resp = self
            .client
            .post(format!("{}/api/chat", self.endpoint))
            .json(&body)
            .send()
            .map_err(|e| BackendError::Transient(e.to_string()))?;
        let status = resp.status();
        if status.is_server_error() {
            return Err(BackendError::Transient(format!("HTTP {status}")));
        }
        if !status.is_success() {
            return Err(BackendError::Fatal(format!("HTTP {status}")));
        }
        let value: serde_json::Value = resp.json().map_err(|e| BackendError::Transient(e.to_string()))?;
        value["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| BackendError::Transient("response has no message.content".into()))
    }
}
