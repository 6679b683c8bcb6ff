//! Document embeddings and cosine similarity.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::text::tokens;

use super::EvalError;

pub trait Embedder: Send + Sync {
    fn name(&self) -> String;
    fn embed(&self, text: &str) -> Result<Vec<f64>, EvalError>;
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

pub fn doc_similarity(a: &str, b: &str, e: &dyn Embedder) -> Result<f64, EvalError> {
    Ok(cosine(&e.embed(a)?, &e.embed(b)?))
}

/// Hashed unigram + bigram term frequencies, L2-normalized.
#[derive(Debug, Clone)]
pub struct HashedEmbedder {
    pub dim: usize,
}

impl Default for HashedEmbedder {
    fn default() -> Self {
        Self { dim: 1 << 16 }
    }
}

impl HashedEmbedder {
    pub fn features(text: &str) -> Vec<String> {
        let toks = tokens(text);
        let mut out = toks.clone();
        out.extend(toks.windows(2).map(|w| format!("{} {}", w[0], w[1])));
        out
    }

    fn bucket(&self, feature: &str) -> usize {
        let h = Sha256::digest(feature.as_bytes());
        let n = u64::from_le_bytes(h[..8].try_into().unwrap());
        (n % self.dim as u64) as usize
    }
}

impl Embedder for HashedEmbedder {
    fn name(&self) -> String {
        format!("hashed-tf-{}", self.dim)
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, EvalError> {
        let mut v = vec![0.0; self.dim];
        for f in Self::features(text) {
            v[self.bucket(&f)] += 1.0;
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 0.0 {
            v.iter_mut().for_each(|x| *x /= n);
        }
        Ok(v)
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    model: &'a str,
    prompt: &'a str,
}

#[derive(Deserialize)]
struct EmbedResponse {
    embedding: Vec<f64>,
}

/// Ollama-compatible `/api/embeddings` client. Input longer than
/// `max_chars` is truncated.
pub struct HttpEmbedder {
    client: reqwest::blocking::Client,
    endpoint: String,
    model: String,
    max_chars: usize,
}

impl HttpEmbedder {
    pub fn new(endpoint: &str, model: &str, max_chars: usize, timeout: Duration) -> Result<Self, EvalError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| EvalError::Embedding(e.to_string()))?;
        Ok(Self { client, endpoint: endpoint.trim_end_matches('/').to_string(), model: model.to_string(), max_chars })
    }
}

impl Embedder for HttpEmbedder {
    fn name(&self) -> String {
        self.model.clone()
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, EvalError> {
        let cut: String = text.chars().take(self.max_chars).collect();
        let resp = self
            .client
            .post(format!("{}/api/embeddings", self.endpoint))
            .json(&EmbedRequest { model: &self.model, prompt: &cut })
            .send()
            .and_then(|r| r.error_for_status())
            .map_err(|e| EvalError::Embedding(e.to_string()))?;
        let body: EmbedResponse = resp.json().map_err(|e| EvalError::Embedding(e.to_string()))?;
        if body.embedding.is_empty() {
            return Err(EvalError::Embedding("empty embedding".into()));
        }
        Ok(body.embedding)
    }
}
