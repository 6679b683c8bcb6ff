use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::RwLock;

use sha2::{Digest, Sha256};

use super::ChatRequest;

/// Response cache keyed by (model, temperature, seed, messages). Safe for
/// concurrent use; optionally mirrored to a directory.
#[derive(Debug, Default)]
pub struct ResponseCache {
    mem: RwLock<HashMap<String, String>>,
    dir: Option<PathBuf>,
}

impl ResponseCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn on_disk(dir: impl Into<PathBuf>) -> Self {
        Self { mem: RwLock::default(), dir: Some(dir.into()) }
    }

    pub fn key(req: &ChatRequest) -> String {
        let mut h = Sha256::new();
        h.update(req.model.as_bytes());
        h.update([0]);
        h.update(req.temperature.to_bits().to_le_bytes());
        match req.seed {
            Some(s) => {
                h.update([1]);
                h.update(s.to_le_bytes());
            }
            None => h.update([0]),
        }
        for m in &req.messages {
            h.update(m.role.as_str().as_bytes());
            h.update([0]);
            h.update((m.content.len() as u64).to_le_bytes());
            h.update(m.content.as_bytes());
        }
        hex::encode(h.finalize())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        if let Some(hit) = self.mem.read().unwrap().get(key) {
            return Some(hit.clone());
        }
        let text = std::fs::read_to_string(self.dir.as_ref()?.join(format!("{key}.txt"))).ok()?;
        self.mem.write().unwrap().insert(key.to_string(), text.clone());
        Some(text)
    }

    pub fn put(&self, key: &str, text: &str) {
        self.mem.write().unwrap().insert(key.to_string(), text.to_string());
        if let Some(dir) = &self.dir {
            let written =
                std::fs::create_dir_all(dir).and_then(|_| std::fs::write(dir.join(format!("{key}.txt")), text));
            if let Err(e) = written {
                log::warn!("cache write to {} failed: {e}", dir.display());
            }
        }
    }
}
