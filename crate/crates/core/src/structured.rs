//! Key-value record format for structured model responses.
//!
//! A response is a sequence of records. A record starts with a header line
//! `@kind` and continues with `key: value` lines until the next header.
//! Keys may repeat (list-valued fields). Lines before the first header form
//! a record with an empty kind, which is how single-record responses are
//! written. Blank lines and Markdown code fences are ignored.
//!
//! ```text
//! @symptom
//! id: s_001
//! symptom: insomnia
//! diagnosis: d_001
//! ```

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {message}")]
pub struct FormatError {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Record {
    pub kind: String,
    pub fields: Vec<(String, String)>,
}

impl Record {
    /// First value for `key`, trimmed; empty values count as absent.
    pub fn get(&self, key: &str) -> Option<&str> {
        self.fields.iter().find(|(k, v)| k == key && !v.is_empty()).map(|(_, v)| v.as_str())
    }

    pub fn get_all(&self, key: &str) -> Vec<&str> {
        self.fields.iter().filter(|(k, v)| k == key && !v.is_empty()).map(|(_, v)| v.as_str()).collect()
    }

    /// Keys not in `allowed`, deduplicated, in order of appearance.
    pub fn unknown_keys(&self, allowed: &[&str]) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for (k, _) in &self.fields {
            if !allowed.contains(&k.as_str()) && !out.contains(k) {
                out.push(k.clone());
            }
        }
        out
    }
}

/// Parse a response into records.
pub fn parse_records(text: &str) -> Result<Vec<Record>, FormatError> {
    let mut out: Vec<Record> = Vec::new();
    let mut current = Record::default();
    let mut started = false;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with("```") {
            continue;
        }
        if let Some(kind) = line.strip_prefix('@') {
            let kind = kind.trim();
            if kind.is_empty() || !kind.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
                return Err(FormatError { line: i + 1, message: format!("bad record header `{line}`") });
            }
            if started || !current.fields.is_empty() {
                out.push(std::mem::take(&mut current));
            }
            current.kind = kind.to_ascii_lowercase();
            started = true;
            continue;
        }
        let Some((key, value)) = line.split_once(':') else {
            return Err(FormatError { line: i + 1, message: format!("expected `key: value`, got `{line}`") });
        };
        let key = key.trim().trim_start_matches("- ").trim().to_ascii_lowercase();
        if key.is_empty() || !key.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
            return Err(FormatError { line: i + 1, message: format!("bad key `{key}`") });
        }
        current.fields.push((key, value.trim().to_string()));
    }
    if started || !current.fields.is_empty() {
        out.push(current);
    }
    Ok(out)
}

/// Parse a single flat record (no headers expected). Headers, if present,
/// are tolerated and their fields merged in order.
pub fn parse_flat(text: &str) -> Result<Record, FormatError> {
    let records = parse_records(text)?;
    let mut merged = Record::default();
    for r in records {
        merged.fields.extend(r.fields);
    }
    if merged.fields.is_empty() {
        return Err(FormatError { line: 0, message: "no fields in response".into() });
    }
    Ok(merged)
}

/// Parse a boolean field value.
pub fn parse_bool(v: &str) -> Option<bool> {
    match v.trim().to_ascii_lowercase().as_str() {
        "true" | "yes" | "y" | "1" => Some(true),
        "false" | "no" | "n" | "0" => Some(false),
        _ => None,
    }
}
