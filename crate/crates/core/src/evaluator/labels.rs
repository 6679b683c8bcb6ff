//! Diagnosis label canonicalization and soft-F1.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use regex::Regex;
use serde::Deserialize;

use super::embed::{cosine, Embedder};
use super::EvalError;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CanonFile {
    specifiers: Vec<String>,
    synonyms: BTreeMap<String, String>,
    substances: BTreeMap<String, String>,
}

/// Specifier patterns, synonym map and substance classes.
#[derive(Debug, Clone)]
pub struct Canonicalizer {
    specifiers: Vec<Regex>,
    synonyms: BTreeMap<String, String>,
    substances: Vec<(String, String)>,
}

fn norm(s: &str) -> String {
    let s = s.to_lowercase().replace(['-', '/', '\u{2013}'], " ");
    let s = s.split_whitespace().collect::<Vec<_>>().join(" ");
    s.trim_end_matches(|c: char| matches!(c, '.' | ',' | ';' | ':') || c.is_whitespace()).trim().to_string()
}

impl Canonicalizer {
    pub fn from_yaml(text: &str) -> Result<Self, EvalError> {
        let f: CanonFile = serde_yaml::from_str(text).map_err(|e| EvalError::Data(e.to_string()))?;
        let specifiers = f
            .specifiers
            .iter()
            .map(|p| Regex::new(&format!(r"(?:\s*,\s*|\s*\(\s*|\s+)(?:{p})\s*\)?\s*$")))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| EvalError::Data(e.to_string()))?;
        let synonyms = f.synonyms.iter().map(|(k, v)| (norm(k), norm(v))).collect();
        let mut substances: Vec<(String, String)> = f.substances.iter().map(|(k, v)| (norm(k), v.clone())).collect();
        // longest names first so "methamphetamine" wins over "amphetamine"
        substances.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then(a.0.cmp(&b.0)));
        Ok(Self { specifiers, synonyms, substances })
    }

    /// The bundled canonicalization data. Built once; clones share the
    /// compiled patterns.
    pub fn shipped() -> Self {
        static SHIPPED: OnceLock<Canonicalizer> = OnceLock::new();
        SHIPPED
            .get_or_init(|| {
                Self::from_yaml(include_str!("../../assets/data/diagnosis_canon.yaml"))
                    .expect("shipped canon data parses")
            })
            .clone()
    }

    pub fn canonicalize(&self, label: &str) -> String {
        let mut s = label.trim().to_lowercase();
        s = s.split_whitespace().collect::<Vec<_>>().join(" ");
        s = s.trim_end_matches(['.', ';']).to_string();
        loop {
            let before = s.clone();
            for re in &self.specifiers {
                if let Some(m) = re.find(&s) {
                    if m.start() > 0 {
                        s.truncate(m.start());
                    }
                }
            }
            if s == before {
                break;
            }
        }
        let mut s = norm(&s);
        if let Some(c) = self.synonyms.get(&s) {
            s = c.clone();
        }
        for (name, class) in &self.substances {
            if let Some(rest) = s.strip_prefix(name.as_str()) {
                if rest.starts_with(' ') {
                    s = format!("{class}{rest}");
                    break;
                }
            }
        }
        s
    }

    /// Canonical, deduplicated labels in first-seen order.
    pub fn label_set<S: AsRef<str>>(&self, labels: &[S]) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for l in labels {
            let c = self.canonicalize(l.as_ref());
            if !c.is_empty() && !out.contains(&c) {
                out.push(c);
            }
        }
        out
    }
}

pub fn canonicalize_diagnosis(label: &str, canon: &Canonicalizer) -> String {
    canon.canonicalize(label)
}

/// Default match threshold.
pub const THETA: f64 = 0.8;

/// Pair score for two canonical labels.
pub trait LabelMatcher {
    fn score(&self, a: &str, b: &str) -> Result<f64, EvalError>;
}

pub struct ExactMatcher;

impl LabelMatcher for ExactMatcher {
    fn score(&self, a: &str, b: &str) -> Result<f64, EvalError> {
        Ok(if a == b { 1.0 } else { 0.0 })
    }
}

/// Exact match scores 1; otherwise the cosine of the label embeddings.
pub struct EmbeddingMatcher<'a> {
    pub embedder: &'a dyn Embedder,
}

impl LabelMatcher for EmbeddingMatcher<'_> {
    fn score(&self, a: &str, b: &str) -> Result<f64, EvalError> {
        if a == b {
            return Ok(1.0);
        }
        Ok(cosine(&self.embedder.embed(a)?, &self.embedder.embed(b)?))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SoftF1 {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Matched (pred index, gold index, score).
    pub matches: Vec<(usize, usize, f64)>,
}

/// Greedy one-to-one matching over pairs scoring at least `theta`.
/// Inputs are expected to be canonical label sets.
pub fn soft_f1(pred: &[String], gold: &[String], matcher: &dyn LabelMatcher, theta: f64) -> Result<SoftF1, EvalError> {
    if pred.is_empty() && gold.is_empty() {
        return Ok(SoftF1 { precision: 1.0, recall: 1.0, f1: 1.0, matches: vec![] });
    }
    let mut pairs = Vec::new();
    for (i, p) in pred.iter().enumerate() {
        for (j, g) in gold.iter().enumerate() {
            let s = matcher.score(p, g)?;
            if s >= theta {
                pairs.push((i, j, s));
            }
        }
    }
    pairs.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
    let (mut used_p, mut used_g) = (vec![false; pred.len()], vec![false; gold.len()]);
    let mut matches = Vec::new();
    for (i, j, s) in pairs {
        if !used_p[i] && !used_g[j] {
            used_p[i] = true;
            used_g[j] = true;
            matches.push((i, j, s));
        }
    }
    let m = matches.len() as f64;
    let precision = if pred.is_empty() { 0.0 } else { m / pred.len() as f64 };
    let recall = if gold.is_empty() { 0.0 } else { m / gold.len() as f64 };
    let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
    Ok(SoftF1 { precision, recall, f1, matches })
}
