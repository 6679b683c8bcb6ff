//! Comparison systems: PHI masking, one-pass synthetic rewrite, and the
//! two-stage model-only rewrite.

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::gateway::{temperature_for, vars, Gateway, GatewayError, Operator};

#[derive(Debug, thiserror::Error)]
pub enum BaselineError {
    #[error("{0}: empty input")]
    EmptyInput(&'static str),
    #[error("{stage}: {source}")]
    Gateway {
        stage: &'static str,
        #[source]
        source: GatewayError,
    },
}

pub const PHI: &str = "phi";
pub const SDC: &str = "sdc";
pub const LLM_ONLY: &str = "llm_only";
pub const ALL: [&str; 3] = [PHI, SDC, LLM_ONLY];

/// Default SDC sampling temperature.
pub const SDC_TEMPERATURE: f64 = 0.7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PhiKind {
    Date,
    Phone,
    Email,
    Address,
    Age,
    Id,
    Name,
    Loc,
    Org,
}

impl PhiKind {
    pub fn placeholder(self) -> &'static str {
        match self {
            PhiKind::Date => "[DATE]",
            PhiKind::Phone => "[PHONE]",
            PhiKind::Email => "[EMAIL]",
            PhiKind::Address => "[ADDRESS]",
            PhiKind::Age => "[AGE]",
            PhiKind::Id => "[ID]",
            PhiKind::Name => "[NAME]",
            PhiKind::Loc => "[LOC]",
            PhiKind::Org => "[ORG]",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhiSpan {
    pub start: usize,
    pub end: usize,
    pub kind: PhiKind,
}

/// Named-entity recognizer for person, location and organization spans.
pub trait NerBackend: Send + Sync {
    fn entities(&self, text: &str) -> Result<Vec<PhiSpan>, String>;
}

/// Names introduced by an honorific ("Dr. Reyes", "Mrs. Ann Cole").
pub struct HonorificNer;

impl NerBackend for HonorificNer {
    fn entities(&self, text: &str) -> Result<Vec<PhiSpan>, String> {
        static RE: OnceLock<Regex> = OnceLock::new();
        let re = RE
            .get_or_init(|| Regex::new(r"\b(?:Mr|Mrs|Ms|Miss|Dr|Prof)\.?\s+([A-Z][a-z]+(?:\s+[A-Z][a-z]+)?)").unwrap());
        Ok(re
            .captures_iter(text)
            .map(|c| {
                let m = c.get(1).unwrap();
                PhiSpan { start: m.start(), end: m.end(), kind: PhiKind::Name }
            })
            .collect())
    }
}

const MONTHS: &str = "January|February|March|April|May|June|July|August|September|October|November|December|\
                      Jan|Feb|Mar|Apr|Jun|Jul|Aug|Sep|Sept|Oct|Nov|Dec";

fn rules() -> &'static Vec<(Regex, PhiKind)> {
    static RE: OnceLock<Vec<(Regex, PhiKind)>> = OnceLock::new();
    RE.get_or_init(|| {
        let r = |p: &str, k| (Regex::new(p).unwrap(), k);
        vec![
            r(r"\b\d{4}-\d{1,2}-\d{1,2}\b", PhiKind::Date),
            r(r"\b\d{1,2}[/.]\d{1,2}[/.]\d{2,4}\b", PhiKind::Date),
            r(&format!(r"\b(?:{MONTHS})\.?\s+\d{{1,2}}(?:st|nd|rd|th)?,?\s+\d{{4}}\b"), PhiKind::Date),
            r(&format!(r"\b\d{{1,2}}(?:st|nd|rd|th)?\s+(?:{MONTHS})\.?,?\s+\d{{4}}\b"), PhiKind::Date),
            r(&format!(r"\b(?:{MONTHS})\.?\s+\d{{4}}\b"), PhiKind::Date),
            r(r"[\w.+-]+@[\w-]+(?:\.[\w-]+)+", PhiKind::Email),
            r(r"(?:\+?1[-. ]?)?(?:\(\d{3}\)\s?|\b\d{3}[-. ])\d{3}[-. ]\d{4}\b", PhiKind::Phone),
            r(r"\b\d{3}-\d{2}-\d{4}\b", PhiKind::Id),
            r(r"(?i)\b(?:mrn|medical record(?: number)?|record no\.?|patient id)\s*[#:]?\s*[A-Z0-9-]{4,}", PhiKind::Id),
            r(r"\b\d{6,}\b", PhiKind::Id),
            r(
                r"\b\d{1,5}\s+(?:[A-Z][a-z]+\s+){1,3}(?:Street|St|Avenue|Ave|Road|Rd|Boulevard|Blvd|Lane|Ln|Drive|Dr|Court|Ct|Way|Place|Pl)\b\.?",
                PhiKind::Address,
            ),
        ]
    })
}

fn age_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)\b(\d{2,3})(?:[- ]years?[- ]old|[- ]yo\b)|\baged?\s+(\d{2,3})\b").unwrap())
}

pub fn regex_spans(text: &str) -> Vec<PhiSpan> {
    let mut out: Vec<PhiSpan> = Vec::new();
    for (re, kind) in rules() {
        out.extend(re.find_iter(text).map(|m| PhiSpan { start: m.start(), end: m.end(), kind: *kind }));
    }
    for c in age_re().captures_iter(text) {
        let m = c.get(1).or_else(|| c.get(2)).unwrap();
        if m.as_str().parse::<u32>().is_ok_and(|a| a > 89) {
            out.push(PhiSpan { start: m.start(), end: m.end(), kind: PhiKind::Age });
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Masked {
    pub text: String,
    pub spans: Vec<PhiSpan>,
    /// Set when the NER backend was missing or failed.
    pub regex_only: bool,
}

/// Replace PHI spans with typed placeholders. Overlaps resolve to the
/// earliest, then longest, span.
pub fn phi_mask(text: &str, ner: Option<&dyn NerBackend>) -> Masked {
    let mut spans = regex_spans(text);
    let regex_only = match ner.map(|n| n.entities(text)) {
        Some(Ok(found)) => {
            spans.extend(found.into_iter().filter(|s| s.start < s.end && s.end <= text.len()));
            false
        }
        _ => true,
    };
    spans.sort_by(|a, b| a.start.cmp(&b.start).then(b.end.cmp(&a.end)).then(a.kind.cmp(&b.kind)));
    let mut kept: Vec<PhiSpan> = Vec::new();
    for s in spans {
        if kept.last().is_none_or(|k| s.start >= k.end) {
            kept.push(s);
        }
    }
    let mut out = String::with_capacity(text.len());
    let mut last = 0;
    for s in &kept {
        out.push_str(&text[last..s.start]);
        out.push_str(s.kind.placeholder());
        last = s.end;
    }
    out.push_str(&text[last..]);
    Masked { text: out, spans: kept, regex_only }
}

/// One unconstrained rewrite of the whole case.
pub fn sdc_rewrite(text: &str, gw: &Gateway, temperature: f64) -> Result<String, BaselineError> {
    if text.trim().is_empty() {
        return Err(BaselineError::EmptyInput(SDC));
    }
    let v = vars([("case_text", text.to_string())]);
    let r = gw.ask("baseline_sdc", &v, temperature).map_err(|e| BaselineError::Gateway { stage: SDC, source: e })?;
    Ok(r.text.trim().to_string())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmOnly {
    pub draft: String,
    pub text: String,
}

/// Rewrite, then audit the rewrite.
pub fn llm_only(text: &str, gw: &Gateway) -> Result<LlmOnly, BaselineError> {
    if text.trim().is_empty() {
        return Err(BaselineError::EmptyInput(LLM_ONLY));
    }
    let draft = gw
        .ask("llm_only_rewrite", &vars([("case_text", text.to_string())]), temperature_for(Operator::LlmOnlyRewrite))
        .map_err(|e| BaselineError::Gateway { stage: "llm_only stage 1", source: e })?
        .text
        .trim()
        .to_string();
    let audited = gw
        .ask("llm_only_critique", &vars([("draft_text", draft.clone())]), temperature_for(Operator::LlmOnlyCritique))
        .map_err(|e| BaselineError::Gateway { stage: "llm_only stage 2", source: e })?
        .text
        .trim()
        .to_string();
    Ok(LlmOnly { draft, text: audited })
}
