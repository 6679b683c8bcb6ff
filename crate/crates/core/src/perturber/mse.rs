//! Minimal alignment of the mental status examination.

use std::collections::BTreeSet;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::gateway::{temperature_for, vars, Attempted, Gateway, Operator};
use crate::structured::parse_flat;
use crate::text::split_sentences;

use super::PerturbConfig;

const DOMAINS: &[(&str, &str)] = &[
    ("appearance", r"appear\w*|groom\w*|dress\w*|hygiene|kempt|unkempt"),
    ("speech", r"speech|spoke|speaks|speaking|articulat\w*"),
    ("mood", r"mood|dysphori\w*|euthymi\w*"),
    ("affect", r"affect"),
    (
        "thought process",
        r"thought process|linear|goal[- ]directed|tangential|circumstantial|flight of ideas|loose associations|disorganized",
    ),
    ("thought content", r"thought content|delusion\w*|suicidal|homicidal|ideation|obsession\w*|preoccup\w*"),
    ("perception", r"percept\w*|hallucinat\w*|illusion\w*"),
    ("orientation", r"orient\w*"),
    ("insight", r"insight"),
    ("judgment", r"judg(?:e)?ment"),
];

fn domain_res() -> &'static Vec<(&'static str, Regex)> {
    static RE: OnceLock<Vec<(&'static str, Regex)>> = OnceLock::new();
    RE.get_or_init(|| DOMAINS.iter().map(|(n, p)| (*n, Regex::new(&format!(r"(?i)\b(?:{p})\b")).unwrap())).collect())
}

/// MSE domains mentioned anywhere in `text`.
pub fn domains(text: &str) -> BTreeSet<&'static str> {
    let mut out = BTreeSet::new();
    for s in split_sentences(text) {
        for (name, re) in domain_res() {
            if re.is_match(&s) {
                out.insert(*name);
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MseOutcome {
    pub mental_status: String,
    pub skipped: bool,
    pub rejections: Vec<String>,
    pub flagged: bool,
}

/// Edit the MSE so it agrees with `changes`. An empty change list or an
/// empty MSE leaves it untouched without a model call.
pub fn align_mse(mental_status: &str, changes: &[String], gw: &Gateway, cfg: &PerturbConfig) -> MseOutcome {
    if changes.is_empty() || mental_status.trim().is_empty() {
        return MseOutcome {
            mental_status: mental_status.to_string(),
            skipped: true,
            rejections: vec![],
            flagged: false,
        };
    }
    let required = domains(mental_status);
    let v = vars([("changes", changes.join("\n")), ("mental_status", mental_status.to_string())]);
    let validate = |text: &str| -> Result<String, String> {
        let r = parse_flat(text).map_err(|e| e.to_string())?;
        let out = r.get("mental_status").ok_or("missing mental_status")?;
        let missing: Vec<&str> = required.difference(&domains(out)).copied().collect();
        if !missing.is_empty() {
            return Err(format!("dropped domains: {}", missing.join(", ")));
        }
        Ok(out.to_string())
    };
    let keep =
        |rejections| MseOutcome { mental_status: mental_status.to_string(), skipped: false, rejections, flagged: true };
    match gw.ask_validated("perturb_mse", &v, temperature_for(Operator::Perturb), cfg.max_retries, validate) {
        Ok(Attempted::Accepted { value, rejections }) => {
            MseOutcome { mental_status: value, skipped: false, rejections, flagged: false }
        }
        Ok(Attempted::Rejected { rejections }) => keep(rejections),
        Err(e) => keep(vec![e.to_string()]),
    }
}
