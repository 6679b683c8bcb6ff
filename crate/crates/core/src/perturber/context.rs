//! Model-assisted rewrites: identity fields, visit episode and STEB frames.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::gateway::{temperature_for, vars, Attempted, Gateway, Operator};
use crate::graph::{SemanticGraph, StebContext, StebField, VisitEvent};
use crate::structured::parse_flat;
use crate::text::trigram_jaccard;

use super::PerturbConfig;

/// Occupations for patients younger than this are restricted.
pub const MINOR_AGE: u32 = 16;

pub const MINOR_OCCUPATIONS: &[&str] = &[
    "student",
    "pupil",
    "schoolchild",
    "school",
    "none",
    "unemployed",
    "babysitter",
    "part-time",
    "newspaper delivery",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Similarity {
    Accept(f64),
    Reject(f64),
}

/// Reject a candidate whose trigram similarity to the original exceeds τ.
pub fn similarity_gate(original: &str, candidate: &str, tau: f64) -> Similarity {
    let s = trigram_jaccard(original, candidate);
    if s > tau {
        Similarity::Reject(s)
    } else {
        Similarity::Accept(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityOutcome {
    pub ethnicity: String,
    pub occupation: String,
    pub rejections: Vec<String>,
    pub flagged: bool,
}

pub fn minor_permissible(occupation: &str) -> bool {
    let o = occupation.to_lowercase();
    MINOR_OCCUPATIONS.iter().any(|m| o.contains(m))
}

/// Ask for a new ethnicity and occupation. Both must change; minors must
/// receive an occupation from the permissible list.
pub fn perturb_identity_fields(
    g: &SemanticGraph,
    age: u32,
    sex: &str,
    gw: &Gateway,
    cfg: &PerturbConfig,
) -> IdentityOutcome {
    let demo = &g.attributes.demographics;
    let rule = if age < MINOR_AGE {
        "The patient is a minor: the occupation must suit a minor (for example student).".to_string()
    } else {
        String::new()
    };
    let v = vars([
        ("age", age.to_string()),
        ("sex", sex.to_string()),
        ("ethnicity", demo.ethnicity.clone()),
        ("occupation", demo.occupation.clone()),
        ("occupation_rule", rule),
    ]);
    let validate = |text: &str| -> Result<(String, String), String> {
        let r = parse_flat(text).map_err(|e| e.to_string())?;
        let (Some(eth), Some(occ)) = (r.get("ethnicity"), r.get("occupation")) else {
            return Err("missing ethnicity or occupation".into());
        };
        if eth.eq_ignore_ascii_case(demo.ethnicity.trim()) || occ.eq_ignore_ascii_case(demo.occupation.trim()) {
            return Err(format!("unchanged value ({eth} / {occ})"));
        }
        if age < MINOR_AGE && !minor_permissible(occ) {
            return Err(format!("occupation `{occ}` not permissible for age {age}"));
        }
        Ok((eth.to_string(), occ.to_string()))
    };
    let keep = |rejections: Vec<String>| IdentityOutcome {
        ethnicity: demo.ethnicity.clone(),
        occupation: demo.occupation.clone(),
        rejections,
        flagged: true,
    };
    match gw.ask_validated("perturb_identity", &v, temperature_for(Operator::Perturb), cfg.max_retries, validate) {
        Ok(Attempted::Accepted { value: (ethnicity, occupation), rejections }) => {
            IdentityOutcome { ethnicity, occupation, rejections, flagged: false }
        }
        Ok(Attempted::Rejected { rejections }) => keep(rejections),
        Err(e) => keep(vec![e.to_string()]),
    }
}

/// Scaffold category of a visit attribute and the phrases that contradict it.
struct Contradiction {
    field: &'static str,
    when: &'static str,
    forbidden: &'static str,
}

const LEXICON: &[Contradiction] = &[
    Contradiction {
        field: "legal_status",
        when: r"^(?:voluntary|voluntarily|informal)",
        forbidden: r"\b(?:involuntar\w*|committed|court[- ]ordered|against (?:his|her|their) will|psychiatric hold|detained)\b",
    },
    Contradiction {
        field: "legal_status",
        when: r"involuntary|committed|detained|court",
        forbidden: r"\b(?:voluntarily|voluntary admission|self[- ]admitted)\b",
    },
    Contradiction {
        field: "arrival_mode",
        when: r"^(?:self|walk|own|alone|family|relative|friend|brought by (?:his|her|their) (?:family|parents|partner|spouse))",
        forbidden: r"\b(?:police|officers?|law enforcement|handcuff\w*|ambulance|paramedics?|ems)\b",
    },
    Contradiction {
        field: "arrival_mode",
        when: r"ambulance|paramedic|ems",
        forbidden: r"\b(?:police|officers?|law enforcement|walked in|drove (?:himself|herself|themselves))\b",
    },
    Contradiction {
        field: "arrival_mode",
        when: r"police|law enforcement",
        forbidden: r"\b(?:walked in|drove (?:himself|herself|themselves)|came on (?:his|her|their) own)\b",
    },
    Contradiction {
        field: "setting",
        when: r"outpatient|clinic|office",
        forbidden: r"\b(?:emergency (?:department|room)|inpatient|admitted|admission|ward)\b",
    },
    Contradiction {
        field: "setting",
        when: r"inpatient|emergency|hospital",
        forbidden: r"\b(?:outpatient|office visit)\b",
    },
    Contradiction {
        field: "urgency",
        when: r"^not urgent$",
        forbidden: r"\b(?:urgent\w*|emergenc\w*|crisis|suicid\w*|homicid\w*)\b",
    },
];

fn compiled() -> &'static Vec<(Regex, Regex, &'static str)> {
    static RE: OnceLock<Vec<(Regex, Regex, &'static str)>> = OnceLock::new();
    RE.get_or_init(|| {
        LEXICON
            .iter()
            .map(|c| {
                (
                    Regex::new(&format!("(?i){}", c.when)).unwrap(),
                    Regex::new(&format!("(?i){}", c.forbidden)).unwrap(),
                    c.field,
                )
            })
            .collect()
    })
}

pub fn urgency(v: &VisitEvent) -> &'static str {
    if v.is_urgent() {
        "urgent"
    } else {
        "not urgent"
    }
}

/// Phrases in `text` that contradict the visit scaffold.
pub fn scaffold_contradictions(v: &VisitEvent, text: &str) -> Vec<String> {
    let scaffold = BTreeMap::from([
        ("legal_status", v.legal_status.trim()),
        ("arrival_mode", v.arrival_mode.trim()),
        ("setting", v.setting.trim()),
        ("urgency", urgency(v)),
    ]);
    let mut out = Vec::new();
    for (when, forbidden, field) in compiled() {
        let value = scaffold[field];
        if value.is_empty() || !when.is_match(value) {
            continue;
        }
        if let Some(m) = forbidden.find(text) {
            out.push(format!("`{}` contradicts {field} `{value}`", m.as_str()));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisitOutcome {
    pub visit: VisitEvent,
    pub rejections: Vec<String>,
    pub flagged: bool,
}

/// Rewrite the free-text visit fields while the scaffold stays fixed.
pub fn rewrite_visit_episode(v: &VisitEvent, gw: &Gateway, cfg: &PerturbConfig) -> VisitOutcome {
    let vs = vars([
        ("setting", v.setting.clone()),
        ("arrival_mode", v.arrival_mode.clone()),
        ("legal_status", v.legal_status.clone()),
        ("urgency", urgency(v).to_string()),
        ("visit_episode", v.visit_episode.clone()),
        ("pathway", v.pathway.clone().unwrap_or_else(|| "none".into())),
    ]);
    let validate = |text: &str| -> Result<(String, Option<String>), String> {
        let r = parse_flat(text).map_err(|e| e.to_string())?;
        let episode = r.get("visit_episode").ok_or("missing visit_episode")?.to_string();
        let pathway = match (&v.pathway, r.get("pathway")) {
            (Some(_), Some(p)) => Some(p.to_string()),
            (original, _) => original.clone(),
        };
        let combined = format!("{episode} {}", pathway.as_deref().unwrap_or(""));
        let bad = scaffold_contradictions(v, &combined);
        if !bad.is_empty() {
            return Err(bad.join("; "));
        }
        if let Similarity::Reject(s) = similarity_gate(&v.visit_episode, &episode, cfg.similarity_threshold) {
            return Err(format!("too similar to original ({s:.3})"));
        }
        Ok((episode, pathway))
    };
    match gw.ask_validated("perturb_visit", &vs, temperature_for(Operator::Perturb), cfg.max_retries, validate) {
        Ok(Attempted::Accepted { value: (episode, pathway), rejections }) => {
            let mut visit = v.clone();
            visit.visit_episode = episode;
            visit.pathway = pathway;
            VisitOutcome { visit, rejections, flagged: false }
        }
        Ok(Attempted::Rejected { rejections }) => VisitOutcome { visit: v.clone(), rejections, flagged: true },
        Err(e) => VisitOutcome { visit: v.clone(), rejections: vec![e.to_string()], flagged: true },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StebAudit {
    pub symptom_id: String,
    pub context_index: usize,
    pub start_days: i64,
    pub age_at_event: i64,
    pub rejections: Vec<String>,
    pub flagged: bool,
}

/// Frames in rewrite order: descending episode start, then symptom id and
/// context index ascending.
pub fn steb_order(g: &SemanticGraph) -> Vec<(String, usize, i64)> {
    let mut out: Vec<(String, usize, i64)> = g
        .symptoms
        .iter()
        .flat_map(|s| {
            let start = g.earliest_start(&s.id).unwrap_or(0);
            (0..s.contexts.len()).map(move |i| (s.id.clone(), i, start))
        })
        .collect();
    out.sort_by(|a, b| b.2.cmp(&a.2).then_with(|| a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
    out
}

fn frame_lines(c: &StebContext) -> String {
    StebField::ALL
        .into_iter()
        .filter_map(|f| c.get(f).map(|v| format!("{}: {v}", f.name())))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Rewrite every STEB frame, newest episode first, giving the model the
/// `K` most recently rewritten frames as context. Only fields present in
/// the source frame are written back.
pub fn rewrite_steb_contexts(
    g: &SemanticGraph,
    visit_episode: &str,
    age: u32,
    gw: &Gateway,
    cfg: &PerturbConfig,
) -> (SemanticGraph, Vec<StebAudit>) {
    let mut out = g.clone();
    let mut audits = Vec::new();
    let mut recent: Vec<String> = Vec::new();
    for (sid, idx, start) in steb_order(g) {
        let node = g.symptom(&sid).expect("ordered symptom exists");
        let original = &node.contexts[idx];
        let present = original.present_fields();
        let age_at_event = (f64::from(age) + start as f64 / 365.0).round() as i64;
        let window: Vec<&String> = recent.iter().rev().take(cfg.steb_window_size).collect();
        let recent_text = if window.is_empty() {
            "(none)".to_string()
        } else {
            window.iter().rev().map(|s| s.as_str()).collect::<Vec<_>>().join("\n")
        };
        let v = vars([
            ("visit_episode", visit_episode.to_string()),
            ("age_at_event", age_at_event.to_string()),
            ("symptom", node.symptom.clone()),
            ("recent", recent_text),
            ("fields", frame_lines(original)),
        ]);
        let validate = |text: &str| -> Result<StebContext, String> {
            let r = parse_flat(text).map_err(|e| e.to_string())?;
            let mut c = StebContext::default();
            for f in &present {
                let val = r.get(f.name()).ok_or_else(|| format!("missing field {}", f.name()))?;
                *c.slot_mut(*f) = Some(val.to_string());
            }
            if let Similarity::Reject(s) =
                similarity_gate(&original.joined_text(), &c.joined_text(), cfg.similarity_threshold)
            {
                return Err(format!("too similar to original ({s:.3})"));
            }
            Ok(c)
        };
        let mut audit = StebAudit {
            symptom_id: sid.clone(),
            context_index: idx,
            start_days: start,
            age_at_event,
            rejections: Vec::new(),
            flagged: false,
        };
        let result =
            gw.ask_validated("perturb_steb", &v, temperature_for(Operator::Perturb), cfg.max_retries, validate);
        let frame = match result {
            Ok(Attempted::Accepted { value, rejections }) => {
                audit.rejections = rejections;
                value
            }
            Ok(Attempted::Rejected { rejections }) => {
                audit.rejections = rejections;
                audit.flagged = true;
                original.clone()
            }
            Err(e) => {
                audit.rejections = vec![e.to_string()];
                audit.flagged = true;
                original.clone()
            }
        };
        recent.push(format!("{}: {}", node.symptom, frame.joined_text()));
        let target = out.symptoms.iter_mut().find(|s| s.id == sid).unwrap();
        target.contexts[idx] = frame;
        audits.push(audit);
    }
    (out, audits)
}
