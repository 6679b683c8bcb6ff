//! Narrative → semantic graph conversion.
//!
//! Stages: entity extraction, episode extraction, temporal
//! canonicalization, relation construction, validation. Every model answer
//! goes through the record parser and a schema check; anything that does
//! not fit the schema is dropped and logged.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::gateway::{temperature_for, vars, Attempted, Gateway, GatewayError, Operator};
use crate::graph::{
    format_id, is_administrable, validate_graph, CaseAttributes, DiagnosisNode, DurationInterval, FamilyHistoryEntry,
    NodeKind, PastHistoryNode, RawEpisode, Relation, RelationType, Route, SemanticGraph, StebContext, StebField,
    SymptomNode, TimeUnit, TreatmentNode, ValidationReport, VisitEvent,
};
use crate::relations::{add_causal_edges_llm, build_presents_with, link_etiology, node_listing};
use crate::structured::{parse_bool, parse_records, Record};
use crate::temporal::{
    compute_horizon, dedup_durations, recompute_current_flags, reconcile_node_intervals, split_multi_episode_symptoms,
    to_days,
};
use crate::text::{contains_normalized, normalize_ws};

/// Retries for unparseable structured responses.
const PARSE_RETRIES: u32 = 2;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CaseNarrative {
    pub case_id: String,
    pub text: String,
    pub ground_truth_diagnoses: Vec<String>,
}

#[derive(Debug, Error)]
pub enum ConvertError {
    #[error("case `{case_id}` has an empty narrative")]
    EmptyNarrative { case_id: String },
    #[error("stage {stage}: {source}")]
    Gateway {
        stage: &'static str,
        #[source]
        source: GatewayError,
    },
    #[error("stage {stage}: unparseable structured response ({reasons})")]
    Unparseable { stage: &'static str, reasons: String },
    #[error("converted graph failed validation: {0}")]
    Invalid(ValidationReport),
}

/// Graph under construction plus per-node raw episodes.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Draft {
    pub graph: SemanticGraph,
    pub episodes: BTreeMap<String, Vec<RawEpisode>>,
    /// `current_symptom` as first proposed by the model, kept for the log.
    pub initial_current: BTreeMap<String, bool>,
    pub log: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conversion {
    pub graph: SemanticGraph,
    pub log: Vec<String>,
    /// `(stage name, YAML dump)` in stage order.
    pub stages: Vec<(String, String)>,
}

const DEMOGRAPHIC_KEYS: &[&str] = &["age", "sex", "ethnicity", "occupation", "family_structure"];
const FAMILY_KEYS: &[&str] = &["member", "condition", "evidence_text"];
const SYMPTOM_KEYS: &[&str] = &["id", "symptom", "pattern", "current_symptom", "evidence_text", "diagnosis"];
const CONTEXT_KEYS: &[&str] = &["situation", "thought", "emotion", "behavior"];
const TREATMENT_KEYS: &[&str] = &["id", "type", "name", "dose", "route", "frequency", "outcome", "target"];
const PAST_KEYS: &[&str] = &["id", "condition"];
const VISIT_KEYS: &[&str] = &[
    "setting",
    "arrival_mode",
    "legal_status",
    "reason_for_visit",
    "safety_flag",
    "source_of_information",
    "pathway",
    "visit_episode",
];
const EPISODE_KEYS: &[&str] = &["node", "offset", "span", "unit", "ongoing", "inferred", "age_anchored"];

fn structured(
    gw: &Gateway,
    stage: &'static str,
    template: &str,
    vars: &BTreeMap<String, String>,
) -> Result<Vec<Record>, ConvertError> {
    let temp = temperature_for(Operator::Convert);
    match gw.ask_validated(template, vars, temp, PARSE_RETRIES, |t| parse_records(t).map_err(|e| e.to_string())) {
        Ok(Attempted::Accepted { value, .. }) => Ok(value),
        Ok(Attempted::Rejected { rejections }) => {
            Err(ConvertError::Unparseable { stage, reasons: rejections.join("; ") })
        }
        Err(source) => Err(ConvertError::Gateway { stage, source }),
    }
}

fn check_keys(r: &Record, allowed: &[&str], log: &mut Vec<String>) {
    for k in r.unknown_keys(allowed) {
        log.push(format!("dropped unknown field `{k}` in @{}", r.kind));
    }
}

fn owned(r: &Record, key: &str) -> String {
    r.get(key).unwrap_or_default().to_string()
}

/// Stage 1: entities and case attributes.
pub fn extract_entities(x: &CaseNarrative, gw: &Gateway) -> Result<Draft, ConvertError> {
    if x.text.trim().is_empty() {
        return Err(ConvertError::EmptyNarrative { case_id: x.case_id.clone() });
    }
    let mut d = Draft::default();
    let g = &mut d.graph;
    g.diagnoses = x
        .ground_truth_diagnoses
        .iter()
        .enumerate()
        .map(|(i, label)| DiagnosisNode { id: format_id("d_", i as u32 + 1), label: label.clone() })
        .collect();

    let v = vars([
        ("case_id", x.case_id.clone()),
        ("diagnoses", x.ground_truth_diagnoses.join("; ")),
        ("diagnosis_ids", node_listing(g, &[NodeKind::Diagnosis])),
        ("narrative", x.text.clone()),
    ]);
    let records = structured(gw, "entities", "convert_entities", &v)?;

    let log = &mut d.log;
    let mut attrs = CaseAttributes::default();
    let mut seen_demographics = false;
    let mut seen_tests = false;
    let mut visit: Option<VisitEvent> = None;
    // model id → canonical id
    let mut alias: BTreeMap<String, String> = BTreeMap::new();
    let mut pending_manifests: Vec<(String, String)> = Vec::new();
    let mut pending_targets: Vec<(String, String)> = Vec::new();

    for r in &records {
        match r.kind.as_str() {
            "demographics" => {
                check_keys(r, DEMOGRAPHIC_KEYS, log);
                if seen_demographics {
                    log.push("ignored repeated @demographics".into());
                    continue;
                }
                seen_demographics = true;
                let demo = &mut attrs.demographics;
                match r.get("age").map(|a| a.trim_end_matches(|c: char| !c.is_ascii_digit()).parse::<u32>()) {
                    Some(Ok(age)) => demo.age = age,
                    _ => log.push(format!("demographics: unreadable age `{}`", owned(r, "age"))),
                }
                demo.sex = owned(r, "sex");
                demo.ethnicity = owned(r, "ethnicity");
                demo.occupation = owned(r, "occupation");
                demo.family_structure = owned(r, "family_structure");
            }
            "family_history" => {
                check_keys(r, FAMILY_KEYS, log);
                match (r.get("member"), r.get("condition")) {
                    (Some(m), Some(c)) => attrs.family_history.push(FamilyHistoryEntry {
                        member: m.into(),
                        condition: c.into(),
                        evidence_text: owned(r, "evidence_text"),
                    }),
                    _ => log.push("dropped @family_history without member/condition".into()),
                }
            }
            "test_results" => {
                check_keys(r, &crate::graph::TestResults::KEYS, log);
                if seen_tests {
                    log.push("ignored repeated @test_results".into());
                    continue;
                }
                seen_tests = true;
                for key in crate::graph::TestResults::KEYS {
                    *attrs.test_results.field_mut(key).unwrap() = owned(r, key);
                }
            }
            "symptom" => {
                check_keys(r, SYMPTOM_KEYS, log);
                let Some(name) = r.get("symptom") else {
                    log.push("dropped @symptom without a symptom headword".into());
                    continue;
                };
                let id = format_id("s_", g.symptoms.len() as u32 + 1);
                if let Some(model_id) = r.get("id") {
                    alias.insert(model_id.to_string(), id.clone());
                }
                let evidence = owned(r, "evidence_text");
                if !contains_normalized(&x.text, &evidence) {
                    log.push(format!("{id}: evidence_text not found verbatim in narrative"));
                }
                if let Some(flag) = r.get("current_symptom").and_then(parse_bool) {
                    d.initial_current.insert(id.clone(), flag);
                }
                for dx in r.get_all("diagnosis") {
                    pending_manifests.push((id.clone(), dx.to_string()));
                }
                g.symptoms.push(SymptomNode {
                    id,
                    symptom: name.into(),
                    pattern: owned(r, "pattern"),
                    current_symptom: false,
                    evidence_text: evidence,
                    contexts: Vec::new(),
                    duration_ids: Vec::new(),
                });
            }
            "context" => {
                check_keys(r, CONTEXT_KEYS, log);
                let mut c = StebContext::default();
                for f in StebField::ALL {
                    if let Some(v) = r.get(f.name()) {
                        *c.slot_mut(f) = Some(v.to_string());
                    }
                }
                match g.symptoms.last_mut() {
                    _ if c.is_empty() => log.push("dropped @context with no STEB field".into()),
                    Some(s) => s.contexts.push(c),
                    None => log.push("dropped @context before any @symptom".into()),
                }
            }
            "treatment" => {
                check_keys(r, TREATMENT_KEYS, log);
                let (Some(ty), Some(name)) = (r.get("type"), r.get("name")) else {
                    log.push("dropped @treatment without type/name".into());
                    continue;
                };
                let id = format_id("t_", g.treatments.len() as u32 + 1);
                if let Some(model_id) = r.get("id") {
                    alias.insert(model_id.to_string(), id.clone());
                }
                let route = match r.get("route").map(str::parse::<Route>) {
                    None => None,
                    Some(Err(e)) => {
                        log.push(format!("{id}: {e}; route dropped"));
                        None
                    }
                    Some(Ok(_)) if !is_administrable(ty) => {
                        log.push(format!("{id}: route on non-administrable `{ty}` dropped"));
                        None
                    }
                    Some(Ok(route)) => Some(route),
                };
                for t in r.get_all("target") {
                    pending_targets.push((id.clone(), t.to_string()));
                }
                g.treatments.push(TreatmentNode {
                    id,
                    treatment_type: ty.into(),
                    name: name.into(),
                    dose: r.get("dose").map(Into::into),
                    route,
                    frequency: r.get("frequency").map(Into::into),
                    outcome: r.get("outcome").map(Into::into),
                    duration_ids: Vec::new(),
                });
            }
            "past_history" => {
                check_keys(r, PAST_KEYS, log);
                let Some(cond) = r.get("condition") else {
                    log.push("dropped @past_history without condition".into());
                    continue;
                };
                let id = format_id("ph_", g.past_history.len() as u32 + 1);
                if let Some(model_id) = r.get("id") {
                    alias.insert(model_id.to_string(), id.clone());
                }
                g.past_history.push(PastHistoryNode { id, condition: cond.into(), duration_ids: Vec::new() });
            }
            "visit_event" => {
                check_keys(r, VISIT_KEYS, log);
                if visit.is_some() {
                    log.push("rejected second @visit_event".into());
                    continue;
                }
                visit = Some(VisitEvent {
                    setting: owned(r, "setting"),
                    arrival_mode: owned(r, "arrival_mode"),
                    legal_status: owned(r, "legal_status"),
                    reason_for_visit: owned(r, "reason_for_visit"),
                    safety_flags: r.get_all("safety_flag").into_iter().map(Into::into).collect(),
                    source_of_information: owned(r, "source_of_information"),
                    pathway: r.get("pathway").map(Into::into),
                    visit_episode: owned(r, "visit_episode"),
                });
            }
            other => log.push(format!("dropped unknown record @{other}")),
        }
    }
    if !seen_tests {
        log.push("no @test_results record; all four fields empty".into());
    }
    g.visit_event = visit.unwrap_or_else(|| {
        log.push("no @visit_event record; visit fields empty".into());
        VisitEvent::default()
    });
    g.attributes = attrs;

    let resolve = |raw: &str, g: &SemanticGraph| -> Option<String> {
        let id = alias.get(raw).cloned().unwrap_or_else(|| raw.to_string());
        if g.kind_of(&id).is_some() {
            return Some(id);
        }
        g.diagnoses.iter().find(|d| d.label.eq_ignore_ascii_case(raw)).map(|d| d.id.clone())
    };
    for (src, dx) in pending_manifests {
        match resolve(&dx, g) {
            Some(t) if g.kind_of(&t) == Some(NodeKind::Diagnosis) => {
                g.add_relation(Relation::new(RelationType::ManifestsAs, src, t));
            }
            _ => log.push(format!("{src}: dropped MANIFESTS_AS to unknown diagnosis `{dx}`")),
        }
    }
    for (src, target) in pending_targets {
        match resolve(&target, g) {
            Some(t) if RelationType::TreatmentOf.allows(NodeKind::Treatment, g.kind_of(&t).unwrap()) => {
                g.add_relation(Relation::new(RelationType::TreatmentOf, src, t));
            }
            _ => log.push(format!("{src}: dropped TREATMENT_OF to illegal or unknown target `{target}`")),
        }
    }
    d.graph = d.graph.canonical();
    Ok(d)
}

/// Position of a node's anchor text in the narrative, for order checks.
fn narrative_position(g: &SemanticGraph, id: &str, text: &str) -> Option<usize> {
    let needle = if let Some(s) = g.symptom(id) {
        s.evidence_text.as_str()
    } else if let Some(t) = g.treatment(id) {
        t.name.as_str()
    } else {
        g.past(id)?.condition.as_str()
    };
    let needle = normalize_ws(needle).to_lowercase();
    if needle.is_empty() {
        return None;
    }
    normalize_ws(text).to_lowercase().find(&needle)
}

fn default_episode() -> RawEpisode {
    RawEpisode { offset: 0, span: None, unit: TimeUnit::Day, ongoing: true, inferred: true, age_anchored: false }
}

/// Stage 2: raw episodes for every dated node.
pub fn extract_episodes(x: &CaseNarrative, draft: Draft, gw: &Gateway) -> Result<Draft, ConvertError> {
    let mut d = draft;
    let kinds = [NodeKind::Symptom, NodeKind::Treatment, NodeKind::PastHistory];
    let dated: Vec<String> = d.graph.duration_refs().into_iter().map(|(id, _)| id.to_string()).collect();
    if dated.is_empty() {
        return Ok(d);
    }
    let v = vars([("nodes", node_listing(&d.graph, &kinds)), ("narrative", x.text.clone())]);
    let records = structured(gw, "episodes", "convert_episodes", &v)?;

    for r in &records {
        if r.kind != "episode" {
            d.log.push(format!("dropped unknown record @{}", r.kind));
            continue;
        }
        check_keys(r, EPISODE_KEYS, &mut d.log);
        let Some(node) = r.get("node").filter(|n| dated.iter().any(|id| id == n)) else {
            d.log.push(format!("dropped @episode for unknown node `{}`", owned(r, "node")));
            continue;
        };
        let unit = match r.get("unit").unwrap_or("day").parse::<TimeUnit>() {
            Ok(u) => u,
            Err(e) => {
                d.log.push(format!("{node}: episode rejected: {e}"));
                continue;
            }
        };
        let Some(Ok(offset)) = r.get("offset").map(|o| o.trim_start_matches('+').parse::<i64>()) else {
            d.log.push(format!("{node}: episode rejected: unreadable offset `{}`", owned(r, "offset")));
            continue;
        };
        let span = match r.get("span").map(str::parse::<i64>) {
            None => None,
            Some(Ok(s)) if s >= 0 => Some(s),
            Some(_) => {
                d.log.push(format!("{node}: episode rejected: bad span `{}`", owned(r, "span")));
                continue;
            }
        };
        let ongoing = r.get("ongoing").and_then(parse_bool).unwrap_or(false);
        if span.is_none() && !ongoing {
            d.log.push(format!("{node}: episode rejected: no span and not ongoing"));
            continue;
        }
        d.episodes.entry(node.to_string()).or_default().push(RawEpisode {
            offset,
            span,
            unit,
            ongoing,
            inferred: r.get("inferred").and_then(parse_bool).unwrap_or(false),
            age_anchored: r.get("age_anchored").and_then(parse_bool).unwrap_or(false),
        });
    }

    for id in &dated {
        if !d.episodes.contains_key(id) {
            d.log.push(format!("{id}: no episodes; assigned default ongoing episode at day 0"));
            d.episodes.insert(id.clone(), vec![default_episode()]);
        }
    }

    // inferred offsets must follow narrative order
    let mut inferred: Vec<(usize, i64, &str)> = d
        .episodes
        .iter()
        .flat_map(|(id, eps)| eps.iter().map(move |e| (id, e)))
        .filter(|(_, e)| e.inferred)
        .filter_map(|(id, e)| {
            narrative_position(&d.graph, id, &x.text).map(|p| (p, e.offset * e.unit.days(), id.as_str()))
        })
        .collect();
    inferred.sort();
    let mut flags = Vec::new();
    for w in inferred.windows(2) {
        if w[1].1 < w[0].1 {
            flags.push(format!("{}: inferred offset breaks narrative order after {}", w[1].2, w[0].2));
        }
    }
    d.log.extend(flags);
    Ok(d)
}

/// Stage 3: unit conversion, horizon, dedup, reconciliation, currency and
/// splitting.
pub fn canonicalize_time(draft: &Draft) -> (SemanticGraph, Vec<String>) {
    let mut g = draft.graph.clone();
    let mut log = Vec::new();
    let horizon = compute_horizon(draft.episodes.values().flatten());
    let mut pool: Vec<DurationInterval> = Vec::new();
    let mut refs: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for (node, eps) in &draft.episodes {
        let mut ids = Vec::new();
        for e in eps {
            let (start, span) = match to_days(e, Some(&horizon)) {
                Ok(v) => v,
                Err(err) => {
                    log.push(format!("{node}: episode dropped: {err}"));
                    continue;
                }
            };
            let id = format_id("dur_", pool.len() as u32 + 1);
            let mut d = DurationInterval::new(id.clone(), start, span);
            d.age_anchored = e.age_anchored;
            pool.push(d);
            ids.push(id);
        }
        if ids.is_empty() {
            log.push(format!("{node}: no usable episodes; assigned default ongoing episode at day 0"));
            let id = format_id("dur_", pool.len() as u32 + 1);
            pool.push(DurationInterval::new(id.clone(), 0, horizon.horizon_end_days));
            ids.push(id);
        }
        refs.insert(node.clone(), ids);
    }
    g.durations = pool;
    for (node, ids) in g.duration_refs_mut() {
        if let Some(r) = refs.remove(node) {
            *ids = r;
        }
    }
    let g = dedup_durations(&g);
    let g = reconcile_node_intervals(&g);
    let g = recompute_current_flags(&g);
    let g = split_multi_episode_symptoms(&g);
    (g, log)
}

/// Full conversion of one case.
pub fn convert(x: &CaseNarrative, gw: &Gateway) -> Result<Conversion, ConvertError> {
    let mut stages = Vec::new();
    let draft = extract_entities(x, gw)?;
    stages.push(("entities".to_string(), crate::graph::emit_unchecked(&draft.graph)));
    let mut draft = extract_episodes(x, draft, gw)?;
    stages.push(("episodes".to_string(), serde_yaml::to_string(&draft.episodes).expect("episodes serialize")));

    let (g, temporal_log) = canonicalize_time(&draft);
    draft.log.extend(temporal_log);
    for s in &g.symptoms {
        if let Some(initial) = draft.initial_current.get(&s.id) {
            if *initial != s.current_symptom {
                draft.log.push(format!(
                    "{}: model current_symptom={initial} replaced by day-0 coverage ({})",
                    s.id, s.current_symptom
                ));
            }
        }
    }
    stages.push(("temporal".to_string(), crate::graph::emit_unchecked(&g)));

    let g = build_presents_with(&g);
    let linked = link_etiology(&g);
    for d in &linked.unanchored {
        draft.log.push(format!("{d}: unanchored etiology"));
    }
    let causal = add_causal_edges_llm(&linked.graph, &x.text, gw);
    draft.log.extend(causal.log);
    for r in &causal.added {
        draft.log.push(format!("added {}({} -> {})", r.relation_type, r.source_id, r.target_id));
    }
    let g = causal.graph.canonical();

    let report = validate_graph(&g);
    if !report.is_valid() {
        return Err(ConvertError::Invalid(report));
    }
    Ok(Conversion { graph: g, log: draft.log, stages })
}
