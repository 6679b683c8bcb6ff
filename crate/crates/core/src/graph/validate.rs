use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{is_administrable, SemanticGraph, VISIT_EVENT_ID};

/// A single schema violation. Violations are data, not failures.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    DuplicateNodeId { id: String },
    DuplicateDurationId { id: String },
    DanglingDuration { node_id: String, duration_id: String },
    OrphanDuration { duration_id: String },
    NonCanonicalSpan { duration_id: String, span_days: i64 },
    DanglingRelationEndpoint { relation: String, missing_id: String },
    IllegalPair { relation: String },
    DuplicateRelation { relation: String },
    EmptyLabel { node_id: String },
    EmptyContext { node_id: String, index: usize },
    RouteOnNonAdministrable { node_id: String },
    SymptomDurationCount { node_id: String, count: usize },
    StaleCurrentFlag { node_id: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DuplicateNodeId { id } => write!(f, "duplicate node id `{id}`"),
            Violation::DuplicateDurationId { id } => write!(f, "duplicate duration id `{id}`"),
            Violation::DanglingDuration { node_id, duration_id } => {
                write!(f, "dangling duration `{duration_id}` referenced by `{node_id}`")
            }
            Violation::OrphanDuration { duration_id } => {
                write!(f, "unreferenced duration `{duration_id}`")
            }
            Violation::NonCanonicalSpan { duration_id, span_days } => {
                write!(f, "duration `{duration_id}` has span_days {span_days} < 1")
            }
            Violation::DanglingRelationEndpoint { relation, missing_id } => {
                write!(f, "relation {relation} references missing node `{missing_id}`")
            }
            Violation::IllegalPair { relation } => write!(f, "illegal pair in relation {relation}"),
            Violation::DuplicateRelation { relation } => write!(f, "duplicate relation {relation}"),
            Violation::EmptyLabel { node_id } => write!(f, "node `{node_id}` has an empty label"),
            Violation::EmptyContext { node_id, index } => {
                write!(f, "context {index} of `{node_id}` has no STEB field")
            }
            Violation::RouteOnNonAdministrable { node_id } => {
                write!(f, "route set on non-administrable treatment `{node_id}`")
            }
            Violation::SymptomDurationCount { node_id, count } => {
                write!(f, "symptom `{node_id}` references {count} durations, expected exactly 1")
            }
            Violation::StaleCurrentFlag { node_id } => {
                write!(f, "current_symptom of `{node_id}` disagrees with day-0 coverage")
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return f.write_str("valid");
        }
        let parts: Vec<String> = self.violations.iter().map(|v| v.to_string()).collect();
        f.write_str(&parts.join("; "))
    }
}

fn describe(rel: &super::Relation) -> String {
    format!("{}({} -> {})", rel.relation_type, rel.source_id, rel.target_id)
}

/// Check every schema rule and return all violations found.
///
/// Missing test-result keys and multiple visit events cannot be represented
/// by [`SemanticGraph`]; the YAML parser rejects them before a graph exists.
pub fn validate_graph(g: &SemanticGraph) -> ValidationReport {
    let mut v = Vec::new();

    let mut seen = BTreeSet::new();
    seen.insert(VISIT_EVENT_ID.to_string());
    let ids = g
        .diagnoses
        .iter()
        .map(|n| &n.id)
        .chain(g.symptoms.iter().map(|n| &n.id))
        .chain(g.treatments.iter().map(|n| &n.id))
        .chain(g.past_history.iter().map(|n| &n.id));
    for id in ids {
        if !seen.insert(id.clone()) {
            v.push(Violation::DuplicateNodeId { id: id.clone() });
        }
    }

    let mut pool: BTreeMap<&str, &super::DurationInterval> = BTreeMap::new();
    for d in &g.durations {
        if pool.insert(d.id.as_str(), d).is_some() {
            v.push(Violation::DuplicateDurationId { id: d.id.clone() });
        }
        if d.span_days < 1 {
            v.push(Violation::NonCanonicalSpan { duration_id: d.id.clone(), span_days: d.span_days });
        }
    }

    let mut referenced = BTreeSet::new();
    for (node, ids) in g.duration_refs() {
        for id in ids {
            referenced.insert(id.as_str());
            if !pool.contains_key(id.as_str()) {
                v.push(Violation::DanglingDuration { node_id: node.to_string(), duration_id: id.clone() });
            }
        }
    }
    for d in &g.durations {
        if !referenced.contains(d.id.as_str()) {
            v.push(Violation::OrphanDuration { duration_id: d.id.clone() });
        }
    }

    let kinds = g.node_kinds();
    let mut triples = BTreeSet::new();
    for rel in &g.relations {
        let src = kinds.get(&rel.source_id);
        let dst = kinds.get(&rel.target_id);
        for (id, kind) in [(&rel.source_id, src), (&rel.target_id, dst)] {
            if kind.is_none() {
                v.push(Violation::DanglingRelationEndpoint { relation: describe(rel), missing_id: id.clone() });
            }
        }
        if let (Some(s), Some(t)) = (src, dst) {
            if !rel.relation_type.allows(*s, *t) {
                v.push(Violation::IllegalPair { relation: describe(rel) });
            }
        }
        if !triples.insert(rel.clone()) {
            v.push(Violation::DuplicateRelation { relation: describe(rel) });
        }
    }

    for d in &g.diagnoses {
        if d.label.trim().is_empty() {
            v.push(Violation::EmptyLabel { node_id: d.id.clone() });
        }
    }
    for p in &g.past_history {
        if p.condition.trim().is_empty() {
            v.push(Violation::EmptyLabel { node_id: p.id.clone() });
        }
    }
    for t in &g.treatments {
        if t.route.is_some() && !is_administrable(&t.treatment_type) {
            v.push(Violation::RouteOnNonAdministrable { node_id: t.id.clone() });
        }
    }
    for s in &g.symptoms {
        for (i, c) in s.contexts.iter().enumerate() {
            if c.is_empty() {
                v.push(Violation::EmptyContext { node_id: s.id.clone(), index: i });
            }
        }
        if s.duration_ids.len() != 1 {
            v.push(Violation::SymptomDurationCount { node_id: s.id.clone(), count: s.duration_ids.len() });
        }
        let covers = s.duration_ids.iter().filter_map(|id| pool.get(id.as_str())).any(|d| d.covers_day0());
        if covers != s.current_symptom {
            v.push(Violation::StaleCurrentFlag { node_id: s.id.clone() });
        }
    }

    ValidationReport { violations: v }
}
