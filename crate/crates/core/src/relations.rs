//! Typed relation construction and pre/post-perturbation consistency.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::gateway::{temperature_for, Gateway, Operator};
use crate::graph::{NodeKind, Relation, RelationType, SemanticGraph, VISIT_EVENT_ID};
use crate::structured::parse_records;
use crate::temporal::{shift_age_anchored, temporal_signature};
use crate::text::contains_normalized;

/// Replace all PRESENTS_WITH edges with one edge per symptom whose
/// interval covers day 0.
pub fn build_presents_with(g: &SemanticGraph) -> SemanticGraph {
    let mut out = g.clone();
    out.relations.retain(|r| r.relation_type != RelationType::PresentsWith);
    let pool = g.duration_map();
    for s in &g.symptoms {
        let current = s.duration_ids.iter().filter_map(|id| pool.get(id.as_str())).any(|d| d.covers_day0());
        if current {
            out.relations.push(Relation::new(RelationType::PresentsWith, VISIT_EVENT_ID, s.id.clone()));
        }
    }
    out.canonical()
}

fn due_to() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)^\s*(.+?)\s+due\s+to\s+(.+?)\s*$").unwrap())
}

fn induced() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)^\s*(.+?)\s*-\s*induced\s+(.+?)\s*$").unwrap())
}

/// Split an etiologic label into `(cause, base)`.
pub fn parse_etiologic_label(label: &str) -> Option<(String, String)> {
    if let Some(c) = due_to().captures(label) {
        return Some((c[2].to_string(), c[1].to_string()));
    }
    induced().captures(label).map(|c| (c[1].to_string(), c[2].to_string()))
}

/// Result of [`link_etiology`].
#[derive(Debug, Clone, PartialEq)]
pub struct EtiologyLinks {
    pub graph: SemanticGraph,
    /// Etiologic diagnoses for which no anchor node was found.
    pub unanchored: Vec<String>,
}

/// Add INDUCES edges from the node naming the cause of each etiologic
/// diagnosis. Treatments win over past history, which wins over symptoms;
/// within a type the lowest id wins.
pub fn link_etiology(g: &SemanticGraph) -> EtiologyLinks {
    let mut out = g.clone().canonical();
    let mut unanchored = Vec::new();
    for d in &g.diagnoses {
        let Some((cause, _)) = parse_etiologic_label(&d.label) else {
            continue;
        };
        let anchor = out
            .treatments
            .iter()
            .find(|t| contains_normalized(&t.name, &cause))
            .map(|t| t.id.clone())
            .or_else(|| {
                out.past_history.iter().find(|p| contains_normalized(&p.condition, &cause)).map(|p| p.id.clone())
            })
            .or_else(|| out.symptoms.iter().find(|s| contains_normalized(&s.symptom, &cause)).map(|s| s.id.clone()));
        match anchor {
            Some(src) => {
                out.add_relation(Relation::new(RelationType::Induces, src, d.id.clone()));
            }
            None => unanchored.push(d.id.clone()),
        }
    }
    EtiologyLinks { graph: out.canonical(), unanchored }
}

/// One line per node: `id (kind): text`. Used in conversion prompts.
pub fn node_listing(g: &SemanticGraph, kinds: &[NodeKind]) -> String {
    let mut lines = Vec::new();
    if kinds.contains(&NodeKind::Diagnosis) {
        lines.extend(g.diagnoses.iter().map(|d| format!("{} (diagnosis): {}", d.id, d.label)));
    }
    if kinds.contains(&NodeKind::Symptom) {
        lines.extend(g.symptoms.iter().map(|s| format!("{} (symptom): {}", s.id, s.symptom)));
    }
    if kinds.contains(&NodeKind::Treatment) {
        lines.extend(g.treatments.iter().map(|t| format!("{} (treatment): {}", t.id, t.name)));
    }
    if kinds.contains(&NodeKind::PastHistory) {
        lines.extend(g.past_history.iter().map(|p| format!("{} (past_history): {}", p.id, p.condition)));
    }
    lines.join("\n")
}

#[derive(Debug, Clone, PartialEq)]
pub struct CausalPass {
    pub graph: SemanticGraph,
    pub added: Vec<Relation>,
    /// One line per rejected proposal or failure.
    pub log: Vec<String>,
}

/// Ask the model for explicit causal statements and keep only proposals
/// that are legal, have existing endpoints and quote evidence present in
/// the narrative.
pub fn add_causal_edges_llm(g: &SemanticGraph, narrative: &str, gw: &Gateway) -> CausalPass {
    let kinds = [NodeKind::Diagnosis, NodeKind::Symptom, NodeKind::Treatment, NodeKind::PastHistory];
    let vars = crate::gateway::vars([("nodes", node_listing(g, &kinds)), ("narrative", narrative.to_string())]);
    let mut out = CausalPass { graph: g.clone(), added: Vec::new(), log: Vec::new() };
    let text = match gw.ask("convert_causal", &vars, temperature_for(Operator::Convert)) {
        Ok(resp) => resp.text,
        Err(e) => {
            out.log.push(format!("causal pass skipped: {e}"));
            return out;
        }
    };
    if text.trim().trim_end_matches('.').eq_ignore_ascii_case("none") {
        return out;
    }
    let records = match parse_records(&text) {
        Ok(r) => r,
        Err(e) => {
            out.log.push(format!("causal pass skipped: unparseable response: {e}"));
            return out;
        }
    };
    for r in records {
        if r.kind != "induces" {
            out.log.push(format!("dropped unexpected record @{}", r.kind));
            continue;
        }
        let (Some(src), Some(dst)) = (r.get("source"), r.get("target")) else {
            out.log.push("rejected causal proposal without source/target".into());
            continue;
        };
        let desc = format!("INDUCES({src} -> {dst})");
        let (Some(sk), Some(tk)) = (g.kind_of(src), g.kind_of(dst)) else {
            out.log.push(format!("rejected {desc}: unknown endpoint"));
            continue;
        };
        if !RelationType::Induces.allows(sk, tk) {
            out.log.push(format!("rejected {desc}: illegal pair {} -> {}", sk.as_str(), tk.as_str()));
            continue;
        }
        match r.get("evidence") {
            Some(ev) if contains_normalized(narrative, ev.trim_matches('"')) => {}
            _ => {
                out.log.push(format!("rejected {desc}: evidence not found in narrative"));
                continue;
            }
        }
        let rel = Relation::new(RelationType::Induces, src, dst);
        if out.graph.add_relation(rel.clone()) {
            out.added.push(rel);
        }
    }
    out.graph = out.graph.canonical();
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Discrepancy {
    Temporal { node_id: String },
    RelationMissing { relation: String },
    RelationAdded { relation: String },
    NodeMissing { node_id: String },
    NodeAdded { node_id: String },
    NodeKindChanged { node_id: String },
}

impl fmt::Display for Discrepancy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Discrepancy::Temporal { node_id } => write!(f, "temporal signature of `{node_id}` changed"),
            Discrepancy::RelationMissing { relation } => write!(f, "relation {relation} missing"),
            Discrepancy::RelationAdded { relation } => write!(f, "relation {relation} added"),
            Discrepancy::NodeMissing { node_id } => write!(f, "node `{node_id}` missing"),
            Discrepancy::NodeAdded { node_id } => write!(f, "node `{node_id}` added"),
            Discrepancy::NodeKindChanged { node_id } => write!(f, "node `{node_id}` changed type"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub discrepancies: Vec<Discrepancy>,
}

impl ConsistencyReport {
    pub fn passed(&self) -> bool {
        self.discrepancies.is_empty()
    }
}

impl fmt::Display for ConsistencyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.passed() {
            return f.write_str("consistent");
        }
        let parts: Vec<String> = self.discrepancies.iter().map(ToString::to_string).collect();
        f.write_str(&parts.join("; "))
    }
}

/// Allowances for [`check_consistency_with`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ConsistencyOptions {
    /// Expected shift of age-anchored durations (from an age perturbation).
    pub age_anchor_shift_days: i64,
}

/// Strict comparison: identical temporal signatures, relation sets and
/// node inventories.
pub fn check_consistency(g: &SemanticGraph, g2: &SemanticGraph) -> ConsistencyReport {
    check_consistency_with(g, g2, ConsistencyOptions::default())
}

pub fn check_consistency_with(g: &SemanticGraph, g2: &SemanticGraph, opts: ConsistencyOptions) -> ConsistencyReport {
    let mut out = Vec::new();

    let expected = if opts.age_anchor_shift_days == 0 {
        temporal_signature(g)
    } else {
        temporal_signature(&shift_age_anchored(g, opts.age_anchor_shift_days))
    };
    let actual = temporal_signature(g2);
    let nodes: BTreeSet<&String> = expected.keys().chain(actual.keys()).collect();
    for n in nodes {
        if expected.get(n) != actual.get(n) {
            out.push(Discrepancy::Temporal { node_id: n.clone() });
        }
    }

    let a: BTreeSet<&Relation> = g.relations.iter().collect();
    let b: BTreeSet<&Relation> = g2.relations.iter().collect();
    let describe = |r: &Relation| format!("{}({} -> {})", r.relation_type, r.source_id, r.target_id);
    for r in a.difference(&b) {
        out.push(Discrepancy::RelationMissing { relation: describe(r) });
    }
    for r in b.difference(&a) {
        out.push(Discrepancy::RelationAdded { relation: describe(r) });
    }

    let ka: BTreeMap<String, NodeKind> = g.node_kinds();
    let kb: BTreeMap<String, NodeKind> = g2.node_kinds();
    for (id, kind) in &ka {
        match kb.get(id) {
            None => out.push(Discrepancy::NodeMissing { node_id: id.clone() }),
            Some(k) if k != kind => out.push(Discrepancy::NodeKindChanged { node_id: id.clone() }),
            _ => {}
        }
    }
    for id in kb.keys().filter(|id| !ka.contains_key(*id)) {
        out.push(Discrepancy::NodeAdded { node_id: id.clone() });
    }
    ConsistencyReport { discrepancies: out }
}
