//! Deterministic content plan for a case narrative.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::graph::{NodeKind, RelationType, SemanticGraph};

use super::time::{choose_lexicon, Lexicon};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeadSummary {
    pub age: u32,
    pub sex: String,
    pub setting: String,
    pub arrival_mode: String,
    pub reason: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pathway: Option<String>,
    pub source: String,
    pub visit_episode: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrepassEntry {
    pub past_id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub duration_id: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub start: Option<i64>,
    pub induces: Vec<String>,
    pub treatment_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InducedCluster {
    pub source_id: String,
    pub diagnosis_id: String,
    pub symptom_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    /// `None` for items without any interval; such blocks come last.
    pub duration_id: Option<String>,
    pub start: Option<i64>,
    /// `None` marks the unattributed group of this duration.
    pub diagnosis_id: Option<String>,
    pub symptom_ids: Vec<String>,
    /// Treatments sharing duration and target diagnosis form one regimen.
    pub regimens: Vec<Vec<String>>,
    pub induced: Vec<InducedCluster>,
}

impl Block {
    pub fn is_empty(&self) -> bool {
        self.symptom_ids.is_empty() && self.regimens.is_empty() && self.induced.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Tail {
    pub past_history: Vec<String>,
    pub family_history: Vec<String>,
    pub day0_tests: Vec<(String, String)>,
}

impl Tail {
    pub fn is_empty(&self) -> bool {
        self.past_history.is_empty() && self.family_history.is_empty() && self.day0_tests.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NarrativeOutline {
    pub lexicon: Lexicon,
    pub lead: LeadSummary,
    pub prepass: Vec<PrepassEntry>,
    pub blocks: Vec<Block>,
    pub tail: Tail,
    /// Every planned (item, duration) pair, in narration order.
    pub ledger: Vec<(String, String)>,
}

impl NarrativeOutline {
    pub fn to_yaml(&self) -> String {
        serde_yaml::to_string(self).expect("outline serializes")
    }

    /// Symptom and treatment ids in outline order, with repeats.
    pub fn placed_items(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for p in &self.prepass {
            out.extend(p.treatment_ids.iter().map(String::as_str));
        }
        for b in &self.blocks {
            out.extend(b.symptom_ids.iter().map(String::as_str));
            out.extend(b.regimens.iter().flatten().map(String::as_str));
            for c in &b.induced {
                out.extend(c.symptom_ids.iter().map(String::as_str));
            }
        }
        out
    }
}

const UNDATED: &str = "-";

/// Earliest interval of a node as (start, end, id).
fn anchor(g: &SemanticGraph, ids: &[String]) -> Option<(i64, i64, String)> {
    ids.iter().filter_map(|id| g.duration(id).map(|d| (d.start(), d.end(), d.id.clone()))).min()
}

type BlockKey = (Option<(i64, i64, String)>, Option<String>);

fn sort_key(k: &BlockKey) -> (bool, i64, i64, String, bool, String) {
    let (dur, dx) = k;
    let (s, e, id) = dur.clone().unwrap_or((0, 0, String::new()));
    (dur.is_none(), s, e, id, dx.is_none(), dx.clone().unwrap_or_default())
}

pub fn lead_summary(g: &SemanticGraph) -> LeadSummary {
    let v = &g.visit_event;
    LeadSummary {
        age: g.attributes.demographics.age,
        sex: g.attributes.demographics.sex.clone(),
        setting: v.setting.clone(),
        arrival_mode: v.arrival_mode.clone(),
        reason: v.reason_for_visit.clone(),
        pathway: v.pathway.clone(),
        source: v.source_of_information.clone(),
        visit_episode: v.visit_episode.clone(),
    }
}

/// Plan the narrative. Pure in `g`.
pub fn plan_outline(g: &SemanticGraph) -> NarrativeOutline {
    let g = g.clone().canonical();
    let kinds = g.node_kinds();
    let targets = |ty: RelationType, src: &str, kind: NodeKind| -> Vec<String> {
        g.relations_of(ty)
            .filter(|r| r.source_id == src && kinds.get(&r.target_id) == Some(&kind))
            .map(|r| r.target_id.clone())
            .collect()
    };

    // Past history narrated up front: inducers and treated conditions.
    let mut placed_treatments: BTreeSet<String> = BTreeSet::new();
    let mut prepass = Vec::new();
    for p in &g.past_history {
        let induces = targets(RelationType::Induces, &p.id, NodeKind::Diagnosis);
        let treated: Vec<String> = g
            .relations_of(RelationType::TreatmentOf)
            .filter(|r| r.target_id == p.id && kinds.get(&r.source_id) == Some(&NodeKind::Treatment))
            .map(|r| r.source_id.clone())
            .collect();
        if induces.is_empty() && treated.is_empty() {
            continue;
        }
        let a = anchor(&g, &p.duration_ids);
        let mut treatment_ids = Vec::new();
        for t in treated {
            // a treatment that also targets a diagnosis belongs to that block
            if targets(RelationType::TreatmentOf, &t, NodeKind::Diagnosis).is_empty()
                && placed_treatments.insert(t.clone())
            {
                treatment_ids.push(t);
            }
        }
        prepass.push(PrepassEntry {
            past_id: p.id.clone(),
            start: a.as_ref().map(|a| a.0),
            duration_id: a.map(|a| a.2),
            induces,
            treatment_ids,
        });
    }
    prepass.sort_by_key(|e| (e.start.is_none(), e.start, e.past_id.clone()));

    let mut blocks: BTreeMap<BlockKey, Block> = BTreeMap::new();
    let mut location: BTreeMap<String, BlockKey> = BTreeMap::new();
    let block = |key: BlockKey| -> Block {
        Block {
            duration_id: key.0.as_ref().map(|d| d.2.clone()),
            start: key.0.as_ref().map(|d| d.0),
            diagnosis_id: key.1.clone(),
            symptom_ids: vec![],
            regimens: vec![],
            induced: vec![],
        }
    };

    for s in &g.symptoms {
        let dx = targets(RelationType::ManifestsAs, &s.id, NodeKind::Diagnosis).into_iter().next();
        let key = (anchor(&g, &s.duration_ids), dx);
        blocks.entry(key.clone()).or_insert_with(|| block(key.clone())).symptom_ids.push(s.id.clone());
        location.insert(s.id.clone(), key);
    }
    for t in &g.treatments {
        if placed_treatments.contains(&t.id) {
            continue;
        }
        let dx = targets(RelationType::TreatmentOf, &t.id, NodeKind::Diagnosis).into_iter().next();
        let key = (anchor(&g, &t.duration_ids), dx.clone());
        let b = blocks.entry(key.clone()).or_insert_with(|| block(key.clone()));
        match (dx, b.regimens.first_mut()) {
            (Some(_), Some(regimen)) => regimen.push(t.id.clone()),
            _ => b.regimens.push(vec![t.id.clone()]),
        }
        location.insert(t.id.clone(), key);
    }

    // Symptoms of an induced diagnosis that share the inducer's interval
    // move into a cluster next to the inducer.
    let induces: Vec<(String, String)> = g
        .relations_of(RelationType::Induces)
        .filter(|r| matches!(kinds.get(&r.source_id), Some(NodeKind::Symptom | NodeKind::Treatment)))
        .map(|r| (r.source_id.clone(), r.target_id.clone()))
        .collect();
    for (src, dx) in induces {
        let Some(src_key) = location.get(&src).cloned() else { continue };
        let from = (src_key.0.clone(), Some(dx.clone()));
        let Some(b) = blocks.get_mut(&from) else { continue };
        let moved: Vec<String> = b.symptom_ids.iter().filter(|s| **s != src).cloned().collect();
        if moved.is_empty() {
            continue;
        }
        b.symptom_ids.retain(|s| *s == src);
        for s in &moved {
            location.insert(s.clone(), src_key.clone());
        }
        blocks.get_mut(&src_key).expect("inducer block").induced.push(InducedCluster {
            source_id: src,
            diagnosis_id: dx,
            symptom_ids: moved,
        });
    }

    let mut ordered: Vec<(BlockKey, Block)> = blocks.into_iter().filter(|(_, b)| !b.is_empty()).collect();
    ordered.sort_by_key(|(k, _)| sort_key(k));
    let blocks: Vec<Block> = ordered.into_iter().map(|(_, b)| b).collect();

    let mut ledger = Vec::new();
    let dur = |d: &Option<String>| d.clone().unwrap_or_else(|| UNDATED.to_string());
    for p in &prepass {
        ledger.push((p.past_id.clone(), dur(&p.duration_id)));
        for t in &p.treatment_ids {
            ledger.push((t.clone(), dur(&p.duration_id)));
        }
    }
    for b in &blocks {
        let d = dur(&b.duration_id);
        for id in b.symptom_ids.iter().chain(b.regimens.iter().flatten()) {
            ledger.push((id.clone(), d.clone()));
        }
        for c in &b.induced {
            for id in &c.symptom_ids {
                ledger.push((id.clone(), d.clone()));
            }
        }
    }

    let in_prepass: BTreeSet<&str> = prepass.iter().map(|p| p.past_id.as_str()).collect();
    let tail = Tail {
        past_history: g
            .past_history
            .iter()
            .filter(|p| !in_prepass.contains(p.id.as_str()))
            .map(|p| p.id.clone())
            .collect(),
        family_history: g
            .attributes
            .family_history
            .iter()
            .map(|f| format!("{}: {}", f.member.trim(), f.condition.trim()))
            .collect(),
        day0_tests: g
            .attributes
            .test_results
            .fields()
            .into_iter()
            .filter(|(_, v)| !v.trim().is_empty())
            .map(|(k, v)| (k.to_string(), v.trim().to_string()))
            .collect(),
    };

    NarrativeOutline { lexicon: choose_lexicon(&g), lead: lead_summary(&g), prepass, blocks, tail, ledger }
}
