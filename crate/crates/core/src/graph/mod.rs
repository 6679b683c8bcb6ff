//! Semantic graph of a psychiatric case.
//!
//! A case is represented by typed nodes (diagnoses, symptoms, treatments,
//! past history and a single visit event), typed relations between them, a
//! shared pool of day-based duration intervals anchored at the index
//! encounter (day 0), and case-level attributes that do not take part in the
//! relational structure.
//!
//! Graphs are plain values. Every transformation in this crate consumes a
//! graph and produces a new one, so a graph can be shared freely between
//! threads.

mod validate;
mod yaml;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use validate::{validate_graph, ValidationReport, Violation};
pub(crate) use yaml::emit as emit_unchecked;
pub use yaml::{parse_yaml, serialize_yaml, YamlError};

/// Node id of the single visit event. The visit event has no id field of
/// its own; relations refer to it by this constant.
pub const VISIT_EVENT_ID: &str = "visit_event";

/// Normalized half-open day interval `[offset_days, offset_days + span_days)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DurationInterval {
    pub id: String,
    pub offset_days: i64,
    #[serde(deserialize_with = "deserialize_span")]
    pub span_days: i64,
    #[serde(rename = "virtual")]
    pub is_virtual: bool,
    /// Duration anchored to the patient's age (e.g. "at age 15").
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub age_anchored: bool,
}

fn deserialize_span<'de, D>(deserializer: D) -> Result<i64, D::Error>
where
    D: serde::Deserializer<'de>,
{
    let span = i64::deserialize(deserializer)?;
    if span < 0 {
        return Err(serde::de::Error::custom(format!("span_days < 0 (got {span})")));
    }
    Ok(span)
}

impl DurationInterval {
    pub fn new(id: impl Into<String>, offset_days: i64, span_days: i64) -> Self {
        Self { id: id.into(), offset_days, span_days, is_virtual: false, age_anchored: false }
    }

    pub fn start(&self) -> i64 {
        self.offset_days
    }

    /// Exclusive end.
    pub fn end(&self) -> i64 {
        self.offset_days + self.span_days
    }

    /// Half-open coverage of day 0: `start <= 0 < end`.
    pub fn covers_day0(&self) -> bool {
        self.covers(0)
    }

    pub fn covers(&self, day: i64) -> bool {
        self.start() <= day && day < self.end()
    }
}

/// Unit of a raw temporal episode before canonicalization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimeUnit {
    Day,
    Week,
    Month,
    Year,
}

impl TimeUnit {
    pub fn days(self) -> i64 {
        match self {
            TimeUnit::Day => 1,
            TimeUnit::Week => 7,
            TimeUnit::Month => 30,
            TimeUnit::Year => 365,
        }
    }
}

impl FromStr for TimeUnit {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "day" | "days" => Ok(TimeUnit::Day),
            "week" | "weeks" => Ok(TimeUnit::Week),
            "month" | "months" => Ok(TimeUnit::Month),
            "year" | "years" => Ok(TimeUnit::Year),
            other => Err(format!("unknown time unit `{other}`")),
        }
    }
}

/// An episode as extracted from text: `(offset, span, unit)` with an
/// optional ongoing flag. A missing span is only allowed for ongoing
/// episodes and is resolved later against the timeline horizon.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawEpisode {
    pub offset: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub span: Option<i64>,
    pub unit: TimeUnit,
    #[serde(default)]
    pub ongoing: bool,
    /// No textual anchor; offset was inferred from narrative order.
    #[serde(default)]
    pub inferred: bool,
    #[serde(default)]
    pub age_anchored: bool,
}

/// Situation / Thought / Emotion / Behavior frame of a symptom episode.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StebContext {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub situation: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thought: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub emotion: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub behavior: Option<String>,
}

/// One of the four STEB slots.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum StebField {
    Situation,
    Thought,
    Emotion,
    Behavior,
}

impl StebField {
    pub const ALL: [StebField; 4] = [StebField::Situation, StebField::Thought, StebField::Emotion, StebField::Behavior];

    pub fn name(self) -> &'static str {
        match self {
            StebField::Situation => "situation",
            StebField::Thought => "thought",
            StebField::Emotion => "emotion",
            StebField::Behavior => "behavior",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|f| f.name() == name)
    }
}

impl StebContext {
    pub fn get(&self, field: StebField) -> Option<&str> {
        match field {
            StebField::Situation => self.situation.as_deref(),
            StebField::Thought => self.thought.as_deref(),
            StebField::Emotion => self.emotion.as_deref(),
            StebField::Behavior => self.behavior.as_deref(),
        }
    }

    pub fn slot_mut(&mut self, field: StebField) -> &mut Option<String> {
        match field {
            StebField::Situation => &mut self.situation,
            StebField::Thought => &mut self.thought,
            StebField::Emotion => &mut self.emotion,
            StebField::Behavior => &mut self.behavior,
        }
    }

    /// Fields present in this frame, in canonical order.
    pub fn present_fields(&self) -> Vec<StebField> {
        StebField::ALL.into_iter().filter(|f| self.get(*f).is_some()).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.present_fields().is_empty()
    }

    /// All present fields joined into one string, used for similarity checks.
    pub fn joined_text(&self) -> String {
        StebField::ALL.into_iter().filter_map(|f| self.get(f)).collect::<Vec<_>>().join(" ")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SymptomNode {
    pub id: String,
    pub symptom: String,
    pub pattern: String,
    pub current_symptom: bool,
    pub evidence_text: String,
    #[serde(default)]
    pub contexts: Vec<StebContext>,
    #[serde(default)]
    pub duration_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosisNode {
    pub id: String,
    pub label: String,
}

/// Controlled route vocabulary for administrable treatments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Route {
    Oral,
    Intravenous,
    Intramuscular,
    Subcutaneous,
    Topical,
    Inhaled,
    Other,
}

impl Route {
    pub fn as_str(self) -> &'static str {
        match self {
            Route::Oral => "oral",
            Route::Intravenous => "intravenous",
            Route::Intramuscular => "intramuscular",
            Route::Subcutaneous => "subcutaneous",
            Route::Topical => "topical",
            Route::Inhaled => "inhaled",
            Route::Other => "other",
        }
    }
}

impl FromStr for Route {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "oral" => Ok(Route::Oral),
            "intravenous" => Ok(Route::Intravenous),
            "intramuscular" => Ok(Route::Intramuscular),
            "subcutaneous" => Ok(Route::Subcutaneous),
            "topical" => Ok(Route::Topical),
            "inhaled" => Ok(Route::Inhaled),
            "other" => Ok(Route::Other),
            other => Err(format!("route `{other}` is not in the controlled vocabulary")),
        }
    }
}

/// Treatment types for which a route is meaningful.
pub const ADMINISTRABLE_TYPES: &[&str] =
    &["medication", "pharmacotherapy", "drug", "injection", "infusion", "supplement"];

pub fn is_administrable(treatment_type: &str) -> bool {
    let t = treatment_type.trim().to_ascii_lowercase();
    ADMINISTRABLE_TYPES.iter().any(|a| t == *a)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreatmentNode {
    pub id: String,
    pub treatment_type: String,
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dose: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub route: Option<Route>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frequency: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outcome: Option<String>,
    #[serde(default)]
    pub duration_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PastHistoryNode {
    pub id: String,
    pub condition: String,
    #[serde(default)]
    pub duration_ids: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VisitEvent {
    pub setting: String,
    pub arrival_mode: String,
    pub legal_status: String,
    pub reason_for_visit: String,
    #[serde(default)]
    pub safety_flags: Vec<String>,
    pub source_of_information: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pathway: Option<String>,
    pub visit_episode: String,
}

impl VisitEvent {
    /// Any safety flag makes the presentation urgent.
    pub fn is_urgent(&self) -> bool {
        self.safety_flags.iter().any(|f| !f.trim().is_empty())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RelationType {
    ManifestsAs,
    TreatmentOf,
    PresentsWith,
    Induces,
}

impl RelationType {
    pub const ALL: [RelationType; 4] =
        [RelationType::ManifestsAs, RelationType::TreatmentOf, RelationType::PresentsWith, RelationType::Induces];

    pub fn as_str(self) -> &'static str {
        match self {
            RelationType::ManifestsAs => "MANIFESTS_AS",
            RelationType::TreatmentOf => "TREATMENT_OF",
            RelationType::PresentsWith => "PRESENTS_WITH",
            RelationType::Induces => "INDUCES",
        }
    }

    /// Whether `(self, source, target)` is in the allowed-pair table.
    pub fn allows(self, source: NodeKind, target: NodeKind) -> bool {
        use NodeKind::*;
        match self {
            RelationType::ManifestsAs => source == Symptom && target == Diagnosis,
            RelationType::TreatmentOf => source == Treatment && matches!(target, Diagnosis | PastHistory | Symptom),
            RelationType::PresentsWith => source == Visit && target == Symptom,
            RelationType::Induces => matches!(source, Symptom | Treatment | PastHistory) && target == Diagnosis,
        }
    }
}

impl fmt::Display for RelationType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Relation {
    pub relation_type: RelationType,
    pub source_id: String,
    pub target_id: String,
}

impl Relation {
    pub fn new(relation_type: RelationType, source_id: impl Into<String>, target_id: impl Into<String>) -> Self {
        Self { relation_type, source_id: source_id.into(), target_id: target_id.into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Diagnosis,
    Symptom,
    Treatment,
    PastHistory,
    Visit,
}

impl NodeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            NodeKind::Diagnosis => "diagnosis",
            NodeKind::Symptom => "symptom",
            NodeKind::Treatment => "treatment",
            NodeKind::PastHistory => "past_history",
            NodeKind::Visit => "visit_event",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Demographics {
    pub age: u32,
    pub sex: String,
    pub ethnicity: String,
    pub occupation: String,
    pub family_structure: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilyHistoryEntry {
    pub member: String,
    pub condition: String,
    pub evidence_text: String,
}

/// The four test-result fields. All four are always present (possibly empty).
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestResults {
    pub labs: String,
    pub imaging: String,
    pub mental_status: String,
    pub other: String,
}

impl TestResults {
    pub const KEYS: [&'static str; 4] = ["labs", "imaging", "mental_status", "other"];

    pub fn fields(&self) -> [(&'static str, &str); 4] {
        [
            ("labs", self.labs.as_str()),
            ("imaging", self.imaging.as_str()),
            ("mental_status", self.mental_status.as_str()),
            ("other", self.other.as_str()),
        ]
    }

    pub fn field_mut(&mut self, key: &str) -> Option<&mut String> {
        match key {
            "labs" => Some(&mut self.labs),
            "imaging" => Some(&mut self.imaging),
            "mental_status" => Some(&mut self.mental_status),
            "other" => Some(&mut self.other),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseAttributes {
    pub demographics: Demographics,
    pub family_history: Vec<FamilyHistoryEntry>,
    pub test_results: TestResults,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SemanticGraph {
    pub attributes: CaseAttributes,
    pub diagnoses: Vec<DiagnosisNode>,
    pub symptoms: Vec<SymptomNode>,
    pub treatments: Vec<TreatmentNode>,
    pub past_history: Vec<PastHistoryNode>,
    pub visit_event: VisitEvent,
    pub relations: Vec<Relation>,
    pub durations: Vec<DurationInterval>,
}

impl SemanticGraph {
    /// Sort every id-keyed collection so that equal content has one
    /// representation. Context order and per-node duration order carry
    /// meaning and are kept; duration ids are ordered by interval.
    pub fn canonicalize(&mut self) {
        self.diagnoses.sort_by(|a, b| a.id.cmp(&b.id));
        self.symptoms.sort_by(|a, b| a.id.cmp(&b.id));
        self.treatments.sort_by(|a, b| a.id.cmp(&b.id));
        self.past_history.sort_by(|a, b| a.id.cmp(&b.id));
        self.durations.sort_by(|a, b| a.id.cmp(&b.id));
        self.relations.sort();
        self.relations.dedup();

        let index: BTreeMap<String, (i64, i64)> =
            self.durations.iter().map(|d| (d.id.clone(), (d.start(), d.end()))).collect();
        let order = |ids: &mut Vec<String>| {
            ids.sort_by(|a, b| {
                let ka = index.get(a).copied().unwrap_or((i64::MAX, i64::MAX));
                let kb = index.get(b).copied().unwrap_or((i64::MAX, i64::MAX));
                ka.cmp(&kb).then_with(|| a.cmp(b))
            });
            ids.dedup();
        };
        self.symptoms.iter_mut().for_each(|n| order(&mut n.duration_ids));
        self.treatments.iter_mut().for_each(|n| order(&mut n.duration_ids));
        self.past_history.iter_mut().for_each(|n| order(&mut n.duration_ids));
    }

    pub fn canonical(mut self) -> Self {
        self.canonicalize();
        self
    }

    pub fn duration(&self, id: &str) -> Option<&DurationInterval> {
        self.durations.iter().find(|d| d.id == id)
    }

    pub fn duration_map(&self) -> BTreeMap<&str, &DurationInterval> {
        self.durations.iter().map(|d| (d.id.as_str(), d)).collect()
    }

    pub fn symptom(&self, id: &str) -> Option<&SymptomNode> {
        self.symptoms.iter().find(|n| n.id == id)
    }

    pub fn treatment(&self, id: &str) -> Option<&TreatmentNode> {
        self.treatments.iter().find(|n| n.id == id)
    }

    pub fn past(&self, id: &str) -> Option<&PastHistoryNode> {
        self.past_history.iter().find(|n| n.id == id)
    }

    pub fn diagnosis(&self, id: &str) -> Option<&DiagnosisNode> {
        self.diagnoses.iter().find(|n| n.id == id)
    }

    /// Kind of the node with `id`, if any.
    pub fn kind_of(&self, id: &str) -> Option<NodeKind> {
        if id == VISIT_EVENT_ID {
            return Some(NodeKind::Visit);
        }
        if self.diagnoses.iter().any(|n| n.id == id) {
            Some(NodeKind::Diagnosis)
        } else if self.symptoms.iter().any(|n| n.id == id) {
            Some(NodeKind::Symptom)
        } else if self.treatments.iter().any(|n| n.id == id) {
            Some(NodeKind::Treatment)
        } else if self.past_history.iter().any(|n| n.id == id) {
            Some(NodeKind::PastHistory)
        } else {
            None
        }
    }

    pub fn node_kinds(&self) -> BTreeMap<String, NodeKind> {
        let mut out = BTreeMap::new();
        out.insert(VISIT_EVENT_ID.to_string(), NodeKind::Visit);
        for n in &self.diagnoses {
            out.insert(n.id.clone(), NodeKind::Diagnosis);
        }
        for n in &self.symptoms {
            out.insert(n.id.clone(), NodeKind::Symptom);
        }
        for n in &self.treatments {
            out.insert(n.id.clone(), NodeKind::Treatment);
        }
        for n in &self.past_history {
            out.insert(n.id.clone(), NodeKind::PastHistory);
        }
        out
    }

    /// `(node_id, duration_ids)` for every node that references durations.
    pub fn duration_refs(&self) -> Vec<(&str, &[String])> {
        let mut out: Vec<(&str, &[String])> = Vec::new();
        out.extend(self.symptoms.iter().map(|n| (n.id.as_str(), n.duration_ids.as_slice())));
        out.extend(self.treatments.iter().map(|n| (n.id.as_str(), n.duration_ids.as_slice())));
        out.extend(self.past_history.iter().map(|n| (n.id.as_str(), n.duration_ids.as_slice())));
        out
    }

    /// Mutable access to the duration references of every dated node.
    pub fn duration_refs_mut(&mut self) -> Vec<(&str, &mut Vec<String>)> {
        let mut out: Vec<(&str, &mut Vec<String>)> = Vec::new();
        out.extend(self.symptoms.iter_mut().map(|n| (n.id.as_str(), &mut n.duration_ids)));
        out.extend(self.treatments.iter_mut().map(|n| (n.id.as_str(), &mut n.duration_ids)));
        out.extend(self.past_history.iter_mut().map(|n| (n.id.as_str(), &mut n.duration_ids)));
        out
    }

    pub fn relations_of(&self, ty: RelationType) -> impl Iterator<Item = &Relation> {
        self.relations.iter().filter(move |r| r.relation_type == ty)
    }

    /// Add a relation unless the exact triple already exists.
    pub fn add_relation(&mut self, rel: Relation) -> bool {
        if self.relations.contains(&rel) {
            false
        } else {
            self.relations.push(rel);
            true
        }
    }

    /// Earliest start day over the node's referenced durations.
    pub fn earliest_start(&self, node_id: &str) -> Option<i64> {
        let map = self.duration_map();
        self.duration_refs()
            .into_iter()
            .find(|(id, _)| *id == node_id)
            .and_then(|(_, ids)| ids.iter().filter_map(|d| map.get(d.as_str()).map(|d| d.start())).min())
    }
}

/// Next free id `<prefix><NNN>` given existing ids with the same prefix.
pub fn next_id<'a>(prefix: &str, existing: impl IntoIterator<Item = &'a str>) -> String {
    let max = existing
        .into_iter()
        .filter_map(|id| id.strip_prefix(prefix))
        .filter_map(|n| n.parse::<u32>().ok())
        .max()
        .unwrap_or(0);
    format_id(prefix, max + 1)
}

pub fn format_id(prefix: &str, n: u32) -> String {
    format!("{prefix}{n:03}")
}
