//! Random graph generators for property checks.

use rand::seq::SliceRandom;
use rand::Rng;

use anonpsy::graph::{
    format_id, is_administrable, DiagnosisNode, DurationInterval, FamilyHistoryEntry, PastHistoryNode, Relation,
    RelationType, Route, SemanticGraph, StebContext, SymptomNode, TreatmentNode, VISIT_EVENT_ID,
};

/// Strings that trip naive YAML emitters.
const AWKWARD: &[&str] = &[
    "",
    "yes",
    "No",
    "null",
    "~",
    "true",
    "123",
    "1e3",
    "0x1F",
    "- dash",
    "a: b",
    "#hash",
    " leading",
    "trailing ",
    "two\nlines",
    "say \"hi\"",
    "it's",
    "tab\there",
    "ünïcödé",
    "[flow]",
    "{map}",
    "*star",
    "&amp",
    "!bang",
    "%pct",
    "@at",
    "`tick`",
    "50%",
    "ends with colon:",
    "?",
];

const PLAIN: &[&str] = &[
    "low mood",
    "poor sleep",
    "auditory hallucinations",
    "worry about work",
    "reduced appetite",
    "panic at night",
    "irritability",
];

const DIAGNOSES: &[&str] = &[
    "Major depressive disorder",
    "Schizophrenia",
    "Antisocial personality disorder",
    "Alcohol use disorder, severe",
    "Generalized anxiety disorder",
    "Bipolar I disorder, most recent episode manic",
];

const TREATMENT_TYPES: &[&str] = &["medication", "psychotherapy", "drug", "ECT", "supplement", "admission"];

const ROUTES: [Route; 7] = [
    Route::Oral,
    Route::Intravenous,
    Route::Intramuscular,
    Route::Subcutaneous,
    Route::Topical,
    Route::Inhaled,
    Route::Other,
];

fn text(rng: &mut impl Rng) -> String {
    if rng.gen_bool(0.3) {
        AWKWARD.choose(rng).unwrap().to_string()
    } else {
        PLAIN.choose(rng).unwrap().to_string()
    }
}

fn nonempty(rng: &mut impl Rng) -> String {
    let s = text(rng);
    if s.trim().is_empty() {
        "label".into()
    } else {
        s
    }
}

fn opt(rng: &mut impl Rng) -> Option<String> {
    rng.gen_bool(0.5).then(|| text(rng))
}

fn context(rng: &mut impl Rng) -> StebContext {
    let mut c = StebContext { situation: opt(rng), thought: opt(rng), emotion: opt(rng), behavior: opt(rng) };
    if c.is_empty() {
        c.behavior = Some(nonempty(rng));
    }
    c
}

fn interval(rng: &mut (impl Rng + ?Sized), n: usize) -> DurationInterval {
    let offset = rng.gen_range(-400..=30);
    let span = rng.gen_range(1..=120);
    let mut d = DurationInterval::new(format_id("dur_", n as u32 + 1), offset, span);
    d.is_virtual = rng.gen_bool(0.2);
    d.age_anchored = rng.gen_bool(0.15);
    d
}

/// Symptom, treatment and past-history nodes over a shared duration pool,
/// each node referencing any number of intervals. Not necessarily valid:
/// symptoms may hold several intervals. At most `max_nodes` nodes and
/// `max_episodes` intervals.
pub fn timeline(rng: &mut impl Rng, max_nodes: usize, max_episodes: usize) -> SemanticGraph {
    let mut g = SemanticGraph::default();
    let episodes = rng.gen_range(1..=max_episodes);
    g.durations = (0..episodes).map(|i| interval(rng, i)).collect();
    let nodes = rng.gen_range(1..=max_nodes);
    for i in 0..nodes {
        let k = rng.gen_range(0..=4.min(episodes));
        let ids: Vec<String> = g.durations.choose_multiple(rng, k).map(|d| d.id.clone()).collect();
        match rng.gen_range(0..3) {
            0 => g.symptoms.push(SymptomNode {
                id: format_id("s_", i as u32 + 1),
                symptom: "x".into(),
                pattern: String::new(),
                current_symptom: false,
                evidence_text: String::new(),
                contexts: vec![],
                duration_ids: ids,
            }),
            1 => g.treatments.push(TreatmentNode {
                id: format_id("t_", i as u32 + 1),
                treatment_type: "medication".into(),
                name: "x".into(),
                dose: None,
                route: None,
                frequency: None,
                outcome: None,
                duration_ids: ids,
            }),
            _ => g.past_history.push(PastHistoryNode {
                id: format_id("ph_", i as u32 + 1),
                condition: "x".into(),
                duration_ids: ids,
            }),
        }
    }
    g
}

/// A graph that passes `validate_graph`, with every field populated from
/// a mix of plain and awkward strings.
pub fn valid_graph(rng: &mut impl Rng) -> SemanticGraph {
    let mut g = SemanticGraph::default();
    let demo = &mut g.attributes.demographics;
    demo.age = rng.gen_range(18..=85);
    demo.sex = ["female", "male", "Female", "not stated"].choose(rng).unwrap().to_string();
    demo.ethnicity = text(rng);
    demo.occupation = text(rng);
    demo.family_structure = text(rng);
    let tr = &mut g.attributes.test_results;
    tr.labs = text(rng);
    tr.imaging = text(rng);
    tr.mental_status = text(rng);
    tr.other = text(rng);
    for _ in 0..rng.gen_range(0..=2) {
        g.attributes.family_history.push(FamilyHistoryEntry {
            member: nonempty(rng),
            condition: text(rng),
            evidence_text: text(rng),
        });
    }

    let n_dx = rng.gen_range(1..=3);
    for (i, label) in DIAGNOSES.choose_multiple(rng, n_dx).enumerate() {
        g.diagnoses.push(DiagnosisNode { id: format_id("d_", i as u32 + 1), label: label.to_string() });
    }

    let nodes = rng.gen_range(1..=8);
    let mut episodes = 0usize;
    let mut fresh = |rng: &mut dyn rand::RngCore, g: &mut SemanticGraph| -> String {
        let d = interval(rng, episodes);
        episodes += 1;
        let id = d.id.clone();
        g.durations.push(d);
        id
    };
    for i in 0..nodes {
        let n = i as u32 + 1;
        match rng.gen_range(0..4) {
            0 | 1 => {
                let dur = if !g.durations.is_empty() && rng.gen_bool(0.25) {
                    g.durations.choose(rng).unwrap().id.clone()
                } else {
                    fresh(rng, &mut g)
                };
                let current = g.duration(&dur).unwrap().covers_day0();
                g.symptoms.push(SymptomNode {
                    id: format_id("s_", n),
                    symptom: nonempty(rng),
                    pattern: text(rng),
                    current_symptom: current,
                    evidence_text: text(rng),
                    contexts: (0..rng.gen_range(0..=2)).map(|_| context(rng)).collect(),
                    duration_ids: vec![dur],
                });
            }
            2 => {
                let ty = TREATMENT_TYPES.choose(rng).unwrap().to_string();
                let route = (is_administrable(&ty) && rng.gen_bool(0.6)).then(|| *ROUTES.choose(rng).unwrap());
                let ids = (0..rng.gen_range(0..=2)).map(|_| fresh(rng, &mut g)).collect();
                g.treatments.push(TreatmentNode {
                    id: format_id("t_", n),
                    treatment_type: ty,
                    name: nonempty(rng),
                    dose: opt(rng),
                    route,
                    frequency: opt(rng),
                    outcome: opt(rng),
                    duration_ids: ids,
                });
            }
            _ => {
                let ids = (0..rng.gen_range(0..=1)).map(|_| fresh(rng, &mut g)).collect();
                g.past_history.push(PastHistoryNode {
                    id: format_id("ph_", n),
                    condition: nonempty(rng),
                    duration_ids: ids,
                });
            }
        }
    }

    let v = &mut g.visit_event;
    v.setting = ["outpatient", "emergency department", "inpatient unit"].choose(rng).unwrap().to_string();
    v.arrival_mode = text(rng);
    v.legal_status = text(rng);
    v.reason_for_visit = text(rng);
    v.safety_flags = (0..rng.gen_range(0..=2)).map(|_| nonempty(rng)).collect();
    v.source_of_information = text(rng);
    v.pathway = opt(rng);
    v.visit_episode = text(rng);

    let dx: Vec<String> = g.diagnoses.iter().map(|d| d.id.clone()).collect();
    let mut rels = Vec::new();
    for s in &g.symptoms {
        if rng.gen_bool(0.7) {
            rels.push(Relation::new(RelationType::ManifestsAs, &s.id, dx.choose(rng).unwrap()));
        }
        if s.current_symptom && rng.gen_bool(0.5) {
            rels.push(Relation::new(RelationType::PresentsWith, VISIT_EVENT_ID, &s.id));
        }
        if rng.gen_bool(0.1) {
            rels.push(Relation::new(RelationType::Induces, &s.id, dx.choose(rng).unwrap()));
        }
    }
    let symptom_ids: Vec<String> = g.symptoms.iter().map(|s| s.id.clone()).collect();
    let past_ids: Vec<String> = g.past_history.iter().map(|p| p.id.clone()).collect();
    for t in &g.treatments {
        match rng.gen_range(0..4) {
            0 if !symptom_ids.is_empty() => {
                rels.push(Relation::new(RelationType::TreatmentOf, &t.id, symptom_ids.choose(rng).unwrap()))
            }
            1 if !past_ids.is_empty() => {
                rels.push(Relation::new(RelationType::TreatmentOf, &t.id, past_ids.choose(rng).unwrap()))
            }
            3 => {}
            _ => rels.push(Relation::new(RelationType::TreatmentOf, &t.id, dx.choose(rng).unwrap())),
        }
    }
    for p in &g.past_history {
        if rng.gen_bool(0.2) {
            rels.push(Relation::new(RelationType::Induces, &p.id, dx.choose(rng).unwrap()));
        }
    }
    rels.sort();
    rels.dedup();
    g.relations = rels;
    g
}
