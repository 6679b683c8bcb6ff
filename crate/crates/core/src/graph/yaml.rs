//! Stable YAML form of a [`SemanticGraph`].
//!
//! The emitter is hand-written so the byte layout is fixed: 2-space indent,
//! LF line endings, fixed key order, duration id lists in flow style, and
//! strings quoted only when a plain scalar would not read back as the same
//! string. Parsing goes through serde with unknown keys rejected.

use std::fmt::Write as _;

use serde::Deserialize;
use thiserror::Error;

use super::{
    validate_graph, CaseAttributes, Demographics, DiagnosisNode, DurationInterval, FamilyHistoryEntry, PastHistoryNode,
    Relation, SemanticGraph, StebContext, StebField, SymptomNode, TestResults, TreatmentNode, ValidationReport,
    VisitEvent,
};

#[derive(Debug, Error)]
pub enum YamlError {
    #[error("graph failed validation: {0}")]
    Invalid(ValidationReport),
    #[error("parse error at `{path}`: {message}")]
    Parse { path: String, message: String },
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphDoc {
    demographics: Demographics,
    test_results: TestResults,
    family_history: Vec<FamilyHistoryEntry>,
    diagnoses: Vec<DiagnosisNode>,
    symptoms: Vec<SymptomNode>,
    treatments: Vec<TreatmentNode>,
    past_history: Vec<PastHistoryNode>,
    visit_event: VisitEvent,
    relations: Vec<Relation>,
    durations: Vec<DurationInterval>,
}

/// Parse a graph document. Unknown keys, missing keys and type mismatches
/// are reported with the path at which they occur.
pub fn parse_yaml(text: &str) -> Result<SemanticGraph, YamlError> {
    let de = serde_yaml::Deserializer::from_str(text);
    let doc: GraphDoc = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        YamlError::Parse { path, message: e.into_inner().to_string() }
    })?;
    Ok(SemanticGraph {
        attributes: CaseAttributes {
            demographics: doc.demographics,
            family_history: doc.family_history,
            test_results: doc.test_results,
        },
        diagnoses: doc.diagnoses,
        symptoms: doc.symptoms,
        treatments: doc.treatments,
        past_history: doc.past_history,
        visit_event: doc.visit_event,
        relations: doc.relations,
        durations: doc.durations,
    })
}

/// Serialize a valid graph. Invalid graphs are refused with their report.
pub fn serialize_yaml(g: &SemanticGraph) -> Result<String, YamlError> {
    let report = validate_graph(g);
    if !report.is_valid() {
        return Err(YamlError::Invalid(report));
    }
    Ok(emit(&g.clone().canonical()))
}

/// Emit without validation. Used for intermediate stage dumps.
pub(crate) fn emit(g: &SemanticGraph) -> String {
    let mut w = Emitter::default();
    let demo = &g.attributes.demographics;
    w.key(0, "demographics");
    w.field(2, "age", &demo.age.to_string());
    w.string(2, "sex", &demo.sex);
    w.string(2, "ethnicity", &demo.ethnicity);
    w.string(2, "occupation", &demo.occupation);
    w.string(2, "family_structure", &demo.family_structure);

    w.key(0, "test_results");
    for (k, val) in g.attributes.test_results.fields() {
        w.string(2, k, val);
    }

    w.list(0, "family_history", &g.attributes.family_history, |w, f| {
        w.item_string(2, "member", &f.member);
        w.string(4, "condition", &f.condition);
        w.string(4, "evidence_text", &f.evidence_text);
    });

    w.list(0, "diagnoses", &g.diagnoses, |w, d| {
        w.item_string(2, "id", &d.id);
        w.string(4, "label", &d.label);
    });

    w.list(0, "symptoms", &g.symptoms, |w, s| {
        w.item_string(2, "id", &s.id);
        w.string(4, "symptom", &s.symptom);
        w.string(4, "pattern", &s.pattern);
        w.field(4, "current_symptom", bool_str(s.current_symptom));
        w.string(4, "evidence_text", &s.evidence_text);
        w.list(4, "contexts", &s.contexts, context);
        w.flow(4, "duration_ids", &s.duration_ids);
    });

    w.list(0, "treatments", &g.treatments, |w, t| {
        w.item_string(2, "id", &t.id);
        w.string(4, "treatment_type", &t.treatment_type);
        w.string(4, "name", &t.name);
        if let Some(dose) = &t.dose {
            w.string(4, "dose", dose);
        }
        if let Some(route) = t.route {
            w.string(4, "route", route.as_str());
        }
        if let Some(freq) = &t.frequency {
            w.string(4, "frequency", freq);
        }
        if let Some(outcome) = &t.outcome {
            w.string(4, "outcome", outcome);
        }
        w.flow(4, "duration_ids", &t.duration_ids);
    });

    w.list(0, "past_history", &g.past_history, |w, p| {
        w.item_string(2, "id", &p.id);
        w.string(4, "condition", &p.condition);
        w.flow(4, "duration_ids", &p.duration_ids);
    });

    let v = &g.visit_event;
    w.key(0, "visit_event");
    w.string(2, "setting", &v.setting);
    w.string(2, "arrival_mode", &v.arrival_mode);
    w.string(2, "legal_status", &v.legal_status);
    w.string(2, "reason_for_visit", &v.reason_for_visit);
    w.list(2, "safety_flags", &v.safety_flags, |w, f| w.item_scalar(4, f));
    w.string(2, "source_of_information", &v.source_of_information);
    if let Some(p) = &v.pathway {
        w.string(2, "pathway", p);
    }
    w.string(2, "visit_episode", &v.visit_episode);

    w.list(0, "relations", &g.relations, |w, r| {
        w.item_string(2, "relation_type", r.relation_type.as_str());
        w.string(4, "source_id", &r.source_id);
        w.string(4, "target_id", &r.target_id);
    });

    w.list(0, "durations", &g.durations, |w, d| {
        w.item_string(2, "id", &d.id);
        w.field(4, "offset_days", &d.offset_days.to_string());
        w.field(4, "span_days", &d.span_days.to_string());
        w.field(4, "virtual", bool_str(d.is_virtual));
        if d.age_anchored {
            w.field(4, "age_anchored", "true");
        }
    });
    w.out
}

fn context(w: &mut Emitter, c: &StebContext) {
    let mut first = true;
    for f in StebField::ALL {
        if let Some(val) = c.get(f) {
            if first {
                w.item_string(6, f.name(), val);
                first = false;
            } else {
                w.string(8, f.name(), val);
            }
        }
    }
    if first {
        // empty frame; only reachable for invalid graphs
        w.line(6, "- {}");
    }
}

fn bool_str(b: bool) -> &'static str {
    if b {
        "true"
    } else {
        "false"
    }
}

#[derive(Default)]
struct Emitter {
    out: String,
}

impl Emitter {
    fn line(&mut self, indent: usize, text: &str) {
        for _ in 0..indent {
            self.out.push(' ');
        }
        self.out.push_str(text);
        self.out.push('\n');
    }

    fn key(&mut self, indent: usize, key: &str) {
        self.line(indent, &format!("{key}:"));
    }

    fn field(&mut self, indent: usize, key: &str, raw: &str) {
        self.line(indent, &format!("{key}: {raw}"));
    }

    fn string(&mut self, indent: usize, key: &str, value: &str) {
        self.line(indent, &format!("{key}: {}", scalar(value, false)));
    }

    fn item_string(&mut self, indent: usize, key: &str, value: &str) {
        self.line(indent, &format!("- {key}: {}", scalar(value, false)));
    }

    fn item_scalar(&mut self, indent: usize, value: &str) {
        self.line(indent, &format!("- {}", scalar(value, false)));
    }

    fn flow(&mut self, indent: usize, key: &str, items: &[String]) {
        let parts: Vec<String> = items.iter().map(|s| scalar(s, true)).collect();
        self.line(indent, &format!("{key}: [{}]", parts.join(", ")));
    }

    fn list<T>(&mut self, indent: usize, key: &str, items: &[T], mut each: impl FnMut(&mut Self, &T)) {
        if items.is_empty() {
            self.line(indent, &format!("{key}: []"));
            return;
        }
        self.key(indent, key);
        for item in items {
            each(self, item);
        }
    }
}

const RESERVED: &[&str] = &["true", "false", "null", "~", "yes", "no", "on", "off", "y", "n"];

/// Render a string as a YAML scalar, plain when that is unambiguous.
fn scalar(s: &str, in_flow: bool) -> String {
    if is_plain_safe(s, in_flow) {
        s.to_string()
    } else {
        quote(s)
    }
}

fn is_plain_safe(s: &str, in_flow: bool) -> bool {
    let Some(first) = s.chars().next() else {
        return false;
    };
    if !first.is_alphanumeric() {
        return false;
    }
    if s.trim() != s || RESERVED.contains(&s.to_ascii_lowercase().as_str()) {
        return false;
    }
    if first.is_ascii_digit() && !s.chars().any(char::is_whitespace) {
        return false;
    }
    if s.contains(": ") || s.contains(" #") || s.ends_with(':') {
        return false;
    }
    if s.chars().any(|c| c.is_control() || matches!(c, '"' | '\'' | '`' | '\u{feff}')) {
        return false;
    }
    if in_flow && s.chars().any(|c| matches!(c, ',' | '[' | ']' | '{' | '}')) {
        return false;
    }
    // non-breaking and other unicode whitespace confuse some readers
    !s.chars().any(|c| c.is_whitespace() && c != ' ')
}

fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            '\r' => out.push_str("\\r"),
            c if c.is_control() || c == '\u{feff}' || c == '\u{85}' || c == '\u{2028}' || c == '\u{2029}' => {
                let _ = write!(out, "\\u{:04X}", c as u32);
            }
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::*;

    fn listing_graph() -> SemanticGraph {
        let mut g = SemanticGraph::default();
        g.diagnoses.push(DiagnosisNode { id: "d_001".into(), label: "delusional disorder".into() });
        g.symptoms.push(SymptomNode {
            id: "s_003".into(),
            symptom: "ideas of reference".into(),
            pattern: "continuous".into(),
            current_symptom: true,
            evidence_text: "the news announcers began to comment indirectly and critically about him.".into(),
            contexts: vec![StebContext {
                situation: Some("while watching a late-night news program".into()),
                thought: Some("the news announcers were commenting about me.".into()),
                emotion: Some("anxious".into()),
                behavior: Some("repeatedly called the television station".into()),
            }],
            duration_ids: vec!["dvm_048".into()],
        });
        let mut d = DurationInterval::new("dvm_048", -60, 90);
        d.is_virtual = true;
        g.durations.push(d);
        g
    }

    #[test]
    fn symptom_layout_is_fixed() {
        let text = serialize_yaml(&listing_graph()).unwrap();
        let expected = "\
symptoms:
  - id: s_003
    symptom: ideas of reference
    pattern: continuous
    current_symptom: true
    evidence_text: the news announcers began to comment indirectly and critically about him.
    contexts:
      - situation: while watching a late-night news program
        thought: the news announcers were commenting about me.
        emotion: anxious
        behavior: repeatedly called the television station
    duration_ids: [dvm_048]
";
        assert!(text.contains(expected), "{text}");
    }

    #[test]
    fn round_trip_and_reserialize() {
        let g = listing_graph().canonical();
        let text = serialize_yaml(&g).unwrap();
        let back = parse_yaml(&text).unwrap();
        assert_eq!(back, g);
        assert_eq!(serialize_yaml(&back).unwrap(), text);
    }

    #[test]
    fn permuted_graphs_emit_identical_bytes() {
        let mut a = listing_graph();
        a.diagnoses.push(DiagnosisNode { id: "d_002".into(), label: "insomnia disorder".into() });
        a.relations.push(Relation::new(RelationType::ManifestsAs, "s_003", "d_001"));
        a.relations.push(Relation::new(RelationType::PresentsWith, VISIT_EVENT_ID, "s_003"));
        let mut b = a.clone();
        b.diagnoses.reverse();
        b.relations.reverse();
        assert_eq!(serialize_yaml(&a).unwrap(), serialize_yaml(&b).unwrap());
    }

    #[test]
    fn unknown_key_rejected_with_path() {
        let text = serialize_yaml(&listing_graph()).unwrap().replace("symptoms:", "symptomz:");
        let err = parse_yaml(&text).unwrap_err();
        assert!(err.to_string().contains("symptomz"), "{err}");
    }

    #[test]
    fn nested_unknown_key_names_path() {
        let text =
            serialize_yaml(&listing_graph()).unwrap().replace("    pattern: continuous", "    patern: continuous");
        match parse_yaml(&text).unwrap_err() {
            YamlError::Parse { path, message } => {
                assert!(path.starts_with("symptoms[0]"), "{path}");
                assert!(message.contains("patern"));
            }
            other => panic!("{other}"),
        }
    }

    #[test]
    fn negative_span_rejected() {
        let text = serialize_yaml(&listing_graph()).unwrap().replace("span_days: 90", "span_days: -3");
        let err = parse_yaml(&text).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("span_days < 0"), "{msg}");
        assert!(msg.contains("durations[0]"), "{msg}");
    }

    #[test]
    fn invalid_graph_refused() {
        let mut g = listing_graph();
        g.symptoms[0].duration_ids = vec!["nope".into()];
        assert!(matches!(serialize_yaml(&g), Err(YamlError::Invalid(_))));
    }

    #[test]
    fn awkward_strings_are_quoted() {
        for s in ["", " lead", "true", "No", "42", "1.5", "- dash", "a: b", "x #y", "say \"hi\"", "line\nbreak", "[x]"]
        {
            assert!(scalar(s, false).starts_with('"'), "{s:?}");
        }
        for s in ["50 mg", "hello, world", "steroid (taper)", "ideas of reference"] {
            assert_eq!(scalar(s, false), s);
        }
        assert!(scalar("a,b", true).starts_with('"'));
    }

    #[test]
    fn missing_test_result_key_is_parse_error() {
        let text = serialize_yaml(&listing_graph()).unwrap().replace("  imaging: \"\"\n", "");
        let err = parse_yaml(&text).unwrap_err();
        assert!(err.to_string().contains("imaging"), "{err}");
    }
}
