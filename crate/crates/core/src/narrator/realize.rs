//! Surface realization of an outline.

use std::collections::BTreeSet;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::gateway::{temperature_for, vars, Attempted, Gateway, Operator, SYMPTOM_SENTENCE_TEMPERATURE};
use crate::graph::{SemanticGraph, StebContext, StebField, TreatmentNode};
use crate::text::{capitalize, join_and, normalize_ws, split_sentences, terminate, tokens};

use super::outline::{Block, NarrativeOutline};
use super::time::time_phrase;
use super::NarratorError;

/// Retries for each generation call.
pub const GENERATE_RETRIES: u32 = 2;
/// Token-set Jaccard above which a tail sentence restates a draft sentence.
const RESTATE_SIMILARITY: f64 = 0.6;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RealizeLog {
    pub rejections: Vec<String>,
    /// Outline items realized by a fallback template.
    pub fallbacks: Vec<String>,
}

fn person_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"\b(?:I|me|my|mine|myself|we|us|our|ours|you|your|yours)\b|\b(?i:i'm|i've|we're|you're)\b").unwrap()
    })
}

fn title_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\b(?:Mr|Mrs|Ms|Miss|Dr|Prof)\.?\s+[A-Z]").unwrap())
}

fn bigram_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\b([A-Z][a-z]+)\s+([A-Z][a-z]+)\b").unwrap())
}

const ALLOWED_CAPITALS: &[&str] = &[
    // sentence starters and function words
    "a",
    "an",
    "the",
    "she",
    "he",
    "they",
    "her",
    "his",
    "their",
    "this",
    "that",
    "these",
    "on",
    "in",
    "at",
    "after",
    "before",
    "during",
    "when",
    "while",
    "over",
    "upon",
    "since",
    "one",
    "two",
    "three",
    "four",
    "five",
    "six",
    "seven",
    "eight",
    "nine",
    "ten",
    "eleven",
    "twelve",
    "was",
    "were",
    "had",
    "has",
    "is",
    "also",
    "both",
    "no",
    // clinical vocabulary that is commonly capitalized
    "emergency",
    "department",
    "room",
    "services",
    "unit",
    "intensive",
    "care",
    "psychiatric",
    "crisis",
    "team",
    "mental",
    "status",
    "examination",
    "state",
    "mini",
    "full",
    "scale",
    "iq",
    "major",
    "depressive",
    "disorder",
    "bipolar",
    "personality",
    "generalized",
    "anxiety",
    "post",
    "traumatic",
    "stress",
    "obsessive",
    "compulsive",
    "attention",
    "deficit",
    "hyperactivity",
    "autism",
    "spectrum",
    "child",
    "protective",
    "adult",
    "type",
];

/// Capitalized bigrams that look like personal or place names.
pub fn proper_name_tokens(text: &str, allowed: &BTreeSet<String>) -> Vec<String> {
    let mut out: Vec<String> = title_re().find_iter(text).map(|m| m.as_str().to_string()).collect();
    for c in bigram_re().captures_iter(text) {
        let ok = |w: &str| {
            let w = w.to_lowercase();
            ALLOWED_CAPITALS.contains(&w.as_str()) || allowed.contains(&w)
        };
        if !ok(&c[1]) || !ok(&c[2]) {
            out.push(c[0].to_string());
        }
    }
    out
}

fn vocabulary(text: &str) -> BTreeSet<String> {
    text.split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty()).map(str::to_lowercase).collect()
}

/// Drop quotation wrappers and lines that open with a role word.
pub fn strip_meta(text: &str) -> String {
    let kept: Vec<&str> = text
        .lines()
        .filter(|l| {
            let l = l.trim_start().to_lowercase();
            !["assistant:", "user:", "system:", "here is", "here's", "sure", "certainly"]
                .iter()
                .any(|p| l.starts_with(p))
        })
        .collect();
    let joined = kept.join("\n");
    let t = joined.trim();
    let t = t.strip_prefix(['"', '\u{201c}']).unwrap_or(t);
    let t = t.strip_suffix(['"', '\u{201d}']).unwrap_or(t);
    normalize_ws(t)
}

fn lead_facts(o: &NarrativeOutline) -> String {
    let l = &o.lead;
    let mut lines = vec![
        format!("age: {}", l.age),
        format!("sex: {}", l.sex),
        format!("setting: {}", l.setting),
        format!("arrival_mode: {}", l.arrival_mode),
        format!("reason: {}", l.reason),
    ];
    if let Some(p) = &l.pathway {
        lines.push(format!("pathway: {p}"));
    }
    lines.push(format!("source: {}", l.source));
    lines.push(format!("visit_episode: {}", l.visit_episode));
    lines.join("\n")
}

pub fn check_lead(text: &str, facts: &str) -> Result<String, String> {
    let t = strip_meta(text);
    let n = split_sentences(&t).len();
    if !(2..=5).contains(&n) {
        return Err(format!("lead has {n} sentences"));
    }
    if let Some(m) = person_re().find(&t) {
        return Err(format!("first or second person `{}`", m.as_str()));
    }
    let names = proper_name_tokens(&t, &vocabulary(facts));
    if !names.is_empty() {
        return Err(format!("possible identifier `{}`", names[0]));
    }
    Ok(t)
}

pub fn narrate_lead(o: &NarrativeOutline, gw: &Gateway) -> Result<(String, RealizeLog), NarratorError> {
    let facts = lead_facts(o);
    let v = vars([("facts", facts.clone())]);
    let result = gw
        .ask_validated("generate_lead", &v, temperature_for(Operator::Generate), GENERATE_RETRIES, |t| {
            check_lead(t, &facts)
        })
        .map_err(|e| NarratorError::Gateway { stage: "lead", source: e })?;
    match result {
        Attempted::Accepted { value, rejections } => Ok((value, RealizeLog { rejections, fallbacks: vec![] })),
        Attempted::Rejected { rejections } => Err(NarratorError::Lead { rejections }),
    }
}

pub fn pronoun(sex: &str) -> &'static str {
    match sex.trim().to_lowercase().as_str() {
        "female" | "woman" | "f" => "she",
        "male" | "man" | "m" => "he",
        _ => "they",
    }
}

fn steb_lines(contexts: &[StebContext]) -> String {
    if contexts.is_empty() {
        return "(no episode details)".into();
    }
    let mut lines = Vec::new();
    for c in contexts {
        for f in StebField::ALL {
            if let Some(v) = c.get(f) {
                lines.push(format!("{}: {v}", f.name()));
            }
        }
    }
    lines.join("\n")
}

fn fallback_symptom(tp: &str, subj: &str, symptom: &str, contexts: &[StebContext]) -> String {
    let mut s = format!("{}, {subj} experienced {symptom}", capitalize(tp));
    if let Some(c) = contexts.first() {
        if let Some(v) = c.get(StebField::Situation) {
            s.push_str(&format!(" while {v}"));
        }
        if let Some(v) = c.get(StebField::Thought) {
            s.push_str(&format!(", thinking that {v}"));
        }
        if let Some(v) = c.get(StebField::Emotion) {
            s.push_str(&format!(", feeling {v}"));
        }
        if let Some(v) = c.get(StebField::Behavior) {
            s.push_str(&format!(", and {v}"));
        }
    }
    terminate(&s)
}

pub fn check_symptom_sentence(text: &str, tp: &str) -> Result<String, String> {
    let t = strip_meta(text);
    let n = split_sentences(&t).len();
    if n != 1 {
        return Err(format!("expected one sentence, got {n}"));
    }
    if !t.to_lowercase().starts_with(&tp.to_lowercase()) {
        return Err("sentence does not open with the time phrase".into());
    }
    if let Some(m) = person_re().find(&t) {
        return Err(format!("first or second person `{}`", m.as_str()));
    }
    Ok(t)
}

fn treatment_phrase(t: &TreatmentNode) -> String {
    let mut s = t.name.trim().to_string();
    let details: Vec<String> = [t.dose.clone(), t.route.map(|r| r.as_str().to_string()), t.frequency.clone()]
        .into_iter()
        .flatten()
        .filter(|d| !d.trim().is_empty())
        .collect();
    if !details.is_empty() {
        s.push_str(&format!(" ({})", details.join(", ")));
    }
    s
}

fn regimen_sentence(g: &SemanticGraph, tp: Option<&str>, subj: &str, ids: &[String]) -> String {
    let ts: Vec<&TreatmentNode> = ids.iter().filter_map(|id| g.treatment(id)).collect();
    let names: Vec<String> = ts.iter().map(|t| treatment_phrase(t)).collect();
    let opener = tp.map_or_else(|| capitalize(subj), |tp| format!("{}, {subj}", capitalize(tp)));
    let mut s = format!("{opener} received {}", join_and(&names));
    let outcomes: Vec<String> = ts.iter().filter_map(|t| t.outcome.clone()).filter(|o| !o.trim().is_empty()).collect();
    if !outcomes.is_empty() {
        s.push_str(&format!(", and the outcome was {}", join_and(&outcomes)));
    }
    terminate(&s)
}

struct History<'a> {
    g: &'a SemanticGraph,
    o: &'a NarrativeOutline,
    gw: &'a Gateway,
    subj: &'static str,
    narrated: BTreeSet<(String, String)>,
    log: RealizeLog,
}

impl History<'_> {
    /// Record a narration; false when the pair was already narrated.
    fn claim(&mut self, item: &str, dur: &Option<String>) -> bool {
        self.narrated.insert((item.to_string(), dur.clone().unwrap_or_else(|| "-".into())))
    }

    fn phrase(&self, start: Option<i64>) -> Option<String> {
        start.map(|s| time_phrase(s, self.o.lexicon))
    }

    fn symptom(&mut self, id: &str, b: &Block) -> Option<String> {
        if !self.claim(id, &b.duration_id) {
            return None;
        }
        let node = self.g.symptom(id)?;
        let tp = self.phrase(b.start).unwrap_or_else(|| "at an unknown time".into());
        let v = vars([
            ("time_phrase", tp.clone()),
            ("symptom", node.symptom.clone()),
            ("steb", steb_lines(&node.contexts)),
        ]);
        let r = self.gw.ask_validated("generate_symptom", &v, SYMPTOM_SENTENCE_TEMPERATURE, GENERATE_RETRIES, |t| {
            check_symptom_sentence(t, &tp)
        });
        let rejections = match r {
            Ok(Attempted::Accepted { value, rejections }) => {
                self.log.rejections.extend(rejections);
                return Some(capitalize(&value));
            }
            Ok(Attempted::Rejected { rejections }) => rejections,
            Err(e) => vec![e.to_string()],
        };
        self.log.rejections.extend(rejections.into_iter().map(|r| format!("{id}: {r}")));
        self.log.fallbacks.push(id.to_string());
        Some(fallback_symptom(&tp, self.subj, &node.symptom, &node.contexts))
    }

    fn regimen(&mut self, ids: &[String], dur: &Option<String>, start: Option<i64>) -> Option<String> {
        let fresh: Vec<String> = ids.iter().filter(|t| self.claim(t, dur)).cloned().collect();
        if fresh.is_empty() {
            return None;
        }
        Some(regimen_sentence(self.g, self.phrase(start).as_deref(), self.subj, &fresh))
    }

    fn run(mut self) -> (String, RealizeLog) {
        let mut paragraphs = Vec::new();

        let mut pre = Vec::new();
        for p in &self.o.prepass {
            let Some(node) = self.g.past(&p.past_id) else { continue };
            if !self.claim(&p.past_id, &p.duration_id) {
                continue;
            }
            let s = match self.phrase(p.start) {
                Some(tp) => format!("{}, {} had {}", capitalize(&tp), self.subj, node.condition.trim()),
                None => format!("{} had a history of {}", capitalize(self.subj), node.condition.trim()),
            };
            pre.push(terminate(&s));
            if let Some(s) = self.regimen(&p.treatment_ids, &p.duration_id, p.start) {
                pre.push(s);
            }
        }
        if !pre.is_empty() {
            paragraphs.push(pre.join(" "));
        }

        for b in &self.o.blocks {
            let mut sentences = Vec::new();
            for id in &b.symptom_ids {
                sentences.extend(self.symptom(id, b));
            }
            for r in &b.regimens {
                sentences.extend(self.regimen(r, &b.duration_id, b.start));
            }
            for c in &b.induced {
                let source = self
                    .g
                    .treatment(&c.source_id)
                    .map(|t| t.name.clone())
                    .or_else(|| self.g.symptom(&c.source_id).map(|s| s.symptom.clone()))
                    .unwrap_or_default();
                let names: Vec<String> =
                    c.symptom_ids.iter().filter_map(|id| self.g.symptom(id).map(|s| s.symptom.clone())).collect();
                sentences.push(terminate(&format!(
                    "Following {}, {} went on to develop {}",
                    source.trim(),
                    self.subj,
                    join_and(&names)
                )));
                for id in &c.symptom_ids {
                    sentences.extend(self.symptom(id, b));
                }
            }
            if !sentences.is_empty() {
                paragraphs.push(sentences.join(" "));
            }
        }
        (paragraphs.join("\n\n"), self.log)
    }
}

pub fn narrate_history(g: &SemanticGraph, o: &NarrativeOutline, gw: &Gateway) -> (String, RealizeLog) {
    History { g, o, gw, subj: pronoun(&o.lead.sex), narrated: BTreeSet::new(), log: RealizeLog::default() }.run()
}

fn tail_facts(g: &SemanticGraph, o: &NarrativeOutline) -> Vec<String> {
    let mut out = Vec::new();
    for id in &o.tail.past_history {
        if let Some(p) = g.past(id) {
            out.push(format!("past history: {}", p.condition.trim()));
        }
    }
    out.extend(o.tail.family_history.iter().map(|f| format!("family history: {f}")));
    out.extend(o.tail.day0_tests.iter().map(|(k, v)| format!("{k}: {v}")));
    out
}

pub fn fallback_tail(g: &SemanticGraph, o: &NarrativeOutline) -> String {
    let subj = pronoun(&o.lead.sex);
    let mut out = Vec::new();
    let past: Vec<String> =
        o.tail.past_history.iter().filter_map(|id| g.past(id)).map(|p| p.condition.trim().to_string()).collect();
    if !past.is_empty() {
        out.push(terminate(&format!("{} also had a history of {}", capitalize(subj), join_and(&past))));
    }
    if !o.tail.family_history.is_empty() {
        let fam: Vec<String> = g
            .attributes
            .family_history
            .iter()
            .map(|f| format!("{} in the {}", f.condition.trim(), f.member.trim()))
            .collect();
        out.push(terminate(&format!("Family history was notable for {}", join_and(&fam))));
    }
    if !o.tail.day0_tests.is_empty() {
        let clauses: Vec<String> = o
            .tail
            .day0_tests
            .iter()
            .map(|(k, v)| format!("{}: {}", k.replace('_', " "), v.trim_end_matches('.')))
            .collect();
        out.push(terminate(&format!("At evaluation, {}", clauses.join("; "))));
    }
    out.join(" ")
}

fn token_overlap(a: &str, b: &str) -> f64 {
    let a: BTreeSet<String> = tokens(a).into_iter().collect();
    let b: BTreeSet<String> = tokens(b).into_iter().collect();
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    a.intersection(&b).count() as f64 / a.union(&b).count() as f64
}

pub fn check_tail(text: &str, draft: &str) -> Result<String, String> {
    let t = strip_meta(text);
    let d = normalize_ws(draft);
    // a reply that repeats the whole draft verbatim is trimmed to its suffix
    let appended = t.strip_prefix(d.as_str()).map(str::trim).unwrap_or(&t).to_string();
    let sentences = split_sentences(&appended);
    if !(1..=4).contains(&sentences.len()) {
        return Err(format!("tail has {} sentences", sentences.len()));
    }
    let prior = split_sentences(&d);
    for s in &sentences {
        if prior.iter().any(|p| token_overlap(p, s) > RESTATE_SIMILARITY) {
            return Err(format!("tail restates or rewrites the draft: `{s}`"));
        }
    }
    if let Some(m) = person_re().find(&appended) {
        return Err(format!("first or second person `{}`", m.as_str()));
    }
    Ok(appended)
}

/// Append the tail paragraph. The draft is returned unchanged when nothing
/// remains to be said.
pub fn append_tail(
    draft: &str,
    g: &SemanticGraph,
    o: &NarrativeOutline,
    gw: &Gateway,
) -> Result<(String, RealizeLog), NarratorError> {
    if draft.trim().is_empty() {
        return Err(NarratorError::EmptyDraft);
    }
    if o.tail.is_empty() {
        return Ok((draft.to_string(), RealizeLog::default()));
    }
    let v = vars([("facts", tail_facts(g, o).join("\n")), ("draft", draft.to_string())]);
    let r = gw.ask_validated("generate_tail", &v, temperature_for(Operator::Generate), GENERATE_RETRIES, |t| {
        check_tail(t, draft)
    });
    let mut log = RealizeLog::default();
    let tail = match r {
        Ok(Attempted::Accepted { value, rejections }) => {
            log.rejections = rejections;
            value
        }
        Ok(Attempted::Rejected { rejections }) => {
            log.rejections = rejections;
            log.fallbacks.push("tail".into());
            fallback_tail(g, o)
        }
        Err(e) => {
            log.rejections.push(e.to_string());
            log.fallbacks.push("tail".into());
            fallback_tail(g, o)
        }
    };
    Ok((format!("{draft}\n\n{tail}"), log))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lead_gates() {
        let facts = "age: 34\nsex: female\nsetting: emergency department";
        let ok = "A 34-year-old woman presented to the Emergency Department. She had stopped sleeping.";
        assert_eq!(check_lead(ok, facts).unwrap(), ok);
        let seven = "One. Two. Three. Four. Five. Six. Seven.";
        assert!(check_lead(seven, facts).unwrap_err().contains("7 sentences"));
        let named = "Mr. Alvarez was seen in the clinic. He was tired.";
        assert!(check_lead(named, facts).unwrap_err().contains("identifier"));
        let bigram = "A man from New Haven presented. He was tired.";
        assert!(check_lead(bigram, facts).unwrap_err().contains("New Haven"));
        let first = "I saw the patient today. She was tired.";
        assert!(check_lead(first, facts).unwrap_err().contains("person"));
    }

    #[test]
    fn meta_text_stripped() {
        assert_eq!(strip_meta("Here is the paragraph:\n\"She came in. She left.\""), "She came in. She left.");
    }

    #[test]
    fn tail_gates() {
        let draft = "A 30-year-old man presented with insomnia. He had not slept for days.";
        let ok = "His mother had bipolar disorder. Labs were unremarkable. Imaging was normal.";
        assert_eq!(check_tail(ok, draft).unwrap(), ok);
        let rewritten = "A 31-year-old man presented with severe insomnia. His mother had bipolar disorder.";
        assert!(check_tail(rewritten, draft).unwrap_err().contains("restates"));
        let verbatim = format!("{draft} His mother had bipolar disorder.");
        assert_eq!(check_tail(&verbatim, draft).unwrap(), "His mother had bipolar disorder.");
        assert!(check_tail("One. Two. Three. Four. Five.", draft).is_err());
    }

    #[test]
    fn symptom_sentence_gate() {
        let tp = "two weeks before admission";
        assert!(check_symptom_sentence("Two weeks before admission, she heard voices.", tp).is_ok());
        assert!(check_symptom_sentence("She heard voices two weeks before admission.", tp).is_err());
        assert!(check_symptom_sentence("Two weeks before admission, she heard voices. It was loud.", tp).is_err());
    }

    #[test]
    fn fallback_sentence_uses_fields() {
        let c = StebContext {
            situation: Some("alone at home".into()),
            thought: None,
            emotion: Some("afraid".into()),
            behavior: Some("locked the door".into()),
        };
        assert_eq!(
            fallback_symptom("three days before admission", "she", "paranoia", &[c]),
            "Three days before admission, she experienced paranoia while alone at home, feeling afraid, and locked the door."
        );
    }
}
