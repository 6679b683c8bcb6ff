//! Regenerates `tests/fixtures/mock` and `tests/fixtures/golden` from a
//! rule-based responder. Run after changing a prompt or a request shape:
//!
//! ```text
//! cargo test -p anonpsy --test record_fixtures -- --ignored
//! ```

mod common;

use std::collections::BTreeMap;
use std::sync::Arc;

use anonpsy::baselines;
use anonpsy::cli::{self, RunContext, DEID, GRAPH, OUTLINE};
use anonpsy::gateway::{variables_digest, ChatRequest, FnBackend, MockBackend};
use anonpsy::structured::parse_flat;
use anonpsy::text::trigram_jaccard;
use regex::Regex;

fn pick(req: &ChatRequest, n: usize) -> usize {
    let d = variables_digest(&req.variables);
    (u64::from_str_radix(&d[..8], 16).unwrap() % n as u64) as usize
}

fn var<'a>(req: &'a ChatRequest, k: &str) -> &'a str {
    req.variables.get(k).map(String::as_str).unwrap_or_default()
}

fn flat(text: &str) -> BTreeMap<String, String> {
    parse_flat(text).map(|r| r.fields.into_iter().collect()).unwrap_or_default()
}

fn authored(req: &ChatRequest, corpus: &BTreeMap<String, String>) -> String {
    let narrative = var(req, "narrative");
    let case = corpus.iter().find(|(_, t)| t.as_str() == narrative).map(|(id, _)| id.clone()).unwrap();
    let path = common::fixtures().join("authored").join(case).join(format!("{}.txt", req.template_id));
    std::fs::read_to_string(path).unwrap()
}

const ETHNICITIES: [&str; 5] = ["Hispanic", "East Asian", "White", "Black", "South Asian"];
const OCCUPATIONS: [&str; 5] = ["warehouse supervisor", "dental hygienist", "bus driver", "accountant", "librarian"];
const EPISODES: [&str; 3] = [
    "a relative grew worried after several days of marked changes in behaviour and arranged the assessment",
    "a coworker noticed a sharp change over the preceding week and encouraged an assessment",
    "a close friend raised concerns after a series of late-night phone calls",
];
const SITUATIONS: [&str; 3] = [
    "sitting in a parked car outside a relative's house late in the evening",
    "standing in a supermarket queue on a weekday afternoon",
    "alone in a laundry room early on a weekend morning",
];
const THOUGHTS: [&str; 3] =
    ["everyone nearby was quietly judging", "nothing would ever improve", "something terrible was about to happen"];
const EMOTIONS: [&str; 3] = ["overwhelmed", "frightened", "worthless"];
const BEHAVIORS: [&str; 3] = [
    "left abruptly and walked for hours",
    "locked the doors and drew the curtains",
    "wrote a long note and then tore it up",
];

fn identity(req: &ChatRequest) -> String {
    let start = pick(req, ETHNICITIES.len());
    let eth = (0..ETHNICITIES.len())
        .map(|i| ETHNICITIES[(start + i) % ETHNICITIES.len()])
        .find(|e| !e.eq_ignore_ascii_case(var(req, "ethnicity")))
        .unwrap();
    let occ = if var(req, "occupation_rule").is_empty() {
        let start = pick(req, OCCUPATIONS.len());
        (0..OCCUPATIONS.len())
            .map(|i| OCCUPATIONS[(start + i) % OCCUPATIONS.len()])
            .find(|o| !o.eq_ignore_ascii_case(var(req, "occupation")))
            .unwrap()
    } else {
        "student"
    };
    format!("ethnicity: {eth}\noccupation: {occ}\n")
}

fn visit(req: &ChatRequest) -> String {
    let mut out = format!("visit_episode: {}\n", EPISODES[pick(req, EPISODES.len())]);
    if var(req, "pathway") != "none" {
        out.push_str("pathway: a bystander contacted services after a disturbance in a shared stairwell\n");
    }
    out
}

fn steb(req: &ChatRequest) -> String {
    let k = pick(req, 3);
    let mut out = String::new();
    for (field, _) in flat(var(req, "fields")) {
        let table = match field.as_str() {
            "situation" => SITUATIONS,
            "thought" => THOUGHTS,
            "emotion" => EMOTIONS,
            _ => BEHAVIORS,
        };
        out.push_str(&format!("{field}: {}\n", table[k]));
    }
    out
}

fn mse(req: &ChatRequest) -> String {
    let text = var(req, "mental_status");
    let changes = var(req, "changes");
    let swapped = if changes.contains("sex: female -> male") {
        Regex::new(r"\b(she|her|herself)\b").unwrap().replace_all(text, |c: &regex::Captures| {
            match &c[1] {
                "she" => "he",
                "her" => "his",
                _ => "himself",
            }
            .to_string()
        })
    } else if changes.contains("sex: male -> female") {
        Regex::new(r"\b(he|his|him|himself)\b").unwrap().replace_all(text, |c: &regex::Captures| {
            match &c[1] {
                "he" => "she",
                "himself" => "herself",
                _ => "her",
            }
            .to_string()
        })
    } else {
        text.into()
    };
    format!("mental_status: {swapped}\n")
}

fn lead(req: &ChatRequest) -> String {
    let f = flat(var(req, "facts"));
    let get = |k: &str| f.get(k).cloned().unwrap_or_default();
    let (noun, subj) = match get("sex").as_str() {
        "female" => ("woman", "She"),
        "male" => ("man", "He"),
        _ => ("person", "They"),
    };
    let mut s = format!(
        "A {}-year-old {noun} was seen in the {} for {}. The mode of arrival was recorded as {}. \
         {subj} came to attention after {}.",
        get("age"),
        get("setting"),
        get("reason"),
        get("arrival_mode"),
        get("visit_episode").trim_end_matches('.'),
    );
    if let Some(p) = f.get("pathway") {
        s.push_str(&format!(" The referral pathway was that {}.", p.trim_end_matches('.')));
    }
    s
}

fn symptom(req: &ChatRequest) -> String {
    let f = flat(var(req, "steb"));
    let mut s =
        format!("{}, the patient reported {}", anonpsy::text::capitalize(var(req, "time_phrase")), var(req, "symptom"));
    if let Some(v) = f.get("situation") {
        s.push_str(&format!(", which came on while {v}"));
    }
    if let Some(v) = f.get("behavior") {
        s.push_str(&format!(", and afterwards {v}"));
    }
    s.push('.');
    s
}

fn tail(req: &ChatRequest) -> String {
    let mut out = Vec::new();
    let mut tests = Vec::new();
    for line in var(req, "facts").lines() {
        let Some((k, v)) = line.split_once(": ") else { continue };
        match k {
            "past history" => out.push(format!("The past history included {v}.")),
            "family history" => {
                let (member, condition) = v.split_once(": ").unwrap_or(("relative", v));
                out.push(format!("There was a family history of {condition} in a {member}."))
            }
            _ => tests.push(format!("{}: {}", k.replace('_', " "), v.trim_end_matches('.'))),
        }
    }
    if !tests.is_empty() {
        out.push(format!("Findings at evaluation were as follows, {}.", tests.join("; ")));
    }
    out.join(" ")
}

fn diagnose(req: &ChatRequest) -> String {
    let t = var(req, "case_text").to_lowercase();
    let any = |ws: &[&str]| ws.iter().any(|w| t.contains(w));
    let alcohol = any(&["vodka", "alcohol", "drinking", "drunk"]);
    let mood = any(&["sad", "low", "depress", "hopeless", "guilty"]);
    let psychosis = any(&["voices", "delusion"]);
    let mut out = Vec::new();
    if psychosis {
        out.push("Schizophrenia");
    }
    if t.contains("cannabis") {
        out.push("Cannabis use disorder");
    }
    if alcohol {
        out.push("Alcohol use disorder");
    }
    if mood && alcohol {
        out.push("Alcohol-induced depressive disorder");
    } else if mood && !psychosis {
        out.push("Major depressive disorder");
    }
    if out.is_empty() {
        out.push("none");
    }
    out.iter().map(|d| format!("diagnosis: {d}\n")).collect()
}

fn judge(req: &ChatRequest) -> String {
    let o = var(req, "original");
    let (a, b) = (trigram_jaccard(o, var(req, "version_a")), trigram_jaccard(o, var(req, "version_b")));
    let score = |s: f64| (1.0 + (s * 8.0).round()).clamp(1.0, 5.0) as u8;
    let choice = if a >= b { "A" } else { "B" };
    format!("choice: {choice}\nscore_a: {}\nscore_b: {}\n", score(a), score(b))
}

fn rewrite(text: &str, age_delta: i64, table: &[(&str, &str)]) -> String {
    let ages = Regex::new(r"\b(\d+)-year-old").unwrap();
    let mut out = ages
        .replace_all(text, |c: &regex::Captures| format!("{}-year-old", c[1].parse::<i64>().unwrap() + age_delta))
        .into_owned();
    for (from, to) in table {
        out = Regex::new(&format!(r"\b{from}\b")).unwrap().replace_all(&out, *to).into_owned();
    }
    out.trim().to_string()
}

const SDC_TABLE: &[(&str, &str)] = &[
    ("woman", "female patient"),
    ("man", "male patient"),
    ("mother", "aunt"),
    ("father", "older brother"),
    ("paternal uncle", "maternal cousin"),
    ("primary school teacher", "pharmacy technician"),
    ("retired long-haul truck driver", "former warehouse manager"),
    ("vodka", "whisky"),
    ("kitchen", "garage"),
    ("hallway", "stairwell"),
    ("neighbours", "roommates"),
    ("sister", "cousin"),
    ("Dr. Alvarez", "Dr. Brandt"),
    ("03/14/2023", "05/02/2022"),
];

const REWRITE_TABLE: &[(&str, &str)] = &[
    ("woman", "patient"),
    ("man", "patient"),
    ("husband", "partner"),
    ("two children", "a young son"),
    ("mother", "grandmother"),
    ("father", "uncle"),
    ("primary school teacher", "bank clerk"),
    ("retired long-haul truck driver", "retired electrician"),
    ("apartment building", "shared house"),
    ("college classes", "evening course"),
    ("03/14/2023", "a weekday"),
];

fn respond(req: &ChatRequest, corpus: &BTreeMap<String, String>) -> String {
    match req.template_id.as_str() {
        "convert_entities" | "convert_episodes" | "convert_causal" => authored(req, corpus),
        "perturb_identity" => identity(req),
        "perturb_visit" => visit(req),
        "perturb_steb" => steb(req),
        "perturb_mse" => mse(req),
        "generate_lead" => lead(req),
        "generate_symptom" => symptom(req),
        "generate_tail" => tail(req),
        "eval_diagnose" => diagnose(req),
        "judge_risk" => judge(req),
        "baseline_sdc" => rewrite(var(req, "case_text"), 3, SDC_TABLE),
        "llm_only_rewrite" => rewrite(var(req, "case_text"), -2, REWRITE_TABLE),
        "llm_only_critique" => Regex::new(r"Dr\. [A-Z][a-z]+")
            .unwrap()
            .replace_all(var(req, "draft_text"), "the attending psychiatrist")
            .into_owned(),
        other => panic!("no rule for template {other}"),
    }
}

#[test]
#[ignore]
fn record() {
    let fixtures = common::fixtures();
    let mock_dir = fixtures.join("mock");
    let _ = std::fs::remove_dir_all(&mock_dir);
    std::fs::create_dir_all(&mock_dir).unwrap();
    let corpus: BTreeMap<String, String> = common::CASES
        .iter()
        .map(|c| (c.to_string(), std::fs::read_to_string(common::corpus().join(format!("{c}.txt"))).unwrap()))
        .collect();

    let mock = MockBackend::new(&mock_dir);
    let backend = FnBackend::new(move |req| {
        let text = respond(req, &corpus);
        let path = mock.fixture_path(req);
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, &text).unwrap();
        Ok(text)
    });
    let ctx = RunContext::with_backend(&common::config(), Arc::new(backend)).unwrap();
    let out = tempfile::tempdir().unwrap();
    let corpus_dir = common::corpus();
    assert_eq!(cli::run_with(&ctx, &corpus_dir, out.path()).code(), 0);
    for name in baselines::ALL {
        assert_eq!(cli::baseline_with(&ctx, name, &corpus_dir, out.path()).code(), 0);
    }
    let eval = cli::eval_with(&ctx, out.path());
    assert_eq!(eval.code(), 0, "{eval}");

    for case in common::CASES {
        let dir = fixtures.join("golden").join(case);
        std::fs::create_dir_all(&dir).unwrap();
        for file in [GRAPH, OUTLINE, DEID] {
            std::fs::copy(out.path().join(case).join(file), dir.join(file)).unwrap();
        }
    }
}
