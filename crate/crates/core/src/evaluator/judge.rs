//! Insider re-identification judging and diagnosis read-out.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::gateway::{vars, Attempted, Gateway, JUDGE_TEMPERATURE};
use crate::perturber::case_rng;
use crate::structured::parse_flat;

use super::EvalError;

/// Retries for judge and diagnosis calls.
pub const EVAL_RETRIES: u32 = 2;
/// Scores at or above this are "at risk".
pub const AT_RISK: u8 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Choice {
    A,
    B,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Judgement {
    pub choice: Choice,
    pub score_a: u8,
    pub score_b: u8,
}

pub fn parse_judgement(text: &str) -> Result<Judgement, String> {
    let r = parse_flat(text).map_err(|e| e.to_string())?;
    let choice = match r.get("choice").map(|c| c.trim().trim_matches(['"', '.']).to_uppercase()) {
        Some(c) if c == "A" => Choice::A,
        Some(c) if c == "B" => Choice::B,
        other => return Err(format!("bad choice {other:?}")),
    };
    let score = |k: &str| -> Result<u8, String> {
        let v = r.get(k).ok_or(format!("missing {k}"))?;
        let n: u8 = v.trim().parse().map_err(|_| format!("{k} `{v}` is not an integer"))?;
        if (1..=5).contains(&n) {
            Ok(n)
        } else {
            Err(format!("{k} {n} outside 1-5"))
        }
    };
    Ok(Judgement { choice, score_a: score("score_a")?, score_b: score("score_b")? })
}

pub fn judge_risk(original: &str, version_a: &str, version_b: &str, gw: &Gateway) -> Result<Judgement, EvalError> {
    let v = vars([
        ("original", original.to_string()),
        ("version_a", version_a.to_string()),
        ("version_b", version_b.to_string()),
    ]);
    match gw.ask_validated("judge_risk", &v, JUDGE_TEMPERATURE, EVAL_RETRIES, parse_judgement)? {
        Attempted::Accepted { value, .. } => Ok(value),
        Attempted::Rejected { rejections } => Err(EvalError::Unparseable { what: "judge_risk", reasons: rejections }),
    }
}

/// One anonpsy-versus-baseline judgement with the A/B assignment undone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedRisk {
    pub baseline: String,
    pub anonpsy_is_a: bool,
    pub score_anonpsy: u8,
    pub score_baseline: u8,
    /// The judge picked the baseline as more recognizable.
    pub baseline_chosen: bool,
}

/// Judge with a seed-determined A/B order.
pub fn judge_pair(
    case_id: &str,
    baseline: &str,
    original: &str,
    anonpsy: &str,
    other: &str,
    seed: u64,
    gw: &Gateway,
) -> Result<PairedRisk, EvalError> {
    let anonpsy_is_a = case_rng(seed, &format!("{case_id}:{baseline}")).gen_bool(0.5);
    let (a, b) = if anonpsy_is_a { (anonpsy, other) } else { (other, anonpsy) };
    let j = judge_risk(original, a, b, gw)?;
    let (sa, sb) = if anonpsy_is_a { (j.score_a, j.score_b) } else { (j.score_b, j.score_a) };
    let baseline_chosen = (j.choice == Choice::A) != anonpsy_is_a;
    Ok(PairedRisk {
        baseline: baseline.to_string(),
        anonpsy_is_a,
        score_anonpsy: sa,
        score_baseline: sb,
        baseline_chosen,
    })
}

pub fn parse_diagnoses(text: &str) -> Result<Vec<String>, String> {
    let r = parse_flat(text).map_err(|e| e.to_string())?;
    let all = r.get_all("diagnosis");
    if all.is_empty() {
        return Err("no diagnosis lines".into());
    }
    Ok(all
        .into_iter()
        .map(str::trim)
        .filter(|d| !d.is_empty() && !d.eq_ignore_ascii_case("none"))
        .map(String::from)
        .collect())
}

/// Ask the model for the diagnoses a narrative supports.
pub fn predict_diagnoses(text: &str, gw: &Gateway) -> Result<Vec<String>, EvalError> {
    let v = vars([("case_text", text.to_string())]);
    match gw.ask_validated("eval_diagnose", &v, JUDGE_TEMPERATURE, EVAL_RETRIES, parse_diagnoses)? {
        Attempted::Accepted { value, .. } => Ok(value),
        Attempted::Rejected { rejections } => {
            Err(EvalError::Unparseable { what: "eval_diagnose", reasons: rejections })
        }
    }
}
