//! Age and sex draws under feasibility rules.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::graph::{RelationType, SemanticGraph};
use crate::temporal::shift_age_anchored;

use super::PerturbConfig;

/// Draws before the age is left unchanged.
pub const MAX_AGE_DRAWS: usize = 20;
/// Onset below this age counts as childhood onset.
pub const CHILDHOOD_ONSET_AGE: f64 = 12.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintKind {
    MinPresentAge,
    MaxOnsetAge,
    RequiredSex,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RuleValue {
    Number(f64),
    Text(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeasibilityRule {
    pub diagnosis_pattern: String,
    pub constraint_kind: ConstraintKind,
    pub value: RuleValue,
}

impl FeasibilityRule {
    pub fn matches(&self, label: &str) -> bool {
        let p = self.diagnosis_pattern.trim().to_lowercase();
        !p.is_empty() && label.to_lowercase().contains(&p)
    }

    fn number(&self) -> Option<f64> {
        match &self.value {
            RuleValue::Number(n) => Some(*n),
            RuleValue::Text(t) => t.trim().parse().ok(),
        }
    }

    fn text(&self) -> String {
        match &self.value {
            RuleValue::Number(n) => n.to_string(),
            RuleValue::Text(t) => t.trim().to_lowercase(),
        }
    }
}

pub fn default_rules() -> Vec<FeasibilityRule> {
    serde_yaml::from_str(include_str!("../../assets/data/feasibility_rules.yaml"))
        .expect("shipped feasibility rules parse")
}

/// Onset age per diagnosis: age plus the earliest start (in years) over
/// the symptoms manifesting it. `None` when no symptom is linked.
pub fn onset_age(g: &SemanticGraph, age: u32, diagnosis_id: &str) -> Option<f64> {
    g.relations_of(RelationType::ManifestsAs)
        .filter(|r| r.target_id == diagnosis_id)
        .filter_map(|r| g.earliest_start(&r.source_id))
        .min()
        .map(|start| f64::from(age) + start as f64 / 365.0)
}

/// Every violated rule for a candidate age/sex, as readable reasons.
pub fn violations(g: &SemanticGraph, rules: &[FeasibilityRule], age: u32, sex: &str) -> Vec<String> {
    let mut out = Vec::new();
    for d in &g.diagnoses {
        for rule in rules.iter().filter(|r| r.matches(&d.label)) {
            match rule.constraint_kind {
                ConstraintKind::MinPresentAge => {
                    if let Some(min) = rule.number() {
                        if f64::from(age) < min {
                            out.push(format!("{} requires age >= {min}", d.label));
                        }
                    }
                }
                ConstraintKind::MaxOnsetAge => {
                    if let (Some(max), Some(onset)) = (rule.number(), onset_age(g, age, &d.id)) {
                        if onset >= max {
                            out.push(format!("{} requires onset before age {max} (onset {onset:.1})", d.label));
                        }
                    }
                }
                ConstraintKind::RequiredSex => {
                    if !sex.trim().eq_ignore_ascii_case(&rule.text()) {
                        out.push(format!("{} requires sex {}", d.label, rule.text()));
                    }
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgeDraw {
    pub offset_years: i64,
    pub rejected_because: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgeOutcome {
    pub original: u32,
    pub age: u32,
    /// Applied offset; 0 when no feasible draw was found.
    pub offset_years: i64,
    pub draws: Vec<AgeDraw>,
    pub fallback: bool,
}

impl AgeOutcome {
    /// Shift to apply to age-anchored durations so that the age at each
    /// anchored event is preserved.
    pub fn anchor_shift_days(&self) -> i64 {
        -self.offset_years * 365
    }
}

/// Draw a bounded nonzero age offset that satisfies every age rule.
/// Required-sex rules are not part of the age check.
pub fn perturb_age(
    g: &SemanticGraph,
    rules: &[FeasibilityRule],
    cfg: &PerturbConfig,
    rng: &mut impl Rng,
) -> AgeOutcome {
    let age = g.attributes.demographics.age;
    let bound = i64::from(cfg.age_offset_bound_years.max(1));
    let age_rules: Vec<FeasibilityRule> =
        rules.iter().filter(|r| r.constraint_kind != ConstraintKind::RequiredSex).cloned().collect();
    let mut draws = Vec::new();
    for _ in 0..MAX_AGE_DRAWS {
        let k = rng.gen_range(0..2 * bound);
        let offset = if k < bound { -(k + 1) } else { k - bound + 1 };
        let candidate = i64::from(age) + offset;
        let mut reasons = Vec::new();
        if candidate < 0 {
            reasons.push("negative age".to_string());
        } else {
            let shifted = shift_age_anchored(g, -offset * 365);
            reasons = violations(&shifted, &age_rules, candidate as u32, "");
        }
        let ok = reasons.is_empty();
        draws.push(AgeDraw { offset_years: offset, rejected_because: reasons });
        if ok {
            return AgeOutcome { original: age, age: candidate as u32, offset_years: offset, draws, fallback: false };
        }
    }
    AgeOutcome { original: age, age, offset_years: 0, draws, fallback: true }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SexOutcome {
    pub original: String,
    pub sex: String,
    pub flipped: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pinned_by: Option<String>,
}

fn flip(sex: &str) -> Option<String> {
    let swapped = match sex.trim().to_lowercase().as_str() {
        "female" => "male",
        "male" => "female",
        "woman" => "man",
        "man" => "woman",
        "f" => "m",
        "m" => "f",
        _ => return None,
    };
    let first_upper = sex.trim().chars().next().is_some_and(char::is_uppercase);
    Some(if first_upper { crate::text::capitalize(swapped) } else { swapped.to_string() })
}

/// Flip sex with the configured probability unless a required-sex rule
/// applies. The coin is always tossed so the random stream does not depend
/// on the rules.
pub fn perturb_sex(
    g: &SemanticGraph,
    rules: &[FeasibilityRule],
    cfg: &PerturbConfig,
    rng: &mut impl Rng,
) -> SexOutcome {
    let original = g.attributes.demographics.sex.clone();
    let toss = rng.gen_bool(cfg.sex_flip_probability.clamp(0.0, 1.0));
    let pin = g.diagnoses.iter().find_map(|d| {
        rules
            .iter()
            .find(|r| r.constraint_kind == ConstraintKind::RequiredSex && r.matches(&d.label))
            .map(|_| d.label.clone())
    });
    if pin.is_some() {
        return SexOutcome { sex: original.clone(), original, flipped: false, pinned_by: pin };
    }
    match flip(&original).filter(|_| toss) {
        Some(sex) => SexOutcome { original, sex, flipped: true, pinned_by: None },
        None => SexOutcome { sex: original.clone(), original, flipped: false, pinned_by: None },
    }
}
