//! Graph-constrained perturbation: demographics, visit episode, STEB
//! frames, test values and MSE, followed by a consistency check.

mod context;
mod demographics;
mod mse;
mod test_values;

pub use context::{
    minor_permissible, perturb_identity_fields, rewrite_steb_contexts, rewrite_visit_episode, scaffold_contradictions,
    similarity_gate, steb_order, IdentityOutcome, Similarity, StebAudit, VisitOutcome, MINOR_AGE, MINOR_OCCUPATIONS,
};
pub use demographics::{
    default_rules, onset_age, perturb_age, perturb_sex, violations, AgeDraw, AgeOutcome, ConstraintKind,
    FeasibilityRule, RuleValue, SexOutcome, CHILDHOOD_ONSET_AGE, MAX_AGE_DRAWS,
};
pub use mse::{align_mse, domains as mse_domains, MseOutcome};
pub use test_values::{check_inventory, default_inventory, perturb_test_values, TestValuePool, ValueChange, ValuePool};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::gateway::Gateway;
use crate::graph::SemanticGraph;
use crate::relations::{check_consistency_with, ConsistencyOptions, ConsistencyReport};
use crate::temporal::shift_age_anchored;

#[derive(Debug, thiserror::Error)]
pub enum PerturbError {
    #[error("invalid perturbation config: {0}")]
    InvalidConfig(String),
    #[error("invalid test value inventory: {0}")]
    InvalidInventory(String),
    #[error("perturbed graph is inconsistent with its source: {0}")]
    Inconsistent(ConsistencyReport),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerturbConfig {
    pub age_offset_bound_years: u32,
    pub sex_flip_probability: f64,
    pub steb_window_size: usize,
    pub similarity_threshold: f64,
    pub max_retries: u32,
    pub seed: u64,
}

impl Default for PerturbConfig {
    fn default() -> Self {
        Self {
            age_offset_bound_years: 3,
            sex_flip_probability: 0.5,
            steb_window_size: 3,
            similarity_threshold: 0.85,
            max_retries: 3,
            seed: 0,
        }
    }
}

impl PerturbConfig {
    pub fn check(&self) -> Result<(), PerturbError> {
        let bad = |m: &str| Err(PerturbError::InvalidConfig(m.to_string()));
        if self.age_offset_bound_years == 0 {
            return bad("age_offset_bound_years must be positive");
        }
        if !(0.0..=1.0).contains(&self.sex_flip_probability) {
            return bad("sex_flip_probability must lie in [0, 1]");
        }
        if self.steb_window_size == 0 {
            return bad("steb_window_size must be positive");
        }
        if !(self.similarity_threshold > 0.0 && self.similarity_threshold < 1.0) {
            return bad("similarity_threshold must lie in (0, 1)");
        }
        if self.max_retries == 0 {
            return bad("max_retries must be positive");
        }
        Ok(())
    }
}

/// Rule table and value pools used by a run.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbData {
    pub rules: Vec<FeasibilityRule>,
    pub pools: Vec<TestValuePool>,
}

impl Default for PerturbData {
    fn default() -> Self {
        Self { rules: default_rules(), pools: default_inventory() }
    }
}

/// Per-case RNG seeded from the global seed and the case id.
pub fn case_rng(seed: u64, case_id: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(case_id.as_bytes());
    ChaCha8Rng::from_seed(h.finalize().into())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbAudit {
    pub case_id: String,
    pub seed: u64,
    pub age: AgeOutcome,
    pub sex: SexOutcome,
    pub identity: IdentityOutcome,
    pub visit_rejections: Vec<String>,
    pub visit_flagged: bool,
    pub steb: Vec<StebAudit>,
    pub test_values: Vec<ValueChange>,
    pub mse_changes: Vec<String>,
    pub mse: MseOutcome,
}

impl PerturbAudit {
    pub fn flag_count(&self) -> usize {
        usize::from(self.age.fallback)
            + usize::from(self.identity.flagged)
            + usize::from(self.visit_flagged)
            + self.steb.iter().filter(|s| s.flagged).count()
            + self.test_values.iter().filter(|v| v.flagged).count()
            + usize::from(self.mse.flagged)
    }

    pub fn to_yaml(&self) -> String {
        serde_yaml::to_string(self).expect("audit serializes")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Perturbation {
    pub graph: SemanticGraph,
    pub audit: PerturbAudit,
}

fn essence_diff(g: &SemanticGraph, g2: &SemanticGraph) -> Vec<String> {
    let (a, b) = (&g.attributes.demographics, &g2.attributes.demographics);
    let mut out = Vec::new();
    let mut diff = |name: &str, x: String, y: String| {
        if x != y {
            out.push(format!("{name}: {x} -> {y}"));
        }
    };
    diff("age", a.age.to_string(), b.age.to_string());
    diff("sex", a.sex.clone(), b.sex.clone());
    diff("ethnicity", a.ethnicity.clone(), b.ethnicity.clone());
    diff("occupation", a.occupation.clone(), b.occupation.clone());
    for (s, s2) in g.symptoms.iter().zip(&g2.symptoms) {
        for (c, c2) in s.contexts.iter().zip(&s2.contexts) {
            if let (Some(t), Some(t2)) = (&c.thought, &c2.thought) {
                if t != t2 {
                    out.push(format!("thought ({}): {t} -> {t2}", s.symptom));
                }
            }
        }
    }
    out
}

/// Run every sub-perturbation on one case. The result is rejected when its
/// backbone differs from the source beyond the age-anchor shift.
pub fn perturb(
    case_id: &str,
    g: &SemanticGraph,
    gw: &Gateway,
    cfg: &PerturbConfig,
    data: &PerturbData,
) -> Result<Perturbation, PerturbError> {
    cfg.check()?;
    let mut rng = case_rng(cfg.seed, case_id);

    let age = perturb_age(g, &data.rules, cfg, &mut rng);
    let sex = perturb_sex(g, &data.rules, cfg, &mut rng);
    let shift = age.anchor_shift_days();
    let mut out = shift_age_anchored(g, shift);
    out.attributes.demographics.age = age.age;
    out.attributes.demographics.sex = sex.sex.clone();

    let identity = perturb_identity_fields(g, age.age, &sex.sex, gw, cfg);
    out.attributes.demographics.ethnicity = identity.ethnicity.clone();
    out.attributes.demographics.occupation = identity.occupation.clone();

    let visit = rewrite_visit_episode(&g.visit_event, gw, cfg);
    out.visit_event = visit.visit.clone();

    let (with_steb, steb) = rewrite_steb_contexts(&out, &out.visit_event.visit_episode, age.age, gw, cfg);
    out = with_steb;

    let (attrs, test_values) = perturb_test_values(&out.attributes, &data.pools, &mut rng);
    out.attributes = attrs;

    let mse_changes = essence_diff(g, &out);
    let mse = align_mse(&out.attributes.test_results.mental_status, &mse_changes, gw, cfg);
    out.attributes.test_results.mental_status = mse.mental_status.clone();

    let report = check_consistency_with(g, &out, ConsistencyOptions { age_anchor_shift_days: shift });
    if !report.passed() {
        return Err(PerturbError::Inconsistent(report));
    }
    let audit = PerturbAudit {
        case_id: case_id.to_string(),
        seed: cfg.seed,
        age,
        sex,
        identity,
        visit_rejections: visit.rejections,
        visit_flagged: visit.flagged,
        steb,
        test_values,
        mse_changes,
        mse,
    };
    Ok(Perturbation { graph: out, audit })
}
