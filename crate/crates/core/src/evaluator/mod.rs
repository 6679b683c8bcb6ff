//! Privacy and utility metrics with nonparametric statistics.

mod embed;
mod judge;
mod labels;
mod stats;

pub use embed::{cosine, doc_similarity, Embedder, HashedEmbedder, HttpEmbedder};
pub use judge::{
    judge_pair, judge_risk, parse_diagnoses, parse_judgement, predict_diagnoses, Choice, Judgement, PairedRisk,
    AT_RISK, EVAL_RETRIES,
};
pub use labels::{
    canonicalize_diagnosis, soft_f1, Canonicalizer, EmbeddingMatcher, ExactMatcher, LabelMatcher, SoftF1, THETA,
};
pub use stats::{
    binomial_test, cochran_q, friedman, holm_correct, mann_whitney_u, mcnemar, wilcoxon_signed_rank, Alternative,
    ChiSquareResult, MannWhitneyResult, Method, WilcoxonResult, MANN_WHITNEY_EXACT_MAX, WILCOXON_EXACT_MAX,
};

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::gateway::{Gateway, GatewayError};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("{0}: empty input")]
    Empty(&'static str),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("data file: {0}")]
    Data(String),
    #[error("embedding failed: {0}")]
    Embedding(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("{what}: unparseable after retries ({})", reasons.join("; "))]
    Unparseable { what: &'static str, reasons: Vec<String> },
}

/// The variant every baseline is compared against.
pub const ANONPSY: &str = "anonpsy";
pub const ORIGINAL: &str = "original";

/// Texts of one case: the original and each de-identified variant.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseTexts {
    pub case_id: String,
    pub original: String,
    pub gold: Vec<String>,
    pub variants: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSettings {
    pub theta: f64,
    /// Use embedding similarity for label matching instead of exact match.
    pub embedding_matcher: bool,
    pub judge: bool,
    pub seed: u64,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self { theta: THETA, embedding_matcher: false, judge: true, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseEval {
    pub case_id: String,
    /// Cosine of each variant to the original.
    pub cosine: BTreeMap<String, f64>,
    /// Soft-F1 of predicted against gold diagnoses; the original is included.
    pub soft_f1: BTreeMap<String, f64>,
    pub predicted: BTreeMap<String, Vec<String>>,
    pub risk: Vec<PairedRisk>,
    pub flags: Vec<String>,
}

pub fn evaluate_case(
    c: &CaseTexts,
    gw: &Gateway,
    embedder: &dyn Embedder,
    canon: &Canonicalizer,
    s: &EvalSettings,
) -> Result<CaseEval, EvalError> {
    let mut out = CaseEval {
        case_id: c.case_id.clone(),
        cosine: BTreeMap::new(),
        soft_f1: BTreeMap::new(),
        predicted: BTreeMap::new(),
        risk: vec![],
        flags: vec![],
    };
    let original_vec = embedder.embed(&c.original)?;
    for (name, text) in &c.variants {
        out.cosine.insert(name.clone(), cosine(&original_vec, &embedder.embed(text)?));
    }

    let gold = canon.label_set(&c.gold);
    let exact = ExactMatcher;
    let emb = EmbeddingMatcher { embedder };
    let matcher: &dyn LabelMatcher = if s.embedding_matcher { &emb } else { &exact };
    let readouts = std::iter::once((ORIGINAL, &c.original)).chain(c.variants.iter().map(|(k, v)| (k.as_str(), v)));
    for (name, text) in readouts {
        match predict_diagnoses(text, gw) {
            Ok(pred) => {
                let f = soft_f1(&canon.label_set(&pred), &gold, matcher, s.theta)?;
                out.soft_f1.insert(name.to_string(), f.f1);
                out.predicted.insert(name.to_string(), pred);
            }
            Err(e) => out.flags.push(format!("{name}: diagnosis read-out excluded: {e}")),
        }
    }

    if s.judge {
        if let Some(anon) = c.variants.get(ANONPSY) {
            for (name, text) in c.variants.iter().filter(|(k, _)| k.as_str() != ANONPSY) {
                match judge_pair(&c.case_id, name, &c.original, anon, text, s.seed, gw) {
                    Ok(r) => out.risk.push(r),
                    Err(e) => out.flags.push(format!("{name}: risk judgement excluded: {e}")),
                }
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatRow {
    pub test: String,
    pub comparison: String,
    pub n: usize,
    pub statistic: f64,
    pub p: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_holm: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub embedder: String,
    pub settings: EvalSettings,
    pub cases: Vec<CaseEval>,
    /// Mean (cosine, soft-F1) per variant: the trade-off plane.
    pub plane: BTreeMap<String, (f64, Option<f64>)>,
    pub statistics: Vec<StatRow>,
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

fn holm_family(rows: &mut [StatRow]) {
    let adj = holm_correct(&rows.iter().map(|r| r.p).collect::<Vec<_>>());
    for (r, a) in rows.iter_mut().zip(adj) {
        r.p_holm = Some(a);
    }
}

/// Paired values of two keys over the cases that have both.
fn paired(cases: &[CaseEval], get: impl Fn(&CaseEval) -> &BTreeMap<String, f64>, a: &str, b: &str) -> Vec<(f64, f64)> {
    cases.iter().filter_map(|c| Some((*get(c).get(a)?, *get(c).get(b)?))).collect()
}

/// Corpus statistics over per-case results.
pub fn summarize(embedder: &str, settings: &EvalSettings, cases: Vec<CaseEval>) -> EvalReport {
    let variants: Vec<String> = {
        let mut v: Vec<String> = cases.iter().flat_map(|c| c.cosine.keys().cloned()).collect();
        v.sort();
        v.dedup();
        v
    };
    let mut plane = BTreeMap::new();
    for v in &variants {
        let cos: Vec<f64> = cases.iter().filter_map(|c| c.cosine.get(v).copied()).collect();
        let f1: Vec<f64> = cases.iter().filter_map(|c| c.soft_f1.get(v).copied()).collect();
        if let Some(m) = mean(&cos) {
            plane.insert(v.clone(), (m, mean(&f1)));
        }
    }
    let orig_f1: Vec<f64> = cases.iter().filter_map(|c| c.soft_f1.get(ORIGINAL).copied()).collect();
    if !orig_f1.is_empty() {
        plane.insert(ORIGINAL.to_string(), (1.0, mean(&orig_f1)));
    }

    let mut statistics = Vec::new();
    let baselines: Vec<&String> = variants.iter().filter(|v| v.as_str() != ANONPSY).collect();
    let has_anon = variants.iter().any(|v| v == ANONPSY);

    // Recallability: anonpsy cosine lower than each baseline.
    if has_anon {
        let mut fam = Vec::new();
        for b in &baselines {
            let pairs = paired(&cases, |c| &c.cosine, ANONPSY, b);
            if let Ok(w) = wilcoxon_signed_rank(&pairs, Alternative::Less) {
                fam.push(StatRow {
                    test: "wilcoxon_signed_rank_less".into(),
                    comparison: format!("cosine {ANONPSY} vs {b}"),
                    n: w.n,
                    statistic: w.w_plus,
                    p: w.p,
                    p_holm: None,
                });
            }
        }
        holm_family(&mut fam);
        statistics.extend(fam);
    }

    // Structure: pairwise soft-F1 differences, then Friedman across all.
    let mut f1_names: Vec<String> = cases.iter().flat_map(|c| c.soft_f1.keys().cloned()).collect();
    f1_names.sort();
    f1_names.dedup();
    let mut fam = Vec::new();
    for (i, a) in f1_names.iter().enumerate() {
        for b in &f1_names[i + 1..] {
            let pairs = paired(&cases, |c| &c.soft_f1, a, b);
            if let Ok(w) = wilcoxon_signed_rank(&pairs, Alternative::TwoSided) {
                fam.push(StatRow {
                    test: "wilcoxon_signed_rank".into(),
                    comparison: format!("soft_f1 {a} vs {b}"),
                    n: w.n,
                    statistic: w.w_plus,
                    p: w.p,
                    p_holm: None,
                });
            }
        }
    }
    holm_family(&mut fam);
    statistics.extend(fam);
    let table: Vec<Vec<f64>> = cases
        .iter()
        .filter_map(|c| f1_names.iter().map(|n| c.soft_f1.get(n).copied()).collect::<Option<Vec<f64>>>())
        .collect();
    if let Ok(r) = friedman(&table) {
        statistics.push(StatRow {
            test: "friedman".into(),
            comparison: format!("soft_f1 {}", f1_names.join(" / ")),
            n: table.len(),
            statistic: r.statistic,
            p: r.p,
            p_holm: None,
        });
    }

    // Risk: scores, judge choices and at-risk rates per baseline.
    let mut score_fam = Vec::new();
    let mut mcnemar_fam = Vec::new();
    for b in &baselines {
        let rs: Vec<&PairedRisk> = cases.iter().flat_map(|c| &c.risk).filter(|r| &r.baseline == *b).collect();
        if rs.is_empty() {
            continue;
        }
        let pairs: Vec<(f64, f64)> =
            rs.iter().map(|r| (f64::from(r.score_anonpsy), f64::from(r.score_baseline))).collect();
        if let Ok(w) = wilcoxon_signed_rank(&pairs, Alternative::Less) {
            score_fam.push(StatRow {
                test: "wilcoxon_signed_rank_less".into(),
                comparison: format!("risk {ANONPSY} vs {b}"),
                n: w.n,
                statistic: w.w_plus,
                p: w.p,
                p_holm: None,
            });
        }
        let a: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let bb: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        if let Ok(m) = mann_whitney_u(&a, &bb, Alternative::Less) {
            statistics.push(StatRow {
                test: "mann_whitney_u_less".into(),
                comparison: format!("risk {ANONPSY} vs {b}"),
                n: rs.len(),
                statistic: m.u,
                p: m.p,
                p_holm: None,
            });
        }
        let k = rs.iter().filter(|r| r.baseline_chosen).count() as u64;
        if let Ok(p) = binomial_test(k, rs.len() as u64, 0.5, Alternative::Greater) {
            statistics.push(StatRow {
                test: "binomial_greater".into(),
                comparison: format!("judge picks {b} over {ANONPSY}"),
                n: rs.len(),
                statistic: k as f64,
                p,
                p_holm: None,
            });
        }
        let at = |s: u8| s >= AT_RISK;
        let disc_b = rs.iter().filter(|r| at(r.score_anonpsy) && !at(r.score_baseline)).count() as u64;
        let disc_c = rs.iter().filter(|r| !at(r.score_anonpsy) && at(r.score_baseline)).count() as u64;
        mcnemar_fam.push(StatRow {
            test: "mcnemar".into(),
            comparison: format!("at risk {ANONPSY} vs {b}"),
            n: rs.len(),
            statistic: (disc_b + disc_c) as f64,
            p: mcnemar(disc_b, disc_c),
            p_holm: None,
        });
    }
    holm_family(&mut score_fam);
    holm_family(&mut mcnemar_fam);
    statistics.extend(score_fam);
    statistics.extend(mcnemar_fam);

    // Cochran's Q on at-risk flags; anonpsy's flag comes from its first pairing.
    let risk_names: Vec<&String> =
        baselines.iter().copied().filter(|b| cases.iter().any(|c| c.risk.iter().any(|r| &r.baseline == *b))).collect();
    if !risk_names.is_empty() {
        let rows: Vec<Vec<bool>> = cases
            .iter()
            .filter_map(|c| {
                let first = c.risk.first()?;
                let mut row = vec![first.score_anonpsy >= AT_RISK];
                for b in &risk_names {
                    row.push(c.risk.iter().find(|r| &r.baseline == *b)?.score_baseline >= AT_RISK);
                }
                Some(row)
            })
            .collect();
        if let Ok(r) = cochran_q(&rows) {
            let names: Vec<&str> = std::iter::once(ANONPSY).chain(risk_names.iter().map(|s| s.as_str())).collect();
            statistics.push(StatRow {
                test: "cochran_q".into(),
                comparison: format!("at risk {}", names.join(" / ")),
                n: rows.len(),
                statistic: r.statistic,
                p: r.p,
                p_holm: None,
            });
        }
    }

    EvalReport { embedder: embedder.to_string(), settings: settings.clone(), cases, plane, statistics }
}

impl EvalReport {
    pub fn to_yaml(&self) -> String {
        serde_yaml::to_string(self).expect("report serializes")
    }

    /// One row per (case, variant) and one `mean` row per variant.
    pub fn to_csv(&self) -> String {
        let f = |x: Option<f64>| x.map_or_else(String::new, |v| format!("{v:.6}"));
        let mut out = String::from("case_id,variant,cosine,soft_f1\n");
        for c in &self.cases {
            let mut names: Vec<&String> = c.cosine.keys().chain(c.soft_f1.keys()).collect();
            names.sort();
            names.dedup();
            for n in names {
                let cos = if n == ORIGINAL { Some(1.0) } else { c.cosine.get(n).copied() };
                let _ = writeln!(out, "{},{},{},{}", c.case_id, n, f(cos), f(c.soft_f1.get(n).copied()));
            }
        }
        for (n, (cos, f1)) in &self.plane {
            let _ = writeln!(out, "mean,{},{},{}", n, f(Some(*cos)), f(*f1));
        }
        out
    }
}
