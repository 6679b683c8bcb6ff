//! Resampling numeric test results within clinically equivalent pools.

use rand::Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::graph::CaseAttributes;

use super::PerturbError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValuePool {
    pub label: String,
    pub min: i64,
    pub max: i64,
}

impl ValuePool {
    pub fn contains(&self, v: i64) -> bool {
        (self.min..=self.max).contains(&v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestValuePool {
    pub canonical_test: String,
    /// Case-insensitive regexes naming the test in free text.
    pub aliases: Vec<String>,
    pub pools: Vec<ValuePool>,
}

impl TestValuePool {
    pub fn pool_of(&self, v: i64) -> Option<&ValuePool> {
        self.pools.iter().find(|p| p.contains(v))
    }

    pub fn check(&self) -> Result<(), String> {
        if self.aliases.is_empty() {
            return Err(format!("{}: no aliases", self.canonical_test));
        }
        let mut sorted: Vec<&ValuePool> = self.pools.iter().collect();
        sorted.sort_by_key(|p| p.min);
        for p in &sorted {
            if p.max - p.min < 1 {
                return Err(format!("{}: pool `{}` holds fewer than 2 values", self.canonical_test, p.label));
            }
        }
        for w in sorted.windows(2) {
            if w[1].min <= w[0].max {
                return Err(format!("{}: pools `{}` and `{}` overlap", self.canonical_test, w[0].label, w[1].label));
            }
        }
        Ok(())
    }
}

pub fn default_inventory() -> Vec<TestValuePool> {
    serde_yaml::from_str(include_str!("../../assets/data/test_pools.yaml")).expect("shipped test pools parse")
}

pub fn check_inventory(inv: &[TestValuePool]) -> Result<(), PerturbError> {
    for t in inv {
        t.check().map_err(PerturbError::InvalidInventory)?;
        for a in &t.aliases {
            Regex::new(a).map_err(|e| PerturbError::InvalidInventory(format!("{}: {e}", t.canonical_test)))?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueChange {
    pub field: String,
    pub test: String,
    pub original: i64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub replacement: Option<i64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pool: Option<String>,
    pub flagged: bool,
}

/// A test mention followed by its first integer within a short gap.
fn matcher(t: &TestValuePool) -> Regex {
    let alts = t.aliases.iter().map(|a| format!("(?:{a})")).collect::<Vec<_>>().join("|");
    Regex::new(&format!(r"(?i)\b(?:{alts})\b[^0-9\n.;]{{0,24}}?(\d+)(\.\d+)?")).expect("alias regex checked")
}

/// Replace matched values in one text. Non-integer values count as
/// outside every pool.
fn rewrite(field: &str, text: &str, inv: &[TestValuePool], rng: &mut impl Rng) -> (String, Vec<ValueChange>) {
    let mut edits: Vec<(usize, usize, String)> = Vec::new();
    let mut changes = Vec::new();
    for t in inv {
        for caps in matcher(t).captures_iter(text) {
            let m = caps.get(1).unwrap();
            if edits.iter().any(|(s, e, _)| m.start() < *e && *s < m.end()) {
                continue;
            }
            let Ok(v) = m.as_str().parse::<i64>() else { continue };
            let pool = if caps.get(2).is_some() { None } else { t.pool_of(v) };
            let Some(pool) = pool else {
                changes.push(ValueChange {
                    field: field.into(),
                    test: t.canonical_test.clone(),
                    original: v,
                    replacement: None,
                    pool: None,
                    flagged: true,
                });
                continue;
            };
            // uniform over the pool minus the original value
            let mut r = rng.gen_range(pool.min..pool.max);
            if r >= v {
                r += 1;
            }
            edits.push((m.start(), m.end(), r.to_string()));
            changes.push(ValueChange {
                field: field.into(),
                test: t.canonical_test.clone(),
                original: v,
                replacement: Some(r),
                pool: Some(pool.label.clone()),
                flagged: false,
            });
        }
    }
    edits.sort_by_key(|e| e.0);
    let mut out = String::with_capacity(text.len());
    let mut last = 0;
    for (s, e, r) in edits {
        out.push_str(&text[last..s]);
        out.push_str(&r);
        last = e;
    }
    out.push_str(&text[last..]);
    (out, changes)
}

pub fn perturb_test_values(
    attrs: &CaseAttributes,
    inv: &[TestValuePool],
    rng: &mut impl Rng,
) -> (CaseAttributes, Vec<ValueChange>) {
    let mut out = attrs.clone();
    let mut changes = Vec::new();
    for key in crate::graph::TestResults::KEYS {
        let slot = out.test_results.field_mut(key).expect("known key");
        let (text, c) = rewrite(key, slot, inv, rng);
        *slot = text;
        changes.extend(c);
    }
    (out, changes)
}
