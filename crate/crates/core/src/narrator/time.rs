//! Relative time phrases.

use serde::{Deserialize, Serialize};

use crate::graph::SemanticGraph;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Lexicon {
    Admission,
    Generic,
}

pub const ADMISSION_SETTINGS: &[&str] = &["inpatient", "emergency", "hospital"];

pub fn choose_lexicon(g: &SemanticGraph) -> Lexicon {
    let s = g.visit_event.setting.to_lowercase();
    if ADMISSION_SETTINGS.iter().any(|k| s.contains(k)) {
        Lexicon::Admission
    } else {
        Lexicon::Generic
    }
}

const NUMBERS: [&str; 13] =
    ["zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten", "eleven", "twelve"];

pub fn spell(n: u64) -> String {
    NUMBERS.get(n as usize).map_or_else(|| n.to_string(), |s| s.to_string())
}

fn quantity(n: u64, unit: &str) -> String {
    if n == 1 {
        format!("one {unit}")
    } else {
        format!("{} {unit}s", spell(n))
    }
}

fn round_div(a: u64, b: u64) -> u64 {
    (a + b / 2) / b
}

/// Phrase for a signed day offset relative to day 0.
pub fn time_phrase(offset_days: i64, lex: Lexicon) -> String {
    let d = offset_days.unsigned_abs();
    let before = offset_days < 0;
    match (d, lex) {
        (0, Lexicon::Admission) => return "on the day of admission".into(),
        (0, Lexicon::Generic) => return "at the time of evaluation".into(),
        (1, Lexicon::Admission) => {
            return if before { "the day before admission" } else { "the day after admission" }.into();
        }
        _ => {}
    }
    let amount = if d < 14 {
        quantity(d, "day")
    } else if d < 60 {
        quantity(round_div(d, 7), "week")
    } else if d < 730 {
        let months = round_div(d, 30);
        // whole years read better than multiples of twelve months
        if months.is_multiple_of(12) {
            quantity(months / 12, "year")
        } else {
            quantity(months, "month")
        }
    } else {
        quantity(round_div(d, 365), "year")
    };
    let direction = match (lex, before) {
        (Lexicon::Admission, true) => "before admission",
        (Lexicon::Admission, false) => "after admission",
        (Lexicon::Generic, true) => "earlier",
        (Lexicon::Generic, false) => "later",
    };
    format!("{amount} {direction}")
}
