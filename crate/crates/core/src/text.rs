//! Small text helpers shared by the converter, perturber, narrator and
//! evaluator.

use std::collections::BTreeSet;

/// Collapse runs of whitespace to one space and trim.
pub fn normalize_ws(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Case-insensitive, whitespace-normalized substring test.
pub fn contains_normalized(haystack: &str, needle: &str) -> bool {
    let needle = normalize_ws(needle).to_lowercase();
    if needle.is_empty() {
        return false;
    }
    normalize_ws(haystack).to_lowercase().contains(&needle)
}

const ABBREVIATIONS: &[&str] =
    &["mr", "mrs", "ms", "dr", "prof", "st", "vs", "e.g", "i.e", "etc", "approx", "jr", "sr"];

/// Split prose into sentences on `.`, `!` or `?` followed by whitespace.
///
/// Common abbreviations ("Dr.", "e.g.") and decimal points do not end a
/// sentence. Returned sentences are trimmed and nonempty.
pub fn split_sentences(text: &str) -> Vec<String> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut out = Vec::new();
    let mut start = 0usize;
    for (i, &(pos, c)) in chars.iter().enumerate() {
        if !matches!(c, '.' | '!' | '?') {
            continue;
        }
        // absorb closing quotes/brackets after the terminator
        let mut j = i + 1;
        while j < chars.len() && matches!(chars[j].1, '"' | '\'' | ')' | '\u{201d}' | '\u{2019}') {
            j += 1;
        }
        let at_end = j >= chars.len();
        if !at_end && !chars[j].1.is_whitespace() {
            continue;
        }
        if c == '.' && is_abbreviation(&text[start..pos]) {
            continue;
        }
        let end = if at_end { text.len() } else { chars[j].0 };
        let sentence = text[start..end].trim();
        if !sentence.is_empty() {
            out.push(sentence.to_string());
        }
        start = end;
    }
    let rest = text[start..].trim();
    if !rest.is_empty() {
        out.push(rest.to_string());
    }
    out
}

fn is_abbreviation(before: &str) -> bool {
    let word = before.rsplit(|c: char| c.is_whitespace() || c == '(').next().unwrap_or("").to_ascii_lowercase();
    if word.len() == 1 && word.chars().all(|c| c.is_ascii_alphabetic()) {
        // single initial such as "J."
        return true;
    }
    ABBREVIATIONS.contains(&word.as_str())
}

/// Lowercase alphanumeric word tokens.
pub fn tokens(s: &str) -> Vec<String> {
    s.split(|c: char| !c.is_alphanumeric() && c != '\'')
        .map(|t| t.trim_matches('\'').to_lowercase())
        .filter(|t| !t.is_empty())
        .collect()
}

fn trigram_set(s: &str) -> BTreeSet<String> {
    let toks = tokens(s);
    if toks.len() < 3 {
        return if toks.is_empty() { BTreeSet::new() } else { BTreeSet::from([toks.join(" ")]) };
    }
    toks.windows(3).map(|w| w.join(" ")).collect()
}

/// Jaccard similarity of word-trigram sets. Texts shorter than three
/// tokens use the whole token sequence as a single shingle. Two empty
/// texts are identical (1.0).
pub fn trigram_jaccard(a: &str, b: &str) -> f64 {
    let (sa, sb) = (trigram_set(a), trigram_set(b));
    if sa.is_empty() && sb.is_empty() {
        return 1.0;
    }
    let inter = sa.intersection(&sb).count() as f64;
    let union = sa.union(&sb).count() as f64;
    inter / union
}

/// Uppercase the first character.
pub fn capitalize(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

/// Ensure a sentence ends with terminal punctuation.
pub fn terminate(s: &str) -> String {
    let t = s.trim_end();
    if t.ends_with(['.', '!', '?']) {
        t.to_string()
    } else {
        format!("{t}.")
    }
}

/// Join phrases as "a", "a and b", "a, b and c".
pub fn join_and(items: &[String]) -> String {
    match items {
        [] => String::new(),
        [one] => one.clone(),
        [init @ .., last] => format!("{} and {last}", init.join(", ")),
    }
}
