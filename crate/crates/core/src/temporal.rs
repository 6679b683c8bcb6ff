//! Day-based temporal canonicalization.
//!
//! Raw `(offset, span, unit)` episodes are converted to half-open day
//! intervals anchored at the index encounter (day 0), deduplicated by exact
//! match, merged per node into disjoint non-adjacent blocks, and finally
//! split so that every symptom node references exactly one interval.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::graph::{next_id, DurationInterval, RawEpisode, Relation, SemanticGraph, StebContext};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TemporalError {
    #[error("empty interval: ongoing episode starts at day {start} but the horizon ends at day {horizon_end}")]
    EmptyInterval { start: i64, horizon_end: i64 },
    #[error("episode has no span and is not ongoing")]
    MissingSpan,
    #[error("ongoing episode without span needs a timeline horizon")]
    MissingHorizon,
}

/// Shared end of the timeline used to close ongoing episodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimelineHorizon {
    pub horizon_end_days: i64,
}

impl Default for TimelineHorizon {
    fn default() -> Self {
        Self { horizon_end_days: 1 }
    }
}

/// Convert a raw episode to `(start_days, span_days)`.
///
/// An explicit span is scaled by the unit factor (at least one day). An
/// ongoing episode without a span runs to the horizon.
pub fn to_days(e: &RawEpisode, h: Option<&TimelineHorizon>) -> Result<(i64, i64), TemporalError> {
    let factor = e.unit.days();
    let start = e.offset * factor;
    match e.span {
        Some(span) => Ok((start, (span.max(0) * factor).max(1))),
        None if e.ongoing => {
            let h = h.ok_or(TemporalError::MissingHorizon)?;
            if start >= h.horizon_end_days {
                return Err(TemporalError::EmptyInterval { start, horizon_end: h.horizon_end_days });
            }
            Ok((start, h.horizon_end_days - start))
        }
        None => Err(TemporalError::MissingSpan),
    }
}

/// `max(1, latest end over all finite episodes)`.
pub fn compute_horizon<'a>(episodes: impl IntoIterator<Item = &'a RawEpisode>) -> TimelineHorizon {
    let latest = episodes
        .into_iter()
        .filter(|e| e.span.is_some())
        .filter_map(|e| to_days(e, None).ok())
        .map(|(start, span)| start + span)
        .max();
    TimelineHorizon { horizon_end_days: latest.map_or(1, |end| end.max(1)) }
}

/// Maximal runs of a set of half-open intervals, merging overlapping and
/// adjacent (`end == next start`) members.
pub fn merge_runs(intervals: &[(i64, i64)]) -> Vec<(i64, i64)> {
    let mut sorted: Vec<(i64, i64)> = intervals.iter().copied().filter(|(s, e)| e > s).collect();
    sorted.sort_unstable();
    let mut out: Vec<(i64, i64)> = Vec::with_capacity(sorted.len());
    for (s, e) in sorted {
        match out.last_mut() {
            Some(last) if s <= last.1 => last.1 = last.1.max(e),
            _ => out.push((s, e)),
        }
    }
    out
}

/// Collapse durations with identical `(offset_days, span_days)` onto the
/// first id in pool order and rewrite every reference.
pub fn dedup_durations(g: &SemanticGraph) -> SemanticGraph {
    let mut g = g.clone().canonical();
    let mut keep: BTreeMap<(i64, i64), usize> = BTreeMap::new();
    let mut alias: BTreeMap<String, String> = BTreeMap::new();
    let mut pool: Vec<DurationInterval> = Vec::with_capacity(g.durations.len());
    for d in g.durations.drain(..) {
        let key = (d.offset_days, d.span_days);
        match keep.get(&key) {
            Some(&idx) => {
                let kept = &mut pool[idx];
                kept.age_anchored |= d.age_anchored;
                alias.insert(d.id, kept.id.clone());
            }
            None => {
                keep.insert(key, pool.len());
                pool.push(d);
            }
        }
    }
    g.durations = pool;
    for (_, ids) in g.duration_refs_mut() {
        for id in ids.iter_mut() {
            if let Some(target) = alias.get(id) {
                *id = target.clone();
            }
        }
        let mut seen = BTreeSet::new();
        ids.retain(|id| seen.insert(id.clone()));
    }
    g.canonical()
}

/// Merge each node's overlapping or adjacent intervals into disjoint blocks.
///
/// A block equal to an interval already in the pool reuses that id; other
/// blocks become fresh virtual durations (`dvm_NNN`). Unreferenced
/// durations are dropped. Iterates to a fixed point.
pub fn reconcile_node_intervals(g: &SemanticGraph) -> SemanticGraph {
    let mut g = g.clone().canonical();
    loop {
        let mut changed = false;
        let mut pool = g.durations.clone();

        let mut plans: Vec<Vec<String>> = Vec::new();
        for (_, ids) in g.duration_refs() {
            let members: Vec<DurationInterval> =
                ids.iter().filter_map(|id| pool.iter().find(|d| &d.id == id).cloned()).collect();
            let dangling: Vec<String> = ids.iter().filter(|id| !pool.iter().any(|d| &d.id == *id)).cloned().collect();
            let spans: Vec<(i64, i64)> = members.iter().map(|d| (d.start(), d.end())).collect();
            let mut new_ids = Vec::new();
            for (s, e) in merge_runs(&spans) {
                let anchored = members.iter().filter(|d| d.start() >= s && d.end() <= e).any(|d| d.age_anchored);
                if let Some(existing) =
                    pool.iter().filter(|d| d.offset_days == s && d.span_days == e - s).min_by(|a, b| a.id.cmp(&b.id))
                {
                    new_ids.push(existing.id.clone());
                } else {
                    let id = next_id("dvm_", pool.iter().map(|d| d.id.as_str()));
                    let mut d = DurationInterval::new(id.clone(), s, e - s);
                    d.is_virtual = true;
                    d.age_anchored = anchored;
                    pool.push(d);
                    new_ids.push(id);
                }
            }
            new_ids.extend(dangling);
            plans.push(new_ids);
        }

        for ((_, ids), plan) in g.duration_refs_mut().into_iter().zip(plans) {
            if *ids != plan {
                *ids = plan;
                changed = true;
            }
        }

        let referenced: BTreeSet<String> =
            g.duration_refs().into_iter().flat_map(|(_, ids)| ids.iter().cloned()).collect();
        let before = pool.len();
        pool.retain(|d| referenced.contains(&d.id));
        if pool.len() != before || pool.len() != g.durations.len() {
            changed = true;
        }
        g.durations = pool;
        g.canonicalize();
        if !changed {
            return g;
        }
    }
}

/// Set `current_symptom` to half-open day-0 coverage of the symptom's
/// intervals. No other field changes.
pub fn recompute_current_flags(g: &SemanticGraph) -> SemanticGraph {
    let mut out = g.clone();
    let pool: BTreeMap<String, DurationInterval> = g.durations.iter().map(|d| (d.id.clone(), d.clone())).collect();
    for s in &mut out.symptoms {
        s.current_symptom = s.duration_ids.iter().filter_map(|id| pool.get(id)).any(DurationInterval::covers_day0);
    }
    out
}

/// Split symptoms that reference several intervals into one node per
/// interval.
///
/// The earliest interval keeps the original id; later ones get fresh ids
/// and inherit symptom, pattern and evidence. Contexts pair with intervals
/// in ascending temporal order; surplus contexts go to the last node.
/// Relations touching the original are replicated to every split node.
pub fn split_multi_episode_symptoms(g: &SemanticGraph) -> SemanticGraph {
    let mut g = g.clone().canonical();
    let pool: BTreeMap<String, DurationInterval> = g.durations.iter().map(|d| (d.id.clone(), d.clone())).collect();

    let mut all_ids: Vec<String> = g.node_kinds().into_keys().collect();
    let mut added = Vec::new();
    let mut new_relations = Vec::new();

    for s in &mut g.symptoms {
        if s.duration_ids.len() <= 1 {
            continue;
        }
        let mut ordered = s.duration_ids.clone();
        ordered.sort_by_key(|id| pool.get(id).map(|d| (d.start(), d.end())).unwrap_or((i64::MAX, i64::MAX)));
        let n = ordered.len();
        let mut buckets: Vec<Vec<StebContext>> = vec![Vec::new(); n];
        for (j, c) in s.contexts.drain(..).enumerate() {
            buckets[j.min(n - 1)].push(c);
        }
        let mut buckets = buckets.into_iter();

        s.duration_ids = vec![ordered[0].clone()];
        s.contexts = buckets.next().unwrap_or_default();

        for dur in ordered.into_iter().skip(1) {
            let id = next_id("s_", all_ids.iter().map(String::as_str));
            all_ids.push(id.clone());
            let mut node = s.clone();
            node.id = id.clone();
            node.duration_ids = vec![dur];
            node.contexts = buckets.next().unwrap_or_default();
            for r in g.relations.iter() {
                if r.source_id == s.id {
                    new_relations.push(Relation::new(r.relation_type, id.clone(), r.target_id.clone()));
                }
                if r.target_id == s.id {
                    new_relations.push(Relation::new(r.relation_type, r.source_id.clone(), id.clone()));
                }
            }
            added.push(node);
        }
    }
    if added.is_empty() {
        return g;
    }
    g.symptoms.extend(added);
    g.relations.extend(new_relations);
    recompute_current_flags(&g).canonical()
}

/// Move every age-anchored duration by `days`. Other durations are left
/// untouched.
pub fn shift_age_anchored(g: &SemanticGraph, days: i64) -> SemanticGraph {
    let mut out = g.clone();
    for d in out.durations.iter_mut().filter(|d| d.age_anchored) {
        d.offset_days += days;
    }
    out.canonical()
}

/// Canonical node id → sorted `(start, end)` list for every dated node.
pub type TemporalSignature = BTreeMap<String, Vec<(i64, i64)>>;

pub fn temporal_signature(g: &SemanticGraph) -> TemporalSignature {
    let pool = g.duration_map();
    g.duration_refs()
        .into_iter()
        .map(|(node, ids)| {
            let mut spans: Vec<(i64, i64)> =
                ids.iter().filter_map(|id| pool.get(id.as_str())).map(|d| (d.start(), d.end())).collect();
            spans.sort_unstable();
            (node.to_string(), spans)
        })
        .collect()
}
