//! Acceptance suite. Each test prints one PASS/FAIL line and then asserts.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write as _;
use std::path::Path;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use anonpsy::cli::{self, Status};
use anonpsy::evaluator::{
    binomial_test, holm_correct, mcnemar, soft_f1, wilcoxon_signed_rank, Alternative, Canonicalizer, EmbeddingMatcher,
    ExactMatcher, HashedEmbedder, THETA,
};
use anonpsy::graph::{
    format_id, parse_yaml, serialize_yaml, validate_graph, DiagnosisNode, DurationInterval, Relation, RelationType,
    SemanticGraph, StebField, SymptomNode,
};
use anonpsy::narrator::plan_outline;
use anonpsy::perturber::{
    default_rules, onset_age, perturb_age, perturb_sex, violations, ConstraintKind, FeasibilityRule, PerturbConfig,
    RuleValue,
};
use anonpsy::relations::check_consistency;
use anonpsy::temporal::{recompute_current_flags, reconcile_node_intervals, shift_age_anchored};

const TEMPORAL_GRAPHS: usize = 500;
const TEMPORAL_BUDGET: Duration = Duration::from_secs(10);
const ROUND_TRIP_GRAPHS: usize = 200;
const AGE_TRIALS: u64 = 1000;
const STATS_DATASETS: usize = 50;
const STATS_TOL: f64 = 1e-12;
const HOLM_VECTORS: usize = 100;
const LABEL_SETS: usize = 100;
const RUN_BUDGET: Duration = Duration::from_secs(5);
const OUTLINE_GRAPHS: usize = 100;

fn report(name: &str, pass: bool, detail: &str) {
    let line = format!("\n[PRIMARY] {name}: {} ({detail})\n", if pass { "PASS" } else { "FAIL" });
    // bypasses libtest capture so the line shows in plain `cargo test` output
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
    assert!(pass, "{name}: {detail}");
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// One full fixture run plus all baselines and eval, shared by the tests
/// that only read artifacts.
fn shared_run() -> &'static Path {
    static DIR: OnceLock<tempfile::TempDir> = OnceLock::new();
    DIR.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let cfg = common::config();
        let out = dir.path();
        let o = cli::cmd_run(&common::corpus(), out, &cfg);
        assert_eq!(o.status, Status::Success, "{o}");
        for name in ["phi", "sdc", "llm_only"] {
            let o = cli::cmd_baseline(name, &common::corpus(), out, &cfg);
            assert_eq!(o.status, Status::Success, "{o}");
        }
        let o = cli::cmd_eval(out, &cfg);
        assert_eq!(o.status, Status::Success, "{o}");
        dir
    })
    .path()
}

// ---- temporal ----

fn day_set(g: &SemanticGraph, ids: &[String]) -> BTreeSet<i64> {
    ids.iter().filter_map(|id| g.duration(id)).flat_map(|d| d.start()..d.end()).collect()
}

/// Maximal runs of consecutive days.
fn runs(days: &BTreeSet<i64>) -> Vec<(i64, i64)> {
    let mut out: Vec<(i64, i64)> = Vec::new();
    for &d in days {
        match out.last_mut() {
            Some((_, e)) if *e == d => *e = d + 1,
            _ => out.push((d, d + 1)),
        }
    }
    out
}

fn node_days(g: &SemanticGraph) -> BTreeMap<String, BTreeSet<i64>> {
    g.duration_refs().into_iter().map(|(id, ids)| (id.to_string(), day_set(g, ids))).collect()
}

#[test]
fn temporal_oracle() {
    let t0 = Instant::now();
    let mut failures = Vec::new();
    for i in 0..TEMPORAL_GRAPHS {
        let g = common::gen::timeline(&mut rng(i as u64), 8, 12);
        let r = reconcile_node_intervals(&g);
        let before = node_days(&g);
        for (node, ids) in r.duration_refs() {
            let mut got: Vec<(i64, i64)> = ids
                .iter()
                .map(|id| r.duration(id).map(|d| (d.start(), d.end())).unwrap_or((i64::MIN, i64::MIN)))
                .collect();
            got.sort();
            let want = runs(&before[node]);
            if got != want {
                failures.push(format!("graph {i} node {node}: got {got:?}, oracle {want:?}"));
            }
        }
        if node_days(&r) != before {
            failures.push(format!("graph {i}: day sets changed"));
        }
        if reconcile_node_intervals(&r) != r {
            failures.push(format!("graph {i}: not idempotent"));
        }
    }
    let elapsed = t0.elapsed();
    if elapsed > TEMPORAL_BUDGET {
        failures.push(format!("took {elapsed:?}"));
    }
    let detail =
        format!("{TEMPORAL_GRAPHS} graphs in {elapsed:.2?}, {} failures {:?}", failures.len(), failures.first());
    report("temporal oracle", failures.is_empty(), &detail);
}

#[test]
fn half_open_currency() {
    let mut checked = 0;
    let mut failures = Vec::new();
    for start in -5..=5i64 {
        for span in 1..=5i64 {
            let mut g = SemanticGraph::default();
            g.durations.push(DurationInterval::new("dur_001", start, span));
            g.symptoms.push(SymptomNode {
                id: "s_001".into(),
                symptom: "x".into(),
                pattern: String::new(),
                current_symptom: start > 0,
                evidence_text: String::new(),
                contexts: vec![],
                duration_ids: vec!["dur_001".into()],
            });
            let want = start <= 0 && 0 < start + span;
            let flag = recompute_current_flags(&g).symptoms[0].current_symptom;
            if flag != want || g.durations[0].covers_day0() != want {
                failures.push((start, span));
            }
            checked += 1;
        }
    }
    report("half-open currency", failures.is_empty(), &format!("{checked} intervals, failures {failures:?}"));
}

// ---- round trip and golden ----

const GRAPH_LAYOUT: [&str; 10] = [
    "demographics:",
    "test_results:",
    "family_history:",
    "diagnoses:",
    "symptoms:",
    "treatments:",
    "past_history:",
    "visit_event:",
    "relations:",
    "durations:",
];

fn top_level_keys(yaml: &str) -> Vec<&str> {
    yaml.lines()
        .filter(|l| !l.starts_with([' ', '-']) && !l.is_empty())
        .map(|l| l.split_once(':').map_or(l, |(k, _)| &l[..k.len() + 1]))
        .collect()
}

#[test]
fn round_trip_and_golden() {
    let mut failures = Vec::new();
    for i in 0..ROUND_TRIP_GRAPHS {
        let g = common::gen::valid_graph(&mut rng(10_000 + i as u64));
        let report = validate_graph(&g);
        if !report.is_valid() {
            failures.push(format!("graph {i}: generator produced invalid graph: {report}"));
            continue;
        }
        let text = serialize_yaml(&g).unwrap();
        match parse_yaml(&text) {
            Ok(back) if back == g.clone().canonical() => {
                if serialize_yaml(&back).unwrap() != text {
                    failures.push(format!("graph {i}: re-serialization differs"));
                }
            }
            Ok(_) => failures.push(format!("graph {i}: parse(serialize(g)) != g")),
            Err(e) => failures.push(format!("graph {i}: {e}")),
        }
    }

    let dir = tempfile::tempdir().unwrap();
    let o = cli::cmd_convert(&common::corpus(), dir.path(), &common::config());
    if o.status != Status::Success {
        failures.push(format!("convert: {o}"));
    }
    for case in common::CASES {
        let got = std::fs::read(dir.path().join(case).join(cli::GRAPH)).unwrap_or_default();
        let want = std::fs::read(common::golden(case, "graph.yaml")).unwrap();
        if got != want {
            failures.push(format!("{case}: graph.yaml differs from golden"));
        }
        if top_level_keys(&String::from_utf8_lossy(&want)) != GRAPH_LAYOUT {
            failures.push(format!("{case}: golden layout {:?}", top_level_keys(&String::from_utf8_lossy(&want))));
        }
    }
    let detail = format!("{ROUND_TRIP_GRAPHS} graphs + {} goldens, failures {:?}", common::CASES.len(), failures);
    report("round-trip and golden stability", failures.is_empty(), &detail);
}

// ---- perturbation backbone ----

/// Lines of a top-level YAML block, header included.
fn section(yaml: &str, key: &str) -> String {
    let header = format!("{key}:");
    let mut lines = yaml.lines().skip_while(|l| !l.starts_with(&header));
    let mut out: Vec<&str> = lines.next().into_iter().collect();
    out.extend(lines.take_while(|l| l.starts_with([' ', '-'])));
    out.join("\n")
}

fn steb_sets(g: &SemanticGraph) -> BTreeMap<String, Vec<Vec<StebField>>> {
    g.symptoms.iter().map(|s| (s.id.clone(), s.contexts.iter().map(|c| c.present_fields()).collect())).collect()
}

/// A graph whose original demographics satisfy `rules`, with rule values
/// pinned right at the edge so many draws are rejected.
fn adversarial_case(rng: &mut ChaCha8Rng) -> (SemanticGraph, Vec<FeasibilityRule>) {
    let mut g = SemanticGraph::default();
    let age: u32 = if rng.gen_bool(0.5) { rng.gen_range(18..=21) } else { rng.gen_range(18..=70) };
    let sex_dx = [("Premenstrual dysphoric disorder", "female"), ("Erectile disorder", "male")];
    let (sex_label, sex) = *sex_dx.choose(rng).unwrap();
    g.attributes.demographics.age = age;
    g.attributes.demographics.sex =
        if rng.gen_bool(0.5) { sex.to_string() } else { ["female", "male"].choose(rng).unwrap().to_string() };
    let mut labels = vec!["Antisocial personality disorder"];
    for l in ["Autism spectrum disorder", sex_label, "Major depressive disorder"] {
        if rng.gen_bool(0.6) {
            labels.push(l);
        }
    }
    if g.attributes.demographics.sex != sex {
        labels.retain(|l| *l != sex_label);
    }
    for (i, label) in labels.iter().enumerate() {
        let dx = format_id("d_", i as u32 + 1);
        g.diagnoses.push(DiagnosisNode { id: dx.clone(), label: label.to_string() });
        let dur = format_id("dur_", i as u32 + 1);
        let mut d = if label.starts_with("Autism") {
            // childhood onset recorded as an age-anchored interval
            let onset_years = rng.gen_range(2..=8) as i64;
            let mut d = DurationInterval::new(&dur, -(i64::from(age) - onset_years) * 365, 30);
            d.age_anchored = true;
            d
        } else {
            DurationInterval::new(&dur, rng.gen_range(-400..=30), rng.gen_range(1..=90))
        };
        if !d.age_anchored {
            d.age_anchored = rng.gen_bool(0.3);
        }
        g.durations.push(d);
        let s = format_id("s_", i as u32 + 1);
        g.symptoms.push(SymptomNode {
            id: s.clone(),
            symptom: "x".into(),
            pattern: String::new(),
            current_symptom: false,
            evidence_text: String::new(),
            contexts: vec![],
            duration_ids: vec![dur],
        });
        g.relations.push(Relation::new(RelationType::ManifestsAs, s, dx));
    }

    let mut rules = default_rules();
    for d in &g.diagnoses {
        let rule =
            |kind, value| FeasibilityRule { diagnosis_pattern: d.label.to_lowercase(), constraint_kind: kind, value };
        if rng.gen_bool(0.5) {
            let min = f64::from(age) - f64::from(rng.gen_range(0..=1u32));
            rules.push(rule(ConstraintKind::MinPresentAge, RuleValue::Number(min)));
        }
        if let (true, Some(onset)) = (rng.gen_bool(0.5), onset_age(&g, age, &d.id)) {
            rules.push(rule(ConstraintKind::MaxOnsetAge, RuleValue::Number(onset + rng.gen_range(0.001..1.0))));
        }
        if rng.gen_bool(0.3) {
            rules.push(rule(ConstraintKind::RequiredSex, RuleValue::Text(g.attributes.demographics.sex.clone())));
        }
    }
    (g, rules)
}

#[test]
fn perturbation_backbone() {
    let out = shared_run();
    let mut failures = Vec::new();
    for case in common::CASES {
        let read = |f: &str| std::fs::read_to_string(out.join(case).join(f)).unwrap();
        let (a, b) = (read(cli::GRAPH), read(cli::PERTURBED));
        for key in ["relations", "durations"] {
            if section(&a, key) != section(&b, key) || section(&a, key).is_empty() {
                failures.push(format!("{case}: {key} section differs"));
            }
        }
        let (g, g2) = (parse_yaml(&a).unwrap(), parse_yaml(&b).unwrap());
        let c = check_consistency(&g, &g2);
        if !c.passed() {
            failures.push(format!("{case}: {c}"));
        }
        if steb_sets(&g) != steb_sets(&g2) {
            failures.push(format!("{case}: STEB field sets changed"));
        }
    }

    let cfg = PerturbConfig::default();
    let (mut fallbacks, mut rejected) = (0, 0);
    for trial in 0..AGE_TRIALS {
        let mut r = rng(50_000 + trial);
        let (g, rules) = adversarial_case(&mut r);
        let sex0 = g.attributes.demographics.sex.clone();
        assert!(violations(&g, &rules, g.attributes.demographics.age, &sex0).is_empty(), "trial {trial} setup");
        let age = perturb_age(&g, &rules, &cfg, &mut r);
        let sex = perturb_sex(&g, &rules, &cfg, &mut r);
        let shifted = shift_age_anchored(&g, age.anchor_shift_days());
        let v = violations(&shifted, &rules, age.age, &sex.sex);
        if !v.is_empty() {
            failures.push(format!("trial {trial}: age {} sex {}: {v:?}", age.age, sex.sex));
        }
        let aspd = shifted.diagnoses.iter().any(|d| d.label.starts_with("Antisocial"));
        if aspd && age.age < 18 {
            failures.push(format!("trial {trial}: ASPD at age {}", age.age));
        }
        if !age.fallback
            && (age.offset_years == 0 || age.offset_years.unsigned_abs() > u64::from(cfg.age_offset_bound_years))
        {
            failures.push(format!("trial {trial}: offset {}", age.offset_years));
        }
        fallbacks += usize::from(age.fallback);
        rejected += age.draws.iter().filter(|d| !d.rejected_because.is_empty()).count();
    }
    let detail = format!(
        "{} cases, {AGE_TRIALS} age trials ({rejected} rejected draws, {fallbacks} fallbacks), failures {:?}",
        common::CASES.len(),
        failures
    );
    report("perturbation backbone", failures.is_empty(), &detail);
}

// ---- statistics ----

fn mid_ranks(xs: &[f64]) -> Vec<f64> {
    xs.iter()
        .map(|x| {
            let less = xs.iter().filter(|y| *y < x).count() as f64;
            let equal = xs.iter().filter(|y| *y == x).count() as f64;
            less + (equal + 1.0) / 2.0
        })
        .collect()
}

/// Exact signed-rank p-values by enumerating every sign vector.
fn wilcoxon_oracle(d: &[f64]) -> (f64, f64, f64) {
    let d: Vec<f64> = d.iter().copied().filter(|x| *x != 0.0).collect();
    if d.is_empty() {
        return (1.0, 1.0, 1.0);
    }
    let ranks = mid_ranks(&d.iter().map(|x| x.abs()).collect::<Vec<_>>());
    let obs: f64 = d.iter().zip(&ranks).filter(|(x, _)| **x > 0.0).map(|(_, r)| r).sum();
    let n = d.len();
    let (mut ge, mut le) = (0u64, 0u64);
    for mask in 0u32..(1 << n) {
        let w: f64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| ranks[i]).sum();
        ge += u64::from(w >= obs - 1e-9);
        le += u64::from(w <= obs + 1e-9);
    }
    let all = (1u64 << n) as f64;
    let (pg, pl) = (ge as f64 / all, le as f64 / all);
    ((2.0 * pg.min(pl)).min(1.0), pg, pl)
}

fn choose(n: u64, k: u64) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Binomial p-values from the direct pmf; the two-sided value sums every
/// outcome no more likely than the observed one.
fn binomial_oracle(k: u64, n: u64, p: f64) -> (f64, f64, f64) {
    let pmf: Vec<f64> = (0..=n).map(|i| choose(n, i) * p.powi(i as i32) * (1.0 - p).powi((n - i) as i32)).collect();
    let k = k as usize;
    let greater: f64 = pmf[k..].iter().sum();
    let less: f64 = pmf[..=k].iter().sum();
    let two: f64 = pmf.iter().filter(|q| **q <= pmf[k] * (1.0 + 1e-7)).sum();
    (two.min(1.0), greater.min(1.0), less.min(1.0))
}

/// McNemar by enumerating all 2^(b+c) fair-coin splits of the discordant pairs.
fn mcnemar_oracle(b: u64, c: u64) -> f64 {
    let n = b + c;
    if n == 0 {
        return 1.0;
    }
    let lo = b.min(c) as u32;
    let hits = (0u64..(1 << n)).filter(|m| m.count_ones() <= lo).count();
    (2.0 * hits as f64 / (1u64 << n) as f64).min(1.0)
}

#[test]
fn statistics_oracle() {
    let mut r = rng(7);
    let mut worst: f64 = 0.0;
    let mut failures = Vec::new();
    let mut check = |what: String, got: f64, want: f64| {
        let err = (got - want).abs();
        worst = worst.max(err);
        if err > STATS_TOL {
            failures.push(format!("{what}: {got} vs {want}"));
        }
    };
    for i in 0..STATS_DATASETS {
        let n = r.gen_range(1..=10);
        let pairs: Vec<(f64, f64)> = (0..n).map(|_| (r.gen_range(0..6) as f64, r.gen_range(0..6) as f64)).collect();
        let d: Vec<f64> = pairs.iter().map(|(a, b)| a - b).collect();
        let (two, pg, pl) = wilcoxon_oracle(&d);
        for (alt, want) in [(Alternative::TwoSided, two), (Alternative::Greater, pg), (Alternative::Less, pl)] {
            let got = wilcoxon_signed_rank(&pairs, alt).unwrap().p;
            check(format!("wilcoxon #{i} {alt:?}"), got, want);
        }

        let (b, c) = (r.gen_range(0..=10u64), r.gen_range(0..=10u64));
        check(format!("mcnemar #{i} ({b},{c})"), mcnemar(b, c), mcnemar_oracle(b, c));

        let n = r.gen_range(1..=40u64);
        let k = r.gen_range(0..=n);
        let p0 = *[0.5, 0.25, 0.8, r.gen_range(0.05..0.95)].choose(&mut r).unwrap();
        let (two, pg, pl) = binomial_oracle(k, n, p0);
        for (alt, want) in [(Alternative::TwoSided, two), (Alternative::Greater, pg), (Alternative::Less, pl)] {
            let got = binomial_test(k, n, p0, alt).unwrap();
            check(format!("binomial #{i} ({k},{n},{p0}) {alt:?}"), got, want);
        }
    }

    let five: Vec<(f64, f64)> = (1..=5).map(|x| (x as f64, 0.0)).collect();
    let p5 = wilcoxon_signed_rank(&five, Alternative::Greater).unwrap().p;
    if p5 != 0.03125 {
        failures.push(format!("n=5 all-positive p = {p5}"));
    }

    for i in 0..HOLM_VECTORS {
        let m = r.gen_range(1..=20);
        let p: Vec<f64> = (0..m).map(|_| if r.gen_bool(0.2) { 0.05 } else { r.gen::<f64>() }).collect();
        let adj = holm_correct(&p);
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| p[a].total_cmp(&p[b]));
        let mut running: f64 = 0.0;
        for (rank, &j) in order.iter().enumerate() {
            running = running.max(((m - rank) as f64 * p[j]).min(1.0));
            if (adj[j] - running).abs() > STATS_TOL || adj[j] < p[j] || adj[j] > 1.0 {
                failures.push(format!("holm #{i} index {j}"));
            }
        }
        for a in 0..m {
            for b in 0..m {
                if p[a] <= p[b] && adj[a] > adj[b] + STATS_TOL {
                    failures.push(format!("holm #{i} not monotone at ({a},{b})"));
                }
            }
        }
    }
    let detail = format!(
        "{STATS_DATASETS} datasets per test, {HOLM_VECTORS} Holm vectors, max |err| {worst:.1e}, n=5 p={p5}, failures {failures:?}"
    );
    report("statistics oracle", failures.is_empty(), &detail);
}

// ---- soft-F1 ----

const LABELS: [&str; 14] = [
    "major depressive disorder",
    "schizophrenia",
    "bipolar i disorder",
    "bipolar ii disorder",
    "panic disorder",
    "social anxiety disorder",
    "posttraumatic stress disorder",
    "alcohol use disorder",
    "opioid use disorder",
    "anorexia nervosa",
    "borderline personality disorder",
    "insomnia disorder",
    "delusional disorder",
    "gender dysphoria",
];

fn exact_f1(pred: &[String], gold: &[String]) -> f64 {
    if pred.is_empty() && gold.is_empty() {
        return 1.0;
    }
    let hit = pred.iter().filter(|p| gold.contains(p)).count() as f64;
    if hit == 0.0 {
        return 0.0;
    }
    let (p, r) = (hit / pred.len() as f64, hit / gold.len() as f64);
    2.0 * p * r / (p + r)
}

#[test]
fn soft_f1_contract() {
    let mut r = rng(11);
    let embedder = HashedEmbedder::default();
    let emb = EmbeddingMatcher { embedder: &embedder };
    let mut failures = Vec::new();
    for i in 0..LABEL_SETS {
        let pick = |r: &mut ChaCha8Rng| -> Vec<String> {
            let k = r.gen_range(0..=5);
            LABELS.choose_multiple(r, k).map(|s| s.to_string()).collect()
        };
        let (pred, gold) = (pick(&mut r), pick(&mut r));
        let want = exact_f1(&pred, &gold);
        for (name, got) in [
            ("exact", soft_f1(&pred, &gold, &ExactMatcher, 1.0).unwrap().f1),
            ("embedding", soft_f1(&pred, &gold, &emb, 1.0).unwrap().f1),
        ] {
            if (got - want).abs() > 1e-12 {
                failures.push(format!("set {i} {name}: {got} vs {want}"));
            }
        }
    }

    let canon = Canonicalizer::shipped();
    let pair = soft_f1(
        &canon.label_set(&["Conversion disorder"]),
        &canon.label_set(&["Functional neurological symptom disorder"]),
        &ExactMatcher,
        THETA,
    )
    .unwrap()
    .f1;
    if pair != 1.0 {
        failures.push(format!("conversion pair scored {pair}"));
    }

    let specifiers = [
        ("Alcohol use disorder, in sustained remission", "alcohol use disorder"),
        ("Bipolar I disorder, most recent episode depressed", "bipolar i disorder"),
        ("Major depressive disorder, single episode, with psychotic features", "major depressive disorder"),
        ("Schizophrenia (with psychotic features)", "schizophrenia"),
    ];
    for (label, base) in specifiers {
        let got = canon.canonicalize(label);
        if got != base {
            failures.push(format!("`{label}` -> `{got}`"));
        }
    }
    let detail = format!("{LABEL_SETS} label sets, conversion pair {pair}, failures {failures:?}");
    report("soft-F1 contract", failures.is_empty(), &detail);
}

// ---- end to end ----

#[test]
fn end_to_end_determinism() {
    let cfg = common::config();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let t0 = Instant::now();
    let oa = cli::cmd_run(&common::corpus(), a.path(), &cfg);
    let ob = cli::cmd_run(&common::corpus(), b.path(), &cfg);
    let elapsed = t0.elapsed();
    let (sa, sb) = (common::snapshot(a.path()), common::snapshot(b.path()));
    let differing: Vec<&str> = sa.iter().zip(&sb).filter(|(x, y)| x != y).map(|(x, _)| x.0.as_str()).collect();
    let pass = oa.status == Status::Success
        && ob.status == Status::Success
        && sa.len() == sb.len()
        && differing.is_empty()
        && elapsed < RUN_BUDGET;
    let detail = format!("{} files, {elapsed:.2?} for two runs, differing {differing:?}", sa.len());
    report("end-to-end determinism", pass, &detail);
}

#[test]
fn trade_off_plane() {
    let out = shared_run();
    let csv = std::fs::read_to_string(out.join(cli::REPORT_CSV)).unwrap();
    let mut cos: BTreeMap<(String, String), f64> = BTreeMap::new();
    let mut coords = 0;
    for line in csv.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let (Ok(c), Ok(_)) = (f[2].parse::<f64>(), f[3].parse::<f64>()) else { continue };
        coords += 1;
        cos.insert((f[0].to_string(), f[1].to_string()), c);
    }
    let mut failures = Vec::new();
    let mean = |v: &str| {
        let xs: Vec<f64> =
            common::CASES.iter().filter_map(|c| cos.get(&(c.to_string(), v.to_string()))).copied().collect();
        (xs.len() == common::CASES.len()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
    };
    let means: Vec<Option<f64>> = ["anonpsy", "phi", "sdc"].iter().map(|v| mean(v)).collect();
    if means.iter().any(Option::is_none) {
        failures.push("missing coordinates".to_string());
    }
    for case in common::CASES {
        let get = |v: &str| cos.get(&(case.to_string(), v.to_string())).copied();
        match (get("phi"), get("anonpsy")) {
            (Some(p), Some(a)) if p > a => {}
            (p, a) => failures.push(format!("{case}: phi {p:?} not above anonpsy {a:?}")),
        }
    }
    let detail = format!(
        "{coords} coordinates; mean cosine anonpsy {:.4} phi {:.4} sdc {:.4}; failures {failures:?}",
        means[0].unwrap_or(f64::NAN),
        means[1].unwrap_or(f64::NAN),
        means[2].unwrap_or(f64::NAN)
    );
    report("trade-off plane", failures.is_empty() && means[1] > means[0], &detail);
}

#[test]
fn narrator_coverage() {
    let mut failures = Vec::new();
    for i in 0..OUTLINE_GRAPHS {
        let g = common::gen::valid_graph(&mut rng(90_000 + i as u64));
        let o = plan_outline(&g);
        let placed = o.placed_items();
        for id in g.symptoms.iter().map(|s| &s.id).chain(g.treatments.iter().map(|t| &t.id)) {
            let n = placed.iter().filter(|p| **p == id.as_str()).count();
            if n != 1 {
                failures.push(format!("graph {i}: {id} placed {n} times"));
            }
        }
        let starts: Vec<Option<i64>> = o.blocks.iter().map(|b| b.start).collect();
        let ordered = starts.windows(2).all(|w| match (w[0], w[1]) {
            (Some(a), Some(b)) => a <= b,
            (None, Some(_)) => false,
            _ => true,
        });
        if !ordered {
            failures.push(format!("graph {i}: block starts {starts:?}"));
        }
        let unique: BTreeSet<&(String, String)> = o.ledger.iter().collect();
        if unique.len() != o.ledger.len() {
            failures.push(format!("graph {i}: duplicate ledger entries"));
        }
    }
    report("narrator coverage", failures.is_empty(), &format!("{OUTLINE_GRAPHS} graphs, failures {failures:?}"));
}
