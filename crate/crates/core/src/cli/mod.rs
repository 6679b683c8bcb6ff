//! Pipeline orchestration: corpus loading, per-case directories, run
//! manifests and the subcommands behind the `anonpsy` binary.

mod config;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::{self, phi_mask, HonorificNer, NerBackend};
use crate::converter::{convert, CaseNarrative};
use crate::evaluator::{evaluate_case, summarize, Canonicalizer, CaseEval, CaseTexts, ANONPSY};
use crate::gateway::{temperature_for, template, Gateway, Operator, JUDGE_TEMPERATURE, SYMPTOM_SENTENCE_TEMPERATURE};
use crate::graph::{parse_yaml, serialize_yaml};
use crate::narrator::generate;
use crate::perturber::{perturb, PerturbData};

pub use config::{
    BackendChoice, BaselineSection, Config, EmbedderChoice, EvalSection, GatewaySection, Overrides, RunContext,
};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("corpus: {0}")]
    Corpus(String),
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

pub const INPUT: &str = "input.txt";
pub const GOLD: &str = "gold.yaml";
pub const GRAPH: &str = "graph.yaml";
pub const CONVERT_LOG: &str = "convert.log";
pub const PERTURBED: &str = "graph.perturbed.yaml";
pub const AUDIT: &str = "perturb.audit.yaml";
pub const OUTLINE: &str = "outline.yaml";
pub const DEID: &str = "deid.txt";
pub const GENERATE_LOG: &str = "generate.log.yaml";
pub const REPORT_YAML: &str = "report.yaml";
pub const REPORT_CSV: &str = "report.csv";

pub fn baseline_file(name: &str) -> String {
    format!("baseline.{name}.txt")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Success,
    CaseFailures,
    Usage,
}

impl Status {
    pub fn code(self) -> i32 {
        match self {
            Status::Success => 0,
            Status::CaseFailures => 1,
            Status::Usage => 2,
        }
    }
}

/// Result of one subcommand: its exit status and what went wrong.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub status: Status,
    pub messages: Vec<String>,
}

impl Outcome {
    fn usage(e: CliError) -> Self {
        Self { status: Status::Usage, messages: vec![e.to_string()] }
    }

    fn from_cases(cases: &[CaseStatus]) -> Self {
        let messages: Vec<String> =
            cases.iter().filter_map(|c| c.error.as_ref().map(|e| format!("{}: {e}", c.case_id))).collect();
        let status = if messages.is_empty() { Status::Success } else { Status::CaseFailures };
        Self { status, messages }
    }

    pub fn code(&self) -> i32 {
        self.status.code()
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.status)?;
        for m in &self.messages {
            write!(f, "\n  {m}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusEntry {
    pub id: String,
    pub file: PathBuf,
    #[serde(default)]
    pub diagnoses: Vec<String>,
}

/// `manifest.yaml` of a corpus directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Corpus {
    pub cases: Vec<CorpusEntry>,
}

fn valid_case_id(id: &str) -> bool {
    !id.is_empty()
        && !id.starts_with('.')
        && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'))
}

impl Corpus {
    pub fn load(dir: &Path) -> Result<Self, CliError> {
        let path = dir.join("manifest.yaml");
        let text = std::fs::read_to_string(&path).map_err(io(&path))?;
        let corpus: Corpus =
            serde_yaml::from_str(&text).map_err(|e| CliError::Corpus(format!("{}: {e}", path.display())))?;
        let mut seen = BTreeSet::new();
        for c in &corpus.cases {
            if !valid_case_id(&c.id) {
                return Err(CliError::Corpus(format!("invalid case id `{}`", c.id)));
            }
            if !seen.insert(c.id.as_str()) {
                return Err(CliError::Corpus(format!("duplicate case id `{}`", c.id)));
            }
        }
        if corpus.cases.is_empty() {
            return Err(CliError::Corpus(format!("{} lists no cases", path.display())));
        }
        Ok(corpus)
    }

    fn narratives(&self, dir: &Path) -> Vec<(String, Result<CaseNarrative, String>)> {
        self.cases
            .iter()
            .map(|c| {
                let path = dir.join(&c.file);
                let x = std::fs::read_to_string(&path)
                    .map(|text| CaseNarrative {
                        case_id: c.id.clone(),
                        text,
                        ground_truth_diagnoses: c.diagnoses.clone(),
                    })
                    .map_err(|e| format!("{}: {e}", path.display()));
                (c.id.clone(), x)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseStatus {
    pub case_id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub seed: u64,
    pub config_digest: String,
    pub config: Config,
    pub model: String,
    pub embedder: String,
    pub temperatures: BTreeMap<String, f64>,
    pub prompt_hashes: BTreeMap<String, String>,
    pub data_hashes: BTreeMap<String, String>,
    pub cases: Vec<CaseStatus>,
}

pub fn data_hashes() -> BTreeMap<String, String> {
    [
        ("diagnosis_canon", include_str!("../../assets/data/diagnosis_canon.yaml")),
        ("feasibility_rules", include_str!("../../assets/data/feasibility_rules.yaml")),
        ("test_pools", include_str!("../../assets/data/test_pools.yaml")),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), hex::encode(Sha256::digest(v.as_bytes()))))
    .collect()
}

pub fn temperatures(cfg: &Config) -> BTreeMap<String, f64> {
    [
        ("convert", temperature_for(Operator::Convert)),
        ("perturb", temperature_for(Operator::Perturb)),
        ("generate", temperature_for(Operator::Generate)),
        ("generate_symptom", SYMPTOM_SENTENCE_TEMPERATURE),
        ("llm_only_rewrite", temperature_for(Operator::LlmOnlyRewrite)),
        ("llm_only_critique", temperature_for(Operator::LlmOnlyCritique)),
        ("baseline_sdc", cfg.baseline.sdc_temperature),
        ("eval", JUDGE_TEMPERATURE),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

fn write_manifest(ctx: &RunContext, out: &Path, command: &str, cases: &[CaseStatus]) -> Result<(), CliError> {
    let m = RunManifest {
        command: command.to_string(),
        seed: ctx.config.seed,
        config_digest: ctx.config.digest(),
        config: ctx.config.clone(),
        model: ctx.config.gateway.model.clone(),
        embedder: ctx.embedder.name(),
        temperatures: temperatures(&ctx.config),
        prompt_hashes: template::asset_hashes(),
        data_hashes: data_hashes(),
        cases: cases.to_vec(),
    };
    let path = out.join(format!("manifest.{command}.yaml"));
    std::fs::write(&path, serde_yaml::to_string(&m).expect("manifest serializes")).map_err(io(&path))
}

/// Minimal call trail: which template and which variables digest.
#[derive(Serialize)]
struct CallLine<'a> {
    template_id: &'a str,
    key: &'a str,
}

fn write_calls(dir: &Path, stage: &str, gw: &Gateway) -> Result<(), String> {
    let calls = gw.calls();
    let lines: Vec<CallLine> = calls.iter().map(|c| CallLine { template_id: &c.template_id, key: &c.key }).collect();
    put(dir, &format!("calls.{stage}.yaml"), &serde_yaml::to_string(&lines).expect("calls serialize"))
}

fn put(dir: &Path, name: &str, content: &str) -> Result<(), String> {
    let path = dir.join(name);
    std::fs::write(&path, content).map_err(|e| format!("{}: {e}", path.display()))
}

fn get(dir: &Path, name: &str) -> Result<String, String> {
    let path = dir.join(name);
    std::fs::read_to_string(&path).map_err(|_| format!("missing artifact {}", path.display()))
}

/// Run `f` on every case in the worker pool, keeping input order.
fn par_cases<T: Sync>(
    ctx: &RunContext,
    items: &[(String, T)],
    f: impl Fn(&str, &T) -> Result<(), String> + Sync,
) -> Vec<CaseStatus> {
    ctx.pool.install(|| {
        items
            .par_iter()
            .map(|(id, item)| {
                let error = f(id, item).err();
                if let Some(e) = &error {
                    log::error!("{id}: {e}");
                }
                CaseStatus { case_id: id.clone(), error }
            })
            .collect()
    })
}

/// Case directories under `out`: subdirectories holding an input copy.
pub fn case_dirs(out: &Path) -> Result<Vec<String>, CliError> {
    let entries = std::fs::read_dir(out).map_err(io(out))?;
    let mut ids: Vec<String> = entries
        .filter_map(Result::ok)
        .filter(|e| e.path().join(INPUT).is_file())
        .filter_map(|e| e.file_name().into_string().ok())
        .collect();
    ids.sort();
    if ids.is_empty() {
        return Err(CliError::Usage(format!(
            "no case directories under {} (expected <case_id>/{INPUT}; run `convert` or `run` first)",
            out.display()
        )));
    }
    Ok(ids)
}

fn stage_input(out: &Path, x: &CaseNarrative) -> Result<PathBuf, String> {
    let dir = out.join(&x.case_id);
    std::fs::create_dir_all(&dir).map_err(|e| format!("{}: {e}", dir.display()))?;
    put(&dir, INPUT, &x.text)?;
    put(&dir, GOLD, &serde_yaml::to_string(&x.ground_truth_diagnoses).expect("labels serialize"))?;
    Ok(dir)
}

fn convert_case(ctx: &RunContext, out: &Path, x: &CaseNarrative) -> Result<(), String> {
    let dir = stage_input(out, x)?;
    let gw = ctx.gateway.for_case();
    let result = convert(x, &gw);
    write_calls(&dir, "convert", &gw)?;
    let c = result.map_err(|e| format!("convert: {e}"))?;
    let mut log = c.log.join("\n");
    log.push('\n');
    put(&dir, CONVERT_LOG, &log)?;
    put(&dir, GRAPH, &serialize_yaml(&c.graph).map_err(|e| format!("convert: {e}"))?)
}

fn perturb_case(ctx: &RunContext, dir: &Path, id: &str) -> Result<(), String> {
    let g = parse_yaml(&get(dir, GRAPH)?).map_err(|e| format!("{GRAPH}: {e}"))?;
    let gw = ctx.gateway.for_case();
    let result = perturb(id, &g, &gw, &ctx.config.perturb, &PerturbData::default());
    write_calls(dir, "perturb", &gw)?;
    let p = result.map_err(|e| format!("perturb: {e}"))?;
    put(dir, AUDIT, &p.audit.to_yaml())?;
    put(dir, PERTURBED, &serialize_yaml(&p.graph).map_err(|e| format!("perturb: {e}"))?)
}

fn generate_case(ctx: &RunContext, dir: &Path, id: &str) -> Result<(), String> {
    let g = parse_yaml(&get(dir, PERTURBED)?).map_err(|e| format!("{PERTURBED}: {e}"))?;
    let gw = ctx.gateway.for_case();
    let result = generate(id, &g, &gw);
    write_calls(dir, "generate", &gw)?;
    let out = result.map_err(|e| format!("generate: {e}"))?;
    put(dir, OUTLINE, &out.outline.to_yaml())?;
    put(dir, GENERATE_LOG, &serde_yaml::to_string(&out.log).expect("log serializes"))?;
    put(dir, DEID, &out.narrative.text)
}

fn load_corpus(corpus: &Path) -> Result<Vec<(String, Result<CaseNarrative, String>)>, CliError> {
    Ok(Corpus::load(corpus)?.narratives(corpus))
}

fn with_context(config: &Config, f: impl FnOnce(&RunContext) -> Outcome) -> Outcome {
    match RunContext::new(config) {
        Ok(ctx) => f(&ctx),
        Err(e) => Outcome::usage(e),
    }
}

pub fn cmd_convert(corpus: &Path, out: &Path, config: &Config) -> Outcome {
    with_context(config, |ctx| convert_with(ctx, corpus, out))
}

pub fn convert_with(ctx: &RunContext, corpus: &Path, out: &Path) -> Outcome {
    corpus_command(ctx, "convert", corpus, out, |x| convert_case(ctx, out, x))
}

pub fn cmd_run(corpus: &Path, out: &Path, config: &Config) -> Outcome {
    with_context(config, |ctx| run_with(ctx, corpus, out))
}

pub fn run_with(ctx: &RunContext, corpus: &Path, out: &Path) -> Outcome {
    corpus_command(ctx, "run", corpus, out, |x| {
        convert_case(ctx, out, x)?;
        let dir = out.join(&x.case_id);
        perturb_case(ctx, &dir, &x.case_id)?;
        generate_case(ctx, &dir, &x.case_id)
    })
}

pub fn cmd_baseline(name: &str, corpus: &Path, out: &Path, config: &Config) -> Outcome {
    if !baselines::ALL.contains(&name) {
        return Outcome::usage(CliError::Usage(format!(
            "unknown baseline `{name}` (expected one of {})",
            baselines::ALL.join(", ")
        )));
    }
    with_context(config, |ctx| baseline_with(ctx, name, corpus, out))
}

pub fn baseline_with(ctx: &RunContext, name: &str, corpus: &Path, out: &Path) -> Outcome {
    corpus_command(ctx, &format!("baseline.{name}"), corpus, out, |x| {
        let dir = stage_input(out, x)?;
        let gw = ctx.gateway.for_case();
        let text = match name {
            baselines::PHI => {
                let ner: Option<&dyn NerBackend> = if ctx.config.baseline.ner { Some(&HonorificNer) } else { None };
                let m = phi_mask(&x.text, ner);
                #[derive(Serialize)]
                struct PhiAudit<'a> {
                    regex_only: bool,
                    spans: &'a [baselines::PhiSpan],
                }
                let audit = PhiAudit { regex_only: m.regex_only, spans: &m.spans };
                put(&dir, "baseline.phi.audit.yaml", &serde_yaml::to_string(&audit).expect("audit serializes"))?;
                Ok(m.text)
            }
            baselines::SDC => baselines::sdc_rewrite(&x.text, &gw, ctx.config.baseline.sdc_temperature),
            baselines::LLM_ONLY => baselines::llm_only(&x.text, &gw).map(|r| r.text),
            other => return Err(format!("unknown baseline `{other}`")),
        };
        if name != baselines::PHI {
            write_calls(&dir, &format!("baseline.{name}"), &gw)?;
        }
        let mut text = text.map_err(|e| format!("baseline {name}: {e}"))?;
        if !text.ends_with('\n') {
            text.push('\n');
        }
        put(&dir, &baseline_file(name), &text)
    })
}

fn corpus_command(
    ctx: &RunContext,
    command: &str,
    corpus: &Path,
    out: &Path,
    f: impl Fn(&CaseNarrative) -> Result<(), String> + Sync,
) -> Outcome {
    let cases = match load_corpus(corpus) {
        Ok(c) => c,
        Err(e) => return Outcome::usage(e),
    };
    if let Err(e) = std::fs::create_dir_all(out) {
        return Outcome::usage(CliError::Io { path: out.to_path_buf(), source: e });
    }
    let statuses = par_cases(ctx, &cases, |_, x| match x {
        Ok(x) => f(x),
        Err(e) => Err(e.clone()),
    });
    finish(ctx, out, command, statuses)
}

fn finish(ctx: &RunContext, out: &Path, command: &str, statuses: Vec<CaseStatus>) -> Outcome {
    if let Err(e) = write_manifest(ctx, out, command, &statuses) {
        return Outcome::usage(e);
    }
    Outcome::from_cases(&statuses)
}

fn out_dir_command(
    ctx: &RunContext,
    command: &str,
    out: &Path,
    f: impl Fn(&RunContext, &Path, &str) -> Result<(), String> + Sync,
) -> Outcome {
    let ids = match case_dirs(out) {
        Ok(ids) => ids,
        Err(e) => return Outcome::usage(e),
    };
    let items: Vec<(String, PathBuf)> = ids.into_iter().map(|id| (id.clone(), out.join(id))).collect();
    let statuses = par_cases(ctx, &items, |id, dir| f(ctx, dir, id));
    finish(ctx, out, command, statuses)
}

pub fn cmd_perturb(out: &Path, config: &Config) -> Outcome {
    with_context(config, |ctx| perturb_with(ctx, out))
}

pub fn perturb_with(ctx: &RunContext, out: &Path) -> Outcome {
    out_dir_command(ctx, "perturb", out, perturb_case)
}

pub fn cmd_generate(out: &Path, config: &Config) -> Outcome {
    with_context(config, |ctx| generate_with(ctx, out))
}

pub fn generate_with(ctx: &RunContext, out: &Path) -> Outcome {
    out_dir_command(ctx, "generate", out, generate_case)
}

fn case_texts(dir: &Path, id: &str) -> Result<CaseTexts, String> {
    let mut missing = Vec::new();
    let mut need = |name: &str| match get(dir, name) {
        Ok(t) => Some(t),
        Err(_) => {
            missing.push(name.to_string());
            None
        }
    };
    let original = need(INPUT);
    let gold = need(GOLD);
    let deid = need(DEID);
    let (Some(original), Some(gold), Some(deid)) = (original, gold, deid) else {
        return Err(format!("missing artifacts in {}: {}", dir.display(), missing.join(", ")));
    };
    let gold: Vec<String> = serde_yaml::from_str(&gold).map_err(|e| format!("{GOLD}: {e}"))?;
    let mut variants = BTreeMap::from([(ANONPSY.to_string(), deid)]);
    for name in baselines::ALL {
        if let Ok(t) = get(dir, &baseline_file(name)) {
            variants.insert(name.to_string(), t);
        }
    }
    Ok(CaseTexts { case_id: id.to_string(), original, gold, variants })
}

pub fn cmd_eval(out: &Path, config: &Config) -> Outcome {
    with_context(config, |ctx| eval_with(ctx, out))
}

pub fn eval_with(ctx: &RunContext, out: &Path) -> Outcome {
    let ids = match case_dirs(out) {
        Ok(ids) => ids,
        Err(e) => return Outcome::usage(e),
    };
    let canon = Canonicalizer::shipped();
    let settings = ctx.config.eval_settings();
    let results: Vec<(CaseStatus, Option<CaseEval>)> = ctx.pool.install(|| {
        ids.par_iter()
            .map(|id| {
                let dir = out.join(id);
                let run = || -> Result<CaseEval, String> {
                    let texts = case_texts(&dir, id)?;
                    let gw = ctx.gateway.for_case();
                    let r = evaluate_case(&texts, &gw, ctx.embedder.as_ref(), &canon, &settings);
                    write_calls(&dir, "eval", &gw)?;
                    r.map_err(|e| format!("eval: {e}"))
                };
                match run() {
                    Ok(e) => (CaseStatus { case_id: id.clone(), error: None }, Some(e)),
                    Err(e) => {
                        log::error!("{id}: {e}");
                        (CaseStatus { case_id: id.clone(), error: Some(e) }, None)
                    }
                }
            })
            .collect()
    });
    let (statuses, evals): (Vec<CaseStatus>, Vec<Option<CaseEval>>) = results.into_iter().unzip();
    let evals: Vec<CaseEval> = evals.into_iter().flatten().collect();
    if !evals.is_empty() {
        let report = summarize(&ctx.embedder.name(), &settings, evals);
        for (name, body) in [(REPORT_YAML, report.to_yaml()), (REPORT_CSV, report.to_csv())] {
            if let Err(e) = put(out, name, &body) {
                return Outcome { status: Status::Usage, messages: vec![e] };
            }
        }
    }
    finish(ctx, out, "eval", statuses)
}
