use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};

use anonpsy::cli::{self, BackendChoice, Config, Outcome, Overrides};

#[derive(Parser)]
#[command(name = "anonpsy", version, about = "De-identify psychiatric case narratives")]
struct Args {
    /// Run configuration (YAML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for case-level parallelism.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    backend: Option<Backend>,
    #[arg(long, global = true, env = "ANONPSY_ENDPOINT", hide_env_values = true)]
    endpoint: Option<String>,
    #[arg(long, global = true, env = "ANONPSY_MODEL")]
    model: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Backend {
    Live,
    Mock,
}

#[derive(Subcommand)]
enum Command {
    /// Narratives to semantic graphs.
    Convert { corpus: PathBuf, out: PathBuf },
    /// Perturb every converted graph in OUT.
    Perturb { out: PathBuf },
    /// Narrate every perturbed graph in OUT.
    Generate { out: PathBuf },
    /// Convert, perturb and generate.
    Run { corpus: PathBuf, out: PathBuf },
    /// Produce a comparison rewrite: phi, sdc or llm_only.
    Baseline { name: String, corpus: PathBuf, out: PathBuf },
    /// Score the variants in OUT and write report.yaml / report.csv.
    Eval { out: PathBuf },
}

fn load(args: &Args) -> anyhow::Result<Config> {
    let path = args.config.as_ref().context("--config is required")?;
    let cfg = Config::load(path)?;
    Ok(cfg.apply(&Overrides {
        seed: args.seed,
        jobs: args.jobs,
        backend: args.backend.map(|b| match b {
            Backend::Live => BackendChoice::Live,
            Backend::Mock => BackendChoice::Mock,
        }),
        endpoint: args.endpoint.clone(),
        model: args.model.clone(),
    }))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = Args::parse();
    let cfg = match load(&args) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    let outcome: Outcome = match &args.command {
        Command::Convert { corpus, out } => cli::cmd_convert(corpus, out, &cfg),
        Command::Perturb { out } => cli::cmd_perturb(out, &cfg),
        Command::Generate { out } => cli::cmd_generate(out, &cfg),
        Command::Run { corpus, out } => cli::cmd_run(corpus, out, &cfg),
        Command::Baseline { name, corpus, out } => cli::cmd_baseline(name, corpus, out, &cfg),
        Command::Eval { out } => cli::cmd_eval(out, &cfg),
    };
    for m in &outcome.messages {
        eprintln!("error: {m}");
    }
    ExitCode::from(outcome.code() as u8)
}
