//! `cgsp`: train, evaluate and inspect LDA models from the command line.
//!
//! Settings come from an optional `key = value` file (`--config`), then the named flags,
//! then `--set key=value` pairs; later sources win.

mod commands;
mod config;

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Data(String),
    Numeric(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Numeric(m) => write!(f, "numeric error: {m}"),
        }
    }
}

impl From<lda_cgsp::Error> for CliError {
    fn from(e: lda_cgsp::Error) -> Self {
        use lda_cgsp::Error as E;
        match e {
            E::Numeric(_) => CliError::Numeric(e.to_string()),
            E::Argument(_) | E::Range(_) => CliError::Config(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(
    name = "cgsp",
    version,
    about = "LDA training and evaluation with soft-count parameter recovery"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train on a corpus and write the sampler state, estimates and a report.
    Train(Common),
    /// Recompute theta and phi from a training checkpoint.
    Estimate(Common),
    /// Held-out perplexity for every phi/theta estimator pair.
    Perplexity(Common),
    /// Prior-LDA multi-label classification with F1 scores.
    Multilabel(Common),
    /// Rank candidate words by association with a cue under phi and phi^p.
    WordAssoc(Common),
    /// Training log-likelihood and timing after every sweep.
    Trace(Common),
    /// Check the phi^p bounds on every assignment of a small corpus.
    OracleCheck(Common),
}

#[derive(Args)]
struct Common {
    /// Configuration file of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override any configuration key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    train: Option<String>,
    #[arg(long)]
    test: Option<String>,
    #[arg(long)]
    labels: Option<String>,
    #[arg(long)]
    test_labels: Option<String>,
    #[arg(long, short = 'k')]
    topics: Option<String>,
    #[arg(long)]
    alpha: Option<String>,
    #[arg(long)]
    beta: Option<String>,
    #[arg(long)]
    algorithm: Option<String>,
    #[arg(long)]
    iters: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    /// Run directory of an earlier `train`.
    #[arg(long)]
    checkpoint: Option<String>,
    #[arg(long)]
    cue: Option<String>,
    #[arg(long)]
    candidates: Option<String>,
    /// Worker threads; 0 uses every core.
    #[arg(long)]
    threads: Option<String>,
    /// Run directory for all outputs.
    #[arg(long, short = 'o')]
    out: Option<String>,
}

impl Common {
    fn values(&self) -> Result<BTreeMap<String, String>, CliError> {
        let mut values = match &self.config {
            Some(path) => config::parse_file(path)?,
            None => BTreeMap::new(),
        };
        let flags = [
            ("train", &self.train),
            ("test", &self.test),
            ("labels", &self.labels),
            ("test_labels", &self.test_labels),
            ("topics", &self.topics),
            ("alpha", &self.alpha),
            ("beta", &self.beta),
            ("algorithm", &self.algorithm),
            ("iters", &self.iters),
            ("seed", &self.seed),
            ("checkpoint", &self.checkpoint),
            ("cue", &self.cue),
            ("candidates", &self.candidates),
            ("threads", &self.threads),
            ("out", &self.out),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                values.insert(key.to_owned(), v.clone());
            }
        }
        for pair in &self.set {
            let (k, v) = pair.split_once('=').ok_or_else(|| {
                CliError::Config(format!("--set expects KEY=VALUE, got {pair:?}"))
            })?;
            values.insert(k.trim().to_owned(), v.trim().to_owned());
        }
        Ok(values)
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let (name, common): (&str, &Common) = match &cli.command {
        Command::Train(c) => ("train", c),
        Command::Estimate(c) => ("estimate", c),
        Command::Perplexity(c) => ("perplexity", c),
        Command::Multilabel(c) => ("multilabel", c),
        Command::WordAssoc(c) => ("word-assoc", c),
        Command::Trace(c) => ("trace", c),
        Command::OracleCheck(c) => ("oracle-check", c),
    };
    let cfg = RunConfig::from_map(&common.values()?)?;
    if cfg.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build_global()
            .map_err(|e| CliError::Config(format!("cannot set up {} threads: {e}", cfg.threads)))?;
    }
    std::fs::create_dir_all(&cfg.out)
        .map_err(|e| CliError::Data(format!("{}: {e}", cfg.out.display())))?;
    let echo = format!("# cgsp {name}\n{}", cfg.echo());
    commands::write_text(&cfg.out.join("config.txt"), &echo)?;
    let ctx = commands::Context {
        cfg: &cfg,
        command: name,
    };
    match cli.command {
        Command::Train(_) => commands::train(&ctx),
        Command::Estimate(_) => commands::estimate(&ctx),
        Command::Perplexity(_) => commands::perplexity(&ctx),
        Command::Multilabel(_) => commands::multilabel(&ctx),
        Command::WordAssoc(_) => commands::word_assoc(&ctx),
        Command::Trace(_) => commands::trace(&ctx),
        Command::OracleCheck(_) => commands::oracle_check(&ctx),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("cgsp: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
