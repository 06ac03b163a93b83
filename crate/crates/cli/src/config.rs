//! Flat `key = value` run configuration.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use lda_cgsp::estimators::TrainThetaSource;
use lda_cgsp::eval::Algorithm;
use lda_cgsp::model::Recovery;
use lda_cgsp::priorlda::Preset;
use lda_cgsp::sampler::{ChainSchedule, Kernel};
use serde::Serialize;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Plaintext,
    Bow,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub train: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub format: Format,
    /// Vocabulary file for bag-of-words input.
    pub vocab: Option<PathBuf>,
    pub test_vocab: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub test_labels: Option<PathBuf>,
    pub stopwords: Option<PathBuf>,
    pub lowercase: bool,
    pub min_count: usize,
    pub topics: Option<usize>,
    pub alpha: f64,
    /// Unset means 0.01, or 0.1 for the multilabel pipeline.
    pub beta: Option<f64>,
    pub labeled: bool,
    pub algorithm: Algorithm,
    pub kernel: Kernel,
    /// Unset means the command's own default.
    pub theta: Option<Recovery>,
    pub phi: Option<Recovery>,
    pub theta_source: TrainThetaSource,
    pub iters: usize,
    pub burn_in: usize,
    pub lag: usize,
    pub samples: usize,
    pub chains: usize,
    pub seed: u64,
    pub shuffle_docs: bool,
    pub observed_fraction: f64,
    pub s_values: Vec<usize>,
    pub preset: Preset,
    pub ridge: f64,
    pub min_label_docs: u32,
    pub cue: Option<String>,
    pub candidates: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub every: usize,
    pub cap: u64,
    pub threads: usize,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            train: None,
            test: None,
            format: Format::Plaintext,
            vocab: None,
            test_vocab: None,
            labels: None,
            test_labels: None,
            stopwords: None,
            lowercase: false,
            min_count: 1,
            topics: None,
            alpha: 0.1,
            beta: None,
            labeled: false,
            algorithm: Algorithm::CgsP,
            kernel: Kernel::Dense,
            theta: None,
            phi: None,
            theta_source: TrainThetaSource::PhiStandard,
            iters: 200,
            burn_in: 50,
            lag: 5,
            samples: 1,
            chains: 1,
            seed: 0,
            shuffle_docs: false,
            observed_fraction: 0.5,
            s_values: vec![1, 50],
            preset: Preset::FiveByThirty,
            ridge: 1.0,
            min_label_docs: 0,
            cue: None,
            candidates: None,
            checkpoint: None,
            every: 1,
            cap: lda_cgsp::oracle::DEFAULT_CAP,
            threads: 0,
            out: PathBuf::from("run"),
        }
    }
}

const KEYS: &[&str] = &[
    "train",
    "test",
    "format",
    "vocab",
    "test_vocab",
    "labels",
    "test_labels",
    "stopwords",
    "lowercase",
    "min_count",
    "topics",
    "alpha",
    "beta",
    "labeled",
    "algorithm",
    "kernel",
    "theta",
    "phi",
    "theta_source",
    "iters",
    "burn_in",
    "lag",
    "samples",
    "chains",
    "seed",
    "shuffle_docs",
    "observed_fraction",
    "s_values",
    "preset",
    "ridge",
    "min_label_docs",
    "cue",
    "candidates",
    "checkpoint",
    "every",
    "cap",
    "threads",
    "out",
];

/// Parses `key = value` lines. Blank lines and `#` comments are ignored.
pub fn parse_file(path: &Path) -> Result<BTreeMap<String, String>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            CliError::Config(format!(
                "{}:{}: expected key = value",
                path.display(),
                i + 1
            ))
        })?;
        let k = k.trim().to_owned();
        if out.insert(k.clone(), v.trim().to_owned()).is_some() {
            return Err(CliError::Config(format!(
                "{}:{}: duplicate key {k}",
                path.display(),
                i + 1
            )));
        }
    }
    Ok(out)
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, CliError> {
    value
        .parse()
        .map_err(|_| CliError::Config(format!("invalid value for {key}: {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, CliError> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(CliError::Config(format!(
            "invalid value for {key}: {value:?}"
        ))),
    }
}

fn parse_recovery(key: &str, value: &str) -> Result<Recovery, CliError> {
    match value {
        "standard" => Ok(Recovery::Standard),
        "cgs_p" | "p" => Ok(Recovery::CgsP),
        "cvb0" => Ok(Recovery::Cvb0),
        _ => Err(CliError::Config(format!(
            "invalid value for {key}: {value:?}"
        ))),
    }
}

fn algorithm_name(a: Algorithm) -> &'static str {
    match a {
        Algorithm::Cgs => "cgs",
        Algorithm::CgsP => "cgs_p",
        Algorithm::Cvb0 => "cvb0",
    }
}

impl RunConfig {
    /// Applies `values` over the defaults and validates the result.
    pub fn from_map(values: &BTreeMap<String, String>) -> Result<Self, CliError> {
        let mut c = RunConfig::default();
        for (key, value) in values {
            let v = value.as_str();
            let path = || Some(PathBuf::from(v));
            match key.as_str() {
                "train" => c.train = path(),
                "test" => c.test = path(),
                "format" => {
                    c.format = match v {
                        "plaintext" => Format::Plaintext,
                        "bow" => Format::Bow,
                        _ => {
                            return Err(CliError::Config(format!(
                                "invalid value for format: {v:?}"
                            )))
                        }
                    }
                }
                "vocab" => c.vocab = path(),
                "test_vocab" => c.test_vocab = path(),
                "labels" => c.labels = path(),
                "test_labels" => c.test_labels = path(),
                "stopwords" => c.stopwords = path(),
                "lowercase" => c.lowercase = parse_bool(key, v)?,
                "min_count" => c.min_count = parse(key, v)?,
                "topics" => c.topics = Some(parse(key, v)?),
                "alpha" => c.alpha = parse(key, v)?,
                "beta" => c.beta = Some(parse(key, v)?),
                "labeled" => c.labeled = parse_bool(key, v)?,
                "algorithm" => {
                    c.algorithm = v.parse().map_err(|_| {
                        CliError::Config(format!("invalid value for algorithm: {v:?}"))
                    })?
                }
                "kernel" => {
                    c.kernel = match v {
                        "dense" => Kernel::Dense,
                        "sparse" => Kernel::Sparse,
                        _ => {
                            return Err(CliError::Config(format!(
                                "invalid value for kernel: {v:?}"
                            )))
                        }
                    }
                }
                "theta" => c.theta = Some(parse_recovery(key, v)?),
                "phi" => c.phi = Some(parse_recovery(key, v)?),
                "theta_source" => {
                    c.theta_source = match v {
                        "phi_standard" => TrainThetaSource::PhiStandard,
                        "phi_p" => TrainThetaSource::PhiP,
                        "collapsed" => TrainThetaSource::Collapsed,
                        _ => {
                            return Err(CliError::Config(format!(
                                "invalid value for theta_source: {v:?}"
                            )))
                        }
                    }
                }
                "iters" => c.iters = parse(key, v)?,
                "burn_in" => c.burn_in = parse(key, v)?,
                "lag" => c.lag = parse(key, v)?,
                "samples" => c.samples = parse(key, v)?,
                "chains" => c.chains = parse(key, v)?,
                "seed" => c.seed = parse(key, v)?,
                "shuffle_docs" => c.shuffle_docs = parse_bool(key, v)?,
                "observed_fraction" => c.observed_fraction = parse(key, v)?,
                "s_values" => {
                    c.s_values = v
                        .split(',')
                        .map(|s| parse(key, s.trim()))
                        .collect::<Result<_, _>>()?
                }
                "preset" => {
                    c.preset = match v {
                        "1x1" => Preset::OneByOne,
                        "5x30" => Preset::FiveByThirty,
                        _ => {
                            return Err(CliError::Config(format!(
                                "invalid value for preset: {v:?} (1x1 or 5x30)"
                            )))
                        }
                    }
                }
                "ridge" => c.ridge = parse(key, v)?,
                "min_label_docs" => c.min_label_docs = parse(key, v)?,
                "cue" => c.cue = Some(v.to_owned()),
                "candidates" => c.candidates = path(),
                "checkpoint" => c.checkpoint = path(),
                "every" => c.every = parse(key, v)?,
                "cap" => c.cap = parse(key, v)?,
                "threads" => c.threads = parse(key, v)?,
                "out" => c.out = PathBuf::from(v),
                _ => return Err(CliError::Config(format!("unknown key {key:?}"))),
            }
        }
        c.validate()?;
        Ok(c)
    }

    fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.topics == Some(0) {
            return bad("topics must be at least 1".into());
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha must be positive, got {}", self.alpha));
        }
        if let Some(b) = self.beta {
            if !(b > 0.0 && b.is_finite()) {
                return bad(format!("beta must be positive, got {b}"));
            }
        }
        if self.iters == 0
            || self.lag == 0
            || self.samples == 0
            || self.chains == 0
            || self.every == 0
        {
            return bad("iters, lag, samples, chains and every must be at least 1".into());
        }
        if !(self.observed_fraction > 0.0 && self.observed_fraction < 1.0) {
            return bad(format!(
                "observed_fraction must lie in (0, 1), got {}",
                self.observed_fraction
            ));
        }
        if self.s_values.is_empty() || self.s_values.contains(&0) {
            return bad("s_values must be a list of positive integers".into());
        }
        if self.format == Format::Bow && self.vocab.is_none() {
            return bad("format = bow needs a vocab file".into());
        }
        if self.labeled && self.labels.is_none() {
            return bad("labeled = true needs a labels file".into());
        }
        Ok(())
    }

    pub fn beta_or(&self, default: f64) -> f64 {
        self.beta.unwrap_or(default)
    }

    pub fn schedule(&self) -> ChainSchedule {
        ChainSchedule {
            burn_in: self.burn_in,
            lag: self.lag,
            samples: self.samples,
            chains: self.chains,
            total_train_iters: self.iters,
            seed: self.seed,
        }
    }

    pub fn require<'a, T>(&self, value: &'a Option<T>, key: &str) -> Result<&'a T, CliError> {
        value
            .as_ref()
            .ok_or_else(|| CliError::Config(format!("missing required key {key}")))
    }

    /// The effective configuration in the input format, every key spelled out.
    pub fn echo(&self) -> String {
        let p = |x: &Option<PathBuf>| x.as_ref().map(|p| p.display().to_string());
        let entries: Vec<(&str, Option<String>)> = vec![
            ("train", p(&self.train)),
            ("test", p(&self.test)),
            (
                "format",
                Some(match self.format {
                    Format::Plaintext => "plaintext".into(),
                    Format::Bow => "bow".into(),
                }),
            ),
            ("vocab", p(&self.vocab)),
            ("test_vocab", p(&self.test_vocab)),
            ("labels", p(&self.labels)),
            ("test_labels", p(&self.test_labels)),
            ("stopwords", p(&self.stopwords)),
            ("lowercase", Some(self.lowercase.to_string())),
            ("min_count", Some(self.min_count.to_string())),
            ("topics", self.topics.map(|k| k.to_string())),
            ("alpha", Some(self.alpha.to_string())),
            ("beta", self.beta.map(|b| b.to_string())),
            ("labeled", Some(self.labeled.to_string())),
            ("algorithm", Some(algorithm_name(self.algorithm).into())),
            (
                "kernel",
                Some(match self.kernel {
                    Kernel::Dense => "dense".into(),
                    Kernel::Sparse => "sparse".into(),
                }),
            ),
            ("theta", self.theta.map(|r| r.to_string())),
            ("phi", self.phi.map(|r| r.to_string())),
            (
                "theta_source",
                Some(match self.theta_source {
                    TrainThetaSource::PhiStandard => "phi_standard".into(),
                    TrainThetaSource::PhiP => "phi_p".into(),
                    TrainThetaSource::Collapsed => "collapsed".into(),
                }),
            ),
            ("iters", Some(self.iters.to_string())),
            ("burn_in", Some(self.burn_in.to_string())),
            ("lag", Some(self.lag.to_string())),
            ("samples", Some(self.samples.to_string())),
            ("chains", Some(self.chains.to_string())),
            ("seed", Some(self.seed.to_string())),
            ("shuffle_docs", Some(self.shuffle_docs.to_string())),
            (
                "observed_fraction",
                Some(self.observed_fraction.to_string()),
            ),
            (
                "s_values",
                Some(
                    self.s_values
                        .iter()
                        .map(|s| s.to_string())
                        .collect::<Vec<_>>()
                        .join(","),
                ),
            ),
            (
                "preset",
                Some(match self.preset {
                    Preset::OneByOne => "1x1".into(),
                    Preset::FiveByThirty => "5x30".into(),
                }),
            ),
            ("ridge", Some(self.ridge.to_string())),
            ("min_label_docs", Some(self.min_label_docs.to_string())),
            ("cue", self.cue.clone()),
            ("candidates", p(&self.candidates)),
            ("checkpoint", p(&self.checkpoint)),
            ("every", Some(self.every.to_string())),
            ("cap", Some(self.cap.to_string())),
            ("threads", Some(self.threads.to_string())),
            ("out", Some(self.out.display().to_string())),
        ];
        debug_assert_eq!(entries.len(), KEYS.len());
        let mut out = String::new();
        for (k, v) in entries {
            match v {
                Some(v) => writeln!(out, "{k} = {v}").unwrap(),
                None => writeln!(out, "# {k} =").unwrap(),
            }
        }
        out
    }
}
