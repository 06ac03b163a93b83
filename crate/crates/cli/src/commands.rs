use std::path::{Path, PathBuf};
use std::time::Instant;

use lda_cgsp::corpus::{
    load_labels, load_labels_with_space, load_plaintext, load_plaintext_with_vocab,
    load_sparse_bow, load_stopwords, Corpus, PlaintextOptions, Vocabulary,
};
use lda_cgsp::cvb0::{cvb0_estimates, cvb0_run, Cvb0Init, VariationalState};
use lda_cgsp::estimators::{recover_train, TrainThetaSource};
use lda_cgsp::eval::{
    convergence_trace, f1_metrics, log_likelihood, median, perplexity as perplexity_of,
    perplexity_grid, rank_differences, train_estimates, word_association, Algorithm, TraceOptions,
};
use lda_cgsp::model::checkpoint::{load_estimate, load_state, save_estimate, save_state};
use lda_cgsp::model::{
    write_csv, EstimateMeta, Hyperparams, ParamEstimate, Recovery, SamplerState,
};
use lda_cgsp::oracle::{bound_check_enumerated, hard_soft_divergence, phi_p_bounds, BoundSummary};
use lda_cgsp::priorlda::{self, PriorLdaConfig};
use lda_cgsp::sampler::{run_chain_with, ChainSchedule, SamplingMode};
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{Format, RunConfig};
use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

pub struct Context<'a> {
    pub cfg: &'a RunConfig,
    pub command: &'a str,
}

/// What a training run leaves behind for the commands that read it.
#[derive(Debug, Serialize, Deserialize)]
struct ModelInfo {
    algorithm: Algorithm,
    topics: usize,
    alpha: f64,
    beta: f64,
    labeled: bool,
    theta_source: TrainThetaSource,
}

fn data_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| data_err(path, e))
}

impl Context<'_> {
    fn path(&self, name: &str) -> PathBuf {
        self.cfg.out.join(name)
    }

    fn report(&self, results: serde_json::Value) -> Result<(), CliError> {
        let doc = json!({
            "schema_version": SCHEMA_VERSION,
            "command": self.command,
            "config": self.cfg,
            "results": results,
        });
        let text = serde_json::to_string_pretty(&doc).expect("serializable report");
        write_text(&self.path("report.json"), &(text + "\n"))
    }

    fn csv(
        &self,
        name: &str,
        header: &[&str],
        rows: impl IntoIterator<Item = Vec<String>>,
    ) -> Result<(), CliError> {
        let path = self.path(name);
        let mut w = csv::Writer::from_path(&path).map_err(|e| data_err(&path, e))?;
        w.write_record(header).map_err(|e| data_err(&path, e))?;
        for row in rows {
            w.write_record(&row).map_err(|e| data_err(&path, e))?;
        }
        w.flush().map_err(|e| data_err(&path, e))
    }

    fn matrix(&self, name: &str, m: &Array2<f64>) -> Result<(), CliError> {
        Ok(write_csv(self.path(name), m.view())?)
    }

    fn labels_file(&self, space: &[String]) -> Result<(), CliError> {
        write_text(
            &self.path("labels.txt"),
            &space.iter().map(|l| format!("{l}\n")).collect::<String>(),
        )
    }
}

fn load_corpus(cfg: &RunConfig, path: &Path) -> Result<Corpus, CliError> {
    match cfg.format {
        Format::Plaintext => {
            let options = PlaintextOptions {
                lowercase: cfg.lowercase,
                stopwords: cfg.stopwords.as_ref().map(load_stopwords).transpose()?,
                min_count: cfg.min_count,
            };
            Ok(load_plaintext(path, &options)?)
        }
        Format::Bow => Ok(load_sparse_bow(path, cfg.require(&cfg.vocab, "vocab")?)?),
    }
}

/// Loads a corpus that must share `vocab`: plain text is mapped onto it (unknown words are
/// dropped), bag-of-words files must come with an identical vocabulary file.
fn load_corpus_with_vocab(
    cfg: &RunConfig,
    path: &Path,
    vocab: &Vocabulary,
    bow_vocab: Option<&PathBuf>,
) -> Result<Corpus, CliError> {
    match cfg.format {
        Format::Plaintext => Ok(load_plaintext_with_vocab(path, vocab, cfg.lowercase)?),
        Format::Bow => {
            let vpath = bow_vocab
                .or(cfg.vocab.as_ref())
                .ok_or_else(|| CliError::Config("missing required key vocab".into()))?;
            let c = load_sparse_bow(path, vpath)?;
            check_vocab(&c, vocab, path)?;
            Ok(c)
        }
    }
}

fn check_vocab(corpus: &Corpus, vocab: &Vocabulary, path: &Path) -> Result<(), CliError> {
    if corpus.vocabulary != *vocab {
        return Err(CliError::Data(format!(
            "vocabulary of {} ({} words) does not match the checkpoint vocabulary ({} words)",
            path.display(),
            corpus.vocab_size(),
            vocab.len()
        )));
    }
    Ok(())
}

struct Run {
    dir: PathBuf,
    info: ModelInfo,
    vocab: Vocabulary,
}

impl Run {
    fn open(cfg: &RunConfig) -> Result<Run, CliError> {
        let dir = cfg.require(&cfg.checkpoint, "checkpoint")?.clone();
        let info_path = dir.join("model.json");
        let text = std::fs::read_to_string(&info_path).map_err(|e| data_err(&info_path, e))?;
        let info = serde_json::from_str(&text).map_err(|e| data_err(&info_path, e))?;
        let vocab = Vocabulary::load(dir.join("vocab.txt"))?;
        Ok(Run { dir, info, vocab })
    }

    fn hyper(&self) -> Result<Hyperparams, CliError> {
        Ok(Hyperparams::symmetric(
            self.info.topics,
            self.info.alpha,
            self.vocab.len(),
            self.info.beta,
        )?)
    }

    fn estimate(&self, kind: Recovery) -> Result<ParamEstimate, CliError> {
        let path = self.dir.join(format!("estimate_{kind}.ckpt"));
        if !path.exists() {
            return Err(CliError::Data(format!(
                "{} has no {kind} estimate",
                self.dir.display()
            )));
        }
        Ok(load_estimate(path)?)
    }

    /// The phi estimates a run offers, standard first.
    fn phis(&self) -> Result<Vec<(Recovery, Array2<f64>)>, CliError> {
        let kinds: &[Recovery] = match self.info.algorithm {
            Algorithm::Cvb0 => &[Recovery::Cvb0],
            _ => &[Recovery::Standard, Recovery::CgsP],
        };
        kinds
            .iter()
            .map(|&k| Ok((k, self.estimate(k)?.phi)))
            .collect()
    }

    /// Reloads the training corpus and checks it against the stored vocabulary and labels.
    fn training_corpus(&self, cfg: &RunConfig) -> Result<Corpus, CliError> {
        let path = cfg.require(&cfg.train, "train")?;
        let mut corpus = load_corpus(cfg, path)?;
        check_vocab(&corpus, &self.vocab, path)?;
        if self.info.labeled {
            let labels = cfg.require(&cfg.labels, "labels")?;
            let space = read_lines(&self.dir.join("labels.txt"))?;
            corpus = load_labels_with_space(labels, corpus, &space)?;
        }
        Ok(corpus)
    }
}

fn read_lines(path: &Path) -> Result<Vec<String>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| data_err(path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_owned)
        .collect())
}

fn sampler_mode(labeled: bool) -> SamplingMode<'static> {
    if labeled {
        SamplingMode::LabeledTrain
    } else {
        SamplingMode::Train
    }
}

/// Soft-count estimates of a training snapshot; unsupervised theta^p follows `source`.
fn soft_estimate(
    state: &SamplerState,
    corpus: &Corpus,
    hyper: &Hyperparams,
    info: &ModelInfo,
) -> Result<ParamEstimate, CliError> {
    if info.labeled {
        return Ok(recover_train(
            state,
            corpus,
            hyper,
            &SamplingMode::LabeledTrain,
            Recovery::CgsP,
            Recovery::CgsP,
        )?);
    }
    let (theta, phi) = train_estimates(state, corpus, hyper, Algorithm::CgsP, info.theta_source)?;
    Ok(ParamEstimate {
        theta,
        phi,
        meta: EstimateMeta {
            theta: Recovery::CgsP,
            phi: Recovery::CgsP,
            chains: 1,
            samples_per_chain: 1,
        },
    })
}

fn check_state(state: &SamplerState, corpus: &Corpus, k: usize) -> Result<(), CliError> {
    let shapes_match = state.z.len() == corpus.num_docs()
        && state
            .z
            .iter()
            .zip(&corpus.documents)
            .all(|(z, d)| z.len() == d.len())
        && state.num_topics() == k;
    if !shapes_match || !state.audit(corpus)? {
        return Err(CliError::Data(
            "sampler checkpoint does not match the training corpus".into(),
        ));
    }
    Ok(())
}

pub fn train(ctx: &Context) -> Result<(), CliError> {
    let cfg = ctx.cfg;
    let path = cfg.require(&cfg.train, "train")?;
    let mut corpus = load_corpus(cfg, path)?;
    if let Some(labels) = &cfg.labels {
        corpus = load_labels(labels, corpus)?;
    }
    let k = if cfg.labeled {
        let k = corpus.num_labels();
        if cfg.topics.is_some_and(|t| t != k) {
            return Err(CliError::Config(format!(
                "topics = {} but the label file defines {k} labels",
                cfg.topics.unwrap()
            )));
        }
        ctx.labels_file(corpus.label_space.as_deref().unwrap_or_default())?;
        k
    } else {
        *cfg.require(&cfg.topics, "topics")?
    };
    let info = ModelInfo {
        algorithm: cfg.algorithm,
        topics: k,
        alpha: cfg.alpha,
        beta: cfg.beta_or(0.01),
        labeled: cfg.labeled,
        theta_source: cfg.theta_source,
    };
    let hyper = Hyperparams::symmetric(k, info.alpha, corpus.vocab_size(), info.beta)?;
    let mode = sampler_mode(cfg.labeled);
    corpus.vocabulary.save(ctx.path("vocab.txt"))?;
    write_text(
        &ctx.path("model.json"),
        &serde_json::to_string_pretty(&info).expect("serializable"),
    )?;

    log::info!(
        "training K={k} on {} documents, {} tokens, {} words",
        corpus.num_docs(),
        corpus.total_tokens(),
        corpus.vocab_size()
    );
    let t0 = Instant::now();
    let mut results = json!({
        "documents": corpus.num_docs(),
        "tokens": corpus.total_tokens(),
        "vocabulary": corpus.vocab_size(),
        "topics": k,
        "iterations": cfg.iters,
    });
    let mut lls = serde_json::Map::new();
    match cfg.algorithm {
        Algorithm::Cvb0 => {
            let init = Cvb0Init::Seed {
                seed: cfg.seed,
                shuffle_docs: cfg.shuffle_docs,
            };
            let state = cvb0_run(&corpus, &hyper, &mode, cfg.iters, init)?;
            results["seconds"] = json!(t0.elapsed().as_secs_f64());
            state.save(ctx.path("variational.ckpt"))?;
            let est = cvb0_estimates(&state, &hyper);
            save_estimate(ctx.path("estimate_cvb0.ckpt"), &est)?;
            ctx.matrix("theta_cvb0.csv", &est.theta)?;
            ctx.matrix("phi_cvb0.csv", &est.phi)?;
            lls.insert(
                "cvb0".into(),
                json!(log_likelihood(&corpus.documents, &est.theta, &est.phi)?),
            );
            results["soft_count_drift"] = json!(state.drift(&corpus));
        }
        Algorithm::Cgs | Algorithm::CgsP => {
            let schedule = ChainSchedule::single(cfg.iters, cfg.seed);
            let mut last = None;
            run_chain_with(&corpus, &hyper, &mode, &schedule, 0, cfg.kernel, |s| {
                last = Some(s.clone());
                Ok(())
            })?;
            let state = last.expect("one snapshot");
            results["seconds"] = json!(t0.elapsed().as_secs_f64());
            check_state(&state, &corpus, k)?;
            save_state(ctx.path("state.ckpt"), &state)?;
            let standard = recover_train(
                &state,
                &corpus,
                &hyper,
                &mode,
                Recovery::Standard,
                Recovery::Standard,
            )?;
            let soft = soft_estimate(&state, &corpus, &hyper, &info)?;
            for (name, est) in [("standard", &standard), ("cgs_p", &soft)] {
                save_estimate(ctx.path(&format!("estimate_{name}.ckpt")), est)?;
                ctx.matrix(&format!("theta_{name}.csv"), &est.theta)?;
                ctx.matrix(&format!("phi_{name}.csv"), &est.phi)?;
                lls.insert(
                    name.into(),
                    json!(log_likelihood(&corpus.documents, &est.theta, &est.phi)?),
                );
            }
        }
    }
    results["log_likelihood"] = serde_json::Value::Object(lls);
    ctx.report(results)
}

pub fn estimate(ctx: &Context) -> Result<(), CliError> {
    let cfg = ctx.cfg;
    let run = Run::open(cfg)?;
    let corpus = run.training_corpus(cfg)?;
    let hyper = run.hyper()?;
    let mut results = json!({});
    let est = if run.info.algorithm == Algorithm::Cvb0 {
        if cfg.theta.is_some_and(|t| t != Recovery::Cvb0)
            || cfg.phi.is_some_and(|p| p != Recovery::Cvb0)
        {
            return Err(CliError::Config(
                "a cvb0 checkpoint only yields cvb0 estimates".into(),
            ));
        }
        let state = VariationalState::load(run.dir.join("variational.ckpt"))?;
        if state.offsets.last().copied() != Some(corpus.total_tokens())
            || state.offsets.len() != corpus.num_docs() + 1
        {
            return Err(CliError::Data(
                "variational checkpoint does not match the training corpus".into(),
            ));
        }
        results["soft_count_drift"] = json!(state.drift(&corpus));
        cvb0_estimates(&state, &hyper)
    } else {
        let (theta, phi) = (
            cfg.theta.unwrap_or(Recovery::CgsP),
            cfg.phi.unwrap_or(Recovery::CgsP),
        );
        if theta == Recovery::Cvb0 || phi == Recovery::Cvb0 {
            return Err(CliError::Config(
                "cvb0 estimates need a cvb0 checkpoint".into(),
            ));
        }
        let state = load_state(run.dir.join("state.ckpt"))?;
        check_state(&state, &corpus, hyper.num_topics())?;
        let mode = sampler_mode(run.info.labeled);
        results["hard_soft_divergence"] =
            json!(hard_soft_divergence(&state, &corpus, &hyper, &mode)?);
        let mut est = recover_train(
            &state,
            &corpus,
            &hyper,
            &mode,
            Recovery::Standard,
            Recovery::Standard,
        )?;
        if theta == Recovery::CgsP || phi == Recovery::CgsP {
            let soft = soft_estimate(&state, &corpus, &hyper, &run.info)?;
            if theta == Recovery::CgsP {
                est.theta = soft.theta;
            }
            if phi == Recovery::CgsP {
                est.phi = soft.phi;
            }
        }
        est.meta.theta = theta;
        est.meta.phi = phi;
        est
    };
    est.validate()?;
    save_estimate(ctx.path("estimate.ckpt"), &est)?;
    ctx.matrix("theta.csv", &est.theta)?;
    ctx.matrix("phi.csv", &est.phi)?;
    let ll = log_likelihood(&corpus.documents, &est.theta, &est.phi)?;
    results["theta"] = json!(est.meta.theta);
    results["phi"] = json!(est.meta.phi);
    results["log_likelihood"] = json!(ll);
    results["perplexity"] = json!(perplexity_of(ll, corpus.total_tokens()));
    ctx.report(results)
}

pub fn perplexity(ctx: &Context) -> Result<(), CliError> {
    let cfg = ctx.cfg;
    let run = Run::open(cfg)?;
    let path = cfg.require(&cfg.test, "test")?;
    let test = load_corpus_with_vocab(cfg, path, &run.vocab, cfg.test_vocab.as_ref())?;
    let hyper = run.hyper()?;
    let phis = run.phis()?;
    let phi_refs: Vec<(Recovery, &Array2<f64>)> = phis.iter().map(|(k, p)| (*k, p)).collect();
    let schedule = ChainSchedule {
        total_train_iters: cfg.iters,
        ..cfg.schedule()
    };
    let rows = perplexity_grid(
        &test,
        &phi_refs,
        &hyper,
        &schedule,
        cfg.observed_fraction,
        &cfg.s_values,
    )?;
    ctx.csv(
        "perplexity.csv",
        &["phi", "theta", "s_averaged", "log_likelihood", "perplexity"],
        rows.iter().map(|r| {
            vec![
                r.phi.to_string(),
                r.theta.to_string(),
                r.s_averaged.to_string(),
                r.log_likelihood.to_string(),
                r.perplexity.to_string(),
            ]
        }),
    )?;
    ctx.report(json!({
        "documents": test.num_docs(),
        "observed_fraction": cfg.observed_fraction,
        "rows": rows,
    }))
}

pub fn multilabel(ctx: &Context) -> Result<(), CliError> {
    let cfg = ctx.cfg;
    let train_path = cfg.require(&cfg.train, "train")?;
    let train = load_labels(
        cfg.require(&cfg.labels, "labels")?,
        load_corpus(cfg, train_path)?,
    )?;
    let config = PriorLdaConfig {
        beta: cfg.beta_or(0.1),
        train_iters: cfg.iters,
        phi: cfg.phi.unwrap_or(Recovery::Standard),
        theta: cfg.theta.unwrap_or(Recovery::CgsP),
        ridge: cfg.ridge,
        min_label_docs: cfg.min_label_docs,
        ..PriorLdaConfig::preset(cfg.preset, Recovery::CgsP, cfg.seed)
    };
    let t0 = Instant::now();
    let model = priorlda::train(&train, &config)?;
    let test_path = cfg.require(&cfg.test, "test")?;
    let mut test =
        load_corpus_with_vocab(cfg, test_path, &train.vocabulary, cfg.test_vocab.as_ref())?;
    let gold: Option<Vec<Vec<u32>>> = match &cfg.test_labels {
        Some(p) => {
            test = load_labels_with_space(p, test, &model.label_space)?;
            Some(test.documents.iter().map(|d| d.labels.clone()).collect())
        }
        None => None,
    };
    let pred = priorlda::predict_labels(&test, &model, &config)?;
    let seconds = t0.elapsed().as_secs_f64();
    train.vocabulary.save(ctx.path("vocab.txt"))?;
    ctx.labels_file(&model.label_space)?;
    ctx.matrix("phi.csv", &model.phi)?;
    ctx.matrix("label_scores.csv", &pred.theta)?;
    let names = |ids: &[u32]| {
        ids.iter()
            .map(|&l| model.label_space[l as usize].as_str())
            .collect::<Vec<_>>()
            .join(" ")
    };
    ctx.csv(
        "predictions.csv",
        &["document", "predicted", "gold"],
        pred.labels.iter().enumerate().map(|(d, p)| {
            vec![
                d.to_string(),
                names(p),
                gold.as_ref().map(|g| names(&g[d])).unwrap_or_default(),
            ]
        }),
    )?;
    let f1 = gold
        .as_ref()
        .map(|g| f1_metrics(&pred.labels, g, model.label_space.len()))
        .transpose()?;
    if let Some(f) = &f1 {
        log::info!(
            "micro-F {:.4}, macro-F {:.4}, example-F {:.4}",
            f.micro_f,
            f.macro_f,
            f.example_f
        );
    }
    ctx.report(json!({
        "labels": model.label_space.len(),
        "train_documents": train.num_docs(),
        "test_documents": test.num_docs(),
        "prior_lda": config,
        "seconds": seconds,
        "f1": f1,
    }))
}

pub fn word_assoc(ctx: &Context) -> Result<(), CliError> {
    let cfg = ctx.cfg;
    let run = Run::open(cfg)?;
    if run.info.algorithm == Algorithm::Cvb0 {
        return Err(CliError::Config(
            "word-assoc compares phi and phi^p and needs a sampler checkpoint".into(),
        ));
    }
    let cue_term = cfg.require(&cfg.cue, "cue")?;
    let cue = run
        .vocab
        .id(cue_term)
        .ok_or_else(|| CliError::Data(format!("cue {cue_term:?} is not in the vocabulary")))?;
    let cand_path = cfg.require(&cfg.candidates, "candidates")?;
    let mut candidates = Vec::new();
    for term in read_lines(cand_path)? {
        match run.vocab.id(&term) {
            Some(id) if id != cue => candidates.push(id),
            Some(_) => {}
            None => log::warn!("candidate {term:?} is not in the vocabulary; skipped"),
        }
    }
    candidates.sort_unstable();
    candidates.dedup();
    if candidates.is_empty() {
        return Err(CliError::Data(format!(
            "{} has no usable candidates",
            cand_path.display()
        )));
    }
    let phi = run.estimate(Recovery::Standard)?.phi;
    let phi_p = run.estimate(Recovery::CgsP)?.phi;
    let a = word_association(&phi, cue, &candidates)?;
    let b = word_association(&phi_p, cue, &candidates)?;
    let diffs = rank_differences(&phi, &phi_p, cue, &candidates)?;
    let lookup = |list: &[lda_cgsp::eval::Association], w: u32| {
        *list.iter().find(|x| x.word == w).expect("ranked")
    };
    let rows: Vec<_> = candidates
        .iter()
        .zip(&diffs)
        .map(|(&w, &d)| (w, lookup(&a, w), lookup(&b, w), d))
        .collect();
    ctx.csv(
        "association.csv",
        &[
            "word",
            "score_phi",
            "rank_phi",
            "score_phi_p",
            "rank_phi_p",
            "rank_difference",
        ],
        rows.iter().map(|(w, x, y, d)| {
            vec![
                run.vocab.term(*w).unwrap_or_default().to_owned(),
                x.score.to_string(),
                x.rank.to_string(),
                y.score.to_string(),
                y.rank.to_string(),
                d.to_string(),
            ]
        }),
    )?;
    let as_f64: Vec<f64> = diffs.iter().map(|&d| d as f64).collect();
    ctx.report(json!({
        "cue": cue_term,
        "candidates": candidates.len(),
        "median_rank_difference": median(&as_f64),
        "note": "rank_difference is the rank under phi minus the rank under phi_p among all vocabulary words",
    }))
}

pub fn trace(ctx: &Context) -> Result<(), CliError> {
    let cfg = ctx.cfg;
    let path = cfg.require(&cfg.train, "train")?;
    let corpus = load_corpus(cfg, path)?;
    let k = *cfg.require(&cfg.topics, "topics")?;
    let hyper = Hyperparams::symmetric(k, cfg.alpha, corpus.vocab_size(), cfg.beta_or(0.01))?;
    let options = TraceOptions {
        theta_source: cfg.theta_source,
        kernel: cfg.kernel,
        every: cfg.every,
    };
    // timings are taken on one thread
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| CliError::Config(e.to_string()))?;
    let points = pool.install(|| {
        convergence_trace(
            &corpus,
            &hyper,
            cfg.algorithm,
            cfg.iters,
            cfg.seed,
            &options,
        )
    })?;
    ctx.csv(
        "trace.csv",
        &[
            "iteration",
            "log_likelihood",
            "sweep_secs",
            "estimator_secs",
        ],
        points.iter().map(|p| {
            vec![
                p.iteration.to_string(),
                p.log_likelihood.to_string(),
                p.sweep_secs.to_string(),
                p.estimator_secs.to_string(),
            ]
        }),
    )?;
    let last = points.last().expect("at least one point");
    ctx.report(json!({
        "algorithm": cfg.algorithm,
        "points": points.len(),
        "final_log_likelihood": last.log_likelihood,
        "sweep_secs": last.sweep_secs,
        "mean_estimator_secs": points.iter().map(|p| p.estimator_secs).sum::<f64>() / points.len() as f64,
    }))
}

pub fn oracle_check(ctx: &Context) -> Result<(), CliError> {
    let cfg = ctx.cfg;
    let path = cfg.require(&cfg.train, "train")?;
    let mut corpus = load_corpus(cfg, path)?;
    if let Some(labels) = &cfg.labels {
        corpus = load_labels(labels, corpus)?;
    }
    let k = if cfg.labeled {
        corpus.num_labels()
    } else {
        *cfg.require(&cfg.topics, "topics")?
    };
    let hyper = Hyperparams::symmetric(k, cfg.alpha, corpus.vocab_size(), cfg.beta_or(0.01))?;
    let (how, summary) = match bound_check_enumerated(&corpus, &hyper, cfg.cap) {
        Ok(s) => ("enumerated", s),
        Err(lda_cgsp::Error::Size(msg)) => {
            log::info!(
                "{msg}; checking the states of a {}-sweep chain instead",
                cfg.iters
            );
            let schedule = ChainSchedule {
                burn_in: 0,
                lag: 1,
                samples: cfg.iters.max(2),
                chains: 1,
                total_train_iters: cfg.iters,
                seed: cfg.seed,
            };
            let mut summary = BoundSummary::default();
            run_chain_with(
                &corpus,
                &hyper,
                &sampler_mode(cfg.labeled),
                &schedule,
                0,
                cfg.kernel,
                |s| {
                    summary.add(&phi_p_bounds(s, &corpus, &hyper)?);
                    Ok(())
                },
            )?;
            ("sampled", summary)
        }
        Err(e) => return Err(e.into()),
    };
    ctx.report(json!({
        "method": how,
        "topics": k,
        "tokens": corpus.total_tokens(),
        "summary": summary,
        "passed": summary.violations == 0,
    }))?;
    if summary.violations > 0 {
        return Err(CliError::Numeric(format!(
            "{} of {} bound checks failed",
            summary.violations, summary.pairs
        )));
    }
    log::info!(
        "{} bound checks over {} states passed",
        summary.pairs,
        summary.states
    );
    Ok(())
}
