//! Perplexity, log-likelihood traces, multi-label F1 and word association.

use std::time::Instant;

use ndarray::Array2;
use rand::SeedableRng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{split_heldout, Corpus, Document};
use crate::cvb0::{cvb0_estimates, cvb0_sweep, Cvb0Init, VariationalState};
use crate::error::{Error, Result};
use crate::estimators::{
    phi_p, phi_standard, theta_p_single, theta_p_train, theta_standard, TrainThetaSource,
};
use crate::model::{Hyperparams, Recovery, SamplerState};
use crate::sampler::{
    chain_seed, init_state, run_chains_map, sweep, ChainRng, ChainSchedule, FixedPhi, Kernel,
    SamplingMode, SparseSweeper,
};

/// `sum_d sum_i log sum_k phi[k, w_i] theta[d, k]`.
pub fn log_likelihood(docs: &[Document], theta: &Array2<f64>, phi: &Array2<f64>) -> Result<f64> {
    if theta.nrows() != docs.len() || theta.ncols() != phi.nrows() {
        return Err(Error::Argument(format!(
            "theta is {:?} for {} documents and phi is {:?}",
            theta.shape(),
            docs.len(),
            phi.shape()
        )));
    }
    let k = phi.nrows();
    let phi_t = phi.t().as_standard_layout().into_owned();
    let per_doc: Vec<f64> = docs
        .par_iter()
        .enumerate()
        .map(|(d, doc)| {
            let th = theta.row(d);
            let mut ll = 0.0;
            for &w in &doc.tokens {
                let w = w as usize;
                if w >= phi_t.nrows() {
                    return Err(Error::Argument(format!("word {w} outside phi")));
                }
                let col = phi_t.row(w);
                let mut max: f64 = 0.0;
                for t in 0..k {
                    max = max.max(col[t] * th[t]);
                }
                if !(max > 0.0) {
                    return Err(Error::Numeric(format!(
                        "token of word {w} in document {d} has zero probability"
                    )));
                }
                let s: f64 = (0..k).map(|t| col[t] * th[t] / max).sum();
                ll += max.ln() + s.ln();
            }
            Ok(ll)
        })
        .collect::<Result<_>>()?;
    Ok(per_doc.iter().sum())
}

pub fn perplexity(log_likelihood: f64, token_count: usize) -> f64 {
    (-log_likelihood / token_count as f64).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeldoutProtocol {
    /// Fraction of each test document's tokens used to estimate theta.
    pub observed_fraction: f64,
    pub schedule: ChainSchedule,
    pub theta: Recovery,
    /// Samples averaged per chain.
    pub s_averaged: usize,
}

impl HeldoutProtocol {
    /// Single-sample runs keep the state after `total_train_iters` sweeps; averaged runs use
    /// the burn-in and lag of `schedule`.
    pub fn effective_schedule(&self) -> ChainSchedule {
        if self.s_averaged == 1 {
            ChainSchedule {
                chains: self.schedule.chains,
                ..ChainSchedule::single(self.schedule.total_train_iters, self.schedule.seed)
            }
        } else {
            ChainSchedule {
                samples: self.s_averaged,
                ..self.schedule
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerplexityReport {
    pub log_likelihood: f64,
    pub token_count: usize,
    pub perplexity: f64,
    pub protocol: HeldoutProtocol,
}

fn check_theta_kind(kind: Recovery) -> Result<()> {
    if kind == Recovery::Cvb0 {
        return Err(Error::Argument(
            "held-out theta is estimated by sampling; use standard or cgs_p".into(),
        ));
    }
    Ok(())
}

/// Estimates theta on the observed part of every test document with `phi` fixed and scores
/// the held-out part.
pub fn heldout_perplexity(
    test: &Corpus,
    phi: &Array2<f64>,
    hyper: &Hyperparams,
    protocol: &HeldoutProtocol,
) -> Result<PerplexityReport> {
    check_theta_kind(protocol.theta)?;
    if protocol.s_averaged < 1 {
        return Err(Error::Argument("s_averaged must be at least 1".into()));
    }
    let (observed, heldout) = split_heldout(test, protocol.observed_fraction, None)?;
    let fixed = FixedPhi::new(phi.clone())?;
    let mode = SamplingMode::Predict(&fixed);
    let schedule = protocol.effective_schedule();
    let kind = protocol.theta;
    let per_sample =
        run_chains_map(
            &observed,
            hyper,
            &mode,
            &schedule,
            Kernel::Dense,
            |_, s| match kind {
                Recovery::CgsP => theta_p_single(s, &observed, hyper, &mode),
                _ => Ok(theta_standard(&s.counts, hyper)),
            },
        )?;
    let all: Vec<&Array2<f64>> = per_sample.iter().flatten().collect();
    let mut theta = Array2::zeros(all[0].raw_dim());
    for t in &all {
        theta += *t;
    }
    theta /= all.len() as f64;
    let ll = log_likelihood(&heldout.documents, &theta, phi)?;
    let n = heldout.total_tokens();
    Ok(PerplexityReport {
        log_likelihood: ll,
        token_count: n,
        perplexity: perplexity(ll, n),
        protocol: *protocol,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub phi: Recovery,
    pub theta: Recovery,
    pub s_averaged: usize,
    pub log_likelihood: f64,
    pub perplexity: f64,
}

/// Held-out perplexity for every (phi, theta) combination and every sample count in
/// `s_values`. Both theta estimators are computed from the same snapshots of the same
/// chains, and each `s` uses the first `s` snapshots of every chain.
pub fn perplexity_grid(
    test: &Corpus,
    phis: &[(Recovery, &Array2<f64>)],
    hyper: &Hyperparams,
    schedule: &ChainSchedule,
    observed_fraction: f64,
    s_values: &[usize],
) -> Result<Vec<GridRow>> {
    let s_max = *s_values
        .iter()
        .max()
        .ok_or_else(|| Error::Argument("no sample counts given".into()))?;
    if s_values.contains(&0) {
        return Err(Error::Argument("sample counts must be positive".into()));
    }
    let (observed, heldout) = split_heldout(test, observed_fraction, None)?;
    let n = heldout.total_tokens();
    let schedule = ChainSchedule {
        samples: s_max,
        ..*schedule
    };
    let mut rows = Vec::new();
    for &(phi_kind, phi) in phis {
        let fixed = FixedPhi::new(phi.clone())?;
        let mode = SamplingMode::Predict(&fixed);
        let snaps = run_chains_map(&observed, hyper, &mode, &schedule, Kernel::Dense, |_, s| {
            Ok((
                theta_standard(&s.counts, hyper),
                theta_p_single(s, &observed, hyper, &mode)?,
            ))
        })?;
        for &s in s_values {
            for theta_kind in [Recovery::Standard, Recovery::CgsP] {
                let mut theta = Array2::zeros((observed.num_docs(), hyper.num_topics()));
                let mut count = 0.0;
                for chain in &snaps {
                    for (std_t, p_t) in chain.iter().take(s) {
                        theta += if theta_kind == Recovery::CgsP {
                            p_t
                        } else {
                            std_t
                        };
                        count += 1.0;
                    }
                }
                theta /= count;
                let ll = log_likelihood(&heldout.documents, &theta, phi)?;
                rows.push(GridRow {
                    phi: phi_kind,
                    theta: theta_kind,
                    s_averaged: s,
                    log_likelihood: ll,
                    perplexity: perplexity(ll, n),
                });
            }
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelScore {
    pub label: u32,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub true_positives: u64,
    pub false_positives: u64,
    pub false_negatives: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct F1Report {
    pub micro_f: f64,
    pub macro_f: f64,
    pub example_f: f64,
    pub per_label: Vec<LabelScore>,
}

fn f1(tp: f64, fp: f64, fn_: f64) -> (f64, f64, f64) {
    let p = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
    let r = if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 0.0 };
    let f = if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    };
    (p, r, f)
}

/// Micro-, macro- and example-based F1.
///
/// Labels that never occur in either the predictions or the gold sets are left out of the
/// macro average. A document with empty predicted and gold sets scores 1.
pub fn f1_metrics(
    predicted: &[Vec<u32>],
    gold: &[Vec<u32>],
    num_labels: usize,
) -> Result<F1Report> {
    if predicted.len() != gold.len() {
        return Err(Error::Argument(format!(
            "{} predictions for {} documents",
            predicted.len(),
            gold.len()
        )));
    }
    let mut tp = vec![0u64; num_labels];
    let mut fp = vec![0u64; num_labels];
    let mut fn_ = vec![0u64; num_labels];
    let mut example = 0.0;
    for (p, g) in predicted.iter().zip(gold) {
        let mut p = p.clone();
        let mut g = g.clone();
        p.sort_unstable();
        p.dedup();
        g.sort_unstable();
        g.dedup();
        if let Some(&bad) = p.iter().chain(&g).find(|&&l| l as usize >= num_labels) {
            return Err(Error::Argument(format!(
                "label {bad} outside a space of {num_labels}"
            )));
        }
        let hits = p.iter().filter(|l| g.binary_search(l).is_ok()).count();
        for &l in &p {
            if g.binary_search(&l).is_ok() {
                tp[l as usize] += 1;
            } else {
                fp[l as usize] += 1;
            }
        }
        for &l in &g {
            if p.binary_search(&l).is_err() {
                fn_[l as usize] += 1;
            }
        }
        example += if p.is_empty() && g.is_empty() {
            1.0
        } else {
            2.0 * hits as f64 / (p.len() + g.len()) as f64
        };
    }
    let per_label: Vec<LabelScore> = (0..num_labels)
        .map(|l| {
            let (precision, recall, f) = f1(tp[l] as f64, fp[l] as f64, fn_[l] as f64);
            LabelScore {
                label: l as u32,
                precision,
                recall,
                f1: f,
                true_positives: tp[l],
                false_positives: fp[l],
                false_negatives: fn_[l],
            }
        })
        .collect();
    let (stp, sfp, sfn) = (
        tp.iter().sum::<u64>() as f64,
        fp.iter().sum::<u64>() as f64,
        fn_.iter().sum::<u64>() as f64,
    );
    let micro_f = f1(stp, sfp, sfn).2;
    let active: Vec<&LabelScore> = per_label
        .iter()
        .filter(|s| s.true_positives + s.false_positives + s.false_negatives > 0)
        .collect();
    let macro_f = if active.is_empty() {
        0.0
    } else {
        active.iter().map(|s| s.f1).sum::<f64>() / active.len() as f64
    };
    let example_f = if gold.is_empty() {
        0.0
    } else {
        example / gold.len() as f64
    };
    Ok(F1Report {
        micro_f,
        macro_f,
        example_f,
        per_label,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Association {
    pub word: u32,
    pub score: f64,
    /// 1-based position in the ranking.
    pub rank: usize,
}

/// `p(w2 | cue) = sum_k phi[k, w2] phi[k, cue] / sum_k phi[k, cue]` for every candidate,
/// ranked by descending score with ties broken by word id.
pub fn word_association(
    phi: &Array2<f64>,
    cue: u32,
    candidates: &[u32],
) -> Result<Vec<Association>> {
    let v = phi.ncols();
    if cue as usize >= v || candidates.iter().any(|&w| w as usize >= v) {
        return Err(Error::Argument("word id outside phi".into()));
    }
    let cue_col = phi.column(cue as usize);
    let mass: f64 = cue_col.sum();
    if !(mass > 0.0) {
        return Err(Error::Domain(format!(
            "cue {cue} has zero probability under every topic"
        )));
    }
    let mut out: Vec<Association> = candidates
        .iter()
        .map(|&w| Association {
            word: w,
            score: phi.column(w as usize).dot(&cue_col) / mass,
            rank: 0,
        })
        .collect();
    out.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.word.cmp(&b.word)));
    for (i, a) in out.iter_mut().enumerate() {
        a.rank = i + 1;
    }
    Ok(out)
}

/// Rank of each target among all vocabulary words other than the cue.
pub fn association_ranks(phi: &Array2<f64>, cue: u32, targets: &[u32]) -> Result<Vec<usize>> {
    let candidates: Vec<u32> = (0..phi.ncols() as u32).filter(|&w| w != cue).collect();
    let ranked = word_association(phi, cue, &candidates)?;
    let mut rank_of = vec![0usize; phi.ncols()];
    for a in &ranked {
        rank_of[a.word as usize] = a.rank;
    }
    targets
        .iter()
        .map(|&t| {
            if t == cue || t as usize >= phi.ncols() {
                Err(Error::Argument(format!(
                    "target {t} is the cue or outside the vocabulary"
                )))
            } else {
                Ok(rank_of[t as usize])
            }
        })
        .collect()
}

/// `rank under phi - rank under phi_p` for every target; positive values mean phi_p ranks
/// the target higher.
pub fn rank_differences(
    phi: &Array2<f64>,
    phi_p: &Array2<f64>,
    cue: u32,
    targets: &[u32],
) -> Result<Vec<i64>> {
    let a = association_ranks(phi, cue, targets)?;
    let b = association_ranks(phi_p, cue, targets)?;
    Ok(a.iter()
        .zip(&b)
        .map(|(&x, &y)| x as i64 - y as i64)
        .collect())
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Cgs,
    CgsP,
    Cvb0,
}

impl std::str::FromStr for Algorithm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cgs" => Ok(Algorithm::Cgs),
            "cgs_p" | "cgsp" => Ok(Algorithm::CgsP),
            "cvb0" => Ok(Algorithm::Cvb0),
            _ => Err(Error::Argument(format!("unknown algorithm {s}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub iteration: usize,
    pub log_likelihood: f64,
    /// Cumulative inference time, excluding estimator passes.
    pub sweep_secs: f64,
    /// Time of this iteration's estimator pass.
    pub estimator_secs: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceOptions {
    pub theta_source: TrainThetaSource,
    pub kernel: Kernel,
    /// Record every `every` iterations (and always the last).
    pub every: usize,
}

impl Default for TraceOptions {
    fn default() -> Self {
        TraceOptions {
            theta_source: TrainThetaSource::PhiStandard,
            kernel: Kernel::Dense,
            every: 1,
        }
    }
}

/// Training log-likelihood after each sweep under the algorithm's own estimators. The CGS
/// and CGS_p traces for one seed follow the same chain.
pub fn convergence_trace(
    corpus: &Corpus,
    hyper: &Hyperparams,
    algorithm: Algorithm,
    iters: usize,
    seed: u64,
    options: &TraceOptions,
) -> Result<Vec<TracePoint>> {
    let every = options.every.max(1);
    let mut out = Vec::new();
    let mode = SamplingMode::Train;
    let mut sweep_secs = 0.0;
    match algorithm {
        Algorithm::Cvb0 => {
            let mut state = VariationalState::init(
                corpus,
                hyper,
                &mode,
                Cvb0Init::Seed {
                    seed,
                    shuffle_docs: false,
                },
            )?;
            for it in 1..=iters {
                let t0 = Instant::now();
                cvb0_sweep(&mut state, corpus, hyper, &mode)?;
                sweep_secs += t0.elapsed().as_secs_f64();
                if it % every == 0 || it == iters {
                    let t1 = Instant::now();
                    let est = cvb0_estimates(&state, hyper);
                    let estimator_secs = t1.elapsed().as_secs_f64();
                    out.push(TracePoint {
                        iteration: it,
                        log_likelihood: log_likelihood(&corpus.documents, &est.theta, &est.phi)?,
                        sweep_secs,
                        estimator_secs,
                    });
                }
            }
        }
        Algorithm::Cgs | Algorithm::CgsP => {
            let s = chain_seed(seed, 0);
            let mut rng = ChainRng::seed_from_u64(s);
            let mut state = init_state(corpus, hyper, &mode, &mut rng, s)?;
            let mut sparse =
                (options.kernel == Kernel::Sparse).then(|| SparseSweeper::new(&state, hyper));
            for it in 1..=iters {
                let t0 = Instant::now();
                match sparse.as_mut() {
                    Some(sp) => sp.sweep(&mut state, corpus, hyper, &mut rng)?,
                    None => sweep(&mut state, corpus, hyper, &mode, &mut rng)?,
                }
                sweep_secs += t0.elapsed().as_secs_f64();
                if it % every == 0 || it == iters {
                    let t1 = Instant::now();
                    let (theta, phi) =
                        train_estimates(&state, corpus, hyper, algorithm, options.theta_source)?;
                    let estimator_secs = t1.elapsed().as_secs_f64();
                    out.push(TracePoint {
                        iteration: it,
                        log_likelihood: log_likelihood(&corpus.documents, &theta, &phi)?,
                        sweep_secs,
                        estimator_secs,
                    });
                }
            }
        }
    }
    Ok(out)
}

/// The (theta, phi) pair an algorithm reports for one training snapshot.
pub fn train_estimates(
    state: &SamplerState,
    corpus: &Corpus,
    hyper: &Hyperparams,
    algorithm: Algorithm,
    theta_source: TrainThetaSource,
) -> Result<(Array2<f64>, Array2<f64>)> {
    match algorithm {
        Algorithm::Cgs => Ok((
            theta_standard(&state.counts, hyper),
            phi_standard(&state.counts, hyper),
        )),
        Algorithm::CgsP => {
            let phi = phi_p(state, corpus, hyper, &SamplingMode::Train)?;
            let theta = match theta_source {
                TrainThetaSource::PhiP => {
                    let fixed = FixedPhi::new(phi.clone())?;
                    theta_p_single(state, corpus, hyper, &SamplingMode::Predict(&fixed))?
                }
                other => theta_p_train(state, corpus, hyper, other)?,
            };
            Ok((theta, phi))
        }
        Algorithm::Cvb0 => Err(Error::Argument(
            "cvb0 estimates come from a variational state".into(),
        )),
    }
}
