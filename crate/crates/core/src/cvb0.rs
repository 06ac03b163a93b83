//! Zero-order collapsed variational Bayes.

use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_distr::{Distribution, Exp1};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::estimators::{phi_from_counts, theta_from_counts};
use crate::model::checkpoint::{self, Block};
use crate::model::{
    normalize_rows, EstimateMeta, Hyperparams, ParamEstimate, Recovery, SoftCounts,
};
use crate::sampler::{ChainRng, SamplingMode};

/// Sweeps between exact recomputations of the soft counts from gamma.
pub const RESYNC_EVERY: u64 = 50;

/// Per-token variational distributions and their running sums.
#[derive(Debug, Clone, PartialEq)]
pub struct VariationalState {
    /// One row per token, tokens of document `d` at rows `offsets[d]..offsets[d + 1]`.
    pub gamma: Array2<f64>,
    pub offsets: Vec<usize>,
    pub soft: SoftCounts,
    /// Order in which documents are visited by every sweep.
    pub doc_order: Vec<usize>,
    pub iteration: u64,
}

#[derive(Debug, Clone)]
pub enum Cvb0Init {
    /// Dirichlet(1) draws per token; optionally visit documents in a seeded random order.
    Seed { seed: u64, shuffle_docs: bool },
    /// Explicit gamma, one row per token in corpus order.
    Explicit(Array2<f64>),
}

fn offsets(corpus: &Corpus) -> Vec<usize> {
    let mut out = Vec::with_capacity(corpus.num_docs() + 1);
    out.push(0);
    for doc in &corpus.documents {
        out.push(out.last().unwrap() + doc.len());
    }
    out
}

/// Exact sums of gamma.
pub fn recompute_soft_counts(
    gamma: &Array2<f64>,
    offsets: &[usize],
    corpus: &Corpus,
) -> SoftCounts {
    let k = gamma.ncols();
    let mut soft = SoftCounts::zeros(corpus.num_docs(), k, corpus.vocab_size());
    for (d, doc) in corpus.documents.iter().enumerate() {
        for (j, &v) in doc.tokens.iter().enumerate() {
            let g = gamma.row(offsets[d] + j);
            for t in 0..k {
                soft.m_dk[[d, t]] += g[t];
                soft.m_kv[[t, v as usize]] += g[t];
                soft.m_k[t] += g[t];
            }
        }
    }
    soft
}

impl VariationalState {
    pub fn init(
        corpus: &Corpus,
        hyper: &Hyperparams,
        mode: &SamplingMode<'_>,
        init: Cvb0Init,
    ) -> Result<Self> {
        mode.check(corpus, hyper)?;
        let k = hyper.num_topics();
        let offsets = offsets(corpus);
        let n = *offsets.last().unwrap();
        let mut doc_order: Vec<usize> = (0..corpus.num_docs()).collect();
        let gamma = match init {
            Cvb0Init::Seed { seed, shuffle_docs } => {
                let mut rng = ChainRng::seed_from_u64(seed);
                let mut gamma = Array2::<f64>::zeros((n, k));
                for (d, doc) in corpus.documents.iter().enumerate() {
                    if mode.is_labeled() && doc.labels.is_empty() && !doc.is_empty() {
                        return Err(Error::Constraint(format!("document {d} has no labels")));
                    }
                    for j in 0..doc.len() {
                        let mut row = gamma.row_mut(offsets[d] + j);
                        if mode.is_labeled() {
                            for &l in &doc.labels {
                                row[l as usize] = Exp1.sample(&mut rng);
                            }
                        } else {
                            row.iter_mut().for_each(|x| *x = Exp1.sample(&mut rng));
                        }
                        let s = row.sum();
                        row.mapv_inplace(|x| x / s);
                    }
                }
                if shuffle_docs {
                    doc_order.shuffle(&mut rng);
                }
                gamma
            }
            Cvb0Init::Explicit(gamma) => {
                if gamma.dim() != (n, k) {
                    return Err(Error::Argument(format!(
                        "explicit gamma is {:?}, expected ({n}, {k})",
                        gamma.dim()
                    )));
                }
                crate::model::check_row_stochastic(gamma.view(), "gamma")?;
                gamma
            }
        };
        let soft = recompute_soft_counts(&gamma, &offsets, corpus);
        Ok(VariationalState {
            gamma,
            offsets,
            soft,
            doc_order,
            iteration: 0,
        })
    }

    pub fn num_topics(&self) -> usize {
        self.gamma.ncols()
    }

    /// Largest absolute difference between the running soft counts and exact sums of gamma.
    pub fn drift(&self, corpus: &Corpus) -> f64 {
        let exact = recompute_soft_counts(&self.gamma, &self.offsets, corpus);
        let mut worst: f64 = 0.0;
        for (a, b) in exact.m_dk.iter().zip(self.soft.m_dk.iter()) {
            worst = worst.max((a - b).abs());
        }
        for (a, b) in exact.m_kv.iter().zip(self.soft.m_kv.iter()) {
            worst = worst.max((a - b).abs());
        }
        for (a, b) in exact.m_k.iter().zip(&self.soft.m_k) {
            worst = worst.max((a - b).abs());
        }
        worst
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let lengths: Vec<u32> = self
            .offsets
            .windows(2)
            .map(|w| (w[1] - w[0]) as u32)
            .collect();
        let order: Vec<u32> = self.doc_order.iter().map(|&d| d as u32).collect();
        let row = |v: Vec<u32>| {
            let n = v.len();
            Array2::from_shape_vec((1, n), v).expect("row")
        };
        checkpoint::write(
            path,
            "variational",
            serde_json::json!({ "iteration": self.iteration }),
            &[
                ("doc_lengths", Block::U32(row(lengths))),
                ("doc_order", Block::U32(row(order))),
                ("gamma", Block::F64(self.gamma.clone())),
                ("m_dk", Block::F64(self.soft.m_dk.clone())),
                ("m_kv", Block::F64(self.soft.m_kv.clone())),
            ],
        )
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut c = checkpoint::read(path)?;
        c.expect_kind("variational")?;
        let iteration = c.extra["iteration"]
            .as_u64()
            .ok_or_else(|| Error::Checkpoint("missing iteration".into()))?;
        let lengths = c.take("doc_lengths")?.into_u32("doc_lengths")?;
        let order = c.take("doc_order")?.into_u32("doc_order")?;
        let gamma = c.take("gamma")?.into_f64("gamma")?;
        let m_dk = c.take("m_dk")?.into_f64("m_dk")?;
        let m_kv = c.take("m_kv")?.into_f64("m_kv")?;
        let mut offsets = vec![0usize];
        for &l in lengths.iter() {
            offsets.push(offsets.last().unwrap() + l as usize);
        }
        if *offsets.last().unwrap() != gamma.nrows()
            || m_dk.ncols() != gamma.ncols()
            || m_kv.nrows() != gamma.ncols()
        {
            return Err(Error::Checkpoint(
                "inconsistent variational state shapes".into(),
            ));
        }
        let m_k = m_kv.rows().into_iter().map(|r| r.sum()).collect();
        Ok(VariationalState {
            gamma,
            offsets,
            soft: SoftCounts { m_dk, m_kv, m_k },
            doc_order: order.iter().map(|&d| d as usize).collect(),
            iteration,
        })
    }
}

/// One pass over all tokens, updating each gamma in turn against soft counts that exclude it.
pub fn cvb0_sweep(
    state: &mut VariationalState,
    corpus: &Corpus,
    hyper: &Hyperparams,
    mode: &SamplingMode<'_>,
) -> Result<()> {
    let k = state.num_topics();
    let alpha = hyper.alpha();
    let beta = hyper.beta();
    let beta_sum = hyper.beta_sum();
    let mut g = vec![0.0; k];
    let VariationalState {
        gamma,
        offsets,
        soft,
        doc_order,
        ..
    } = state;
    for &d in doc_order.iter() {
        let doc = &corpus.documents[d];
        if mode.is_labeled() && doc.labels.is_empty() && !doc.is_empty() {
            return Err(Error::Constraint(format!("document {d} has no labels")));
        }
        for (j, &v) in doc.tokens.iter().enumerate() {
            let v = v as usize;
            let mut row = gamma.row_mut(offsets[d] + j);
            for t in 0..k {
                soft.m_dk[[d, t]] -= row[t];
                soft.m_kv[[t, v]] -= row[t];
                soft.m_k[t] -= row[t];
            }
            // Removal can leave tiny negative residues from rounding.
            let dk = |t: usize| soft.m_dk[[d, t]].max(0.0) + alpha[t];
            match mode {
                SamplingMode::Train => {
                    for (t, x) in g.iter_mut().enumerate() {
                        *x = (soft.m_kv[[t, v]].max(0.0) + beta[v])
                            / (soft.m_k[t].max(0.0) + beta_sum)
                            * dk(t);
                    }
                }
                SamplingMode::LabeledTrain => {
                    g.fill(0.0);
                    for &t in &doc.labels {
                        let t = t as usize;
                        g[t] = (soft.m_kv[[t, v]].max(0.0) + beta[v])
                            / (soft.m_k[t].max(0.0) + beta_sum)
                            * dk(t);
                    }
                }
                SamplingMode::Predict(phi) => {
                    let col = phi.column(v);
                    for (t, x) in g.iter_mut().enumerate() {
                        *x = col[t] * dk(t);
                    }
                }
            }
            let total: f64 = g.iter().sum();
            if !(total > 0.0 && total.is_finite()) {
                return Err(Error::Numeric(format!(
                    "variational update for document {d}, word {v} has total mass {total}"
                )));
            }
            for t in 0..k {
                row[t] = g[t] / total;
                soft.m_dk[[d, t]] += row[t];
                soft.m_kv[[t, v]] += row[t];
                soft.m_k[t] += row[t];
            }
        }
    }
    state.iteration += 1;
    if state.iteration.is_multiple_of(RESYNC_EVERY) {
        state.soft = recompute_soft_counts(&state.gamma, &state.offsets, corpus);
    }
    Ok(())
}

pub fn cvb0_run(
    corpus: &Corpus,
    hyper: &Hyperparams,
    mode: &SamplingMode<'_>,
    iters: usize,
    init: Cvb0Init,
) -> Result<VariationalState> {
    if iters < 1 {
        return Err(Error::Argument("cvb0 needs at least one iteration".into()));
    }
    let mut state = VariationalState::init(corpus, hyper, mode, init)?;
    for _ in 0..iters {
        cvb0_sweep(&mut state, corpus, hyper, mode)?;
    }
    Ok(state)
}

/// Standard estimator formulas applied to the soft counts.
pub fn cvb0_estimates(state: &VariationalState, hyper: &Hyperparams) -> ParamEstimate {
    let n_d = state.offsets.windows(2).map(|w| (w[1] - w[0]) as f64);
    let mut theta = theta_from_counts(&state.soft.m_dk, n_d, hyper);
    normalize_rows(&mut theta);
    let mut phi = phi_from_counts(&state.soft.m_kv, &state.soft.m_k, hyper);
    normalize_rows(&mut phi);
    ParamEstimate {
        theta,
        phi,
        meta: EstimateMeta {
            theta: Recovery::Cvb0,
            phi: Recovery::Cvb0,
            chains: 1,
            samples_per_chain: 1,
        },
    }
}
