//! Prior-LDA: label-anchored topics, frequency-based priors at prediction time, and a
//! label-count regressor to cut ranked label lists.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Document};
use crate::error::{Error, Result};
use crate::estimators::{
    average_estimates, phi_p, phi_standard, theta_p_single, theta_standard, TopicAnchor,
};
use crate::model::{Hyperparams, Recovery};
use crate::sampler::{run_chain, run_chains_map, ChainSchedule, FixedPhi, Kernel, SamplingMode};

/// Slack subtracted before rounding a predicted label count up, so that values a rounding
/// error above an integer do not gain a label.
pub const CEIL_SLACK: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Train,
    Predict,
}

/// Training: `alpha_k = 50 / K`. Prediction: `alpha_k = 50 f_k / sum(f) + 30 / K`, or just the
/// `30 / K` floor when every frequency is zero.
pub fn build_priors(label_freqs: &[f64], num_labels: usize, phase: Phase) -> Result<Vec<f64>> {
    if num_labels == 0 {
        return Err(Error::Argument("at least one label is required".into()));
    }
    let k = num_labels as f64;
    match phase {
        Phase::Train => Ok(vec![50.0 / k; num_labels]),
        Phase::Predict => {
            if label_freqs.len() != num_labels
                || label_freqs.iter().any(|&f| !(f >= 0.0) || !f.is_finite())
            {
                return Err(Error::Argument(
                    "label frequencies must be K finite nonnegative values".into(),
                ));
            }
            let total: f64 = label_freqs.iter().sum();
            Ok(label_freqs
                .iter()
                .map(|&f| if total > 0.0 { 50.0 * f / total } else { 0.0 } + 30.0 / k)
                .collect())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// One chain, one sample.
    OneByOne,
    /// Five chains, thirty samples each.
    FiveByThirty,
}

impl Preset {
    pub fn schedule(self, seed: u64) -> ChainSchedule {
        let (chains, samples) = match self {
            Preset::OneByOne => (1, 1),
            Preset::FiveByThirty => (5, 30),
        };
        ChainSchedule {
            burn_in: 50,
            lag: 5,
            samples,
            chains,
            total_train_iters: 200,
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorLdaConfig {
    pub beta: f64,
    pub train_iters: usize,
    pub phi: Recovery,
    pub theta: Recovery,
    pub predict: ChainSchedule,
    /// Ridge penalty of the label-count regressor.
    pub ridge: f64,
    /// Labels attached to fewer training documents are dropped; 0 keeps everything.
    pub min_label_docs: u32,
    pub seed: u64,
}

impl PriorLdaConfig {
    pub fn preset(preset: Preset, theta: Recovery, seed: u64) -> Self {
        PriorLdaConfig {
            beta: 0.1,
            train_iters: 200,
            phi: Recovery::Standard,
            theta,
            predict: preset.schedule(seed),
            ridge: 1.0,
            min_label_docs: 0,
            seed,
        }
    }
}

/// Linear regression from normalized term frequencies to label count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CardinalityPredictor {
    pub weights: Vec<f64>,
    pub intercept: f64,
    /// Mean label count of the training documents, used for empty documents.
    pub fallback: f64,
    pub num_labels: usize,
}

fn features(doc: &Document) -> Vec<(usize, f64)> {
    let mut tokens: Vec<u32> = doc.tokens.clone();
    tokens.sort_unstable();
    let n = tokens.len() as f64;
    let mut out: Vec<(usize, f64)> = Vec::new();
    for w in tokens {
        match out.last_mut() {
            Some((v, c)) if *v == w as usize => *c += 1.0,
            _ => out.push((w as usize, 1.0)),
        }
    }
    out.iter_mut().for_each(|(_, c)| *c /= n);
    out
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solves the symmetric positive semi-definite system `apply(x) = b` by conjugate gradients,
/// stopping when the residual norm falls to `tol * |b|`.
fn conjugate_gradient<F: Fn(&[f64]) -> Vec<f64>>(
    apply: F,
    b: &[f64],
    tol: f64,
    max_iter: usize,
) -> Vec<f64> {
    let mut x = vec![0.0; b.len()];
    let mut r = b.to_vec();
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    let stop = tol * tol * rr.max(f64::MIN_POSITIVE);
    for _ in 0..max_iter {
        if rr <= stop {
            break;
        }
        let ap = apply(&p);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            break;
        }
        let a = rr / pap;
        x.iter_mut().zip(&p).for_each(|(xi, pi)| *xi += a * pi);
        r.iter_mut().zip(&ap).for_each(|(ri, api)| *ri -= a * api);
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        p.iter_mut()
            .zip(&r)
            .for_each(|(pi, ri)| *pi = ri + beta * *pi);
        rr = rr_new;
    }
    x
}

/// Ridge regression of label count on normalized term frequencies with an unpenalized
/// intercept, solved by conjugate gradients to a relative residual of 1e-8. Documents
/// without labels are ignored.
pub fn train_cardinality(corpus: &Corpus, ridge: f64) -> Result<CardinalityPredictor> {
    if !(ridge >= 0.0) || !ridge.is_finite() {
        return Err(Error::Argument(format!(
            "ridge penalty {ridge} must be finite and nonnegative"
        )));
    }
    let rows: Vec<(Vec<(usize, f64)>, f64)> = corpus
        .documents
        .iter()
        .filter(|d| !d.labels.is_empty())
        .map(|d| (features(d), d.labels.len() as f64))
        .collect();
    if rows.is_empty() {
        return Err(Error::Argument(
            "no labeled documents to train the label-count model".into(),
        ));
    }
    let v = corpus.vocab_size();
    let n = rows.len() as f64;
    let y_mean = rows.iter().map(|r| r.1).sum::<f64>() / n;
    let mut x_mean = vec![0.0; v];
    for (x, _) in &rows {
        for &(j, val) in x {
            x_mean[j] += val / n;
        }
    }
    // centered design Xc = X - 1 x_mean^T, applied without materializing it
    let xc_times = |w: &[f64]| -> Vec<f64> {
        let shift = dot(&x_mean, w);
        rows.iter()
            .map(|(x, _)| x.iter().map(|&(j, val)| val * w[j]).sum::<f64>() - shift)
            .collect()
    };
    let xct_times = |u: &[f64]| -> Vec<f64> {
        let mut out = vec![0.0; v];
        let total: f64 = u.iter().sum();
        for ((x, _), &ui) in rows.iter().zip(u) {
            for &(j, val) in x {
                out[j] += val * ui;
            }
        }
        out.iter_mut()
            .zip(&x_mean)
            .for_each(|(o, m)| *o -= m * total);
        out
    };
    let yc: Vec<f64> = rows.iter().map(|r| r.1 - y_mean).collect();
    let rhs = xct_times(&yc);
    let weights = conjugate_gradient(
        |w| {
            let mut out = xct_times(&xc_times(w));
            out.iter_mut().zip(w).for_each(|(o, wi)| *o += ridge * wi);
            out
        },
        &rhs,
        1e-8,
        4 * v + 100,
    );
    let intercept = y_mean - dot(&x_mean, &weights);
    Ok(CardinalityPredictor {
        weights,
        intercept,
        fallback: y_mean,
        num_labels: corpus.num_labels().max(1),
    })
}

impl CardinalityPredictor {
    /// Unclamped regression output; the training mean for an empty document.
    pub fn predict_raw(&self, doc: &Document) -> f64 {
        if doc.is_empty() {
            return self.fallback;
        }
        self.intercept
            + features(doc)
                .iter()
                .filter(|(j, _)| *j < self.weights.len())
                .map(|&(j, val)| self.weights[j] * val)
                .sum::<f64>()
    }

    /// Number of labels to keep: the raw prediction rounded up and clamped to `[1, K]`.
    pub fn predict(&self, doc: &Document) -> usize {
        let raw = self.predict_raw(doc);
        let c = if raw.is_finite() {
            (raw - CEIL_SLACK).ceil()
        } else {
            self.fallback.ceil()
        };
        (c.max(1.0) as usize).min(self.num_labels)
    }
}

/// Labels ranked by descending score, ties by ascending label id.
pub fn rank_labels(scores: &[f64]) -> Vec<u32> {
    let mut idx: Vec<u32> = (0..scores.len() as u32).collect();
    idx.sort_by(|&a, &b| {
        scores[b as usize]
            .total_cmp(&scores[a as usize])
            .then(a.cmp(&b))
    });
    idx
}

/// The `count` top-ranked labels, in ascending id order.
pub fn select_labels(scores: &[f64], count: usize) -> Vec<u32> {
    let mut top: Vec<u32> = rank_labels(scores).into_iter().take(count).collect();
    top.sort_unstable();
    top
}

#[derive(Debug, Clone)]
pub struct PriorLdaModel {
    /// Label-word distributions, K x V.
    pub phi: Array2<f64>,
    pub label_frequencies: Vec<f64>,
    pub label_space: Vec<String>,
    pub predictor: CardinalityPredictor,
}

/// Drops training documents without labels, logging how many were removed.
fn labeled_subset(corpus: &Corpus) -> Corpus {
    let before = corpus.num_docs();
    let mut out = corpus.clone();
    out.documents.retain(|d| !d.labels.is_empty());
    let dropped = before - out.num_docs();
    if dropped > 0 {
        log::warn!(
            "{dropped} training documents have no labels in the label space and were excluded"
        );
    }
    out
}

/// Trains label-anchored topics on `corpus` (labels restricted per document) and the
/// label-count regressor.
pub fn train(corpus: &Corpus, config: &PriorLdaConfig) -> Result<PriorLdaModel> {
    let mut corpus = corpus.clone();
    if !corpus.is_labeled() {
        return Err(Error::Argument(
            "Prior-LDA training needs a labeled corpus".into(),
        ));
    }
    if config.min_label_docs > 0 {
        corpus.filter_rare_labels(config.min_label_docs);
    }
    let corpus = labeled_subset(&corpus);
    if corpus.num_docs() == 0 {
        return Err(Error::EmptyCorpus);
    }
    let k = corpus.num_labels();
    let v = corpus.vocab_size();
    let hyper = Hyperparams::new(build_priors(&[], k, Phase::Train)?, vec![config.beta; v])?;
    let schedule = ChainSchedule::single(config.train_iters, config.seed);
    let mode = SamplingMode::LabeledTrain;
    let state = run_chain(&corpus, &hyper, &mode, &schedule, 0)?
        .pop()
        .expect("one snapshot");
    let phi = match config.phi {
        Recovery::Standard => phi_standard(&state.counts, &hyper),
        Recovery::CgsP => phi_p(&state, &corpus, &hyper, &mode)?,
        Recovery::Cvb0 => {
            return Err(Error::Argument(
                "Prior-LDA phi is recovered by sampling".into(),
            ))
        }
    };
    let label_frequencies = corpus
        .label_frequencies
        .clone()
        .unwrap_or_default()
        .iter()
        .map(|&f| f as f64)
        .collect();
    Ok(PriorLdaModel {
        phi,
        label_frequencies,
        label_space: corpus.label_space.clone().unwrap_or_default(),
        predictor: train_cardinality(&corpus, config.ridge)?,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Predictions {
    /// D x K label scores (the averaged theta).
    #[serde(skip)]
    pub theta: Array2<f64>,
    pub ranked: Vec<Vec<u32>>,
    pub labels: Vec<Vec<u32>>,
}

/// Runs fixed-phi chains on `test` with the prediction priors, averages theta over every
/// retained sample of every chain, and cuts each ranked list at the predicted label count.
pub fn predict_labels(
    test: &Corpus,
    model: &PriorLdaModel,
    config: &PriorLdaConfig,
) -> Result<Predictions> {
    let k = model.phi.nrows();
    let hyper = Hyperparams::new(
        build_priors(&model.label_frequencies, k, Phase::Predict)?,
        vec![config.beta; model.phi.ncols()],
    )?;
    let fixed = FixedPhi::new(model.phi.clone())?;
    let mode = SamplingMode::Predict(&fixed);
    let mut unlabeled = test.clone();
    unlabeled
        .documents
        .iter_mut()
        .for_each(|d| d.labels.clear());
    unlabeled.label_space = None;
    unlabeled.label_frequencies = None;
    let kind = config.theta;
    let per_sample = run_chains_map(
        &unlabeled,
        &hyper,
        &mode,
        &config.predict,
        Kernel::Dense,
        |_, s| match kind {
            Recovery::CgsP => theta_p_single(s, &unlabeled, &hyper, &mode),
            Recovery::Standard => Ok(theta_standard(&s.counts, &hyper)),
            Recovery::Cvb0 => Err(Error::Argument(
                "Prior-LDA theta is recovered by sampling".into(),
            )),
        },
    )?;
    let all: Vec<Array2<f64>> = per_sample.into_iter().flatten().collect();
    let theta = average_estimates(&all, TopicAnchor::FixedPhi)?;
    let mut ranked = Vec::with_capacity(test.num_docs());
    let mut labels = Vec::with_capacity(test.num_docs());
    for (d, doc) in test.documents.iter().enumerate() {
        let row = theta.row(d).to_vec();
        ranked.push(rank_labels(&row));
        labels.push(select_labels(&row, model.predictor.predict(doc)));
    }
    Ok(Predictions {
        theta,
        ranked,
        labels,
    })
}

/// Re-indexes `test` labels into `space` by name, dropping labels not in it.
pub fn align_labels(test: &Corpus, space: &[String]) -> Result<Corpus> {
    let mut out = test.clone();
    let old = test.label_space.clone().unwrap_or_default();
    let lists: Vec<Vec<u32>> = test
        .documents
        .iter()
        .map(|d| {
            d.labels
                .iter()
                .filter_map(|&l| {
                    space
                        .iter()
                        .position(|s| *s == old[l as usize])
                        .map(|p| p as u32)
                })
                .collect()
        })
        .collect();
    out.set_labels(space.to_vec(), lists)?;
    Ok(out)
}
