//! Brute-force reference computations for tiny instances.
//!
//! Everything here is written from the model definition directly and shares no transition
//! code with the sampler, so the two can be checked against each other.

use ndarray::Array2;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::corpus::{Corpus, Document};
use crate::error::{Error, Result};
use crate::estimators::soft_counts;
use crate::model::{Hyperparams, SamplerState};
use crate::sampler::SamplingMode;

/// Default limit on the number of enumerated assignments.
pub const DEFAULT_CAP: u64 = 1 << 22;

/// Exact posterior over every topic assignment of a small token sequence.
#[derive(Debug, Clone)]
pub struct EnumerablePosterior {
    pub num_topics: usize,
    /// Token count of each document covered, in order.
    pub doc_lengths: Vec<usize>,
    /// Log joint weight per assignment. Assignment `c` gives token `j` topic `(c / K^j) % K`.
    pub log_weights: Vec<f64>,
    pub probs: Vec<f64>,
}

fn ln_rising(x: f64, n: u32) -> f64 {
    (0..n).map(|i| (x + i as f64).ln()).sum()
}

fn check_cap(k: usize, n: usize, cap: u64) -> Result<usize> {
    let mut total: u64 = 1;
    for _ in 0..n {
        total = total.saturating_mul(k as u64);
        if total > cap {
            return Err(Error::Size(format!(
                "{k}^{n} assignments exceed the cap of {cap}"
            )));
        }
    }
    Ok(total as usize)
}

/// Iterates over all assignments in index order, handing each to `f` as a digit vector.
fn for_each_assignment<F: FnMut(usize, &[usize])>(k: usize, n: usize, total: usize, mut f: F) {
    let mut digits = vec![0usize; n];
    for c in 0..total {
        f(c, &digits);
        for d in digits.iter_mut() {
            *d += 1;
            if *d < k {
                break;
            }
            *d = 0;
        }
    }
}

impl EnumerablePosterior {
    fn from_log_weights(
        num_topics: usize,
        doc_lengths: Vec<usize>,
        log_weights: Vec<f64>,
    ) -> Result<Self> {
        let max = log_weights
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return Err(Error::Numeric("every assignment has zero weight".into()));
        }
        let mut probs: Vec<f64> = log_weights.iter().map(|w| (w - max).exp()).collect();
        let z: f64 = probs.iter().sum();
        probs.iter_mut().for_each(|p| *p /= z);
        Ok(EnumerablePosterior {
            num_topics,
            doc_lengths,
            log_weights,
            probs,
        })
    }

    pub fn num_tokens(&self) -> usize {
        self.doc_lengths.iter().sum()
    }

    pub fn assignment(&self, c: usize) -> Vec<usize> {
        let k = self.num_topics;
        let mut x = c;
        (0..self.num_tokens())
            .map(|_| {
                let t = x % k;
                x /= k;
                t
            })
            .collect()
    }

    /// Per-token marginal topic probabilities, N x K.
    pub fn marginals(&self) -> Array2<f64> {
        let (k, n) = (self.num_topics, self.num_tokens());
        let mut m = Array2::zeros((n, k));
        for_each_assignment(k, n, self.probs.len(), |c, z| {
            for (j, &t) in z.iter().enumerate() {
                m[[j, t]] += self.probs[c];
            }
        });
        m
    }
}

/// `p(z_d | w_d, phi, alpha)` for a single document with topics held at `phi`.
pub fn exact_posterior(
    doc: &Document,
    phi: &Array2<f64>,
    alpha: &[f64],
) -> Result<EnumerablePosterior> {
    exact_posterior_with_cap(doc, phi, alpha, DEFAULT_CAP)
}

pub fn exact_posterior_with_cap(
    doc: &Document,
    phi: &Array2<f64>,
    alpha: &[f64],
    cap: u64,
) -> Result<EnumerablePosterior> {
    let k = alpha.len();
    if phi.nrows() != k {
        return Err(Error::Argument("phi and alpha disagree on K".into()));
    }
    let n = doc.len();
    let total = check_cap(k, n, cap)?;
    let alpha_sum: f64 = alpha.iter().sum();
    let norm = ln_rising(alpha_sum, n as u32);
    let ln_phi: Vec<Vec<f64>> = doc
        .tokens
        .iter()
        .map(|&w| (0..k).map(|t| phi[[t, w as usize]].ln()).collect())
        .collect();
    let mut log_weights = vec![0.0; total];
    let mut n_k = vec![0u32; k];
    for_each_assignment(k, n, total, |c, z| {
        n_k.fill(0);
        let mut lw = 0.0;
        for (j, &t) in z.iter().enumerate() {
            lw += ln_phi[j][t];
            n_k[t] += 1;
        }
        for t in 0..k {
            lw += ln_rising(alpha[t], n_k[t]);
        }
        log_weights[c] = lw - norm;
    });
    EnumerablePosterior::from_log_weights(k, vec![n], log_weights)
}

/// `p(z | w, alpha, beta)` over every token of a small corpus with topics collapsed.
pub fn exact_posterior_collapsed(
    corpus: &Corpus,
    hyper: &Hyperparams,
) -> Result<EnumerablePosterior> {
    let k = hyper.num_topics();
    let n = corpus.total_tokens();
    let total = check_cap(k, n, DEFAULT_CAP)?;
    let words: Vec<usize> = corpus
        .documents
        .iter()
        .flat_map(|d| d.tokens.iter().map(|&w| w as usize))
        .collect();
    let docs: Vec<usize> = corpus
        .documents
        .iter()
        .enumerate()
        .flat_map(|(d, doc)| std::iter::repeat_n(d, doc.len()))
        .collect();
    let (alpha, beta) = (hyper.alpha(), hyper.beta());
    let v_size = corpus.vocab_size();
    let mut log_weights = vec![0.0; total];
    let mut n_dk = vec![0u32; corpus.num_docs() * k];
    let mut n_kv = vec![0u32; k * v_size];
    let mut n_k = vec![0u32; k];
    for_each_assignment(k, n, total, |c, z| {
        n_dk.fill(0);
        n_kv.fill(0);
        n_k.fill(0);
        for (j, &t) in z.iter().enumerate() {
            n_dk[docs[j] * k + t] += 1;
            n_kv[t * v_size + words[j]] += 1;
            n_k[t] += 1;
        }
        let mut lw = 0.0;
        for (d, doc) in corpus.documents.iter().enumerate() {
            for t in 0..k {
                lw += ln_rising(alpha[t], n_dk[d * k + t]);
            }
            lw -= ln_rising(hyper.alpha_sum(), doc.len() as u32);
        }
        for t in 0..k {
            for v in 0..v_size {
                lw += ln_rising(beta[v], n_kv[t * v_size + v]);
            }
            lw -= ln_rising(hyper.beta_sum(), n_k[t]);
        }
        log_weights[c] = lw;
    });
    EnumerablePosterior::from_log_weights(
        k,
        corpus.documents.iter().map(|d| d.len()).collect(),
        log_weights,
    )
}

fn single_doc(post: &EnumerablePosterior) -> Result<usize> {
    match post.doc_lengths.as_slice() {
        [n] => Ok(*n),
        _ => Err(Error::Argument(
            "expected a single-document posterior".into(),
        )),
    }
}

/// Marginalized estimator: `sum_z p(z) (n_dk(z) + alpha_k) / (N + sum(alpha))`.
pub fn theta_bar(post: &EnumerablePosterior, alpha: &[f64]) -> Result<Vec<f64>> {
    let n = single_doc(post)?;
    let k = post.num_topics;
    let denom = n as f64 + alpha.iter().sum::<f64>();
    let mut out = vec![0.0; k];
    let mut counts = vec![0usize; k];
    for_each_assignment(k, n, post.probs.len(), |c, z| {
        counts.fill(0);
        z.iter().for_each(|&t| counts[t] += 1);
        for t in 0..k {
            out[t] += post.probs[c] * (counts[t] as f64 + alpha[t]) / denom;
        }
    });
    Ok(out)
}

/// The same quantity through the per-token marginals (linearity of expectation).
pub fn theta_bar_from_marginals(post: &EnumerablePosterior, alpha: &[f64]) -> Result<Vec<f64>> {
    let n = single_doc(post)?;
    let m = post.marginals();
    let denom = n as f64 + alpha.iter().sum::<f64>();
    Ok((0..post.num_topics)
        .map(|t| (m.column(t).sum() + alpha[t]) / denom)
        .collect())
}

/// Normalized one-site conditional `p(z_j = k | z_-j, w, phi, alpha)` for a document with
/// topics held at `phi`, computed from the assignment vector.
pub fn fixed_phi_conditional(
    doc: &Document,
    z: &[usize],
    phi: &Array2<f64>,
    alpha: &[f64],
    j: usize,
) -> Vec<f64> {
    let k = alpha.len();
    let w = doc.tokens[j] as usize;
    let mut p: Vec<f64> = (0..k)
        .map(|t| {
            let others = z
                .iter()
                .enumerate()
                .filter(|&(i, &zi)| i != j && zi == t)
                .count();
            phi[[t, w]] * (others as f64 + alpha[t])
        })
        .collect();
    let s: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x /= s);
    p
}

/// Normalized one-site collapsed conditional for token `(d, j)` computed from scratch from
/// the assignments. `labels`, when given, restricts the support to that document's labels.
pub fn collapsed_conditional(
    corpus: &Corpus,
    z: &[Vec<u32>],
    hyper: &Hyperparams,
    d: usize,
    j: usize,
    labeled: bool,
) -> Vec<f64> {
    let k = hyper.num_topics();
    let w = corpus.documents[d].tokens[j];
    let (mut n_kv, mut n_k, mut n_dk) = (vec![0.0; k], vec![0.0; k], vec![0.0; k]);
    for (dd, doc) in corpus.documents.iter().enumerate() {
        for (jj, &ww) in doc.tokens.iter().enumerate() {
            if dd == d && jj == j {
                continue;
            }
            let t = z[dd][jj] as usize;
            n_k[t] += 1.0;
            if ww == w {
                n_kv[t] += 1.0;
            }
            if dd == d {
                n_dk[t] += 1.0;
            }
        }
    }
    let mut p: Vec<f64> = (0..k)
        .map(|t| {
            if labeled && !corpus.documents[d].labels.contains(&(t as u32)) {
                return 0.0;
            }
            (n_kv[t] + hyper.beta()[w as usize]) / (n_k[t] + hyper.beta_sum())
                * (n_dk[t] + hyper.alpha()[t])
        })
        .collect();
    let s: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x /= s);
    p
}

/// Number of one-site Gibbs draws per position in the finite-L estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InnerDraws {
    Finite(usize),
    /// The draws are replaced by their expectation, the transition probabilities.
    Infinite,
}

/// Draws `s` assignments from the exact posterior; for each, every position gets `l`
/// independent one-site Gibbs draws from that assignment, and the topic indicators are
/// averaged into a theta estimate.
pub fn theta_finite_l(
    post: &EnumerablePosterior,
    doc: &Document,
    phi: &Array2<f64>,
    alpha: &[f64],
    s: usize,
    l: InnerDraws,
    seed: u64,
) -> Result<Vec<f64>> {
    let n = single_doc(post)?;
    if n != doc.len() {
        return Err(Error::Argument(
            "posterior and document lengths differ".into(),
        ));
    }
    if s == 0 || l == InnerDraws::Finite(0) {
        return Err(Error::Argument("S and L must be positive".into()));
    }
    let k = post.num_topics;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pick = WeightedIndex::new(&post.probs).map_err(|e| Error::Numeric(e.to_string()))?;
    let mut acc = vec![0.0; k];
    for _ in 0..s {
        let z = post.assignment(pick.sample(&mut rng));
        for j in 0..n {
            let p = fixed_phi_conditional(doc, &z, phi, alpha, j);
            match l {
                InnerDraws::Infinite => acc.iter_mut().zip(&p).for_each(|(a, b)| *a += b),
                InnerDraws::Finite(l) => {
                    let step = WeightedIndex::new(&p).map_err(|e| Error::Numeric(e.to_string()))?;
                    for _ in 0..l {
                        acc[step.sample(&mut rng)] += 1.0 / l as f64;
                    }
                }
            }
        }
    }
    let denom = n as f64 + alpha.iter().sum::<f64>();
    Ok(acc
        .iter()
        .zip(alpha)
        .map(|(a, al)| (a / s as f64 + al) / denom)
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundCheck {
    pub lower: f64,
    pub middle: f64,
    pub upper: f64,
}

impl BoundCheck {
    pub fn holds(&self) -> bool {
        self.lower <= self.middle && self.middle <= self.upper
    }

    pub fn relative_width(&self) -> f64 {
        (self.upper - self.lower) / self.middle
    }
}

/// Bounds for every (topic, word) pair; `None` where the topic holds no tokens.
///
/// For each pair, compares the expectation of `(n_kv + beta_v) / (n_k + sum(beta))` over the
/// samples one random-scan Gibbs step away from `state` (uniform position, then the
/// collapsed conditional) against the same expectation with the denominator frozen at the
/// current `n_k`, scaled by the ratio factors `(n_k + sum(beta)) / (n_k + sum(beta) +- 1)`.
///
/// A factor is only applied in the direction `n_k` can actually move: if no adjacent sample
/// with positive probability raises (lowers) `n_k`, the lower (upper) factor is 1.
pub fn phi_p_bounds(
    state: &SamplerState,
    corpus: &Corpus,
    hyper: &Hyperparams,
) -> Result<Array2<Option<BoundCheck>>> {
    let k_size = hyper.num_topics();
    let v_size = corpus.vocab_size();
    let labeled = corpus.is_labeled() && k_size == corpus.num_labels();
    // counts rebuilt here from the assignments
    let mut n_kv = Array2::<f64>::zeros((k_size, v_size));
    let mut n_k = vec![0.0; k_size];
    for (doc, z) in corpus.documents.iter().zip(&state.z) {
        for (&w, &t) in doc.tokens.iter().zip(z) {
            n_kv[[t as usize, w as usize]] += 1.0;
            n_k[t as usize] += 1.0;
        }
    }
    let n = corpus.total_tokens() as f64;
    let (alpha, beta, bs) = (hyper.alpha(), hyper.beta(), hyper.beta_sum());
    // probability mass of moves that raise / lower n_k, overall and for word v
    let mut up = vec![0.0; k_size];
    let mut down = vec![0.0; k_size];
    let mut up_v = Array2::<f64>::zeros((k_size, v_size));
    let mut down_v = Array2::<f64>::zeros((k_size, v_size));
    let mut p = vec![0.0; k_size];
    for (doc, z) in corpus.documents.iter().zip(&state.z) {
        let mut n_dk = vec![0.0; k_size];
        z.iter().for_each(|&t| n_dk[t as usize] += 1.0);
        for (&w, &old) in doc.tokens.iter().zip(z) {
            let (w, old) = (w as usize, old as usize);
            for t in 0..k_size {
                let x = (t == old) as u8 as f64;
                p[t] = if labeled && doc.labels.binary_search(&(t as u32)).is_err() {
                    0.0
                } else {
                    (n_kv[[t, w]] - x + beta[w]) / (n_k[t] - x + bs) * (n_dk[t] - x + alpha[t])
                };
            }
            let total: f64 = p.iter().sum();
            if !(total > 0.0) {
                return Err(Error::Numeric(
                    "adjacent-sample conditional has no mass".into(),
                ));
            }
            for t in 0..k_size {
                if t == old || p[t] == 0.0 {
                    continue;
                }
                let weight = p[t] / total / n;
                up[t] += weight;
                up_v[[t, w]] += weight;
                down[old] += weight;
                down_v[[old, w]] += weight;
            }
        }
    }
    let mut out = Array2::from_elem((k_size, v_size), None);
    for k in 0..k_size {
        if n_k[k] == 0.0 {
            continue;
        }
        let stay = 1.0 - up[k] - down[k];
        let base = n_k[k] + bs;
        for v in 0..v_size {
            let num = n_kv[[k, v]] + beta[v];
            let up_num = up[k] * num + up_v[[k, v]];
            let down_num = down[k] * num - down_v[[k, v]];
            let middle = stay * num / base + up_num / (base + 1.0) + down_num / (base - 1.0);
            let fixed = (stay * num + up_num + down_num) / base;
            let lo = if up[k] > 0.0 {
                base / (base + 1.0)
            } else {
                1.0
            };
            let hi = if down[k] > 0.0 {
                base / (base - 1.0)
            } else {
                1.0
            };
            out[[k, v]] = Some(BoundCheck {
                lower: lo * fixed,
                middle,
                upper: hi * fixed,
            });
        }
    }
    Ok(out)
}

/// [`phi_p_bounds`] for a single (topic, word) pair.
pub fn phi_p_bound_check(
    state: &SamplerState,
    corpus: &Corpus,
    hyper: &Hyperparams,
    k: usize,
    v: usize,
) -> Result<BoundCheck> {
    if k >= hyper.num_topics() || v >= corpus.vocab_size() {
        return Err(Error::Argument(format!("pair ({k}, {v}) out of range")));
    }
    phi_p_bounds(state, corpus, hyper)?[[k, v]]
        .ok_or_else(|| Error::Domain(format!("topic {k} has no tokens")))
}

/// Same expectations as [`phi_p_bound_check`], enumerating every adjacent sample
/// explicitly and recomputing each conditional from scratch. Quadratic in the corpus size.
pub fn phi_p_bound_check_naive(
    state: &SamplerState,
    corpus: &Corpus,
    hyper: &Hyperparams,
    k: usize,
    v: usize,
) -> Result<BoundCheck> {
    let n_k = state
        .z
        .iter()
        .flatten()
        .filter(|&&t| t as usize == k)
        .count() as f64;
    if n_k == 0.0 {
        return Err(Error::Domain(format!("topic {k} has no tokens")));
    }
    let n_kv = corpus
        .documents
        .iter()
        .zip(&state.z)
        .flat_map(|(d, z)| d.tokens.iter().zip(z))
        .filter(|&(&w, &t)| w as usize == v && t as usize == k)
        .count() as f64;
    let bs = hyper.beta_sum();
    let beta_v = hyper.beta()[v];
    let n = corpus.total_tokens() as f64;
    let labeled = corpus.is_labeled() && hyper.num_topics() == corpus.num_labels();
    let (mut middle, mut fixed) = (0.0, 0.0);
    let (mut can_rise, mut can_fall) = (false, false);
    for (d, doc) in corpus.documents.iter().enumerate() {
        for (j, &w) in doc.tokens.iter().enumerate() {
            let p = collapsed_conditional(corpus, &state.z, hyper, d, j, labeled);
            let old = state.z[d][j] as usize;
            for (t, &pt) in p.iter().enumerate() {
                if pt == 0.0 {
                    continue;
                }
                let dk = (t == k) as i32 - (old == k) as i32;
                let kv = if w as usize == v { dk as f64 } else { 0.0 };
                middle += pt / n * (n_kv + kv + beta_v) / (n_k + dk as f64 + bs);
                fixed += pt / n * (n_kv + kv + beta_v) / (n_k + bs);
                can_rise |= dk > 0;
                can_fall |= dk < 0;
            }
        }
    }
    let base = n_k + bs;
    Ok(BoundCheck {
        lower: if can_rise { base / (base + 1.0) } else { 1.0 } * fixed,
        middle,
        upper: if can_fall { base / (base - 1.0) } else { 1.0 } * fixed,
    })
}

/// Tally of bound checks over one or more states.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct BoundSummary {
    pub states: usize,
    pub pairs: usize,
    pub violations: usize,
    pub max_relative_width: f64,
}

impl BoundSummary {
    pub fn add(&mut self, bounds: &Array2<Option<BoundCheck>>) {
        self.states += 1;
        for b in bounds.iter().flatten() {
            self.pairs += 1;
            self.violations += !b.holds() as usize;
            self.max_relative_width = self.max_relative_width.max(b.relative_width());
        }
    }
}

/// Runs [`phi_p_bounds`] on every assignment of a small corpus. In labeled mode only
/// assignments that respect the document labels are visited.
pub fn bound_check_enumerated(
    corpus: &Corpus,
    hyper: &Hyperparams,
    cap: u64,
) -> Result<BoundSummary> {
    let k = hyper.num_topics();
    let n = corpus.total_tokens();
    let total = check_cap(k, n, cap)?;
    let labeled = corpus.is_labeled() && k == corpus.num_labels();
    let mut summary = BoundSummary::default();
    let mut failure = None;
    for_each_assignment(k, n, total, |_, digits| {
        if failure.is_some() {
            return;
        }
        let mut it = digits.iter().map(|&t| t as u32);
        let z: Vec<Vec<u32>> = corpus
            .documents
            .iter()
            .map(|d| it.by_ref().take(d.len()).collect())
            .collect();
        let state = match SamplerState::from_assignments(z, corpus, k, 0) {
            Ok(s) => s,
            Err(e) => {
                failure = Some(e);
                return;
            }
        };
        if labeled && !state.respects_labels(corpus) {
            return;
        }
        match phi_p_bounds(&state, corpus, hyper) {
            Ok(b) => summary.add(&b),
            Err(e) => failure = Some(e),
        }
    });
    match failure {
        Some(e) => Err(e),
        None => Ok(summary),
    }
}

/// Mean over documents of `sum_k |n_dk - m_dk|`.
pub fn hard_soft_divergence(
    state: &SamplerState,
    corpus: &Corpus,
    hyper: &Hyperparams,
    mode: &SamplingMode<'_>,
) -> Result<f64> {
    if corpus.num_docs() == 0 {
        return Err(Error::EmptyCorpus);
    }
    let m = soft_counts(state, corpus, hyper, mode)?;
    let total: f64 = state
        .counts
        .n_dk
        .iter()
        .zip(m.m_dk.iter())
        .map(|(&a, &b)| (a as f64 - b).abs())
        .sum();
    Ok(total / corpus.num_docs() as f64)
}

/// Soft counts recomputed token by token from scratch, for cross-checking the estimators.
pub fn naive_soft_counts(
    state: &SamplerState,
    corpus: &Corpus,
    hyper: &Hyperparams,
    phi: Option<&Array2<f64>>,
) -> (Array2<f64>, Array2<f64>) {
    let k = hyper.num_topics();
    let mut m_dk = Array2::zeros((corpus.num_docs(), k));
    let mut m_kv = Array2::zeros((k, corpus.vocab_size()));
    let labeled = corpus.is_labeled() && k == corpus.num_labels() && phi.is_none();
    for (d, doc) in corpus.documents.iter().enumerate() {
        let z: Vec<usize> = state.z[d].iter().map(|&t| t as usize).collect();
        for (j, &w) in doc.tokens.iter().enumerate() {
            let p = match phi {
                Some(phi) => fixed_phi_conditional(doc, &z, phi, hyper.alpha(), j),
                None => collapsed_conditional(corpus, &state.z, hyper, d, j, labeled),
            };
            for t in 0..k {
                m_dk[[d, t]] += p[t];
                m_kv[[t, w as usize]] += p[t];
            }
        }
    }
    (m_dk, m_kv)
}
