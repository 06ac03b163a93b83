//! Collapsed Gibbs sampling in training, fixed-topic prediction and label-constrained modes.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::model::{check_row_stochastic, CountMatrices, Hyperparams, SamplerState, TopicId};

/// The RNG used by every chain.
pub type ChainRng = ChaCha8Rng;

/// Burn-in, thinning and chain counts for a sampling run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainSchedule {
    pub burn_in: usize,
    pub lag: usize,
    pub samples: usize,
    pub chains: usize,
    /// Sweeps for a single-sample training run.
    pub total_train_iters: usize,
    pub seed: u64,
}

impl Default for ChainSchedule {
    fn default() -> Self {
        ChainSchedule {
            burn_in: 50,
            lag: 5,
            samples: 1,
            chains: 1,
            total_train_iters: 200,
            seed: 0,
        }
    }
}

impl ChainSchedule {
    /// One chain, one retained sample after `iters` sweeps.
    pub fn single(iters: usize, seed: u64) -> Self {
        ChainSchedule {
            burn_in: iters.saturating_sub(1),
            lag: 1,
            samples: 1,
            chains: 1,
            total_train_iters: iters,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lag < 1 || self.samples < 1 || self.chains < 1 {
            return Err(Error::Argument(format!(
                "schedule needs lag, samples and chains >= 1 (got lag={}, samples={}, chains={})",
                self.lag, self.samples, self.chains
            )));
        }
        Ok(())
    }

    /// Sweep counts after which snapshots are retained.
    ///
    /// Training runs that keep a single sample keep the state after `total_train_iters`
    /// sweeps; everything else keeps `burn_in + lag * i` for `i = 1..=samples`.
    pub fn snapshot_iterations(&self, mode: &SamplingMode<'_>) -> Vec<usize> {
        if mode.is_training() && self.samples == 1 {
            return vec![self.total_train_iters];
        }
        (1..=self.samples)
            .map(|i| self.burn_in + self.lag * i)
            .collect()
    }
}

/// 64-bit finalizer from splitmix64.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Seed of chain `chain_index`: `splitmix64(base ^ splitmix64(chain_index))`.
pub fn chain_seed(base: u64, chain_index: u64) -> u64 {
    splitmix64(base ^ splitmix64(chain_index))
}

/// A validated K x V topic-word matrix held fixed during prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedPhi {
    phi: Array2<f64>,
    // word-major copy (V x K) so a word's column is contiguous
    by_word: Array2<f64>,
}

impl FixedPhi {
    pub fn new(phi: Array2<f64>) -> Result<Self> {
        check_row_stochastic(phi.view(), "fixed phi")?;
        let by_word = phi.t().as_standard_layout().into_owned();
        Ok(FixedPhi { phi, by_word })
    }

    pub fn phi(&self) -> &Array2<f64> {
        &self.phi
    }

    pub fn num_topics(&self) -> usize {
        self.phi.nrows()
    }

    pub fn vocab_size(&self) -> usize {
        self.phi.ncols()
    }

    #[inline]
    pub fn column(&self, v: usize) -> &[f64] {
        let k = self.phi.nrows();
        &self.by_word.as_slice().expect("standard layout")[v * k..(v + 1) * k]
    }
}

#[derive(Debug, Clone, Copy)]
pub enum SamplingMode<'a> {
    /// Collapsed topics: the word factor comes from the counts.
    Train,
    /// Topics held fixed at a previously estimated phi.
    Predict(&'a FixedPhi),
    /// Collapsed topics with assignments restricted to each document's labels.
    LabeledTrain,
}

impl SamplingMode<'_> {
    pub fn is_training(&self) -> bool {
        !matches!(self, SamplingMode::Predict(_))
    }

    pub fn is_labeled(&self) -> bool {
        matches!(self, SamplingMode::LabeledTrain)
    }

    pub(crate) fn check(&self, corpus: &Corpus, hyper: &Hyperparams) -> Result<()> {
        hyper.check_corpus(corpus)?;
        match self {
            SamplingMode::Predict(phi) => {
                if phi.num_topics() != hyper.num_topics() || phi.vocab_size() != corpus.vocab_size()
                {
                    return Err(Error::Argument(format!(
                        "fixed phi is {}x{} but the model is {}x{}",
                        phi.num_topics(),
                        phi.vocab_size(),
                        hyper.num_topics(),
                        corpus.vocab_size()
                    )));
                }
            }
            SamplingMode::LabeledTrain => {
                if corpus.num_labels() != hyper.num_topics() {
                    return Err(Error::Argument(format!(
                        "labeled mode needs K equal to the label space size ({} != {})",
                        hyper.num_topics(),
                        corpus.num_labels()
                    )));
                }
            }
            SamplingMode::Train => {}
        }
        Ok(())
    }
}

/// Writes the unnormalized full conditional of a token with word `v` in document `d` into
/// `out` and returns its total mass.
///
/// `counts` must already exclude the token, unless `exclude` names the topic the token
/// currently holds, in which case the exclusion is applied on the fly without mutating
/// `counts`. The document-length denominator is omitted; it cancels under normalization.
#[inline]
#[allow(clippy::too_many_arguments)]
pub(crate) fn conditional_into(
    counts: &CountMatrices,
    hyper: &Hyperparams,
    mode: &SamplingMode<'_>,
    d: usize,
    v: usize,
    labels: &[TopicId],
    exclude: Option<usize>,
    out: &mut [f64],
) -> Result<f64> {
    let k_total = out.len();
    let alpha = hyper.alpha();
    let ndk = &counts.n_dk.as_slice().expect("standard layout")[d * k_total..(d + 1) * k_total];
    let x = exclude.map(|t| t as isize).unwrap_or(-1);
    let sub = |k: usize| -> f64 {
        if k as isize == x {
            1.0
        } else {
            0.0
        }
    };
    match mode {
        SamplingMode::Train | SamplingMode::LabeledTrain => {
            let nkv = counts.n_kv.as_slice().expect("standard layout");
            let vsize = counts.n_kv.ncols();
            let beta_v = hyper.beta()[v];
            let beta_sum = hyper.beta_sum();
            let word = |k: usize| {
                let s = sub(k);
                (nkv[k * vsize + v] as f64 - s + beta_v) / (counts.n_k[k] as f64 - s + beta_sum)
                    * (ndk[k] as f64 - s + alpha[k])
            };
            if mode.is_labeled() {
                if labels.is_empty() {
                    return Err(Error::Constraint(format!("document {d} has no labels")));
                }
                out.fill(0.0);
                for &k in labels {
                    out[k as usize] = word(k as usize);
                }
            } else {
                for (k, o) in out.iter_mut().enumerate() {
                    *o = word(k);
                }
            }
        }
        SamplingMode::Predict(phi) => {
            let col = phi.column(v);
            for (k, o) in out.iter_mut().enumerate() {
                *o = col[k] * (ndk[k] as f64 - sub(k) + alpha[k]);
            }
        }
    }
    let total: f64 = out.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::Numeric(format!(
            "conditional for document {d}, word {v} has total mass {total}"
        )));
    }
    Ok(total)
}

/// Draws an index with probability proportional to `weights`.
#[inline]
pub(crate) fn draw<R: Rng + ?Sized>(weights: &[f64], total: f64, rng: &mut R) -> usize {
    let mut u = rng.random::<f64>() * total;
    let mut last = 0;
    for (k, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            if u < w {
                return k;
            }
            u -= w;
            last = k;
        }
    }
    last
}

/// Normalized full conditional for token `(d, j)`. The token must already have been
/// removed from `state.counts`.
pub fn gibbs_transition(
    state: &SamplerState,
    corpus: &Corpus,
    hyper: &Hyperparams,
    mode: &SamplingMode<'_>,
    d: usize,
    j: usize,
) -> Result<Vec<f64>> {
    let doc = corpus
        .documents
        .get(d)
        .ok_or_else(|| Error::Argument(format!("document {d} out of range")))?;
    let &v = doc
        .tokens
        .get(j)
        .ok_or_else(|| Error::Argument(format!("position {j} out of range in document {d}")))?;
    let mut p = vec![0.0; state.num_topics()];
    let total = conditional_into(
        &state.counts,
        hyper,
        mode,
        d,
        v as usize,
        &doc.labels,
        None,
        &mut p,
    )?;
    p.iter_mut().for_each(|x| *x /= total);
    Ok(p)
}

/// Draws an initial state: each token uniform over all topics, or over its document's
/// labels in labeled mode.
pub fn init_state<R: Rng + ?Sized>(
    corpus: &Corpus,
    hyper: &Hyperparams,
    mode: &SamplingMode<'_>,
    rng: &mut R,
    rng_seed: u64,
) -> Result<SamplerState> {
    mode.check(corpus, hyper)?;
    let k = hyper.num_topics();
    let mut z = Vec::with_capacity(corpus.num_docs());
    for (d, doc) in corpus.documents.iter().enumerate() {
        let zd: Vec<TopicId> = if mode.is_labeled() {
            if doc.labels.is_empty() && !doc.is_empty() {
                return Err(Error::Constraint(format!("document {d} has no labels")));
            }
            doc.tokens
                .iter()
                .map(|_| doc.labels[rng.random_range(0..doc.labels.len())])
                .collect()
        } else {
            doc.tokens
                .iter()
                .map(|_| rng.random_range(0..k) as TopicId)
                .collect()
        };
        z.push(zd);
    }
    SamplerState::from_assignments(z, corpus, k, rng_seed)
}

/// Resamples every token once, documents in order and positions in order.
pub fn sweep<R: Rng + ?Sized>(
    state: &mut SamplerState,
    corpus: &Corpus,
    hyper: &Hyperparams,
    mode: &SamplingMode<'_>,
    rng: &mut R,
) -> Result<()> {
    let mut p = vec![0.0; state.num_topics()];
    for (d, doc) in corpus.documents.iter().enumerate() {
        for (j, &v) in doc.tokens.iter().enumerate() {
            let v = v as usize;
            let old = state.z[d][j] as usize;
            state.counts.remove(d, v, old);
            let total =
                match conditional_into(&state.counts, hyper, mode, d, v, &doc.labels, None, &mut p)
                {
                    Ok(t) => t,
                    Err(e) => {
                        state.counts.add(d, v, old);
                        return Err(e);
                    }
                };
            let new = draw(&p, total, rng);
            state.counts.add(d, v, new);
            state.z[d][j] = new as TopicId;
        }
    }
    state.iteration += 1;
    Ok(())
}

/// Sparse training sweeps using the smoothing / document / word bucket split of the
/// unnormalized mass
///
/// `(alpha_k + n_dk)(beta_v + n_kv) / (n_k + beta_sum)
///   = beta_v alpha_k / (n_k + beta_sum)          smoothing bucket
///   + beta_v n_dk / (n_k + beta_sum)             document bucket
///   + n_kv (alpha_k + n_dk) / (n_k + beta_sum)`   word bucket
///
/// so that a token costs O(nnz(n_dk[d]) + nnz(n_kv[:, v])) except when the rarely hit
/// smoothing bucket is drawn.
#[derive(Debug, Clone)]
pub struct SparseSweeper {
    // per word: (topic, count) for nonzero n_kv[:, v], unordered
    word_topics: Vec<Vec<(u32, u32)>>,
    inv_denom: Vec<f64>,
    // (alpha_k + n_dk) / (n_k + beta_sum) for the current document
    coef: Vec<f64>,
    smoothing: f64,
    doc_mass: f64,
    doc_topics: Vec<u32>,
    word_buf: Vec<f64>,
    iteration: u64,
}

impl SparseSweeper {
    pub fn new(state: &SamplerState, hyper: &Hyperparams) -> Self {
        let k = state.num_topics();
        let v = state.counts.n_kv.ncols();
        let mut word_topics = vec![Vec::new(); v];
        for (t, row) in state.counts.n_kv.rows().into_iter().enumerate() {
            for (w, &c) in row.iter().enumerate() {
                if c > 0 {
                    word_topics[w].push((t as u32, c));
                }
            }
        }
        let inv_denom: Vec<f64> = state
            .counts
            .n_k
            .iter()
            .map(|&n| 1.0 / (n as f64 + hyper.beta_sum()))
            .collect();
        let coef = hyper
            .alpha()
            .iter()
            .zip(&inv_denom)
            .map(|(a, i)| a * i)
            .collect();
        SparseSweeper {
            word_topics,
            inv_denom,
            coef,
            smoothing: 0.0,
            doc_mass: 0.0,
            doc_topics: Vec::with_capacity(k),
            word_buf: Vec::with_capacity(k),
            iteration: state.iteration,
        }
    }

    fn begin_doc(&mut self, counts: &CountMatrices, hyper: &Hyperparams, d: usize) {
        let alpha = hyper.alpha();
        self.smoothing = alpha.iter().zip(&self.inv_denom).map(|(a, i)| a * i).sum();
        self.doc_topics.clear();
        self.doc_mass = 0.0;
        for (k, &n) in counts.n_dk.row(d).iter().enumerate() {
            if n > 0 {
                self.doc_topics.push(k as u32);
                self.doc_mass += n as f64 * self.inv_denom[k];
                self.coef[k] = (alpha[k] + n as f64) * self.inv_denom[k];
            }
        }
    }

    fn end_doc(&mut self, hyper: &Hyperparams) {
        for &k in &self.doc_topics {
            let k = k as usize;
            self.coef[k] = hyper.alpha()[k] * self.inv_denom[k];
        }
    }

    // Applies a +1/-1 change of topic k for word v in document d to counts and caches.
    fn shift(
        &mut self,
        counts: &mut CountMatrices,
        hyper: &Hyperparams,
        d: usize,
        v: usize,
        k: usize,
        up: bool,
    ) {
        let alpha_k = hyper.alpha()[k];
        let old_ndk = counts.n_dk[[d, k]] as f64;
        self.smoothing -= alpha_k * self.inv_denom[k];
        self.doc_mass -= old_ndk * self.inv_denom[k];
        if up {
            counts.add(d, v, k);
        } else {
            counts.remove(d, v, k);
        }
        let new_ndk = counts.n_dk[[d, k]] as f64;
        self.inv_denom[k] = 1.0 / (counts.n_k[k] as f64 + hyper.beta_sum());
        self.smoothing += alpha_k * self.inv_denom[k];
        self.doc_mass += new_ndk * self.inv_denom[k];
        self.coef[k] = (alpha_k + new_ndk) * self.inv_denom[k];

        if up && new_ndk == 1.0 {
            self.doc_topics.push(k as u32);
        } else if !up && new_ndk == 0.0 {
            if let Some(pos) = self.doc_topics.iter().position(|&t| t as usize == k) {
                self.doc_topics.swap_remove(pos);
            }
        }
        let list = &mut self.word_topics[v];
        match list.iter().position(|&(t, _)| t as usize == k) {
            Some(pos) if up => list[pos].1 += 1,
            Some(pos) => {
                list[pos].1 -= 1;
                if list[pos].1 == 0 {
                    list.swap_remove(pos);
                }
            }
            None if up => list.push((k as u32, 1)),
            None => unreachable!("decrement of a zero word-topic count"),
        }
    }

    /// Dense conditional assembled from the three buckets, for the current document context.
    /// The token must already be removed from the counts.
    fn bucket_conditional(
        &self,
        counts: &CountMatrices,
        hyper: &Hyperparams,
        d: usize,
        v: usize,
    ) -> Vec<f64> {
        let beta_v = hyper.beta()[v];
        let mut p: Vec<f64> = hyper
            .alpha()
            .iter()
            .zip(&self.inv_denom)
            .map(|(a, i)| beta_v * a * i)
            .collect();
        for &k in &self.doc_topics {
            let k = k as usize;
            p[k] += beta_v * counts.n_dk[[d, k]] as f64 * self.inv_denom[k];
        }
        for &(k, c) in &self.word_topics[v] {
            p[k as usize] += c as f64 * self.coef[k as usize];
        }
        p
    }

    fn sample_token<R: Rng + ?Sized>(
        &mut self,
        counts: &CountMatrices,
        hyper: &Hyperparams,
        d: usize,
        v: usize,
        rng: &mut R,
    ) -> Result<usize> {
        let beta_v = hyper.beta()[v];
        let s = beta_v * self.smoothing;
        let r = beta_v * self.doc_mass;
        self.word_buf.clear();
        let mut q = 0.0;
        for &(k, c) in &self.word_topics[v] {
            let w = c as f64 * self.coef[k as usize];
            q += w;
            self.word_buf.push(w);
        }
        let total = s + r + q;
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::Numeric(format!("sparse conditional mass {total}")));
        }
        let mut u = rng.random::<f64>() * total;
        if u < q {
            let list = &self.word_topics[v];
            for (i, &w) in self.word_buf.iter().enumerate() {
                if u < w {
                    return Ok(list[i].0 as usize);
                }
                u -= w;
            }
            return Ok(list[list.len() - 1].0 as usize);
        }
        u -= q;
        if u < r && !self.doc_topics.is_empty() {
            for &k in &self.doc_topics {
                let k = k as usize;
                let w = beta_v * counts.n_dk[[d, k]] as f64 * self.inv_denom[k];
                if u < w {
                    return Ok(k);
                }
                u -= w;
            }
            return Ok(*self.doc_topics.last().unwrap() as usize);
        }
        u = (u - r).max(0.0);
        let alpha = hyper.alpha();
        for k in 0..alpha.len() {
            let w = beta_v * alpha[k] * self.inv_denom[k];
            if u < w {
                return Ok(k);
            }
            u -= w;
        }
        Ok(alpha.len() - 1)
    }

    pub fn sweep<R: Rng + ?Sized>(
        &mut self,
        state: &mut SamplerState,
        corpus: &Corpus,
        hyper: &Hyperparams,
        rng: &mut R,
    ) -> Result<()> {
        if state.iteration != self.iteration {
            *self = SparseSweeper::new(state, hyper);
        }
        for (d, doc) in corpus.documents.iter().enumerate() {
            self.begin_doc(&state.counts, hyper, d);
            for (j, &v) in doc.tokens.iter().enumerate() {
                let v = v as usize;
                let old = state.z[d][j] as usize;
                self.shift(&mut state.counts, hyper, d, v, old, false);
                let new = match self.sample_token(&state.counts, hyper, d, v, rng) {
                    Ok(k) => k,
                    Err(e) => {
                        self.shift(&mut state.counts, hyper, d, v, old, true);
                        return Err(e);
                    }
                };
                self.shift(&mut state.counts, hyper, d, v, new, true);
                state.z[d][j] = new as TopicId;
            }
            self.end_doc(hyper);
        }
        state.iteration += 1;
        self.iteration = state.iteration;
        Ok(())
    }

    /// Normalized conditional of token `(d, j)` computed through the bucket caches, with the
    /// token removed from the counts for the duration of the call.
    pub fn token_conditional(
        &mut self,
        state: &mut SamplerState,
        corpus: &Corpus,
        hyper: &Hyperparams,
        d: usize,
        j: usize,
    ) -> Vec<f64> {
        let v = corpus.documents[d].tokens[j] as usize;
        let old = state.z[d][j] as usize;
        self.begin_doc(&state.counts, hyper, d);
        self.shift(&mut state.counts, hyper, d, v, old, false);
        let mut p = self.bucket_conditional(&state.counts, hyper, d, v);
        self.shift(&mut state.counts, hyper, d, v, old, true);
        self.end_doc(hyper);
        let total: f64 = p.iter().sum();
        p.iter_mut().for_each(|x| *x /= total);
        p
    }
}

/// One sparse training sweep. Builds the sparse caches from scratch; use
/// [`SparseSweeper`] directly to amortize them across sweeps.
pub fn sweep_sparse<R: Rng + ?Sized>(
    state: &mut SamplerState,
    corpus: &Corpus,
    hyper: &Hyperparams,
    mode: &SamplingMode<'_>,
    rng: &mut R,
) -> Result<()> {
    if !matches!(mode, SamplingMode::Train) {
        return Err(Error::Argument(
            "the sparse sweep supports unconstrained training only".into(),
        ));
    }
    SparseSweeper::new(state, hyper).sweep(state, corpus, hyper, rng)
}

/// Which sweep implementation a chain uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kernel {
    #[default]
    Dense,
    Sparse,
}

/// Runs one chain and hands every retained snapshot to `on_snapshot`.
#[allow(clippy::too_many_arguments)]
pub fn run_chain_with<F>(
    corpus: &Corpus,
    hyper: &Hyperparams,
    mode: &SamplingMode<'_>,
    schedule: &ChainSchedule,
    chain_index: usize,
    kernel: Kernel,
    mut on_snapshot: F,
) -> Result<()>
where
    F: FnMut(&SamplerState) -> Result<()>,
{
    schedule.validate()?;
    if kernel == Kernel::Sparse && !matches!(mode, SamplingMode::Train) {
        return Err(Error::Argument(
            "the sparse kernel supports unconstrained training only".into(),
        ));
    }
    let seed = chain_seed(schedule.seed, chain_index as u64);
    let mut rng = ChainRng::seed_from_u64(seed);
    let mut state = init_state(corpus, hyper, mode, &mut rng, seed)?;
    let mut sparse = (kernel == Kernel::Sparse).then(|| SparseSweeper::new(&state, hyper));
    let mut done = 0usize;
    for target in schedule.snapshot_iterations(mode) {
        while done < target {
            match sparse.as_mut() {
                Some(s) => s.sweep(&mut state, corpus, hyper, &mut rng)?,
                None => sweep(&mut state, corpus, hyper, mode, &mut rng)?,
            }
            done += 1;
        }
        on_snapshot(&state)?;
    }
    Ok(())
}

/// Runs one chain and returns its retained snapshots.
pub fn run_chain(
    corpus: &Corpus,
    hyper: &Hyperparams,
    mode: &SamplingMode<'_>,
    schedule: &ChainSchedule,
    chain_index: usize,
) -> Result<Vec<SamplerState>> {
    let mut out = Vec::with_capacity(schedule.samples);
    run_chain_with(
        corpus,
        hyper,
        mode,
        schedule,
        chain_index,
        Kernel::Dense,
        |s| {
            out.push(s.clone());
            Ok(())
        },
    )?;
    Ok(out)
}

/// Runs `schedule.chains` chains in parallel, mapping every snapshot through `f` as it is
/// produced. Results are indexed `[chain][sample]`.
pub fn run_chains_map<T, F>(
    corpus: &Corpus,
    hyper: &Hyperparams,
    mode: &SamplingMode<'_>,
    schedule: &ChainSchedule,
    kernel: Kernel,
    f: F,
) -> Result<Vec<Vec<T>>>
where
    T: Send,
    F: Fn(usize, &SamplerState) -> Result<T> + Sync,
{
    (0..schedule.chains)
        .into_par_iter()
        .map(|c| {
            let mut out = Vec::with_capacity(schedule.samples);
            run_chain_with(corpus, hyper, mode, schedule, c, kernel, |s| {
                out.push(f(c, s)?);
                Ok(())
            })?;
            Ok(out)
        })
        .collect()
}
