//! Point estimates of theta and phi from sampler snapshots.

use ndarray::{Array2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::model::{
    CountMatrices, EstimateMeta, Hyperparams, ParamEstimate, Recovery, SamplerState, SoftCounts,
};
use crate::sampler::{conditional_into, FixedPhi, SamplingMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    ThetaStandard,
    ThetaP,
    PhiStandard,
    PhiP,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 4] = [
        EstimatorKind::ThetaStandard,
        EstimatorKind::ThetaP,
        EstimatorKind::PhiStandard,
        EstimatorKind::PhiP,
    ];

    /// Soft-count kinds revisit every token; the standard kinds only read counts.
    pub fn needs_tokens(self) -> bool {
        matches!(self, EstimatorKind::ThetaP | EstimatorKind::PhiP)
    }
}

/// `theta_dk = (c_dk + alpha_k) / (N_d + sum(alpha))` for any (hard or soft) D x K counts.
pub(crate) fn theta_from_counts<I>(c_dk: &Array2<f64>, n_d: I, hyper: &Hyperparams) -> Array2<f64>
where
    I: IntoIterator<Item = f64>,
{
    let mut theta = c_dk.clone();
    let alpha = hyper.alpha();
    for (mut row, n) in theta.rows_mut().into_iter().zip(n_d) {
        let denom = n + hyper.alpha_sum();
        for (x, a) in row.iter_mut().zip(alpha) {
            *x = (*x + a) / denom;
        }
    }
    theta
}

/// `phi_kv = (c_kv + beta_v) / (c_k + sum(beta))`.
pub(crate) fn phi_from_counts(c_kv: &Array2<f64>, c_k: &[f64], hyper: &Hyperparams) -> Array2<f64> {
    let mut phi = c_kv.clone();
    let beta = hyper.beta();
    for (mut row, &ck) in phi.rows_mut().into_iter().zip(c_k) {
        let denom = ck + hyper.beta_sum();
        for (x, b) in row.iter_mut().zip(beta) {
            *x = (*x + b) / denom;
        }
    }
    phi
}

pub fn theta_standard(counts: &CountMatrices, hyper: &Hyperparams) -> Array2<f64> {
    theta_from_counts(
        &counts.n_dk.mapv(f64::from),
        counts.n_d.iter().map(|&n| n as f64),
        hyper,
    )
}

pub fn phi_standard(counts: &CountMatrices, hyper: &Hyperparams) -> Array2<f64> {
    let n_k: Vec<f64> = counts.n_k.iter().map(|&n| n as f64).collect();
    phi_from_counts(&counts.n_kv.mapv(f64::from), &n_k, hyper)
}

struct Partial {
    m_dk: Vec<(usize, Vec<f64>)>,
    // word-major V x K
    m_vk: Vec<f64>,
    m_k: Vec<f64>,
}

fn soft_counts_chunk(
    state: &SamplerState,
    corpus: &Corpus,
    hyper: &Hyperparams,
    mode: &SamplingMode<'_>,
    docs: std::ops::Range<usize>,
) -> Result<Partial> {
    let k = state.num_topics();
    let v_size = corpus.vocab_size();
    let mut part = Partial {
        m_dk: Vec::with_capacity(docs.len()),
        m_vk: vec![0.0; v_size * k],
        m_k: vec![0.0; k],
    };
    let mut p = vec![0.0; k];
    let mut keyed: Vec<(u32, u32)> = Vec::new();
    for d in docs {
        let doc = &corpus.documents[d];
        let mut row = vec![0.0; k];
        // Tokens sharing word type and current topic see identical decremented counts.
        keyed.clear();
        keyed.extend(doc.tokens.iter().zip(&state.z[d]).map(|(&v, &z)| (v, z)));
        keyed.sort_unstable();
        let mut i = 0;
        while i < keyed.len() {
            let (v, z) = keyed[i];
            let mut run = 1;
            while i + run < keyed.len() && keyed[i + run] == (v, z) {
                run += 1;
            }
            let total = conditional_into(
                &state.counts,
                hyper,
                mode,
                d,
                v as usize,
                &doc.labels,
                Some(z as usize),
                &mut p,
            )?;
            let w = run as f64 / total;
            let col = &mut part.m_vk[v as usize * k..(v as usize + 1) * k];
            for t in 0..k {
                let x = p[t] * w;
                row[t] += x;
                col[t] += x;
                part.m_k[t] += x;
            }
            i += run;
        }
        part.m_dk.push((d, row));
    }
    Ok(part)
}

/// Sums of normalized full conditionals, each computed from the snapshot's counts with the
/// token excluded. The state is read only.
///
/// Documents are split into one contiguous chunk per worker thread and partial sums are
/// merged in chunk order, so results are reproducible for a fixed thread count.
pub fn soft_counts(
    state: &SamplerState,
    corpus: &Corpus,
    hyper: &Hyperparams,
    mode: &SamplingMode<'_>,
) -> Result<SoftCounts> {
    mode.check(corpus, hyper)?;
    if state.z.len() != corpus.num_docs() || state.num_topics() != hyper.num_topics() {
        return Err(Error::Argument(
            "sampler state does not match corpus and hyperparameters".into(),
        ));
    }
    let (d_size, k, v_size) = (corpus.num_docs(), hyper.num_topics(), corpus.vocab_size());
    let chunks = rayon::current_num_threads().clamp(1, d_size.max(1));
    let per = d_size.div_ceil(chunks).max(1);
    let parts: Vec<Partial> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let lo = (c * per).min(d_size);
            let hi = ((c + 1) * per).min(d_size);
            soft_counts_chunk(state, corpus, hyper, mode, lo..hi)
        })
        .collect::<Result<_>>()?;

    let mut out = SoftCounts::zeros(d_size, k, v_size);
    let mut m_vk = vec![0.0; v_size * k];
    for part in parts {
        for (d, row) in part.m_dk {
            out.m_dk
                .row_mut(d)
                .iter_mut()
                .zip(row)
                .for_each(|(a, b)| *a = b);
        }
        m_vk.iter_mut().zip(&part.m_vk).for_each(|(a, b)| *a += b);
        out.m_k.iter_mut().zip(&part.m_k).for_each(|(a, b)| *a += b);
    }
    let m_vk = Array2::from_shape_vec((v_size, k), m_vk).expect("shape");
    out.m_kv = m_vk.reversed_axes().as_standard_layout().into_owned();
    Ok(out)
}

fn check_states(states: &[SamplerState], corpus: &Corpus, hyper: &Hyperparams) -> Result<()> {
    if states.is_empty() {
        return Err(Error::Argument(
            "at least one sampler state is required".into(),
        ));
    }
    for s in states {
        if s.z.len() != corpus.num_docs() || s.num_topics() != hyper.num_topics() {
            return Err(Error::Argument(
                "sampler state does not match corpus and hyperparameters".into(),
            ));
        }
    }
    Ok(())
}

/// Soft-count theta averaged over `states`:
/// `((1/S) sum_i m_dk^(i) + alpha_k) / (N_d + sum(alpha))`.
///
/// Averaging over several states is only meaningful when topics are anchored, i.e. in
/// predict mode with a shared fixed phi or in labeled mode.
pub fn theta_p(
    states: &[SamplerState],
    corpus: &Corpus,
    hyper: &Hyperparams,
    mode: &SamplingMode<'_>,
) -> Result<Array2<f64>> {
    check_states(states, corpus, hyper)?;
    let mut acc = Array2::<f64>::zeros((corpus.num_docs(), hyper.num_topics()));
    for s in states {
        acc += &soft_counts(s, corpus, hyper, mode)?.m_dk;
    }
    acc /= states.len() as f64;
    Ok(theta_from_counts(
        &acc,
        corpus.documents.iter().map(|d| d.len() as f64),
        hyper,
    ))
}

/// Soft-count theta of a single state; the building block averaged by [`theta_p`].
pub fn theta_p_single(
    state: &SamplerState,
    corpus: &Corpus,
    hyper: &Hyperparams,
    mode: &SamplingMode<'_>,
) -> Result<Array2<f64>> {
    let m = soft_counts(state, corpus, hyper, mode)?;
    Ok(theta_from_counts(
        &m.m_dk,
        corpus.documents.iter().map(|d| d.len() as f64),
        hyper,
    ))
}

/// Soft-count phi of one training snapshot: `(m_kv + beta_v) / (m_k + sum(beta))`, with
/// rows renormalized to sum to one.
pub fn phi_p(
    state: &SamplerState,
    corpus: &Corpus,
    hyper: &Hyperparams,
    mode: &SamplingMode<'_>,
) -> Result<Array2<f64>> {
    if !mode.is_training() {
        return Err(Error::Argument("phi_p needs a training-mode state".into()));
    }
    let m = soft_counts(state, corpus, hyper, mode)?;
    Ok(phi_p_from_soft(&m, hyper))
}

pub(crate) fn phi_p_from_soft(m: &SoftCounts, hyper: &Hyperparams) -> Array2<f64> {
    let mut phi = phi_from_counts(&m.m_kv, &m.m_k, hyper);
    crate::model::normalize_rows(&mut phi);
    phi
}

/// Average of [`theta_standard`] over `states`.
pub fn theta_naive_mc(states: &[SamplerState], hyper: &Hyperparams) -> Result<Array2<f64>> {
    let first = states
        .first()
        .ok_or_else(|| Error::Argument("at least one sampler state is required".into()))?;
    let mut acc = Array2::<f64>::zeros(first.counts.n_dk.raw_dim());
    for s in states {
        if s.counts.n_dk.raw_dim() != acc.raw_dim() {
            return Err(Error::Argument(
                "sampler states have different shapes".into(),
            ));
        }
        acc += &theta_standard(&s.counts, hyper);
    }
    acc /= states.len() as f64;
    Ok(acc)
}

/// What keeps topic indices comparable across the estimates being averaged.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TopicAnchor {
    /// Topics tied one-to-one to labels.
    Labeled,
    /// Topics held at a shared fixed phi.
    FixedPhi,
}

/// Element-wise mean of same-shaped estimates. The anchor argument records why averaging
/// across chains is valid; unanchored training topics are subject to label switching.
pub fn average_estimates(estimates: &[Array2<f64>], _anchor: TopicAnchor) -> Result<Array2<f64>> {
    let first = estimates
        .first()
        .ok_or_else(|| Error::Argument("nothing to average".into()))?;
    let mut acc = Array2::<f64>::zeros(first.raw_dim());
    for e in estimates {
        if e.raw_dim() != acc.raw_dim() {
            return Err(Error::Argument(format!(
                "cannot average a {:?} matrix with a {:?} matrix",
                e.shape(),
                first.shape()
            )));
        }
        acc += e;
    }
    acc /= estimates.len() as f64;
    Ok(acc)
}

/// Which phi feeds the fixed-topic transition used for theta^p during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainThetaSource {
    /// Plug in the standard phi of the same snapshot.
    #[default]
    PhiStandard,
    /// Plug in phi^p of the same snapshot.
    PhiP,
    /// Use the collapsed training conditional directly.
    Collapsed,
}

/// theta^p for a single training snapshot.
pub fn theta_p_train(
    state: &SamplerState,
    corpus: &Corpus,
    hyper: &Hyperparams,
    source: TrainThetaSource,
) -> Result<Array2<f64>> {
    match source {
        TrainThetaSource::Collapsed => theta_p_single(state, corpus, hyper, &SamplingMode::Train),
        TrainThetaSource::PhiStandard => {
            let phi = FixedPhi::new(phi_standard(&state.counts, hyper))?;
            theta_p_single(state, corpus, hyper, &SamplingMode::Predict(&phi))
        }
        TrainThetaSource::PhiP => {
            let phi = FixedPhi::new(phi_p(state, corpus, hyper, &SamplingMode::Train)?)?;
            theta_p_single(state, corpus, hyper, &SamplingMode::Predict(&phi))
        }
    }
}

/// Standard or soft-count estimates of both matrices from one training snapshot.
pub fn recover_train(
    state: &SamplerState,
    corpus: &Corpus,
    hyper: &Hyperparams,
    mode: &SamplingMode<'_>,
    theta: Recovery,
    phi: Recovery,
) -> Result<ParamEstimate> {
    if !mode.is_training() {
        return Err(Error::Argument(
            "recover_train needs a training mode".into(),
        ));
    }
    let need_soft = theta == Recovery::CgsP || phi == Recovery::CgsP;
    let soft = if need_soft {
        Some(soft_counts(state, corpus, hyper, mode)?)
    } else {
        None
    };
    let phi_m = match phi {
        Recovery::Standard => phi_standard(&state.counts, hyper),
        Recovery::CgsP => phi_p_from_soft(soft.as_ref().expect("computed"), hyper),
        Recovery::Cvb0 => {
            return Err(Error::Argument(
                "cvb0 estimates come from a variational state".into(),
            ))
        }
    };
    let theta_m = match theta {
        Recovery::Standard => theta_standard(&state.counts, hyper),
        Recovery::CgsP => {
            let m = soft.as_ref().expect("computed");
            theta_from_counts(
                &m.m_dk,
                corpus.documents.iter().map(|d| d.len() as f64),
                hyper,
            )
        }
        Recovery::Cvb0 => {
            return Err(Error::Argument(
                "cvb0 estimates come from a variational state".into(),
            ))
        }
    };
    Ok(ParamEstimate {
        theta: theta_m,
        phi: phi_m,
        meta: EstimateMeta {
            theta,
            phi,
            chains: 1,
            samples_per_chain: 1,
        },
    })
}

/// Sums `theta` rows over the topic axis; used by tests and diagnostics.
pub fn row_sums(m: &Array2<f64>) -> Vec<f64> {
    m.sum_axis(Axis(1)).to_vec()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Document, Vocabulary};
    use crate::model::{check_row_stochastic, rebuild_counts};
    use crate::sampler::{init_state, sweep, ChainRng};
    use ndarray::array;
    use proptest::prelude::*;
    use rand::SeedableRng;

    fn corpus(docs: Vec<Vec<u32>>, v: usize) -> Corpus {
        let vocab = Vocabulary::from_terms((0..v).map(|i| format!("w{i}")).collect()).unwrap();
        Corpus::new(docs.into_iter().map(Document::new).collect(), vocab).unwrap()
    }

    #[test]
    fn theta_standard_examples() {
        let c = corpus(vec![vec![], vec![0, 0]], 1);
        let h = Hyperparams::symmetric(2, 0.1, 1, 0.01).unwrap();
        let counts = rebuild_counts(&[vec![], vec![0, 0]], &c, 2).unwrap();
        let t = theta_standard(&counts, &h);
        assert_eq!(t.row(0).to_vec(), vec![0.5, 0.5]);
        assert!((t[[1, 0]] - 2.1 / 2.2).abs() < 1e-15);
        assert!((t[[1, 1]] - 0.1 / 2.2).abs() < 1e-15);
        let h1 = Hyperparams::symmetric(1, 0.1, 1, 0.01).unwrap();
        let counts = rebuild_counts(&[vec![], vec![0, 0]], &c, 1).unwrap();
        assert_eq!(
            theta_standard(&counts, &h1).column(0).to_vec(),
            vec![1.0, 1.0]
        );
    }

    #[test]
    fn phi_standard_examples() {
        // topic 0 has word counts (3, 1); topic 1 is empty
        let c = corpus(vec![vec![0, 0, 0, 1]], 2);
        let h = Hyperparams::symmetric(2, 0.1, 2, 0.01).unwrap();
        let counts = rebuild_counts(&[vec![0, 0, 0, 0]], &c, 2).unwrap();
        let p = phi_standard(&counts, &h);
        assert!((p[[0, 0]] - 3.01 / 4.02).abs() < 1e-15);
        assert!((p[[0, 1]] - 1.01 / 4.02).abs() < 1e-15);
        assert_eq!(p.row(1).to_vec(), vec![0.5, 0.5]);

        let c1 = corpus(vec![vec![0, 0]], 1);
        let h1 = Hyperparams::symmetric(3, 0.1, 1, 0.01).unwrap();
        let counts = rebuild_counts(&[vec![0, 2]], &c1, 3).unwrap();
        assert!(phi_standard(&counts, &h1)
            .iter()
            .all(|&x| (x - 1.0).abs() < 1e-15));
    }

    fn tiny_fixture() -> (Corpus, Hyperparams, FixedPhi, SamplerState) {
        let c = corpus(vec![vec![0, 1]], 2);
        let h = Hyperparams::symmetric(2, 0.1, 2, 0.01).unwrap();
        let phi = FixedPhi::new(array![[0.9, 0.1], [0.2, 0.8]]).unwrap();
        let s = SamplerState::from_assignments(vec![vec![0, 1]], &c, 2, 0).unwrap();
        (c, h, phi, s)
    }

    #[test]
    fn soft_counts_tiny_fixture_by_hand() {
        let (c, h, phi, s) = tiny_fixture();
        let m = soft_counts(&s, &c, &h, &SamplingMode::Predict(&phi)).unwrap();
        // position 0 (word 0) sees the other token on topic 1: weights (0.9*0.1, 0.2*1.1)
        let p0 = [0.09 / 0.31, 0.22 / 0.31];
        // position 1 (word 1) sees the other token on topic 0: weights (0.1*1.1, 0.8*0.1)
        let p1 = [0.11 / 0.19, 0.08 / 0.19];
        for k in 0..2 {
            assert!((m.m_dk[[0, k]] - (p0[k] + p1[k])).abs() < 1e-12);
            assert!((m.m_kv[[k, 0]] - p0[k]).abs() < 1e-12);
            assert!((m.m_kv[[k, 1]] - p1[k]).abs() < 1e-12);
        }
        let t = theta_p(&[s.clone()], &c, &h, &SamplingMode::Predict(&phi)).unwrap();
        for k in 0..2 {
            assert!((t[[0, k]] - (p0[k] + p1[k] + 0.1) / 2.2).abs() < 1e-12);
        }
        // the snapshot is untouched
        assert_eq!(
            s,
            SamplerState::from_assignments(vec![vec![0, 1]], &c, 2, 0).unwrap()
        );
    }

    #[test]
    fn phi_p_tiny_fixture_by_hand() {
        let (c, h, _, s) = tiny_fixture();
        // collapsed conditional for position 0: topic 1 holds word 1, topic 0 is empty
        let w0 = [
            (0.0 + 0.01) / (0.0 + 0.02) * 0.1,
            (0.0 + 0.01) / (1.0 + 0.02) * 1.1,
        ];
        let w1 = [
            (0.0 + 0.01) / (1.0 + 0.02) * 1.1,
            (0.0 + 0.01) / (0.0 + 0.02) * 0.1,
        ];
        let n0: f64 = w0.iter().sum();
        let n1: f64 = w1.iter().sum();
        let m_kv = [[w0[0] / n0, w1[0] / n1], [w0[1] / n0, w1[1] / n1]];
        let phi = phi_p(&s, &c, &h, &SamplingMode::Train).unwrap();
        for k in 0..2 {
            let mk = m_kv[k][0] + m_kv[k][1];
            let row = [
                (m_kv[k][0] + 0.01) / (mk + 0.02),
                (m_kv[k][1] + 0.01) / (mk + 0.02),
            ];
            let s: f64 = row.iter().sum();
            for v in 0..2 {
                assert!((phi[[k, v]] - row[v] / s).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn k1_reduction_is_exact() {
        let c = corpus(vec![vec![0, 1, 1], vec![], vec![2, 0]], 3);
        let h = Hyperparams::symmetric(1, 0.3, 3, 0.05).unwrap();
        let s = SamplerState::from_assignments(vec![vec![0, 0, 0], vec![], vec![0, 0]], &c, 1, 0)
            .unwrap();
        let m = soft_counts(&s, &c, &h, &SamplingMode::Train).unwrap();
        assert_eq!(m.m_dk.column(0).to_vec(), vec![3.0, 0.0, 2.0]);
        assert_eq!(m.m_kv.row(0).to_vec(), vec![2.0, 2.0, 1.0]);
        let tp = theta_p(&[s.clone()], &c, &h, &SamplingMode::Train).unwrap();
        assert_eq!(tp, theta_standard(&s.counts, &h));
        let pp = phi_p(&s, &c, &h, &SamplingMode::Train).unwrap();
        let ps = phi_standard(&s.counts, &h);
        for (a, b) in pp.iter().zip(ps.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn phi_p_unreachable_topic_is_prior() {
        let mut c = corpus(vec![vec![0, 1], vec![1]], 3);
        c.set_labels(
            vec!["a".into(), "b".into(), "c".into()],
            vec![vec![0], vec![0, 1]],
        )
        .unwrap();
        let h = Hyperparams::symmetric(3, 0.1, 3, 0.01).unwrap();
        let s = SamplerState::from_assignments(vec![vec![0, 0], vec![1]], &c, 3, 0).unwrap();
        let p = phi_p(&s, &c, &h, &SamplingMode::LabeledTrain).unwrap();
        for v in 0..3 {
            assert!((p[[2, v]] - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn naive_mc_examples() {
        let c = corpus(vec![vec![0, 0]], 1);
        let h = Hyperparams::symmetric(2, 0.1, 1, 0.01).unwrap();
        let a = SamplerState::from_assignments(vec![vec![0, 0]], &c, 2, 0).unwrap();
        let b = SamplerState::from_assignments(vec![vec![1, 1]], &c, 2, 0).unwrap();
        let t = theta_naive_mc(&[a.clone(), b], &h).unwrap();
        assert!((t[[0, 0]] - 0.5).abs() < 1e-15 && (t[[0, 1]] - 0.5).abs() < 1e-15);
        assert_eq!(
            theta_naive_mc(&[a.clone()], &h).unwrap(),
            theta_standard(&a.counts, &h)
        );
        assert!(theta_naive_mc(&[], &h).is_err());
        assert!(theta_p(&[], &c, &h, &SamplingMode::Train).is_err());
    }

    #[test]
    fn average_examples() {
        let x = array![[0.3, 0.7]];
        assert_eq!(
            average_estimates(&[x.clone(), x.clone()], TopicAnchor::Labeled).unwrap(),
            x
        );
        let m = average_estimates(
            &[array![[1.0, 0.0]], array![[0.0, 1.0]]],
            TopicAnchor::FixedPhi,
        )
        .unwrap();
        assert_eq!(m, array![[0.5, 0.5]]);
        assert!(
            average_estimates(&[array![[1.0]], array![[0.5, 0.5]]], TopicAnchor::Labeled).is_err()
        );
    }

    #[test]
    fn repeated_words_with_mixed_topics() {
        // same word, different current topics: memoization must not merge them
        let c = corpus(vec![vec![0, 0, 0, 1]], 2);
        let h = Hyperparams::symmetric(2, 0.1, 2, 0.01).unwrap();
        let s = SamplerState::from_assignments(vec![vec![0, 1, 0, 1]], &c, 2, 0).unwrap();
        let m = soft_counts(&s, &c, &h, &SamplingMode::Train).unwrap();
        let mut expect = [0.0; 2];
        for j in 0..4 {
            let mut t = s.clone();
            let v = c.documents[0].tokens[j] as usize;
            t.counts.remove(0, v, t.z[0][j] as usize);
            let p =
                crate::sampler::gibbs_transition(&t, &c, &h, &SamplingMode::Train, 0, j).unwrap();
            expect[0] += p[0];
            expect[1] += p[1];
        }
        assert!((m.m_dk[[0, 0]] - expect[0]).abs() < 1e-12);
        assert!((m.m_dk[[0, 1]] - expect[1]).abs() < 1e-12);
    }

    #[test]
    fn train_theta_sources_are_stochastic() {
        let docs: Vec<Vec<u32>> = (0..12)
            .map(|d| (0..10).map(|j| ((d * 3 + j) % 6) as u32).collect())
            .collect();
        let c = corpus(docs, 6);
        let h = Hyperparams::symmetric(3, 0.1, 6, 0.01).unwrap();
        let mut rng = ChainRng::seed_from_u64(4);
        let mut s = init_state(&c, &h, &SamplingMode::Train, &mut rng, 4).unwrap();
        for _ in 0..5 {
            sweep(&mut s, &c, &h, &SamplingMode::Train, &mut rng).unwrap();
        }
        for src in [
            TrainThetaSource::PhiStandard,
            TrainThetaSource::PhiP,
            TrainThetaSource::Collapsed,
        ] {
            check_row_stochastic(theta_p_train(&s, &c, &h, src).unwrap().view(), "theta").unwrap();
        }
        let est = recover_train(
            &s,
            &c,
            &h,
            &SamplingMode::Train,
            Recovery::CgsP,
            Recovery::CgsP,
        )
        .unwrap();
        est.validate().unwrap();
    }

    fn arb_instance(
    ) -> impl Strategy<Value = (Vec<Vec<u32>>, usize, usize, Vec<Vec<u32>>, f64, f64)> {
        (1usize..5, 1usize..6).prop_flat_map(|(k, v)| {
            let docs = prop::collection::vec(prop::collection::vec(0..v as u32, 0..12), 1..6);
            (
                docs,
                Just(k),
                Just(v),
                any::<u64>(),
                0.01f64..2.0,
                0.001f64..1.0,
            )
                .prop_map(move |(docs, k, v, seed, a, b)| {
                    let mut x = seed;
                    let z = docs
                        .iter()
                        .map(|d| {
                            d.iter()
                                .map(|_| {
                                    x = crate::sampler::splitmix64(x);
                                    (x % k as u64) as u32
                                })
                                .collect()
                        })
                        .collect();
                    (docs, k, v, z, a, b)
                })
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn estimators_are_normalized((docs, k, v, z, a, b) in arb_instance()) {
            let c = corpus(docs, v);
            let h = Hyperparams::symmetric(k, a, v, b).unwrap();
            let s = SamplerState::from_assignments(z, &c, k, 0).unwrap();
            let m = soft_counts(&s, &c, &h, &SamplingMode::Train).unwrap();
            prop_assert!(m.conservation_error(&c) < 1e-9);
            for mat in [
                theta_standard(&s.counts, &h),
                phi_standard(&s.counts, &h),
                theta_p(&[s.clone()], &c, &h, &SamplingMode::Train).unwrap(),
                phi_p(&s, &c, &h, &SamplingMode::Train).unwrap(),
                theta_p_train(&s, &c, &h, TrainThetaSource::PhiStandard).unwrap(),
            ] {
                prop_assert!(check_row_stochastic(mat.view(), "m").is_ok());
            }
        }
    }
}
