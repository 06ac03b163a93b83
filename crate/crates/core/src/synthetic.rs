//! Corpora drawn from the generative model, for tests and benchmarks.

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Poisson};

use crate::corpus::{Corpus, Document, Vocabulary};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LdaSpec {
    pub docs: usize,
    pub vocab: usize,
    pub topics: usize,
    pub mean_length: f64,
    pub alpha: f64,
    pub beta: f64,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct Synthetic {
    pub corpus: Corpus,
    pub phi: Array2<f64>,
    pub theta: Array2<f64>,
}

fn dirichlet<R: Rng + ?Sized>(conc: &[f64], rng: &mut R) -> Result<Vec<f64>> {
    let mut x: Vec<f64> = conc
        .iter()
        .map(|&a| Gamma::new(a, 1.0).map(|g| g.sample(rng)))
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Argument(e.to_string()))?;
    let s: f64 = x.iter().sum();
    if s > 0.0 {
        x.iter_mut().for_each(|v| *v /= s);
    } else {
        // every gamma draw underflowed; fall back to a random vertex
        let i = rng.random_range(0..x.len());
        x.iter_mut()
            .enumerate()
            .for_each(|(j, v)| *v = (j == i) as u8 as f64);
    }
    Ok(x)
}

fn categorical<R: Rng + ?Sized>(p: &[f64], rng: &mut R) -> usize {
    let mut u: f64 = rng.random();
    for (i, &x) in p.iter().enumerate() {
        if u < x {
            return i;
        }
        u -= x;
    }
    p.len() - 1
}

fn vocabulary(v: usize) -> Vocabulary {
    Vocabulary::from_terms((0..v).map(|i| format!("w{i}")).collect()).expect("distinct terms")
}

/// Draws phi, theta and documents from LDA with symmetric priors. Lengths are
/// Poisson(`mean_length`), at least 1.
pub fn generate_lda(spec: &LdaSpec) -> Result<Synthetic> {
    if spec.docs == 0 || spec.vocab == 0 || spec.topics == 0 {
        return Err(Error::Argument(
            "synthetic corpus dimensions must be positive".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut phi = Array2::zeros((spec.topics, spec.vocab));
    for k in 0..spec.topics {
        let row = dirichlet(&vec![spec.beta; spec.vocab], &mut rng)?;
        phi.row_mut(k).iter_mut().zip(row).for_each(|(a, b)| *a = b);
    }
    let lengths = Poisson::new(spec.mean_length).map_err(|e| Error::Argument(e.to_string()))?;
    let mut theta = Array2::zeros((spec.docs, spec.topics));
    let mut documents = Vec::with_capacity(spec.docs);
    for d in 0..spec.docs {
        let th = dirichlet(&vec![spec.alpha; spec.topics], &mut rng)?;
        let n = (lengths.sample(&mut rng) as usize).max(1);
        let tokens = (0..n)
            .map(|_| {
                let k = categorical(&th, &mut rng);
                categorical(phi.row(k).as_slice().unwrap(), &mut rng) as u32
            })
            .collect();
        theta
            .row_mut(d)
            .iter_mut()
            .zip(&th)
            .for_each(|(a, b)| *a = *b);
        documents.push(Document::new(tokens));
    }
    Ok(Synthetic {
        corpus: Corpus::new(documents, vocabulary(spec.vocab))?,
        phi,
        theta,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabeledSpec {
    pub docs: usize,
    pub vocab: usize,
    pub labels: usize,
    /// Largest number of labels per document.
    pub max_labels: usize,
    pub mean_length: f64,
    /// Dirichlet concentration of each label's word distribution.
    pub beta: f64,
    pub seed: u64,
}

/// Multi-label documents: label frequencies follow a Zipf-like law, each document mixes its
/// labels' word distributions with Dirichlet(1) weights.
pub fn generate_labeled(spec: &LabeledSpec) -> Result<Synthetic> {
    if spec.docs == 0 || spec.vocab == 0 || spec.labels == 0 || spec.max_labels == 0 {
        return Err(Error::Argument(
            "synthetic corpus dimensions must be positive".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut phi = Array2::zeros((spec.labels, spec.vocab));
    for k in 0..spec.labels {
        let row = dirichlet(&vec![spec.beta; spec.vocab], &mut rng)?;
        phi.row_mut(k).iter_mut().zip(row).for_each(|(a, b)| *a = b);
    }
    let mut popularity: Vec<f64> = (0..spec.labels).map(|k| 1.0 / (k as f64 + 1.0)).collect();
    let z: f64 = popularity.iter().sum();
    popularity.iter_mut().for_each(|p| *p /= z);
    let lengths = Poisson::new(spec.mean_length).map_err(|e| Error::Argument(e.to_string()))?;
    let mut theta = Array2::zeros((spec.docs, spec.labels));
    let mut documents = Vec::with_capacity(spec.docs);
    for d in 0..spec.docs {
        let count = rng.random_range(1..=spec.max_labels.min(spec.labels));
        let mut labels: Vec<u32> = Vec::with_capacity(count);
        while labels.len() < count {
            let l = categorical(&popularity, &mut rng) as u32;
            if !labels.contains(&l) {
                labels.push(l);
            }
        }
        let weights = dirichlet(&vec![1.0; count], &mut rng)?;
        let n = (lengths.sample(&mut rng) as usize).max(1);
        let tokens = (0..n)
            .map(|_| {
                let k = labels[categorical(&weights, &mut rng)] as usize;
                categorical(phi.row(k).as_slice().unwrap(), &mut rng) as u32
            })
            .collect();
        for (&l, &w) in labels.iter().zip(&weights) {
            theta[[d, l as usize]] = w;
        }
        documents.push(Document::with_labels(tokens, labels));
    }
    let label_lists: Vec<Vec<u32>> = documents.iter().map(|d| d.labels.clone()).collect();
    let mut corpus = Corpus::new(documents, vocabulary(spec.vocab))?;
    corpus.set_labels(
        (0..spec.labels).map(|k| format!("label{k}")).collect(),
        label_lists,
    )?;
    Ok(Synthetic { corpus, phi, theta })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::check_row_stochastic;

    #[test]
    fn lda_shapes_and_determinism() {
        let spec = LdaSpec {
            docs: 20,
            vocab: 30,
            topics: 4,
            mean_length: 25.0,
            alpha: 0.1,
            beta: 0.01,
            seed: 1,
        };
        let a = generate_lda(&spec).unwrap();
        let b = generate_lda(&spec).unwrap();
        assert_eq!(a.corpus, b.corpus);
        assert_eq!(a.corpus.num_docs(), 20);
        assert_eq!(a.phi.dim(), (4, 30));
        check_row_stochastic(a.phi.view(), "phi").unwrap();
        check_row_stochastic(a.theta.view(), "theta").unwrap();
        assert!(a.corpus.documents.iter().all(|d| !d.is_empty()));
    }

    #[test]
    fn labeled_docs_have_labels() {
        let s = generate_labeled(&LabeledSpec {
            docs: 50,
            vocab: 40,
            labels: 6,
            max_labels: 3,
            mean_length: 30.0,
            beta: 0.1,
            seed: 2,
        })
        .unwrap();
        assert!(s.corpus.is_labeled());
        assert_eq!(s.corpus.num_labels(), 6);
        for d in &s.corpus.documents {
            assert!((1..=3).contains(&d.labels.len()));
        }
    }
}
