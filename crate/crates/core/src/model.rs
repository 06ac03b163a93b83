//! Hyperparameters, count matrices, soft counts, parameter estimates and the checkpoint container.

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};

/// Topic id of a single assignment.
pub type TopicId = u32;

/// Tolerance used for every row-stochasticity check.
pub const ROW_SUM_TOL: f64 = 1e-9;

/// Dirichlet priors: `alpha` over topics (length K), `beta` over words (length V).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    alpha: Vec<f64>,
    beta: Vec<f64>,
    alpha_sum: f64,
    beta_sum: f64,
}

impl Hyperparams {
    pub fn new(alpha: Vec<f64>, beta: Vec<f64>) -> Result<Self> {
        if alpha.is_empty() {
            return Err(Error::Argument("alpha must have at least one topic".into()));
        }
        for (name, v) in [("alpha", &alpha), ("beta", &beta)] {
            if let Some(bad) = v.iter().find(|x| !(x.is_finite() && **x > 0.0)) {
                return Err(Error::Argument(format!(
                    "{name} entries must be positive, found {bad}"
                )));
            }
        }
        let alpha_sum = alpha.iter().sum();
        let beta_sum = beta.iter().sum();
        Ok(Hyperparams {
            alpha,
            beta,
            alpha_sum,
            beta_sum,
        })
    }

    pub fn symmetric(num_topics: usize, alpha: f64, vocab_size: usize, beta: f64) -> Result<Self> {
        Self::new(vec![alpha; num_topics], vec![beta; vocab_size])
    }

    pub fn with_alpha(&self, alpha: Vec<f64>) -> Result<Self> {
        Self::new(alpha, self.beta.clone())
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn alpha_sum(&self) -> f64 {
        self.alpha_sum
    }

    pub fn beta_sum(&self) -> f64 {
        self.beta_sum
    }

    pub fn num_topics(&self) -> usize {
        self.alpha.len()
    }

    pub fn vocab_size(&self) -> usize {
        self.beta.len()
    }

    pub(crate) fn check_corpus(&self, corpus: &Corpus) -> Result<()> {
        if self.vocab_size() != corpus.vocab_size() {
            return Err(Error::Argument(format!(
                "beta has {} entries but the vocabulary has {} words",
                self.vocab_size(),
                corpus.vocab_size()
            )));
        }
        Ok(())
    }
}

/// Hard assignment tallies. `n_kv` is topic-major (row = topic).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountMatrices {
    pub n_dk: Array2<u32>,
    pub n_kv: Array2<u32>,
    pub n_k: Vec<u32>,
    pub n_d: Vec<u32>,
}

impl CountMatrices {
    pub fn zeros(num_docs: usize, num_topics: usize, vocab_size: usize) -> Self {
        CountMatrices {
            n_dk: Array2::zeros((num_docs, num_topics)),
            n_kv: Array2::zeros((num_topics, vocab_size)),
            n_k: vec![0; num_topics],
            n_d: vec![0; num_docs],
        }
    }

    pub fn num_topics(&self) -> usize {
        self.n_k.len()
    }

    #[inline]
    pub(crate) fn add(&mut self, d: usize, v: usize, k: usize) {
        self.n_dk[[d, k]] += 1;
        self.n_kv[[k, v]] += 1;
        self.n_k[k] += 1;
        self.n_d[d] += 1;
    }

    #[inline]
    pub(crate) fn remove(&mut self, d: usize, v: usize, k: usize) {
        self.n_dk[[d, k]] -= 1;
        self.n_kv[[k, v]] -= 1;
        self.n_k[k] -= 1;
        self.n_d[d] -= 1;
    }
}

/// Tallies `z` against the corpus tokens.
pub fn rebuild_counts(
    z: &[Vec<TopicId>],
    corpus: &Corpus,
    num_topics: usize,
) -> Result<CountMatrices> {
    if z.len() != corpus.num_docs() {
        return Err(Error::Argument(format!(
            "{} assignment rows for {} documents",
            z.len(),
            corpus.num_docs()
        )));
    }
    let mut counts = CountMatrices::zeros(corpus.num_docs(), num_topics, corpus.vocab_size());
    for (d, (zd, doc)) in z.iter().zip(&corpus.documents).enumerate() {
        if zd.len() != doc.len() {
            return Err(Error::Argument(format!(
                "document {d}: {} assignments for {} tokens",
                zd.len(),
                doc.len()
            )));
        }
        for (&k, &v) in zd.iter().zip(&doc.tokens) {
            if k as usize >= num_topics {
                return Err(Error::Range(format!(
                    "topic id {k} >= K={num_topics} in document {d}"
                )));
            }
            counts.add(d, v as usize, k as usize);
        }
    }
    Ok(counts)
}

/// One Gibbs sample: assignments plus the counts they imply.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SamplerState {
    pub z: Vec<Vec<TopicId>>,
    pub counts: CountMatrices,
    pub rng_seed: u64,
    pub iteration: u64,
}

impl SamplerState {
    pub fn from_assignments(
        z: Vec<Vec<TopicId>>,
        corpus: &Corpus,
        num_topics: usize,
        rng_seed: u64,
    ) -> Result<Self> {
        let counts = rebuild_counts(&z, corpus, num_topics)?;
        Ok(SamplerState {
            z,
            counts,
            rng_seed,
            iteration: 0,
        })
    }

    pub fn num_topics(&self) -> usize {
        self.counts.num_topics()
    }

    /// Rebuilds the counts from `z` and compares them with the maintained ones.
    pub fn audit(&self, corpus: &Corpus) -> Result<bool> {
        Ok(rebuild_counts(&self.z, corpus, self.num_topics())? == self.counts)
    }

    /// True when every assignment lies inside its document's label set.
    pub fn respects_labels(&self, corpus: &Corpus) -> bool {
        self.z
            .iter()
            .zip(&corpus.documents)
            .all(|(zd, doc)| zd.iter().all(|k| doc.labels.binary_search(k).is_ok()))
    }
}

/// Accumulated per-token probability vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftCounts {
    pub m_dk: Array2<f64>,
    pub m_kv: Array2<f64>,
    pub m_k: Vec<f64>,
}

impl SoftCounts {
    pub fn zeros(num_docs: usize, num_topics: usize, vocab_size: usize) -> Self {
        SoftCounts {
            m_dk: Array2::zeros((num_docs, num_topics)),
            m_kv: Array2::zeros((num_topics, vocab_size)),
            m_k: vec![0.0; num_topics],
        }
    }

    /// Largest violation of `sum_k m_dk = N_d` and `sum_v m_kv = m_k`.
    pub fn conservation_error(&self, corpus: &Corpus) -> f64 {
        let mut worst: f64 = 0.0;
        for (row, doc) in self.m_dk.rows().into_iter().zip(&corpus.documents) {
            worst = worst.max((row.sum() - doc.len() as f64).abs());
        }
        for (row, &mk) in self.m_kv.rows().into_iter().zip(&self.m_k) {
            worst = worst.max((row.sum() - mk).abs());
        }
        let total: f64 = self.m_k.iter().sum();
        worst.max((total - corpus.total_tokens() as f64).abs())
    }
}

/// How a parameter matrix was recovered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Recovery {
    Standard,
    CgsP,
    Cvb0,
}

impl std::fmt::Display for Recovery {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Recovery::Standard => "standard",
            Recovery::CgsP => "cgs_p",
            Recovery::Cvb0 => "cvb0",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EstimateMeta {
    pub theta: Recovery,
    pub phi: Recovery,
    pub chains: usize,
    pub samples_per_chain: usize,
}

/// Row-stochastic `theta` (D x K) and `phi` (K x V).
#[derive(Debug, Clone, PartialEq)]
pub struct ParamEstimate {
    pub theta: Array2<f64>,
    pub phi: Array2<f64>,
    pub meta: EstimateMeta,
}

impl ParamEstimate {
    pub fn validate(&self) -> Result<()> {
        check_row_stochastic(self.theta.view(), "theta")?;
        check_row_stochastic(self.phi.view(), "phi")
    }
}

/// Fails unless every row is nonnegative and sums to one within [`ROW_SUM_TOL`].
pub fn check_row_stochastic(m: ArrayView2<'_, f64>, what: &str) -> Result<()> {
    for (i, row) in m.rows().into_iter().enumerate() {
        if row.iter().any(|x| !(*x >= 0.0)) {
            return Err(Error::Numeric(format!(
                "{what} row {i} has a negative or NaN entry"
            )));
        }
        let s = row.sum();
        if (s - 1.0).abs() > ROW_SUM_TOL {
            return Err(Error::Numeric(format!("{what} row {i} sums to {s}")));
        }
    }
    Ok(())
}

/// Divides every row by its sum. Rows summing to zero are left untouched.
pub fn normalize_rows(m: &mut Array2<f64>) {
    for mut row in m.rows_mut() {
        let s = row.sum();
        if s > 0.0 {
            row.mapv_inplace(|x| x / s);
        }
    }
}

/// Writes a matrix as comma separated rows, values in shortest round-trip form.
pub fn write_csv(path: impl AsRef<Path>, m: ArrayView2<'_, f64>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for row in m.rows() {
        let line: Vec<String> = row.iter().map(|x| x.to_string()).collect();
        writeln!(out, "{}", line.join(",")).map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub mod checkpoint {
    //! Binary container: 8-byte magic, a version byte, a little-endian `u32` length followed
    //! by a UTF-8 JSON metadata blob, then the dense row-major little-endian blocks listed in
    //! the metadata, in order.

    use super::*;

    pub const MAGIC: &[u8; 8] = b"LDACGSP\x00";
    pub const VERSION: u8 = 1;

    #[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
    #[serde(rename_all = "lowercase")]
    pub enum Dtype {
        U32,
        F64,
    }

    #[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
    pub struct BlockSpec {
        pub name: String,
        pub dtype: Dtype,
        pub rows: usize,
        pub cols: usize,
    }

    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    pub struct Metadata {
        pub kind: String,
        pub blocks: Vec<BlockSpec>,
        #[serde(default)]
        pub extra: serde_json::Value,
    }

    #[derive(Debug, Clone, PartialEq)]
    pub enum Block {
        U32(Array2<u32>),
        F64(Array2<f64>),
    }

    impl Block {
        fn spec(&self, name: &str) -> BlockSpec {
            let (dtype, (rows, cols)) = match self {
                Block::U32(a) => (Dtype::U32, a.dim()),
                Block::F64(a) => (Dtype::F64, a.dim()),
            };
            BlockSpec {
                name: name.to_owned(),
                dtype,
                rows,
                cols,
            }
        }

        pub fn into_u32(self, name: &str) -> Result<Array2<u32>> {
            match self {
                Block::U32(a) => Ok(a),
                Block::F64(_) => Err(Error::Checkpoint(format!("block {name} is not u32"))),
            }
        }

        pub fn into_f64(self, name: &str) -> Result<Array2<f64>> {
            match self {
                Block::F64(a) => Ok(a),
                Block::U32(_) => Err(Error::Checkpoint(format!("block {name} is not f64"))),
            }
        }
    }

    /// A decoded container.
    #[derive(Debug, Clone)]
    pub struct Container {
        pub kind: String,
        pub extra: serde_json::Value,
        pub blocks: Vec<(String, Block)>,
    }

    impl Container {
        pub fn take(&mut self, name: &str) -> Result<Block> {
            let pos = self
                .blocks
                .iter()
                .position(|(n, _)| n == name)
                .ok_or_else(|| Error::Checkpoint(format!("missing block {name}")))?;
            Ok(self.blocks.remove(pos).1)
        }

        pub fn expect_kind(&self, kind: &str) -> Result<()> {
            if self.kind != kind {
                return Err(Error::Incompatible(format!(
                    "expected a {kind} checkpoint, found {}",
                    self.kind
                )));
            }
            Ok(())
        }
    }

    pub fn write(
        path: impl AsRef<Path>,
        kind: &str,
        extra: serde_json::Value,
        blocks: &[(&str, Block)],
    ) -> Result<()> {
        let path = path.as_ref();
        let meta = Metadata {
            kind: kind.to_owned(),
            blocks: blocks.iter().map(|(n, b)| b.spec(n)).collect(),
            extra,
        };
        let meta_bytes = serde_json::to_vec(&meta).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        out.write_all(MAGIC).map_err(io)?;
        out.write_all(&[VERSION]).map_err(io)?;
        out.write_all(&(meta_bytes.len() as u32).to_le_bytes())
            .map_err(io)?;
        out.write_all(&meta_bytes).map_err(io)?;
        for (_, block) in blocks {
            match block {
                Block::U32(a) => {
                    for x in a.iter() {
                        out.write_all(&x.to_le_bytes()).map_err(io)?;
                    }
                }
                Block::F64(a) => {
                    for x in a.iter() {
                        out.write_all(&x.to_bits().to_le_bytes()).map_err(io)?;
                    }
                }
            }
        }
        out.flush().map_err(io)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Container> {
        let path = path.as_ref();
        let mut bytes = Vec::new();
        fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        decode(&bytes)
    }

    pub fn decode(bytes: &[u8]) -> Result<Container> {
        let short = || Error::Checkpoint("truncated checkpoint".into());
        if bytes.len() < 13 || &bytes[..8] != MAGIC {
            return Err(Error::Checkpoint("bad magic bytes".into()));
        }
        if bytes[8] != VERSION {
            return Err(Error::Incompatible(format!(
                "checkpoint version {} but this build reads version {VERSION}",
                bytes[8]
            )));
        }
        let meta_len = u32::from_le_bytes(bytes[9..13].try_into().unwrap()) as usize;
        let meta_end = 13usize.checked_add(meta_len).ok_or_else(short)?;
        let meta_bytes = bytes.get(13..meta_end).ok_or_else(short)?;
        let meta: Metadata =
            serde_json::from_slice(meta_bytes).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let mut offset = meta_end;
        let mut blocks = Vec::with_capacity(meta.blocks.len());
        for spec in meta.blocks {
            let n = spec.rows.checked_mul(spec.cols).ok_or_else(short)?;
            let width = match spec.dtype {
                Dtype::U32 => 4,
                Dtype::F64 => 8,
            };
            let end = offset.checked_add(n * width).ok_or_else(short)?;
            let raw = bytes.get(offset..end).ok_or_else(short)?;
            offset = end;
            let block = match spec.dtype {
                Dtype::U32 => Block::U32(
                    Array2::from_shape_vec(
                        (spec.rows, spec.cols),
                        raw.chunks_exact(4)
                            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
                            .collect(),
                    )
                    .map_err(|e| Error::Checkpoint(e.to_string()))?,
                ),
                Dtype::F64 => Block::F64(
                    Array2::from_shape_vec(
                        (spec.rows, spec.cols),
                        raw.chunks_exact(8)
                            .map(|c| f64::from_bits(u64::from_le_bytes(c.try_into().unwrap())))
                            .collect(),
                    )
                    .map_err(|e| Error::Checkpoint(e.to_string()))?,
                ),
            };
            blocks.push((spec.name, block));
        }
        if offset != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes after last block".into()));
        }
        Ok(Container {
            kind: meta.kind,
            extra: meta.extra,
            blocks,
        })
    }

    fn row(v: Vec<u32>) -> Array2<u32> {
        let n = v.len();
        Array2::from_shape_vec((1, n), v).expect("row shape")
    }

    #[derive(Serialize, Deserialize)]
    struct StateExtra {
        rng_seed: u64,
        iteration: u64,
    }

    pub fn save_state(path: impl AsRef<Path>, state: &SamplerState) -> Result<()> {
        let lengths = row(state.z.iter().map(|zd| zd.len() as u32).collect());
        let flat = row(state.z.iter().flatten().copied().collect());
        let extra = serde_json::to_value(StateExtra {
            rng_seed: state.rng_seed,
            iteration: state.iteration,
        })
        .expect("serializable");
        write(
            path,
            "sampler_state",
            extra,
            &[
                ("doc_lengths", Block::U32(lengths)),
                ("z", Block::U32(flat)),
                ("n_dk", Block::U32(state.counts.n_dk.clone())),
                ("n_kv", Block::U32(state.counts.n_kv.clone())),
            ],
        )
    }

    pub fn load_state(path: impl AsRef<Path>) -> Result<SamplerState> {
        let mut c = read(path)?;
        c.expect_kind("sampler_state")?;
        let extra: StateExtra = serde_json::from_value(c.extra.clone())
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        let lengths = c.take("doc_lengths")?.into_u32("doc_lengths")?;
        let flat = c.take("z")?.into_u32("z")?;
        let n_dk = c.take("n_dk")?.into_u32("n_dk")?;
        let n_kv = c.take("n_kv")?.into_u32("n_kv")?;
        let total: usize = lengths.iter().map(|&l| l as usize).sum();
        if flat.len() != total || n_dk.nrows() != lengths.len() || n_dk.ncols() != n_kv.nrows() {
            return Err(Error::Checkpoint(
                "inconsistent sampler state shapes".into(),
            ));
        }
        let mut z = Vec::with_capacity(lengths.len());
        let mut it = flat.iter().copied();
        for &len in lengths.iter() {
            z.push(it.by_ref().take(len as usize).collect());
        }
        let n_k = n_kv.rows().into_iter().map(|r| r.sum()).collect();
        let n_d = n_dk.rows().into_iter().map(|r| r.sum()).collect();
        Ok(SamplerState {
            z,
            counts: CountMatrices {
                n_dk,
                n_kv,
                n_k,
                n_d,
            },
            rng_seed: extra.rng_seed,
            iteration: extra.iteration,
        })
    }

    pub fn save_estimate(path: impl AsRef<Path>, est: &ParamEstimate) -> Result<()> {
        let extra = serde_json::to_value(est.meta).expect("serializable");
        write(
            path,
            "param_estimate",
            extra,
            &[
                ("theta", Block::F64(est.theta.clone())),
                ("phi", Block::F64(est.phi.clone())),
            ],
        )
    }

    pub fn load_estimate(path: impl AsRef<Path>) -> Result<ParamEstimate> {
        let mut c = read(path)?;
        c.expect_kind("param_estimate")?;
        let meta: EstimateMeta = serde_json::from_value(c.extra.clone())
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        let theta = c.take("theta")?.into_f64("theta")?;
        let phi = c.take("phi")?.into_f64("phi")?;
        if theta.ncols() != phi.nrows() {
            return Err(Error::Checkpoint("theta and phi disagree on K".into()));
        }
        Ok(ParamEstimate { theta, phi, meta })
    }
}
