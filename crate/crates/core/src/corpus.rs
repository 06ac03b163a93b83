//! Document ingestion and the immutable token-id representation shared by all samplers.
//!
//! Three on-disk formats are understood:
//!
//! * plain text: UTF-8, one document per line, whitespace-delimited tokens;
//! * sparse bag-of-words: UCI style `docId wordId count` triples (1-based) plus a
//!   vocabulary file with one term per line;
//! * labels: `docId label1 label2 ...` lines, `docId` 1-based into corpus order.
//!
//! Every parser rejects malformed lines with the offending line number.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Word id within a [`Vocabulary`].
pub type WordId = u32;

/// Ordered set of unique word types with dense, 0-based ids.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    terms: Vec<String>,
    index: HashMap<String, WordId>,
}

impl Vocabulary {
    pub fn from_terms(terms: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(terms.len());
        for (id, term) in terms.iter().enumerate() {
            if index.insert(term.clone(), id as WordId).is_some() {
                return Err(Error::Argument(format!(
                    "duplicate vocabulary term {term:?}"
                )));
            }
        }
        Ok(Vocabulary { terms, index })
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn id(&self, term: &str) -> Option<WordId> {
        self.index.get(term).copied()
    }

    pub fn term(&self, id: WordId) -> Option<&str> {
        self.terms.get(id as usize).map(String::as_str)
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    fn push(&mut self, term: &str) -> WordId {
        if let Some(&id) = self.index.get(term) {
            return id;
        }
        let id = self.terms.len() as WordId;
        self.terms.push(term.to_owned());
        self.index.insert(term.to_owned(), id);
        id
    }

    /// Reads one term per line.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut vocab = Vocabulary::default();
        for (lineno, line) in text.lines().enumerate() {
            let term = line.trim();
            if term.is_empty() {
                return Err(Error::format(path, lineno + 1, "empty vocabulary term"));
            }
            if vocab.id(term).is_some() {
                return Err(Error::format(
                    path,
                    lineno + 1,
                    format!("duplicate term {term:?}"),
                ));
            }
            vocab.push(term);
        }
        Ok(vocab)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = String::new();
        for term in &self.terms {
            text.push_str(term);
            text.push('\n');
        }
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

impl TryFrom<Vec<String>> for Vocabulary {
    type Error = Error;

    fn try_from(terms: Vec<String>) -> Result<Self> {
        Vocabulary::from_terms(terms)
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(vocab: Vocabulary) -> Self {
        vocab.terms
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub tokens: Vec<WordId>,
    /// Sorted, de-duplicated label ids. Empty when the document is unlabeled.
    #[serde(default)]
    pub labels: Vec<u32>,
}

impl Document {
    pub fn new(tokens: Vec<WordId>) -> Self {
        Document {
            tokens,
            labels: Vec::new(),
        }
    }

    pub fn with_labels(tokens: Vec<WordId>, mut labels: Vec<u32>) -> Self {
        labels.sort_unstable();
        labels.dedup();
        Document { tokens, labels }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Corpus {
    pub documents: Vec<Document>,
    pub vocabulary: Vocabulary,
    #[serde(default)]
    pub label_space: Option<Vec<String>>,
    /// `label_frequencies[k]` is the number of documents whose label set contains `k`.
    #[serde(default)]
    pub label_frequencies: Option<Vec<u32>>,
}

#[derive(Debug, Clone)]
pub struct PlaintextOptions {
    pub lowercase: bool,
    pub stopwords: Option<HashSet<String>>,
    pub min_count: usize,
}

impl Default for PlaintextOptions {
    fn default() -> Self {
        PlaintextOptions {
            lowercase: false,
            stopwords: None,
            min_count: 1,
        }
    }
}

impl PlaintextOptions {
    fn normalize<'a>(&self, token: &'a str) -> std::borrow::Cow<'a, str> {
        if self.lowercase {
            std::borrow::Cow::Owned(token.to_lowercase())
        } else {
            std::borrow::Cow::Borrowed(token)
        }
    }

    fn is_stopword(&self, token: &str) -> bool {
        self.stopwords.as_ref().is_some_and(|s| s.contains(token))
    }
}

/// Reads a stopword list, one word per line; blank lines and `#` comments are skipped.
pub fn load_stopwords(path: impl AsRef<Path>) -> Result<HashSet<String>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_owned)
        .collect())
}

impl Corpus {
    pub fn new(documents: Vec<Document>, vocabulary: Vocabulary) -> Result<Self> {
        let v = vocabulary.len() as WordId;
        for (d, doc) in documents.iter().enumerate() {
            if let Some(&bad) = doc.tokens.iter().find(|&&t| t >= v) {
                return Err(Error::Range(format!(
                    "document {d} has word id {bad} >= V={v}"
                )));
            }
        }
        Ok(Corpus {
            documents,
            vocabulary,
            label_space: None,
            label_frequencies: None,
        })
    }

    pub fn num_docs(&self) -> usize {
        self.documents.len()
    }

    pub fn vocab_size(&self) -> usize {
        self.vocabulary.len()
    }

    pub fn total_tokens(&self) -> usize {
        self.documents.iter().map(Document::len).sum()
    }

    pub fn num_labels(&self) -> usize {
        self.label_space.as_ref().map_or(0, Vec::len)
    }

    pub fn is_labeled(&self) -> bool {
        self.label_space.is_some()
    }

    /// Attaches label sets over a fixed label space and recomputes label frequencies.
    pub fn set_labels(&mut self, label_space: Vec<String>, labels: Vec<Vec<u32>>) -> Result<()> {
        if labels.len() != self.documents.len() {
            return Err(Error::Argument(format!(
                "{} label sets for {} documents",
                labels.len(),
                self.documents.len()
            )));
        }
        let k = label_space.len() as u32;
        for (doc, mut set) in self.documents.iter_mut().zip(labels) {
            if let Some(&bad) = set.iter().find(|&&l| l >= k) {
                return Err(Error::Range(format!(
                    "label id {bad} >= label space size {k}"
                )));
            }
            set.sort_unstable();
            set.dedup();
            doc.labels = set;
        }
        self.label_space = Some(label_space);
        self.recount_labels();
        Ok(())
    }

    fn recount_labels(&mut self) {
        let k = self.num_labels();
        let mut freq = vec![0u32; k];
        for doc in &self.documents {
            for &l in &doc.labels {
                freq[l as usize] += 1;
            }
        }
        self.label_frequencies = Some(freq);
    }

    /// Drops labels seen in fewer than `min_docs` documents and re-indexes the label space.
    pub fn filter_rare_labels(&mut self, min_docs: u32) {
        let (Some(space), Some(freq)) = (&self.label_space, &self.label_frequencies) else {
            return;
        };
        let mut remap = vec![None; space.len()];
        let mut kept = Vec::new();
        for (old, name) in space.iter().enumerate() {
            if freq[old] >= min_docs {
                remap[old] = Some(kept.len() as u32);
                kept.push(name.clone());
            }
        }
        for doc in &mut self.documents {
            doc.labels = doc
                .labels
                .iter()
                .filter_map(|&l| remap[l as usize])
                .collect();
        }
        self.label_space = Some(kept);
        self.recount_labels();
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer(BufWriter::new(file), self)
            .map_err(|e| Error::io(path, std::io::Error::other(e)))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let corpus: Corpus = serde_json::from_str(&text)
            .map_err(|e| Error::format(path, e.line(), e.to_string()))?;
        // re-validate token ids
        let mut checked = Corpus::new(corpus.documents, corpus.vocabulary)?;
        if let Some(space) = corpus.label_space {
            let labels = checked.documents.iter().map(|d| d.labels.clone()).collect();
            checked.set_labels(space, labels)?;
        }
        Ok(checked)
    }
}

/// Loads one document per line. Vocabulary ids follow first occurrence of retained tokens;
/// `min_count` is applied corpus-wide before ids are assigned.
pub fn load_plaintext(path: impl AsRef<Path>, options: &PlaintextOptions) -> Result<Corpus> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let raw: Vec<Vec<String>> = text
        .lines()
        .map(|line| {
            line.split_whitespace()
                .map(|t| options.normalize(t).into_owned())
                .filter(|t| !options.is_stopword(t))
                .collect()
        })
        .collect();

    let mut counts: HashMap<&str, usize> = HashMap::new();
    for tok in raw.iter().flatten() {
        *counts.entry(tok.as_str()).or_default() += 1;
    }

    let mut vocab = Vocabulary::default();
    let documents: Vec<Document> = raw
        .iter()
        .map(|doc| {
            Document::new(
                doc.iter()
                    .filter(|t| counts[t.as_str()] >= options.min_count.max(1))
                    .map(|t| vocab.push(t))
                    .collect(),
            )
        })
        .collect();

    if documents.is_empty() || vocab.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    Corpus::new(documents, vocab)
}

/// Loads plain text against an existing vocabulary, dropping out-of-vocabulary tokens.
pub fn load_plaintext_with_vocab(
    path: impl AsRef<Path>,
    vocabulary: &Vocabulary,
    lowercase: bool,
) -> Result<Corpus> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let documents: Vec<Document> = text
        .lines()
        .map(|line| {
            Document::new(
                line.split_whitespace()
                    .filter_map(|t| {
                        if lowercase {
                            vocabulary.id(&t.to_lowercase())
                        } else {
                            vocabulary.id(t)
                        }
                    })
                    .collect(),
            )
        })
        .collect();
    if documents.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    Corpus::new(documents, vocabulary.clone())
}

fn parse_field<T: std::str::FromStr>(
    path: &Path,
    line: usize,
    field: &str,
    what: &str,
) -> Result<T> {
    field
        .parse()
        .map_err(|_| Error::format(path, line, format!("invalid {what} {field:?}")))
}

/// Loads UCI style sparse bag-of-words data.
///
/// Counts are expanded into repeated ids with word ids ascending inside each document.
/// An optional UCI header (up to three single-integer lines) is skipped. Documents that
/// never appear between 1 and the largest docId are kept as empty documents.
pub fn load_sparse_bow(
    docword_path: impl AsRef<Path>,
    vocab_path: impl AsRef<Path>,
) -> Result<Corpus> {
    let vocab = Vocabulary::load(vocab_path)?;
    let path = docword_path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let v = vocab.len();

    let mut header: Vec<usize> = Vec::new();
    let mut triples: Vec<(usize, usize, usize)> = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let fields: Vec<&str> = line.split_whitespace().collect();
        match fields.len() {
            0 => continue,
            1 if triples.is_empty() && header.len() < 3 => {
                header.push(parse_field(path, lineno, fields[0], "header value")?);
            }
            3 => {
                let doc: usize = parse_field(path, lineno, fields[0], "docId")?;
                let word: usize = parse_field(path, lineno, fields[1], "wordId")?;
                let count: usize = parse_field(path, lineno, fields[2], "count")?;
                if doc == 0 {
                    return Err(Error::format(path, lineno, "docId must be >= 1"));
                }
                if word == 0 || word > v {
                    return Err(Error::format(
                        path,
                        lineno,
                        format!("wordId {word} out of range 1..={v}"),
                    ));
                }
                triples.push((doc - 1, word - 1, count));
            }
            n => {
                return Err(Error::format(
                    path,
                    lineno,
                    format!("expected `docId wordId count`, found {n} fields"),
                ))
            }
        }
    }

    let mut num_docs = triples.iter().map(|t| t.0 + 1).max().unwrap_or(0);
    if let Some(&d) = header.first() {
        if header.len() == 3 {
            num_docs = num_docs.max(d);
        }
    }
    triples.sort_unstable();
    let mut documents = vec![Document::default(); num_docs];
    for (d, w, c) in triples {
        documents[d]
            .tokens
            .extend(std::iter::repeat_n(w as WordId, c));
    }
    if documents.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    Corpus::new(documents, vocab)
}

/// Writes the sparse form read by [`load_sparse_bow`] (no header).
pub fn write_sparse_bow(
    corpus: &Corpus,
    docword_path: impl AsRef<Path>,
    vocab_path: impl AsRef<Path>,
) -> Result<()> {
    corpus.vocabulary.save(vocab_path)?;
    let path = docword_path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for (d, doc) in corpus.documents.iter().enumerate() {
        let mut counts: Vec<(WordId, usize)> = Vec::new();
        let mut sorted = doc.tokens.clone();
        sorted.sort_unstable();
        for w in sorted {
            match counts.last_mut() {
                Some((last, c)) if *last == w => *c += 1,
                _ => counts.push((w, 1)),
            }
        }
        for (w, c) in counts {
            writeln!(out, "{} {} {}", d + 1, w + 1, c).map_err(|e| Error::io(path, e))?;
        }
    }
    out.flush().map_err(|e| Error::io(path, e))
}

fn read_label_lines(path: &Path, num_docs: usize) -> Result<Vec<(usize, Vec<String>)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let mut fields = line.split_whitespace();
        let Some(first) = fields.next() else { continue };
        let doc: usize = parse_field(path, idx + 1, first, "docId")?;
        if doc == 0 || doc > num_docs {
            return Err(Error::format(
                path,
                idx + 1,
                format!("docId {doc} out of range 1..={num_docs}"),
            ));
        }
        out.push((doc - 1, fields.map(str::to_owned).collect()));
    }
    Ok(out)
}

/// Attaches labels; the label space is the union of observed labels in first-seen order.
pub fn load_labels(path: impl AsRef<Path>, mut corpus: Corpus) -> Result<Corpus> {
    let path = path.as_ref();
    let lines = read_label_lines(path, corpus.num_docs())?;
    let mut space: Vec<String> = Vec::new();
    let mut ids: HashMap<String, u32> = HashMap::new();
    let mut sets = vec![Vec::new(); corpus.num_docs()];
    for (doc, names) in lines {
        for name in names {
            let id = *ids.entry(name.clone()).or_insert_with(|| {
                space.push(name);
                (space.len() - 1) as u32
            });
            sets[doc].push(id);
        }
    }
    corpus.set_labels(space, sets)?;
    Ok(corpus)
}

/// Attaches labels against a fixed label space (e.g. the training one); unknown labels are dropped.
pub fn load_labels_with_space(
    path: impl AsRef<Path>,
    mut corpus: Corpus,
    label_space: &[String],
) -> Result<Corpus> {
    let path = path.as_ref();
    let lines = read_label_lines(path, corpus.num_docs())?;
    let ids: HashMap<&str, u32> = label_space
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_str(), i as u32))
        .collect();
    let mut sets = vec![Vec::new(); corpus.num_docs()];
    for (doc, names) in lines {
        sets[doc].extend(names.iter().filter_map(|n| ids.get(n.as_str()).copied()));
    }
    corpus.set_labels(label_space.to_vec(), sets)?;
    Ok(corpus)
}

/// Splits every document by position: the first `ceil(fraction * N_d)` tokens are observed,
/// the rest held out. With `shuffle_seed` the tokens of each document are permuted first.
pub fn split_heldout(
    corpus: &Corpus,
    fraction: f64,
    shuffle_seed: Option<u64>,
) -> Result<(Corpus, Corpus)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Argument(format!(
            "split fraction {fraction} not in (0,1)"
        )));
    }
    if corpus.documents.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut rng = shuffle_seed.map(ChaCha8Rng::seed_from_u64);
    let mut observed = corpus.clone();
    let mut heldout = corpus.clone();
    for (d, doc) in corpus.documents.iter().enumerate() {
        let mut tokens = doc.tokens.clone();
        if let Some(rng) = rng.as_mut() {
            tokens.shuffle(rng);
        }
        let cut = (fraction * tokens.len() as f64).ceil() as usize;
        let rest = tokens.split_off(cut.min(tokens.len()));
        observed.documents[d].tokens = tokens;
        heldout.documents[d].tokens = rest;
    }
    Ok((observed, heldout))
}
