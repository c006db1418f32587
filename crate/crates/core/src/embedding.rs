//! Vocabulary and word vectors.
//!
//! Tables come from a text file (`word v1 v2 ... vd` per line, optional
//! `count dim` header) or from the small skip-gram trainer below. Three
//! special rows always exist: PAD (all zero), OOV (mean of the word rows) and
//! NUM (numerals).

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numerics::{dot, Matrix, Vector};
use crate::preprocess::TokenSequence;

pub const PAD: &str = "<pad>";
pub const OOV: &str = "<oov>";
pub const NUM: &str = "<num>";

pub const PAD_ID: usize = 0;
pub const OOV_ID: usize = 1;
pub const NUM_ID: usize = 2;
const N_SPECIALS: usize = 3;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Specials first, then `words` in order. Rejects duplicates and reserved markers.
    pub fn from_words(words: impl IntoIterator<Item = String>) -> Result<Self> {
        let mut vocab = Vocabulary {
            words: Vec::new(),
            index: HashMap::new(),
        };
        for s in [PAD, OOV, NUM] {
            vocab.index.insert(s.to_string(), vocab.words.len());
            vocab.words.push(s.to_string());
        }
        for w in words {
            if [PAD, OOV, NUM].contains(&w.as_str()) {
                return Err(Error::invalid(format!("`{w}` is a reserved vocabulary marker")));
            }
            if vocab.index.contains_key(&w) {
                return Err(Error::invalid(format!("duplicate word `{w}`")));
            }
            vocab.index.insert(w.clone(), vocab.words.len());
            vocab.words.push(w);
        }
        Ok(vocab)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    /// Number of ordinary (non-special) words.
    pub fn content_len(&self) -> usize {
        self.words.len() - N_SPECIALS
    }

    pub fn get(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn contains(&self, word: &str) -> bool {
        self.index.contains_key(word)
    }

    /// Index into the content words only; also serves as the rarity rank.
    pub fn content_index(&self, word: &str) -> Option<usize> {
        self.get(word).filter(|&i| i >= N_SPECIALS).map(|i| i - N_SPECIALS)
    }

    pub fn word(&self, id: usize) -> &str {
        &self.words[id]
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn content_words(&self) -> impl Iterator<Item = &str> {
        self.words[N_SPECIALS..].iter().map(String::as_str)
    }

    pub fn is_special(id: usize) -> bool {
        id < N_SPECIALS
    }

    /// Id for a token; anything unknown maps to OOV.
    pub fn id_or_oov(&self, word: &str) -> usize {
        self.get(word).unwrap_or(OOV_ID)
    }

    pub fn ids(&self, seq: &TokenSequence) -> Vec<usize> {
        seq.texts().map(|w| self.id_or_oov(w)).collect()
    }

    /// SHA-256 over the ordered word list, hex encoded.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for w in &self.words {
            h.update(w.as_bytes());
            h.update(b"\n");
        }
        hex::encode(h.finalize())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    vocab: Vocabulary,
    vectors: Matrix,
}

impl EmbeddingTable {
    /// Builds a table from content-word rows. `num_row` defaults to the OOV mean.
    pub fn new(words: Vec<String>, rows: Vec<Vec<f64>>, num_row: Option<Vec<f64>>) -> Result<Self> {
        if words.len() != rows.len() {
            return Err(Error::shape("EmbeddingTable::new", "rows", words.len(), rows.len()));
        }
        if words.is_empty() {
            return Err(Error::Empty("embedding words"));
        }
        let dim = rows[0].len();
        if dim == 0 {
            return Err(Error::invalid("embedding dimension must be positive"));
        }
        if rows.iter().chain(num_row.iter()).any(|r| r.len() != dim) {
            return Err(Error::invalid("embedding rows have inconsistent dimension"));
        }
        if rows.iter().flatten().chain(num_row.iter().flatten()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("embedding contains non-finite values"));
        }
        let vocab = Vocabulary::from_words(words)?;
        let mut vectors = Matrix::zeros(vocab.len(), dim);
        let mut mean = vec![0.0; dim];
        for (i, r) in rows.iter().enumerate() {
            vectors.row_mut(N_SPECIALS + i).copy_from_slice(r);
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v;
            }
        }
        let n = rows.len() as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        vectors.row_mut(OOV_ID).copy_from_slice(&mean);
        vectors.row_mut(NUM_ID).copy_from_slice(num_row.as_deref().unwrap_or(&mean));
        Ok(EmbeddingTable { vocab, vectors })
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn dim(&self) -> usize {
        self.vectors.cols()
    }

    pub fn vectors(&self) -> &Matrix {
        &self.vectors
    }

    pub fn row(&self, id: usize) -> &[f64] {
        self.vectors.row(id)
    }

    /// Mutable access to one word row. The PAD row is never handed out.
    pub fn row_mut(&mut self, id: usize) -> Option<&mut [f64]> {
        (id != PAD_ID).then(|| self.vectors.row_mut(id))
    }

    pub fn vector(&self, word: &str) -> Result<Vector> {
        let id = self
            .vocab
            .get(word)
            .ok_or_else(|| Error::OutOfVocabulary(word.to_string()))?;
        Ok(Vector::from(self.row(id)))
    }

    /// One vector per token; unknown tokens take the OOV row.
    pub fn embed(&self, seq: &TokenSequence) -> Vec<Vector> {
        seq.texts()
            .map(|w| Vector::from(self.row(self.vocab.id_or_oov(w))))
            .collect()
    }

    pub fn embed_ids(&self, ids: &[usize]) -> Vec<Vector> {
        ids.iter().map(|&i| Vector::from(self.row(i))).collect()
    }

    pub fn cosine(&self, a: &str, b: &str) -> Result<f64> {
        let va = self.row(self.vocab.get(a).ok_or_else(|| Error::OutOfVocabulary(a.to_string()))?);
        let vb = self.row(self.vocab.get(b).ok_or_else(|| Error::OutOfVocabulary(b.to_string()))?);
        let na = dot(va, va).sqrt();
        let nb = dot(vb, vb).sqrt();
        if na == 0.0 {
            return Err(Error::ZeroVector(a.to_string()));
        }
        if nb == 0.0 {
            return Err(Error::ZeroVector(b.to_string()));
        }
        // symmetric by construction: dot() is evaluated in the same order for (a,b) and (b,a)
        let c = dot(va, vb) / (na * nb);
        Ok(c.clamp(-1.0, 1.0))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path)?;
        Self::read(BufReader::new(file), path)
    }

    pub fn read(reader: impl BufRead, path: &Path) -> Result<Self> {
        let parse_err = |line: usize, message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let mut words = Vec::new();
        let mut rows = Vec::new();
        let mut num_row = None;
        let mut seen = HashMap::new();
        let mut dim: Option<usize> = None;
        let mut declared: Option<usize> = None;
        for (i, line) in reader.lines().enumerate() {
            let lineno = i + 1;
            let line = line?;
            let trimmed = line.trim_end_matches(['\r', '\n']);
            if trimmed.trim().is_empty() {
                continue;
            }
            let mut fields = trimmed.split_whitespace();
            let word = fields.next().expect("nonempty line");
            let rest: Vec<&str> = fields.collect();
            if lineno == 1 && rest.len() == 1 {
                if let (Ok(count), Ok(d)) = (word.parse::<usize>(), rest[0].parse::<usize>()) {
                    declared = Some(count);
                    dim = Some(d);
                    continue;
                }
            }
            let values = rest
                .iter()
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| parse_err(lineno, format!("bad float: {e}")))?;
            if values.iter().any(|v| !v.is_finite()) {
                return Err(parse_err(lineno, "non-finite value".into()));
            }
            match dim {
                None => {
                    if values.is_empty() {
                        return Err(parse_err(lineno, "row has no values".into()));
                    }
                    dim = Some(values.len());
                }
                Some(d) if d != values.len() => {
                    return Err(parse_err(
                        lineno,
                        format!("expected {d} values, found {}", values.len()),
                    ));
                }
                _ => {}
            }
            if let Some(prev) = seen.insert(word.to_string(), lineno) {
                return Err(parse_err(lineno, format!("duplicate word `{word}` (first at line {prev})")));
            }
            match word {
                NUM => num_row = Some(values),
                PAD | OOV => return Err(parse_err(lineno, format!("`{word}` is reserved"))),
                _ => {
                    words.push(word.to_string());
                    rows.push(values);
                }
            }
        }
        if let Some(count) = declared {
            let got = words.len() + usize::from(num_row.is_some());
            if count != got {
                return Err(parse_err(1, format!("header declares {count} rows, file has {got}")));
            }
        }
        Self::new(words, rows, num_row)
    }

    /// Writes `count dim` then the NUM row and every word row in vocabulary order.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        f.write_all(self.to_text().as_bytes())?;
        f.flush()?;
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{} {}", self.vocab.len() - 2, self.dim());
        for id in NUM_ID..self.vocab.len() {
            out.push_str(self.vocab.word(id));
            for v in self.row(id) {
                let _ = write!(out, " {v}");
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkipGramConfig {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub seed: u64,
    pub learning_rate: f64,
    pub min_count: usize,
}

impl Default for SkipGramConfig {
    fn default() -> Self {
        SkipGramConfig {
            dim: 200,
            window: 5,
            negatives: 5,
            epochs: 5,
            seed: 1,
            learning_rate: 0.025,
            min_count: 1,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SkipGramOutcome {
    pub table: EmbeddingTable,
    /// Mean negative-sampling loss per (center, context) pair, one entry per epoch.
    pub epoch_losses: Vec<f64>,
}

/// Cumulative unigram^0.75 distribution for negative draws.
struct NoiseSampler {
    cumulative: Vec<f64>,
    ids: Vec<usize>,
}

impl NoiseSampler {
    fn new(counts: &[(usize, usize)]) -> Self {
        let mut acc = 0.0;
        let mut cumulative = Vec::with_capacity(counts.len());
        let mut ids = Vec::with_capacity(counts.len());
        for &(id, c) in counts {
            acc += (c as f64).powf(0.75);
            cumulative.push(acc);
            ids.push(id);
        }
        NoiseSampler { cumulative, ids }
    }

    fn sample(&self, rng: &mut impl Rng) -> usize {
        let total = *self.cumulative.last().expect("nonempty");
        let u = rng.gen::<f64>() * total;
        let pos = self.cumulative.partition_point(|&c| c <= u);
        self.ids[pos.min(self.ids.len() - 1)]
    }
}

fn log_sigmoid(x: f64) -> f64 {
    // ln σ(x) = -ln(1 + e^{-x}), stable for both signs
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// Skip-gram with negative sampling, single-threaded and deterministic in `seed`.
///
/// Vocabulary is ordered by descending frequency (ties alphabetical), which
/// also fixes the rarity ranks used by word segmentation.
pub fn train_skipgram(corpus: &[TokenSequence], cfg: &SkipGramConfig) -> Result<SkipGramOutcome> {
    if cfg.dim < 2 {
        return Err(Error::invalid("skip-gram dimension must be at least 2"));
    }
    if cfg.window == 0 || cfg.epochs == 0 {
        return Err(Error::invalid("window and epochs must be positive"));
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for seq in corpus {
        for w in seq.texts() {
            if w != PAD && w != OOV {
                *counts.entry(w).or_default() += 1;
            }
        }
    }
    let mut ordered: Vec<(&str, usize)> = counts
        .into_iter()
        .filter(|&(w, c)| c >= cfg.min_count && w != NUM)
        .collect();
    if ordered.is_empty() {
        return Err(Error::Empty("skip-gram corpus"));
    }
    ordered.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let num_count = corpus.iter().flat_map(|s| s.texts()).filter(|&w| w == NUM).count();

    let vocab = Vocabulary::from_words(ordered.iter().map(|(w, _)| w.to_string()))?;
    let n = vocab.len();
    let d = cfg.dim;

    let mut noise_counts: Vec<(usize, usize)> = ordered
        .iter()
        .enumerate()
        .map(|(i, &(_, c))| (N_SPECIALS + i, c))
        .collect();
    if num_count >= cfg.min_count.max(1) {
        noise_counts.insert(0, (NUM_ID, num_count));
    }
    let noise = NoiseSampler::new(&noise_counts);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut input = vec![0.0; n * d];
    for id in 0..n {
        if id == PAD_ID || id == OOV_ID {
            continue;
        }
        for v in &mut input[id * d..(id + 1) * d] {
            *v = (rng.gen::<f64>() - 0.5) / d as f64;
        }
    }
    let mut output = vec![0.0; n * d];

    let sentences: Vec<Vec<usize>> = corpus
        .iter()
        .map(|s| {
            s.texts()
                .filter_map(|w| vocab.get(w).filter(|&i| i != PAD_ID && i != OOV_ID))
                .filter(|&i| i != NUM_ID || num_count >= cfg.min_count.max(1))
                .collect()
        })
        .collect();
    let pairs_per_epoch: usize = sentences
        .iter()
        .map(|s| {
            (0..s.len())
                .map(|i| i.min(cfg.window) + (s.len() - 1 - i).min(cfg.window))
                .sum::<usize>()
        })
        .sum();
    if pairs_per_epoch == 0 {
        return Err(Error::invalid("skip-gram corpus has no (center, context) pairs"));
    }
    let total_pairs = (pairs_per_epoch * cfg.epochs) as f64;

    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut processed = 0usize;
    let mut grad_in = vec![0.0; d];
    for _ in 0..cfg.epochs {
        let mut loss = 0.0;
        for sent in &sentences {
            for (pos, &center) in sent.iter().enumerate() {
                let lo = pos.saturating_sub(cfg.window);
                let hi = (pos + cfg.window).min(sent.len() - 1);
                for (cpos, &context) in sent.iter().enumerate().take(hi + 1).skip(lo) {
                    if cpos == pos {
                        continue;
                    }
                    let lr = cfg.learning_rate * (1.0 - processed as f64 / total_pairs).max(1e-4);
                    processed += 1;
                    grad_in.iter_mut().for_each(|g| *g = 0.0);
                    let cin = center * d;
                    for k in 0..=cfg.negatives {
                        let (target, label) = if k == 0 {
                            (context, 1.0)
                        } else {
                            let t = noise.sample(&mut rng);
                            if t == context {
                                continue;
                            }
                            (t, 0.0)
                        };
                        let tout = target * d;
                        let score = dot(&input[cin..cin + d], &output[tout..tout + d]);
                        loss -= if label > 0.0 { log_sigmoid(score) } else { log_sigmoid(-score) };
                        let g = (label - crate::numerics::sigmoid_scalar(score)) * lr;
                        for j in 0..d {
                            grad_in[j] += g * output[tout + j];
                            output[tout + j] += g * input[cin + j];
                        }
                    }
                    for j in 0..d {
                        input[cin + j] += grad_in[j];
                    }
                }
            }
        }
        epoch_losses.push(loss / pairs_per_epoch as f64);
    }

    let rows: Vec<Vec<f64>> = (N_SPECIALS..n).map(|id| input[id * d..(id + 1) * d].to_vec()).collect();
    let num_row = (num_count >= cfg.min_count.max(1)).then(|| input[NUM_ID * d..(NUM_ID + 1) * d].to_vec());
    let words = vocab.words()[N_SPECIALS..].to_vec();
    Ok(SkipGramOutcome {
        table: EmbeddingTable::new(words, rows, num_row)?,
        epoch_losses,
    })
}
