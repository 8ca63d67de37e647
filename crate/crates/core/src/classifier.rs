//! Supervised linear text classifier in the fastText style.
//!
//! A text becomes a bag of hashed character n-grams; the hidden vector is
//! the count-weighted mean of the n-gram embeddings, and a linear layer
//! followed by softmax gives label probabilities.
//!
//! As in fastText, embeddings start uniform in `[-1/dim, 1/dim)` and the
//! output layer starts at zero. Embedding rows are stored sparsely: a row
//! is materialised when it first receives an update, and until then its
//! value is derived from the model's init seed and the bucket id. The model
//! is the dense `hash_buckets x embed_dim` matrix in all but storage.

use std::collections::HashMap;
use std::fs;
use std::io::{self, Cursor, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use nohash_hasher::BuildNoHashHasher;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;
use xxhash_rust::xxh3::{xxh3_64, xxh3_64_with_seed};

use crate::prepare::rng;

pub const MODEL_MAGIC: &[u8; 8] = b"MDFGFT01";

#[derive(Debug, thiserror::Error)]
pub enum ClassifierError {
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("example {0} has no label")]
    LabelMissing(usize),
    #[error("model is not binary with a designated positive label")]
    NotBinary,
    #[error("unknown label {0:?}")]
    UnknownLabel(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("corrupt model file: {0}")]
    CorruptModel(String),
    #[error("unsupported model format (magic {0:?})")]
    VersionMismatch(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    pub min_n: usize,
    pub max_n: usize,
    pub hash_buckets: u32,
    pub embed_dim: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig { min_n: 1, max_n: 3, hash_buckets: 1 << 21, embed_dim: 64 }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<(), ClassifierError> {
        if self.min_n == 0 || self.min_n > self.max_n {
            return Err(ClassifierError::InvalidConfig(format!("bad n-gram range {}..={}", self.min_n, self.max_n)));
        }
        if self.hash_buckets == 0 || self.embed_dim == 0 {
            return Err(ClassifierError::InvalidConfig("hash_buckets and embed_dim must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainParams {
    pub epochs: usize,
    /// Initial learning rate, decayed linearly to zero over training.
    pub lr: f64,
    pub seed: u64,
    /// Buckets seen in fewer training examples than this are ignored.
    pub min_count: usize,
}

impl Default for TrainParams {
    fn default() -> Self {
        TrainParams { epochs: 5, lr: 0.1, seed: 42, min_count: 1 }
    }
}

impl TrainParams {
    pub fn validate(&self) -> Result<(), ClassifierError> {
        if self.epochs == 0 {
            return Err(ClassifierError::InvalidConfig("epochs must be >= 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(ClassifierError::InvalidConfig("lr must be positive".into()));
        }
        Ok(())
    }
}

/// Bucket -> count, sorted by bucket.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SparseVector {
    pub entries: Vec<(u32, u32)>,
}

impl SparseVector {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn total(&self) -> u64 {
        self.entries.iter().map(|&(_, c)| c as u64).sum()
    }
}

/// Hashes every character n-gram (n in the configured range) of the NFC
/// form of `text` into a bucket and counts them.
pub fn featurize(text: &str, cfg: &FeatureConfig) -> SparseVector {
    let normalized: std::borrow::Cow<str> =
        if text.is_ascii() { text.into() } else { text.nfc().collect::<String>().into() };
    let offsets: Vec<usize> = normalized.char_indices().map(|(i, _)| i).chain([normalized.len()]).collect();
    let chars = offsets.len() - 1;
    let mut buckets = Vec::new();
    for n in cfg.min_n..=cfg.max_n {
        if n > chars {
            break;
        }
        for i in 0..=chars - n {
            let gram = &normalized.as_bytes()[offsets[i]..offsets[i + n]];
            buckets.push((xxh3_64_with_seed(gram, n as u64) % cfg.hash_buckets as u64) as u32);
        }
    }
    buckets.sort_unstable();
    let mut entries: Vec<(u32, u32)> = Vec::new();
    for b in buckets {
        match entries.last_mut() {
            Some((last, c)) if *last == b => *c += 1,
            _ => entries.push((b, 1)),
        }
    }
    SparseVector { entries }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prediction {
    pub label: String,
    pub prob: f64,
}

/// Loss and gradients of softmax cross-entropy for one example.
///
/// `output` is row-major `[labels x dim]`, `hidden` the mean embedding. The
/// gradient with respect to an embedding row `b` is `hidden_grad * w_b`
/// where `w_b` is that row's weight in the mean.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub loss: f64,
    pub output: Vec<f64>,
    pub hidden: Vec<f64>,
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn logits(output: &[f64], hidden: &[f64]) -> Vec<f64> {
    let dim = hidden.len();
    output.chunks_exact(dim).map(|row| row.iter().zip(hidden).map(|(w, h)| w * h).sum()).collect()
}

/// Softmax cross-entropy of `label` given the output layer and hidden vector.
pub fn softmax_cross_entropy(output: &[f64], hidden: &[f64], label: usize) -> Gradients {
    let dim = hidden.len();
    let probs = softmax(&logits(output, hidden));
    let loss = -probs[label].max(1e-300).ln();
    let mut grad_out = vec![0.0; output.len()];
    let mut grad_hidden = vec![0.0; dim];
    for (j, p) in probs.iter().enumerate() {
        let coef = p - if j == label { 1.0 } else { 0.0 };
        let row = &output[j * dim..(j + 1) * dim];
        for k in 0..dim {
            grad_out[j * dim + k] = coef * hidden[k];
            grad_hidden[k] += coef * row[k];
        }
    }
    Gradients { loss, output: grad_out, hidden: grad_hidden }
}

type RowMap = HashMap<u32, Vec<f32>, BuildNoHashHasher<u32>>;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    features: FeatureConfig,
    labels: Vec<String>,
    positive: Option<usize>,
    output: Vec<f32>,
    init_seed: u64,
    rows: RowMap,
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Initial value of embedding row `bucket`.
fn initial_row(seed: u64, bucket: u32, dim: usize) -> impl Iterator<Item = f32> {
    let mut state = seed ^ (bucket as u64).wrapping_mul(0xD6E8_FEB8_6659_FD93);
    let scale = 1.0 / dim as f32;
    (0..dim).map(move |_| {
        let u = (splitmix64(&mut state) >> 40) as f32 / (1u64 << 24) as f32;
        (2.0 * u - 1.0) * scale
    })
}

/// Labeled texts plus the ordered label table they refer to.
#[derive(Debug, Clone, Default)]
pub struct LabeledCorpus {
    labels: Vec<String>,
    examples: Vec<(String, Vec<usize>)>,
}

impl LabeledCorpus {
    pub fn new() -> Self {
        Self::default()
    }

    /// Pre-registers labels so they appear in the model in this order even
    /// when no example carries them.
    pub fn with_labels<I, S>(labels: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut c = Self::default();
        for l in labels {
            c.label_index(&l.into());
        }
        c
    }

    fn label_index(&mut self, label: &str) -> usize {
        match self.labels.iter().position(|l| l == label) {
            Some(i) => i,
            None => {
                self.labels.push(label.to_string());
                self.labels.len() - 1
            }
        }
    }

    pub fn push<S: AsRef<str>>(&mut self, text: impl Into<String>, labels: &[S]) -> Result<(), ClassifierError> {
        if labels.is_empty() {
            return Err(ClassifierError::LabelMissing(self.examples.len()));
        }
        let mut idx: Vec<usize> = labels.iter().map(|l| self.label_index(l.as_ref())).collect();
        idx.dedup();
        self.examples.push((text.into(), idx));
        Ok(())
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn examples(&self) -> &[(String, Vec<usize>)] {
        &self.examples
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    /// Mean cross-entropy over the updates of each epoch.
    pub epoch_losses: Vec<f64>,
}

impl LinearModel {
    /// A model with seeded random embeddings and a zero output layer. Every
    /// text maps to the uniform distribution until it is trained.
    pub fn untrained(labels: Vec<String>, features: FeatureConfig, seed: u64) -> Result<Self, ClassifierError> {
        features.validate()?;
        if labels.is_empty() {
            return Err(ClassifierError::InvalidConfig("a model needs at least one label".into()));
        }
        for (i, l) in labels.iter().enumerate() {
            if labels[..i].contains(l) {
                return Err(ClassifierError::InvalidConfig(format!("duplicate label {l:?}")));
            }
        }
        let output = vec![0.0; labels.len() * features.embed_dim];
        Ok(LinearModel { features, labels, positive: None, output, init_seed: seed, rows: RowMap::default() })
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn feature_config(&self) -> &FeatureConfig {
        &self.features
    }

    pub fn label_index(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn positive_label(&self) -> Option<&str> {
        self.positive.map(|i| self.labels[i].as_str())
    }

    /// Marks the positive class of a binary model.
    pub fn set_positive(&mut self, label: &str) -> Result<(), ClassifierError> {
        if self.labels.len() != 2 {
            return Err(ClassifierError::NotBinary);
        }
        let i = self.label_index(label).ok_or_else(|| ClassifierError::UnknownLabel(label.to_string()))?;
        self.positive = Some(i);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.features.embed_dim
    }

    pub fn featurize(&self, text: &str) -> SparseVector {
        featurize(text, &self.features)
    }

    /// Count-weighted mean of the embedding rows.
    pub fn hidden(&self, feats: &SparseVector) -> Vec<f64> {
        let dim = self.dim();
        let mut h = vec![0.0f64; dim];
        let total = feats.total();
        if total == 0 {
            return h;
        }
        for &(b, c) in &feats.entries {
            match self.rows.get(&b) {
                Some(row) => {
                    for (acc, &w) in h.iter_mut().zip(row) {
                        *acc += c as f64 * w as f64;
                    }
                }
                None => {
                    for (acc, w) in h.iter_mut().zip(initial_row(self.init_seed, b, dim)) {
                        *acc += c as f64 * w as f64;
                    }
                }
            }
        }
        let inv = 1.0 / total as f64;
        h.iter_mut().for_each(|x| *x *= inv);
        h
    }

    pub fn output_f64(&self) -> Vec<f64> {
        self.output.iter().map(|&w| w as f64).collect()
    }

    pub(crate) fn output_row(&self, label: usize) -> &[f32] {
        let dim = self.dim();
        &self.output[label * dim..(label + 1) * dim]
    }

    pub fn probabilities_for(&self, feats: &SparseVector) -> Vec<f64> {
        let h = self.hidden(feats);
        softmax(&logits(&self.output_f64(), &h))
    }

    pub fn probabilities(&self, text: &str) -> Vec<f64> {
        self.probabilities_for(&self.featurize(text))
    }

    /// Top-`k` labels with probability at least `threshold`, or for
    /// `k = -1` every label with probability strictly above `threshold`.
    /// Ties are broken by label order.
    pub fn predict(&self, text: &str, k: i32, threshold: f64) -> Vec<Prediction> {
        rank_predictions(&self.labels, &self.probabilities(text), k, threshold)
    }

    pub fn predict_score(&self, text: &str) -> Result<f64, ClassifierError> {
        let pos = self.positive.filter(|_| self.labels.len() == 2).ok_or(ClassifierError::NotBinary)?;
        Ok(self.probabilities(text)[pos])
    }

    /// Applies `-lr * grad` to the output layer and to every embedding row
    /// in `feats`.
    pub(crate) fn apply_gradients(&mut self, feats: &SparseVector, grad_output: &[f64], grad_hidden: &[f64], lr: f64) {
        for (w, g) in self.output.iter_mut().zip(grad_output) {
            *w -= (lr * g) as f32;
        }
        let total = feats.total();
        if total == 0 {
            return;
        }
        let dim = self.dim();
        for &(b, c) in &feats.entries {
            let scale = lr * c as f64 / total as f64;
            let seed = self.init_seed;
            let row = self.rows.entry(b).or_insert_with(|| initial_row(seed, b, dim).collect());
            for (w, g) in row.iter_mut().zip(grad_hidden) {
                *w -= (scale * g) as f32;
            }
        }
    }

    /// Softmax cross-entropy loss and gradients for one labeled example.
    pub fn loss_and_gradients(&self, feats: &SparseVector, label: usize) -> Gradients {
        softmax_cross_entropy(&self.output_f64(), &self.hidden(feats), label)
    }

    /// One SGD step; returns the pre-update loss.
    pub fn sgd_step(&mut self, feats: &SparseVector, label: usize, lr: f64) -> f64 {
        let g = self.loss_and_gradients(feats, label);
        self.apply_gradients(feats, &g.output, &g.hidden, lr);
        g.loss
    }

    /// Mean cross-entropy over a corpus, one term per (example, label).
    pub fn mean_loss(&self, corpus: &LabeledCorpus) -> f64 {
        let mut total = 0.0;
        let mut n = 0usize;
        for (text, labels) in corpus.examples() {
            let probs = self.probabilities(text);
            for &l in labels {
                total -= probs[l].max(1e-300).ln();
                n += 1;
            }
        }
        if n == 0 {
            0.0
        } else {
            total / n as f64
        }
    }

    /// L2 distance between two models over the same labels; used to check
    /// that a training round moved the parameters.
    pub fn parameter_distance(&self, other: &LinearModel) -> f64 {
        let mut d: f64 = self.output.iter().zip(&other.output).map(|(a, b)| ((a - b) as f64).powi(2)).sum();
        let dim = self.dim();
        let row_of = |m: &LinearModel, b: u32| -> Vec<f32> {
            m.rows.get(&b).cloned().unwrap_or_else(|| initial_row(m.init_seed, b, dim).collect())
        };
        let mut keys: Vec<u32> = self.rows.keys().chain(other.rows.keys()).copied().collect();
        keys.sort_unstable();
        keys.dedup();
        for b in keys {
            d += row_of(self, b).iter().zip(row_of(other, b)).map(|(a, b)| ((a - b) as f64).powi(2)).sum::<f64>();
        }
        d.sqrt()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Vec::new();
        w.extend_from_slice(MODEL_MAGIC);
        let f = &self.features;
        for v in [f.min_n as u32, f.max_n as u32, f.hash_buckets, f.embed_dim as u32, self.labels.len() as u32] {
            w.write_u32::<LittleEndian>(v).unwrap();
        }
        w.write_i32::<LittleEndian>(self.positive.map_or(-1, |p| p as i32)).unwrap();
        w.write_u64::<LittleEndian>(self.init_seed).unwrap();
        for l in &self.labels {
            w.write_u32::<LittleEndian>(l.len() as u32).unwrap();
            w.extend_from_slice(l.as_bytes());
        }
        for &x in &self.output {
            w.write_f32::<LittleEndian>(x).unwrap();
        }
        let mut keys: Vec<u32> = self.rows.keys().copied().collect();
        keys.sort_unstable();
        w.write_u32::<LittleEndian>(keys.len() as u32).unwrap();
        for k in keys {
            w.write_u32::<LittleEndian>(k).unwrap();
            for &x in &self.rows[&k] {
                w.write_f32::<LittleEndian>(x).unwrap();
            }
        }
        w
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ClassifierError> {
        if bytes.len() < MODEL_MAGIC.len() {
            return Err(ClassifierError::CorruptModel("file shorter than header".into()));
        }
        let magic = &bytes[..8];
        if magic != MODEL_MAGIC {
            return Err(ClassifierError::VersionMismatch(String::from_utf8_lossy(magic).into_owned()));
        }
        let corrupt = |e: io::Error| ClassifierError::CorruptModel(e.to_string());
        let mut r = Cursor::new(&bytes[8..]);
        let u32_ = |r: &mut Cursor<&[u8]>| r.read_u32::<LittleEndian>().map_err(corrupt);
        let features = FeatureConfig {
            min_n: u32_(&mut r)? as usize,
            max_n: u32_(&mut r)? as usize,
            hash_buckets: u32_(&mut r)?,
            embed_dim: u32_(&mut r)? as usize,
        };
        features.validate().map_err(|e| ClassifierError::CorruptModel(e.to_string()))?;
        let n_labels = u32_(&mut r)? as usize;
        let positive = r.read_i32::<LittleEndian>().map_err(corrupt)?;
        let init_seed = r.read_u64::<LittleEndian>().map_err(corrupt)?;
        let remaining = |r: &Cursor<&[u8]>| r.get_ref().len() as u64 - r.position();
        if n_labels == 0 || n_labels as u64 > remaining(&r) {
            return Err(ClassifierError::CorruptModel("bad label count".into()));
        }
        let mut labels = Vec::with_capacity(n_labels);
        for _ in 0..n_labels {
            let len = u32_(&mut r)? as usize;
            if len as u64 > remaining(&r) {
                return Err(ClassifierError::CorruptModel("label runs past end of file".into()));
            }
            let mut buf = vec![0u8; len];
            r.read_exact(&mut buf).map_err(corrupt)?;
            labels.push(String::from_utf8(buf).map_err(|e| ClassifierError::CorruptModel(e.to_string()))?);
        }
        let dim = features.embed_dim;
        if ((n_labels * dim * 4) as u64) > remaining(&r) {
            return Err(ClassifierError::CorruptModel("output layer truncated".into()));
        }
        let read_f32s = |r: &mut Cursor<&[u8]>, n: usize| -> Result<Vec<f32>, ClassifierError> {
            let mut v = vec![0f32; n];
            r.read_f32_into::<LittleEndian>(&mut v).map_err(corrupt)?;
            if v.iter().any(|x| !x.is_finite()) {
                return Err(ClassifierError::CorruptModel("non-finite weight".into()));
            }
            Ok(v)
        };
        let output = read_f32s(&mut r, n_labels * dim)?;
        let n_rows = r.read_u32::<LittleEndian>().map_err(corrupt)? as u64;
        if n_rows * (4 + dim as u64 * 4) > remaining(&r) {
            return Err(ClassifierError::CorruptModel("embedding table truncated".into()));
        }
        let mut rows = RowMap::default();
        for _ in 0..n_rows {
            let b = r.read_u32::<LittleEndian>().map_err(corrupt)?;
            if b >= features.hash_buckets {
                return Err(ClassifierError::CorruptModel(format!("row {b} out of range")));
            }
            rows.insert(b, read_f32s(&mut r, dim)?);
        }
        if remaining(&r) != 0 {
            return Err(ClassifierError::CorruptModel("trailing bytes".into()));
        }
        let positive = match positive {
            -1 => None,
            p if p >= 0 && (p as usize) < n_labels => Some(p as usize),
            p => return Err(ClassifierError::CorruptModel(format!("positive label index {p}"))),
        };
        let mut model = LinearModel { features, labels, positive, output, init_seed, rows };
        if model.labels.iter().enumerate().any(|(i, l)| model.labels[..i].contains(l)) {
            return Err(ClassifierError::CorruptModel("duplicate labels".into()));
        }
        model.rows.shrink_to_fit();
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<(), ClassifierError> {
        let mut f = fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ClassifierError> {
        Self::from_bytes(&fs::read(path)?)
    }

    /// Content hash of the serialized model.
    pub fn fingerprint(&self) -> String {
        format!("{:016x}", xxh3_64(&self.to_bytes()))
    }
}

pub(crate) fn rank_predictions(labels: &[String], probs: &[f64], k: i32, threshold: f64) -> Vec<Prediction> {
    let mut order: Vec<usize> = (0..labels.len()).collect();
    // stable sort keeps label order among ties
    order.sort_by(|&a, &b| probs[b].partial_cmp(&probs[a]).unwrap_or(std::cmp::Ordering::Equal));
    let pred = |i: usize| Prediction { label: labels[i].clone(), prob: probs[i] };
    if k < 0 {
        order.into_iter().filter(|&i| probs[i] > threshold).map(pred).collect()
    } else {
        order.into_iter().take(k as usize).filter(|&i| probs[i] >= threshold).map(pred).collect()
    }
}

/// Featurized corpus with `min_count` applied.
pub(crate) fn featurize_corpus(texts: impl Iterator<Item = impl AsRef<str>>, cfg: &FeatureConfig, min_count: usize) -> Vec<SparseVector> {
    let mut feats: Vec<SparseVector> = texts.map(|t| featurize(t.as_ref(), cfg)).collect();
    if min_count > 1 {
        let mut df: HashMap<u32, usize, BuildNoHashHasher<u32>> = HashMap::default();
        for f in &feats {
            for &(b, _) in &f.entries {
                *df.entry(b).or_default() += 1;
            }
        }
        for f in &mut feats {
            f.entries.retain(|(b, _)| df[b] >= min_count);
        }
    }
    feats
}

/// Trains a fresh model. Multi-label examples contribute one update per
/// label. Deterministic for a fixed seed.
pub fn train(corpus: &LabeledCorpus, params: &TrainParams, cfg: &FeatureConfig) -> Result<LinearModel, ClassifierError> {
    train_with_report(corpus, params, cfg).map(|(m, _)| m)
}

pub fn train_with_report(
    corpus: &LabeledCorpus,
    params: &TrainParams,
    cfg: &FeatureConfig,
) -> Result<(LinearModel, TrainReport), ClassifierError> {
    params.validate()?;
    let mut model = LinearModel::untrained(corpus.labels().to_vec(), *cfg, params.seed)?;
    let report = continue_training(&mut model, corpus, params)?;
    Ok((model, report))
}

/// Runs SGD epochs on an existing model (labels must match the corpus').
pub fn continue_training(model: &mut LinearModel, corpus: &LabeledCorpus, params: &TrainParams) -> Result<TrainReport, ClassifierError> {
    params.validate()?;
    if corpus.is_empty() {
        return Err(ClassifierError::EmptyCorpus);
    }
    let mut label_map = Vec::with_capacity(corpus.labels().len());
    for l in corpus.labels() {
        label_map.push(model.label_index(l).ok_or_else(|| ClassifierError::UnknownLabel(l.clone()))?);
    }
    let feats = featurize_corpus(corpus.examples().iter().map(|(t, _)| t), &model.features, params.min_count);
    let updates_per_epoch: usize = corpus.examples().iter().map(|(_, l)| l.len()).sum();
    let total_updates = (updates_per_epoch * params.epochs) as f64;
    let mut done = 0usize;
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut report = TrainReport::default();
    for epoch in 0..params.epochs {
        order.shuffle(&mut rng(params.seed.wrapping_add(epoch as u64)));
        let mut epoch_loss = 0.0;
        for &i in &order {
            for &label in &corpus.examples()[i].1 {
                let lr = params.lr * (1.0 - done as f64 / total_updates);
                epoch_loss += model.sgd_step(&feats[i], label_map[label], lr);
                done += 1;
            }
        }
        report.epoch_losses.push(epoch_loss / updates_per_epoch as f64);
    }
    Ok(report)
}
