//! Quality scoring: training-set assembly, the combined MSE + margin-ranking
//! + cosine loss, pre-training, self-training with pseudo-labels, and the
//! scorer contract used at annotation time.
//!
//! The built-in scorer is a binary [`LinearModel`] over the labels
//! `low`/`high`; its score is the softmax probability of `high`, i.e. a
//! sigmoid of the logit difference. [`ExternalScorer`] lets an outside
//! process or HTTP service supply scores instead.

use std::collections::BTreeMap;
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::time::Duration;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::classifier::{featurize_corpus, ClassifierError, FeatureConfig, LinearModel, TrainParams};
use crate::prepare::{reservoir_sample, rng, sample_indices};

pub const LOW_LABEL: &str = "low";
pub const HIGH_LABEL: &str = "high";
pub const SCORE_FLOOR: f64 = 1e-6;
pub const SCORE_CEIL: f64 = 1.0 - 1e-6;
pub const PSEUDO_LABEL_THRESHOLD: f64 = 0.5;

#[derive(Debug, thiserror::Error)]
pub enum QualityError {
    #[error("source {0} is empty")]
    EmptySource(String),
    #[error("negative pool has {pool} texts but {needed} are needed")]
    InsufficientNegatives { pool: usize, needed: usize },
    #[error("positives ({positives}) and negatives ({negatives}) are not 1:1")]
    RatioViolation { positives: usize, negatives: usize },
    #[error("scores and labels differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("pair ({0}, {1}) indexes past the score vector")]
    PairOutOfRange(usize, usize),
    #[error("self-training pool is empty")]
    EmptyPool,
    #[error("external scorer unavailable: {0}")]
    ExternalScorerUnavailable(String),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Anything that maps a text to a quality score.
pub trait QualityScorer: Send + Sync {
    /// Raw score; [`score_quality`] applies the open-interval clamp.
    fn score(&self, text: &str) -> Result<f64, QualityError>;

    /// Identifies the model state, recorded with every annotation.
    fn fingerprint(&self) -> String;
}

/// Quality score strictly inside (0, 1).
pub fn score_quality(scorer: &dyn QualityScorer, text: &str) -> Result<f64, QualityError> {
    let s = scorer.score(text)?;
    if !s.is_finite() {
        return Err(QualityError::ExternalScorerUnavailable(format!("non-finite score {s}")));
    }
    Ok(s.clamp(SCORE_FLOOR, SCORE_CEIL))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BuiltinScorer {
    model: LinearModel,
}

impl BuiltinScorer {
    pub fn untrained(features: FeatureConfig, seed: u64) -> Result<Self, QualityError> {
        let mut model = LinearModel::untrained(vec![LOW_LABEL.into(), HIGH_LABEL.into()], features, seed)?;
        model.set_positive(HIGH_LABEL)?;
        Ok(BuiltinScorer { model })
    }

    pub fn from_model(model: LinearModel) -> Result<Self, QualityError> {
        let ok = model.labels().len() == 2
            && model.label_index(LOW_LABEL).is_some()
            && model.positive_label() == Some(HIGH_LABEL);
        if !ok {
            return Err(ClassifierError::NotBinary.into());
        }
        Ok(BuiltinScorer { model })
    }

    pub fn load(path: &Path) -> Result<Self, QualityError> {
        Self::from_model(LinearModel::load(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), QualityError> {
        Ok(self.model.save(path)?)
    }

    pub fn model(&self) -> &LinearModel {
        &self.model
    }
}

impl QualityScorer for BuiltinScorer {
    fn score(&self, text: &str) -> Result<f64, QualityError> {
        Ok(self.model.predict_score(text)?)
    }

    fn fingerprint(&self) -> String {
        self.model.fingerprint()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub w_mse: f64,
    pub w_mr: f64,
    pub w_cs: f64,
    pub margin: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { w_mse: 1.0, w_mr: 1.0, w_cs: 1.0, margin: 0.1 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), ClassifierError> {
        let ws = [self.w_mse, self.w_mr, self.w_cs];
        if ws.iter().any(|w| *w < 0.0 || !w.is_finite()) || ws.iter().all(|w| *w == 0.0) {
            return Err(ClassifierError::InvalidConfig("loss weights must be >= 0 with at least one > 0".into()));
        }
        if !(self.margin > 0.0) {
            return Err(ClassifierError::InvalidConfig("margin must be positive".into()));
        }
        Ok(())
    }
}

/// `w_mse * mean((s - y)^2) + w_mr * mean_pairs(max(0, m - (s_pos - s_neg)))
///  + w_cs * (1 - cos(s, y))`, with the cosine term 0 when either vector is
/// all zeros and the ranking term 0 without pairs.
pub fn combined_loss(scores: &[f64], labels: &[f64], pairs: &[(usize, usize)], w: &LossWeights) -> Result<f64, QualityError> {
    combined_loss_grad(scores, labels, pairs, w).map(|(l, _)| l)
}

/// [`combined_loss`] and its gradient with respect to `scores`.
pub fn combined_loss_grad(
    scores: &[f64],
    labels: &[f64],
    pairs: &[(usize, usize)],
    w: &LossWeights,
) -> Result<(f64, Vec<f64>), QualityError> {
    let n = scores.len();
    if labels.len() != n {
        return Err(QualityError::LengthMismatch(n, labels.len()));
    }
    if let Some(&(p, q)) = pairs.iter().find(|&&(p, q)| p >= n || q >= n) {
        return Err(QualityError::PairOutOfRange(p, q));
    }
    let mut grad = vec![0.0; n];
    let mut loss = 0.0;

    if n > 0 && w.w_mse != 0.0 {
        let mse: f64 = scores.iter().zip(labels).map(|(s, y)| (s - y).powi(2)).sum::<f64>() / n as f64;
        loss += w.w_mse * mse;
        for i in 0..n {
            grad[i] += w.w_mse * 2.0 * (scores[i] - labels[i]) / n as f64;
        }
    }

    if !pairs.is_empty() && w.w_mr != 0.0 {
        let scale = w.w_mr / pairs.len() as f64;
        for &(p, q) in pairs {
            let hinge = w.margin - (scores[p] - scores[q]);
            if hinge > 0.0 {
                loss += scale * hinge;
                grad[p] -= scale;
                grad[q] += scale;
            }
        }
    }

    if w.w_cs != 0.0 {
        let dot: f64 = scores.iter().zip(labels).map(|(s, y)| s * y).sum();
        let ns = scores.iter().map(|s| s * s).sum::<f64>().sqrt();
        let ny = labels.iter().map(|y| y * y).sum::<f64>().sqrt();
        if ns > 0.0 && ny > 0.0 {
            let cos = dot / (ns * ny);
            loss += w.w_cs * (1.0 - cos);
            for i in 0..n {
                let dcos = labels[i] / (ns * ny) - dot * scores[i] / (ns.powi(3) * ny);
                grad[i] -= w.w_cs * dcos;
            }
        }
    }
    Ok((loss, grad))
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct QualityTrainSet {
    pub positives: Vec<String>,
    pub negatives: Vec<String>,
}

impl QualityTrainSet {
    pub fn is_balanced(&self) -> bool {
        self.positives.len().abs_diff(self.negatives.len()) <= 1
    }
}

/// Positives are the union of the curated sources; negatives are a seeded
/// sample of the pool of the same size.
pub fn build_quality_training_set<P>(
    positive_sources: &[(String, Vec<String>)],
    negative_pool: P,
    seed: u64,
) -> Result<QualityTrainSet, QualityError>
where
    P: IntoIterator<Item = String>,
{
    if positive_sources.is_empty() {
        return Err(QualityError::EmptySource("<no positive sources>".into()));
    }
    let mut positives = Vec::new();
    for (name, texts) in positive_sources {
        if texts.is_empty() {
            return Err(QualityError::EmptySource(name.clone()));
        }
        positives.extend(texts.iter().cloned());
    }
    let mut pool_size = 0usize;
    let negatives = reservoir_sample(
        negative_pool.into_iter().inspect(|_| pool_size += 1),
        positives.len(),
        seed,
    );
    if pool_size == 0 {
        return Err(QualityError::EmptySource("negative pool".into()));
    }
    if negatives.len() < positives.len() {
        return Err(QualityError::InsufficientNegatives { pool: pool_size, needed: positives.len() });
    }
    Ok(QualityTrainSet { positives, negatives })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QualityTrainConfig {
    pub params: TrainParams,
    pub features: FeatureConfig,
    pub weights: LossWeights,
    pub batch_size: usize,
}

impl Default for QualityTrainConfig {
    fn default() -> Self {
        QualityTrainConfig {
            params: TrainParams { epochs: 20, lr: 2.0, seed: 42, min_count: 1 },
            features: FeatureConfig::default(),
            weights: LossWeights::default(),
            batch_size: 16,
        }
    }
}

/// Minimises the combined loss over `(text, target)` examples by
/// mini-batch SGD, starting from the scorer's current parameters. Returns
/// the mean batch loss per epoch.
pub fn train_scorer(scorer: &mut BuiltinScorer, examples: &[(&str, f64)], cfg: &QualityTrainConfig) -> Result<Vec<f64>, QualityError> {
    cfg.params.validate()?;
    cfg.weights.validate()?;
    if examples.is_empty() {
        return Err(ClassifierError::EmptyCorpus.into());
    }
    let batch = cfg.batch_size.max(1);
    let model = &mut scorer.model;
    let (lo, hi) = (model.label_index(LOW_LABEL).unwrap(), model.label_index(HIGH_LABEL).unwrap());
    let feats = featurize_corpus(examples.iter().map(|(t, _)| *t), model.feature_config(), cfg.params.min_count);
    let dim = model.dim();
    let n_batches = examples.len().div_ceil(batch);
    let total_steps = (n_batches * cfg.params.epochs) as f64;
    let mut step = 0usize;
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.params.epochs);

    for epoch in 0..cfg.params.epochs {
        let mut r = rng(cfg.params.seed.wrapping_add(epoch as u64));
        order.shuffle(&mut r);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(batch) {
            let lr = cfg.params.lr * (1.0 - step as f64 / total_steps);
            step += 1;
            let hidden: Vec<Vec<f64>> = chunk.iter().map(|&i| model.hidden(&feats[i])).collect();
            let diff: Vec<f64> = model
                .output_row(hi)
                .iter()
                .zip(model.output_row(lo))
                .map(|(a, b)| *a as f64 - *b as f64)
                .collect();
            let scores: Vec<f64> = hidden
                .iter()
                .map(|h| sigmoid(h.iter().zip(&diff).map(|(a, b)| a * b).sum()))
                .collect();
            let targets: Vec<f64> = chunk.iter().map(|&i| examples[i].1).collect();
            let pairs = ranking_pairs(&targets, &mut r);
            let (loss, grad_s) = combined_loss_grad(&scores, &targets, &pairs, &cfg.weights)?;
            loss_sum += loss;
            for (k, &i) in chunk.iter().enumerate() {
                let dz = grad_s[k] * scores[k] * (1.0 - scores[k]);
                if dz == 0.0 {
                    continue;
                }
                let mut grad_out = vec![0.0; 2 * dim];
                for d in 0..dim {
                    grad_out[hi * dim + d] = dz * hidden[k][d];
                    grad_out[lo * dim + d] = -dz * hidden[k][d];
                }
                let grad_h: Vec<f64> = diff.iter().map(|x| dz * x).collect();
                model.apply_gradients(&feats[i], &grad_out, &grad_h, lr);
            }
        }
        epoch_losses.push(loss_sum / n_batches as f64);
    }
    Ok(epoch_losses)
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Zips shuffled positive positions with shuffled negative positions.
fn ranking_pairs(targets: &[f64], r: &mut impl rand::Rng) -> Vec<(usize, usize)> {
    let mut pos: Vec<usize> = (0..targets.len()).filter(|&i| targets[i] >= 0.5).collect();
    let mut neg: Vec<usize> = (0..targets.len()).filter(|&i| targets[i] < 0.5).collect();
    pos.shuffle(r);
    neg.shuffle(r);
    pos.into_iter().zip(neg).collect()
}

/// Pre-training on a balanced positive/negative set.
pub fn pretrain_quality(set: &QualityTrainSet, cfg: &QualityTrainConfig) -> Result<(BuiltinScorer, Vec<f64>), QualityError> {
    if !set.is_balanced() {
        return Err(QualityError::RatioViolation { positives: set.positives.len(), negatives: set.negatives.len() });
    }
    let mut scorer = BuiltinScorer::untrained(cfg.features, cfg.params.seed)?;
    let examples: Vec<(&str, f64)> = set
        .positives
        .iter()
        .map(|t| (t.as_str(), 1.0))
        .chain(set.negatives.iter().map(|t| (t.as_str(), 0.0)))
        .collect();
    let losses = train_scorer(&mut scorer, &examples, cfg)?;
    Ok((scorer, losses))
}

/// State carried between self-training rounds.
#[derive(Debug, Clone)]
pub struct SelfTrainState {
    pub round: usize,
    pub scorer: BuiltinScorer,
    /// Curated positives; never pseudo-labeled.
    pub positives: Vec<String>,
    /// Unlabeled web text the samples are drawn from.
    pub pool: Vec<String>,
    /// Pool indices sampled in the last round.
    pub sample: Vec<usize>,
    /// Pseudo-label per sampled pool index.
    pub pseudo_labels: BTreeMap<usize, u8>,
    pub seed: u64,
}

impl SelfTrainState {
    pub fn new(scorer: BuiltinScorer, positives: Vec<String>, pool: Vec<String>, seed: u64) -> Self {
        SelfTrainState { round: 0, scorer, positives, pool, sample: Vec::new(), pseudo_labels: BTreeMap::new(), seed }
    }
}

/// 1 when the current scorer gives at least 0.5, else 0.
pub fn pseudo_labels(scorer: &BuiltinScorer, pool: &[String], sample: &[usize]) -> Result<Vec<u8>, QualityError> {
    sample
        .iter()
        .map(|&i| Ok((score_quality(scorer, &pool[i])? >= PSEUDO_LABEL_THRESHOLD) as u8))
        .collect()
}

/// Draws a sample from the pool, pseudo-labels it with the current
/// parameters and continues training on curated positives plus the
/// pseudo-labeled sample.
pub fn self_train_round(state: SelfTrainState, sample_size: usize, cfg: &QualityTrainConfig) -> Result<SelfTrainState, QualityError> {
    if state.pool.is_empty() {
        return Err(QualityError::EmptyPool);
    }
    let round_seed = state.seed.wrapping_add(0x5e1f_0000).wrapping_add(state.round as u64);
    let sample = sample_indices(state.pool.len(), sample_size.max(1), round_seed);
    let labels = pseudo_labels(&state.scorer, &state.pool, &sample)?;
    let examples: Vec<(&str, f64)> = state
        .positives
        .iter()
        .map(|t| (t.as_str(), 1.0))
        .chain(sample.iter().zip(&labels).map(|(&i, &y)| (state.pool[i].as_str(), y as f64)))
        .collect();
    let mut scorer = state.scorer.clone();
    let round_cfg = QualityTrainConfig {
        params: TrainParams { seed: cfg.params.seed.wrapping_add(state.round as u64 + 1), ..cfg.params },
        ..*cfg
    };
    train_scorer(&mut scorer, &examples, &round_cfg)?;
    Ok(SelfTrainState {
        round: state.round + 1,
        scorer,
        pseudo_labels: sample.iter().copied().zip(labels).collect(),
        sample,
        ..state
    })
}

/// Mean score of `pos` minus mean score of `neg`.
pub fn separation(scorer: &dyn QualityScorer, pos: &[String], neg: &[String]) -> Result<f64, QualityError> {
    let mean = |xs: &[String]| -> Result<f64, QualityError> {
        let mut s = 0.0;
        for x in xs {
            s += score_quality(scorer, x)?;
        }
        Ok(s / xs.len().max(1) as f64)
    };
    Ok(mean(pos)? - mean(neg)?)
}

/// Area under the ROC curve, ties counted as one half.
pub fn auc(pos_scores: &[f64], neg_scores: &[f64]) -> f64 {
    let mut wins = 0.0;
    for p in pos_scores {
        for n in neg_scores {
            wins += if p > n {
                1.0
            } else if p == n {
                0.5
            } else {
                0.0
            };
        }
    }
    wins / (pos_scores.len() * neg_scores.len()).max(1) as f64
}

/// How [`ExternalScorer`] reaches the scoring service.
#[derive(Debug, Clone)]
pub enum ExternalTransport {
    /// A child process reading `SCORE <base64>` lines on stdin and answering
    /// one score per line on stdout.
    Process { program: String, args: Vec<String> },
    /// `POST <url>` with the same request line as body.
    Http { url: String },
}

struct ChildConn {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<io::Result<String>>,
}

impl Drop for ChildConn {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// Adapter for an out-of-process scorer (for example a transformer model
/// served elsewhere). One request line in, one score line out.
pub struct ExternalScorer {
    transport: ExternalTransport,
    timeout: Duration,
    retries: usize,
    conn: Mutex<Option<ChildConn>>,
    agent: ureq::Agent,
}

impl ExternalScorer {
    pub fn new(transport: ExternalTransport) -> Self {
        let timeout = Duration::from_secs(5);
        ExternalScorer {
            transport,
            timeout,
            retries: 3,
            conn: Mutex::new(None),
            agent: ureq::AgentBuilder::new().timeout(timeout).build(),
        }
    }

    pub fn process(program: impl Into<String>, args: Vec<String>) -> Self {
        Self::new(ExternalTransport::Process { program: program.into(), args })
    }

    pub fn http(url: impl Into<String>) -> Self {
        Self::new(ExternalTransport::Http { url: url.into() })
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self.agent = ureq::AgentBuilder::new().timeout(timeout).build();
        self
    }

    pub fn with_retries(mut self, retries: usize) -> Self {
        self.retries = retries;
        self
    }

    pub fn request_line(text: &str) -> String {
        format!("SCORE {}", BASE64.encode(text.as_bytes()))
    }

    fn spawn(program: &str, args: &[String]) -> io::Result<ChildConn> {
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                let stop = line.is_err();
                if tx.send(line).is_err() || stop {
                    break;
                }
            }
        });
        Ok(ChildConn { child, stdin, lines: rx })
    }

    fn attempt_process(&self, program: &str, args: &[String], request: &str) -> Result<String, String> {
        let mut guard = self.conn.lock().unwrap_or_else(|e| e.into_inner());
        if guard.is_none() {
            *guard = Some(Self::spawn(program, args).map_err(|e| format!("spawn {program}: {e}"))?);
        }
        let conn = guard.as_mut().unwrap();
        let sent = writeln!(conn.stdin, "{request}").and_then(|_| conn.stdin.flush());
        let result = match sent {
            Err(e) => Err(format!("write: {e}")),
            Ok(()) => match conn.lines.recv_timeout(self.timeout) {
                Ok(Ok(line)) => Ok(line),
                Ok(Err(e)) => Err(format!("read: {e}")),
                Err(RecvTimeoutError::Timeout) => Err("timed out".to_string()),
                Err(RecvTimeoutError::Disconnected) => Err("scorer process exited".to_string()),
            },
        };
        if result.is_err() {
            // a stale or dead child must not answer the next request
            *guard = None;
        }
        result
    }

    fn attempt_http(&self, url: &str, request: &str) -> Result<String, String> {
        self.agent
            .post(url)
            .set("Content-Type", "text/plain")
            .send_string(request)
            .map_err(|e| e.to_string())?
            .into_string()
            .map_err(|e| e.to_string())
    }

    fn parse_score(reply: &str) -> Result<f64, String> {
        let s: f64 = reply.trim().parse().map_err(|_| format!("unparseable reply {:?}", reply.trim()))?;
        if (0.0..=1.0).contains(&s) {
            Ok(s)
        } else {
            Err(format!("score {s} outside [0, 1]"))
        }
    }
}

impl QualityScorer for ExternalScorer {
    fn score(&self, text: &str) -> Result<f64, QualityError> {
        let request = Self::request_line(text);
        let mut last = String::new();
        for attempt in 0..=self.retries {
            let reply = match &self.transport {
                ExternalTransport::Process { program, args } => self.attempt_process(program, args, &request),
                ExternalTransport::Http { url } => self.attempt_http(url, &request),
            };
            match reply.and_then(|r| Self::parse_score(&r)) {
                Ok(s) => return Ok(s),
                Err(e) => {
                    log::debug!("external scorer attempt {} failed: {e}", attempt + 1);
                    last = e;
                }
            }
        }
        Err(QualityError::ExternalScorerUnavailable(last))
    }

    fn fingerprint(&self) -> String {
        match &self.transport {
            ExternalTransport::Process { program, args } => format!("external:{program} {}", args.join(" ")),
            ExternalTransport::Http { url } => format!("external:{url}"),
        }
    }
}
