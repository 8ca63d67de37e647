//! Toxicity classification: initial-set assembly from public corpora with
//! doubled toxic samples, the initial classifier R0, oracle-in-the-loop
//! retraining, scoring and the separated-halves evaluation.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Mutex;
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::{train, ClassifierError, FeatureConfig, LabeledCorpus, LinearModel, TrainParams};
use crate::model::ToxicityLabel;
use crate::prepare::reservoir_sample;

pub const TOXIC: &str = "toxic";
pub const BENIGN: &str = "benign";
pub const CANDIDATE_THRESHOLD: f64 = 0.5;
pub const DEFAULT_CANDIDATE_CAP: usize = 50_000;

pub const ORACLE_URL_ENV: &str = "MDFG_ORACLE_URL";
pub const ORACLE_KEY_ENV: &str = "MDFG_ORACLE_KEY";
pub const ORACLE_MODEL_ENV: &str = "MDFG_ORACLE_MODEL";

pub const ORACLE_SYSTEM_PROMPT: &str = "You are a content moderator for Chinese text. Decide whether the user's text is toxic \
(insulting, hateful, harassing, discriminatory, threatening or obscene) or benign. \
Answer with exactly one word: toxic or benign.";

#[derive(Debug, thiserror::Error)]
pub enum ToxicityError {
    #[error("source {0} is empty")]
    EmptySource(String),
    #[error("unknown source {0:?}; expected cold, toxicn, swsr or cdial")]
    UnknownSource(String),
    #[error("requested {requested} own benign samples but only {available} are available")]
    InsufficientOwnBenign { requested: usize, available: usize },
    #[error("training set has no {0} examples")]
    SingleClass(&'static str),
    #[error("test set is empty")]
    EmptyTestSet,
    #[error("oracle unavailable: {0}")]
    OracleUnavailable(String),
    #[error("oracle returned {got} labels for {expected} texts")]
    OracleLength { expected: usize, got: usize },
    #[error("invalid toxicity data: {0}")]
    InvalidData(String),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Where a training item came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Provenance {
    Cold,
    Toxicn,
    Swsr,
    Cdial,
    OwnSamples,
    OracleRound(u32),
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Provenance::Cold => f.write_str("cold"),
            Provenance::Toxicn => f.write_str("toxicn"),
            Provenance::Swsr => f.write_str("swsr"),
            Provenance::Cdial => f.write_str("cdial"),
            Provenance::OwnSamples => f.write_str("own_samples"),
            Provenance::OracleRound(k) => write!(f, "oracle_round_{k}"),
        }
    }
}

impl FromStr for Provenance {
    type Err = ToxicityError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "cold" => Provenance::Cold,
            "toxicn" => Provenance::Toxicn,
            "swsr" => Provenance::Swsr,
            "cdial" => Provenance::Cdial,
            "own_samples" => Provenance::OwnSamples,
            _ => match s.strip_prefix("oracle_round_").and_then(|k| k.parse().ok()) {
                Some(k) => Provenance::OracleRound(k),
                None => return Err(ToxicityError::UnknownSource(s.to_string())),
            },
        })
    }
}

impl Serialize for Provenance {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Provenance {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

impl Provenance {
    fn is_public(self) -> bool {
        matches!(self, Provenance::Cold | Provenance::Toxicn | Provenance::Swsr | Provenance::Cdial)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToxicityItem {
    pub text: String,
    pub toxic: bool,
    pub provenance: Provenance,
}

/// Labeled toxicity training data with per-item provenance.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToxicityTrainSet {
    items: Vec<ToxicityItem>,
    doubled: bool,
}

impl ToxicityTrainSet {
    pub fn new(items: Vec<ToxicityItem>) -> Self {
        ToxicityTrainSet { items, doubled: false }
    }

    pub fn items(&self) -> &[ToxicityItem] {
        &self.items
    }

    pub fn toxic(&self) -> impl Iterator<Item = &str> {
        self.items.iter().filter(|i| i.toxic).map(|i| i.text.as_str())
    }

    pub fn benign(&self) -> impl Iterator<Item = &str> {
        self.items.iter().filter(|i| !i.toxic).map(|i| i.text.as_str())
    }

    pub fn toxic_count(&self) -> usize {
        self.items.iter().filter(|i| i.toxic).count()
    }

    pub fn benign_count(&self) -> usize {
        self.items.len() - self.toxic_count()
    }

    pub fn is_doubled(&self) -> bool {
        self.doubled
    }

    /// Duplicates every toxic item from the public corpora once. A second
    /// call does nothing.
    pub fn double_toxic(&mut self) {
        if self.doubled {
            return;
        }
        let extra: Vec<ToxicityItem> = self.items.iter().filter(|i| i.toxic && i.provenance.is_public()).cloned().collect();
        self.items.extend(extra);
        self.doubled = true;
    }

    pub fn extend(&mut self, items: impl IntoIterator<Item = ToxicityItem>) {
        self.items.extend(items);
    }

    /// Counts per `(provenance, toxic)`.
    pub fn composition(&self) -> BTreeMap<(Provenance, bool), usize> {
        let mut out = BTreeMap::new();
        for i in &self.items {
            *out.entry((i.provenance, i.toxic)).or_default() += 1;
        }
        out
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> io::Result<()> {
        for i in &self.items {
            serde_json::to_writer(&mut w, i)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Reads items written by [`write_jsonl`](Self::write_jsonl); the set
    /// is considered already doubled.
    pub fn read_jsonl(path: &Path) -> Result<Self, ToxicityError> {
        let text = crate::model::read_to_string(path)?;
        let mut items = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let item: ToxicityItem = serde_json::from_str(line)
                .map_err(|e| ToxicityError::InvalidData(format!("{}:{}: {e}", path.display(), n + 1)))?;
            items.push(item);
        }
        Ok(ToxicityTrainSet { items, doubled: true })
    }
}

/// Union of the public corpora plus `benign_sample_n` seeded samples of our
/// own benign text, with every public toxic item doubled.
pub fn build_initial_toxicity_set(
    sources: &BTreeMap<String, Vec<(String, bool)>>,
    own_benign: &[String],
    benign_sample_n: usize,
    seed: u64,
) -> Result<ToxicityTrainSet, ToxicityError> {
    let mut set = ToxicityTrainSet::default();
    for (name, items) in sources {
        let provenance: Provenance = name.parse()?;
        if !provenance.is_public() {
            return Err(ToxicityError::UnknownSource(name.clone()));
        }
        if items.is_empty() {
            return Err(ToxicityError::EmptySource(name.clone()));
        }
        set.extend(items.iter().map(|(text, toxic)| ToxicityItem { text: text.clone(), toxic: *toxic, provenance }));
    }
    if benign_sample_n > own_benign.len() {
        return Err(ToxicityError::InsufficientOwnBenign { requested: benign_sample_n, available: own_benign.len() });
    }
    let sampled = reservoir_sample(own_benign.iter(), benign_sample_n, seed);
    set.extend(sampled.into_iter().map(|t| ToxicityItem { text: t.clone(), toxic: false, provenance: Provenance::OwnSamples }));
    set.double_toxic();
    Ok(set)
}

fn corpus_of(set: &ToxicityTrainSet) -> Result<LabeledCorpus, ToxicityError> {
    if set.toxic_count() == 0 {
        return Err(ToxicityError::SingleClass(TOXIC));
    }
    if set.benign_count() == 0 {
        return Err(ToxicityError::SingleClass(BENIGN));
    }
    let mut c = LabeledCorpus::with_labels([BENIGN, TOXIC]);
    for i in set.items() {
        c.push(i.text.clone(), &[if i.toxic { TOXIC } else { BENIGN }])?;
    }
    Ok(c)
}

/// Binary toxicity model with `toxic` as the positive label.
#[derive(Debug, Clone, PartialEq)]
pub struct ToxicityClassifier {
    model: LinearModel,
}

impl ToxicityClassifier {
    pub fn new(model: LinearModel) -> Result<Self, ToxicityError> {
        let ok = model.labels().len() == 2 && model.label_index(BENIGN).is_some() && model.positive_label() == Some(TOXIC);
        if !ok {
            return Err(ClassifierError::NotBinary.into());
        }
        Ok(ToxicityClassifier { model })
    }

    pub fn load(path: &Path) -> Result<Self, ToxicityError> {
        Self::new(LinearModel::load(path)?)
    }

    pub fn model(&self) -> &LinearModel {
        &self.model
    }

    pub fn into_model(self) -> LinearModel {
        self.model
    }

    /// Probability of `toxic`.
    pub fn score(&self, text: &str) -> f64 {
        self.model.predict_score(text).expect("validated binary model")
    }
}

pub fn train_toxicity_r0(
    set: &ToxicityTrainSet,
    params: &TrainParams,
    features: &FeatureConfig,
) -> Result<ToxicityClassifier, ToxicityError> {
    let mut model = train(&corpus_of(set)?, params, features)?;
    model.set_positive(TOXIC)?;
    ToxicityClassifier::new(model)
}

/// Score and label; the label is toxic only above 0.99.
pub fn score_toxicity(classifier: &ToxicityClassifier, text: &str) -> (f64, ToxicityLabel) {
    let s = classifier.score(text);
    (s, ToxicityLabel::from_score(s))
}

/// Labels texts as toxic (`Some(true)`), benign (`Some(false)`) or
/// unparseable (`None`). Must return one entry per input, in order.
pub trait OracleClient {
    fn label_batch(&mut self, texts: &[String]) -> Result<Vec<Option<bool>>, ToxicityError>;
}

/// Scripted oracle for tests and offline runs.
pub struct MockOracle {
    judge: Box<dyn Fn(&str) -> Option<bool> + Send>,
    pub calls: usize,
    pub labeled: usize,
}

impl MockOracle {
    pub fn from_fn(f: impl Fn(&str) -> Option<bool> + Send + 'static) -> Self {
        MockOracle { judge: Box::new(f), calls: 0, labeled: 0 }
    }

    /// Looks texts up in a truth table; unknown texts are unparseable.
    pub fn from_table(table: HashMap<String, bool>) -> Self {
        Self::from_fn(move |t| table.get(t).copied())
    }

    /// Always fails, as an unreachable endpoint would.
    pub fn unavailable() -> impl OracleClient {
        struct Down;
        impl OracleClient for Down {
            fn label_batch(&mut self, _: &[String]) -> Result<Vec<Option<bool>>, ToxicityError> {
                Err(ToxicityError::OracleUnavailable("mock oracle is down".into()))
            }
        }
        Down
    }
}

impl OracleClient for MockOracle {
    fn label_batch(&mut self, texts: &[String]) -> Result<Vec<Option<bool>>, ToxicityError> {
        self.calls += 1;
        self.labeled += texts.len();
        Ok(texts.iter().map(|t| (self.judge)(t)).collect())
    }
}

/// Parses an oracle reply into a label.
pub fn parse_verdict(reply: &str) -> Option<bool> {
    let word: String = reply
        .trim()
        .trim_matches(|c: char| !c.is_alphanumeric())
        .chars()
        .take_while(|c| c.is_alphabetic())
        .collect::<String>()
        .to_lowercase();
    match word.as_str() {
        "toxic" => Some(true),
        "benign" => Some(false),
        _ => None,
    }
}

/// Chat-completions client. Every request and reply is appended to an
/// audit JSONL file.
pub struct HttpOracle {
    url: String,
    key: Option<String>,
    model: String,
    timeout: Duration,
    max_in_flight: usize,
    audit: Option<Mutex<File>>,
}

impl HttpOracle {
    pub fn new(url: impl Into<String>, key: Option<String>, model: impl Into<String>) -> Self {
        HttpOracle { url: url.into(), key, model: model.into(), timeout: Duration::from_secs(60), max_in_flight: 4, audit: None }
    }

    /// Reads the endpoint, key and model name from the environment.
    pub fn from_env() -> Result<Self, ToxicityError> {
        let var = |k: &str| std::env::var(k).ok().filter(|v| !v.is_empty());
        let url = var(ORACLE_URL_ENV).ok_or_else(|| ToxicityError::OracleUnavailable(format!("{ORACLE_URL_ENV} is not set")))?;
        let model = var(ORACLE_MODEL_ENV).ok_or_else(|| ToxicityError::OracleUnavailable(format!("{ORACLE_MODEL_ENV} is not set")))?;
        Ok(Self::new(url, var(ORACLE_KEY_ENV), model))
    }

    pub fn with_audit(mut self, path: &Path) -> Result<Self, ToxicityError> {
        let f = OpenOptions::new().create(true).append(true).open(path)?;
        self.audit = Some(Mutex::new(f));
        Ok(self)
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn with_max_in_flight(mut self, n: usize) -> Self {
        self.max_in_flight = n.max(1);
        self
    }

    pub fn request_body(&self, text: &str) -> serde_json::Value {
        serde_json::json!({
            "model": self.model,
            "temperature": 0,
            "messages": [
                {"role": "system", "content": ORACLE_SYSTEM_PROMPT},
                {"role": "user", "content": text},
            ],
        })
    }

    fn label_one(&self, agent: &ureq::Agent, text: &str) -> Result<Option<bool>, ToxicityError> {
        let body = self.request_body(text);
        let mut req = agent.post(&self.url).set("Content-Type", "application/json");
        if let Some(k) = &self.key {
            req = req.set("Authorization", &format!("Bearer {k}"));
        }
        let raw = req
            .send_string(&body.to_string())
            .map_err(|e| ToxicityError::OracleUnavailable(e.to_string()))?
            .into_string()
            .map_err(|e| ToxicityError::OracleUnavailable(e.to_string()))?;
        let reply: serde_json::Value = serde_json::from_str(&raw).unwrap_or(serde_json::Value::String(raw));
        if let Some(audit) = &self.audit {
            let line = serde_json::json!({"request": body, "response": reply});
            let mut f = audit.lock().unwrap_or_else(|e| e.into_inner());
            writeln!(f, "{line}")?;
        }
        let content = reply.pointer("/choices/0/message/content").and_then(|c| c.as_str()).unwrap_or("");
        let verdict = parse_verdict(content);
        if verdict.is_none() {
            log::warn!("unparseable oracle reply {content:?}; item skipped");
        }
        Ok(verdict)
    }
}

impl OracleClient for HttpOracle {
    fn label_batch(&mut self, texts: &[String]) -> Result<Vec<Option<bool>>, ToxicityError> {
        let agent = ureq::AgentBuilder::new().timeout(self.timeout).build();
        let mut out = Vec::with_capacity(texts.len());
        let this = &*self;
        for chunk in texts.chunks(this.max_in_flight) {
            let results: Vec<Result<Option<bool>, ToxicityError>> = std::thread::scope(|s| {
                let handles: Vec<_> = chunk.iter().map(|t| s.spawn(|| this.label_one(&agent, t))).collect();
                handles.into_iter().map(|h| h.join().expect("oracle worker panicked")).collect()
            });
            for r in results {
                out.push(r?);
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoopConfig {
    pub candidate_threshold: f64,
    pub candidate_cap: usize,
    pub params: TrainParams,
}

impl Default for LoopConfig {
    fn default() -> Self {
        LoopConfig { candidate_threshold: CANDIDATE_THRESHOLD, candidate_cap: DEFAULT_CANDIDATE_CAP, params: TrainParams::default() }
    }
}

#[derive(Debug, Clone)]
pub struct LoopOutcome {
    pub round: u32,
    pub classifier: ToxicityClassifier,
    pub set: ToxicityTrainSet,
    /// Pool texts scored above the candidate threshold (after the cap).
    pub candidates: usize,
    pub oracle_toxic: usize,
    pub oracle_benign: usize,
    pub unparseable: usize,
    /// True when there were no candidates and nothing changed.
    pub skipped: bool,
}

/// Pool indices whose score is strictly above `threshold`, in pool order,
/// at most `cap` of them.
pub fn select_candidates(scores: &[f64], threshold: f64, cap: usize) -> Vec<usize> {
    let all: Vec<usize> = (0..scores.len()).filter(|&i| scores[i] > threshold).collect();
    if all.len() > cap {
        log::warn!("{} candidates above {threshold}; keeping the first {cap}", all.len());
    }
    all.into_iter().take(cap).collect()
}

/// One round: screen the pool, have the oracle label the candidates, add
/// them to the training set (tagged with the round, not doubled) and
/// retrain. On oracle failure nothing changes and the error is returned.
pub fn llm_loop_round(
    classifier: &ToxicityClassifier,
    pool: &[String],
    oracle: &mut dyn OracleClient,
    base_set: &ToxicityTrainSet,
    round: u32,
    cfg: &LoopConfig,
) -> Result<LoopOutcome, ToxicityError> {
    let scores: Vec<f64> = pool.par_iter().map(|t| classifier.score(t)).collect();
    let picked = select_candidates(&scores, cfg.candidate_threshold, cfg.candidate_cap);
    if picked.is_empty() {
        log::warn!("round {round}: no pool text scored above {}; round skipped", cfg.candidate_threshold);
        return Ok(LoopOutcome {
            round,
            classifier: classifier.clone(),
            set: base_set.clone(),
            candidates: 0,
            oracle_toxic: 0,
            oracle_benign: 0,
            unparseable: 0,
            skipped: true,
        });
    }
    let texts: Vec<String> = picked.iter().map(|&i| pool[i].clone()).collect();
    let labels = oracle.label_batch(&texts)?;
    if labels.len() != texts.len() {
        return Err(ToxicityError::OracleLength { expected: texts.len(), got: labels.len() });
    }
    let mut set = base_set.clone();
    let (mut toxic, mut benign, mut unparseable) = (0, 0, 0);
    for (text, label) in texts.into_iter().zip(labels) {
        match label {
            Some(y) => {
                if y {
                    toxic += 1;
                } else {
                    benign += 1;
                }
                set.extend([ToxicityItem { text, toxic: y, provenance: Provenance::OracleRound(round) }]);
            }
            None => unparseable += 1,
        }
    }
    let params = TrainParams { seed: cfg.params.seed.wrapping_add(round as u64), ..cfg.params };
    let model = train(&corpus_of(&set)?, &params, classifier.model().feature_config()).and_then(|mut m| {
        m.set_positive(TOXIC)?;
        Ok(m)
    })?;
    Ok(LoopOutcome {
        round,
        classifier: ToxicityClassifier::new(model)?,
        set,
        candidates: picked.len(),
        oracle_toxic: toxic,
        oracle_benign: benign,
        unparseable,
        skipped: false,
    })
}

/// Runs `rounds` cumulative rounds starting from R0 and its training set.
pub fn run_llm_loop(
    r0: &ToxicityClassifier,
    pool: &[String],
    oracle: &mut dyn OracleClient,
    initial: &ToxicityTrainSet,
    rounds: u32,
    cfg: &LoopConfig,
) -> Result<Vec<LoopOutcome>, ToxicityError> {
    let mut out: Vec<LoopOutcome> = Vec::new();
    for k in 1..=rounds {
        let (c, s) = match out.last() {
            Some(o) => (&o.classifier, &o.set),
            None => (r0, initial),
        };
        let o = llm_loop_round(c, pool, oracle, s, k, cfg)?;
        out.push(o);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToxicityEvalResult {
    pub precision: f64,
    pub specificity: f64,
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

/// Metrics from predicted labels of the two test halves. The toxic half
/// yields TP (labeled toxic) and FP (labeled benign); the benign half
/// yields TN (labeled benign) and FN (labeled toxic).
pub fn eval_toxicity_labels(toxic_half: &[ToxicityLabel], benign_half: &[ToxicityLabel]) -> Result<ToxicityEvalResult, ToxicityError> {
    if toxic_half.is_empty() || benign_half.is_empty() {
        return Err(ToxicityError::EmptyTestSet);
    }
    let tp = toxic_half.iter().filter(|l| **l == ToxicityLabel::Toxic).count() as u64;
    let fp = toxic_half.len() as u64 - tp;
    let tn = benign_half.iter().filter(|l| **l == ToxicityLabel::Benign).count() as u64;
    let fn_ = benign_half.len() as u64 - tn;
    Ok(ToxicityEvalResult {
        precision: tp as f64 / (tp + fp) as f64,
        specificity: tn as f64 / (tn + fn_) as f64,
        tp,
        fp,
        tn,
        fn_,
    })
}

pub fn eval_toxicity(
    classifier: &ToxicityClassifier,
    toxic_test: &[String],
    benign_test: &[String],
) -> Result<ToxicityEvalResult, ToxicityError> {
    let label = |ts: &[String]| -> Vec<ToxicityLabel> { ts.par_iter().map(|t| score_toxicity(classifier, t).1).collect() };
    eval_toxicity_labels(&label(toxic_test), &label(benign_test))
}

/// Reads `(text, toxic)` pairs from JSONL with a `text` field and a label
/// given as `toxic: bool` or `label: "toxic" | "benign" | 0 | 1`.
pub fn read_labeled_jsonl(path: &Path) -> Result<Vec<(String, bool)>, ToxicityError> {
    let text = crate::model::read_to_string(path)?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |why: &str| ToxicityError::InvalidData(format!("{}:{}: {why}", path.display(), n + 1));
        let v: serde_json::Value = serde_json::from_str(line).map_err(|e| bad(&e.to_string()))?;
        let t = v.get("text").and_then(|t| t.as_str()).ok_or_else(|| bad("missing text"))?;
        let y = match (v.get("toxic"), v.get("label")) {
            (Some(serde_json::Value::Bool(b)), _) => *b,
            (_, Some(serde_json::Value::String(s))) if s == TOXIC => true,
            (_, Some(serde_json::Value::String(s))) if s == BENIGN => false,
            (_, Some(serde_json::Value::Number(n))) if n.as_u64() == Some(1) => true,
            (_, Some(serde_json::Value::Number(n))) if n.as_u64() == Some(0) => false,
            _ => return Err(bad("missing or invalid label")),
        };
        out.push((t.to_string(), y));
    }
    Ok(out)
}

/// Audit-log location used by the command line when none is given.
pub fn default_audit_path(dir: &Path) -> PathBuf {
    dir.join("oracle_audit.jsonl")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sources(toxic: usize, benign: usize) -> BTreeMap<String, Vec<(String, bool)>> {
        let mut m = BTreeMap::new();
        let mut items: Vec<(String, bool)> = (0..toxic).map(|i| (format!("t{i}"), true)).collect();
        items.extend((0..benign).map(|i| (format!("b{i}"), false)));
        m.insert("cold".to_string(), items);
        m
    }

    #[test]
    fn table_four_shape() {
        let mut m = BTreeMap::new();
        let split = [("cold", 18_000usize, 20_000usize), ("toxicn", 8_000, 10_000), ("swsr", 4_000, 9_878), ("cdial", 4_128, 10_000)];
        for (name, t, b) in split {
            let mut items: Vec<(String, bool)> = (0..t).map(|i| (format!("{name}-t{i}"), true)).collect();
            items.extend((0..b).map(|i| (format!("{name}-b{i}"), false)));
            m.insert(name.to_string(), items);
        }
        let own: Vec<String> = (0..100_000).map(|i| format!("own{i}")).collect();
        let set = build_initial_toxicity_set(&m, &own, 80_000, 42).unwrap();
        assert_eq!(set.toxic_count(), 68_256);
        assert_eq!(set.benign_count(), 129_878);
    }

    #[test]
    fn doubling_happens_once() {
        let mut set = build_initial_toxicity_set(&sources(3, 2), &[], 0, 1).unwrap();
        assert_eq!(set.benign_count(), 2);
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for t in set.toxic() {
            *counts.entry(t).or_default() += 1;
        }
        assert!(counts.values().all(|&c| c == 2) && counts.len() == 3);
        set.double_toxic();
        assert_eq!(set.toxic_count(), 6);
    }

    #[test]
    fn initial_set_errors() {
        let mut empty = BTreeMap::new();
        empty.insert("swsr".to_string(), Vec::new());
        assert!(matches!(build_initial_toxicity_set(&empty, &[], 0, 1), Err(ToxicityError::EmptySource(_))));
        let mut unknown = BTreeMap::new();
        unknown.insert("reddit".to_string(), vec![("x".to_string(), true)]);
        assert!(matches!(build_initial_toxicity_set(&unknown, &[], 0, 1), Err(ToxicityError::UnknownSource(_))));
        assert!(matches!(
            build_initial_toxicity_set(&sources(1, 1), &["a".into()], 2, 1),
            Err(ToxicityError::InsufficientOwnBenign { .. })
        ));
        let only_toxic = build_initial_toxicity_set(&sources(2, 0), &[], 0, 1).unwrap();
        assert!(matches!(
            train_toxicity_r0(&only_toxic, &TrainParams::default(), &FeatureConfig::default()),
            Err(ToxicityError::SingleClass(BENIGN))
        ));
    }

    #[test]
    fn own_samples_are_seeded() {
        let own: Vec<String> = (0..50).map(|i| format!("own{i}")).collect();
        let a = build_initial_toxicity_set(&sources(1, 1), &own, 10, 5).unwrap();
        let b = build_initial_toxicity_set(&sources(1, 1), &own, 10, 5).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.composition()[&(Provenance::OwnSamples, false)], 10);
    }

    #[test]
    fn provenance_round_trips() {
        for p in [Provenance::Cold, Provenance::Cdial, Provenance::OwnSamples, Provenance::OracleRound(2)] {
            assert_eq!(p.to_string().parse::<Provenance>().unwrap(), p);
        }
        assert_eq!(Provenance::OracleRound(1).to_string(), "oracle_round_1");
    }

    #[test]
    fn label_threshold_is_strict() {
        assert_eq!(ToxicityLabel::from_score(0.995), ToxicityLabel::Toxic);
        assert_eq!(ToxicityLabel::from_score(0.99), ToxicityLabel::Benign);
        assert_eq!(ToxicityLabel::from_score(0.0), ToxicityLabel::Benign);
        assert_eq!(crate::model::TOXIC_LABEL_THRESHOLD, 0.99);
    }

    #[test]
    fn candidate_boundary_is_strict() {
        let scores = [0.5, 0.5000001, 0.9, 0.2, 0.5];
        assert_eq!(select_candidates(&scores, 0.5, 10), vec![1, 2]);
        assert_eq!(select_candidates(&scores, 0.5, 1), vec![1]);
    }

    #[test]
    fn verdict_parsing() {
        assert_eq!(parse_verdict("toxic"), Some(true));
        assert_eq!(parse_verdict(" Benign.\n"), Some(false));
        assert_eq!(parse_verdict("\"TOXIC\""), Some(true));
        assert_eq!(parse_verdict("I think it is toxic"), None);
        assert_eq!(parse_verdict(""), None);
    }

    #[test]
    fn perfect_predictions() {
        let r = eval_toxicity_labels(&[ToxicityLabel::Toxic; 3], &[ToxicityLabel::Benign; 4]).unwrap();
        assert_eq!((r.precision, r.specificity), (1.0, 1.0));
        assert!(eval_toxicity_labels(&[], &[ToxicityLabel::Benign]).is_err());
    }

    proptest! {
        #[test]
        fn metrics_match_confusion_counts(t in prop::collection::vec(any::<bool>(), 1..40), b in prop::collection::vec(any::<bool>(), 1..40)) {
            let lab = |x: &bool| if *x { ToxicityLabel::Toxic } else { ToxicityLabel::Benign };
            let th: Vec<_> = t.iter().map(lab).collect();
            let bh: Vec<_> = b.iter().map(lab).collect();
            let r = eval_toxicity_labels(&th, &bh).unwrap();
            let mut tp = 0; let mut fp = 0; let mut tn = 0; let mut fn_ = 0;
            for x in &t { if *x { tp += 1 } else { fp += 1 } }
            for x in &b { if *x { fn_ += 1 } else { tn += 1 } }
            prop_assert_eq!((r.tp, r.fp, r.tn, r.fn_), (tp, fp, tn, fn_));
            prop_assert_eq!(r.precision, tp as f64 / (tp + fp) as f64);
            prop_assert_eq!(r.specificity, tn as f64 / (tn + fn_) as f64);
        }
    }

    fn fixture_params() -> TrainParams {
        TrainParams { epochs: 25, lr: 1.0, ..Default::default() }
    }

    fn features() -> FeatureConfig {
        FeatureConfig { hash_buckets: 1 << 18, ..Default::default() }
    }

    #[test]
    fn r0_detects_known_toxicity() {
        let f = crate::synth::toxicity_fixture(1, 100);
        let set = build_initial_toxicity_set(&f.sources, &f.own_benign, 100, 1).unwrap();
        let r0 = train_toxicity_r0(&set, &fixture_params(), &features()).unwrap();
        // odd test items come from the same cluster as the public toxic data
        let known: Vec<String> = f.toxic_test.iter().skip(1).step_by(2).cloned().collect();
        let r = eval_toxicity(&r0, &known, &f.benign_test).unwrap();
        assert!(r.precision >= 0.9, "{r:?}");
        assert!(f.pool.iter().all(|t| (0.0..=1.0).contains(&r0.score(t))));
        let again = train_toxicity_r0(&set, &fixture_params(), &features()).unwrap();
        assert_eq!(again, r0);
    }

    #[test]
    fn loop_rounds_improve_precision() {
        let f = crate::synth::toxicity_fixture(2, 100);
        let set = build_initial_toxicity_set(&f.sources, &f.own_benign, 100, 2).unwrap();
        let r0 = train_toxicity_r0(&set, &fixture_params(), &features()).unwrap();
        let p0 = eval_toxicity(&r0, &f.toxic_test, &f.benign_test).unwrap();
        let mut oracle = MockOracle::from_table(f.truth.clone());
        let cfg = LoopConfig { params: fixture_params(), ..Default::default() };
        let rounds = run_llm_loop(&r0, &f.pool, &mut oracle, &set, 2, &cfg).unwrap();
        let mut prev = p0;
        for o in &rounds {
            let r = eval_toxicity(&o.classifier, &f.toxic_test, &f.benign_test).unwrap();
            assert!(r.precision >= prev.precision - 0.02);
            assert!(r.fp <= prev.fp);
            prev = r;
        }
        assert!(prev.precision >= p0.precision + 0.05, "{p0:?} -> {prev:?}");
        let comp = rounds[1].set.composition();
        assert!(comp.keys().any(|(p, _)| *p == Provenance::OracleRound(1)));
        assert!(comp.keys().any(|(p, _)| *p == Provenance::OracleRound(2)));
        let oracle_items = rounds[0].set.items().iter().filter(|i| i.provenance == Provenance::OracleRound(1)).count();
        assert_eq!(oracle_items, rounds[0].oracle_toxic + rounds[0].oracle_benign);
        assert_eq!(rounds[0].set.items().len(), set.items().len() + oracle_items);
        assert_eq!(oracle.calls, 2);
    }

    #[test]
    fn oracle_failure_and_empty_candidates() {
        let f = crate::synth::toxicity_fixture(3, 20);
        let set = build_initial_toxicity_set(&f.sources, &f.own_benign, 20, 3).unwrap();
        let params = fixture_params();
        let r0 = train_toxicity_r0(&set, &params, &features()).unwrap();
        let cfg = LoopConfig { params, ..Default::default() };
        let mut down = MockOracle::unavailable();
        assert!(matches!(llm_loop_round(&r0, &f.pool, &mut down, &set, 1, &cfg), Err(ToxicityError::OracleUnavailable(_))));
        let high = LoopConfig { candidate_threshold: 1.0, ..cfg };
        let mut oracle = MockOracle::from_fn(|_| Some(true));
        let o = llm_loop_round(&r0, &f.pool, &mut oracle, &set, 1, &high).unwrap();
        assert!(o.skipped);
        assert_eq!(o.classifier, r0);
        assert_eq!(o.set, set);
        assert_eq!(oracle.calls, 0);
    }

    #[test]
    fn unparseable_oracle_replies_are_skipped() {
        let f = crate::synth::toxicity_fixture(4, 20);
        let set = build_initial_toxicity_set(&f.sources, &f.own_benign, 20, 4).unwrap();
        let params = fixture_params();
        let r0 = train_toxicity_r0(&set, &params, &features()).unwrap();
        let mut oracle = MockOracle::from_fn(|_| None);
        let o = llm_loop_round(&r0, &f.pool, &mut oracle, &set, 1, &LoopConfig { params, ..Default::default() }).unwrap();
        assert!(o.candidates > 0);
        assert_eq!(o.unparseable, o.candidates);
        assert_eq!(o.set, set);
    }

    #[test]
    fn train_set_jsonl_round_trip() {
        let set = build_initial_toxicity_set(&sources(2, 3), &[], 0, 1).unwrap();
        let mut buf = Vec::new();
        set.write_jsonl(&mut buf).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("set.jsonl");
        std::fs::write(&p, &buf).unwrap();
        let back = ToxicityTrainSet::read_jsonl(&p).unwrap();
        assert_eq!(back.items(), set.items());
        assert!(back.is_doubled());
    }
}
