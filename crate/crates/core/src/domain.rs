//! Domain classification: keyword rules bootstrap a linear classifier,
//! which then refines the rules through confident predictions.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use aho_corasick::{AhoCorasick, AhoCorasickBuilder, MatchKind};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::{train, ClassifierError, FeatureConfig, LabeledCorpus, LinearModel, TrainParams};
use crate::model::DomainLabel;
use crate::text::{is_cjk, word_runs};

pub const MULTI_LABEL_THRESHOLD: f64 = 0.3;

#[derive(Debug, thiserror::Error)]
pub enum DomainError {
    #[error("invalid keyword rules: {0}")]
    InvalidRules(String),
    #[error("keyword file line {line}: {reason}")]
    KeywordFile { line: usize, reason: String },
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("test set is empty")]
    EmptyTestSet,
    #[error("model label {0:?} is not a domain")]
    NotADomainModel(String),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// How keyword hits are counted against the threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CountMode {
    /// Number of different keywords present.
    #[default]
    Distinct,
    /// Every occurrence counts, repeats included.
    Occurrences,
}

#[derive(Debug, Clone)]
pub struct KeywordRuleSet {
    keywords: BTreeMap<DomainLabel, Vec<String>>,
    freq_threshold: usize,
    count_mode: CountMode,
    matcher: AhoCorasick,
    /// Domains owning each matcher pattern.
    owners: Vec<Vec<DomainLabel>>,
}

fn normalize_keyword(k: &str) -> String {
    k.trim().to_lowercase()
}

impl KeywordRuleSet {
    pub fn new(keywords: BTreeMap<DomainLabel, Vec<String>>, freq_threshold: usize) -> Result<Self, DomainError> {
        if freq_threshold == 0 {
            return Err(DomainError::InvalidRules("frequency threshold must be >= 1".into()));
        }
        if keywords.contains_key(&DomainLabel::General) {
            return Err(DomainError::InvalidRules("general has no keyword list".into()));
        }
        let mut cleaned = BTreeMap::new();
        for (domain, words) in keywords {
            let mut seen = HashSet::new();
            let words: Vec<String> = words
                .iter()
                .map(|w| normalize_keyword(w))
                .filter(|w| !w.is_empty() && seen.insert(w.clone()))
                .collect();
            if words.is_empty() {
                return Err(DomainError::InvalidRules(format!("{domain} has an empty keyword list")));
            }
            if !(20..=50).contains(&words.len()) {
                log::warn!("{domain} has {} keywords; 20 to 50 are expected", words.len());
            }
            cleaned.insert(domain, words);
        }
        if !(3..=5).contains(&freq_threshold) {
            log::warn!("frequency threshold {freq_threshold} is outside the usual 3..=5");
        }
        let (matcher, owners) = build_matcher(&cleaned);
        Ok(KeywordRuleSet { keywords: cleaned, freq_threshold, count_mode: CountMode::Distinct, matcher, owners })
    }

    pub fn with_count_mode(mut self, mode: CountMode) -> Self {
        self.count_mode = mode;
        self
    }

    pub fn keywords(&self) -> &BTreeMap<DomainLabel, Vec<String>> {
        &self.keywords
    }

    pub fn freq_threshold(&self) -> usize {
        self.freq_threshold
    }

    pub fn count_mode(&self) -> CountMode {
        self.count_mode
    }

    pub fn total_keywords(&self) -> usize {
        self.keywords.values().map(Vec::len).sum()
    }

    pub fn contains(&self, domain: DomainLabel, word: &str) -> bool {
        self.keywords.get(&domain).is_some_and(|ws| ws.iter().any(|w| w == word))
    }

    /// Appends new keywords; existing ones are never removed. Returns the
    /// words actually added.
    pub fn add_keywords(&mut self, domain: DomainLabel, words: &[String]) -> Vec<String> {
        if domain == DomainLabel::General {
            return Vec::new();
        }
        let list = self.keywords.entry(domain).or_default();
        let mut added = Vec::new();
        for w in words {
            let w = normalize_keyword(w);
            if !w.is_empty() && !list.contains(&w) {
                list.push(w.clone());
                added.push(w);
            }
        }
        if !added.is_empty() {
            let (m, o) = build_matcher(&self.keywords);
            self.matcher = m;
            self.owners = o;
        }
        added
    }

    /// Parses `[domain]` sections followed by one keyword per line.
    pub fn parse(contents: &str, freq_threshold: usize) -> Result<Self, DomainError> {
        let mut keywords: BTreeMap<DomainLabel, Vec<String>> = BTreeMap::new();
        let mut current = None;
        for (i, raw) in contents.lines().enumerate() {
            let line = raw.trim_start_matches('\u{feff}').trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                let d: DomainLabel = name
                    .trim()
                    .parse()
                    .map_err(|e: crate::model::UnknownDomain| DomainError::KeywordFile { line: i + 1, reason: e.to_string() })?;
                keywords.entry(d).or_default();
                current = Some(d);
                continue;
            }
            match current {
                Some(d) => keywords.get_mut(&d).unwrap().push(line.to_string()),
                None => {
                    return Err(DomainError::KeywordFile { line: i + 1, reason: "keyword before any [domain] section".into() })
                }
            }
        }
        Self::new(keywords, freq_threshold)
    }

    pub fn load(path: &Path, freq_threshold: usize) -> Result<Self, DomainError> {
        Self::parse(&crate::model::read_to_string(path)?, freq_threshold)
    }

    pub fn to_file_string(&self) -> String {
        let mut out = String::new();
        for (d, words) in &self.keywords {
            let _ = writeln!(out, "[{d}]");
            for w in words {
                let _ = writeln!(out, "{w}");
            }
            out.push('\n');
        }
        out
    }

    /// Keyword hit count per domain under the configured count mode.
    pub fn hits(&self, text: &str) -> BTreeMap<DomainLabel, usize> {
        let mut distinct: HashSet<usize> = HashSet::new();
        let mut occurrences: HashMap<usize, usize> = HashMap::new();
        for m in self.matcher.find_overlapping_iter(text) {
            let p = m.pattern().as_usize();
            distinct.insert(p);
            *occurrences.entry(p).or_default() += 1;
        }
        let mut out = BTreeMap::new();
        for p in distinct {
            let n = match self.count_mode {
                CountMode::Distinct => 1,
                CountMode::Occurrences => occurrences[&p],
            };
            for &d in &self.owners[p] {
                *out.entry(d).or_default() += n;
            }
        }
        out
    }
}

fn build_matcher(keywords: &BTreeMap<DomainLabel, Vec<String>>) -> (AhoCorasick, Vec<Vec<DomainLabel>>) {
    let mut patterns: Vec<String> = Vec::new();
    let mut owners: Vec<Vec<DomainLabel>> = Vec::new();
    let mut index: HashMap<&str, usize> = HashMap::new();
    for (d, words) in keywords {
        for w in words {
            match index.get(w.as_str()) {
                Some(&p) => owners[p].push(*d),
                None => {
                    index.insert(w, patterns.len());
                    patterns.push(w.clone());
                    owners.push(vec![*d]);
                }
            }
        }
    }
    let matcher = AhoCorasickBuilder::new()
        .match_kind(MatchKind::Standard)
        .ascii_case_insensitive(true)
        .build(&patterns)
        .expect("keyword automaton");
    (matcher, owners)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnnotationOrigin {
    Rule,
    Model,
    ConfidentModel,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainAnnotation {
    pub labels: BTreeSet<DomainLabel>,
    pub origin: AnnotationOrigin,
}

/// Every domain whose keyword hits reach the threshold, or `{general}`.
pub fn rule_classify(text: &str, rules: &KeywordRuleSet) -> DomainAnnotation {
    let mut labels: BTreeSet<DomainLabel> = rules
        .hits(text)
        .into_iter()
        .filter(|&(_, n)| n >= rules.freq_threshold)
        .map(|(d, _)| d)
        .collect();
    if labels.is_empty() {
        labels.insert(DomainLabel::General);
    }
    DomainAnnotation { labels, origin: AnnotationOrigin::Rule }
}

fn all_domain_corpus() -> LabeledCorpus {
    LabeledCorpus::with_labels(DomainLabel::ALL.iter().map(|d| d.as_str()))
}

fn corpus_from(examples: &[(String, BTreeSet<DomainLabel>)]) -> Result<LabeledCorpus, DomainError> {
    let mut c = all_domain_corpus();
    for (text, labels) in examples {
        let names: Vec<&str> = labels.iter().map(|d| d.as_str()).collect();
        c.push(text.clone(), &names)?;
    }
    Ok(c)
}

/// Labels the corpus with the rules and trains a classifier over all 11
/// domains on the result.
pub fn bootstrap_train(
    corpus: &[String],
    rules: &KeywordRuleSet,
    params: &TrainParams,
    features: &FeatureConfig,
) -> Result<DomainClassifier, DomainError> {
    if corpus.is_empty() {
        return Err(DomainError::EmptyCorpus);
    }
    let labeled: Vec<(String, BTreeSet<DomainLabel>)> =
        corpus.par_iter().map(|t| (t.clone(), rule_classify(t, rules).labels)).collect();
    let model = train(&corpus_from(&labeled)?, params, features)?;
    DomainClassifier::new(model)
}

/// A [`LinearModel`] whose labels are domains.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainClassifier {
    model: LinearModel,
    domains: Vec<DomainLabel>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DomainPrediction {
    pub single: DomainLabel,
    pub multi: BTreeSet<DomainLabel>,
    /// Probability of `single`.
    pub confidence: f64,
}

impl DomainClassifier {
    pub fn new(model: LinearModel) -> Result<Self, DomainError> {
        let domains = model
            .labels()
            .iter()
            .map(|l| l.parse::<DomainLabel>().map_err(|_| DomainError::NotADomainModel(l.clone())))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(DomainClassifier { model, domains })
    }

    pub fn load(path: &Path) -> Result<Self, DomainError> {
        Self::new(LinearModel::load(path)?)
    }

    pub fn model(&self) -> &LinearModel {
        &self.model
    }

    pub fn into_model(self) -> LinearModel {
        self.model
    }

    pub fn domains(&self) -> &[DomainLabel] {
        &self.domains
    }

    pub fn classify(&self, text: &str) -> DomainPrediction {
        classify_from_probs(&self.domains, &self.model.probabilities(text))
    }
}

/// Single label = argmax (ties to label order); multi = every label above
/// 0.3, falling back to `{single}` when none is.
pub fn classify_from_probs(domains: &[DomainLabel], probs: &[f64]) -> DomainPrediction {
    let mut best = 0;
    for (i, p) in probs.iter().enumerate() {
        if *p > probs[best] {
            best = i;
        }
    }
    let mut multi: BTreeSet<DomainLabel> =
        domains.iter().zip(probs).filter(|(_, &p)| p > MULTI_LABEL_THRESHOLD).map(|(d, _)| *d).collect();
    if multi.is_empty() {
        multi.insert(domains[best]);
    }
    DomainPrediction { single: domains[best], multi, confidence: probs[best] }
}

pub fn classify_domains(classifier: &DomainClassifier, text: &str) -> (DomainLabel, BTreeSet<DomainLabel>) {
    let p = classifier.classify(text);
    (p.single, p.multi)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IterationConfig {
    pub confidence_threshold: f64,
    pub keyword_candidates_per_domain: usize,
    pub rounds: usize,
    /// A candidate must occur in at least this many confident texts of its domain.
    pub min_support: usize,
    /// Required ratio between in-domain and out-of-domain document rates.
    pub min_ratio: f64,
}

impl IterationConfig {
    pub fn validate(&self) -> Result<(), DomainError> {
        if !(self.confidence_threshold > 0.0 && self.confidence_threshold <= 1.0) {
            return Err(DomainError::InvalidConfig(format!("confidence threshold {} not in (0, 1]", self.confidence_threshold)));
        }
        if !(self.min_ratio > 0.0) {
            return Err(DomainError::InvalidConfig("min_ratio must be positive".into()));
        }
        Ok(())
    }
}

impl Default for IterationConfig {
    fn default() -> Self {
        IterationConfig { confidence_threshold: 0.9, keyword_candidates_per_domain: 10, rounds: 1, min_support: 2, min_ratio: 5.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KeywordCandidate {
    pub word: String,
    pub in_domain: usize,
    pub elsewhere: usize,
    pub ratio: f64,
}

/// Human (or scripted) veto over induced keywords.
pub trait KeywordReview {
    fn review(&mut self, round: usize, candidates: &BTreeMap<DomainLabel, Vec<KeywordCandidate>>) -> BTreeMap<DomainLabel, Vec<String>>;
}

/// Accepts every candidate.
pub struct AcceptAll;

impl KeywordReview for AcceptAll {
    fn review(&mut self, _: usize, candidates: &BTreeMap<DomainLabel, Vec<KeywordCandidate>>) -> BTreeMap<DomainLabel, Vec<String>> {
        candidates.iter().map(|(d, cs)| (*d, cs.iter().map(|c| c.word.clone()).collect())).collect()
    }
}

/// Candidate terms of a text: non-CJK words of 2+ characters and the 2-
/// to 4-character substrings of CJK runs.
fn candidate_terms(text: &str) -> HashSet<String> {
    let mut out = HashSet::new();
    for run in word_runs(text) {
        let chars: Vec<char> = run.chars().collect();
        if chars.first().is_some_and(|c| is_cjk(*c)) {
            for n in 2..=4 {
                for w in chars.windows(n) {
                    out.insert(w.iter().collect());
                }
            }
        } else if chars.len() >= 2 && !chars.iter().all(|c| c.is_ascii_digit()) {
            out.insert(run);
        }
    }
    out
}

/// Ranks new keyword candidates per domain from confidently labeled texts.
pub fn induce_keywords(
    confident: &[(&str, DomainLabel)],
    rules: &KeywordRuleSet,
    cfg: &IterationConfig,
) -> BTreeMap<DomainLabel, Vec<KeywordCandidate>> {
    let term_sets: Vec<HashSet<String>> = confident.par_iter().map(|(t, _)| candidate_terms(t)).collect();
    let mut df_all: HashMap<&str, usize> = HashMap::new();
    let mut df_in: BTreeMap<DomainLabel, HashMap<&str, usize>> = BTreeMap::new();
    let mut docs_in: BTreeMap<DomainLabel, usize> = BTreeMap::new();
    for (terms, (_, d)) in term_sets.iter().zip(confident) {
        *docs_in.entry(*d).or_default() += 1;
        let per = df_in.entry(*d).or_default();
        for t in terms {
            *df_all.entry(t).or_default() += 1;
            *per.entry(t).or_default() += 1;
        }
    }
    let existing: HashSet<&str> = rules.keywords().values().flatten().map(String::as_str).collect();
    let total = confident.len();
    let mut out = BTreeMap::new();
    for (&domain, counts) in &df_in {
        if domain == DomainLabel::General {
            continue;
        }
        let n_in = docs_in[&domain];
        let n_out = total - n_in;
        let own: Vec<&str> = rules.keywords().get(&domain).map(|v| v.iter().map(String::as_str).collect()).unwrap_or_default();
        let mut ranked: Vec<KeywordCandidate> = counts
            .iter()
            .filter(|(_, &c)| c >= cfg.min_support)
            .filter(|(w, _)| !existing.contains(**w))
            .filter(|(w, _)| !own.iter().any(|k| k.contains(**w) || w.contains(k)))
            .filter_map(|(&w, &c)| {
                let elsewhere = df_all[w] - c;
                let rate_in = c as f64 / n_in as f64;
                // add-one smoothing keeps the ratio finite when a term never occurs elsewhere
                let rate_out = (elsewhere as f64 + 1.0) / (n_out as f64 + 1.0);
                let ratio = rate_in / rate_out;
                let raw_out = if n_out == 0 { 0.0 } else { elsewhere as f64 / n_out as f64 };
                (rate_in >= cfg.min_ratio * raw_out).then(|| KeywordCandidate { word: w.to_string(), in_domain: c, elsewhere, ratio })
            })
            .collect();
        ranked.sort_by(|a, b| {
            b.ratio
                .partial_cmp(&a.ratio)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(b.in_domain.cmp(&a.in_domain))
                .then(a.word.cmp(&b.word))
        });
        let mut picked: Vec<KeywordCandidate> = Vec::new();
        for c in ranked {
            if picked.len() == cfg.keyword_candidates_per_domain {
                break;
            }
            if picked.iter().any(|p| p.word.contains(&c.word) || c.word.contains(&p.word)) {
                continue;
            }
            picked.push(c);
        }
        if !picked.is_empty() {
            out.insert(domain, picked);
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct IterationOutcome {
    pub classifier: DomainClassifier,
    pub rules: KeywordRuleSet,
    pub train_set: Vec<(String, DomainAnnotation)>,
    pub candidates: BTreeMap<DomainLabel, Vec<KeywordCandidate>>,
    pub added: BTreeMap<DomainLabel, Vec<String>>,
    pub confident: usize,
    /// True when no prediction reached the confidence threshold and the
    /// round left model and rules unchanged.
    pub skipped: bool,
}

/// One round of rule/model co-refinement over `pool`.
pub fn optimize_round(
    classifier: &DomainClassifier,
    rules: &KeywordRuleSet,
    pool: &[String],
    cfg: &IterationConfig,
    round: usize,
    review: &mut dyn KeywordReview,
    params: &TrainParams,
) -> Result<IterationOutcome, DomainError> {
    cfg.validate()?;
    if pool.is_empty() {
        return Err(DomainError::EmptyCorpus);
    }
    let predictions: Vec<DomainPrediction> = pool.par_iter().map(|t| classifier.classify(t)).collect();
    let confident: Vec<(&str, DomainLabel)> = pool
        .iter()
        .zip(&predictions)
        .filter(|(_, p)| p.confidence >= cfg.confidence_threshold)
        .map(|(t, p)| (t.as_str(), p.single))
        .collect();
    if confident.is_empty() {
        log::warn!("round {round}: no prediction reached confidence {}; round skipped", cfg.confidence_threshold);
        return Ok(IterationOutcome {
            classifier: classifier.clone(),
            rules: rules.clone(),
            train_set: Vec::new(),
            candidates: BTreeMap::new(),
            added: BTreeMap::new(),
            confident: 0,
            skipped: true,
        });
    }
    let candidates = induce_keywords(&confident, rules, cfg);
    let accepted = review.review(round, &candidates);
    let mut new_rules = rules.clone();
    let mut added = BTreeMap::new();
    for (d, words) in &accepted {
        let a = new_rules.add_keywords(*d, words);
        if !a.is_empty() {
            added.insert(*d, a);
        }
    }
    let train_set: Vec<(String, DomainAnnotation)> = pool
        .par_iter()
        .zip(&predictions)
        .map(|(t, p)| {
            let ann = if p.confidence >= cfg.confidence_threshold {
                DomainAnnotation { labels: [p.single].into_iter().collect(), origin: AnnotationOrigin::ConfidentModel }
            } else {
                rule_classify(t, &new_rules)
            };
            (t.clone(), ann)
        })
        .collect();
    let examples: Vec<(String, BTreeSet<DomainLabel>)> = train_set.iter().map(|(t, a)| (t.clone(), a.labels.clone())).collect();
    let round_params = TrainParams { seed: params.seed.wrapping_add(round as u64), ..*params };
    let model = train(&corpus_from(&examples)?, &round_params, classifier.model().feature_config())?;
    Ok(IterationOutcome {
        classifier: DomainClassifier::new(model)?,
        rules: new_rules,
        train_set,
        candidates,
        added,
        confident: confident.len(),
        skipped: false,
    })
}

/// Runs `cfg.rounds` rounds; returns the outcome of each.
pub fn iterate_optimize(
    classifier: &DomainClassifier,
    rules: &KeywordRuleSet,
    pool: &[String],
    cfg: &IterationConfig,
    review: &mut dyn KeywordReview,
    params: &TrainParams,
) -> Result<Vec<IterationOutcome>, DomainError> {
    let mut outcomes: Vec<IterationOutcome> = Vec::with_capacity(cfg.rounds);
    for round in 1..=cfg.rounds {
        let (c, r) = match outcomes.last() {
            Some(o) => (&o.classifier, &o.rules),
            None => (classifier, rules),
        };
        let o = optimize_round(c, r, pool, cfg, round, review, params)?;
        outcomes.push(o);
    }
    Ok(outcomes)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingleLabelMetrics {
    pub precision: f64,
    pub recall: f64,
    /// Share of documents whose prediction equals the gold single label.
    pub accuracy: f64,
    pub predicted: u64,
    pub true_labels: u64,
    pub correct: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiLabelMetrics {
    pub micro_precision: f64,
    pub micro_recall: f64,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainEvalResult {
    pub single: SingleLabelMetrics,
    pub multi: MultiLabelMetrics,
    pub per_label: BTreeMap<DomainLabel, LabelCounts>,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// A gold-labeled evaluation item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainTestItem {
    pub text: String,
    pub gold_single: DomainLabel,
    pub gold_multi: BTreeSet<DomainLabel>,
}

/// Metrics from predictions and golds given as `(single, multi)` pairs.
pub fn eval_domain_predictions(
    predicted: &[(DomainLabel, BTreeSet<DomainLabel>)],
    gold: &[(DomainLabel, BTreeSet<DomainLabel>)],
) -> Result<DomainEvalResult, DomainError> {
    if gold.is_empty() || predicted.len() != gold.len() {
        return Err(DomainError::EmptyTestSet);
    }
    let mut correct = 0u64;
    let mut exact = 0u64;
    let mut true_labels = 0u64;
    let mut per_label: BTreeMap<DomainLabel, LabelCounts> = BTreeMap::new();
    for ((p_single, p_multi), (g_single, g_multi)) in predicted.iter().zip(gold) {
        true_labels += g_multi.len() as u64;
        correct += g_multi.contains(p_single) as u64;
        exact += (p_single == g_single) as u64;
        for d in p_multi.union(g_multi) {
            let c = per_label.entry(*d).or_default();
            match (p_multi.contains(d), g_multi.contains(d)) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => unreachable!(),
            }
        }
    }
    let n = gold.len() as u64;
    let (tp, fp, fn_) = per_label.values().fold((0, 0, 0), |(a, b, c), l| (a + l.tp, b + l.fp, c + l.fn_));
    Ok(DomainEvalResult {
        single: SingleLabelMetrics {
            precision: ratio(correct, n),
            recall: ratio(correct, true_labels),
            accuracy: ratio(exact, n),
            predicted: n,
            true_labels,
            correct,
        },
        multi: MultiLabelMetrics { micro_precision: ratio(tp, tp + fp), micro_recall: ratio(tp, tp + fn_), tp, fp, fn_ },
        per_label,
    })
}

pub fn eval_domain(classifier: &DomainClassifier, test: &[DomainTestItem]) -> Result<DomainEvalResult, DomainError> {
    if test.is_empty() {
        return Err(DomainError::EmptyTestSet);
    }
    let predicted: Vec<(DomainLabel, BTreeSet<DomainLabel>)> =
        test.par_iter().map(|t| classify_domains(classifier, &t.text)).collect();
    let gold: Vec<(DomainLabel, BTreeSet<DomainLabel>)> =
        test.iter().map(|t| (t.gold_single, t.gold_multi.clone())).collect();
    eval_domain_predictions(&predicted, &gold)
}
