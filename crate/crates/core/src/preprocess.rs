//! Rule-based filtering: data length, Chinese character proportion,
//! sensitive-word coverage and 13-gram deduplication.
//!
//! Filters run in that order and short-circuit at the first drop. The first
//! three are pure per-document functions; dedup carries state across the
//! stream and must see documents in input order.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use aho_corasick::{AhoCorasick, AhoCorasickBuilder, MatchKind};
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use nohash_hasher::BuildNoHashHasher;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;
use xxhash_rust::xxh3::xxh3_64;

use crate::model::{Document, FilterReason, FilterVerdict};
use crate::text::is_cjk;

#[derive(Debug, thiserror::Error)]
pub enum PreprocessError {
    #[error("invalid preprocess config: {0}")]
    InvalidConfig(String),
    #[error("sensitive lexicon is empty")]
    EmptyLexicon,
    #[error("dedup index file is corrupt: {0}")]
    CorruptIndex(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    pub min_avg_line_len: usize,
    pub min_chars: usize,
    pub min_chinese_ratio: f64,
    pub sensitive_line_ratio: f64,
    pub ngram_n: usize,
    pub dup_ratio: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            min_avg_line_len: 10,
            min_chars: 200,
            min_chinese_ratio: 0.30,
            sensitive_line_ratio: 0.50,
            ngram_n: 13,
            dup_ratio: 0.50,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<(), PreprocessError> {
        for (name, v) in [
            ("min_chinese_ratio", self.min_chinese_ratio),
            ("sensitive_line_ratio", self.sensitive_line_ratio),
            ("dup_ratio", self.dup_ratio),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(PreprocessError::InvalidConfig(format!("{name} = {v} is not in [0, 1]")));
            }
        }
        for (name, v) in [("min_avg_line_len", self.min_avg_line_len), ("min_chars", self.min_chars), ("ngram_n", self.ngram_n)] {
            if v < 1 {
                return Err(PreprocessError::InvalidConfig(format!("{name} must be >= 1")));
            }
        }
        Ok(())
    }
}

/// Mean characters per non-empty line, or `None` when every line is empty.
pub fn average_line_length(text: &str) -> Option<f64> {
    let (chars, lines) = text
        .split('\n')
        .map(|l| l.strip_suffix('\r').unwrap_or(l))
        .filter(|l| !l.is_empty())
        .fold((0usize, 0usize), |(c, n), l| (c + l.chars().count(), n + 1));
    (lines > 0).then(|| chars as f64 / lines as f64)
}

pub fn filter_length(doc: &Document, cfg: &PreprocessConfig) -> FilterVerdict {
    match average_line_length(&doc.text) {
        Some(avg) if avg >= cfg.min_avg_line_len as f64 => {}
        _ => return FilterVerdict::drop(FilterReason::AvgLineLength),
    }
    if doc.text.chars().count() < cfg.min_chars {
        return FilterVerdict::drop(FilterReason::TooShort);
    }
    FilterVerdict::KEEP
}

/// Share of CJK ideographs among non-whitespace characters; 0 for texts
/// without any.
pub fn chinese_ratio(text: &str) -> f64 {
    let (cjk, total) = text
        .chars()
        .filter(|c| !c.is_whitespace())
        .fold((0usize, 0usize), |(k, n), c| (k + is_cjk(c) as usize, n + 1));
    if total == 0 {
        0.0
    } else {
        cjk as f64 / total as f64
    }
}

pub fn filter_char_proportion(doc: &Document, cfg: &PreprocessConfig) -> FilterVerdict {
    // Integer comparison avoids float artefacts right at the boundary.
    let (cjk, total) = doc
        .text
        .chars()
        .filter(|c| !c.is_whitespace())
        .fold((0usize, 0usize), |(k, n), c| (k + is_cjk(c) as usize, n + 1));
    if total == 0 || ratio_below(cjk, total, cfg.min_chinese_ratio) {
        FilterVerdict::drop(FilterReason::CharProportion)
    } else {
        FilterVerdict::KEEP
    }
}

/// `num / den < ratio`, robust to `ratio` being a decimal like 0.3.
fn ratio_below(num: usize, den: usize, ratio: f64) -> bool {
    let scaled = ratio * den as f64;
    let rounded = scaled.round();
    if (scaled - rounded).abs() < 1e-9 {
        (num as f64) < rounded
    } else {
        (num as f64) < scaled
    }
}

/// `num / den > ratio`, same rounding treatment as [`ratio_below`].
fn ratio_above(num: usize, den: usize, ratio: f64) -> bool {
    let scaled = ratio * den as f64;
    let rounded = scaled.round();
    if (scaled - rounded).abs() < 1e-9 {
        (num as f64) > rounded
    } else {
        (num as f64) > scaled
    }
}

/// The word list behind the sensitive-word filter. Matching is
/// leftmost-longest and non-overlapping.
#[derive(Debug, Clone)]
pub struct SensitiveLexicon {
    words: Vec<String>,
    matcher: AhoCorasick,
}

impl SensitiveLexicon {
    pub fn new<I, S>(words: I) -> Result<Self, PreprocessError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut seen = HashSet::new();
        let words: Vec<String> = words
            .into_iter()
            .map(|w| w.into().nfc().collect::<String>())
            .filter(|w| !w.is_empty() && seen.insert(w.clone()))
            .collect();
        if words.is_empty() {
            return Err(PreprocessError::EmptyLexicon);
        }
        let matcher = AhoCorasickBuilder::new()
            .match_kind(MatchKind::LeftmostLongest)
            .build(&words)
            .map_err(|e| PreprocessError::InvalidConfig(e.to_string()))?;
        Ok(SensitiveLexicon { words, matcher })
    }

    /// One word per line, `#` starts a comment line.
    pub fn parse(contents: &str) -> Result<Self, PreprocessError> {
        Self::new(
            contents
                .lines()
                .map(|l| l.trim_start_matches('\u{feff}').trim())
                .filter(|l| !l.is_empty() && !l.starts_with('#')),
        )
    }

    pub fn load(path: &Path) -> Result<Self, PreprocessError> {
        Self::parse(&crate::model::read_to_string(path)?)
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    /// Characters of `line` covered by lexicon matches.
    pub fn covered_chars(&self, line: &str) -> usize {
        self.matcher.find_iter(line).map(|m| line[m.start()..m.end()].chars().count()).sum()
    }
}

/// Highest per-line sensitive coverage of the text (0 for an empty text).
pub fn max_sensitive_coverage(text: &str, lex: &SensitiveLexicon) -> f64 {
    text.split('\n')
        .filter_map(|line| {
            let len = line.chars().count();
            (len > 0).then(|| lex.covered_chars(line) as f64 / len as f64)
        })
        .fold(0.0, f64::max)
}

pub fn filter_sensitive(doc: &Document, lex: &SensitiveLexicon, cfg: &PreprocessConfig) -> FilterVerdict {
    let text = if doc.text.is_ascii() { doc.text.clone() } else { doc.text.nfc().collect() };
    for line in text.split('\n') {
        let len = line.chars().count();
        if len == 0 {
            continue;
        }
        if ratio_above(lex.covered_chars(line), len, cfg.sensitive_line_ratio) {
            return FilterVerdict::drop(FilterReason::SensitiveWords);
        }
    }
    FilterVerdict::KEEP
}

type FingerprintSet = HashSet<u64, BuildNoHashHasher<u64>>;

const INDEX_MAGIC: &[u8; 8] = b"MDFGDI01";
pub const DEFAULT_DEDUP_SHARDS: usize = 64;

/// Fingerprints of every character n-gram of every kept document so far.
/// Shard assignment is `fingerprint % shards`.
#[derive(Debug, Clone)]
pub struct DedupIndex {
    shards: Vec<FingerprintSet>,
    ngram_n: usize,
}

/// What dedup saw for one document.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DedupCheck {
    pub chars: usize,
    pub covered: usize,
}

impl DedupCheck {
    pub fn proportion(&self) -> f64 {
        if self.chars == 0 {
            0.0
        } else {
            self.covered as f64 / self.chars as f64
        }
    }
}

/// Fingerprint of one n-gram (already NFC).
pub fn gram_fingerprint(gram: &str) -> u64 {
    xxh3_64(gram.as_bytes())
}

/// Fingerprints of all character n-grams of `text` after NFC
/// normalisation, in position order, plus the character count.
pub fn gram_fingerprints(text: &str, n: usize) -> (Vec<u64>, usize) {
    let normalized: std::borrow::Cow<str> =
        if text.is_ascii() { text.into() } else { text.nfc().collect::<String>().into() };
    let offsets: Vec<usize> = normalized.char_indices().map(|(i, _)| i).chain([normalized.len()]).collect();
    let chars = offsets.len() - 1;
    if chars < n {
        return (Vec::new(), chars);
    }
    let fps = (0..=chars - n).map(|i| gram_fingerprint(&normalized[offsets[i]..offsets[i + n]])).collect();
    (fps, chars)
}

impl DedupIndex {
    pub fn new(ngram_n: usize) -> Self {
        Self::with_shards(ngram_n, DEFAULT_DEDUP_SHARDS)
    }

    pub fn with_shards(ngram_n: usize, shards: usize) -> Self {
        assert!(ngram_n >= 1 && shards >= 1);
        DedupIndex { shards: (0..shards).map(|_| FingerprintSet::default()).collect(), ngram_n }
    }

    pub fn ngram_n(&self) -> usize {
        self.ngram_n
    }

    pub fn len(&self) -> usize {
        self.shards.iter().map(HashSet::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn shard_of(&self, fp: u64) -> usize {
        (fp % self.shards.len() as u64) as usize
    }

    pub fn contains(&self, fp: u64) -> bool {
        self.shards[self.shard_of(fp)].contains(&fp)
    }

    pub fn insert(&mut self, fp: u64) {
        let s = self.shard_of(fp);
        self.shards[s].insert(fp);
    }

    /// Counts character positions covered by grams already in the index.
    pub fn check(&self, fps: &[u64], chars: usize) -> DedupCheck {
        let n = self.ngram_n;
        let mut covered = 0usize;
        // Positions below `cover_end` are already counted.
        let mut cover_end = 0usize;
        for (i, &fp) in fps.iter().enumerate() {
            if self.contains(fp) {
                let start = i.max(cover_end);
                let end = i + n;
                covered += end - start;
                cover_end = end;
            }
        }
        DedupCheck { chars, covered }
    }

    /// Check-then-insert for one document. Only kept documents insert.
    pub fn observe(&mut self, text: &str, dup_ratio: f64) -> (FilterVerdict, DedupCheck) {
        let (fps, chars) = gram_fingerprints(text, self.ngram_n);
        let check = self.check(&fps, chars);
        if chars > 0 && ratio_above(check.covered, chars, dup_ratio) {
            return (FilterVerdict::drop(FilterReason::Duplicate), check);
        }
        for fp in fps {
            self.insert(fp);
        }
        (FilterVerdict::KEEP, check)
    }

    pub fn save(&self, path: &Path) -> io::Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(INDEX_MAGIC)?;
        w.write_u32::<LittleEndian>(self.ngram_n as u32)?;
        w.write_u32::<LittleEndian>(self.shards.len() as u32)?;
        for shard in &self.shards {
            let mut fps: Vec<u64> = shard.iter().copied().collect();
            fps.sort_unstable();
            w.write_u64::<LittleEndian>(fps.len() as u64)?;
            for fp in fps {
                w.write_u64::<LittleEndian>(fp)?;
            }
        }
        w.flush()
    }

    pub fn load(path: &Path) -> Result<Self, PreprocessError> {
        let corrupt = |e: io::Error| PreprocessError::CorruptIndex(e.to_string());
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(corrupt)?;
        if &magic != INDEX_MAGIC {
            return Err(PreprocessError::CorruptIndex("bad magic".into()));
        }
        let n = r.read_u32::<LittleEndian>().map_err(corrupt)? as usize;
        let shards = r.read_u32::<LittleEndian>().map_err(corrupt)? as usize;
        if n == 0 || shards == 0 {
            return Err(PreprocessError::CorruptIndex("zero n-gram size or shard count".into()));
        }
        let mut index = DedupIndex::with_shards(n, shards);
        for _ in 0..shards {
            let count = r.read_u64::<LittleEndian>().map_err(corrupt)?;
            for _ in 0..count {
                let fp = r.read_u64::<LittleEndian>().map_err(corrupt)?;
                index.insert(fp);
            }
        }
        Ok(index)
    }
}

/// Streams `(document, verdict)` pairs through the dedup rule.
pub struct DedupPass<'a, I> {
    inner: I,
    index: &'a mut DedupIndex,
    dup_ratio: f64,
}

pub fn dedup_pass<'a, I>(stream: I, index: &'a mut DedupIndex, cfg: &PreprocessConfig) -> DedupPass<'a, I::IntoIter>
where
    I: IntoIterator<Item = Document>,
{
    DedupPass { inner: stream.into_iter(), index, dup_ratio: cfg.dup_ratio }
}

impl<I: Iterator<Item = Document>> Iterator for DedupPass<'_, I> {
    type Item = (Document, FilterVerdict);

    fn next(&mut self) -> Option<Self::Item> {
        let doc = self.inner.next()?;
        let (verdict, _) = self.index.observe(&doc.text, self.dup_ratio);
        Some((doc, verdict))
    }
}

/// Meta key recording the last stage a document passed through.
pub const STAGE_KEY: &str = "mdfg_stage";
pub const STAGE_PREPROCESSED: &str = "preprocessed";

/// Tags a kept document so the annotator accepts it.
pub fn mark_preprocessed(doc: &mut Document) {
    doc.meta.insert(STAGE_KEY.to_string(), STAGE_PREPROCESSED.to_string());
}

pub const STAGE_NAMES: [&str; 4] = ["data_length", "char_proportion", "sensitive_words", "deduplication"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: String,
    pub input: u64,
    pub removed: u64,
    /// Removed share of this stage's input.
    pub removed_fraction: f64,
    /// Share of the original input still present after this stage.
    pub remaining_fraction: f64,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub by_reason: BTreeMap<FilterReason, u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemovalReport {
    pub original: u64,
    pub kept: u64,
    pub malformed: u64,
    pub stages: Vec<StageReport>,
}

impl RemovalReport {
    /// Checks `input(k+1) = input(k) - removed(k)` and monotone remaining fractions.
    pub fn is_consistent(&self) -> bool {
        let mut expected = self.original;
        let mut last_remaining = 1.0;
        for s in &self.stages {
            if s.input != expected || s.removed > s.input || s.remaining_fraction > last_remaining {
                return false;
            }
            expected = s.input - s.removed;
            last_remaining = s.remaining_fraction;
        }
        expected == self.kept
    }
}

/// Per-stage counters; turned into a [`RemovalReport`] at the end.
#[derive(Debug, Clone, Default)]
pub struct RemovalCounter {
    original: u64,
    malformed: u64,
    removed: [BTreeMap<FilterReason, u64>; 4],
}

fn stage_of(reason: FilterReason) -> Option<usize> {
    match reason {
        FilterReason::AvgLineLength | FilterReason::TooShort => Some(0),
        FilterReason::CharProportion => Some(1),
        FilterReason::SensitiveWords => Some(2),
        FilterReason::Duplicate => Some(3),
        FilterReason::None => None,
    }
}

impl RemovalCounter {
    pub fn record(&mut self, verdict: FilterVerdict) {
        self.original += 1;
        if let Some(stage) = stage_of(verdict.reason()) {
            *self.removed[stage].entry(verdict.reason()).or_default() += 1;
        }
    }

    pub fn record_malformed(&mut self) {
        self.malformed += 1;
    }

    pub fn report(&self) -> RemovalReport {
        let mut input = self.original;
        let stages = STAGE_NAMES
            .iter()
            .zip(&self.removed)
            .map(|(name, by_reason)| {
                let removed: u64 = by_reason.values().sum();
                let remaining = input - removed;
                let s = StageReport {
                    stage: name.to_string(),
                    input,
                    removed,
                    removed_fraction: if input == 0 { 0.0 } else { removed as f64 / input as f64 },
                    remaining_fraction: if self.original == 0 { 1.0 } else { remaining as f64 / self.original as f64 },
                    by_reason: by_reason.clone(),
                };
                input = remaining;
                s
            })
            .collect();
        RemovalReport { original: self.original, kept: input, malformed: self.malformed, stages }
    }
}

/// The four filters with their shared state.
pub struct Preprocessor {
    cfg: PreprocessConfig,
    lexicon: SensitiveLexicon,
    index: DedupIndex,
    counter: RemovalCounter,
}

impl Preprocessor {
    pub fn new(cfg: PreprocessConfig, lexicon: SensitiveLexicon) -> Result<Self, PreprocessError> {
        cfg.validate()?;
        let index = DedupIndex::new(cfg.ngram_n);
        Ok(Preprocessor { cfg, lexicon, index, counter: RemovalCounter::default() })
    }

    /// Continues deduplicating against a previously saved index.
    pub fn with_index(mut self, index: DedupIndex) -> Result<Self, PreprocessError> {
        if index.ngram_n() != self.cfg.ngram_n {
            return Err(PreprocessError::InvalidConfig(format!(
                "index uses {}-grams but config asks for {}-grams",
                index.ngram_n(),
                self.cfg.ngram_n
            )));
        }
        self.index = index;
        Ok(self)
    }

    pub fn config(&self) -> &PreprocessConfig {
        &self.cfg
    }

    pub fn index(&self) -> &DedupIndex {
        &self.index
    }

    /// The stateless filters, in order.
    pub fn rule_verdict(&self, doc: &Document) -> FilterVerdict {
        let v = filter_length(doc, &self.cfg);
        if !v.is_keep() {
            return v;
        }
        let v = filter_char_proportion(doc, &self.cfg);
        if !v.is_keep() {
            return v;
        }
        filter_sensitive(doc, &self.lexicon, &self.cfg)
    }

    /// All four filters for one document.
    pub fn process(&mut self, doc: &Document) -> FilterVerdict {
        let mut v = self.rule_verdict(doc);
        if v.is_keep() {
            v = self.index.observe(&doc.text, self.cfg.dup_ratio).0;
        }
        self.counter.record(v);
        v
    }

    /// Runs the stateless filters in parallel over `docs`, then dedups
    /// sequentially in input order. Equivalent to calling [`process`] on
    /// each document in turn.
    ///
    /// [`process`]: Preprocessor::process
    pub fn process_batch(&mut self, docs: &[Document]) -> Vec<FilterVerdict> {
        let rule: Vec<FilterVerdict> = docs.par_iter().map(|d| self.rule_verdict(d)).collect();
        let n = self.cfg.ngram_n;
        let grams: Vec<Option<(Vec<u64>, usize)>> = docs
            .par_iter()
            .zip(&rule)
            .map(|(d, v)| v.is_keep().then(|| gram_fingerprints(&d.text, n)))
            .collect();
        rule.into_iter()
            .zip(grams)
            .map(|(v, g)| {
                let v = match g {
                    Some((fps, chars)) => {
                        let check = self.index.check(&fps, chars);
                        if chars > 0 && ratio_above(check.covered, chars, self.cfg.dup_ratio) {
                            FilterVerdict::drop(FilterReason::Duplicate)
                        } else {
                            for fp in fps {
                                self.index.insert(fp);
                            }
                            FilterVerdict::KEEP
                        }
                    }
                    None => v,
                };
                self.counter.record(v);
                v
            })
            .collect()
    }

    pub fn record_malformed(&mut self) {
        self.counter.record_malformed();
    }

    pub fn report(&self) -> RemovalReport {
        self.counter.report()
    }
}

/// Applies all four filters to a stream, handing kept documents to `keep`
/// with the stage marker set.
pub fn run_preprocess<I, F>(
    stream: I,
    cfg: &PreprocessConfig,
    lexicon: &SensitiveLexicon,
    mut keep: F,
) -> Result<RemovalReport, PreprocessError>
where
    I: IntoIterator<Item = Document>,
    F: FnMut(Document) -> io::Result<()>,
{
    let mut pre = Preprocessor::new(cfg.clone(), lexicon.clone())?;
    for mut doc in stream {
        if pre.process(&doc).is_keep() {
            mark_preprocessed(&mut doc);
            keep(doc)?;
        }
    }
    Ok(pre.report())
}
