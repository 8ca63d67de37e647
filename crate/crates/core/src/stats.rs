//! Distribution reports over annotated corpora.
//!
//! Every report is built from an accumulator holding integer counts only.
//! Accumulators merge by addition, so shards can be folded independently
//! and combined in any order; fractions are derived when a report is
//! rendered.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs::File;
use std::io::{self, BufRead, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::model::{open_input, write_record, AnnotatedDocument, DomainLabel, TOXIC_LABEL_THRESHOLD};
use crate::preprocess::RemovalReport;

#[derive(Debug, thiserror::Error)]
pub enum StatsError {
    #[error("histogram edges must be finite, strictly increasing and at least two: {0:?}")]
    InvalidEdges(Vec<f64>),
    #[error("cannot merge accumulators with different {0}")]
    Incompatible(&'static str),
    #[error("judgment file line {line}: {reason}")]
    Judgment { line: u64, reason: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Edges 0.0, 0.1, ..., 1.0.
pub fn decile_edges() -> Vec<f64> {
    (0..=10).map(|k| k as f64 / 10.0).collect()
}

/// Counts over half-open intervals `[a, b)`, except the last, which is closed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Histogram {
    edges: Vec<EdgeBits>,
    counts: Vec<u64>,
    out_of_range: u64,
}

// f64 wrapper so Histogram can be Eq; edges are validated finite.
#[derive(Debug, Clone, Copy, PartialEq)]
struct EdgeBits(f64);
impl Eq for EdgeBits {}

impl Histogram {
    pub fn new(edges: &[f64]) -> Result<Self, StatsError> {
        let ok = edges.len() >= 2 && edges.iter().all(|e| e.is_finite()) && edges.windows(2).all(|w| w[0] < w[1]);
        if !ok {
            return Err(StatsError::InvalidEdges(edges.to_vec()));
        }
        Ok(Histogram {
            edges: edges.iter().map(|&e| EdgeBits(e)).collect(),
            counts: vec![0; edges.len() - 1],
            out_of_range: 0,
        })
    }

    pub fn deciles() -> Self {
        Self::new(&decile_edges()).expect("decile edges are valid")
    }

    pub fn edges(&self) -> Vec<f64> {
        self.edges.iter().map(|e| e.0).collect()
    }

    pub fn bins(&self) -> usize {
        self.counts.len()
    }

    /// Bin index for `x`, or `None` outside `[first, last]` or for NaN.
    pub fn bin(&self, x: f64) -> Option<usize> {
        let n = self.counts.len();
        let lo = self.edges[0].0;
        let hi = self.edges[n].0;
        if !(x >= lo && x <= hi) {
            return None;
        }
        if x == hi {
            return Some(n - 1);
        }
        // number of edges <= x, minus one
        Some(self.edges.partition_point(|e| e.0 <= x) - 1)
    }

    pub fn add(&mut self, x: f64) {
        match self.bin(x) {
            Some(i) => self.counts[i] += 1,
            None => self.out_of_range += 1,
        }
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn out_of_range(&self) -> u64 {
        self.out_of_range
    }

    /// Items that landed in a bin.
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn proportions(&self) -> Vec<f64> {
        let total = self.total();
        self.counts
            .iter()
            .map(|&c| if total == 0 { 0.0 } else { c as f64 / total as f64 })
            .collect()
    }

    pub fn interval_label(&self, i: usize) -> String {
        let close = if i + 1 == self.counts.len() { ']' } else { ')' };
        format!("[{:?},{:?}{close}", self.edges[i].0, self.edges[i + 1].0)
    }

    pub fn merge(&mut self, other: &Histogram) -> Result<(), StatsError> {
        if self.edges != other.edges {
            return Err(StatsError::Incompatible("histogram edges"));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.out_of_range += other.out_of_range;
        Ok(())
    }

    pub fn report(&self) -> HistogramReport {
        let props = self.proportions();
        let bins = (0..self.bins())
            .map(|i| HistogramBin {
                interval: self.interval_label(i),
                lo: self.edges[i].0,
                hi: self.edges[i + 1].0,
                count: self.counts[i],
                proportion: props[i],
            })
            .collect();
        HistogramReport { total: self.total(), out_of_range: self.out_of_range, bins }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub interval: String,
    pub lo: f64,
    pub hi: f64,
    pub count: u64,
    pub proportion: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramReport {
    pub total: u64,
    pub out_of_range: u64,
    pub bins: Vec<HistogramBin>,
}

/// Per-domain document counts; a document counts once for each label in
/// its multi-label set.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DomainCounts {
    docs: u64,
    counts: [u64; DomainLabel::ALL.len()],
}

impl DomainCounts {
    pub fn add(&mut self, labels: &BTreeSet<DomainLabel>) {
        self.docs += 1;
        for l in labels {
            self.counts[l.index()] += 1;
        }
    }

    pub fn merge(&mut self, other: &DomainCounts) {
        self.docs += other.docs;
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }

    pub fn docs(&self) -> u64 {
        self.docs
    }

    pub fn count(&self, d: DomainLabel) -> u64 {
        self.counts[d.index()]
    }

    pub fn report(&self) -> DomainReport {
        let domains = DomainLabel::ALL
            .iter()
            .map(|&d| DomainRow {
                domain: d,
                count: self.count(d),
                proportion: if self.docs == 0 { 0.0 } else { self.count(d) as f64 / self.docs as f64 },
            })
            .collect();
        DomainReport { total_docs: self.docs, domains }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainRow {
    pub domain: DomainLabel,
    pub count: u64,
    /// Share of all documents; sums past 1 when documents carry several labels.
    pub proportion: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainReport {
    pub total_docs: u64,
    pub domains: Vec<DomainRow>,
}

/// Domain counts per quality interval.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CrossCounts {
    quality: Histogram,
    cells: Vec<DomainCounts>,
    all: DomainCounts,
}

impl CrossCounts {
    pub fn new(edges: &[f64]) -> Result<Self, StatsError> {
        let quality = Histogram::new(edges)?;
        let cells = vec![DomainCounts::default(); quality.bins()];
        Ok(CrossCounts { quality, cells, all: DomainCounts::default() })
    }

    pub fn deciles() -> Self {
        Self::new(&decile_edges()).expect("decile edges are valid")
    }

    pub fn add(&mut self, quality: f64, labels: &BTreeSet<DomainLabel>) {
        self.quality.add(quality);
        if let Some(i) = self.quality.bin(quality) {
            self.cells[i].add(labels);
        }
        self.all.add(labels);
    }

    pub fn merge(&mut self, other: &CrossCounts) -> Result<(), StatsError> {
        self.quality.merge(&other.quality)?;
        for (a, b) in self.cells.iter_mut().zip(&other.cells) {
            a.merge(b);
        }
        self.all.merge(&other.all);
        Ok(())
    }

    /// Percentage of interval `i`'s documents carrying `d`; `None` when
    /// the interval is empty.
    pub fn cell(&self, d: DomainLabel, i: usize) -> Option<f64> {
        let c = &self.cells[i];
        (c.docs > 0).then(|| 100.0 * c.count(d) as f64 / c.docs as f64)
    }

    pub fn total(&self, d: DomainLabel) -> Option<f64> {
        (self.all.docs > 0).then(|| 100.0 * self.all.count(d) as f64 / self.all.docs as f64)
    }

    pub fn report(&self) -> CrossTableReport {
        let intervals = (0..self.quality.bins()).map(|i| self.quality.interval_label(i)).collect();
        let interval_docs = self.cells.iter().map(|c| c.docs).collect();
        let rows = DomainLabel::ALL
            .iter()
            .map(|&d| CrossRow {
                domain: d,
                cells: (0..self.quality.bins()).map(|i| self.cell(d, i)).collect(),
                total: self.total(d),
            })
            .collect();
        CrossTableReport { intervals, interval_docs, total_docs: self.all.docs, rows }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossRow {
    pub domain: DomainLabel,
    /// Percentages; `null` for empty intervals.
    pub cells: Vec<Option<f64>>,
    pub total: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossTableReport {
    pub intervals: Vec<String>,
    pub interval_docs: Vec<u64>,
    pub total_docs: u64,
    pub rows: Vec<CrossRow>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToxicityCounts {
    threshold: EdgeBits,
    scores: Histogram,
    toxic: u64,
    benign: u64,
}

impl ToxicityCounts {
    pub fn new(threshold: f64) -> Self {
        ToxicityCounts { threshold: EdgeBits(threshold), scores: Histogram::deciles(), toxic: 0, benign: 0 }
    }

    pub fn add(&mut self, score: f64) {
        self.scores.add(score);
        if score > self.threshold.0 {
            self.toxic += 1;
        } else {
            self.benign += 1;
        }
    }

    pub fn merge(&mut self, other: &ToxicityCounts) -> Result<(), StatsError> {
        if self.threshold != other.threshold {
            return Err(StatsError::Incompatible("toxicity thresholds"));
        }
        self.scores.merge(&other.scores)?;
        self.toxic += other.toxic;
        self.benign += other.benign;
        Ok(())
    }

    pub fn report(&self) -> ToxicityReport {
        let n = self.toxic + self.benign;
        let frac = |c: u64| if n == 0 { 0.0 } else { c as f64 / n as f64 };
        ToxicityReport {
            threshold: self.threshold.0,
            toxic: self.toxic,
            benign: self.benign,
            toxic_fraction: frac(self.toxic),
            benign_fraction: frac(self.benign),
            histogram: self.scores.report(),
        }
    }
}

impl Default for ToxicityCounts {
    fn default() -> Self {
        Self::new(TOXIC_LABEL_THRESHOLD)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToxicityReport {
    pub threshold: f64,
    pub toxic: u64,
    pub benign: u64,
    pub toxic_fraction: f64,
    pub benign_fraction: f64,
    pub histogram: HistogramReport,
}

/// Human acceptance judgments, keyed by document id.
#[derive(Debug, Clone, Default)]
pub struct Judgments(HashMap<String, bool>);

#[derive(Deserialize)]
struct JudgmentLine {
    id: String,
    accepted: bool,
}

impl Judgments {
    pub fn new(items: impl IntoIterator<Item = (String, bool)>) -> Self {
        Judgments(items.into_iter().collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<bool> {
        self.0.get(id).copied()
    }

    /// Reads `id,accepted` CSV (with header) when the name ends in `.csv`,
    /// otherwise JSONL objects with `id` and `accepted`.
    pub fn load(path: &Path) -> Result<Self, StatsError> {
        let mut out = HashMap::new();
        if path.extension().is_some_and(|e| e == "csv") {
            let mut rdr = csv::Reader::from_path(path)?;
            for (i, rec) in rdr.deserialize::<JudgmentLine>().enumerate() {
                let rec = rec.map_err(|e| StatsError::Judgment { line: i as u64 + 2, reason: e.to_string() })?;
                out.insert(rec.id, rec.accepted);
            }
        } else {
            for (i, line) in open_input(path)?.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let rec: JudgmentLine = serde_json::from_str(&line)
                    .map_err(|e| StatsError::Judgment { line: i as u64 + 1, reason: e.to_string() })?;
                out.insert(rec.id, rec.accepted);
            }
        }
        Ok(Judgments(out))
    }
}

/// Acceptance counts per quality interval.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AcceptanceCounts {
    quality: Histogram,
    judged: Vec<u64>,
    accepted: Vec<u64>,
    matched: BTreeSet<String>,
}

impl AcceptanceCounts {
    pub fn new(edges: &[f64]) -> Result<Self, StatsError> {
        let quality = Histogram::new(edges)?;
        let n = quality.bins();
        Ok(AcceptanceCounts { quality, judged: vec![0; n], accepted: vec![0; n], matched: BTreeSet::new() })
    }

    pub fn deciles() -> Self {
        Self::new(&decile_edges()).expect("decile edges are valid")
    }

    pub fn add(&mut self, id: &str, quality: f64, judgments: &Judgments) {
        let Some(ok) = judgments.get(id) else { return };
        self.matched.insert(id.to_string());
        if let Some(i) = self.quality.bin(quality) {
            self.judged[i] += 1;
            self.accepted[i] += u64::from(ok);
        }
    }

    pub fn merge(&mut self, other: &AcceptanceCounts) -> Result<(), StatsError> {
        self.quality.merge(&other.quality)?;
        for i in 0..self.judged.len() {
            self.judged[i] += other.judged[i];
            self.accepted[i] += other.accepted[i];
        }
        self.matched.extend(other.matched.iter().cloned());
        Ok(())
    }

    /// Judgments whose id never appeared in the corpus are reported and
    /// left out of the rates.
    pub fn report(&self, judgments: &Judgments) -> AcceptanceReport {
        let mut unknown: Vec<String> =
            judgments.0.keys().filter(|id| !self.matched.contains(id.as_str())).cloned().collect();
        unknown.sort();
        for id in &unknown {
            log::warn!("judgment for unknown document {id} skipped");
        }
        let intervals = (0..self.judged.len())
            .map(|i| AcceptanceRow {
                interval: self.quality.interval_label(i),
                judged: self.judged[i],
                accepted: self.accepted[i],
                rate: (self.judged[i] > 0).then(|| self.accepted[i] as f64 / self.judged[i] as f64),
            })
            .collect();
        AcceptanceReport { intervals, unknown_ids: unknown }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcceptanceRow {
    pub interval: String,
    pub judged: u64,
    pub accepted: u64,
    /// `null` when nothing in the interval was judged.
    pub rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcceptanceReport {
    pub intervals: Vec<AcceptanceRow>,
    pub unknown_ids: Vec<String>,
}

/// Everything the reports need, folded in one pass.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StatsAccumulator {
    pub quality: Histogram,
    pub domains: DomainCounts,
    pub cross: CrossCounts,
    pub toxicity: ToxicityCounts,
    pub acceptance: AcceptanceCounts,
}

impl Default for StatsAccumulator {
    fn default() -> Self {
        Self::new(TOXIC_LABEL_THRESHOLD)
    }
}

impl StatsAccumulator {
    pub fn new(toxic_threshold: f64) -> Self {
        StatsAccumulator {
            quality: Histogram::deciles(),
            domains: DomainCounts::default(),
            cross: CrossCounts::deciles(),
            toxicity: ToxicityCounts::new(toxic_threshold),
            acceptance: AcceptanceCounts::deciles(),
        }
    }

    pub fn observe(&mut self, doc: &AnnotatedDocument, judgments: Option<&Judgments>) {
        self.quality.add(doc.quality_score());
        self.domains.add(doc.domain_multi());
        self.cross.add(doc.quality_score(), doc.domain_multi());
        self.toxicity.add(doc.toxicity_score());
        if let Some(j) = judgments {
            self.acceptance.add(doc.id(), doc.quality_score(), j);
        }
    }

    pub fn merge(&mut self, other: &StatsAccumulator) -> Result<(), StatsError> {
        self.quality.merge(&other.quality)?;
        self.domains.merge(&other.domains);
        self.cross.merge(&other.cross)?;
        self.toxicity.merge(&other.toxicity)?;
        self.acceptance.merge(&other.acceptance)
    }

    /// Folds a slice in parallel chunks and merges the partial results.
    pub fn from_records(docs: &[AnnotatedDocument], toxic_threshold: f64, judgments: Option<&Judgments>) -> Self {
        docs.par_chunks(8192)
            .map(|chunk| {
                let mut acc = StatsAccumulator::new(toxic_threshold);
                for d in chunk {
                    acc.observe(d, judgments);
                }
                acc
            })
            .reduce(
                || StatsAccumulator::new(toxic_threshold),
                |mut a, b| {
                    a.merge(&b).expect("same thresholds and edges");
                    a
                },
            )
    }

    pub fn report(&self, judgments: Option<&Judgments>) -> StatsReport {
        StatsReport {
            quality: self.quality.report(),
            domains: self.domains.report(),
            cross: self.cross.report(),
            toxicity: self.toxicity.report(),
            acceptance: judgments.map(|j| self.acceptance.report(j)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub quality: HistogramReport,
    pub domains: DomainReport,
    pub cross: CrossTableReport,
    pub toxicity: ToxicityReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub acceptance: Option<AcceptanceReport>,
}

pub fn quality_distribution<'a>(docs: impl IntoIterator<Item = &'a AnnotatedDocument>) -> Histogram {
    let mut h = Histogram::deciles();
    for d in docs {
        h.add(d.quality_score());
    }
    h
}

pub fn domain_distribution<'a>(docs: impl IntoIterator<Item = &'a AnnotatedDocument>) -> DomainReport {
    let mut c = DomainCounts::default();
    for d in docs {
        c.add(d.domain_multi());
    }
    c.report()
}

pub fn quality_domain_table<'a>(docs: impl IntoIterator<Item = &'a AnnotatedDocument>) -> CrossTableReport {
    let mut c = CrossCounts::deciles();
    for d in docs {
        c.add(d.quality_score(), d.domain_multi());
    }
    c.report()
}

pub fn toxicity_report<'a>(docs: impl IntoIterator<Item = &'a AnnotatedDocument>, threshold: f64) -> ToxicityReport {
    let mut c = ToxicityCounts::new(threshold);
    for d in docs {
        c.add(d.toxicity_score());
    }
    c.report()
}

pub fn acceptance_report<'a>(docs: impl IntoIterator<Item = &'a AnnotatedDocument>, judgments: &Judgments) -> AcceptanceReport {
    let mut c = AcceptanceCounts::deciles();
    for d in docs {
        c.add(d.id(), d.quality_score(), judgments);
    }
    c.report(judgments)
}

/// Writes records scoring above `threshold` to `out`; returns how many.
pub fn extract_toxic_subset<'a, W: Write>(
    docs: impl IntoIterator<Item = &'a AnnotatedDocument>,
    threshold: f64,
    mut out: W,
) -> io::Result<u64> {
    let mut n = 0;
    for d in docs {
        if d.toxicity_score() > threshold {
            out.write_all(&write_record(d))?;
            n += 1;
        }
    }
    out.flush()?;
    Ok(n)
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(|v| format!("{v:.4}")).unwrap_or_default()
}

fn csv_string(rows: Vec<Vec<String>>) -> Result<String, StatsError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.write_record(&r)?;
    }
    let bytes = w.into_inner().map_err(|e| io::Error::other(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

impl HistogramReport {
    pub fn to_csv(&self) -> Result<String, StatsError> {
        let mut rows = vec![vec!["interval".into(), "count".into(), "proportion".into()]];
        for b in &self.bins {
            rows.push(vec![b.interval.clone(), b.count.to_string(), format!("{:.6}", b.proportion)]);
        }
        csv_string(rows)
    }
}

impl DomainReport {
    pub fn to_csv(&self) -> Result<String, StatsError> {
        let mut rows = vec![vec!["domain".into(), "count".into(), "proportion".into()]];
        for d in &self.domains {
            rows.push(vec![d.domain.to_string(), d.count.to_string(), format!("{:.6}", d.proportion)]);
        }
        csv_string(rows)
    }
}

impl CrossTableReport {
    /// Percent cells; empty intervals are blank.
    pub fn to_csv(&self) -> Result<String, StatsError> {
        let mut header = vec!["domain".to_string()];
        header.extend(self.intervals.iter().cloned());
        header.push("total".into());
        let mut rows = vec![header];
        for r in &self.rows {
            let mut row = vec![r.domain.to_string()];
            row.extend(r.cells.iter().map(|&c| fmt_opt(c)));
            row.push(fmt_opt(r.total));
            rows.push(row);
        }
        csv_string(rows)
    }
}

impl ToxicityReport {
    pub fn to_csv(&self) -> Result<String, StatsError> {
        let mut rows = vec![vec!["interval".into(), "count".into(), "proportion".into()]];
        for b in &self.histogram.bins {
            rows.push(vec![b.interval.clone(), b.count.to_string(), format!("{:.6}", b.proportion)]);
        }
        rows.push(vec![format!("toxic(>{})", self.threshold), self.toxic.to_string(), format!("{:.6}", self.toxic_fraction)]);
        rows.push(vec!["benign".into(), self.benign.to_string(), format!("{:.6}", self.benign_fraction)]);
        csv_string(rows)
    }
}

impl AcceptanceReport {
    pub fn to_csv(&self) -> Result<String, StatsError> {
        let mut rows = vec![vec!["interval".into(), "judged".into(), "accepted".into(), "rate".into()]];
        for r in &self.intervals {
            rows.push(vec![r.interval.clone(), r.judged.to_string(), r.accepted.to_string(), fmt_opt(r.rate)]);
        }
        csv_string(rows)
    }
}

/// Per-stage removal table from a preprocess run.
pub fn removal_csv(report: &RemovalReport) -> Result<String, StatsError> {
    let mut rows = vec![vec![
        "stage".into(),
        "input".into(),
        "removed".into(),
        "removed_fraction".into(),
        "remaining_fraction".into(),
    ]];
    for s in &report.stages {
        rows.push(vec![
            s.stage.clone(),
            s.input.to_string(),
            s.removed.to_string(),
            format!("{:.6}", s.removed_fraction),
            format!("{:.6}", s.remaining_fraction),
        ]);
    }
    csv_string(rows)
}

/// Writes pretty JSON followed by a newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> io::Result<()> {
    let mut f = File::create(path)?;
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")
}

/// Ids that occur in `docs` more than once; shards must not share ids for
/// acceptance counts to merge exactly.
pub fn duplicate_ids<'a>(docs: impl IntoIterator<Item = &'a AnnotatedDocument>) -> Vec<String> {
    let mut seen = HashSet::new();
    let mut dup = BTreeSet::new();
    for d in docs {
        if !seen.insert(d.id()) {
            dup.insert(d.id().to_string());
        }
    }
    dup.into_iter().collect()
}
