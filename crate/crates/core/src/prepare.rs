//! Source vetting: sample each source, collect irrelevance judgments and
//! exclude sources whose irrelevant share is above 30%.

use std::collections::{BTreeMap, HashMap};
use std::io;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::model::{Document, DocumentReader, LineReader, RecordError};

pub const DEFAULT_SAMPLE_N: usize = 300;
pub const IRRELEVANT_THRESHOLD: f64 = 0.30;

#[derive(Debug, thiserror::Error)]
pub enum PrepareError {
    #[error("source {0} contains no parseable documents")]
    EmptySource(String),
    #[error("no judgments for source {0}")]
    NoJudgments(String),
    #[error("sample size must be at least 1")]
    ZeroSample,
    #[error("bad judgment at line {line}: {reason}")]
    BadJudgment { line: u64, reason: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceJudgment {
    pub doc_id: String,
    pub irrelevant: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceVerdict {
    Include,
    Exclude,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceDecision {
    pub source: String,
    pub sampled: usize,
    pub irrelevant_fraction: f64,
    pub verdict: SourceVerdict,
}

/// Uniform reservoir sample of `n` items (Algorithm R), deterministic under
/// `seed`. Returns everything when the population is smaller than `n`.
pub fn reservoir_sample<T, I>(items: I, n: usize, seed: u64) -> Vec<T>
where
    I: IntoIterator<Item = T>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut reservoir = Vec::with_capacity(n.min(1 << 16));
    for (i, item) in items.into_iter().enumerate() {
        if i < n {
            reservoir.push(item);
        } else {
            let j = rng.gen_range(0..=i);
            if j < n {
                reservoir[j] = item;
            }
        }
    }
    reservoir
}

/// Reservoir-samples up to `n` documents from one JSONL file. Malformed
/// lines are skipped.
pub fn sample_source(path: &Path, n: usize, seed: u64) -> Result<Vec<Document>, PrepareError> {
    if n == 0 {
        return Err(PrepareError::ZeroSample);
    }
    let mut io_err = None;
    let docs = DocumentReader::open(path)?.filter_map(|r| match r {
        Ok(d) => Some(d),
        Err(RecordError::Io(e)) => {
            io_err.get_or_insert(e);
            None
        }
        Err(e) => {
            log::warn!("{}: {e}", path.display());
            None
        }
    });
    let sample = reservoir_sample(docs, n, seed);
    if let Some(e) = io_err {
        return Err(e.into());
    }
    if sample.is_empty() {
        return Err(PrepareError::EmptySource(path.display().to_string()));
    }
    Ok(sample)
}

pub fn vet_source(source: &str, judgments: &[SourceJudgment]) -> Result<SourceDecision, PrepareError> {
    if judgments.is_empty() {
        return Err(PrepareError::NoJudgments(source.to_string()));
    }
    let irrelevant = judgments.iter().filter(|j| j.irrelevant).count();
    let total = judgments.len();
    let fraction = irrelevant as f64 / total as f64;
    // irrelevant / total > 0.30, compared exactly in integers
    let verdict = if irrelevant * 100 > total * 30 { SourceVerdict::Exclude } else { SourceVerdict::Include };
    Ok(SourceDecision { source: source.to_string(), sampled: total, irrelevant_fraction: fraction, verdict })
}

/// Reads a JSONL judgments file of `{"doc_id": .., "irrelevant": bool}`.
pub fn load_judgments(path: &Path) -> Result<Vec<SourceJudgment>, PrepareError> {
    let mut out = Vec::new();
    for line in LineReader::new(crate::model::open_input(path)?) {
        let line = line?;
        let j: SourceJudgment = serde_json::from_slice(&line.bytes)
            .map_err(|e| PrepareError::BadJudgment { line: line.line_no, reason: e.to_string() })?;
        out.push(j);
    }
    Ok(out)
}

/// Vets every source from its sampled documents and the judgments that
/// refer to them. Judgments for unsampled ids are ignored with a warning;
/// sources without any judgment are included with a warning.
pub fn vet_samples(
    samples: &BTreeMap<String, Vec<Document>>,
    judgments: &[SourceJudgment],
) -> Result<Vec<SourceDecision>, PrepareError> {
    let mut by_id: HashMap<&str, &str> = HashMap::new();
    for (source, docs) in samples {
        for d in docs {
            by_id.insert(d.id.as_str(), source.as_str());
        }
    }
    let mut grouped: BTreeMap<&str, Vec<SourceJudgment>> = BTreeMap::new();
    for j in judgments {
        match by_id.get(j.doc_id.as_str()) {
            Some(src) => grouped.entry(src).or_default().push(j.clone()),
            None => log::warn!("judgment for unsampled document {}", j.doc_id),
        }
    }
    let mut decisions = Vec::new();
    for (source, docs) in samples {
        match grouped.get(source.as_str()) {
            Some(js) => decisions.push(vet_source(source, js)?),
            None => {
                log::warn!("source {source} has no judgments; including it");
                decisions.push(SourceDecision {
                    source: source.clone(),
                    sampled: docs.len(),
                    irrelevant_fraction: 0.0,
                    verdict: SourceVerdict::Include,
                });
            }
        }
    }
    Ok(decisions)
}

/// Deterministic sample of `n` items, used by training-set builders.
pub fn sample_indices(population: usize, n: usize, seed: u64) -> Vec<usize> {
    let mut idx = reservoir_sample(0..population, n, seed);
    idx.sort_unstable();
    idx
}

pub(crate) fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn judgments(irrelevant: usize, total: usize) -> Vec<SourceJudgment> {
        (0..total).map(|i| SourceJudgment { doc_id: i.to_string(), irrelevant: i < irrelevant }).collect()
    }

    fn corpus(n: usize) -> tempfile::NamedTempFile {
        let mut f = tempfile::Builder::new().suffix(".jsonl").tempfile().unwrap();
        for i in 0..n {
            writeln!(f, "{{\"text\":\"doc {i}\",\"source\":\"s\"}}").unwrap();
        }
        f.flush().unwrap();
        f
    }

    #[test]
    fn threshold_is_strict() {
        assert_eq!(vet_source("s", &judgments(31, 100)).unwrap().verdict, SourceVerdict::Exclude);
        assert_eq!(vet_source("s", &judgments(30, 100)).unwrap().verdict, SourceVerdict::Include);
        let d = vet_source("s", &judgments(0, 10)).unwrap();
        assert_eq!((d.verdict, d.irrelevant_fraction, d.sampled), (SourceVerdict::Include, 0.0, 10));
        assert!(matches!(vet_source("s", &[]), Err(PrepareError::NoJudgments(_))));
    }

    #[test]
    fn adding_irrelevant_never_reincludes() {
        for total in 1..60 {
            for irr in 0..=total {
                let before = vet_source("s", &judgments(irr, total)).unwrap().verdict;
                let mut js = judgments(irr, total);
                js.push(SourceJudgment { doc_id: "x".into(), irrelevant: true });
                let after = vet_source("s", &js).unwrap().verdict;
                assert!(!(before == SourceVerdict::Exclude && after == SourceVerdict::Include));
            }
        }
    }

    #[test]
    fn small_population_returned_whole() {
        let f = corpus(50);
        assert_eq!(sample_source(f.path(), 200, 1).unwrap().len(), 50);
    }

    #[test]
    fn sampling_is_deterministic() {
        let f = corpus(100_000);
        let a = sample_source(f.path(), 300, 7).unwrap();
        let b = sample_source(f.path(), 300, 7).unwrap();
        assert_eq!(a.len(), 300);
        assert_eq!(a, b);
        assert_ne!(a, sample_source(f.path(), 300, 8).unwrap());
    }

    #[test]
    fn empty_source_is_an_error() {
        let f = corpus(0);
        assert!(matches!(sample_source(f.path(), 5, 1), Err(PrepareError::EmptySource(_))));
    }

    #[test]
    fn inclusion_frequency_is_uniform() {
        // Each item should land in the sample with probability n/N.
        let (population, n, seeds) = (20usize, 5usize, 1000u64);
        let mut hits = vec![0u32; population];
        for seed in 0..seeds {
            for i in reservoir_sample(0..population, n, seed) {
                hits[i] += 1;
            }
        }
        let expected = n as f64 / population as f64;
        for h in hits {
            let freq = h as f64 / seeds as f64;
            assert!((freq - expected).abs() <= 0.05, "freq {freq} vs {expected}");
        }
    }

    #[test]
    fn vet_samples_groups_by_source() {
        let mut samples = BTreeMap::new();
        samples.insert("a".to_string(), vec![Document::new("1", "x", "a"), Document::new("2", "y", "a")]);
        samples.insert("b".to_string(), vec![Document::new("3", "z", "b")]);
        let js = vec![
            SourceJudgment { doc_id: "1".into(), irrelevant: true },
            SourceJudgment { doc_id: "2".into(), irrelevant: false },
            SourceJudgment { doc_id: "9".into(), irrelevant: true },
        ];
        let d = vet_samples(&samples, &js).unwrap();
        assert_eq!(d[0].verdict, SourceVerdict::Exclude);
        assert_eq!(d[1].verdict, SourceVerdict::Include);
    }
}
