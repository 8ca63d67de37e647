//! Runs the quality, domain and toxicity annotators over a cleaned corpus.

use std::io::{self, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{classify_domains, DomainClassifier, DomainError};
use crate::model::{write_record, AnnotatedDocument, Document, RecordError};
use crate::preprocess::{STAGE_KEY, STAGE_PREPROCESSED};
use crate::quality::{score_quality, BuiltinScorer, QualityError, QualityScorer};
use crate::toxicity::{score_toxicity, ToxicityClassifier, ToxicityError};

pub const QUALITY_MODEL_KEY: &str = "mdfg_quality_model";
pub const DOMAIN_MODEL_KEY: &str = "mdfg_domain_model";
pub const TOXICITY_MODEL_KEY: &str = "mdfg_toxicity_model";
pub const STAGE_ANNOTATED: &str = "annotated";

pub const DEFAULT_BATCH_SIZE: usize = 4096;

#[derive(Debug, thiserror::Error)]
pub enum AnnotateError {
    #[error("record {id} has not been preprocessed (pass --force to annotate anyway)")]
    NotPreprocessed { id: String },
    #[error("batch size must be positive")]
    InvalidBatchSize,
    #[error(transparent)]
    Quality(#[from] QualityError),
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error(transparent)]
    Toxicity(#[from] ToxicityError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Content hashes of the three models.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelVersions {
    pub quality: String,
    pub domain: String,
    pub toxicity: String,
}

/// The three annotators, shared read-only across workers.
pub struct AnnotatorBundle {
    quality: Box<dyn QualityScorer>,
    domain: DomainClassifier,
    toxicity: ToxicityClassifier,
    versions: ModelVersions,
}

impl AnnotatorBundle {
    pub fn new(quality: Box<dyn QualityScorer>, domain: DomainClassifier, toxicity: ToxicityClassifier) -> Self {
        let versions = ModelVersions {
            quality: quality.fingerprint(),
            domain: domain.model().fingerprint(),
            toxicity: toxicity.model().fingerprint(),
        };
        AnnotatorBundle { quality, domain, toxicity, versions }
    }

    /// Loads the three built-in model files.
    pub fn load(quality: &Path, domain: &Path, toxicity: &Path) -> Result<Self, AnnotateError> {
        Ok(Self::new(
            Box::new(BuiltinScorer::load(quality)?),
            DomainClassifier::load(domain)?,
            ToxicityClassifier::load(toxicity)?,
        ))
    }

    pub fn versions(&self) -> &ModelVersions {
        &self.versions
    }

    /// Annotates one document. On failure the document comes back with the
    /// error message.
    pub fn annotate_one(&self, mut doc: Document) -> Result<AnnotatedDocument, (Document, String)> {
        let quality = match score_quality(self.quality.as_ref(), &doc.text) {
            Ok(q) => q,
            Err(e) => return Err((doc, e.to_string())),
        };
        let (single, multi) = classify_domains(&self.domain, &doc.text);
        let (tox, _) = score_toxicity(&self.toxicity, &doc.text);
        doc.meta.insert(STAGE_KEY.into(), STAGE_ANNOTATED.into());
        doc.meta.insert(QUALITY_MODEL_KEY.into(), self.versions.quality.clone());
        doc.meta.insert(DOMAIN_MODEL_KEY.into(), self.versions.domain.clone());
        doc.meta.insert(TOXICITY_MODEL_KEY.into(), self.versions.toxicity.clone());
        match AnnotatedDocument::new(doc.clone(), quality, single, multi, tox) {
            Ok(a) => Ok(a),
            Err(e) => Err((doc, e.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AnnotateOptions {
    /// Accept records without the preprocessed marker.
    pub force: bool,
    pub batch_size: usize,
}

impl Default for AnnotateOptions {
    fn default() -> Self {
        AnnotateOptions { force: false, batch_size: DEFAULT_BATCH_SIZE }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotateSummary {
    pub input: u64,
    pub annotated: u64,
    pub quarantined: u64,
}

#[derive(Serialize)]
struct QuarantineLine<'a> {
    #[serde(skip_serializing_if = "Option::is_none")]
    id: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    line: Option<u64>,
    error: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    record: Option<serde_json::Value>,
}

fn quarantine_line(doc: Option<&Document>, line: Option<u64>, error: &str) -> Vec<u8> {
    let record = doc.map(|d| {
        serde_json::from_slice(&crate::model::write_document(d)).expect("document line is valid JSON")
    });
    let q = QuarantineLine { id: doc.map(|d| d.id.as_str()), line, error, record };
    let mut out = serde_json::to_vec(&q).expect("quarantine serialization cannot fail");
    out.push(b'\n');
    out
}

enum Slot {
    Doc(Document),
    Bad { line: Option<u64>, error: String },
}

/// Annotates a stream in input order. Malformed input records and records
/// the scorers fail on go to `quarantine`; everything else to `out`, so
/// every input record lands in exactly one of the two.
pub fn annotate_corpus<I, W, Q>(
    stream: I,
    bundle: &AnnotatorBundle,
    opts: &AnnotateOptions,
    mut out: W,
    mut quarantine: Q,
) -> Result<AnnotateSummary, AnnotateError>
where
    I: IntoIterator<Item = Result<Document, RecordError>>,
    W: Write,
    Q: Write,
{
    if opts.batch_size == 0 {
        return Err(AnnotateError::InvalidBatchSize);
    }
    let mut summary = AnnotateSummary::default();
    let mut iter = stream.into_iter().peekable();
    while iter.peek().is_some() {
        let mut batch = Vec::with_capacity(opts.batch_size.min(1 << 16));
        for item in iter.by_ref().take(opts.batch_size) {
            let slot = match item {
                Ok(doc) => {
                    if !opts.force && doc.meta.get(STAGE_KEY).map(String::as_str) != Some(STAGE_PREPROCESSED) {
                        return Err(AnnotateError::NotPreprocessed { id: doc.id });
                    }
                    Slot::Doc(doc)
                }
                Err(RecordError::Io(e)) => return Err(e.into()),
                Err(e) => {
                    let line = match &e {
                        RecordError::Malformed { line, .. } | RecordError::InvalidAnnotation { line, .. } => Some(*line),
                        RecordError::Io(_) => None,
                    };
                    Slot::Bad { line, error: e.to_string() }
                }
            };
            batch.push(slot);
        }
        summary.input += batch.len() as u64;
        let results: Vec<Result<Vec<u8>, Vec<u8>>> = batch
            .into_par_iter()
            .map(|slot| match slot {
                Slot::Doc(doc) => match bundle.annotate_one(doc) {
                    Ok(a) => Ok(write_record(&a)),
                    Err((doc, err)) => {
                        log::warn!("quarantining {}: {err}", doc.id);
                        Err(quarantine_line(Some(&doc), None, &err))
                    }
                },
                Slot::Bad { line, error } => Err(quarantine_line(None, line, &error)),
            })
            .collect();
        for r in results {
            match r {
                Ok(bytes) => {
                    out.write_all(&bytes)?;
                    summary.annotated += 1;
                }
                Err(bytes) => {
                    quarantine.write_all(&bytes)?;
                    summary.quarantined += 1;
                }
            }
        }
    }
    out.flush()?;
    quarantine.flush()?;
    Ok(summary)
}
