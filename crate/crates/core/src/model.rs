//! Document data model, annotation schema and streaming JSONL I/O.
//!
//! Every stage boundary speaks JSONL: one UTF-8 JSON object per line. Input
//! records need only a `text` field; everything the pipeline does not know
//! about is carried along in [`Document::meta`] so provenance survives.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::path::Path;
use std::str::FromStr;

use flate2::read::MultiGzDecoder;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use xxhash_rust::xxh3::xxh3_64;

/// Schema marker written into every annotated record.
pub const SCHEMA_VERSION: &str = "mdfg-2";

/// Toxicity scores strictly above this value are labeled toxic.
pub const TOXIC_LABEL_THRESHOLD: f64 = 0.99;

const UTF8_BOM: &[u8] = b"\xEF\xBB\xBF";

#[derive(Debug, thiserror::Error)]
pub enum RecordError {
    #[error("malformed record at line {line}: {reason}")]
    Malformed { line: u64, reason: String },
    #[error("invalid annotation at line {line}: {reason}")]
    InvalidAnnotation { line: u64, reason: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl RecordError {
    /// Malformed or invalid records are counted and skipped by callers;
    /// only I/O errors abort a stream.
    pub fn is_skippable(&self) -> bool {
        !matches!(self, RecordError::Io(_))
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum AnnotationError {
    #[error("quality score {0} is outside (0, 1)")]
    QualityOutOfRange(f64),
    #[error("toxicity score {0} is outside [0, 1]")]
    ToxicityOutOfRange(f64),
    #[error("domain_multi must not be empty")]
    EmptyDomains,
    #[error("toxicity label {label} contradicts score {score}")]
    LabelMismatch { label: ToxicityLabel, score: f64 },
}

/// The closed set of domain labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DomainLabel {
    Math,
    Book,
    Law,
    Finance,
    Education,
    Dialogue,
    Encyclopedia,
    News,
    Medicine,
    Technology,
    General,
}

impl DomainLabel {
    pub const ALL: [DomainLabel; 11] = [
        DomainLabel::Math,
        DomainLabel::Book,
        DomainLabel::Law,
        DomainLabel::Finance,
        DomainLabel::Education,
        DomainLabel::Dialogue,
        DomainLabel::Encyclopedia,
        DomainLabel::News,
        DomainLabel::Medicine,
        DomainLabel::Technology,
        DomainLabel::General,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DomainLabel::Math => "math",
            DomainLabel::Book => "book",
            DomainLabel::Law => "law",
            DomainLabel::Finance => "finance",
            DomainLabel::Education => "education",
            DomainLabel::Dialogue => "dialogue",
            DomainLabel::Encyclopedia => "encyclopedia",
            DomainLabel::News => "news",
            DomainLabel::Medicine => "medicine",
            DomainLabel::Technology => "technology",
            DomainLabel::General => "general",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for DomainLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown domain label {0:?}")]
pub struct UnknownDomain(pub String);

impl FromStr for DomainLabel {
    type Err = UnknownDomain;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        DomainLabel::ALL
            .into_iter()
            .find(|d| d.as_str() == s)
            .ok_or_else(|| UnknownDomain(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ToxicityLabel {
    Toxic,
    Benign,
}

impl ToxicityLabel {
    pub fn from_score(score: f64) -> Self {
        if score > TOXIC_LABEL_THRESHOLD {
            ToxicityLabel::Toxic
        } else {
            ToxicityLabel::Benign
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ToxicityLabel::Toxic => "toxic",
            ToxicityLabel::Benign => "benign",
        }
    }
}

impl fmt::Display for ToxicityLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ToxicityLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "toxic" => Ok(ToxicityLabel::Toxic),
            "benign" => Ok(ToxicityLabel::Benign),
            other => Err(format!("unknown toxicity label {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Keep,
    Drop,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterReason {
    AvgLineLength,
    TooShort,
    CharProportion,
    SensitiveWords,
    Duplicate,
    None,
}

/// Outcome of one filter on one document. `Keep` always carries
/// [`FilterReason::None`]; the constructors enforce it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterVerdict {
    decision: Decision,
    reason: FilterReason,
}

impl FilterVerdict {
    pub const KEEP: FilterVerdict = FilterVerdict { decision: Decision::Keep, reason: FilterReason::None };

    pub fn drop(reason: FilterReason) -> Self {
        assert!(reason != FilterReason::None, "a drop verdict needs a reason");
        FilterVerdict { decision: Decision::Drop, reason }
    }

    pub fn decision(&self) -> Decision {
        self.decision
    }

    pub fn reason(&self) -> FilterReason {
        self.reason
    }

    pub fn is_keep(&self) -> bool {
        self.decision == Decision::Keep
    }
}

/// One text record flowing through the pipeline.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub id: String,
    pub text: String,
    pub source: String,
    /// Input fields the pipeline does not interpret. Non-string JSON values
    /// are kept as their compact JSON text.
    pub meta: BTreeMap<String, String>,
}

impl Document {
    pub fn new(id: impl Into<String>, text: impl Into<String>, source: impl Into<String>) -> Self {
        Document { id: id.into(), text: text.into(), source: source.into(), meta: BTreeMap::new() }
    }
}

/// Deterministic id for a record that arrived without one.
pub fn generate_id(source: &str, offset: u64) -> String {
    let mut buf = Vec::with_capacity(source.len() + 9);
    buf.extend_from_slice(source.as_bytes());
    buf.push(0);
    buf.extend_from_slice(&offset.to_le_bytes());
    format!("{:016x}", xxh3_64(&buf))
}

/// A document with all four annotations. Construction validates the
/// invariants, so every value of this type is writable as-is.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedDocument {
    doc: Document,
    quality_score: f64,
    domain_single: DomainLabel,
    domain_multi: BTreeSet<DomainLabel>,
    toxicity_score: f64,
    toxicity_label: ToxicityLabel,
}

impl AnnotatedDocument {
    /// The toxicity label is derived from the score.
    pub fn new(
        doc: Document,
        quality_score: f64,
        domain_single: DomainLabel,
        domain_multi: BTreeSet<DomainLabel>,
        toxicity_score: f64,
    ) -> Result<Self, AnnotationError> {
        let label = ToxicityLabel::from_score(toxicity_score);
        Self::with_label(doc, quality_score, domain_single, domain_multi, toxicity_score, label)
    }

    pub fn with_label(
        doc: Document,
        quality_score: f64,
        domain_single: DomainLabel,
        domain_multi: BTreeSet<DomainLabel>,
        toxicity_score: f64,
        toxicity_label: ToxicityLabel,
    ) -> Result<Self, AnnotationError> {
        if !(quality_score > 0.0 && quality_score < 1.0) {
            return Err(AnnotationError::QualityOutOfRange(quality_score));
        }
        if !(0.0..=1.0).contains(&toxicity_score) {
            return Err(AnnotationError::ToxicityOutOfRange(toxicity_score));
        }
        if domain_multi.is_empty() {
            return Err(AnnotationError::EmptyDomains);
        }
        if ToxicityLabel::from_score(toxicity_score) != toxicity_label {
            return Err(AnnotationError::LabelMismatch { label: toxicity_label, score: toxicity_score });
        }
        Ok(AnnotatedDocument { doc, quality_score, domain_single, domain_multi, toxicity_score, toxicity_label })
    }

    pub fn doc(&self) -> &Document {
        &self.doc
    }
    pub fn id(&self) -> &str {
        &self.doc.id
    }
    pub fn quality_score(&self) -> f64 {
        self.quality_score
    }
    pub fn domain_single(&self) -> DomainLabel {
        self.domain_single
    }
    pub fn domain_multi(&self) -> &BTreeSet<DomainLabel> {
        &self.domain_multi
    }
    pub fn toxicity_score(&self) -> f64 {
        self.toxicity_score
    }
    pub fn toxicity_label(&self) -> ToxicityLabel {
        self.toxicity_label
    }
    pub fn into_doc(self) -> Document {
        self.doc
    }
}

#[cfg(test)]
const DOC_KEYS: [&str; 4] = ["id", "text", "source", "meta"];
const ANNOTATION_KEYS: [&str; 6] =
    ["quality_score", "domain_single", "domain_multi", "toxicity_score", "toxicity_label", "schema"];

fn malformed(line: u64, reason: impl Into<String>) -> RecordError {
    RecordError::Malformed { line, reason: reason.into() }
}

fn strip_bom(line: &[u8]) -> &[u8] {
    line.strip_prefix(UTF8_BOM).unwrap_or(line)
}

fn parse_object(line: &[u8], line_no: u64) -> Result<Map<String, Value>, RecordError> {
    let line = strip_bom(line);
    match serde_json::from_slice::<Value>(line) {
        Ok(Value::Object(map)) => Ok(map),
        Ok(_) => Err(malformed(line_no, "record is not a JSON object")),
        Err(e) => Err(malformed(line_no, e.to_string())),
    }
}

fn value_to_meta(v: Value) -> String {
    match v {
        Value::String(s) => s,
        other => other.to_string(),
    }
}

/// Builds a document out of a parsed object. Keys listed in `reserved` are
/// neither interpreted here nor copied into meta.
fn document_from_map(
    mut map: Map<String, Value>,
    default_source: &str,
    offset: u64,
    line_no: u64,
    reserved: &[&str],
) -> Result<Document, RecordError> {
    let text = match map.remove("text") {
        Some(Value::String(s)) => s,
        Some(_) => return Err(malformed(line_no, "\"text\" is not a string")),
        None => return Err(malformed(line_no, "missing \"text\" field")),
    };
    let source = match map.remove("source") {
        Some(Value::String(s)) => s,
        Some(other) => other.to_string(),
        None => default_source.to_string(),
    };
    let id = match map.remove("id") {
        Some(Value::String(s)) if !s.is_empty() => s,
        Some(Value::Number(n)) => n.to_string(),
        _ => generate_id(&source, offset),
    };
    let mut meta = BTreeMap::new();
    if let Some(nested) = map.remove("meta") {
        match nested {
            Value::Object(m) => {
                for (k, v) in m {
                    meta.insert(k, value_to_meta(v));
                }
            }
            other => {
                meta.insert("meta".to_string(), value_to_meta(other));
            }
        }
    }
    for (k, v) in map {
        if reserved.contains(&k.as_str()) {
            continue;
        }
        meta.insert(k, value_to_meta(v));
    }
    Ok(Document { id, text, source, meta })
}

/// Parses one JSONL line into a [`Document`].
///
/// `offset` is the byte offset of the line within its file and seeds the id
/// when the record carries none. A leading UTF-8 BOM is ignored.
pub fn parse_record(line: &[u8], default_source: &str, offset: u64, line_no: u64) -> Result<Document, RecordError> {
    let map = parse_object(line, line_no)?;
    document_from_map(map, default_source, offset, line_no, &[])
}

fn f64_field(map: &mut Map<String, Value>, key: &str, line: u64) -> Result<f64, RecordError> {
    map.remove(key)
        .and_then(|v| v.as_f64())
        .ok_or_else(|| RecordError::InvalidAnnotation { line, reason: format!("missing or non-numeric {key:?}") })
}

fn str_field(map: &mut Map<String, Value>, key: &str, line: u64) -> Result<String, RecordError> {
    match map.remove(key) {
        Some(Value::String(s)) => Ok(s),
        _ => Err(RecordError::InvalidAnnotation { line, reason: format!("missing or non-string {key:?}") }),
    }
}

/// Parses one line written by [`write_record`].
pub fn parse_annotated(line: &[u8], default_source: &str, offset: u64, line_no: u64) -> Result<AnnotatedDocument, RecordError> {
    let mut map = parse_object(line, line_no)?;
    let invalid = |reason: String| RecordError::InvalidAnnotation { line: line_no, reason };
    let quality = f64_field(&mut map, "quality_score", line_no)?;
    let toxicity = f64_field(&mut map, "toxicity_score", line_no)?;
    let single: DomainLabel = str_field(&mut map, "domain_single", line_no)?
        .parse()
        .map_err(|e: UnknownDomain| invalid(e.to_string()))?;
    let multi = match map.remove("domain_multi") {
        Some(Value::Array(items)) => items
            .into_iter()
            .map(|v| match v {
                Value::String(s) => s.parse::<DomainLabel>().map_err(|e| invalid(e.to_string())),
                _ => Err(invalid("domain_multi entries must be strings".into())),
            })
            .collect::<Result<BTreeSet<_>, _>>()?,
        _ => return Err(invalid("missing or non-array \"domain_multi\"".into())),
    };
    let label: ToxicityLabel = str_field(&mut map, "toxicity_label", line_no)?.parse().map_err(invalid)?;
    let doc = document_from_map(map, default_source, offset, line_no, &ANNOTATION_KEYS)?;
    AnnotatedDocument::with_label(doc, quality, single, multi, toxicity, label).map_err(|e| invalid(e.to_string()))
}

#[derive(Serialize)]
struct DocumentLine<'a> {
    id: &'a str,
    text: &'a str,
    source: &'a str,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    meta: &'a BTreeMap<String, String>,
}

#[derive(Serialize)]
struct AnnotatedLine<'a> {
    schema: &'static str,
    id: &'a str,
    text: &'a str,
    source: &'a str,
    quality_score: f64,
    domain_single: DomainLabel,
    domain_multi: &'a BTreeSet<DomainLabel>,
    toxicity_score: f64,
    toxicity_label: ToxicityLabel,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    meta: &'a BTreeMap<String, String>,
}

/// Serializes a plain document as one JSONL line (with trailing newline).
pub fn write_document(doc: &Document) -> Vec<u8> {
    let mut out = serde_json::to_vec(&DocumentLine { id: &doc.id, text: &doc.text, source: &doc.source, meta: &doc.meta })
        .expect("document serialization cannot fail");
    out.push(b'\n');
    out
}

/// Serializes an annotated document as one JSONL line (with trailing newline).
pub fn write_record(doc: &AnnotatedDocument) -> Vec<u8> {
    let line = AnnotatedLine {
        schema: SCHEMA_VERSION,
        id: &doc.doc.id,
        text: &doc.doc.text,
        source: &doc.doc.source,
        quality_score: doc.quality_score,
        domain_single: doc.domain_single,
        domain_multi: &doc.domain_multi,
        toxicity_score: doc.toxicity_score,
        toxicity_label: doc.toxicity_label,
        meta: &doc.doc.meta,
    };
    let mut out = serde_json::to_vec(&line).expect("record serialization cannot fail");
    out.push(b'\n');
    out
}

/// Opens a file for reading, decoding gzip when the name ends in `.gz`.
pub fn open_input(path: &Path) -> io::Result<Box<dyn BufRead + Send>> {
    let file = File::open(path)?;
    let is_gz = path.extension().is_some_and(|e| e == "gz");
    Ok(if is_gz {
        Box::new(BufReader::with_capacity(1 << 16, MultiGzDecoder::new(file)))
    } else {
        Box::new(BufReader::with_capacity(1 << 16, file))
    })
}

/// Source name used for records that do not carry one: the file name with
/// `.gz` and `.jsonl`/`.json` extensions removed.
pub fn source_name_for(path: &Path) -> String {
    let mut name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    for ext in [".gz", ".jsonl", ".json"] {
        if let Some(stripped) = name.strip_suffix(ext) {
            name = stripped.to_string();
        }
    }
    name
}

/// One raw line with its position in the (decoded) stream.
#[derive(Debug, Clone)]
pub struct RawLine {
    pub offset: u64,
    pub line_no: u64,
    pub bytes: Vec<u8>,
}

/// Iterates over non-blank lines of a stream, tracking byte offsets.
pub struct LineReader<R> {
    inner: R,
    offset: u64,
    line_no: u64,
}

impl<R: BufRead> LineReader<R> {
    pub fn new(inner: R) -> Self {
        LineReader { inner, offset: 0, line_no: 0 }
    }
}

impl<R: BufRead> Iterator for LineReader<R> {
    type Item = io::Result<RawLine>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let mut buf = Vec::new();
            let start = self.offset;
            match self.inner.read_until(b'\n', &mut buf) {
                Ok(0) => return None,
                Ok(n) => {
                    self.offset += n as u64;
                    self.line_no += 1;
                    while matches!(buf.last(), Some(b'\n' | b'\r')) {
                        buf.pop();
                    }
                    if strip_bom(&buf).iter().all(|b| b.is_ascii_whitespace()) {
                        continue;
                    }
                    return Some(Ok(RawLine { offset: start, line_no: self.line_no, bytes: buf }));
                }
                Err(e) => return Some(Err(e)),
            }
        }
    }
}

/// Streams [`Document`]s from any reader.
pub struct DocumentReader<R> {
    lines: LineReader<R>,
    default_source: String,
}

impl<R: BufRead> DocumentReader<R> {
    pub fn new(inner: R, default_source: impl Into<String>) -> Self {
        DocumentReader { lines: LineReader::new(inner), default_source: default_source.into() }
    }
}

impl DocumentReader<Box<dyn BufRead + Send>> {
    pub fn open(path: &Path) -> io::Result<Self> {
        Ok(Self::new(open_input(path)?, source_name_for(path)))
    }
}

impl<R: BufRead> Iterator for DocumentReader<R> {
    type Item = Result<Document, RecordError>;

    fn next(&mut self) -> Option<Self::Item> {
        let raw = match self.lines.next()? {
            Ok(raw) => raw,
            Err(e) => return Some(Err(e.into())),
        };
        Some(parse_record(&raw.bytes, &self.default_source, raw.offset, raw.line_no))
    }
}

/// Streams [`AnnotatedDocument`]s from any reader.
pub struct AnnotatedReader<R> {
    lines: LineReader<R>,
    default_source: String,
}

impl<R: BufRead> AnnotatedReader<R> {
    pub fn new(inner: R, default_source: impl Into<String>) -> Self {
        AnnotatedReader { lines: LineReader::new(inner), default_source: default_source.into() }
    }
}

impl AnnotatedReader<Box<dyn BufRead + Send>> {
    pub fn open(path: &Path) -> io::Result<Self> {
        Ok(Self::new(open_input(path)?, source_name_for(path)))
    }
}

impl<R: BufRead> Iterator for AnnotatedReader<R> {
    type Item = Result<AnnotatedDocument, RecordError>;

    fn next(&mut self) -> Option<Self::Item> {
        let raw = match self.lines.next()? {
            Ok(raw) => raw,
            Err(e) => return Some(Err(e.into())),
        };
        Some(parse_annotated(&raw.bytes, &self.default_source, raw.offset, raw.line_no))
    }
}

/// Reads every annotated record from `path`, skipping (and logging) invalid ones.
pub fn read_annotated_file(path: &Path) -> io::Result<Vec<AnnotatedDocument>> {
    let mut out = Vec::new();
    for rec in AnnotatedReader::open(path)? {
        match rec {
            Ok(d) => out.push(d),
            Err(RecordError::Io(e)) => return Err(e),
            Err(e) => log::warn!("{}: {e}", path.display()),
        }
    }
    Ok(out)
}

/// Reads a plain UTF-8 file fully, decoding gzip by extension.
pub fn read_to_string(path: &Path) -> io::Result<String> {
    let mut s = String::new();
    open_input(path)?.read_to_string(&mut s)?;
    Ok(s)
}

/// Writes documents as JSONL, one per line.
pub fn write_documents<'a, W: Write>(mut w: W, docs: impl IntoIterator<Item = &'a Document>) -> io::Result<()> {
    for d in docs {
        w.write_all(&write_document(d))?;
    }
    w.flush()
}
