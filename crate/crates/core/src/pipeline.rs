//! Corpus-processing run: prepare (optional), preprocess, annotate, stats.
//!
//! Model training is not part of a run; the three model files are inputs.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::annotate::{annotate_corpus, AnnotateOptions, AnnotateSummary, AnnotatorBundle, ModelVersions, DEFAULT_BATCH_SIZE};
use crate::classifier::{FeatureConfig, TrainParams};
use crate::model::{AnnotatedReader, Document, DocumentReader, RecordError, SCHEMA_VERSION, TOXIC_LABEL_THRESHOLD};
use crate::prepare::{load_judgments, sample_source, vet_samples, SourceDecision, SourceVerdict, DEFAULT_SAMPLE_N};
use crate::preprocess::{mark_preprocessed, PreprocessConfig, Preprocessor, RemovalReport, SensitiveLexicon};
use crate::quality::QualityTrainConfig;
use crate::stats::{extract_toxic_subset, removal_csv, write_json, Judgments, StatsAccumulator, StatsReport};

pub const DEFAULT_SEED: u64 = 42;

/// Output file names inside the output directory.
pub mod outputs {
    pub const PREPARE: &str = "prepare.json";
    pub const KEPT: &str = "kept.jsonl";
    pub const REMOVAL_JSON: &str = "removal.json";
    pub const REMOVAL_CSV: &str = "removal.csv";
    pub const ANNOTATED: &str = "annotated.jsonl";
    pub const QUARANTINE: &str = "quarantine.jsonl";
    pub const STATS_JSON: &str = "stats.json";
    pub const QUALITY_CSV: &str = "quality.csv";
    pub const DOMAINS_CSV: &str = "domains.csv";
    pub const CROSS_CSV: &str = "cross.csv";
    pub const TOXICITY_CSV: &str = "toxicity.csv";
    pub const ACCEPTANCE_CSV: &str = "acceptance.csv";
    pub const TOXIC_SUBSET: &str = "toxic.jsonl";
    pub const REPORT: &str = "report.json";
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrepareSection {
    pub sample_n: usize,
}

impl Default for PrepareSection {
    fn default() -> Self {
        PrepareSection { sample_n: DEFAULT_SAMPLE_N }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnnotateSection {
    pub batch_size: usize,
    pub force: bool,
}

impl Default for AnnotateSection {
    fn default() -> Self {
        AnnotateSection { batch_size: DEFAULT_BATCH_SIZE, force: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StatsSection {
    pub toxic_threshold: f64,
}

impl Default for StatsSection {
    fn default() -> Self {
        StatsSection { toxic_threshold: TOXIC_LABEL_THRESHOLD }
    }
}

/// Hyperparameters read by the training subcommands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub quality: QualityTrainConfig,
    pub domain: TrainParams,
    pub toxicity: TrainParams,
    pub features: FeatureConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// One JSONL file per source, processed in this order.
    pub inputs: Vec<PathBuf>,
    pub out_dir: PathBuf,
    pub lexicon: PathBuf,
    pub quality_model: PathBuf,
    pub domain_model: PathBuf,
    pub toxicity_model: PathBuf,
    /// Irrelevance judgments for sampled documents; enables source vetting.
    #[serde(default)]
    pub source_judgments: Option<PathBuf>,
    /// Human acceptance judgments for the acceptance report.
    #[serde(default)]
    pub acceptance_judgments: Option<PathBuf>,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Worker threads; 0 uses one per core.
    #[serde(default)]
    pub jobs: usize,
    #[serde(default)]
    pub prepare: PrepareSection,
    #[serde(default)]
    pub preprocess: PreprocessConfig,
    #[serde(default)]
    pub annotate: AnnotateSection,
    #[serde(default)]
    pub stats: StatsSection,
    #[serde(default)]
    pub train: TrainSection,
}

fn default_seed() -> u64 {
    DEFAULT_SEED
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: io::Error },
    #[error("config {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Validation(#[from] ConfigError),
    #[error("stage {stage} failed: {message}")]
    Runtime { stage: Stage, message: String, report: Box<PipelineReport> },
}

impl PipelineError {
    /// 1 for configuration problems, 2 for failures while processing.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Validation(_) => 1,
            PipelineError::Runtime { .. } => 2,
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str, origin: &Path) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse { path: origin.to_path_buf(), message: e.to_string() })
    }

    /// Reads a TOML config. Relative paths are taken relative to the
    /// config file's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.to_path_buf(), source })?;
        let mut cfg = Self::from_toml(&text, path)?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.rebase(base);
        Ok(cfg)
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        self.inputs.iter_mut().for_each(fix);
        for p in [&mut self.out_dir, &mut self.lexicon, &mut self.quality_model, &mut self.domain_model, &mut self.toxicity_model] {
            fix(p);
        }
        if let Some(p) = self.source_judgments.as_mut() {
            fix(p);
        }
        if let Some(p) = self.acceptance_judgments.as_mut() {
            fix(p);
        }
    }

    /// Checks everything that can be checked without reading data.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.inputs.is_empty() {
            return Err(ConfigError::Invalid("no inputs given".into()));
        }
        let mut required: Vec<(&str, &Path)> = self.inputs.iter().map(|p| ("input", p.as_path())).collect();
        required.extend([
            ("lexicon", self.lexicon.as_path()),
            ("quality model", self.quality_model.as_path()),
            ("domain model", self.domain_model.as_path()),
            ("toxicity model", self.toxicity_model.as_path()),
        ]);
        if let Some(p) = &self.source_judgments {
            required.push(("source judgments", p));
        }
        if let Some(p) = &self.acceptance_judgments {
            required.push(("acceptance judgments", p));
        }
        for (what, p) in required {
            if !p.is_file() {
                return Err(ConfigError::Invalid(format!("{what} {} does not exist", p.display())));
            }
        }
        if self.out_dir.exists() && !self.out_dir.is_dir() {
            return Err(ConfigError::Invalid(format!("out_dir {} is not a directory", self.out_dir.display())));
        }
        self.preprocess.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.prepare.sample_n == 0 {
            return Err(ConfigError::Invalid("prepare.sample_n must be >= 1".into()));
        }
        if self.annotate.batch_size == 0 {
            return Err(ConfigError::Invalid("annotate.batch_size must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.stats.toxic_threshold) {
            return Err(ConfigError::Invalid("stats.toxic_threshold must be in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn output(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    /// Human-readable stage plan for `--dry-run`.
    pub fn plan(&self) -> Vec<String> {
        let mut plan = Vec::new();
        match &self.source_judgments {
            Some(j) => plan.push(format!(
                "prepare: sample {} docs per source from {} inputs, vet with {} -> {}",
                self.prepare.sample_n,
                self.inputs.len(),
                j.display(),
                self.output(outputs::PREPARE).display()
            )),
            None => plan.push("prepare: skipped (no source judgments)".into()),
        }
        plan.push(format!(
            "preprocess: {} inputs, lexicon {} -> {}, {}",
            self.inputs.len(),
            self.lexicon.display(),
            self.output(outputs::KEPT).display(),
            self.output(outputs::REMOVAL_JSON).display()
        ));
        plan.push(format!(
            "annotate: models {}, {}, {} -> {}, {}",
            self.quality_model.display(),
            self.domain_model.display(),
            self.toxicity_model.display(),
            self.output(outputs::ANNOTATED).display(),
            self.output(outputs::QUARANTINE).display()
        ));
        plan.push(format!(
            "stats: -> {}, {} (toxic threshold {})",
            self.output(outputs::STATS_JSON).display(),
            self.output(outputs::TOXIC_SUBSET).display(),
            self.stats.toxic_threshold
        ));
        plan
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Prepare,
    Preprocess,
    Annotate,
    Stats,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Stage::Prepare => "prepare",
            Stage::Preprocess => "preprocess",
            Stage::Annotate => "annotate",
            Stage::Stats => "stats",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageStatus {
    Ok,
    Skipped,
    Failed,
    NotRun,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub schema: String,
    pub seed: u64,
    pub stages: BTreeMap<Stage, StageStatus>,
    /// True when some stage failed and later outputs are missing or stale.
    pub partial: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub sources: Vec<SourceDecision>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub removal: Option<RemovalReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub annotate: Option<AnnotateSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub models: Option<ModelVersions>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub toxic_subset: Option<u64>,
    /// Output files relative to the output directory.
    pub outputs: Vec<String>,
}

impl PipelineReport {
    fn new(seed: u64) -> Self {
        let stages = [Stage::Prepare, Stage::Preprocess, Stage::Annotate, Stage::Stats]
            .into_iter()
            .map(|s| (s, StageStatus::NotRun))
            .collect();
        PipelineReport {
            schema: SCHEMA_VERSION.into(),
            seed,
            stages,
            partial: false,
            error: None,
            sources: Vec::new(),
            removal: None,
            annotate: None,
            models: None,
            toxic_subset: None,
            outputs: Vec::new(),
        }
    }
}

fn runtime(e: impl std::fmt::Display) -> String {
    e.to_string()
}

/// Streams documents through `pre` in batches, writing kept documents
/// (marked as preprocessed) to `out`. Malformed records are counted and
/// skipped; I/O errors abort.
pub fn preprocess_stream<I, W>(stream: I, pre: &mut Preprocessor, mut out: W) -> Result<(), RecordError>
where
    I: IntoIterator<Item = Result<Document, RecordError>>,
    W: Write,
{
    const BATCH: usize = 2048;
    let mut batch: Vec<Document> = Vec::with_capacity(BATCH);
    let flush = |batch: &mut Vec<Document>, pre: &mut Preprocessor, out: &mut W| -> io::Result<()> {
        let verdicts = pre.process_batch(batch);
        for (mut doc, v) in batch.drain(..).zip(verdicts) {
            if v.is_keep() {
                mark_preprocessed(&mut doc);
                out.write_all(&crate::model::write_document(&doc))?;
            }
        }
        Ok(())
    };
    for item in stream {
        match item {
            Ok(doc) => {
                batch.push(doc);
                if batch.len() == BATCH {
                    flush(&mut batch, pre, &mut out)?;
                }
            }
            Err(RecordError::Io(e)) => return Err(e.into()),
            Err(e) => {
                log::warn!("{e}");
                pre.record_malformed();
            }
        }
    }
    flush(&mut batch, pre, &mut out)?;
    out.flush()?;
    Ok(())
}

fn run_prepare(cfg: &PipelineConfig, judgments: &Path) -> Result<Vec<SourceDecision>, String> {
    let mut samples = BTreeMap::new();
    for (i, input) in cfg.inputs.iter().enumerate() {
        let name = input.display().to_string();
        let sample = sample_source(input, cfg.prepare.sample_n, cfg.seed.wrapping_add(i as u64)).map_err(runtime)?;
        samples.insert(name, sample);
    }
    let judgments = load_judgments(judgments).map_err(runtime)?;
    vet_samples(&samples, &judgments).map_err(runtime)
}

fn run_preprocess_stage(cfg: &PipelineConfig, inputs: &[&PathBuf]) -> Result<RemovalReport, String> {
    let lexicon = SensitiveLexicon::load(&cfg.lexicon).map_err(runtime)?;
    let mut pre = Preprocessor::new(cfg.preprocess.clone(), lexicon).map_err(runtime)?;
    let mut out = BufWriter::new(File::create(cfg.output(outputs::KEPT)).map_err(runtime)?);
    for input in inputs {
        log::info!("preprocessing {}", input.display());
        let reader = DocumentReader::open(input).map_err(runtime)?;
        preprocess_stream(reader, &mut pre, &mut out).map_err(|e| format!("{}: {e}", input.display()))?;
    }
    out.flush().map_err(runtime)?;
    let report = pre.report();
    write_json(&cfg.output(outputs::REMOVAL_JSON), &report).map_err(runtime)?;
    fs::write(cfg.output(outputs::REMOVAL_CSV), removal_csv(&report).map_err(runtime)?).map_err(runtime)?;
    Ok(report)
}

fn run_annotate_stage(cfg: &PipelineConfig) -> Result<(AnnotateSummary, ModelVersions), String> {
    let bundle = AnnotatorBundle::load(&cfg.quality_model, &cfg.domain_model, &cfg.toxicity_model).map_err(runtime)?;
    let reader = DocumentReader::open(&cfg.output(outputs::KEPT)).map_err(runtime)?;
    let out = BufWriter::new(File::create(cfg.output(outputs::ANNOTATED)).map_err(runtime)?);
    let quarantine = BufWriter::new(File::create(cfg.output(outputs::QUARANTINE)).map_err(runtime)?);
    let opts = AnnotateOptions { force: cfg.annotate.force, batch_size: cfg.annotate.batch_size };
    let summary = annotate_corpus(reader, &bundle, &opts, out, quarantine).map_err(runtime)?;
    Ok((summary, bundle.versions().clone()))
}

fn run_stats_stage(cfg: &PipelineConfig) -> Result<(StatsReport, u64), String> {
    let judgments = match &cfg.acceptance_judgments {
        Some(p) => Some(Judgments::load(p).map_err(runtime)?),
        None => None,
    };
    let threshold = cfg.stats.toxic_threshold;
    let mut acc = StatsAccumulator::new(threshold);
    let mut toxic = BufWriter::new(File::create(cfg.output(outputs::TOXIC_SUBSET)).map_err(runtime)?);
    let mut extracted = 0;
    for rec in AnnotatedReader::open(&cfg.output(outputs::ANNOTATED)).map_err(runtime)? {
        let doc = rec.map_err(runtime)?;
        acc.observe(&doc, judgments.as_ref());
        extracted += extract_toxic_subset([&doc], threshold, &mut toxic).map_err(runtime)?;
    }
    toxic.flush().map_err(runtime)?;
    let report = acc.report(judgments.as_ref());
    write_json(&cfg.output(outputs::STATS_JSON), &report).map_err(runtime)?;
    let csvs = [
        (outputs::QUALITY_CSV, report.quality.to_csv()),
        (outputs::DOMAINS_CSV, report.domains.to_csv()),
        (outputs::CROSS_CSV, report.cross.to_csv()),
        (outputs::TOXICITY_CSV, report.toxicity.to_csv()),
    ];
    for (name, csv) in csvs {
        fs::write(cfg.output(name), csv.map_err(runtime)?).map_err(runtime)?;
    }
    if let Some(a) = &report.acceptance {
        fs::write(cfg.output(outputs::ACCEPTANCE_CSV), a.to_csv().map_err(runtime)?).map_err(runtime)?;
    }
    Ok((report, extracted))
}

/// Runs every corpus stage and writes `report.json` into the output
/// directory, also when a stage fails.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineReport, PipelineError> {
    cfg.validate()?;
    fs::create_dir_all(&cfg.out_dir)
        .map_err(|e| ConfigError::Invalid(format!("cannot create {}: {e}", cfg.out_dir.display())))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| ConfigError::Invalid(format!("cannot start {} workers: {e}", cfg.jobs)))?;
    let mut report = PipelineReport::new(cfg.seed);
    let result = pool.install(|| run_stages(cfg, &mut report));
    if let Err((stage, message)) = &result {
        report.stages.insert(*stage, StageStatus::Failed);
        report.partial = true;
        report.error = Some(message.clone());
    }
    let written = write_json(&cfg.output(outputs::REPORT), &report);
    match result {
        Ok(()) => {
            written.map_err(|e| PipelineError::Runtime {
                stage: Stage::Stats,
                message: format!("cannot write report: {e}"),
                report: Box::new(report.clone()),
            })?;
            Ok(report)
        }
        Err((stage, message)) => Err(PipelineError::Runtime { stage, message, report: Box::new(report) }),
    }
}

fn run_stages(cfg: &PipelineConfig, report: &mut PipelineReport) -> Result<(), (Stage, String)> {
    let mut inputs: Vec<&PathBuf> = cfg.inputs.iter().collect();
    match &cfg.source_judgments {
        Some(j) => {
            let decisions = run_prepare(cfg, j).map_err(|e| (Stage::Prepare, e))?;
            write_json(&cfg.output(outputs::PREPARE), &decisions).map_err(|e| (Stage::Prepare, e.to_string()))?;
            inputs.retain(|p| {
                let name = p.display().to_string();
                let excluded =
                    decisions.iter().any(|d| d.source == name && d.verdict == SourceVerdict::Exclude);
                if excluded {
                    log::info!("excluding source {name}");
                }
                !excluded
            });
            report.sources = decisions;
            report.outputs.push(outputs::PREPARE.into());
            report.stages.insert(Stage::Prepare, StageStatus::Ok);
        }
        None => {
            report.stages.insert(Stage::Prepare, StageStatus::Skipped);
        }
    }

    let removal = run_preprocess_stage(cfg, &inputs).map_err(|e| (Stage::Preprocess, e))?;
    log::info!("preprocess kept {} of {}", removal.kept, removal.original);
    report.removal = Some(removal);
    report.outputs.extend([outputs::KEPT, outputs::REMOVAL_JSON, outputs::REMOVAL_CSV].map(String::from));
    report.stages.insert(Stage::Preprocess, StageStatus::Ok);

    let (summary, versions) = run_annotate_stage(cfg).map_err(|e| (Stage::Annotate, e))?;
    log::info!("annotated {} records, quarantined {}", summary.annotated, summary.quarantined);
    report.annotate = Some(summary);
    report.models = Some(versions);
    report.outputs.extend([outputs::ANNOTATED, outputs::QUARANTINE].map(String::from));
    report.stages.insert(Stage::Annotate, StageStatus::Ok);

    let (stats, extracted) = run_stats_stage(cfg).map_err(|e| (Stage::Stats, e))?;
    report.toxic_subset = Some(extracted);
    report.outputs.extend(
        [outputs::STATS_JSON, outputs::QUALITY_CSV, outputs::DOMAINS_CSV, outputs::CROSS_CSV, outputs::TOXICITY_CSV, outputs::TOXIC_SUBSET]
            .map(String::from),
    );
    if stats.acceptance.is_some() {
        report.outputs.push(outputs::ACCEPTANCE_CSV.into());
    }
    report.stages.insert(Stage::Stats, StageStatus::Ok);
    report.outputs.push(outputs::REPORT.into());
    Ok(())
}
