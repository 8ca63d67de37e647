use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Args, ValueEnum};
use rayon::prelude::*;

use mdfg_core::annotate::{annotate_corpus, AnnotateOptions, AnnotatorBundle, DEFAULT_BATCH_SIZE};
use mdfg_core::domain::DomainClassifier;
use mdfg_core::model::{write_document, AnnotatedReader, DocumentReader, RecordError, TOXIC_LABEL_THRESHOLD};
use mdfg_core::pipeline::{preprocess_stream, PipelineConfig, PipelineError};
use mdfg_core::prepare::{load_judgments, sample_source, vet_samples, DEFAULT_SAMPLE_N};
use mdfg_core::preprocess::{DedupIndex, PreprocessConfig, Preprocessor, SensitiveLexicon};
use mdfg_core::quality::{BuiltinScorer, ExternalScorer, QualityScorer};
use mdfg_core::stats::{extract_toxic_subset, removal_csv, Judgments, StatsAccumulator};
use mdfg_core::toxicity::ToxicityClassifier;

use crate::util::{create, emit_json, expand_inputs, invalid, require_file, write_jsonl};

#[derive(Args)]
pub struct PrepareArgs {
    /// Source files or glob patterns, one source per file.
    #[arg(long, required = true, num_args = 1..)]
    input: Vec<String>,
    #[arg(long, default_value_t = DEFAULT_SAMPLE_N)]
    sample_n: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// JSONL of {"doc_id", "irrelevant"}; without it the samples are written for review.
    #[arg(long)]
    judgments: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

fn samples_for(inputs: &[PathBuf], n: usize, seed: u64) -> Result<BTreeMap<String, Vec<mdfg_core::Document>>> {
    let mut samples = BTreeMap::new();
    for (i, p) in inputs.iter().enumerate() {
        let s = sample_source(p, n, seed.wrapping_add(i as u64)).with_context(|| format!("sampling {}", p.display()))?;
        samples.insert(p.display().to_string(), s);
    }
    Ok(samples)
}

pub fn prepare(a: PrepareArgs) -> Result<()> {
    if a.sample_n == 0 {
        return Err(invalid("--sample-n must be at least 1"));
    }
    let inputs = expand_inputs(&a.input)?;
    if let Some(j) = &a.judgments {
        require_file(j, "judgments file")?;
    }
    let samples = samples_for(&inputs, a.sample_n, a.seed)?;
    let mut out = create(&a.out)?;
    match &a.judgments {
        None => {
            for (source, docs) in &samples {
                for d in docs {
                    let mut d = d.clone();
                    d.meta.insert("mdfg_sample_of".into(), source.clone());
                    out.write_all(&write_document(&d))?;
                }
            }
        }
        Some(j) => {
            let judgments = load_judgments(j)?;
            for d in vet_samples(&samples, &judgments)? {
                log::info!("{}: {:?} ({:.3} irrelevant)", d.source, d.verdict, d.irrelevant_fraction);
                write_jsonl(&mut out, &d)?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

#[derive(Args)]
pub struct PreprocessArgs {
    #[arg(long, required = true, num_args = 1..)]
    input: Vec<String>,
    #[arg(long)]
    out: PathBuf,
    /// Removal report (JSON).
    #[arg(long)]
    report: PathBuf,
    /// Sensitive lexicon, one word per line.
    #[arg(long)]
    sensitive: PathBuf,
    /// Also write the removal table as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Pipeline config whose [preprocess] section supplies defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    min_chars: Option<usize>,
    #[arg(long)]
    min_avg_line_len: Option<usize>,
    #[arg(long)]
    min_chinese_ratio: Option<f64>,
    #[arg(long)]
    sensitive_line_ratio: Option<f64>,
    #[arg(long)]
    ngram: Option<usize>,
    #[arg(long)]
    dup_ratio: Option<f64>,
    /// Continue deduplicating against an index saved by an earlier run.
    #[arg(long)]
    index_in: Option<PathBuf>,
    /// Save the dedup index after this run.
    #[arg(long)]
    index_out: Option<PathBuf>,
}

impl PreprocessArgs {
    fn config(&self) -> Result<PreprocessConfig> {
        let mut c = match &self.config {
            Some(p) => PipelineConfig::load(p).map_err(|e| invalid(e.to_string()))?.preprocess,
            None => PreprocessConfig::default(),
        };
        if let Some(v) = self.min_chars {
            c.min_chars = v;
        }
        if let Some(v) = self.min_avg_line_len {
            c.min_avg_line_len = v;
        }
        if let Some(v) = self.min_chinese_ratio {
            c.min_chinese_ratio = v;
        }
        if let Some(v) = self.sensitive_line_ratio {
            c.sensitive_line_ratio = v;
        }
        if let Some(v) = self.ngram {
            c.ngram_n = v;
        }
        if let Some(v) = self.dup_ratio {
            c.dup_ratio = v;
        }
        c.validate().map_err(|e| invalid(e.to_string()))?;
        Ok(c)
    }
}

pub fn preprocess(a: PreprocessArgs) -> Result<()> {
    let cfg = a.config()?;
    let inputs = expand_inputs(&a.input)?;
    require_file(&a.sensitive, "lexicon")?;
    let lexicon = SensitiveLexicon::load(&a.sensitive)?;
    let mut pre = Preprocessor::new(cfg, lexicon)?;
    if let Some(p) = &a.index_in {
        require_file(p, "dedup index")?;
        pre = pre.with_index(DedupIndex::load(p)?)?;
    }
    let mut out = create(&a.out)?;
    let start = Instant::now();
    let mut bytes = 0u64;
    for p in &inputs {
        bytes += fs::metadata(p).map(|m| m.len()).unwrap_or(0);
        let reader = DocumentReader::open(p).with_context(|| format!("opening {}", p.display()))?;
        preprocess_stream(reader, &mut pre, &mut out).with_context(|| format!("reading {}", p.display()))?;
    }
    out.flush()?;
    let secs = start.elapsed().as_secs_f64();
    let report = pre.report();
    log::info!(
        "kept {} of {} ({} malformed) in {secs:.2}s, {:.1} MB/s",
        report.kept,
        report.original,
        report.malformed,
        bytes as f64 / 1e6 / secs.max(1e-9)
    );
    emit_json(Some(&a.report), &report)?;
    if let Some(p) = &a.csv {
        fs::write(p, removal_csv(&report)?)?;
    }
    if let Some(p) = &a.index_out {
        pre.index().save(p)?;
    }
    Ok(())
}

#[derive(Args)]
pub struct AnnotateArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, required_unless_present_any = ["quality_cmd", "quality_url"])]
    quality_model: Option<PathBuf>,
    /// External quality scorer program speaking the SCORE line protocol.
    #[arg(long, conflicts_with_all = ["quality_model", "quality_url"])]
    quality_cmd: Option<String>,
    /// External quality scorer HTTP endpoint.
    #[arg(long, conflicts_with = "quality_model")]
    quality_url: Option<String>,
    #[arg(long)]
    domain_model: PathBuf,
    #[arg(long)]
    toxicity_model: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    quarantine: PathBuf,
    /// Annotate records that did not come out of preprocess.
    #[arg(long)]
    force: bool,
    #[arg(long, default_value_t = DEFAULT_BATCH_SIZE)]
    batch_size: usize,
}

pub fn annotate(a: AnnotateArgs) -> Result<()> {
    require_file(&a.input, "input")?;
    require_file(&a.domain_model, "domain model")?;
    require_file(&a.toxicity_model, "toxicity model")?;
    if a.batch_size == 0 {
        return Err(invalid("--batch-size must be at least 1"));
    }
    let quality: Box<dyn QualityScorer> = match (&a.quality_model, &a.quality_cmd, &a.quality_url) {
        (Some(p), _, _) => {
            require_file(p, "quality model")?;
            Box::new(BuiltinScorer::load(p)?)
        }
        (None, Some(cmd), _) => {
            let mut parts = cmd.split_whitespace().map(String::from);
            let program = parts.next().ok_or_else(|| invalid("empty --quality-cmd"))?;
            Box::new(ExternalScorer::process(program, parts.collect()))
        }
        (None, None, Some(url)) => Box::new(ExternalScorer::http(url.clone())),
        (None, None, None) => return Err(invalid("a quality model or external scorer is required")),
    };
    let bundle = AnnotatorBundle::new(
        quality,
        DomainClassifier::load(&a.domain_model)?,
        ToxicityClassifier::load(&a.toxicity_model)?,
    );
    let reader = DocumentReader::open(&a.input)?;
    let opts = AnnotateOptions { force: a.force, batch_size: a.batch_size };
    let summary = annotate_corpus(reader, &bundle, &opts, create(&a.out)?, create(&a.quarantine)?)?;
    log::info!("annotated {}, quarantined {}", summary.annotated, summary.quarantined);
    Ok(())
}

#[derive(Clone, Copy, ValueEnum)]
enum Report {
    Quality,
    Domains,
    Cross,
    Toxicity,
    Accept,
    /// Every report in one JSON document.
    All,
    /// Write records above the toxicity threshold to --out.
    ExtractToxic,
}

#[derive(Args)]
pub struct StatsArgs {
    #[arg(value_enum)]
    report: Report,
    /// Annotated JSONL; several files are folded separately and merged.
    #[arg(long, required = true, num_args = 1..)]
    input: Vec<String>,
    /// Report path; stdout when omitted (except extract-toxic).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long, default_value_t = TOXIC_LABEL_THRESHOLD)]
    threshold: f64,
    /// Acceptance judgments, `id,accepted` CSV or JSONL.
    #[arg(long)]
    judgments: Option<PathBuf>,
}

fn fold_shard(path: &Path, threshold: f64, judgments: Option<&Judgments>) -> Result<StatsAccumulator> {
    let mut acc = StatsAccumulator::new(threshold);
    for rec in AnnotatedReader::open(path)? {
        match rec {
            Ok(d) => acc.observe(&d, judgments),
            Err(RecordError::Io(e)) => return Err(e).with_context(|| format!("reading {}", path.display())),
            Err(e) => log::warn!("{}: {e}", path.display()),
        }
    }
    Ok(acc)
}

pub fn stats(a: StatsArgs) -> Result<()> {
    if !(0.0..=1.0).contains(&a.threshold) {
        return Err(invalid("--threshold must be in [0, 1]"));
    }
    let inputs = expand_inputs(&a.input)?;
    if let Report::ExtractToxic = a.report {
        let out = a.out.as_ref().ok_or_else(|| invalid("extract-toxic needs --out"))?;
        let mut w = create(out)?;
        let mut n = 0;
        for p in &inputs {
            for rec in AnnotatedReader::open(p)? {
                match rec {
                    Ok(d) => n += extract_toxic_subset([&d], a.threshold, &mut w)?,
                    Err(RecordError::Io(e)) => return Err(e.into()),
                    Err(e) => log::warn!("{}: {e}", p.display()),
                }
            }
        }
        w.flush()?;
        println!("{n}");
        return Ok(());
    }
    let judgments = match (&a.judgments, a.report) {
        (Some(p), _) => {
            require_file(p, "judgments file")?;
            Some(Judgments::load(p)?)
        }
        (None, Report::Accept) => return Err(invalid("accept needs --judgments")),
        (None, _) => None,
    };
    let shards: Vec<StatsAccumulator> =
        inputs.par_iter().map(|p| fold_shard(p, a.threshold, judgments.as_ref())).collect::<Result<_>>()?;
    let mut acc = StatsAccumulator::new(a.threshold);
    for s in &shards {
        acc.merge(s)?;
    }
    let full = acc.report(judgments.as_ref());
    let out = a.out.as_deref();
    let csv = match a.report {
        Report::Quality => {
            emit_json(out, &full.quality)?;
            Some(full.quality.to_csv()?)
        }
        Report::Domains => {
            emit_json(out, &full.domains)?;
            Some(full.domains.to_csv()?)
        }
        Report::Cross => {
            emit_json(out, &full.cross)?;
            Some(full.cross.to_csv()?)
        }
        Report::Toxicity => {
            emit_json(out, &full.toxicity)?;
            Some(full.toxicity.to_csv()?)
        }
        Report::Accept => {
            let r = full.acceptance.as_ref().expect("judgments were loaded");
            emit_json(out, r)?;
            Some(r.to_csv()?)
        }
        Report::All => {
            emit_json(out, &full)?;
            None
        }
        Report::ExtractToxic => unreachable!(),
    };
    if let Some(p) = &a.csv {
        match csv {
            Some(text) => fs::write(p, text)?,
            None => return Err(invalid("--csv is not available for `all`; request the reports one by one")),
        }
    }
    Ok(())
}

#[derive(Args)]
pub struct RunArgs {
    /// TOML pipeline config.
    #[arg(long)]
    config: PathBuf,
    /// Validate the config and print the stage plan without reading data.
    #[arg(long)]
    dry_run: bool,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

pub fn run(a: RunArgs, jobs: usize) -> ExitCode {
    let mut cfg = match PipelineConfig::load(&a.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    if let Some(d) = a.out_dir {
        cfg.out_dir = d;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if jobs > 0 {
        cfg.jobs = jobs;
    }
    if a.dry_run {
        if let Err(e) = cfg.validate() {
            eprintln!("error: invalid configuration: {e}");
            return ExitCode::from(1);
        }
        for line in cfg.plan() {
            println!("{line}");
        }
        return ExitCode::SUCCESS;
    }
    match mdfg_core::pipeline::run_pipeline(&cfg) {
        Ok(report) => {
            let r = report.removal.as_ref();
            log::info!(
                "done: {} in, {} kept, {} annotated",
                r.map_or(0, |r| r.original),
                r.map_or(0, |r| r.kept),
                report.annotate.map_or(0, |s| s.annotated)
            );
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            if let PipelineError::Runtime { .. } = e {
                eprintln!("partial outputs are listed in {}", cfg.out_dir.join("report.json").display());
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
