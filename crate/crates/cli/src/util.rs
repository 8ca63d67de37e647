use std::fmt;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

use mdfg_core::classifier::{FeatureConfig, TrainParams};
use mdfg_core::model::{Document, DocumentReader, RecordError};
use mdfg_core::pipeline::{PipelineConfig, TrainSection};

use crate::TrainArgs;

/// Bad arguments or configuration; exits with status 1.
#[derive(Debug)]
pub struct Invalid(pub String);

impl fmt::Display for Invalid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

pub fn invalid(msg: impl Into<String>) -> anyhow::Error {
    Invalid(msg.into()).into()
}

pub fn require_file(path: &Path, what: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(invalid(format!("{what} {} does not exist", path.display())))
    }
}

/// Expands each pattern; plain paths must exist, globs must match something.
pub fn expand_inputs(patterns: &[String]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in patterns {
        if !p.contains(['*', '?', '[']) {
            require_file(Path::new(p), "input")?;
            out.push(PathBuf::from(p));
            continue;
        }
        let mut matched: Vec<PathBuf> = glob::glob(p)
            .map_err(|e| invalid(format!("bad pattern {p}: {e}")))?
            .filter_map(|r| r.ok())
            .filter(|p| p.is_file())
            .collect();
        if matched.is_empty() {
            return Err(invalid(format!("pattern {p} matches no files")));
        }
        matched.sort();
        out.extend(matched);
    }
    Ok(out)
}

pub fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

/// Pretty JSON to `path`, or to stdout when no path is given.
pub fn emit_json<T: Serialize>(path: Option<&Path>, value: &T) -> Result<()> {
    match path {
        Some(p) => {
            let mut w = create(p)?;
            serde_json::to_writer_pretty(&mut w, value)?;
            w.write_all(b"\n")?;
            w.flush()?;
        }
        None => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            serde_json::to_writer_pretty(&mut lock, value)?;
            lock.write_all(b"\n")?;
        }
    }
    Ok(())
}

/// Line-delimited JSON writer.
pub fn write_jsonl<T: Serialize, W: Write>(w: &mut W, value: &T) -> Result<()> {
    serde_json::to_writer(&mut *w, value)?;
    w.write_all(b"\n")?;
    Ok(())
}

/// All parseable documents of a JSONL file; malformed lines are logged.
pub fn read_docs(path: &Path) -> Result<Vec<Document>> {
    require_file(path, "input")?;
    let mut out = Vec::new();
    for rec in DocumentReader::open(path).with_context(|| format!("opening {}", path.display()))? {
        match rec {
            Ok(d) => out.push(d),
            Err(RecordError::Io(e)) => return Err(e).with_context(|| format!("reading {}", path.display())),
            Err(e) => log::warn!("{}: {e}", path.display()),
        }
    }
    Ok(out)
}

pub fn read_texts(path: &Path) -> Result<Vec<String>> {
    Ok(read_docs(path)?.into_iter().map(|d| d.text).collect())
}

/// `name=path` pairs.
pub fn named_path(s: &str) -> Result<(String, PathBuf), String> {
    let (name, path) = s.split_once('=').ok_or_else(|| format!("expected NAME=PATH, got {s}"))?;
    Ok((name.to_string(), PathBuf::from(path)))
}

impl TrainArgs {
    pub fn section(&self) -> Result<TrainSection> {
        match &self.config {
            Some(p) => {
                let cfg = PipelineConfig::load(p).map_err(|e| invalid(e.to_string()))?;
                Ok(cfg.train)
            }
            None => Ok(TrainSection::default()),
        }
    }

    pub fn apply(&self, mut p: TrainParams) -> TrainParams {
        if let Some(v) = self.epochs {
            p.epochs = v;
        }
        if let Some(v) = self.lr {
            p.lr = v;
        }
        if let Some(v) = self.seed {
            p.seed = v;
        }
        if let Some(v) = self.min_count {
            p.min_count = v;
        }
        p
    }

    pub fn features(&self, mut f: FeatureConfig) -> FeatureConfig {
        if let Some(v) = self.buckets {
            f.hash_buckets = v;
        }
        if let Some(v) = self.dim {
            f.embed_dim = v;
        }
        f
    }

    /// Params and features with flags over config over defaults.
    pub fn resolve(&self, pick: impl Fn(&TrainSection) -> TrainParams) -> Result<(TrainParams, FeatureConfig)> {
        let s = self.section()?;
        let params = self.apply(pick(&s));
        params.validate().map_err(|e| invalid(e.to_string()))?;
        let features = self.features(s.features);
        features.validate().map_err(|e| invalid(e.to_string()))?;
        Ok((params, features))
    }
}
