use std::ffi::OsString;
use std::fs::{self, File};
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mdfg_core::model::{write_documents, Document};
use mdfg_core::synth;
use serde_json::{json, Value};

macro_rules! argv {
    ($($a:expr),* $(,)?) => {
        vec![$(OsString::from($a)),*]
    };
}

fn mdfg(args: &[OsString]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mdfg")).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write_texts(path: &Path, texts: &[String]) {
    let docs: Vec<Document> =
        texts.iter().enumerate().map(|(i, t)| Document::new(format!("t{i}"), t.as_str(), "fixture")).collect();
    write_documents(File::create(path).unwrap(), &docs).unwrap();
}

fn write_labeled(path: &Path, items: &[(String, bool)]) {
    let lines: Vec<String> = items.iter().map(|(t, y)| json!({"text": t, "toxic": y}).to_string()).collect();
    fs::write(path, lines.join("\n") + "\n").unwrap();
}

struct Workspace {
    _tmp: tempfile::TempDir,
    dir: PathBuf,
}

impl Workspace {
    fn new() -> Self {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().to_path_buf();
        Workspace { _tmp: tmp, dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn config(&self, lexicon: &str, extra: &str) -> PathBuf {
        let text = format!(
            "inputs = [\"raw.jsonl\"]\nout_dir = \"out\"\nlexicon = \"{lexicon}\"\nquality_model = \"quality.bin\"\n\
             domain_model = \"domain.bin\"\ntoxicity_model = \"toxicity.bin\"\n{extra}"
        );
        let path = self.path("pipeline.toml");
        fs::write(&path, text).unwrap();
        path
    }

    fn touch(&self, names: &[&str]) {
        for n in names {
            fs::write(self.path(n), "").unwrap();
        }
    }
}

#[test]
fn version_names_formats() {
    let out = mdfg(&argv!["--version"]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains(env!("CARGO_PKG_VERSION")) && text.contains("mdfg-2") && text.contains("MDFGFT01"), "{text}");
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(code(&mdfg(&argv![])), 1);
    assert_eq!(code(&mdfg(&argv!["preprocess", "--input", "x.jsonl"])), 1);
    assert_eq!(code(&mdfg(&argv!["stats", "nonsense", "--input", "x"])), 1);
}

#[test]
fn dry_run_prints_plan() {
    let ws = Workspace::new();
    ws.touch(&["raw.jsonl", "lexicon.txt", "quality.bin", "domain.bin", "toxicity.bin"]);
    let cfg = ws.config("lexicon.txt", "");
    let out = mdfg(&argv!["run", "--config", &cfg, "--dry-run"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let plan = String::from_utf8(out.stdout).unwrap();
    assert_eq!(plan.lines().count(), 4, "{plan}");
    assert!(!ws.path("out").exists());
}

#[test]
fn missing_lexicon_exits_1() {
    let ws = Workspace::new();
    ws.touch(&["raw.jsonl", "quality.bin", "domain.bin", "toxicity.bin"]);
    let cfg = ws.config("missing.txt", "");
    for args in [argv!["run", "--config", &cfg], argv!["run", "--config", &cfg, "--dry-run"]] {
        let out = mdfg(&args);
        assert_eq!(code(&out), 1);
        assert!(stderr(&out).contains("lexicon"), "{}", stderr(&out));
    }
    let raw = ws.path("raw.jsonl");
    let out = mdfg(&argv![
        "preprocess",
        "--input",
        &raw,
        "--out",
        ws.path("kept.jsonl"),
        "--report",
        ws.path("r.json"),
        "--sensitive",
        ws.path("missing.txt"),
    ]);
    assert_eq!(code(&out), 1, "{}", stderr(&out));
}

#[test]
fn unknown_config_key_exits_1() {
    let ws = Workspace::new();
    ws.touch(&["raw.jsonl", "lexicon.txt", "quality.bin", "domain.bin", "toxicity.bin"]);
    let cfg = ws.config("lexicon.txt", "colour = \"red\"\n");
    let out = mdfg(&argv!["run", "--config", &cfg]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("colour"), "{}", stderr(&out));
}

#[test]
fn bad_model_file_is_a_runtime_failure() {
    let ws = Workspace::new();
    ws.touch(&["lexicon.txt", "quality.bin", "domain.bin", "toxicity.bin"]);
    fs::write(ws.path("lexicon.txt"), "词语\n").unwrap();
    write_documents(File::create(ws.path("raw.jsonl")).unwrap(), &synth::raw_corpus(1, 20_000)).unwrap();
    let cfg = ws.config("lexicon.txt", "");
    let out = mdfg(&argv!["run", "--config", &cfg]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
    let report: Value = serde_json::from_str(&fs::read_to_string(ws.path("out/report.json")).unwrap()).unwrap();
    assert_eq!(report["partial"], true);
    assert_eq!(report["stages"]["preprocess"], "ok");
    assert_eq!(report["stages"]["annotate"], "failed");
}

const SMALL: [&str; 6] = ["--epochs", "5", "--lr", "0.5", "--buckets", "65536"];

fn ok(args: &[OsString]) -> Output {
    let out = mdfg(args);
    assert_eq!(code(&out), 0, "mdfg {args:?}: {}", stderr(&out));
    out
}

/// Trains the three models through the binary.
fn train_models(ws: &Workspace) {
    let (pos, neg) = synth::quality_fixture(3, 80, 80);
    write_texts(&ws.path("curated.jsonl"), &pos);
    write_texts(&ws.path("web.jsonl"), &neg);
    let mut args = argv!["quality", "pretrain", "--positive", format!("books={}", ws.path("curated.jsonl").display())];
    args.extend(argv!["--pool", ws.path("web.jsonl"), "--out", ws.path("quality.bin")]);
    args.extend(SMALL.map(OsString::from));
    ok(&args);

    let df = synth::domain_fixture(4, 20, 0);
    let mut kw = String::new();
    for (d, words) in &df.seeds {
        kw.push_str(&format!("[{}]\n{}\n", d.as_str(), words.join("\n")));
    }
    fs::write(ws.path("keywords.txt"), kw).unwrap();
    write_texts(&ws.path("domain.jsonl"), &df.train);
    let mut args = argv!["domain", "bootstrap", "--keywords", ws.path("keywords.txt"), "--corpus", ws.path("domain.jsonl")];
    args.extend(argv!["--out", ws.path("domain.bin")]);
    args.extend(SMALL.map(OsString::from));
    ok(&args);

    let tf = synth::toxicity_fixture(5, 40);
    let mut args = argv!["toxicity", "build-initial"];
    for (name, items) in &tf.sources {
        let path = ws.path(&format!("{name}.jsonl"));
        write_labeled(&path, items);
        args.extend(argv!["--source", format!("{name}={}", path.display())]);
    }
    write_texts(&ws.path("own.jsonl"), &tf.own_benign);
    args.extend(argv!["--own-benign", ws.path("own.jsonl"), "--benign-n", "40", "--out", ws.path("set.jsonl")]);
    ok(&args);
    let mut args = argv!["toxicity", "train", "--set", ws.path("set.jsonl"), "--out", ws.path("toxicity.bin")];
    args.extend(SMALL.map(OsString::from));
    ok(&args);
}

#[test]
fn stepwise_commands_match_run() {
    let ws = Workspace::new();
    train_models(&ws);
    fs::write(ws.path("lexicon.txt"), synth::sensitive_words().join("\n")).unwrap();
    let docs = synth::raw_corpus(6, 400_000);
    write_documents(File::create(ws.path("raw.jsonl")).unwrap(), &docs).unwrap();

    let raw = ws.path("raw.jsonl");
    ok(&argv![
        "preprocess",
        "--input",
        &raw,
        "--out",
        ws.path("kept.jsonl"),
        "--report",
        ws.path("removal.json"),
        "--csv",
        ws.path("removal.csv"),
        "--sensitive",
        ws.path("lexicon.txt"),
    ]);
    let removal: Value = serde_json::from_str(&fs::read_to_string(ws.path("removal.json")).unwrap()).unwrap();
    assert_eq!(removal["original"], docs.len() as u64);
    let kept = removal["kept"].as_u64().unwrap();
    assert!(kept > 0 && kept < docs.len() as u64);
    assert_eq!(fs::read_to_string(ws.path("kept.jsonl")).unwrap().lines().count() as u64, kept);

    ok(&argv![
        "annotate",
        "--input",
        ws.path("kept.jsonl"),
        "--quality-model",
        ws.path("quality.bin"),
        "--domain-model",
        ws.path("domain.bin"),
        "--toxicity-model",
        ws.path("toxicity.bin"),
        "--out",
        ws.path("annotated.jsonl"),
        "--quarantine",
        ws.path("quarantine.jsonl"),
    ]);
    assert_eq!(fs::read_to_string(ws.path("quarantine.jsonl")).unwrap(), "");

    // Raw records were never preprocessed.
    let out = mdfg(&argv![
        "annotate",
        "--input",
        &raw,
        "--quality-model",
        ws.path("quality.bin"),
        "--domain-model",
        ws.path("domain.bin"),
        "--toxicity-model",
        ws.path("toxicity.bin"),
        "--out",
        ws.path("x.jsonl"),
        "--quarantine",
        ws.path("xq.jsonl"),
    ]);
    assert_ne!(code(&out), 0);

    ok(&argv!["stats", "all", "--input", ws.path("annotated.jsonl"), "--out", ws.path("stats.json")]);
    let stats: Value = serde_json::from_str(&fs::read_to_string(ws.path("stats.json")).unwrap()).unwrap();
    assert_eq!(stats["quality"]["total"], kept);
    assert_eq!(stats["domains"]["total_docs"], kept);
    let out = ok(&argv!["stats", "quality", "--input", ws.path("annotated.jsonl"), "--csv", ws.path("quality.csv")]);
    let q: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(q["bins"].as_array().unwrap().len(), 10);
    assert_eq!(fs::read_to_string(ws.path("quality.csv")).unwrap().lines().count(), 11);
    let out = ok(&argv!["stats", "extract-toxic", "--input", ws.path("annotated.jsonl"), "--out", ws.path("toxic.jsonl")]);
    let n: u64 = String::from_utf8(out.stdout).unwrap().trim().parse().unwrap();
    assert_eq!(n, stats["toxicity"]["toxic"].as_u64().unwrap());

    let cfg = ws.config("lexicon.txt", "");
    ok(&argv!["--jobs", "1", "run", "--config", &cfg]);
    for (step, run) in [("kept.jsonl", "kept.jsonl"), ("annotated.jsonl", "annotated.jsonl"), ("removal.csv", "removal.csv")] {
        assert_eq!(fs::read(ws.path(step)).unwrap(), fs::read(ws.path("out").join(run)).unwrap(), "{run}");
    }
    let report: Value = serde_json::from_str(&fs::read_to_string(ws.path("out/report.json")).unwrap()).unwrap();
    assert_eq!(report["partial"], false);
    assert_eq!(report["toxic_subset"], n);
}

#[test]
fn shipped_samples_parse() {
    let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data");
    let cfg = mdfg_core::pipeline::PipelineConfig::load(&data.join("pipeline.toml")).unwrap();
    assert_eq!(cfg.train.quality.params.epochs, 20);
    assert_eq!(cfg.preprocess, mdfg_core::preprocess::PreprocessConfig::default());
    let rules = mdfg_core::domain::KeywordRuleSet::load(&data.join("keywords.txt"), 3).unwrap();
    assert_eq!(rules.keywords().len(), 10);
    assert!(rules.keywords().values().all(|ws| ws.len() >= 20));
    let lexicon = mdfg_core::preprocess::SensitiveLexicon::load(&data.join("sensitive.txt")).unwrap();
    assert_eq!(lexicon.len(), 10);
}
