use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{ArgGroup, Args, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::json;

use mdfg_core::classifier::{train_with_report, LabeledCorpus, LinearModel};
use mdfg_core::domain::{
    bootstrap_train, eval_domain, iterate_optimize, AcceptAll, CountMode, DomainClassifier, DomainTestItem,
    IterationConfig, KeywordCandidate, KeywordReview, KeywordRuleSet,
};
use mdfg_core::model::DomainLabel;
use mdfg_core::quality::{
    build_quality_training_set, pretrain_quality, score_quality, self_train_round, BuiltinScorer, ExternalScorer,
    QualityScorer, QualityTrainConfig, SelfTrainState,
};
use mdfg_core::toxicity::{
    build_initial_toxicity_set, eval_toxicity, read_labeled_jsonl, run_llm_loop, score_toxicity, train_toxicity_r0,
    HttpOracle, LoopConfig, MockOracle, OracleClient, ToxicityClassifier, ToxicityTrainSet, DEFAULT_CANDIDATE_CAP,
};

use crate::util::{create, emit_json, invalid, named_path, read_docs, read_texts, require_file, write_jsonl};
use crate::TrainArgs;

#[derive(Subcommand)]
pub enum ClassifierCmd {
    /// Train on JSONL records with `text` and `labels` (or `label`).
    Train {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Print label probabilities for each record of a JSONL file.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Top-k labels; -1 for every label above the threshold.
        #[arg(long, default_value_t = 1, allow_negative_numbers = true)]
        k: i32,
        #[arg(long, default_value_t = 0.0)]
        threshold: f64,
    },
}

#[derive(Deserialize)]
struct LabeledLine {
    text: String,
    #[serde(default)]
    labels: Vec<String>,
    #[serde(default)]
    label: Option<String>,
}

fn read_labeled(path: &Path) -> Result<LabeledCorpus> {
    require_file(path, "input")?;
    let mut corpus = LabeledCorpus::new();
    let text = mdfg_core::model::read_to_string(path)?;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: LabeledLine =
            serde_json::from_str(line).with_context(|| format!("{}:{}", path.display(), i + 1))?;
        let mut labels = rec.labels;
        labels.extend(rec.label);
        corpus.push(rec.text, &labels).with_context(|| format!("{}:{}", path.display(), i + 1))?;
    }
    Ok(corpus)
}

pub fn classifier(cmd: ClassifierCmd) -> Result<()> {
    match cmd {
        ClassifierCmd::Train { input, model, train } => {
            let (params, features) = train.resolve(|s| s.domain)?;
            let corpus = read_labeled(&input)?;
            let (m, report) = train_with_report(&corpus, &params, &features)?;
            log::info!("epoch losses {:?}", report.epoch_losses);
            m.save(&model)?;
        }
        ClassifierCmd::Predict { model, input, out, k, threshold } => {
            require_file(&model, "model")?;
            if k == 0 || k < -1 {
                return Err(invalid("--k must be -1 or at least 1"));
            }
            let m = LinearModel::load(&model)?;
            let mut w = create(&out)?;
            for d in read_docs(&input)? {
                write_jsonl(&mut w, &json!({"id": d.id, "predictions": m.predict(&d.text, k, threshold)}))?;
            }
            w.flush()?;
        }
    }
    Ok(())
}

#[derive(Args)]
pub struct ScorerArgs {
    /// Built-in quality model.
    #[arg(long)]
    model: Option<PathBuf>,
    /// External scorer program speaking the SCORE line protocol.
    #[arg(long, conflicts_with = "model")]
    cmd: Option<String>,
    /// External scorer HTTP endpoint.
    #[arg(long, conflicts_with_all = ["model", "cmd"])]
    url: Option<String>,
}

impl ScorerArgs {
    fn scorer(&self) -> Result<Box<dyn QualityScorer>> {
        match (&self.model, &self.cmd, &self.url) {
            (Some(p), _, _) => {
                require_file(p, "quality model")?;
                Ok(Box::new(BuiltinScorer::load(p)?))
            }
            (None, Some(c), _) => {
                let mut parts = c.split_whitespace().map(String::from);
                let program = parts.next().ok_or_else(|| invalid("empty --cmd"))?;
                Ok(Box::new(ExternalScorer::process(program, parts.collect())))
            }
            (None, None, Some(u)) => Ok(Box::new(ExternalScorer::http(u.clone()))),
            _ => Err(invalid("one of --model, --cmd or --url is required")),
        }
    }
}

#[derive(Subcommand)]
pub enum QualityCmd {
    /// Train on curated positives against an equal-size sample of the pool.
    Pretrain {
        /// Curated source as NAME=PATH; repeatable.
        #[arg(long = "positive", required = true, value_parser = named_path)]
        positives: Vec<(String, PathBuf)>,
        /// Unlabeled web text the negatives are sampled from.
        #[arg(long)]
        pool: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        batch_size: Option<usize>,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Continue training on pseudo-labeled pool samples.
    Selftrain {
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "positive", required = true, value_parser = named_path)]
        positives: Vec<(String, PathBuf)>,
        #[arg(long)]
        pool: PathBuf,
        #[arg(long, default_value_t = 1)]
        rounds: usize,
        /// Pool texts sampled per round.
        #[arg(long)]
        sample_size: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        batch_size: Option<usize>,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Write `{"id", "quality_score"}` for each record.
    Score {
        #[command(flatten)]
        scorer: ScorerArgs,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn quality_config(train: &TrainArgs, batch_size: Option<usize>) -> Result<QualityTrainConfig> {
    let mut cfg = train.section()?.quality;
    cfg.params = train.apply(cfg.params);
    cfg.features = train.features(cfg.features);
    if let Some(b) = batch_size {
        cfg.batch_size = b;
    }
    cfg.params.validate().map_err(|e| invalid(e.to_string()))?;
    cfg.features.validate().map_err(|e| invalid(e.to_string()))?;
    if cfg.batch_size == 0 {
        return Err(invalid("batch size must be at least 1"));
    }
    Ok(cfg)
}

fn read_sources(named: &[(String, PathBuf)]) -> Result<Vec<(String, Vec<String>)>> {
    named.iter().map(|(n, p)| Ok((n.clone(), read_texts(p)?))).collect()
}

pub fn quality(cmd: QualityCmd) -> Result<()> {
    match cmd {
        QualityCmd::Pretrain { positives, pool, out, batch_size, train } => {
            let cfg = quality_config(&train, batch_size)?;
            let sources = read_sources(&positives)?;
            let set = build_quality_training_set(&sources, read_texts(&pool)?, cfg.params.seed)?;
            let (scorer, losses) = pretrain_quality(&set, &cfg)?;
            log::info!("trained on {} + {} texts, epoch losses {losses:?}", set.positives.len(), set.negatives.len());
            scorer.save(&out)?;
        }
        QualityCmd::Selftrain { model, positives, pool, rounds, sample_size, out, batch_size, train } => {
            require_file(&model, "model")?;
            let cfg = quality_config(&train, batch_size)?;
            let positives: Vec<String> = read_sources(&positives)?.into_iter().flat_map(|(_, t)| t).collect();
            let pool = read_texts(&pool)?;
            let n = sample_size.unwrap_or(positives.len());
            let mut state = SelfTrainState::new(BuiltinScorer::load(&model)?, positives, pool, cfg.params.seed);
            for _ in 0..rounds {
                state = self_train_round(state, n, &cfg)?;
                let ones = state.pseudo_labels.values().filter(|&&y| y == 1).count();
                log::info!("round {}: {ones} of {} sampled texts pseudo-labeled high", state.round, state.sample.len());
            }
            state.scorer.save(&out)?;
        }
        QualityCmd::Score { scorer, input, out } => {
            let s = scorer.scorer()?;
            let mut w = create(&out)?;
            for d in read_docs(&input)? {
                let q = score_quality(s.as_ref(), &d.text).with_context(|| format!("scoring {}", d.id))?;
                write_jsonl(&mut w, &json!({"id": d.id, "quality_score": q}))?;
            }
            w.flush()?;
        }
    }
    Ok(())
}

#[derive(Args)]
pub struct RuleArgs {
    /// Keyword file: `[domain]` sections, one keyword per line.
    #[arg(long)]
    keywords: PathBuf,
    /// Distinct keywords a text needs to receive a domain.
    #[arg(long, default_value_t = 3)]
    freq_threshold: usize,
    /// Count every keyword occurrence instead of distinct keywords.
    #[arg(long)]
    count_occurrences: bool,
}

impl RuleArgs {
    fn load(&self) -> Result<KeywordRuleSet> {
        require_file(&self.keywords, "keyword file")?;
        let rules = KeywordRuleSet::load(&self.keywords, self.freq_threshold)?;
        Ok(if self.count_occurrences { rules.with_count_mode(CountMode::Occurrences) } else { rules })
    }
}

#[derive(Subcommand)]
pub enum DomainCmd {
    /// Label a corpus with the keyword rules and train on the result.
    Bootstrap {
        #[command(flatten)]
        rules: RuleArgs,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Refine rules and model from confident predictions on a pool.
    #[command(group(ArgGroup::new("review_mode").required(true).args(["no_review", "reviewed"])))]
    Iterate {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        rules: RuleArgs,
        #[arg(long)]
        pool: PathBuf,
        #[arg(long, default_value_t = 1)]
        rounds: usize,
        #[arg(long, default_value_t = 0.9)]
        confidence: f64,
        /// New keywords per domain and round.
        #[arg(long, default_value_t = 10)]
        candidates: usize,
        /// Accept every induced keyword.
        #[arg(long)]
        no_review: bool,
        /// Keyword file of approved candidates (see `domain candidates`).
        #[arg(long)]
        reviewed: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        keywords_out: PathBuf,
        /// Induced candidates of every round, for the record.
        #[arg(long)]
        review_out: Option<PathBuf>,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Write keyword candidates for review without changing anything.
    Candidates {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        rules: RuleArgs,
        #[arg(long)]
        pool: PathBuf,
        #[arg(long, default_value_t = 0.9)]
        confidence: f64,
        #[arg(long, default_value_t = 10)]
        candidates: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write single and multi labels for each record.
    Classify {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Accuracy and micro precision/recall on JSONL of
    /// `{"text", "gold_single", "gold_multi"}`.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Accepts only candidates listed in an approved keyword file.
struct ApprovedList {
    approved: BTreeMap<DomainLabel, BTreeSet<String>>,
    log: Vec<(usize, BTreeMap<DomainLabel, Vec<KeywordCandidate>>)>,
}

impl KeywordReview for ApprovedList {
    fn review(&mut self, round: usize, candidates: &BTreeMap<DomainLabel, Vec<KeywordCandidate>>) -> BTreeMap<DomainLabel, Vec<String>> {
        self.log.push((round, candidates.clone()));
        candidates
            .iter()
            .map(|(d, cs)| {
                let ok = self.approved.get(d);
                (*d, cs.iter().filter(|c| ok.is_some_and(|s| s.contains(&c.word))).map(|c| c.word.clone()).collect())
            })
            .collect()
    }
}

/// Accepts everything and remembers what it saw.
struct Recording {
    log: Vec<(usize, BTreeMap<DomainLabel, Vec<KeywordCandidate>>)>,
}

impl KeywordReview for Recording {
    fn review(&mut self, round: usize, candidates: &BTreeMap<DomainLabel, Vec<KeywordCandidate>>) -> BTreeMap<DomainLabel, Vec<String>> {
        self.log.push((round, candidates.clone()));
        AcceptAll.review(round, candidates)
    }
}

/// Parses a keyword file leniently (any number of words per domain).
fn read_approved(path: &Path) -> Result<BTreeMap<DomainLabel, BTreeSet<String>>> {
    require_file(path, "reviewed keyword file")?;
    let mut out: BTreeMap<DomainLabel, BTreeSet<String>> = BTreeMap::new();
    let mut current = None;
    for (i, line) in mdfg_core::model::read_to_string(path)?.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            let d: DomainLabel = name.trim().parse().map_err(|e| invalid(format!("{}:{}: {e}", path.display(), i + 1)))?;
            current = Some(d);
            continue;
        }
        let d = current.ok_or_else(|| invalid(format!("{}:{}: keyword before any section", path.display(), i + 1)))?;
        out.entry(d).or_default().insert(line.to_lowercase());
    }
    Ok(out)
}

fn candidates_file(candidates: &BTreeMap<DomainLabel, Vec<KeywordCandidate>>) -> String {
    let mut s = String::from("# Delete the lines you reject, then pass this file to `domain iterate --reviewed`.\n");
    for (d, cs) in candidates {
        if cs.is_empty() {
            continue;
        }
        s.push_str(&format!("[{d}]\n"));
        for c in cs {
            s.push_str(&format!("# in-domain {} elsewhere {} ratio {:.1}\n{}\n", c.in_domain, c.elsewhere, c.ratio, c.word));
        }
        s.push('\n');
    }
    s
}

pub fn domain(cmd: DomainCmd) -> Result<()> {
    match cmd {
        DomainCmd::Bootstrap { rules, corpus, out, train } => {
            let (params, features) = train.resolve(|s| s.domain)?;
            let r = rules.load()?;
            let texts = read_texts(&corpus)?;
            let c = bootstrap_train(&texts, &r, &params, &features)?;
            c.model().save(&out)?;
        }
        DomainCmd::Iterate {
            model,
            rules,
            pool,
            rounds,
            confidence,
            candidates,
            no_review,
            reviewed,
            out,
            keywords_out,
            review_out,
            train,
        } => {
            require_file(&model, "model")?;
            let (params, _) = train.resolve(|s| s.domain)?;
            let cfg = IterationConfig {
                confidence_threshold: confidence,
                keyword_candidates_per_domain: candidates,
                rounds,
                ..IterationConfig::default()
            };
            cfg.validate().map_err(|e| invalid(e.to_string()))?;
            let r = rules.load()?;
            let c = DomainClassifier::load(&model)?;
            let pool = read_texts(&pool)?;
            let (outcomes, log) = if no_review {
                let mut rev = Recording { log: Vec::new() };
                (iterate_optimize(&c, &r, &pool, &cfg, &mut rev, &params)?, rev.log)
            } else {
                let path = reviewed.expect("clap requires one review mode");
                let mut rev = ApprovedList { approved: read_approved(&path)?, log: Vec::new() };
                (iterate_optimize(&c, &r, &pool, &cfg, &mut rev, &params)?, rev.log)
            };
            let last = outcomes.last().ok_or_else(|| invalid("--rounds must be at least 1"))?;
            for o in &outcomes {
                let added: usize = o.added.values().map(Vec::len).sum();
                log::info!("confident {}, keywords added {added}, skipped {}", o.confident, o.skipped);
            }
            last.classifier.model().save(&out)?;
            fs::write(&keywords_out, last.rules.to_file_string())?;
            if let Some(p) = review_out {
                let rounds: Vec<_> = log.iter().map(|(r, c)| json!({"round": r, "candidates": c})).collect();
                emit_json(Some(&p), &rounds)?;
            }
        }
        DomainCmd::Candidates { model, rules, pool, confidence, candidates, out } => {
            require_file(&model, "model")?;
            let cfg = IterationConfig {
                confidence_threshold: confidence,
                keyword_candidates_per_domain: candidates,
                ..IterationConfig::default()
            };
            cfg.validate().map_err(|e| invalid(e.to_string()))?;
            let r = rules.load()?;
            let c = DomainClassifier::load(&model)?;
            let pool = read_texts(&pool)?;
            let conf: Vec<(&str, DomainLabel)> = pool
                .iter()
                .filter_map(|t| {
                    let p = c.classify(t);
                    (p.confidence >= confidence).then_some((t.as_str(), p.single))
                })
                .collect();
            let cands = mdfg_core::domain::induce_keywords(&conf, &r, &cfg);
            fs::write(&out, candidates_file(&cands))?;
        }
        DomainCmd::Classify { model, input, out } => {
            require_file(&model, "model")?;
            let c = DomainClassifier::load(&model)?;
            let mut w = create(&out)?;
            for d in read_docs(&input)? {
                let p = c.classify(&d.text);
                write_jsonl(
                    &mut w,
                    &json!({"id": d.id, "domain_single": p.single, "domain_multi": p.multi, "confidence": p.confidence}),
                )?;
            }
            w.flush()?;
        }
        DomainCmd::Eval { model, test, out } => {
            require_file(&model, "model")?;
            require_file(&test, "test set")?;
            let c = DomainClassifier::load(&model)?;
            let mut items = Vec::new();
            for (i, line) in mdfg_core::model::read_to_string(&test)?.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let item: DomainTestItem =
                    serde_json::from_str(line).with_context(|| format!("{}:{}", test.display(), i + 1))?;
                items.push(item);
            }
            emit_json(out.as_deref(), &eval_domain(&c, &items)?)?;
        }
    }
    Ok(())
}

#[derive(Subcommand)]
pub enum ToxicityCmd {
    /// Merge the public corpora with sampled own benign text.
    BuildInitial {
        /// Public corpus as NAME=PATH (cold, toxicn, swsr, cdial); repeatable.
        #[arg(long = "source", required = true, value_parser = named_path)]
        sources: Vec<(String, PathBuf)>,
        /// Own benign documents (JSONL records).
        #[arg(long)]
        own_benign: PathBuf,
        #[arg(long)]
        benign_n: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model on a training set written by build-initial or loop.
    Train {
        #[arg(long)]
        set: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Screen a pool, have an LLM label the candidates and retrain.
    Loop {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        set: PathBuf,
        #[arg(long)]
        pool: PathBuf,
        #[arg(long, default_value_t = 2)]
        rounds: u32,
        #[arg(long, default_value_t = DEFAULT_CANDIDATE_CAP)]
        cap: usize,
        #[arg(long)]
        out_dir: PathBuf,
        /// Audit log of oracle requests and replies.
        #[arg(long)]
        audit: Option<PathBuf>,
        /// Replay labels from a JSONL table instead of calling the endpoint.
        #[arg(long)]
        oracle_table: Option<PathBuf>,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Write `{"id", "toxicity_score", "toxicity_label"}` for each record.
    Score {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Precision on the toxic half and specificity on the benign half of a
    /// labeled JSONL test set.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Serialize)]
struct RoundSummary {
    round: u32,
    candidates: usize,
    oracle_toxic: usize,
    oracle_benign: usize,
    unparseable: usize,
    skipped: bool,
    model: String,
    set: String,
}

pub fn toxicity(cmd: ToxicityCmd) -> Result<()> {
    match cmd {
        ToxicityCmd::BuildInitial { sources, own_benign, benign_n, seed, out } => {
            let mut m = BTreeMap::new();
            for (name, p) in &sources {
                require_file(p, "source")?;
                m.insert(name.clone(), read_labeled_jsonl(p)?);
            }
            let own = read_texts(&own_benign)?;
            let set = build_initial_toxicity_set(&m, &own, benign_n, seed)?;
            for ((prov, toxic), n) in set.composition() {
                log::info!("{prov} {}: {n}", if toxic { "toxic" } else { "benign" });
            }
            let mut w = create(&out)?;
            set.write_jsonl(&mut w)?;
            w.flush()?;
        }
        ToxicityCmd::Train { set, out, train } => {
            require_file(&set, "training set")?;
            let (params, features) = train.resolve(|s| s.toxicity)?;
            let s = ToxicityTrainSet::read_jsonl(&set)?;
            train_toxicity_r0(&s, &params, &features)?.model().save(&out)?;
        }
        ToxicityCmd::Loop { model, set, pool, rounds, cap, out_dir, audit, oracle_table, train } => {
            require_file(&model, "model")?;
            require_file(&set, "training set")?;
            let (params, _) = train.resolve(|s| s.toxicity)?;
            let r0 = ToxicityClassifier::load(&model)?;
            let initial = ToxicityTrainSet::read_jsonl(&set)?;
            let pool = read_texts(&pool)?;
            fs::create_dir_all(&out_dir)?;
            let mut oracle: Box<dyn OracleClient> = match &oracle_table {
                Some(p) => {
                    require_file(p, "oracle table")?;
                    let table: HashMap<String, bool> = read_labeled_jsonl(p)?.into_iter().collect();
                    Box::new(MockOracle::from_table(table))
                }
                None => {
                    let audit = audit.unwrap_or_else(|| mdfg_core::toxicity::default_audit_path(&out_dir));
                    Box::new(HttpOracle::from_env().map_err(|e| invalid(e.to_string()))?.with_audit(&audit)?)
                }
            };
            let cfg = LoopConfig { candidate_cap: cap, params, ..LoopConfig::default() };
            let outcomes = run_llm_loop(&r0, &pool, oracle.as_mut(), &initial, rounds, &cfg)?;
            let mut summary = Vec::new();
            for o in &outcomes {
                let model_name = format!("toxicity.round{}.bin", o.round);
                let set_name = format!("set.round{}.jsonl", o.round);
                o.classifier.model().save(&out_dir.join(&model_name))?;
                let mut w = create(&out_dir.join(&set_name))?;
                o.set.write_jsonl(&mut w)?;
                w.flush()?;
                summary.push(RoundSummary {
                    round: o.round,
                    candidates: o.candidates,
                    oracle_toxic: o.oracle_toxic,
                    oracle_benign: o.oracle_benign,
                    unparseable: o.unparseable,
                    skipped: o.skipped,
                    model: model_name,
                    set: set_name,
                });
            }
            emit_json(Some(&out_dir.join("loop.json")), &summary)?;
        }
        ToxicityCmd::Score { model, input, out } => {
            require_file(&model, "model")?;
            let c = ToxicityClassifier::load(&model)?;
            let mut w = create(&out)?;
            for d in read_docs(&input)? {
                let (s, l) = score_toxicity(&c, &d.text);
                write_jsonl(&mut w, &json!({"id": d.id, "toxicity_score": s, "toxicity_label": l}))?;
            }
            w.flush()?;
        }
        ToxicityCmd::Eval { model, test, out } => {
            require_file(&model, "model")?;
            require_file(&test, "test set")?;
            let c = ToxicityClassifier::load(&model)?;
            let items = read_labeled_jsonl(&test)?;
            let toxic: Vec<String> = items.iter().filter(|(_, y)| *y).map(|(t, _)| t.clone()).collect();
            let benign: Vec<String> = items.iter().filter(|(_, y)| !*y).map(|(t, _)| t.clone()).collect();
            emit_json(out.as_deref(), &eval_toxicity(&c, &toxic, &benign)?)?;
        }
    }
    Ok(())
}
