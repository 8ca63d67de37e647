//! Seeded synthetic corpora with known structure. The tests, the
//! acceptance suite and the demo commands all draw their fixtures from here.
//!
//! Vocabularies are built from disjoint blocks of CJK code points, so no
//! word of one cluster is a substring of a word in another.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::ops::RangeInclusive;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::domain::DomainTestItem;
use crate::model::{Document, DomainLabel};
use crate::prepare::rng;

const BLOCK: u32 = 0x80;
const BASE: u32 = 0x4E00;

/// `n` two-character words drawn from block `block`.
pub fn block_words(block: u32, n: usize) -> Vec<String> {
    let start = BASE + block * BLOCK;
    assert!(2 * n as u32 <= BLOCK, "block holds at most {} words", BLOCK / 2);
    (0..n as u32)
        .map(|i| {
            [start + 2 * i, start + 2 * i + 1]
                .iter()
                .map(|&c| char::from_u32(c).expect("CJK code point"))
                .collect()
        })
        .collect()
}

/// Neutral words shared by every cluster.
pub fn filler_words() -> Vec<String> {
    block_words(0, 40)
}

/// Joins tokens into clauses of 4 to 8 tokens, separated by `，` and
/// ending in `。`.
fn clauses(rng: &mut ChaCha8Rng, tokens: &[String]) -> String {
    let mut out = String::new();
    let mut i = 0;
    while i < tokens.len() {
        let len = rng.gen_range(4..=8).min(tokens.len() - i);
        for t in &tokens[i..i + len] {
            out.push_str(t);
        }
        i += len;
        out.push(if i == tokens.len() { '。' } else { '，' });
    }
    out
}

fn pick(rng: &mut ChaCha8Rng, pool: &[String], n: usize) -> Vec<String> {
    (0..n).map(|_| pool[rng.gen_range(0..pool.len())].clone()).collect()
}

fn pick_distinct(rng: &mut ChaCha8Rng, pool: &[String], n: RangeInclusive<usize>) -> Vec<String> {
    let n = rng.gen_range(n).min(pool.len());
    pool.choose_multiple(rng, n).cloned().collect()
}

/// Shuffles the given tokens with `filler` filler words and formats them.
fn compose(rng: &mut ChaCha8Rng, mut tokens: Vec<String>, filler: usize) -> String {
    tokens.extend(pick(rng, &filler_words(), filler));
    tokens.shuffle(rng);
    clauses(rng, &tokens)
}

/// Fluent-looking prose: filler plus vocabulary from a "well written" block.
pub fn prose(rng: &mut ChaCha8Rng, tokens: usize) -> String {
    let good = block_words(1, 40);
    let n_good = tokens / 2;
    let picked = pick(rng, &good, n_good);
    compose(rng, picked, tokens - n_good)
}

/// Boilerplate and garbage: ASCII fragments, digits, symbols and spam words.
pub fn noise(rng: &mut ChaCha8Rng, tokens: usize) -> String {
    let spam = block_words(2, 20);
    let mut out = String::new();
    for i in 0..tokens {
        if i > 0 {
            out.push(if rng.gen_bool(0.5) { ' ' } else { '|' });
        }
        match rng.gen_range(0..4) {
            0 => out.push_str(&spam[rng.gen_range(0..spam.len())]),
            1 => out.push_str(&rng.gen_range(0..100_000).to_string()),
            2 => {
                for _ in 0..rng.gen_range(3..9) {
                    out.push(rng.gen_range(b'a'..=b'z') as char);
                }
            }
            _ => out.push_str([">>", "&nbsp;", "###", "@@", "www", ".com", "【】", "★"][rng.gen_range(0..8)]),
        }
    }
    out
}

/// Curated positives and web-noise negatives for the quality scorer.
pub fn quality_fixture(seed: u64, n_pos: usize, n_neg: usize) -> (Vec<String>, Vec<String>) {
    let mut r = rng(seed);
    let pos = (0..n_pos).map(|_| prose(&mut r, 40)).collect();
    let neg = (0..n_neg).map(|_| noise(&mut r, 40)).collect();
    (pos, neg)
}

/// An unlabeled pool, roughly half prose and half noise.
pub fn quality_pool(seed: u64, n: usize) -> Vec<String> {
    let mut r = rng(seed);
    (0..n).map(|_| if r.gen_bool(0.5) { prose(&mut r, 40) } else { noise(&mut r, 40) }).collect()
}

/// Domain vocabularies split into seed keywords (given to the rules) and
/// planted keywords (held back for induction to rediscover).
#[derive(Debug, Clone)]
pub struct DomainFixture {
    pub seeds: BTreeMap<DomainLabel, Vec<String>>,
    pub planted: BTreeMap<DomainLabel, Vec<String>>,
    pub train: Vec<String>,
    pub test: Vec<DomainTestItem>,
}

pub const DOMAIN_SEEDS: usize = 20;
pub const DOMAIN_PLANTED: usize = 10;

fn domain_vocab(d: DomainLabel) -> Vec<String> {
    block_words(8 + d.index() as u32, DOMAIN_SEEDS + DOMAIN_PLANTED)
}

/// A document of domain `d`. Explicit documents carry 4 to 6 distinct seed
/// keywords; implicit ones carry at most 1 and lean on planted vocabulary.
fn domain_doc(r: &mut ChaCha8Rng, d: DomainLabel, explicit: bool) -> String {
    if d == DomainLabel::General {
        return compose(r, Vec::new(), 30);
    }
    let vocab = domain_vocab(d);
    let (seeds, planted) = vocab.split_at(DOMAIN_SEEDS);
    let n_seed = if explicit { 4..=6 } else { 0..=1 };
    let n_planted = if explicit { 2..=4 } else { 3..=5 };
    let mut tokens = pick_distinct(r, seeds, n_seed);
    tokens.extend(pick_distinct(r, planted, n_planted));
    compose(r, tokens, 16)
}

/// `per_domain` training texts and `test_per_domain` gold test items for
/// each of the 11 domains. A quarter of the training texts and half of the
/// test items are implicit.
pub fn domain_fixture(seed: u64, per_domain: usize, test_per_domain: usize) -> DomainFixture {
    let mut r = rng(seed);
    let mut seeds = BTreeMap::new();
    let mut planted = BTreeMap::new();
    for d in DomainLabel::ALL {
        if d == DomainLabel::General {
            continue;
        }
        let v = domain_vocab(d);
        seeds.insert(d, v[..DOMAIN_SEEDS].to_vec());
        planted.insert(d, v[DOMAIN_SEEDS..].to_vec());
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for d in DomainLabel::ALL {
        for i in 0..per_domain {
            train.push(domain_doc(&mut r, d, i % 4 != 0));
        }
        for i in 0..test_per_domain {
            test.push(DomainTestItem {
                text: domain_doc(&mut r, d, i % 2 == 0),
                gold_single: d,
                gold_multi: BTreeSet::from([d]),
            });
        }
    }
    train.shuffle(&mut r);
    DomainFixture { seeds, planted, train, test }
}

/// Toxicity corpora with two planted weaknesses for the initial model: a
/// novel toxic cluster absent from the public sets, and a benign slang
/// cluster whose words only occur in toxic public examples.
#[derive(Debug, Clone)]
pub struct ToxicityFixture {
    /// Public labeled corpora, `(text, is_toxic)`.
    pub sources: BTreeMap<String, Vec<(String, bool)>>,
    pub own_benign: Vec<String>,
    /// Unlabeled texts for the loop rounds.
    pub pool: Vec<String>,
    /// Ground truth for every pool and test text.
    pub truth: HashMap<String, bool>,
    pub toxic_test: Vec<String>,
    pub benign_test: Vec<String>,
}

fn slang_words() -> Vec<String> {
    block_words(6, 10)
}

fn toxic_core(r: &mut ChaCha8Rng) -> String {
    let mut t = pick_distinct(r, &block_words(4, 30), 4..=6);
    t.extend(pick_distinct(r, &slang_words(), 1..=2));
    compose(r, t, 12)
}

fn toxic_novel(r: &mut ChaCha8Rng) -> String {
    let mut t = pick_distinct(r, &slang_words(), 2..=3);
    t.extend(pick_distinct(r, &block_words(5, 30), 3..=5));
    compose(r, t, 12)
}

fn benign_plain(r: &mut ChaCha8Rng) -> String {
    let t = pick_distinct(r, &block_words(3, 40), 3..=6);
    compose(r, t, 14)
}

fn benign_slang(r: &mut ChaCha8Rng) -> String {
    let mut t = pick_distinct(r, &slang_words(), 3..=4);
    t.extend(pick_distinct(r, &block_words(3, 40), 1..=2));
    compose(r, t, 12)
}

/// `scale` sets the size of every part; 100 gives a few thousand texts.
pub fn toxicity_fixture(seed: u64, scale: usize) -> ToxicityFixture {
    let mut r = rng(seed);
    let mut sources = BTreeMap::new();
    for name in ["cold", "toxicn", "swsr", "cdial"] {
        let mut items = Vec::new();
        for _ in 0..scale / 2 {
            items.push((toxic_core(&mut r), true));
        }
        for _ in 0..scale {
            items.push((benign_plain(&mut r), false));
        }
        sources.insert(name.to_string(), items);
    }
    let own_benign = (0..2 * scale).map(|_| benign_plain(&mut r)).collect();
    let mut truth = HashMap::new();
    let mut pool = Vec::new();
    for i in 0..4 * scale {
        let (t, y) = match i % 4 {
            0 => (toxic_novel(&mut r), true),
            1 => (benign_slang(&mut r), false),
            2 => (benign_plain(&mut r), false),
            _ => (toxic_core(&mut r), true),
        };
        truth.insert(t.clone(), y);
        pool.push(t);
    }
    let mut toxic_test = Vec::new();
    let mut benign_test = Vec::new();
    for i in 0..scale {
        let t = if i % 2 == 0 { toxic_novel(&mut r) } else { toxic_core(&mut r) };
        truth.insert(t.clone(), true);
        toxic_test.push(t);
        let b = if i % 2 == 0 { benign_slang(&mut r) } else { benign_plain(&mut r) };
        truth.insert(b.clone(), false);
        benign_test.push(b);
    }
    ToxicityFixture { sources, own_benign, pool, truth, toxic_test, benign_test }
}

/// Words for a sensitive lexicon matching [`raw_corpus`]'s sensitive documents.
pub fn sensitive_words() -> Vec<String> {
    block_words(7, 10)
}

/// Raw web-like JSONL documents totalling at least `target_bytes` of text:
/// domain prose, noise, short snippets, English pages, sensitive pages,
/// exact and partial duplicates.
pub fn raw_corpus(seed: u64, target_bytes: usize) -> Vec<Document> {
    let mut r = rng(seed);
    let sensitive = sensitive_words();
    let mut docs: Vec<Document> = Vec::new();
    let mut bytes = 0;
    let mut i = 0u64;
    while bytes < target_bytes {
        let kind = r.gen_range(0..20);
        let text = match kind {
            0 | 1 => {
                // short snippet
                let n = r.gen_range(3..10);
                compose(&mut r, Vec::new(), n)
            }
            2 => {
                let mut s = String::new();
                for _ in 0..r.gen_range(30..60) {
                    s.push_str(["the ", "data ", "model ", "page ", "login ", "home ", "news "][r.gen_range(0..7)]);
                }
                s
            }
            3 => {
                let mut lines = Vec::new();
                for _ in 0..r.gen_range(3..6) {
                    let mut t = pick(&mut r, &sensitive, 6);
                    t.extend(pick(&mut r, &filler_words(), 2));
                    lines.push(t.concat());
                }
                lines.push(prose(&mut r, 100));
                lines.join("\n")
            }
            4 if !docs.is_empty() => docs[r.gen_range(0..docs.len())].text.clone(),
            5 if !docs.is_empty() => {
                let base = &docs[r.gen_range(0..docs.len())].text;
                let keep: String = base.chars().take(base.chars().count() * 3 / 4).collect();
                format!("{keep}{}", prose(&mut r, 10))
            }
            6 => noise(&mut r, 80),
            _ => {
                let d = DomainLabel::ALL[r.gen_range(0..DomainLabel::ALL.len())];
                let paras: Vec<String> = (0..r.gen_range(2..5)).map(|_| domain_doc(&mut r, d, true)).collect();
                paras.join("\n")
            }
        };
        bytes += text.len();
        let mut doc = Document::new(format!("raw-{i:07}"), text, "synthetic");
        if i % 7 == 0 {
            doc.meta.insert("url".into(), format!("https://example.org/{i}"));
        }
        docs.push(doc);
        i += 1;
    }
    docs
}
