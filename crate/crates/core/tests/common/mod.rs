//! Shared oracles, generators and fixture helpers for the integration
//! tests and the acceptance runner.

#![allow(dead_code)]

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pavi::corpus::{
    dataset_stats, import_ae110k, import_oamine, read_canonical, stratified_split, Ae110kOptions, AttributeValuePair,
    Dataset, PairSet, Product, SplitSpec, StatsReport, TrainFraction,
};
use pavi::evaluation::{aggregate, score_product, MatchMode};
use pavi::gateway::{GenerationParams, Matcher, MockBackend, RetryPolicy};
use pavi::pipeline::{run, write_run, ExperimentConfig, PipelineError, RunManifest};
use pavi::prompting::{ContextKind, Mode, Stage, Strategy};
use pavi::retrieval::{build_tfidf_index, select_dense, select_tfidf, EmbeddingStore, SelectorKind};

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests").join("fixtures").join(name)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---------------------------------------------------------------------
// Retrieval oracle
// ---------------------------------------------------------------------

fn words(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut current = String::new();
    for c in text.chars() {
        if c.is_alphanumeric() {
            current.extend(c.to_lowercase());
        } else if !current.is_empty() {
            out.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        out.push(current);
    }
    out
}

fn ascending_sum(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut total = 0.0;
    for x in xs {
        total += x;
    }
    total
}

fn unit_tfidf(counts: &BTreeMap<String, usize>, idf: &HashMap<String, f64>) -> BTreeMap<String, f64> {
    let raw: BTreeMap<String, f64> = counts
        .iter()
        .filter_map(|(t, &c)| idf.get(t).map(|w| (t.clone(), c as f64 * w)))
        .collect();
    let norm = ascending_sum(raw.values().map(|w| w * w).collect()).sqrt();
    if norm == 0.0 {
        return BTreeMap::new();
    }
    raw.into_iter().map(|(t, w)| (t, w / norm)).collect()
}

fn term_counts(text: &str) -> BTreeMap<String, usize> {
    let mut counts = BTreeMap::new();
    for w in words(text) {
        *counts.entry(w).or_insert(0) += 1;
    }
    counts
}

/// Exhaustive TF-IDF ranking: score every document, sort by score
/// descending then corpus position, truncate.
pub fn tfidf_oracle(corpus: &[(String, String)], query: &str, k: usize, exclude: Option<&str>) -> Vec<(String, f64)> {
    let n = corpus.len() as f64;
    let docs: Vec<BTreeMap<String, usize>> = corpus.iter().map(|(_, t)| term_counts(t)).collect();
    let mut df: HashMap<String, usize> = HashMap::new();
    for d in &docs {
        for t in d.keys() {
            *df.entry(t.clone()).or_insert(0) += 1;
        }
    }
    let idf: HashMap<String, f64> = df
        .iter()
        .map(|(t, &d)| (t.clone(), ((1.0 + n) / (1.0 + d as f64)).ln() + 1.0))
        .collect();
    let q = unit_tfidf(&term_counts(query), &idf);
    let mut scored: Vec<(usize, String, f64)> = Vec::new();
    for (pos, ((id, _), d)) in corpus.iter().zip(&docs).enumerate() {
        if Some(id.as_str()) == exclude {
            continue;
        }
        let v = unit_tfidf(d, &idf);
        let contributions: Vec<f64> = q.iter().filter_map(|(t, a)| v.get(t).map(|b| a * b)).collect();
        scored.push((pos, id.clone(), ascending_sum(contributions)));
    }
    scored.sort_by(|a, b| b.2.partial_cmp(&a.2).unwrap().then(a.0.cmp(&b.0)));
    scored.into_iter().take(k).map(|(_, id, s)| (id, s)).collect()
}

fn unit(v: &[f64]) -> Vec<f64> {
    let mut sq = 0.0;
    for x in v {
        sq += x * x;
    }
    let norm = f64::sqrt(sq);
    v.iter().map(|x| x / norm).collect()
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for i in 0..a.len() {
        dot += a[i] * b[i];
    }
    for x in a {
        na += x * x;
    }
    for x in b {
        nb += x * x;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot / (na.sqrt() * nb.sqrt())
}

/// Exhaustive dense ranking over raw vectors: unit-normalise each, take
/// the cosine with the query, ties by ascending id.
pub fn dense_oracle(vectors: &[(String, Vec<f64>)], query: &[f64], k: usize, exclude: Option<&str>) -> Vec<(String, f64)> {
    let mut scored: Vec<(String, f64)> = vectors
        .iter()
        .filter(|(id, _)| Some(id.as_str()) != exclude)
        .map(|(id, v)| (id.clone(), cosine(query, &unit(v))))
        .collect();
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
    scored.truncate(k);
    scored
}

const VOCAB: [&str; 24] = [
    "vans", "nike", "pink", "black", "white", "canvas", "leather", "shoes", "sneakers", "men's", "women's", "low-top",
    "watch", "quartz", "steel", "coffee", "roast", "ground", "bag", "nylon", "usb", "cable", "4k", "hdmi",
];

pub fn random_title(rng: &mut ChaCha8Rng) -> String {
    let n = rng.gen_range(0..=7);
    let mut t: Vec<String> = (0..n).map(|_| VOCAB.choose(rng).unwrap().to_string()).collect();
    if rng.gen_bool(0.3) {
        if let Some(w) = t.first_mut() {
            *w = w.to_uppercase();
        }
    }
    t.join(if rng.gen_bool(0.5) { " " } else { ", " })
}

/// One random corpus for each seed, with duplicate titles to force ties.
pub fn random_corpus(rng: &mut ChaCha8Rng) -> Vec<(String, String)> {
    let size = rng.gen_range(1..=500);
    let mut corpus: Vec<(String, String)> = Vec::with_capacity(size);
    for i in 0..size {
        let title = if i > 0 && rng.gen_bool(0.15) {
            corpus[rng.gen_range(0..i)].1.clone()
        } else {
            random_title(rng)
        };
        corpus.push((format!("d{:04}", (i * 7919) % 10_000), title));
    }
    corpus
}

fn hits_match(kind: &str, got: &[(String, f64)], want: &[(String, f64)]) -> Result<(), String> {
    if got.len() != want.len() || got.iter().zip(want).any(|(g, w)| g.0 != w.0 || g.1.to_bits() != w.1.to_bits()) {
        return Err(format!("{kind} mismatch:\n got  {got:?}\n want {want:?}"));
    }
    Ok(())
}

/// Compare both selectors against their oracles on `corpora` random
/// corpora. Returns the number of ranked queries checked.
pub fn check_retrieval(corpora: usize, seed: u64) -> Result<usize, String> {
    let mut r = rng(seed);
    let mut checked = 0;
    for c in 0..corpora {
        let corpus = random_corpus(&mut r);
        let index = build_tfidf_index(corpus.iter().map(|(i, t)| (i.as_str(), t.as_str()))).map_err(|e| e.to_string())?;

        let dim = r.gen_range(2..=8);
        let vectors: Vec<(String, Vec<f64>)> = corpus
            .iter()
            .enumerate()
            .map(|(i, (id, _))| {
                if i > 0 && r.gen_bool(0.1) {
                    let j = r.gen_range(0..i);
                    return (id.clone(), twin(j, &mut r, dim));
                }
                (id.clone(), random_vector(&mut r, dim))
            })
            .collect();
        let store = EmbeddingStore::from_vectors(vectors.iter().cloned()).map_err(|e| e.to_string())?;

        for q in 0..4 {
            let (query, exclude) = if q % 2 == 0 {
                (random_title(&mut r), None)
            } else {
                let pick = &corpus[r.gen_range(0..corpus.len())];
                (pick.1.clone(), Some(pick.0.clone()))
            };
            let qvec = match &exclude {
                Some(id) => store.get(id).unwrap().to_vec(),
                None => random_vector(&mut r, dim),
            };
            for k in [1, 3, 5] {
                let got: Vec<(String, f64)> = select_tfidf(&index, &query, k, exclude.as_deref())
                    .map_err(|e| e.to_string())?
                    .into_iter()
                    .map(|h| (h.product_id, h.score))
                    .collect();
                hits_match(&format!("tfidf corpus {c} query {query:?} k={k}"), &got, &tfidf_oracle(&corpus, &query, k, exclude.as_deref()))?;
                let got: Vec<(String, f64)> = select_dense(&store, &qvec, k, exclude.as_deref())
                    .map_err(|e| e.to_string())?
                    .into_iter()
                    .map(|h| (h.product_id, h.score))
                    .collect();
                hits_match(&format!("dense corpus {c} k={k}"), &got, &dense_oracle(&vectors, &qvec, k, exclude.as_deref()))?;
                checked += 2;
            }
        }
    }
    Ok(checked)
}

fn random_vector(r: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| r.gen_range(-3..=3) as f64).collect();
        if v.iter().any(|x| *x != 0.0) {
            return v;
        }
    }
}

// A scaled copy of a fixed direction, so several documents tie.
fn twin(j: usize, r: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    let base = random_vector(&mut rng(j as u64 % 5), dim);
    let scale = r.gen_range(1..=4) as f64;
    base.into_iter().map(|x| x * scale).collect()
}

// ---------------------------------------------------------------------
// Evaluation oracle
// ---------------------------------------------------------------------

const ATTRS: [&str; 10] = [
    "brand", "color", "size", "material", "gender", "style", "product type", "season", "model", "pattern",
];
const VALUES: [&str; 8] = ["vans", "pink", "canvas", "men's & women's", "low top", "10", "black", "skateboarding shoes"];

/// A surface form of `base` that normalises back to it.
fn decorate(r: &mut ChaCha8Rng, base: &str) -> String {
    let mut s: String = match r.gen_range(0..3) {
        0 => base.to_string(),
        1 => base.to_uppercase(),
        _ => base
            .split(' ')
            .map(|w| {
                let mut c = w.chars();
                c.next().map(|f| f.to_uppercase().collect::<String>() + c.as_str()).unwrap_or_default()
            })
            .collect::<Vec<_>>()
            .join(" "),
    };
    if r.gen_bool(0.2) {
        s = s.replace(' ', "  ");
    }
    if r.gen_bool(0.2) {
        s.push('.');
    }
    if r.gen_bool(0.15) {
        s = format!("\"{s}\"");
    }
    s
}

/// One labelled pair: surface strings plus the indices they normalise to.
#[derive(Clone, Debug)]
pub struct OraclePair {
    pub attribute: String,
    pub value: String,
    pub attr_id: usize,
    pub value_id: usize,
}

#[derive(Clone, Debug)]
pub struct OracleProduct {
    pub id: String,
    pub category: String,
    pub gold: Vec<OraclePair>,
    pub pred: Vec<OraclePair>,
}

fn oracle_pair(r: &mut ChaCha8Rng, a: usize, v: usize) -> OraclePair {
    OraclePair {
        attribute: decorate(r, ATTRS[a]),
        value: decorate(r, VALUES[v]),
        attr_id: a,
        value_id: v,
    }
}

pub fn random_oracle_product(r: &mut ChaCha8Rng, i: usize) -> OracleProduct {
    let n_gold = r.gen_range(0..=8);
    let gold: Vec<OraclePair> = (0..n_gold)
        .map(|_| {
            let (a, v) = (r.gen_range(0..ATTRS.len()), r.gen_range(0..VALUES.len()));
            oracle_pair(r, a, v)
        })
        .collect();
    let n_pred = r.gen_range(0..=10);
    let pred = (0..n_pred)
        .map(|_| match (r.gen_range(0..3), gold.is_empty()) {
            (0, false) => {
                let g = &gold[r.gen_range(0..gold.len())];
                oracle_pair(r, g.attr_id, g.value_id)
            }
            (1, false) => {
                let g = &gold[r.gen_range(0..gold.len())];
                let v = r.gen_range(0..VALUES.len());
                oracle_pair(r, g.attr_id, v)
            }
            _ => {
                let (a, v) = (r.gen_range(0..ATTRS.len()), r.gen_range(0..VALUES.len()));
                oracle_pair(r, a, v)
            }
        })
        .collect();
    OracleProduct {
        id: format!("p{i}"),
        category: ["shoes", "bags", "watches"][i % 3].to_string(),
        gold,
        pred,
    }
}

fn to_set(pairs: &[OraclePair]) -> PairSet {
    pairs
        .iter()
        .map(|p| AttributeValuePair::new(&p.attribute, &p.value).unwrap())
        .collect()
}

/// Brute-force counts: double loops over index pairs, no sets.
pub fn brute_force_counts(p: &OracleProduct) -> (u64, u64, u64) {
    let mut gold: Vec<(usize, usize)> = Vec::new();
    for g in &p.gold {
        if !gold.contains(&(g.attr_id, g.value_id)) {
            gold.push((g.attr_id, g.value_id));
        }
    }
    let mut kept: Vec<(usize, usize)> = Vec::new();
    for q in &p.pred {
        let mut labeled = false;
        for g in &gold {
            if g.0 == q.attr_id {
                labeled = true;
            }
        }
        if labeled && !kept.contains(&(q.attr_id, q.value_id)) {
            kept.push((q.attr_id, q.value_id));
        }
    }
    let mut tp = 0;
    for k in &kept {
        for g in &gold {
            if k == g {
                tp += 1;
            }
        }
    }
    (tp, kept.len() as u64 - tp, gold.len() as u64 - tp)
}

fn prf(tp: u64, fp: u64, fn_: u64) -> (f64, f64, f64) {
    let p = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
    let r = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
    let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    (p, r, f)
}

/// Score `n` random products with the library and the brute-force oracle
/// and require exact agreement, overall and per category.
pub fn check_evaluation(n: usize, seed: u64) -> Result<(u64, u64, u64), String> {
    let mut r = rng(seed);
    let products: Vec<OracleProduct> = (0..n).map(|i| random_oracle_product(&mut r, i)).collect();
    let scores: Vec<_> = products
        .iter()
        .map(|p| score_product(&p.id, &p.category, &to_set(&p.pred), &to_set(&p.gold), MatchMode::Normalized))
        .collect();
    let report = aggregate(&scores);

    let mut totals = (0, 0, 0);
    let mut per_category: BTreeMap<String, (u64, u64, u64)> = BTreeMap::new();
    for (p, s) in products.iter().zip(&scores) {
        let want = brute_force_counts(p);
        if (s.tp, s.fp, s.fn_) != want {
            return Err(format!("product {} counts {:?} != oracle {want:?}: {p:?}", p.id, (s.tp, s.fp, s.fn_)));
        }
        totals.0 += want.0;
        totals.1 += want.1;
        totals.2 += want.2;
        let c = per_category.entry(p.category.clone()).or_default();
        c.0 += want.0;
        c.1 += want.1;
        c.2 += want.2;
    }
    let (p, rc, f) = prf(totals.0, totals.1, totals.2);
    let t = report.totals;
    if (t.tp, t.fp, t.fn_) != totals {
        return Err(format!("totals {:?} != oracle {totals:?}", (t.tp, t.fp, t.fn_)));
    }
    if report.precision.to_bits() != p.to_bits() || report.recall.to_bits() != rc.to_bits() || report.f1.to_bits() != f.to_bits() {
        return Err(format!(
            "metrics ({}, {}, {}) != oracle ({p}, {rc}, {f})",
            report.precision, report.recall, report.f1
        ));
    }
    for (cat, (tp, fp, fn_)) in &per_category {
        let m = report.per_category.get(cat).ok_or(format!("missing category {cat}"))?;
        let (p, rc, f) = prf(*tp, *fp, *fn_);
        if (m.tp, m.fp, m.fn_) != (*tp, *fp, *fn_) || m.precision != p || m.recall != rc || m.f1 != f {
            return Err(format!("category {cat} differs from oracle"));
        }
    }
    Ok(totals)
}

// ---------------------------------------------------------------------
// End-to-end helpers
// ---------------------------------------------------------------------

pub fn load_fixture(name: &str) -> Dataset {
    read_canonical(&fixture(name)).unwrap()
}

fn lines(pairs: &PairSet) -> String {
    pairs
        .iter()
        .map(|p| format!("{}: {}", p.attribute(), p.value()))
        .collect::<Vec<_>>()
        .join("\n")
}

const GENERATED: &str = "1. Classic Canvas Sneakers Black\n2. Stainless Steel Quartz Watch\n3. Nylon Travel Backpack 30L";

/// A mock answering every stage with the gold labels of the query product.
pub fn oracle_mock(test: &Dataset) -> MockBackend {
    let mut mock = MockBackend::new().stage_rule(Stage::SelfGen, Matcher::all_of(Vec::<String>::new()), GENERATED);
    for p in test.products() {
        let names: Vec<&str> = p.pairs.iter().map(|x| x.attribute()).collect();
        let mut unique = names.clone();
        unique.dedup();
        mock = mock
            .stage_rule(Stage::Single, Matcher::QueryId(p.id.clone()), lines(&p.pairs))
            .stage_rule(Stage::AttrId, Matcher::QueryId(p.id.clone()), unique.join("\n"))
            .stage_rule(Stage::ValueExt, Matcher::QueryId(p.id.clone()), lines(&p.pairs));
    }
    mock
}

/// A deterministic imperfect script: every third product loses a pair,
/// every fourth gains a wrong value, every fifth gains an unlabeled
/// attribute, every seventh answers in JSON.
pub fn noisy_mock(test: &Dataset) -> MockBackend {
    let mut mock = MockBackend::new().stage_rule(Stage::SelfGen, Matcher::all_of(Vec::<String>::new()), GENERATED);
    for (i, p) in test.products().iter().enumerate() {
        let mut pairs: Vec<String> = p.pairs.iter().map(|x| format!("{}: {}", x.attribute(), x.value())).collect();
        if i % 3 == 0 && pairs.len() > 1 {
            pairs.pop();
        }
        if i % 4 == 0 {
            pairs.push(format!("{}: Unknown", p.pairs.iter().next().unwrap().attribute()));
        }
        if i % 5 == 0 {
            pairs.push("Warranty: 1 Year".into());
        }
        let text = if i % 7 == 0 {
            let map: serde_json::Map<String, serde_json::Value> = pairs
                .iter()
                .filter_map(|l| l.split_once(": "))
                .map(|(a, v)| (a.to_string(), v.into()))
                .collect();
            format!("Here you go:\n{}", serde_json::Value::Object(map))
        } else {
            pairs.join("\n")
        };
        let mut names: Vec<String> = pairs.iter().filter_map(|l| l.split_once(": ")).map(|(a, _)| a.to_string()).collect();
        names.dedup();
        mock = mock
            .stage_rule(Stage::Single, Matcher::QueryId(p.id.clone()), text.clone())
            .stage_rule(Stage::AttrId, Matcher::QueryId(p.id.clone()), names.join("\n"))
            .stage_rule(Stage::ValueExt, Matcher::QueryId(p.id.clone()), text);
    }
    mock
}

/// Strategies exercised end to end on the 100-product fixture.
pub fn e2e_strategies() -> Vec<Strategy> {
    vec![
        Strategy::zero_shot(Mode::OneStep),
        Strategy::retrieved(Mode::OneStep, ContextKind::Demonstrations, SelectorKind::Tfidf, 3),
        Strategy::self_generated(Mode::OneStep, 3),
        Strategy::zero_shot(Mode::TwoStep),
        Strategy::retrieved(Mode::TwoStep, ContextKind::Titles, SelectorKind::Dense, 5),
        Strategy {
            stage2_demonstrations: true,
            ..Strategy::retrieved(Mode::TwoStep, ContextKind::Demonstrations, SelectorKind::Random, 1)
        },
    ]
}

/// A config over the checked-in fixtures writing to `out`.
pub fn e2e_config(strategy: Strategy, out: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(
        fixture("products.jsonl"),
        out,
        strategy,
        GenerationParams::new("scripted-mock", "http://127.0.0.1:9/v1"),
    );
    cfg.train = Some(fixture("train.jsonl"));
    cfg.retrieval.embeddings = Some(fixture("embeddings.jsonl"));
    cfg.retrieval.seed = 7;
    cfg.backend.retry = RetryPolicy {
        max_attempts: 1,
        ..RetryPolicy::default()
    };
    cfg
}

pub struct RunFiles {
    pub manifest: Vec<u8>,
    pub report_json: Vec<u8>,
    pub report_csv: Vec<u8>,
    pub report_md: Vec<u8>,
}

impl RunFiles {
    pub fn read(dir: &Path) -> Self {
        let read = |n: &str| fs::read(dir.join(n)).unwrap();
        RunFiles {
            manifest: read("manifest.json"),
            report_json: read("report.json"),
            report_csv: read("report.csv"),
            report_md: read("report.md"),
        }
    }

    pub fn same_as(&self, other: &RunFiles) -> bool {
        self.manifest == other.manifest
            && self.report_json == other.report_json
            && self.report_csv == other.report_csv
            && self.report_md == other.report_md
    }
}

/// Run `cfg` against `mock`, write the run directory and read it back.
pub fn run_and_read(cfg: &ExperimentConfig, mock: Arc<MockBackend>) -> Result<(RunManifest, RunFiles), PipelineError> {
    let gateway = cfg.gateway_with(mock);
    let manifest = run(cfg, &gateway)?;
    let dir = cfg.output_path();
    write_run(&manifest, &dir)?;
    Ok((manifest, RunFiles::read(&dir)))
}

pub fn product(id: &str, category: &str, title: &str, pairs: &[(&str, &str)]) -> Product {
    Product::new(
        id,
        category,
        title,
        pairs.iter().map(|(a, v)| AttributeValuePair::new(a, v).unwrap()).collect::<Vec<_>>(),
    )
    .unwrap()
}

// ---------------------------------------------------------------------
// Corpus checks
// ---------------------------------------------------------------------

/// `cats` categories with `per` products each, interleaved.
pub fn grid_dataset(cats: usize, per: usize) -> Dataset {
    let mut products = Vec::new();
    for i in 0..per {
        for c in 0..cats {
            products.push(product(
                &format!("c{c}-p{i}"),
                &format!("cat{c}"),
                &format!("Item {i} of category {c}"),
                &[("Brand", "Acme")],
            ));
        }
    }
    Dataset::new("grid", products).unwrap()
}

fn ids(ds: &Dataset) -> Vec<String> {
    ds.products().iter().map(|p| p.id.clone()).collect()
}

/// Same seed gives the same split; per category the train side holds
/// `floor(fraction * n)` products; halves are disjoint and cover the input.
pub fn check_split_on(ds: &Dataset, fraction: TrainFraction, seed: u64) -> Result<(Vec<String>, Vec<String>), String> {
    let spec = SplitSpec { train_fraction: fraction, seed };
    let (train, test) = stratified_split(ds, &spec).map_err(|e| e.to_string())?;
    let (train2, test2) = stratified_split(ds, &spec).map_err(|e| e.to_string())?;
    if ids(&train) != ids(&train2) || ids(&test) != ids(&test2) {
        return Err(format!("seed {seed}: repeated split differs"));
    }
    let mut sizes: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for p in ds.products() {
        sizes.entry(p.category.as_str()).or_default().0 += 1;
    }
    for p in train.products() {
        sizes.entry(p.category.as_str()).or_default().1 += 1;
    }
    for (cat, (n, got)) in &sizes {
        if *got != fraction.train_count(*n) {
            return Err(format!("category {cat}: {got} train of {n}, want {}", fraction.train_count(*n)));
        }
    }
    let mut all: Vec<String> = ids(&train).into_iter().chain(ids(&test)).collect();
    all.sort();
    let mut want = ids(ds);
    want.sort();
    if all != want {
        return Err("train and test do not partition the input".into());
    }
    Ok((ids(&train), ids(&test)))
}

/// The split contract on the 2 x 5 and 5 x 2 grids plus uneven sizes.
pub fn check_split() -> Result<String, String> {
    let four_fifths = TrainFraction::new(4, 5).unwrap();
    for (cats, per) in [(2, 5), (5, 2)] {
        let ds = grid_dataset(cats, per);
        let first = check_split_on(&ds, four_fifths, 42)?;
        if first != check_split_on(&ds, four_fifths, 42)? {
            return Err(format!("{cats}x{per}: split not reproducible"));
        }
    }
    let seeds_differ = (0..20).any(|s| {
        check_split_on(&grid_dataset(2, 5), four_fifths, s).ok() != check_split_on(&grid_dataset(2, 5), four_fifths, 42).ok()
    });
    if !seeds_differ {
        return Err("seed has no effect on the split".into());
    }
    for fraction in ["0.8", "0.57", "2/3", "0.5"] {
        let fraction: TrainFraction = fraction.parse().map_err(|e: pavi::corpus::CorpusError| e.to_string())?;
        for per in 2..=12 {
            check_split_on(&grid_dataset(3, per), fraction, per as u64)?;
        }
    }
    if stratified_split(&grid_dataset(3, 1), &SplitSpec::default()).is_ok() {
        return Err("single-product categories should be rejected".into());
    }
    let five = grid_dataset(2, 5);
    let (train, _) = stratified_split(&five, &SplitSpec { train_fraction: four_fifths, seed: 42 }).map_err(|e| e.to_string())?;
    Ok(format!("2x5 train {} test {}", train.len(), five.len() - train.len()))
}

#[derive(Debug, serde::Deserialize, PartialEq)]
pub struct ExpectedStats {
    pub product_count: usize,
    pub pair_count: usize,
    pub category_count: usize,
    pub unique_attribute_count: usize,
    pub unique_value_count: usize,
    #[serde(default)]
    pub dropped: Option<usize>,
}

pub fn expected_stats(name: &str) -> ExpectedStats {
    serde_json::from_str(&fs::read_to_string(fixture(name)).unwrap()).unwrap()
}

pub fn stats_tuple(s: &StatsReport) -> [usize; 5] {
    [s.product_count, s.pair_count, s.category_count, s.unique_attribute_count, s.unique_value_count]
}

pub fn expected_tuple(e: &ExpectedStats) -> [usize; 5] {
    [e.product_count, e.pair_count, e.category_count, e.unique_attribute_count, e.unique_value_count]
}

/// Import both fixture datasets and compare their statistics with the
/// independently computed expectations.
pub fn check_fixture_stats() -> Result<(StatsReport, StatsReport), String> {
    let (ae, report) = import_ae110k(&fixture("ae110k_sample.tsv"), &Ae110kOptions::default()).map_err(|e| e.to_string())?;
    let want = expected_stats("ae110k_sample.expected.json");
    let got = dataset_stats(&ae);
    if stats_tuple(&got) != expected_tuple(&want) {
        return Err(format!("ae110k sample stats {got:?} != {want:?}"));
    }
    if Some(report.issues.len()) != want.dropped {
        return Err(format!("ae110k sample dropped {} != {:?}", report.issues.len(), want.dropped));
    }
    let (oa, _) = import_oamine(&fixture("oamine")).map_err(|e| e.to_string())?;
    let want = expected_stats("oamine.expected.json");
    let got_oa = dataset_stats(&oa);
    if stats_tuple(&got_oa) != expected_tuple(&want) {
        return Err(format!("oa-mine sample stats {got_oa:?} != {want:?}"));
    }
    Ok((got, got_oa))
}

// ---------------------------------------------------------------------
// End-to-end checks
// ---------------------------------------------------------------------

/// Upper bound on gateway calls: one per stage per product.
pub fn call_bound(strategy: &Strategy, products: usize) -> usize {
    let stages = match strategy.mode {
        Mode::OneStep => 1,
        Mode::TwoStep => 2,
    } + usize::from(strategy.context == ContextKind::SelfGenerated);
    stages * products
}

fn run_dir(root: &Path, i: usize) -> PathBuf {
    root.join(format!("run-{i}"))
}

/// Every strategy, run twice with the scripted mock and no cache, writes
/// byte-identical manifests and reports, within the call bound.
pub fn check_determinism(root: &Path) -> Result<String, String> {
    let test = load_fixture("products.jsonl");
    let mut f1s = Vec::new();
    for (i, strategy) in e2e_strategies().into_iter().enumerate() {
        let mut cfg = e2e_config(strategy.clone(), &run_dir(root, i));
        cfg.no_cache = true;
        cfg.concurrency = 1 + i % 4;
        let mock = Arc::new(noisy_mock(&test));
        let (first, files) = run_and_read(&cfg, mock.clone()).map_err(|e| e.to_string())?;
        if mock.call_count() > call_bound(&strategy, test.len()) || mock.call_count() != first.gateway_calls() {
            return Err(format!("{}: {} calls, bound {}", strategy.label(), mock.call_count(), call_bound(&strategy, test.len())));
        }
        let (_, again) = run_and_read(&cfg, Arc::new(noisy_mock(&test))).map_err(|e| e.to_string())?;
        if !files.same_as(&again) {
            return Err(format!("{}: second run differs", strategy.label()));
        }
        if first.failed != 0 {
            return Err(format!("{}: {} products failed", strategy.label(), first.failed));
        }
        f1s.push(first.report.f1);
    }
    Ok(format!("{} strategies, F1 {:.4}..{:.4}", f1s.len(), f1s.iter().cloned().fold(1.0, f64::min), f1s.iter().cloned().fold(0.0, f64::max)))
}

/// A cached run replayed against a strict mock with no rules makes zero
/// backend calls and reproduces every output byte for byte.
pub fn check_cache_contract(root: &Path) -> Result<String, String> {
    let test = load_fixture("products.jsonl");
    let mut total = 0;
    for (i, strategy) in e2e_strategies().into_iter().enumerate() {
        let cfg = e2e_config(strategy.clone(), &run_dir(root, i));
        let mock = Arc::new(noisy_mock(&test));
        let (first, files) = run_and_read(&cfg, mock.clone()).map_err(|e| e.to_string())?;
        let entries = pavi::gateway::ResponseCache::new(cfg.cache_path().unwrap()).len();
        let mut fingerprints: Vec<&str> =
            first.products.iter().flat_map(|p| p.calls.iter().map(|c| c.fingerprint.as_str())).collect();
        fingerprints.sort();
        fingerprints.dedup();
        if entries != fingerprints.len() || mock.call_count() != fingerprints.len() {
            return Err(format!(
                "{}: {} cache entries, {} backend calls, {} distinct requests",
                strategy.label(),
                entries,
                mock.call_count(),
                fingerprints.len()
            ));
        }
        let replay = Arc::new(MockBackend::new());
        let (_, again) = run_and_read(&cfg, replay.clone()).map_err(|e| e.to_string())?;
        if replay.call_count() != 0 {
            return Err(format!("{}: {} backend calls on a warm cache", strategy.label(), replay.call_count()));
        }
        if !files.same_as(&again) {
            return Err(format!("{}: cached rerun differs", strategy.label()));
        }
        total += entries;
    }
    Ok(format!("{total} cached responses replayed with 0 backend calls"))
}
