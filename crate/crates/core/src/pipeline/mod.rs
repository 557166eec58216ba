//! Experiment orchestration: context assembly, prompting, completion,
//! parsing and scoring for every test product, collected into a run
//! manifest.
//!
//! Manifests carry no timestamps, latencies or cache flags, so a rerun over
//! a warm cache serialises to the same bytes.

mod config;
mod report;

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;

use serde::{Deserialize, Serialize};

use crate::corpus::{read_canonical, CorpusError, Dataset, PairSet, Product};
use crate::evaluation::{aggregate, score_product, EvaluationReport, ProductScore};
use crate::gateway::Gateway;
use crate::parsing::{parse_attributes, parse_pairs, parse_titles, ParseMode};
use crate::prompting::{ContextKind, Mode, PromptBundle, PromptError, Prompter, Stage, TemplateSet};
use crate::retrieval::{load_embedding_store, Demonstration, RetrievalError, Retriever, SelectorKind};

pub use config::{BackendConfig, BackendKind, ExperimentConfig, RetrievalSettings};
pub use report::{emit_report, write_report, ReportFormat};

/// Share of failed products above which a run is aborted.
pub const FAILURE_BUDGET_PERCENT: usize = 10;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("invalid experiment config: {0}")]
    Config(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("test set is empty")]
    EmptyTestSet,
    #[error("run aborted: {failed} of {total} products failed (budget {FAILURE_BUDGET_PERCENT}%); first failure: {first_error}")]
    Aborted {
        failed: usize,
        total: usize,
        first_error: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Manifest { path: PathBuf, message: String },
}

impl PipelineError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        PipelineError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProductStatus {
    Ok,
    Failed,
}

/// One gateway call made for a product.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallRef {
    pub stage: Stage,
    pub fingerprint: String,
    pub response: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductRecord {
    pub product_id: String,
    pub category: String,
    pub status: ProductStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Ids of the context entries shown in the first prompt.
    pub context_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub generated_titles: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attributes: Option<Vec<String>>,
    pub calls: Vec<CallRef>,
    pub predicted: PairSet,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parse_mode: Option<ParseMode>,
    pub warnings: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<ProductScore>,
}

impl ProductRecord {
    fn new(product: &Product) -> Self {
        ProductRecord {
            product_id: product.id.clone(),
            category: product.category.clone(),
            status: ProductStatus::Ok,
            error: None,
            context_ids: Vec::new(),
            generated_titles: Vec::new(),
            attributes: None,
            calls: Vec::new(),
            predicted: PairSet::new(),
            parse_mode: None,
            warnings: Vec::new(),
            score: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub name: String,
    pub config: ExperimentConfig,
    pub template_version: String,
    pub template_digest: String,
    pub test_size: usize,
    pub failed: usize,
    pub products: Vec<ProductRecord>,
    pub report: EvaluationReport,
}

impl RunManifest {
    pub fn model(&self) -> &str {
        &self.config.generation.model
    }

    pub fn gateway_calls(&self) -> usize {
        self.products.iter().map(|p| p.calls.len()).sum()
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serialises");
        s.push('\n');
        s
    }
}

/// Load `manifest.json` from a run directory (or the file itself).
pub fn load_manifest(path: &Path) -> Result<RunManifest, PipelineError> {
    let file = if path.is_dir() { path.join("manifest.json") } else { path.to_path_buf() };
    let text = fs::read_to_string(&file).map_err(|e| PipelineError::io(&file, e))?;
    serde_json::from_str(&text).map_err(|e| PipelineError::Manifest {
        path: file,
        message: e.to_string(),
    })
}

/// Write `manifest.json` and `report.{json,csv,md}` into `dir`.
pub fn write_run(manifest: &RunManifest, dir: &Path) -> Result<(), PipelineError> {
    fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
    let path = dir.join("manifest.json");
    fs::write(&path, manifest.to_json()).map_err(|e| PipelineError::io(&path, e))?;
    let runs = std::slice::from_ref(manifest);
    for format in [ReportFormat::Json, ReportFormat::Csv, ReportFormat::Markdown] {
        write_report(runs, format, &dir.join(format!("report.{}", format.extension())))?;
    }
    Ok(())
}

struct Experiment<'a> {
    cfg: &'a ExperimentConfig,
    gateway: &'a Gateway,
    prompter: Prompter,
    retriever: Option<Retriever<'a>>,
}

type Failure = String;

impl Experiment<'_> {
    fn call(&self, bundle: &PromptBundle, record: &mut ProductRecord) -> Result<String, Failure> {
        let done = self
            .gateway
            .complete(bundle, &self.cfg.generation)
            .map_err(|e| format!("{} stage: {e}", bundle.stage.as_str()))?;
        record.calls.push(CallRef {
            stage: bundle.stage,
            fingerprint: done.request_fingerprint,
            response: done.text.clone(),
        });
        Ok(done.text)
    }

    fn retrieve(&self, product: &Product) -> Result<Vec<Demonstration>, Failure> {
        let retriever = self.retriever.as_ref().expect("retriever built for retrieved context");
        retriever
            .select(product, self.cfg.strategy.k)
            .map_err(|e| format!("retrieval: {e}"))
    }

    fn context(&self, product: &Product, record: &mut ProductRecord) -> Result<Vec<Demonstration>, Failure> {
        let strategy = &self.cfg.strategy;
        Ok(match strategy.context {
            ContextKind::None => Vec::new(),
            ContextKind::SelfGenerated => {
                let n = strategy.self_gen_count;
                let bundle = self
                    .prompter
                    .render_self_generation(&product.id, &product.title, n)
                    .map_err(|e| e.to_string())?;
                let raw = self.call(&bundle, record)?;
                let parsed = parse_titles(&raw, n);
                record.warnings.extend(parsed.warnings);
                record.generated_titles = parsed.titles.clone();
                parsed
                    .titles
                    .into_iter()
                    .enumerate()
                    .map(|(i, t)| Demonstration::title_only(format!("generated-{}", i + 1), t))
                    .collect()
            }
            ContextKind::Titles => self
                .retrieve(product)?
                .into_iter()
                .map(Demonstration::without_labels)
                .collect(),
            ContextKind::Demonstrations => self.retrieve(product)?,
        })
    }

    fn predict(&self, product: &Product, record: &mut ProductRecord) -> Result<(), Failure> {
        let context = self.context(product, record)?;
        let raw = match self.cfg.strategy.mode {
            Mode::OneStep => {
                let bundle = self.prompter.render_one_step(&product.id, &product.title, &context);
                record.context_ids = bundle.demo_ids.clone();
                self.call(&bundle, record)?
            }
            Mode::TwoStep => {
                let stage1 = self
                    .prompter
                    .render_two_step_stage1(&product.id, &product.title, &context);
                record.context_ids = stage1.demo_ids.clone();
                let attributes = parse_attributes(&self.call(&stage1, record)?);
                record.attributes = Some(attributes.clone());
                if attributes.is_empty() {
                    record.warnings.push("stage 1 identified no attributes".into());
                    return Ok(());
                }
                let stage2_context: &[Demonstration] = if self.cfg.strategy.stage2_demonstrations {
                    &context
                } else {
                    &[]
                };
                let stage2 = self
                    .prompter
                    .render_two_step_stage2(&product.id, &product.title, &attributes, stage2_context)
                    .map_err(|e| e.to_string())?;
                self.call(&stage2, record)?
            }
        };
        let parsed = parse_pairs(&raw);
        record.predicted = parsed.pairs;
        record.parse_mode = Some(parsed.parse_mode);
        record.warnings.extend(parsed.warnings);
        Ok(())
    }

    fn process(&self, product: &Product) -> ProductRecord {
        let mut record = ProductRecord::new(product);
        match self.predict(product, &mut record) {
            Ok(()) => {
                record.score = Some(score_product(
                    &product.id,
                    &product.category,
                    &record.predicted,
                    &product.pairs,
                    self.cfg.match_mode,
                ));
            }
            Err(message) => {
                log::warn!("product {} failed: {message}", product.id);
                record.status = ProductStatus::Failed;
                record.error = Some(message);
            }
        }
        record
    }
}

fn build_retriever<'a>(cfg: &ExperimentConfig, train: Option<&'a Dataset>, test: &Dataset) -> Result<Option<Retriever<'a>>, PipelineError> {
    if !matches!(cfg.strategy.context, ContextKind::Titles | ContextKind::Demonstrations) {
        return Ok(None);
    }
    let train = train.ok_or_else(|| PipelineError::Config("retrieved context needs a training set".into()))?;
    let selector = cfg
        .strategy
        .selector
        .ok_or_else(|| PipelineError::Config("retrieved context needs a selector".into()))?;
    Ok(Some(match selector {
        SelectorKind::Random => Retriever::random(train, cfg.retrieval.seed),
        SelectorKind::Tfidf => Retriever::tfidf(train)?,
        SelectorKind::Dense => {
            let path = cfg
                .retrieval
                .embeddings
                .as_ref()
                .ok_or_else(|| PipelineError::Config("dense selector needs embeddings".into()))?;
            let store = load_embedding_store(&cfg.resolve(path))?;
            if let Err(missing) = store.restrict_to(test.products().iter().map(|p| p.id.as_str())) {
                return Err(RetrievalError::MissingEmbeddings(missing).into());
            }
            Retriever::dense(train, store)?
        }
    }))
}

/// Run an experiment in whichever mode its strategy names.
pub fn run(cfg: &ExperimentConfig, gateway: &Gateway) -> Result<RunManifest, PipelineError> {
    cfg.validate()?;
    let test = read_canonical(&cfg.resolve(&cfg.test))?;
    let train = match &cfg.train {
        Some(path) => Some(read_canonical(&cfg.resolve(path))?),
        None => None,
    };
    let templates = match &cfg.templates {
        Some(dir) => TemplateSet::load(&cfg.resolve(dir))?,
        None => TemplateSet::builtin(),
    };
    run_datasets(cfg, gateway, &test, train.as_ref(), templates)
}

/// Direct extraction: at most one call per product, plus one when context
/// is self-generated.
pub fn run_one_step(cfg: &ExperimentConfig, gateway: &Gateway) -> Result<RunManifest, PipelineError> {
    if cfg.strategy.mode != Mode::OneStep {
        return Err(PipelineError::Config("strategy mode is not one_step".into()));
    }
    run(cfg, gateway)
}

/// Attribute identification then value extraction: at most two calls per
/// product, plus one when context is self-generated.
pub fn run_two_step(cfg: &ExperimentConfig, gateway: &Gateway) -> Result<RunManifest, PipelineError> {
    if cfg.strategy.mode != Mode::TwoStep {
        return Err(PipelineError::Config("strategy mode is not two_step".into()));
    }
    run(cfg, gateway)
}

/// Run over already loaded datasets.
pub fn run_datasets(
    cfg: &ExperimentConfig,
    gateway: &Gateway,
    test: &Dataset,
    train: Option<&Dataset>,
    templates: TemplateSet,
) -> Result<RunManifest, PipelineError> {
    cfg.validate()?;
    if test.is_empty() {
        return Err(PipelineError::EmptyTestSet);
    }
    let template_version = templates.version().to_string();
    let template_digest = templates.digest();
    let experiment = Experiment {
        cfg,
        gateway,
        prompter: Prompter::new(templates, cfg.output_grammar, cfg.strategy.clone()),
        retriever: build_retriever(cfg, train, test)?,
    };

    let products = test.products();
    let total = products.len();
    let slots: Mutex<Vec<Option<ProductRecord>>> = Mutex::new(vec![None; total]);
    let next = AtomicUsize::new(0);
    let failed = AtomicUsize::new(0);
    let abort = AtomicBool::new(false);
    let workers = cfg.concurrency.clamp(1, total);
    let done = AtomicUsize::new(0);
    let step = (total / 10).max(1);
    log::info!("{}: {total} products, {workers} workers", cfg.strategy.label());
    thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                if abort.load(Ordering::SeqCst) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= total {
                    break;
                }
                let record = experiment.process(&products[i]);
                if record.status == ProductStatus::Failed {
                    let n = failed.fetch_add(1, Ordering::SeqCst) + 1;
                    if n * 100 > total * FAILURE_BUDGET_PERCENT {
                        abort.store(true, Ordering::SeqCst);
                    }
                }
                slots.lock().unwrap_or_else(|e| e.into_inner())[i] = Some(record);
                let n = done.fetch_add(1, Ordering::SeqCst) + 1;
                if n % step == 0 || n == total {
                    log::info!("{n}/{total} products done");
                }
            });
        }
    });

    let records = slots.into_inner().unwrap_or_else(|e| e.into_inner());
    let failed = failed.into_inner();
    if abort.into_inner() {
        let first_error = records
            .iter()
            .flatten()
            .find_map(|r| r.error.clone())
            .unwrap_or_default();
        return Err(PipelineError::Aborted {
            failed,
            total,
            first_error,
        });
    }
    let products: Vec<ProductRecord> = records.into_iter().map(|r| r.expect("every product processed")).collect();
    let scores: Vec<ProductScore> = products.iter().filter_map(|r| r.score.clone()).collect();
    let report = aggregate(&scores)
        .with_strategy(cfg.strategy.clone())
        .with_template_version(template_version.clone());
    Ok(RunManifest {
        name: cfg.name.clone().unwrap_or_else(|| test.name().to_string()),
        config: cfg.clone(),
        template_version,
        template_digest,
        test_size: total,
        failed,
        products,
        report,
    })
}
