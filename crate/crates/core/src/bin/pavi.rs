use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use pavi::corpus::{
    dataset_stats, import_ae110k, import_oamine, read_canonical, stratified_split, write_canonical, Ae110kOptions,
    Dataset, SplitSpec, TrainFraction,
};
use pavi::pipeline::{emit_report, load_manifest, run, write_run, ExperimentConfig, PipelineError, ReportFormat};
use pavi::retrieval::{load_embedding_store, Retriever, SelectorKind};

#[derive(Parser)]
#[command(name = "pavi", version, about = "Product attribute-value identification experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Import, split and describe datasets.
    Corpus {
        #[command(subcommand)]
        command: CorpusCommand,
    },
    /// Print the demonstrations each query product would receive.
    Retrieve(RetrieveArgs),
    /// Run an experiment described by a TOML config.
    Run(RunArgs),
    /// Tabulate one or more finished runs.
    Report(ReportArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum SourceFormat {
    Ae110k,
    Oamine,
}

#[derive(Subcommand)]
enum CorpusCommand {
    /// Convert a raw dataset into the canonical JSONL format.
    Import {
        #[arg(long, value_enum)]
        format: SourceFormat,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Where dropped or malformed records are listed.
        #[arg(long)]
        issues: Option<PathBuf>,
        /// Category for AE-110k records without one.
        #[arg(long)]
        default_category: Option<String>,
    },
    /// Per-category stratified train/test split.
    Split {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "4/5")]
        train_fraction: TrainFraction,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        train_out: PathBuf,
        #[arg(long)]
        test_out: PathBuf,
    },
    /// Product, pair, category, attribute and value counts.
    Stats {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        json: bool,
    },
}

#[derive(clap::Args)]
struct RetrieveArgs {
    #[arg(long)]
    train: PathBuf,
    /// Canonical dataset of query products.
    #[arg(long)]
    queries: PathBuf,
    #[arg(long)]
    selector: SelectorKind,
    #[arg(long, default_value_t = 3)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    embeddings: Option<PathBuf>,
}

#[derive(clap::Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    concurrency: Option<usize>,
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    #[arg(long)]
    no_cache: bool,
    /// Write the run here instead of the config's `output_dir`.
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

#[derive(clap::Args)]
struct ReportArgs {
    /// Run directories (or manifest files); one row each, in this order.
    #[arg(long = "run", required = true, num_args = 1..)]
    runs: Vec<PathBuf>,
    #[arg(long, default_value = "md")]
    format: ReportFormat,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn load(path: &Path) -> Result<Dataset> {
    read_canonical(path).with_context(|| format!("reading {}", path.display()))
}

fn corpus(command: CorpusCommand) -> Result<()> {
    match command {
        CorpusCommand::Import {
            format,
            input,
            output,
            issues,
            default_category,
        } => {
            let (dataset, report) = match format {
                SourceFormat::Ae110k => {
                    let mut opts = Ae110kOptions::default();
                    if let Some(c) = default_category {
                        opts.default_category = c;
                    }
                    import_ae110k(&input, &opts)?
                }
                SourceFormat::Oamine => {
                    if default_category.is_some() {
                        bail!("--default-category applies to ae110k only");
                    }
                    import_oamine(&input)?
                }
            };
            write_canonical(&dataset, &output)?;
            if let Some(path) = issues {
                report.write_jsonl(&path)?;
            }
            let stats = dataset_stats(&dataset);
            eprintln!(
                "imported {} products ({} pairs) from {} records; {} issue(s)",
                stats.product_count,
                stats.pair_count,
                report.records_read,
                report.issues.len()
            );
        }
        CorpusCommand::Split {
            input,
            train_fraction,
            seed,
            train_out,
            test_out,
        } => {
            let dataset = load(&input)?;
            let (train, test) = stratified_split(&dataset, &SplitSpec { train_fraction, seed })?;
            write_canonical(&train, &train_out)?;
            write_canonical(&test, &test_out)?;
            eprintln!("train {} / test {}", train.len(), test.len());
        }
        CorpusCommand::Stats { input, json } => {
            let s = dataset_stats(&load(&input)?);
            if json {
                println!("{}", serde_json::to_string_pretty(&s)?);
            } else {
                println!("products\t{}", s.product_count);
                println!("pairs\t{}", s.pair_count);
                println!("categories\t{}", s.category_count);
                println!("attributes\t{}", s.unique_attribute_count);
                println!("values\t{}", s.unique_value_count);
            }
        }
    }
    Ok(())
}

fn retrieve(args: RetrieveArgs) -> Result<()> {
    let train = load(&args.train)?;
    let queries = load(&args.queries)?;
    let retriever = match args.selector {
        SelectorKind::Random => Retriever::random(&train, args.seed),
        SelectorKind::Tfidf => Retriever::tfidf(&train)?,
        SelectorKind::Dense => {
            let path = args.embeddings.context("--embeddings is required for the dense selector")?;
            Retriever::dense(&train, load_embedding_store(&path)?)?
        }
    };
    let stdout = io::stdout();
    let mut out = stdout.lock();
    for q in queries.products() {
        let demos = retriever.select(q, args.k)?;
        let hits: Vec<_> = demos
            .iter()
            .map(|d| serde_json::json!({"product_id": d.product_id, "score": d.score}))
            .collect();
        writeln!(out, "{}", serde_json::json!({"query_id": q.id, "hits": hits}))?;
    }
    Ok(())
}

fn run_experiment(args: RunArgs) -> Result<()> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(endpoint) = args.endpoint {
        cfg.generation.endpoint_url = endpoint;
    }
    if let Some(model) = args.model {
        cfg.generation.model = model;
    }
    if let Some(n) = args.concurrency {
        cfg.concurrency = n;
    }
    let cwd = std::env::current_dir()?;
    if let Some(dir) = args.cache_dir {
        cfg.cache_dir = Some(cwd.join(dir));
    }
    if let Some(dir) = args.output_dir {
        cfg.output_dir = cwd.join(dir);
    }
    cfg.no_cache |= args.no_cache;
    cfg.validate()?;
    let gateway = cfg.build_gateway()?;
    let manifest = run(&cfg, &gateway)?;
    let dir = cfg.output_path();
    write_run(&manifest, &dir)?;
    eprintln!(
        "{}: P {:.2} R {:.2} F1 {:.2} over {} products ({} failed); wrote {}",
        manifest.config.strategy.label(),
        manifest.report.precision * 100.0,
        manifest.report.recall * 100.0,
        manifest.report.f1 * 100.0,
        manifest.test_size,
        manifest.failed,
        dir.display()
    );
    Ok(())
}

fn report(args: ReportArgs) -> Result<()> {
    let runs = args
        .runs
        .iter()
        .map(|p| load_manifest(p))
        .collect::<Result<Vec<_>, _>>()?;
    let text = emit_report(&runs, args.format);
    match args.out {
        Some(path) => fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?,
        None => print!("{text}"),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Corpus { command } => corpus(command),
        Command::Retrieve(args) => retrieve(args),
        Command::Run(args) => run_experiment(args),
        Command::Report(args) => report(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if matches!(e.downcast_ref::<PipelineError>(), Some(PipelineError::Aborted { .. })) {
                ExitCode::from(3)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
