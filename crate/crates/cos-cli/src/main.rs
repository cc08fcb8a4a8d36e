//! `cos`: corpus import, chain runs, sweeps, reward export, reporting and
//! the summary cache.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use cos_core::corpus::{
    assign_splits, filter_min_test_questions, load_corpus, load_squad, load_triviaqa,
    load_truthfulqa, save_corpus_atomic, Corpus, LoadReport, Split, SplitFractions,
};
use cos_core::dialectic::QuestionSource;
use cos_core::harness::{
    build_context, export_reward_dataset, report_tokens_vs_f1, run_experiment, run_sweep, Baseline,
    ExperimentConfig, MetricReport, ReportMetric, SweepGrid,
};
use cos_core::metrics::TokenCountScheme;
use cos_core::prompts::PromptLibrary;
use cos_core::store::{answer_from_cache, emit_llms_txt, Store};
use cos_core::DocumentId;

#[derive(Parser)]
#[command(
    name = "cos",
    about = "Question-guided iterative summarization: build, evaluate and serve summary caches",
    version
)]
struct Cli {
    /// Log progress events (equivalent to RUST_LOG=info).
    #[arg(long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
#[allow(clippy::large_enum_variant)]
enum Command {
    /// Dataset import and split assignment.
    Corpus {
        #[command(subcommand)]
        command: CorpusCommand,
    },
    /// Run one experiment from a config file.
    Run(RunArgs),
    /// Run a hyperparameter grid.
    Sweep(SweepArgs),
    /// Export (summary, score) pairs from saved traces.
    ExportReward(ExportRewardArgs),
    /// Combine reports into a score-versus-tokens table.
    Report(ReportArgs),
    /// Ask and emit from the summary cache.
    Cache {
        #[command(subcommand)]
        command: CacheCommand,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum DatasetFormat {
    Squad,
    Triviaqa,
    Truthfulqa,
}

#[derive(Subcommand)]
enum CorpusCommand {
    /// Convert an upstream dataset into the internal corpus format.
    Import(ImportArgs),
}

#[derive(Args)]
struct ImportArgs {
    #[arg(long, value_enum)]
    format: DatasetFormat,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long = "out")]
    output: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Refine,validation,test fractions.
    #[arg(long, default_value = "0.4,0.2,0.4")]
    splits: String,
    /// Drop documents with fewer test questions than this.
    #[arg(long, default_value_t = 3)]
    min_test_questions: usize,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Write both gateway audit logs (chain and held-out) to this file.
    #[arg(long)]
    audit_out: Option<PathBuf>,
    #[command(flatten)]
    overrides: ConfigOverrides,
}

/// Flag-level overrides for every experiment config field.
#[derive(Args, Default)]
struct ConfigOverrides {
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    output_root: Option<PathBuf>,
    #[arg(long)]
    runs: Option<u32>,
    /// Comma-separated subset of zero_shot,full_content.
    #[arg(long)]
    baselines: Option<String>,
    #[arg(long)]
    metric: Option<String>,
    #[arg(long)]
    template_dir: Option<PathBuf>,
    #[arg(long)]
    endpoint_url: Option<String>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    api_key: Option<String>,
    #[arg(long)]
    timeout_s: Option<f64>,
    #[arg(long)]
    max_retries: Option<u32>,
    #[arg(long)]
    max_parallel_requests: Option<usize>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    generation_temperature: Option<f64>,
    #[arg(long)]
    backoff_base_ms: Option<u64>,
    #[arg(long)]
    backoff_cap_ms: Option<u64>,
    #[arg(long)]
    iterations: Option<u32>,
    #[arg(long)]
    iq: Option<usize>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    question_source: Option<String>,
    #[arg(long)]
    synthetic_pool_size: Option<u32>,
    #[arg(long)]
    cod: Option<String>,
    #[arg(long)]
    early_stop: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
    /// Grid axes as key=value lists, e.g. --grid i=1,5,10 iq=50,10,1 cod=on,off
    #[arg(long, num_args = 1..)]
    grid: Vec<String>,
}

#[derive(Args)]
struct ExportRewardArgs {
    /// Directory holding trace files (a store's traces/ directory).
    #[arg(long)]
    traces: PathBuf,
    #[arg(long, default_value_t = 8192)]
    cap: u64,
    #[arg(long, default_value = "whitespace")]
    scheme: String,
    #[arg(long = "out")]
    output: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// Directory holding report-*.jsonl files.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long = "out")]
    output: PathBuf,
}

#[derive(Subcommand)]
enum CacheCommand {
    /// Answer a question from a document's cached summary; misses refine.
    Ask(CacheAskArgs),
    /// Emit the llms.txt summary cache file.
    Emit(CacheEmitArgs),
}

#[derive(Args)]
struct CacheAskArgs {
    #[arg(long)]
    question: String,
    #[arg(long)]
    doc: String,
    /// Store root (an experiment's output_root).
    #[arg(long)]
    root: PathBuf,
    /// Experiment config supplying the provider and templates.
    #[arg(long)]
    config: PathBuf,
    /// Corpus file for source-document lookup; misses become unrefinable
    /// without it.
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    tau: f64,
}

#[derive(Args)]
struct CacheEmitArgs {
    #[arg(long)]
    root: PathBuf,
    #[arg(long = "out")]
    output: PathBuf,
    /// Corpus file supplying section titles; document ids are used without it.
    #[arg(long)]
    corpus: Option<PathBuf>,
}

fn parse_fractions(raw: &str) -> Result<SplitFractions> {
    let parts: Vec<f64> = raw
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .with_context(|| format!("cannot parse split fractions from {raw:?}"))?;
    if parts.len() != 3 {
        bail!("--splits needs three comma-separated fractions, got {raw:?}");
    }
    Ok(SplitFractions::new(parts[0], parts[1], parts[2])?)
}

fn parse_bool_flag(raw: &str, flag: &str) -> Result<bool> {
    match raw.to_ascii_lowercase().as_str() {
        "on" | "true" | "1" | "yes" => Ok(true),
        "off" | "false" | "0" | "no" => Ok(false),
        other => bail!("--{flag} expects on/off, got {other:?}"),
    }
}

fn parse_metric(raw: &str) -> Result<ReportMetric> {
    match raw.to_ascii_lowercase().as_str() {
        "token_f1" | "f1" => Ok(ReportMetric::TokenF1),
        "rouge_l" | "rouge" => Ok(ReportMetric::RougeL),
        other => bail!("unknown metric {other:?} (expected token_f1 or rouge_l)"),
    }
}

fn parse_question_source(raw: &str) -> Result<QuestionSource> {
    match raw.to_ascii_lowercase().as_str() {
        "synthetic" => Ok(QuestionSource::Synthetic),
        "human" => Ok(QuestionSource::Human),
        "mixed" => Ok(QuestionSource::Mixed),
        other => bail!("unknown question source {other:?}"),
    }
}

fn parse_baselines(raw: &str) -> Result<Vec<Baseline>> {
    raw.split(',')
        .map(|p| match p.trim() {
            "zero_shot" => Ok(Baseline::ZeroShot),
            "full_content" => Ok(Baseline::FullContent),
            other => bail!("unknown baseline {other:?}"),
        })
        .collect()
}

impl ConfigOverrides {
    fn apply(&self, config: &mut ExperimentConfig) -> Result<()> {
        if let Some(v) = &self.corpus {
            config.corpus = v.clone();
        }
        if let Some(v) = &self.output_root {
            config.output_root = v.clone();
        }
        if let Some(v) = self.runs {
            config.runs = v;
        }
        if let Some(v) = &self.baselines {
            config.baselines = parse_baselines(v)?;
        }
        if let Some(v) = &self.metric {
            config.metric = Some(parse_metric(v)?);
        }
        if let Some(v) = &self.template_dir {
            config.template_dir = Some(v.clone());
        }
        if let Some(v) = &self.endpoint_url {
            config.provider.endpoint_url = v.clone();
        }
        if let Some(v) = &self.model {
            config.provider.model = v.clone();
        }
        if let Some(v) = &self.api_key {
            config.provider.api_key = Some(v.clone());
        }
        if let Some(v) = self.timeout_s {
            config.provider.timeout_s = v;
        }
        if let Some(v) = self.max_retries {
            config.provider.max_retries = v;
        }
        if let Some(v) = self.max_parallel_requests {
            config.provider.max_parallel_requests = v;
        }
        if let Some(v) = self.temperature {
            config.provider.temperature = v;
        }
        if let Some(v) = self.generation_temperature {
            config.provider.generation_temperature = v;
        }
        if let Some(v) = self.backoff_base_ms {
            config.provider.backoff_base_ms = v;
        }
        if let Some(v) = self.backoff_cap_ms {
            config.provider.backoff_cap_ms = v;
        }
        if let Some(v) = self.iterations {
            config.chain.iterations_i = v;
        }
        if let Some(v) = self.iq {
            config.chain.questions_per_iteration_iq = v;
        }
        if let Some(v) = self.tau {
            config.chain.unanswered_threshold_tau = v;
        }
        if let Some(v) = &self.question_source {
            config.chain.question_source = parse_question_source(v)?;
        }
        if let Some(v) = self.synthetic_pool_size {
            config.chain.synthetic_pool_size = v;
        }
        if let Some(v) = &self.cod {
            config.chain.cod_enabled = parse_bool_flag(v, "cod")?;
        }
        if let Some(v) = &self.early_stop {
            config.chain.early_stop = parse_bool_flag(v, "early-stop")?;
        }
        if let Some(v) = self.seed {
            config.chain.seed = v;
        }
        Ok(())
    }
}

fn print_load_report(stage: &str, report: &LoadReport) {
    if !report.skipped.is_empty() {
        println!("{stage}: skipped {} record(s)", report.skipped.len());
        for line in &report.skipped {
            println!("  - {line}");
        }
    }
    if !report.removed_documents.is_empty() {
        println!(
            "{stage}: removed {} document(s), {} question(s)",
            report.removed_documents.len(),
            report.removed_questions
        );
    }
}

fn corpus_import(args: &ImportArgs) -> Result<()> {
    let (corpus, load_report) = match args.format {
        DatasetFormat::Squad => load_squad(&args.input)?,
        DatasetFormat::Triviaqa => load_triviaqa(&args.input)?,
        DatasetFormat::Truthfulqa => load_truthfulqa(&args.input)?,
    };
    print_load_report("load", &load_report);

    let fractions = parse_fractions(&args.splits)?;
    let (corpus, split_report) = assign_splits(&corpus, fractions, args.seed)?;
    print_load_report("splits", &split_report);

    let (corpus, filter_report) = filter_min_test_questions(&corpus, args.min_test_questions)?;
    print_load_report("filter", &filter_report);

    save_corpus_atomic(&corpus, &args.output)?;
    let test_questions = corpus
        .questions
        .iter()
        .filter(|q| q.split == Some(Split::Test))
        .count();
    println!(
        "imported {} document(s), {} question(s) ({} test) -> {}",
        corpus.documents.len(),
        corpus.questions.len(),
        test_questions,
        args.output.display()
    );
    Ok(())
}

fn write_audit(
    path: &Path,
    chain: &cos_core::gateway::Gateway,
    heldout: &cos_core::gateway::Gateway,
) -> Result<()> {
    use std::io::Write;
    let mut file = std::fs::File::create(path)
        .with_context(|| format!("cannot create audit file {}", path.display()))?;
    for (scope, gateway) in [("chain", chain), ("heldout", heldout)] {
        for entry in gateway.audit_log() {
            let mut value = serde_json::to_value(&entry)?;
            value["scope"] = serde_json::Value::String(scope.to_string());
            writeln!(file, "{value}")?;
        }
    }
    Ok(())
}

async fn run(args: &RunArgs) -> Result<()> {
    let (mut config, base_dir) = ExperimentConfig::load(&args.config)?;
    args.overrides.apply(&mut config)?;
    let ctx = build_context(&config, &base_dir)?;
    let report = run_experiment(&config, &ctx).await?;
    print!("{}", report.table());
    println!(
        "report: {}",
        ctx.output_root
            .join("reports")
            .join(MetricReport::report_file_name(&report.config_fingerprint))
            .display()
    );
    if let Some(audit_out) = &args.audit_out {
        write_audit(audit_out, &ctx.chain_gateway, &ctx.heldout_gateway)?;
        println!("audit log: {}", audit_out.display());
    }
    Ok(())
}

fn parse_grid(tokens: &[String]) -> Result<SweepGrid> {
    let mut i_values: Vec<u32> = Vec::new();
    let mut iq_values: Vec<usize> = Vec::new();
    let mut cod_values: Vec<bool> = Vec::new();
    for token in tokens {
        let (key, values) = token
            .split_once('=')
            .with_context(|| format!("grid token {token:?} is not key=value"))?;
        match key.trim() {
            "i" => {
                i_values = values
                    .split(',')
                    .map(|v| v.trim().parse::<u32>())
                    .collect::<Result<_, _>>()
                    .with_context(|| format!("bad i list in {token:?}"))?;
            }
            "iq" => {
                iq_values = values
                    .split(',')
                    .map(|v| v.trim().parse::<usize>())
                    .collect::<Result<_, _>>()
                    .with_context(|| format!("bad iq list in {token:?}"))?;
            }
            "cod" => {
                cod_values = values
                    .split(',')
                    .map(|v| parse_bool_flag(v.trim(), "grid cod"))
                    .collect::<Result<_>>()?;
            }
            other => bail!("unknown grid axis {other:?} (expected i, iq, cod)"),
        }
    }
    Ok(SweepGrid::zip(&i_values, &iq_values, &cod_values)?)
}

async fn sweep(args: &SweepArgs) -> Result<()> {
    let (config, base_dir) = ExperimentConfig::load(&args.config)?;
    let grid = parse_grid(&args.grid)?;
    let outcome = run_sweep(&config, &base_dir, &grid).await?;
    println!(
        "sweep complete: {} report(s), {} resumed, {} failed",
        outcome.reports.len(),
        outcome.resumed_cells,
        outcome.failed_cells.len()
    );
    for (cell, error) in &outcome.failed_cells {
        println!("  failed {cell}: {error}");
    }
    println!("summary: {}", outcome.summary_path.display());
    Ok(())
}

fn export_reward(args: &ExportRewardArgs) -> Result<()> {
    let scheme = match args.scheme.as_str() {
        "whitespace" => TokenCountScheme::Whitespace,
        other => bail!("unsupported token scheme {other:?} (the CLI exposes whitespace)"),
    };
    let stats = export_reward_dataset(&args.traces, args.cap, &scheme, &args.output)?;
    println!(
        "exported {} entr(ies) -> {} (dropped: {} duplicate, {} over cap, {} malformed)",
        stats.count,
        args.output.display(),
        stats.dropped_duplicates,
        stats.dropped_over_cap,
        stats.dropped_malformed
    );
    println!(
        "length tokens: mean {:.2}, median {:.1}, min {}, max {}",
        stats.mean_length_tokens,
        stats.median_length_tokens,
        stats.min_length_tokens,
        stats.max_length_tokens
    );
    println!(
        "f1: mean {:.3}, median {:.3}, std {:.3}",
        stats.f1_mean, stats.f1_median, stats.f1_std
    );
    Ok(())
}

fn report(args: &ReportArgs) -> Result<()> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(&args.input)
        .with_context(|| format!("cannot read {}", args.input.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .map(|n| n.to_string_lossy().starts_with("report-"))
                .unwrap_or(false)
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        bail!("no report-*.jsonl files under {}", args.input.display());
    }
    let reports: Vec<MetricReport> = paths
        .iter()
        .map(|p| MetricReport::load(p))
        .collect::<Result<_, _>>()?;
    let table = report_tokens_vs_f1(&reports, &args.output)?;
    print!("{table}");
    println!("written: {}", args.output.display());
    Ok(())
}

async fn cache_ask(args: &CacheAskArgs) -> Result<()> {
    let (config, base_dir) = ExperimentConfig::load(&args.config)?;
    let ctx = build_context(&config, &base_dir)?;
    let store = Store::open(&args.root)?;
    let document_id = DocumentId::new(args.doc.clone());
    let record = store
        .latest_summary(&document_id)?
        .with_context(|| format!("no cached summary for document {document_id}"))?;

    let corpus: Option<Corpus> = match &args.corpus {
        Some(path) => Some(load_corpus(path)?),
        None => None,
    };
    let source = corpus.as_ref().and_then(|c| c.document(&document_id));
    let library = PromptLibrary::builtin();

    let event = answer_from_cache(
        &args.question,
        &record,
        source,
        None,
        args.tau,
        &ctx.heldout_gateway,
        &library,
        &store,
    )
    .await?;
    println!("outcome: {:?}", event.outcome);
    println!("answer: {}", event.answer);
    if let Some(version) = event.new_version {
        println!("summary refined to version {version}");
    }
    Ok(())
}

fn cache_emit(args: &CacheEmitArgs) -> Result<()> {
    let store = Store::open(&args.root)?;
    let records = store.latest_summaries()?;
    let titles: Vec<(DocumentId, String)> = match &args.corpus {
        Some(path) => load_corpus(path)?
            .documents
            .iter()
            .map(|d| (d.id.clone(), d.title.clone()))
            .collect(),
        None => Vec::new(),
    };
    emit_llms_txt(&records, &titles, &args.output)?;
    println!(
        "emitted {} summar(ies) -> {}",
        records.len(),
        args.output.display()
    );
    Ok(())
}

#[tokio::main]
async fn main() -> Result<()> {
    let cli = Cli::parse();
    let default_level = if cli.verbose { "info" } else { "warn" };
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(default_level)),
        )
        .with_writer(std::io::stderr)
        .init();

    match &cli.command {
        Command::Corpus {
            command: CorpusCommand::Import(args),
        } => corpus_import(args),
        Command::Run(args) => run(args).await,
        Command::Sweep(args) => sweep(args).await,
        Command::ExportReward(args) => export_reward(args),
        Command::Report(args) => report(args),
        Command::Cache { command } => match command {
            CacheCommand::Ask(args) => cache_ask(args).await,
            CacheCommand::Emit(args) => cache_emit(args),
        },
    }
}
