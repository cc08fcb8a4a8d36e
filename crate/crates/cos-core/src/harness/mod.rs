//! Experiment orchestration: baselines, memorization/generalization
//! reports, hyperparameter sweeps and the reward-dataset export.
//!
//! One experiment runs the refinement chain per document, scores the best
//! synthesis against the zero-shot and full-source-content baselines, and
//! writes a line-delimited report plus a human-readable table. Chain-building
//! traffic and held-out test scoring go through separate gateway audit logs
//! so the chain log can be checked for test-question leakage.

mod reward;
mod sweep;

pub use reward::{export_reward_dataset, read_reward_dataset, RewardDatasetEntry, RewardStats};
pub use sweep::{run_sweep, SweepGrid, SweepOutcome};

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{load_corpus, Corpus, CorpusError, Document, QAPair, Source, Split};
use crate::dialectic::{
    self, ChainConfig, ChainTrace, DialecticError, EvalOutcome, QuestionSource,
};
use crate::gateway::{Gateway, GatewayError, ProviderConfig};
use crate::ids::{DocumentId, QuestionId};
use crate::metrics::{
    count_tokens, rouge_l_vs_aliases, MetricsError, QuestionScore, TokenCountScheme,
};
use crate::prompts::{PromptError, PromptLibrary};
use crate::ser::{f6, f6_opt, round6};
use crate::store::{Store, StoreError, SummaryRecord};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("io error on {path}: {detail}")]
    Io { path: String, detail: String },
    #[error("no trace files under {0}")]
    NoTraces(String),
    #[error("serialization failure: {0}")]
    Serde(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("chain failure: {0}")]
    Dialectic(String),
}

fn io_err(path: &Path, e: std::io::Error) -> HarnessError {
    HarnessError::Io {
        path: path.display().to_string(),
        detail: e.to_string(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    ZeroShot,
    FullContent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    ChainOfSummaries,
    ZeroShot,
    FullContent,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Method::ChainOfSummaries => f.write_str("chain_of_summaries"),
            Method::ZeroShot => f.write_str("zero_shot"),
            Method::FullContent => f.write_str("full_content"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportMetric {
    TokenF1,
    RougeL,
}

impl ReportMetric {
    /// Dataset-level presentation scale (Table-style magnitudes).
    pub fn scale(self) -> f64 {
        match self {
            ReportMetric::TokenF1 => 1.0,
            ReportMetric::RougeL => 100.0,
        }
    }
}

fn default_runs() -> u32 {
    1
}

fn default_baselines() -> Vec<Baseline> {
    vec![Baseline::ZeroShot, Baseline::FullContent]
}

/// Declarative experiment description, loaded from a TOML file. Relative
/// paths resolve against the config file's directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub corpus: PathBuf,
    pub output_root: PathBuf,
    #[serde(default = "default_runs")]
    pub runs: u32,
    #[serde(default = "default_baselines")]
    pub baselines: Vec<Baseline>,
    #[serde(default)]
    pub metric: Option<ReportMetric>,
    #[serde(default)]
    pub template_dir: Option<PathBuf>,
    pub provider: ProviderConfig,
    #[serde(default)]
    pub chain: ChainConfig,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<(Self, PathBuf), HarnessError> {
        let raw = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        let config: ExperimentConfig =
            toml::from_str(&raw).map_err(|e| HarnessError::Config(e.to_string()))?;
        config.validate()?;
        let base_dir = path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        Ok((config, base_dir))
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.runs < 1 {
            return Err(HarnessError::Config("runs must be >= 1".into()));
        }
        self.provider
            .validate()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        self.chain
            .validate()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        Ok(())
    }

    fn resolve(base_dir: &Path, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            base_dir.join(path)
        }
    }
}

/// Everything an experiment needs at runtime.
pub struct ExperimentContext {
    pub corpus: Corpus,
    pub corpus_file: String,
    pub corpus_sha256: String,
    pub chain_gateway: Gateway,
    pub heldout_gateway: Gateway,
    pub library: PromptLibrary,
    pub fingerprint: String,
    pub output_root: PathBuf,
}

/// Builds gateways, corpus and prompt library from a config. Endpoint URLs
/// of the form `mock:<path>` load a scripted provider from that file.
pub fn build_context(
    config: &ExperimentConfig,
    base_dir: &Path,
) -> Result<ExperimentContext, HarnessError> {
    config.validate()?;
    let corpus_path = ExperimentConfig::resolve(base_dir, &config.corpus);
    let corpus = load_corpus(&corpus_path)?;
    let corpus_bytes = std::fs::read(&corpus_path).map_err(|e| io_err(&corpus_path, e))?;
    let corpus_sha256 = hex::encode(Sha256::digest(&corpus_bytes));
    let corpus_file = corpus_path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();

    let chain_gateway = match config.provider.endpoint_url.strip_prefix("mock:") {
        Some(script) => {
            let script_path = ExperimentConfig::resolve(base_dir, Path::new(script));
            let provider = crate::gateway::load_script_file(&script_path)?;
            Gateway::new(config.provider.clone(), std::sync::Arc::new(provider))?
        }
        None => Gateway::http(config.provider.clone())?,
    };
    let heldout_gateway = chain_gateway.split_audit();

    let library = match &config.template_dir {
        Some(dir) => PromptLibrary::with_overrides(&ExperimentConfig::resolve(base_dir, dir))?,
        None => PromptLibrary::builtin(),
    };

    let fingerprint = experiment_fingerprint(config, base_dir, &corpus_sha256)?;
    tracing::info!(
        provider = %chain_gateway.provider_description(),
        fingerprint,
        documents = corpus.documents.len(),
        "experiment context ready"
    );
    Ok(ExperimentContext {
        corpus,
        corpus_file,
        corpus_sha256,
        chain_gateway,
        heldout_gateway,
        library,
        fingerprint,
        output_root: ExperimentConfig::resolve(base_dir, &config.output_root),
    })
}

/// Digest identifying an experiment cell: provider (without secrets), chain
/// hyperparameters, run count, baselines, metric, template overrides and the
/// corpus content.
pub fn experiment_fingerprint(
    config: &ExperimentConfig,
    base_dir: &Path,
    corpus_sha256: &str,
) -> Result<String, HarnessError> {
    let mut redacted_provider = config.provider.clone();
    redacted_provider.api_key = None;
    let mut hasher = Sha256::new();
    let mut feed = |label: &str, value: &str| {
        hasher.update(label.as_bytes());
        hasher.update([0]);
        hasher.update(value.as_bytes());
        hasher.update([0xFF]);
    };
    feed(
        "provider",
        &serde_json::to_string(&redacted_provider)
            .map_err(|e| HarnessError::Serde(e.to_string()))?,
    );
    feed(
        "chain",
        &serde_json::to_string(&config.chain).map_err(|e| HarnessError::Serde(e.to_string()))?,
    );
    feed("runs", &config.runs.to_string());
    let mut baselines = config.baselines.clone();
    baselines.sort();
    baselines.dedup();
    feed("baselines", &format!("{baselines:?}"));
    feed("metric", &format!("{:?}", config.metric));
    feed("corpus", corpus_sha256);
    if let Some(dir) = &config.template_dir {
        let dir = ExperimentConfig::resolve(base_dir, dir);
        let mut names: Vec<PathBuf> = std::fs::read_dir(&dir)
            .map_err(|e| io_err(&dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .collect();
        names.sort();
        for name in names {
            let bytes = std::fs::read(&name).map_err(|e| io_err(&name, e))?;
            feed("template", &hex::encode(Sha256::digest(&bytes)));
        }
    }
    Ok(hex::encode(&hasher.finalize()[..8]))
}

/// Scores for one method on one document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodScores {
    #[serde(default, skip_serializing_if = "Option::is_none", with = "f6_opt")]
    pub memorization: Option<f64>,
    #[serde(with = "f6")]
    pub generalization: f64,
    /// Whitespace tokens of the context this method hands to the answering
    /// model (mean across runs).
    #[serde(with = "f6")]
    pub token_count: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocumentScores {
    pub document_id: DocumentId,
    pub best_iteration: u32,
    pub methods: BTreeMap<Method, MethodScores>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateScores {
    #[serde(default, skip_serializing_if = "Option::is_none", with = "f6_opt")]
    pub memorization: Option<f64>,
    #[serde(with = "f6")]
    pub generalization: f64,
    #[serde(with = "f6")]
    pub mean_token_count: f64,
    pub documents: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcludedDocument {
    pub document_id: DocumentId,
    pub reason: String,
}

/// Memorization and generalization per method, per document and aggregated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub schema_version: u32,
    pub config_fingerprint: String,
    pub corpus_file: String,
    pub corpus_sha256: String,
    pub metric: ReportMetric,
    pub scale: f64,
    pub runs: u32,
    pub chain: ChainConfig,
    pub provider_fingerprint: String,
    pub documents: Vec<DocumentScores>,
    pub aggregates: BTreeMap<Method, AggregateScores>,
    pub excluded: Vec<ExcludedDocument>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum ReportLine {
    ReportHeader {
        schema_version: u32,
        config_fingerprint: String,
        corpus_file: String,
        corpus_sha256: String,
        metric: ReportMetric,
        scale: f64,
        runs: u32,
        chain: ChainConfig,
        provider_fingerprint: String,
    },
    DocumentMethod {
        document_id: DocumentId,
        method: Method,
        best_iteration: u32,
        #[serde(default, skip_serializing_if = "Option::is_none", with = "f6_opt")]
        memorization: Option<f64>,
        #[serde(with = "f6")]
        generalization: f64,
        #[serde(with = "f6")]
        token_count: f64,
    },
    Aggregate {
        method: Method,
        #[serde(default, skip_serializing_if = "Option::is_none", with = "f6_opt")]
        memorization: Option<f64>,
        #[serde(with = "f6")]
        generalization: f64,
        #[serde(with = "f6")]
        mean_token_count: f64,
        documents: usize,
    },
    Excluded {
        document_id: DocumentId,
        reason: String,
    },
}

impl MetricReport {
    /// Line-delimited machine-readable form; stable ordering, stable bytes.
    pub fn to_jsonl(&self) -> Result<String, HarnessError> {
        let mut lines: Vec<String> = Vec::new();
        let mut push = |line: &ReportLine| -> Result<(), HarnessError> {
            lines
                .push(serde_json::to_string(line).map_err(|e| HarnessError::Serde(e.to_string()))?);
            Ok(())
        };
        push(&ReportLine::ReportHeader {
            schema_version: self.schema_version,
            config_fingerprint: self.config_fingerprint.clone(),
            corpus_file: self.corpus_file.clone(),
            corpus_sha256: self.corpus_sha256.clone(),
            metric: self.metric,
            scale: self.scale,
            runs: self.runs,
            chain: self.chain.clone(),
            provider_fingerprint: self.provider_fingerprint.clone(),
        })?;
        for doc in &self.documents {
            for (method, scores) in &doc.methods {
                push(&ReportLine::DocumentMethod {
                    document_id: doc.document_id.clone(),
                    method: *method,
                    best_iteration: doc.best_iteration,
                    memorization: scores.memorization,
                    generalization: scores.generalization,
                    token_count: scores.token_count,
                })?;
            }
        }
        for (method, agg) in &self.aggregates {
            push(&ReportLine::Aggregate {
                method: *method,
                memorization: agg.memorization,
                generalization: agg.generalization,
                mean_token_count: agg.mean_token_count,
                documents: agg.documents,
            })?;
        }
        for excluded in &self.excluded {
            push(&ReportLine::Excluded {
                document_id: excluded.document_id.clone(),
                reason: excluded.reason.clone(),
            })?;
        }
        Ok(lines.join("\n") + "\n")
    }

    pub fn from_jsonl(raw: &str) -> Result<Self, HarnessError> {
        let mut report: Option<MetricReport> = None;
        let mut documents: BTreeMap<DocumentId, DocumentScores> = BTreeMap::new();
        for line in raw.lines().filter(|l| !l.trim().is_empty()) {
            let parsed: ReportLine =
                serde_json::from_str(line).map_err(|e| HarnessError::Serde(e.to_string()))?;
            match parsed {
                ReportLine::ReportHeader {
                    schema_version,
                    config_fingerprint,
                    corpus_file,
                    corpus_sha256,
                    metric,
                    scale,
                    runs,
                    chain,
                    provider_fingerprint,
                } => {
                    report = Some(MetricReport {
                        schema_version,
                        config_fingerprint,
                        corpus_file,
                        corpus_sha256,
                        metric,
                        scale,
                        runs,
                        chain,
                        provider_fingerprint,
                        documents: Vec::new(),
                        aggregates: BTreeMap::new(),
                        excluded: Vec::new(),
                    })
                }
                ReportLine::DocumentMethod {
                    document_id,
                    method,
                    best_iteration,
                    memorization,
                    generalization,
                    token_count,
                } => {
                    let entry =
                        documents
                            .entry(document_id.clone())
                            .or_insert_with(|| DocumentScores {
                                document_id,
                                best_iteration,
                                methods: BTreeMap::new(),
                            });
                    entry.methods.insert(
                        method,
                        MethodScores {
                            memorization,
                            generalization,
                            token_count,
                        },
                    );
                }
                ReportLine::Aggregate {
                    method,
                    memorization,
                    generalization,
                    mean_token_count,
                    documents,
                } => {
                    if let Some(report) = report.as_mut() {
                        report.aggregates.insert(
                            method,
                            AggregateScores {
                                memorization,
                                generalization,
                                mean_token_count,
                                documents,
                            },
                        );
                    }
                }
                ReportLine::Excluded {
                    document_id,
                    reason,
                } => {
                    if let Some(report) = report.as_mut() {
                        report.excluded.push(ExcludedDocument {
                            document_id,
                            reason,
                        });
                    }
                }
            }
        }
        let mut report =
            report.ok_or_else(|| HarnessError::Serde("report header line missing".into()))?;
        report.documents = documents.into_values().collect();
        Ok(report)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let raw = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        Self::from_jsonl(&raw)
    }

    /// Human-readable table.
    pub fn table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "experiment {} on {} (metric: {:?}, scale: {}, runs: {})\n",
            self.config_fingerprint, self.corpus_file, self.metric, self.scale, self.runs
        ));
        out.push_str(&format!(
            "{:<22} {:>14} {:>16} {:>12} {:>6}\n",
            "method", "memorization", "generalization", "mean_tokens", "docs"
        ));
        for (method, agg) in &self.aggregates {
            let memorization = agg
                .memorization
                .map(|m| format!("{:.6}", round6(m)))
                .unwrap_or_else(|| "-".to_string());
            out.push_str(&format!(
                "{:<22} {:>14} {:>16.6} {:>12.2} {:>6}\n",
                method.to_string(),
                memorization,
                round6(agg.generalization),
                agg.mean_token_count,
                agg.documents
            ));
        }
        if !self.excluded.is_empty() {
            out.push_str("excluded documents:\n");
            for e in &self.excluded {
                out.push_str(&format!("  {}: {}\n", e.document_id, e.reason));
            }
        }
        out
    }

    pub fn report_file_name(fingerprint: &str) -> String {
        format!("report-{fingerprint}.jsonl")
    }
}

/// Mean of the per-question scores under the report metric. Token F1 reads
/// the recorded f1; ROUGE-L re-scores the recorded model answers against the
/// gold aliases.
fn metric_mean(
    scores: &[QuestionScore],
    metric: ReportMetric,
    aliases: &BTreeMap<QuestionId, Vec<String>>,
) -> Result<f64, HarnessError> {
    if scores.is_empty() {
        return Err(HarnessError::Metrics(MetricsError::EmptyScoreList));
    }
    let total: f64 = match metric {
        ReportMetric::TokenF1 => scores.iter().map(|s| s.f1).sum(),
        ReportMetric::RougeL => {
            let mut total = 0.0;
            for score in scores {
                if score.idk {
                    continue;
                }
                let gold = aliases.get(&score.question_id).ok_or_else(|| {
                    HarnessError::Config(format!(
                        "no gold aliases for question {}",
                        score.question_id
                    ))
                })?;
                total += rouge_l_vs_aliases(&score.model_answer, gold)?.0;
            }
            total
        }
    };
    Ok(total / scores.len() as f64)
}

fn alias_map(questions: &[QAPair]) -> BTreeMap<QuestionId, Vec<String>> {
    questions
        .iter()
        .map(|q| (q.id.clone(), q.gold_answers.clone()))
        .collect()
}

/// Memorization under the report metric: best iteration mean over the
/// guiding questions (maximum across iterations).
fn memorization_of(
    trace: &ChainTrace,
    metric: ReportMetric,
    guiding_aliases: &BTreeMap<QuestionId, Vec<String>>,
) -> Result<f64, HarnessError> {
    let mut best: Option<f64> = None;
    for record in &trace.iterations {
        let value = match metric {
            ReportMetric::TokenF1 => record.refine_mean_f1,
            ReportMetric::RougeL => {
                metric_mean(&record.per_question_refine_scores, metric, guiding_aliases)?
            }
        };
        best = Some(match best {
            Some(current) if current >= value => current,
            _ => value,
        });
    }
    best.ok_or_else(|| HarnessError::Dialectic("trace has no iterations".into()))
}

fn whitespace_tokens(text: &str) -> f64 {
    count_tokens(text, &TokenCountScheme::Whitespace).expect("whitespace counting is infallible")
        as f64
}

struct RunAccumulator {
    memorization: Vec<f64>,
    generalization: Vec<f64>,
    token_count: Vec<f64>,
}

impl RunAccumulator {
    fn new() -> Self {
        Self {
            memorization: Vec::new(),
            generalization: Vec::new(),
            token_count: Vec::new(),
        }
    }

    fn mean(values: &[f64]) -> f64 {
        values.iter().sum::<f64>() / values.len() as f64
    }

    fn finish(&self, has_memorization: bool) -> MethodScores {
        MethodScores {
            memorization: has_memorization.then(|| Self::mean(&self.memorization)),
            generalization: Self::mean(&self.generalization),
            token_count: Self::mean(&self.token_count),
        }
    }
}

/// Runs the whole experiment and writes traces, summary records, the
/// line-delimited report and its table under the output root.
pub async fn run_experiment(
    config: &ExperimentConfig,
    ctx: &ExperimentContext,
) -> Result<MetricReport, HarnessError> {
    config.validate()?;
    let store = Store::open(&ctx.output_root)?;
    let metric = config.metric.unwrap_or_else(|| infer_metric(&ctx.corpus));
    let scale = metric.scale();
    let want_full_content = config.baselines.contains(&Baseline::FullContent);

    let mut documents: Vec<&Document> = ctx.corpus.documents.iter().collect();
    documents.sort_by(|a, b| a.id.cmp(&b.id));

    let mut doc_scores: Vec<DocumentScores> = Vec::new();
    let mut excluded: Vec<ExcludedDocument> = Vec::new();

    for document in documents {
        match run_document(config, ctx, &store, document, metric, want_full_content).await {
            Ok(Some(scores)) => doc_scores.push(scores),
            Ok(None) => {}
            Err(DocumentFailure::Excluded(reason)) => {
                tracing::warn!(document = %document.id, reason, "document excluded from report");
                excluded.push(ExcludedDocument {
                    document_id: document.id.clone(),
                    reason,
                });
            }
            Err(DocumentFailure::Fatal(err)) => return Err(err),
        }
    }

    // Scale per-document values at the dataset level (ROUGE-L is presented
    // on 0-100), then aggregate as plain means so aggregates stay the means
    // of the per-document values.
    for doc in &mut doc_scores {
        for scores in doc.methods.values_mut() {
            scores.memorization = scores.memorization.map(|m| m * scale);
            scores.generalization *= scale;
        }
    }

    let mut aggregates: BTreeMap<Method, AggregateScores> = BTreeMap::new();
    for method in [
        Method::ChainOfSummaries,
        Method::ZeroShot,
        Method::FullContent,
    ] {
        let rows: Vec<&MethodScores> = doc_scores
            .iter()
            .filter_map(|d| d.methods.get(&method))
            .collect();
        if rows.is_empty() {
            continue;
        }
        let memorization_values: Vec<f64> = rows.iter().filter_map(|r| r.memorization).collect();
        let memorization = if memorization_values.is_empty() {
            None
        } else {
            Some(memorization_values.iter().sum::<f64>() / memorization_values.len() as f64)
        };
        aggregates.insert(
            method,
            AggregateScores {
                memorization,
                generalization: rows.iter().map(|r| r.generalization).sum::<f64>()
                    / rows.len() as f64,
                mean_token_count: rows.iter().map(|r| r.token_count).sum::<f64>()
                    / rows.len() as f64,
                documents: rows.len(),
            },
        );
    }

    let report = MetricReport {
        schema_version: REPORT_SCHEMA_VERSION,
        config_fingerprint: ctx.fingerprint.clone(),
        corpus_file: ctx.corpus_file.clone(),
        corpus_sha256: ctx.corpus_sha256.clone(),
        metric,
        scale,
        runs: config.runs,
        chain: config.chain.clone(),
        provider_fingerprint: config.provider.fingerprint(),
        documents: doc_scores,
        aggregates,
        excluded,
    };

    let report_path = store
        .reports_dir()
        .join(MetricReport::report_file_name(&ctx.fingerprint));
    std::fs::write(&report_path, report.to_jsonl()?).map_err(|e| io_err(&report_path, e))?;
    let table_path = store
        .reports_dir()
        .join(format!("table-{}.txt", ctx.fingerprint));
    std::fs::write(&table_path, report.table()).map_err(|e| io_err(&table_path, e))?;
    Ok(report)
}

enum DocumentFailure {
    /// Gateway trouble on this document only; the experiment continues.
    Excluded(String),
    Fatal(HarnessError),
}

impl From<HarnessError> for DocumentFailure {
    fn from(e: HarnessError) -> Self {
        DocumentFailure::Fatal(e)
    }
}

async fn run_document(
    config: &ExperimentConfig,
    ctx: &ExperimentContext,
    store: &Store,
    document: &Document,
    metric: ReportMetric,
    want_full_content: bool,
) -> Result<Option<DocumentScores>, DocumentFailure> {
    let refine_split: Vec<QAPair> = ctx
        .corpus
        .questions_for(&document.id, Some(Split::Refine))
        .into_iter()
        .cloned()
        .collect();
    let validation: Vec<QAPair> = ctx
        .corpus
        .questions_for(&document.id, Some(Split::Validation))
        .into_iter()
        .cloned()
        .collect();
    let test: Vec<QAPair> = ctx
        .corpus
        .questions_for(&document.id, Some(Split::Test))
        .into_iter()
        .cloned()
        .collect();
    if validation.is_empty() || test.is_empty() {
        return Err(DocumentFailure::Excluded(
            "document lacks validation or test questions".into(),
        ));
    }
    if refine_split.is_empty() && config.chain.question_source == QuestionSource::Human {
        return Err(DocumentFailure::Excluded(
            "document has no refine-split questions for the human source".into(),
        ));
    }
    let test_aliases = alias_map(&test);

    let mut cos = RunAccumulator::new();
    let mut zero_shot = RunAccumulator::new();
    let mut full_content = RunAccumulator::new();
    let mut best_iteration = 0;
    let mut first_best_summary: Option<(String, String)> = None;

    for run in 0..config.runs {
        let mut chain_config = config.chain.clone();
        chain_config.seed = config.chain.seed.wrapping_add(run as u64);

        let (mut guiding, _generation_calls) = match dialectic::guiding_questions(
            document,
            &refine_split,
            &chain_config,
            &ctx.chain_gateway,
            &ctx.library,
        )
        .await
        {
            Ok(result) => result,
            Err(e) => return Err(DocumentFailure::Excluded(e.to_string())),
        };
        // Generated questions may coincide textually with held-out ones;
        // keep validation and test text out of every prompt.
        let held_out: std::collections::BTreeSet<&str> = validation
            .iter()
            .chain(test.iter())
            .map(|q| q.question.trim())
            .collect();
        let before = guiding.len();
        guiding.retain(|q| !held_out.contains(q.question.trim()));
        let mut seen = std::collections::BTreeSet::new();
        guiding.retain(|q| seen.insert(q.question.trim().to_string()));
        if guiding.len() < before {
            tracing::warn!(
                document = %document.id,
                dropped = before - guiding.len(),
                "guiding questions colliding with held-out splits (or repeated) were dropped"
            );
        }
        if guiding.is_empty() {
            return Err(DocumentFailure::Excluded(
                "empty guiding question pool".into(),
            ));
        }
        let guiding_aliases = alias_map(&guiding);

        let trace = match dialectic::run_chain(
            document,
            &guiding,
            &validation,
            &chain_config,
            &ctx.chain_gateway,
            &ctx.library,
        )
        .await
        {
            Ok(trace) => trace,
            Err(DialecticError::Aborted {
                document: doc_id,
                source,
                partial,
            }) => {
                if let Some(partial) = partial {
                    let _ = store.save_trace(&partial);
                }
                return Err(DocumentFailure::Excluded(format!(
                    "chain aborted on {doc_id}: {source}"
                )));
            }
            Err(e) => return Err(DocumentFailure::Excluded(e.to_string())),
        };
        let trace_path = store.save_trace(&trace).map_err(HarnessError::from)?;

        let best = trace.best_record();
        let summary0 = &trace.iterations[0].summary_text;

        // Held-out test scoring through the separate audit scope.
        let cos_outcome = heldout_eval(&best.summary_text, &test, ctx)
            .await
            .map_err(fatal_eval)?;

        cos.generalization
            .push(metric_mean(&cos_outcome.scores, metric, &test_aliases)?);
        cos.memorization
            .push(memorization_of(&trace, metric, &guiding_aliases)?);
        cos.token_count.push(whitespace_tokens(&best.summary_text));

        if config.baselines.contains(&Baseline::ZeroShot) {
            // Iteration 0 is the zero-shot baseline; when it is also the
            // selected iteration its scores are reused verbatim.
            let zs_outcome = if trace.best_iteration == 0 {
                cos_outcome.clone()
            } else {
                heldout_eval(summary0, &test, ctx)
                    .await
                    .map_err(fatal_eval)?
            };
            zero_shot
                .generalization
                .push(metric_mean(&zs_outcome.scores, metric, &test_aliases)?);
            zero_shot.memorization.push(match metric {
                ReportMetric::TokenF1 => trace.iterations[0].refine_mean_f1,
                ReportMetric::RougeL => metric_mean(
                    &trace.iterations[0].per_question_refine_scores,
                    metric,
                    &guiding_aliases,
                )?,
            });
            zero_shot.token_count.push(whitespace_tokens(summary0));
        }

        if want_full_content {
            let full_outcome = heldout_eval(&document.content, &test, ctx)
                .await
                .map_err(fatal_eval)?;
            full_content.generalization.push(metric_mean(
                &full_outcome.scores,
                metric,
                &test_aliases,
            )?);
            full_content
                .token_count
                .push(whitespace_tokens(&document.content));
        }

        if run == 0 {
            best_iteration = trace.best_iteration;
            let trace_name = trace_path
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default();
            first_best_summary = Some((best.summary_text.clone(), trace_name));
        }
    }

    if let Some((summary_text, trace_name)) = first_best_summary {
        let record = SummaryRecord {
            document_id: document.id.clone(),
            version: store
                .next_version(&document.id)
                .map_err(HarnessError::from)?,
            summary_text,
            chain_trace_ref: Some(trace_name),
            created_at: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            config_fingerprint: ctx.fingerprint.clone(),
            human_edited: false,
            needs_review: false,
            stalled: false,
        };
        store.save_summary(&record).map_err(HarnessError::from)?;
    }

    let include_zero_shot = config.baselines.contains(&Baseline::ZeroShot);
    let mut methods = BTreeMap::new();
    methods.insert(Method::ChainOfSummaries, cos.finish(true));
    if include_zero_shot {
        methods.insert(Method::ZeroShot, zero_shot.finish(true));
    }
    if want_full_content {
        methods.insert(Method::FullContent, full_content.finish(false));
    }
    Ok(Some(DocumentScores {
        document_id: document.id.clone(),
        best_iteration,
        methods,
    }))
}

fn fatal_eval(e: DialecticError) -> DocumentFailure {
    DocumentFailure::Excluded(format!("held-out evaluation failed: {e}"))
}

async fn heldout_eval(
    context_text: &str,
    questions: &[QAPair],
    ctx: &ExperimentContext,
) -> Result<EvalOutcome, DialecticError> {
    dialectic::evaluate_summary(context_text, questions, &ctx.heldout_gateway, &ctx.library).await
}

/// TruthfulQA corpora report ROUGE-L; everything else token F1.
pub fn infer_metric(corpus: &Corpus) -> ReportMetric {
    let truthful = corpus
        .documents
        .iter()
        .filter(|d| d.source == Source::Truthfulqa)
        .count();
    if truthful * 2 > corpus.documents.len() {
        ReportMetric::RougeL
    } else {
        ReportMetric::TokenF1
    }
}

/// Table of method against (mean score, mean token count) across reports,
/// for length-versus-quality comparisons.
pub fn report_tokens_vs_f1(reports: &[MetricReport], out: &Path) -> Result<String, HarnessError> {
    if reports.is_empty() {
        return Err(HarnessError::Config("no reports supplied".into()));
    }
    let mut buckets: BTreeMap<Method, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for report in reports {
        for doc in &report.documents {
            for (method, scores) in &doc.methods {
                let bucket = buckets.entry(*method).or_default();
                bucket.0.push(scores.generalization);
                bucket.1.push(scores.token_count);
            }
        }
    }
    let mut table = String::from("method\tmean_score\tmean_tokens\tdocuments\n");
    for method in [
        Method::ChainOfSummaries,
        Method::ZeroShot,
        Method::FullContent,
    ] {
        match buckets.get(&method) {
            Some((scores, tokens)) if !scores.is_empty() => {
                let mean_score = round6(scores.iter().sum::<f64>() / scores.len() as f64);
                let mean_tokens = round6(tokens.iter().sum::<f64>() / tokens.len() as f64);
                table.push_str(&format!(
                    "{method}\t{mean_score}\t{mean_tokens}\t{}\n",
                    scores.len()
                ));
            }
            _ => {
                tracing::warn!(method = %method, "method bucket empty; row omitted");
            }
        }
    }
    std::fs::write(out, &table).map_err(|e| io_err(out, e))?;
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn report_jsonl_round_trips() {
        let mut methods = BTreeMap::new();
        methods.insert(
            Method::ChainOfSummaries,
            MethodScores {
                memorization: Some(0.5),
                generalization: 0.75,
                token_count: 12.0,
            },
        );
        methods.insert(
            Method::FullContent,
            MethodScores {
                memorization: None,
                generalization: 1.0,
                token_count: 100.0,
            },
        );
        let mut aggregates = BTreeMap::new();
        aggregates.insert(
            Method::ChainOfSummaries,
            AggregateScores {
                memorization: Some(0.5),
                generalization: 0.75,
                mean_token_count: 12.0,
                documents: 1,
            },
        );
        let report = MetricReport {
            schema_version: REPORT_SCHEMA_VERSION,
            config_fingerprint: "fp".into(),
            corpus_file: "corpus.jsonl".into(),
            corpus_sha256: "ab".repeat(32),
            metric: ReportMetric::TokenF1,
            scale: 1.0,
            runs: 1,
            chain: ChainConfig::default(),
            provider_fingerprint: "pf".into(),
            documents: vec![DocumentScores {
                document_id: DocumentId::new("doc-a"),
                best_iteration: 2,
                methods,
            }],
            aggregates,
            excluded: vec![ExcludedDocument {
                document_id: DocumentId::new("doc-b"),
                reason: "gateway failure".into(),
            }],
        };
        let jsonl = report.to_jsonl().unwrap();
        let parsed = MetricReport::from_jsonl(&jsonl).unwrap();
        assert_eq!(report, parsed);
        // Serialization is stable.
        assert_eq!(jsonl, parsed.to_jsonl().unwrap());
    }

    #[test]
    fn tokens_vs_f1_table_means_match_hand_computation() {
        let mut methods_a = BTreeMap::new();
        methods_a.insert(
            Method::ChainOfSummaries,
            MethodScores {
                memorization: Some(0.4),
                generalization: 0.8,
                token_count: 10.0,
            },
        );
        let mut methods_b = methods_a.clone();
        methods_b.insert(
            Method::ChainOfSummaries,
            MethodScores {
                memorization: Some(0.6),
                generalization: 0.6,
                token_count: 30.0,
            },
        );
        let report = |methods: BTreeMap<Method, MethodScores>, doc: &str| MetricReport {
            schema_version: REPORT_SCHEMA_VERSION,
            config_fingerprint: "fp".into(),
            corpus_file: "c".into(),
            corpus_sha256: "d".into(),
            metric: ReportMetric::TokenF1,
            scale: 1.0,
            runs: 1,
            chain: ChainConfig::default(),
            provider_fingerprint: "pf".into(),
            documents: vec![DocumentScores {
                document_id: DocumentId::new(doc),
                best_iteration: 0,
                methods,
            }],
            aggregates: BTreeMap::new(),
            excluded: vec![],
        };
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("table.tsv");
        let table =
            report_tokens_vs_f1(&[report(methods_a, "a"), report(methods_b, "b")], &out).unwrap();
        // mean of 0.8 and 0.6 is 0.7; mean of 10 and 30 is 20.
        assert!(table.contains("chain_of_summaries\t0.7\t20\t2"));
        // Buckets with no documents are omitted.
        assert!(!table.contains("full_content"));
    }

    #[test]
    fn config_files_parse_with_defaults() {
        let raw = r#"
            corpus = "corpus.jsonl"
            output_root = "out"

            [provider]
            endpoint_url = "mock:script.json"
            model = "mock-model"

            [chain]
            iterations_i = 3
            questions_per_iteration_iq = 2
            question_source = "human"
        "#;
        let config: ExperimentConfig = toml::from_str(raw).unwrap();
        assert_eq!(config.runs, 1);
        assert_eq!(
            config.baselines,
            vec![Baseline::ZeroShot, Baseline::FullContent]
        );
        assert_eq!(config.chain.iterations_i, 3);
        assert!(config.chain.early_stop);
        assert_eq!(config.provider.max_retries, 2);
        config.validate().unwrap();
    }
}
