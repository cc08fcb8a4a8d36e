//! The refinement engine: thesis summary, question-pool antithesis,
//! evaluate/refine cycles and best-iteration selection.
//!
//! One chain is sequential across iterations (each synthesis depends on the
//! previous one); inside an evaluation phase the per-question answer calls
//! run concurrently under the gateway's parallelism bound. Test-split
//! questions must never reach this module: pools are validated on entry.

use futures::future::join_all;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{Document, Origin, QAPair, Split};
use crate::gateway::{ChatRequest, Gateway, GatewayError};
use crate::ids::{DocumentId, QuestionId};
use crate::metrics::{
    correct_f1, count_tokens, mean_f1, IterationScore, MetricsError, QuestionScore,
    TokenCountScheme,
};
use crate::prompts::{
    apply_cod_variant, parse_qa_pairs, strip_updated_summary_prefix, PromptBundle, PromptError,
    PromptLibrary, QaParse,
};
use crate::ser::f6;

#[derive(Debug, Error)]
pub enum DialecticError {
    #[error("gateway failure on document {document}: {source}")]
    Gateway {
        document: DocumentId,
        source: GatewayError,
    },
    #[error("model returned an empty summary for document {0}")]
    EmptySummary(DocumentId),
    #[error("question generation failed for document {document} after retry: {detail}")]
    QuestionGenerationFailed {
        document: DocumentId,
        detail: String,
    },
    #[error("invalid question pools: {0}")]
    InvalidPools(String),
    #[error("chain aborted on document {document}: {source}")]
    Aborted {
        document: DocumentId,
        source: GatewayError,
        /// Iterations completed before the failure; persisted by the caller.
        partial: Option<Box<ChainTrace>>,
    },
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuestionSource {
    Synthetic,
    Human,
    Mixed,
}

/// Hyperparameters of one chain run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    /// Number of refinement iterations (`i`).
    #[serde(default = "default_iterations")]
    pub iterations_i: u32,
    /// Unanswered questions fed to each refinement (`iq`).
    #[serde(default = "default_iq")]
    pub questions_per_iteration_iq: usize,
    /// A question counts as unanswered when its F1 falls below this.
    #[serde(default = "default_tau")]
    pub unanswered_threshold_tau: f64,
    #[serde(default = "default_question_source")]
    pub question_source: QuestionSource,
    #[serde(default = "default_pool_size")]
    pub synthetic_pool_size: u32,
    #[serde(default)]
    pub cod_enabled: bool,
    #[serde(default = "default_early_stop")]
    pub early_stop: bool,
    #[serde(default)]
    pub seed: u64,
}

fn default_iterations() -> u32 {
    5
}
fn default_iq() -> usize {
    10
}
fn default_tau() -> f64 {
    0.5
}
fn default_question_source() -> QuestionSource {
    QuestionSource::Synthetic
}
fn default_pool_size() -> u32 {
    50
}
fn default_early_stop() -> bool {
    true
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self {
            iterations_i: default_iterations(),
            questions_per_iteration_iq: default_iq(),
            unanswered_threshold_tau: default_tau(),
            question_source: default_question_source(),
            synthetic_pool_size: default_pool_size(),
            cod_enabled: false,
            early_stop: default_early_stop(),
            seed: 0,
        }
    }
}

impl ChainConfig {
    pub fn validate(&self) -> Result<(), DialecticError> {
        if self.iterations_i < 1 {
            return Err(DialecticError::InvalidPools(
                "iterations_i must be >= 1".into(),
            ));
        }
        if self.questions_per_iteration_iq < 1 {
            return Err(DialecticError::InvalidPools(
                "questions_per_iteration_iq must be >= 1".into(),
            ));
        }
        if !(self.unanswered_threshold_tau > 0.0 && self.unanswered_threshold_tau <= 1.0) {
            return Err(DialecticError::InvalidPools(
                "unanswered_threshold_tau must lie in (0, 1]".into(),
            ));
        }
        Ok(())
    }

    /// Digest over the chain hyperparameters.
    pub fn fingerprint(&self) -> String {
        let canonical = serde_json::to_string(self).expect("chain config serializes");
        hex::encode(&Sha256::digest(canonical.as_bytes())[..8])
    }
}

/// One iteration of a chain: the summary and how it scored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: u32,
    pub summary_text: String,
    /// Empty at iteration 0 (the thesis has no guiding questions).
    pub questions_asked: Vec<QuestionId>,
    pub per_question_refine_scores: Vec<QuestionScore>,
    pub per_question_validation_scores: Vec<QuestionScore>,
    #[serde(with = "f6")]
    pub refine_mean_f1: f64,
    #[serde(with = "f6")]
    pub validation_mean_f1: f64,
    /// Whitespace token count of the summary.
    pub token_count: u64,
    /// Completion tokens the provider reported for the summary call, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provider_completion_tokens: Option<u64>,
    pub llm_calls: u64,
    /// Refinement returned empty or unchanged output.
    #[serde(default)]
    pub stalled: bool,
}

/// Full record of one chain run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainTrace {
    pub document_id: DocumentId,
    pub config: ChainConfig,
    pub iterations: Vec<IterationRecord>,
    pub best_iteration: u32,
    #[serde(with = "f6")]
    pub correct_f1_validation: f64,
    pub provider_fingerprint: String,
}

impl ChainTrace {
    pub fn best_record(&self) -> &IterationRecord {
        self.iterations
            .iter()
            .find(|r| r.iteration == self.best_iteration)
            .expect("best_iteration indexes an existing record")
    }

    pub fn total_llm_calls(&self) -> u64 {
        self.iterations.iter().map(|r| r.llm_calls).sum()
    }
}

/// Scores from evaluating one summary over a question set. Questions whose
/// gateway call failed are excluded from the scores and listed separately.
#[derive(Debug, Clone, Default)]
pub struct EvalOutcome {
    pub scores: Vec<QuestionScore>,
    pub errored: Vec<QuestionId>,
}

async fn send(
    gateway: &Gateway,
    bundle: &PromptBundle,
    temperature: f64,
    document: &DocumentId,
) -> Result<crate::gateway::ChatResponse, DialecticError> {
    let request = ChatRequest::new(
        bundle.messages.clone(),
        gateway.config().model.clone(),
        temperature,
    );
    gateway
        .complete(&request)
        .await
        .map_err(|source| DialecticError::Gateway {
            document: document.clone(),
            source,
        })
}

/// Answers every question with the summary as context and scores the replies.
pub async fn evaluate_summary(
    summary: &str,
    questions: &[QAPair],
    gateway: &Gateway,
    library: &PromptLibrary,
) -> Result<EvalOutcome, DialecticError> {
    if questions.is_empty() {
        return Err(DialecticError::InvalidPools("question set is empty".into()));
    }
    let temperature = gateway.config().temperature;
    let futures = questions.iter().map(|q| async move {
        let bundle = library.build_answer_prompt(summary, &q.question)?;
        let request = ChatRequest::new(bundle.messages, gateway.config().model.clone(), temperature);
        match gateway.complete(&request).await {
            Ok(response) => {
                let score =
                    QuestionScore::from_answer(q.id.clone(), response.content.trim(), &q.gold_answers)?;
                Ok::<_, DialecticError>((Some(score), None))
            }
            Err(err) => {
                tracing::warn!(question = %q.id, error = %err, "answer call failed; question excluded from means");
                Ok((None, Some(q.id.clone())))
            }
        }
    });

    let mut outcome = EvalOutcome::default();
    let mut first_error: Option<GatewayError> = None;
    for (q, result) in questions.iter().zip(join_all(futures).await) {
        let (score, errored) = result?;
        if let Some(score) = score {
            outcome.scores.push(score);
        }
        if let Some(id) = errored {
            if first_error.is_none() {
                first_error = Some(GatewayError::Transport {
                    detail: format!("all answer calls failed, first on question {id}"),
                    attempts: 0,
                });
            }
            outcome.errored.push(id);
        }
        let _ = q;
    }
    if outcome.scores.is_empty() {
        let source = first_error.unwrap_or(GatewayError::Transport {
            detail: "no answers obtained".into(),
            attempts: 0,
        });
        return Err(DialecticError::Gateway {
            document: questions[0].document_id.clone(),
            source,
        });
    }
    Ok(outcome)
}

/// Questions scored below `tau` (or answered "I don't know"), weakest first,
/// truncated to `iq`. Ties keep the input (corpus) order.
pub fn select_unanswered(scores: &[QuestionScore], tau: f64, iq: usize) -> Vec<QuestionId> {
    let mut below: Vec<(usize, &QuestionScore)> = scores
        .iter()
        .enumerate()
        .filter(|(_, s)| s.idk || s.f1 < tau)
        .collect();
    below.sort_by(|(ia, a), (ib, b)| {
        a.f1.partial_cmp(&b.f1)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(ia.cmp(ib))
    });
    below
        .into_iter()
        .take(iq)
        .map(|(_, s)| s.question_id.clone())
        .collect()
}

/// Result of synthetic question generation.
#[derive(Debug, Clone)]
pub struct AntithesisOutcome {
    pub questions: Vec<QAPair>,
    pub parse: QaParse,
    /// Gateway calls spent (1, or 2 when the first reply parsed to nothing).
    pub generation_calls: u64,
}

/// Generates the synthetic question pool for a document, retrying once when
/// the reply contains no well-formed pairs.
pub async fn generate_antithesis(
    document: &Document,
    config: &ChainConfig,
    gateway: &Gateway,
    library: &PromptLibrary,
) -> Result<AntithesisOutcome, DialecticError> {
    let bundle =
        library.build_qa_generation_prompt(&document.content, config.synthetic_pool_size)?;
    let temperature = gateway.config().generation_temperature;

    let mut last_detail = String::new();
    for attempt in 1..=2u64 {
        let generation_calls = attempt;
        let response = send(gateway, &bundle, temperature, &document.id).await?;
        match parse_qa_pairs(&response.content) {
            Ok(parse) => {
                if !parse.skipped_blocks.is_empty() {
                    tracing::warn!(
                        document = %document.id,
                        skipped = parse.skipped_blocks.len(),
                        "malformed Q/A blocks skipped during generation"
                    );
                }
                let questions = parse
                    .pairs
                    .iter()
                    .enumerate()
                    .map(|(i, pair)| QAPair {
                        id: QuestionId::new(format!("synth-{}-{i}", document.id)),
                        document_id: document.id.clone(),
                        question: pair.question.clone(),
                        gold_answers: vec![pair.answer.clone()],
                        origin: Origin::Synthetic,
                        split: None,
                    })
                    .collect();
                return Ok(AntithesisOutcome {
                    questions,
                    parse,
                    generation_calls,
                });
            }
            Err(err) => last_detail = err.to_string(),
        }
    }
    Err(DialecticError::QuestionGenerationFailed {
        document: document.id.clone(),
        detail: last_detail,
    })
}

/// The guiding question pool per the configured source, plus the gateway
/// calls spent building it.
pub async fn guiding_questions(
    document: &Document,
    corpus_refine: &[QAPair],
    config: &ChainConfig,
    gateway: &Gateway,
    library: &PromptLibrary,
) -> Result<(Vec<QAPair>, u64), DialecticError> {
    match config.question_source {
        QuestionSource::Human => Ok((corpus_refine.to_vec(), 0)),
        QuestionSource::Synthetic => {
            let outcome = generate_antithesis(document, config, gateway, library).await?;
            Ok((outcome.questions, outcome.generation_calls))
        }
        QuestionSource::Mixed => {
            let outcome = generate_antithesis(document, config, gateway, library).await?;
            let mut pool = corpus_refine.to_vec();
            pool.extend(outcome.questions);
            Ok((pool, outcome.generation_calls))
        }
    }
}

/// Generates and scores the zero-shot thesis (iteration 0).
pub async fn generate_thesis(
    document: &Document,
    refine_questions: &[QAPair],
    validation_questions: &[QAPair],
    config: &ChainConfig,
    gateway: &Gateway,
    library: &PromptLibrary,
) -> Result<IterationRecord, DialecticError> {
    let mut bundle = library.build_zero_shot_summary_prompt(&document.content)?;
    if config.cod_enabled {
        bundle = apply_cod_variant(&bundle)?;
    }
    let response = send(
        gateway,
        &bundle,
        gateway.config().generation_temperature,
        &document.id,
    )
    .await?;
    let summary = response.content.trim().to_string();
    if summary.is_empty() {
        return Err(DialecticError::EmptySummary(document.id.clone()));
    }
    let refine_eval = evaluate_summary(&summary, refine_questions, gateway, library).await?;
    let validation_eval =
        evaluate_summary(&summary, validation_questions, gateway, library).await?;
    build_record(
        0,
        summary,
        Vec::new(),
        refine_eval,
        validation_eval,
        response.completion_tokens,
        1 + (refine_questions.len() + validation_questions.len()) as u64,
        false,
    )
}

#[allow(clippy::too_many_arguments)]
fn build_record(
    iteration: u32,
    summary_text: String,
    questions_asked: Vec<QuestionId>,
    refine_eval: EvalOutcome,
    validation_eval: EvalOutcome,
    provider_completion_tokens: Option<u64>,
    llm_calls: u64,
    stalled: bool,
) -> Result<IterationRecord, DialecticError> {
    let refine_mean = mean_f1(&refine_eval.scores)?;
    let validation_mean = mean_f1(&validation_eval.scores)?;
    let token_count = count_tokens(&summary_text, &TokenCountScheme::Whitespace)
        .expect("whitespace counting is infallible");
    Ok(IterationRecord {
        iteration,
        summary_text,
        questions_asked,
        per_question_refine_scores: refine_eval.scores,
        per_question_validation_scores: validation_eval.scores,
        refine_mean_f1: refine_mean,
        validation_mean_f1: validation_mean,
        token_count,
        provider_completion_tokens,
        llm_calls,
        stalled,
    })
}

/// One refinement call. Returns the synthesis and whether it stalled (empty
/// or unchanged output returns the current summary with the flag set).
pub async fn refine(
    document: &Document,
    current_summary: &str,
    unanswered: &[QAPair],
    config: &ChainConfig,
    gateway: &Gateway,
    library: &PromptLibrary,
) -> Result<(String, bool, Option<u64>), DialecticError> {
    if unanswered.is_empty() {
        return Err(DialecticError::InvalidPools(
            "refinement needs at least one unanswered question".into(),
        ));
    }
    let questions: Vec<String> = unanswered.iter().map(|q| q.question.clone()).collect();
    let mut bundle = library.build_refine_prompt(&document.content, current_summary, &questions)?;
    if config.cod_enabled {
        bundle = apply_cod_variant(&bundle)?;
    }
    let response = send(
        gateway,
        &bundle,
        gateway.config().generation_temperature,
        &document.id,
    )
    .await?;
    let synthesis = strip_updated_summary_prefix(&response.content);
    if synthesis.is_empty() || synthesis == current_summary.trim() {
        return Ok((
            current_summary.trim().to_string(),
            true,
            response.completion_tokens,
        ));
    }
    Ok((synthesis, false, response.completion_tokens))
}

fn check_pools(refine: &[QAPair], validation: &[QAPair]) -> Result<(), DialecticError> {
    if refine.is_empty() || validation.is_empty() {
        return Err(DialecticError::InvalidPools(
            "refine and validation pools must both be non-empty".into(),
        ));
    }
    for pool in [refine, validation] {
        if let Some(q) = pool.iter().find(|q| q.split == Some(Split::Test)) {
            return Err(DialecticError::InvalidPools(format!(
                "test-split question {} must never enter a chain",
                q.id
            )));
        }
    }
    for r in refine {
        if validation
            .iter()
            .any(|v| v.id == r.id || v.question == r.question)
        {
            return Err(DialecticError::InvalidPools(format!(
                "question {} appears in both refine and validation pools",
                r.id
            )));
        }
    }
    Ok(())
}

fn finish_trace(
    document: &DocumentId,
    config: &ChainConfig,
    iterations: Vec<IterationRecord>,
    provider_fingerprint: String,
) -> Result<ChainTrace, DialecticError> {
    let validation_means: Vec<IterationScore> = iterations
        .iter()
        .map(|r| IterationScore {
            iteration: r.iteration,
            mean_f1: r.validation_mean_f1,
            per_question: Vec::new(),
        })
        .collect();
    let (best_iteration, correct) = correct_f1(&validation_means)?;
    Ok(ChainTrace {
        document_id: document.clone(),
        config: config.clone(),
        iterations,
        best_iteration,
        correct_f1_validation: correct,
        provider_fingerprint,
    })
}

/// Runs the full chain: thesis, then up to `iterations_i` evaluate/refine
/// cycles, then best-synthesis selection on validation means.
///
/// Unrecoverable gateway failures abort with the completed iterations
/// attached so the caller can persist a partial trace.
pub async fn run_chain(
    document: &Document,
    refine_questions: &[QAPair],
    validation_questions: &[QAPair],
    config: &ChainConfig,
    gateway: &Gateway,
    library: &PromptLibrary,
) -> Result<ChainTrace, DialecticError> {
    config.validate()?;
    check_pools(refine_questions, validation_questions)?;
    let fingerprint = gateway.config().fingerprint();

    let mut iterations: Vec<IterationRecord> = Vec::new();
    let abort = |iterations: Vec<IterationRecord>,
                 document: &DocumentId,
                 config: &ChainConfig,
                 fingerprint: &str,
                 source: GatewayError| {
        let partial = finish_trace(document, config, iterations, fingerprint.to_string())
            .ok()
            .map(Box::new);
        DialecticError::Aborted {
            document: document.clone(),
            source,
            partial,
        }
    };

    let thesis = match generate_thesis(
        document,
        refine_questions,
        validation_questions,
        config,
        gateway,
        library,
    )
    .await
    {
        Ok(record) => record,
        Err(DialecticError::Gateway { document, source }) => {
            return Err(abort(iterations, &document, config, &fingerprint, source))
        }
        Err(other) => return Err(other),
    };
    emit_progress(document, &thesis);
    iterations.push(thesis);

    for iteration in 1..=config.iterations_i {
        let previous = iterations.last().expect("thesis present");
        let unanswered_ids = select_unanswered(
            &previous.per_question_refine_scores,
            config.unanswered_threshold_tau,
            config.questions_per_iteration_iq,
        );
        if unanswered_ids.is_empty() {
            tracing::info!(document = %document.id, iteration, "all refine questions answered; chain converged");
            break;
        }
        let unanswered: Vec<QAPair> = unanswered_ids
            .iter()
            .filter_map(|id| refine_questions.iter().find(|q| &q.id == id).cloned())
            .collect();

        let step = async {
            let (synthesis, stalled, completion_tokens) = refine(
                document,
                &iterations.last().expect("previous record").summary_text,
                &unanswered,
                config,
                gateway,
                library,
            )
            .await?;
            let refine_eval =
                evaluate_summary(&synthesis, refine_questions, gateway, library).await?;
            let validation_eval =
                evaluate_summary(&synthesis, validation_questions, gateway, library).await?;
            build_record(
                iteration,
                synthesis,
                unanswered_ids.clone(),
                refine_eval,
                validation_eval,
                completion_tokens,
                1 + (refine_questions.len() + validation_questions.len()) as u64,
                stalled,
            )
        };
        let record = match step.await {
            Ok(record) => record,
            Err(DialecticError::Gateway { document, source }) => {
                return Err(abort(iterations, &document, config, &fingerprint, source))
            }
            Err(other) => return Err(other),
        };
        emit_progress(document, &record);
        let stalled = record.stalled;
        iterations.push(record);
        if stalled && config.early_stop {
            tracing::info!(document = %document.id, iteration, "refinement stalled; stopping early");
            break;
        }
    }

    finish_trace(&document.id, config, iterations, fingerprint)
}

fn emit_progress(document: &Document, record: &IterationRecord) {
    tracing::info!(
        document = %document.id,
        iteration = record.iteration,
        refine_mean_f1 = record.refine_mean_f1,
        validation_mean_f1 = record.validation_mean_f1,
        token_count = record.token_count,
        llm_calls = record.llm_calls,
        stalled = record.stalled,
        "chain iteration complete"
    );
}
