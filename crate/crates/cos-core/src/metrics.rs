//! Scoring primitives: answer normalization, bag-of-tokens F1, ROUGE-L,
//! per-iteration means and the best-iteration selection rule.
//!
//! Normalization follows the TriviaQA-style pipeline: lowercase, punctuation
//! stripped, the articles a/an/the dropped as whole words, underscores turned
//! into spaces and whitespace collapsed before tokenizing on spaces. F1 uses
//! multiset (bag) token intersection so repeated tokens are scored once per
//! occurrence. ROUGE-L is the sentence-agnostic LCS F-measure over the same
//! token streams.

use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::QuestionId;
use crate::ser::f6;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("alias list is empty")]
    EmptyAliasList,
    #[error("score list is empty")]
    EmptyScoreList,
    #[error("iteration chain is empty")]
    EmptyChain,
    #[error("no tokenizer registered for scheme {scheme}")]
    TokenizerUnavailable { scheme: String },
}

/// A normalized answer: lowercase tokens with punctuation, articles and
/// underscores stripped out.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NormalizedAnswer {
    tokens: Vec<String>,
}

impl NormalizedAnswer {
    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Tokens re-joined with single spaces.
    pub fn joined(&self) -> String {
        self.tokens.join(" ")
    }
}

// Curly quotes and the acute accent are treated like ASCII punctuation.
const EXTRA_PUNCTUATION: [char; 3] = ['\u{2018}', '\u{2019}', '\u{00B4}'];

fn is_punctuation(c: char) -> bool {
    c.is_ascii_punctuation() && c != '_' || EXTRA_PUNCTUATION.contains(&c)
}

/// Applies, in order: lowercase, punctuation-to-space (underscores included),
/// whole-word article removal, underscore-to-space, whitespace collapse, and
/// a final split on spaces.
pub fn normalize_text(raw: &str) -> NormalizedAnswer {
    let lowered = raw.to_lowercase();
    let depunct: String = lowered
        .chars()
        .map(|c| {
            if is_punctuation(c) || c == '_' {
                ' '
            } else {
                c
            }
        })
        .collect();
    let tokens = depunct
        .replace('_', " ")
        .split_whitespace()
        .filter(|word| !matches!(*word, "a" | "an" | "the"))
        .map(str::to_string)
        .collect();
    NormalizedAnswer { tokens }
}

fn bag_counts(tokens: &[String]) -> HashMap<&str, usize> {
    let mut counts = HashMap::new();
    for token in tokens {
        *counts.entry(token.as_str()).or_insert(0) += 1;
    }
    counts
}

fn bag_intersection_size(a: &[String], b: &[String]) -> usize {
    let counts_b = bag_counts(b);
    let mut remaining = counts_b;
    let mut shared = 0;
    for token in a {
        if let Some(count) = remaining.get_mut(token.as_str()) {
            if *count > 0 {
                *count -= 1;
                shared += 1;
            }
        }
    }
    shared
}

fn f_measure(shared: f64, len_pred: f64, len_gold: f64) -> f64 {
    if shared == 0.0 {
        return 0.0;
    }
    let precision = shared / len_pred;
    let recall = shared / len_gold;
    2.0 * precision * recall / (precision + recall)
}

/// Token-level F1 between a prediction and one gold answer.
///
/// Both sides are normalized first. When both normalize to nothing the score
/// is 1.0 (vacuous agreement); when exactly one side is empty it is 0.0.
pub fn token_f1(prediction: &str, gold: &str) -> f64 {
    let pred = normalize_text(prediction);
    let gold = normalize_text(gold);
    match (pred.is_empty(), gold.is_empty()) {
        (true, true) => return 1.0,
        (true, false) | (false, true) => return 0.0,
        _ => {}
    }
    let shared = bag_intersection_size(pred.tokens(), gold.tokens()) as f64;
    f_measure(
        shared,
        pred.tokens().len() as f64,
        gold.tokens().len() as f64,
    )
}

/// Maximum token F1 over a gold alias set, together with the winning alias.
/// Ties go to the earliest alias.
pub fn f1_vs_aliases<'a>(
    prediction: &str,
    aliases: &'a [String],
) -> Result<(f64, &'a str), MetricsError> {
    let mut best: Option<(f64, &str)> = None;
    for alias in aliases {
        let score = token_f1(prediction, alias);
        match best {
            Some((top, _)) if score <= top => {}
            _ => best = Some((score, alias)),
        }
    }
    best.ok_or(MetricsError::EmptyAliasList)
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut row = vec![0usize; b.len() + 1];
    for token_a in a {
        for (j, token_b) in b.iter().enumerate() {
            row[j + 1] = if token_a == token_b {
                prev[j] + 1
            } else {
                row[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut row);
    }
    prev[b.len()]
}

/// ROUGE-L F-measure (beta = 1) over normalized token streams.
///
/// Returned on the unit scale; dataset-level reports multiply by 100.
pub fn rouge_l(prediction: &str, reference: &str) -> f64 {
    let pred = normalize_text(prediction);
    let reference = normalize_text(reference);
    match (pred.is_empty(), reference.is_empty()) {
        (true, true) => return 1.0,
        (true, false) | (false, true) => return 0.0,
        _ => {}
    }
    let lcs = lcs_len(pred.tokens(), reference.tokens()) as f64;
    f_measure(
        lcs,
        pred.tokens().len() as f64,
        reference.tokens().len() as f64,
    )
}

/// Maximum ROUGE-L over a gold alias set; ties go to the earliest alias.
pub fn rouge_l_vs_aliases<'a>(
    prediction: &str,
    aliases: &'a [String],
) -> Result<(f64, &'a str), MetricsError> {
    let mut best: Option<(f64, &str)> = None;
    for alias in aliases {
        let score = rouge_l(prediction, alias);
        match best {
            Some((top, _)) if score <= top => {}
            _ => best = Some((score, alias)),
        }
    }
    best.ok_or(MetricsError::EmptyAliasList)
}

/// Outcome of scoring one question against one summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionScore {
    pub question_id: QuestionId,
    #[serde(with = "f6")]
    pub f1: f64,
    pub model_answer: String,
    pub matched_alias: Option<String>,
    /// The model declined with the scripted "I don't know" reply.
    pub idk: bool,
}

impl QuestionScore {
    /// Scores a model answer against the gold aliases. "I don't know"
    /// (compared after normalization) forces f1 = 0.
    pub fn from_answer(
        question_id: QuestionId,
        model_answer: &str,
        aliases: &[String],
    ) -> Result<Self, MetricsError> {
        let idk = is_idk(model_answer);
        if idk {
            return Ok(Self {
                question_id,
                f1: 0.0,
                model_answer: model_answer.to_string(),
                matched_alias: None,
                idk: true,
            });
        }
        let (f1, alias) = f1_vs_aliases(model_answer, aliases)?;
        Ok(Self {
            question_id,
            f1,
            model_answer: model_answer.to_string(),
            matched_alias: Some(alias.to_string()),
            idk: false,
        })
    }
}

/// True when the reply normalizes to exactly "i don't know".
pub fn is_idk(answer: &str) -> bool {
    normalize_text(answer) == normalize_text("I don't know")
}

/// Mean F1 of one iteration's per-question scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationScore {
    pub iteration: u32,
    #[serde(with = "f6")]
    pub mean_f1: f64,
    pub per_question: Vec<QuestionScore>,
}

impl IterationScore {
    pub fn new(iteration: u32, per_question: Vec<QuestionScore>) -> Result<Self, MetricsError> {
        let mean = mean_f1(&per_question)?;
        Ok(Self {
            iteration,
            mean_f1: mean,
            per_question,
        })
    }
}

/// Arithmetic mean of the f1 fields.
pub fn mean_f1(scores: &[QuestionScore]) -> Result<f64, MetricsError> {
    if scores.is_empty() {
        return Err(MetricsError::EmptyScoreList);
    }
    Ok(scores.iter().map(|s| s.f1).sum::<f64>() / scores.len() as f64)
}

/// Best-iteration rule: the iteration with maximal mean F1 and that value.
/// Ties break toward the smallest iteration index.
pub fn correct_f1(iterations: &[IterationScore]) -> Result<(u32, f64), MetricsError> {
    let mut best: Option<(u32, f64)> = None;
    for score in iterations {
        match best {
            Some((_, top)) if score.mean_f1 <= top => {}
            _ => best = Some((score.iteration, score.mean_f1)),
        }
    }
    best.ok_or(MetricsError::EmptyChain)
}

/// A registered tokenizer for the pluggable counting scheme.
pub type Tokenizer = Arc<dyn Fn(&str) -> u64 + Send + Sync>;

/// How a text's token count is measured.
#[derive(Clone)]
pub enum TokenCountScheme {
    /// Whitespace-separated token count; deterministic and dependency-free.
    Whitespace,
    /// Usage figures read from the gateway response, when the provider sent any.
    ProviderReported { reported: Option<u64> },
    /// Delegates to a registered tokenizer.
    Pluggable { tokenizer: Option<Tokenizer> },
}

impl std::fmt::Debug for TokenCountScheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Whitespace => f.write_str("Whitespace"),
            Self::ProviderReported { reported } => {
                write!(f, "ProviderReported({reported:?})")
            }
            Self::Pluggable { tokenizer } => {
                write!(f, "Pluggable(registered: {})", tokenizer.is_some())
            }
        }
    }
}

/// Counts tokens under the given scheme.
pub fn count_tokens(text: &str, scheme: &TokenCountScheme) -> Result<u64, MetricsError> {
    match scheme {
        TokenCountScheme::Whitespace => Ok(text.split_whitespace().count() as u64),
        TokenCountScheme::ProviderReported { reported } => {
            reported.ok_or(MetricsError::TokenizerUnavailable {
                scheme: "provider_reported".to_string(),
            })
        }
        TokenCountScheme::Pluggable { tokenizer } => match tokenizer {
            Some(tokenizer) => Ok(tokenizer(text)),
            None => Err(MetricsError::TokenizerUnavailable {
                scheme: "pluggable".to_string(),
            }),
        },
    }
}
