//! Question-guided iterative summarization engine.
//!
//! A summary starts as a zero-shot draft (thesis), gets challenged by a pool
//! of questions (antithesis), and is refined with whatever it could not
//! answer (synthesis), for a configured number of cycles; the best iteration
//! is selected on validation questions. Summaries act as a plain-text cache
//! for source documents: questions are answered from the cached summary
//! alone, and misses trigger a refinement against the source.
//!
//! Module map:
//! - [`gateway`]: chat-completions HTTP client with retries, a parallelism
//!   bound, an audit log, and a deterministic scripted mock for offline runs.
//! - [`prompts`]: versioned prompt templates, output parsing, the
//!   Chain-of-Draft variant.
//! - [`metrics`]: normalization, token F1, ROUGE-L, best-iteration selection.
//! - [`corpus`]: SQuAD/TriviaQA/TruthfulQA adapters, split assignment, the
//!   internal line-delimited corpus format.
//! - [`dialectic`]: the refinement loop itself.
//! - [`store`]: trace and summary persistence, llms.txt emission, the cache
//!   ask/refine entry point.
//! - [`harness`]: experiment runs, baselines, sweeps, reward-dataset export.

pub mod corpus;
pub mod dialectic;
pub mod gateway;
pub mod harness;
pub mod ids;
pub mod metrics;
pub mod prompts;
pub mod ser;
pub mod store;

pub use ids::{DocumentId, QuestionId};
