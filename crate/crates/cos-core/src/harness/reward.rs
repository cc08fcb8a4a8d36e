//! Reward-dataset export: every intermediate and final summary paired with
//! its validation mean F1, deduplicated and capped for the downstream
//! reward-model context window.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{io_err, HarnessError};
use crate::ids::DocumentId;
use crate::metrics::{count_tokens, TokenCountScheme};
use crate::store::{list_trace_files, load_trace_file};

/// One (summary, score) pair for reward-model training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardDatasetEntry {
    pub summary_text: String,
    pub f1_score: f64,
    pub document_id: DocumentId,
    pub iteration: u32,
}

/// Descriptive statistics of the exported dataset, plus what was dropped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardStats {
    pub count: usize,
    pub mean_length_tokens: f64,
    pub median_length_tokens: f64,
    pub max_length_tokens: u64,
    pub min_length_tokens: u64,
    pub f1_mean: f64,
    pub f1_median: f64,
    /// Population standard deviation.
    pub f1_std: f64,
    pub dropped_duplicates: usize,
    pub dropped_over_cap: usize,
    pub dropped_malformed: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum RewardLine {
    Entry(RewardDatasetEntry),
    Stats(RewardStats),
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

/// Exports every iteration's summary with its validation mean F1 from all
/// traces under `trace_dir`. Malformed entries, exact duplicate summary
/// texts (first kept) and summaries over `token_cap` are dropped and
/// counted. The output ends with a statistics line.
pub fn export_reward_dataset(
    trace_dir: &Path,
    token_cap: u64,
    scheme: &TokenCountScheme,
    out: &Path,
) -> Result<RewardStats, HarnessError> {
    let files = list_trace_files(trace_dir)
        .map_err(|_| HarnessError::NoTraces(trace_dir.display().to_string()))?;
    if files.is_empty() {
        return Err(HarnessError::NoTraces(trace_dir.display().to_string()));
    }

    let mut entries: Vec<(RewardDatasetEntry, u64)> = Vec::new();
    let mut seen_summaries = std::collections::BTreeSet::new();
    let mut dropped_duplicates = 0usize;
    let mut dropped_over_cap = 0usize;
    let mut dropped_malformed = 0usize;

    for file in &files {
        let trace = load_trace_file(file)?;
        for record in &trace.iterations {
            let candidate = RewardDatasetEntry {
                summary_text: record.summary_text.clone(),
                f1_score: record.validation_mean_f1,
                document_id: trace.document_id.clone(),
                iteration: record.iteration,
            };
            if candidate.summary_text.trim().is_empty()
                || !candidate.f1_score.is_finite()
                || !(0.0..=1.0).contains(&candidate.f1_score)
            {
                dropped_malformed += 1;
                continue;
            }
            if !seen_summaries.insert(candidate.summary_text.clone()) {
                dropped_duplicates += 1;
                continue;
            }
            let tokens = count_tokens(&candidate.summary_text, scheme)?;
            if tokens > token_cap {
                dropped_over_cap += 1;
                continue;
            }
            entries.push((candidate, tokens));
        }
    }

    let count = entries.len();
    let stats = if count == 0 {
        RewardStats {
            count: 0,
            mean_length_tokens: 0.0,
            median_length_tokens: 0.0,
            max_length_tokens: 0,
            min_length_tokens: 0,
            f1_mean: 0.0,
            f1_median: 0.0,
            f1_std: 0.0,
            dropped_duplicates,
            dropped_over_cap,
            dropped_malformed,
        }
    } else {
        let mut lengths: Vec<f64> = entries.iter().map(|(_, t)| *t as f64).collect();
        let mut scores: Vec<f64> = entries.iter().map(|(e, _)| e.f1_score).collect();
        let mean_length = lengths.iter().sum::<f64>() / count as f64;
        let f1_mean = scores.iter().sum::<f64>() / count as f64;
        let f1_var = scores.iter().map(|s| (s - f1_mean).powi(2)).sum::<f64>() / count as f64;
        lengths.sort_by(|a, b| a.partial_cmp(b).unwrap());
        scores.sort_by(|a, b| a.partial_cmp(b).unwrap());
        RewardStats {
            count,
            mean_length_tokens: mean_length,
            median_length_tokens: median(&lengths),
            max_length_tokens: entries.iter().map(|(_, t)| *t).max().unwrap_or(0),
            min_length_tokens: entries.iter().map(|(_, t)| *t).min().unwrap_or(0),
            f1_mean,
            f1_median: median(&scores),
            f1_std: f1_var.sqrt(),
            dropped_duplicates,
            dropped_over_cap,
            dropped_malformed,
        }
    };

    let mut body = String::new();
    for (entry, _) in &entries {
        body.push_str(
            &serde_json::to_string(&RewardLine::Entry(entry.clone()))
                .map_err(|e| HarnessError::Serde(e.to_string()))?,
        );
        body.push('\n');
    }
    body.push_str(
        &serde_json::to_string(&RewardLine::Stats(stats.clone()))
            .map_err(|e| HarnessError::Serde(e.to_string()))?,
    );
    body.push('\n');
    std::fs::write(out, body).map_err(|e| io_err(out, e))?;
    Ok(stats)
}

/// Parses an exported reward dataset back into entries and stats.
pub fn read_reward_dataset(
    path: &Path,
) -> Result<(Vec<RewardDatasetEntry>, Option<RewardStats>), HarnessError> {
    let raw = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut entries = Vec::new();
    let mut stats = None;
    for line in raw.lines().filter(|l| !l.trim().is_empty()) {
        match serde_json::from_str(line).map_err(|e| HarnessError::Serde(e.to_string()))? {
            RewardLine::Entry(entry) => entries.push(entry),
            RewardLine::Stats(s) => stats = Some(s),
        }
    }
    Ok((entries, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dialectic::{ChainConfig, ChainTrace, IterationRecord};
    use crate::store::Store;

    fn record(iteration: u32, summary: &str, f1: f64) -> IterationRecord {
        IterationRecord {
            iteration,
            summary_text: summary.to_string(),
            questions_asked: vec![],
            per_question_refine_scores: vec![],
            per_question_validation_scores: vec![],
            refine_mean_f1: f1,
            validation_mean_f1: f1,
            token_count: summary.split_whitespace().count() as u64,
            provider_completion_tokens: None,
            llm_calls: 1,
            stalled: false,
        }
    }

    fn trace(doc: &str, records: Vec<IterationRecord>) -> ChainTrace {
        let best = records
            .iter()
            .max_by(|a, b| {
                a.validation_mean_f1
                    .partial_cmp(&b.validation_mean_f1)
                    .unwrap()
            })
            .map(|r| r.iteration)
            .unwrap_or(0);
        let correct = records
            .iter()
            .map(|r| r.validation_mean_f1)
            .fold(0.0f64, f64::max);
        ChainTrace {
            document_id: DocumentId::new(doc),
            config: ChainConfig::default(),
            iterations: records,
            best_iteration: best,
            correct_f1_validation: correct,
            provider_fingerprint: "pf".into(),
        }
    }

    #[test]
    fn export_dedups_caps_and_reports_stats() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path()).unwrap();

        let long_summary = vec!["tok"; 9_000].join(" ");
        store
            .save_trace(&trace(
                "doc-a",
                vec![
                    record(0, "short summary one", 0.25),
                    record(1, "short summary two", 0.5),
                    record(2, &long_summary, 0.75),
                ],
            ))
            .unwrap();
        // doc-b repeats one of doc-a's summaries exactly.
        store
            .save_trace(&trace(
                "doc-b",
                vec![
                    record(0, "short summary one", 1.0),
                    record(1, "fresh text", 0.5),
                ],
            ))
            .unwrap();

        let out = dir.path().join("reward.jsonl");
        let stats = export_reward_dataset(
            &store.traces_dir(),
            8_192,
            &TokenCountScheme::Whitespace,
            &out,
        )
        .unwrap();

        // Five candidate entries: one duplicate and one over-cap drop.
        assert_eq!(stats.dropped_duplicates, 1);
        assert_eq!(stats.dropped_over_cap, 1);
        assert_eq!(stats.dropped_malformed, 0);
        assert_eq!(stats.count, 3);

        let (entries, read_stats) = read_reward_dataset(&out).unwrap();
        assert_eq!(entries.len(), 3);
        assert_eq!(read_stats.unwrap(), stats);

        // No duplicates and nothing over the cap in the output.
        let mut texts: Vec<&str> = entries.iter().map(|e| e.summary_text.as_str()).collect();
        texts.sort_unstable();
        texts.dedup();
        assert_eq!(texts.len(), entries.len());
        assert!(entries
            .iter()
            .all(|e| e.summary_text.split_whitespace().count() <= 8_192));

        // Independent recomputation of the stats block.
        let scores: Vec<f64> = entries.iter().map(|e| e.f1_score).collect();
        let mean = scores.iter().sum::<f64>() / scores.len() as f64;
        assert!((stats.f1_mean - mean).abs() < 1e-9);
        let mut sorted = scores.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!((stats.f1_median - sorted[1]).abs() < 1e-9);
        let var = scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / scores.len() as f64;
        assert!((stats.f1_std - var.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn malformed_entries_are_dropped_and_counted() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path()).unwrap();
        let mut bad = record(0, "   ", 0.5);
        bad.summary_text = "   ".into();
        store
            .save_trace(&trace("doc-a", vec![bad, record(1, "good text", 0.5)]))
            .unwrap();
        let out = dir.path().join("reward.jsonl");
        let stats = export_reward_dataset(
            &store.traces_dir(),
            8_192,
            &TokenCountScheme::Whitespace,
            &out,
        )
        .unwrap();
        assert_eq!(stats.dropped_malformed, 1);
        assert_eq!(stats.count, 1);
    }

    #[test]
    fn missing_traces_are_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let empty = dir.path().join("traces");
        std::fs::create_dir_all(&empty).unwrap();
        let out = dir.path().join("reward.jsonl");
        assert!(matches!(
            export_reward_dataset(&empty, 8_192, &TokenCountScheme::Whitespace, &out),
            Err(HarnessError::NoTraces(_))
        ));
    }
}
