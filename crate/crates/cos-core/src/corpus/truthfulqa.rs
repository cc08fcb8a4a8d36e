//! TruthfulQA adapter: best answer plus correct answers become aliases.
//!
//! The dataset ships no passages, so a document is synthesized per source
//! grouping from the concatenated correct answers of its rows; such
//! documents carry `synthetic_context = true`.

use std::collections::BTreeMap;
use std::path::Path;

use super::{
    dedup_answers, flag_oversized, provenance_for, slugify, Corpus, CorpusError, Document,
    LoadReport, Origin, QAPair, Source, DEFAULT_LENGTH_CAP_TOKENS,
};
use crate::ids::{DocumentId, QuestionId};

fn column(headers: &csv::StringRecord, name: &str) -> Option<usize> {
    headers
        .iter()
        .position(|h| h.trim().eq_ignore_ascii_case(name))
}

struct Row {
    question: String,
    best_answer: String,
    correct_answers: Vec<String>,
    category: String,
    source: String,
}

/// Loads the TruthfulQA CSV table (question, best answer, correct answers,
/// category, source).
pub fn load_truthfulqa(path: &Path) -> Result<(Corpus, LoadReport), CorpusError> {
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .from_path(path)
        .map_err(|e| CorpusError::Parse {
            path: path.display().to_string(),
            detail: e.to_string(),
        })?;
    let headers = reader
        .headers()
        .map_err(|e| CorpusError::Parse {
            path: path.display().to_string(),
            detail: e.to_string(),
        })?
        .clone();

    let question_col = column(&headers, "Question").ok_or_else(|| CorpusError::Schema {
        path: path.display().to_string(),
        field: "Question".into(),
    })?;
    let best_col = column(&headers, "Best Answer").ok_or_else(|| CorpusError::Schema {
        path: path.display().to_string(),
        field: "Best Answer".into(),
    })?;
    let correct_col = column(&headers, "Correct Answers");
    let category_col = column(&headers, "Category");
    let source_col = column(&headers, "Source");

    let mut rows: Vec<Row> = Vec::new();
    let mut report = LoadReport::default();
    for (idx, record) in reader.records().enumerate() {
        let record = record.map_err(|e| CorpusError::Parse {
            path: path.display().to_string(),
            detail: format!("row {}: {e}", idx + 2),
        })?;
        let field = |col: Option<usize>| {
            col.and_then(|c| record.get(c))
                .unwrap_or("")
                .trim()
                .to_string()
        };
        let question = field(Some(question_col));
        let best_answer = field(Some(best_col));
        if question.is_empty() || best_answer.is_empty() {
            report
                .skipped
                .push(format!("row {}: missing question or best answer", idx + 2));
            continue;
        }
        let correct_answers: Vec<String> = field(correct_col)
            .split(';')
            .map(|a| a.trim().to_string())
            .filter(|a| !a.is_empty())
            .collect();
        rows.push(Row {
            question,
            best_answer,
            correct_answers,
            category: field(category_col),
            source: field(source_col),
        });
    }

    // Group rows by source (category as fallback) and synthesize one
    // document per group.
    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (idx, row) in rows.iter().enumerate() {
        let key = if row.source.is_empty() {
            format!("category:{}", row.category)
        } else {
            format!("source:{}", row.source)
        };
        groups.entry(key).or_default().push(idx);
    }

    let mut corpus = Corpus::default();
    let mut doc_of_key: BTreeMap<&String, DocumentId> = BTreeMap::new();
    for (key, members) in &groups {
        let first = &rows[members[0]];
        let title = if first.source.is_empty() {
            if first.category.is_empty() {
                "uncategorized".to_string()
            } else {
                first.category.clone()
            }
        } else {
            first.source.clone()
        };
        let content = members
            .iter()
            .map(|&i| {
                let row = &rows[i];
                let mut parts = vec![row.best_answer.clone()];
                parts.extend(row.correct_answers.iter().cloned());
                parts.join(". ")
            })
            .collect::<Vec<_>>()
            .join("\n");
        let slug = slugify(key);
        let doc_id = DocumentId::new(format!("tfqa-{slug}"));
        doc_of_key.insert(key, doc_id.clone());
        corpus.documents.push(Document {
            id: doc_id,
            title,
            content,
            source: Source::Truthfulqa,
            synthetic_context: true,
            oversized: false,
        });
    }
    // Questions keep the original row order.
    for (i, row) in rows.iter().enumerate() {
        let key = if row.source.is_empty() {
            format!("category:{}", row.category)
        } else {
            format!("source:{}", row.source)
        };
        let doc_id = doc_of_key
            .get(&key)
            .expect("every row's group was materialized")
            .clone();
        let mut answers = vec![row.best_answer.clone()];
        answers.extend(row.correct_answers.iter().cloned());
        corpus.questions.push(QAPair {
            id: QuestionId::new(format!("tfqa-q{i}")),
            document_id: doc_id,
            question: row.question.clone(),
            gold_answers: dedup_answers(answers),
            origin: Origin::Human,
            split: None,
        });
    }

    flag_oversized(&mut corpus.documents, DEFAULT_LENGTH_CAP_TOKENS);
    corpus.provenance.push(provenance_for(path)?);
    corpus.validate()?;
    Ok((corpus, report))
}
