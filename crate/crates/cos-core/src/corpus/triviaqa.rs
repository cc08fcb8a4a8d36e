//! TriviaQA adapter: evidence text becomes document content, value plus
//! aliases become the gold answer set.
//!
//! Records sharing an evidence page are grouped under one document so the
//! minimum-test-question filter has something to count. Records without any
//! usable evidence text are skipped and logged.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Deserialize;
use sha2::{Digest, Sha256};

use super::{
    dedup_answers, flag_oversized, io_err, json_err, provenance_for, slugify, Corpus, CorpusError,
    Document, LoadReport, Origin, QAPair, Source, DEFAULT_LENGTH_CAP_TOKENS,
};
use crate::ids::{DocumentId, QuestionId};

#[derive(Deserialize)]
struct TriviaFile {
    #[serde(rename = "Data")]
    data: Vec<TriviaRecord>,
}

#[derive(Deserialize)]
struct TriviaRecord {
    #[serde(rename = "Question")]
    question: String,
    #[serde(rename = "QuestionId")]
    question_id: String,
    #[serde(rename = "Answer")]
    answer: TriviaAnswer,
    #[serde(rename = "EntityPages", default)]
    entity_pages: Vec<TriviaEvidence>,
    #[serde(rename = "SearchResults", default)]
    search_results: Vec<TriviaEvidence>,
}

#[derive(Deserialize)]
struct TriviaAnswer {
    #[serde(rename = "Value")]
    value: String,
    #[serde(rename = "Aliases", default)]
    aliases: Vec<String>,
}

#[derive(Deserialize)]
struct TriviaEvidence {
    #[serde(rename = "Title", default)]
    title: Option<String>,
    // Self-contained exports carry the page text inline under one of these.
    #[serde(rename = "WikiContext", default)]
    wiki_context: Option<String>,
    #[serde(rename = "Context", default)]
    context: Option<String>,
    #[serde(rename = "SearchContext", default)]
    search_context: Option<String>,
}

impl TriviaEvidence {
    fn text(&self) -> Option<&str> {
        [&self.wiki_context, &self.context, &self.search_context]
            .into_iter()
            .flatten()
            .map(String::as_str)
            .find(|t| !t.trim().is_empty())
    }
}

/// Loads a TriviaQA record file (top-level `Data` list, or a bare list).
pub fn load_triviaqa(path: &Path) -> Result<(Corpus, LoadReport), CorpusError> {
    let raw = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let records: Vec<TriviaRecord> = match serde_json::from_str::<TriviaFile>(&raw) {
        Ok(file) => file.data,
        Err(_) => serde_json::from_str(&raw).map_err(|e| json_err(path, e))?,
    };

    let mut corpus = Corpus::default();
    let mut report = LoadReport::default();
    // Group key -> document index, to share one document across records that
    // cite the same evidence.
    let mut groups: BTreeMap<String, usize> = BTreeMap::new();
    let mut seen_ids = std::collections::BTreeSet::new();

    for record in &records {
        if !seen_ids.insert(record.question_id.clone()) {
            return Err(CorpusError::DuplicateId(record.question_id.clone()));
        }
        let evidence = record
            .entity_pages
            .iter()
            .chain(record.search_results.iter())
            .find_map(|e| e.text().map(|t| (e.title.clone(), t)));
        let Some((title, text)) = evidence else {
            report.skipped.push(format!(
                "question {}: no usable evidence text",
                record.question_id
            ));
            continue;
        };

        let (group_key, title) = match record
            .entity_pages
            .iter()
            .find_map(|e| e.title.as_deref().filter(|t| !t.trim().is_empty()))
        {
            Some(entity_title) => (
                format!("entity:{}", slugify(entity_title)),
                entity_title.to_string(),
            ),
            None => {
                let digest = Sha256::digest(text.as_bytes());
                (
                    format!("text:{}", hex::encode(&digest[..8])),
                    title.unwrap_or_else(|| record.question_id.clone()),
                )
            }
        };

        let doc_idx = *groups.entry(group_key.clone()).or_insert_with(|| {
            let idx = corpus.documents.len();
            let id = match group_key.strip_prefix("entity:") {
                Some(slug) => format!("tqa-{slug}"),
                None => format!("tqa-{}", group_key.trim_start_matches("text:")),
            };
            corpus.documents.push(Document {
                id: DocumentId::new(id),
                title,
                content: text.trim().to_string(),
                source: Source::Triviaqa,
                synthetic_context: false,
                oversized: false,
            });
            idx
        });

        let mut answers = vec![record.answer.value.clone()];
        answers.extend(record.answer.aliases.iter().cloned());
        let gold_answers = dedup_answers(answers);
        if gold_answers.is_empty() || record.question.trim().is_empty() {
            report.skipped.push(format!(
                "question {}: empty question or answers",
                record.question_id
            ));
            continue;
        }
        corpus.questions.push(QAPair {
            id: QuestionId::new(record.question_id.clone()),
            document_id: corpus.documents[doc_idx].id.clone(),
            question: record.question.trim().to_string(),
            gold_answers,
            origin: Origin::Human,
            split: None,
        });
    }

    flag_oversized(&mut corpus.documents, DEFAULT_LENGTH_CAP_TOKENS);
    corpus.provenance.push(provenance_for(path)?);
    corpus.validate()?;
    Ok((corpus, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn write(value: &serde_json::Value) -> (tempfile::TempDir, std::path::PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trivia.json");
        std::fs::write(&path, value.to_string()).unwrap();
        (dir, path)
    }

    #[test]
    fn value_and_aliases_form_the_gold_set() {
        let (_dir, path) = write(&json!({"Data": [{
            "Question": "Which country is Berlin in?",
            "QuestionId": "tq1",
            "Answer": {"Value": "Germany",
                       "Aliases": ["Federal Republic of Germany", "Deutschland", "BRD", "FRG"]},
            "EntityPages": [{"Title": "Germany", "WikiContext": "Germany is a country in Europe. Berlin is its capital."}]
        }]}));
        let (corpus, report) = load_triviaqa(&path).unwrap();
        assert!(report.skipped.is_empty());
        assert_eq!(corpus.questions.len(), 1);
        // Value plus four aliases.
        assert_eq!(corpus.questions[0].gold_answers.len(), 5);
        assert_eq!(corpus.questions[0].gold_answers[0], "Germany");
    }

    #[test]
    fn records_without_evidence_are_skipped_and_counted() {
        let (_dir, path) = write(&json!({"Data": [
            {
                "Question": "No evidence?",
                "QuestionId": "tq1",
                "Answer": {"Value": "nothing", "Aliases": []},
                "EntityPages": []
            },
            {
                "Question": "Has evidence?",
                "QuestionId": "tq2",
                "Answer": {"Value": "yes", "Aliases": []},
                "EntityPages": [{"Title": "Page", "WikiContext": "Some page text."}]
            }
        ]}));
        let (corpus, report) = load_triviaqa(&path).unwrap();
        assert_eq!(corpus.questions.len(), 1);
        assert_eq!(report.skipped.len(), 1);
        assert!(report.skipped[0].contains("tq1"));
    }

    #[test]
    fn records_sharing_an_entity_page_share_one_document() {
        let (_dir, path) = write(&json!({"Data": [
            {
                "Question": "Q one?",
                "QuestionId": "tq1",
                "Answer": {"Value": "a1", "Aliases": []},
                "EntityPages": [{"Title": "Shared Page", "WikiContext": "Shared evidence text."}]
            },
            {
                "Question": "Q two?",
                "QuestionId": "tq2",
                "Answer": {"Value": "a2", "Aliases": []},
                "EntityPages": [{"Title": "Shared Page", "WikiContext": "Shared evidence text."}]
            }
        ]}));
        let (corpus, _) = load_triviaqa(&path).unwrap();
        assert_eq!(corpus.documents.len(), 1);
        assert_eq!(corpus.questions.len(), 2);
        assert_eq!(
            corpus.questions[0].document_id,
            corpus.questions[1].document_id
        );
    }

    #[test]
    fn duplicate_question_ids_error() {
        let record = json!({
            "Question": "Q?",
            "QuestionId": "same",
            "Answer": {"Value": "a", "Aliases": []},
            "EntityPages": [{"Title": "P", "WikiContext": "text"}]
        });
        let (_dir, path) = write(&json!({"Data": [record, record]}));
        assert!(matches!(
            load_triviaqa(&path),
            Err(CorpusError::DuplicateId(_))
        ));
    }

    #[test]
    fn bare_record_lists_are_accepted() {
        let (_dir, path) = write(&json!([{
            "Question": "Q?",
            "QuestionId": "tq1",
            "Answer": {"Value": "a", "Aliases": []},
            "EntityPages": [{"Title": "P", "WikiContext": "page text"}]
        }]));
        let (corpus, _) = load_triviaqa(&path).unwrap();
        assert_eq!(corpus.questions.len(), 1);
    }

    #[test]
    fn search_context_is_accepted_as_evidence() {
        let (_dir, path) = write(&json!({"Data": [{
            "Question": "Q?",
            "QuestionId": "tq1",
            "Answer": {"Value": "a", "Aliases": []},
            "SearchResults": [{"Title": "Result", "SearchContext": "Search snippet text."}]
        }]}));
        let (corpus, _) = load_triviaqa(&path).unwrap();
        assert_eq!(corpus.documents.len(), 1);
        assert_eq!(corpus.documents[0].content, "Search snippet text.");
    }
}
