//! SQuAD v1.1 adapter: one document per paragraph, all answer texts as
//! aliases.

use std::collections::BTreeSet;
use std::path::Path;

use serde::Deserialize;

use super::{
    dedup_answers, flag_oversized, io_err, json_err, provenance_for, slugify, Corpus, CorpusError,
    Document, LoadReport, Origin, QAPair, Source, DEFAULT_LENGTH_CAP_TOKENS,
};
use crate::ids::{DocumentId, QuestionId};

#[derive(Deserialize)]
struct SquadFile {
    data: Vec<SquadArticle>,
}

#[derive(Deserialize)]
struct SquadArticle {
    #[serde(default)]
    title: String,
    paragraphs: Vec<SquadParagraph>,
}

#[derive(Deserialize)]
struct SquadParagraph {
    context: String,
    qas: Vec<SquadQuestion>,
}

#[derive(Deserialize)]
struct SquadQuestion {
    id: String,
    question: String,
    answers: Vec<SquadAnswer>,
}

#[derive(Deserialize)]
struct SquadAnswer {
    text: String,
}

/// Loads a SQuAD v1.1 file (`data -> paragraphs -> qas`).
pub fn load_squad(path: &Path) -> Result<(Corpus, LoadReport), CorpusError> {
    let raw = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let parsed: SquadFile = serde_json::from_str(&raw).map_err(|e| json_err(path, e))?;

    let mut corpus = Corpus::default();
    let mut report = LoadReport::default();
    let mut seen_questions = BTreeSet::new();

    for (article_idx, article) in parsed.data.iter().enumerate() {
        let title = if article.title.trim().is_empty() {
            format!("article-{article_idx}")
        } else {
            article.title.trim().to_string()
        };
        for (paragraph_idx, paragraph) in article.paragraphs.iter().enumerate() {
            if paragraph.context.trim().is_empty() {
                report
                    .skipped
                    .push(format!("{title} paragraph {paragraph_idx}: empty context"));
                continue;
            }
            let doc_id = DocumentId::new(format!("squad-{}-p{paragraph_idx}", slugify(&title)));
            corpus.documents.push(Document {
                id: doc_id.clone(),
                title: title.clone(),
                content: paragraph.context.trim().to_string(),
                source: Source::Squad,
                synthetic_context: false,
                oversized: false,
            });
            for qa in &paragraph.qas {
                if !seen_questions.insert(qa.id.clone()) {
                    return Err(CorpusError::DuplicateId(qa.id.clone()));
                }
                let answers = dedup_answers(qa.answers.iter().map(|a| a.text.clone()));
                if answers.is_empty() || qa.question.trim().is_empty() {
                    report
                        .skipped
                        .push(format!("question {}: empty question or answers", qa.id));
                    continue;
                }
                corpus.questions.push(QAPair {
                    id: QuestionId::new(qa.id.clone()),
                    document_id: doc_id.clone(),
                    question: qa.question.trim().to_string(),
                    gold_answers: answers,
                    origin: Origin::Human,
                    split: None,
                });
            }
        }
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

    fn sample_file() -> serde_json::Value {
        json!({
            "version": "1.1",
            "data": [
                {
                    "title": "Paris",
                    "paragraphs": [
                        {
                            "context": "Paris is the capital of France. The Seine runs through it.",
                            "qas": [
                                {"id": "q1", "question": "What is the capital of France?",
                                 "answers": [{"text": "Paris", "answer_start": 0}]},
                                {"id": "q2", "question": "Which river runs through Paris?",
                                 "answers": [{"text": "Seine", "answer_start": 36},
                                             {"text": "the Seine", "answer_start": 32}]}
                            ]
                        },
                        {
                            "context": "The Eiffel Tower was completed in 1889.",
                            "qas": [
                                {"id": "q3", "question": "When was the Eiffel Tower completed?",
                                 "answers": [{"text": "1889", "answer_start": 34}]},
                                {"id": "q4", "question": "What was completed in 1889?",
                                 "answers": [{"text": "The Eiffel Tower", "answer_start": 0}]},
                                {"id": "q5", "question": "Where is the Eiffel Tower?",
                                 "answers": [{"text": "Paris", "answer_start": 0}]},
                                {"id": "q6", "question": "How tall is it?",
                                 "answers": [{"text": "300 metres", "answer_start": 0}]},
                                {"id": "q7", "question": "Who designed it?",
                                 "answers": [{"text": "Gustave Eiffel", "answer_start": 0}]}
                            ]
                        }
                    ]
                }
            ]
        })
    }

    #[test]
    fn documents_match_paragraph_count() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("squad.json");
        std::fs::write(&path, sample_file().to_string()).unwrap();
        let (corpus, report) = load_squad(&path).unwrap();

        // Independent count: paragraphs in the raw JSON.
        let raw: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        let paragraph_count: usize = raw["data"]
            .as_array()
            .unwrap()
            .iter()
            .map(|a| a["paragraphs"].as_array().unwrap().len())
            .sum();
        assert_eq!(corpus.documents.len(), paragraph_count);
        assert!(report.skipped.is_empty());
        assert_eq!(corpus.provenance.len(), 1);
    }

    #[test]
    fn paragraph_questions_share_one_document() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("squad.json");
        std::fs::write(&path, sample_file().to_string()).unwrap();
        let (corpus, _) = load_squad(&path).unwrap();

        let second_doc = &corpus.documents[1].id;
        let owned = corpus.questions_for(second_doc, None);
        assert_eq!(owned.len(), 5);
        assert!(owned.iter().all(|q| q.origin == Origin::Human));

        // Multi-answer entries become alias lists.
        let q2 = corpus
            .questions
            .iter()
            .find(|q| q.id.as_str() == "q2")
            .unwrap();
        assert_eq!(q2.gold_answers, vec!["Seine", "the Seine"]);
    }

    #[test]
    fn truncated_files_are_a_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("broken.json");
        std::fs::write(&path, r#"{"data": [{"title": "x", "paragra"#).unwrap();
        assert!(matches!(load_squad(&path), Err(CorpusError::Parse { .. })));
    }

    #[test]
    fn missing_fields_are_a_schema_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("noqas.json");
        std::fs::write(
            &path,
            json!({"data": [{"title": "x", "paragraphs": [{"context": "text"}]}]}).to_string(),
        )
        .unwrap();
        match load_squad(&path) {
            Err(CorpusError::Schema { field, .. }) => assert_eq!(field, "qas"),
            other => panic!("expected Schema error, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_question_ids_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dup.json");
        std::fs::write(
            &path,
            json!({"data": [{"title": "x", "paragraphs": [{
                "context": "text here",
                "qas": [
                    {"id": "same", "question": "a?", "answers": [{"text": "a"}]},
                    {"id": "same", "question": "b?", "answers": [{"text": "b"}]}
                ]
            }]}]})
            .to_string(),
        )
        .unwrap();
        assert!(matches!(
            load_squad(&path),
            Err(CorpusError::DuplicateId(_))
        ));
    }
}
