//! Unified corpus model and dataset adapters.
//!
//! Loaders turn SQuAD v1.1, TriviaQA and TruthfulQA files into one internal
//! shape: documents plus question/answer pairs with alias sets. Questions are
//! then split per document into refine / validation / test roles with a
//! seeded shuffle, and documents with too few test questions are filtered
//! out. The internal format is a line-delimited record file so downstream
//! stages never touch upstream dataset layouts.

mod squad;
mod triviaqa;
mod truthfulqa;

pub use squad::load_squad;
pub use triviaqa::load_triviaqa;
pub use truthfulqa::load_truthfulqa;

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::ids::{DocumentId, QuestionId};
use crate::metrics::{count_tokens, TokenCountScheme};

/// Documents longer than this many whitespace tokens are flagged, never
/// truncated.
pub const DEFAULT_LENGTH_CAP_TOKENS: u64 = 16_000;

/// Current on-disk schema of the internal corpus file.
pub const CORPUS_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot parse {path}: {detail}")]
    Parse { path: String, detail: String },
    #[error("{path} is missing required field `{field}`")]
    Schema { path: String, field: String },
    #[error("io error on {path}: {detail}")]
    Io { path: String, detail: String },
    #[error("duplicate id: {0}")]
    DuplicateId(String),
    #[error("question {question} references unknown document {document}")]
    UnresolvedDocument {
        question: QuestionId,
        document: DocumentId,
    },
    #[error("invalid split fractions: {0}")]
    InvalidFractions(String),
    #[error("operation requires assigned splits but question {0} has none")]
    SplitsUnassigned(QuestionId),
}

fn io_err(path: &Path, e: std::io::Error) -> CorpusError {
    CorpusError::Io {
        path: path.display().to_string(),
        detail: e.to_string(),
    }
}

/// Maps a serde_json failure to Schema when a required field is missing,
/// otherwise Parse (with position information from serde).
fn json_err(path: &Path, e: serde_json::Error) -> CorpusError {
    let detail = e.to_string();
    if let Some(rest) = detail.strip_prefix("missing field `") {
        if let Some(field) = rest.split('`').next() {
            return CorpusError::Schema {
                path: path.display().to_string(),
                field: field.to_string(),
            };
        }
    }
    CorpusError::Parse {
        path: path.display().to_string(),
        detail,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Squad,
    Triviaqa,
    Truthfulqa,
    Custom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Human,
    Synthetic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Refine,
    Validation,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub id: DocumentId,
    pub title: String,
    pub content: String,
    pub source: Source,
    /// Content was synthesized rather than taken from a source passage.
    #[serde(default)]
    pub synthetic_context: bool,
    /// Exceeds the length cap; loaded whole, flagged for the caller.
    #[serde(default)]
    pub oversized: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QAPair {
    pub id: QuestionId,
    pub document_id: DocumentId,
    pub question: String,
    pub gold_answers: Vec<String>,
    pub origin: Origin,
    /// None until `assign_splits` has run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProvenanceEntry {
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub documents: Vec<Document>,
    pub questions: Vec<QAPair>,
    pub provenance: Vec<ProvenanceEntry>,
}

/// What a loader or corpus transform skipped or removed.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LoadReport {
    /// Records dropped as unusable, with the reason.
    pub skipped: Vec<String>,
    /// Documents removed by filtering or split exclusion.
    pub removed_documents: Vec<DocumentId>,
    pub removed_questions: usize,
    pub duplicate_questions_merged: usize,
}

impl LoadReport {
    pub fn merge(&mut self, other: LoadReport) {
        self.skipped.extend(other.skipped);
        self.removed_documents.extend(other.removed_documents);
        self.removed_questions += other.removed_questions;
        self.duplicate_questions_merged += other.duplicate_questions_merged;
    }
}

impl Corpus {
    pub fn document(&self, id: &DocumentId) -> Option<&Document> {
        self.documents.iter().find(|d| &d.id == id)
    }

    /// Questions of one document, optionally restricted to a split, in corpus
    /// order.
    pub fn questions_for(&self, document: &DocumentId, split: Option<Split>) -> Vec<&QAPair> {
        self.questions
            .iter()
            .filter(|q| &q.document_id == document && (split.is_none() || q.split == split))
            .collect()
    }

    /// Checks id uniqueness, reference integrity and non-empty alias sets.
    pub fn validate(&self) -> Result<(), CorpusError> {
        let mut doc_ids = BTreeSet::new();
        for doc in &self.documents {
            if doc.content.trim().is_empty() {
                return Err(CorpusError::Parse {
                    path: doc.id.to_string(),
                    detail: "document content is empty".into(),
                });
            }
            if !doc_ids.insert(doc.id.clone()) {
                return Err(CorpusError::DuplicateId(doc.id.to_string()));
            }
        }
        let mut question_ids = BTreeSet::new();
        for q in &self.questions {
            if !question_ids.insert(q.id.clone()) {
                return Err(CorpusError::DuplicateId(q.id.to_string()));
            }
            if !doc_ids.contains(&q.document_id) {
                return Err(CorpusError::UnresolvedDocument {
                    question: q.id.clone(),
                    document: q.document_id.clone(),
                });
            }
            if q.gold_answers.is_empty() {
                return Err(CorpusError::Parse {
                    path: q.id.to_string(),
                    detail: "question has no gold answers".into(),
                });
            }
        }
        Ok(())
    }
}

pub(crate) fn flag_oversized(documents: &mut [Document], cap: u64) {
    for doc in documents {
        let tokens = count_tokens(&doc.content, &TokenCountScheme::Whitespace)
            .expect("whitespace counting is infallible");
        doc.oversized = tokens > cap;
    }
}

pub(crate) fn provenance_for(path: &Path) -> Result<ProvenanceEntry, CorpusError> {
    let bytes = std::fs::read(path).map_err(|e| io_err(path, e))?;
    let digest = Sha256::digest(&bytes);
    Ok(ProvenanceEntry {
        file: path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string()),
        sha256: hex::encode(digest),
    })
}

pub(crate) fn slugify(input: &str) -> String {
    let mut slug = String::new();
    let mut last_dash = false;
    for ch in input.chars() {
        let c = ch.to_ascii_lowercase();
        if c.is_ascii_alphanumeric() {
            slug.push(c);
            last_dash = false;
        } else if !last_dash && !slug.is_empty() {
            slug.push('-');
            last_dash = true;
        }
    }
    slug.trim_matches('-').to_string()
}

pub(crate) fn dedup_answers<I: IntoIterator<Item = String>>(values: I) -> Vec<String> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for value in values {
        let trimmed = value.trim().to_string();
        if trimmed.is_empty() {
            continue;
        }
        if seen.insert(trimmed.clone()) {
            out.push(trimmed);
        }
    }
    out
}

/// Fractions of each document's questions assigned to the three roles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub refine: f64,
    pub validation: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self {
            refine: 0.4,
            validation: 0.2,
            test: 0.4,
        }
    }
}

impl SplitFractions {
    pub fn new(refine: f64, validation: f64, test: f64) -> Result<Self, CorpusError> {
        let fractions = Self {
            refine,
            validation,
            test,
        };
        fractions.validate()?;
        Ok(fractions)
    }

    fn validate(&self) -> Result<(), CorpusError> {
        let parts = [self.refine, self.validation, self.test];
        if parts.iter().any(|f| *f < 0.0 || !f.is_finite()) {
            return Err(CorpusError::InvalidFractions(
                "fractions must be non-negative and finite".into(),
            ));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(CorpusError::InvalidFractions(format!(
                "fractions sum to {sum}, expected 1"
            )));
        }
        if parts.iter().all(|f| *f == 0.0) {
            return Err(CorpusError::InvalidFractions(
                "all fractions are zero".into(),
            ));
        }
        Ok(())
    }

    fn non_zero_splits(&self) -> usize {
        [self.refine, self.validation, self.test]
            .iter()
            .filter(|f| **f > 0.0)
            .count()
    }

    /// Largest-remainder apportionment of `n` questions, then fixed up so
    /// every non-zero-fraction split keeps at least one question.
    fn counts_for(&self, n: usize) -> [usize; 3] {
        let fractions = [self.refine, self.validation, self.test];
        let exact: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
        let mut counts: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
        let mut assigned: usize = counts.iter().sum();
        // Distribute the remainder by descending fractional part, ties toward
        // the earlier split.
        let mut order: Vec<usize> = (0..3).collect();
        order.sort_by(|&a, &b| {
            let fa = exact[a] - exact[a].floor();
            let fb = exact[b] - exact[b].floor();
            fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
        });
        let mut cursor = 0;
        while assigned < n {
            counts[order[cursor % 3]] += 1;
            assigned += 1;
            cursor += 1;
        }
        // Guarantee representation for every non-zero fraction.
        for i in 0..3 {
            if fractions[i] > 0.0 && counts[i] == 0 {
                let donor = (0..3).filter(|&j| counts[j] > 1).max_by_key(|&j| counts[j]);
                if let Some(j) = donor {
                    counts[j] -= 1;
                    counts[i] += 1;
                }
            }
        }
        [counts[0], counts[1], counts[2]]
    }
}

fn split_rng(seed: u64, document: &DocumentId) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(document.as_str().as_bytes());
    let digest = hasher.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}

/// Assigns every question a split via a per-document seeded shuffle.
///
/// Documents that cannot give at least one question to each non-zero split
/// are excluded and recorded in the report. Identical (corpus, fractions,
/// seed) inputs reproduce bit-identical assignments.
pub fn assign_splits(
    corpus: &Corpus,
    fractions: SplitFractions,
    seed: u64,
) -> Result<(Corpus, LoadReport), CorpusError> {
    fractions.validate()?;
    let mut report = LoadReport::default();
    let needed = fractions.non_zero_splits();

    let mut by_document: BTreeMap<DocumentId, Vec<usize>> = BTreeMap::new();
    for (idx, q) in corpus.questions.iter().enumerate() {
        by_document
            .entry(q.document_id.clone())
            .or_default()
            .push(idx);
    }

    let mut assigned = corpus.clone();
    let mut excluded: BTreeSet<DocumentId> = BTreeSet::new();

    for doc in &corpus.documents {
        let indices = by_document.get(&doc.id).cloned().unwrap_or_default();
        if indices.len() < needed {
            excluded.insert(doc.id.clone());
            report.removed_documents.push(doc.id.clone());
            report.removed_questions += indices.len();
            report.skipped.push(format!(
                "document {} has {} question(s), cannot fill {} split(s)",
                doc.id,
                indices.len(),
                needed
            ));
            continue;
        }
        let counts = fractions.counts_for(indices.len());
        let mut shuffled = indices.clone();
        shuffled.shuffle(&mut split_rng(seed, &doc.id));
        for (rank, &question_idx) in shuffled.iter().enumerate() {
            let split = if rank < counts[0] {
                Split::Refine
            } else if rank < counts[0] + counts[1] {
                Split::Validation
            } else {
                Split::Test
            };
            assigned.questions[question_idx].split = Some(split);
        }
    }

    if !excluded.is_empty() {
        assigned.documents.retain(|d| !excluded.contains(&d.id));
        assigned
            .questions
            .retain(|q| !excluded.contains(&q.document_id));
    }
    Ok((assigned, report))
}

/// Removes documents (and their questions) holding fewer than `k` test-split
/// questions. Splits must already be assigned.
pub fn filter_min_test_questions(
    corpus: &Corpus,
    k: usize,
) -> Result<(Corpus, LoadReport), CorpusError> {
    if let Some(q) = corpus.questions.iter().find(|q| q.split.is_none()) {
        return Err(CorpusError::SplitsUnassigned(q.id.clone()));
    }
    let mut test_counts: BTreeMap<&DocumentId, usize> = BTreeMap::new();
    for q in &corpus.questions {
        if q.split == Some(Split::Test) {
            *test_counts.entry(&q.document_id).or_insert(0) += 1;
        }
    }
    let keep: BTreeSet<DocumentId> = corpus
        .documents
        .iter()
        .filter(|d| test_counts.get(&d.id).copied().unwrap_or(0) >= k)
        .map(|d| d.id.clone())
        .collect();

    let mut report = LoadReport::default();
    let mut filtered = corpus.clone();
    for doc in &corpus.documents {
        if !keep.contains(&doc.id) {
            report.removed_documents.push(doc.id.clone());
        }
    }
    let before = filtered.questions.len();
    filtered.documents.retain(|d| keep.contains(&d.id));
    filtered.questions.retain(|q| keep.contains(&q.document_id));
    report.removed_questions = before - filtered.questions.len();
    Ok((filtered, report))
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum CorpusLine {
    Header {
        schema_version: u32,
        provenance: Vec<ProvenanceEntry>,
    },
    Document(Document),
    Question(QAPair),
}

/// Writes the corpus as a line-delimited record file.
pub fn save_corpus(corpus: &Corpus, path: &Path) -> Result<(), CorpusError> {
    let mut out = Vec::new();
    let mut write_line = |line: &CorpusLine| -> Result<(), CorpusError> {
        let json = serde_json::to_string(line).map_err(|e| json_err(path, e))?;
        out.extend_from_slice(json.as_bytes());
        out.push(b'\n');
        Ok(())
    };
    write_line(&CorpusLine::Header {
        schema_version: CORPUS_SCHEMA_VERSION,
        provenance: corpus.provenance.clone(),
    })?;
    for doc in &corpus.documents {
        write_line(&CorpusLine::Document(doc.clone()))?;
    }
    for q in &corpus.questions {
        write_line(&CorpusLine::Question(q.clone()))?;
    }
    std::fs::write(path, out).map_err(|e| io_err(path, e))
}

/// Reads a corpus back from its line-delimited file.
pub fn load_corpus(path: &Path) -> Result<Corpus, CorpusError> {
    let file = std::fs::File::open(path).map_err(|e| io_err(path, e))?;
    let reader = BufReader::new(file);
    let mut corpus = Corpus::default();
    let mut saw_header = false;
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: CorpusLine = serde_json::from_str(&line).map_err(|e| CorpusError::Parse {
            path: path.display().to_string(),
            detail: format!("line {}: {e}", i + 1),
        })?;
        match record {
            CorpusLine::Header {
                schema_version,
                provenance,
            } => {
                if schema_version != CORPUS_SCHEMA_VERSION {
                    return Err(CorpusError::Parse {
                        path: path.display().to_string(),
                        detail: format!("unsupported schema version {schema_version}"),
                    });
                }
                corpus.provenance = provenance;
                saw_header = true;
            }
            CorpusLine::Document(doc) => corpus.documents.push(doc),
            CorpusLine::Question(q) => corpus.questions.push(q),
        }
    }
    if !saw_header {
        return Err(CorpusError::Parse {
            path: path.display().to_string(),
            detail: "missing header line".into(),
        });
    }
    corpus.validate()?;
    Ok(corpus)
}

/// Appends a writer-friendly save: the temp file lands first, then an atomic
/// rename replaces any previous corpus file.
pub fn save_corpus_atomic(corpus: &Corpus, path: &Path) -> Result<(), CorpusError> {
    let tmp = path.with_extension("tmp");
    save_corpus(corpus, &tmp)?;
    std::fs::rename(&tmp, path).map_err(|e| io_err(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(id: &str, content: &str) -> Document {
        Document {
            id: DocumentId::new(id),
            title: format!("Title {id}"),
            content: content.to_string(),
            source: Source::Custom,
            synthetic_context: false,
            oversized: false,
        }
    }

    fn question(id: &str, doc_id: &str) -> QAPair {
        QAPair {
            id: QuestionId::new(id),
            document_id: DocumentId::new(doc_id),
            question: format!("Question {id}?"),
            gold_answers: vec![format!("answer {id}")],
            origin: Origin::Human,
            split: None,
        }
    }

    fn corpus_with(n_docs: usize, questions_per_doc: usize) -> Corpus {
        let mut corpus = Corpus::default();
        for d in 0..n_docs {
            let doc_id = format!("doc{d}");
            corpus.documents.push(doc(&doc_id, "some content here"));
            for q in 0..questions_per_doc {
                corpus
                    .questions
                    .push(question(&format!("{doc_id}-q{q}"), &doc_id));
            }
        }
        corpus
    }

    #[test]
    fn split_counts_follow_fractions_exactly_when_divisible() {
        let corpus = corpus_with(1, 10);
        let fractions = SplitFractions::new(0.4, 0.2, 0.4).unwrap();
        let (assigned, report) = assign_splits(&corpus, fractions, 7).unwrap();
        assert!(report.removed_documents.is_empty());
        let count = |s: Split| {
            assigned
                .questions
                .iter()
                .filter(|q| q.split == Some(s))
                .count()
        };
        assert_eq!(count(Split::Refine), 4);
        assert_eq!(count(Split::Validation), 2);
        assert_eq!(count(Split::Test), 4);

        // Reproducible under the same seed.
        let (again, _) = assign_splits(&corpus, fractions, 7).unwrap();
        assert_eq!(assigned, again);
    }

    #[test]
    fn degenerate_fractions_put_everything_in_one_split() {
        let corpus = corpus_with(2, 5);
        let fractions = SplitFractions::new(1.0, 0.0, 0.0).unwrap();
        let (assigned, _) = assign_splits(&corpus, fractions, 1).unwrap();
        assert!(assigned
            .questions
            .iter()
            .all(|q| q.split == Some(Split::Refine)));
    }

    #[test]
    fn seed_changes_permutation_but_not_counts() {
        let corpus = corpus_with(1, 12);
        let fractions = SplitFractions::default();
        let reference = assign_splits(&corpus, fractions, 0).unwrap().0;
        let ref_splits: Vec<Option<Split>> = reference.questions.iter().map(|q| q.split).collect();

        let mut any_different = false;
        for seed in 1..=100u64 {
            let (assigned, _) = assign_splits(&corpus, fractions, seed).unwrap();
            let splits: Vec<Option<Split>> = assigned.questions.iter().map(|q| q.split).collect();
            let count = |s: Split| splits.iter().filter(|x| **x == Some(s)).count();
            assert_eq!(
                (
                    count(Split::Refine),
                    count(Split::Validation),
                    count(Split::Test)
                ),
                (5, 2, 5)
            );
            if splits != ref_splits {
                any_different = true;
            }
        }
        assert!(any_different, "100 seeds all produced one permutation");
    }

    #[test]
    fn every_question_lands_in_exactly_one_split() {
        let corpus = corpus_with(3, 7);
        let (assigned, _) = assign_splits(&corpus, SplitFractions::default(), 42).unwrap();
        assert_eq!(assigned.questions.len(), 21);
        assert!(assigned.questions.iter().all(|q| q.split.is_some()));
        // Non-zero fractions each get at least one question per document.
        for d in &assigned.documents {
            for split in [Split::Refine, Split::Validation, Split::Test] {
                assert!(
                    !assigned.questions_for(&d.id, Some(split)).is_empty(),
                    "document {} has empty {split:?} split",
                    d.id
                );
            }
        }
    }

    #[test]
    fn documents_too_small_for_the_splits_are_excluded() {
        let mut corpus = corpus_with(1, 8);
        corpus.documents.push(doc("tiny", "short content"));
        corpus.questions.push(question("tiny-q0", "tiny"));
        corpus.questions.push(question("tiny-q1", "tiny"));

        let (assigned, report) = assign_splits(&corpus, SplitFractions::default(), 3).unwrap();
        assert_eq!(report.removed_documents, vec![DocumentId::new("tiny")]);
        assert_eq!(report.removed_questions, 2);
        assert!(assigned.document(&DocumentId::new("tiny")).is_none());
    }

    #[test]
    fn fraction_validation_rejects_bad_inputs() {
        assert!(SplitFractions::new(0.5, 0.5, 0.5).is_err());
        assert!(SplitFractions::new(-0.2, 0.6, 0.6).is_err());
        assert!(SplitFractions::new(0.4, 0.2, 0.4).is_ok());
    }

    #[test]
    fn min_test_question_filter() {
        let corpus = corpus_with(2, 10);
        let (mut assigned, _) = assign_splits(&corpus, SplitFractions::default(), 5).unwrap();
        // Demote doc1's test questions until only two remain.
        let mut demoted = 0;
        for q in assigned.questions.iter_mut() {
            if q.document_id.as_str() == "doc1" && q.split == Some(Split::Test) && demoted < 2 {
                q.split = Some(Split::Refine);
                demoted += 1;
            }
        }
        let (filtered, report) = filter_min_test_questions(&assigned, 3).unwrap();
        assert_eq!(report.removed_documents, vec![DocumentId::new("doc1")]);
        assert!(filtered.document(&DocumentId::new("doc0")).is_some());
        assert!(filtered.document(&DocumentId::new("doc1")).is_none());

        // Exactly three test questions are retained.
        let (kept, report) = filter_min_test_questions(&assigned, 4).unwrap();
        let doc0_tests = kept.questions_for(&DocumentId::new("doc0"), Some(Split::Test));
        assert!(
            doc0_tests.len() >= 4 || report.removed_documents.contains(&DocumentId::new("doc0"))
        );

        // k = 1 removes nothing that has a test question.
        let (all, report) = filter_min_test_questions(&assigned, 1).unwrap();
        assert!(report.removed_documents.is_empty());
        assert_eq!(all.documents.len(), 2);
    }

    #[test]
    fn filter_requires_assigned_splits() {
        let corpus = corpus_with(1, 4);
        assert!(matches!(
            filter_min_test_questions(&corpus, 3),
            Err(CorpusError::SplitsUnassigned(_))
        ));
    }

    #[test]
    fn corpus_file_round_trips() {
        let corpus = {
            let (mut c, _) =
                assign_splits(&corpus_with(2, 6), SplitFractions::default(), 11).unwrap();
            c.provenance.push(ProvenanceEntry {
                file: "source.json".into(),
                sha256: "ab".repeat(32),
            });
            c
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.jsonl");
        save_corpus(&corpus, &path).unwrap();
        let loaded = load_corpus(&path).unwrap();
        assert_eq!(corpus, loaded);

        save_corpus(&loaded, &path).unwrap();
        let bytes_a = std::fs::read(&path).unwrap();
        save_corpus(&loaded, &path).unwrap();
        let bytes_b = std::fs::read(&path).unwrap();
        assert_eq!(bytes_a, bytes_b);
    }

    #[test]
    fn corpus_validation_catches_broken_references() {
        let mut corpus = corpus_with(1, 3);
        corpus.questions.push(question("orphan", "nowhere"));
        assert!(matches!(
            corpus.validate(),
            Err(CorpusError::UnresolvedDocument { .. })
        ));

        let mut dup = corpus_with(1, 2);
        let repeat = dup.questions[0].clone();
        dup.questions.push(repeat);
        assert!(matches!(dup.validate(), Err(CorpusError::DuplicateId(_))));
    }

    #[test]
    fn oversized_documents_are_flagged_not_truncated() {
        let long_content = vec!["tok"; 20].join(" ");
        let mut docs = vec![doc("big", &long_content), doc("small", "a b c")];
        flag_oversized(&mut docs, 10);
        assert!(docs[0].oversized);
        assert!(!docs[1].oversized);
        assert_eq!(docs[0].content, long_content);
    }
}
