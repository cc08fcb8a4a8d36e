//! Persistence: chain traces, versioned summary records, the plain-text
//! summary cache file, and the cache ask/refine entry point.
//!
//! Layout under one store root:
//!   traces/     one line-delimited file per chain, addressed by
//!               (document id, config fingerprint)
//!   summaries/  one directory per document, v0001.json, v0002.json, ...
//!   reports/    experiment reports
//!   events.jsonl  appended cache events
//!
//! Writers take a per-document advisory lock; trace writes land in a temp
//! file and move into place atomically.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Document;
use crate::dialectic::{self, ChainConfig, ChainTrace, IterationRecord};
use crate::gateway::{ChatRequest, Gateway, GatewayError};
use crate::ids::{DocumentId, QuestionId};
use crate::metrics::{f1_vs_aliases, is_idk};
use crate::prompts::{PromptError, PromptLibrary};
use crate::ser::f6_opt;

pub const TRACE_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("io error on {path}: {detail}")]
    Io { path: String, detail: String },
    #[error("serialization failure: {0}")]
    Serde(String),
    #[error("another writer holds the lock for document {0}")]
    LockHeld(DocumentId),
    #[error("version {version} for document {document} is not the next version")]
    VersionConflict { document: DocumentId, version: u32 },
    #[error("summary record has empty text")]
    EmptySummary,
    #[error("no trace for document {document} under fingerprint {fingerprint}")]
    TraceMissing {
        document: DocumentId,
        fingerprint: String,
    },
    #[error("trace file {path} is malformed: {detail}")]
    MalformedTrace { path: String, detail: String },
    #[error("no summary records supplied")]
    NoRecords,
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("refinement failed: {0}")]
    Dialectic(String),
}

fn io_err(path: &Path, e: std::io::Error) -> StoreError {
    StoreError::Io {
        path: path.display().to_string(),
        detail: e.to_string(),
    }
}

/// One cached summary version for a document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRecord {
    pub document_id: DocumentId,
    pub version: u32,
    pub summary_text: String,
    /// Trace file name this summary came from; None for human-edited records.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chain_trace_ref: Option<String>,
    /// Unix seconds.
    pub created_at: u64,
    pub config_fingerprint: String,
    #[serde(default)]
    pub human_edited: bool,
    /// Produced by refining a human-edited summary; awaiting review.
    #[serde(default)]
    pub needs_review: bool,
    /// The refinement that produced this version returned unchanged text.
    #[serde(default)]
    pub stalled: bool,
}

impl SummaryRecord {
    fn validate(&self) -> Result<(), StoreError> {
        if self.summary_text.trim().is_empty() {
            return Err(StoreError::EmptySummary);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CacheOutcome {
    Hit,
    MissRefined,
    MissUnrefinable,
}

/// A question asked against the cache and what happened.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEvent {
    pub document_id: DocumentId,
    pub question: String,
    pub outcome: CacheOutcome,
    pub answer: String,
    #[serde(default, skip_serializing_if = "Option::is_none", with = "f6_opt")]
    pub f1_estimate: Option<f64>,
    /// Set when a miss produced a new summary version.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub new_version: Option<u32>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum TraceLine {
    TraceHeader {
        schema_version: u32,
        document_id: DocumentId,
        config: ChainConfig,
        best_iteration: u32,
        #[serde(with = "crate::ser::f6")]
        correct_f1_validation: f64,
        provider_fingerprint: String,
    },
    Iteration(IterationRecord),
}

fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '-' | '.' | '_') {
                c
            } else {
                '_'
            }
        })
        .collect()
}

/// Removes its lock file on drop.
struct DocLock {
    path: PathBuf,
}

impl DocLock {
    fn acquire(dir: &Path, document: &DocumentId) -> Result<Self, StoreError> {
        let path = dir.join(format!("{}.lock", sanitize(document.as_str())));
        match std::fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
        {
            Ok(_) => Ok(Self { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(StoreError::LockHeld(document.clone()))
            }
            Err(e) => Err(io_err(&path, e)),
        }
    }
}

impl Drop for DocLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

pub struct Store {
    root: PathBuf,
}

impl Store {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        for sub in ["traces", "summaries", "reports", "locks"] {
            let dir = root.join(sub);
            std::fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
        }
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn traces_dir(&self) -> PathBuf {
        self.root.join("traces")
    }

    pub fn reports_dir(&self) -> PathBuf {
        self.root.join("reports")
    }

    fn trace_file_name(document: &DocumentId, fingerprint: &str) -> String {
        format!(
            "{}--{}.jsonl",
            sanitize(document.as_str()),
            sanitize(fingerprint)
        )
    }

    fn trace_bytes(trace: &ChainTrace) -> Result<Vec<u8>, StoreError> {
        let mut out = Vec::new();
        let header = TraceLine::TraceHeader {
            schema_version: TRACE_SCHEMA_VERSION,
            document_id: trace.document_id.clone(),
            config: trace.config.clone(),
            best_iteration: trace.best_iteration,
            correct_f1_validation: trace.correct_f1_validation,
            provider_fingerprint: trace.provider_fingerprint.clone(),
        };
        let mut push = |line: &TraceLine| -> Result<(), StoreError> {
            let json = serde_json::to_string(line).map_err(|e| StoreError::Serde(e.to_string()))?;
            out.extend_from_slice(json.as_bytes());
            out.push(b'\n');
            Ok(())
        };
        push(&header)?;
        for record in &trace.iterations {
            push(&TraceLine::Iteration(record.clone()))?;
        }
        Ok(out)
    }

    /// Writes one line-delimited trace file, addressed by (document id,
    /// config fingerprint). Rewrites replace atomically.
    pub fn save_trace(&self, trace: &ChainTrace) -> Result<PathBuf, StoreError> {
        let name = Self::trace_file_name(&trace.document_id, &trace.config.fingerprint());
        let path = self.traces_dir().join(&name);
        let bytes = Self::trace_bytes(trace)?;
        let tmp = path.with_extension("jsonl.tmp");
        std::fs::write(&tmp, &bytes).map_err(|e| io_err(&tmp, e))?;
        std::fs::rename(&tmp, &path).map_err(|e| io_err(&path, e))?;
        Ok(path)
    }

    pub fn load_trace(
        &self,
        document: &DocumentId,
        fingerprint: &str,
    ) -> Result<ChainTrace, StoreError> {
        let path = self
            .traces_dir()
            .join(Self::trace_file_name(document, fingerprint));
        if !path.exists() {
            return Err(StoreError::TraceMissing {
                document: document.clone(),
                fingerprint: fingerprint.to_string(),
            });
        }
        load_trace_file(&path)
    }

    /// All trace files under the store, in stable (name) order.
    pub fn list_trace_files(&self) -> Result<Vec<PathBuf>, StoreError> {
        list_trace_files(&self.traces_dir())
    }

    fn summaries_dir(&self, document: &DocumentId) -> PathBuf {
        self.root
            .join("summaries")
            .join(sanitize(document.as_str()))
    }

    /// Versions present for a document, ascending.
    pub fn summary_versions(&self, document: &DocumentId) -> Result<Vec<u32>, StoreError> {
        let dir = self.summaries_dir(document);
        if !dir.exists() {
            return Ok(Vec::new());
        }
        let mut versions = Vec::new();
        for entry in std::fs::read_dir(&dir).map_err(|e| io_err(&dir, e))? {
            let entry = entry.map_err(|e| io_err(&dir, e))?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if let Some(version) = name
                .strip_prefix('v')
                .and_then(|s| s.strip_suffix(".json"))
                .and_then(|s| s.parse::<u32>().ok())
            {
                versions.push(version);
            }
        }
        versions.sort_unstable();
        Ok(versions)
    }

    pub fn next_version(&self, document: &DocumentId) -> Result<u32, StoreError> {
        Ok(self
            .summary_versions(document)?
            .last()
            .copied()
            .unwrap_or(0)
            + 1)
    }

    /// Saves a new summary version. Versions must be written in order and
    /// are never overwritten; a per-document advisory lock serializes
    /// writers.
    pub fn save_summary(&self, record: &SummaryRecord) -> Result<PathBuf, StoreError> {
        record.validate()?;
        let _lock = DocLock::acquire(&self.root.join("locks"), &record.document_id)?;
        let expected = self.next_version(&record.document_id)?;
        if record.version != expected {
            return Err(StoreError::VersionConflict {
                document: record.document_id.clone(),
                version: record.version,
            });
        }
        let dir = self.summaries_dir(&record.document_id);
        std::fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
        let path = dir.join(format!("v{:04}.json", record.version));
        let json =
            serde_json::to_string_pretty(record).map_err(|e| StoreError::Serde(e.to_string()))?;
        std::fs::write(&path, json).map_err(|e| io_err(&path, e))?;
        Ok(path)
    }

    pub fn load_summary(
        &self,
        document: &DocumentId,
        version: u32,
    ) -> Result<SummaryRecord, StoreError> {
        let path = self
            .summaries_dir(document)
            .join(format!("v{version:04}.json"));
        let raw = std::fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
        serde_json::from_str(&raw).map_err(|e| StoreError::Serde(e.to_string()))
    }

    pub fn latest_summary(
        &self,
        document: &DocumentId,
    ) -> Result<Option<SummaryRecord>, StoreError> {
        match self.summary_versions(document)?.last() {
            Some(&version) => Ok(Some(self.load_summary(document, version)?)),
            None => Ok(None),
        }
    }

    /// Latest summary record per document, across the whole store.
    pub fn latest_summaries(&self) -> Result<Vec<SummaryRecord>, StoreError> {
        let dir = self.root.join("summaries");
        let mut records = Vec::new();
        if !dir.exists() {
            return Ok(records);
        }
        let mut doc_dirs: Vec<PathBuf> = std::fs::read_dir(&dir)
            .map_err(|e| io_err(&dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_dir())
            .collect();
        doc_dirs.sort();
        for doc_dir in doc_dirs {
            let document = DocumentId::new(
                doc_dir
                    .file_name()
                    .map(|n| n.to_string_lossy().into_owned())
                    .unwrap_or_default(),
            );
            if let Some(record) = self.latest_summary(&document)? {
                records.push(record);
            }
        }
        Ok(records)
    }

    /// Appends one cache event to the per-store event log.
    pub fn append_cache_event(&self, event: &CacheEvent) -> Result<(), StoreError> {
        use std::io::Write;
        let path = self.root.join("events.jsonl");
        let json = serde_json::to_string(event).map_err(|e| StoreError::Serde(e.to_string()))?;
        let mut file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| io_err(&path, e))?;
        writeln!(file, "{json}").map_err(|e| io_err(&path, e))
    }
}

/// Reads a trace back from one line-delimited file.
pub fn load_trace_file(path: &Path) -> Result<ChainTrace, StoreError> {
    let raw = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut header: Option<ChainTrace> = None;
    let mut iterations = Vec::new();
    for (i, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed: TraceLine =
            serde_json::from_str(line).map_err(|e| StoreError::MalformedTrace {
                path: path.display().to_string(),
                detail: format!("line {}: {e}", i + 1),
            })?;
        match parsed {
            TraceLine::TraceHeader {
                schema_version,
                document_id,
                config,
                best_iteration,
                correct_f1_validation,
                provider_fingerprint,
            } => {
                if schema_version != TRACE_SCHEMA_VERSION {
                    return Err(StoreError::MalformedTrace {
                        path: path.display().to_string(),
                        detail: format!("unsupported schema version {schema_version}"),
                    });
                }
                header = Some(ChainTrace {
                    document_id,
                    config,
                    iterations: Vec::new(),
                    best_iteration,
                    correct_f1_validation,
                    provider_fingerprint,
                });
            }
            TraceLine::Iteration(record) => iterations.push(record),
        }
    }
    let mut trace = header.ok_or_else(|| StoreError::MalformedTrace {
        path: path.display().to_string(),
        detail: "missing trace header".into(),
    })?;
    trace.iterations = iterations;
    Ok(trace)
}

/// Trace files under a directory in stable name order.
pub fn list_trace_files(dir: &Path) -> Result<Vec<PathBuf>, StoreError> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| io_err(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext == "jsonl"))
        .collect();
    files.sort();
    Ok(files)
}

/// Renders the plain-text summary cache: a top header line, then one
/// "# {title}" section per document in document-id order. Summary lines that
/// would read as section headings are escaped.
pub fn render_llms_txt(records: &[SummaryRecord], titles: &[(DocumentId, String)]) -> String {
    let mut sorted: Vec<&SummaryRecord> = records.iter().collect();
    sorted.sort_by(|a, b| a.document_id.cmp(&b.document_id));

    let mut out = String::new();
    out.push_str(&format!(
        "llms.txt summary cache ({} documents)\n\n",
        sorted.len()
    ));
    for record in sorted {
        let title = titles
            .iter()
            .find(|(id, _)| id == &record.document_id)
            .map(|(_, t)| t.as_str())
            .unwrap_or_else(|| record.document_id.as_str());
        out.push_str(&format!("# {title}\n"));
        for line in record.summary_text.lines() {
            if line.starts_with('#') {
                out.push('\\');
            }
            out.push_str(line);
            out.push('\n');
        }
        out.push('\n');
    }
    out
}

/// Writes the summary cache file. Pure in its inputs: identical records
/// produce identical bytes.
pub fn emit_llms_txt(
    records: &[SummaryRecord],
    titles: &[(DocumentId, String)],
    out: &Path,
) -> Result<(), StoreError> {
    if records.is_empty() {
        return Err(StoreError::NoRecords);
    }
    std::fs::write(out, render_llms_txt(records, titles)).map_err(|e| io_err(out, e))
}

fn now_unix() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Answers a question from a cached summary. "I don't know" replies are
/// cache misses: when the source document is available one refine step
/// produces a new summary version, otherwise the miss is unrefinable.
/// With gold aliases supplied, answers scoring below `tau` also miss.
#[allow(clippy::too_many_arguments)]
pub async fn answer_from_cache(
    question: &str,
    record: &SummaryRecord,
    source: Option<&Document>,
    gold_aliases: Option<&[String]>,
    tau: f64,
    gateway: &Gateway,
    library: &PromptLibrary,
    store: &Store,
) -> Result<CacheEvent, StoreError> {
    let bundle = library.build_answer_prompt(&record.summary_text, question)?;
    let request = ChatRequest::new(
        bundle.messages,
        gateway.config().model.clone(),
        gateway.config().temperature,
    );
    let response = gateway.complete(&request).await?;
    let answer = response.content.trim().to_string();

    let f1_estimate = match gold_aliases {
        Some(aliases) if !aliases.is_empty() && !is_idk(&answer) => Some(
            f1_vs_aliases(&answer, aliases)
                .map_err(|e| StoreError::Dialectic(e.to_string()))?
                .0,
        ),
        _ => None,
    };
    let missed = is_idk(&answer) || f1_estimate.is_some_and(|f1| f1 < tau);

    let event = if !missed {
        CacheEvent {
            document_id: record.document_id.clone(),
            question: question.to_string(),
            outcome: CacheOutcome::Hit,
            answer,
            f1_estimate,
            new_version: None,
        }
    } else if let Some(document) = source {
        // One evaluate/refine cycle bounds online latency; no full chain.
        let miss_pair = crate::corpus::QAPair {
            id: QuestionId::new(format!("cache-miss-{}", record.document_id)),
            document_id: record.document_id.clone(),
            question: question.to_string(),
            gold_answers: gold_aliases.map(|a| a.to_vec()).unwrap_or_default(),
            origin: crate::corpus::Origin::Human,
            split: None,
        };
        let config = ChainConfig::default();
        let (synthesis, stalled, _) = dialectic::refine(
            document,
            &record.summary_text,
            std::slice::from_ref(&miss_pair),
            &config,
            gateway,
            library,
        )
        .await
        .map_err(|e| StoreError::Dialectic(e.to_string()))?;

        let new_record = SummaryRecord {
            document_id: record.document_id.clone(),
            version: store.next_version(&record.document_id)?,
            summary_text: synthesis,
            chain_trace_ref: record.chain_trace_ref.clone(),
            created_at: now_unix(),
            config_fingerprint: record.config_fingerprint.clone(),
            human_edited: false,
            // Refinements of human-edited summaries wait for review.
            needs_review: record.human_edited,
            stalled,
        };
        store.save_summary(&new_record)?;
        CacheEvent {
            document_id: record.document_id.clone(),
            question: question.to_string(),
            outcome: CacheOutcome::MissRefined,
            answer,
            f1_estimate,
            new_version: Some(new_record.version),
        }
    } else {
        CacheEvent {
            document_id: record.document_id.clone(),
            question: question.to_string(),
            outcome: CacheOutcome::MissUnrefinable,
            answer,
            f1_estimate,
            new_version: None,
        }
    };

    store.append_cache_event(&event)?;
    Ok(event)
}
