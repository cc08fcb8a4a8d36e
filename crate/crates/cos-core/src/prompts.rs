//! Prompt construction and model-output parsing.
//!
//! The four prompt families (synthetic Q&A generation, answering over a
//! context, summary refinement, zero-shot summarization) ship as versioned
//! JSON template files embedded in the binary; a directory override replaces
//! any of them at runtime. Builders substitute placeholders and return
//! immutable [`PromptBundle`]s, so identical inputs always produce identical
//! message sequences.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{ChatMessage, Role};

/// Minimal-drafting instruction appended for the Chain-of-Draft variant.
pub const COD_INSTRUCTION: &str = "Think step by step, but keep only a minimum draft of at most five words per thinking step before writing the final output.";

/// Single-step summarization template used when exporting reward datasets
/// for downstream fine-tuning. Shipped as a constant; the engine never calls
/// it.
pub const GRPO_PROMPT_TEMPLATE: &str = "\nTITLE: {title}\nCONTENT: {content}\nSUMMARY:";

const QA_GENERATION_TEMPLATE: &str = include_str!("../templates/qa_generation.json");
const ANSWER_TEMPLATE: &str = include_str!("../templates/answer.json");
const REFINE_TEMPLATE: &str = include_str!("../templates/refine.json");
const ZERO_SHOT_TEMPLATE: &str = include_str!("../templates/zero_shot_summary.json");

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("document text is empty")]
    EmptyDocument,
    #[error("prompt input '{0}' is empty")]
    EmptyInput(&'static str),
    #[error("refine prompt needs at least one question")]
    EmptyQuestionSet,
    #[error("the Chain-of-Draft variant applies only to refine and zero-shot summary prompts")]
    UnsupportedKind,
    #[error("no well-formed Q:/A: pairs found in model output")]
    NoPairsFound,
    #[error("template for {kind:?} is invalid: {detail}")]
    InvalidTemplate { kind: PromptKind, detail: String },
    #[error("cannot load template {path}: {detail}")]
    TemplateIo { path: String, detail: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptKind {
    QaGeneration,
    Answer,
    Refine,
    ZeroShotSummary,
    GrpoTemplate,
}

/// A substring unique to each template, used by mock scripts to recognize
/// what family a request belongs to.
pub fn kind_marker(kind: PromptKind) -> &'static str {
    match kind {
        PromptKind::QaGeneration => "diverse and specific questions",
        PromptKind::Answer => "answer the question as simply as possible",
        PromptKind::Refine => "Questions to Address:",
        PromptKind::ZeroShotSummary => "information-dense summary of the following content",
        PromptKind::GrpoTemplate => "SUMMARY:",
    }
}

/// A built prompt: the message sequence plus the substitutions that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub kind: PromptKind,
    pub messages: Vec<ChatMessage>,
    pub variables: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Deserialize)]
struct TemplateFile {
    #[allow(dead_code)]
    version: u32,
    kind: PromptKind,
    messages: Vec<TemplateMessage>,
}

#[derive(Debug, Clone, Deserialize)]
struct TemplateMessage {
    role: Role,
    content: String,
}

fn placeholder_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\{([a-z_]+)\}").expect("valid placeholder regex"))
}

fn expected_placeholders(kind: PromptKind) -> &'static [&'static str] {
    match kind {
        PromptKind::QaGeneration => &["file_content", "number_of_questions"],
        PromptKind::Answer => &["file_content", "question"],
        PromptKind::Refine => &["passage", "existing_summary", "antithesis_questions"],
        PromptKind::ZeroShotSummary => &["file_content"],
        PromptKind::GrpoTemplate => &["title", "content"],
    }
}

fn expected_roles(kind: PromptKind) -> &'static [Role] {
    match kind {
        PromptKind::QaGeneration => &[Role::System, Role::User, Role::User],
        PromptKind::Answer => &[Role::System, Role::System, Role::User],
        PromptKind::Refine => &[Role::System, Role::System, Role::User, Role::User],
        PromptKind::ZeroShotSummary => &[Role::System, Role::User],
        PromptKind::GrpoTemplate => &[],
    }
}

impl TemplateFile {
    fn parse(kind: PromptKind, raw: &str) -> Result<Self, PromptError> {
        let template: TemplateFile =
            serde_json::from_str(raw).map_err(|e| PromptError::InvalidTemplate {
                kind,
                detail: e.to_string(),
            })?;
        template.validate(kind)?;
        Ok(template)
    }

    fn validate(&self, kind: PromptKind) -> Result<(), PromptError> {
        if self.kind != kind {
            return Err(PromptError::InvalidTemplate {
                kind,
                detail: format!("file declares kind {:?}", self.kind),
            });
        }
        let roles: Vec<Role> = self.messages.iter().map(|m| m.role).collect();
        if roles != expected_roles(kind) {
            return Err(PromptError::InvalidTemplate {
                kind,
                detail: format!(
                    "role sequence {roles:?} does not match {:?}",
                    expected_roles(kind)
                ),
            });
        }
        let expected = expected_placeholders(kind);
        let mut seen: Vec<&str> = Vec::new();
        for message in &self.messages {
            for capture in placeholder_re().captures_iter(&message.content) {
                let name = capture.get(1).expect("capture group").as_str();
                if !expected.contains(&name) {
                    return Err(PromptError::InvalidTemplate {
                        kind,
                        detail: format!("unknown placeholder {{{name}}}"),
                    });
                }
                if !seen.contains(&name) {
                    seen.push(name);
                }
            }
        }
        for name in expected {
            if !seen.contains(name) {
                return Err(PromptError::InvalidTemplate {
                    kind,
                    detail: format!("placeholder {{{name}}} never appears"),
                });
            }
        }
        Ok(())
    }

    fn render(&self, kind: PromptKind, variables: &BTreeMap<String, String>) -> PromptBundle {
        let messages = self
            .messages
            .iter()
            .map(|m| {
                let mut content = m.content.clone();
                for (name, value) in variables {
                    content = content.replace(&format!("{{{name}}}"), value);
                }
                ChatMessage::new(m.role, content)
            })
            .collect();
        PromptBundle {
            kind,
            messages,
            variables: variables.clone(),
        }
    }
}

/// The four runtime templates, loadable from the embedded defaults or an
/// override directory.
pub struct PromptLibrary {
    templates: BTreeMap<PromptKind, TemplateFile>,
}

const TEMPLATE_FILES: [(PromptKind, &str, &str); 4] = [
    (
        PromptKind::QaGeneration,
        "qa_generation.json",
        QA_GENERATION_TEMPLATE,
    ),
    (PromptKind::Answer, "answer.json", ANSWER_TEMPLATE),
    (PromptKind::Refine, "refine.json", REFINE_TEMPLATE),
    (
        PromptKind::ZeroShotSummary,
        "zero_shot_summary.json",
        ZERO_SHOT_TEMPLATE,
    ),
];

impl PromptLibrary {
    /// The templates compiled into the binary.
    pub fn builtin() -> Self {
        let mut templates = BTreeMap::new();
        for (kind, name, raw) in TEMPLATE_FILES {
            let template = TemplateFile::parse(kind, raw)
                .unwrap_or_else(|e| panic!("embedded template {name} is invalid: {e}"));
            templates.insert(kind, template);
        }
        Self { templates }
    }

    /// Builtin templates with per-file overrides from `dir`. Files absent
    /// from the directory keep their embedded version.
    pub fn with_overrides(dir: &Path) -> Result<Self, PromptError> {
        let mut library = Self::builtin();
        for (kind, name, _) in TEMPLATE_FILES {
            let path = dir.join(name);
            if !path.exists() {
                continue;
            }
            let raw = std::fs::read_to_string(&path).map_err(|e| PromptError::TemplateIo {
                path: path.display().to_string(),
                detail: e.to_string(),
            })?;
            library
                .templates
                .insert(kind, TemplateFile::parse(kind, &raw)?);
        }
        Ok(library)
    }

    fn render(&self, kind: PromptKind, variables: BTreeMap<String, String>) -> PromptBundle {
        self.templates
            .get(&kind)
            .expect("library holds all runtime kinds")
            .render(kind, &variables)
    }

    /// Prompt asking for `n` synthetic Q&A pairs about a document.
    pub fn build_qa_generation_prompt(
        &self,
        document_text: &str,
        n: u32,
    ) -> Result<PromptBundle, PromptError> {
        let document_text = document_text.trim();
        if document_text.is_empty() {
            return Err(PromptError::EmptyDocument);
        }
        if n < 1 {
            return Err(PromptError::EmptyInput("number_of_questions"));
        }
        let mut variables = BTreeMap::new();
        variables.insert("file_content".to_string(), document_text.to_string());
        variables.insert("number_of_questions".to_string(), n.to_string());
        Ok(self.render(PromptKind::QaGeneration, variables))
    }

    /// Prompt answering one question over a context (a summary or the full
    /// source document).
    pub fn build_answer_prompt(
        &self,
        context: &str,
        question: &str,
    ) -> Result<PromptBundle, PromptError> {
        let context = context.trim();
        let question = question.trim();
        if context.is_empty() {
            return Err(PromptError::EmptyInput("context"));
        }
        if question.is_empty() {
            return Err(PromptError::EmptyInput("question"));
        }
        let mut variables = BTreeMap::new();
        variables.insert("file_content".to_string(), context.to_string());
        variables.insert("question".to_string(), question.to_string());
        Ok(self.render(PromptKind::Answer, variables))
    }

    /// Prompt refining an existing summary against unanswered questions.
    /// Questions are joined one per line, each prefixed "Q: ".
    pub fn build_refine_prompt(
        &self,
        passage: &str,
        existing_summary: &str,
        questions: &[String],
    ) -> Result<PromptBundle, PromptError> {
        let passage = passage.trim();
        let existing_summary = existing_summary.trim();
        if passage.is_empty() {
            return Err(PromptError::EmptyInput("passage"));
        }
        if existing_summary.is_empty() {
            return Err(PromptError::EmptyInput("existing_summary"));
        }
        let questions: Vec<&str> = questions
            .iter()
            .map(|q| q.trim())
            .filter(|q| !q.is_empty())
            .collect();
        if questions.is_empty() {
            return Err(PromptError::EmptyQuestionSet);
        }
        let joined = questions
            .iter()
            .map(|q| format!("Q: {q}"))
            .collect::<Vec<_>>()
            .join("\n");
        let mut variables = BTreeMap::new();
        variables.insert("passage".to_string(), passage.to_string());
        variables.insert("existing_summary".to_string(), existing_summary.to_string());
        variables.insert("antithesis_questions".to_string(), joined);
        Ok(self.render(PromptKind::Refine, variables))
    }

    /// Two-message zero-shot summarization prompt.
    pub fn build_zero_shot_summary_prompt(
        &self,
        document_text: &str,
    ) -> Result<PromptBundle, PromptError> {
        let document_text = document_text.trim();
        if document_text.is_empty() {
            return Err(PromptError::EmptyDocument);
        }
        let mut variables = BTreeMap::new();
        variables.insert("file_content".to_string(), document_text.to_string());
        Ok(self.render(PromptKind::ZeroShotSummary, variables))
    }
}

/// Appends the Chain-of-Draft instruction as a trailing system message.
/// Idempotent; only refine and zero-shot summary bundles are eligible.
pub fn apply_cod_variant(bundle: &PromptBundle) -> Result<PromptBundle, PromptError> {
    if !matches!(
        bundle.kind,
        PromptKind::Refine | PromptKind::ZeroShotSummary
    ) {
        return Err(PromptError::UnsupportedKind);
    }
    if bundle
        .messages
        .last()
        .is_some_and(|m| m.role == Role::System && m.content == COD_INSTRUCTION)
    {
        return Ok(bundle.clone());
    }
    let mut adjusted = bundle.clone();
    adjusted.messages.push(ChatMessage::system(COD_INSTRUCTION));
    Ok(adjusted)
}

/// One extracted question/answer pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedQA {
    pub question: String,
    pub answer: String,
}

/// Result of parsing a generation reply: the well-formed pairs in order plus
/// what was skipped.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct QaParse {
    pub pairs: Vec<ParsedQA>,
    /// Malformed fragments, recorded verbatim.
    pub skipped_blocks: Vec<String>,
    /// Exact question repeats dropped (first occurrence kept).
    pub duplicates_removed: usize,
}

fn list_index_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"^(?:\s*(?:[-*•]|\(?\d{1,3}[.)\]:])\s+)+").expect("valid index regex")
    })
}

fn strip_list_index(text: &str) -> &str {
    match list_index_re().find(text) {
        Some(m) => &text[m.end()..],
        None => text,
    }
}

fn q_line_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)^q\s*:\s*").expect("valid Q regex"))
}

fn a_line_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)^a\s*:\s*").expect("valid A regex"))
}

fn inline_a_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)\ba\s*:\s*").expect("valid inline-A regex"))
}

/// Extracts all well-formed Q:/A: pairs from a generation reply.
///
/// Leading list indices are stripped, malformed blocks are skipped and
/// recorded, and exact question repeats are deduplicated keeping the first.
/// Zero well-formed pairs is an error.
pub fn parse_qa_pairs(raw: &str) -> Result<QaParse, PromptError> {
    let mut parse = QaParse::default();
    let mut pending_question: Option<String> = None;
    let mut stray: Vec<String> = Vec::new();

    let flush_stray = |stray: &mut Vec<String>, parse: &mut QaParse| {
        if !stray.is_empty() {
            parse.skipped_blocks.push(stray.join("\n"));
            stray.clear();
        }
    };
    let push_pair = |question: &str, answer: &str, parse: &mut QaParse| {
        let question = strip_list_index(question.trim()).trim().to_string();
        let answer = answer.trim().to_string();
        if question.is_empty() || answer.is_empty() {
            parse
                .skipped_blocks
                .push(format!("Q: {question} A: {answer}"));
            return;
        }
        if parse.pairs.iter().any(|p| p.question == question) {
            parse.duplicates_removed += 1;
            return;
        }
        parse.pairs.push(ParsedQA { question, answer });
    };

    for raw_line in raw.lines() {
        let line = strip_list_index(raw_line.trim());
        if line.is_empty() {
            continue;
        }
        if let Some(m) = q_line_re().find(line) {
            if let Some(question) = pending_question.take() {
                // Question without an answer.
                parse.skipped_blocks.push(format!("Q: {question}"));
            }
            flush_stray(&mut stray, &mut parse);
            let rest = &line[m.end()..];
            if let Some(split) = inline_a_re().find(rest) {
                let question = &rest[..split.start()];
                let answer = &rest[split.end()..];
                push_pair(question, answer, &mut parse);
            } else {
                pending_question = Some(rest.trim().to_string());
            }
        } else if let Some(m) = a_line_re().find(line) {
            let answer = &line[m.end()..];
            match pending_question.take() {
                Some(question) => push_pair(&question, answer, &mut parse),
                // Answer without a question.
                None => parse.skipped_blocks.push(line.to_string()),
            }
        } else if let Some(question) = pending_question.as_mut() {
            // Wrapped question text.
            question.push(' ');
            question.push_str(line);
        } else {
            stray.push(line.to_string());
        }
    }
    if let Some(question) = pending_question {
        parse.skipped_blocks.push(format!("Q: {question}"));
    }
    flush_stray(&mut stray, &mut parse);

    if parse.pairs.is_empty() {
        return Err(PromptError::NoPairsFound);
    }
    Ok(parse)
}

/// Removes the leading "Updated Summary:" marker, case-insensitively,
/// tolerating surrounding whitespace. Repeated leading markers are all
/// removed, which keeps the operation idempotent.
pub fn strip_updated_summary_prefix(raw: &str) -> String {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| {
        Regex::new(r"(?is)^\s*updated\s+summary\s*:\s*").expect("valid prefix regex")
    });
    let mut rest = raw;
    while let Some(m) = re.find(rest) {
        rest = &rest[m.end()..];
    }
    rest.trim().to_string()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn library() -> PromptLibrary {
        PromptLibrary::builtin()
    }

    #[test]
    fn qa_generation_prompt_follows_the_template() {
        let bundle = library()
            .build_qa_generation_prompt("Doc body.", 50)
            .unwrap();
        assert_eq!(bundle.kind, PromptKind::QaGeneration);
        let roles: Vec<Role> = bundle.messages.iter().map(|m| m.role).collect();
        assert_eq!(roles, [Role::System, Role::User, Role::User]);
        assert!(bundle.messages[1]
            .content
            .contains("Generate 50 diverse and specific questions"));
        assert!(bundle.messages[0].content.contains("Doc body."));
        assert_eq!(bundle.variables["number_of_questions"], "50");

        assert!(library().build_qa_generation_prompt("Doc", 1).is_ok());
        assert!(matches!(
            library().build_qa_generation_prompt("", 5),
            Err(PromptError::EmptyDocument)
        ));
    }

    #[test]
    fn answer_prompt_follows_the_template() {
        let bundle = library()
            .build_answer_prompt("The summary text.", "Capital of France?")
            .unwrap();
        let roles: Vec<Role> = bundle.messages.iter().map(|m| m.role).collect();
        assert_eq!(roles, [Role::System, Role::System, Role::User]);
        assert_eq!(
            bundle.messages[2].content,
            "Question: Capital of France? Answer:"
        );
        assert!(bundle.messages[0].content.contains("I don't know"));
        assert!(bundle.messages[1].content.contains("The summary text."));

        // Full document as context: same structure.
        let full = library()
            .build_answer_prompt("Entire document body goes here.", "Q?")
            .unwrap();
        assert_eq!(full.messages.len(), 3);

        // Trailing whitespace trimmed before substitution.
        let trimmed = library()
            .build_answer_prompt("ctx", "Capital of France?   \n")
            .unwrap();
        assert_eq!(
            trimmed.messages[2].content,
            "Question: Capital of France? Answer:"
        );

        assert!(matches!(
            library().build_answer_prompt("", "q"),
            Err(PromptError::EmptyInput("context"))
        ));
    }

    #[test]
    fn refine_prompt_preserves_question_order() {
        let questions: Vec<String> = (1..=10).map(|i| format!("Question {i}?")).collect();
        let bundle = library()
            .build_refine_prompt("passage text", "old summary", &questions)
            .unwrap();
        let roles: Vec<Role> = bundle.messages.iter().map(|m| m.role).collect();
        assert_eq!(roles, [Role::System, Role::System, Role::User, Role::User]);
        let final_message = &bundle.messages[3].content;
        assert!(final_message.starts_with("Questions to Address:"));
        let mut last = 0;
        for q in &questions {
            let pos = final_message.find(q.as_str()).expect("question present");
            assert!(pos > last);
            last = pos;
        }

        let single = library()
            .build_refine_prompt("p", "s", &["Only one?".to_string()])
            .unwrap();
        assert!(single.messages[3].content.contains("Q: Only one?"));

        assert!(matches!(
            library().build_refine_prompt("p", "s", &[]),
            Err(PromptError::EmptyQuestionSet)
        ));
    }

    #[test]
    fn zero_shot_prompt_is_two_messages_and_pure() {
        let a = library()
            .build_zero_shot_summary_prompt("One sentence.")
            .unwrap();
        let b = library()
            .build_zero_shot_summary_prompt("One sentence.")
            .unwrap();
        assert_eq!(a.messages.len(), 2);
        assert_eq!(a, b);
        assert!(matches!(
            library().build_zero_shot_summary_prompt("  "),
            Err(PromptError::EmptyDocument)
        ));
    }

    #[test]
    fn cod_variant_appends_one_system_message_idempotently() {
        let base = library()
            .build_refine_prompt("p", "s", &["q?".to_string()])
            .unwrap();
        let adjusted = apply_cod_variant(&base).unwrap();
        assert_eq!(adjusted.messages.len(), base.messages.len() + 1);
        assert_eq!(
            &adjusted.messages[..base.messages.len()],
            &base.messages[..]
        );
        let last = adjusted.messages.last().unwrap();
        assert_eq!(last.role, Role::System);
        assert_eq!(last.content, COD_INSTRUCTION);

        let twice = apply_cod_variant(&adjusted).unwrap();
        assert_eq!(twice, adjusted);

        let answer = library().build_answer_prompt("c", "q").unwrap();
        assert!(matches!(
            apply_cod_variant(&answer),
            Err(PromptError::UnsupportedKind)
        ));
    }

    #[test]
    fn parses_well_formed_pairs_in_order() {
        let parse =
            parse_qa_pairs("Q: Capital of France?\nA: Paris\nQ: Largest planet?\nA: Jupiter")
                .unwrap();
        assert_eq!(
            parse.pairs,
            vec![
                ParsedQA {
                    question: "Capital of France?".into(),
                    answer: "Paris".into()
                },
                ParsedQA {
                    question: "Largest planet?".into(),
                    answer: "Jupiter".into()
                },
            ]
        );
        assert!(parse.skipped_blocks.is_empty());
    }

    #[test]
    fn no_pairs_is_an_error() {
        assert!(matches!(
            parse_qa_pairs("no questions here"),
            Err(PromptError::NoPairsFound)
        ));
        assert!(matches!(parse_qa_pairs(""), Err(PromptError::NoPairsFound)));
    }

    // Hand-built corpus of malformed and near-miss variants; expected
    // outcomes derived by applying the parsing rules by hand.
    #[test]
    fn parser_oracle_corpus() {
        type Case = (&'static str, Vec<(&'static str, &'static str)>, usize);
        let cases: Vec<Case> = vec![
            // (input, expected pairs, expected skipped blocks)
            ("1. Q: X? A: Y", vec![("X?", "Y")], 0),
            ("(2) Q: X? A: Y", vec![("X?", "Y")], 0),
            ("- Q: X?\nA: Y", vec![("X?", "Y")], 0),
            ("* Q: X?\n* A: Y", vec![("X?", "Y")], 0),
            ("Q: 3. X?\nA: Y", vec![("X?", "Y")], 0),
            ("q: lower?\na: case", vec![("lower?", "case")], 0),
            ("Q:No space?\nA:None", vec![("No space?", "None")], 0),
            ("Q: X?\n\nA: Y", vec![("X?", "Y")], 0),
            (
                "Q: first part\nsecond part?\nA: Y",
                vec![("first part second part?", "Y")],
                0,
            ),
            ("Q: X? A: Y\nQ: Z? A: W", vec![("X?", "Y"), ("Z?", "W")], 0),
            // Question with no answer, then a good pair.
            ("Q: orphan?\nQ: X?\nA: Y", vec![("X?", "Y")], 1),
            // Answer with no question.
            ("A: stray\nQ: X?\nA: Y", vec![("X?", "Y")], 1),
            // Empty answer.
            ("Q: X?\nA:\nQ: Z?\nA: W", vec![("Z?", "W")], 1),
            // Empty question.
            ("Q:\nA: Y\nQ: Z?\nA: W", vec![("Z?", "W")], 1),
            // Trailing orphan question.
            ("Q: X?\nA: Y\nQ: dangling?", vec![("X?", "Y")], 1),
            // Commentary between pairs.
            ("intro text\nQ: X?\nA: Y\ncloser text", vec![("X?", "Y")], 2),
            // Duplicate question kept once.
            ("Q: X?\nA: Y\nQ: X?\nA: Z", vec![("X?", "Y")], 0),
            // Numbered list with several entries.
            (
                "1. Q: one?\nA: 1\n2. Q: two?\nA: 2\n3. Q: three?\nA: 3",
                vec![("one?", "1"), ("two?", "2"), ("three?", "3")],
                0,
            ),
            // Answer containing a colon is kept whole.
            ("Q: time?\nA: 12:30", vec![("time?", "12:30")], 0),
            // Inline pair with numbering plus wrapped second question.
            (
                "2) Q: X? A: Y\nQ: long\nquestion?\nA: W",
                vec![("X?", "Y"), ("long question?", "W")],
                0,
            ),
        ];
        for (input, expected, skipped) in cases {
            let parse = parse_qa_pairs(input)
                .unwrap_or_else(|e| panic!("case {input:?} failed to parse: {e}"));
            let got: Vec<(&str, &str)> = parse
                .pairs
                .iter()
                .map(|p| (p.question.as_str(), p.answer.as_str()))
                .collect();
            assert_eq!(got, expected, "pairs for {input:?}");
            assert_eq!(parse.skipped_blocks.len(), skipped, "skips for {input:?}");
        }

        // Duplicate counting is reported.
        let parse = parse_qa_pairs("Q: X?\nA: Y\nQ: X?\nA: Z").unwrap();
        assert_eq!(parse.duplicates_removed, 1);
    }

    #[test]
    fn pairs_never_have_empty_fields_or_leading_indices() {
        let parse = parse_qa_pairs("Q: 1. What?\nA: That\nQ:  \nA: x").unwrap();
        for pair in &parse.pairs {
            assert!(!pair.question.is_empty());
            assert!(!pair.answer.is_empty());
            assert!(strip_list_index(&pair.question) == pair.question);
        }
    }

    #[test]
    fn updated_summary_prefix_stripping() {
        assert_eq!(
            strip_updated_summary_prefix("Updated Summary: The tower is tall."),
            "The tower is tall."
        );
        assert_eq!(
            strip_updated_summary_prefix("updated summary:\nThe tower is tall."),
            "The tower is tall."
        );
        assert_eq!(
            strip_updated_summary_prefix("  UPDATED  SUMMARY :  text"),
            "text"
        );
        assert_eq!(
            strip_updated_summary_prefix("The tower is tall."),
            "The tower is tall."
        );
        // Repeated markers collapse so re-stripping is a no-op.
        assert_eq!(
            strip_updated_summary_prefix("Updated Summary: Updated Summary: x"),
            "x"
        );
    }

    #[test]
    fn grpo_template_carries_its_placeholders() {
        assert!(GRPO_PROMPT_TEMPLATE.contains("{title}"));
        assert!(GRPO_PROMPT_TEMPLATE.contains("{content}"));
        assert!(GRPO_PROMPT_TEMPLATE.trim_end().ends_with("SUMMARY:"));
    }

    #[test]
    fn template_override_directory_replaces_individual_files() {
        let dir = tempfile::tempdir().unwrap();
        let custom = r#"{
            "version": 2,
            "kind": "zero_shot_summary",
            "messages": [
                {"role": "system", "content": "Summarize tersely."},
                {"role": "user", "content": "{file_content}"}
            ]
        }"#;
        std::fs::write(dir.path().join("zero_shot_summary.json"), custom).unwrap();
        let library = PromptLibrary::with_overrides(dir.path()).unwrap();
        let bundle = library.build_zero_shot_summary_prompt("doc").unwrap();
        assert_eq!(bundle.messages[0].content, "Summarize tersely.");
        // Non-overridden templates still come from the builtins.
        let answer = library.build_answer_prompt("c", "q").unwrap();
        assert!(answer.messages[0].content.contains("as simply as possible"));
    }

    #[test]
    fn invalid_override_templates_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let missing_placeholder = r#"{
            "version": 1,
            "kind": "zero_shot_summary",
            "messages": [
                {"role": "system", "content": "no placeholder"},
                {"role": "user", "content": "static"}
            ]
        }"#;
        std::fs::write(
            dir.path().join("zero_shot_summary.json"),
            missing_placeholder,
        )
        .unwrap();
        assert!(matches!(
            PromptLibrary::with_overrides(dir.path()),
            Err(PromptError::InvalidTemplate { .. })
        ));
    }

    fn render_pairs(pairs: &[ParsedQA]) -> String {
        pairs
            .iter()
            .map(|p| format!("Q: {}\nA: {}", p.question, p.answer))
            .collect::<Vec<_>>()
            .join("\n")
    }

    proptest! {
        // Round-trip: rendering pairs in the generation output format and
        // re-parsing recovers the same list.
        #[test]
        fn render_parse_round_trip(
            seeds in prop::collection::vec(("[b-z][a-z ]{0,18}", "[b-z][a-z0-9 ]{0,12}"), 1..8)
        ) {
            let mut pairs: Vec<ParsedQA> = Vec::new();
            for (q, a) in seeds {
                let question = format!("{}?", q.trim());
                let answer = a.trim().to_string();
                prop_assume!(!answer.is_empty());
                if pairs.iter().any(|p| p.question == question) {
                    continue;
                }
                pairs.push(ParsedQA { question, answer });
            }
            prop_assume!(!pairs.is_empty());
            let rendered = render_pairs(&pairs);
            let parse = parse_qa_pairs(&rendered).unwrap();
            prop_assert_eq!(parse.pairs, pairs);
            prop_assert_eq!(parse.duplicates_removed, 0);
        }

        #[test]
        fn build_answer_prompt_is_pure(ctx in "[a-z ]{1,40}", q in "[a-z ]{1,20}") {
            prop_assume!(!ctx.trim().is_empty() && !q.trim().is_empty());
            let lib = PromptLibrary::builtin();
            let a = lib.build_answer_prompt(&ctx, &q).unwrap();
            let b = lib.build_answer_prompt(&ctx, &q).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn prefix_strip_is_idempotent(s in ".{0,80}") {
            let once = strip_updated_summary_prefix(&s);
            let twice = strip_updated_summary_prefix(&once);
            prop_assert_eq!(&once, &twice);
        }
    }
}
