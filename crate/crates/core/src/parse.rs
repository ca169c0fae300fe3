//! Output grammars for both roles and the answer normalization behind
//! majority voting.
//!
//! Questioner outputs must be exactly one `<type>`/`<question>`/`<answer>`
//! triple (tags case-insensitive, any order, whitespace between blocks).
//! Solver outputs never fail to parse: a missing `\boxed{}` or `<segment>`
//! simply leaves the corresponding field absent, which the reward gates
//! read as a format failure.

use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{QuestionRecord, QuestionType, Segment, SolverResponse};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum QuestionFormatError {
    #[error("missing <{0}> block")]
    MissingTag(&'static str),
    #[error("more than one <{0}> block")]
    DuplicateTag(&'static str),
    #[error("blocks overlap or nest")]
    NestedTags,
    #[error("text outside the three blocks")]
    UnexpectedText,
    #[error("invalid question type `{0}`")]
    InvalidType(String),
    #[error("empty <{0}> block")]
    EmptyField(&'static str),
}

const QUESTION_TAGS: [&str; 3] = ["type", "question", "answer"];

/// Locates the single `<tag>…</tag>` block. Returns (outer span, inner span).
fn find_block(
    lower: &str,
    tag: &'static str,
) -> Result<((usize, usize), (usize, usize)), QuestionFormatError> {
    let open = format!("<{tag}>");
    let close = format!("</{tag}>");
    let opens: Vec<usize> = lower.match_indices(&open).map(|(i, _)| i).collect();
    let closes: Vec<usize> = lower.match_indices(&close).map(|(i, _)| i).collect();
    match (opens.as_slice(), closes.as_slice()) {
        ([], _) | (_, []) => Err(QuestionFormatError::MissingTag(tag)),
        ([start], [end]) if *end >= start + open.len() => Ok((
            (*start, end + close.len()),
            (start + open.len(), *end),
        )),
        ([_], [_]) => Err(QuestionFormatError::MissingTag(tag)),
        _ => Err(QuestionFormatError::DuplicateTag(tag)),
    }
}

/// Parses a Questioner rollout into a [`QuestionRecord`].
pub fn parse_questioner_output(raw: &str) -> Result<QuestionRecord, QuestionFormatError> {
    // ASCII lowercasing keeps byte offsets aligned with `raw`.
    let lower = raw.to_ascii_lowercase();
    let mut blocks = Vec::with_capacity(3);
    for tag in QUESTION_TAGS {
        blocks.push(find_block(&lower, tag)?);
    }

    let mut outer: Vec<(usize, usize)> = blocks.iter().map(|(o, _)| *o).collect();
    outer.sort_unstable();
    if outer.windows(2).any(|w| w[0].1 > w[1].0) {
        return Err(QuestionFormatError::NestedTags);
    }
    let mut cursor = 0;
    for (start, end) in &outer {
        if !raw[cursor..*start].trim().is_empty() {
            return Err(QuestionFormatError::UnexpectedText);
        }
        cursor = *end;
    }
    if !raw[cursor..].trim().is_empty() {
        return Err(QuestionFormatError::UnexpectedText);
    }

    let inner = |i: usize| {
        let (start, end) = blocks[i].1;
        raw[start..end].trim()
    };
    let type_text = inner(0);
    let question_type: QuestionType = type_text
        .parse()
        .map_err(|_| QuestionFormatError::InvalidType(type_text.to_string()))?;
    let question_text = inner(1);
    if question_text.is_empty() {
        return Err(QuestionFormatError::EmptyField("question"));
    }
    let reference_answer = inner(2);
    if reference_answer.is_empty() {
        return Err(QuestionFormatError::EmptyField("answer"));
    }
    Ok(QuestionRecord {
        question_type,
        question_text: question_text.to_string(),
        reference_answer: reference_answer.to_string(),
        source_window: None,
        raw_output: raw.to_string(),
    })
}

/// Renders a record in the canonical three-block layout.
pub fn render_question(record: &QuestionRecord) -> String {
    format!(
        "<type>{}</type>\n<question>{}</question>\n<answer>{}</answer>",
        record.question_type.prompt_name(),
        record.question_text,
        record.reference_answer
    )
}

/// Content of the last brace-balanced `\boxed{…}`.
pub fn extract_last_boxed(raw: &str) -> Option<&str> {
    const OPEN: &str = "\\boxed{";
    let mut found = None;
    for (start, _) in raw.match_indices(OPEN) {
        let body = start + OPEN.len();
        let mut depth = 1usize;
        for (offset, c) in raw[body..].char_indices() {
            match c {
                '{' => depth += 1,
                '}' => {
                    depth -= 1;
                    if depth == 0 {
                        found = Some(&raw[body..body + offset]);
                        break;
                    }
                }
                _ => {}
            }
        }
    }
    found
}

/// Inner text of the last complete `<segment>…</segment>` tag.
fn extract_last_segment_tag(raw: &str) -> Option<&str> {
    const OPEN: &str = "<segment>";
    const CLOSE: &str = "</segment>";
    let lower = raw.to_ascii_lowercase();
    lower.rmatch_indices(OPEN).find_map(|(start, _)| {
        let body = start + OPEN.len();
        lower[body..]
            .find(CLOSE)
            .map(|end| &raw[body..body + end])
    })
}

static SEGMENT_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"^\s*(\d+(?:\.\d*)?|\.\d+)\s*s?\s*(?:--|-|\u{2013}|\u{2014})\s*(\d+(?:\.\d*)?|\.\d+)\s*s?\s*$",
    )
    .expect("segment pattern compiles")
});

/// Parses `Xs-Ys`, `Xs--Ys` or the dash variants into a [`Segment`].
pub fn parse_segment(text: &str) -> Option<Segment> {
    let caps = SEGMENT_RE.captures(text)?;
    let t_s: f64 = caps[1].parse().ok()?;
    let t_e: f64 = caps[2].parse().ok()?;
    Segment::new(t_s, t_e)
}

pub fn parse_solver_output(raw: &str) -> SolverResponse {
    let answer = extract_last_boxed(raw)
        .map(str::trim)
        .filter(|a| !a.is_empty())
        .map(str::to_string);
    let segment = extract_last_segment_tag(raw).and_then(parse_segment);
    SolverResponse {
        raw_output: raw.to_string(),
        format_valid_answer: answer.is_some(),
        format_valid_segment: segment.is_some(),
        answer,
        segment,
    }
}

/// Writes a Solver-style completion that [`parse_solver_output`] reads back
/// to the same answer and segment.
pub fn render_solver_output(
    reasoning: &str,
    answer: Option<&str>,
    segment: Option<Segment>,
) -> String {
    let mut out = reasoning.to_string();
    if let Some(answer) = answer {
        out.push_str(&format!(" The final answer is \\boxed{{{answer}}}."));
    }
    if let Some(seg) = segment {
        out.push_str(&format!(" <segment>{}s--{}s</segment>", seg.t_s, seg.t_e));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerKind {
    MultipleChoice,
    Numerical,
    Regression,
    FreeText,
}

impl From<QuestionType> for AnswerKind {
    fn from(qtype: QuestionType) -> Self {
        match qtype {
            QuestionType::MultipleChoice => AnswerKind::MultipleChoice,
            QuestionType::Numerical => AnswerKind::Numerical,
            QuestionType::Regression => AnswerKind::Regression,
        }
    }
}

/// Canonical form of an answer, the unit of majority voting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerKey {
    pub kind: AnswerKind,
    pub canonical: String,
    pub numeric_value: Option<f64>,
}

static TEXT_WRAPPER_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\\(?:text|mathrm|textbf)\{([^{}]*)\}").expect("compiles"));
static OPTION_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"^[\(\[]?\s*([A-Da-d])\s*(?:[\)\]\.:,]|\s|$)").expect("compiles")
});
static NUMBER_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?").expect("compiles")
});

fn collapse_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn free_text_key(text: &str) -> AnswerKey {
    let stripped: String = text
        .to_lowercase()
        .chars()
        .filter(|c| c.is_alphanumeric() || c.is_whitespace())
        .collect();
    AnswerKey {
        kind: AnswerKind::FreeText,
        canonical: collapse_whitespace(&stripped),
        numeric_value: None,
    }
}

/// Shortest decimal that parses back to `value`; `-0` prints as `0`.
pub fn canonical_number(value: f64) -> String {
    let value = if value == 0.0 { 0.0 } else { value };
    format!("{value}")
}

fn leading_number(text: &str) -> Option<f64> {
    let without_commas = text.replace(',', "");
    let m = NUMBER_RE.find(&without_commas)?;
    let value: f64 = m.as_str().parse().ok()?;
    value.is_finite().then_some(value)
}

pub fn normalize_answer(text: &str, kind: impl Into<AnswerKind>) -> AnswerKey {
    let kind = kind.into();
    let unwrapped = TEXT_WRAPPER_RE.replace_all(text, "$1");
    let text = unwrapped.trim().trim_matches('$').trim();
    match kind {
        AnswerKind::MultipleChoice => {
            let first_word: String = text
                .split_whitespace()
                .next()
                .unwrap_or("")
                .chars()
                .filter(|c| c.is_alphanumeric())
                .collect::<String>()
                .to_lowercase();
            let canonical = match first_word.as_str() {
                "yes" => "YES".to_string(),
                "no" => "NO".to_string(),
                _ => match OPTION_RE.captures(text) {
                    Some(caps) => caps[1].to_uppercase(),
                    None => collapse_whitespace(&text.to_lowercase()),
                },
            };
            AnswerKey {
                kind,
                canonical,
                numeric_value: None,
            }
        }
        AnswerKind::Numerical | AnswerKind::Regression => match leading_number(text) {
            Some(value) => {
                let value = if value == 0.0 { 0.0 } else { value };
                AnswerKey {
                    kind,
                    canonical: canonical_number(value),
                    numeric_value: Some(value),
                }
            }
            None => free_text_key(text),
        },
        AnswerKind::FreeText => free_text_key(text),
    }
}

pub const NUMERIC_ABS_TOL: f64 = 1e-9;
pub const NUMERICAL_REL_TOL: f64 = 1e-6;
pub const REGRESSION_REL_TOL: f64 = 0.05;

/// Vote-equality predicate: reflexive and symmetric, not transitive for
/// numeric answers.
pub fn answers_equivalent(a: &AnswerKey, b: &AnswerKey) -> bool {
    match (a.numeric_value, b.numeric_value) {
        (Some(x), Some(y)) => {
            let rel_tol = if a.kind == AnswerKind::Regression || b.kind == AnswerKind::Regression {
                REGRESSION_REL_TOL
            } else {
                NUMERICAL_REL_TOL
            };
            (x - y).abs() <= NUMERIC_ABS_TOL.max(rel_tol * x.abs().max(y.abs()))
        }
        _ => a.canonical == b.canonical,
    }
}
