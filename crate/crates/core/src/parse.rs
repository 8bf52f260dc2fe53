//! Parsing and content checks for backend answers.
//!
//! Pretraining answers are free-form markdown. Instruction answers use the
//! `Question@Answer@Question@Answer@...` layout.

use std::fmt;

use regex::{Regex, RegexBuilder};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::Stage;

pub const SEPARATOR: char = '@';
pub const FULLWIDTH_SEPARATOR: char = '\u{FF20}';

/// One question/answer exchange. Both sides are trimmed and non-empty.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogTurn {
    pub question: String,
    pub answer: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    Ticker,
    Leakage,
    SegmentName,
}

impl fmt::Display for ViolationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ViolationKind::Ticker => "ticker",
            ViolationKind::Leakage => "leakage",
            ViolationKind::SegmentName => "segment_name",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[error("content violation ({kind}): {matched:?} at bytes {start}..{end}")]
pub struct ContentViolation {
    pub kind: ViolationKind,
    pub matched: String,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("empty answer")]
    EmptyAnswer,
    #[error("odd number of '@'-separated fields ({fields})")]
    UnpairedSegments { fields: usize },
    #[error("field {index} is empty")]
    EmptyField { index: usize },
    #[error("{count} turns, accepted range is {min}..={max}")]
    TurnCountOutOfRange { count: usize, min: usize, max: usize },
    #[error("{violation}{}", turn.map(|t| format!(" in turn {t}")).unwrap_or_default())]
    ContentViolation {
        /// `None` for pretraining answers.
        turn: Option<usize>,
        violation: ContentViolation,
    },
}

impl ParseError {
    /// Stable short code used in reject files and manifest counts.
    pub fn code(&self) -> &'static str {
        match self {
            ParseError::EmptyAnswer => "empty_answer",
            ParseError::UnpairedSegments { .. } => "unpaired_segments",
            ParseError::EmptyField { .. } => "empty_field",
            ParseError::TurnCountOutOfRange { .. } => "turn_count_out_of_range",
            ParseError::ContentViolation { violation, .. } => match violation.kind {
                ViolationKind::Ticker => "content_violation:ticker",
                ViolationKind::Leakage => "content_violation:leakage",
                ViolationKind::SegmentName => "content_violation:segment_name",
            },
        }
    }
}

/// Word lists for content checks. Per-language variants live in the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContentRules {
    /// Regex for exchange tickers; A-share codes are six digits.
    pub ticker_pattern: String,
    /// Phrases that reveal the held-out segment in instruction dialogs.
    pub leakage_phrases: Vec<String>,
    /// Data-segment names that must not be referred to as such.
    pub segment_names: Vec<String>,
    /// Nouns that turn a segment name into a reference ("close column").
    pub reference_nouns: Vec<String>,
    pub min_turns: usize,
    pub max_turns: usize,
}

impl Default for ContentRules {
    fn default() -> Self {
        ContentRules {
            ticker_pattern: r"\b\d{6}\b".into(),
            leakage_phrases: vec!["future data".into(), "predict data".into()],
            segment_names: ["open", "high", "low", "close", "volume", "date"]
                .map(String::from)
                .to_vec(),
            reference_nouns: ["column", "field", "segment", "data segment"]
                .map(String::from)
                .to_vec(),
            min_turns: 3,
            max_turns: 7,
        }
    }
}

/// Compiled form of [`ContentRules`].
#[derive(Debug, Clone)]
pub struct ContentPolicy {
    ticker: Regex,
    leakage: Option<Regex>,
    segment: Option<Regex>,
    pub min_turns: usize,
    pub max_turns: usize,
}

fn phrase_pattern(phrase: &str) -> String {
    phrase
        .split_whitespace()
        .map(regex::escape)
        .collect::<Vec<_>>()
        .join(r"[\s\-_]+")
}

fn alternation(items: &[String]) -> Option<String> {
    let parts: Vec<String> = items
        .iter()
        .filter(|s| !s.trim().is_empty())
        .map(|s| phrase_pattern(s))
        .collect();
    (!parts.is_empty()).then(|| parts.join("|"))
}

impl ContentPolicy {
    pub fn new(rules: &ContentRules) -> Result<Self, regex::Error> {
        let ticker = Regex::new(&rules.ticker_pattern)?;
        let leakage = alternation(&rules.leakage_phrases)
            .map(|alt| {
                RegexBuilder::new(&format!(r"\b(?:{alt})\b"))
                    .case_insensitive(true)
                    .build()
            })
            .transpose()?;
        // A segment name counts as a reference only when quoted or followed by
        // a reference noun; ordinary prose like "closed higher" passes.
        let segment = match (alternation(&rules.segment_names), alternation(&rules.reference_nouns)) {
            (Some(names), nouns) => {
                let quoted = format!(r#"[`'"\u{{2018}}\u{{201C}}]\s*(?:{names})\s*[`'"\u{{2019}}\u{{201D}}]"#);
                let pattern = match nouns {
                    Some(nouns) => format!(r"{quoted}|\b(?:{names})\s+(?:{nouns})s?\b"),
                    None => quoted,
                };
                Some(RegexBuilder::new(&pattern).case_insensitive(true).build()?)
            }
            (None, _) => None,
        };
        Ok(ContentPolicy {
            ticker,
            leakage,
            segment,
            min_turns: rules.min_turns,
            max_turns: rules.max_turns,
        })
    }

    pub fn find_ticker<'t>(&self, text: &'t str) -> Option<regex::Match<'t>> {
        self.ticker.find(text)
    }

    pub fn find_leakage<'t>(&self, text: &'t str) -> Option<regex::Match<'t>> {
        self.leakage.as_ref().and_then(|r| r.find(text))
    }
}

impl Default for ContentPolicy {
    fn default() -> Self {
        ContentPolicy::new(&ContentRules::default()).expect("default content rules compile")
    }
}

fn violation(kind: ViolationKind, m: regex::Match<'_>) -> ContentViolation {
    ContentViolation {
        kind,
        matched: m.as_str().to_string(),
        start: m.start(),
        end: m.end(),
    }
}

/// Rejects tickers, (for instruction dialogs) leakage of the held-out segment,
/// and explicit references to data-segment names.
pub fn validate_content(text: &str, stage: Stage, policy: &ContentPolicy) -> Result<(), ContentViolation> {
    if let Some(m) = policy.ticker.find(text) {
        return Err(violation(ViolationKind::Ticker, m));
    }
    if stage == Stage::Instruct {
        if let Some(m) = policy.find_leakage(text) {
            return Err(violation(ViolationKind::Leakage, m));
        }
    }
    if let Some(m) = policy.segment.as_ref().and_then(|r| r.find(text)) {
        return Err(violation(ViolationKind::SegmentName, m));
    }
    Ok(())
}

pub fn parse_pretrain_answer(raw: &str, policy: &ContentPolicy) -> Result<String, ParseError> {
    let answer = raw.trim();
    if answer.is_empty() {
        return Err(ParseError::EmptyAnswer);
    }
    validate_content(answer, Stage::Pretrain, policy)
        .map_err(|violation| ParseError::ContentViolation { turn: None, violation })?;
    Ok(answer.to_string())
}

/// Splits `Q@A@Q@A@...` into turns without any turn-count or content checks.
/// A full-width `＠` is treated as `@`; one trailing empty field is dropped.
pub fn split_dialog(raw: &str) -> Result<Vec<DialogTurn>, ParseError> {
    let normalized = raw.replace(FULLWIDTH_SEPARATOR, "@");
    let trimmed = normalized.trim();
    if trimmed.is_empty() {
        return Err(ParseError::EmptyAnswer);
    }
    let mut fields: Vec<&str> = trimmed.split(SEPARATOR).map(str::trim).collect();
    if fields.last().is_some_and(|f| f.is_empty()) {
        fields.pop();
    }
    if fields.len() % 2 == 1 {
        return Err(ParseError::UnpairedSegments { fields: fields.len() });
    }
    if let Some(index) = fields.iter().position(|f| f.is_empty()) {
        return Err(ParseError::EmptyField { index });
    }
    Ok(fields
        .chunks_exact(2)
        .map(|qa| DialogTurn {
            question: qa[0].to_string(),
            answer: qa[1].to_string(),
        })
        .collect())
}

/// Splits, enforces the accepted turn band, and content-checks every turn.
pub fn parse_instruct_dialog(raw: &str, policy: &ContentPolicy) -> Result<Vec<DialogTurn>, ParseError> {
    let turns = split_dialog(raw)?;
    if turns.len() < policy.min_turns || turns.len() > policy.max_turns {
        return Err(ParseError::TurnCountOutOfRange {
            count: turns.len(),
            min: policy.min_turns,
            max: policy.max_turns,
        });
    }
    for (i, turn) in turns.iter().enumerate() {
        for text in [&turn.question, &turn.answer] {
            validate_content(text, Stage::Instruct, policy).map_err(|violation| {
                ParseError::ContentViolation {
                    turn: Some(i),
                    violation,
                }
            })?;
        }
    }
    Ok(turns)
}

/// Inverse of [`split_dialog`] for `@`-free turns.
pub fn join_dialog(turns: &[DialogTurn]) -> String {
    let mut out = String::new();
    for t in turns {
        out.push_str(&t.question);
        out.push(SEPARATOR);
        out.push_str(&t.answer);
        out.push(SEPARATOR);
    }
    out
}
