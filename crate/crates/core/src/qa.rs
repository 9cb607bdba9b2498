//! Questions, answers and exact-match scoring.
//!
//! Normalization follows the SQuAD convention: lowercase, drop punctuation,
//! drop the articles `a`/`an`/`the`, collapse whitespace.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::confidence::ExtractionMethod;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum QaError {
    #[error("item has no gold answers")]
    NoGoldAnswers,
    #[error("boolean item alias {alias:?} is not a boolean answer")]
    NonBooleanAlias { alias: String },
    #[error("boolean item has contradicting gold aliases")]
    ContradictingAliases,
    #[error("accuracy of an empty record set")]
    EmptyRecords,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerKind {
    Boolean,
    FreeForm,
}

/// One dataset question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QAItem {
    pub id: String,
    pub question: String,
    #[serde(rename = "answers")]
    pub gold_answers: Vec<String>,
    pub answer_kind: AnswerKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_facts: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub external_knowledge: Option<String>,
    /// Set when `question` was rewritten (knowledge augmentation).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub original_question: Option<String>,
}

impl QAItem {
    /// Checks the per-item invariants: at least one gold alias, and for
    /// boolean items every alias resolves to the same boolean.
    pub fn validate(&self) -> Result<(), QaError> {
        if self.gold_answers.is_empty() {
            return Err(QaError::NoGoldAnswers);
        }
        if self.answer_kind == AnswerKind::Boolean {
            self.gold_boolean()?;
        }
        Ok(())
    }

    /// The gold boolean of a boolean item. Aliases may be written as
    /// true/false or yes/no.
    pub fn gold_boolean(&self) -> Result<bool, QaError> {
        let mut value = None;
        for alias in &self.gold_answers {
            let parsed = match normalize_answer(alias).as_str() {
                "true" | "yes" => true,
                "false" | "no" => false,
                _ => return Err(QaError::NonBooleanAlias { alias: alias.clone() }),
            };
            match value {
                None => value = Some(parsed),
                Some(v) if v != parsed => return Err(QaError::ContradictingAliases),
                Some(_) => {}
            }
        }
        value.ok_or(QaError::NoGoldAnswers)
    }
}

/// Tri-state boolean reading of a model answer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoolAnswer {
    True,
    False,
    Unresolved,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractedAnswer {
    pub raw_text: String,
    pub normalized: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boolean_value: Option<BoolAnswer>,
}

impl ExtractedAnswer {
    pub fn new(raw_text: &str, kind: AnswerKind) -> Self {
        let boolean_value = match kind {
            AnswerKind::Boolean => Some(extract_boolean(raw_text)),
            AnswerKind::FreeForm => None,
        };
        Self {
            raw_text: raw_text.to_string(),
            normalized: normalize_answer(raw_text),
            boolean_value,
        }
    }
}

/// The atom of metric computation: one item under one strategy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub item_id: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub dataset: String,
    pub strategy_id: String,
    pub correct: bool,
    pub confidences: BTreeMap<ExtractionMethod, f64>,
    pub concern: bool,
}

fn is_article(word: &str) -> bool {
    matches!(word, "a" | "an" | "the")
}

pub fn normalize_answer(raw: &str) -> String {
    let lowered = raw.to_lowercase();
    let stripped: String = lowered
        .chars()
        .filter(|c| c.is_alphanumeric() || c.is_whitespace())
        .collect();
    let mut out = String::with_capacity(stripped.len());
    for word in stripped.split_whitespace().filter(|w| !is_article(w)) {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(word);
    }
    out
}

/// Reads the first boolean word of an answer. Verdict-first answers with
/// trailing commentary resolve to their verdict.
pub fn extract_boolean(raw: &str) -> BoolAnswer {
    let normalized = normalize_answer(raw);
    for token in normalized.split(' ') {
        match token {
            "true" | "yes" => return BoolAnswer::True,
            "false" | "no" => return BoolAnswer::False,
            _ => {}
        }
    }
    BoolAnswer::Unresolved
}

/// Exact match after normalization. Unresolved booleans are never correct,
/// and a boolean item with malformed gold aliases scores false.
pub fn exact_match(answer: &ExtractedAnswer, item: &QAItem) -> bool {
    match item.answer_kind {
        AnswerKind::Boolean => {
            let predicted = answer
                .boolean_value
                .unwrap_or_else(|| extract_boolean(&answer.raw_text));
            match (predicted, item.gold_boolean()) {
                (BoolAnswer::True, Ok(gold)) => gold,
                (BoolAnswer::False, Ok(gold)) => !gold,
                _ => false,
            }
        }
        AnswerKind::FreeForm => item
            .gold_answers
            .iter()
            .any(|gold| normalize_answer(gold) == answer.normalized),
    }
}

pub fn accuracy(records: &[EvalRecord]) -> Result<f64, QaError> {
    if records.is_empty() {
        return Err(QaError::EmptyRecords);
    }
    let correct = records.iter().filter(|r| r.correct).count();
    Ok(correct as f64 / records.len() as f64)
}
