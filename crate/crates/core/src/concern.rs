//! Detecting answers that express concern, selecting hard examples, and
//! accounting for knowledge augmentation.

use alloc::collections::BTreeSet;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::qa::{EvalRecord, QAItem};

pub const DEFAULT_LEXICON_VERSION: &str = "default-1";

pub const DEFAULT_PATTERNS: &[&str] = &[
    "not sufficient evidence",
    "not yet sufficient evidence",
    "no sufficient evidence",
    "not possible to answer",
    "cannot be answered",
    "further research",
    "it depends",
    "need further",
    "insufficient evidence",
    "current evidence",
];

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConcernError {
    #[error("lexicon has no patterns")]
    EmptyLexicon,
    #[error("pattern {0:?} would match any text")]
    DegeneratePattern(String),
    #[error("concern rate of an empty set")]
    Empty,
    #[error("fraction {0} is outside (0, 1]")]
    Fraction(f64),
    #[error("item {item_id:?} has no external knowledge")]
    MissingKnowledge { item_id: String },
    #[error("selected item {item_id:?} missing from the {side} records")]
    MissingRecord { item_id: String, side: &'static str },
    #[error("no items selected")]
    NothingSelected,
}

/// Lowercased alphanumeric words; everything else separates.
fn words(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric() && c != '*')
        .filter(|w| !w.is_empty())
        .map(ToString::to_string)
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
struct Compiled {
    source: String,
    /// `None` is a one-word wildcard.
    words: Vec<Option<String>>,
}

/// Case-insensitive phrases matched on whole words. `*` stands for any
/// single word.
#[derive(Debug, Clone, PartialEq)]
pub struct ConcernLexicon {
    pub version: String,
    patterns: Vec<Compiled>,
}

impl ConcernLexicon {
    pub fn new<S: AsRef<str>>(version: impl Into<String>, patterns: &[S]) -> Result<Self, ConcernError> {
        let mut compiled = Vec::with_capacity(patterns.len());
        for p in patterns {
            let source = p.as_ref().trim().to_string();
            let words: Vec<Option<String>> = words(&source)
                .into_iter()
                .map(|w| if w == "*" { None } else { Some(w.replace('*', "")) })
                .filter(|w| w.as_deref() != Some(""))
                .collect();
            if words.iter().all(Option::is_none) {
                return Err(ConcernError::DegeneratePattern(source));
            }
            compiled.push(Compiled { source, words });
        }
        if compiled.is_empty() {
            return Err(ConcernError::EmptyLexicon);
        }
        Ok(Self {
            version: version.into(),
            patterns: compiled,
        })
    }

    pub fn patterns(&self) -> impl Iterator<Item = &str> {
        self.patterns.iter().map(|p| p.source.as_str())
    }
}

impl Default for ConcernLexicon {
    fn default() -> Self {
        Self::new(DEFAULT_LEXICON_VERSION, DEFAULT_PATTERNS).expect("shipped lexicon is valid")
    }
}

/// Parses a lexicon file: one pattern per line, `#` starts a comment.
pub fn parse_lexicon(version: impl Into<String>, text: &str) -> Result<ConcernLexicon, ConcernError> {
    let lines: Vec<&str> = text
        .lines()
        .map(|l| l.split('#').next().unwrap_or("").trim())
        .filter(|l| !l.is_empty())
        .collect();
    ConcernLexicon::new(version, &lines)
}

/// Whether any pattern occurs in `text`, and which ones did.
pub fn detect_concern(text: &str, lexicon: &ConcernLexicon) -> (bool, Vec<String>) {
    let haystack = words(text);
    let matched: Vec<String> = lexicon
        .patterns
        .iter()
        .filter(|p| {
            haystack.windows(p.words.len()).any(|window| {
                window
                    .iter()
                    .zip(&p.words)
                    .all(|(w, pat)| pat.as_ref().is_none_or(|pat| pat == w))
            })
        })
        .map(|p| p.source.clone())
        .collect();
    (!matched.is_empty(), matched)
}

pub fn concern_rate(flags: impl IntoIterator<Item = bool>) -> Result<f64, ConcernError> {
    let (mut flagged, mut total) = (0usize, 0usize);
    for f in flags {
        total += 1;
        flagged += usize::from(f);
    }
    if total == 0 {
        return Err(ConcernError::Empty);
    }
    Ok(flagged as f64 / total as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    ConcernTriggered,
    RandomControl,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HardSelection {
    pub mode: SelectionMode,
    /// Sorted ids.
    pub ids: Vec<String>,
    /// `ids.len()` over the number of distinct items.
    pub realized_fraction: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

fn sample_sorted(pool: &[String], k: usize, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked: Vec<String> = rand::seq::index::sample(&mut rng, pool.len(), k)
        .into_iter()
        .map(|i| pool[i].clone())
        .collect();
    picked.sort();
    picked
}

/// Chooses items for augmentation.
///
/// `fraction` of the concern-flagged set is kept (all of it at 1.0); the
/// random control draws the same number of ids uniformly from every item.
/// Both draws depend only on `(seed, id set, cardinality)`.
pub fn select_hard(
    records: &[EvalRecord],
    mode: SelectionMode,
    fraction: f64,
    seed: u64,
) -> Result<HardSelection, ConcernError> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(ConcernError::Fraction(fraction));
    }
    let all: Vec<String> = records
        .iter()
        .map(|r| r.item_id.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let flagged: Vec<String> = records
        .iter()
        .filter(|r| r.concern)
        .map(|r| r.item_id.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let k = libm::ceil(fraction * flagged.len() as f64) as usize;
    let (ids, warning) = if flagged.is_empty() {
        (
            Vec::new(),
            Some("no concern-flagged items; selection is empty".to_string()),
        )
    } else {
        let ids = match mode {
            SelectionMode::ConcernTriggered if k == flagged.len() => flagged,
            SelectionMode::ConcernTriggered => sample_sorted(&flagged, k, seed),
            SelectionMode::RandomControl => sample_sorted(&all, k, seed),
        };
        (ids, None)
    };
    let realized_fraction = if all.is_empty() {
        0.0
    } else {
        ids.len() as f64 / all.len() as f64
    };
    Ok(HardSelection {
        mode,
        ids,
        realized_fraction,
        warning,
    })
}

/// Prepends the item's external knowledge to its question and keeps the
/// original question alongside.
pub fn augment_with_knowledge(item: &QAItem) -> Result<QAItem, ConcernError> {
    let knowledge = item
        .external_knowledge
        .as_deref()
        .ok_or_else(|| ConcernError::MissingKnowledge {
            item_id: item.id.clone(),
        })?;
    Ok(QAItem {
        question: alloc::format!("Knowledge: {knowledge}\n{}", item.question),
        original_question: Some(item.original_question.clone().unwrap_or_else(|| item.question.clone())),
        ..item.clone()
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationOutcome {
    pub selection_mode: SelectionMode,
    pub selected_ids: Vec<String>,
    pub accuracy_before: f64,
    pub accuracy_after: f64,
    pub absolute_delta: f64,
    /// `(after - before) / before`; `None` when `before` is zero.
    pub relative_improvement: Option<f64>,
}

fn accuracy_over(records: &[EvalRecord], ids: &[String], side: &'static str) -> Result<f64, ConcernError> {
    let mut correct = 0usize;
    for id in ids {
        let record = records
            .iter()
            .find(|r| &r.item_id == id)
            .ok_or_else(|| ConcernError::MissingRecord {
                item_id: id.clone(),
                side,
            })?;
        correct += usize::from(record.correct);
    }
    Ok(correct as f64 / ids.len() as f64)
}

/// Accuracy on the selected items before and after augmentation.
pub fn improvement(
    before: &[EvalRecord],
    after: &[EvalRecord],
    selected: &[String],
    mode: SelectionMode,
) -> Result<AugmentationOutcome, ConcernError> {
    if selected.is_empty() {
        return Err(ConcernError::NothingSelected);
    }
    let accuracy_before = accuracy_over(before, selected, "before")?;
    let accuracy_after = accuracy_over(after, selected, "after")?;
    let relative_improvement = (accuracy_before > 0.0).then(|| (accuracy_after - accuracy_before) / accuracy_before);
    Ok(AugmentationOutcome {
        selection_mode: mode,
        selected_ids: selected.to_vec(),
        accuracy_before,
        accuracy_after,
        absolute_delta: accuracy_after - accuracy_before,
        relative_improvement,
    })
}
