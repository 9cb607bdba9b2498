use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::qa::{BoolAnswer, ExtractedAnswer};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoteDetail {
    /// Vote key of every candidate, in sampling order.
    pub candidates: Vec<String>,
    /// `(key, count)` in first-occurrence order.
    pub counts: Vec<(String, usize)>,
    pub winner: String,
    /// Index of the first candidate carrying the winning key.
    pub winner_index: usize,
}

/// Boolean answers vote by their verdict so that "True." and "True, since
/// ..." agree; free-form answers vote by normalized text.
pub fn vote_key(answer: &ExtractedAnswer) -> String {
    match answer.boolean_value {
        Some(BoolAnswer::True) => "true".into(),
        Some(BoolAnswer::False) => "false".into(),
        Some(BoolAnswer::Unresolved) => "unresolved".into(),
        None => answer.normalized.clone(),
    }
}

/// Plurality vote. Ties go to the tied answer that appeared first.
/// Returns `None` for an empty candidate list.
pub fn majority_vote(candidates: &[ExtractedAnswer]) -> Option<VoteDetail> {
    let keys: Vec<String> = candidates.iter().map(vote_key).collect();
    let mut counts: Vec<(String, usize)> = Vec::new();
    for key in &keys {
        match counts.iter_mut().find(|(k, _)| k == key) {
            Some((_, c)) => *c += 1,
            None => counts.push((key.clone(), 1)),
        }
    }
    // `counts` is in first-occurrence order, so the first maximum is the
    // earliest among ties.
    let (winner, _) = counts
        .iter()
        .fold(None, |best: Option<&(String, usize)>, entry| match best {
            Some(b) if b.1 >= entry.1 => Some(b),
            _ => Some(entry),
        })?
        .clone();
    let winner_index = keys.iter().position(|k| *k == winner)?;
    Some(VoteDetail {
        candidates: keys,
        counts,
        winner,
        winner_index,
    })
}
