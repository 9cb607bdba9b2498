//! Calibration error metrics.
//!
//! ECE groups predictions into `M` equal-width confidence buckets over
//! `[0, 1]` and takes the size-weighted mean of `|Acc(B_m) - Conf(B_m)|`.
//! MacroCE averages two instance-level errors, one over correct predictions
//! (`1 - conf`) and one over incorrect predictions (`conf`), so a confident
//! wrong answer can never be hidden by bucket averaging.
//!
//! Bucket `m` covers `[m/M, (m+1)/M)`; the last bucket is closed at `1.0`.

mod density;
mod wins;

pub use density::{distribution_curve, CurveKind, DistributionCurve, FALLBACK_BANDWIDTH};
pub use wins::{wins_table, ErrorMatrix};

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::confidence::ExtractionMethod;
use crate::qa::EvalRecord;

pub const DEFAULT_BUCKETS: usize = 10;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("metric over an empty record set")]
    Empty,
    #[error("number of buckets must be at least 1")]
    NoBuckets,
    #[error("record {item_id:?} has no {method} confidence")]
    MissingMethod { item_id: String, method: ExtractionMethod },
    #[error("record {item_id:?} has confidence {value} outside [0, 1]")]
    OutOfRange { item_id: String, value: f64 },
    #[error("record {item_id:?} has a non-finite confidence")]
    NonFinite { item_id: String },
    #[error("error matrix is not rectangular: row {row:?} has {found} entries, expected {expected}")]
    Ragged { row: String, found: usize, expected: usize },
    #[error("distribution needs at least {0} grid points")]
    GridTooSmall(usize),
}

/// Borrowed view of one prediction under one extraction method.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scored<'a> {
    pub id: &'a str,
    pub confidence: f64,
    pub correct: bool,
}

impl<'a> Scored<'a> {
    pub fn new(id: &'a str, confidence: f64, correct: bool) -> Self {
        Self {
            id,
            confidence,
            correct,
        }
    }
}

/// Projects records onto one extraction method.
pub fn scored(records: &[EvalRecord], method: ExtractionMethod) -> Result<Vec<Scored<'_>>, MetricsError> {
    records
        .iter()
        .map(|r| {
            r.confidences
                .get(&method)
                .map(|&c| Scored::new(&r.item_id, c, r.correct))
                .ok_or_else(|| MetricsError::MissingMethod {
                    item_id: r.item_id.clone(),
                    method,
                })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Degenerate {
    #[default]
    None,
    NoCorrect,
    NoIncorrect,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bucket {
    pub index: usize,
    pub lower: f64,
    pub upper: f64,
    pub member_ids: Vec<String>,
    pub avg_confidence: f64,
    pub accuracy: f64,
}

impl Bucket {
    pub fn len(&self) -> usize {
        self.member_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.member_ids.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationConfig {
    pub num_buckets: usize,
    /// Clamp confidences into `[0, 1]` before computing anything. When off,
    /// out-of-range values make ECE undefined but ICE/MacroCE still computable.
    pub clamp: bool,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            num_buckets: DEFAULT_BUCKETS,
            clamp: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSummary {
    /// `None` when clamping is off and a confidence falls outside `[0, 1]`.
    pub ece: Option<f64>,
    pub ice_pos: Option<f64>,
    pub ice_neg: Option<f64>,
    pub macro_ce: f64,
    pub n: usize,
    pub n_pos: usize,
    pub n_neg: usize,
    pub avg_confidence: f64,
    pub accuracy: f64,
    pub gap: f64,
    pub buckets: Vec<Bucket>,
    pub degenerate_flag: Degenerate,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub out_of_range_ids: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceGap {
    pub avg_confidence: f64,
    pub accuracy: f64,
    /// Positive means over-confident.
    pub gap: f64,
}

/// Bucket index for a confidence in `[0, 1]`.
pub fn bucket_index(confidence: f64, num_buckets: usize) -> usize {
    let m = num_buckets as f64;
    let last = num_buckets - 1;
    let mut idx = ((confidence * m) as usize).min(last);
    // The product can round across a boundary; settle against the bounds
    // exactly as `lower_bound` computes them.
    while idx > 0 && confidence < lower_bound(idx, num_buckets) {
        idx -= 1;
    }
    while idx < last && confidence >= lower_bound(idx + 1, num_buckets) {
        idx += 1;
    }
    idx
}

fn lower_bound(index: usize, num_buckets: usize) -> f64 {
    index as f64 / num_buckets as f64
}

fn checked(entry: &Scored<'_>, clamp: bool) -> Result<f64, MetricsError> {
    let c = entry.confidence;
    if !c.is_finite() {
        return Err(MetricsError::NonFinite {
            item_id: entry.id.to_string(),
        });
    }
    if (0.0..=1.0).contains(&c) {
        Ok(c)
    } else if clamp {
        Ok(c.clamp(0.0, 1.0))
    } else {
        Err(MetricsError::OutOfRange {
            item_id: entry.id.to_string(),
            value: c,
        })
    }
}

pub fn bucketize(entries: &[Scored<'_>], num_buckets: usize, clamp: bool) -> Result<Vec<Bucket>, MetricsError> {
    if num_buckets == 0 {
        return Err(MetricsError::NoBuckets);
    }
    let mut members: Vec<Vec<(String, f64, bool)>> = (0..num_buckets).map(|_| Vec::new()).collect();
    for entry in entries {
        let c = checked(entry, clamp)?;
        members[bucket_index(c, num_buckets)].push((entry.id.to_string(), c, entry.correct));
    }
    Ok(members
        .into_iter()
        .enumerate()
        .map(|(index, group)| {
            let (avg_confidence, accuracy) = if group.is_empty() {
                (0.0, 0.0)
            } else {
                let size = group.len() as f64;
                let conf_sum: f64 = group.iter().map(|(_, c, _)| c).sum();
                let correct = group.iter().filter(|(_, _, ok)| *ok).count();
                (conf_sum / size, correct as f64 / size)
            };
            Bucket {
                index,
                lower: lower_bound(index, num_buckets),
                upper: lower_bound(index + 1, num_buckets),
                member_ids: group.into_iter().map(|(id, _, _)| id).collect(),
                avg_confidence,
                accuracy,
            }
        })
        .collect())
}

/// `ECE = Σ_m (|B_m| / N) · |Acc(B_m) − Conf(B_m)|` over a bucketing.
pub fn ece_from_buckets(buckets: &[Bucket]) -> Result<f64, MetricsError> {
    let n: usize = buckets.iter().map(Bucket::len).sum();
    if n == 0 {
        return Err(MetricsError::Empty);
    }
    Ok(buckets
        .iter()
        .filter(|b| !b.is_empty())
        .map(|b| (b.len() as f64 / n as f64) * libm::fabs(b.accuracy - b.avg_confidence))
        .sum())
}

pub fn ece(entries: &[Scored<'_>], num_buckets: usize, clamp: bool) -> Result<f64, MetricsError> {
    if entries.is_empty() {
        return Err(MetricsError::Empty);
    }
    ece_from_buckets(&bucketize(entries, num_buckets, clamp)?)
}

/// Mean of `1 − conf` over correct predictions; `None` if there are none.
pub fn ice_pos(entries: &[Scored<'_>]) -> Option<f64> {
    mean(entries.iter().filter(|e| e.correct).map(|e| 1.0 - e.confidence))
}

/// Mean of `conf` over incorrect predictions; `None` if there are none.
pub fn ice_neg(entries: &[Scored<'_>]) -> Option<f64> {
    mean(entries.iter().filter(|e| !e.correct).map(|e| e.confidence))
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, count) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (count > 0).then(|| sum / count as f64)
}

/// MacroCE. With one class missing the defined ICE is returned along with a
/// flag naming the missing class.
pub fn macro_ce(entries: &[Scored<'_>]) -> Result<(f64, Degenerate), MetricsError> {
    match (ice_pos(entries), ice_neg(entries)) {
        (Some(pos), Some(neg)) => Ok(((pos + neg) / 2.0, Degenerate::None)),
        (Some(pos), None) => Ok((pos, Degenerate::NoIncorrect)),
        (None, Some(neg)) => Ok((neg, Degenerate::NoCorrect)),
        (None, None) => Err(MetricsError::Empty),
    }
}

pub fn confidence_gap(entries: &[Scored<'_>]) -> Result<ConfidenceGap, MetricsError> {
    if entries.is_empty() {
        return Err(MetricsError::Empty);
    }
    let n = entries.len() as f64;
    let avg_confidence = entries.iter().map(|e| e.confidence).sum::<f64>() / n;
    let accuracy = entries.iter().filter(|e| e.correct).count() as f64 / n;
    Ok(ConfidenceGap {
        avg_confidence,
        accuracy,
        gap: avg_confidence - accuracy,
    })
}

pub fn summarize(entries: &[Scored<'_>], config: &CalibrationConfig) -> Result<CalibrationSummary, MetricsError> {
    if entries.is_empty() {
        return Err(MetricsError::Empty);
    }
    if config.num_buckets == 0 {
        return Err(MetricsError::NoBuckets);
    }
    let mut prepared = Vec::with_capacity(entries.len());
    let mut out_of_range_ids = Vec::new();
    for entry in entries {
        let confidence = match checked(entry, config.clamp) {
            Ok(c) => c,
            Err(MetricsError::OutOfRange { item_id, .. }) => {
                out_of_range_ids.push(item_id);
                entry.confidence
            }
            Err(e) => return Err(e),
        };
        prepared.push(Scored::new(entry.id, confidence, entry.correct));
    }

    let (ece, buckets) = if out_of_range_ids.is_empty() {
        let buckets = bucketize(&prepared, config.num_buckets, config.clamp)?;
        (Some(ece_from_buckets(&buckets)?), buckets)
    } else {
        (None, Vec::new())
    };
    let (macro_ce, degenerate_flag) = macro_ce(&prepared)?;
    let gap = confidence_gap(&prepared)?;
    let n_pos = prepared.iter().filter(|e| e.correct).count();
    Ok(CalibrationSummary {
        ece,
        ice_pos: ice_pos(&prepared),
        ice_neg: ice_neg(&prepared),
        macro_ce,
        n: prepared.len(),
        n_pos,
        n_neg: prepared.len() - n_pos,
        avg_confidence: gap.avg_confidence,
        accuracy: gap.accuracy,
        gap: gap.gap,
        buckets,
        degenerate_flag,
        out_of_range_ids,
    })
}
