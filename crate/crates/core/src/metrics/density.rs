//! Confidence distributions as plot data: normalized histograms and
//! Gaussian kernel density estimates.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{bucket_index, MetricsError};

/// Bandwidth used when the sample has no spread.
pub const FALLBACK_BANDWIDTH: f64 = 0.05;

/// Support padding on each side of the data, in bandwidths.
const PAD_BANDWIDTHS: f64 = 5.0;

/// Upper bound on emitted KDE grid points.
const MAX_GRID: usize = 1 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveKind {
    Histogram,
    Kde,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionCurve {
    pub kind: CurveKind,
    /// `(x, density)` with strictly increasing `x`.
    pub points: Vec<(f64, f64)>,
    /// Kernel bandwidth, or bin width for histograms.
    pub bandwidth: f64,
    pub bandwidth_fallback: bool,
    /// Share of the estimated mass lying outside `[0, 1]`.
    pub mass_outside_unit: f64,
}

impl DistributionCurve {
    /// Trapezoid-rule integral of the curve.
    pub fn integral(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0)
            .sum()
    }
}

pub fn distribution_curve(
    confidences: &[f64],
    kind: CurveKind,
    grid_size: usize,
) -> Result<DistributionCurve, MetricsError> {
    if confidences.is_empty() {
        return Err(MetricsError::Empty);
    }
    if grid_size < 2 {
        return Err(MetricsError::GridTooSmall(2));
    }
    if confidences.iter().any(|c| !c.is_finite()) {
        return Err(MetricsError::NonFinite {
            item_id: alloc::string::String::new(),
        });
    }
    Ok(match kind {
        CurveKind::Histogram => histogram(confidences, grid_size),
        CurveKind::Kde => kde(confidences, grid_size),
    })
}

fn histogram(values: &[f64], bins: usize) -> DistributionCurve {
    let width = 1.0 / bins as f64;
    let mut counts = alloc::vec![0usize; bins];
    let mut outside = 0usize;
    for &v in values {
        if !(0.0..=1.0).contains(&v) {
            outside += 1;
        }
        counts[bucket_index(v.clamp(0.0, 1.0), bins)] += 1;
    }
    let n = values.len() as f64;
    DistributionCurve {
        kind: CurveKind::Histogram,
        points: counts
            .iter()
            .enumerate()
            .map(|(i, &c)| ((i as f64 + 0.5) * width, c as f64 / (n * width)))
            .collect(),
        bandwidth: width,
        bandwidth_fallback: false,
        mass_outside_unit: outside as f64 / n,
    }
}

/// Silverman's rule `0.9 · min(σ, IQR/1.34) · n^(−1/5)`. When the IQR is
/// zero but σ is not, σ alone is used. Returns `None` without spread.
pub fn silverman_bandwidth(values: &[f64]) -> Option<f64> {
    let n = values.len();
    if n < 2 {
        return None;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    let sigma = libm::sqrt(var);
    if sigma <= 0.0 {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let iqr = quantile(&sorted, 0.75) - quantile(&sorted, 0.25);
    let spread = if iqr > 0.0 { sigma.min(iqr / 1.34) } else { sigma };
    Some(0.9 * spread * libm::pow(n as f64, -0.2))
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = libm::floor(pos) as usize;
    let hi = libm::ceil(pos) as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * (1.0 + libm::erf(z / core::f64::consts::SQRT_2))
}

fn kde(values: &[f64], grid_size: usize) -> DistributionCurve {
    let (bandwidth, bandwidth_fallback) = match silverman_bandwidth(values) {
        Some(h) => (h, false),
        None => (FALLBACK_BANDWIDTH, true),
    };
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = min.min(0.0) - PAD_BANDWIDTHS * bandwidth;
    let hi = max.max(1.0) + PAD_BANDWIDTHS * bandwidth;
    // Spacing of at most one bandwidth keeps the trapezoid integral of a
    // Gaussian mixture within ~1e-8 of its true mass.
    let needed = libm::ceil((hi - lo) / bandwidth) as usize + 1;
    let count = grid_size.max(needed).min(MAX_GRID);
    let step = (hi - lo) / (count - 1) as f64;

    let n = values.len() as f64;
    let norm = 1.0 / (n * bandwidth * libm::sqrt(2.0 * core::f64::consts::PI));
    let points = (0..count)
        .map(|i| {
            let x = lo + step * i as f64;
            let density = values
                .iter()
                .map(|v| {
                    let z = (x - v) / bandwidth;
                    libm::exp(-0.5 * z * z)
                })
                .sum::<f64>()
                * norm;
            (x, density)
        })
        .collect();
    let mass_outside_unit = values
        .iter()
        .map(|v| normal_cdf(-v / bandwidth) + 1.0 - normal_cdf((1.0 - v) / bandwidth))
        .sum::<f64>()
        / n;

    DistributionCurve {
        kind: CurveKind::Kde,
        points,
        bandwidth,
        bandwidth_fallback,
        mass_outside_unit,
    }
}
