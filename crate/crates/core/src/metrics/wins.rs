use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use super::MetricsError;

/// Calibration errors of each prompting method (rows) under each extraction
/// method (columns).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ErrorMatrix {
    pub columns: Vec<String>,
    pub rows: Vec<(String, Vec<f64>)>,
}

/// Counts, per column, the rows in which that column has the strictly
/// lowest error. A tied minimum awards nothing.
pub fn wins_table(matrix: &ErrorMatrix) -> Result<BTreeMap<String, usize>, MetricsError> {
    if matrix.columns.is_empty() || matrix.rows.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut wins: BTreeMap<String, usize> = matrix.columns.iter().map(|c| (c.clone(), 0)).collect();
    for (row, errors) in &matrix.rows {
        if errors.len() != matrix.columns.len() {
            return Err(MetricsError::Ragged {
                row: row.clone(),
                found: errors.len(),
                expected: matrix.columns.len(),
            });
        }
        let best = errors.iter().copied().fold(f64::INFINITY, f64::min);
        let mut at_best = errors.iter().enumerate().filter(|(_, &e)| e == best);
        if let (Some((winner, _)), None) = (at_best.next(), at_best.next()) {
            *wins.get_mut(&matrix.columns[winner]).expect("column registered") += 1;
        }
    }
    Ok(wins)
}
