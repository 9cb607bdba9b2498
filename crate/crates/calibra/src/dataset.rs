//! JSONL datasets: one [`QAItem`] per line.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use calibra_core::qa::{QAItem, QaError};

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}:{line}: {message}", path.display())]
    Malformed {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{}:{line}: item {id:?}: {source}", path.display())]
    Invalid {
        path: PathBuf,
        line: usize,
        id: String,
        source: QaError,
    },
    #[error("{}: duplicate id {id:?} on lines {first} and {second}", path.display())]
    DuplicateId {
        path: PathBuf,
        id: String,
        first: usize,
        second: usize,
    },
    #[error("{}: dataset is empty", path.display())]
    Empty { path: PathBuf },
}

/// Loads and validates a dataset. Blank lines are skipped; line numbers in
/// errors are 1-based.
pub fn load_dataset(path: &Path) -> Result<Vec<QAItem>, DatasetError> {
    let io = |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    };
    let reader = BufReader::new(File::open(path).map_err(io)?);
    let mut items = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (index, line) in reader.lines().enumerate() {
        let line_no = index + 1;
        let line = line.map_err(io)?;
        if line.trim().is_empty() {
            continue;
        }
        let item: QAItem = serde_json::from_str(&line).map_err(|e| DatasetError::Malformed {
            path: path.to_path_buf(),
            line: line_no,
            message: e.to_string(),
        })?;
        item.validate().map_err(|source| DatasetError::Invalid {
            path: path.to_path_buf(),
            line: line_no,
            id: item.id.clone(),
            source,
        })?;
        if let Some(&first) = seen.get(&item.id) {
            return Err(DatasetError::DuplicateId {
                path: path.to_path_buf(),
                id: item.id,
                first,
                second: line_no,
            });
        }
        seen.insert(item.id.clone(), line_no);
        items.push(item);
    }
    if items.is_empty() {
        return Err(DatasetError::Empty {
            path: path.to_path_buf(),
        });
    }
    Ok(items)
}
