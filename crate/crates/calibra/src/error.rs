use std::path::PathBuf;

use calibra_core::backend::BackendError;
use calibra_core::concern::ConcernError;
use calibra_core::confidence::ConfidenceError;
use calibra_core::metrics::MetricsError;
use calibra_core::mock::MockError;
use calibra_core::strategy::{StrategyError, StrategyId};

use crate::dataset::DatasetError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("config: {0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {source}", path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("mock script: {0}")]
    Mock(#[from] MockError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("item {item_id:?}, strategy {strategy}: {source}")]
    Item {
        item_id: String,
        strategy: StrategyId,
        #[source]
        source: StrategyError,
    },
    #[error(transparent)]
    Strategy(#[from] StrategyError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Concern(#[from] ConcernError),
    #[error("data: {0}")]
    Data(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
        let path = path.into();
        move |source| Error::Io { path, source }
    }

    pub fn json(path: impl Into<PathBuf>) -> impl FnOnce(serde_json::Error) -> Error {
        let path = path.into();
        move |source| Error::Json { path, source }
    }

    /// Process exit code: 1 config, 2 backend or capability, 3 data.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Mock(_) => 1,
            Error::Backend(_) => 2,
            Error::Item { source, .. } | Error::Strategy(source) => strategy_code(source),
            Error::Io { .. }
            | Error::Json { .. }
            | Error::Dataset(_)
            | Error::Metrics(_)
            | Error::Concern(_)
            | Error::Data(_) => 3,
        }
    }
}

fn strategy_code(e: &StrategyError) -> i32 {
    match e {
        StrategyError::Backend { .. } => 2,
        StrategyError::Confidence { source, .. } => match source {
            ConfidenceError::Backend(_) | ConfidenceError::Capability { .. } => 2,
            _ => 3,
        },
        StrategyError::UnknownStrategy(_) | StrategyError::Placeholder { .. } | StrategyError::InvalidConfig(_) => 1,
        StrategyError::MissingGoldFacts { .. } => 3,
    }
}
