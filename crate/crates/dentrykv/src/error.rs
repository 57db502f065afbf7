use dentrykv_core::{KeyError, VersionError};

use crate::storage::StorageError;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Storage(#[from] StorageError),
    #[error(transparent)]
    Key(#[from] KeyError),
    #[error("version edit rejected: {0}")]
    Version(#[from] VersionError),
    #[error("corruption: {0}")]
    Corruption(String),
    #[error("log {0} is sealed")]
    LogSealed(u64),
    #[error("snapshot has been released")]
    SnapshotReleased,
    #[error("engine is closed")]
    Closed,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("value of {0} bytes exceeds the 4 GiB limit")]
    ValueTooLarge(usize),
    #[error("writes disabled after a log failure: {0}")]
    WriterFailed(String),
    #[error("background compaction failed: {0}")]
    Background(String),
}

impl Error {
    pub(crate) fn corruption(msg: impl Into<String>) -> Error {
        Error::Corruption(msg.into())
    }

    /// The storage layer is in simulated-crash state.
    pub fn is_crash(&self) -> bool {
        matches!(self, Error::Storage(StorageError::Crashed))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
