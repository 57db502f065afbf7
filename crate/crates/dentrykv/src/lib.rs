//! An LSM-tree key-value store that keeps every KV pair in its own file.
//!
//! Each on-disk table is a directory of KV files named after their keys,
//! plus a `.meta` file with a Bloom filter and the key range. Major
//! compaction moves surviving KV files into the next level with hard links
//! instead of rewriting them. A conventional packed-SST engine with the same
//! API is included as a baseline.
//!
//! ```no_run
//! use dentrykv::{Engine, EngineConfig};
//!
//! let engine = Engine::open(EngineConfig::new("/tmp/db"))?;
//! engine.put(b"hello", b"world")?;
//! assert_eq!(engine.get(b"hello")?, Some(b"world".to_vec()));
//! # Ok::<(), dentrykv::Error>(())
//! ```

pub mod bench;
pub mod cache;
pub mod compaction;
pub mod engine;
pub mod error;
pub mod manifest;
pub mod packed;
mod recovery;
pub mod sstdir;
pub mod storage;
pub mod table;
pub mod wal;

pub use engine::{Engine, EngineConfig, EngineKind, EngineStats, Snapshot, StepOutcome};
pub use error::{Error, Result};
pub use storage::{IoCounters, StorageError, Store};
