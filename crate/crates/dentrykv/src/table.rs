//! The on-disk table abstraction shared by the dentry engine and the packed
//! baseline. Everything above this trait (memtables, WAL, manifest,
//! recovery, scheduling) is common to both engines.

use std::sync::Arc;

use dentrykv_core::{CompactionJob, KvRecord, SstDirHandle, SstDirId, Version};

use crate::error::Result;
use crate::sstdir::BloomParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TableOptions {
    pub bloom: BloomParams,
    /// Entries per compaction output table.
    pub file_target: u64,
    pub value_cache_bytes: usize,
    pub handle_cache_entries: usize,
}

/// What one major compaction did.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CompactionStats {
    pub keys_in: u64,
    /// KV files redeployed by hard link.
    pub linked: u64,
    /// Keys whose records were written out again.
    pub rewritten: u64,
    /// Tombstones and dead variants dropped entirely.
    pub dropped: u64,
    /// Bytes of KV records written (value payload plus record framing).
    pub payload_bytes: u64,
    /// Bytes of table metadata written (`.meta`, packed index and footer).
    pub meta_bytes: u64,
}

#[derive(Debug, Clone, Default)]
pub struct CompactionOutput {
    pub added: Vec<SstDirHandle>,
    pub stats: CompactionStats,
}

/// Sorted `(key, records)` entries of one table.
pub type TableEntries = Vec<(Vec<u8>, Vec<KvRecord>)>;

pub trait TableFormat: Send + Sync {
    fn name(&self) -> &'static str;

    /// Writes a table at `id` from sorted entries with ascending per-key
    /// records. Returns `None` (and writes nothing) for no entries.
    fn write_table(&self, id: SstDirId, entries: &[(Vec<u8>, Vec<KvRecord>)]) -> Result<Option<SstDirHandle>>;

    /// All records of `key` in the table.
    fn get(&self, h: &SstDirHandle, key: &[u8]) -> Result<Option<Arc<Vec<KvRecord>>>>;

    /// Entries with keys in `[lo, hi)`, ascending.
    fn scan(&self, h: &SstDirHandle, lo: &[u8], hi: Option<&[u8]>) -> Result<TableEntries>;

    /// Runs a major compaction. `alloc` hands out fresh table numbers.
    /// Inputs are left untouched; the caller commits and then removes them.
    fn compact(&self, job: &CompactionJob, version: &Version, alloc: &dyn Fn() -> u64) -> Result<CompactionOutput>;

    fn remove(&self, id: SstDirId) -> Result<()>;

    /// Table numbers present on disk at `level`, complete or not.
    fn list_level(&self, level: u8) -> Result<Vec<u64>>;

    /// Checks a table at open, repairing derived metadata where possible.
    fn verify(&self, h: &SstDirHandle) -> Result<()>;

    /// Drops cached state for a table that left the version.
    fn forget(&self, id: SstDirId);
}
