//! Write-ahead log files, one per memtable, named `<number:06>.log` at the
//! database root. The record format is defined in
//! [`dentrykv_core::wal_record`].

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use dentrykv_core::wal_record::{decode_wal, encode_wal_record, WalEntry};
use dentrykv_core::{OpCode, SeqNo};

use crate::error::{Error, Result};
use crate::storage::{AppendFile, Store};

pub fn log_file_name(number: u64) -> String {
    format!("{number:06}.log")
}

/// Parses `<digits>.log`.
pub fn parse_log_file_name(name: &str) -> Option<u64> {
    let digits = name.strip_suffix(".log")?;
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    digits.parse().ok()
}

pub struct WalWriter {
    file: AppendFile,
    number: u64,
    sealed: bool,
    synced: bool,
    sync_per_write: bool,
    records: u64,
}

impl WalWriter {
    pub fn create(store: &Store, number: u64, sync_per_write: bool) -> Result<WalWriter> {
        let file = store.create_append(&log_file_name(number))?;
        Ok(WalWriter { file, number, sealed: false, synced: false, sync_per_write, records: 0 })
    }

    pub fn number(&self) -> u64 {
        self.number
    }

    pub fn is_sealed(&self) -> bool {
        self.sealed
    }

    pub fn is_synced(&self) -> bool {
        self.synced
    }

    pub fn records(&self) -> u64 {
        self.records
    }

    pub fn append(&mut self, seq: SeqNo, op: OpCode, key: &[u8], value: &[u8]) -> Result<()> {
        if self.sealed {
            return Err(Error::LogSealed(self.number));
        }
        self.file.append(&encode_wal_record(seq, op, key, value))?;
        self.synced = false;
        self.records += 1;
        if self.sync_per_write {
            self.file.sync()?;
            self.synced = true;
        }
        Ok(())
    }

    /// Seals the log and forces it to stable storage. On failure the log
    /// stays open and unsealed.
    pub fn seal_and_sync(&mut self) -> Result<()> {
        if self.sealed {
            return Err(Error::LogSealed(self.number));
        }
        self.file.sync()?;
        self.sealed = true;
        self.synced = true;
        Ok(())
    }
}

/// Longest valid prefix of log `number`; a torn or corrupt record ends it.
pub fn replay(store: &Store, number: u64) -> Result<Vec<WalEntry>> {
    let bytes = store.read_file(&log_file_name(number))?;
    let (entries, valid) = decode_wal(&bytes);
    if valid < bytes.len() {
        log::warn!("log {number}: dropping {} bytes after the last valid record", bytes.len() - valid);
    }
    Ok(entries)
}

/// Logs whose memtables are already on disk, kept for a grace period so
/// the filesystem can commit the unsynced KV files they produced.
#[derive(Debug, Default)]
pub struct RetireQueue {
    pending: BTreeMap<u64, Instant>,
}

impl RetireQueue {
    pub fn schedule(&mut self, number: u64, compacted_at: Instant, grace: Duration) {
        self.pending.insert(number, compacted_at + grace);
    }

    pub fn is_pending(&self, number: u64) -> bool {
        self.pending.contains_key(&number)
    }

    pub fn len(&self) -> usize {
        self.pending.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pending.is_empty()
    }

    /// Deletes log `number` if its deadline has passed. Returns whether
    /// the file was deleted.
    pub fn retire(&mut self, store: &Store, number: u64, now: Instant) -> Result<bool> {
        match self.pending.get(&number) {
            Some(&until) if now >= until => {
                store.remove_file(&log_file_name(number))?;
                self.pending.remove(&number);
                Ok(true)
            }
            _ => Ok(false),
        }
    }

    /// Retires every log whose deadline has passed; returns how many.
    pub fn retire_due(&mut self, store: &Store, now: Instant) -> Result<usize> {
        let due: Vec<u64> = self.pending.iter().filter(|(_, &t)| now >= t).map(|(&n, _)| n).collect();
        for &n in &due {
            self.retire(store, n, now)?;
        }
        Ok(due.len())
    }
}
