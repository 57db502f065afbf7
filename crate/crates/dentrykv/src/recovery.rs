//! Open-time recovery: manifest first, then level directories, then logs.
//!
//! 1. `CURRENT` names the manifest; its valid prefix of edits is the truth.
//! 2. Each level directory is reconciled with that version: tables on disk
//!    but not in the version are leftovers of an uncommitted compaction and
//!    are deleted; tables in the version but missing on disk are fatal.
//! 3. Logs at or above the version's log number are replayed, skipping
//!    records already covered by `last_seq`; older logs are deleted.
//!
//! A fresh manifest holding the recovered version is always installed, so
//! a torn manifest tail never survives an open.

use std::collections::BTreeSet;

use dentrykv_core::{validate_key, Version, WalEntry};

use crate::error::{Error, Result};
use crate::manifest::{parse_manifest_file_name, read_current, remove_stale_manifests, replay_manifest, ManifestLog};
use crate::storage::Store;
use crate::table::TableFormat;
use crate::wal::{parse_log_file_name, replay};

pub(crate) struct Recovered {
    pub version: Version,
    pub manifest: ManifestLog,
    /// Records from logs, ascending by seq, all newer than `version.last_seq`.
    pub entries: Vec<WalEntry>,
    /// Logs that were replayed; safe to delete once their data is in L0.
    pub replayed_logs: Vec<u64>,
    pub next_file: u64,
}

pub(crate) fn recover(store: &Store, format: &dyn TableFormat, max_level: u8) -> Result<Recovered> {
    for level in 0..=max_level {
        let name = format!("L{level}");
        if !store.is_dir(&name) {
            store.create_dir(&name)?;
        }
    }

    let mut max_seen = 0u64;
    let version = match read_current(store)? {
        Some(n) => {
            max_seen = n;
            let r = replay_manifest(store, n, max_level)?;
            if r.truncated {
                log::warn!("manifest {n}: ignored a corrupt or inapplicable tail after {} edits", r.edits_applied);
            }
            r.version
        }
        None => Version::new(max_level),
    };
    if version.max_level() != max_level {
        return Err(Error::InvalidConfig(format!("database has {} levels", version.max_level())));
    }

    for level in 0..=max_level {
        let on_disk: BTreeSet<u64> = format.list_level(level)?.into_iter().collect();
        let live: BTreeSet<u64> = version.level(level).iter().map(|h| h.id.dir_no).collect();
        for &no in on_disk.difference(&live) {
            log::info!("removing orphan table L{level}/{no:06}");
            format.remove(dentrykv_core::SstDirId::new(level, no))?;
        }
        if let Some(no) = live.difference(&on_disk).next() {
            return Err(Error::corruption(format!("committed table L{level}/{no:06} is missing")));
        }
        max_seen = max_seen.max(on_disk.last().copied().unwrap_or(0));
        for h in version.level(level) {
            format.verify(h)?;
        }
    }

    let mut logs = Vec::new();
    for name in store.list_dir("")? {
        if let Some(n) = parse_log_file_name(&name) {
            max_seen = max_seen.max(n);
            if n < version.log_number {
                store.remove_file(&name)?;
            } else {
                logs.push(n);
            }
        } else if let Some(n) = parse_manifest_file_name(&name) {
            max_seen = max_seen.max(n);
        }
    }
    logs.sort_unstable();

    let mut entries = Vec::new();
    for &n in &logs {
        for e in replay(store, n)? {
            if e.seq > version.last_seq && validate_key(&e.key).is_ok() {
                entries.push(e);
            }
        }
    }
    entries.sort_by_key(|e| e.seq);
    entries.dedup_by_key(|e| e.seq);

    let mut next_file = version.next_file_number.max(max_seen + 1);
    let manifest_no = next_file;
    next_file += 1;
    let manifest = ManifestLog::install(store, manifest_no, &version)?;
    remove_stale_manifests(store, manifest_no)?;

    Ok(Recovered { version, manifest, entries, replayed_logs: logs, next_file })
}
