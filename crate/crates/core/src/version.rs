//! The version: catalog of live SST directories per level plus the global
//! counters, and the rules that pick compaction work from it.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::manifest::ManifestEdit;
use crate::record::SeqNo;

pub const DEFAULT_MAX_LEVEL: u8 = 6;

/// Identifies one SST directory (or packed table file).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SstDirId {
    pub level: u8,
    pub dir_no: u64,
}

impl SstDirId {
    pub fn new(level: u8, dir_no: u64) -> SstDirId {
        SstDirId { level, dir_no }
    }

    /// `L<level>/<dir_no:06>`
    pub fn rel_path(&self) -> String {
        format!("L{}/{:06}", self.level, self.dir_no)
    }
}

impl fmt::Display for SstDirId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "L{}/{:06}", self.level, self.dir_no)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SstDirHandle {
    pub id: SstDirId,
    pub smallest: Vec<u8>,
    pub largest: Vec<u8>,
    pub entry_count: u64,
}

impl SstDirHandle {
    pub fn contains(&self, key: &[u8]) -> bool {
        self.smallest.as_slice() <= key && key <= self.largest.as_slice()
    }

    /// Intersects the closed interval `[lo, hi]`.
    pub fn overlaps(&self, lo: &[u8], hi: &[u8]) -> bool {
        self.smallest.as_slice() <= hi && lo <= self.largest.as_slice()
    }

    /// Intersects the half-open interval `[lo, hi)`, `None` meaning unbounded.
    pub fn overlaps_range(&self, lo: &[u8], hi: Option<&[u8]>) -> bool {
        hi.is_none_or(|hi| lo < hi && self.smallest.as_slice() < hi) && lo <= self.largest.as_slice()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum VersionError {
    #[error("level {0} out of range")]
    LevelOutOfRange(u8),
    #[error("directory {0} already present")]
    DuplicateDir(SstDirId),
    #[error("directory {0} is not in the version")]
    MissingDir(SstDirId),
    #[error("directory {0} has an empty or inverted key range")]
    BadRange(SstDirId),
    #[error("key ranges overlap at level {0}")]
    Overlap(u8),
    #[error("last sequence would go backwards from {from} to {to}")]
    SeqRegression { from: SeqNo, to: SeqNo },
    #[error("file number would go backwards from {from} to {to}")]
    FileNumberRegression { from: u64, to: u64 },
}

/// Per-level capacity, in KV-file (directory entry) counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CompactionLimits {
    pub l0_limit: u64,
}

impl CompactionLimits {
    /// `l0_limit * 10^level`, saturating.
    pub fn limit(&self, level: u8) -> u64 {
        (0..level).fold(self.l0_limit, |acc, _| acc.saturating_mul(10))
    }
}

/// Inputs of one major compaction from `level` into `level + 1`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompactionJob {
    pub level: u8,
    pub inputs_upper: Vec<SstDirHandle>,
    pub inputs_lower: Vec<SstDirHandle>,
    /// Smallest sequence pinned by a live snapshot, `SeqNo::MAX` if none.
    pub snapshot_floor: SeqNo,
}

impl CompactionJob {
    pub fn output_level(&self) -> u8 {
        self.level + 1
    }

    pub fn inputs(&self) -> impl Iterator<Item = &SstDirHandle> {
        self.inputs_upper.iter().chain(self.inputs_lower.iter())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Version {
    /// L0 newest first (descending dir_no); deeper levels by smallest key.
    levels: Vec<Vec<SstDirHandle>>,
    pub last_seq: SeqNo,
    pub next_file_number: u64,
    /// Oldest log still needed; logs below it are fully persisted in L0.
    pub log_number: u64,
}

impl Version {
    pub fn new(max_level: u8) -> Version {
        Version {
            levels: (0..=max_level).map(|_| Vec::new()).collect(),
            last_seq: 0,
            next_file_number: 1,
            log_number: 0,
        }
    }

    pub fn max_level(&self) -> u8 {
        (self.levels.len() - 1) as u8
    }

    pub fn level(&self, level: u8) -> &[SstDirHandle] {
        &self.levels[level as usize]
    }

    pub fn level_entries(&self, level: u8) -> u64 {
        self.level(level).iter().map(|h| h.entry_count).sum()
    }

    pub fn all_handles(&self) -> impl Iterator<Item = &SstDirHandle> {
        self.levels.iter().flatten()
    }

    pub fn contains_dir(&self, id: SstDirId) -> bool {
        self.levels
            .get(id.level as usize)
            .is_some_and(|l| l.iter().any(|h| h.id.dir_no == id.dir_no))
    }

    /// Returns the version that results from `edit`; `self` is untouched.
    pub fn apply(&self, edit: &ManifestEdit) -> Result<Version, VersionError> {
        let mut next = self.clone();
        if let Some(seq) = edit.last_seq {
            if seq < next.last_seq {
                return Err(VersionError::SeqRegression { from: next.last_seq, to: seq });
            }
            next.last_seq = seq;
        }
        if let Some(n) = edit.next_file_number {
            if n < next.next_file_number {
                return Err(VersionError::FileNumberRegression { from: next.next_file_number, to: n });
            }
            next.next_file_number = n;
        }
        if let Some(n) = edit.log_number {
            next.log_number = n;
        }
        for id in &edit.removed {
            let level = next.levels.get_mut(id.level as usize).ok_or(VersionError::LevelOutOfRange(id.level))?;
            let pos = level.iter().position(|h| h.id == *id).ok_or(VersionError::MissingDir(*id))?;
            level.remove(pos);
        }
        for h in &edit.added {
            if h.smallest.is_empty() || h.smallest > h.largest || h.entry_count == 0 {
                return Err(VersionError::BadRange(h.id));
            }
            if next.all_handles().any(|x| x.id.dir_no == h.id.dir_no) {
                return Err(VersionError::DuplicateDir(h.id));
            }
            if h.id.dir_no >= next.next_file_number {
                next.next_file_number = h.id.dir_no + 1;
            }
            next.levels
                .get_mut(h.id.level as usize)
                .ok_or(VersionError::LevelOutOfRange(h.id.level))?
                .push(h.clone());
        }
        next.normalize()?;
        Ok(next)
    }

    fn normalize(&mut self) -> Result<(), VersionError> {
        self.levels[0].sort_by_key(|h| core::cmp::Reverse(h.id.dir_no));
        for (n, level) in self.levels.iter_mut().enumerate().skip(1) {
            level.sort_by(|a, b| a.smallest.cmp(&b.smallest));
            if level.windows(2).any(|w| w[0].largest >= w[1].smallest) {
                return Err(VersionError::Overlap(n as u8));
            }
        }
        Ok(())
    }

    /// True when every level above L0 has pairwise disjoint ranges.
    pub fn check_disjoint(&self) -> bool {
        self.levels
            .iter()
            .skip(1)
            .all(|l| l.windows(2).all(|w| w[0].largest < w[1].smallest))
    }

    /// Directories at `level` whose range holds `key`. L0 returns every
    /// match, newest first; deeper levels return at most one.
    pub fn candidates_for_key(&self, level: u8, key: &[u8]) -> Vec<&SstDirHandle> {
        let handles = self.level(level);
        if level == 0 {
            return handles.iter().filter(|h| h.contains(key)).collect();
        }
        let idx = handles.partition_point(|h| h.largest.as_slice() < key);
        match handles.get(idx) {
            Some(h) if h.contains(key) => alloc::vec![h],
            _ => Vec::new(),
        }
    }

    /// Per level, every directory intersecting `[lo, hi)`.
    pub fn candidates_for_range(&self, lo: &[u8], hi: Option<&[u8]>) -> Vec<Vec<&SstDirHandle>> {
        self.levels
            .iter()
            .map(|l| l.iter().filter(|h| h.overlaps_range(lo, hi)).collect())
            .collect()
    }

    /// Directories at `level` intersecting the closed interval `[lo, hi]`.
    pub fn overlapping(&self, level: u8, lo: &[u8], hi: &[u8]) -> Vec<SstDirHandle> {
        self.level(level).iter().filter(|h| h.overlaps(lo, hi)).cloned().collect()
    }

    /// A tombstone written to `output_level` can be dropped when no deeper
    /// level could still hold an older version of `key`.
    pub fn should_drop_tombstone(&self, key: &[u8], output_level: u8) -> bool {
        if output_level >= self.max_level() {
            return true;
        }
        ((output_level + 1)..=self.max_level()).all(|l| self.level(l).iter().all(|h| !h.contains(key)))
    }

    /// Picks the lowest level at or over its capacity. `cursors[n]` holds
    /// the largest key of the last directory compacted out of level `n`.
    pub fn pick_compaction(&self, limits: &CompactionLimits, cursors: &[Option<Vec<u8>>]) -> Option<CompactionJob> {
        let level = (0..self.max_level()).find(|&n| {
            let entries = self.level_entries(n);
            entries > 0 && entries >= limits.limit(n)
        })?;
        let inputs_upper: Vec<SstDirHandle> = if level == 0 {
            self.level(0).to_vec()
        } else {
            let handles = self.level(level);
            let cursor = cursors.get(level as usize).and_then(|c| c.as_deref());
            let pick = cursor
                .and_then(|c| handles.iter().find(|h| h.smallest.as_slice() > c))
                .unwrap_or(&handles[0]);
            alloc::vec![pick.clone()]
        };
        let lo = inputs_upper.iter().map(|h| h.smallest.as_slice()).min()?;
        let hi = inputs_upper.iter().map(|h| h.largest.as_slice()).max()?;
        let inputs_lower = self.overlapping(level + 1, lo, hi);
        Some(CompactionJob { level, inputs_upper, inputs_lower, snapshot_floor: SeqNo::MAX })
    }

    /// A single edit that rebuilds this version from nothing.
    pub fn snapshot_edit(&self) -> ManifestEdit {
        let mut added: Vec<SstDirHandle> = self.all_handles().cloned().collect();
        added.sort_by_key(|h| (h.id.level, h.id.dir_no));
        ManifestEdit {
            last_seq: Some(self.last_seq),
            next_file_number: Some(self.next_file_number),
            log_number: Some(self.log_number),
            added,
            removed: Vec::new(),
        }
    }
}
