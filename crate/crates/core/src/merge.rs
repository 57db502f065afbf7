//! Conflict resolution and version retention used by compactions.

use alloc::vec::Vec;

use crate::record::{KvRecord, RecordHeader, SeqNo};

/// Index of the contender holding the greatest sequence number. Each
/// contender is the header list of one KV file, ascending by seq. Only
/// headers are consulted.
pub fn resolve_winner(contenders: &[&[RecordHeader]]) -> Option<usize> {
    contenders
        .iter()
        .enumerate()
        .filter_map(|(i, hs)| hs.last().map(|h| (i, h.seq)))
        .max_by_key(|&(_, seq)| seq)
        .map(|(i, _)| i)
}

/// Start of the suffix of `seqs` (ascending) that must survive when the
/// oldest live snapshot is `floor`: every record at or above the floor,
/// plus the newest one below it. With no snapshot (`floor == SeqNo::MAX`)
/// only the newest record survives.
pub fn retain_start(seqs: &[SeqNo], floor: SeqNo) -> usize {
    let first_at_or_above = seqs.partition_point(|&s| s < floor);
    first_at_or_above.saturating_sub(1).min(seqs.len().saturating_sub(1))
}

/// Applies [`retain_start`] to a record list.
pub fn retain_records(records: &[KvRecord], floor: SeqNo) -> &[KvRecord] {
    let seqs: Vec<SeqNo> = records.iter().map(|r| r.seq).collect();
    &records[retain_start(&seqs, floor)..]
}

/// Merges per-file record lists into one ascending list. Duplicate
/// sequence numbers collapse to one record.
pub fn merge_variants(lists: Vec<Vec<KvRecord>>) -> Vec<KvRecord> {
    let mut all: Vec<KvRecord> = lists.into_iter().flatten().collect();
    all.sort_by_key(|r| r.seq);
    all.dedup_by_key(|r| r.seq);
    all
}
