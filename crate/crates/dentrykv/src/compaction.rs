//! Minor and major compaction.
//!
//! Major compaction in the dentry format never copies a KV file whose
//! records survive unchanged: the file is hard-linked into the output
//! directory. Only keys whose surviving records are spread over several
//! input files, or whose file carries variants that must be pruned, are
//! rewritten.

use dentrykv_core::merge::{merge_variants, resolve_winner, retain_records, retain_start};
use dentrykv_core::{CompactionJob, KvRecord, Memtable, RecordHeader, SeqNo, SstDirHandle, SstDirId, Version};

use crate::error::{Error, Result};
use crate::packed::{read_all, PackedFormat};
use crate::sstdir::{handle_for, read_headers, read_kv_file, scan_names, DentryFormat, KvFileHeaders, SstDirWriter};
use crate::table::{CompactionOutput, CompactionStats, TableEntries};

/// Entries a sealed memtable contributes to its L0 table. Variants that no
/// live snapshot can observe are pruned; tombstones are kept because older
/// values may live below L0.
pub fn minor_entries(table: &Memtable, snapshot_floor: SeqNo) -> TableEntries {
    table.iter().map(|(k, records)| (k.to_vec(), retain_records(records, snapshot_floor).to_vec())).collect()
}

/// Decision for one key of a major compaction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum KeyOutcome {
    /// Nothing survives.
    Drop,
    /// Contender `i`'s file survives byte-for-byte.
    Link(usize),
    /// These records must be written to a fresh KV file.
    Rewrite(Vec<KvRecord>),
}

/// Resolves one key given each contender's record headers (ascending seq)
/// and, where already loaded, its records. `load(i)` reads contender `i`
/// in full and is only called when records must be rewritten.
pub fn resolve_key(
    headers: &[&[RecordHeader]],
    floor: SeqNo,
    drop_tombstone: impl FnOnce() -> bool,
    mut load: impl FnMut(usize) -> Result<Vec<KvRecord>>,
) -> Result<KeyOutcome> {
    if floor == SeqNo::MAX {
        let w = resolve_winner(headers).ok_or_else(|| Error::corruption("empty KV file"))?;
        let newest = *headers[w].last().unwrap();
        if newest.op == dentrykv_core::OpCode::Delete && drop_tombstone() {
            return Ok(KeyOutcome::Drop);
        }
        if headers[w].len() == 1 {
            return Ok(KeyOutcome::Link(w));
        }
        let mut records = load(w)?;
        let last = records.pop().unwrap();
        return Ok(KeyOutcome::Rewrite(vec![last]));
    }

    // Snapshots are live: retain a suffix of the merged history.
    let mut all: Vec<(SeqNo, usize)> =
        headers.iter().enumerate().flat_map(|(i, hs)| hs.iter().map(move |h| (h.seq, i))).collect();
    all.sort_unstable();
    all.dedup_by_key(|(s, _)| *s);
    let seqs: Vec<SeqNo> = all.iter().map(|(s, _)| *s).collect();
    let retained = &all[retain_start(&seqs, floor)..];
    if retained.is_empty() {
        return Err(Error::corruption("empty KV file"));
    }
    if retained.len() == 1 {
        let (seq, i) = retained[0];
        let h = headers[i].iter().find(|h| h.seq == seq).unwrap();
        if h.op == dentrykv_core::OpCode::Delete && drop_tombstone() {
            return Ok(KeyOutcome::Drop);
        }
    }
    let owner = retained[0].1;
    let whole_file = retained.iter().all(|&(_, i)| i == owner)
        && headers[owner].len() == retained.len()
        && headers[owner].iter().zip(retained).all(|(h, &(s, _))| h.seq == s);
    if whole_file {
        return Ok(KeyOutcome::Link(owner));
    }
    let mut contributors: Vec<usize> = retained.iter().map(|&(_, i)| i).collect();
    contributors.sort_unstable();
    contributors.dedup();
    let lists = contributors.into_iter().map(&mut load).collect::<Result<Vec<_>>>()?;
    let merged = merge_variants(lists);
    Ok(KeyOutcome::Rewrite(retain_records(&merged, floor).to_vec()))
}

/// Rolls output directories at the file target.
struct DirOutputs<'a> {
    fmt: &'a DentryFormat,
    level: u8,
    alloc: &'a dyn Fn() -> u64,
    current: Option<SstDirWriter>,
    added: Vec<SstDirHandle>,
    stats: CompactionStats,
}

impl DirOutputs<'_> {
    fn writer(&mut self) -> Result<&mut SstDirWriter> {
        if self.current.as_ref().is_some_and(|w| w.len() as u64 >= self.fmt.options().file_target) {
            self.close()?;
        }
        if self.current.is_none() {
            let id = SstDirId::new(self.level, (self.alloc)());
            self.current = Some(SstDirWriter::create(self.fmt.store(), id, self.fmt.options().bloom)?);
        }
        Ok(self.current.as_mut().unwrap())
    }

    fn close(&mut self) -> Result<()> {
        if let Some(w) = self.current.take() {
            let id = w.id();
            let meta = w.finish()?;
            self.stats.meta_bytes += meta.encode().len() as u64;
            self.added.push(handle_for(id, &meta));
        }
        Ok(())
    }
}

pub(crate) fn dentry_major(
    fmt: &DentryFormat,
    job: &CompactionJob,
    version: &Version,
    alloc: &dyn Fn() -> u64,
) -> Result<CompactionOutput> {
    let store = fmt.store();
    let out_level = job.output_level();

    let mut files: Vec<(Vec<u8>, String)> = Vec::new();
    for h in job.inputs() {
        files.extend(scan_names(store, h.id)?);
    }
    files.sort_by(|a, b| a.0.cmp(&b.0));

    let mut out = DirOutputs { fmt, level: out_level, alloc, current: None, added: Vec::new(), stats: CompactionStats::default() };
    let mut i = 0;
    while i < files.len() {
        let key = files[i].0.clone();
        let mut j = i;
        while j < files.len() && files[j].0 == key {
            j += 1;
        }
        let group = &files[i..j];
        i = j;
        out.stats.keys_in += 1;

        let mut infos: Vec<KvFileHeaders> = group.iter().map(|(_, p)| read_headers(store, p)).collect::<Result<_>>()?;
        let headers: Vec<Vec<RecordHeader>> = infos.iter().map(|f| f.headers.clone()).collect();
        let header_refs: Vec<&[RecordHeader]> = headers.iter().map(Vec::as_slice).collect();
        let outcome = resolve_key(
            &header_refs,
            job.snapshot_floor,
            || version.should_drop_tombstone(&key, out_level),
            |c| match infos[c].records.take() {
                Some(r) => Ok(r),
                None => read_kv_file(store, &group[c].1),
            },
        )?;
        match outcome {
            KeyOutcome::Drop => out.stats.dropped += 1,
            KeyOutcome::Link(c) => {
                out.writer()?.add_link(&key, &group[c].1)?;
                out.stats.linked += 1;
            }
            KeyOutcome::Rewrite(records) => {
                out.stats.payload_bytes += records.iter().map(|r| r.wire_len() as u64).sum::<u64>();
                out.writer()?.add_records(&key, &records)?;
                out.stats.rewritten += 1;
            }
        }
    }
    out.close()?;
    Ok(CompactionOutput { added: out.added, stats: out.stats })
}

pub(crate) fn packed_major(
    fmt: &PackedFormat,
    job: &CompactionJob,
    version: &Version,
    alloc: &dyn Fn() -> u64,
) -> Result<CompactionOutput> {
    let store = fmt.store();
    let out_level = job.output_level();
    let mut all: Vec<(Vec<u8>, Vec<KvRecord>)> = Vec::new();
    for h in job.inputs() {
        all.extend(read_all(store, h.id)?);
    }
    all.sort_by(|a, b| a.0.cmp(&b.0));

    let mut stats = CompactionStats::default();
    let mut merged: TableEntries = Vec::new();
    let mut iter = all.into_iter().peekable();
    while let Some((key, first)) = iter.next() {
        let mut lists = vec![first];
        while iter.peek().is_some_and(|(k, _)| *k == key) {
            lists.push(iter.next().unwrap().1);
        }
        stats.keys_in += 1;
        let records = merge_variants(lists);
        let kept = retain_records(&records, job.snapshot_floor);
        if kept.len() == 1 && kept[0].is_delete() && version.should_drop_tombstone(&key, out_level) {
            stats.dropped += 1;
            continue;
        }
        merged.push((key, kept.to_vec()));
    }

    let mut added = Vec::new();
    for chunk in merged.chunks(fmt.options().file_target.max(1) as usize) {
        let id = SstDirId::new(out_level, alloc());
        let (h, record_bytes, other_bytes) = fmt.write_counted(id, chunk)?;
        stats.rewritten += chunk.len() as u64;
        stats.payload_bytes += record_bytes;
        stats.meta_bytes += other_bytes;
        added.push(h);
    }
    Ok(CompactionOutput { added, stats })
}

#[cfg(test)]
mod tests {
    use super::*;
    use dentrykv_core::OpCode;

    fn hdr(seq: SeqNo, op: OpCode) -> RecordHeader {
        RecordHeader { seq, op, value_len: if op == OpCode::Put { 1 } else { 0 } }
    }

    fn rec(h: &RecordHeader) -> KvRecord {
        match h.op {
            OpCode::Put => KvRecord::put(h.seq, vec![h.seq as u8]),
            OpCode::Delete => KvRecord::delete(h.seq),
        }
    }

    fn resolve(files: &[Vec<RecordHeader>], floor: SeqNo, droppable: bool) -> KeyOutcome {
        let refs: Vec<&[RecordHeader]> = files.iter().map(Vec::as_slice).collect();
        resolve_key(&refs, floor, || droppable, |i| Ok(files[i].iter().map(rec).collect())).unwrap()
    }

    #[test]
    fn newer_file_wins_by_link() {
        let files = vec![vec![hdr(9, OpCode::Put)], vec![hdr(4, OpCode::Put)]];
        assert_eq!(resolve(&files, SeqNo::MAX, false), KeyOutcome::Link(0));
        let files = vec![vec![hdr(4, OpCode::Put)], vec![hdr(9, OpCode::Put)]];
        assert_eq!(resolve(&files, SeqNo::MAX, false), KeyOutcome::Link(1));
    }

    #[test]
    fn tombstone_kills_loser() {
        let files = vec![vec![hdr(9, OpCode::Delete)], vec![hdr(4, OpCode::Put)]];
        assert_eq!(resolve(&files, SeqNo::MAX, false), KeyOutcome::Link(0));
        assert_eq!(resolve(&files, SeqNo::MAX, true), KeyOutcome::Drop);
    }

    #[test]
    fn multi_variant_file_is_pruned() {
        let files = vec![vec![hdr(2, OpCode::Put), hdr(5, OpCode::Put)]];
        assert_eq!(resolve(&files, SeqNo::MAX, false), KeyOutcome::Rewrite(vec![KvRecord::put(5, vec![5])]));
    }

    #[test]
    fn snapshot_forces_merge() {
        let files = vec![vec![hdr(9, OpCode::Put)], vec![hdr(4, OpCode::Put)]];
        assert_eq!(
            resolve(&files, 5, false),
            KeyOutcome::Rewrite(vec![KvRecord::put(4, vec![4]), KvRecord::put(9, vec![9])])
        );
        // Floor above both: only the newest is visible to anyone.
        assert_eq!(resolve(&files, 10, false), KeyOutcome::Link(0));
    }

    #[test]
    fn snapshot_keeps_whole_file() {
        let files = vec![vec![hdr(3, OpCode::Put), hdr(7, OpCode::Delete)], vec![hdr(1, OpCode::Put)]];
        assert_eq!(resolve(&files, 4, true), KeyOutcome::Link(0));
    }

    #[test]
    fn minor_entries_prune_without_snapshots() {
        let mut m = Memtable::new();
        m.insert(b"a", KvRecord::put(1, b"x".to_vec())).unwrap();
        m.insert(b"a", KvRecord::put(2, b"y".to_vec())).unwrap();
        m.insert(b"b", KvRecord::delete(3)).unwrap();
        assert_eq!(
            minor_entries(&m, SeqNo::MAX),
            vec![(b"a".to_vec(), vec![KvRecord::put(2, b"y".to_vec())]), (b"b".to_vec(), vec![KvRecord::delete(3)])]
        );
        assert_eq!(minor_entries(&m, 1)[0].1.len(), 2);
    }
}
