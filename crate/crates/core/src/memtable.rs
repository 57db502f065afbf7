//! Sorted in-memory table of recent writes, keeping every version of a key
//! so snapshot reads work before the data reaches disk.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;
use core::ops::Bound;

use crate::record::{KvRecord, SeqNo};

/// Fixed per-record cost added to the size estimate.
pub const RECORD_MEM_OVERHEAD: usize = 32;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MemtableError {
    #[error("memtable is sealed")]
    Sealed,
    #[error("sequence {new} is not above {last} for this key")]
    OutOfOrder { last: SeqNo, new: SeqNo },
}

#[derive(Debug, Clone, Default)]
pub struct Memtable {
    entries: BTreeMap<Vec<u8>, Vec<KvRecord>>,
    approx_bytes: usize,
    records: usize,
    sealed: bool,
    last_seq: SeqNo,
}

fn visible(records: &[KvRecord], snapshot: SeqNo) -> Option<&KvRecord> {
    records.iter().rev().find(|r| r.seq <= snapshot)
}

impl Memtable {
    pub fn new() -> Memtable {
        Memtable::default()
    }

    pub fn insert(&mut self, key: &[u8], record: KvRecord) -> Result<(), MemtableError> {
        if self.sealed {
            return Err(MemtableError::Sealed);
        }
        let size = key.len() + record.value.len() + RECORD_MEM_OVERHEAD;
        let seq = record.seq;
        match self.entries.get_mut(key) {
            Some(list) => {
                let last = list.last().map_or(0, |r| r.seq);
                if seq <= last {
                    return Err(MemtableError::OutOfOrder { last, new: seq });
                }
                list.push(record);
            }
            None => {
                self.entries.insert(key.to_vec(), alloc::vec![record]);
            }
        }
        self.approx_bytes += size;
        self.records += 1;
        self.last_seq = self.last_seq.max(seq);
        Ok(())
    }

    /// Newest record for `key` with `seq <= snapshot`.
    pub fn get(&self, key: &[u8], snapshot: SeqNo) -> Option<&KvRecord> {
        visible(self.entries.get(key)?, snapshot)
    }

    /// Visible record of every key in `[lo, hi)`, ascending; deletes included.
    pub fn range(&self, lo: &[u8], hi: Option<&[u8]>, snapshot: SeqNo) -> Vec<(&[u8], &KvRecord)> {
        if hi.is_some_and(|hi| hi <= lo) {
            return Vec::new();
        }
        let upper = hi.map_or(Bound::Unbounded, Bound::Excluded);
        self.entries
            .range::<[u8], _>((Bound::Included(lo), upper))
            .filter_map(|(k, list)| visible(list, snapshot).map(|r| (k.as_slice(), r)))
            .collect()
    }

    /// Every key with its full version list, ascending.
    pub fn iter(&self) -> impl Iterator<Item = (&[u8], &[KvRecord])> {
        self.entries.iter().map(|(k, v)| (k.as_slice(), v.as_slice()))
    }

    pub fn seal(&mut self) {
        self.sealed = true;
    }

    pub fn is_sealed(&self) -> bool {
        self.sealed
    }

    pub fn approx_bytes(&self) -> usize {
        self.approx_bytes
    }

    /// Number of distinct keys.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn record_count(&self) -> usize {
        self.records
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Highest sequence inserted, 0 when empty.
    pub fn last_seq(&self) -> SeqNo {
        self.last_seq
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn newest_wins() {
        let mut m = Memtable::new();
        m.insert(b"k", KvRecord::put(1, b"v".to_vec())).unwrap();
        assert_eq!(m.get(b"k", SeqNo::MAX).unwrap().value, b"v");
        m.insert(b"k", KvRecord::delete(2)).unwrap();
        assert!(m.get(b"k", SeqNo::MAX).unwrap().is_delete());
        assert!(m.get(b"other", SeqNo::MAX).is_none());
    }

    #[test]
    fn snapshot_cut() {
        let mut m = Memtable::new();
        m.insert(b"k", KvRecord::put(3, b"three".to_vec())).unwrap();
        m.insert(b"k", KvRecord::put(7, b"seven".to_vec())).unwrap();
        assert_eq!(m.get(b"k", 5).unwrap().seq, 3);
        assert_eq!(m.get(b"k", 7).unwrap().seq, 7);
        assert!(m.get(b"k", 2).is_none());
    }

    #[test]
    fn sealed_rejects_insert() {
        let mut m = Memtable::new();
        m.seal();
        assert_eq!(m.insert(b"k", KvRecord::delete(1)), Err(MemtableError::Sealed));
    }

    #[test]
    fn out_of_order_rejected() {
        let mut m = Memtable::new();
        m.insert(b"k", KvRecord::put(5, Vec::new())).unwrap();
        assert_eq!(m.insert(b"k", KvRecord::put(5, Vec::new())), Err(MemtableError::OutOfOrder { last: 5, new: 5 }));
    }

    #[test]
    fn range_half_open() {
        let mut m = Memtable::new();
        assert!(m.range(b"a", Some(b"z"), SeqNo::MAX).is_empty());
        for (i, k) in [b"a", b"b", b"c"].iter().enumerate() {
            m.insert(*k, KvRecord::put(i as u64 + 1, Vec::new())).unwrap();
        }
        let keys: Vec<&[u8]> = m.range(b"a", Some(b"c"), SeqNo::MAX).into_iter().map(|(k, _)| k).collect();
        assert_eq!(keys, [&b"a"[..], &b"b"[..]]);
        assert_eq!(m.range(b"b", None, SeqNo::MAX).len(), 2);
        assert!(m.range(b"c", Some(b"a"), SeqNo::MAX).is_empty());
        // Key "c" has seq 3 and is hidden at snapshot 2.
        assert_eq!(m.range(b"", None, 2).len(), 2);
    }

    #[test]
    fn size_estimate_grows() {
        let mut m = Memtable::new();
        m.insert(b"key", KvRecord::put(1, alloc::vec![0; 100])).unwrap();
        assert_eq!(m.approx_bytes(), 3 + 100 + RECORD_MEM_OVERHEAD);
        assert_eq!(m.last_seq(), 1);
    }
}
