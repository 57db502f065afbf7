//! The packed baseline: conventional SST files holding many keys.
//!
//! File layout of `L<level>/<num:06>.sst`:
//!
//! ```text
//! data:   { key_len u32 | key | rec_len u32 | records }*
//! index:  count u32 | { key_len u32 | key | offset u64 | len u32 }*
//! meta:   SstDirMeta encoding (Bloom filter, key range, crc)
//! footer: index_off u64 | meta_off u64 | index_crc u32 | "DLP1"
//! ```
//!
//! `records` uses the same wire format as a KV file, so every record keeps
//! its own checksum. Compaction reads inputs in full and rewrites every
//! surviving record.

use std::sync::Arc;

use dentrykv_core::checksum::crc32c;
use dentrykv_core::{decode_records, encode_records, CompactionJob, KvRecord, SstDirHandle, SstDirId, SstDirMeta, Version};

use crate::cache::{HandleCache, ValueCache};
use crate::error::{Error, Result};
use crate::sstdir::{handle_for, parse_table_name, BloomParams};
use crate::storage::Store;
use crate::table::{CompactionOutput, TableEntries, TableFormat, TableOptions};

pub const PACKED_MAGIC: &[u8; 4] = b"DLP1";
pub const FOOTER_LEN: usize = 24;

pub fn table_path(id: SstDirId) -> String {
    format!("L{}/{:06}.sst", id.level, id.dir_no)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexEntry {
    pub key: Vec<u8>,
    pub offset: u64,
    pub len: u32,
}

/// Encoded table plus its meta and the number of record bytes in it.
pub struct EncodedTable {
    pub bytes: Vec<u8>,
    pub meta: SstDirMeta,
    pub record_bytes: u64,
}

pub fn encode_table(entries: &[(Vec<u8>, Vec<KvRecord>)], bloom: BloomParams) -> EncodedTable {
    let mut out = Vec::new();
    let mut index = Vec::with_capacity(entries.len());
    let mut record_bytes = 0u64;
    for (key, records) in entries {
        let start = out.len() as u64;
        let body = encode_records(records);
        record_bytes += body.len() as u64;
        out.extend_from_slice(&(key.len() as u32).to_le_bytes());
        out.extend_from_slice(key);
        out.extend_from_slice(&(body.len() as u32).to_le_bytes());
        out.extend_from_slice(&body);
        index.push(IndexEntry { key: key.clone(), offset: start, len: (out.len() as u64 - start) as u32 });
    }
    let index_off = out.len() as u64;
    out.extend_from_slice(&(index.len() as u32).to_le_bytes());
    for e in &index {
        out.extend_from_slice(&(e.key.len() as u32).to_le_bytes());
        out.extend_from_slice(&e.key);
        out.extend_from_slice(&e.offset.to_le_bytes());
        out.extend_from_slice(&e.len.to_le_bytes());
    }
    let index_crc = crc32c(&out[index_off as usize..]);
    let meta_off = out.len() as u64;
    let keys: Vec<Vec<u8>> = entries.iter().map(|(k, _)| k.clone()).collect();
    let meta = SstDirMeta::for_sorted_keys(&keys, bloom.bits_per_key, bloom.num_hashes);
    out.extend_from_slice(&meta.encode());
    out.extend_from_slice(&index_off.to_le_bytes());
    out.extend_from_slice(&meta_off.to_le_bytes());
    out.extend_from_slice(&index_crc.to_le_bytes());
    out.extend_from_slice(PACKED_MAGIC);
    EncodedTable { bytes: out, meta, record_bytes }
}

/// In-memory index and meta of an open table.
#[derive(Debug)]
pub struct PackedTable {
    pub index: Vec<IndexEntry>,
    pub meta: SstDirMeta,
}

fn u32_at(b: &[u8], at: usize) -> Option<u32> {
    Some(u32::from_le_bytes(b.get(at..at + 4)?.try_into().ok()?))
}

fn u64_at(b: &[u8], at: usize) -> Option<u64> {
    Some(u64::from_le_bytes(b.get(at..at + 8)?.try_into().ok()?))
}

fn parse_index(buf: &[u8]) -> Option<Vec<IndexEntry>> {
    let count = u32_at(buf, 0)? as usize;
    let mut pos = 4;
    let mut out = Vec::with_capacity(count.min(buf.len() / 16));
    for _ in 0..count {
        let klen = u32_at(buf, pos)? as usize;
        pos += 4;
        let key = buf.get(pos..pos.checked_add(klen)?)?.to_vec();
        pos += klen;
        let offset = u64_at(buf, pos)?;
        let len = u32_at(buf, pos + 8)?;
        pos += 12;
        out.push(IndexEntry { key, offset, len });
    }
    (pos == buf.len()).then_some(out)
}

pub fn open_table(store: &Store, id: SstDirId) -> Result<PackedTable> {
    let path = table_path(id);
    let bad = |what: &str| Error::corruption(format!("{path}: {what}"));
    let file_len = store.file_len(&path)?;
    if file_len < FOOTER_LEN as u64 {
        return Err(bad("too short"));
    }
    let footer = store.read_range(&path, file_len - FOOTER_LEN as u64, FOOTER_LEN)?;
    if &footer[20..24] != PACKED_MAGIC {
        return Err(bad("bad magic"));
    }
    let index_off = u64_at(&footer, 0).unwrap();
    let meta_off = u64_at(&footer, 8).unwrap();
    let index_crc = u32_at(&footer, 16).unwrap();
    let tail_end = file_len - FOOTER_LEN as u64;
    if index_off > meta_off || meta_off > tail_end {
        return Err(bad("bad footer offsets"));
    }
    let tail = store.read_range(&path, index_off, (tail_end - index_off) as usize)?;
    let (index_bytes, meta_bytes) = tail.split_at((meta_off - index_off) as usize);
    if crc32c(index_bytes) != index_crc {
        return Err(bad("index checksum mismatch"));
    }
    let index = parse_index(index_bytes).ok_or_else(|| bad("malformed index"))?;
    let meta = SstDirMeta::decode(meta_bytes).map_err(|e| bad(&e.to_string()))?;
    if meta.entry_count != index.len() as u64 {
        return Err(bad("index and meta disagree"));
    }
    Ok(PackedTable { index, meta })
}

/// Parses one data entry into its key and records.
fn parse_entry(buf: &[u8], path: &str) -> Result<(Vec<u8>, Vec<KvRecord>)> {
    let bad = || Error::corruption(format!("{path}: malformed data entry"));
    let klen = u32_at(buf, 0).ok_or_else(bad)? as usize;
    let key = buf.get(4..4 + klen).ok_or_else(bad)?.to_vec();
    let rlen = u32_at(buf, 4 + klen).ok_or_else(bad)? as usize;
    let body = buf.get(8 + klen..8 + klen + rlen).ok_or_else(bad)?;
    let records = decode_records(body).map_err(|e| Error::corruption(format!("{path}: {e}")))?;
    Ok((key, records))
}

pub fn read_entry(store: &Store, id: SstDirId, e: &IndexEntry) -> Result<Vec<KvRecord>> {
    let path = table_path(id);
    let buf = store.read_range(&path, e.offset, e.len as usize)?;
    let (key, records) = parse_entry(&buf, &path)?;
    if key != e.key {
        return Err(Error::corruption(format!("{path}: index points at the wrong key")));
    }
    Ok(records)
}

/// Reads and decodes the whole table.
pub fn read_all(store: &Store, id: SstDirId) -> Result<TableEntries> {
    let path = table_path(id);
    let table = open_table(store, id)?;
    let data_end = table.index.last().map_or(0, |e| e.offset + e.len as u64);
    let buf = store.read_range(&path, 0, data_end as usize)?;
    table
        .index
        .iter()
        .map(|e| {
            let start = e.offset as usize;
            let slice = buf.get(start..start + e.len as usize).ok_or_else(|| Error::corruption(format!("{path}: truncated")))?;
            parse_entry(slice, &path)
        })
        .collect()
}

pub struct PackedFormat {
    store: Store,
    opts: TableOptions,
    tables: HandleCache<u64, PackedTable>,
    values: ValueCache,
}

impl PackedFormat {
    pub fn new(store: Store, opts: TableOptions) -> PackedFormat {
        PackedFormat {
            tables: HandleCache::new(opts.handle_cache_entries),
            values: ValueCache::new(opts.value_cache_bytes),
            store,
            opts,
        }
    }

    pub(crate) fn store(&self) -> &Store {
        &self.store
    }

    pub(crate) fn options(&self) -> &TableOptions {
        &self.opts
    }

    fn table(&self, id: SstDirId) -> Result<Arc<PackedTable>> {
        self.tables.get_or_load(id.dir_no, || open_table(&self.store, id))
    }

    /// Writes a table and reports `(handle, record bytes, other bytes)`.
    pub(crate) fn write_counted(&self, id: SstDirId, entries: &[(Vec<u8>, Vec<KvRecord>)]) -> Result<(SstDirHandle, u64, u64)> {
        let t = encode_table(entries, self.opts.bloom);
        self.store.write_new_file(&table_path(id), &t.bytes)?;
        Ok((handle_for(id, &t.meta), t.record_bytes, t.bytes.len() as u64 - t.record_bytes))
    }
}

impl TableFormat for PackedFormat {
    fn name(&self) -> &'static str {
        "packed"
    }

    fn write_table(&self, id: SstDirId, entries: &[(Vec<u8>, Vec<KvRecord>)]) -> Result<Option<SstDirHandle>> {
        if entries.is_empty() {
            return Ok(None);
        }
        Ok(Some(self.write_counted(id, entries)?.0))
    }

    fn get(&self, h: &SstDirHandle, key: &[u8]) -> Result<Option<Arc<Vec<KvRecord>>>> {
        if let Some(hit) = self.values.get(h.id.dir_no, key) {
            return Ok(Some(hit));
        }
        let table = self.table(h.id)?;
        if !table.meta.may_contain(key) {
            return Ok(None);
        }
        let Ok(i) = table.index.binary_search_by(|e| e.key.as_slice().cmp(key)) else {
            return Ok(None);
        };
        let records = Arc::new(read_entry(&self.store, h.id, &table.index[i])?);
        self.values.insert(h.id.dir_no, key, records.clone());
        Ok(Some(records))
    }

    fn scan(&self, h: &SstDirHandle, lo: &[u8], hi: Option<&[u8]>) -> Result<TableEntries> {
        let table = self.table(h.id)?;
        let start = table.index.partition_point(|e| e.key.as_slice() < lo);
        table.index[start..]
            .iter()
            .take_while(|e| hi.is_none_or(|hi| e.key.as_slice() < hi))
            .map(|e| Ok((e.key.clone(), read_entry(&self.store, h.id, e)?)))
            .collect()
    }

    fn compact(&self, job: &CompactionJob, version: &Version, alloc: &dyn Fn() -> u64) -> Result<CompactionOutput> {
        crate::compaction::packed_major(self, job, version, alloc)
    }

    fn remove(&self, id: SstDirId) -> Result<()> {
        self.forget(id);
        let path = table_path(id);
        if self.store.exists(&path) {
            self.store.remove_file(&path)?;
        }
        Ok(())
    }

    fn list_level(&self, level: u8) -> Result<Vec<u64>> {
        Ok(self.store.list_dir(&format!("L{level}"))?.iter().filter_map(|n| parse_table_name(n, ".sst")).collect())
    }

    fn verify(&self, h: &SstDirHandle) -> Result<()> {
        let t = open_table(&self.store, h.id)?;
        if t.meta.entry_count != h.entry_count {
            return Err(Error::corruption(format!("{}: entry count mismatch", table_path(h.id))));
        }
        Ok(())
    }

    fn forget(&self, id: SstDirId) {
        self.tables.remove(&id.dir_no);
        self.values.invalidate_dirs(&[id.dir_no]);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup() -> (tempfile::TempDir, PackedFormat) {
        let d = tempfile::tempdir().unwrap();
        let s = Store::open_root(d.path(), false).unwrap();
        s.create_dir("L0").unwrap();
        let opts = TableOptions {
            bloom: BloomParams::default(),
            file_target: 100,
            value_cache_bytes: 0,
            handle_cache_entries: 4,
        };
        (d, PackedFormat::new(s, opts))
    }

    fn entries(n: u64) -> TableEntries {
        (0..n)
            .map(|i| {
                let recs = if i % 3 == 0 { vec![KvRecord::put(i + 1, vec![i as u8; 20]), KvRecord::delete(i + 1000)] } else { vec![KvRecord::put(i + 1, vec![i as u8; 5])] };
                (format!("key{i:04}").into_bytes(), recs)
            })
            .collect()
    }

    #[test]
    fn round_trip() {
        let (_d, f) = setup();
        let id = SstDirId::new(0, 3);
        let es = entries(50);
        let h = f.write_table(id, &es).unwrap().unwrap();
        assert_eq!(h.entry_count, 50);
        assert_eq!(h.smallest, b"key0000");
        assert_eq!(read_all(f.store(), id).unwrap(), es);
        for (k, r) in &es {
            assert_eq!(f.get(&h, k).unwrap().as_deref(), Some(r));
        }
        assert_eq!(f.get(&h, b"key9999").unwrap(), None);
        let part = f.scan(&h, b"key0010", Some(b"key0020")).unwrap();
        assert_eq!(part, es[10..20].to_vec());
    }

    #[test]
    fn footer_is_24_bytes() {
        let t = encode_table(&entries(1), BloomParams::default());
        assert_eq!(&t.bytes[t.bytes.len() - 4..], PACKED_MAGIC);
        let meta_off = u64::from_le_bytes(t.bytes[t.bytes.len() - 16..t.bytes.len() - 8].try_into().unwrap());
        assert_eq!(t.bytes.len() - FOOTER_LEN - meta_off as usize, t.meta.encode().len());
    }

    #[test]
    fn corruption_detected() {
        let (_d, f) = setup();
        let id = SstDirId::new(0, 4);
        f.write_table(id, &entries(10)).unwrap();
        let mut bytes = f.store().read_file(&table_path(id)).unwrap();
        let n = bytes.len();
        bytes[n - 30] ^= 0x40;
        f.store().remove_file(&table_path(id)).unwrap();
        f.store().write_new_file(&table_path(id), &bytes).unwrap();
        assert!(matches!(open_table(f.store(), id), Err(Error::Corruption(_))));
    }

    #[test]
    fn listing() {
        let (_d, f) = setup();
        f.write_table(SstDirId::new(0, 9), &entries(2)).unwrap();
        assert_eq!(f.list_level(0).unwrap(), vec![9]);
        f.remove(SstDirId::new(0, 9)).unwrap();
        assert!(f.list_level(0).unwrap().is_empty());
    }
}
