//! SST directories: one KV file per key plus a `.meta` file.
//!
//! Layout: `L<level>/<dir_no:06>/{.meta, <encoded-key>...}`. KV files hold
//! the records of their key (see [`dentrykv_core::record`]); `.meta` holds
//! the directory Bloom filter and key range and is written last, so a
//! directory whose meta verifies is complete.

use dentrykv_core::key::{decode_key, encode_key};
use dentrykv_core::record::{parse_header, RECORD_HEADER_LEN, RECORD_OVERHEAD};
use std::sync::Arc;

use dentrykv_core::{
    decode_records, encode_records, CompactionJob, KvRecord, RecordHeader, SeqNo, SstDirHandle, SstDirId, SstDirMeta,
    Version,
};

use crate::cache::{HandleCache, ValueCache};
use crate::error::{Error, Result};
use crate::storage::{StorageError, Store};
use crate::table::{CompactionOutput, TableEntries, TableFormat, TableOptions};

pub const META_FILE: &str = ".meta";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BloomParams {
    pub bits_per_key: u32,
    pub num_hashes: u32,
}

impl Default for BloomParams {
    fn default() -> Self {
        BloomParams {
            bits_per_key: dentrykv_core::bloom::DEFAULT_BITS_PER_KEY,
            num_hashes: dentrykv_core::bloom::DEFAULT_NUM_HASHES,
        }
    }
}

pub fn kv_file_path(id: SstDirId, name: &str) -> String {
    format!("{}/{}", id.rel_path(), name)
}

fn meta_path(id: SstDirId) -> String {
    kv_file_path(id, META_FILE)
}

/// Builds one SST directory. Keys must be added in ascending order.
pub struct SstDirWriter {
    store: Store,
    id: SstDirId,
    bloom: BloomParams,
    keys: Vec<Vec<u8>>,
}

impl SstDirWriter {
    pub fn create(store: &Store, id: SstDirId, bloom: BloomParams) -> Result<SstDirWriter> {
        match store.create_dir(&id.rel_path()) {
            Err(StorageError::AlreadyExists(p)) => return Err(Error::corruption(format!("directory {p} already exists"))),
            r => r?,
        }
        Ok(SstDirWriter { store: store.clone(), id, bloom, keys: Vec::new() })
    }

    pub fn id(&self) -> SstDirId {
        self.id
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    fn push_key(&mut self, key: &[u8]) {
        debug_assert!(self.keys.last().is_none_or(|k| k.as_slice() < key), "keys out of order");
        self.keys.push(key.to_vec());
    }

    /// Creates a fresh KV file holding `records`.
    pub fn add_records(&mut self, key: &[u8], records: &[KvRecord]) -> Result<()> {
        let name = encode_key(key)?;
        self.store.write_new_file(&kv_file_path(self.id, &name), &encode_records(records))?;
        self.push_key(key);
        Ok(())
    }

    /// Redeploys an existing KV file into this directory by hard link.
    pub fn add_link(&mut self, key: &[u8], src_rel: &str) -> Result<()> {
        let name = encode_key(key)?;
        self.store.hard_link(src_rel, &kv_file_path(self.id, &name))?;
        self.push_key(key);
        Ok(())
    }

    /// Writes `.meta` and returns it.
    pub fn finish(self) -> Result<SstDirMeta> {
        let meta = SstDirMeta::for_sorted_keys(&self.keys, self.bloom.bits_per_key, self.bloom.num_hashes);
        self.store.write_new_file(&meta_path(self.id), &meta.encode())?;
        Ok(meta)
    }
}

/// Writes a whole directory from sorted `(key, records)` entries.
pub fn sstdir_write(store: &Store, id: SstDirId, entries: &[(Vec<u8>, Vec<KvRecord>)], bloom: BloomParams) -> Result<SstDirMeta> {
    let mut w = SstDirWriter::create(store, id, bloom)?;
    for (key, records) in entries {
        w.add_records(key, records)?;
    }
    w.finish()
}

pub fn meta_read(store: &Store, id: SstDirId) -> Result<SstDirMeta> {
    let bytes = match store.read_file(&meta_path(id)) {
        Err(StorageError::NotFound(_)) => return Err(Error::corruption(format!("{id}: missing {META_FILE}"))),
        r => r?,
    };
    SstDirMeta::decode(&bytes).map_err(|e| Error::corruption(format!("{id}: {e}")))
}

/// Regenerates `.meta` from the directory listing.
pub fn rebuild_meta(store: &Store, id: SstDirId, bloom: BloomParams) -> Result<SstDirMeta> {
    let keys: Vec<Vec<u8>> = scan_names(store, id)?.into_iter().map(|(k, _)| k).collect();
    let meta = SstDirMeta::for_sorted_keys(&keys, bloom.bits_per_key, bloom.num_hashes);
    if store.exists(&meta_path(id)) {
        store.remove_file(&meta_path(id))?;
    }
    store.write_new_file(&meta_path(id), &meta.encode())?;
    Ok(meta)
}

/// Keys in the directory with their KV-file paths, ascending by raw key.
pub fn scan_names(store: &Store, id: SstDirId) -> Result<Vec<(Vec<u8>, String)>> {
    let mut out = Vec::new();
    for name in store.list_dir(&id.rel_path())? {
        if name == META_FILE {
            continue;
        }
        let key = decode_key(&name).map_err(|_| Error::corruption(format!("{id}: stray entry {name:?}")))?;
        out.push((key, kv_file_path(id, &name)));
    }
    out.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(out)
}

pub fn read_kv_file(store: &Store, rel: &str) -> Result<Vec<KvRecord>> {
    decode_records(&store.read_file(rel)?).map_err(|e| Error::corruption(format!("{rel}: {e}")))
}

/// Every key of the directory with its records, ascending.
pub fn sstdir_scan(store: &Store, id: SstDirId) -> Result<Vec<(Vec<u8>, Vec<KvRecord>)>> {
    scan_names(store, id)?
        .into_iter()
        .map(|(k, path)| Ok((k, read_kv_file(store, &path)?)))
        .collect()
}

/// All records of `key` in the directory, or `None`. A Bloom miss returns
/// without opening any KV file.
pub fn lookup_records(store: &Store, meta: &SstDirMeta, id: SstDirId, key: &[u8]) -> Result<Option<Vec<KvRecord>>> {
    if !meta.may_contain(key) {
        return Ok(None);
    }
    let path = kv_file_path(id, &encode_key(key)?);
    match store.read_file_opt(&path)? {
        None => Ok(None),
        Some(bytes) => decode_records(&bytes).map(Some).map_err(|e| Error::corruption(format!("{path}: {e}"))),
    }
}

/// Newest record of `key` with `seq <= snapshot`.
pub fn sstdir_lookup(store: &Store, meta: &SstDirMeta, id: SstDirId, key: &[u8], snapshot: SeqNo) -> Result<Option<KvRecord>> {
    Ok(lookup_records(store, meta, id, key)?.and_then(|rs| rs.into_iter().rev().find(|r| r.seq <= snapshot)))
}

/// Record headers of one KV file. Single-record files are identified from
/// the header and file length alone, so their values are never read.
#[derive(Debug, Clone)]
pub struct KvFileHeaders {
    pub headers: Vec<RecordHeader>,
    /// Decoded records, present when the whole file had to be read.
    pub records: Option<Vec<KvRecord>>,
}

pub fn read_headers(store: &Store, rel: &str) -> Result<KvFileHeaders> {
    let (prefix, len) = store.read_prefix(rel, RECORD_HEADER_LEN)?;
    if let Some(h) = parse_header(&prefix) {
        if len == (RECORD_OVERHEAD as u64 + h.value_len as u64) {
            return Ok(KvFileHeaders { headers: vec![h], records: None });
        }
    }
    let records = read_kv_file(store, rel)?;
    let headers = records
        .iter()
        .map(|r| RecordHeader { seq: r.seq, op: r.op, value_len: r.value.len() as u32 })
        .collect();
    Ok(KvFileHeaders { headers, records: Some(records) })
}

/// Unlinks every entry of the directory, then the directory itself.
pub fn remove_sstdir(store: &Store, id: SstDirId) -> Result<()> {
    let rel = id.rel_path();
    let names = match store.list_dir(&rel) {
        Err(StorageError::DirMissing(_)) => return Ok(()),
        r => r?,
    };
    for name in names {
        store.remove_file(&format!("{rel}/{name}"))?;
    }
    store.remove_dir(&rel)?;
    Ok(())
}

/// Parses a `<digits>` directory or `<digits>.sst` file name.
pub fn parse_table_name(name: &str, suffix: &str) -> Option<u64> {
    let digits = name.strip_suffix(suffix)?;
    if digits.len() < 6 || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    digits.parse().ok()
}

/// The dentry engine's table format: one SST directory per table.
pub struct DentryFormat {
    store: Store,
    opts: TableOptions,
    metas: HandleCache<u64, SstDirMeta>,
    values: ValueCache,
}

impl DentryFormat {
    pub fn new(store: Store, opts: TableOptions) -> DentryFormat {
        DentryFormat {
            metas: HandleCache::new(opts.handle_cache_entries),
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

    fn meta(&self, id: SstDirId) -> Result<Arc<SstDirMeta>> {
        self.metas.get_or_load(id.dir_no, || meta_read(&self.store, id))
    }
}

impl TableFormat for DentryFormat {
    fn name(&self) -> &'static str {
        "dentry"
    }

    fn write_table(&self, id: SstDirId, entries: &[(Vec<u8>, Vec<KvRecord>)]) -> Result<Option<SstDirHandle>> {
        if entries.is_empty() {
            return Ok(None);
        }
        let meta = sstdir_write(&self.store, id, entries, self.opts.bloom)?;
        Ok(Some(handle_for(id, &meta)))
    }

    fn get(&self, h: &SstDirHandle, key: &[u8]) -> Result<Option<Arc<Vec<KvRecord>>>> {
        if let Some(hit) = self.values.get(h.id.dir_no, key) {
            return Ok(Some(hit));
        }
        let meta = self.meta(h.id)?;
        let Some(records) = lookup_records(&self.store, &meta, h.id, key)? else {
            return Ok(None);
        };
        let records = Arc::new(records);
        self.values.insert(h.id.dir_no, key, records.clone());
        Ok(Some(records))
    }

    fn scan(&self, h: &SstDirHandle, lo: &[u8], hi: Option<&[u8]>) -> Result<TableEntries> {
        scan_names(&self.store, h.id)?
            .into_iter()
            .filter(|(k, _)| k.as_slice() >= lo && hi.is_none_or(|hi| k.as_slice() < hi))
            .map(|(k, path)| Ok((k, read_kv_file(&self.store, &path)?)))
            .collect()
    }

    fn compact(&self, job: &CompactionJob, version: &Version, alloc: &dyn Fn() -> u64) -> Result<CompactionOutput> {
        crate::compaction::dentry_major(self, job, version, alloc)
    }

    fn remove(&self, id: SstDirId) -> Result<()> {
        self.forget(id);
        remove_sstdir(&self.store, id)
    }

    fn list_level(&self, level: u8) -> Result<Vec<u64>> {
        Ok(self.store.list_dir(&format!("L{level}"))?.iter().filter_map(|n| parse_table_name(n, "")).collect())
    }

    fn verify(&self, h: &SstDirHandle) -> Result<()> {
        match meta_read(&self.store, h.id) {
            Ok(_) => Ok(()),
            Err(Error::Corruption(msg)) => {
                log::warn!("{msg}; rebuilding");
                let meta = rebuild_meta(&self.store, h.id, self.opts.bloom)?;
                if meta.entry_count != h.entry_count {
                    return Err(Error::corruption(format!(
                        "{}: {} KV files on disk, {} recorded",
                        h.id, meta.entry_count, h.entry_count
                    )));
                }
                self.metas.remove(&h.id.dir_no);
                Ok(())
            }
            Err(e) => Err(e),
        }
    }

    fn forget(&self, id: SstDirId) {
        self.metas.remove(&id.dir_no);
        self.values.invalidate_dirs(&[id.dir_no]);
    }
}

pub(crate) fn handle_for(id: SstDirId, meta: &SstDirMeta) -> SstDirHandle {
    SstDirHandle {
        id,
        smallest: meta.smallest_key.clone(),
        largest: meta.largest_key.clone(),
        entry_count: meta.entry_count,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> (tempfile::TempDir, Store) {
        let d = tempfile::tempdir().unwrap();
        let s = Store::open_root(d.path(), true).unwrap();
        s.create_dir("L0").unwrap();
        s.create_dir("L1").unwrap();
        (d, s)
    }

    fn entries(pairs: &[(&str, Vec<KvRecord>)]) -> Vec<(Vec<u8>, Vec<KvRecord>)> {
        pairs.iter().map(|(k, r)| (k.as_bytes().to_vec(), r.clone())).collect()
    }

    #[test]
    fn single_entry_layout() {
        let (_d, s) = store();
        let id = SstDirId::new(0, 7);
        let meta = sstdir_write(&s, id, &entries(&[("a", vec![KvRecord::put(1, b"x".to_vec())])]), BloomParams::default()).unwrap();
        assert_eq!(meta.entry_count, 1);
        let mut names = s.list_dir("L0/000007").unwrap();
        names.sort();
        assert_eq!(names, [".meta", "a"]);
    }

    #[test]
    fn unsafe_key_is_encoded() {
        let (_d, s) = store();
        let id = SstDirId::new(0, 8);
        sstdir_write(&s, id, &entries(&[("a/b", vec![KvRecord::put(1, b"x".to_vec())])]), BloomParams::default()).unwrap();
        assert!(s.exists("L0/000008/a%2Fb"));
    }

    #[test]
    fn existing_directory_rejected() {
        let (_d, s) = store();
        let id = SstDirId::new(0, 9);
        sstdir_write(&s, id, &[], BloomParams::default()).unwrap();
        assert!(SstDirWriter::create(&s, id, BloomParams::default()).is_err());
    }

    #[test]
    fn bloom_miss_opens_nothing() {
        let (_d, s) = store();
        let id = SstDirId::new(0, 10);
        let meta = sstdir_write(&s, id, &entries(&[("k", vec![KvRecord::put(1, b"v".to_vec())])]), BloomParams::default()).unwrap();
        // Find a key the filter rejects.
        let probe = (0..).map(|i| format!("absent{i}")).find(|k| !meta.may_contain(k.as_bytes())).unwrap();
        let before = s.counters_snapshot().file_opens;
        assert_eq!(sstdir_lookup(&s, &meta, id, probe.as_bytes(), SeqNo::MAX).unwrap(), None);
        assert_eq!(s.counters_snapshot().file_opens, before);
    }

    #[test]
    fn lookup_respects_snapshot() {
        let (_d, s) = store();
        let id = SstDirId::new(1, 11);
        let recs = vec![KvRecord::put(3, b"three".to_vec()), KvRecord::put(9, b"nine".to_vec())];
        let meta = sstdir_write(&s, id, &entries(&[("k", recs)]), BloomParams::default()).unwrap();
        assert_eq!(sstdir_lookup(&s, &meta, id, b"k", SeqNo::MAX).unwrap().unwrap().seq, 9);
        assert_eq!(sstdir_lookup(&s, &meta, id, b"k", 5).unwrap().unwrap().seq, 3);
        assert_eq!(sstdir_lookup(&s, &meta, id, b"k", 2).unwrap(), None);
    }

    #[test]
    fn scan_sorts_raw_keys() {
        let (_d, s) = store();
        let id = SstDirId::new(0, 12);
        // "a" < "~" as raw keys, but "%7E" < "a" as filenames.
        let es = entries(&[("a", vec![KvRecord::put(1, vec![])]), ("~", vec![KvRecord::delete(2)])]);
        sstdir_write(&s, id, &es, BloomParams::default()).unwrap();
        assert_eq!(sstdir_scan(&s, id).unwrap(), es);
    }

    #[test]
    fn empty_directory_scan() {
        let (_d, s) = store();
        let id = SstDirId::new(0, 13);
        let meta = sstdir_write(&s, id, &[], BloomParams::default()).unwrap();
        assert!(sstdir_scan(&s, id).unwrap().is_empty());
        assert!(!meta.may_contain(b"x"));
    }

    #[test]
    fn meta_round_trip_and_rebuild() {
        let (_d, s) = store();
        let id = SstDirId::new(0, 14);
        let es: Vec<_> = (0..30).map(|i| (format!("key{i:02}").into_bytes(), vec![KvRecord::put(i + 1, vec![1])])).collect();
        let meta = sstdir_write(&s, id, &es, BloomParams::default()).unwrap();
        assert_eq!(meta_read(&s, id).unwrap(), meta);
        // Truncate the meta file.
        let bytes = s.read_file("L0/000014/.meta").unwrap();
        s.remove_file("L0/000014/.meta").unwrap();
        s.write_new_file("L0/000014/.meta", &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(meta_read(&s, id), Err(Error::Corruption(_))));
        let rebuilt = rebuild_meta(&s, id, BloomParams::default()).unwrap();
        assert_eq!(rebuilt.entry_count, 30);
        assert_eq!(meta_read(&s, id).unwrap(), meta);
    }

    #[test]
    fn headers_without_value_read() {
        let (_d, s) = store();
        let id = SstDirId::new(0, 15);
        let es = entries(&[
            ("one", vec![KvRecord::put(4, vec![9; 1000])]),
            ("two", vec![KvRecord::put(2, b"a".to_vec()), KvRecord::delete(6)]),
        ]);
        sstdir_write(&s, id, &es, BloomParams::default()).unwrap();
        let before = s.counters_snapshot().bytes_read;
        let h = read_headers(&s, "L0/000015/one").unwrap();
        assert_eq!(h.headers.len(), 1);
        assert!(h.records.is_none());
        assert_eq!(s.counters_snapshot().bytes_read - before, RECORD_HEADER_LEN as u64);
        let h = read_headers(&s, "L0/000015/two").unwrap();
        assert_eq!(h.headers.iter().map(|h| h.seq).collect::<Vec<_>>(), vec![2, 6]);
        assert!(h.records.is_some());
    }

    #[test]
    fn remove_directory() {
        let (_d, s) = store();
        let id = SstDirId::new(0, 16);
        sstdir_write(&s, id, &entries(&[("a", vec![KvRecord::delete(1)])]), BloomParams::default()).unwrap();
        remove_sstdir(&s, id).unwrap();
        assert!(!s.exists("L0/000016"));
        remove_sstdir(&s, id).unwrap();
    }

    #[test]
    fn table_names() {
        assert_eq!(parse_table_name("000012", ""), Some(12));
        assert_eq!(parse_table_name("000012.sst", ".sst"), Some(12));
        assert_eq!(parse_table_name("12", ""), None);
        assert_eq!(parse_table_name(".meta", ""), None);
    }
}
