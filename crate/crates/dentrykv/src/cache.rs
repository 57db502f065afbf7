//! LRU caches for KV-file contents and per-table handles.

use std::hash::Hash;
use std::sync::Arc;

use dentrykv_core::KvRecord;
use lru::LruCache;
use parking_lot::Mutex;

const ENTRY_OVERHEAD: usize = 64;

/// Decoded KV files keyed by `(dir_no, key)`, bounded by an approximate
/// byte budget. A capacity of zero disables the cache.
pub struct ValueCache {
    capacity: usize,
    inner: Mutex<ValueCacheInner>,
}

struct ValueCacheInner {
    lru: LruCache<(u64, Vec<u8>), Arc<Vec<KvRecord>>>,
    bytes: usize,
}

fn charge(key: &[u8], records: &[KvRecord]) -> usize {
    ENTRY_OVERHEAD + key.len() + records.iter().map(|r| r.value.len() + 24).sum::<usize>()
}

impl ValueCache {
    pub fn new(capacity_bytes: usize) -> ValueCache {
        ValueCache { capacity: capacity_bytes, inner: Mutex::new(ValueCacheInner { lru: LruCache::unbounded(), bytes: 0 }) }
    }

    pub fn get(&self, dir_no: u64, key: &[u8]) -> Option<Arc<Vec<KvRecord>>> {
        if self.capacity == 0 {
            return None;
        }
        self.inner.lock().lru.get(&(dir_no, key.to_vec())).cloned()
    }

    pub fn insert(&self, dir_no: u64, key: &[u8], records: Arc<Vec<KvRecord>>) {
        let cost = charge(key, &records);
        if self.capacity == 0 || cost > self.capacity {
            return;
        }
        let mut inner = self.inner.lock();
        if let Some(old) = inner.lru.put((dir_no, key.to_vec()), records) {
            inner.bytes -= charge(key, &old);
        }
        inner.bytes += cost;
        while inner.bytes > self.capacity {
            match inner.lru.pop_lru() {
                Some(((_, k), v)) => inner.bytes -= charge(&k, &v),
                None => break,
            }
        }
    }

    /// Drops every entry that belongs to one of `dirs`.
    pub fn invalidate_dirs(&self, dirs: &[u64]) {
        if self.capacity == 0 || dirs.is_empty() {
            return;
        }
        let mut inner = self.inner.lock();
        let stale: Vec<(u64, Vec<u8>)> =
            inner.lru.iter().filter(|((d, _), _)| dirs.contains(d)).map(|(k, _)| k.clone()).collect();
        for k in stale {
            if let Some(v) = inner.lru.pop(&k) {
                inner.bytes -= charge(&k.1, &v);
            }
        }
    }

    pub fn len(&self) -> usize {
        self.inner.lock().lru.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn bytes(&self) -> usize {
        self.inner.lock().bytes
    }
}

/// Count-bounded cache of open table handles. Zero entries disables it.
pub struct HandleCache<K: Hash + Eq, T> {
    inner: Option<Mutex<LruCache<K, Arc<T>>>>,
}

impl<K: Hash + Eq, T> HandleCache<K, T> {
    pub fn new(entries: usize) -> HandleCache<K, T> {
        HandleCache { inner: std::num::NonZeroUsize::new(entries).map(|n| Mutex::new(LruCache::new(n))) }
    }

    pub fn get_or_load<E>(&self, key: K, load: impl FnOnce() -> Result<T, E>) -> Result<Arc<T>, E> {
        let Some(cache) = &self.inner else {
            return load().map(Arc::new);
        };
        if let Some(v) = cache.lock().get(&key) {
            return Ok(v.clone());
        }
        let v = Arc::new(load()?);
        cache.lock().put(key, v.clone());
        Ok(v)
    }

    pub fn remove(&self, key: &K) {
        if let Some(cache) = &self.inner {
            cache.lock().pop(key);
        }
    }

    pub fn len(&self) -> usize {
        self.inner.as_ref().map_or(0, |c| c.lock().len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
