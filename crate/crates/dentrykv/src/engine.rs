//! The embedded store: write path, read path, snapshots and the background
//! compaction worker. Both table formats share all of this.

use std::collections::{BTreeMap, VecDeque};
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Weak};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use dentrykv_core::{
    validate_key, CompactionJob, CompactionLimits, KvRecord, ManifestEdit, Memtable, OpCode, SeqNo, SstDirHandle,
    SstDirId, Version,
};
use parking_lot::{Condvar, Mutex, RwLock};

use crate::compaction::minor_entries;
use crate::error::{Error, Result};
use crate::manifest::{remove_stale_manifests, ManifestLog};
use crate::packed::PackedFormat;
use crate::recovery::recover;
use crate::sstdir::{BloomParams, DentryFormat};
use crate::storage::{IoCounters, Store};
use crate::table::{CompactionStats, TableEntries, TableFormat, TableOptions};
use crate::wal::{log_file_name, RetireQueue, WalWriter};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EngineKind {
    /// One file per KV pair, compaction by hard link.
    Dentry,
    /// Conventional SST files, compaction by rewrite.
    Packed,
}

impl FromStr for EngineKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "dentry" => Ok(EngineKind::Dentry),
            "packed" => Ok(EngineKind::Packed),
            other => Err(format!("unknown engine {other:?} (expected dentry or packed)")),
        }
    }
}

impl std::fmt::Display for EngineKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EngineKind::Dentry => "dentry",
            EngineKind::Packed => "packed",
        })
    }
}

#[derive(Debug, Clone)]
pub struct EngineConfig {
    pub root: PathBuf,
    pub engine_kind: EngineKind,
    /// Seal the mutable memtable once it holds this many bytes.
    pub memtable_bytes: usize,
    pub immutable_queue_cap: usize,
    /// L0 capacity in KV files; level n holds `l0_limit_files * 10^n`.
    pub l0_limit_files: u64,
    /// KV files per major-compaction output table.
    pub sstdir_file_target: u64,
    pub bloom_bits_per_key: u32,
    pub bloom_num_hashes: u32,
    pub value_cache_bytes: usize,
    pub handle_cache_entries: usize,
    /// How long a log outlives the minor compaction of its memtable.
    pub wal_grace: Duration,
    pub sync_enabled: bool,
    /// Sync the log after every write rather than only when it is sealed.
    pub sync_per_write: bool,
    pub max_level: u8,
    /// Run compactions on a worker thread. When off, the owner drives them
    /// with [`Engine::compact_step`] and writes compact inline when the
    /// immutable queue is full.
    pub background_compaction: bool,
    /// Write queued and mutable memtables to L0 on close.
    pub flush_on_close: bool,
}

impl EngineConfig {
    pub fn new(root: impl Into<PathBuf>) -> EngineConfig {
        EngineConfig {
            root: root.into(),
            engine_kind: EngineKind::Dentry,
            memtable_bytes: 4 << 20,
            immutable_queue_cap: 4,
            l0_limit_files: 10_000,
            sstdir_file_target: 2_000,
            bloom_bits_per_key: dentrykv_core::bloom::DEFAULT_BITS_PER_KEY,
            bloom_num_hashes: dentrykv_core::bloom::DEFAULT_NUM_HASHES,
            value_cache_bytes: 8 << 20,
            handle_cache_entries: 1_000,
            wal_grace: Duration::from_secs(60),
            sync_enabled: true,
            sync_per_write: false,
            max_level: dentrykv_core::version::DEFAULT_MAX_LEVEL,
            background_compaction: true,
            flush_on_close: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.memtable_bytes == 0 {
            return bad("memtable_bytes must be positive");
        }
        if self.immutable_queue_cap == 0 {
            return bad("immutable_queue_cap must be positive");
        }
        if self.l0_limit_files == 0 || self.sstdir_file_target == 0 {
            return bad("l0_limit_files and sstdir_file_target must be positive");
        }
        if self.l0_limit_files < self.sstdir_file_target {
            return bad("l0_limit_files must be at least sstdir_file_target");
        }
        if self.bloom_bits_per_key == 0 || self.bloom_num_hashes == 0 {
            return bad("Bloom parameters must be positive");
        }
        if self.max_level == 0 {
            return bad("max_level must be at least 1");
        }
        Ok(())
    }

    fn table_options(&self) -> TableOptions {
        TableOptions {
            bloom: BloomParams { bits_per_key: self.bloom_bits_per_key, num_hashes: self.bloom_num_hashes },
            file_target: self.sstdir_file_target,
            value_cache_bytes: self.value_cache_bytes,
            handle_cache_entries: self.handle_cache_entries,
        }
    }
}

/// Result of one compaction step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StepOutcome {
    Minor,
    Major(CompactionStats),
    Idle,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EngineStats {
    pub minor_compactions: u64,
    pub major_compactions: u64,
    /// Sum over all major compactions since open.
    pub major_totals: CompactionStats,
}

struct SealedMem {
    table: Memtable,
    log_number: u64,
    last_seq: SeqNo,
}

struct MemState {
    mutable: Memtable,
    /// Oldest first.
    immutables: VecDeque<Arc<SealedMem>>,
    /// Number of the log receiving writes for `mutable`.
    active_log: u64,
}

struct Writer {
    wal: Option<WalWriter>,
    failed: Option<String>,
}

struct BgState {
    cursors: Vec<Option<Vec<u8>>>,
    retire: RetireQueue,
}

struct Inner {
    cfg: EngineConfig,
    store: Store,
    format: Box<dyn TableFormat>,
    writer: Mutex<Writer>,
    mem: RwLock<MemState>,
    version: RwLock<Arc<Version>>,
    /// Versions replaced by a commit, with the tables that commit removed.
    /// Tables are deleted once no reader holds any of these versions.
    superseded: Mutex<VecDeque<(Arc<Version>, Vec<SstDirId>)>>,
    visible_seq: AtomicU64,
    next_file: AtomicU64,
    snapshots: Mutex<BTreeMap<u64, SeqNo>>,
    next_snapshot_id: AtomicU64,
    manifest: Mutex<ManifestLog>,
    bg: Mutex<BgState>,
    space: (Mutex<()>, Condvar),
    wake: (Mutex<bool>, Condvar),
    shutdown: AtomicBool,
    bg_error: Mutex<Option<String>>,
    stats: Mutex<EngineStats>,
}

pub struct Engine {
    inner: Arc<Inner>,
    worker: Mutex<Option<JoinHandle<()>>>,
    closed: AtomicBool,
}

/// A pinned read view. Dropping it releases the pin.
pub struct Snapshot {
    id: u64,
    seq: SeqNo,
    owner: Weak<Inner>,
}

impl Snapshot {
    pub fn seq(&self) -> SeqNo {
        self.seq
    }
}

impl Drop for Snapshot {
    fn drop(&mut self) {
        if let Some(inner) = self.owner.upgrade() {
            inner.snapshots.lock().remove(&self.id);
        }
    }
}

impl std::fmt::Debug for Snapshot {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Snapshot").field("id", &self.id).field("seq", &self.seq).finish()
    }
}

fn check_value(value: &[u8]) -> Result<()> {
    if value.len() > u32::MAX as usize {
        return Err(Error::ValueTooLarge(value.len()));
    }
    Ok(())
}

fn visible_value(r: &KvRecord) -> Option<Vec<u8>> {
    (!r.is_delete()).then(|| r.value.clone())
}

impl Engine {
    pub fn open(cfg: EngineConfig) -> Result<Engine> {
        cfg.validate()?;
        let store = Store::open_root(&cfg.root, cfg.sync_enabled)?;
        Engine::open_with_store(cfg, store)
    }

    /// Opens on an existing [`Store`], e.g. one prepared for fault injection.
    pub fn open_with_store(cfg: EngineConfig, store: Store) -> Result<Engine> {
        cfg.validate()?;
        let format: Box<dyn TableFormat> = match cfg.engine_kind {
            EngineKind::Dentry => Box::new(DentryFormat::new(store.clone(), cfg.table_options())),
            EngineKind::Packed => Box::new(PackedFormat::new(store.clone(), cfg.table_options())),
        };
        let rec = recover(&store, format.as_ref(), cfg.max_level)?;
        let replay_last = rec.entries.last().map_or(0, |e| e.seq);
        let visible = rec.version.last_seq.max(replay_last);
        let inner = Arc::new(Inner {
            format,
            writer: Mutex::new(Writer { wal: None, failed: None }),
            mem: RwLock::new(MemState { mutable: Memtable::new(), immutables: VecDeque::new(), active_log: 0 }),
            version: RwLock::new(Arc::new(rec.version)),
            superseded: Mutex::new(VecDeque::new()),
            visible_seq: AtomicU64::new(visible),
            next_file: AtomicU64::new(rec.next_file),
            snapshots: Mutex::new(BTreeMap::new()),
            next_snapshot_id: AtomicU64::new(1),
            manifest: Mutex::new(rec.manifest),
            bg: Mutex::new(BgState { cursors: vec![None; cfg.max_level as usize + 1], retire: RetireQueue::default() }),
            space: (Mutex::new(()), Condvar::new()),
            wake: (Mutex::new(false), Condvar::new()),
            shutdown: AtomicBool::new(false),
            bg_error: Mutex::new(None),
            stats: Mutex::new(EngineStats::default()),
            store,
            cfg,
        });

        // Fresh log for new writes; replayed data goes straight to L0 so
        // the old logs can be dropped.
        let wal_no = inner.alloc();
        inner.writer.lock().wal = Some(WalWriter::create(&inner.store, wal_no, inner.cfg.sync_per_write)?);
        inner.mem.write().active_log = wal_no;
        let mut edit = ManifestEdit { log_number: Some(wal_no), last_seq: Some(visible), ..Default::default() };
        if !rec.entries.is_empty() {
            let mut table = Memtable::new();
            for e in &rec.entries {
                let record = match e.op {
                    OpCode::Put => KvRecord::put(e.seq, e.value.clone()),
                    OpCode::Delete => KvRecord::delete(e.seq),
                };
                // Entries are ascending by seq, so this cannot be out of order.
                let _ = table.insert(&e.key, record);
            }
            let id = SstDirId::new(0, inner.alloc());
            if let Some(h) = inner.format.write_table(id, &minor_entries(&table, SeqNo::MAX))? {
                edit.added.push(h);
            }
            log::info!("recovered {} records from {} log(s)", rec.entries.len(), rec.replayed_logs.len());
        }
        inner.commit(edit)?;
        for n in rec.replayed_logs {
            inner.store.remove_file(&log_file_name(n))?;
        }

        let engine = Engine { inner, worker: Mutex::new(None), closed: AtomicBool::new(false) };
        if engine.inner.cfg.background_compaction {
            let inner = engine.inner.clone();
            let handle = std::thread::Builder::new()
                .name("dentrykv-compaction".into())
                .spawn(move || worker_loop(inner))
                .map_err(|e| Error::Background(e.to_string()))?;
            *engine.worker.lock() = Some(handle);
        }
        Ok(engine)
    }

    fn check_open(&self) -> Result<()> {
        if self.closed.load(Ordering::SeqCst) {
            return Err(Error::Closed);
        }
        Ok(())
    }

    pub fn put(&self, key: &[u8], value: &[u8]) -> Result<()> {
        check_value(value)?;
        self.write(key, OpCode::Put, value)
    }

    pub fn delete(&self, key: &[u8]) -> Result<()> {
        self.write(key, OpCode::Delete, &[])
    }

    fn write(&self, key: &[u8], op: OpCode, value: &[u8]) -> Result<()> {
        validate_key(key)?;
        self.check_open()?;
        let inner = &self.inner;
        let mut w = inner.writer.lock();
        if let Some(msg) = &w.failed {
            return Err(Error::WriterFailed(msg.clone()));
        }
        inner.make_room(&mut w)?;
        let seq = inner.visible_seq.load(Ordering::Acquire) + 1;
        let wal = w.wal.as_mut().expect("make_room installs a log");
        if let Err(e) = wal.append(seq, op, key, value) {
            w.failed = Some(e.to_string());
            return Err(e);
        }
        let record = match op {
            OpCode::Put => KvRecord::put(seq, value.to_vec()),
            OpCode::Delete => KvRecord::delete(seq),
        };
        inner.mem.write().mutable.insert(key, record).expect("sequence numbers only grow");
        inner.visible_seq.store(seq, Ordering::Release);
        Ok(())
    }

    pub fn get(&self, key: &[u8]) -> Result<Option<Vec<u8>>> {
        self.check_open()?;
        validate_key(key)?;
        self.inner.get_at(key, self.inner.visible_seq.load(Ordering::Acquire))
    }

    pub fn get_at(&self, key: &[u8], snapshot: &Snapshot) -> Result<Option<Vec<u8>>> {
        self.check_open()?;
        validate_key(key)?;
        self.check_snapshot(snapshot)?;
        self.inner.get_at(key, snapshot.seq)
    }

    /// Live pairs with keys in `[lo, hi)`, ascending. `hi = None` is
    /// unbounded.
    pub fn scan(&self, lo: &[u8], hi: Option<&[u8]>) -> Result<Vec<(Vec<u8>, Vec<u8>)>> {
        self.check_open()?;
        self.inner.scan_at(lo, hi, self.inner.visible_seq.load(Ordering::Acquire))
    }

    pub fn scan_at(&self, lo: &[u8], hi: Option<&[u8]>, snapshot: &Snapshot) -> Result<Vec<(Vec<u8>, Vec<u8>)>> {
        self.check_open()?;
        self.check_snapshot(snapshot)?;
        self.inner.scan_at(lo, hi, snapshot.seq)
    }

    pub fn snapshot(&self) -> Result<Snapshot> {
        self.check_open()?;
        let mut snaps = self.inner.snapshots.lock();
        let id = self.inner.next_snapshot_id.fetch_add(1, Ordering::Relaxed);
        let seq = self.inner.visible_seq.load(Ordering::Acquire);
        snaps.insert(id, seq);
        Ok(Snapshot { id, seq, owner: Arc::downgrade(&self.inner) })
    }

    pub fn release_snapshot(&self, snapshot: &Snapshot) {
        self.inner.snapshots.lock().remove(&snapshot.id);
    }

    fn check_snapshot(&self, s: &Snapshot) -> Result<()> {
        let ours = s.owner.upgrade().is_some_and(|o| Arc::ptr_eq(&o, &self.inner));
        if !ours || !self.inner.snapshots.lock().contains_key(&s.id) {
            return Err(Error::SnapshotReleased);
        }
        Ok(())
    }

    /// Smallest sequence pinned by a live snapshot, `SeqNo::MAX` if none.
    pub fn snapshot_floor(&self) -> SeqNo {
        self.inner.snapshot_floor()
    }

    /// Seals the mutable memtable (if non-empty) and writes every queued
    /// memtable to L0.
    pub fn flush(&self) -> Result<()> {
        self.check_open()?;
        self.inner.flush()
    }

    /// One unit of compaction work: a minor compaction if a memtable is
    /// queued, else a major compaction if a level is over capacity, else
    /// housekeeping.
    pub fn compact_step(&self) -> Result<StepOutcome> {
        self.check_open()?;
        let mut bg = self.inner.bg.lock();
        self.inner.step(&mut bg)
    }

    /// Runs compaction steps until nothing is left to do.
    pub fn run_to_quiescence(&self) -> Result<()> {
        while self.compact_step()? != StepOutcome::Idle {}
        Ok(())
    }

    /// Blocks until no memtable is queued and every level is within
    /// capacity.
    pub fn wait_idle(&self) -> Result<()> {
        self.check_open()?;
        if !self.inner.cfg.background_compaction {
            return self.run_to_quiescence();
        }
        self.inner.wake_worker();
        loop {
            if let Some(e) = self.inner.bg_error.lock().clone() {
                return Err(Error::Background(e));
            }
            {
                // Holding the lock means no step is half-way through.
                let bg = self.inner.bg.lock();
                if self.inner.is_idle(&bg) {
                    return Ok(());
                }
            }
            std::thread::sleep(Duration::from_millis(1));
        }
    }

    /// Flushes memtables, merges every level into the next and finally
    /// rewrites the bottom level, so all data ends up there with only the
    /// variants live snapshots need.
    pub fn compact_all(&self) -> Result<()> {
        self.flush()?;
        let inner = &self.inner;
        let mut bg = inner.bg.lock();
        for level in 0..inner.cfg.max_level {
            let v = inner.current_version();
            let upper = v.level(level).to_vec();
            if upper.is_empty() {
                continue;
            }
            let lo = upper.iter().map(|h| h.smallest.as_slice()).min().unwrap();
            let hi = upper.iter().map(|h| h.largest.as_slice()).max().unwrap();
            let job = CompactionJob {
                level,
                inputs_lower: v.overlapping(level + 1, lo, hi),
                inputs_upper: upper,
                snapshot_floor: inner.snapshot_floor(),
            };
            inner.run_major(&mut bg, &v, job)?;
        }
        // Rewrite the bottom level on its own so variants and tombstones
        // that are no longer pinned disappear as well.
        let v = inner.current_version();
        let bottom = inner.cfg.max_level;
        if bottom > 0 && !v.level(bottom).is_empty() {
            let job = CompactionJob {
                level: bottom - 1,
                inputs_upper: Vec::new(),
                inputs_lower: v.level(bottom).to_vec(),
                snapshot_floor: inner.snapshot_floor(),
            };
            inner.run_major(&mut bg, &v, job)?;
        }
        inner.housekeeping(&mut bg)?;
        Ok(())
    }

    pub fn store(&self) -> &Store {
        &self.inner.store
    }

    pub fn config(&self) -> &EngineConfig {
        &self.inner.cfg
    }

    pub fn counters(&self) -> IoCounters {
        self.inner.store.counters_snapshot()
    }

    pub fn version(&self) -> Arc<Version> {
        self.inner.current_version()
    }

    /// Sequence number of the last accepted write.
    pub fn last_seq(&self) -> SeqNo {
        self.inner.visible_seq.load(Ordering::Acquire)
    }

    pub fn immutable_count(&self) -> usize {
        self.inner.mem.read().immutables.len()
    }

    pub fn stats(&self) -> EngineStats {
        self.inner.stats.lock().clone()
    }

    /// The last error hit by the background worker, if it has not since
    /// recovered.
    pub fn background_error(&self) -> Option<String> {
        self.inner.bg_error.lock().clone()
    }

    /// Every live table with its full contents, for inspection and tests.
    pub fn dump_tables(&self) -> Result<Vec<(SstDirHandle, TableEntries)>> {
        let v = self.inner.current_version();
        v.all_handles().map(|h| Ok((h.clone(), self.inner.format.scan(h, b"", None)?))).collect()
    }

    /// Stops the worker and, if configured, flushes memtables to L0.
    /// Idempotent.
    pub fn close(&self) -> Result<()> {
        if self.closed.swap(true, Ordering::SeqCst) {
            return Ok(());
        }
        self.inner.shutdown.store(true, Ordering::SeqCst);
        self.inner.wake_worker();
        if let Some(h) = self.worker.lock().take() {
            let _ = h.join();
        }
        if self.inner.store.is_crashed() {
            return Ok(());
        }
        if self.inner.cfg.flush_on_close && self.inner.writer.lock().failed.is_none() {
            self.inner.flush()?;
        }
        let mut w = self.inner.writer.lock();
        if let Some(wal) = w.wal.as_mut() {
            if !wal.is_sealed() {
                wal.seal_and_sync()?;
            }
        }
        Ok(())
    }
}

impl Drop for Engine {
    fn drop(&mut self) {
        if let Err(e) = self.close() {
            log::warn!("close failed: {e}");
        }
    }
}

fn worker_loop(inner: Arc<Inner>) {
    while !inner.shutdown.load(Ordering::SeqCst) {
        let res = {
            let mut bg = inner.bg.lock();
            inner.step(&mut bg)
        };
        match res {
            Ok(StepOutcome::Idle) => inner.sleep_until_woken(Duration::from_millis(50)),
            Ok(_) => {
                *inner.bg_error.lock() = None;
            }
            Err(e) => {
                log::error!("background compaction: {e}");
                *inner.bg_error.lock() = Some(e.to_string());
                if inner.store.is_crashed() {
                    break;
                }
                inner.sleep_until_woken(Duration::from_millis(50));
            }
        }
    }
}

impl Inner {
    fn alloc(&self) -> u64 {
        self.next_file.fetch_add(1, Ordering::SeqCst)
    }

    fn current_version(&self) -> Arc<Version> {
        self.version.read().clone()
    }

    fn snapshot_floor(&self) -> SeqNo {
        self.snapshots.lock().values().copied().min().unwrap_or(SeqNo::MAX)
    }

    fn wake_worker(&self) {
        *self.wake.0.lock() = true;
        self.wake.1.notify_all();
    }

    fn sleep_until_woken(&self, timeout: Duration) {
        let mut woken = self.wake.0.lock();
        if !*woken {
            self.wake.1.wait_for(&mut woken, timeout);
        }
        *woken = false;
    }

    fn is_idle(&self, bg: &BgState) -> bool {
        if !self.mem.read().immutables.is_empty() {
            return false;
        }
        let v = self.current_version();
        v.pick_compaction(&self.limits(), &bg.cursors).is_none()
    }

    fn limits(&self) -> CompactionLimits {
        CompactionLimits { l0_limit: self.cfg.l0_limit_files }
    }

    /// Ensures a log exists and the mutable memtable has room, sealing it
    /// when full. Called with the writer lock held.
    fn make_room(&self, w: &mut Writer) -> Result<()> {
        loop {
            if w.wal.is_none() {
                let no = self.alloc();
                w.wal = Some(WalWriter::create(&self.store, no, self.cfg.sync_per_write)?);
                self.mem.write().active_log = no;
            }
            let (full, queued) = {
                let m = self.mem.read();
                (m.mutable.approx_bytes() >= self.cfg.memtable_bytes, m.immutables.len())
            };
            if !full {
                return Ok(());
            }
            if queued >= self.cfg.immutable_queue_cap {
                if self.cfg.background_compaction {
                    if self.store.is_crashed() {
                        return Err(Error::Background(self.bg_error.lock().clone().unwrap_or_default()));
                    }
                    self.wake_worker();
                    let mut g = self.space.0.lock();
                    self.space.1.wait_for(&mut g, Duration::from_millis(10));
                } else {
                    let mut bg = self.bg.lock();
                    self.minor(&mut bg)?;
                }
                continue;
            }
            self.seal(w)?;
        }
    }

    /// Moves the mutable memtable to the immutable queue. Its log is synced
    /// first; if that fails nothing changes.
    fn seal(&self, w: &mut Writer) -> Result<()> {
        let Some(wal) = w.wal.as_mut() else {
            return Ok(());
        };
        wal.seal_and_sync()?;
        let old = w.wal.take().unwrap().number();
        let new_no = self.alloc();
        {
            let mut m = self.mem.write();
            let mut table = std::mem::take(&mut m.mutable);
            table.seal();
            let last_seq = self.visible_seq.load(Ordering::Acquire);
            m.immutables.push_back(Arc::new(SealedMem { table, log_number: old, last_seq }));
            m.active_log = new_no;
        }
        self.wake_worker();
        w.wal = Some(WalWriter::create(&self.store, new_no, self.cfg.sync_per_write)?);
        Ok(())
    }

    fn flush(&self) -> Result<()> {
        {
            let mut w = self.writer.lock();
            if w.failed.is_none() && !self.mem.read().mutable.is_empty() {
                self.seal(&mut w)?;
            }
        }
        let mut bg = self.bg.lock();
        while self.minor(&mut bg)? {}
        Ok(())
    }

    fn get_at(&self, key: &[u8], seq: SeqNo) -> Result<Option<Vec<u8>>> {
        {
            let m = self.mem.read();
            if let Some(r) = m.mutable.get(key, seq) {
                return Ok(visible_value(r));
            }
            for imm in m.immutables.iter().rev() {
                if let Some(r) = imm.table.get(key, seq) {
                    return Ok(visible_value(r));
                }
            }
        }
        // Loaded after the memtables: a memtable leaves the queue only once
        // the version holding its table is published.
        let v = self.current_version();
        for level in 0..=v.max_level() {
            for h in v.candidates_for_key(level, key) {
                if let Some(records) = self.format.get(h, key)? {
                    if let Some(r) = records.iter().rev().find(|r| r.seq <= seq) {
                        return Ok(visible_value(r));
                    }
                }
            }
        }
        Ok(None)
    }

    fn scan_at(&self, lo: &[u8], hi: Option<&[u8]>, seq: SeqNo) -> Result<Vec<(Vec<u8>, Vec<u8>)>> {
        if hi.is_some_and(|hi| hi <= lo) {
            return Ok(Vec::new());
        }
        let mut best: BTreeMap<Vec<u8>, KvRecord> = BTreeMap::new();
        let mut offer = |key: &[u8], r: &KvRecord| match best.get_mut(key) {
            Some(cur) if cur.seq >= r.seq => {}
            Some(cur) => *cur = r.clone(),
            None => {
                best.insert(key.to_vec(), r.clone());
            }
        };
        {
            let m = self.mem.read();
            for (k, r) in m.mutable.range(lo, hi, seq) {
                offer(k, r);
            }
            for imm in &m.immutables {
                for (k, r) in imm.table.range(lo, hi, seq) {
                    offer(k, r);
                }
            }
        }
        let v = self.current_version();
        for level in v.candidates_for_range(lo, hi) {
            for h in level {
                for (k, records) in self.format.scan(h, lo, hi)? {
                    if let Some(r) = records.iter().rev().find(|r| r.seq <= seq) {
                        offer(&k, r);
                    }
                }
            }
        }
        Ok(best.into_iter().filter(|(_, r)| !r.is_delete()).map(|(k, r)| (k, r.value)).collect())
    }

    /// Appends `edit` to the manifest and publishes the resulting version.
    /// On failure the published version is unchanged.
    fn commit(&self, mut edit: ManifestEdit) -> Result<Arc<Version>> {
        let mut manifest = self.manifest.lock();
        let cur = self.current_version();
        edit.last_seq = Some(edit.last_seq.unwrap_or(0).max(cur.last_seq));
        edit.next_file_number = Some(self.next_file.load(Ordering::SeqCst));
        let next = Arc::new(cur.apply(&edit)?);
        if manifest.needs_roll() {
            let no = self.alloc();
            *manifest = ManifestLog::install(&self.store, no, &next)?;
            if let Err(e) = remove_stale_manifests(&self.store, no) {
                log::warn!("could not remove old manifests: {e}");
            }
        } else {
            manifest.append(&edit)?;
        }
        let old = std::mem::replace(&mut *self.version.write(), next.clone());
        self.superseded.lock().push_back((old, edit.removed.clone()));
        Ok(next)
    }

    /// Commits `edit`; if that fails, the tables it would have added are
    /// removed again on a best-effort basis (recovery removes any leftovers).
    fn commit_or_discard(&self, edit: ManifestEdit) -> Result<Arc<Version>> {
        let added: Vec<SstDirId> = edit.added.iter().map(|h| h.id).collect();
        self.commit(edit).inspect_err(|_| {
            for id in added {
                let _ = self.format.remove(id);
            }
        })
    }

    fn step(&self, bg: &mut BgState) -> Result<StepOutcome> {
        if self.minor(bg)? {
            return Ok(StepOutcome::Minor);
        }
        let v = self.current_version();
        if let Some(mut job) = v.pick_compaction(&self.limits(), &bg.cursors) {
            job.snapshot_floor = self.snapshot_floor();
            let stats = self.run_major(bg, &v, job)?;
            return Ok(StepOutcome::Major(stats));
        }
        self.housekeeping(bg)?;
        Ok(StepOutcome::Idle)
    }

    /// Writes the oldest queued memtable to a new L0 table. Returns false
    /// when the queue is empty.
    fn minor(&self, bg: &mut BgState) -> Result<bool> {
        let (sealed, next_log) = {
            let m = self.mem.read();
            let Some(front) = m.immutables.front().cloned() else {
                return Ok(false);
            };
            (front, m.immutables.get(1).map_or(m.active_log, |s| s.log_number))
        };
        let mut edit = ManifestEdit { last_seq: Some(sealed.last_seq), log_number: Some(next_log), ..Default::default() };
        let entries = minor_entries(&sealed.table, self.snapshot_floor());
        if !entries.is_empty() {
            let id = SstDirId::new(0, self.alloc());
            if let Some(h) = self.format.write_table(id, &entries)? {
                edit.added.push(h);
            }
        }
        self.commit_or_discard(edit)?;
        {
            let mut m = self.mem.write();
            let popped = m.immutables.pop_front();
            debug_assert!(popped.is_some_and(|p| Arc::ptr_eq(&p, &sealed)));
        }
        self.space.1.notify_all();
        bg.retire.schedule(sealed.log_number, Instant::now(), self.cfg.wal_grace);
        self.stats.lock().minor_compactions += 1;
        Ok(true)
    }

    fn run_major(&self, bg: &mut BgState, v: &Version, job: CompactionJob) -> Result<CompactionStats> {
        let alloc = || self.alloc();
        let out = self.format.compact(&job, v, &alloc)?;
        let edit = ManifestEdit {
            added: out.added,
            removed: job.inputs().map(|h| h.id).collect(),
            ..Default::default()
        };
        self.commit_or_discard(edit)?;
        if job.level > 0 && !job.inputs_upper.is_empty() {
            bg.cursors[job.level as usize] = job.inputs_upper.iter().map(|h| h.largest.clone()).max();
        }
        {
            let mut s = self.stats.lock();
            s.major_compactions += 1;
            let t = &mut s.major_totals;
            t.keys_in += out.stats.keys_in;
            t.linked += out.stats.linked;
            t.rewritten += out.stats.rewritten;
            t.dropped += out.stats.dropped;
            t.payload_bytes += out.stats.payload_bytes;
            t.meta_bytes += out.stats.meta_bytes;
        }
        self.purge_obsolete()?;
        Ok(out.stats)
    }

    fn housekeeping(&self, bg: &mut BgState) -> Result<()> {
        bg.retire.retire_due(&self.store, Instant::now())?;
        self.purge_obsolete()
    }

    /// Deletes tables removed by past commits once no reader can still see
    /// them.
    fn purge_obsolete(&self) -> Result<()> {
        let mut q = self.superseded.lock();
        while q.front().is_some_and(|(v, _)| Arc::strong_count(v) == 1) {
            let (v, mut ids) = q.pop_front().unwrap();
            while let Some(id) = ids.pop() {
                if let Err(e) = self.format.remove(id) {
                    ids.push(id);
                    q.push_front((v, ids));
                    return Err(e);
                }
            }
        }
        Ok(())
    }
}
