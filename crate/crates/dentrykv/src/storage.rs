//! Instrumented storage layer.
//!
//! Every file and directory operation of the engine goes through [`Store`],
//! which confines paths to the database root, counts bytes and calls for
//! write-amplification reporting, and can inject faults. Paths are given
//! relative to the root with `/` separators; `""` names the root itself.

use std::fs::{self, File, OpenOptions};
use std::io::{self, ErrorKind, Read, Seek, SeekFrom, Write};
use std::path::{Component, Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;

use parking_lot::Mutex;

/// Linux `EXDEV`.
const EXDEV: i32 = 18;

#[derive(Debug, thiserror::Error)]
pub enum StorageError {
    #[error("{0}: not a directory")]
    NotADirectory(PathBuf),
    #[error("{0}: permission denied")]
    PermissionDenied(PathBuf),
    #[error("path {0:?} escapes the database root")]
    PathEscape(String),
    #[error("{0}: no such file")]
    NotFound(String),
    #[error("{0}: already exists")]
    AlreadyExists(String),
    #[error("link source {0} is missing")]
    SrcMissing(String),
    #[error("link destination {0} already exists")]
    DstExists(String),
    #[error("cannot link {0} across filesystems")]
    CrossDevice(String),
    #[error("{0}: no such directory")]
    DirMissing(String),
    #[error("sync of {path} failed: {source}")]
    SyncFailed { path: String, source: io::Error },
    #[error("simulated crash: storage is no longer writable")]
    Crashed,
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
}

impl StorageError {
    fn io(path: &str, source: io::Error) -> StorageError {
        StorageError::Io { path: path.to_string(), source }
    }
}

pub type Result<T> = std::result::Result<T, StorageError>;

/// Byte and call counters at the storage boundary.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct IoCounters {
    /// Payload bytes handed to file writes and appends.
    pub data_bytes_written: u64,
    pub files_created: u64,
    pub links_created: u64,
    /// Files unlinked.
    pub entries_removed: u64,
    pub dirs_created: u64,
    pub dirs_removed: u64,
    pub syncs: u64,
    pub renames: u64,
    pub bytes_read: u64,
    /// Open attempts for reading, including ones that found no file.
    pub file_opens: u64,
}

impl IoCounters {
    /// Field-wise `self - earlier`.
    pub fn since(&self, earlier: &IoCounters) -> IoCounters {
        IoCounters {
            data_bytes_written: self.data_bytes_written - earlier.data_bytes_written,
            files_created: self.files_created - earlier.files_created,
            links_created: self.links_created - earlier.links_created,
            entries_removed: self.entries_removed - earlier.entries_removed,
            dirs_created: self.dirs_created - earlier.dirs_created,
            dirs_removed: self.dirs_removed - earlier.dirs_removed,
            syncs: self.syncs - earlier.syncs,
            renames: self.renames - earlier.renames,
            bytes_read: self.bytes_read - earlier.bytes_read,
            file_opens: self.file_opens - earlier.file_opens,
        }
    }
}

#[derive(Default)]
struct AtomicCounters {
    data_bytes_written: AtomicU64,
    files_created: AtomicU64,
    links_created: AtomicU64,
    entries_removed: AtomicU64,
    dirs_created: AtomicU64,
    dirs_removed: AtomicU64,
    syncs: AtomicU64,
    renames: AtomicU64,
    bytes_read: AtomicU64,
    file_opens: AtomicU64,
}

fn bump(c: &AtomicU64, n: u64) {
    c.fetch_add(n, Ordering::Relaxed);
}

impl AtomicCounters {
    fn snapshot(&self) -> IoCounters {
        let l = |c: &AtomicU64| c.load(Ordering::Relaxed);
        IoCounters {
            data_bytes_written: l(&self.data_bytes_written),
            files_created: l(&self.files_created),
            links_created: l(&self.links_created),
            entries_removed: l(&self.entries_removed),
            dirs_created: l(&self.dirs_created),
            dirs_removed: l(&self.dirs_removed),
            syncs: l(&self.syncs),
            renames: l(&self.renames),
            bytes_read: l(&self.bytes_read),
            file_opens: l(&self.file_opens),
        }
    }

    fn reset(&self) {
        for c in [
            &self.data_bytes_written,
            &self.files_created,
            &self.links_created,
            &self.entries_removed,
            &self.dirs_created,
            &self.dirs_removed,
            &self.syncs,
            &self.renames,
            &self.bytes_read,
            &self.file_opens,
        ] {
            c.store(0, Ordering::Relaxed);
        }
    }
}

#[derive(Default)]
struct Faults {
    /// Mutations still allowed before the simulated crash.
    crash_budget: Option<u64>,
    /// One-shot sync failure for paths containing this string.
    fail_sync: Option<String>,
}

struct StoreInner {
    root: PathBuf,
    sync_enabled: bool,
    counters: AtomicCounters,
    mutations: AtomicU64,
    crashed: AtomicBool,
    faults: Mutex<Faults>,
    trace: Mutex<Option<Vec<PathBuf>>>,
}

/// Handle to a database root directory. Cloning is cheap and clones share
/// counters and fault state.
#[derive(Clone)]
pub struct Store {
    inner: Arc<StoreInner>,
}

enum Gate {
    Proceed,
    /// This mutation trips the crash; appends write a torn prefix first.
    Trip,
}

impl Store {
    /// Opens (creating if needed) the directory at `path`.
    pub fn open_root(path: impl AsRef<Path>, sync_enabled: bool) -> Result<Store> {
        let path = path.as_ref();
        match fs::metadata(path) {
            Ok(m) if !m.is_dir() => return Err(StorageError::NotADirectory(path.to_path_buf())),
            Ok(_) => {}
            Err(e) if e.kind() == ErrorKind::NotFound => fs::create_dir_all(path).map_err(|e| map_root_err(path, e))?,
            Err(e) => return Err(map_root_err(path, e)),
        }
        let root = fs::canonicalize(path).map_err(|e| map_root_err(path, e))?;
        Ok(Store {
            inner: Arc::new(StoreInner {
                root,
                sync_enabled,
                counters: AtomicCounters::default(),
                mutations: AtomicU64::new(0),
                crashed: AtomicBool::new(false),
                faults: Mutex::new(Faults::default()),
                trace: Mutex::new(None),
            }),
        })
    }

    pub fn root(&self) -> &Path {
        &self.inner.root
    }

    pub fn sync_enabled(&self) -> bool {
        self.inner.sync_enabled
    }

    pub fn counters_snapshot(&self) -> IoCounters {
        self.inner.counters.snapshot()
    }

    pub fn reset_counters(&self) {
        self.inner.counters.reset();
    }

    /// Lets `n` more mutating calls succeed; every later one fails with
    /// [`StorageError::Crashed`], as if the process had been killed. Data
    /// already handed to the OS stays. An append that trips the crash
    /// persists only the first half of its bytes.
    pub fn crash_after(&self, n: u64) {
        self.inner.faults.lock().crash_budget = Some(n);
    }

    pub fn is_crashed(&self) -> bool {
        self.inner.crashed.load(Ordering::SeqCst)
    }

    /// Fails the next sync of a path containing `pattern`.
    pub fn fail_next_sync(&self, pattern: &str) {
        self.inner.faults.lock().fail_sync = Some(pattern.to_string());
    }

    /// Number of mutating calls issued so far (successful or not).
    pub fn mutation_count(&self) -> u64 {
        self.inner.mutations.load(Ordering::SeqCst)
    }

    /// Starts recording every absolute path the store touches.
    pub fn enable_trace(&self) {
        *self.inner.trace.lock() = Some(Vec::new());
    }

    pub fn take_trace(&self) -> Vec<PathBuf> {
        self.inner.trace.lock().as_mut().map(std::mem::take).unwrap_or_default()
    }

    fn resolve(&self, rel: &str) -> Result<PathBuf> {
        let p = Path::new(rel);
        if !p.components().all(|c| matches!(c, Component::Normal(_))) {
            return Err(StorageError::PathEscape(rel.to_string()));
        }
        let full = self.inner.root.join(p);
        if let Some(trace) = self.inner.trace.lock().as_mut() {
            trace.push(full.clone());
        }
        Ok(full)
    }

    fn gate(&self) -> Result<Gate> {
        self.inner.mutations.fetch_add(1, Ordering::SeqCst);
        if self.is_crashed() {
            return Err(StorageError::Crashed);
        }
        let mut faults = self.inner.faults.lock();
        match faults.crash_budget.as_mut() {
            Some(0) => {
                faults.crash_budget = None;
                self.inner.crashed.store(true, Ordering::SeqCst);
                Ok(Gate::Trip)
            }
            Some(n) => {
                *n -= 1;
                Ok(Gate::Proceed)
            }
            None => Ok(Gate::Proceed),
        }
    }

    fn gate_strict(&self) -> Result<()> {
        match self.gate()? {
            Gate::Proceed => Ok(()),
            Gate::Trip => Err(StorageError::Crashed),
        }
    }

    pub fn exists(&self, rel: &str) -> bool {
        self.resolve(rel).map(|p| p.exists()).unwrap_or(false)
    }

    pub fn is_dir(&self, rel: &str) -> bool {
        self.resolve(rel).map(|p| p.is_dir()).unwrap_or(false)
    }

    pub fn create_dir(&self, rel: &str) -> Result<()> {
        let path = self.resolve(rel)?;
        self.gate_strict()?;
        fs::create_dir(&path).map_err(|e| match e.kind() {
            ErrorKind::AlreadyExists => StorageError::AlreadyExists(rel.to_string()),
            _ => StorageError::io(rel, e),
        })?;
        bump(&self.inner.counters.dirs_created, 1);
        Ok(())
    }

    /// Removes an empty directory.
    pub fn remove_dir(&self, rel: &str) -> Result<()> {
        let path = self.resolve(rel)?;
        self.gate_strict()?;
        fs::remove_dir(&path).map_err(|e| match e.kind() {
            ErrorKind::NotFound => StorageError::DirMissing(rel.to_string()),
            _ => StorageError::io(rel, e),
        })?;
        bump(&self.inner.counters.dirs_removed, 1);
        Ok(())
    }

    /// Creates `rel` exclusively and writes `data` into it.
    pub fn write_new_file(&self, rel: &str, data: &[u8]) -> Result<()> {
        let path = self.resolve(rel)?;
        let gate = self.gate()?;
        let mut f = OpenOptions::new().write(true).create_new(true).open(&path).map_err(|e| match e.kind() {
            ErrorKind::AlreadyExists => StorageError::AlreadyExists(rel.to_string()),
            _ => StorageError::io(rel, e),
        })?;
        bump(&self.inner.counters.files_created, 1);
        let data = match gate {
            Gate::Proceed => data,
            Gate::Trip => &data[..data.len() / 2],
        };
        f.write_all(data).map_err(|e| StorageError::io(rel, e))?;
        bump(&self.inner.counters.data_bytes_written, data.len() as u64);
        match gate {
            Gate::Proceed => Ok(()),
            Gate::Trip => Err(StorageError::Crashed),
        }
    }

    /// Creates a new file for appending.
    pub fn create_append(&self, rel: &str) -> Result<AppendFile> {
        let path = self.resolve(rel)?;
        self.gate_strict()?;
        let file = OpenOptions::new().append(true).create_new(true).open(&path).map_err(|e| match e.kind() {
            ErrorKind::AlreadyExists => StorageError::AlreadyExists(rel.to_string()),
            _ => StorageError::io(rel, e),
        })?;
        bump(&self.inner.counters.files_created, 1);
        Ok(AppendFile { store: self.clone(), rel: rel.to_string(), file })
    }

    /// Makes `dst` another name for the file at `src`.
    pub fn hard_link(&self, src: &str, dst: &str) -> Result<()> {
        let src_path = self.resolve(src)?;
        let dst_path = self.resolve(dst)?;
        self.gate_strict()?;
        fs::hard_link(&src_path, &dst_path).map_err(|e| {
            if e.raw_os_error() == Some(EXDEV) {
                StorageError::CrossDevice(dst.to_string())
            } else if e.kind() == ErrorKind::AlreadyExists {
                StorageError::DstExists(dst.to_string())
            } else if e.kind() == ErrorKind::NotFound && !src_path.exists() {
                StorageError::SrcMissing(src.to_string())
            } else {
                StorageError::io(dst, e)
            }
        })?;
        bump(&self.inner.counters.links_created, 1);
        Ok(())
    }

    pub fn remove_file(&self, rel: &str) -> Result<()> {
        let path = self.resolve(rel)?;
        self.gate_strict()?;
        fs::remove_file(&path).map_err(|e| match e.kind() {
            ErrorKind::NotFound => StorageError::NotFound(rel.to_string()),
            _ => StorageError::io(rel, e),
        })?;
        bump(&self.inner.counters.entries_removed, 1);
        Ok(())
    }

    /// Atomically replaces `dst` with `src`.
    pub fn rename(&self, src: &str, dst: &str) -> Result<()> {
        let src_path = self.resolve(src)?;
        let dst_path = self.resolve(dst)?;
        self.gate_strict()?;
        fs::rename(&src_path, &dst_path).map_err(|e| match e.kind() {
            ErrorKind::NotFound => StorageError::NotFound(src.to_string()),
            _ => StorageError::io(dst, e),
        })?;
        bump(&self.inner.counters.renames, 1);
        Ok(())
    }

    /// Entry names of a directory, excluding `.` and `..`, in no
    /// particular order.
    pub fn list_dir(&self, rel: &str) -> Result<Vec<String>> {
        let path = self.resolve(rel)?;
        let rd = fs::read_dir(&path).map_err(|e| match e.kind() {
            ErrorKind::NotFound => StorageError::DirMissing(rel.to_string()),
            _ => StorageError::io(rel, e),
        })?;
        let mut names = Vec::new();
        for entry in rd {
            let entry = entry.map_err(|e| StorageError::io(rel, e))?;
            match entry.file_name().into_string() {
                Ok(name) => names.push(name),
                Err(_) => return Err(StorageError::io(rel, io::Error::other("non-UTF-8 entry name"))),
            }
        }
        Ok(names)
    }

    fn open_read(&self, rel: &str) -> Result<File> {
        let path = self.resolve(rel)?;
        bump(&self.inner.counters.file_opens, 1);
        File::open(&path).map_err(|e| match e.kind() {
            ErrorKind::NotFound => StorageError::NotFound(rel.to_string()),
            _ => StorageError::io(rel, e),
        })
    }

    pub fn read_file(&self, rel: &str) -> Result<Vec<u8>> {
        let mut f = self.open_read(rel)?;
        let mut buf = Vec::new();
        f.read_to_end(&mut buf).map_err(|e| StorageError::io(rel, e))?;
        bump(&self.inner.counters.bytes_read, buf.len() as u64);
        Ok(buf)
    }

    /// Like [`read_file`](Self::read_file) but maps a missing file to `None`.
    pub fn read_file_opt(&self, rel: &str) -> Result<Option<Vec<u8>>> {
        match self.read_file(rel) {
            Ok(b) => Ok(Some(b)),
            Err(StorageError::NotFound(_)) => Ok(None),
            Err(e) => Err(e),
        }
    }

    /// First `n` bytes (fewer if the file is shorter) and the file length.
    pub fn read_prefix(&self, rel: &str, n: usize) -> Result<(Vec<u8>, u64)> {
        let f = self.open_read(rel)?;
        let len = f.metadata().map_err(|e| StorageError::io(rel, e))?.len();
        let mut buf = Vec::with_capacity(n);
        f.take(n as u64).read_to_end(&mut buf).map_err(|e| StorageError::io(rel, e))?;
        bump(&self.inner.counters.bytes_read, buf.len() as u64);
        Ok((buf, len))
    }

    pub fn read_range(&self, rel: &str, offset: u64, len: usize) -> Result<Vec<u8>> {
        let mut f = self.open_read(rel)?;
        f.seek(SeekFrom::Start(offset)).map_err(|e| StorageError::io(rel, e))?;
        let mut buf = vec![0; len];
        f.read_exact(&mut buf).map_err(|e| StorageError::io(rel, e))?;
        bump(&self.inner.counters.bytes_read, len as u64);
        Ok(buf)
    }

    pub fn file_len(&self, rel: &str) -> Result<u64> {
        let path = self.resolve(rel)?;
        fs::metadata(&path).map(|m| m.len()).map_err(|e| match e.kind() {
            ErrorKind::NotFound => StorageError::NotFound(rel.to_string()),
            _ => StorageError::io(rel, e),
        })
    }

    fn sync_gate(&self, rel: &str) -> Result<bool> {
        if !self.inner.sync_enabled {
            return Ok(false);
        }
        self.gate_strict()?;
        let mut faults = self.inner.faults.lock();
        if faults.fail_sync.as_deref().is_some_and(|p| rel.contains(p)) {
            faults.fail_sync = None;
            return Err(StorageError::SyncFailed { path: rel.to_string(), source: io::Error::other("injected sync failure") });
        }
        Ok(true)
    }

    pub fn sync_file(&self, rel: &str) -> Result<()> {
        let path = self.resolve(rel)?;
        if !self.sync_gate(rel)? {
            return Ok(());
        }
        let f = File::open(&path).map_err(|e| StorageError::io(rel, e))?;
        f.sync_all().map_err(|source| StorageError::SyncFailed { path: rel.to_string(), source })?;
        bump(&self.inner.counters.syncs, 1);
        Ok(())
    }

    pub fn sync_dir(&self, rel: &str) -> Result<()> {
        let path = self.resolve(rel)?;
        if !self.sync_gate(rel)? {
            return Ok(());
        }
        let f = File::open(&path).map_err(|e| match e.kind() {
            ErrorKind::NotFound => StorageError::DirMissing(rel.to_string()),
            _ => StorageError::io(rel, e),
        })?;
        f.sync_all().map_err(|source| StorageError::SyncFailed { path: rel.to_string(), source })?;
        bump(&self.inner.counters.syncs, 1);
        Ok(())
    }
}

fn map_root_err(path: &Path, e: io::Error) -> StorageError {
    match e.kind() {
        ErrorKind::PermissionDenied => StorageError::PermissionDenied(path.to_path_buf()),
        ErrorKind::NotADirectory => StorageError::NotADirectory(path.to_path_buf()),
        _ => StorageError::io(&path.display().to_string(), e),
    }
}

/// A file opened for appending through a [`Store`].
pub struct AppendFile {
    store: Store,
    rel: String,
    file: File,
}

impl AppendFile {
    pub fn rel_path(&self) -> &str {
        &self.rel
    }

    pub fn append(&mut self, data: &[u8]) -> Result<()> {
        let gate = self.store.gate()?;
        let data = match gate {
            Gate::Proceed => data,
            Gate::Trip => &data[..data.len() / 2],
        };
        self.file.write_all(data).map_err(|e| StorageError::io(&self.rel, e))?;
        bump(&self.store.inner.counters.data_bytes_written, data.len() as u64);
        match gate {
            Gate::Proceed => Ok(()),
            Gate::Trip => Err(StorageError::Crashed),
        }
    }

    /// Durability barrier; a no-op when syncing is disabled.
    pub fn sync(&mut self) -> Result<()> {
        if !self.store.sync_gate(&self.rel)? {
            return Ok(());
        }
        self.file
            .sync_data()
            .map_err(|source| StorageError::SyncFailed { path: self.rel.clone(), source })?;
        bump(&self.store.inner.counters.syncs, 1);
        Ok(())
    }
}
