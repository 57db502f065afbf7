//! The manifest file and `CURRENT` pointer.
//!
//! `CURRENT` holds the name of the live manifest followed by a newline.
//! A manifest starts with a snapshot edit describing the full version and
//! continues with incremental edits; a new one is installed at every open.

use dentrykv_core::{decode_manifest, ManifestEdit, Version};

use crate::error::{Error, Result};
use crate::storage::{AppendFile, StorageError, Store};

pub const CURRENT: &str = "CURRENT";
const CURRENT_TMP: &str = "CURRENT.tmp";

/// A manifest this large is replaced by a fresh snapshot at the next commit.
pub const MANIFEST_ROLL_BYTES: u64 = 4 << 20;

pub fn manifest_file_name(number: u64) -> String {
    format!("MANIFEST-{number:06}")
}

pub fn parse_manifest_file_name(name: &str) -> Option<u64> {
    let digits = name.strip_prefix("MANIFEST-")?;
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    digits.parse().ok()
}

/// Manifest number named by `CURRENT`, or `None` for a fresh database.
pub fn read_current(store: &Store) -> Result<Option<u64>> {
    let Some(bytes) = store.read_file_opt(CURRENT)? else {
        return Ok(None);
    };
    let text = std::str::from_utf8(&bytes).map_err(|_| Error::corruption("CURRENT is not UTF-8"))?;
    let name = text.strip_suffix('\n').ok_or_else(|| Error::corruption("CURRENT lacks a newline"))?;
    parse_manifest_file_name(name)
        .map(Some)
        .ok_or_else(|| Error::corruption(format!("CURRENT names {name:?}")))
}

/// Result of replaying one manifest.
#[derive(Debug)]
pub struct Replayed {
    pub version: Version,
    pub edits_applied: usize,
    /// Bytes after the last applied edit were ignored.
    pub truncated: bool,
}

/// Rebuilds the version from a manifest. Replay stops at the first frame
/// that fails its checksum or cannot be applied; the prefix is the truth.
pub fn replay_manifest(store: &Store, number: u64, max_level: u8) -> Result<Replayed> {
    let name = manifest_file_name(number);
    let bytes = match store.read_file(&name) {
        Err(StorageError::NotFound(_)) => return Err(Error::corruption(format!("{name} named by CURRENT is missing"))),
        r => r?,
    };
    let decoded = decode_manifest(&bytes);
    let mut version = Version::new(max_level);
    let mut edits_applied = 0;
    let mut truncated = decoded.corrupt_tail;
    for edit in &decoded.edits {
        match version.apply(edit) {
            Ok(v) => {
                version = v;
                edits_applied += 1;
            }
            Err(e) => {
                log::warn!("{name}: edit {edits_applied} rejected ({e}); ignoring the rest");
                truncated = true;
                break;
            }
        }
    }
    Ok(Replayed { version, edits_applied, truncated })
}

/// The live manifest, open for appends.
pub struct ManifestLog {
    number: u64,
    file: AppendFile,
    bytes: u64,
    /// A failed append may have left a torn frame; the next commit must go
    /// to a fresh manifest.
    needs_roll: bool,
}

impl ManifestLog {
    /// Writes a new manifest holding `version` and points `CURRENT` at it.
    pub fn install(store: &Store, number: u64, version: &Version) -> Result<ManifestLog> {
        let name = manifest_file_name(number);
        let mut file = store.create_append(&name)?;
        let frame = version.snapshot_edit().encode_frame();
        file.append(&frame)?;
        file.sync()?;
        if store.exists(CURRENT_TMP) {
            store.remove_file(CURRENT_TMP)?;
        }
        store.write_new_file(CURRENT_TMP, format!("{name}\n").as_bytes())?;
        store.sync_file(CURRENT_TMP)?;
        store.rename(CURRENT_TMP, CURRENT)?;
        store.sync_dir("")?;
        Ok(ManifestLog { number, file, bytes: frame.len() as u64, needs_roll: false })
    }

    pub fn number(&self) -> u64 {
        self.number
    }

    pub fn size(&self) -> u64 {
        self.bytes
    }

    /// True after a failed append or once the file has grown past
    /// [`MANIFEST_ROLL_BYTES`].
    pub fn needs_roll(&self) -> bool {
        self.needs_roll || self.bytes >= MANIFEST_ROLL_BYTES
    }

    /// Appends and syncs one edit. On failure the manifest is marked for
    /// replacement and the caller must not apply the edit.
    pub fn append(&mut self, edit: &ManifestEdit) -> Result<()> {
        let frame = edit.encode_frame();
        let res = self.file.append(&frame).and_then(|()| self.file.sync());
        match res {
            Ok(()) => {
                self.bytes += frame.len() as u64;
                Ok(())
            }
            Err(e) => {
                self.needs_roll = true;
                Err(e.into())
            }
        }
    }
}

/// Removes manifests other than `keep` and any leftover `CURRENT.tmp`.
pub fn remove_stale_manifests(store: &Store, keep: u64) -> Result<()> {
    for name in store.list_dir("")? {
        let stale = match parse_manifest_file_name(&name) {
            Some(n) => n != keep,
            None => name == CURRENT_TMP,
        };
        if stale {
            store.remove_file(&name)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use dentrykv_core::{SstDirHandle, SstDirId};

    fn store() -> (tempfile::TempDir, Store) {
        let d = tempfile::tempdir().unwrap();
        let s = Store::open_root(d.path(), true).unwrap();
        (d, s)
    }

    fn add(level: u8, no: u64, lo: &str, hi: &str) -> ManifestEdit {
        ManifestEdit {
            added: vec![SstDirHandle { id: SstDirId::new(level, no), smallest: lo.into(), largest: hi.into(), entry_count: 3 }],
            last_seq: Some(no * 10),
            ..Default::default()
        }
    }

    #[test]
    fn names() {
        assert_eq!(manifest_file_name(4), "MANIFEST-000004");
        assert_eq!(parse_manifest_file_name("MANIFEST-000004"), Some(4));
        assert_eq!(parse_manifest_file_name("MANIFEST-"), None);
    }

    #[test]
    fn fresh_store_has_no_current() {
        let (_d, s) = store();
        assert_eq!(read_current(&s).unwrap(), None);
    }

    #[test]
    fn install_append_replay() {
        let (_d, s) = store();
        let v0 = Version::new(6);
        let mut m = ManifestLog::install(&s, 2, &v0).unwrap();
        assert_eq!(read_current(&s).unwrap(), Some(2));
        assert_eq!(s.read_file(CURRENT).unwrap(), b"MANIFEST-000002\n");
        let e1 = add(0, 5, "a", "c");
        let e2 = add(1, 6, "d", "f");
        m.append(&e1).unwrap();
        m.append(&e2).unwrap();
        let expected = v0.apply(&e1).unwrap().apply(&e2).unwrap();
        let r = replay_manifest(&s, 2, 6).unwrap();
        assert_eq!(r.version, expected);
        assert_eq!(r.edits_applied, 3);
        assert!(!r.truncated);
    }

    #[test]
    fn large_manifest_asks_for_roll() {
        let (_d, s) = store();
        let mut m = ManifestLog::install(&s, 1, &Version::new(6)).unwrap();
        let long = "k".repeat(250);
        let edit = ManifestEdit {
            added: (0..9_000).map(|no| SstDirHandle { id: SstDirId::new(1, no), smallest: long.clone().into(), largest: long.clone().into(), entry_count: 1 }).collect(),
            ..Default::default()
        };
        m.append(&edit).unwrap();
        assert!(m.size() >= MANIFEST_ROLL_BYTES);
        assert!(m.needs_roll());
    }

    #[test]
    fn failed_sync_marks_roll() {
        let (_d, s) = store();
        let mut m = ManifestLog::install(&s, 1, &Version::new(6)).unwrap();
        s.fail_next_sync("MANIFEST");
        assert!(m.append(&add(0, 5, "a", "b")).is_err());
        assert!(m.needs_roll());
    }

    #[test]
    fn torn_tail_is_ignored() {
        let (_d, s) = store();
        let mut m = ManifestLog::install(&s, 1, &Version::new(6)).unwrap();
        m.append(&add(0, 5, "a", "b")).unwrap();
        s.crash_after(0);
        assert!(m.append(&add(0, 6, "c", "d")).is_err());
        let s2 = Store::open_root(s.root(), true).unwrap();
        let r = replay_manifest(&s2, 1, 6).unwrap();
        assert!(r.truncated);
        assert_eq!(r.version.level(0).len(), 1);
    }

    #[test]
    fn inapplicable_edit_stops_replay() {
        let (_d, s) = store();
        let mut m = ManifestLog::install(&s, 1, &Version::new(6)).unwrap();
        m.append(&add(1, 5, "a", "m")).unwrap();
        m.append(&add(1, 6, "c", "z")).unwrap(); // overlaps in L1
        m.append(&add(1, 7, "x", "y")).unwrap();
        let r = replay_manifest(&s, 1, 6).unwrap();
        assert!(r.truncated);
        assert_eq!(r.edits_applied, 2);
    }

    #[test]
    fn stale_manifests_removed() {
        let (_d, s) = store();
        ManifestLog::install(&s, 1, &Version::new(6)).unwrap();
        ManifestLog::install(&s, 3, &Version::new(6)).unwrap();
        s.write_new_file("CURRENT.tmp", b"junk").unwrap();
        remove_stale_manifests(&s, 3).unwrap();
        let mut names = s.list_dir("").unwrap();
        names.sort();
        assert_eq!(names, ["CURRENT", "MANIFEST-000003"]);
    }
}
