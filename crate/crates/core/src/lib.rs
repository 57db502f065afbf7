//! Core data model of dentrykv.
//!
//! Everything here is pure: key and record codecs, the `.meta` and
//! manifest wire formats, the directory Bloom filter, the memtable and the
//! version catalog with its compaction-picking rules. The crate is
//! `no_std` and needs only `alloc`; all file handling lives in the
//! `dentrykv` crate.

#![no_std]

extern crate alloc;

pub mod bloom;
pub mod checksum;
pub mod key;
pub mod manifest;
pub mod memtable;
pub mod merge;
pub mod meta;
pub mod record;
pub mod version;
pub mod wal_record;

pub use bloom::BloomFilter;
pub use key::{compare_keys, decode_key, encode_key, validate_key, KeyError};
pub use manifest::{decode_manifest, DecodedManifest, ManifestEdit};
pub use memtable::{Memtable, MemtableError};
pub use meta::{MetaError, SstDirMeta};
pub use record::{decode_records, encode_record, encode_records, CorruptRecords, KvRecord, OpCode, RecordHeader, SeqNo};
pub use version::{CompactionJob, CompactionLimits, SstDirHandle, SstDirId, Version, VersionError};
pub use wal_record::{decode_wal, encode_wal_record, WalEntry};
