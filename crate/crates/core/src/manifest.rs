//! Manifest edit codec.
//!
//! A manifest is a sequence of frames `crc32c: u32 | len: u32 | payload`,
//! the CRC covering the payload. A payload is a list of tagged fields:
//!
//! | tag | body                                                                  |
//! |-----|-----------------------------------------------------------------------|
//! | 1   | last_seq: u64                                                         |
//! | 2   | next_file_number: u64                                                 |
//! | 3   | log_number: u64                                                       |
//! | 4   | added dir: level u8, dir_no u64, entry_count u32, smallest, largest   |
//! | 5   | removed dir: level u8, dir_no u64                                     |
//!
//! Keys are `len: u32 | bytes`; integers are little-endian.

use alloc::vec::Vec;

use crate::checksum::crc32c;
use crate::meta::{put_bytes, MetaError, Reader};
use crate::record::SeqNo;
use crate::version::{SstDirHandle, SstDirId};

const TAG_LAST_SEQ: u8 = 1;
const TAG_NEXT_FILE: u8 = 2;
const TAG_LOG_NUMBER: u8 = 3;
const TAG_ADD_DIR: u8 = 4;
const TAG_REMOVE_DIR: u8 = 5;

/// One atomic change to the version.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ManifestEdit {
    pub last_seq: Option<SeqNo>,
    pub next_file_number: Option<u64>,
    pub log_number: Option<u64>,
    pub added: Vec<SstDirHandle>,
    pub removed: Vec<SstDirId>,
}

impl ManifestEdit {
    pub fn encode_payload(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for (tag, v) in [
            (TAG_LAST_SEQ, self.last_seq),
            (TAG_NEXT_FILE, self.next_file_number),
            (TAG_LOG_NUMBER, self.log_number),
        ] {
            if let Some(v) = v {
                out.push(tag);
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        for id in &self.removed {
            out.push(TAG_REMOVE_DIR);
            out.push(id.level);
            out.extend_from_slice(&id.dir_no.to_le_bytes());
        }
        for h in &self.added {
            out.push(TAG_ADD_DIR);
            out.push(h.id.level);
            out.extend_from_slice(&h.id.dir_no.to_le_bytes());
            out.extend_from_slice(&(h.entry_count.min(u32::MAX as u64) as u32).to_le_bytes());
            put_bytes(&mut out, &h.smallest);
            put_bytes(&mut out, &h.largest);
        }
        out
    }

    /// Full frame ready to append to a manifest file.
    pub fn encode_frame(&self) -> Vec<u8> {
        let payload = self.encode_payload();
        let mut out = Vec::with_capacity(payload.len() + 8);
        out.extend_from_slice(&crc32c(&payload).to_le_bytes());
        out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
        out.extend_from_slice(&payload);
        out
    }

    pub fn decode_payload(payload: &[u8]) -> Result<ManifestEdit, MetaError> {
        let mut r = Reader { buf: payload, pos: 0 };
        let mut edit = ManifestEdit::default();
        while !r.is_empty() {
            match r.u8()? {
                TAG_LAST_SEQ => edit.last_seq = Some(r.u64()?),
                TAG_NEXT_FILE => edit.next_file_number = Some(r.u64()?),
                TAG_LOG_NUMBER => edit.log_number = Some(r.u64()?),
                TAG_ADD_DIR => {
                    let level = r.u8()?;
                    let dir_no = r.u64()?;
                    let entry_count = r.u32()? as u64;
                    let smallest = r.bytes()?.to_vec();
                    let largest = r.bytes()?.to_vec();
                    edit.added.push(SstDirHandle { id: SstDirId { level, dir_no }, smallest, largest, entry_count });
                }
                TAG_REMOVE_DIR => {
                    let level = r.u8()?;
                    let dir_no = r.u64()?;
                    edit.removed.push(SstDirId { level, dir_no });
                }
                _ => return Err(MetaError::Inconsistent),
            }
        }
        Ok(edit)
    }
}

/// Result of reading a manifest file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecodedManifest {
    pub edits: Vec<ManifestEdit>,
    /// Byte length of the valid prefix.
    pub valid_len: usize,
    /// A bad or torn frame was found at `valid_len`.
    pub corrupt_tail: bool,
}

pub fn decode_manifest(buf: &[u8]) -> DecodedManifest {
    let mut edits = Vec::new();
    let mut offset = 0;
    while offset < buf.len() {
        let Some(edit) = decode_frame(&buf[offset..]) else {
            return DecodedManifest { edits, valid_len: offset, corrupt_tail: true };
        };
        edits.push(edit.0);
        offset += edit.1;
    }
    DecodedManifest { edits, valid_len: offset, corrupt_tail: false }
}

fn decode_frame(buf: &[u8]) -> Option<(ManifestEdit, usize)> {
    if buf.len() < 8 {
        return None;
    }
    let crc = u32::from_le_bytes(buf[..4].try_into().ok()?);
    let len = u32::from_le_bytes(buf[4..8].try_into().ok()?) as usize;
    let end = 8usize.checked_add(len).filter(|&e| e <= buf.len())?;
    let payload = &buf[8..end];
    if crc32c(payload) != crc {
        return None;
    }
    Some((ManifestEdit::decode_payload(payload).ok()?, end))
}
