//! Write-ahead log record codec.
//!
//! ```text
//! crc32c: u32 | payload_len: u32 | payload
//! payload = seq: u64 | op: u8 | key_len: u32 | key | value_len: u32 | value
//! ```
//!
//! The CRC covers the payload only. All integers are little-endian.

use alloc::vec::Vec;

use crate::checksum::crc32c;
use crate::record::{OpCode, SeqNo};

pub const WAL_FRAME_HEADER: usize = 8;
const PAYLOAD_FIXED: usize = 8 + 1 + 4 + 4;

/// One logged write.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WalEntry {
    pub seq: SeqNo,
    pub op: OpCode,
    pub key: Vec<u8>,
    pub value: Vec<u8>,
}

/// Encoded size of a record for the given key and value lengths.
pub fn wal_record_len(key_len: usize, value_len: usize) -> usize {
    WAL_FRAME_HEADER + PAYLOAD_FIXED + key_len + value_len
}

pub fn encode_wal_record(seq: SeqNo, op: OpCode, key: &[u8], value: &[u8]) -> Vec<u8> {
    let payload_len = PAYLOAD_FIXED + key.len() + value.len();
    let mut out = Vec::with_capacity(WAL_FRAME_HEADER + payload_len);
    out.extend_from_slice(&[0; 4]);
    out.extend_from_slice(&(payload_len as u32).to_le_bytes());
    out.extend_from_slice(&seq.to_le_bytes());
    out.push(op as u8);
    out.extend_from_slice(&(key.len() as u32).to_le_bytes());
    out.extend_from_slice(key);
    out.extend_from_slice(&(value.len() as u32).to_le_bytes());
    out.extend_from_slice(value);
    let crc = crc32c(&out[WAL_FRAME_HEADER..]);
    out[..4].copy_from_slice(&crc.to_le_bytes());
    out
}

fn decode_payload(p: &[u8]) -> Option<WalEntry> {
    if p.len() < PAYLOAD_FIXED {
        return None;
    }
    let seq = u64::from_le_bytes(p[0..8].try_into().ok()?);
    let op = OpCode::from_byte(p[8])?;
    let key_len = u32::from_le_bytes(p[9..13].try_into().ok()?) as usize;
    let key_end = 13usize.checked_add(key_len)?;
    let vlen_end = key_end.checked_add(4)?;
    if p.len() < vlen_end {
        return None;
    }
    let value_len = u32::from_le_bytes(p[key_end..vlen_end].try_into().ok()?) as usize;
    if p.len() != vlen_end.checked_add(value_len)? {
        return None;
    }
    Some(WalEntry { seq, op, key: p[13..key_end].to_vec(), value: p[vlen_end..].to_vec() })
}

/// Decodes the longest valid prefix of a log. A torn or corrupt record
/// ends the log; nothing after it is returned. The second element is the
/// byte length of the valid prefix.
pub fn decode_wal(buf: &[u8]) -> (Vec<WalEntry>, usize) {
    let mut entries = Vec::new();
    let mut offset = 0;
    while buf.len() - offset >= WAL_FRAME_HEADER {
        let crc = u32::from_le_bytes(buf[offset..offset + 4].try_into().unwrap());
        let len = u32::from_le_bytes(buf[offset + 4..offset + 8].try_into().unwrap()) as usize;
        let start = offset + WAL_FRAME_HEADER;
        let Some(end) = start.checked_add(len).filter(|&e| e <= buf.len()) else {
            break;
        };
        let payload = &buf[start..end];
        if crc32c(payload) != crc {
            break;
        }
        match decode_payload(payload) {
            Some(e) => entries.push(e),
            None => break,
        }
        offset = end;
    }
    (entries, offset)
}
