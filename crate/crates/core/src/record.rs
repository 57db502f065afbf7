//! KV-file records.
//!
//! A KV file holds one or more records for a single key, in strictly
//! ascending sequence order. Wire layout of one record (little-endian):
//!
//! ```text
//! seq: u64 | op: u8 | value_len: u32 | value: [u8; value_len] | crc32c: u32
//! ```
//!
//! The CRC covers every byte from `seq` through the end of `value`.

use alloc::vec::Vec;

use crate::checksum::crc32c;

/// Global write sequence number.
pub type SeqNo = u64;

/// Size of a record with an empty value.
pub const RECORD_OVERHEAD: usize = 8 + 1 + 4 + 4;
/// Bytes preceding the value: seq, op and value_len.
pub const RECORD_HEADER_LEN: usize = 8 + 1 + 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum OpCode {
    Put = 0,
    Delete = 1,
}

impl OpCode {
    pub fn from_byte(b: u8) -> Option<OpCode> {
        match b {
            0 => Some(OpCode::Put),
            1 => Some(OpCode::Delete),
            _ => None,
        }
    }
}

/// One version of a key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KvRecord {
    pub seq: SeqNo,
    pub op: OpCode,
    /// Always empty for deletes.
    pub value: Vec<u8>,
}

impl KvRecord {
    pub fn put(seq: SeqNo, value: impl Into<Vec<u8>>) -> KvRecord {
        KvRecord { seq, op: OpCode::Put, value: value.into() }
    }

    pub fn delete(seq: SeqNo) -> KvRecord {
        KvRecord { seq, op: OpCode::Delete, value: Vec::new() }
    }

    pub fn is_delete(&self) -> bool {
        self.op == OpCode::Delete
    }

    pub fn wire_len(&self) -> usize {
        RECORD_OVERHEAD + self.value.len()
    }
}

/// Sequence number and op code of a record, without its value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RecordHeader {
    pub seq: SeqNo,
    pub op: OpCode,
    pub value_len: u32,
}

/// Decoding stopped at a bad or truncated record. Everything before it
/// checked out and is returned in `valid`.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("corrupt KV file: {} valid records before byte {offset}", valid.len())]
pub struct CorruptRecords {
    pub valid: Vec<KvRecord>,
    pub offset: usize,
}

pub fn encode_record_into(out: &mut Vec<u8>, r: &KvRecord) {
    debug_assert!(r.op == OpCode::Put || r.value.is_empty());
    let start = out.len();
    out.extend_from_slice(&r.seq.to_le_bytes());
    out.push(r.op as u8);
    out.extend_from_slice(&(r.value.len() as u32).to_le_bytes());
    out.extend_from_slice(&r.value);
    let crc = crc32c(&out[start..]);
    out.extend_from_slice(&crc.to_le_bytes());
}

pub fn encode_record(r: &KvRecord) -> Vec<u8> {
    let mut out = Vec::with_capacity(r.wire_len());
    encode_record_into(&mut out, r);
    out
}

/// Encodes a full KV file body.
pub fn encode_records(records: &[KvRecord]) -> Vec<u8> {
    let mut out = Vec::with_capacity(records.iter().map(KvRecord::wire_len).sum());
    for r in records {
        encode_record_into(&mut out, r);
    }
    out
}

/// Parses a record header from the first bytes of a KV file.
pub fn parse_header(buf: &[u8]) -> Option<RecordHeader> {
    if buf.len() < RECORD_HEADER_LEN {
        return None;
    }
    let seq = u64::from_le_bytes(buf[0..8].try_into().unwrap());
    let op = OpCode::from_byte(buf[8])?;
    let value_len = u32::from_le_bytes(buf[9..13].try_into().unwrap());
    Some(RecordHeader { seq, op, value_len })
}

fn decode_one(buf: &[u8]) -> Option<(KvRecord, usize)> {
    let header = parse_header(buf)?;
    let value_end = RECORD_HEADER_LEN.checked_add(header.value_len as usize)?;
    let total = value_end.checked_add(4)?;
    if buf.len() < total {
        return None;
    }
    let stored = u32::from_le_bytes(buf[value_end..total].try_into().unwrap());
    if stored != crc32c(&buf[..value_end]) {
        return None;
    }
    if header.op == OpCode::Delete && header.value_len != 0 {
        return None;
    }
    let record = KvRecord {
        seq: header.seq,
        op: header.op,
        value: buf[RECORD_HEADER_LEN..value_end].to_vec(),
    };
    Some((record, total))
}

/// Decodes a concatenation of records. Fails on the first record that is
/// truncated, fails its CRC, or breaks ascending sequence order.
pub fn decode_records(buf: &[u8]) -> Result<Vec<KvRecord>, CorruptRecords> {
    let mut records: Vec<KvRecord> = Vec::new();
    let mut offset = 0;
    while offset < buf.len() {
        match decode_one(&buf[offset..]) {
            Some((r, used)) if records.last().is_none_or(|prev| prev.seq < r.seq) => {
                records.push(r);
                offset += used;
            }
            _ => return Err(CorruptRecords { valid: records, offset }),
        }
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn wire_sizes() {
        assert_eq!(encode_record(&KvRecord::put(7, b"v".to_vec())).len(), 18);
        let del = encode_record(&KvRecord::delete(9));
        assert_eq!(del.len(), 17);
        assert_eq!(&del[9..13], &[0, 0, 0, 0]);
    }

    #[test]
    fn layout_is_little_endian() {
        let bytes = encode_record(&KvRecord::put(0x0102, b"xy".to_vec()));
        assert_eq!(&bytes[..8], &[0x02, 0x01, 0, 0, 0, 0, 0, 0]);
        assert_eq!(bytes[8], 0);
        assert_eq!(&bytes[9..13], &[2, 0, 0, 0]);
        assert_eq!(&bytes[13..15], b"xy");
        let crc = crc32c(&bytes[..15]);
        assert_eq!(&bytes[15..], &crc.to_le_bytes());
    }

    #[test]
    fn decode_concatenation() {
        let recs = vec![KvRecord::put(3, b"a".to_vec()), KvRecord::delete(5), KvRecord::put(9, vec![])];
        assert_eq!(decode_records(&encode_records(&recs)).unwrap(), recs);
        assert_eq!(decode_records(&[]).unwrap(), vec![]);
    }

    #[test]
    fn truncated_tail_reports_prefix() {
        let recs = vec![KvRecord::put(1, b"one".to_vec()), KvRecord::put(2, b"two".to_vec())];
        let bytes = encode_records(&recs);
        let err = decode_records(&bytes[..bytes.len() - 1]).unwrap_err();
        assert_eq!(err.valid, recs[..1].to_vec());
        assert_eq!(err.offset, recs[0].wire_len());
    }

    #[test]
    fn descending_seq_is_corrupt() {
        let bytes = encode_records(&[KvRecord::put(5, vec![]), KvRecord::put(4, vec![])]);
        assert_eq!(decode_records(&bytes).unwrap_err().valid.len(), 1);
    }

    #[test]
    fn delete_with_value_is_corrupt() {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&1u64.to_le_bytes());
        bytes.push(1);
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.push(b'x');
        let crc = crc32c(&bytes);
        bytes.extend_from_slice(&crc.to_le_bytes());
        assert!(decode_records(&bytes).is_err());
    }

    #[test]
    fn header_parse() {
        let bytes = encode_record(&KvRecord::put(42, vec![1, 2, 3]));
        assert_eq!(
            parse_header(&bytes[..RECORD_HEADER_LEN]),
            Some(RecordHeader { seq: 42, op: OpCode::Put, value_len: 3 })
        );
        assert_eq!(parse_header(&bytes[..5]), None);
    }
}
