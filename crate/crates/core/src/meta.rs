//! `.meta` file of an SST directory: Bloom filter plus key range.
//!
//! ```text
//! magic "DLM1" | entry_count: u64 | bits_per_key: u32 | num_hashes: u32
//! | bit_len: u64 | bits: [u8; ceil(bit_len / 8)]
//! | smallest_len: u32 | smallest | largest_len: u32 | largest
//! | crc32c: u32   (over every preceding byte)
//! ```

use alloc::vec::Vec;

use crate::bloom::{BloomFilter, MIN_BITS};
use crate::checksum::crc32c;

pub const META_MAGIC: &[u8; 4] = b"DLM1";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MetaError {
    #[error("meta file is truncated")]
    Truncated,
    #[error("bad meta magic")]
    BadMagic,
    #[error("meta checksum mismatch")]
    Checksum,
    #[error("inconsistent meta fields")]
    Inconsistent,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SstDirMeta {
    pub entry_count: u64,
    pub bits_per_key: u32,
    pub filter: BloomFilter,
    pub smallest_key: Vec<u8>,
    pub largest_key: Vec<u8>,
}

impl SstDirMeta {
    /// Builds the meta for a directory holding `keys`, which must be sorted.
    pub fn for_sorted_keys(keys: &[Vec<u8>], bits_per_key: u32, num_hashes: u32) -> SstDirMeta {
        let filter = BloomFilter::build(keys.iter().map(Vec::as_slice), bits_per_key, num_hashes);
        SstDirMeta {
            entry_count: keys.len() as u64,
            bits_per_key,
            filter,
            smallest_key: keys.first().cloned().unwrap_or_default(),
            largest_key: keys.last().cloned().unwrap_or_default(),
        }
    }

    /// Bloom check; an empty directory contains nothing.
    pub fn may_contain(&self, key: &[u8]) -> bool {
        self.entry_count > 0 && self.filter.may_contain(key)
    }

    pub fn key_in_range(&self, key: &[u8]) -> bool {
        self.entry_count > 0 && self.smallest_key.as_slice() <= key && key <= self.largest_key.as_slice()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(40 + self.filter.bits().len() + self.smallest_key.len() + self.largest_key.len());
        out.extend_from_slice(META_MAGIC);
        out.extend_from_slice(&self.entry_count.to_le_bytes());
        out.extend_from_slice(&self.bits_per_key.to_le_bytes());
        out.extend_from_slice(&self.filter.num_hashes().to_le_bytes());
        out.extend_from_slice(&self.filter.bit_len().to_le_bytes());
        out.extend_from_slice(self.filter.bits());
        put_bytes(&mut out, &self.smallest_key);
        put_bytes(&mut out, &self.largest_key);
        let crc = crc32c(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn decode(buf: &[u8]) -> Result<SstDirMeta, MetaError> {
        if buf.len() < 4 + 4 {
            return Err(MetaError::Truncated);
        }
        if &buf[..4] != META_MAGIC {
            return Err(MetaError::BadMagic);
        }
        let (body, tail) = buf.split_at(buf.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().unwrap());
        let mut r = Reader { buf: body, pos: 4 };
        let entry_count = r.u64()?;
        let bits_per_key = r.u32()?;
        let num_hashes = r.u32()?;
        let bit_len = r.u64()?;
        let nbytes = usize::try_from(bit_len.div_ceil(8)).map_err(|_| MetaError::Inconsistent)?;
        let bits = r.take(nbytes)?.to_vec();
        let smallest_key = r.bytes()?.to_vec();
        let largest_key = r.bytes()?.to_vec();
        if r.pos != body.len() {
            return Err(MetaError::Truncated);
        }
        if stored != crc32c(body) {
            return Err(MetaError::Checksum);
        }
        if bit_len != entry_count.saturating_mul(bits_per_key as u64).max(MIN_BITS) || smallest_key > largest_key {
            return Err(MetaError::Inconsistent);
        }
        let filter = BloomFilter::from_parts(bit_len, num_hashes, bits).ok_or(MetaError::Inconsistent)?;
        Ok(SstDirMeta { entry_count, bits_per_key, filter, smallest_key, largest_key })
    }
}

pub(crate) fn put_bytes(out: &mut Vec<u8>, b: &[u8]) {
    out.extend_from_slice(&(b.len() as u32).to_le_bytes());
    out.extend_from_slice(b);
}

/// Bounds-checked little-endian cursor.
pub(crate) struct Reader<'a> {
    pub buf: &'a [u8],
    pub pos: usize,
}

impl<'a> Reader<'a> {
    pub fn take(&mut self, n: usize) -> Result<&'a [u8], MetaError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or(MetaError::Truncated)?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub fn u8(&mut self) -> Result<u8, MetaError> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32, MetaError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64, MetaError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn bytes(&mut self) -> Result<&'a [u8], MetaError> {
        let n = self.u32()? as usize;
        self.take(n)
    }

    pub fn is_empty(&self) -> bool {
        self.pos == self.buf.len()
    }
}
