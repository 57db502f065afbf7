//! Directory-level Bloom filter.
//!
//! Probe positions use double hashing over 64-bit FNV-1a:
//!
//! ```text
//! h1  = fnv1a64(key)
//! h2  = fnv1a64(key || 0xFF) | 1
//! g_i = (h1 + i * h2) mod 2^64 mod m      for i in 0..k
//! ```
//!
//! Bit `g` lives in byte `g / 8`, at bit position `g % 8` (LSB first).

use alloc::vec;
use alloc::vec::Vec;

pub const DEFAULT_BITS_PER_KEY: u32 = 10;
pub const DEFAULT_NUM_HASHES: u32 = 7;
pub const MIN_BITS: u64 = 64;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn fnv1a64(data: &[u8]) -> u64 {
    fnv1a64_extend(FNV_OFFSET, data)
}

fn fnv1a64_extend(mut h: u64, data: &[u8]) -> u64 {
    for &b in data {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// The two base hashes for `key`.
pub fn bloom_hashes(key: &[u8]) -> (u64, u64) {
    let h1 = fnv1a64(key);
    let h2 = fnv1a64_extend(h1, &[0xFF]) | 1;
    (h1, h2)
}

/// Bit positions probed for `key` in a filter of `m` bits with `k` hashes.
pub fn probe_positions(key: &[u8], m: u64, k: u32) -> impl Iterator<Item = u64> {
    let (h1, h2) = bloom_hashes(key);
    (0..k as u64).map(move |i| h1.wrapping_add(i.wrapping_mul(h2)) % m)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BloomFilter {
    bit_len: u64,
    num_hashes: u32,
    bits: Vec<u8>,
}

impl BloomFilter {
    /// Filter sized for `expected_keys` with `bits_per_key` bits each.
    pub fn with_capacity(expected_keys: u64, bits_per_key: u32, num_hashes: u32) -> BloomFilter {
        let bit_len = expected_keys.saturating_mul(bits_per_key as u64).max(MIN_BITS);
        BloomFilter { bit_len, num_hashes, bits: vec![0; bit_len.div_ceil(8) as usize] }
    }

    pub fn build<'a, I>(keys: I, bits_per_key: u32, num_hashes: u32) -> BloomFilter
    where
        I: IntoIterator<Item = &'a [u8]>,
        I::IntoIter: ExactSizeIterator,
    {
        let keys = keys.into_iter();
        let mut f = BloomFilter::with_capacity(keys.len() as u64, bits_per_key, num_hashes);
        for key in keys {
            f.insert(key);
        }
        f
    }

    /// Rebuilds a filter from stored parts. Returns `None` when `bits` does
    /// not have exactly `ceil(bit_len / 8)` bytes.
    pub fn from_parts(bit_len: u64, num_hashes: u32, bits: Vec<u8>) -> Option<BloomFilter> {
        if bit_len == 0 || bits.len() as u64 != bit_len.div_ceil(8) {
            return None;
        }
        Some(BloomFilter { bit_len, num_hashes, bits })
    }

    pub fn insert(&mut self, key: &[u8]) {
        for pos in probe_positions(key, self.bit_len, self.num_hashes) {
            self.bits[(pos / 8) as usize] |= 1 << (pos % 8);
        }
    }

    /// False means `key` was definitely never inserted.
    pub fn may_contain(&self, key: &[u8]) -> bool {
        probe_positions(key, self.bit_len, self.num_hashes)
            .all(|pos| self.bits[(pos / 8) as usize] & (1 << (pos % 8)) != 0)
    }

    pub fn bit_len(&self) -> u64 {
        self.bit_len
    }

    pub fn num_hashes(&self) -> u32 {
        self.num_hashes
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }
}
