//! Keys and the key <-> filename encoding.
//!
//! A key is stored as the name of its KV file, so every key must map to a
//! legal, unique filename of at most [`MAX_FILENAME_LEN`] bytes. Bytes in
//! the safe set `[A-Za-z0-9_-+=@]` are kept as-is; every other byte becomes
//! `%XX` with two uppercase hex digits. `.` is outside the safe set, so no
//! encoded name can start with a dot and dot-prefixed names (such as
//! `.meta`) stay reserved for the store.
//!
//! The encoding is injective but not order preserving: code that needs key
//! order must decode names and sort raw keys.

use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;

/// Longest filename accepted by common filesystems.
pub const MAX_FILENAME_LEN: usize = 255;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum KeyError {
    #[error("key is empty")]
    EmptyKey,
    /// The encoded filename would exceed 255 bytes. Carries the rejected
    /// key so the caller can shorten it.
    #[error("key of {} bytes encodes to {encoded_len} bytes, limit is 255", key.len())]
    KeyTooLong { key: Vec<u8>, encoded_len: usize },
    #[error("malformed key filename")]
    MalformedName,
}

/// Bytewise lexicographic order; a strict prefix sorts first.
pub fn compare_keys(a: &[u8], b: &[u8]) -> Ordering {
    a.cmp(b)
}

fn is_safe(b: u8) -> bool {
    b.is_ascii_alphanumeric() || matches!(b, b'_' | b'-' | b'+' | b'=' | b'@')
}

/// Length of `encode_key(key)` without building it.
pub fn encoded_len(key: &[u8]) -> usize {
    key.iter().map(|&b| if is_safe(b) { 1 } else { 3 }).sum()
}

/// Checks that `key` can be stored, without allocating the filename.
pub fn validate_key(key: &[u8]) -> Result<(), KeyError> {
    if key.is_empty() {
        return Err(KeyError::EmptyKey);
    }
    let len = encoded_len(key);
    if len > MAX_FILENAME_LEN {
        return Err(KeyError::KeyTooLong { key: key.to_vec(), encoded_len: len });
    }
    Ok(())
}

const HEX: &[u8; 16] = b"0123456789ABCDEF";

pub fn encode_key(key: &[u8]) -> Result<String, KeyError> {
    validate_key(key)?;
    let mut out = String::with_capacity(encoded_len(key));
    for &b in key {
        if is_safe(b) {
            out.push(b as char);
        } else {
            out.push('%');
            out.push(HEX[(b >> 4) as usize] as char);
            out.push(HEX[(b & 0x0F) as usize] as char);
        }
    }
    Ok(out)
}

fn hex_value(c: u8) -> Option<u8> {
    match c {
        b'0'..=b'9' => Some(c - b'0'),
        b'A'..=b'F' => Some(c - b'A' + 10),
        _ => None,
    }
}

/// Exact inverse of [`encode_key`]. Only canonical encodings are accepted:
/// lowercase hex, escaped safe bytes and raw unsafe bytes are all rejected.
pub fn decode_key(name: &str) -> Result<Vec<u8>, KeyError> {
    let bytes = name.as_bytes();
    if bytes.is_empty() || bytes.len() > MAX_FILENAME_LEN {
        return Err(KeyError::MalformedName);
    }
    let mut out = Vec::with_capacity(bytes.len());
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        if c == b'%' {
            if i + 2 >= bytes.len() {
                return Err(KeyError::MalformedName);
            }
            let hi = hex_value(bytes[i + 1]).ok_or(KeyError::MalformedName)?;
            let lo = hex_value(bytes[i + 2]).ok_or(KeyError::MalformedName)?;
            let b = (hi << 4) | lo;
            if is_safe(b) {
                return Err(KeyError::MalformedName);
            }
            out.push(b);
            i += 3;
        } else if is_safe(c) {
            out.push(c);
            i += 1;
        } else {
            return Err(KeyError::MalformedName);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn compare_examples() {
        assert_eq!(compare_keys(b"a", b"b"), Ordering::Less);
        assert_eq!(compare_keys(b"ab", b"a"), Ordering::Greater);
        assert_eq!(compare_keys(b"a", b"a"), Ordering::Equal);
    }

    #[test]
    fn encode_examples() {
        assert_eq!(encode_key(b"abc").unwrap(), "abc");
        assert_eq!(encode_key(b"a/b").unwrap(), "a%2Fb");
        assert_eq!(encode_key(b".hidden").unwrap(), "%2Ehidden");
        assert_eq!(encode_key(&[0x00, 0xFF]).unwrap(), "%00%FF");
        assert_eq!(encode_key(b""), Err(KeyError::EmptyKey));
    }

    #[test]
    fn encode_length_limit() {
        // 85 unsafe bytes encode to exactly 255.
        let k = vec![b'/'; 85];
        assert_eq!(encode_key(&k).unwrap().len(), 255);
        let k = vec![b'/'; 86];
        match encode_key(&k) {
            Err(KeyError::KeyTooLong { key, encoded_len }) => {
                assert_eq!(key, k);
                assert_eq!(encoded_len, 258);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(encode_key(&[b'a'; 255]).is_ok());
        assert!(encode_key(&[b'a'; 256]).is_err());
    }

    #[test]
    fn decode_examples() {
        assert_eq!(decode_key("a%2Fb").unwrap(), b"a/b");
        assert_eq!(decode_key("%ZZ"), Err(KeyError::MalformedName));
        assert_eq!(decode_key(".meta"), Err(KeyError::MalformedName));
        assert_eq!(decode_key("%"), Err(KeyError::MalformedName));
        assert_eq!(decode_key("a%2"), Err(KeyError::MalformedName));
        assert_eq!(decode_key("%2f"), Err(KeyError::MalformedName));
        // 'a' escaped is not canonical.
        assert_eq!(decode_key("%61"), Err(KeyError::MalformedName));
        assert_eq!(decode_key(""), Err(KeyError::MalformedName));
    }
}
