//! Little-endian binary blob I/O with checksums.
//!
//! Corpora and checkpoints are stored as a JSON manifest next to flat binary
//! blobs (`*.f32le`, `*.u32le`). All multi-byte values are little-endian
//! regardless of host platform, and every blob carries an FNV-1a 64 checksum
//! in the manifest so corruption is detected at load time.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::hashing::Fnv1a64;

/// Serializes f32 values to little-endian bytes.
pub fn f32s_to_le_bytes(values: &[f32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * 4);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Parses little-endian bytes into f32 values.
pub fn f32s_from_le_bytes(bytes: &[u8]) -> Result<Vec<f32>> {
    if bytes.len() % 4 != 0 {
        return Err(Error::CorruptCorpus(format!(
            "f32 blob length {} is not a multiple of 4",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

/// Serializes u32 values to little-endian bytes.
pub fn u32s_to_le_bytes(values: &[u32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * 4);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Parses little-endian bytes into u32 values.
pub fn u32s_from_le_bytes(bytes: &[u8]) -> Result<Vec<u32>> {
    if bytes.len() % 4 != 0 {
        return Err(Error::CorruptCorpus(format!(
            "u32 blob length {} is not a multiple of 4",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

/// Checksum of a blob's serialized bytes, rendered as fixed-width hex.
pub fn checksum_hex(bytes: &[u8]) -> String {
    let mut h = Fnv1a64::new();
    h.update(bytes);
    format!("{:016x}", h.finish())
}

/// Writes a blob and returns its checksum hex string.
pub fn write_blob(path: &Path, bytes: &[u8]) -> Result<String> {
    fs::write(path, bytes)?;
    Ok(checksum_hex(bytes))
}

/// Reads a blob and verifies it against the expected checksum.
pub fn read_blob_checked(path: &Path, expected_checksum: &str, what: &str) -> Result<Vec<u8>> {
    let bytes = fs::read(path)?;
    let actual = checksum_hex(&bytes);
    if actual != expected_checksum {
        return Err(Error::CorruptCorpus(format!(
            "{what}: checksum mismatch for {}: manifest says {expected_checksum}, blob hashes to {actual}",
            path.display()
        )));
    }
    Ok(bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn f32_roundtrip_preserves_bits() {
        let vals = vec![0.0f32, -0.0, 1.5, f32::MIN_POSITIVE, 3.4e38, -7.25];
        let bytes = f32s_to_le_bytes(&vals);
        let back = f32s_from_le_bytes(&bytes).unwrap();
        for (a, b) in vals.iter().zip(&back) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn u32_roundtrip() {
        let vals = vec![0u32, 1, 0xdead_beef, u32::MAX];
        let back = u32s_from_le_bytes(&u32s_to_le_bytes(&vals)).unwrap();
        assert_eq!(vals, back);
    }

    #[test]
    fn truncated_blob_rejected() {
        assert!(f32s_from_le_bytes(&[0u8, 1, 2]).is_err());
        assert!(u32s_from_le_bytes(&[0u8; 5]).is_err());
    }

    #[test]
    fn endianness_is_explicit() {
        // 1.0f32 is 0x3f800000; little-endian layout puts 0x00 first.
        let bytes = f32s_to_le_bytes(&[1.0]);
        assert_eq!(bytes, vec![0x00, 0x00, 0x80, 0x3f]);
    }
}
