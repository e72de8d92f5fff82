//! FNV-1a hashing for blob checksums and deterministic seed derivation.

/// 64-bit FNV-1a over a byte slice.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Incremental FNV-1a hasher for streaming larger blobs.
pub struct Fnv1a64(u64);

impl Fnv1a64 {
    pub fn new() -> Self {
        Fnv1a64(0xcbf2_9ce4_8422_2325)
    }

    pub fn update(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }

    pub fn finish(&self) -> u64 {
        self.0
    }
}

impl Default for Fnv1a64 {
    fn default() -> Self {
        Self::new()
    }
}

/// Derives a child seed from a base seed and a list of string tags.
///
/// Every randomized component (corpus sample, fold shuffle, model init,
/// scrambler, training loop) gets its own seed through this function so that
/// one global seed pins the whole experiment while components stay
/// statistically decoupled.
pub fn derive_seed(base: u64, tags: &[&str]) -> u64 {
    let mut h = Fnv1a64::new();
    h.update(&base.to_le_bytes());
    for t in tags {
        h.update(t.as_bytes());
        h.update(&[0xff]);
    }
    h.finish()
}
