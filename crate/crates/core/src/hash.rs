//! FNV-1a 64-bit hashing.
//!
//! One fixed, seedless, non-cryptographic hash is used everywhere a stable
//! cross-platform bucket assignment is needed: text feature hashing, brand
//! and color one-hot buckets, user feature derivation, and artifact
//! checksums. Keeping a single implementation here means a model trained on
//! one machine classifies identically on another.

pub const FNV_OFFSET_BASIS: u64 = 0xcbf2_9ce4_8422_2325;
pub const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// FNV-1a over a byte slice.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut state = FNV_OFFSET_BASIS;
    for &b in bytes {
        state ^= u64::from(b);
        state = state.wrapping_mul(FNV_PRIME);
    }
    state
}

/// Continue an FNV-1a stream from a previous state. Useful for hashing
/// logically concatenated inputs without allocating.
pub fn fnv1a64_continue(state: u64, bytes: &[u8]) -> u64 {
    let mut state = state;
    for &b in bytes {
        state ^= u64::from(b);
        state = state.wrapping_mul(FNV_PRIME);
    }
    state
}

/// Map a hash value onto the unit interval [0, 1).
pub fn hash_to_unit(h: u64) -> f32 {
    // Use the top 24 bits so the result survives the f32 mantissa intact.
    ((h >> 40) as f32) / ((1u64 << 24) as f32)
}

/// Incremental FNV-1a writer for checksumming byte streams.
#[derive(Debug, Clone)]
pub struct Fnv1a64(u64);

impl Fnv1a64 {
    pub fn new() -> Self {
        Fnv1a64(FNV_OFFSET_BASIS)
    }

    pub fn update(&mut self, bytes: &[u8]) {
        self.0 = fnv1a64_continue(self.0, bytes);
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

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_published_fnv1a_vectors() {
        // Reference values from the FNV specification.
        assert_eq!(fnv1a64(b""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(fnv1a64(b"a"), 0xaf63_dc4c_8601_ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn continue_matches_one_shot() {
        let oneshot = fnv1a64(b"hello world");
        let mut inc = Fnv1a64::new();
        inc.update(b"hello ");
        inc.update(b"world");
        assert_eq!(inc.finish(), oneshot);
        assert_eq!(
            fnv1a64_continue(fnv1a64(b"hello "), b"world"),
            oneshot
        );
    }

    #[test]
    fn unit_mapping_stays_in_range() {
        for i in 0..1000u64 {
            let u = hash_to_unit(fnv1a64(&i.to_le_bytes()));
            assert!((0.0..1.0).contains(&u), "{u} out of range");
        }
    }
}
