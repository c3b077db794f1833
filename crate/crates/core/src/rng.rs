//! Deterministic randomness and hashing.
//!
//! Everything that needs a random stream (tiny-model generation, calibration
//! sample selection, synthetic corpora) derives from SplitMix64, so identical
//! seeds reproduce identical artifacts byte for byte, on any platform.

/// SplitMix64 with the constants from Vigna's reference implementation.
#[derive(Clone, Debug)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in [-1, 1) with 24 bits of resolution; every value is exactly
    /// representable in f32, so the stream is reproducible across languages.
    #[inline]
    pub fn next_uniform_f32(&mut self) -> f32 {
        const SCALE: f32 = 1.0 / (1u64 << 23) as f32;
        (self.next_u64() >> 40) as f32 * SCALE - 1.0
    }

    /// Uniform in [0, bound). Plain modulo: the bias is negligible for the
    /// corpus sizes involved and the mapping is part of the pinned selection
    /// rule, so it must stay exactly this.
    #[inline]
    pub fn next_below(&mut self, bound: u64) -> u64 {
        debug_assert!(bound > 0);
        self.next_u64() % bound
    }
}

/// First `count` entries of a Fisher-Yates shuffle of `[0, n)`.
///
/// For each position i, swaps with `i + rng % (n - i)`; only the first
/// `count` positions are driven, so selecting k of n costs O(n + k) and the
/// chosen indices are distinct.
pub fn partial_shuffle_indices(n: usize, count: usize, rng: &mut SplitMix64) -> Vec<usize> {
    let count = count.min(n);
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..count {
        let j = i + rng.next_below((n - i) as u64) as usize;
        idx.swap(i, j);
    }
    idx.truncate(count);
    idx
}

/// FNV-1a, 64-bit. Used for corpus fingerprints and per-tensor seed derivation.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}
