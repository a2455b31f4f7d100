//! Counter-based random streams.
//!
//! Every stochastic draw in this crate is addressed by a coordinate tuple
//! `(seed, draw index, chain slot, chain position)` rather than by consuming
//! a shared stateful generator. Two consequences the rest of the crate relies
//! on:
//!
//! * identical coordinates always reproduce identical bits, regardless of
//!   evaluation order or thread count;
//! * enlarging a sample (more draws, longer chains, more filter slots) never
//!   perturbs the draws already taken, so nested sample sets really nest.
//!
//! Edge survival masks use a SplitMix64-style permutation evaluated directly
//! on the counter; bulk generation (graph synthesis, datasets, shuffles)
//! goes through a ChaCha generator keyed from the same mixing function.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer. Bijective on u64, good avalanche behavior.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Identifies one independent sampling stream.
///
/// `draw` enumerates Monte Carlo realizations, `slot` the consumer within a
/// realization (one per filter in a bank, or one per layer under shared
/// policies), `pos` the position within a shift chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamKey {
    pub seed: u64,
    pub draw: u64,
    pub slot: u64,
    pub pos: u64,
}

impl StreamKey {
    /// Collapses the coordinates into one well-mixed 64-bit state.
    /// Distinct odd constants per level keep the levels from aliasing.
    #[inline]
    pub fn state(&self) -> u64 {
        let mut s = mix64(self.seed ^ 0x243f_6a88_85a3_08d3);
        s = mix64(s ^ self.draw.wrapping_mul(0x9e37_79b9_7f4a_7c15));
        s = mix64(s ^ self.slot.wrapping_mul(0xc2b2_ae3d_27d4_eb4f));
        s = mix64(s ^ self.pos.wrapping_mul(0x1656_67b1_9e37_79f9));
        s
    }

    /// Uniform value in [0, 1) for the `index`-th item of this stream.
    #[inline]
    pub fn unit(&self, index: u64) -> f64 {
        let h = mix64(self.state() ^ index.wrapping_mul(0xd6e8_feb8_6659_fd93));
        // 53 high bits -> exactly representable dyadic rational in [0, 1).
        (h >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Bernoulli(`p`) for the `index`-th item of this stream.
    #[inline]
    pub fn keep(&self, index: u64, p: f64) -> bool {
        self.unit(index) < p
    }
}

/// Stateful generator keyed from `(seed, ids...)`, for bulk sampling where
/// the rand ecosystem is more convenient than raw counters.
pub fn chacha(seed: u64, ids: &[u64]) -> ChaCha8Rng {
    let mut s = mix64(seed ^ 0x4528_21e6_38d0_1377);
    for id in ids {
        s = mix64(s ^ id.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    }
    let mut key = [0u8; 32];
    for (i, chunk) in key.chunks_exact_mut(8).enumerate() {
        s = mix64(s ^ (i as u64).wrapping_mul(0xff51_afd7_ed55_8ccd));
        chunk.copy_from_slice(&s.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}
