//! Deterministic RNG stream derivation.
//!
//! Every stochastic stage (cohort replicate, MCMC chain, candidate-by-draw
//! expectation task, tie breaking, ...) draws from its own ChaCha stream
//! whose seed is derived from the master seed and a path of integer tags.
//! Tasks are therefore independent of scheduling order, which keeps parallel
//! runs byte-identical to sequential ones.

use rand_chacha::ChaCha8Rng;
use rand_chacha::rand_core::SeedableRng;

/// splitmix64 finalizer; good avalanche behavior for seed mixing.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a child seed from a parent seed and a tag path.
pub fn derive_seed(master: u64, tags: &[u64]) -> u64 {
    let mut s = mix(master ^ 0x5555_5555_5555_5555);
    for &t in tags {
        s = mix(s ^ mix(t));
    }
    s
}

/// RNG for the stream identified by `tags` under `master`.
pub fn stream_rng(master: u64, tags: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, tags))
}

/// Stage tags used throughout the crate. Central so that streams never collide.
pub mod stage {
    pub const COHORT_GEN: u64 = 1;
    pub const CHAIN: u64 = 2;
    pub const CANDIDATE_INFO: u64 = 3;
    pub const TIE_BREAK: u64 = 4;
    pub const SRS: u64 = 5;
    pub const EXPERIMENT_REPLICATE: u64 = 6;
    pub const STRATEGY: u64 = 7;
    pub const WAVE: u64 = 8;
}
