//! Deterministic random substreams.
//!
//! Every random draw in the engine comes from a `ChaCha8Rng` derived from a
//! master seed and a path of tags, so independent tasks (seeds in a rollout
//! batch, correlation trials) never share a stream and results do not depend
//! on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Mixes a seed with a path of tags into a new seed.
pub fn derive(seed: u64, tags: &[u64]) -> u64 {
    tags.iter()
        .fold(splitmix(seed), |acc, &t| splitmix(acc ^ splitmix(t)))
}

pub fn stream(seed: u64, tags: &[u64]) -> Stream {
    ChaCha8Rng::seed_from_u64(derive(seed, tags))
}

// Stream tags. Values are arbitrary but fixed.
pub(crate) const TAG_PROTOTYPES: u64 = 1;
pub(crate) const TAG_SEEDS: u64 = 2;
pub(crate) const TAG_VALIDATION: u64 = 3;
pub(crate) const TAG_TEST: u64 = 4;
pub(crate) const TAG_WARMUP_POOL: u64 = 10;
pub(crate) const TAG_WARMUP_TRAIN: u64 = 11;
pub(crate) const TAG_RL: u64 = 20;
pub(crate) const TAG_SYNTH_PRE: u64 = 30;
pub(crate) const TAG_SYNTH_POST: u64 = 31;
pub(crate) const TAG_SFT: u64 = 40;
pub(crate) const TAG_CORRELATE: u64 = 50;
