//! Seed derivation.
//!
//! Every random stream in a run is keyed by the run seed plus a small tuple
//! (stream tag, round, client). Streams never share state, so the order in
//! which clients are scheduled cannot change what they draw.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stream tags. Adding a tag never perturbs existing streams.
#[derive(Debug, Clone, Copy)]
#[repr(u64)]
pub enum Stream {
    Init = 1,
    Selection = 2,
    LocalShuffle = 3,
    PkcfSample = 4,
    Synthesis = 5,
    Clustering = 6,
    Partition = 7,
    LongTail = 8,
    TrainData = 9,
    TestData = 10,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive_seed(base: u64, stream: Stream, parts: &[u64]) -> u64 {
    let mut h = splitmix64(base ^ (stream as u64).wrapping_mul(0xa076_1d64_78bd_642f));
    for &p in parts {
        h = splitmix64(h ^ p);
    }
    h
}

pub fn stream_rng(base: u64, stream: Stream, parts: &[u64]) -> Rng {
    Rng::seed_from_u64(derive_seed(base, stream, parts))
}

pub fn rng_from_seed(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}
