//! Keyed random streams.
//!
//! Every random draw in the crate comes from a ChaCha8 stream selected by
//! `(seed, domain, index)`: the seed picks the key, the domain and index pick the stream.
//! Any stream can be regenerated in isolation, independent of what was drawn before.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent families of streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u16)]
pub enum Domain {
    TrainSample = 0,
    ValSample = 1,
    TestSample = 2,
    DataGlobals = 3,
    ParamInit = 4,
    EpochShuffle = 5,
    KMeans = 6,
    PoolSubset = 7,
    Gradcheck = 8,
}

pub fn stream(seed: u64, domain: Domain, index: u64) -> ChaCha8Rng {
    debug_assert!(index < 1 << 48, "stream index out of range");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((domain as u64) << 48) | (index & ((1 << 48) - 1)));
    rng
}
