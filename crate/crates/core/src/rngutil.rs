//! Deterministic RNG streams. Every stochastic draw in the library goes
//! through a ChaCha stream keyed by (seed, purpose, index), so runs are
//! reproducible regardless of scheduling, and f32/f64 runs see identical
//! sample sequences (draws happen in f64 and are cast by the caller).

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// Stream purposes; distinct constants keep independent uses independent.
pub mod purpose {
    pub const INIT: u64 = 1;
    pub const BATCH: u64 = 2;
    pub const DROPOUT: u64 = 3;
    pub const EVAL: u64 = 4;
    pub const DATA: u64 = 5;
}

/// Independent stream for (seed, purpose, index): same key ⇒ same stream.
pub fn stream(seed: u64, purpose: u64, index: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    // SplitMix64-style mix keeps distinct (purpose, index) pairs on distinct
    // ChaCha streams.
    let mut z = purpose.wrapping_mul(0x9E3779B97F4A7C15).wrapping_add(index);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    rng.set_stream(z ^ (z >> 31));
    rng
}
