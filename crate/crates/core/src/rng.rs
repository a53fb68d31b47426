//! Derived random streams.
//!
//! Every stochastic step draws from a ChaCha stream keyed by a global seed and
//! a path of indices (iteration, example, utterance...), so results do not
//! depend on evaluation order or on where a run was resumed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a seed with a path of stream indices into a new 64-bit seed.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix(seed), |acc, &p| splitmix(acc ^ splitmix(p.wrapping_add(GOLDEN))))
}

pub fn stream(seed: u64, path: &[u64]) -> Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, path))
}

/// Stream-domain tags so different consumers of one seed never collide.
pub mod domain {
    pub const INIT: u64 = 1;
    pub const BATCH: u64 = 2;
    pub const CROP: u64 = 3;
    pub const DROPOUT: u64 = 4;
    pub const EMBED: u64 = 5;
    pub const SYNTH: u64 = 6;
    pub const TRIALS: u64 = 7;
    pub const HEAD: u64 = 8;
}
