//! Seed derivation. Every random stream in the pipeline is keyed by a master
//! seed plus a path of indices, so parallel and serial evaluation agree.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes `master` with an index path into a new 64-bit seed.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(master), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn rng_for(master: u64, path: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, path))
}

/// Stream tags keep independent uses of the same indices apart.
pub mod stream {
    pub const NOISE: u64 = 1;
    pub const MASK: u64 = 2;
    pub const CHAINS: u64 = 3;
    pub const BOOTSTRAP: u64 = 4;
    pub const EVALUATION: u64 = 5;
}
