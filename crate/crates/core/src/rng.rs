//! Seeded random streams.
//!
//! Every random decision is drawn from a named sub-stream of one master
//! seed, so components (mask, init, diffusion noise, sampling, negatives)
//! can be varied independently and restarts reproduce exactly.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Sub-stream names.
pub mod stream {
    pub const SYNTH: &str = "synth";
    pub const MASK: &str = "mask";
    pub const INIT: &str = "init";
    pub const DIFFUSION_NOISE: &str = "diffusion-noise";
    pub const SAMPLING: &str = "sampling";
    pub const NEGATIVES: &str = "negatives";
    pub const IMPUTE: &str = "impute";
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic 64-bit key for `(seed, name, indices…)`.
pub fn derive_seed(seed: u64, name: &str, indices: &[u64]) -> u64 {
    // FNV-1a over the name, then splitmix chaining
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    let mut z = splitmix(seed ^ h);
    for &i in indices {
        z = splitmix(z ^ i);
    }
    z
}

pub fn stream(seed: u64, name: &str) -> Rng {
    Rng::seed_from_u64(derive_seed(seed, name, &[]))
}

pub fn substream(seed: u64, name: &str, indices: &[u64]) -> Rng {
    Rng::seed_from_u64(derive_seed(seed, name, indices))
}
