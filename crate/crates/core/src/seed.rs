//! Counter-based seed derivation.
//!
//! Every stochastic component takes an explicit `u64` seed. Per-trial and
//! per-stream seeds are derived from a master seed with
//! `derive(master, stream, index)`, which mixes the three words through the
//! SplitMix64 finalizer. The derivation is stateless, so any subset of trials
//! can be regenerated without replaying the ones before it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for item `index` of stream `stream` under `master`.
pub fn derive(master: u64, stream: u64, index: u64) -> u64 {
    let a = splitmix64(master ^ stream.wrapping_mul(GOLDEN));
    splitmix64(a ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03))
}

/// Named streams so that unrelated components never share a seed.
pub mod stream {
    pub const TYPIST: u64 = 1;
    pub const SIM_NOISE: u64 = 2;
    pub const SITE_TEMPLATE: u64 = 3;
    pub const SITE_TRIAL: u64 = 4;
    pub const VPN: u64 = 5;
    pub const SWEEP: u64 = 6;
    pub const POLICY: u64 = 7;
    pub const TRAINING: u64 = 8;
    pub const FOLDS: u64 = 9;
    pub const DICTIONARY: u64 = 10;
    pub const PROFILE: u64 = 11;
}

pub fn rng(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}
