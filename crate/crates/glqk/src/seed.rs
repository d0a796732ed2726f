//! Deterministic derivation of per-task random seeds from one master seed.
//!
//! Every stochastic stage (Hamiltonian draw, initial state, shadow shots, train/test
//! splits, ...) gets its own stream tag, and entry `i` of a stream gets an independent
//! ChaCha12 generator. The derivation uses only fixed 64-bit arithmetic, so outputs are
//! identical across platforms and reruns.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// Stream tag: Hamiltonian coupling draws.
pub const STREAM_HAM: u64 = 0xA1;
/// Stream tag: initial product states.
pub const STREAM_STATE: u64 = 0xA2;
/// Stream tag: shadow measurement shots.
pub const STREAM_SHADOW: u64 = 0xA3;
/// Stream tag: inversion-symmetric disturbance unitaries.
pub const STREAM_DISTURB: u64 = 0xA4;
/// Stream tag: ground-state solver start vectors.
pub const STREAM_START: u64 = 0xA5;
/// Stream tag: per-repeat train/test splits.
pub const STREAM_SPLIT: u64 = 0xB1;
/// Stream tag: cross-validation fold shuffles.
pub const STREAM_CV: u64 = 0xB2;

/// SplitMix64 finalizer; full-period bijective mixer on u64.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive the seed for entry `index` of stream `stream` under `master`.
pub fn derive_seed(master: u64, stream: u64, index: u64) -> u64 {
    let s = mix64(master ^ mix64(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15)));
    mix64(s ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03))
}

/// ChaCha12 generator for entry `index` of stream `stream` under `master`.
pub fn stream_rng(master: u64, stream: u64, index: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(derive_seed(master, stream, index))
}
