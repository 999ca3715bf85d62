//! Driver-distraction detection from lane-keeping telemetry.
//!
//! The crate covers the full experiment pipeline: trajectory ingestion and
//! windowing ([`data`]), window-level feature extraction ([`features`]),
//! a regularized second-order gradient-boosted tree classifier ([`gbdt`]),
//! Tree-structured Parzen Estimator hyperparameter search ([`tpe`]),
//! stratified cross-validated evaluation ([`eval`]), recursive feature
//! elimination ([`select`]), a synthetic trajectory generator ([`sim`]),
//! and the experiment orchestration layer ([`pipeline`]).
//!
//! Every randomized component takes an explicit `u64` seed and uses a
//! counter-based generator internally, so any result in the crate can be
//! reproduced bit-for-bit from (inputs, seed).

pub mod data;
pub mod error;
pub mod eval;
pub mod features;
pub mod gbdt;
pub mod pipeline;
pub mod select;
pub mod sim;
pub mod tpe;

pub use error::{Error, Result};

/// Mix a base seed with stream and index tags into an independent child seed.
///
/// SplitMix64 finalizer over the xor-folded inputs; used everywhere a
/// component needs several decorrelated substreams from one user seed.
pub fn derive_seed(seed: u64, stream: u64, index: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ index.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// FNV-1a hash of a byte string; stable across platforms and releases.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}
