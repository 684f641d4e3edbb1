//! Deterministic per-task RNG streams.
//!
//! Every parallel task (pixel, voxel/view pair, training step) derives its own
//! ChaCha stream from the global seed plus task identifiers, so serial and
//! parallel schedules produce bit-identical results.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream for a task identified by up to three indices.
pub fn task_rng(seed: u64, a: u64, b: u64, c: u64) -> ChaCha8Rng {
    // splitmix64-style mixing keeps nearby task ids decorrelated
    let mut key = [0u8; 32];
    key[0..8].copy_from_slice(&mix(seed).to_le_bytes());
    key[8..16].copy_from_slice(&mix(a ^ 0x9e37_79b9_7f4a_7c15).to_le_bytes());
    key[16..24].copy_from_slice(&mix(b ^ 0xbf58_476d_1ce4_e5b9).to_le_bytes());
    key[24..32].copy_from_slice(&mix(c ^ 0x94d0_49bb_1331_11eb).to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

fn mix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}
