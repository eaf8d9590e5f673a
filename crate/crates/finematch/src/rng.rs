//! Deterministic random number helpers.
//!
//! All randomness in this crate flows through a seeded ChaCha stream, and the
//! sampling routines below are implemented directly on `RngCore` so that
//! byte-identical output depends only on the seed and the documented
//! algorithms, not on helper-crate version details.

use rand_chacha::ChaCha12Rng;
use rand_core::{RngCore, SeedableRng};

/// The generator used throughout the crate.
pub type Rng = ChaCha12Rng;

/// Creates a generator from a 64-bit seed.
pub fn seeded(seed: u64) -> Rng {
    ChaCha12Rng::seed_from_u64(seed)
}

/// Creates the `index`-th generator of a counter-based family.
///
/// Streams for distinct indices are independent, and work split across any
/// number of workers produces identical results as long as each task uses the
/// stream named by its own index.
pub fn stream(seed: u64, index: u64) -> Rng {
    // SplitMix64 expansion of (seed, index) into a full 256-bit seed.
    let mut state = seed ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^= z >> 31;
        chunk.copy_from_slice(&z.to_le_bytes());
    }
    ChaCha12Rng::from_seed(key)
}

/// Uniform draw from `0..n` without modulo bias (rejection sampling).
pub fn uniform_usize(rng: &mut Rng, n: usize) -> usize {
    assert!(n > 0, "uniform_usize requires n > 0");
    let n = n as u64;
    let zone = u64::MAX - (u64::MAX % n);
    loop {
        let raw = rng.next_u64();
        if raw < zone {
            return (raw % n) as usize;
        }
    }
}

/// Uniform draw from `[0, 1)` with 53 bits of precision.
pub fn uniform_f64(rng: &mut Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Standard normal draw (Box-Muller; consumes two uniforms).
pub fn normal_f64(rng: &mut Rng) -> f64 {
    let u1 = loop {
        let u = uniform_f64(rng);
        if u > 0.0 {
            break u;
        }
    };
    let u2 = uniform_f64(rng);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// In-place Fisher-Yates shuffle.
pub fn shuffle<T>(rng: &mut Rng, items: &mut [T]) {
    for i in (1..items.len()).rev() {
        let j = uniform_usize(rng, i + 1);
        items.swap(i, j);
    }
}

/// Simple random sample of `k` indices from `0..n` without replacement.
///
/// Returned in draw order; callers that need a canonical order sort the
/// result themselves.
pub fn sample_without_replacement(rng: &mut Rng, n: usize, k: usize) -> Vec<usize> {
    assert!(k <= n, "cannot sample {k} from {n}");
    let mut pool: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = i + uniform_usize(rng, n - i);
        pool.swap(i, j);
    }
    pool.truncate(k);
    pool
}
