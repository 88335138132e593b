//! Deterministic random stream: SplitMix64 seeding a xoshiro256** core.
//!
//! Every stochastic step in the toolkit (dataset generation, weight
//! initialization, shuffles, scoring-set sampling) draws from this one
//! documented generator so that runs reproduce bit-for-bit on any platform.
//!
//! Stream algebra, fixed for reproducibility:
//! - `next_u64`: xoshiro256** (Blackman & Vigna), state seeded with four
//!   consecutive SplitMix64 outputs of the user seed.
//! - `next_f64`: top 53 bits of `next_u64`, scaled to `[0, 1)`.
//! - `next_gaussian`: Box–Muller on one `(0, 1]` and one `[0, 1)` uniform;
//!   the pair `(z0, z1)` is consumed in order, `z1` buffered.
//! - `next_index(n)`: rejection-sampled `next_u64 % n` (unbiased).
//! - `shuffle`: Fisher–Yates from the top index down.

use alloc::vec::Vec;

use crate::fmath;

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

/// One SplitMix64 step: advances `state` and returns the mixed output.
#[inline]
pub fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(GOLDEN_GAMMA);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive an independent sub-seed from a base seed.
///
/// Component `stream` 0, 1, 2, ... each get their own SplitMix64 output so
/// that, say, changing the epoch count never perturbs the dataset draw.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut state = seed;
    let mut out = 0;
    for _ in 0..=stream {
        out = splitmix64(&mut state);
    }
    out
}

/// xoshiro256** generator with a buffered Box–Muller spare.
#[derive(Debug, Clone)]
pub struct Rng {
    s: [u64; 4],
    gaussian_spare: Option<f64>,
}

impl Rng {
    /// Seed via SplitMix64 as recommended by the xoshiro authors.
    pub fn new(seed: u64) -> Self {
        let mut sm = seed;
        let s = [
            splitmix64(&mut sm),
            splitmix64(&mut sm),
            splitmix64(&mut sm),
            splitmix64(&mut sm),
        ];
        Self {
            s,
            gaussian_spare: None,
        }
    }

    /// Next raw 64-bit value.
    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        let s = &mut self.s;
        let result = s[1].wrapping_mul(5).rotate_left(7).wrapping_mul(9);
        let t = s[1] << 17;
        s[2] ^= s[0];
        s[3] ^= s[1];
        s[1] ^= s[2];
        s[0] ^= s[3];
        s[2] ^= t;
        s[3] = s[3].rotate_left(45);
        result
    }

    /// Uniform in `[0, 1)` with 53-bit resolution.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[lo, hi)`.
    #[inline]
    pub fn next_in_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Standard normal deviate via Box–Muller.
    pub fn next_gaussian(&mut self) -> f64 {
        if let Some(z) = self.gaussian_spare.take() {
            return z;
        }
        // u1 in (0, 1] keeps the log finite.
        let u1 = ((self.next_u64() >> 11) as f64 + 1.0) * (1.0 / (1u64 << 53) as f64);
        let u2 = self.next_f64();
        let r = fmath::sqrt(-2.0 * fmath::ln(u1));
        let theta = 2.0 * core::f64::consts::PI * u2;
        self.gaussian_spare = Some(r * fmath::sin(theta));
        r * fmath::cos(theta)
    }

    /// Unbiased integer in `0..n` by rejection sampling.
    pub fn next_index(&mut self, n: usize) -> usize {
        assert!(n > 0, "next_index needs a non-empty range");
        let n = n as u64;
        // 2^64 mod n, computed without overflow.
        let rem = (u64::MAX % n + 1) % n;
        let limit = u64::MAX - rem; // accept v <= limit
        loop {
            let v = self.next_u64();
            if v <= limit {
                return (v % n) as usize;
            }
        }
    }

    /// In-place Fisher–Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.next_index(i + 1);
            items.swap(i, j);
        }
    }

    /// A shuffled `0..n` index vector.
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        self.shuffle(&mut idx);
        idx
    }
}
