//! Seeded, counter-based pseudorandom streams.
//!
//! The generator is SplitMix64: the state is a 64-bit counter advanced by the
//! golden-ratio increment, and each output is the counter passed through the
//! SplitMix64 finalizer. It is tiny, has no platform-dependent behaviour and
//! is trivial to port, so the same seed produces the same stream everywhere.
//!
//! Child streams are derived with [`mix`]:
//!
//! ```text
//! mix(seed, index) = finalize(seed + GOLDEN * (index + 1))      (wrapping)
//! finalize(z)      = z ^= z >> 30; z *= 0xBF58476D1CE4E5B9;
//!                    z ^= z >> 27; z *= 0x94D049BB133111EB;
//!                    z ^  z >> 31
//! ```
//!
//! Gaussians use Box-Muller on two consecutive uniforms. Both outputs are
//! consumed: the cosine branch is returned first, the sine branch is cached
//! and returned by the next call.

use std::f64::consts::PI;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn finalize(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives the seed of child stream `index` from a parent seed.
pub fn mix(seed: u64, index: u64) -> u64 {
    finalize(seed.wrapping_add(GOLDEN.wrapping_mul(index.wrapping_add(1))))
}

/// Derives a child seed from a byte string (e.g. an item id).
pub fn mix_bytes(seed: u64, bytes: &[u8]) -> u64 {
    // FNV-1a over the bytes, then the usual mix.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    mix(seed, h)
}

#[derive(Debug, Clone)]
pub struct SeededRng {
    seed: u64,
    state: u64,
    spare_gaussian: Option<f64>,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        SeededRng {
            seed,
            state: seed,
            spare_gaussian: None,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// A fresh generator for child stream `index` of this generator's seed.
    pub fn child(&self, index: u64) -> SeededRng {
        SeededRng::new(mix(self.seed, index))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN);
        finalize(self.state)
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `[0, n)`. `n` must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        // Lemire's multiply-shift; bias is < n / 2^64, irrelevant here.
        ((u128::from(self.next_u64()) * n as u128) >> 64) as usize
    }

    /// Uniform integer in `[lo, hi]`.
    pub fn range_inclusive(&mut self, lo: usize, hi: usize) -> usize {
        lo + self.below(hi - lo + 1)
    }

    pub fn gaussian(&mut self) -> f64 {
        if let Some(z) = self.spare_gaussian.take() {
            return z;
        }
        let u1 = self.uniform();
        let u2 = self.uniform();
        // 1 - u1 lies in (0, 1], so the log is finite.
        let r = (-2.0 * (1.0 - u1).ln()).sqrt();
        let theta = 2.0 * PI * u2;
        self.spare_gaussian = Some(r * theta.sin());
        r * theta.cos()
    }

    pub fn gaussian_vec(&mut self, n: usize, scale: f64) -> Vec<f64> {
        (0..n).map(|_| self.gaussian() * scale).collect()
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    /// Draws `k` distinct indices from `0..n`, in draw order.
    pub fn sample_without_replacement(&mut self, n: usize, k: usize) -> Vec<usize> {
        assert!(k <= n);
        let mut pool: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = i + self.below(n - i);
            pool.swap(i, j);
        }
        pool.truncate(k);
        pool
    }

    /// Draws an index with probability proportional to `weights[i]`.
    pub fn weighted_index(&mut self, cumulative: &[f64]) -> usize {
        let total = *cumulative.last().expect("empty weight table");
        let target = self.uniform() * total;
        cumulative
            .partition_point(|&c| c <= target)
            .min(cumulative.len() - 1)
    }
}

/// Running sums of `weights`, for use with [`SeededRng::weighted_index`].
pub fn cumulative_weights(weights: &[f64]) -> Vec<f64> {
    weights
        .iter()
        .scan(0.0, |acc, w| {
            *acc += w;
            Some(*acc)
        })
        .collect()
}
