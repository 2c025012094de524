//! Deterministic random streams.
//!
//! All sampling in the laboratory is driven by SplitMix64, a counter-based
//! 64-bit generator chosen so that runs can be reproduced bit-for-bit from a
//! seed in any language. The generator is fully specified here:
//!
//! * state update: `state += 0x9E3779B97F4A7C15` (the 64-bit golden ratio);
//! * output: `z = state; z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9;
//!   z = (z ^ (z >> 27)) * 0x94D049BB133111EB; return z ^ (z >> 31)`.
//!
//! Uniform doubles take the top 53 bits: `(x >> 11) * 2^-53`, giving values
//! in `[0, 1)`. Gaussians use the Box-Muller transform on two such doubles.
//! Independent streams for parallel runs are derived by seeding a stream
//! with the output of another SplitMix64 step (see [`SplitMix64::derive`]).

/// SplitMix64 generator state.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    /// Next raw 64-bit output.
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform double in `[0, 1)` from the top 53 bits.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform double in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Index in `0..n` with equal probability.
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        (self.next_f64() * n as f64) as usize % n
    }

    /// Sample an index from an (unnormalized is fine) probability row via
    /// inverse CDF; the last index absorbs rounding mass.
    pub fn choice(&mut self, probs: &[f64]) -> usize {
        let total: f64 = probs.iter().sum();
        let mut u = self.next_f64() * total;
        for (i, &p) in probs.iter().enumerate() {
            u -= p;
            if u < 0.0 {
                return i;
            }
        }
        probs.len() - 1
    }

    /// Standard normal via Box-Muller.
    pub fn gauss(&mut self) -> f64 {
        // u1 in (0,1] so the log is finite
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Derive an independent stream keyed by `index`.
    ///
    /// The child seed is the `index + 1`-th output of a fresh SplitMix64
    /// seeded with this stream's seed material, so `derive(s, i)` is a pure
    /// function of `(seed, index)` and streams never depend on scheduling.
    pub fn derive(seed: u64, index: u64) -> SplitMix64 {
        let mut root = SplitMix64::new(seed ^ index.wrapping_mul(GOLDEN));
        let child = root.next_u64();
        SplitMix64::new(child)
    }
}
