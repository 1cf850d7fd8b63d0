//! Counter-addressed random streams.
//!
//! Every draw is addressed by `(seed, path, step)`: the seed keys a ChaCha8
//! generator, the path index selects its stream and the step index its word
//! position. Simulating path 17 alone, or all paths in any order on any
//! number of threads, yields identical numbers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// 32-bit words reserved for a single step (four `u64` draws).
const WORDS_PER_STEP: u128 = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamKey {
    pub seed: u64,
}

impl StreamKey {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    /// Generator positioned at the start of `(path, step)`'s block.
    pub fn at(&self, path: u64, step: u64) -> StepRng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(path);
        rng.set_word_pos(step as u128 * WORDS_PER_STEP);
        StepRng { rng, used: 0 }
    }
}

/// A generator restricted to one step's block of draws.
#[derive(Debug, Clone)]
pub struct StepRng {
    rng: ChaCha8Rng,
    used: u8,
}

impl StepRng {
    /// Uniform on the open interval (0, 1).
    pub fn open01(&mut self) -> f64 {
        debug_assert!((self.used as u128) < WORDS_PER_STEP / 2, "step block exhausted");
        self.used += 1;
        // 52 random mantissa bits, offset by half an ulp so 0 is never hit.
        let bits = self.rng.random::<u64>() >> 12;
        (bits as f64 + 0.5) / (1u64 << 52) as f64
    }

    /// Standard normal via Box–Muller; consumes two uniforms.
    pub fn normal_pair(&mut self) -> (f64, f64) {
        let u1 = self.open01();
        let u2 = self.open01();
        let r = (-2.0 * u1.ln()).sqrt();
        let th = 2.0 * std::f64::consts::PI * u2;
        (r * th.cos(), r * th.sin())
    }
}
