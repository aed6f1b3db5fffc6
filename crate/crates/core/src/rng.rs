//! Deterministic per-tree random streams.
//!
//! A [`RandomSource`] is a ChaCha8 generator keyed by a 64-bit seed and
//! positioned on one of 2^64 independent streams. Every tree in a forest and
//! every Monte-Carlo trial owns exactly one stream, so results do not depend
//! on how work is scheduled across threads.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{arg, Result};

#[derive(Clone, Debug)]
pub struct RandomSource {
    seed: u64,
    stream: u64,
    rng: ChaCha8Rng,
}

/// Serializable position of a [`RandomSource`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceState {
    pub seed: u64,
    pub stream: u64,
    /// Word position in the ChaCha keystream, as a decimal string (u128).
    pub word_pos: String,
}

impl RandomSource {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { seed, stream, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// A fresh source on the same seed with a different stream id. Pure in
    /// `(seed, stream)`; the state of `self` is not consulted.
    pub fn child(&self, stream: u64) -> Self {
        Self::new(self.seed, stream)
    }

    pub fn state(&self) -> SourceState {
        SourceState {
            seed: self.seed,
            stream: self.stream,
            word_pos: self.rng.get_word_pos().to_string(),
        }
    }

    pub fn from_state(state: &SourceState) -> Result<Self> {
        let pos: u128 = match state.word_pos.parse() {
            Ok(p) => p,
            Err(_) => return arg(format!("bad word position {:?}", state.word_pos)),
        };
        let mut src = Self::new(state.seed, state.stream);
        src.rng.set_word_pos(pos);
        Ok(src)
    }

    /// Uniform draw in the open interval (0, 1).
    fn open01(&mut self) -> f64 {
        loop {
            // 53 random mantissa bits; reject the single zero outcome.
            let u = (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
            if u > 0.0 {
                return u;
            }
        }
    }

    /// Draw from Exp(rate). A zero rate yields `f64::INFINITY`: a cell with
    /// zero linear dimension never splits.
    pub fn exponential(&mut self, rate: f64) -> Result<f64> {
        if !(rate >= 0.0) {
            return arg(format!("exponential rate must be >= 0, got {rate}"));
        }
        if rate == 0.0 {
            return Ok(f64::INFINITY);
        }
        Ok(-self.open01().ln() / rate)
    }

    /// Uniform draw in `[a, b]`; returns `a` when the interval is degenerate.
    pub fn uniform(&mut self, a: f64, b: f64) -> Result<f64> {
        if !(a <= b) {
            return arg(format!("uniform bounds out of order: [{a}, {b}]"));
        }
        if a == b {
            return Ok(a);
        }
        let u: f64 = self.rng.random();
        Ok((a + u * (b - a)).min(b))
    }

    /// Index `j` with probability `weights[j] / sum(weights)`.
    pub fn categorical(&mut self, weights: &[f64]) -> Result<usize> {
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return arg("categorical weights must be finite and nonnegative");
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return arg("categorical weights must contain a positive entry");
        }
        let target = self.rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut last_positive = 0;
        for (j, &w) in weights.iter().enumerate() {
            if w > 0.0 {
                acc += w;
                last_positive = j;
                if target < acc {
                    return Ok(j);
                }
            }
        }
        // Rounding left `target` at or past the accumulated total.
        Ok(last_positive)
    }

    /// Standard normal draw (Box-Muller, one value per call).
    pub fn standard_normal(&mut self) -> f64 {
        let u1 = self.open01();
        let u2: f64 = self.rng.random();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    pub fn unit(&mut self) -> f64 {
        self.rng.random()
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.unit() < p
    }
}
