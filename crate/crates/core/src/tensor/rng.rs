//! Seeded, stream-addressable random source.
//!
//! `RngState` is a ChaCha20 keystream keyed by `seed` with `stream` as the
//! 64-bit stream selector, so every `(seed, stream)` pair names an
//! independent, reproducible sequence. Sub-streams for structured sampling
//! (per view, per window, ...) are derived by hashing a path of indices into
//! a new stream id with the SplitMix64 finalizer.
//!
//! Normal variates use the Box–Muller transform. Each pair of `u64` draws
//! yields two samples; `u1` takes the top 53 bits shifted into `(0, 1]` so
//! the logarithm never sees zero. For an odd element count the final sine
//! sample is discarded. This mapping is part of the format contract and must
//! not change between versions.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use super::Tensor;
use crate::error::Result;

const TWO_POW_MINUS_53: f64 = 1.0 / (1u64 << 53) as f64;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Debug)]
pub struct RngState {
    seed: u64,
    stream: u64,
    inner: ChaCha20Rng,
}

impl RngState {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha20Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self {
            seed,
            stream,
            inner,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// A fresh state on the same seed whose stream id is derived from this
    /// state's stream and `path`. Independent of how far `self` has advanced.
    pub fn substream(&self, path: &[u64]) -> RngState {
        let mut h = splitmix64(self.stream);
        for &p in path {
            h = splitmix64(h ^ splitmix64(p.wrapping_add(0x632B_E59B_D9B4_E019)));
        }
        RngState::new(self.seed, h)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * TWO_POW_MINUS_53
    }

    /// Fills `out` with i.i.d. standard normal samples.
    pub fn fill_normal(&mut self, out: &mut [f64]) {
        let mut chunks = out.chunks_exact_mut(2);
        for pair in &mut chunks {
            let (a, b) = self.box_muller();
            pair[0] = a;
            pair[1] = b;
        }
        if let [last] = chunks.into_remainder() {
            *last = self.box_muller().0;
        }
    }

    fn box_muller(&mut self) -> (f64, f64) {
        let u1 = ((self.next_u64() >> 11) + 1) as f64 * TWO_POW_MINUS_53;
        let u2 = (self.next_u64() >> 11) as f64 * TWO_POW_MINUS_53;
        let r = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
        (r * c, r * s)
    }
}

/// Draws a tensor of i.i.d. N(0, 1) samples, advancing `rng`.
pub fn standard_normal(shape: &[usize], rng: &mut RngState) -> Result<Tensor> {
    let mut t = Tensor::zeros(shape)?;
    rng.fill_normal(t.data_mut());
    Ok(t)
}
