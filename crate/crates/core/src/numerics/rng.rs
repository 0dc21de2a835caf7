//! Seeded random streams.
//!
//! The generator is xoshiro256** (Blackman & Vigna), seeded from a `u64`
//! through SplitMix64. Uniforms on `[0, 1)` take the top 53 bits of each
//! output: `(x >> 11) · 2⁻⁵³`. Standard normals use the Box–Muller transform
//! on consecutive uniform pairs `(u₁, u₂)`:
//!
//! ```text
//! r = sqrt(-2 ln(1 - u₁)),  z₀ = r cos(2π u₂),  z₁ = r sin(2π u₂)
//! ```
//!
//! Both outputs of a pair are used in order; a request for an odd count
//! discards the final `z₁`, so no state is carried between calls.
//!
//! Independent streams come from xoshiro's `jump()` (2¹²⁸ steps), which
//! guarantees they never overlap.

use rand_core::{Rng as _, SeedableRng};
use rand_xoshiro::Xoshiro256StarStar;
use serde::{Deserialize, Serialize};

use super::tensor::Tensor;

/// Named stream ids derived from a run seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    /// Data batches, bridge noise and contrastive noise during training.
    Train = 0,
    /// Held-out reference draws for metrics.
    Eval = 1,
    /// Euler–Maruyama initial states and increments.
    Sampler = 2,
    /// Random projection directions for sliced Wasserstein.
    Projections = 3,
    /// Parameter initialization.
    Init = 4,
}

/// Raw generator state, four little-endian `u64` words.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState(pub [u64; 4]);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rng {
    inner: Xoshiro256StarStar,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng {
            inner: Xoshiro256StarStar::seed_from_u64(seed),
        }
    }

    /// Stream `stream` of `seed`: the base generator jumped `stream` times.
    pub fn stream(seed: u64, stream: Stream) -> Self {
        let mut rng = Rng::new(seed);
        for _ in 0..stream as usize {
            rng.inner.jump();
        }
        rng
    }

    pub fn state(&self) -> RngState {
        let bytes = self.inner.state();
        let mut words = [0u64; 4];
        for (w, chunk) in words.iter_mut().zip(bytes.chunks_exact(8)) {
            *w = u64::from_le_bytes(chunk.try_into().expect("8-byte chunk"));
        }
        RngState(words)
    }

    pub fn from_state(state: RngState) -> Self {
        let mut bytes = [0u8; 32];
        for (chunk, w) in bytes.chunks_exact_mut(8).zip(state.0) {
            chunk.copy_from_slice(&w.to_le_bytes());
        }
        Rng {
            inner: Xoshiro256StarStar::from_seed(bytes),
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform01(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `0..n` (multiply-shift on 53-bit uniforms).
    pub fn index(&mut self, n: usize) -> usize {
        ((self.uniform01() * n as f64) as usize).min(n.saturating_sub(1))
    }

    pub fn fill_uniform(&mut self, out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = self.uniform01());
    }

    pub fn fill_normal(&mut self, out: &mut [f64]) {
        for pair in out.chunks_mut(2) {
            let u1 = self.uniform01();
            let u2 = self.uniform01();
            let r = (-2.0 * (1.0 - u1).ln()).sqrt();
            let theta = std::f64::consts::TAU * u2;
            pair[0] = r * theta.cos();
            if let Some(second) = pair.get_mut(1) {
                *second = r * theta.sin();
            }
        }
    }

    pub fn normal(&mut self) -> f64 {
        let mut v = [0.0];
        self.fill_normal(&mut v);
        v[0]
    }

    /// Tensor of i.i.d. standard normals.
    pub fn standard_normal(&mut self, shape: &[usize]) -> Tensor {
        let mut data = vec![0.0; shape.iter().product()];
        self.fill_normal(&mut data);
        Tensor::new(shape, data).expect("shape and buffer agree")
    }

    /// Tensor of i.i.d. uniforms on `[0, 1)`.
    pub fn uniform(&mut self, shape: &[usize]) -> Tensor {
        let mut data = vec![0.0; shape.iter().product()];
        self.fill_uniform(&mut data);
        Tensor::new(shape, data).expect("shape and buffer agree")
    }
}

/// Free-function form of [`Rng::standard_normal`].
pub fn rng_standard_normal(rng: &mut Rng, shape: &[usize]) -> Tensor {
    rng.standard_normal(shape)
}

/// Free-function form of [`Rng::uniform`].
pub fn rng_uniform01(rng: &mut Rng, shape: &[usize]) -> Tensor {
    rng.uniform(shape)
}
