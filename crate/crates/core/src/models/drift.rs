//! Time-conditioned velocity MLP.
//!
//! ```text
//! e      = [sin(f_k t), cos(f_k t)]_k          f_k geometric in [1, 1000]
//! τ      = SiLU(W₂ · SiLU(W₁ e + b₁) + b₂)     two-layer time projection
//! h₀     = x
//! h_l    = SiLU((A_l h_{l-1} + a_l) ⊙ (1 + scale_l(τ)) + shift_l(τ))
//! f(x,t) = W_out h_L + b_out                    W_out, b_out start at zero
//! ```

use serde::{Deserialize, Serialize};

use super::params::ParamSet;
use crate::error::{Error, Result};
use crate::numerics::{Rng, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DriftArch {
    pub hidden: Vec<usize>,
    /// Number of sinusoid frequencies; the embedding has twice as many features.
    pub time_freqs: usize,
    /// Width of the projected time vector fed to every FiLM layer.
    pub time_dim: usize,
}

impl Default for DriftArch {
    fn default() -> Self {
        DriftArch {
            hidden: vec![256, 256, 256],
            time_freqs: 64,
            time_dim: 128,
        }
    }
}

/// `[sin(f_k t) …, cos(f_k t) …]` per row, frequencies geometric from 1 to 1000.
pub fn sinusoidal_embedding(t: &[f64], n_freqs: usize) -> Tensor {
    let freqs: Vec<f64> = (0..n_freqs)
        .map(|k| {
            if n_freqs > 1 {
                1000f64.powf(k as f64 / (n_freqs - 1) as f64)
            } else {
                1.0
            }
        })
        .collect();
    let width = 2 * n_freqs;
    let mut data = vec![0.0; t.len() * width];
    for (row, &ti) in data.chunks_exact_mut(width.max(1)).zip(t) {
        for (k, f) in freqs.iter().enumerate() {
            row[k] = (f * ti).sin();
            row[n_freqs + k] = (f * ti).cos();
        }
    }
    Tensor::new(&[t.len(), width], data).expect("embedding shape")
}

#[derive(Debug, Clone, PartialEq)]
pub struct DriftNet {
    arch: DriftArch,
    data_dim: usize,
    params: ParamSet,
}

/// How time features modulate the hidden activations.
enum TimeMode {
    /// One time value per row.
    PerRow,
    /// A single time shared by every row; the time path runs once.
    Shared,
}

impl DriftNet {
    pub fn new(arch: DriftArch, data_dim: usize, rng: &mut Rng) -> Result<Self> {
        if data_dim == 0 || arch.hidden.is_empty() || arch.hidden.contains(&0) || arch.time_freqs == 0 || arch.time_dim == 0 {
            return Err(Error::Config(format!("degenerate drift architecture {arch:?} for D={data_dim}")));
        }
        let mut params = ParamSet::new();
        let t_dim = arch.time_dim;
        params.push_linear("time.0", 2 * arch.time_freqs, t_dim, rng, false)?;
        params.push_linear("time.1", t_dim, t_dim, rng, false)?;
        for (l, &h) in arch.hidden.iter().enumerate() {
            params.push_linear(&format!("film{l}.scale"), t_dim, h, rng, false)?;
            params.push_linear(&format!("film{l}.shift"), t_dim, h, rng, false)?;
        }
        let mut fan_in = data_dim;
        for (l, &h) in arch.hidden.iter().enumerate() {
            params.push_linear(&format!("layer{l}"), fan_in, h, rng, false)?;
            fan_in = h;
        }
        params.push_linear("out", fan_in, data_dim, rng, true)?;
        Ok(DriftNet { arch, data_dim, params })
    }

    pub fn arch(&self) -> &DriftArch {
        &self.arch
    }

    pub fn data_dim(&self) -> usize {
        self.data_dim
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.num_values()
    }

    fn check_input(&self, x: &Tensor) -> Result<usize> {
        let (b, d) = x.dims2()?;
        if d != self.data_dim {
            return Err(Error::shape("drift input", &[b, self.data_dim], x.shape()));
        }
        Ok(b)
    }

    fn check_times(t: &[f64]) -> Result<()> {
        match t.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            Some(&value) => Err(Error::OutOfRange {
                name: "t",
                value,
                range: "[0, 1]",
            }),
            None => Ok(()),
        }
    }

    /// Velocity prediction with per-row times `t` (`[B]`), no gradient tracking.
    pub fn forward(&self, x: &Tensor, t: &Tensor) -> Result<Tensor> {
        self.forward_with(&self.params.constants(), x, t)
    }

    /// Forward pass with explicitly bound weights, e.g. from
    /// [`ParamSet::attach`] for a differentiable pass.
    pub fn forward_with(&self, w: &[Tensor], x: &Tensor, t: &Tensor) -> Result<Tensor> {
        let b = self.check_input(x)?;
        if t.shape() != [b] {
            return Err(Error::shape("drift time", &[b], t.shape()));
        }
        Self::check_times(t.data())?;
        self.run(w, x, t.data(), TimeMode::PerRow)
    }

    /// Velocity at a single time shared by all rows. Same function as
    /// [`DriftNet::forward`] with a constant `t`, but the time path is
    /// evaluated once.
    pub fn velocity(&self, x: &Tensor, t: f64) -> Result<Tensor> {
        self.check_input(x)?;
        Self::check_times(&[t])?;
        self.run(&self.params.constants(), x, &[t], TimeMode::Shared)
    }

    fn run(&self, w: &[Tensor], x: &Tensor, t: &[f64], mode: TimeMode) -> Result<Tensor> {
        if w.len() != self.params.len() {
            return Err(Error::shape("drift weights", &[self.params.len()], &[w.len()]));
        }
        let depth = self.arch.hidden.len();
        let emb = sinusoidal_embedding(t, self.arch.time_freqs);
        let time = emb
            .matmul(&w[0])?
            .add_row(&w[1])?
            .silu()?
            .matmul(&w[2])?
            .add_row(&w[3])?
            .silu()?;
        let film = |l: usize| -> Result<(Tensor, Tensor)> {
            let i = 4 + 4 * l;
            let scale = time.matmul(&w[i])?.add_row(&w[i + 1])?.offset(1.0)?;
            let shift = time.matmul(&w[i + 2])?.add_row(&w[i + 3])?;
            Ok((scale, shift))
        };
        let layers = 4 + 4 * depth;
        let mut h = x.clone();
        for (l, &width) in self.arch.hidden.iter().enumerate() {
            let (scale, shift) = film(l)?;
            h = h.matmul(&w[layers + 2 * l])?.add_row(&w[layers + 2 * l + 1])?;
            h = match mode {
                TimeMode::PerRow => h.mul(&scale)?.add(&shift)?,
                TimeMode::Shared => h
                    .mul_row(&scale.reshape(&[width])?)?
                    .add_row(&shift.reshape(&[width])?)?,
            };
            h = h.silu()?;
        }
        let out = layers + 2 * depth;
        h.matmul(&w[out])?.add_row(&w[out + 1])
    }
}

/// Velocity prediction `f_θ(x, t)` for per-row times.
pub fn drift_forward(net: &DriftNet, x: &Tensor, t: &Tensor) -> Result<Tensor> {
    net.forward(x, t)
}
