use serde::{Deserialize, Serialize};

use super::params::ParamSet;
use crate::error::{Error, Result};
use crate::numerics::{Rng, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PotentialArch {
    pub hidden: Vec<usize>,
}

impl Default for PotentialArch {
    fn default() -> Self {
        PotentialArch { hidden: vec![128, 128] }
    }
}

/// Scalar score `V(x)`: a GELU MLP with a one-unit head.
///
/// The network sees only the sample, never a time value.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialNet {
    arch: PotentialArch,
    data_dim: usize,
    params: ParamSet,
}

impl PotentialNet {
    pub fn new(arch: PotentialArch, data_dim: usize, rng: &mut Rng) -> Result<Self> {
        if data_dim == 0 || arch.hidden.contains(&0) {
            return Err(Error::Config(format!("degenerate potential architecture {arch:?} for D={data_dim}")));
        }
        let mut params = ParamSet::new();
        let mut fan_in = data_dim;
        for (l, &h) in arch.hidden.iter().enumerate() {
            params.push_linear(&format!("layer{l}"), fan_in, h, rng, false)?;
            fan_in = h;
        }
        params.push_linear("head", fan_in, 1, rng, false)?;
        Ok(PotentialNet { arch, data_dim, params })
    }

    pub fn arch(&self) -> &PotentialArch {
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

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.forward_with(&self.params.constants(), x)
    }

    /// `[B×D] → [B]`, with explicitly bound weights.
    pub fn forward_with(&self, w: &[Tensor], x: &Tensor) -> Result<Tensor> {
        let (b, d) = x.dims2()?;
        if d != self.data_dim {
            return Err(Error::shape("potential input", &[b, self.data_dim], x.shape()));
        }
        if w.len() != self.params.len() {
            return Err(Error::shape("potential weights", &[self.params.len()], &[w.len()]));
        }
        let mut h = x.clone();
        for l in 0..self.arch.hidden.len() {
            h = h.matmul(&w[2 * l])?.add_row(&w[2 * l + 1])?.gelu()?;
        }
        let head = 2 * self.arch.hidden.len();
        h.matmul(&w[head])?.add_row(&w[head + 1])?.reshape(&[b])
    }
}

pub fn potential_forward(net: &PotentialNet, x: &Tensor) -> Result<Tensor> {
    net.forward(x)
}
