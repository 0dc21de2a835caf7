use serde::{Deserialize, Serialize};

use crate::bridge::{build_bridge_at, ScheduleParams};
use crate::data::{sample_data, ToyDistribution};
use crate::error::{Error, Result};
use crate::models::PotentialNet;
use crate::numerics::{backward, Rng, Tape, Tensor};

/// Per-sample input gradient `∇_x V(x)`, shape `[B×D]`.
pub fn potential_saliency(net: &PotentialNet, xt: &Tensor) -> Result<Tensor> {
    let tape = Tape::new();
    let x = tape.var(xt);
    let total = net.forward_with(&net.params().constants(), &x)?.sum()?;
    Ok(backward(&total)?.wrt(&x))
}

/// Saliency of a batch of bridge samples at one time slice.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencySlice {
    pub t: f64,
    pub xt: Tensor,
    pub grad: Tensor,
}

impl SaliencySlice {
    /// Euclidean norm of each row of the gradient.
    pub fn norms(&self) -> Vec<f64> {
        let d = self.grad.shape()[1];
        self.grad.data().chunks_exact(d).map(|g| g.iter().map(|v| v * v).sum::<f64>().sqrt()).collect()
    }

    pub fn mean_norm(&self) -> f64 {
        let n = self.norms();
        n.iter().sum::<f64>() / n.len() as f64
    }
}

/// Gradient-norm summary for one time slice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SaliencySummary {
    pub t: f64,
    pub mean_norm: f64,
}

/// Bridge samples at each time in `times`, built from fresh data and noise
/// drawn from `rng`, with their potential saliency.
///
/// Every slice reuses the same `(x0, x1, ε)` so the slices differ only in `t`.
pub fn saliency_slices(
    net: &PotentialNet,
    dist: &ToyDistribution,
    schedule: &ScheduleParams,
    times: &[f64],
    n: usize,
    rng: &mut Rng,
) -> Result<Vec<SaliencySlice>> {
    if let Some(&t) = times.iter().find(|t| !(0.0..=1.0).contains(*t)) {
        return Err(Error::OutOfRange {
            name: "t",
            value: t,
            range: "[0, 1]",
        });
    }
    let x1 = sample_data(dist, n, rng)?;
    let d = x1.shape()[1];
    let x0 = rng.standard_normal(&[n, d]);
    let eps = rng.standard_normal(&[n, d]);
    times
        .iter()
        .map(|&t| {
            let b = build_bridge_at(&x0, &x1, &Tensor::full(&[n], t), &eps, schedule)?;
            let grad = potential_saliency(net, &b.xt)?;
            Ok(SaliencySlice { t, xt: b.xt, grad })
        })
        .collect()
}
