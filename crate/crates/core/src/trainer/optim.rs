use crate::error::{Error, Result};
use crate::models::ParamSet;

/// Adam with bias correction. No weight decay, warmup or clipping.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Number of updates taken.
    pub t: u64,
    /// First moments, one buffer per parameter block.
    pub m: Vec<Vec<f64>>,
    /// Second moments, one buffer per parameter block.
    pub v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(params: &ParamSet) -> Self {
        let zeros = || params.iter().map(|p| vec![0.0; p.values.len()]).collect::<Vec<_>>();
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// One update of `params` from `grads`, which must mirror its layout.
    pub fn step(&mut self, params: &mut ParamSet, grads: &[Vec<f64>], lr: f64) -> Result<()> {
        if grads.len() != params.len() || self.m.len() != params.len() {
            return Err(Error::shape("adam blocks", &[params.len()], &[grads.len()]));
        }
        for (i, g) in grads.iter().enumerate() {
            if g.len() != self.m[i].len() {
                return Err(Error::shape("adam block", &[self.m[i].len()], &[g.len()]));
            }
        }
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.t.min(i32::MAX as u64) as i32);
        let c2 = 1.0 - b2.powi(self.t.min(i32::MAX as u64) as i32);
        for (i, g) in grads.iter().enumerate() {
            let p = params.values_mut(i);
            for (((pj, gj), mj), vj) in p.iter_mut().zip(g).zip(&mut self.m[i]).zip(&mut self.v[i]) {
                *mj = b1 * *mj + (1.0 - b1) * gj;
                *vj = b2 * *vj + (1.0 - b2) * gj * gj;
                *pj -= lr * (*mj / c1) / ((*vj / c2).sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
