//! Cosine interpolation schedule, sinusoidal bridge width, and the
//! stochastic bridge between a noise draw `x0` and a data point `x1`:
//!
//! ```text
//! x_t  = α(t)·x1 + (1 − α(t))·x0 + σ(t)·ε
//! ẋ_t  = α'(t)·(x1 − x0) + σ'(t)·ε
//! α(t) = sin²(πt/2)          α'(t) = (π/2)·sin(πt)
//! σ(t) = σ_max·sin(πt)       σ'(t) = σ_max·π·cos(πt)
//! ```

use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Rng, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleParams {
    /// Peak bridge width, reached at `t = 0.5`.
    pub sigma_max: f64,
}

impl Default for ScheduleParams {
    fn default() -> Self {
        ScheduleParams { sigma_max: 0.01 }
    }
}

impl ScheduleParams {
    pub fn new(sigma_max: f64) -> Result<Self> {
        let s = ScheduleParams { sigma_max };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_max >= 0.0 && self.sigma_max.is_finite()) {
            return Err(Error::OutOfRange {
                name: "sigma_max",
                value: self.sigma_max,
                range: "[0, inf)",
            });
        }
        Ok(())
    }
}

fn check_t(t: f64) -> Result<()> {
    if (0.0..=1.0).contains(&t) {
        Ok(())
    } else {
        Err(Error::OutOfRange {
            name: "t",
            value: t,
            range: "[0, 1]",
        })
    }
}

pub fn alpha(t: f64) -> Result<f64> {
    check_t(t)?;
    Ok((FRAC_PI_2 * t).sin().powi(2))
}

pub fn sigma(t: f64, s: &ScheduleParams) -> Result<f64> {
    check_t(t)?;
    Ok(s.sigma_max * (PI * t).sin())
}

pub fn alpha_prime(t: f64) -> Result<f64> {
    check_t(t)?;
    Ok(FRAC_PI_2 * (PI * t).sin())
}

pub fn sigma_prime(t: f64, s: &ScheduleParams) -> Result<f64> {
    check_t(t)?;
    Ok(s.sigma_max * PI * (PI * t).cos())
}

/// One minibatch of bridge samples and their regression targets.
#[derive(Debug, Clone, PartialEq)]
pub struct BridgeBatch {
    pub x0: Tensor,
    pub x1: Tensor,
    pub eps: Tensor,
    /// Per-row time, shape `[B]`.
    pub t: Tensor,
    pub xt: Tensor,
    pub target_velocity: Tensor,
}

impl BridgeBatch {
    pub fn batch_size(&self) -> usize {
        self.t.numel()
    }
}

/// Draws `t ~ U(0,1)` per row, then `ε ~ N(0, I)`, and assembles the bridge.
///
/// The result carries no tape linkage: bridge samples are data.
pub fn build_bridge(x0: &Tensor, x1: &Tensor, rng: &mut Rng, s: &ScheduleParams) -> Result<BridgeBatch> {
    let (b, d) = x0.dims2()?;
    if x1.shape() != x0.shape() {
        return Err(Error::shape("build_bridge", x0.shape(), x1.shape()));
    }
    if b == 0 {
        return Err(Error::Empty("build_bridge"));
    }
    let t = rng.uniform(&[b]);
    let eps = rng.standard_normal(&[b, d]);
    build_bridge_at(x0, x1, &t, &eps, s)
}

/// Deterministic bridge at given per-row times and noise.
pub fn build_bridge_at(
    x0: &Tensor,
    x1: &Tensor,
    t: &Tensor,
    eps: &Tensor,
    s: &ScheduleParams,
) -> Result<BridgeBatch> {
    let (b, d) = x0.dims2()?;
    if x1.shape() != x0.shape() {
        return Err(Error::shape("build_bridge", x0.shape(), x1.shape()));
    }
    if eps.shape() != x0.shape() {
        return Err(Error::shape("build_bridge", x0.shape(), eps.shape()));
    }
    if t.shape() != [b] {
        return Err(Error::shape("build_bridge", &[b], t.shape()));
    }
    s.validate()?;

    let mut xt = vec![0.0; b * d];
    let mut vel = vec![0.0; b * d];
    for i in 0..b {
        let ti = t.data()[i];
        let (a, sg) = (alpha(ti)?, sigma(ti, s)?);
        let (da, dsg) = (alpha_prime(ti)?, sigma_prime(ti, s)?);
        let (r0, r1, re) = (x0.row(i), x1.row(i), eps.row(i));
        for j in 0..d {
            xt[i * d + j] = a * r1[j] + (1.0 - a) * r0[j] + sg * re[j];
            vel[i * d + j] = da * (r1[j] - r0[j]) + dsg * re[j];
        }
    }
    Ok(BridgeBatch {
        x0: x0.stop_gradient(),
        x1: x1.stop_gradient(),
        eps: eps.stop_gradient(),
        t: t.stop_gradient(),
        xt: Tensor::new(&[b, d], xt)?,
        target_velocity: Tensor::new(&[b, d], vel)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const S: ScheduleParams = ScheduleParams { sigma_max: 0.01 };

    #[test]
    fn schedule_values() {
        assert_eq!(alpha(0.0).unwrap(), 0.0);
        assert_eq!(alpha(1.0).unwrap(), 1.0);
        assert!((alpha(0.5).unwrap() - 0.5).abs() < 1e-15);
        // sin²(π/8) = (1 − cos(π/4))/2
        let expected = (1.0 - std::f64::consts::FRAC_1_SQRT_2) / 2.0;
        assert!((alpha(0.25).unwrap() - expected).abs() < 1e-15);
        assert!((alpha(0.25).unwrap() - 0.146447).abs() < 1e-6);
        assert!(sigma(0.0, &S).unwrap().abs() < 1e-12);
        assert!(sigma(1.0, &S).unwrap().abs() < 1e-12);
        assert_eq!(sigma(0.5, &S).unwrap(), 0.01);
        assert!((alpha_prime(0.5).unwrap() - FRAC_PI_2).abs() < 1e-15);
        assert!(sigma_prime(0.5, &S).unwrap().abs() < 1e-15);
    }

    #[test]
    fn zero_width_is_deterministic() {
        let s = ScheduleParams::new(0.0).unwrap();
        for t in [0.0, 0.3, 0.5, 0.9, 1.0] {
            assert_eq!(sigma(t, &s).unwrap(), 0.0);
            assert_eq!(sigma_prime(t, &s).unwrap(), 0.0);
        }
    }

    #[test]
    fn t_outside_unit_interval_rejected() {
        for t in [-0.1, 1.0001, f64::NAN] {
            assert!(alpha(t).is_err());
            assert!(sigma(t, &S).is_err());
            assert!(alpha_prime(t).is_err());
            assert!(sigma_prime(t, &S).is_err());
        }
        assert!(ScheduleParams::new(-1.0).is_err());
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let mut rng = Rng::new(11);
        let s = ScheduleParams::new(0.3).unwrap();
        let h = 1e-6;
        for _ in 0..50 {
            let t = 0.01 + 0.98 * rng.uniform01();
            let fd_a = (alpha(t + h).unwrap() - alpha(t - h).unwrap()) / (2.0 * h);
            let fd_s = (sigma(t + h, &s).unwrap() - sigma(t - h, &s).unwrap()) / (2.0 * h);
            let (a, sp) = (alpha_prime(t).unwrap(), sigma_prime(t, &s).unwrap());
            assert!((fd_a - a).abs() <= 1e-8 * a.abs().max(1.0), "t={t}");
            assert!((fd_s - sp).abs() <= 1e-8 * sp.abs().max(1.0), "t={t}");
        }
    }

    #[test]
    fn hand_bridge_at_midpoint() {
        let x0 = Tensor::new(&[1, 1], vec![0.0]).unwrap();
        let x1 = Tensor::new(&[1, 1], vec![1.0]).unwrap();
        let eps = Tensor::new(&[1, 1], vec![0.0]).unwrap();
        let b = build_bridge_at(&x0, &x1, &Tensor::vector(&[0.5]), &eps, &S).unwrap();
        assert!((b.xt.data()[0] - 0.5).abs() < 1e-15);
        assert!((b.target_velocity.data()[0] - FRAC_PI_2).abs() < 1e-15);
    }

    #[test]
    fn endpoints_reproduce_inputs() {
        let mut rng = Rng::new(3);
        let x0 = rng.standard_normal(&[6, 3]);
        let x1 = rng.standard_normal(&[6, 3]);
        let eps = rng.standard_normal(&[6, 3]);
        let at0 = build_bridge_at(&x0, &x1, &Tensor::zeros(&[6]), &eps, &S).unwrap();
        let at1 = build_bridge_at(&x0, &x1, &Tensor::ones(&[6]), &eps, &S).unwrap();
        for i in 0..18 {
            let tol = 1e-12 * (1.0 + eps.data()[i].abs() * S.sigma_max);
            assert!((at0.xt.data()[i] - x0.data()[i]).abs() <= tol);
            assert!((at1.xt.data()[i] - x1.data()[i]).abs() <= tol);
        }
    }

    #[test]
    fn shapes_checked() {
        let mut rng = Rng::new(0);
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[3, 2]);
        assert!(build_bridge(&a, &b, &mut rng, &S).is_err());
        assert!(build_bridge(&Tensor::zeros(&[0, 2]), &Tensor::zeros(&[0, 2]), &mut rng, &S).is_err());
    }

    #[test]
    fn sampled_bridge_satisfies_its_identities() {
        let mut rng = Rng::new(9);
        let x0 = rng.standard_normal(&[32, 2]);
        let x1 = rng.standard_normal(&[32, 2]);
        let b = build_bridge(&x0, &x1, &mut rng, &S).unwrap();
        assert!(!b.xt.requires_grad());
        for i in 0..32 {
            let t = b.t.data()[i];
            assert!((0.0..1.0).contains(&t));
            let (a, s) = (alpha(t).unwrap(), sigma(t, &S).unwrap());
            for j in 0..2 {
                let k = i * 2 + j;
                let want = a * x1.data()[k] + (1.0 - a) * x0.data()[k] + s * b.eps.data()[k];
                assert_eq!(b.xt.data()[k], want);
            }
        }
    }
}
