//! Finite-difference audit of every gradient path used in training and
//! saliency.

use serde::{Deserialize, Serialize};

use super::saliency::potential_saliency;
use crate::bridge::{build_bridge, BridgeBatch, ScheduleParams};
use crate::data::{sample_data, ToyDistribution};
use crate::error::{Error, Result};
use crate::models::{DriftArch, DriftNet, ParamSet, PotentialArch, PotentialNet};
use crate::numerics::{backward, Rng, Tape, Tensor};
use crate::objective::{drift_loss, importance_weights, potential_loss, ObjectiveConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradcheckConfig {
    pub seed: u64,
    /// Central-difference step.
    pub step: f64,
    /// Largest accepted blockwise relative error.
    pub tolerance: f64,
    pub batch_size: usize,
    /// Standard deviation of the noise added to freshly initialized weights,
    /// so that zero-initialized layers do not hide upstream gradients.
    pub perturb: f64,
    pub objective: ObjectiveConfig,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig {
            seed: 0,
            step: 1e-6,
            tolerance: 1e-5,
            batch_size: 6,
            perturb: 0.3,
            objective: ObjectiveConfig::default(),
        }
    }
}

/// Comparison for one parameter block (or the input block `x`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockCheck {
    pub block: String,
    pub max_abs_err: f64,
    /// Largest magnitude among analytic and numeric entries of the block.
    pub scale: f64,
    /// `max_abs_err / scale`, or 0 when both gradients vanish.
    pub rel_err: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub requirement: String,
    pub blocks: Vec<BlockCheck>,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub config: GradcheckConfig,
    pub checks: Vec<CheckResult>,
    pub passed: bool,
}

impl GradcheckReport {
    /// `check/block` for every failing block.
    pub fn failures(&self) -> Vec<String> {
        self.checks
            .iter()
            .flat_map(|c| {
                let named: Vec<String> = c.blocks.iter().filter(|b| !b.passed).map(|b| format!("{}/{}", c.name, b.block)).collect();
                if named.is_empty() && !c.passed {
                    vec![c.name.clone()]
                } else {
                    named
                }
            })
            .collect()
    }

    /// Turns a failing report into an error naming the offending blocks.
    pub fn into_result(self) -> Result<GradcheckReport> {
        if self.passed {
            Ok(self)
        } else {
            Err(Error::Unsupported(format!("gradient check failed: {}", self.failures().join(", "))))
        }
    }
}

struct Fixture {
    drift: DriftNet,
    potential: PotentialNet,
    batch: BridgeBatch,
    z: Tensor,
}

fn fixture(cfg: &GradcheckConfig) -> Result<Fixture> {
    let mut rng = Rng::new(cfg.seed);
    let arch = DriftArch {
        hidden: vec![8, 8],
        time_freqs: 3,
        time_dim: 6,
    };
    let mut drift = DriftNet::new(arch, 2, &mut rng)?;
    drift.params_mut().perturb(&mut rng, cfg.perturb);
    let mut potential = PotentialNet::new(PotentialArch { hidden: vec![8, 8] }, 2, &mut rng)?;
    potential.params_mut().perturb(&mut rng, cfg.perturb);
    let x1 = sample_data(&ToyDistribution::default(), cfg.batch_size, &mut rng)?;
    let x0 = rng.standard_normal(&[cfg.batch_size, 2]);
    let batch = build_bridge(&x0, &x1, &mut rng, &ScheduleParams::default())?;
    let z = rng.standard_normal(&[cfg.batch_size, 2]);
    Ok(Fixture { drift, potential, batch, z })
}

fn compare(block: &str, analytic: &[f64], numeric: &[f64], tol: f64) -> BlockCheck {
    let max_abs_err = analytic.iter().zip(numeric).fold(0.0f64, |m, (a, n)| m.max((a - n).abs()));
    let scale = analytic.iter().chain(numeric).fold(0.0f64, |m, v| m.max(v.abs()));
    let rel_err = if scale > 0.0 { max_abs_err / scale } else { max_abs_err };
    BlockCheck {
        block: block.to_string(),
        max_abs_err,
        scale,
        rel_err,
        passed: rel_err <= tol && rel_err.is_finite(),
    }
}

/// Central differences of `loss` with respect to every value of `params`.
fn numeric_grads(params: &ParamSet, h: f64, loss: impl Fn(&ParamSet) -> Result<f64>) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        let mut g = Vec::with_capacity(params.param(i).values.len());
        for j in 0..params.param(i).values.len() {
            let mut plus = params.clone();
            plus.values_mut(i)[j] += h;
            let mut minus = params.clone();
            minus.values_mut(i)[j] -= h;
            g.push((loss(&plus)? - loss(&minus)?) / (2.0 * h));
        }
        out.push(g);
    }
    Ok(out)
}

fn param_check(name: &str, requirement: &str, params: &ParamSet, analytic: &[Vec<f64>], numeric: &[Vec<f64>], tol: f64) -> CheckResult {
    let blocks: Vec<BlockCheck> = params
        .iter()
        .zip(analytic.iter().zip(numeric))
        .map(|(p, (a, n))| compare(&p.name, a, n, tol))
        .collect();
    CheckResult {
        name: name.into(),
        requirement: requirement.into(),
        passed: blocks.iter().all(|b| b.passed),
        blocks,
    }
}

fn with_params<T: Clone>(net: &T, params: &ParamSet, set: impl Fn(&mut T) -> &mut ParamSet) -> T {
    let mut n = net.clone();
    *set(&mut n) = params.clone();
    n
}

/// Drift loss with the potential's weights computed on `potential`.
fn drift_objective(f: &Fixture, drift: &DriftNet, potential: &PotentialNet, cfg: &ObjectiveConfig) -> Result<f64> {
    let (w, _) = importance_weights(&potential.forward(&f.batch.xt)?, cfg)?;
    let pred = drift.forward(&f.batch.xt, &f.batch.t)?;
    drift_loss(&pred, &f.batch.target_velocity, &w)?.item()
}

/// Runs every check with [`GradcheckConfig::default`].
pub fn gradcheck_suite() -> Result<GradcheckReport> {
    gradcheck_suite_with(&GradcheckConfig::default())
}

pub fn gradcheck_suite_with(cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    cfg.objective.validate()?;
    let f = fixture(cfg)?;
    let (h, tol) = (cfg.step, cfg.tolerance);
    let detached = ObjectiveConfig { detach_weights: true, ..cfg.objective.clone() };
    let undetached = ObjectiveConfig { detach_weights: false, ..cfg.objective.clone() };
    let mut checks = Vec::new();

    // Drift parameters through the weighted drift loss.
    {
        let tape = Tape::new();
        let theta = f.drift.params().attach(&tape);
        let (w, _) = importance_weights(&f.potential.forward(&f.batch.xt)?, &detached)?;
        let pred = f.drift.forward_with(&theta, &f.batch.xt, &f.batch.t)?;
        let mut grads = backward(&drift_loss(&pred, &f.batch.target_velocity, &w)?)?;
        let analytic = f.drift.params().take_grads(&mut grads, &theta);
        let numeric = numeric_grads(f.drift.params(), h, |p| {
            drift_objective(&f, &with_params(&f.drift, p, DriftNet::params_mut), &f.potential, &detached)
        })?;
        checks.push(param_check("drift_params_via_drift_loss", "matches central differences", f.drift.params(), &analytic, &numeric, tol));
    }

    // Potential parameters through the potential loss.
    {
        let tape = Tape::new();
        let phi = f.potential.params().attach(&tape);
        let loss = potential_loss(&f.potential.forward_with(&phi, &f.batch.xt)?, &f.potential.forward_with(&phi, &f.z)?, &cfg.objective)?;
        let mut grads = backward(&loss)?;
        let analytic = f.potential.params().take_grads(&mut grads, &phi);
        let numeric = numeric_grads(f.potential.params(), h, |p| {
            let net = with_params(&f.potential, p, PotentialNet::params_mut);
            potential_loss(&net.forward(&f.batch.xt)?, &net.forward(&f.z)?, &cfg.objective)?.item()
        })?;
        checks.push(param_check("potential_params_via_potential_loss", "matches central differences", f.potential.params(), &analytic, &numeric, tol));
    }

    // Potential parameters through the drift loss, weights differentiable.
    // Detached and undetached losses have the same value, so one set of
    // central differences serves both checks.
    let numeric_phi = numeric_grads(f.potential.params(), h, |p| {
        drift_objective(&f, &f.drift, &with_params(&f.potential, p, PotentialNet::params_mut), &undetached)
    })?;
    for (name, ocfg) in [("potential_params_via_drift_loss_undetached", &undetached), ("potential_params_via_drift_loss_detached", &detached)] {
        let tape = Tape::new();
        let phi = f.potential.params().attach(&tape);
        let (w, _) = importance_weights(&f.potential.forward_with(&phi, &f.batch.xt)?, ocfg)?;
        let pred = f.drift.forward(&f.batch.xt, &f.batch.t)?;
        let mut grads = backward(&drift_loss(&pred, &f.batch.target_velocity, &w)?)?;
        let analytic = f.potential.params().take_grads(&mut grads, &phi);
        let mut check = if ocfg.detach_weights {
            let blocks: Vec<BlockCheck> = f
                .potential
                .params()
                .iter()
                .zip(&analytic)
                .map(|(p, a)| {
                    let max = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                    BlockCheck {
                        block: p.name.clone(),
                        max_abs_err: max,
                        scale: 0.0,
                        rel_err: max,
                        passed: a.iter().all(|&v| v == 0.0),
                    }
                })
                .collect();
            CheckResult {
                name: name.into(),
                requirement: "exactly zero".into(),
                passed: blocks.iter().all(|b| b.passed),
                blocks,
            }
        } else {
            param_check(name, "nonzero and matches central differences", f.potential.params(), &analytic, &numeric_phi, tol)
        };
        if !ocfg.detach_weights {
            let nonzero = analytic.iter().flatten().any(|&v| v != 0.0);
            check.passed &= nonzero;
        }
        checks.push(check);
    }

    // Input gradient of the potential (saliency).
    {
        let x = &f.batch.xt;
        let analytic = potential_saliency(&f.potential, x)?;
        let mut numeric = Vec::with_capacity(x.numel());
        for k in 0..x.numel() {
            let (mut p, mut m) = (x.to_vec(), x.to_vec());
            p[k] += h;
            m[k] -= h;
            let vp = f.potential.forward(&Tensor::new(x.shape(), p)?)?.data()[k / x.shape()[1]];
            let vm = f.potential.forward(&Tensor::new(x.shape(), m)?)?.data()[k / x.shape()[1]];
            numeric.push((vp - vm) / (2.0 * h));
        }
        let block = compare("x", analytic.data(), &numeric, tol);
        checks.push(CheckResult {
            name: "saliency_input_gradient".into(),
            requirement: "matches central differences".into(),
            passed: block.passed,
            blocks: vec![block],
        });
    }

    let passed = checks.iter().all(|c| c.passed);
    Ok(GradcheckReport {
        config: cfg.clone(),
        checks,
        passed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{corrupt_backward, Unary};

    #[test]
    fn suite_passes_on_clean_tree() {
        let r = gradcheck_suite().unwrap();
        assert!(r.passed, "{:?}", r.failures());
        assert_eq!(r.checks.len(), 5);
        let detached = r.checks.iter().find(|c| c.name.ends_with("_detached")).unwrap();
        assert!(detached.blocks.iter().all(|b| b.max_abs_err == 0.0));
        for c in &r.checks {
            for b in &c.blocks {
                assert!(b.rel_err <= 1e-5, "{}/{}: {}", c.name, b.block, b.rel_err);
            }
        }
    }

    #[test]
    fn corrupted_backward_rule_is_caught() {
        let _guard = corrupt_backward(Unary::Silu);
        let r = gradcheck_suite().unwrap();
        assert!(!r.passed);
        let failures = r.failures();
        assert!(failures.iter().any(|f| f.starts_with("drift_params_via_drift_loss/")), "{failures:?}");
        assert!(r.into_result().unwrap_err().to_string().contains("drift_params_via_drift_loss/"));
    }

    #[test]
    fn corrupted_potential_activation_is_caught() {
        let _guard = corrupt_backward(Unary::Gelu);
        let failures = gradcheck_suite().unwrap().failures();
        assert!(failures.iter().any(|f| f.starts_with("potential_params_via_potential_loss/")), "{failures:?}");
        assert!(failures.iter().any(|f| f.starts_with("saliency_input_gradient/")), "{failures:?}");
    }
}
