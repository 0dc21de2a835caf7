//! Potential loss, importance weights and the weighted drift loss.

use serde::{Deserialize, Serialize};

use crate::bridge::BridgeBatch;
use crate::error::{Error, Result};
use crate::models::{DriftNet, PotentialNet};
use crate::numerics::{backward, Tape, Tensor};

/// Which side of the margin each sample class is pushed to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignConvention {
    /// Bridge samples score high, noise scores low.
    #[default]
    Prose,
    /// Bridge samples score low, noise scores high.
    AsWritten,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObjectiveConfig {
    pub margin: f64,
    pub gamma_v: f64,
    pub lambda_v: f64,
    pub clamp_lo: f64,
    pub clamp_hi: f64,
    pub sign_convention: SignConvention,
    /// When false, weights stay differentiable in the potential parameters.
    pub detach_weights: bool,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        ObjectiveConfig {
            margin: 1.0,
            gamma_v: 1e-3,
            lambda_v: 0.1,
            clamp_lo: 0.1,
            clamp_hi: 10.0,
            sign_convention: SignConvention::Prose,
            detach_weights: true,
        }
    }
}

impl ObjectiveConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("objective: {what}")));
        if !(self.margin > 0.0 && self.margin.is_finite()) {
            return bad("margin must be positive");
        }
        if !(self.gamma_v >= 0.0 && self.gamma_v.is_finite()) {
            return bad("gamma_v must be non-negative");
        }
        if !(self.lambda_v >= 0.0 && self.lambda_v.is_finite()) {
            return bad("lambda_v must be non-negative");
        }
        if !(self.clamp_lo > 0.0 && self.clamp_lo <= 1.0 && 1.0 <= self.clamp_hi && self.clamp_hi.is_finite() && self.clamp_lo < self.clamp_hi) {
            return bad("clamp range must satisfy 0 < clamp_lo <= 1 <= clamp_hi");
        }
        Ok(())
    }
}

/// Per-batch summary of the importance weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightStats {
    pub mean_preclamp: f64,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    /// Fraction of weights that the clamp moved.
    pub clamp_rate: f64,
}

impl WeightStats {
    /// Stats of a batch of unit weights.
    pub fn unit() -> Self {
        WeightStats {
            mean_preclamp: 1.0,
            mean: 1.0,
            min: 1.0,
            max: 1.0,
            clamp_rate: 0.0,
        }
    }
}

fn check_scores(v: &Tensor, what: &'static str) -> Result<usize> {
    match v.shape() {
        [0] => Err(Error::Empty(what)),
        [b] => Ok(*b),
        s => Err(Error::shape(what, &[s.iter().product()], s)),
    }
}

/// Hinge-margin contrastive loss on bridge scores `v_xt` and noise scores
/// `v_z`, plus `γ·mean(v_xt²)`.
pub fn potential_loss(v_xt: &Tensor, v_z: &Tensor, cfg: &ObjectiveConfig) -> Result<Tensor> {
    let b = check_scores(v_xt, "potential_loss bridge scores")?;
    let bz = check_scores(v_z, "potential_loss noise scores")?;
    if b != bz {
        return Err(Error::shape("potential_loss", &[b], &[bz]));
    }
    let m = cfg.margin;
    let (bridge, noise) = match cfg.sign_convention {
        SignConvention::Prose => (v_xt.neg()?.offset(m)?, v_z.offset(m)?),
        SignConvention::AsWritten => (v_xt.offset(m)?, v_z.neg()?.offset(m)?),
    };
    let hinge = bridge.relu()?.mean()?.add(&noise.relu()?.mean()?)?;
    hinge.add(&v_xt.square()?.mean()?.scale(cfg.gamma_v)?)
}

/// `w = clamp(1 + λ(s/mean(s) − 1))` with `s = sigmoid(v_xt)`.
///
/// `s` passes through a stop-gradient unless `detach_weights` is off. The
/// batch is not renormalized after clamping.
pub fn importance_weights(v_xt: &Tensor, cfg: &ObjectiveConfig) -> Result<(Tensor, WeightStats)> {
    let b = check_scores(v_xt, "importance_weights")?;
    let v = if cfg.detach_weights { v_xt.stop_gradient() } else { v_xt.clone() };
    let s = v.sigmoid()?;
    let s_mean = s.mean()?;
    if s_mean.item()? == 0.0 {
        return Err(Error::DivisionByZero("importance_weights: every sigmoid score underflowed"));
    }
    let raw = s.div(&s_mean)?.offset(-1.0)?.scale(cfg.lambda_v)?.offset(1.0)?;
    let w = raw.clamp(cfg.clamp_lo, cfg.clamp_hi)?;

    let n = b as f64;
    let clamped = raw.data().iter().zip(w.data()).filter(|(r, c)| r != c).count();
    let stats = WeightStats {
        mean_preclamp: raw.data().iter().sum::<f64>() / n,
        mean: w.data().iter().sum::<f64>() / n,
        min: w.data().iter().copied().fold(f64::INFINITY, f64::min),
        max: w.data().iter().copied().fold(f64::NEG_INFINITY, f64::max),
        clamp_rate: clamped as f64 / n,
    };
    Ok((w, stats))
}

/// `mean_i w_i · Σ_d (pred − target)²`.
pub fn drift_loss(pred: &Tensor, target: &Tensor, w: &Tensor) -> Result<Tensor> {
    let (b, d) = pred.dims2()?;
    if target.shape() != pred.shape() {
        return Err(Error::shape("drift_loss target", pred.shape(), target.shape()));
    }
    if w.shape() != [b] {
        return Err(Error::shape("drift_loss weights", &[b], w.shape()));
    }
    if b == 0 || d == 0 {
        return Err(Error::Empty("drift_loss"));
    }
    pred.sub(target)?.square()?.sum_axis(1)?.mul(w)?.mean()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradFlow {
    /// `‖∂L_f/∂φ‖₂` over every potential parameter.
    pub grad_norm_phi_from_lf: f64,
}

/// Measures how much of the drift loss gradient reaches the potential.
pub fn grad_flow_diagnostic(batch: &BridgeBatch, drift: &DriftNet, potential: &PotentialNet, cfg: &ObjectiveConfig) -> Result<GradFlow> {
    let tape = Tape::new();
    let phi = potential.params().attach(&tape);
    let v_xt = potential.forward_with(&phi, &batch.xt)?;
    let (w, _) = importance_weights(&v_xt, cfg)?;
    let pred = drift.forward(&batch.xt, &batch.t)?;
    let loss = drift_loss(&pred, &batch.target_velocity, &w)?;
    let grads = backward(&loss)?;
    let sq: f64 = phi.iter().map(|p| grads.wrt(p).data().iter().map(|g| g * g).sum::<f64>()).sum();
    Ok(GradFlow {
        grad_norm_phi_from_lf: sq.sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bridge::{build_bridge, ScheduleParams};
    use crate::models::{DriftArch, PotentialArch};
    use crate::numerics::Rng;
    use proptest::prelude::*;

    fn cfg() -> ObjectiveConfig {
        ObjectiveConfig::default()
    }

    fn scalar(t: &Tensor) -> f64 {
        t.item().unwrap()
    }

    #[test]
    fn printed_hinge_at_zero_scores() {
        let c = ObjectiveConfig {
            sign_convention: SignConvention::AsWritten,
            gamma_v: 0.0,
            ..cfg()
        };
        let z = Tensor::zeros(&[3]);
        assert_eq!(scalar(&potential_loss(&z, &z, &c).unwrap()), 2.0);
    }

    #[test]
    fn separated_scores_leave_only_regularizer() {
        let l = potential_loss(&Tensor::vector(&[2.0]), &Tensor::vector(&[-2.0]), &cfg()).unwrap();
        assert!((scalar(&l) - 0.004).abs() < 1e-15);
    }

    #[test]
    fn low_bridge_score_is_penalized() {
        let c = ObjectiveConfig { gamma_v: 0.0, ..cfg() };
        let l = potential_loss(&Tensor::vector(&[-2.0]), &Tensor::vector(&[-2.0]), &c).unwrap();
        assert_eq!(scalar(&l), 3.0);
    }

    #[test]
    fn potential_loss_rejects_mismatch() {
        assert!(potential_loss(&Tensor::zeros(&[2]), &Tensor::zeros(&[3]), &cfg()).is_err());
        assert!(potential_loss(&Tensor::zeros(&[0]), &Tensor::zeros(&[0]), &cfg()).is_err());
    }

    #[test]
    fn weights_collapse_to_one() {
        let v = Tensor::vector(&[0.3, -1.0, 4.0]);
        let (w, s) = importance_weights(&v, &ObjectiveConfig { lambda_v: 0.0, ..cfg() }).unwrap();
        assert!(w.data().iter().all(|&x| x == 1.0));
        assert_eq!(s.clamp_rate, 0.0);
        let (w, _) = importance_weights(&Tensor::full(&[4], 0.7), &cfg()).unwrap();
        assert!(w.data().iter().all(|&x| x == 1.0));
    }

    #[test]
    fn two_sample_hand_case() {
        let logit = |p: f64| (p / (1.0 - p)).ln();
        let v = Tensor::vector(&[logit(0.8), logit(0.4)]);
        let (w, _) = importance_weights(&v, &cfg()).unwrap();
        assert!((w.data()[0] - (1.0 + 0.1 / 3.0)).abs() < 1e-12);
        assert!((w.data()[1] - (1.0 - 0.1 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn clamp_engages_for_large_lambda_without_renormalizing() {
        let c = ObjectiveConfig { lambda_v: 50.0, ..cfg() };
        let (w, s) = importance_weights(&Tensor::vector(&[5.0, -5.0, -5.0, -5.0]), &c).unwrap();
        assert_eq!(s.max, 10.0);
        assert_eq!(s.min, 0.1);
        assert_eq!(s.clamp_rate, 1.0);
        assert!((s.mean_preclamp - 1.0).abs() < 1e-10);
        assert!((s.mean - 1.0).abs() > 0.5);
        assert_eq!(w.data(), &[10.0, 0.1, 0.1, 0.1]);
    }

    #[test]
    fn drift_loss_hand_cases() {
        let pred = Tensor::new(&[2, 1], vec![1.0, 2.0]).unwrap();
        let zero = Tensor::zeros(&[2, 1]);
        let w = Tensor::vector(&[0.5, 2.0]);
        assert_eq!(scalar(&drift_loss(&pred, &zero, &w).unwrap()), 4.25);
        assert_eq!(scalar(&drift_loss(&pred, &pred, &w).unwrap()), 0.0);
        let mse = scalar(&drift_loss(&pred, &zero, &Tensor::ones(&[2])).unwrap());
        assert_eq!(mse, 2.5);
        assert!(drift_loss(&pred, &Tensor::zeros(&[2, 2]), &w).is_err());
        assert!(drift_loss(&pred, &zero, &Tensor::ones(&[3])).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(cfg().validate().is_ok());
        assert!(ObjectiveConfig { clamp_lo: 1.5, ..cfg() }.validate().is_err());
        assert!(ObjectiveConfig { clamp_hi: 0.9, ..cfg() }.validate().is_err());
        assert!(ObjectiveConfig { margin: 0.0, ..cfg() }.validate().is_err());
        assert!(ObjectiveConfig { lambda_v: -0.1, ..cfg() }.validate().is_err());
        let parsed: ObjectiveConfig = serde_json::from_str(r#"{"sign_convention":"as_written"}"#).unwrap();
        assert_eq!(parsed.sign_convention, SignConvention::AsWritten);
        assert!(serde_json::from_str::<ObjectiveConfig>(r#"{"lambda":1}"#).is_err());
    }

    fn setup(seed: u64) -> (BridgeBatch, DriftNet, PotentialNet) {
        let mut rng = Rng::new(seed);
        let mut drift = DriftNet::new(DriftArch { hidden: vec![8], time_freqs: 2, time_dim: 4 }, 2, &mut rng).unwrap();
        drift.params_mut().perturb(&mut rng, 0.3);
        let pot = PotentialNet::new(PotentialArch { hidden: vec![6] }, 2, &mut rng).unwrap();
        let x0 = rng.standard_normal(&[6, 2]);
        let x1 = rng.standard_normal(&[6, 2]).offset(2.0).unwrap();
        let batch = build_bridge(&x0, &x1, &mut rng, &ScheduleParams::default()).unwrap();
        (batch, drift, pot)
    }

    #[test]
    fn detached_weights_block_potential_gradient() {
        let (batch, drift, pot) = setup(3);
        let on = grad_flow_diagnostic(&batch, &drift, &pot, &cfg()).unwrap();
        assert_eq!(on.grad_norm_phi_from_lf, 0.0);
        let off = ObjectiveConfig { detach_weights: false, ..cfg() };
        assert!(grad_flow_diagnostic(&batch, &drift, &pot, &off).unwrap().grad_norm_phi_from_lf > 0.0);
        let off_zero = ObjectiveConfig { lambda_v: 0.0, ..off };
        assert_eq!(grad_flow_diagnostic(&batch, &drift, &pot, &off_zero).unwrap().grad_norm_phi_from_lf, 0.0);
    }

    #[test]
    fn undetached_potential_gradient_matches_finite_differences() {
        let (batch, drift, pot) = setup(9);
        let c = ObjectiveConfig { detach_weights: false, lambda_v: 0.5, ..cfg() };
        let loss_of = |p: &PotentialNet| {
            let (w, _) = importance_weights(&p.forward(&batch.xt).unwrap(), &c).unwrap();
            let pred = drift.forward(&batch.xt, &batch.t).unwrap();
            scalar(&drift_loss(&pred, &batch.target_velocity, &w).unwrap())
        };
        let tape = Tape::new();
        let phi = pot.params().attach(&tape);
        let (w, _) = importance_weights(&pot.forward_with(&phi, &batch.xt).unwrap(), &c).unwrap();
        let pred = drift.forward(&batch.xt, &batch.t).unwrap();
        let grads = backward(&drift_loss(&pred, &batch.target_velocity, &w).unwrap()).unwrap();
        let h = 1e-6;
        for (i, p) in phi.iter().enumerate() {
            let g = grads.wrt(p);
            let (mut worst, mut scale) = (0.0f64, 0.0f64);
            for j in 0..g.numel() {
                let mut plus = pot.clone();
                plus.params_mut().values_mut(i)[j] += h;
                let mut minus = pot.clone();
                minus.params_mut().values_mut(i)[j] -= h;
                let fd = (loss_of(&plus) - loss_of(&minus)) / (2.0 * h);
                worst = worst.max((fd - g.data()[j]).abs());
                scale = scale.max(fd.abs()).max(g.data()[j].abs());
            }
            assert!(scale > 0.0 && worst <= 1e-5 * scale, "block {i}: err {worst} scale {scale}");
        }
    }

    proptest! {
        #[test]
        fn preclamp_mean_is_one_and_defaults_never_clamp(v in proptest::collection::vec(-30.0f64..30.0, 1..64)) {
            let (w, s) = importance_weights(&Tensor::vector(&v), &cfg()).unwrap();
            prop_assert!((s.mean_preclamp - 1.0).abs() < 1e-10);
            prop_assert_eq!(s.clamp_rate, 0.0);
            prop_assert!(w.data().iter().all(|&x| (0.1..=10.0).contains(&x)));
        }

        #[test]
        fn weights_bounded_for_any_lambda(v in proptest::collection::vec(-30.0f64..30.0, 1..64), lambda in 0.0f64..100.0) {
            let c = ObjectiveConfig { lambda_v: lambda, ..cfg() };
            let (_, s) = importance_weights(&Tensor::vector(&v), &c).unwrap();
            prop_assert!(s.min >= c.clamp_lo && s.max <= c.clamp_hi);
        }

        #[test]
        fn weights_order_matches_scores(v in proptest::collection::vec(-8.0f64..8.0, 2..32)) {
            let (w, _) = importance_weights(&Tensor::vector(&v), &cfg()).unwrap();
            for i in 0..v.len() {
                for j in 0..v.len() {
                    if v[j] - v[i] > 1e-9 {
                        prop_assert!(w.data()[i] < w.data()[j], "v {} < {} but w {} >= {}", v[i], v[j], w.data()[i], w.data()[j]);
                    }
                }
            }
        }
    }
}
