use super::drift::DriftNet;
use crate::error::{Error, Result};

/// Exponentially averaged copy of the drift network, used only for sampling.
#[derive(Debug, Clone, PartialEq)]
pub struct EmaShadow {
    tau: f64,
    shadow: DriftNet,
}

impl EmaShadow {
    /// Starts as an exact copy of `live`.
    pub fn new(live: &DriftNet, tau: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&tau) {
            return Err(Error::OutOfRange {
                name: "ema_tau",
                value: tau,
                range: "[0, 1]",
            });
        }
        Ok(EmaShadow {
            tau,
            shadow: live.clone(),
        })
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn shadow(&self) -> &DriftNet {
        &self.shadow
    }

    pub(crate) fn shadow_mut(&mut self) -> &mut DriftNet {
        &mut self.shadow
    }

    /// `shadow ← τ·shadow + (1 − τ)·live`, blockwise.
    pub fn update(&mut self, live: &DriftNet) -> Result<()> {
        self.shadow.params().check_layout(live.params(), "ema_update")?;
        let (tau, keep) = (self.tau, 1.0 - self.tau);
        let params = self.shadow.params_mut();
        for i in 0..params.len() {
            let src = live.params().param(i).values.clone();
            for (s, l) in params.values_mut(i).iter_mut().zip(src.iter()) {
                *s = tau * *s + keep * l;
            }
        }
        Ok(())
    }
}

pub fn ema_update(shadow: &mut EmaShadow, live: &DriftNet) -> Result<()> {
    shadow.update(live)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{DriftArch, ParamSet};
    use crate::numerics::Rng;

    fn net(seed: u64) -> DriftNet {
        let arch = DriftArch {
            hidden: vec![3],
            time_freqs: 2,
            time_dim: 3,
        };
        let mut rng = Rng::new(seed);
        let mut n = DriftNet::new(arch, 2, &mut rng).unwrap();
        n.params_mut().perturb(&mut rng, 1.0);
        n
    }

    #[test]
    fn starts_equal_to_live() {
        let live = net(1);
        assert_eq!(EmaShadow::new(&live, 0.999).unwrap().shadow(), &live);
    }

    #[test]
    fn extreme_decays() {
        let (a, b) = (net(1), net(2));
        let mut frozen = EmaShadow::new(&a, 1.0).unwrap();
        frozen.update(&b).unwrap();
        assert_eq!(frozen.shadow(), &a);
        let mut copy = EmaShadow::new(&a, 0.0).unwrap();
        copy.update(&b).unwrap();
        assert_eq!(copy.shadow().params(), b.params());
        assert!(EmaShadow::new(&a, 1.5).is_err());
    }

    #[test]
    fn scalar_step_with_long_run_decay() {
        let mut zero = ParamSet::new();
        zero.push("w", &[1], vec![0.0]).unwrap();
        let mut one = ParamSet::new();
        one.push("w", &[1], vec![1.0]).unwrap();
        let mut live = net(0);
        *live.params_mut() = one;
        let mut start = live.clone();
        *start.params_mut() = zero;
        let mut ema = EmaShadow::new(&start, 0.9999).unwrap();
        ema.update(&live).unwrap();
        let v = ema.shadow().params().param(0).values[0];
        assert!((v - 0.0001).abs() < 1e-15, "{v}");
    }

    #[test]
    fn layout_mismatch_rejected() {
        let a = net(1);
        let arch = DriftArch {
            hidden: vec![4],
            time_freqs: 2,
            time_dim: 3,
        };
        let b = DriftNet::new(arch, 2, &mut Rng::new(0)).unwrap();
        let mut ema = EmaShadow::new(&a, 0.5).unwrap();
        assert!(ema.update(&b).is_err());
    }
}
