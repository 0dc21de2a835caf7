//! Seeded 2-D toy target distributions.
//!
//! Every generator draws a fixed number of uniforms per sample, followed by
//! two normals for the additive noise, so a given stream position always
//! maps to the same sample.

use std::f64::consts::{FRAC_PI_4, PI};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Rng, Stream, Tensor};

pub const DATA_DIM: usize = 2;
pub const DEFAULT_N_EVAL: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToyKind {
    /// Eight isotropic Gaussians evenly spaced on a circle of radius `scale`.
    EightGaussians,
    /// Two interleaved half circles of radius `scale`.
    TwoMoons,
    /// Uniform over the eight dark cells of a 4×4 board spanning `[-2s, 2s]²`.
    Checkerboard,
    /// One and a half turns of an Archimedean spiral reaching radius `2s`.
    Spiral,
}

impl ToyKind {
    pub const ALL: [ToyKind; 4] = [ToyKind::EightGaussians, ToyKind::TwoMoons, ToyKind::Checkerboard, ToyKind::Spiral];

    /// `(scale, noise_std)` used when a field is left unset.
    pub fn defaults(self) -> (f64, f64) {
        match self {
            ToyKind::EightGaussians => (2.0, 0.1),
            ToyKind::TwoMoons => (1.0, 0.05),
            ToyKind::Checkerboard => (1.0, 0.0),
            ToyKind::Spiral => (1.0, 0.05),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ToyKind::EightGaussians => "eight_gaussians",
            ToyKind::TwoMoons => "two_moons",
            ToyKind::Checkerboard => "checkerboard",
            ToyKind::Spiral => "spiral",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown dataset '{s}' (expected one of eight_gaussians, two_moons, checkerboard, spiral)")))
    }
}

/// A toy target distribution. Unset `scale` or `noise_std` take the
/// per-kind defaults from [`ToyKind::defaults`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToyDistribution {
    pub kind: ToyKind,
    #[serde(default)]
    pub scale: Option<f64>,
    #[serde(default)]
    pub noise_std: Option<f64>,
}

impl Default for ToyDistribution {
    fn default() -> Self {
        ToyDistribution::new(ToyKind::EightGaussians)
    }
}

impl ToyDistribution {
    pub fn new(kind: ToyKind) -> Self {
        ToyDistribution {
            kind,
            scale: None,
            noise_std: None,
        }
    }

    pub fn scale(&self) -> f64 {
        self.scale.unwrap_or(self.kind.defaults().0)
    }

    pub fn noise_std(&self) -> f64 {
        self.noise_std.unwrap_or(self.kind.defaults().1)
    }

    /// Same distribution with every field spelled out.
    pub fn resolved(self) -> Self {
        ToyDistribution {
            kind: self.kind,
            scale: Some(self.scale()),
            noise_std: Some(self.noise_std()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (s, n) = (self.scale(), self.noise_std());
        if !(s > 0.0 && s.is_finite()) {
            return Err(Error::Config(format!("dataset.scale must be positive, got {s}")));
        }
        if !(n >= 0.0 && n.is_finite()) {
            return Err(Error::Config(format!("dataset.noise_std must be non-negative, got {n}")));
        }
        Ok(())
    }

    /// Mode centers and the per-mode standard deviation, for kinds that have
    /// enumerable modes.
    pub fn modes(&self) -> Option<(Vec<[f64; 2]>, f64)> {
        match self.kind {
            ToyKind::EightGaussians => {
                let r = self.scale();
                let centers = (0..8).map(|k| {
                    let a = k as f64 * FRAC_PI_4;
                    [r * a.cos(), r * a.sin()]
                });
                Some((centers.collect(), self.noise_std()))
            }
            _ => None,
        }
    }

    fn draw(&self, rng: &mut Rng) -> [f64; 2] {
        let s = self.scale();
        let (u, v, w) = (rng.uniform01(), rng.uniform01(), rng.uniform01());
        let base = match self.kind {
            ToyKind::EightGaussians => {
                let a = (u * 8.0).floor().min(7.0) * FRAC_PI_4;
                [s * a.cos(), s * a.sin()]
            }
            ToyKind::TwoMoons => {
                let a = PI * v;
                if u < 0.5 {
                    [s * a.cos(), s * a.sin()]
                } else {
                    [s * (1.0 - a.cos()), s * (0.5 - a.sin())]
                }
            }
            ToyKind::Checkerboard => {
                let cell = (u * 8.0).floor().min(7.0) as usize;
                let row = cell / 2;
                let col = 2 * (cell % 2) + row % 2;
                [s * (col as f64 + v - 2.0), s * (row as f64 + w - 2.0)]
            }
            ToyKind::Spiral => {
                let a = u.sqrt() * 3.0 * PI;
                let r = 2.0 * s * a / (3.0 * PI);
                [r * a.cos(), r * a.sin()]
            }
        };
        let sd = self.noise_std();
        let mut n = [0.0; 2];
        rng.fill_normal(&mut n);
        [base[0] + sd * n[0], base[1] + sd * n[1]]
    }
}

/// `n` i.i.d. draws as an `[n×2]` tensor.
pub fn sample_data(dist: &ToyDistribution, n: usize, rng: &mut Rng) -> Result<Tensor> {
    if n == 0 {
        return Err(Error::Empty("sample_data"));
    }
    dist.validate()?;
    let mut out = Vec::with_capacity(n * DATA_DIM);
    for _ in 0..n {
        out.extend_from_slice(&dist.draw(rng));
    }
    Tensor::new(&[n, DATA_DIM], out)
}

/// Reference set drawn from the evaluation stream of `seed`, disjoint from
/// the training stream of the same seed.
pub fn holdout_split(dist: &ToyDistribution, seed: u64, n_eval: usize) -> Result<Tensor> {
    sample_data(dist, n_eval, &mut Rng::stream(seed, Stream::Eval))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{any, prop_assert, prop_assert_eq, proptest};

    #[test]
    fn noiseless_gaussians_sit_on_centers() {
        let d = ToyDistribution {
            noise_std: Some(0.0),
            ..ToyDistribution::default()
        };
        let (centers, _) = d.modes().unwrap();
        let x = sample_data(&d, 500, &mut Rng::new(3)).unwrap();
        for i in 0..500 {
            let p = x.row(i);
            assert!(centers.iter().any(|c| c[0] == p[0] && c[1] == p[1]), "{p:?}");
        }
    }

    #[test]
    fn moons_stay_in_box() {
        let d = ToyDistribution::new(ToyKind::TwoMoons);
        let x = sample_data(&d, 100_000, &mut Rng::new(5)).unwrap();
        for p in x.data().chunks_exact(2) {
            assert!((-1.5..=2.5).contains(&p[0]) && (-1.0..=1.5).contains(&p[1]), "{p:?}");
        }
    }

    #[test]
    fn checkerboard_uses_dark_cells_only() {
        let d = ToyDistribution::new(ToyKind::Checkerboard);
        let x = sample_data(&d, 20_000, &mut Rng::new(6)).unwrap();
        let mut seen = std::collections::BTreeSet::new();
        for p in x.data().chunks_exact(2) {
            assert!(p.iter().all(|v| (-2.0..2.0).contains(v)));
            let (c, r) = ((p[0] + 2.0).floor() as i64, (p[1] + 2.0).floor() as i64);
            assert_eq!((c + r) % 2, 0, "{p:?}");
            seen.insert((c, r));
        }
        assert_eq!(seen.len(), 8);
    }

    #[test]
    fn eight_modes_are_balanced() {
        let d = ToyDistribution::default();
        let (centers, _) = d.modes().unwrap();
        let x = sample_data(&d, 100_000, &mut Rng::new(7)).unwrap();
        let mut counts = [0usize; 8];
        for p in x.data().chunks_exact(2) {
            let k = (0..8)
                .min_by(|&a, &b| {
                    let da = (p[0] - centers[a][0]).hypot(p[1] - centers[a][1]);
                    let db = (p[0] - centers[b][0]).hypot(p[1] - centers[b][1]);
                    da.total_cmp(&db)
                })
                .unwrap();
            counts[k] += 1;
        }
        for c in counts {
            let frac = c as f64 / 100_000.0;
            assert!((0.115..=0.135).contains(&frac), "{counts:?}");
        }
    }

    #[test]
    fn holdout_is_reproducible_and_separate_from_training() {
        let d = ToyDistribution::default();
        let a = holdout_split(&d, 9, 64).unwrap();
        assert_eq!(a, holdout_split(&d, 9, 64).unwrap());
        let train = sample_data(&d, 64, &mut Rng::stream(9, Stream::Train)).unwrap();
        for v in a.data() {
            assert!(!train.data().contains(v));
        }
        assert_eq!(DEFAULT_N_EVAL, 10_000);
    }

    #[test]
    fn resolution_and_validation() {
        let d = ToyDistribution::new(ToyKind::TwoMoons).resolved();
        assert_eq!((d.scale, d.noise_std), (Some(1.0), Some(0.05)));
        assert!(sample_data(&d, 0, &mut Rng::new(0)).is_err());
        let bad = ToyDistribution { scale: Some(-1.0), ..d };
        assert!(sample_data(&bad, 4, &mut Rng::new(0)).is_err());
        assert!(ToyDistribution::new(ToyKind::Spiral).modes().is_none());
        assert_eq!(ToyKind::parse("spiral").unwrap(), ToyKind::Spiral);
        assert!(ToyKind::parse("moons").is_err());
    }

    proptest! {
        #[test]
        fn every_kind_is_finite_and_seeded(seed in any::<u64>(), k in 0usize..4) {
            let d = ToyDistribution::new(ToyKind::ALL[k]);
            let a = sample_data(&d, 32, &mut Rng::new(seed)).unwrap();
            prop_assert!(a.all_finite());
            prop_assert_eq!(a, sample_data(&d, 32, &mut Rng::new(seed)).unwrap());
        }
    }
}
