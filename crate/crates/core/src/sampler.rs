//! Euler–Maruyama integration of a velocity field from noise to data.
//!
//! The integrator accepts any [`VelocityField`]. The potential network does
//! not implement that trait, so it cannot be handed to the sampler:
//!
//! ```compile_fail
//! use agm::models::{PotentialArch, PotentialNet};
//! use agm::numerics::Rng;
//! use agm::sampler::{sample, SamplerConfig};
//!
//! let mut rng = Rng::new(0);
//! let potential = PotentialNet::new(PotentialArch::default(), 2, &mut rng).unwrap();
//! sample(&potential, &SamplerConfig::default(), &mut rng);
//! ```

use std::cell::Cell;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{DriftNet, EmaShadow};
use crate::numerics::{Rng, Tensor};

/// A time-dependent vector field `f(x, t)` on `[n×D]` batches.
pub trait VelocityField {
    fn data_dim(&self) -> usize;

    /// Velocity at a single time shared by all rows.
    fn velocity(&self, x: &Tensor, t: f64) -> Result<Tensor>;
}

impl VelocityField for DriftNet {
    fn data_dim(&self) -> usize {
        DriftNet::data_dim(self)
    }

    fn velocity(&self, x: &Tensor, t: f64) -> Result<Tensor> {
        DriftNet::velocity(self, x, t)
    }
}

impl VelocityField for EmaShadow {
    fn data_dim(&self) -> usize {
        self.shadow().data_dim()
    }

    fn velocity(&self, x: &Tensor, t: f64) -> Result<Tensor> {
        self.shadow().velocity(x, t)
    }
}

impl<F: VelocityField + ?Sized> VelocityField for &F {
    fn data_dim(&self) -> usize {
        (**self).data_dim()
    }

    fn velocity(&self, x: &Tensor, t: f64) -> Result<Tensor> {
        (**self).velocity(x, t)
    }
}

/// Counts velocity evaluations of the wrapped field.
#[derive(Debug)]
pub struct CountingField<F> {
    inner: F,
    calls: Cell<usize>,
}

impl<F: VelocityField> CountingField<F> {
    pub fn new(inner: F) -> Self {
        CountingField { inner, calls: Cell::new(0) }
    }

    pub fn calls(&self) -> usize {
        self.calls.get()
    }
}

impl<F: VelocityField> VelocityField for CountingField<F> {
    fn data_dim(&self) -> usize {
        self.inner.data_dim()
    }

    fn velocity(&self, x: &Tensor, t: f64) -> Result<Tensor> {
        self.calls.set(self.calls.get() + 1);
        self.inner.velocity(x, t)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    /// Number of integration steps, one velocity evaluation each.
    pub nfe: usize,
    pub sigma_sde: f64,
    pub n_samples: usize,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            nfe: 500,
            sigma_sde: 0.01,
            n_samples: 10_000,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.nfe == 0 {
            return Err(Error::Config("sampler.nfe must be at least 1".into()));
        }
        if self.n_samples == 0 {
            return Err(Error::Config("sampler.n_samples must be at least 1".into()));
        }
        if !(self.sigma_sde >= 0.0 && self.sigma_sde.is_finite()) {
            return Err(Error::Config(format!("sampler.sigma_sde must be non-negative, got {}", self.sigma_sde)));
        }
        Ok(())
    }
}

/// Integrates from `x0` for `cfg.nfe` steps, calling `visit` on every state
/// including `x0`. Step `n` evaluates the field at `t = n/N` and adds fresh
/// noise, the last step included.
fn run<F: VelocityField>(field: &F, x0: Tensor, cfg: &SamplerConfig, rng: &mut Rng, mut visit: impl FnMut(&Tensor)) -> Result<Tensor> {
    cfg.validate()?;
    let (n, d) = x0.dims2()?;
    if d != field.data_dim() {
        return Err(Error::shape("sampler initial state", &[n, field.data_dim()], x0.shape()));
    }
    let dt = 1.0 / cfg.nfe as f64;
    let noise = cfg.sigma_sde * dt.sqrt();
    let mut x = x0.to_vec();
    let mut xi = vec![0.0; x.len()];
    visit(&x0);
    for step in 0..cfg.nfe {
        let t = step as f64 * dt;
        let v = field.velocity(&Tensor::new(&[n, d], x.clone())?, t)?;
        rng.fill_normal(&mut xi);
        for ((xk, vk), ek) in x.iter_mut().zip(v.data()).zip(&xi) {
            *xk += vk * dt + noise * ek;
        }
        if let Some(bad) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                step: step as u64,
                detail: format!("sampler state row {} is {}", bad / d, x[bad]),
            });
        }
        visit(&Tensor::new(&[n, d], x.clone())?);
    }
    Tensor::new(&[n, d], x)
}

/// Integrates from a caller-supplied initial state.
pub fn integrate<F: VelocityField>(field: &F, x0: &Tensor, cfg: &SamplerConfig, rng: &mut Rng) -> Result<Tensor> {
    run(field, x0.clone(), cfg, rng, |_| {})
}

/// Draws `x0 ~ N(0, I)` of shape `[n_samples×D]` from `rng`, then integrates.
pub fn sample<F: VelocityField>(field: &F, cfg: &SamplerConfig, rng: &mut Rng) -> Result<Tensor> {
    cfg.validate()?;
    let x0 = rng.standard_normal(&[cfg.n_samples, field.data_dim()]);
    run(field, x0, cfg, rng, |_| {})
}

/// Every state of [`sample`], shaped `[(N+1)×n_samples×D]`.
pub fn sample_trajectory<F: VelocityField>(field: &F, cfg: &SamplerConfig, rng: &mut Rng) -> Result<Tensor> {
    cfg.validate()?;
    let d = field.data_dim();
    let x0 = rng.standard_normal(&[cfg.n_samples, d]);
    let mut states = Vec::with_capacity((cfg.nfe + 1) * cfg.n_samples * d);
    run(field, x0, cfg, rng, |x| states.extend_from_slice(x.data()))?;
    Tensor::new(&[cfg.nfe + 1, cfg.n_samples, d], states)
}

/// Writes one CSV row per sample, columns `x0 … x{D-1}`.
pub fn write_samples_csv(path: &Path, samples: &Tensor) -> Result<()> {
    let (_, d) = samples.dims2()?;
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record((0..d).map(|k| format!("x{k}"))).map_err(csv_err)?;
    for row in samples.data().chunks_exact(d) {
        w.write_record(row.iter().map(|v| v.to_string())).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a sample CSV written by [`write_samples_csv`].
pub fn read_samples_csv(path: &Path) -> Result<Tensor> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let d = r.headers().map_err(csv_err)?.len();
    let mut data = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        for field in rec.iter() {
            data.push(field.trim().parse::<f64>().map_err(|e| Error::Config(format!("{}: bad value '{field}': {e}", path.display())))?);
        }
    }
    if d == 0 || data.is_empty() {
        return Err(Error::Empty("read_samples_csv"));
    }
    Tensor::new(&[data.len() / d, d], data)
}

/// Writes `samples.csv` content to `path` and a JSON sidecar next to it
/// (`path` with extension `json`).
pub fn write_samples(path: &Path, samples: &Tensor, sidecar: &serde_json::Value) -> Result<()> {
    write_samples_csv(path, samples)?;
    fs::write(path.with_extension("json"), serde_json::to_string_pretty(sidecar)?)?;
    Ok(())
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Config(format!("csv: {other:?}")),
    }
}
