use serde::{Deserialize, Serialize};

use crate::bridge::ScheduleParams;
use crate::data::ToyDistribution;
use crate::error::{Error, Result};
use crate::eval::EvalConfig;
use crate::models::{DriftArch, PotentialArch};
use crate::objective::ObjectiveConfig;
use crate::sampler::SamplerConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub drift: DriftArch,
    pub potential: PotentialArch,
}

/// Everything that determines a training run.
///
/// [`TrainConfig::default`] is the desk-scale preset; [`TrainConfig::publication`]
/// is the long-run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub steps: u64,
    pub batch_size: usize,
    pub lr_f: f64,
    pub lr_v: f64,
    pub ema_tau: f64,
    pub seed: u64,
    /// Trace cadence in steps.
    pub log_every: u64,
    /// Periodic checkpoint cadence in steps; 0 keeps only the final one.
    pub checkpoint_every: u64,
    /// Sample from the EMA drift and score it at the end of the run.
    pub evaluate: bool,
    pub objective: ObjectiveConfig,
    pub schedule: ScheduleParams,
    pub dataset: ToyDistribution,
    pub model: ModelConfig,
    pub sampler: SamplerConfig,
    pub eval: EvalConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 20_000,
            batch_size: 256,
            lr_f: 2e-4,
            lr_v: 1e-4,
            ema_tau: 0.999,
            seed: 0,
            log_every: 1,
            checkpoint_every: 5_000,
            evaluate: true,
            objective: ObjectiveConfig::default(),
            schedule: ScheduleParams::default(),
            dataset: ToyDistribution::default(),
            model: ModelConfig::default(),
            sampler: SamplerConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl TrainConfig {
    /// 500k steps, batch 128, EMA decay 0.9999.
    pub fn publication() -> Self {
        TrainConfig {
            steps: 500_000,
            batch_size: 128,
            ema_tau: 0.9999,
            checkpoint_every: 50_000,
            log_every: 100,
            ..TrainConfig::default()
        }
    }

    /// Fills per-kind dataset defaults so the config spells out every value.
    pub fn resolved(mut self) -> Self {
        self.dataset = self.dataset.resolved();
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Config("steps must be at least 1".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::Config(format!("batch_size must be at least 2, got {}", self.batch_size)));
        }
        for (name, lr) in [("lr_f", self.lr_f), ("lr_v", self.lr_v)] {
            if !(lr >= 0.0 && lr.is_finite()) {
                return Err(Error::Config(format!("{name} must be a non-negative finite number, got {lr}")));
            }
        }
        if !(0.0..=1.0).contains(&self.ema_tau) {
            return Err(Error::Config(format!("ema_tau must lie in [0, 1], got {}", self.ema_tau)));
        }
        if self.log_every == 0 {
            return Err(Error::Config("log_every must be at least 1".into()));
        }
        self.objective.validate()?;
        self.schedule.validate()?;
        self.dataset.validate()?;
        self.sampler.validate()?;
        if self.evaluate {
            self.eval.validate()?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}
