use serde::{Deserialize, Serialize};
use serde_json::json;

use super::config::TrainConfig;
use super::optim::Adam;
use crate::bridge::{build_bridge, BridgeBatch};
use crate::data::{sample_data, DATA_DIM};
use crate::error::{Error, Result};
use crate::models::{Block, Checkpoint, DriftNet, EmaShadow, ParamSet, PotentialNet};
use crate::numerics::{backward, Rng, Stream, Tape, Tensor};
use crate::objective::{drift_loss, importance_weights, potential_loss, WeightStats};

/// Mutable state of a run between steps.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    /// Steps completed so far.
    pub step: u64,
    pub drift: DriftNet,
    pub potential: PotentialNet,
    pub ema: EmaShadow,
    pub opt_f: Adam,
    pub opt_v: Adam,
    /// Training stream: data, bridge noise, times and contrast noise.
    pub rng: Rng,
    /// Drift-loss gradient on the potential from the previous step, added
    /// to the next potential update. Only populated with undetached weights.
    pub pending_phi: Option<Vec<Vec<f64>>>,
}

/// Everything one step draws from the training stream.
#[derive(Debug, Clone, PartialEq)]
pub struct StepInputs {
    pub x1: Tensor,
    pub batch: BridgeBatch,
    /// Pure noise contrasted against the bridge samples.
    pub z: Tensor,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub loss_f: f64,
    pub loss_v: f64,
    pub weights: WeightStats,
}

/// Draw order: data `x1`, noise `x0`, times `t`, bridge noise `ε`, contrast noise `z`.
pub fn draw_step_inputs(cfg: &TrainConfig, rng: &mut Rng) -> Result<StepInputs> {
    let x1 = sample_data(&cfg.dataset, cfg.batch_size, rng)?;
    let x0 = rng.standard_normal(x1.shape());
    let batch = build_bridge(&x0, &x1, rng, &cfg.schedule)?;
    let z = rng.standard_normal(x1.shape());
    Ok(StepInputs { x1, batch, z })
}

fn non_finite(step: u64, loss_f: Option<f64>, loss_v: f64, weights: Option<WeightStats>) -> Error {
    Error::NonFinite {
        step,
        detail: json!({"step": step, "loss_f": loss_f, "loss_v": loss_v, "weights": weights}).to_string(),
    }
}

impl TrainState {
    /// Fresh networks from the init stream of `cfg.seed`, drift first.
    pub fn new(cfg: &TrainConfig) -> Result<Self> {
        let mut init = Rng::stream(cfg.seed, Stream::Init);
        let drift = DriftNet::new(cfg.model.drift.clone(), DATA_DIM, &mut init)?;
        let potential = PotentialNet::new(cfg.model.potential.clone(), DATA_DIM, &mut init)?;
        let ema = EmaShadow::new(&drift, cfg.ema_tau)?;
        Ok(TrainState {
            step: 0,
            opt_f: Adam::new(drift.params()),
            opt_v: Adam::new(potential.params()),
            drift,
            potential,
            ema,
            rng: Rng::stream(cfg.seed, Stream::Train),
            pending_phi: None,
        })
    }

    /// Contrastive loss on the potential, then one potential update.
    /// Returns the loss evaluated before the update.
    pub fn potential_phase(&mut self, cfg: &TrainConfig, inputs: &StepInputs) -> Result<f64> {
        let (loss_v, mut grads) = {
            let tape = Tape::new();
            let phi = self.potential.params().attach(&tape);
            let v_xt = self.potential.forward_with(&phi, &inputs.batch.xt)?;
            let v_z = self.potential.forward_with(&phi, &inputs.z)?;
            let loss = potential_loss(&v_xt, &v_z, &cfg.objective)?;
            let value = loss.item()?;
            if !value.is_finite() {
                return Err(non_finite(self.step + 1, None, value, None));
            }
            let mut g = backward(&loss)?;
            (value, self.potential.params().take_grads(&mut g, &phi))
        };
        if let Some(pending) = self.pending_phi.take() {
            for (g, p) in grads.iter_mut().zip(pending) {
                g.iter_mut().zip(p).for_each(|(a, b)| *a += b);
            }
        }
        self.opt_v.step(self.potential.params_mut(), &grads, cfg.lr_v)?;
        Ok(loss_v)
    }

    /// Weights from the current potential, weighted drift loss, then one
    /// drift update. Returns the loss evaluated before the update.
    pub fn drift_phase(&mut self, cfg: &TrainConfig, inputs: &StepInputs, loss_v: f64) -> Result<(f64, WeightStats)> {
        let b = &inputs.batch;
        let (loss_f, stats, g_theta, g_phi) = {
            let tape = Tape::new();
            let theta = self.drift.params().attach(&tape);
            let phi = (!cfg.objective.detach_weights).then(|| self.potential.params().attach(&tape));
            let v_xt = match &phi {
                Some(phi) => self.potential.forward_with(phi, &b.xt)?,
                None => self.potential.forward(&b.xt)?,
            };
            let (w, stats) = importance_weights(&v_xt, &cfg.objective)?;
            let pred = self.drift.forward_with(&theta, &b.xt, &b.t)?;
            let loss = drift_loss(&pred, &b.target_velocity, &w)?;
            let value = loss.item()?;
            if !value.is_finite() || !stats.mean.is_finite() {
                return Err(non_finite(self.step + 1, Some(value), loss_v, Some(stats)));
            }
            let mut g = backward(&loss)?;
            let g_theta = self.drift.params().take_grads(&mut g, &theta);
            let g_phi = phi.map(|phi| self.potential.params().take_grads(&mut g, &phi));
            (value, stats, g_theta, g_phi)
        };
        self.opt_f.step(self.drift.params_mut(), &g_theta, cfg.lr_f)?;
        self.pending_phi = g_phi;
        Ok((loss_f, stats))
    }

    pub fn ema_phase(&mut self) -> Result<()> {
        self.ema.update(&self.drift)
    }

    /// One full step on pre-drawn inputs: potential update, weights from the
    /// updated potential, drift update, EMA.
    pub fn apply_step(&mut self, cfg: &TrainConfig, inputs: &StepInputs) -> Result<StepRecord> {
        let loss_v = self.potential_phase(cfg, inputs)?;
        let (loss_f, weights) = self.drift_phase(cfg, inputs, loss_v)?;
        self.ema_phase()?;
        self.step += 1;
        Ok(StepRecord {
            step: self.step,
            loss_f,
            loss_v,
            weights,
        })
    }

    /// One step on the supplied data batch; the remaining inputs come from
    /// the training stream.
    pub fn step_on_batch(&mut self, cfg: &TrainConfig, x1: Tensor) -> Result<StepRecord> {
        let x0 = self.rng.standard_normal(x1.shape());
        let batch = build_bridge(&x0, &x1, &mut self.rng, &cfg.schedule)?;
        let z = self.rng.standard_normal(x1.shape());
        self.apply_step(cfg, &StepInputs { x1, batch, z })
    }

    /// Snapshot of every tensor needed to continue the run bitwise.
    pub fn to_checkpoint(&self, cfg: &TrainConfig) -> Checkpoint {
        let mut blocks = Vec::new();
        let mut group = |prefix: &str, params: &ParamSet, values: Option<&[Vec<f64>]>| {
            for (i, p) in params.iter().enumerate() {
                blocks.push(Block {
                    name: format!("{prefix}/{}", p.name),
                    shape: p.shape.clone(),
                    values: values.map_or_else(|| p.values.to_vec(), |v| v[i].clone()),
                });
            }
        };
        group("drift", self.drift.params(), None);
        group("potential", self.potential.params(), None);
        group("ema", self.ema.shadow().params(), None);
        group("adam_f.m", self.drift.params(), Some(&self.opt_f.m));
        group("adam_f.v", self.drift.params(), Some(&self.opt_f.v));
        group("adam_v.m", self.potential.params(), Some(&self.opt_v.m));
        group("adam_v.v", self.potential.params(), Some(&self.opt_v.v));
        if let Some(p) = &self.pending_phi {
            group("pending_phi", self.potential.params(), Some(p));
        }
        Checkpoint {
            config: cfg.to_json(),
            step: self.step,
            rng: self.rng.state(),
            meta: json!({
                "adam_f_t": self.opt_f.t,
                "adam_v_t": self.opt_v.t,
                "has_pending_phi": self.pending_phi.is_some(),
            }),
            blocks,
        }
    }

    /// Rebuilds the config and state stored in a checkpoint.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<(TrainConfig, TrainState)> {
        let cfg: TrainConfig = serde_json::from_value(ckpt.config.clone())?;
        let mut state = TrainState::new(&cfg)?;
        state.drift.params_mut().load_values(&ckpt.group("drift"))?;
        state.potential.params_mut().load_values(&ckpt.group("potential"))?;
        state.ema.shadow_mut().params_mut().load_values(&ckpt.group("ema"))?;
        let moments = |prefix: &str, layout: &ParamSet| -> Result<Vec<Vec<f64>>> {
            let mut p = layout.clone();
            p.load_values(&ckpt.group(prefix))?;
            Ok(p.iter().map(|b| b.values.to_vec()).collect())
        };
        state.opt_f.m = moments("adam_f.m", state.drift.params())?;
        state.opt_f.v = moments("adam_f.v", state.drift.params())?;
        state.opt_v.m = moments("adam_v.m", state.potential.params())?;
        state.opt_v.v = moments("adam_v.v", state.potential.params())?;
        let counter = |key: &str| {
            ckpt.meta[key].as_u64().ok_or_else(|| Error::Config(format!("checkpoint meta is missing {key}")))
        };
        state.opt_f.t = counter("adam_f_t")?;
        state.opt_v.t = counter("adam_v_t")?;
        if ckpt.meta["has_pending_phi"].as_bool().unwrap_or(false) {
            state.pending_phi = Some(moments("pending_phi", state.potential.params())?);
        }
        state.rng = Rng::from_state(ckpt.rng);
        state.step = ckpt.step;
        Ok((cfg, state))
    }
}

/// Draws inputs from the training stream and applies one step.
pub fn train_step(state: &mut TrainState, cfg: &TrainConfig) -> Result<StepRecord> {
    let inputs = draw_step_inputs(cfg, &mut state.rng)?;
    state.apply_step(cfg, &inputs)
}
