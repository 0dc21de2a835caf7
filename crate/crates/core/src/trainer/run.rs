use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::step::{train_step, StepRecord, TrainState};
use crate::data::holdout_split;
use crate::error::{Error, Result};
use crate::eval::{evaluate, saliency_slices, MetricReport, SaliencySlice, SaliencySummary};
use crate::models::{load_checkpoint, save_checkpoint, PotentialNet};
use crate::numerics::{Rng, Stream, Tensor};
use crate::sampler::{csv_err, sample, write_samples};

pub const TRACE_HEADER: [&str; 7] = ["step", "L_f", "L_V", "w_mean_preclamp", "w_min", "w_max", "clamp_rate"];

/// Times at which saliency is summarized at the end of a run.
pub const SALIENCY_TIMES: [f64; 3] = [0.1, 0.5, 0.9];

/// One logged step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: u64,
    pub loss_f: f64,
    pub loss_v: f64,
    pub w_mean_preclamp: f64,
    pub w_min: f64,
    pub w_max: f64,
    pub clamp_rate: f64,
}

impl From<&StepRecord> for TraceRow {
    fn from(r: &StepRecord) -> Self {
        TraceRow {
            step: r.step,
            loss_f: r.loss_f,
            loss_v: r.loss_v,
            w_mean_preclamp: r.weights.mean_preclamp,
            w_min: r.weights.min,
            w_max: r.weights.max,
            clamp_rate: r.weights.clamp_rate,
        }
    }
}

/// Logged steps in strictly increasing order, with wall-clock seconds since
/// the start of the run for each row.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LossTrace {
    rows: Vec<TraceRow>,
    wall_s: Vec<f64>,
}

impl LossTrace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, row: TraceRow, wall_s: f64) -> Result<()> {
        if let Some(last) = self.rows.last() {
            if row.step <= last.step {
                return Err(Error::Config(format!("trace steps must increase: {} after {}", row.step, last.step)));
            }
        }
        self.rows.push(row);
        self.wall_s.push(wall_s);
        Ok(())
    }

    pub fn rows(&self) -> &[TraceRow] {
        &self.rows
    }

    pub fn wall_seconds(&self) -> &[f64] {
        &self.wall_s
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn last(&self) -> Option<&TraceRow> {
        self.rows.last()
    }

    /// Rows with `step <= last_step`.
    pub fn truncated(&self, last_step: u64) -> LossTrace {
        let n = self.rows.partition_point(|r| r.step <= last_step);
        LossTrace {
            rows: self.rows[..n].to_vec(),
            wall_s: self.wall_s[..n].to_vec(),
        }
    }

    /// Mean of `L_f` over the trailing `window` rows ending at `step`.
    pub fn smoothed_loss_f(&self, step: u64, window: usize) -> Option<f64> {
        let end = self.rows.partition_point(|r| r.step <= step);
        if end == 0 || window == 0 {
            return None;
        }
        let start = end.saturating_sub(window);
        let slice = &self.rows[start..end];
        Some(slice.iter().map(|r| r.loss_f).sum::<f64>() / slice.len() as f64)
    }

    /// `(mean, std)` of `L_V` over the last `fraction` of the rows.
    pub fn loss_v_tail(&self, fraction: f64) -> Option<(f64, f64)> {
        let n = ((self.rows.len() as f64) * fraction).ceil() as usize;
        if n == 0 {
            return None;
        }
        let tail: Vec<f64> = self.rows[self.rows.len() - n..].iter().map(|r| r.loss_v).collect();
        let mean = tail.iter().sum::<f64>() / n as f64;
        let var = tail.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        Some((mean, var.sqrt()))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        w.write_record(TRACE_HEADER).map_err(csv_err)?;
        for r in &self.rows {
            w.write_record([
                r.step.to_string(),
                r.loss_f.to_string(),
                r.loss_v.to_string(),
                r.w_mean_preclamp.to_string(),
                r.w_min.to_string(),
                r.w_max.to_string(),
                r.clamp_rate.to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a trace written by [`LossTrace::write_csv`]. Wall-clock times
    /// are not stored on disk and come back as zero.
    pub fn read_csv(path: &Path) -> Result<LossTrace> {
        let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
        let header: Vec<String> = r.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
        if header != TRACE_HEADER {
            return Err(Error::Config(format!("{}: unexpected trace header {header:?}", path.display())));
        }
        let mut trace = LossTrace::new();
        for rec in r.records() {
            let rec = rec.map_err(csv_err)?;
            let f = |i: usize| -> Result<f64> {
                rec[i].parse::<f64>().map_err(|e| Error::Config(format!("{}: bad value '{}': {e}", path.display(), &rec[i])))
            };
            let step = rec[0].parse::<u64>().map_err(|e| Error::Config(format!("{}: bad step: {e}", path.display())))?;
            trace.push(
                TraceRow {
                    step,
                    loss_f: f(1)?,
                    loss_v: f(2)?,
                    w_mean_preclamp: f(3)?,
                    w_min: f(4)?,
                    w_max: f(5)?,
                    clamp_rate: f(6)?,
                },
                0.0,
            )?;
        }
        Ok(trace)
    }
}

/// End-of-run record written as `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub steps_completed: u64,
    pub final_loss_f: f64,
    pub final_loss_v: f64,
    /// Trailing 1000-row mean of `L_f` at the last step.
    pub smoothed_loss_f: f64,
    pub wall_seconds: f64,
    pub checkpoints: Vec<String>,
    pub metrics: Option<MetricReport>,
    pub saliency: Vec<SaliencySummary>,
}

#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub config: TrainConfig,
    pub state: TrainState,
    pub trace: LossTrace,
    pub summary: RunSummary,
    pub out_dir: Option<PathBuf>,
    /// Samples drawn from the EMA drift when the run evaluates itself.
    pub samples: Option<Tensor>,
}

/// Output location and progress reporting for a run.
#[derive(Default)]
pub struct RunOptions<'a> {
    pub out_dir: Option<PathBuf>,
    /// Called after every logged step.
    pub progress: Option<&'a mut (dyn FnMut(&TraceRow) + Send)>,
}

impl<'a> RunOptions<'a> {
    pub fn in_dir(dir: impl Into<PathBuf>) -> Self {
        RunOptions {
            out_dir: Some(dir.into()),
            progress: None,
        }
    }
}

pub fn checkpoint_path(dir: &Path, step: u64) -> PathBuf {
    dir.join("checkpoints").join(format!("step_{step}.agmckpt"))
}

/// Trains from scratch for `cfg.steps` steps.
pub fn run_training(cfg: &TrainConfig, opts: RunOptions<'_>) -> Result<RunArtifacts> {
    cfg.validate()?;
    let state = TrainState::new(cfg)?;
    continue_training(cfg, state, LossTrace::new(), opts)
}

/// Config and state saved in a checkpoint file.
pub fn load_run_state(path: &Path) -> Result<(TrainConfig, TrainState)> {
    TrainState::from_checkpoint(&load_checkpoint(path)?)
}

/// Resumes from a checkpoint until `cfg.steps`. If the output directory
/// already holds a trace, its rows up to the checkpoint step are kept.
pub fn resume_training(cfg: &TrainConfig, state: TrainState, opts: RunOptions<'_>) -> Result<RunArtifacts> {
    cfg.validate()?;
    let prior = match &opts.out_dir {
        Some(dir) if dir.join("trace.csv").exists() => LossTrace::read_csv(&dir.join("trace.csv"))?.truncated(state.step),
        _ => LossTrace::new(),
    };
    continue_training(cfg, state, prior, opts)
}

fn write_error_record(dir: &Path, err: &Error, step: u64) {
    let detail = match err {
        Error::NonFinite { detail, .. } => serde_json::from_str(detail).unwrap_or(serde_json::Value::String(detail.clone())),
        other => serde_json::Value::String(other.to_string()),
    };
    let record = serde_json::json!({"error": err.kind(), "message": err.to_string(), "step": step, "detail": detail});
    let _ = fs::write(dir.join("error.json"), serde_json::to_string_pretty(&record).unwrap_or_default());
}

fn continue_training(cfg: &TrainConfig, mut state: TrainState, mut trace: LossTrace, mut opts: RunOptions<'_>) -> Result<RunArtifacts> {
    if state.step > cfg.steps {
        return Err(Error::Config(format!("checkpoint is at step {} but the run stops at {}", state.step, cfg.steps)));
    }
    let dir = opts.out_dir.clone();
    if let Some(d) = &dir {
        fs::create_dir_all(d.join("checkpoints"))?;
        fs::write(d.join("config.json"), serde_json::to_string_pretty(&cfg.to_json())?)?;
    }
    let start = Instant::now();
    let mut checkpoints = Vec::new();
    let save = |state: &TrainState, trace: &LossTrace, checkpoints: &mut Vec<String>| -> Result<()> {
        if let Some(d) = &dir {
            let path = checkpoint_path(d, state.step);
            save_checkpoint(&path, &state.to_checkpoint(cfg))?;
            trace.write_csv(&d.join("trace.csv"))?;
            checkpoints.push(path.strip_prefix(d).unwrap_or(&path).display().to_string());
        }
        Ok(())
    };
    while state.step < cfg.steps {
        let rec = match train_step(&mut state, cfg) {
            Ok(r) => r,
            Err(e) => {
                if let Some(d) = &dir {
                    let _ = trace.write_csv(&d.join("trace.csv"));
                    write_error_record(d, &e, state.step + 1);
                }
                return Err(e);
            }
        };
        if rec.step % cfg.log_every == 0 || rec.step == cfg.steps {
            let row = TraceRow::from(&rec);
            trace.push(row, start.elapsed().as_secs_f64())?;
            if let Some(p) = opts.progress.as_mut() {
                p(&row);
            }
        }
        if cfg.checkpoint_every > 0 && rec.step % cfg.checkpoint_every == 0 && rec.step != cfg.steps {
            save(&state, &trace, &mut checkpoints)?;
        }
    }
    save(&state, &trace, &mut checkpoints)?;

    let (metrics, saliency, samples) = if cfg.evaluate { self_evaluate(cfg, &state)? } else { (None, Vec::new(), None) };
    let last = trace.last().copied();
    let summary = RunSummary {
        seed: cfg.seed,
        steps_completed: state.step,
        final_loss_f: last.map_or(f64::NAN, |r| r.loss_f),
        final_loss_v: last.map_or(f64::NAN, |r| r.loss_v),
        smoothed_loss_f: trace.smoothed_loss_f(state.step, 1000).unwrap_or(f64::NAN),
        wall_seconds: start.elapsed().as_secs_f64(),
        checkpoints,
        metrics,
        saliency,
    };
    if let Some(d) = &dir {
        if let (Some(m), Some(x)) = (&summary.metrics, &samples) {
            let sidecar = serde_json::json!({
                "config": cfg.sampler,
                "stream": "sampler",
                "seed": cfg.seed,
                "checkpoint": summary.checkpoints.last(),
            });
            write_samples(&d.join("samples.csv"), x, &sidecar)?;
            fs::write(d.join("metrics.json"), serde_json::to_string_pretty(m)?)?;
            fs::write(d.join("metrics.csv"), format!("{}\n{}\n", MetricReport::CSV_HEADER, m.csv_row()))?;
        }
        fs::write(d.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    }
    Ok(RunArtifacts {
        config: cfg.clone(),
        state,
        trace,
        summary,
        out_dir: dir,
        samples,
    })
}

type Evaluation = (Option<MetricReport>, Vec<SaliencySummary>, Option<Tensor>);

/// Samples from the EMA drift on the sampler stream of `cfg.seed`, scores the
/// samples against the held-out set, and summarizes saliency on bridge
/// samples drawn after the held-out set on the evaluation stream.
fn self_evaluate(cfg: &TrainConfig, state: &TrainState) -> Result<Evaluation> {
    let generated = sample(&state.ema, &cfg.sampler, &mut Rng::stream(cfg.seed, Stream::Sampler))?;
    let reference = holdout_split(&cfg.dataset, cfg.seed, cfg.eval.n_eval)?;
    let report = evaluate(&generated, &reference, &cfg.dataset, &cfg.eval, cfg.seed)?;
    let saliency = saliency_summary(cfg, state, cfg.eval.n_eval.min(2_000))?;
    Ok((Some(report), saliency, Some(generated)))
}

/// Mean saliency norm at [`SALIENCY_TIMES`] on `n` bridge samples.
pub fn saliency_summary(cfg: &TrainConfig, state: &TrainState, n: usize) -> Result<Vec<SaliencySummary>> {
    let slices = saliency_at(cfg, &state.potential, &SALIENCY_TIMES, n)?;
    Ok(slices
        .iter()
        .map(|s| SaliencySummary {
            t: s.t,
            mean_norm: s.mean_norm(),
        })
        .collect())
}

/// Saliency of `potential` on `n` bridge samples per time, drawn from the
/// evaluation stream of `cfg.seed` after the held-out set.
pub fn saliency_at(cfg: &TrainConfig, potential: &PotentialNet, times: &[f64], n: usize) -> Result<Vec<SaliencySlice>> {
    let mut rng = Rng::stream(cfg.seed, Stream::Eval);
    holdout_skip(cfg, &mut rng)?;
    saliency_slices(potential, &cfg.dataset, &cfg.schedule, times, n, &mut rng)
}

/// Advances an evaluation stream past the held-out set.
fn holdout_skip(cfg: &TrainConfig, rng: &mut Rng) -> Result<()> {
    crate::data::sample_data(&cfg.dataset, cfg.eval.n_eval, rng).map(|_| ())
}
