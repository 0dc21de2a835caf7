//! The `agm` command line.
//!
//! Exit codes: 0 on success, 1 on usage errors (bad flags, unknown config
//! keys, invalid values), 2 on runtime aborts. Runtime aborts print a JSON
//! error record on stderr and, for commands with an output directory, also
//! write it to `error.json` there.

mod config;

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

pub use config::{apply_set, merge_checked, resolve_config};

use crate::data::holdout_split;
use crate::error::Error;
use crate::eval::{evaluate, gradcheck_suite_with, GradcheckConfig};
use crate::models::load_checkpoint;
use crate::numerics::{Rng, Stream};
use crate::sampler::{read_samples_csv, sample, write_samples};
use crate::trainer::{resume_training, run_ablation, run_training, saliency_at, RunOptions, TrainConfig, TrainState, TraceRow, SALIENCY_TIMES};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Runtime(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "agm", version, about = "Potential-weighted bridge matching on 2-D toy data")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one run and write its run directory.
    Train(TrainArgs),
    /// Paired runs with and without the potential weighting.
    Ablate(AblateArgs),
    /// Draw samples from a checkpoint's EMA drift.
    Sample(SampleArgs),
    /// Score a run directory or a sample CSV.
    Metrics(MetricsArgs),
    /// Compare every analytic gradient with central differences.
    Gradcheck(GradcheckArgs),
    /// Potential input gradients on bridge samples at chosen times.
    Saliency(SaliencyArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// 20k steps, batch 256, EMA 0.999.
    Desk,
    /// 500k steps, batch 128, EMA 0.9999.
    Publication,
}

impl Preset {
    pub fn config(self) -> TrainConfig {
        match self {
            Preset::Desk => TrainConfig::default(),
            Preset::Publication => TrainConfig::publication(),
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct ConfigArgs {
    /// JSON file merged over the preset.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// `dotted.key=value`, applied after the file; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
    /// Toy dataset kind (eight_gaussians, two_moons, checkerboard, spiral).
    #[arg(long)]
    pub dataset: Option<String>,
    #[arg(long, value_enum, default_value_t = Preset::Desk)]
    pub preset: Preset,
}

impl ConfigArgs {
    fn resolve(&self) -> CliResult<TrainConfig> {
        resolve_config(&self.preset.config(), self.config.as_deref(), self.dataset.as_deref(), &self.sets)
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Run directory; defaults to the checkpoint's run directory on resume.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Continue from a checkpoint. Its config is the base for overrides.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long, short)]
    pub quiet: bool,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long, default_value = "runs/ablation")]
    pub out: PathBuf,
    /// Number of paired seeds, starting at the configured seed.
    #[arg(long, default_value_t = 1)]
    pub seeds: u64,
    /// Concurrent runs; defaults to the available parallelism.
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub nfe: Option<usize>,
    #[arg(long = "sigma-sde")]
    pub sigma_sde: Option<f64>,
    #[arg(long)]
    pub n: Option<usize>,
    /// Sampler seed; defaults to `sampler.seed` of the checkpoint's config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Sample CSV; a JSON sidecar is written next to it.
    #[arg(long, default_value = "samples.csv")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    /// Run directory (uses its config.json and samples.csv) or a sample CSV.
    pub path: PathBuf,
    /// Configuration used when `path` is a CSV.
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Reference CSV; defaults to the held-out set of the configured seed.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// Where to write the JSON report. A run directory gets `metrics.json`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Optional JSON report.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SaliencyArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Comma-separated times in [0, 1].
    #[arg(long = "t", value_delimiter = ',', default_values_t = SALIENCY_TIMES.to_vec())]
    pub times: Vec<f64>,
    /// Bridge samples per time.
    #[arg(long, default_value_t = 512)]
    pub n: usize,
    #[arg(long, default_value = "saliency.csv")]
    pub out: PathBuf,
}

/// Parses `args` (program name first), runs the command, and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let out_dir = match &cli.command {
        Command::Train(a) => a.out.clone(),
        Command::Ablate(a) => Some(a.out.clone()),
        _ => None,
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            1
        }
        Err(CliError::Runtime(e)) => {
            let record = json!({"error": e.kind(), "message": e.to_string()});
            eprintln!("{record}");
            if let Some(d) = out_dir.filter(|d| d.is_dir() && !d.join("error.json").exists()) {
                let _ = fs::write(d.join("error.json"), serde_json::to_string_pretty(&record).unwrap_or_default());
            }
            2
        }
    }
}

fn dispatch(cmd: Command) -> CliResult<()> {
    match cmd {
        Command::Train(a) => cmd_train(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::Sample(a) => cmd_sample(a),
        Command::Metrics(a) => cmd_metrics(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::Saliency(a) => cmd_saliency(a),
    }
}

/// Prints to stdout; a closed pipe is not an error.
fn say(text: impl std::fmt::Display) {
    let _ = writeln!(std::io::stdout().lock(), "{text}");
}

fn load_state(path: &Path) -> CliResult<(TrainConfig, TrainState)> {
    Ok(TrainState::from_checkpoint(&load_checkpoint(path)?)?)
}

fn cmd_train(a: TrainArgs) -> CliResult<()> {
    let every = |steps: u64| (steps / 20).max(1);
    let print = |row: &TraceRow, steps: u64| {
        if row.step.is_multiple_of(every(steps)) || row.step == steps {
            eprintln!(
                "step {:>7}/{steps}  L_f {:.5}  L_V {:.5}  w [{:.3}, {:.3}]  clamp {:.3}",
                row.step, row.loss_f, row.loss_v, row.w_min, row.w_max, row.clamp_rate
            );
        }
    };
    let (cfg, run) = match &a.resume {
        Some(ckpt) => {
            let (base, state) = load_state(ckpt)?;
            let cfg = a.config.resolve_over(&base)?;
            if cfg.model != base.model || cfg.dataset.kind != base.dataset.kind {
                return Err(CliError::Usage("model and dataset kind cannot change on resume".into()));
            }
            let out = a.out.clone().or_else(|| ckpt.parent().and_then(Path::parent).map(Path::to_path_buf));
            let steps = cfg.steps;
            let mut progress = |r: &TraceRow| print(r, steps);
            let opts = RunOptions {
                out_dir: out,
                progress: if a.quiet { None } else { Some(&mut progress) },
            };
            let run = resume_training(&cfg, state, opts)?;
            (cfg, run)
        }
        None => {
            let cfg = a.config.resolve()?;
            let out = a.out.clone().ok_or_else(|| CliError::Usage("train needs --out".into()))?;
            let steps = cfg.steps;
            let mut progress = |r: &TraceRow| print(r, steps);
            let opts = RunOptions {
                out_dir: Some(out),
                progress: if a.quiet { None } else { Some(&mut progress) },
            };
            let run = run_training(&cfg, opts)?;
            (cfg, run)
        }
    };
    let dir = run.out_dir.as_deref().map(|d| d.display().to_string()).unwrap_or_default();
    say(serde_json::to_string_pretty(&json!({"out": dir, "steps": cfg.steps, "summary": run.summary}))?);
    Ok(())
}

impl ConfigArgs {
    fn resolve_over(&self, base: &TrainConfig) -> CliResult<TrainConfig> {
        resolve_config(base, self.config.as_deref(), self.dataset.as_deref(), &self.sets)
    }
}

fn cmd_ablate(a: AblateArgs) -> CliResult<()> {
    let cfg = a.config.resolve()?;
    if a.seeds == 0 {
        return Err(CliError::Usage("--seeds must be at least 1".into()));
    }
    let seeds: Vec<u64> = (0..a.seeds).map(|i| cfg.seed + i).collect();
    let workers = a.workers.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let (_, report) = run_ablation(&cfg, &seeds, Some(a.out.clone()), workers).map_err(|e| match e {
        Error::Config(m) => CliError::Usage(m),
        other => CliError::Runtime(other),
    })?;
    for (seed, c) in report.seeds.iter().zip(&report.per_seed) {
        say(format!("seed {seed}\n{}", c.render()));
    }
    say(format!("median over {} seed(s)\n{}", report.seeds.len(), report.median.render()));
    say(format!("report: {}", a.out.join("ablation.json").display()));
    Ok(())
}

fn cmd_sample(a: SampleArgs) -> CliResult<()> {
    let (cfg, state) = load_state(&a.ckpt)?;
    let mut sc = cfg.sampler.clone();
    sc.nfe = a.nfe.unwrap_or(sc.nfe);
    sc.sigma_sde = a.sigma_sde.unwrap_or(sc.sigma_sde);
    sc.n_samples = a.n.unwrap_or(sc.n_samples);
    sc.seed = a.seed.unwrap_or(sc.seed);
    sc.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let samples = sample(&state.ema, &sc, &mut Rng::stream(sc.seed, Stream::Sampler))?;
    let sidecar = json!({
        "config": sc,
        "stream": "sampler",
        "seed": sc.seed,
        "checkpoint": a.ckpt.display().to_string(),
        "checkpoint_step": state.step,
        "dataset": cfg.dataset,
    });
    write_samples(&a.out, &samples, &sidecar)?;
    say(json!({"out": a.out.display().to_string(), "n": sc.n_samples, "nfe": sc.nfe, "sigma_sde": sc.sigma_sde}));
    Ok(())
}

fn cmd_metrics(a: MetricsArgs) -> CliResult<()> {
    let (cfg, samples_path, default_out) = if a.path.is_dir() {
        let text = fs::read_to_string(a.path.join("config.json"))?;
        let cfg: TrainConfig = serde_json::from_str(&text)?;
        (cfg.resolved(), a.path.join("samples.csv"), Some(a.path.join("metrics.json")))
    } else {
        (a.config.resolve()?, a.path.clone(), None)
    };
    let generated = read_samples_csv(&samples_path)?;
    let reference = match &a.reference {
        Some(p) => read_samples_csv(p)?,
        None => holdout_split(&cfg.dataset, cfg.seed, cfg.eval.n_eval)?,
    };
    let report = evaluate(&generated, &reference, &cfg.dataset, &cfg.eval, cfg.seed)?;
    let text = serde_json::to_string_pretty(&report)?;
    if let Some(out) = a.out.or(default_out) {
        fs::write(out, &text)?;
    }
    say(&text);
    Ok(())
}

fn cmd_gradcheck(a: GradcheckArgs) -> CliResult<()> {
    let report = gradcheck_suite_with(&GradcheckConfig {
        seed: a.seed,
        ..GradcheckConfig::default()
    })?;
    for c in &report.checks {
        let worst = c.blocks.iter().map(|b| b.rel_err).fold(0.0, f64::max);
        say(format!("{} {:<48} worst rel err {worst:.2e}", if c.passed { "ok  " } else { "FAIL" }, c.name));
    }
    if let Some(out) = &a.out {
        fs::write(out, serde_json::to_string_pretty(&report)?)?;
    }
    report.into_result()?;
    Ok(())
}

fn cmd_saliency(a: SaliencyArgs) -> CliResult<()> {
    if let Some(t) = a.times.iter().find(|t| !(0.0..=1.0).contains(*t)) {
        return Err(CliError::Usage(format!("--t values must lie in [0, 1], got {t}")));
    }
    if a.n == 0 {
        return Err(CliError::Usage("--n must be at least 1".into()));
    }
    let (cfg, state) = load_state(&a.ckpt)?;
    let slices = saliency_at(&cfg, &state.potential, &a.times, a.n)?;
    if let Some(dir) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut w = csv::Writer::from_path(&a.out).map_err(crate::sampler::csv_err)?;
    w.write_record(["t", "x0", "x1", "grad_x0", "grad_x1", "grad_norm"]).map_err(crate::sampler::csv_err)?;
    let mut summary = Vec::new();
    for s in &slices {
        for ((x, g), norm) in s.xt.data().chunks_exact(2).zip(s.grad.data().chunks_exact(2)).zip(s.norms()) {
            w.write_record([s.t, x[0], x[1], g[0], g[1], norm].map(|v| v.to_string())).map_err(crate::sampler::csv_err)?;
        }
        summary.push(json!({"t": s.t, "mean_norm": s.mean_norm(), "n": a.n}));
    }
    w.flush()?;
    let sidecar = json!({"checkpoint": a.ckpt.display().to_string(), "checkpoint_step": state.step, "slices": summary});
    fs::write(a.out.with_extension("json"), serde_json::to_string_pretty(&sidecar)?)?;
    say(serde_json::to_string_pretty(&sidecar)?);
    Ok(())
}
