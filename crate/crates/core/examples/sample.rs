//! Euler-Maruyama sampling from the EMA drift of a short run, written as CSV.
//!
//! `cargo run --release --example sample -- [out.csv]`

use agm::numerics::{Rng, Stream};
use agm::sampler::{sample, write_samples, SamplerConfig};
use agm::trainer::{run_training, RunOptions, TrainConfig};

fn main() -> agm::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "samples.csv".into());
    let cfg = TrainConfig { steps: 1_500, evaluate: false, checkpoint_every: 0, ..TrainConfig::default() };
    let run = run_training(&cfg, RunOptions::default())?;

    let sc = SamplerConfig { n_samples: 1_000, ..SamplerConfig::default() };
    let x = sample(&run.state.ema, &sc, &mut Rng::stream(cfg.seed, Stream::Sampler))?;
    write_samples(out.as_ref(), &x, &serde_json::json!({"config": sc, "steps": cfg.steps}))?;
    let radius: f64 = x.data().chunks_exact(2).map(|p| p[0].hypot(p[1])).sum::<f64>() / sc.n_samples as f64;
    println!("wrote {} samples to {out}; mean radius {radius:.3} (data ring radius 2)", sc.n_samples);
    Ok(())
}
