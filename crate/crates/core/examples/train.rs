//! Trains on a toy dataset and prints the loss trace.
//!
//! `cargo run --release --example train -- [steps] [dataset] [out_dir]`

use agm::data::{ToyDistribution, ToyKind};
use agm::trainer::{run_training, RunOptions, TrainConfig, TraceRow};

fn main() -> agm::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let steps = args.get(1).map_or(Ok(2_000), |s| s.parse()).expect("steps is an integer");
    let kind = ToyKind::parse(args.get(2).map_or("eight_gaussians", String::as_str))?;
    let cfg = TrainConfig {
        steps,
        dataset: ToyDistribution::new(kind),
        sampler: agm::sampler::SamplerConfig { n_samples: 2_000, ..Default::default() },
        eval: agm::eval::EvalConfig { n_eval: 2_000, ..Default::default() },
        ..TrainConfig::default()
    }
    .resolved();

    let every = (steps / 10).max(1);
    let mut progress = |r: &TraceRow| {
        if r.step.is_multiple_of(every) {
            println!("step {:>6}  L_f {:.4}  L_V {:.4}  w in [{:.3}, {:.3}]", r.step, r.loss_f, r.loss_v, r.w_min, r.w_max);
        }
    };
    let run = run_training(
        &cfg,
        RunOptions {
            out_dir: args.get(3).map(Into::into),
            progress: Some(&mut progress),
        },
    )?;
    if let Some(m) = &run.summary.metrics {
        println!("\nsliced W2 {:.4}  precision {:.3}  recall {:.3}  modes {:?}", m.sliced_w2, m.precision, m.recall, m.mode_coverage);
    }
    Ok(())
}
