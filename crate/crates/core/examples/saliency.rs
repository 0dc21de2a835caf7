//! Input-gradient norms of a trained potential at three bridge times.

use agm::trainer::{saliency_at, run_training, RunOptions, TrainConfig, SALIENCY_TIMES};

fn main() -> agm::Result<()> {
    let cfg = TrainConfig { steps: 2_000, evaluate: false, checkpoint_every: 0, ..TrainConfig::default() };
    let run = run_training(&cfg, RunOptions::default())?;
    for s in saliency_at(&cfg, &run.state.potential, &SALIENCY_TIMES, 1_000)? {
        let norms = s.norms();
        let max = norms.iter().copied().fold(0.0, f64::max);
        println!("t={:.1}  mean |grad V| {:.4}  max {:.4}", s.t, s.mean_norm(), max);
    }
    Ok(())
}
