//! A run interrupted at a checkpoint and resumed reproduces the unbroken run.

use agm::trainer::{checkpoint_path, load_run_state, resume_training, run_training, RunOptions, TrainConfig};

fn main() -> agm::Result<()> {
    let dir = std::env::temp_dir().join(format!("agm-resume-{}", std::process::id()));
    let cfg = TrainConfig { steps: 200, checkpoint_every: 100, evaluate: false, ..TrainConfig::default() };

    let unbroken = run_training(&cfg, RunOptions::default())?;
    run_training(&TrainConfig { steps: 100, ..cfg.clone() }, RunOptions::in_dir(&dir))?;
    let (saved, state) = load_run_state(&checkpoint_path(&dir, 100))?;
    println!("resuming at step {} from {}", state.step, dir.display());
    let resumed = resume_training(&TrainConfig { steps: 200, ..saved }, state, RunOptions::in_dir(&dir))?;

    let same = resumed.trace.rows() == unbroken.trace.rows() && resumed.state == unbroken.state;
    println!("final L_f {:.6} vs {:.6}; identical trace and state: {same}", resumed.trace.last().unwrap().loss_f, unbroken.trace.last().unwrap().loss_f);
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}
