//! Two-phase training loop, run directories, resume, and the paired
//! ablation harness.
//!
//! Each step updates the potential first, then computes importance weights
//! from the updated potential, then updates the drift, then the EMA shadow.

mod ablation;
mod config;
mod optim;
mod run;
mod step;

pub use ablation::{ablation_pair, json_diff_paths, run_ablation, AblationPair, ArmRun, AblationReport, Comparison, MetricDelta};
pub use config::{ModelConfig, TrainConfig};
pub use optim::Adam;
pub use run::{
    checkpoint_path, load_run_state, resume_training, run_training, saliency_at, saliency_summary, LossTrace, RunArtifacts, RunOptions, RunSummary, TraceRow,
    SALIENCY_TIMES, TRACE_HEADER,
};
pub use step::{draw_step_inputs, train_step, StepInputs, StepRecord, TrainState};
