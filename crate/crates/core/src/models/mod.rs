//! Drift and potential networks, the EMA shadow, and checkpoint files.

pub mod checkpoint;
mod drift;
mod ema;
mod params;
mod potential;

pub use checkpoint::{load_checkpoint, save_checkpoint, Block, Checkpoint};
pub use drift::{drift_forward, sinusoidal_embedding, DriftArch, DriftNet};
pub use ema::{ema_update, EmaShadow};
pub use params::{Param, ParamSet};
pub use potential::{potential_forward, PotentialArch, PotentialNet};
