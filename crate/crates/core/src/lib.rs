pub mod bridge;
pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod models;
pub mod numerics;
pub mod objective;
pub mod sampler;
pub mod trainer;

pub use error::{Error, Result};
