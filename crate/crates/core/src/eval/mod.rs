//! Distribution metrics, potential saliency and the gradient audit.

mod gradcheck;
mod metrics;
mod saliency;

pub use gradcheck::{gradcheck_suite, gradcheck_suite_with, BlockCheck, CheckResult, GradcheckConfig, GradcheckReport};
pub use metrics::{evaluate, knn_precision_recall, mode_coverage, random_directions, sliced_w2, sliced_w2_directions, w2_1d, EvalConfig, MetricReport};
pub use saliency::{potential_saliency, saliency_slices, SaliencySlice, SaliencySummary};
