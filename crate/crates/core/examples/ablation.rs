//! Paired runs with and without potential weighting on the same seeds.
//!
//! `cargo run --release --example ablation -- [steps] [seeds]`

use agm::trainer::{run_ablation, TrainConfig};

fn main() -> agm::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let steps = args.get(1).map_or(Ok(1_000), |s| s.parse()).expect("steps is an integer");
    let n_seeds: u64 = args.get(2).map_or(Ok(2), |s| s.parse()).expect("seeds is an integer");
    let mut cfg = TrainConfig { steps, ..TrainConfig::default() };
    cfg.sampler.n_samples = 2_000;
    cfg.eval.n_eval = 2_000;

    let seeds: Vec<u64> = (0..n_seeds).collect();
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get());
    let (_, report) = run_ablation(&cfg, &seeds, None, workers)?;
    for (seed, c) in report.seeds.iter().zip(&report.per_seed) {
        println!("seed {seed}\n{}", c.render());
    }
    println!("median\n{}", report.median.render());
    Ok(())
}
