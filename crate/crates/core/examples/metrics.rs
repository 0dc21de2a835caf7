//! Sliced W2, k-NN precision/recall and mode coverage for a few corrupted
//! copies of a toy dataset.

use agm::data::{holdout_split, sample_data, ToyDistribution, ToyKind};
use agm::eval::{evaluate, EvalConfig};
use agm::numerics::{Rng, Tensor};

fn main() -> agm::Result<()> {
    let dist = ToyDistribution::new(ToyKind::EightGaussians);
    let cfg = EvalConfig { n_eval: 2_000, ..EvalConfig::default() };
    let reference = holdout_split(&dist, 0, cfg.n_eval)?;
    let mut rng = Rng::new(1);
    let fresh = sample_data(&dist, cfg.n_eval, &mut rng)?;

    let shrunk = fresh.scale(0.7)?;
    // Three of eight modes dropped: keep points in the upper half plane or on the x axis.
    let kept: Vec<f64> = fresh.data().chunks_exact(2).filter(|p| p[1] > -0.5).flatten().copied().collect();
    let collapsed = Tensor::new(&[kept.len() / 2, 2], kept)?;
    let noisy = fresh.add(&rng.standard_normal(fresh.shape()).scale(0.5)?)?;

    println!("{:<12} {:>10} {:>10} {:>8} {:>8}", "samples", "sliced W2", "precision", "recall", "modes");
    for (name, x) in [("fresh", &fresh), ("shrunk", &shrunk), ("collapsed", &collapsed), ("noisy", &noisy)] {
        let m = evaluate(x, &reference, &dist, &cfg, 0)?;
        println!("{name:<12} {:>10.4} {:>10.3} {:>8.3} {:>8.3}", m.sliced_w2, m.precision, m.recall, m.mode_coverage.unwrap_or(f64::NAN));
    }
    Ok(())
}
