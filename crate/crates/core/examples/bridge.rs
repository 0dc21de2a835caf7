//! The noise schedule and one bridge path from a noise draw to a data point.

use agm::bridge::{alpha, build_bridge_at, sigma, ScheduleParams};
use agm::numerics::{Rng, Tensor};

fn main() -> agm::Result<()> {
    let s = ScheduleParams::default();
    println!("{:>5} {:>8} {:>10}", "t", "alpha", "sigma");
    for k in 0..=10 {
        let t = k as f64 / 10.0;
        println!("{t:>5.1} {:>8.4} {:>10.6}", alpha(t)?, sigma(t, &s)?);
    }

    let mut rng = Rng::new(7);
    let x0 = rng.standard_normal(&[1, 2]);
    let x1 = Tensor::from_rows(&[vec![2.0, 0.0]])?;
    let eps = rng.standard_normal(&[1, 2]);
    println!("\npath from {:?} to {:?}", x0.data(), x1.data());
    for k in 0..=4 {
        let t = k as f64 / 4.0;
        let b = build_bridge_at(&x0, &x1, &Tensor::full(&[1], t), &eps, &s)?;
        println!("t={t:.2}  x_t={:?}  target velocity={:?}", b.xt.data(), b.target_velocity.data());
    }
    Ok(())
}
