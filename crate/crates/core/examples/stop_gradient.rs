//! How much drift-loss gradient reaches the potential, with and without the
//! stop-gradient on the importance weights.

use agm::bridge::{build_bridge, ScheduleParams};
use agm::data::{sample_data, ToyDistribution, ToyKind};
use agm::models::{DriftArch, DriftNet, PotentialArch, PotentialNet};
use agm::numerics::Rng;
use agm::objective::{grad_flow_diagnostic, ObjectiveConfig};

fn main() -> agm::Result<()> {
    let mut rng = Rng::new(0);
    let drift = DriftNet::new(DriftArch::default(), 2, &mut rng)?;
    let potential = PotentialNet::new(PotentialArch::default(), 2, &mut rng)?;
    let x1 = sample_data(&ToyDistribution::new(ToyKind::EightGaussians), 128, &mut rng)?;
    let x0 = rng.standard_normal(x1.shape());
    let batch = build_bridge(&x0, &x1, &mut rng, &ScheduleParams::default())?;

    for (detach, lambda_v) in [(true, 0.1), (false, 0.1), (false, 0.0)] {
        let cfg = ObjectiveConfig { detach_weights: detach, lambda_v, ..ObjectiveConfig::default() };
        let g = grad_flow_diagnostic(&batch, &drift, &potential, &cfg)?;
        println!("detach={detach:<5} lambda_v={lambda_v:<4} |dL_f/dphi| = {:e}", g.grad_norm_phi_from_lf);
    }
    Ok(())
}
