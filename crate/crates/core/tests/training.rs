use agm::data::{ToyDistribution, ToyKind};
use agm::models::{DriftArch, PotentialArch};
use agm::numerics::{Rng, Stream};
use agm::sampler::sample;
use agm::trainer::{draw_step_inputs, run_training, train_step, ModelConfig, RunOptions, TrainConfig, TrainState};

fn small(steps: u64) -> TrainConfig {
    let mut c = TrainConfig {
        steps,
        batch_size: 32,
        lr_f: 2e-3,
        lr_v: 1e-3,
        checkpoint_every: 0,
        evaluate: false,
        model: ModelConfig {
            drift: DriftArch { hidden: vec![32, 32], time_freqs: 4, time_dim: 16 },
            potential: PotentialArch { hidden: vec![16] },
        },
        ..TrainConfig::default()
    };
    c.sampler.n_samples = 300;
    c.sampler.nfe = 20;
    c.eval.n_eval = 300;
    c.eval.n_projections = 32;
    c
}

#[test]
fn identical_configs_give_identical_traces() {
    let a = run_training(&small(30), RunOptions::default()).unwrap();
    let b = run_training(&small(30), RunOptions::default()).unwrap();
    assert_eq!(a.trace.rows(), b.trace.rows());
    let c = run_training(&TrainConfig { seed: 1, ..small(30) }, RunOptions::default()).unwrap();
    assert_ne!(a.trace.rows(), c.trace.rows());
}

#[test]
fn every_dataset_trains_and_evaluates() {
    for kind in ToyKind::ALL {
        let cfg = TrainConfig {
            dataset: ToyDistribution::new(kind),
            evaluate: true,
            ..small(20)
        }
        .resolved();
        let run = run_training(&cfg, RunOptions::default()).unwrap();
        let m = run.summary.metrics.unwrap();
        assert!(m.sliced_w2.is_finite() && (0.0..=1.0).contains(&m.precision), "{kind:?}");
        assert_eq!(m.mode_coverage.is_some(), kind == ToyKind::EightGaussians);
        assert_eq!(run.summary.saliency.len(), 3);
    }
}

#[test]
fn drift_loss_falls_on_a_short_run() {
    let run = run_training(&small(600), RunOptions::default()).unwrap();
    let early = run.trace.smoothed_loss_f(100, 100).unwrap();
    let late = run.trace.smoothed_loss_f(600, 100).unwrap();
    assert!(late < early, "{early} -> {late}");
}

#[test]
fn undetached_weights_change_the_potential_trajectory() {
    let on = small(5);
    let mut off = small(5);
    off.objective.detach_weights = false;
    let (mut a, mut b) = (TrainState::new(&on).unwrap(), TrainState::new(&off).unwrap());
    let r1 = (train_step(&mut a, &on).unwrap(), train_step(&mut b, &off).unwrap());
    assert_eq!(r1.0.loss_v.to_bits(), r1.1.loss_v.to_bits());
    assert!(b.pending_phi.is_some() && a.pending_phi.is_none());
    train_step(&mut a, &on).unwrap();
    train_step(&mut b, &off).unwrap();
    assert_ne!(a.potential, b.potential);
}

#[test]
fn training_stream_is_independent_of_the_sampler_stream() {
    let cfg = small(3);
    let mut state = TrainState::new(&cfg).unwrap();
    let drawn = draw_step_inputs(&cfg, &mut state.rng.clone()).unwrap();
    // Sampling in between does not perturb the next training batch.
    sample(&state.ema, &cfg.sampler, &mut Rng::stream(cfg.seed, Stream::Sampler)).unwrap();
    assert_eq!(draw_step_inputs(&cfg, &mut state.rng).unwrap(), drawn);
}
