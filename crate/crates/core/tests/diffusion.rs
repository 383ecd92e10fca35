mod common;

use common::ddpm::{draw_1d, mean_std};
use primdiff::diffusion::mlp::Mlp;
use primdiff::diffusion::{
    decode_primitive, encoded_dim, make_schedule, sample_with, train, Ddpm, ScheduleKind, ScheduleSpec, Scaling,
    TrainConfig,
};
use primdiff::diffusion::forward_noise;
use primdiff::dynamics::{ModelId, RobotModel};
use primdiff::trajopt::{defects, max_abs};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn gaussian(d: usize, rng: &mut impl Rng) -> Vec<f64> {
    (0..d).map(|_| rng.sample(StandardNormal)).collect()
}

#[test]
fn mlp_gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut net = Mlp::new(&[3, 6, 2], &mut rng);
    // lift the output layer off its small init so every path carries signal
    for p in net.params_mut() {
        *p += rng.random_range(-0.3..0.3);
    }
    let xs: Vec<Vec<f64>> = (0..5).map(|_| gaussian(3, &mut rng)).collect();
    let ys: Vec<Vec<f64>> = (0..5).map(|_| gaussian(2, &mut rng)).collect();
    let (_, grad) = net.loss_and_gradient(&xs, &ys).unwrap();
    let analytic: Vec<f64> = grad.params().copied().collect();
    let h = 1e-6;
    let mut err = 0.0f64;
    let mut scale = 0.0f64;
    for k in 0..analytic.len() {
        let shifted = |delta: f64| {
            let mut n = net.clone();
            *n.params_mut().nth(k).unwrap() += delta;
            n.loss_and_gradient(&xs, &ys).unwrap().0
        };
        let fd = (shifted(h) - shifted(-h)) / (2.0 * h);
        err = err.max((analytic[k] - fd).abs());
        scale = scale.max(fd.abs());
    }
    assert!(err / scale < 1e-4, "relative error {:e}", err / scale);
}

#[test]
fn loss_at_initialization_is_about_the_dimension() {
    let m = RobotModel::new(ModelId::Unicycle1);
    let d = encoded_dim(&m, 10);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let sched = make_schedule(ScheduleKind::Linear, 100, 1e-4, 0.02).unwrap();
    let model = Ddpm::new(Scaling::identity(d), Scaling::identity(9), &[256; 3], 16, ScheduleSpec::default(), &mut rng);
    let n = 2000;
    let mut total = 0.0;
    for _ in 0..n {
        let p0 = gaussian(d, &mut rng);
        let cond = gaussian(9, &mut rng);
        let t = rng.random_range(1..=100);
        let eps = gaussian(d, &mut rng);
        let pred = model.predict(&forward_noise(&p0, t, &eps, &sched), t, &cond).unwrap();
        total += eps.iter().zip(&pred).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    }
    let loss = total / n as f64;
    assert!((loss - d as f64).abs() < 0.2 * d as f64, "loss {loss} vs d = {d}");
}

#[test]
fn single_point_is_overfit_within_2000_steps() {
    let rows = vec![vec![0.7]; 64];
    let conds = vec![Vec::new(); 64];
    let cfg = TrainConfig { hidden: vec![64, 64], epochs: 2000, batch_size: 64, learning_rate: 2e-3, seed: 4, ..Default::default() };
    let (_, curve) = train(&rows, &conds, Scaling::fit(&rows), Scaling::identity(0), &cfg).unwrap();
    let tail = curve[curve.len() - 50..].iter().sum::<f64>() / 50.0;
    assert!(tail < 0.05, "final loss {tail}");
}

#[test]
fn decoding_random_vectors_never_yields_invalid_primitives() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for id in [ModelId::Unicycle1, ModelId::Unicycle2, ModelId::CarTrailer] {
        let m = RobotModel::new(id);
        let (mut ok, mut rejected) = (0, 0);
        for k in 0..10_000 {
            let len = [5, 10, 15, 20][k % 4];
            let raw = gaussian(encoded_dim(&m, len), &mut rng);
            match decode_primitive(&m, &raw, len) {
                Ok(p) => {
                    ok += 1;
                    assert_eq!(p.len(), len);
                    assert!(p.is_canonical(&m));
                    assert!(max_abs(&defects(&m, &p.states, &p.actions)) <= 1e-9);
                    assert!(p.actions.iter().all(|u| m.validate(&p.states[0], Some(u))));
                    p.check(&m, 0).unwrap();
                }
                Err(_) => rejected += 1,
            }
        }
        assert_eq!(ok + rejected, 10_000);
        assert!(ok > 0, "{id}: everything rejected");
    }
}

#[test]
fn exact_noise_oracle_recovers_the_data_point() {
    let sched = make_schedule(ScheduleKind::Linear, 100, 1e-4, 0.02).unwrap();
    let target = [0.5, -1.2, 2.0];
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..20 {
        let oracle = |p: &[f64], t: usize| -> Vec<f64> {
            let a = sched.alpha(t);
            p.iter().zip(&target).map(|(x, x0)| (x - a.sqrt() * x0) / (1.0 - a).sqrt()).collect()
        };
        let x = sample_with(&sched, 3, oracle, &mut rng);
        for (a, b) in x.iter().zip(&target) {
            assert!((a - b).abs() < 0.1, "{x:?}");
        }
    }
}

#[test]
fn sampling_is_deterministic_per_seed() {
    let rows: Vec<Vec<f64>> = (0..32).map(|k| vec![k as f64 / 32.0]).collect();
    let conds = vec![Vec::new(); 32];
    let cfg = TrainConfig { hidden: vec![8], epochs: 2, batch_size: 8, ..Default::default() };
    let (model, _) = train(&rows, &conds, Scaling::fit(&rows), Scaling::identity(0), &cfg).unwrap();
    assert_eq!(draw_1d(&model, 20, 3), draw_1d(&model, 20, 3));
    assert_ne!(draw_1d(&model, 20, 3), draw_1d(&model, 20, 4));
    let (m, s) = mean_std(&draw_1d(&model, 200, 1));
    assert!(m.is_finite() && s.is_finite());
}

#[test]
fn non_finite_loss_aborts_with_diagnostics() {
    let rows = vec![vec![1e200], vec![-1e200]];
    let conds = vec![Vec::new(); 2];
    let cfg = TrainConfig { hidden: vec![4], epochs: 3, batch_size: 2, ..Default::default() };
    let scaling = Scaling::identity(1);
    let err = train(&rows, &conds, scaling, Scaling::identity(0), &cfg).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("epoch 0"), "{msg}");
}
