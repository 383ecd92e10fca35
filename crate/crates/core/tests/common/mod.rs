//! Helpers shared by the integration test targets.
#![allow(dead_code)]

pub mod lattice;

use primdiff::dynamics::{ModelId, RobotModel};
use primdiff::trajopt::{OptSettings, Transcription};
use primdiff::world::{sample_instance, InstanceGenConfig, Robot};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const MODELS: [ModelId; 3] = [ModelId::Unicycle1, ModelId::Unicycle2, ModelId::CarTrailer];

fn finite_box(lo: f64, hi: f64, fallback: (f64, f64)) -> (f64, f64) {
    (if lo.is_finite() { lo } else { fallback.0 }, if hi.is_finite() { hi } else { fallback.1 })
}

/// Random state in a `[0, 5]²` workspace with bounded non-translational parts.
pub fn random_state(m: &RobotModel, rng: &mut impl Rng) -> Vec<f64> {
    (0..m.d_q)
        .map(|i| {
            if m.translation_indices.contains(&i) {
                rng.random_range(0.5..4.5)
            } else if m.angle_indices.contains(&i) {
                rng.random_range(-2.5..2.5)
            } else {
                let (lo, hi) = finite_box(m.q_lo[i], m.q_hi[i], (-1.0, 1.0));
                rng.random_range(lo..hi)
            }
        })
        .collect()
}

pub fn random_action(m: &RobotModel, rng: &mut impl Rng) -> Vec<f64> {
    (0..m.d_u).map(|j| rng.random_range(m.u_lo[j] * 0.95..m.u_hi[j] * 0.95)).collect()
}

/// Largest relative error (‖analytic − fd‖∞ / max(‖fd‖∞, 1e-8)) of the step
/// Jacobians against central differences over `cases` random points.
pub fn jacobian_fd_worst(id: ModelId, cases: usize, seed: u64) -> f64 {
    let m = RobotModel::new(id);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = 1e-6;
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let q = random_state(&m, &mut rng);
        let u = random_action(&m, &mut rng);
        let (jq, ju) = m.jacobians(&q, &u).unwrap();
        for (wrt_q, jac) in [(true, &jq), (false, &ju)] {
            let n = if wrt_q { m.d_q } else { m.d_u };
            let mut err = 0.0f64;
            let mut scale = 0.0f64;
            for j in 0..n {
                let (mut qp, mut qm, mut up, mut um) = (q.clone(), q.clone(), u.clone(), u.clone());
                if wrt_q {
                    qp[j] += h;
                    qm[j] -= h;
                } else {
                    up[j] += h;
                    um[j] -= h;
                }
                let fp = m.step(&qp, &up).unwrap();
                let fm = m.step(&qm, &um).unwrap();
                for i in 0..m.d_q {
                    let fd = (fp[i] - fm[i]) / (2.0 * h);
                    err = err.max((jac[(i, j)] - fd).abs());
                    scale = scale.max(fd.abs());
                }
            }
            worst = worst.max(err / scale.max(1e-8));
        }
    }
    worst
}

/// Largest relative error of the penalty objective gradient against central
/// differences, on random trajectories through random cluttered workspaces.
pub fn gradient_fd_worst(id: ModelId, cases: usize, seed: u64) -> f64 {
    let robot = Robot::from_id(id);
    let m = &robot.model;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let settings = OptSettings::default();
    let gen = InstanceGenConfig { model: id, width_range: (5.0, 5.0), height_range: (5.0, 5.0), density: 0.3, ..Default::default() };
    let h = 1e-6;
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let inst = sample_instance(&gen, &robot, &mut rng).unwrap();
        let horizon = rng.random_range(3..8);
        let start = random_state(m, &mut rng);
        let goal = random_state(m, &mut rng);
        let tr = Transcription::new(&robot, Some(&inst), &start, &goal, horizon, &settings);
        let states: Vec<Vec<f64>> = (0..=horizon).map(|_| random_state(m, &mut rng)).collect();
        let actions: Vec<Vec<f64>> = (0..horizon).map(|_| random_action(m, &mut rng)).collect();
        let z = tr.pack(&states, &actions);
        let rho = 10f64.powi(rng.random_range(0..3));
        let g = tr.gradient(&z, rho);
        let mut err = 0.0f64;
        let mut scale = 0.0f64;
        for j in 0..z.len() {
            let (mut zp, mut zm) = (z.clone(), z.clone());
            zp[j] += h;
            zm[j] -= h;
            let fd = (tr.value(&zp, rho) - tr.value(&zm, rho)) / (2.0 * h);
            err = err.max((g[j] - fd).abs());
            scale = scale.max(fd.abs());
        }
        worst = worst.max(err / scale.max(1e-8));
    }
    worst
}

pub mod ddpm {
    use primdiff::diffusion::{forward_noise, make_schedule, train, Ddpm, ScheduleKind, Scaling, TrainConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal, StandardNormal};

    /// Worst relative error of the empirical forward-noise mean and per-dimension
    /// variance against `√α_t p₀` and `1 − α_t`, over several `t`.
    pub fn forward_law_worst(draws: usize, seed: u64) -> f64 {
        let sched = make_schedule(ScheduleKind::Linear, 100, 1e-4, 0.02).unwrap();
        let p0 = [1.5, -0.8, 0.4];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst = 0.0f64;
        for t in [1, 10, 50, 100] {
            let a = sched.alpha(t);
            let mut sum = [0.0; 3];
            let mut sq = 0.0;
            for _ in 0..draws {
                let eps: Vec<f64> = (0..3).map(|_| rng.sample(StandardNormal)).collect();
                let pt = forward_noise(&p0, t, &eps, &sched);
                for i in 0..3 {
                    sum[i] += pt[i];
                    let dev = pt[i] - a.sqrt() * p0[i];
                    sq += dev * dev;
                }
            }
            for i in 0..3 {
                let mean = sum[i] / draws as f64;
                let want = a.sqrt() * p0[i];
                worst = worst.max((mean - want).abs() / want.abs());
            }
            let var = sq / (3 * draws) as f64;
            worst = worst.max((var - (1.0 - a)).abs() / (1.0 - a));
        }
        worst
    }

    pub fn toy_config(epochs: usize, seed: u64) -> TrainConfig {
        TrainConfig { hidden: vec![64, 64], epochs, batch_size: 128, learning_rate: 2e-3, seed, ..Default::default() }
    }

    /// Trains an unconditional 1-D sampler on `data`.
    pub fn train_1d(data: &[f64], epochs: usize, seed: u64) -> Ddpm {
        let rows: Vec<Vec<f64>> = data.iter().map(|&x| vec![x]).collect();
        let conds = vec![Vec::new(); rows.len()];
        let (model, _) = train(&rows, &conds, Scaling::fit(&rows), Scaling::identity(0), &toy_config(epochs, seed)).unwrap();
        model
    }

    pub fn draw_1d(model: &Ddpm, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| model.sample(&[], &mut rng).unwrap()[0]).collect()
    }

    pub fn mean_std(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
        (m, v.sqrt())
    }

    /// Sampled mean and std after training on 𝒩(3, 0.5²).
    pub fn gaussian_recovery(seed: u64) -> (f64, f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(3.0, 0.5).unwrap();
        let data: Vec<f64> = (0..4096).map(|_| normal.sample(&mut rng)).collect();
        let model = train_1d(&data, 60, seed);
        mean_std(&draw_1d(&model, 10_000, seed + 1))
    }

    /// Fraction of samples in the positive mode after training on an even
    /// mixture of 𝒩(±2, 0.3²).
    pub fn mixture_mode_mass(seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 0.3).unwrap();
        let data: Vec<f64> =
            (0..4096).map(|k| if k % 2 == 0 { 2.0 } else { -2.0 } + normal.sample(&mut rng)).collect();
        let model = train_1d(&data, 100, seed);
        let xs = draw_1d(&model, 10_000, seed + 1);
        xs.iter().filter(|&&x| x > 0.0).count() as f64 / xs.len() as f64
    }
}
