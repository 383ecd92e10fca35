//! Conditional denoising diffusion over fixed-size vectors.
//!
//! A network predicts the Gaussian noise mixed into a data point at a given
//! diffusion step; the reverse process then turns pure noise into samples.
//! The submodules map motion primitives to and from such vectors and wrap
//! trained networks as a primitive source for the planner.

mod encoding;
mod generate;
pub mod mlp;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub use encoding::*;
pub use generate::*;
use mlp::{Adam, Mlp, MlpError};

#[derive(Debug, thiserror::Error)]
pub enum DiffusionError {
    #[error("invalid noise schedule: {0}")]
    Schedule(String),
    #[error(transparent)]
    Shape(#[from] MlpError),
    #[error("training diverged at epoch {epoch}, batch {batch}: loss {loss}")]
    NonFinite { epoch: usize, batch: usize, loss: f64 },
    #[error("empty training set")]
    EmptyData,
    #[error("acceptance rate too low for length {length}: {accepted} of {attempts} samples decoded")]
    LowAcceptance { length: usize, accepted: usize, attempts: usize },
    #[error("no model for primitive length {0}")]
    MissingModel(usize),
    #[error("model file {path}: {detail}")]
    Model { path: String, detail: String },
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Linear,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScheduleSpec {
    pub kind: ScheduleKind,
    pub steps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        Self { kind: ScheduleKind::Linear, steps: 100, beta_min: 1e-4, beta_max: 0.02 }
    }
}

/// Per-step noise levels `β_t` and their cumulative products
/// `α_t = Π_{τ≤t}(1−β_τ)`, both indexed from step 1.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
}

impl NoiseSchedule {
    pub fn from_betas(betas: Vec<f64>) -> Result<Self, DiffusionError> {
        if betas.is_empty() {
            return Err(DiffusionError::Schedule("no steps".into()));
        }
        if let Some(b) = betas.iter().find(|b| !(0.0..1.0).contains(*b)) {
            return Err(DiffusionError::Schedule(format!("beta {b} outside [0, 1)")));
        }
        let mut acc = 1.0;
        let alphas = betas
            .iter()
            .map(|b| {
                acc *= 1.0 - b;
                acc
            })
            .collect();
        Ok(Self { betas, alphas })
    }

    pub fn build(spec: &ScheduleSpec) -> Result<Self, DiffusionError> {
        make_schedule(spec.kind, spec.steps, spec.beta_min, spec.beta_max)
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[t - 1]
    }
}

pub fn make_schedule(kind: ScheduleKind, steps: usize, beta_min: f64, beta_max: f64) -> Result<NoiseSchedule, DiffusionError> {
    if !(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0) {
        return Err(DiffusionError::Schedule(format!("need 0 < beta_min <= beta_max < 1, got [{beta_min}, {beta_max}]")));
    }
    if steps == 0 {
        return Err(DiffusionError::Schedule("no steps".into()));
    }
    let betas = match kind {
        ScheduleKind::Linear => (0..steps)
            .map(|k| {
                let w = if steps > 1 { k as f64 / (steps - 1) as f64 } else { 0.0 };
                beta_min + w * (beta_max - beta_min)
            })
            .collect(),
    };
    NoiseSchedule::from_betas(betas)
}

/// `p_t = √α_t p₀ + √(1−α_t) ε`.
pub fn forward_noise(p0: &[f64], t: usize, eps: &[f64], sched: &NoiseSchedule) -> Vec<f64> {
    let a = sched.alpha(t);
    let (sa, sb) = (a.sqrt(), (1.0 - a).sqrt());
    p0.iter().zip(eps).map(|(p, e)| sa * p + sb * e).collect()
}

/// `h(p_t, t) = (p_t − β_t/√(1−α_t)·g) / √(1−β_t)`, with the noise term
/// dropped when `β_t = 0`.
pub fn denoise_step(p: &[f64], g: &[f64], t: usize, sched: &NoiseSchedule) -> Vec<f64> {
    let b = sched.beta(t);
    let rest = 1.0 - sched.alpha(t);
    let k = if b == 0.0 || rest <= 0.0 { 0.0 } else { b / rest.sqrt() };
    let s = (1.0 - b).sqrt();
    p.iter().zip(g).map(|(x, e)| (x - k * e) / s).collect()
}

fn gaussian<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Vec<f64> {
    (0..d).map(|_| rng.sample(StandardNormal)).collect()
}

/// Ancestral sampling with an arbitrary noise predictor `g(p_t, t)`.
pub fn sample_with<R: Rng + ?Sized>(
    sched: &NoiseSchedule,
    d: usize,
    mut g: impl FnMut(&[f64], usize) -> Vec<f64>,
    rng: &mut R,
) -> Vec<f64> {
    let mut p = gaussian(d, rng);
    for t in (2..=sched.steps()).rev() {
        let eps_hat = g(&p, t);
        let mut next = denoise_step(&p, &eps_hat, t, sched);
        let sb = sched.beta(t).sqrt();
        for (x, e) in next.iter_mut().zip(gaussian(d, rng)) {
            *x += sb * e;
        }
        p = next;
    }
    let eps_hat = g(&p, 1);
    denoise_step(&p, &eps_hat, 1, sched)
}

/// Sinusoidal features of `t / steps`.
pub fn time_embedding(t: usize, steps: usize, dim: usize) -> Vec<f64> {
    let s = t as f64 / steps as f64;
    (0..dim / 2)
        .flat_map(|k| {
            let w = std::f64::consts::PI * (1u64 << k.min(62)) as f64;
            let (a, b) = (w * s).sin_cos();
            [a, b]
        })
        .collect()
}

/// Affine per-feature normalisation `(x − mean) / scale`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scaling {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Scaling {
    pub fn identity(d: usize) -> Self {
        Self { mean: vec![0.0; d], scale: vec![1.0; d] }
    }

    /// Mean and standard deviation of each column; near-constant columns
    /// keep scale 1.
    pub fn fit(rows: &[Vec<f64>]) -> Self {
        let d = rows.first().map_or(0, |r| r.len());
        let n = rows.len().max(1) as f64;
        let mean: Vec<f64> = (0..d).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
        let scale = (0..d)
            .map(|j| {
                let var = rows.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n;
                let sd = var.sqrt();
                if sd < 1e-8 {
                    1.0
                } else {
                    sd
                }
            })
            .collect();
        Self { mean, scale }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(self.mean.iter().zip(&self.scale)).map(|(v, (m, s))| (v - m) / s).collect()
    }

    pub fn invert(&self, z: &[f64]) -> Vec<f64> {
        z.iter().zip(self.mean.iter().zip(&self.scale)).map(|(v, (m, s))| v * s + m).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub time_dim: usize,
    pub schedule: ScheduleSpec,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden: vec![256; 3],
            epochs: 1000,
            batch_size: 64,
            learning_rate: 1e-3,
            time_dim: 16,
            schedule: ScheduleSpec::default(),
            seed: 0,
        }
    }
}

/// A trained noise predictor with the statistics that map raw data and
/// conditions into its input space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ddpm {
    pub schedule: ScheduleSpec,
    pub time_dim: usize,
    pub data_scaling: Scaling,
    pub cond_scaling: Scaling,
    pub net: Mlp,
}

impl Ddpm {
    pub fn new<R: Rng + ?Sized>(
        data_scaling: Scaling,
        cond_scaling: Scaling,
        hidden: &[usize],
        time_dim: usize,
        schedule: ScheduleSpec,
        rng: &mut R,
    ) -> Self {
        let d = data_scaling.dim();
        let mut dims = vec![d + time_dim + cond_scaling.dim()];
        dims.extend_from_slice(hidden);
        dims.push(d);
        Self { schedule, time_dim, data_scaling, cond_scaling, net: Mlp::new(&dims, rng) }
    }

    pub fn data_dim(&self) -> usize {
        self.data_scaling.dim()
    }

    pub fn cond_dim(&self) -> usize {
        self.cond_scaling.dim()
    }

    pub fn check(&self) -> Result<(), DiffusionError> {
        self.net.check()?;
        NoiseSchedule::build(&self.schedule)?;
        let want = self.data_dim() + self.time_dim + self.cond_dim();
        if self.net.inputs() != want {
            return Err(MlpError::Shape { what: "network input", got: self.net.inputs(), expected: want }.into());
        }
        if self.net.outputs() != self.data_dim() {
            return Err(MlpError::Shape { what: "network output", got: self.net.outputs(), expected: self.data_dim() }.into());
        }
        Ok(())
    }

    fn input(&self, p: &[f64], t: usize, cond: &[f64]) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.net.inputs());
        x.extend_from_slice(p);
        x.extend(time_embedding(t, self.schedule.steps, self.time_dim));
        x.extend_from_slice(cond);
        x
    }

    /// Predicted noise for scaled data `p_t` and a scaled condition.
    pub fn predict(&self, p: &[f64], t: usize, cond: &[f64]) -> Result<Vec<f64>, DiffusionError> {
        if p.len() != self.data_dim() {
            return Err(MlpError::Shape { what: "sample", got: p.len(), expected: self.data_dim() }.into());
        }
        if cond.len() != self.cond_dim() {
            return Err(MlpError::Shape { what: "condition", got: cond.len(), expected: self.cond_dim() }.into());
        }
        Ok(self.net.forward(&self.input(p, t, cond))?)
    }

    /// One raw sample for a raw condition vector.
    pub fn sample<R: Rng + ?Sized>(&self, cond: &[f64], rng: &mut R) -> Result<Vec<f64>, DiffusionError> {
        if cond.len() != self.cond_dim() {
            return Err(MlpError::Shape { what: "condition", got: cond.len(), expected: self.cond_dim() }.into());
        }
        let sched = NoiseSchedule::build(&self.schedule)?;
        let c = self.cond_scaling.apply(cond);
        let z = sample_with(
            &sched,
            self.data_dim(),
            |p, t| self.net.forward(&self.input(p, t, &c)).expect("shapes checked"),
            rng,
        );
        Ok(self.data_scaling.invert(&z))
    }
}

/// Fits a fresh network to raw `data` rows with matching raw `conds` rows.
/// Returns the model and the mean training loss of every epoch.
pub fn train(
    data: &[Vec<f64>],
    conds: &[Vec<f64>],
    data_scaling: Scaling,
    cond_scaling: Scaling,
    cfg: &TrainConfig,
) -> Result<(Ddpm, Vec<f64>), DiffusionError> {
    if data.is_empty() {
        return Err(DiffusionError::EmptyData);
    }
    if conds.len() != data.len() {
        return Err(MlpError::Shape { what: "condition rows", got: conds.len(), expected: data.len() }.into());
    }
    let sched = NoiseSchedule::build(&cfg.schedule)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = Ddpm::new(data_scaling, cond_scaling, &cfg.hidden, cfg.time_dim, cfg.schedule.clone(), &mut rng);
    for (p, c) in data.iter().zip(conds) {
        if p.len() != model.data_dim() {
            return Err(MlpError::Shape { what: "sample", got: p.len(), expected: model.data_dim() }.into());
        }
        if c.len() != model.cond_dim() {
            return Err(MlpError::Shape { what: "condition", got: c.len(), expected: model.cond_dim() }.into());
        }
    }
    let scaled: Vec<Vec<f64>> = data.iter().map(|p| model.data_scaling.apply(p)).collect();
    let scaled_c: Vec<Vec<f64>> = conds.iter().map(|c| model.cond_scaling.apply(c)).collect();
    let mut opt = Adam::new(cfg.learning_rate, model.net.n_params());
    let mut order: Vec<usize> = (0..data.len()).collect();
    let batch = cfg.batch_size.max(1);
    let mut curve = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let (mut sum, mut n) = (0.0, 0);
        for (b, chunk) in order.chunks(batch).enumerate() {
            let mut xs = Vec::with_capacity(chunk.len());
            let mut ys = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let t = rng.random_range(1..=sched.steps());
                let eps = gaussian(model.data_dim(), &mut rng);
                let pt = forward_noise(&scaled[i], t, &eps, &sched);
                xs.push(model.input(&pt, t, &scaled_c[i]));
                ys.push(eps);
            }
            let (loss, grad) = model.net.loss_and_gradient(&xs, &ys)?;
            if !loss.is_finite() {
                return Err(DiffusionError::NonFinite { epoch, batch: b, loss });
            }
            opt.update(&mut model.net, &grad);
            sum += loss;
            n += 1;
        }
        curve.push(sum / n as f64);
    }
    Ok((model, curve))
}
