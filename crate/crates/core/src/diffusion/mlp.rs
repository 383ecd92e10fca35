//! Fully connected ReLU network with reverse-mode gradients and Adam.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MlpError {
    #[error("{what}: got {got} values, expected {expected}")]
    Shape { what: &'static str, got: usize, expected: usize },
}

/// Dense layer `y = W x + b` with `W` stored row-major (`outputs × inputs`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Layer {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            biases: vec![0.0; outputs],
        }
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        for (o, yo) in y.iter_mut().enumerate() {
            let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
            *yo = self.biases[o] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
    }
}

/// ReLU after every layer except the last.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Layer>,
}

impl Mlp {
    /// He-initialised weights; the output layer is scaled down so the
    /// initial prediction is close to zero.
    pub fn new<R: Rng + ?Sized>(dims: &[usize], rng: &mut R) -> Self {
        assert!(dims.len() >= 2, "need input and output sizes");
        let n = dims.len() - 1;
        let layers = (0..n)
            .map(|k| {
                let mut l = Layer::zeros(dims[k], dims[k + 1]);
                let mut std = (2.0 / dims[k].max(1) as f64).sqrt();
                if k + 1 == n {
                    std *= 0.01;
                }
                let normal = Normal::new(0.0, std).expect("finite std");
                for w in &mut l.weights {
                    *w = normal.sample(rng);
                }
                l
            })
            .collect();
        Self { layers }
    }

    pub fn zeros(dims: &[usize]) -> Self {
        Self {
            layers: dims.windows(2).map(|w| Layer::zeros(w[0], w[1])).collect(),
        }
    }

    pub fn inputs(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn outputs(&self) -> usize {
        self.layers.last().unwrap().outputs
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.inputs()];
        d.extend(self.layers.iter().map(|l| l.outputs));
        d
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    pub fn check(&self) -> Result<(), MlpError> {
        for (k, l) in self.layers.iter().enumerate() {
            if l.weights.len() != l.inputs * l.outputs {
                return Err(MlpError::Shape { what: "layer weights", got: l.weights.len(), expected: l.inputs * l.outputs });
            }
            if l.biases.len() != l.outputs {
                return Err(MlpError::Shape { what: "layer biases", got: l.biases.len(), expected: l.outputs });
            }
            if k > 0 && self.layers[k - 1].outputs != l.inputs {
                return Err(MlpError::Shape { what: "layer inputs", got: l.inputs, expected: self.layers[k - 1].outputs });
            }
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, MlpError> {
        if x.len() != self.inputs() {
            return Err(MlpError::Shape { what: "network input", got: x.len(), expected: self.inputs() });
        }
        let n = self.layers.len();
        let mut cur = x.to_vec();
        for (k, l) in self.layers.iter().enumerate() {
            let mut next = vec![0.0; l.outputs];
            l.apply(&cur, &mut next);
            if k + 1 < n {
                next.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            cur = next;
        }
        Ok(cur)
    }

    /// Mean over the batch of the summed squared error and its gradient.
    /// `inputs` and `targets` hold one row per sample.
    pub fn loss_and_gradient(&self, inputs: &[Vec<f64>], targets: &[Vec<f64>]) -> Result<(f64, Mlp), MlpError> {
        if inputs.len() != targets.len() {
            return Err(MlpError::Shape { what: "target rows", got: targets.len(), expected: inputs.len() });
        }
        let mut grad = Mlp::zeros(&self.dims());
        let n = self.layers.len();
        let batch = inputs.len().max(1) as f64;
        let mut loss = 0.0;
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
        for (x, t) in inputs.iter().zip(targets) {
            if t.len() != self.outputs() {
                return Err(MlpError::Shape { what: "target", got: t.len(), expected: self.outputs() });
            }
            if x.len() != self.inputs() {
                return Err(MlpError::Shape { what: "network input", got: x.len(), expected: self.inputs() });
            }
            acts.clear();
            acts.push(x.clone());
            for (k, l) in self.layers.iter().enumerate() {
                let mut next = vec![0.0; l.outputs];
                l.apply(&acts[k], &mut next);
                if k + 1 < n {
                    next.iter_mut().for_each(|v| *v = v.max(0.0));
                }
                acts.push(next);
            }
            let y = &acts[n];
            let mut delta: Vec<f64> = y.iter().zip(t).map(|(a, b)| 2.0 * (a - b) / batch).collect();
            loss += y.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
            for k in (0..n).rev() {
                let l = &self.layers[k];
                let g = &mut grad.layers[k];
                let a_in = &acts[k];
                for (o, d) in delta.iter().enumerate() {
                    if *d == 0.0 {
                        continue;
                    }
                    g.biases[o] += d;
                    let row = &mut g.weights[o * l.inputs..(o + 1) * l.inputs];
                    row.iter_mut().zip(a_in).for_each(|(gw, a)| *gw += d * a);
                }
                if k > 0 {
                    let mut prev = vec![0.0; l.inputs];
                    for (o, d) in delta.iter().enumerate() {
                        if *d == 0.0 {
                            continue;
                        }
                        let row = &l.weights[o * l.inputs..(o + 1) * l.inputs];
                        prev.iter_mut().zip(row).for_each(|(p, w)| *p += d * w);
                    }
                    // ReLU mask of the layer that produced a_in
                    prev.iter_mut().zip(a_in).for_each(|(p, a)| {
                        if *a <= 0.0 {
                            *p = 0.0;
                        }
                    });
                    delta = prev;
                }
            }
        }
        Ok((loss / batch, grad))
    }

    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(|l| l.weights.iter().chain(&l.biases))
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers.iter_mut().flat_map(|l| l.weights.iter_mut().chain(l.biases.iter_mut()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(lr: f64, n_params: usize) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }

    pub fn update(&mut self, net: &mut Mlp, grad: &Mlp) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        for (((p, g), m), v) in net.params_mut().zip(grad.params()).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
        }
    }
}
