//! Two-hidden-layer perceptron with a 2-way softmax head, trained by Adam on
//! mean cross-entropy.

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::util;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub hidden: [usize; 2],
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    /// Epoch count used when no validation set is supplied.
    pub fixed_epochs: usize,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            hidden: [64, 32],
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 32,
            max_epochs: 200,
            patience: 20,
            fixed_epochs: 100,
        }
    }
}

/// Fully connected layer; `weights` is `outputs x inputs`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self { inputs, outputs, weights: vec![0.0; inputs * outputs], bias: vec![0.0; outputs] }
    }

    fn forward(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for o in 0..self.outputs {
            let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
            out.push(self.bias[o] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>());
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub layers: Vec<Dense>,
    #[serde(default)]
    pub epochs_run: usize,
    #[serde(default)]
    pub best_epoch: usize,
}

struct Activations {
    // Post-activation outputs per layer (ReLU for hidden, raw logits last).
    outs: Vec<Vec<f64>>,
}

impl MlpParams {
    /// All-zero network of the given layer widths.
    pub fn zeros(dims: &[usize]) -> Self {
        let layers = dims.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect();
        Self { layers, epochs_run: 0, best_epoch: 0 }
    }

    /// He-normal weights, zero biases.
    pub fn he_init(dims: &[usize], seed: u64) -> Self {
        let mut rng = util::rng(seed);
        let mut params = Self::zeros(dims);
        for layer in &mut params.layers {
            let normal = Normal::new(0.0, (2.0 / layer.inputs as f64).sqrt()).expect("positive std");
            layer.weights.iter_mut().for_each(|w| *w = normal.sample(&mut rng));
        }
        params
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    fn forward(&self, x: &[f64]) -> Activations {
        let mut outs: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let input = if l == 0 { x } else { &outs[l - 1] };
            let mut out = Vec::with_capacity(layer.outputs);
            layer.forward(input, &mut out);
            if l < last {
                out.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            outs.push(out);
        }
        Activations { outs }
    }

    /// Class probabilities.
    pub fn predict_proba(&self, x: &[f64]) -> Vec<f64> {
        softmax(self.forward(x).outs.last().expect("at least one layer"))
    }

    /// Probability of class 1.
    pub fn score(&self, x: &[f64]) -> f64 {
        self.predict_proba(x)[1]
    }

    /// Mean cross-entropy over a batch.
    pub fn loss(&self, xs: &[&[f64]], ys: &[u8]) -> f64 {
        xs.iter()
            .zip(ys)
            .map(|(x, &y)| {
                let logits = self.forward(x).outs.pop().expect("at least one layer");
                log_sum_exp(&logits) - logits[y as usize]
            })
            .sum::<f64>()
            / xs.len() as f64
    }

    /// Mean cross-entropy and its gradient (same shape as `self`).
    pub fn loss_and_gradient(&self, xs: &[&[f64]], ys: &[u8]) -> (f64, MlpParams) {
        let dims: Vec<usize> = std::iter::once(self.input_dim()).chain(self.layers.iter().map(|l| l.outputs)).collect();
        let mut grad = MlpParams::zeros(&dims);
        let scale = 1.0 / xs.len() as f64;
        let mut loss = 0.0;
        for (x, &y) in xs.iter().zip(ys) {
            let acts = self.forward(x);
            let logits = acts.outs.last().expect("at least one layer");
            loss += log_sum_exp(logits) - logits[y as usize];
            // dL/dlogits = softmax - onehot
            let mut delta = softmax(logits);
            delta[y as usize] -= 1.0;
            for l in (0..self.layers.len()).rev() {
                let layer = &self.layers[l];
                let input: &[f64] = if l == 0 { x } else { &acts.outs[l - 1] };
                let g = &mut grad.layers[l];
                for o in 0..layer.outputs {
                    let d = delta[o] * scale;
                    g.bias[o] += d;
                    let row = &mut g.weights[o * layer.inputs..(o + 1) * layer.inputs];
                    row.iter_mut().zip(input).for_each(|(w, v)| *w += d * v);
                }
                if l > 0 {
                    let mut prev = vec![0.0; layer.inputs];
                    for o in 0..layer.outputs {
                        let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                        prev.iter_mut().zip(row).for_each(|(p, w)| *p += delta[o] * w);
                    }
                    // ReLU derivative of the previous layer's output.
                    prev.iter_mut().zip(&acts.outs[l - 1]).for_each(|(p, a)| {
                        if *a <= 0.0 {
                            *p = 0.0
                        }
                    });
                    delta = prev;
                }
            }
        }
        (loss * scale, grad)
    }

    /// Mutable views of every parameter block: weights then bias, per layer.
    pub fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weights.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }

    pub fn blocks(&self) -> Vec<&[f64]> {
        self.layers.iter().flat_map(|l| [l.weights.as_slice(), l.bias.as_slice()]).collect()
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

fn softmax(v: &[f64]) -> Vec<f64> {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Adam moment estimates for one parameter set.
#[derive(Debug, Clone)]
pub struct Adam {
    config: MlpConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl Adam {
    pub fn new(params: &MlpParams, config: MlpConfig) -> Self {
        let m: Vec<Vec<f64>> = params.blocks().iter().map(|b| vec![0.0; b.len()]).collect();
        Self { config, v: m.clone(), m, t: 0 }
    }

    pub fn step(&mut self, params: &mut MlpParams, grad: &MlpParams) {
        self.t += 1;
        let c = &self.config;
        let bc1 = 1.0 - c.beta1.powi(self.t);
        let bc2 = 1.0 - c.beta2.powi(self.t);
        for (((p, g), m), v) in params.blocks_mut().into_iter().zip(grad.blocks()).zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.len() {
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                p[i] -= c.learning_rate * mh / (vh.sqrt() + c.epsilon);
            }
        }
    }
}

/// Trains from He initialization. With a validation set, stops once the
/// validation loss has not improved for `patience` epochs and keeps the best
/// weights; without one, runs `fixed_epochs`.
pub fn train(x: &[Vec<f64>], y: &[u8], valid: Option<(&[Vec<f64>], &[u8])>, config: MlpConfig, seed: u64) -> MlpParams {
    let d = x[0].len();
    let dims = [d, config.hidden[0], config.hidden[1], 2];
    let mut params = MlpParams::he_init(&dims, util::derive_seed(seed, &[0]));
    let mut adam = Adam::new(&params, config);
    let mut rng = util::rng(util::derive_seed(seed, &[1]));
    let mut order: Vec<usize> = (0..x.len()).collect();

    let valid_refs = valid.map(|(vx, vy)| (vx.iter().map(Vec::as_slice).collect::<Vec<_>>(), vy));
    let epochs = if valid.is_some() { config.max_epochs } else { config.fixed_epochs };
    let mut best = (f64::INFINITY, params.clone(), 0usize);
    let mut since_best = 0;
    let mut run = 0;
    for epoch in 1..=epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size.max(1)) {
            let bx: Vec<&[f64]> = batch.iter().map(|&i| x[i].as_slice()).collect();
            let by: Vec<u8> = batch.iter().map(|&i| y[i]).collect();
            let (_, grad) = params.loss_and_gradient(&bx, &by);
            adam.step(&mut params, &grad);
        }
        run = epoch;
        if let Some((vx, vy)) = &valid_refs {
            let loss = params.loss(vx, vy);
            if loss < best.0 {
                best = (loss, params.clone(), epoch);
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= config.patience {
                    break;
                }
            }
        }
    }
    let (mut out, best_epoch) = if valid.is_some() { (best.1, best.2) } else { (params, run) };
    out.epochs_run = run;
    out.best_epoch = best_epoch;
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn zero_network_scores_half() {
        let p = MlpParams::zeros(&[51, 64, 32, 2]);
        assert_eq!(p.score(&[0.3; 51]), 0.5);
    }

    #[test]
    fn full_batch_loss_decreases() {
        let mut rng = util::rng(8);
        let xs: Vec<Vec<f64>> = (0..16).map(|_| (0..5).map(|_| rng.random::<f64>() - 0.5).collect()).collect();
        let ys: Vec<u8> = xs.iter().map(|x| (x[0] + x[1] > 0.0) as u8).collect();
        let refs: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
        let mut p = MlpParams::he_init(&[5, 64, 32, 2], 3);
        let mut adam = Adam::new(&p, MlpConfig::default());
        let mut losses = vec![p.loss(&refs, &ys)];
        for _ in 0..50 {
            let (_, g) = p.loss_and_gradient(&refs, &ys);
            adam.step(&mut p, &g);
            losses.push(p.loss(&refs, &ys));
        }
        assert!(losses[50] < losses[0]);
        let increases = losses.windows(2).filter(|w| w[1] > w[0]).count();
        assert!(increases <= 2, "{losses:?}");
    }

    #[test]
    fn layer_shapes() {
        let p = MlpParams::he_init(&[51, 64, 32, 2], 0);
        let shapes: Vec<(usize, usize)> = p.layers.iter().map(|l| (l.inputs, l.outputs)).collect();
        assert_eq!(shapes, vec![(51, 64), (64, 32), (32, 2)]);
    }
}
