//! Fully connected ReLU network with a single sigmoid output, trained by
//! minibatch Adam on weighted binary cross-entropy.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{TrainError, TrainingSet};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkOptions {
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Minimum epoch-loss improvement that resets the patience counter.
    pub tol: f64,
    /// Epochs without `tol` improvement before stopping; 0 disables early stopping.
    pub patience: usize,
}

impl Default for NetworkOptions {
    fn default() -> Self {
        Self {
            hidden: vec![32, 16, 8],
            learning_rate: 0.001,
            epochs: 200,
            batch_size: 64,
            tol: 1e-5,
            patience: 10,
        }
    }
}

impl NetworkOptions {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.hidden.iter().any(|&w| w == 0) {
            return Err(TrainError::InvalidOptions("hidden widths must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::InvalidOptions("learning rate must be positive".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(TrainError::InvalidOptions("epochs and batch size must be positive".into()));
        }
        if !(self.tol >= 0.0) {
            return Err(TrainError::InvalidOptions("tol must be nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct Layer {
    inputs: usize,
    outputs: usize,
    /// Offset of the row-major `outputs x inputs` weight block; biases follow it.
    offset: usize,
}

impl Layer {
    fn bias_offset(&self) -> usize {
        self.offset + self.inputs * self.outputs
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    layers: Vec<Layer>,
    params: Vec<f64>,
    /// Epochs actually run.
    pub epochs_run: usize,
    pub final_loss: f64,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Per-thread scratch space for forward/backward passes.
struct Scratch {
    acts: Vec<Vec<f64>>,
    deltas: Vec<Vec<f64>>,
}

impl Network {
    /// Glorot-uniform weights, zero biases.
    pub fn init<R: Rng + ?Sized>(dim: usize, hidden: &[usize], rng: &mut R) -> Self {
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut offset = 0;
        let mut inputs = dim;
        for &outputs in hidden.iter().chain(std::iter::once(&1)) {
            layers.push(Layer {
                inputs,
                outputs,
                offset,
            });
            offset += inputs * outputs + outputs;
            inputs = outputs;
        }
        let mut params = vec![0.0; offset];
        for layer in &layers {
            let bound = (6.0 / (layer.inputs + layer.outputs) as f64).sqrt();
            for w in &mut params[layer.offset..layer.bias_offset()] {
                *w = rng.gen_range(-bound..bound);
            }
        }
        Self {
            layers,
            params,
            epochs_run: 0,
            final_loss: f64::NAN,
        }
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn scratch(&self) -> Scratch {
        let mut acts = vec![Vec::new(); self.layers.len() + 1];
        acts[0] = vec![0.0; self.layers[0].inputs];
        for (l, layer) in self.layers.iter().enumerate() {
            acts[l + 1] = vec![0.0; layer.outputs];
        }
        let deltas = self.layers.iter().map(|l| vec![0.0; l.outputs]).collect();
        Scratch { acts, deltas }
    }

    /// Fills `scratch.acts`; returns the output logit.
    fn forward(&self, x: &[f64], scratch: &mut Scratch) -> f64 {
        scratch.acts[0].copy_from_slice(x);
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let (prev, rest) = scratch.acts.split_at_mut(l + 1);
            let input = &prev[l];
            let out = &mut rest[0];
            let w = &self.params[layer.offset..layer.bias_offset()];
            let b = &self.params[layer.bias_offset()..layer.bias_offset() + layer.outputs];
            for (o, slot) in out.iter_mut().enumerate() {
                let row = &w[o * layer.inputs..(o + 1) * layer.inputs];
                let z = b[o] + dot(row, input);
                *slot = if l < last { z.max(0.0) } else { z };
            }
        }
        scratch.acts[self.layers.len()][0]
    }

    /// Adds `scale * d(loss)/d(params)` into `grad`; returns the unscaled loss.
    fn accumulate(&self, x: &[f64], y: u8, scale: f64, grad: &mut [f64], scratch: &mut Scratch) -> f64 {
        let logit = self.forward(x, scratch);
        let target = y as f64;
        // softplus(z) - y*z, computed stably
        let loss = logit.max(0.0) - target * logit + (-logit.abs()).exp().ln_1p();
        let last = self.layers.len() - 1;
        scratch.deltas[last][0] = scale * (sigmoid(logit) - target);
        for l in (0..self.layers.len()).rev() {
            let layer = self.layers[l];
            let input = &scratch.acts[l];
            let (lower, upper) = scratch.deltas.split_at_mut(l);
            let delta = &upper[0];
            let gw = layer.offset;
            let gb = layer.bias_offset();
            for o in 0..layer.outputs {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                grad[gb + o] += d;
                let row = &mut grad[gw + o * layer.inputs..gw + (o + 1) * layer.inputs];
                for (g, a) in row.iter_mut().zip(input) {
                    *g += d * a;
                }
            }
            if l > 0 {
                let w = &self.params[layer.offset..layer.bias_offset()];
                let below = &mut lower[l - 1];
                below.iter_mut().for_each(|v| *v = 0.0);
                for o in 0..layer.outputs {
                    let d = delta[o];
                    if d == 0.0 {
                        continue;
                    }
                    let row = &w[o * layer.inputs..(o + 1) * layer.inputs];
                    for (b, wv) in below.iter_mut().zip(row) {
                        *b += d * wv;
                    }
                }
                for (b, a) in below.iter_mut().zip(input) {
                    if *a <= 0.0 {
                        *b = 0.0;
                    }
                }
            }
        }
        loss
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut scratch = self.scratch();
        sigmoid(self.forward(x, &mut scratch))
    }

    /// Weighted mean loss and its gradient over the given samples.
    pub fn loss_and_gradient(&self, xs: &[&[f64]], ys: &[u8], ws: &[f64]) -> (f64, Vec<f64>) {
        let total: f64 = ws.iter().sum();
        let mut grad = vec![0.0; self.params.len()];
        let mut scratch = self.scratch();
        let mut loss = 0.0;
        for ((x, &y), &w) in xs.iter().zip(ys).zip(ws) {
            loss += w * self.accumulate(x, y, w / total, &mut grad, &mut scratch);
        }
        (loss / total, grad)
    }

    pub(crate) fn fit(set: &TrainingSet, opts: &NetworkOptions, seed: u64) -> Result<Self, TrainError> {
        let mut rng = seed::rng(seed);
        let mut net = Self::init(set.dim, &opts.hidden, &mut rng);
        let n = set.len();
        let total_weight: f64 = set.w.iter().sum();
        let mean_weight = total_weight / n as f64;

        let p = net.params.len();
        let mut grad = vec![0.0; p];
        let mut m = vec![0.0; p];
        let mut v = vec![0.0; p];
        let mut step = 0i32;
        let mut order: Vec<usize> = (0..n).collect();
        let mut scratch = net.scratch();
        let mut best = f64::INFINITY;
        let mut stale = 0usize;

        for epoch in 0..opts.epochs {
            order.shuffle(&mut rng);
            let mut epoch_loss = 0.0;
            for batch in order.chunks(opts.batch_size) {
                grad.iter_mut().for_each(|g| *g = 0.0);
                // Uniform weights reduce to the plain batch mean.
                let norm = 1.0 / (batch.len() as f64 * mean_weight);
                for &i in batch {
                    let w = set.w[i];
                    if w == 0.0 {
                        continue;
                    }
                    let loss = net.accumulate(set.row(i), set.y[i], w * norm, &mut grad, &mut scratch);
                    epoch_loss += w * loss;
                }
                step += 1;
                let bias1 = 1.0 - BETA1.powi(step);
                let bias2 = 1.0 - BETA2.powi(step);
                let lr = opts.learning_rate * bias2.sqrt() / bias1;
                for j in 0..p {
                    let g = grad[j];
                    m[j] = BETA1 * m[j] + (1.0 - BETA1) * g;
                    v[j] = BETA2 * v[j] + (1.0 - BETA2) * g * g;
                    net.params[j] -= lr * m[j] / (v[j].sqrt() + ADAM_EPS);
                }
            }
            let epoch_loss = epoch_loss / total_weight;
            if !epoch_loss.is_finite() || net.params.iter().any(|v| !v.is_finite()) {
                return Err(TrainError::Divergence { epoch });
            }
            net.epochs_run = epoch + 1;
            net.final_loss = epoch_loss;
            if opts.patience > 0 {
                if epoch_loss > best - opts.tol {
                    stale += 1;
                } else {
                    stale = 0;
                }
                best = best.min(epoch_loss);
                if stale >= opts.patience {
                    break;
                }
            }
        }
        Ok(net)
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}
