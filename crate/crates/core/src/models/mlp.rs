//! Fully connected network with tanh hidden layers and a softmax output,
//! trained by mini-batch SGD on cross-entropy.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{softmax_in_place, MlpLayout, TrainSpec};
use crate::error::{Error, Result};
use crate::seeding::{rng_from, Rng as StreamRng};

/// Dense layer; `weights` is `outputs x inputs`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Layer {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Layer {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            biases: vec![0.0; outputs],
        }
    }

    fn affine(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for o in 0..self.outputs {
            let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
            let mut z = self.biases[o];
            for (w, v) in row.iter().zip(x) {
                z += w * v;
            }
            out.push(z);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Layer>,
}

/// Per-feature z-score parameters fitted on training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    pub fn identity(n: usize) -> Self {
        Normalizer {
            mean: vec![0.0; n],
            std: vec![1.0; n],
        }
    }

    pub fn fit<'a>(rows: impl Iterator<Item = &'a [f64]>, n: usize) -> Self {
        let mut sum = vec![0.0; n];
        let mut sq = vec![0.0; n];
        let mut count = 0usize;
        for r in rows {
            for i in 0..n {
                sum[i] += r[i];
                sq[i] += r[i] * r[i];
            }
            count += 1;
        }
        let c = count.max(1) as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / c).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(s, m)| {
                let var = (s / c - m * m).max(0.0);
                let sd = var.sqrt();
                if sd > 1e-9 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Normalizer { mean, std }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }
}

/// Gradient buffers with the same shape as the network.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub layers: Vec<Layer>,
}

impl Gradients {
    fn zeros_like(net: &Mlp) -> Self {
        Gradients {
            layers: net
                .layers
                .iter()
                .map(|l| Layer::zeros(l.inputs, l.outputs))
                .collect(),
        }
    }

    fn clear(&mut self) {
        for l in &mut self.layers {
            l.weights.iter_mut().for_each(|w| *w = 0.0);
            l.biases.iter_mut().for_each(|b| *b = 0.0);
        }
    }
}

impl Mlp {
    /// Glorot-uniform weights, zero biases.
    pub fn init(layout: &MlpLayout, rng: &mut impl Rng) -> Self {
        let sizes = &layout.layer_sizes;
        let layers = sizes
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let mut l = Layer::zeros(fan_in, fan_out);
                for v in &mut l.weights {
                    *v = rng.gen_range(-limit..=limit);
                }
                l
            })
            .collect();
        Mlp { layers }
    }

    pub fn zeros(layout: &MlpLayout) -> Self {
        Mlp {
            layers: layout
                .layer_sizes
                .windows(2)
                .map(|w| Layer::zeros(w[0], w[1]))
                .collect(),
        }
    }

    pub fn input_size(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_size(&self) -> usize {
        self.layers.last().map_or(0, |l| l.outputs)
    }

    /// Output-layer pre-activations.
    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            layer.affine(&cur, &mut next);
            if i < last {
                next.iter_mut().for_each(|v| *v = v.tanh());
            }
            std::mem::swap(&mut cur, &mut next);
        }
        cur
    }

    pub fn probabilities(&self, x: &[f64]) -> Vec<f64> {
        let mut z = self.logits(x);
        softmax_in_place(&mut z);
        z
    }

    /// Activations of every layer, input first, softmax probabilities last.
    fn forward_all(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_vec());
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut out = Vec::with_capacity(layer.outputs);
            layer.affine(&acts[i], &mut out);
            if i < last {
                out.iter_mut().for_each(|v| *v = v.tanh());
            } else {
                softmax_in_place(&mut out);
            }
            acts.push(out);
        }
        acts
    }

    /// Cross-entropy of one example; adds its gradient into `grads`.
    pub fn backprop(&self, x: &[f64], label: usize, grads: &mut Gradients) -> f64 {
        let acts = self.forward_all(x);
        let probs = acts.last().expect("at least one layer");
        let loss = -probs[label].max(1e-300).ln();
        let mut delta: Vec<f64> = probs.clone();
        delta[label] -= 1.0;
        for li in (0..self.layers.len()).rev() {
            let layer = &self.layers[li];
            let input = &acts[li];
            let g = &mut grads.layers[li];
            for o in 0..layer.outputs {
                let d = delta[o];
                g.biases[o] += d;
                let row = &mut g.weights[o * layer.inputs..(o + 1) * layer.inputs];
                for (gw, a) in row.iter_mut().zip(input) {
                    *gw += d * a;
                }
            }
            if li > 0 {
                let mut prev = vec![0.0; layer.inputs];
                for o in 0..layer.outputs {
                    let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                    for (p, w) in prev.iter_mut().zip(row) {
                        *p += w * delta[o];
                    }
                }
                // tanh'(z) = 1 - a^2
                for (p, a) in prev.iter_mut().zip(input) {
                    *p *= 1.0 - a * a;
                }
                delta = prev;
            }
        }
        loss
    }

    pub fn loss(&self, x: &[f64], label: usize) -> f64 {
        -self.probabilities(x)[label].max(1e-300).ln()
    }

    fn apply_gradients(&mut self, grads: &Gradients, scale: f64) {
        for (l, g) in self.layers.iter_mut().zip(&grads.layers) {
            for (w, gw) in l.weights.iter_mut().zip(&g.weights) {
                *w -= scale * gw;
            }
            for (b, gb) in l.biases.iter_mut().zip(&g.biases) {
                *b -= scale * gb;
            }
        }
    }

    fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.biases.iter_mut()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean cross-entropy over the whole training set after each epoch.
    pub loss_history: Vec<f64>,
    pub final_accuracy: f64,
}

/// Fits `net` to normalized inputs `xs` and labels `ys`.
pub fn train(
    net: &mut Mlp,
    xs: &[Vec<f64>],
    ys: &[usize],
    spec: &TrainSpec,
    rng: &mut StreamRng,
) -> Result<TrainReport> {
    spec.validate()?;
    if xs.is_empty() || xs.len() != ys.len() {
        return Err(Error::Invalid("training set is empty or misaligned".into()));
    }
    let outputs = net.output_size();
    if let Some(bad) = ys.iter().find(|&&y| y >= outputs) {
        return Err(Error::Invalid(format!("label {bad} outside [0, {outputs})")));
    }
    let mut order: Vec<usize> = (0..xs.len()).collect();
    let mut grads = Gradients::zeros_like(net);
    let mut loss_history = Vec::with_capacity(spec.epochs);
    let batch = spec.batch_size.max(1);
    for _ in 0..spec.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(batch) {
            grads.clear();
            for &i in chunk {
                net.backprop(&xs[i], ys[i], &mut grads);
            }
            net.apply_gradients(&grads, spec.learning_rate / chunk.len() as f64);
        }
        let loss = xs.iter().zip(ys).map(|(x, &y)| net.loss(x, y)).sum::<f64>() / xs.len() as f64;
        loss_history.push(loss);
    }
    let correct = xs
        .iter()
        .zip(ys)
        .filter(|(x, &y)| super::argmax(&net.logits(x)) == y)
        .count();
    Ok(TrainReport {
        loss_history,
        final_accuracy: correct as f64 / xs.len() as f64,
    })
}

/// Largest relative discrepancy between backprop gradients and central
/// finite differences (step `h`) on one random example, at randomly
/// initialized parameters.
///
/// The relative error of a component is `|a - n| / max(|a| + |n|, 1e-8)`.
pub fn gradient_check(layout: &MlpLayout, seed: u64, h: f64) -> Result<f64> {
    layout.validate()?;
    let mut rng = rng_from(seed);
    let mut net = Mlp::init(layout, &mut rng);
    for l in &mut net.layers {
        for b in &mut l.biases {
            *b = rng.gen_range(-0.5..0.5);
        }
    }
    let x: Vec<f64> = (0..layout.inputs()).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let label = rng.gen_range(0..layout.outputs());

    let mut grads = Gradients::zeros_like(&net);
    net.backprop(&x, label, &mut grads);
    let analytic: Vec<f64> = grads
        .layers
        .iter()
        .flat_map(|l| l.weights.iter().chain(l.biases.iter()).copied())
        .collect();

    let mut worst: f64 = 0.0;
    let n_params = analytic.len();
    for k in 0..n_params {
        let original = *net.params_mut().nth(k).expect("param index");
        *net.params_mut().nth(k).expect("param index") = original + h;
        let up = net.loss(&x, label);
        *net.params_mut().nth(k).expect("param index") = original - h;
        let down = net.loss(&x, label);
        *net.params_mut().nth(k).expect("param index") = original;
        let numeric = (up - down) / (2.0 * h);
        let a = analytic[k];
        let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
        worst = worst.max(rel);
    }
    Ok(worst)
}

/// Backprop gradients of one example, flattened layer by layer
/// (weights then biases).
pub fn example_gradients(net: &Mlp, x: &[f64], label: usize) -> Vec<f64> {
    let mut grads = Gradients::zeros_like(net);
    net.backprop(x, label, &mut grads);
    grads
        .layers
        .iter()
        .flat_map(|l| l.weights.iter().chain(l.biases.iter()).copied())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gradient_check_4_5_2() {
        let layout = MlpLayout::new(vec![4, 5, 2]).unwrap();
        let err = gradient_check(&layout, 1, 1e-5).unwrap();
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn gradient_check_ten_seeds() {
        let layout = MlpLayout::new(vec![4, 5, 2]).unwrap();
        for seed in 0..10 {
            let err = gradient_check(&layout, seed, 1e-5).unwrap();
            assert!(err < 1e-4, "seed {seed}: {err}");
        }
    }

    #[test]
    fn zero_network_gradients_are_symmetric() {
        let layout = MlpLayout::new(vec![4, 5, 3]).unwrap();
        let net = Mlp::zeros(&layout);
        let g = example_gradients(&net, &[0.5, 0.5, 0.5, 0.5], 1);
        // hidden activations are all zero, so only output biases move:
        // p - onehot = (1/3, -2/3, 1/3)
        let n = g.len();
        let out_bias = &g[n - 3..];
        assert!((out_bias[0] - 1.0 / 3.0).abs() < 1e-15);
        assert!((out_bias[1] + 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(out_bias[0], out_bias[2]);
        assert!(g[..n - 3].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn full_batch_loss_is_non_increasing() {
        let layout = MlpLayout::new(vec![2, 4, 2]).unwrap();
        let mut rng = rng_from(3);
        let mut net = Mlp::init(&layout, &mut rng);
        let xs: Vec<Vec<f64>> = (0..40)
            .map(|i| {
                let t = i as f64 / 40.0;
                vec![t * 2.0 - 1.0, (t * 7.0).sin()]
            })
            .collect();
        let ys: Vec<usize> = xs.iter().map(|x| usize::from(x[0] + 0.3 * x[1] > 0.0)).collect();
        let spec = TrainSpec {
            learning_rate: 0.05,
            epochs: 300,
            batch_size: xs.len(),
            seed: 0,
        };
        let report = train(&mut net, &xs, &ys, &spec, &mut rng).unwrap();
        for w in report.loss_history.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "loss went up: {} -> {}", w[0], w[1]);
        }
    }
}
