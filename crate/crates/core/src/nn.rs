//! Small fully connected networks with weighted cross-entropy loss, exact
//! backpropagation and seeded mini-batch gradient descent with momentum.
//!
//! Both the chat-domain semantic scorer (binary, logistic head) and the
//! generic-intent classifier (multiclass, softmax head) are instances of
//! [`Mlp`].

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Examples per parallel gradient chunk. Chunk sums are reduced in index
/// order, so results do not depend on the thread count.
const GRAD_CHUNK: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Sigmoid,
    Tanh,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Sigmoid => sigmoid(z),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the activation value.
    fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Sigmoid => a * (1.0 - a),
            Activation::Tanh => 1.0 - a * a,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputHead {
    /// One logit, probability of class 1.
    Logistic,
    Softmax,
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    /// Row-major, `outputs x inputs`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    fn xavier(inputs: usize, outputs: usize, rng: &mut impl Rng) -> Self {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        Self {
            inputs,
            outputs,
            weights: (0..inputs * outputs)
                .map(|_| rng.random_range(-limit..limit))
                .collect(),
            bias: vec![0.0; outputs],
        }
    }

    fn forward(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.inputs);
        self.weights
            .chunks_exact(self.inputs)
            .zip(&self.bias)
            .map(|(row, b)| b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
            .collect()
    }

    fn add_scaled(&mut self, other: &Dense, k: f64) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a += k * b;
        }
        for (a, b) in self.bias.iter_mut().zip(&other.bias) {
            *a += k * b;
        }
    }

    fn scale(&mut self, k: f64) {
        self.weights.iter_mut().for_each(|w| *w *= k);
        self.bias.iter_mut().for_each(|b| *b *= k);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Dense>,
    pub hidden: Activation,
    pub head: OutputHead,
}

/// Gradients share the network's shape.
pub type Gradients = Vec<Dense>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
}

impl Mlp {
    /// Xavier-uniform initialization from `seed`. `sizes` lists every layer
    /// width including input and output.
    pub fn new(sizes: &[usize], hidden: Activation, head: OutputHead, seed: u64) -> Self {
        assert!(sizes.len() >= 2, "network needs input and output sizes");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = sizes
            .windows(2)
            .map(|w| Dense::xavier(w[0], w[1], &mut rng))
            .collect();
        Self {
            layers,
            hidden,
            head,
        }
    }

    pub fn zeros(sizes: &[usize], hidden: Activation, head: OutputHead) -> Self {
        Self {
            layers: sizes.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect(),
            hidden,
            head,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.outputs)
    }

    /// Layer widths, input first.
    pub fn shape(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(|l| l.outputs))
            .collect()
    }

    /// Activations of every layer; the last entry holds raw logits.
    fn activations(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_vec());
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = layer.forward(acts.last().expect("non-empty"));
            if i < last {
                z.iter_mut().for_each(|v| *v = self.hidden.apply(*v));
            }
            acts.push(z);
        }
        acts
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        self.activations(x).pop().expect("non-empty")
    }

    /// Class probabilities. The logistic head returns `[p(class 1)]`.
    pub fn predict(&self, x: &[f64]) -> Vec<f64> {
        let logits = self.logits(x);
        match self.head {
            OutputHead::Logistic => vec![sigmoid(logits[0])],
            OutputHead::Softmax => softmax(&logits),
        }
    }

    fn example_loss(&self, logits: &[f64], label: usize) -> f64 {
        match self.head {
            OutputHead::Logistic => {
                let z = logits[0];
                let y = label as f64;
                z.max(0.0) - y * z + (-z.abs()).exp().ln_1p()
            }
            OutputHead::Softmax => {
                let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
                lse - logits[label]
            }
        }
    }

    /// Weighted mean cross-entropy, `sum(w_i * loss_i) / sum(w_i)`.
    pub fn loss(&self, xs: &[&[f64]], labels: &[usize], weights: &[f64]) -> f64 {
        let total_w: f64 = weights.iter().sum();
        if total_w == 0.0 {
            return 0.0;
        }
        xs.iter()
            .zip(labels)
            .zip(weights)
            .map(|((x, &y), &w)| w * self.example_loss(&self.logits(x), y))
            .sum::<f64>()
            / total_w
    }

    fn zero_gradients(&self) -> Gradients {
        self.layers
            .iter()
            .map(|l| Dense::zeros(l.inputs, l.outputs))
            .collect()
    }

    /// Adds `scale * d loss_i / d params` for one example into `grads`.
    fn backprop_into(&self, x: &[f64], label: usize, scale: f64, grads: &mut Gradients) {
        let acts = self.activations(x);
        let logits = acts.last().expect("non-empty");
        let mut delta: Vec<f64> = match self.head {
            OutputHead::Logistic => vec![sigmoid(logits[0]) - label as f64],
            OutputHead::Softmax => {
                let mut p = softmax(logits);
                p[label] -= 1.0;
                p
            }
        };
        delta.iter_mut().for_each(|d| *d *= scale);

        for li in (0..self.layers.len()).rev() {
            let layer = &self.layers[li];
            let input = &acts[li];
            let g = &mut grads[li];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                g.bias[o] += d;
                let row = &mut g.weights[o * layer.inputs..(o + 1) * layer.inputs];
                for (gw, &a) in row.iter_mut().zip(input) {
                    *gw += d * a;
                }
            }
            if li == 0 {
                break;
            }
            let mut prev = vec![0.0; layer.inputs];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                for (p, &w) in prev.iter_mut().zip(row) {
                    *p += w * d;
                }
            }
            for (p, &a) in prev.iter_mut().zip(input) {
                *p *= self.hidden.derivative_from_output(a);
            }
            delta = prev;
        }
    }

    /// Analytic gradient of [`Mlp::loss`].
    pub fn gradients(&self, xs: &[&[f64]], labels: &[usize], weights: &[f64]) -> Gradients {
        let total_w: f64 = weights.iter().sum();
        let idx: Vec<usize> = (0..xs.len()).collect();
        self.gradients_over(&idx, xs, labels, weights, total_w)
    }

    fn gradients_over(
        &self,
        idx: &[usize],
        xs: &[&[f64]],
        labels: &[usize],
        weights: &[f64],
        total_w: f64,
    ) -> Gradients {
        if total_w == 0.0 {
            return self.zero_gradients();
        }
        let partials: Vec<Gradients> = idx
            .par_chunks(GRAD_CHUNK)
            .map(|chunk| {
                let mut g = self.zero_gradients();
                for &i in chunk {
                    self.backprop_into(xs[i], labels[i], weights[i] / total_w, &mut g);
                }
                g
            })
            .collect();
        let mut iter = partials.into_iter();
        let mut total = iter.next().unwrap_or_else(|| self.zero_gradients());
        for g in iter {
            for (a, b) in total.iter_mut().zip(&g) {
                a.add_scaled(b, 1.0);
            }
        }
        total
    }

    /// Seeded mini-batch gradient descent with momentum. Returns the final
    /// full-data loss.
    pub fn fit(
        &mut self,
        xs: &[&[f64]],
        labels: &[usize],
        weights: &[f64],
        config: &TrainConfig,
    ) -> f64 {
        assert_eq!(xs.len(), labels.len());
        assert_eq!(xs.len(), weights.len());
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_f17);
        let mut velocity = self.zero_gradients();
        let mut order: Vec<usize> = (0..xs.len()).collect();
        let batch = config.batch_size.max(1);
        for _ in 0..config.epochs {
            order.shuffle(&mut rng);
            for chunk in order.chunks(batch) {
                let total_w: f64 = chunk.iter().map(|&i| weights[i]).sum();
                let grads = self.gradients_over(chunk, xs, labels, weights, total_w);
                for ((v, g), layer) in velocity.iter_mut().zip(&grads).zip(&mut self.layers) {
                    v.scale(config.momentum);
                    v.add_scaled(g, -config.learning_rate);
                    layer.add_scaled(v, 1.0);
                }
            }
        }
        self.loss(xs, labels, weights)
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    /// All parameters flattened layer by layer (weights then bias).
    pub fn params(&self) -> Vec<f64> {
        flatten(&self.layers)
    }

    pub fn set_param(&mut self, index: usize, value: f64) {
        *param_mut(&mut self.layers, index) = value;
    }
}

pub fn flatten(layers: &[Dense]) -> Vec<f64> {
    let mut out = Vec::new();
    for l in layers {
        out.extend_from_slice(&l.weights);
        out.extend_from_slice(&l.bias);
    }
    out
}

fn param_mut(layers: &mut [Dense], mut index: usize) -> &mut f64 {
    for l in layers {
        if index < l.weights.len() {
            return &mut l.weights[index];
        }
        index -= l.weights.len();
        if index < l.bias.len() {
            return &mut l.bias[index];
        }
        index -= l.bias.len();
    }
    panic!("parameter index out of range")
}
