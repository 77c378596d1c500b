//! Contact classifier: a small fully connected network with ReLU hidden
//! layers and a sigmoid output, trained with Adam on binary cross-entropy.
//!
//! The network takes one scalar input (window peak amplitude), z-scored
//! with statistics captured at training time.

mod persist;
mod train;

pub use persist::{ModelFormatError, MODEL_MAGIC, MODEL_VERSION};
pub use train::{
    incremental_update, partition, train, Adam, EarlyStopping, EpochRecord, LabeledDataset, LabeledSample, Partition, StopSignal,
    TrainConfig, TrainError, TrainReport,
};

use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::math;

pub const DEFAULT_LAYER_SIZES: [usize; 5] = [1, 16, 16, 8, 1];

/// Probability clamp used by the loss.
pub const BCE_EPSILON: f64 = 1e-12;

/// Dense layer; `weights` is `outputs x inputs`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    inputs: usize,
    outputs: usize,
    weights: Vec<f64>,
    biases: Vec<f64>,
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

    pub fn inputs(&self) -> usize {
        self.inputs
    }

    pub fn outputs(&self) -> usize {
        self.outputs
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn biases(&self) -> &[f64] {
        &self.biases
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn biases_mut(&mut self) -> &mut [f64] {
        &mut self.biases
    }

    fn affine(&self, input: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.weights.chunks_exact(self.inputs).zip(&self.biases).map(|(row, b)| {
            row.iter().zip(input).fold(*b, |acc, (w, x)| acc + w * x)
        }));
    }
}

/// z-score statistics for the scalar input.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct InputNorm {
    pub mean: f64,
    pub std: f64,
}

impl InputNorm {
    pub const IDENTITY: Self = Self { mean: 0.0, std: 1.0 };

    pub fn fit(values: impl Iterator<Item = f64> + Clone) -> Self {
        let n = values.clone().count() as f64;
        let mean = values.clone().sum::<f64>() / n;
        let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let std = math::sqrt(var);
        Self {
            mean,
            std: if std > 0.0 && std.is_finite() { std } else { 1.0 },
        }
    }

    pub fn apply(&self, x: f64) -> f64 {
        (x - self.mean) / self.std
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Layer>,
    norm: InputNorm,
}

impl Mlp {
    /// He-initialized network (normal, std `sqrt(2 / fan_in)`, zero biases).
    pub fn new(layer_sizes: &[usize], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = layer_sizes
            .windows(2)
            .map(|w| {
                let mut layer = Layer::zeros(w[0], w[1]);
                let dist = Normal::new(0.0, math::sqrt(2.0 / w[0] as f64)).expect("positive std");
                layer.weights.iter_mut().for_each(|x| *x = dist.sample(&mut rng));
                layer
            })
            .collect();
        Self {
            layers,
            norm: InputNorm::IDENTITY,
        }
    }

    /// All weights and biases zero.
    pub fn zeros(layer_sizes: &[usize]) -> Self {
        Self {
            layers: layer_sizes.windows(2).map(|w| Layer::zeros(w[0], w[1])).collect(),
            norm: InputNorm::IDENTITY,
        }
    }

    pub(crate) fn from_parts(layers: Vec<Layer>, norm: InputNorm) -> Self {
        Self { layers, norm }
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = Vec::with_capacity(self.layers.len() + 1);
        sizes.extend(self.layers.first().map(Layer::inputs));
        sizes.extend(self.layers.iter().map(Layer::outputs));
        sizes
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_norm(&self) -> InputNorm {
        self.norm
    }

    pub fn set_input_norm(&mut self, norm: InputNorm) {
        self.norm = norm;
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    /// Parameters flattened in layer order, weights then biases.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.biases);
        }
        out
    }

    pub fn set_params(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.param_count(), "parameter count mismatch");
        let mut at = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&flat[at..at + nw]);
            at += nw;
            let nb = l.biases.len();
            l.biases.copy_from_slice(&flat[at..at + nb]);
            at += nb;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.biases).all(|v| v.is_finite()))
    }

    /// Output pre-activation for a raw (unnormalized) input.
    pub fn logit(&self, x: f64) -> f64 {
        let mut a = vec![self.norm.apply(x)];
        let mut z = Vec::new();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            layer.affine(&a, &mut z);
            if i != last {
                z.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            core::mem::swap(&mut a, &mut z);
        }
        a[0]
    }

    /// Contact probability for a peak amplitude, strictly inside (0, 1).
    pub fn forward(&self, peak_amplitude_volts: f64) -> f64 {
        sigmoid(self.logit(peak_amplitude_volts))
    }

    /// Analytic gradient of the mean BCE over `batch`, flattened like
    /// [`params`](Self::params), together with the mean loss.
    pub fn gradient(&self, batch: &[LabeledSample]) -> (Vec<f64>, f64) {
        let mut grad = vec![0.0; self.param_count()];
        if batch.is_empty() {
            return (grad, 0.0);
        }
        let n_layers = self.layers.len();
        let mut acts: Vec<Vec<f64>> = vec![Vec::new(); n_layers + 1];
        let mut delta = Vec::new();
        let mut prev_delta = Vec::new();
        let mut loss = 0.0;
        let scale = 1.0 / batch.len() as f64;

        // offsets of each layer's block inside the flat gradient
        let mut offsets = Vec::with_capacity(n_layers);
        let mut at = 0;
        for l in &self.layers {
            offsets.push(at);
            at += l.weights.len() + l.biases.len();
        }

        for sample in batch {
            acts[0].clear();
            acts[0].push(self.norm.apply(sample.input));
            for (i, layer) in self.layers.iter().enumerate() {
                let (head, tail) = acts.split_at_mut(i + 1);
                layer.affine(&head[i], &mut tail[0]);
                if i + 1 != n_layers {
                    tail[0].iter_mut().for_each(|v| *v = v.max(0.0));
                }
            }
            let z = acts[n_layers][0];
            let p = sigmoid(z);
            let y = if sample.label { 1.0 } else { 0.0 };
            loss += bce_loss(p, sample.label);

            delta.clear();
            delta.push(p - y);
            for i in (0..n_layers).rev() {
                let layer = &self.layers[i];
                let input = &acts[i];
                let (gw, gb) = grad[offsets[i]..offsets[i] + layer.weights.len() + layer.biases.len()]
                    .split_at_mut(layer.weights.len());
                for (o, &d) in delta.iter().enumerate() {
                    gb[o] += d * scale;
                    for (k, &x) in input.iter().enumerate() {
                        gw[o * layer.inputs + k] += d * x * scale;
                    }
                }
                if i == 0 {
                    break;
                }
                prev_delta.clear();
                prev_delta.resize(layer.inputs, 0.0);
                for (o, &d) in delta.iter().enumerate() {
                    let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                    for (k, w) in row.iter().enumerate() {
                        prev_delta[k] += w * d;
                    }
                }
                // ReLU derivative; activations stored post-ReLU, zero iff inactive
                for (k, pd) in prev_delta.iter_mut().enumerate() {
                    if acts[i][k] <= 0.0 {
                        *pd = 0.0;
                    }
                }
                core::mem::swap(&mut delta, &mut prev_delta);
            }
        }
        (grad, loss * scale)
    }

    /// Mean BCE over `data`.
    pub fn mean_loss(&self, data: &[LabeledSample]) -> f64 {
        if data.is_empty() {
            return 0.0;
        }
        data.iter().map(|s| bce_loss(self.forward(s.input), s.label)).sum::<f64>() / data.len() as f64
    }

    /// Fraction classified correctly at p >= 0.5.
    pub fn accuracy(&self, data: &[LabeledSample]) -> f64 {
        if data.is_empty() {
            return 0.0;
        }
        let correct = data.iter().filter(|s| (self.forward(s.input) >= 0.5) == s.label).count();
        correct as f64 / data.len() as f64
    }
}

/// Logistic function, clamped so the result stays strictly inside (0, 1).
pub fn sigmoid(z: f64) -> f64 {
    let p = if z >= 0.0 {
        1.0 / (1.0 + math::exp(-z))
    } else {
        let e = math::exp(z);
        e / (1.0 + e)
    };
    p.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

/// Binary cross-entropy with `p` clamped to `[1e-12, 1 - 1e-12]`.
pub fn bce_loss(p: f64, label: bool) -> f64 {
    let p = p.clamp(BCE_EPSILON, 1.0 - BCE_EPSILON);
    if label {
        -math::ln(p)
    } else {
        -math::ln(1.0 - p)
    }
}
