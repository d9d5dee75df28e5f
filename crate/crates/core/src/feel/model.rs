//! Two-layer perceptron with softmax cross-entropy, flat parameter vector,
//! exact gradients.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::data::Dataset;

/// Network shape; parameters live in a flat vector ordered
/// `[W1 (hidden x dim), b1, W2 (classes x hidden), b2]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MlpShape {
    pub dim: usize,
    pub hidden: usize,
    pub classes: usize,
}

impl MlpShape {
    pub fn num_params(&self) -> usize {
        self.hidden * self.dim + self.hidden + self.classes * self.hidden + self.classes
    }

    fn w1(&self) -> std::ops::Range<usize> {
        0..self.hidden * self.dim
    }

    fn b1(&self) -> std::ops::Range<usize> {
        let s = self.hidden * self.dim;
        s..s + self.hidden
    }

    fn w2(&self) -> std::ops::Range<usize> {
        let s = self.hidden * self.dim + self.hidden;
        s..s + self.classes * self.hidden
    }

    fn b2(&self) -> std::ops::Range<usize> {
        let s = self.hidden * self.dim + self.hidden + self.classes * self.hidden;
        s..s + self.classes
    }
}

/// Model weights plus the momentum buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub weights: Vec<f64>,
    pub velocity: Vec<f64>,
}

impl ModelState {
    pub fn init(shape: &MlpShape, rng: &mut impl Rng) -> Self {
        let scale1 = (1.0 / shape.dim as f64).sqrt();
        let scale2 = (1.0 / shape.hidden as f64).sqrt();
        let n1 = Normal::new(0.0, scale1).unwrap();
        let n2 = Normal::new(0.0, scale2).unwrap();
        let mut weights = vec![0.0; shape.num_params()];
        for i in shape.w1() {
            weights[i] = n1.sample(rng);
        }
        for i in shape.w2() {
            weights[i] = n2.sample(rng);
        }
        let velocity = vec![0.0; weights.len()];
        Self { weights, velocity }
    }

    pub fn zeros(shape: &MlpShape) -> Self {
        Self { weights: vec![0.0; shape.num_params()], velocity: vec![0.0; shape.num_params()] }
    }
}

fn softmax_in_place(logits: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for z in logits.iter_mut() {
        *z = (*z - max).exp();
        sum += *z;
    }
    for z in logits.iter_mut() {
        *z /= sum;
    }
}

fn forward(shape: &MlpShape, w: &[f64], x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let w1 = &w[shape.w1()];
    let b1 = &w[shape.b1()];
    let w2 = &w[shape.w2()];
    let b2 = &w[shape.b2()];
    let mut hidden = vec![0.0; shape.hidden];
    for (h, hv) in hidden.iter_mut().enumerate() {
        let row = &w1[h * shape.dim..(h + 1) * shape.dim];
        let z: f64 = row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + b1[h];
        *hv = z.tanh();
    }
    let mut logits = vec![0.0; shape.classes];
    for (c, lv) in logits.iter_mut().enumerate() {
        let row = &w2[c * shape.hidden..(c + 1) * shape.hidden];
        *lv = row.iter().zip(&hidden).map(|(a, b)| a * b).sum::<f64>() + b2[c];
    }
    (hidden, logits)
}

/// Mean cross-entropy loss and its exact gradient over a batch of sample
/// indices.
pub fn loss_and_grad(
    shape: &MlpShape,
    w: &[f64],
    data: &Dataset,
    batch: &[usize],
) -> (f64, Vec<f64>) {
    assert!(!batch.is_empty(), "batch must be non-empty");
    let mut grad = vec![0.0; shape.num_params()];
    let mut loss = 0.0;
    let inv = 1.0 / batch.len() as f64;
    for &idx in batch {
        let x = &data.features[idx];
        let label = data.labels[idx];
        let (hidden, mut probs) = forward(shape, w, x);
        softmax_in_place(&mut probs);
        loss -= probs[label].max(1e-300).ln() * inv;

        // dL/dlogits = probs - onehot
        let mut dlog = probs;
        dlog[label] -= 1.0;

        let (w2_range, b2_range) = (shape.w2(), shape.b2());
        let w2 = &w[w2_range.clone()];
        let mut dhidden = vec![0.0; shape.hidden];
        {
            let gw2 = &mut grad[w2_range.start..w2_range.end];
            for (c, &d) in dlog.iter().enumerate() {
                for (h, &hv) in hidden.iter().enumerate() {
                    gw2[c * shape.hidden + h] += d * hv * inv;
                    dhidden[h] += d * w2[c * shape.hidden + h];
                }
            }
        }
        {
            let gb2 = &mut grad[b2_range.start..b2_range.end];
            for (c, &d) in dlog.iter().enumerate() {
                gb2[c] += d * inv;
            }
        }
        // back through tanh
        for (h, dh) in dhidden.iter_mut().enumerate() {
            *dh *= 1.0 - hidden[h] * hidden[h];
        }
        let (w1_range, b1_range) = (shape.w1(), shape.b1());
        {
            let gw1 = &mut grad[w1_range.start..w1_range.end];
            for (h, &dh) in dhidden.iter().enumerate() {
                for (j, &xv) in x.iter().enumerate() {
                    gw1[h * shape.dim + j] += dh * xv * inv;
                }
            }
        }
        {
            let gb1 = &mut grad[b1_range.start..b1_range.end];
            for (h, &dh) in dhidden.iter().enumerate() {
                gb1[h] += dh * inv;
            }
        }
    }
    (loss, grad)
}

/// Mean loss over the whole dataset.
pub fn dataset_loss(shape: &MlpShape, w: &[f64], data: &Dataset) -> f64 {
    let mut loss = 0.0;
    for idx in 0..data.len() {
        let (_, mut probs) = forward(shape, w, &data.features[idx]);
        softmax_in_place(&mut probs);
        loss -= probs[data.labels[idx]].max(1e-300).ln();
    }
    loss / data.len() as f64
}

/// Fraction of correctly classified samples.
pub fn accuracy(shape: &MlpShape, w: &[f64], data: &Dataset) -> f64 {
    let mut correct = 0usize;
    for idx in 0..data.len() {
        let (_, logits) = forward(shape, w, &data.features[idx]);
        let pred = logits
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(c, _)| c)
            .unwrap();
        if pred == data.labels[idx] {
            correct += 1;
        }
    }
    correct as f64 / data.len() as f64
}
