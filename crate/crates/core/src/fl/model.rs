use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use super::data::Samples;

/// Softmax linear classifier. Weights are the `n_classes x d_in` matrix in
/// row-major order followed by `n_classes` biases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalModel {
    pub weights: Vec<f64>,
    pub d_in: usize,
    pub n_classes: usize,
    pub lr: f64,
    pub epoch: usize,
}

impl LocalModel {
    pub fn zeros(d_in: usize, n_classes: usize, lr: f64) -> Self {
        Self {
            weights: vec![0.0; d_in * n_classes + n_classes],
            d_in,
            n_classes,
            lr,
            epoch: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    fn logits(&self, x: &[f64], out: &mut [f64]) {
        let bias = &self.weights[self.d_in * self.n_classes..];
        for (c, o) in out.iter_mut().enumerate() {
            let row = &self.weights[c * self.d_in..(c + 1) * self.d_in];
            *o = bias[c] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
    }

    /// Highest-scoring class; ties go to the lowest index.
    pub fn predict(&self, x: &[f64]) -> usize {
        let mut z = vec![0.0; self.n_classes];
        self.logits(x, &mut z);
        let mut best = 0;
        for c in 1..z.len() {
            if z[c] > z[best] {
                best = c;
            }
        }
        best
    }

    /// Mean cross-entropy over `idx`, adding its gradient into `grad` when given.
    pub fn loss_grad(&self, data: &Samples, idx: &[usize], mut grad: Option<&mut [f64]>) -> f64 {
        if idx.is_empty() {
            return 0.0;
        }
        let inv = 1.0 / idx.len() as f64;
        let mut z = vec![0.0; self.n_classes];
        let mut loss = 0.0;
        for &i in idx {
            let x = data.row(i);
            let y = data.y[i];
            self.logits(x, &mut z);
            let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = z.iter().map(|v| (v - max).exp()).sum();
            let lse = max + sum.ln();
            loss += lse - z[y];
            if let Some(g) = grad.as_deref_mut() {
                let bias_at = self.d_in * self.n_classes;
                for c in 0..self.n_classes {
                    let p = (z[c] - lse).exp() - if c == y { 1.0 } else { 0.0 };
                    let coef = p * inv;
                    for (gj, xj) in g[c * self.d_in..(c + 1) * self.d_in].iter_mut().zip(x) {
                        *gj += coef * xj;
                    }
                    g[bias_at + c] += coef;
                }
            }
        }
        loss * inv
    }

    /// Accuracy and mean loss on `data`.
    pub fn evaluate(&self, data: &Samples) -> (f64, f64) {
        if data.is_empty() {
            return (0.0, 0.0);
        }
        let idx: Vec<usize> = (0..data.len()).collect();
        let loss = self.loss_grad(data, &idx, None);
        let correct = idx.iter().filter(|&&i| self.predict(data.row(i)) == data.y[i]).count();
        (correct as f64 / data.len() as f64, loss)
    }

    pub fn apply_delta(&mut self, delta: &[f64]) {
        for (w, d) in self.weights.iter_mut().zip(delta) {
            *w += d;
        }
    }
}

/// Seeded mini-batch SGD on `shard`; returns the weight change.
pub fn local_train(model: &LocalModel, shard: &Samples, epochs: usize, batch_size: usize, seed: u64) -> Vec<f64> {
    let mut local = model.clone();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..shard.len()).collect();
    let mut grad = vec![0.0; model.dim()];
    for _ in 0..epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(batch_size.max(1)) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            local.loss_grad(shard, batch, Some(&mut grad));
            for (w, g) in local.weights.iter_mut().zip(&grad) {
                *w -= local.lr * g;
            }
        }
        local.epoch += 1;
    }
    local.weights.iter().zip(&model.weights).map(|(a, b)| a - b).collect()
}
