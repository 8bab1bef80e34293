//! Dense layers with explicit backward passes, and the Adam optimizer.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Fully connected layer `y = W x + b`, `W` stored row-major (`out x in`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub frozen: bool,
    #[serde(skip)]
    grad_weight: Vec<f64>,
    #[serde(skip)]
    grad_bias: Vec<f64>,
}

impl Linear {
    /// Uniform fan-in initialization, `U(-1/sqrt(in), 1/sqrt(in))` for both
    /// weights and biases.
    pub fn new(in_dim: usize, out_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 1.0 / (in_dim as f64).sqrt();
        let weight = (0..in_dim * out_dim)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        let bias = (0..out_dim)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        Linear {
            in_dim,
            out_dim,
            weight,
            bias,
            frozen: false,
            grad_weight: vec![0.0; in_dim * out_dim],
            grad_bias: vec![0.0; out_dim],
        }
    }

    pub fn frozen(mut self) -> Self {
        self.frozen = true;
        self
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.in_dim);
        self.weight
            .chunks_exact(self.in_dim)
            .zip(&self.bias)
            .map(|(row, b)| b + row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>())
            .collect()
    }

    /// Accumulates parameter gradients (unless frozen) and returns `dL/dx`.
    pub fn backward(&mut self, x: &[f64], grad_out: &[f64]) -> Vec<f64> {
        if !self.frozen {
            self.ensure_grad_buffers();
            for (o, &g) in grad_out.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                self.grad_bias[o] += g;
                let row = &mut self.grad_weight[o * self.in_dim..(o + 1) * self.in_dim];
                for (gw, xi) in row.iter_mut().zip(x) {
                    *gw += g * xi;
                }
            }
        }
        self.input_grad(grad_out)
    }

    /// `dL/dx = W^T grad_out`, without touching parameter gradients.
    pub fn input_grad(&self, grad_out: &[f64]) -> Vec<f64> {
        let mut gx = vec![0.0; self.in_dim];
        for (row, &g) in self.weight.chunks_exact(self.in_dim).zip(grad_out) {
            if g == 0.0 {
                continue;
            }
            for (gxi, w) in gx.iter_mut().zip(row) {
                *gxi += g * w;
            }
        }
        gx
    }

    fn ensure_grad_buffers(&mut self) {
        if self.grad_weight.len() != self.weight.len() {
            self.grad_weight = vec![0.0; self.weight.len()];
            self.grad_bias = vec![0.0; self.bias.len()];
        }
    }

    pub fn zero_grad(&mut self) {
        self.ensure_grad_buffers();
        self.grad_weight.fill(0.0);
        self.grad_bias.fill(0.0);
    }

    pub fn grad_weight(&self) -> &[f64] {
        &self.grad_weight
    }

    pub fn grad_bias(&self) -> &[f64] {
        &self.grad_bias
    }

    pub fn n_params(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn grad_norm_sq(&self) -> f64 {
        self.grad_weight
            .iter()
            .chain(&self.grad_bias)
            .map(|g| g * g)
            .sum()
    }
}

pub fn relu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| v.max(0.0)).collect()
}

/// Gradient through a ReLU given its pre-activation input.
pub fn relu_backward(pre: &[f64], grad: &[f64]) -> Vec<f64> {
    pre.iter()
        .zip(grad)
        .map(|(&p, &g)| if p > 0.0 { g } else { 0.0 })
        .collect()
}

/// Stack of linear layers with ReLU between them (none after the last).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

/// Per-layer inputs and pre-activations saved by [`Mlp::forward_cached`].
#[derive(Debug, Clone, Default)]
pub struct MlpCache {
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
}

impl Mlp {
    pub fn new(dims: &[usize], seed: u64) -> Self {
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(w[0], w[1], seed.wrapping_add(i as u64 * 7919)))
            .collect();
        Mlp { layers }
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map(|l| l.out_dim).unwrap_or(0)
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut h = x.to_vec();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(&h);
            if i < last {
                h = relu(&h);
            }
        }
        h
    }

    pub fn forward_cached(&self, x: &[f64]) -> (Vec<f64>, MlpCache) {
        let mut cache = MlpCache {
            inputs: Vec::with_capacity(self.layers.len()),
            pre: Vec::with_capacity(self.layers.len()),
        };
        let mut h = x.to_vec();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let z = layer.forward(&h);
            cache.inputs.push(std::mem::take(&mut h));
            h = if i < last { relu(&z) } else { z.clone() };
            cache.pre.push(z);
        }
        (h, cache)
    }

    pub fn backward(&mut self, cache: &MlpCache, grad_out: &[f64]) -> Vec<f64> {
        let mut g = grad_out.to_vec();
        let last = self.layers.len() - 1;
        for i in (0..self.layers.len()).rev() {
            if i < last {
                g = relu_backward(&cache.pre[i], &g);
            }
            g = self.layers[i].backward(&cache.inputs[i], &g);
        }
        g
    }

    /// Input gradient only; parameter gradients are left untouched.
    pub fn input_grad(&self, cache: &MlpCache, grad_out: &[f64]) -> Vec<f64> {
        let mut g = grad_out.to_vec();
        let last = self.layers.len() - 1;
        for i in (0..self.layers.len()).rev() {
            if i < last {
                g = relu_backward(&cache.pre[i], &g);
            }
            g = self.layers[i].input_grad(&g);
        }
        g
    }
}

/// Adam with bias correction; no weight decay, no schedule.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    moments: HashMap<String, (Vec<f64>, Vec<f64>)>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            moments: HashMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update to every non-frozen layer, using the gradients
    /// accumulated in the layers.
    pub fn step<'a>(&mut self, layers: impl IntoIterator<Item = (String, &'a mut Linear)>) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (name, layer) in layers {
            if layer.frozen {
                continue;
            }
            layer.ensure_grad_buffers();
            let n_w = layer.weight.len();
            let (m, v) = self
                .moments
                .entry(name)
                .or_insert_with(|| (vec![0.0; layer.n_params()], vec![0.0; layer.n_params()]));
            let params = layer.weight.iter_mut().chain(layer.bias.iter_mut());
            let grads = layer.grad_weight.iter().chain(layer.grad_bias.iter());
            for (i, (p, &g)) in params.zip(grads).enumerate() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
            debug_assert_eq!(m.len(), n_w + layer.bias.len());
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_backward_matches_finite_differences() {
        let mut layer = Linear::new(5, 3, 1);
        let x = [0.3, -1.2, 0.5, 2.0, -0.7];
        let g = [1.0, -0.5, 0.25];
        layer.zero_grad();
        let gx = layer.backward(&x, &g);
        let obj = |l: &Linear, x: &[f64]| -> f64 {
            l.forward(x).iter().zip(&g).map(|(y, gi)| y * gi).sum()
        };
        let h = 1e-6;
        for i in 0..5 {
            let mut xp = x;
            let mut xm = x;
            xp[i] += h;
            xm[i] -= h;
            let fd = (obj(&layer, &xp) - obj(&layer, &xm)) / (2.0 * h);
            assert!((fd - gx[i]).abs() < 1e-8);
        }
        let mut probe = layer.clone();
        probe.weight[4] += h;
        let up = obj(&probe, &x);
        probe.weight[4] -= 2.0 * h;
        let down = obj(&probe, &x);
        assert!(((up - down) / (2.0 * h) - layer.grad_weight()[4]).abs() < 1e-8);
    }

    #[test]
    fn frozen_layer_accumulates_nothing() {
        let mut layer = Linear::new(3, 2, 2).frozen();
        layer.zero_grad();
        layer.backward(&[1.0, 2.0, 3.0], &[1.0, 1.0]);
        assert_eq!(layer.grad_norm_sq(), 0.0);
        let before = layer.clone();
        let mut adam = Adam::new(0.1);
        adam.step([("l".to_string(), &mut layer)]);
        assert_eq!(before, layer);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut layer = Linear::new(1, 1, 3);
        layer.zero_grad();
        layer.backward(&[2.0], &[1.0]);
        let w0 = layer.weight[0];
        let mut adam = Adam::new(0.01);
        adam.step([("l".to_string(), &mut layer)]);
        // bias-corrected first step is lr * sign(g)
        assert!((w0 - layer.weight[0] - 0.01).abs() < 1e-9);
    }
}
