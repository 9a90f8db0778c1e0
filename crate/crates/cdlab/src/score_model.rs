//! A small MLP score network with exact hand-coded backpropagation, the
//! denoising score-matching objective, and an adaptive-moment optimizer.
//!
//! The network maps `(x, t) -> s(x, t)` in 2D. Time enters through a fixed
//! sinusoidal embedding of `t / T`. The final layer is zero-initialized so a
//! fresh network outputs exactly (0, 0) everywhere.

use crate::error::{Error, Result};
use crate::linalg::Vec2;
use crate::schedules::NoiseSchedule;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

const N_FREQS: usize = 4;
pub const TIME_EMBED_DIM: usize = 2 * N_FREQS;
pub const INPUT_DIM: usize = 2 + TIME_EMBED_DIM;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Layer {
    n_in: usize,
    n_out: usize,
    w: Vec<f64>, // row-major n_out x n_in
    b: Vec<f64>,
}

impl Layer {
    fn xavier<R: Rng>(n_in: usize, n_out: usize, rng: &mut R) -> Self {
        let a = (6.0 / (n_in + n_out) as f64).sqrt();
        let w = (0..n_in * n_out).map(|_| rng.gen_range(-a..a)).collect();
        Layer {
            n_in,
            n_out,
            w,
            b: vec![0.0; n_out],
        }
    }

    fn zeros(n_in: usize, n_out: usize) -> Self {
        Layer {
            n_in,
            n_out,
            w: vec![0.0; n_in * n_out],
            b: vec![0.0; n_out],
        }
    }

    fn forward(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for o in 0..self.n_out {
            let row = &self.w[o * self.n_in..(o + 1) * self.n_in];
            let mut acc = self.b[o];
            for (wi, xi) in row.iter().zip(x) {
                acc += wi * xi;
            }
            out.push(acc);
        }
    }
}

/// Trainable score predictor `s(x, t)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MlpScoreNet {
    layers: Vec<Layer>,
    t_steps: usize,
}

/// Per-parameter buffer with the same shape as the network; used for
/// gradients and optimizer moments.
#[derive(Debug, Clone)]
pub struct Grads {
    w: Vec<Vec<f64>>,
    b: Vec<Vec<f64>>,
}

impl Grads {
    pub fn zeros_like(net: &MlpScoreNet) -> Self {
        Grads {
            w: net.layers.iter().map(|l| vec![0.0; l.w.len()]).collect(),
            b: net.layers.iter().map(|l| vec![0.0; l.b.len()]).collect(),
        }
    }

    pub fn zero(&mut self) {
        for v in self.w.iter_mut().chain(self.b.iter_mut()) {
            v.iter_mut().for_each(|x| *x = 0.0);
        }
    }

    pub fn scale(&mut self, c: f64) {
        for v in self.w.iter_mut().chain(self.b.iter_mut()) {
            v.iter_mut().for_each(|x| *x *= c);
        }
    }

    /// self += c * other
    pub fn axpy(&mut self, c: f64, other: &Grads) {
        for (a, b) in self.w.iter_mut().zip(&other.w) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += c * y;
            }
        }
        for (a, b) in self.b.iter_mut().zip(&other.b) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += c * y;
            }
        }
    }

    pub fn norm(&self) -> f64 {
        let mut acc = 0.0;
        for v in self.w.iter().chain(self.b.iter()) {
            for x in v {
                acc += x * x;
            }
        }
        acc.sqrt()
    }
}

struct Cache {
    // activations[0] is the input; activations[i] the output of layer i-1
    // after the nonlinearity (linear for the last layer)
    activations: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
}

impl MlpScoreNet {
    /// `hidden` lists hidden-layer widths, e.g. `[128, 128]`.
    pub fn new<R: Rng>(hidden: &[usize], t_steps: usize, rng: &mut R) -> Self {
        let mut widths = vec![INPUT_DIM];
        widths.extend_from_slice(hidden);
        widths.push(2);
        let n = widths.len() - 1;
        let layers = (0..n)
            .map(|i| {
                if i + 1 == n {
                    Layer::zeros(widths[i], widths[i + 1])
                } else {
                    Layer::xavier(widths[i], widths[i + 1], rng)
                }
            })
            .collect();
        MlpScoreNet { layers, t_steps }
    }

    pub fn t_steps(&self) -> usize {
        self.t_steps
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    pub fn get_param(&self, mut idx: usize) -> f64 {
        for l in &self.layers {
            if idx < l.w.len() {
                return l.w[idx];
            }
            idx -= l.w.len();
            if idx < l.b.len() {
                return l.b[idx];
            }
            idx -= l.b.len();
        }
        panic!("parameter index out of range");
    }

    pub fn set_param(&mut self, mut idx: usize, value: f64) {
        for l in &mut self.layers {
            if idx < l.w.len() {
                l.w[idx] = value;
                return;
            }
            idx -= l.w.len();
            if idx < l.b.len() {
                l.b[idx] = value;
                return;
            }
            idx -= l.b.len();
        }
        panic!("parameter index out of range");
    }

    pub fn grad_param(grads: &Grads, mut idx: usize) -> f64 {
        for (w, b) in grads.w.iter().zip(&grads.b) {
            if idx < w.len() {
                return w[idx];
            }
            idx -= w.len();
            if idx < b.len() {
                return b[idx];
            }
            idx -= b.len();
        }
        panic!("parameter index out of range");
    }

    fn embed(&self, x: Vec2, t: usize) -> Vec<f64> {
        let tau = t as f64 / self.t_steps as f64;
        let mut input = Vec::with_capacity(INPUT_DIM);
        input.push(x[0]);
        input.push(x[1]);
        for k in 0..N_FREQS {
            let f = 2.0f64.powi(k as i32) * 2.0 * PI * tau;
            input.push(f.sin());
            input.push(f.cos());
        }
        input
    }

    fn forward_cached(&self, x: Vec2, t: usize) -> Cache {
        let mut activations = vec![self.embed(x, t)];
        let mut pre = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = Vec::new();
            layer.forward(activations.last().unwrap(), &mut z);
            pre.push(z.clone());
            if i + 1 < self.layers.len() {
                z.iter_mut().for_each(|v| *v = v.tanh());
            }
            activations.push(z);
        }
        Cache { activations, pre }
    }

    /// Deterministic score prediction.
    pub fn forward(&self, x: Vec2, t: usize) -> Vec2 {
        let cache = self.forward_cached(x, t);
        let out = cache.activations.last().unwrap();
        [out[0], out[1]]
    }

    /// Accumulate `d(g . s(x, t)) / d theta` into `grads` (vector-Jacobian
    /// product with cotangent `g`), returning the forward output.
    pub fn backprop(&self, x: Vec2, t: usize, g: Vec2, grads: &mut Grads) -> Vec2 {
        let cache = self.forward_cached(x, t);
        let out = cache.activations.last().unwrap();
        let result = [out[0], out[1]];
        let mut delta: Vec<f64> = vec![g[0], g[1]];
        for (i, layer) in self.layers.iter().enumerate().rev() {
            // delta currently refers to layer output (post-activation)
            if i + 1 < self.layers.len() {
                for (d, z) in delta.iter_mut().zip(&cache.pre[i]) {
                    let th = z.tanh();
                    *d *= 1.0 - th * th;
                }
            }
            let input = &cache.activations[i];
            let gw = &mut grads.w[i];
            for (o, &d) in delta.iter().enumerate() {
                grads.b[i][o] += d;
                let row = &mut gw[o * layer.n_in..(o + 1) * layer.n_in];
                for (gwi, xi) in row.iter_mut().zip(input) {
                    *gwi += d * xi;
                }
            }
            if i > 0 {
                let mut prev = vec![0.0; layer.n_in];
                for (o, &d) in delta.iter().enumerate() {
                    let row = &layer.w[o * layer.n_in..(o + 1) * layer.n_in];
                    for (p, wi) in prev.iter_mut().zip(row) {
                        *p += d * wi;
                    }
                }
                delta = prev;
            }
        }
        result
    }

    /// Apply `theta -= update` elementwise from a same-shaped buffer.
    fn apply_update(&mut self, update: &Grads) {
        for (i, l) in self.layers.iter_mut().enumerate() {
            for (w, u) in l.w.iter_mut().zip(&update.w[i]) {
                *w -= u;
            }
            for (b, u) in l.b.iter_mut().zip(&update.b[i]) {
                *b -= u;
            }
        }
    }
}

/// Denoising score-matching loss and gradient on pre-drawn noise:
/// each element is `(x0, t, eps)` with `x_t = sqrt(a_t) x0 + sqrt(1-a_t) eps`
/// and regression target `-eps / sqrt(1 - a_t)`.
pub fn dsm_loss_with_noise(
    net: &MlpScoreNet,
    draws: &[(Vec2, usize, Vec2)],
    sched: &NoiseSchedule,
) -> (f64, Grads) {
    let mut grads = Grads::zeros_like(net);
    let mut loss = 0.0;
    let inv_n = 1.0 / draws.len() as f64;
    for &(x0, t, eps) in draws {
        let a = sched.alpha(t);
        let sq = a.sqrt();
        let sig = (1.0 - a).sqrt();
        let xt = [sq * x0[0] + sig * eps[0], sq * x0[1] + sig * eps[1]];
        let target = [-eps[0] / sig, -eps[1] / sig];
        let out = net.forward(xt, t);
        let r = [out[0] - target[0], out[1] - target[1]];
        loss += (r[0] * r[0] + r[1] * r[1]) * inv_n;
        net.backprop(xt, t, [2.0 * r[0] * inv_n, 2.0 * r[1] * inv_n], &mut grads);
    }
    (loss, grads)
}

/// DSM loss on a batch of clean samples; `t` uniform in 1..=T and fresh
/// Gaussian noise per element.
pub fn dsm_loss<R: Rng>(
    net: &MlpScoreNet,
    batch: &[Vec2],
    sched: &NoiseSchedule,
    rng: &mut R,
) -> (f64, Grads) {
    let draws: Vec<(Vec2, usize, Vec2)> = batch
        .iter()
        .map(|&x0| {
            let t = rng.gen_range(1..=sched.t_steps());
            let eps = [rng.sample(StandardNormal), rng.sample(StandardNormal)];
            (x0, t, eps)
        })
        .collect();
    dsm_loss_with_noise(net, &draws, sched)
}

/// Adaptive moment estimation state: first/second moments, step count,
/// learning rate.
#[derive(Debug, Clone)]
pub struct TrainState {
    m: Grads,
    v: Grads,
    step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl TrainState {
    pub fn new(net: &MlpScoreNet, lr: f64) -> Self {
        TrainState {
            m: Grads::zeros_like(net),
            v: Grads::zeros_like(net),
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn step(&mut self, net: &mut MlpScoreNet, grads: &Grads) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let mut update = Grads::zeros_like(net);
        let bufs = |g: &Grads, i: usize, is_w: bool| -> *const Vec<f64> {
            if is_w {
                &g.w[i]
            } else {
                &g.b[i]
            }
        };
        let _ = bufs; // layout mirrors Grads; iterate in lockstep below
        for i in 0..grads.w.len() {
            for part in 0..2 {
                let (g, m, v, u) = if part == 0 {
                    (&grads.w[i], &mut self.m.w[i], &mut self.v.w[i], &mut update.w[i])
                } else {
                    (&grads.b[i], &mut self.m.b[i], &mut self.v.b[i], &mut update.b[i])
                };
                for k in 0..g.len() {
                    m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * g[k];
                    v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * g[k] * g[k];
                    let mh = m[k] / bc1;
                    let vh = v[k] / bc2;
                    u[k] = self.lr * mh / (vh.sqrt() + self.eps);
                }
            }
        }
        net.apply_update(&update);
    }
}

/// Train the network by DSM on draws from `sampler`. Returns the loss curve.
/// Signals divergence when the loss exceeds 1000x its initial value.
pub fn train<R: Rng, F: FnMut(&mut R) -> Vec2>(
    net: &mut MlpScoreNet,
    mut sampler: F,
    steps: usize,
    batch: usize,
    lr: f64,
    sched: &NoiseSchedule,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let mut state = TrainState::new(net, lr);
    let mut curve = Vec::with_capacity(steps);
    let mut initial = None;
    for step in 0..steps {
        // cosine decay to ~0 damps the gradient-noise wander of the last
        // iterates without touching the early exploration phase
        state.lr = lr * 0.5
            * (1.0 + (std::f64::consts::PI * step as f64 / steps.max(1) as f64).cos());
        let xs: Vec<Vec2> = (0..batch).map(|_| sampler(rng)).collect();
        let (loss, grads) = dsm_loss(net, &xs, sched, rng);
        if !loss.is_finite() {
            return Err(Error::Diverged(format!("non-finite DSM loss at step {step}")));
        }
        let init = *initial.get_or_insert(loss);
        if loss > 1e3 * init.max(1e-12) {
            return Err(Error::Diverged(format!(
                "DSM loss {loss:.3e} exceeds 1000x initial {init:.3e} at step {step}"
            )));
        }
        state.step(net, &grads);
        curve.push(loss);
    }
    Ok(curve)
}
