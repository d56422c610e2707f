//! Fully connected policy network with hand-written backpropagation.
//!
//! Layout: `[FC -> Norm -> LeakyReLU] x 3 -> FC -> softmax`. The normalization
//! layers use running mean/variance as constants inside the differentiated
//! function; the running statistics are refreshed from minibatch statistics
//! after each parameter update and are frozen at evaluation time.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::LearnerError;

const LOG_CLAMP: f64 = -27.631_021_115_928_547; // ln(1e-12)

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetConfig {
    pub hidden: Vec<usize>,
    pub normalization: bool,
    pub leaky_slope: f64,
    pub zero_final_layer: bool,
    pub norm_momentum: f64,
    pub norm_eps: f64,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            hidden: vec![256, 128, 128],
            normalization: true,
            leaky_slope: 0.01,
            zero_final_layer: true,
            norm_momentum: 0.05,
            norm_eps: 1e-5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Dense {
    pub(crate) n_in: usize,
    pub(crate) n_out: usize,
    /// Row-major `[n_in][n_out]`.
    pub(crate) w: Vec<f64>,
    pub(crate) b: Vec<f64>,
}

impl Dense {
    fn init(n_in: usize, n_out: usize, zero: bool, rng: &mut ChaCha8Rng) -> Self {
        let bound = (6.0 / n_in as f64).sqrt();
        let w = if zero {
            vec![0.0; n_in * n_out]
        } else {
            (0..n_in * n_out).map(|_| rng.gen_range(-bound..bound)).collect()
        };
        Dense { n_in, n_out, w, b: vec![0.0; n_out] }
    }

    fn forward(&self, x: &[f64], rows: usize, out: &mut Vec<f64>) {
        out.clear();
        out.reserve(rows * self.n_out);
        for r in 0..rows {
            out.extend_from_slice(&self.b);
            let o = &mut out[r * self.n_out..];
            for (i, &xi) in x[r * self.n_in..(r + 1) * self.n_in].iter().enumerate() {
                if xi == 0.0 {
                    continue;
                }
                let wi = &self.w[i * self.n_out..(i + 1) * self.n_out];
                for (oo, &ww) in o.iter_mut().zip(wi) {
                    *oo += xi * ww;
                }
            }
        }
    }

    /// Accumulates weight/bias gradients and returns the input gradient.
    fn backward(&self, x: &[f64], dout: &[f64], rows: usize, dw: &mut [f64], db: &mut [f64]) -> Vec<f64> {
        let mut dx = vec![0.0; rows * self.n_in];
        for r in 0..rows {
            let g = &dout[r * self.n_out..(r + 1) * self.n_out];
            for (d, &v) in db.iter_mut().zip(g) {
                *d += v;
            }
            let xr = &x[r * self.n_in..(r + 1) * self.n_in];
            let dxr = &mut dx[r * self.n_in..(r + 1) * self.n_in];
            for i in 0..self.n_in {
                let wi = &self.w[i * self.n_out..(i + 1) * self.n_out];
                let dwi = &mut dw[i * self.n_out..(i + 1) * self.n_out];
                let xi = xr[i];
                let mut acc = 0.0;
                for o in 0..self.n_out {
                    dwi[o] += xi * g[o];
                    acc += wi[o] * g[o];
                }
                dxr[i] = acc;
            }
        }
        dx
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Norm {
    pub(crate) gamma: Vec<f64>,
    pub(crate) beta: Vec<f64>,
    pub(crate) mean: Vec<f64>,
    pub(crate) var: Vec<f64>,
}

impl Norm {
    fn new(n: usize) -> Self {
        Norm { gamma: vec![1.0; n], beta: vec![0.0; n], mean: vec![0.0; n], var: vec![1.0; n] }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Hidden {
    pub(crate) dense: Dense,
    pub(crate) norm: Option<Norm>,
}

/// Shared decentralized policy network over the flat action space.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyNetwork {
    pub(crate) hidden: Vec<Hidden>,
    pub(crate) output: Dense,
    pub(crate) slope: f64,
    pub(crate) eps: f64,
    pub(crate) momentum: f64,
}

/// Parameter-shaped gradient buffer. Tensor order matches [`PolicyNetwork::tensors`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub tensors: Vec<Vec<f64>>,
}

impl Gradient {
    pub fn zeros_like(net: &PolicyNetwork) -> Self {
        Gradient { tensors: net.tensors().iter().map(|t| vec![0.0; t.len()]).collect() }
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.tensors.iter().flatten().copied().collect()
    }

    pub fn add_scaled(&mut self, other: &Gradient, scale: f64) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += scale * y;
            }
        }
    }

    pub fn norm(&self) -> f64 {
        self.tensors.iter().flatten().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// One supervised row: features and a target distribution over the full action space.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub features: Vec<f64>,
    pub target: Vec<f64>,
}

struct LayerCache {
    input: Vec<f64>,
    nhat: Vec<f64>,
    pre: Vec<f64>,
}

struct ForwardCache {
    layers: Vec<LayerCache>,
    last: Vec<f64>,
    logits: Vec<f64>,
}

impl PolicyNetwork {
    pub fn new(input_dim: usize, output_dim: usize, cfg: &NetConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut hidden = Vec::with_capacity(cfg.hidden.len());
        let mut n_in = input_dim;
        for &w in &cfg.hidden {
            hidden.push(Hidden {
                dense: Dense::init(n_in, w, false, &mut rng),
                norm: cfg.normalization.then(|| Norm::new(w)),
            });
            n_in = w;
        }
        let output = Dense::init(n_in, output_dim, cfg.zero_final_layer, &mut rng);
        PolicyNetwork { hidden, output, slope: cfg.leaky_slope, eps: cfg.norm_eps, momentum: cfg.norm_momentum }
    }

    pub fn input_dim(&self) -> usize {
        self.hidden.first().map_or(self.output.n_in, |h| h.dense.n_in)
    }

    pub fn output_dim(&self) -> usize {
        self.output.n_out
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Trainable tensors: per hidden layer `w, b[, gamma, beta]`, then output `w, b`.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for h in &self.hidden {
            out.push(&h.dense.w);
            out.push(&h.dense.b);
            if let Some(n) = &h.norm {
                out.push(&n.gamma);
                out.push(&n.beta);
            }
        }
        out.push(&self.output.w);
        out.push(&self.output.b);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for h in &mut self.hidden {
            out.push(&mut h.dense.w);
            out.push(&mut h.dense.b);
            if let Some(n) = &mut h.norm {
                out.push(&mut n.gamma);
                out.push(&mut n.beta);
            }
        }
        out.push(&mut self.output.w);
        out.push(&mut self.output.b);
        out
    }

    fn check_input(&self, len: usize) -> Result<(), LearnerError> {
        if len != self.input_dim() {
            return Err(LearnerError::DimensionMismatch { expected: self.input_dim(), got: len });
        }
        Ok(())
    }

    fn activate(&self, y: f64) -> f64 {
        if y > 0.0 {
            y
        } else {
            self.slope * y
        }
    }

    fn forward_cached(&self, x: &[f64], rows: usize) -> ForwardCache {
        let mut layers = Vec::with_capacity(self.hidden.len());
        let mut cur = x.to_vec();
        for h in &self.hidden {
            let mut z = Vec::new();
            h.dense.forward(&cur, rows, &mut z);
            let n = h.dense.n_out;
            let (nhat, pre) = match &h.norm {
                Some(norm) => {
                    let mut nhat = z;
                    let mut pre = vec![0.0; nhat.len()];
                    for (k, v) in nhat.iter_mut().enumerate() {
                        let j = k % n;
                        *v = (*v - norm.mean[j]) / (norm.var[j] + self.eps).sqrt();
                        pre[k] = norm.gamma[j] * *v + norm.beta[j];
                    }
                    (nhat, pre)
                }
                None => (Vec::new(), z),
            };
            let next: Vec<f64> = pre.iter().map(|&y| self.activate(y)).collect();
            layers.push(LayerCache { input: cur, nhat, pre });
            cur = next;
        }
        let mut logits = Vec::new();
        self.output.forward(&cur, rows, &mut logits);
        ForwardCache { layers, last: cur, logits }
    }

    /// Unnormalized output scores for one feature vector.
    pub fn logits(&self, features: &[f64]) -> Result<Vec<f64>, LearnerError> {
        self.check_input(features.len())?;
        Ok(self.forward_cached(features, 1).logits)
    }

    /// Logits for a batch of feature rows (flat, row-major).
    pub fn logits_batch(&self, inputs: &[f64], rows: usize) -> Result<Vec<f64>, LearnerError> {
        self.check_input(if rows == 0 { self.input_dim() } else { inputs.len() / rows })?;
        Ok(self.forward_cached(inputs, rows).logits)
    }

    /// Softmax distribution over the full action space.
    pub fn forward(&self, features: &[f64]) -> Result<Vec<f64>, LearnerError> {
        Ok(softmax(&self.logits(features)?))
    }

    /// Distribution renormalized over the actions where `mask` is true.
    pub fn forward_masked(&self, features: &[f64], mask: &[bool]) -> Result<Vec<f64>, LearnerError> {
        let z = self.logits(features)?;
        if mask.len() != z.len() {
            return Err(LearnerError::DimensionMismatch { expected: z.len(), got: mask.len() });
        }
        Ok(masked_softmax(&z, mask, 1.0))
    }

    fn flatten_batch(&self, batch: &[Sample]) -> Result<(Vec<f64>, Vec<f64>), LearnerError> {
        let mut x = Vec::with_capacity(batch.len() * self.input_dim());
        let mut t = Vec::with_capacity(batch.len() * self.output_dim());
        for s in batch {
            self.check_input(s.features.len())?;
            if s.target.len() != self.output_dim() {
                return Err(LearnerError::DimensionMismatch { expected: self.output_dim(), got: s.target.len() });
            }
            x.extend_from_slice(&s.features);
            t.extend_from_slice(&s.target);
        }
        Ok((x, t))
    }

    /// `-sum_rows sum_a target(a) * log p(a)`; zero-target actions contribute nothing.
    pub fn kl_loss(&self, batch: &[Sample]) -> Result<f64, LearnerError> {
        let (x, t) = self.flatten_batch(batch)?;
        let cache = self.forward_cached(&x, batch.len());
        cross_entropy(&cache.logits, &t, self.output_dim())
    }

    /// Ascent direction `sum_rows sum_a target(a) * grad log p(a)` and the loss at the current parameters.
    pub fn policy_gradient(&self, batch: &[Sample]) -> Result<(Gradient, f64), LearnerError> {
        let (x, t) = self.flatten_batch(batch)?;
        let rows = batch.len();
        let a = self.output_dim();
        let cache = self.forward_cached(&x, rows);
        let loss = cross_entropy(&cache.logits, &t, a)?;

        // d/dz of sum_a t_a log softmax(z)_a = t - (sum t) p
        let mut dz = vec![0.0; rows * a];
        for r in 0..rows {
            let z = &cache.logits[r * a..(r + 1) * a];
            let p = softmax(z);
            let tr = &t[r * a..(r + 1) * a];
            let mass: f64 = tr.iter().sum();
            for k in 0..a {
                dz[r * a + k] = tr[k] - mass * p[k];
            }
        }
        Ok((self.backprop(&cache, &dz, rows), loss))
    }

    fn backprop(&self, cache: &ForwardCache, dlogits: &[f64], rows: usize) -> Gradient {
        let mut grad = Gradient::zeros_like(self);
        let nt = grad.tensors.len();
        let (ow, ob) = grad.tensors.split_at_mut(nt - 1);
        let mut dact = self.output.backward(&cache.last, dlogits, rows, &mut ow[nt - 2], &mut ob[0]);

        let mut ti = nt - 2;
        for (h, lc) in self.hidden.iter().zip(&cache.layers).rev() {
            let n = h.dense.n_out;
            let mut dy = dact;
            for (d, &y) in dy.iter_mut().zip(&lc.pre) {
                if y <= 0.0 {
                    *d *= self.slope;
                }
            }
            let dz = match &h.norm {
                Some(norm) => {
                    ti -= 2;
                    let (lo, hi) = grad.tensors.split_at_mut(ti + 1);
                    let (dgamma, dbeta) = (&mut lo[ti], &mut hi[0]);
                    let mut dz = dy;
                    for (k, v) in dz.iter_mut().enumerate() {
                        let j = k % n;
                        dgamma[j] += *v * lc.nhat[k];
                        dbeta[j] += *v;
                        *v *= norm.gamma[j] / (norm.var[j] + self.eps).sqrt();
                    }
                    dz
                }
                None => dy,
            };
            ti -= 2;
            let (lo, hi) = grad.tensors.split_at_mut(ti + 1);
            dact = h.dense.backward(&lc.input, &dz, rows, &mut lo[ti], &mut hi[0]);
        }
        grad
    }

    /// Refreshes normalization running statistics from a batch (needs >= 2 rows).
    pub fn update_running_stats(&mut self, inputs: &[Vec<f64>]) -> Result<(), LearnerError> {
        let rows = inputs.len();
        if rows < 2 || self.hidden.iter().all(|h| h.norm.is_none()) {
            return Ok(());
        }
        let mut cur: Vec<f64> = Vec::with_capacity(rows * self.input_dim());
        for f in inputs {
            self.check_input(f.len())?;
            cur.extend_from_slice(f);
        }
        let (momentum, eps, slope) = (self.momentum, self.eps, self.slope);
        for h in &mut self.hidden {
            let mut z = Vec::new();
            h.dense.forward(&cur, rows, &mut z);
            let n = h.dense.n_out;
            if let Some(norm) = &mut h.norm {
                for j in 0..n {
                    let mean = (0..rows).map(|r| z[r * n + j]).sum::<f64>() / rows as f64;
                    let var = (0..rows).map(|r| (z[r * n + j] - mean).powi(2)).sum::<f64>() / (rows - 1) as f64;
                    norm.mean[j] = (1.0 - momentum) * norm.mean[j] + momentum * mean;
                    norm.var[j] = (1.0 - momentum) * norm.var[j] + momentum * var;
                }
                for (k, v) in z.iter_mut().enumerate() {
                    let j = k % n;
                    *v = norm.gamma[j] * (*v - norm.mean[j]) / (norm.var[j] + eps).sqrt() + norm.beta[j];
                }
            }
            cur = z.into_iter().map(|y| if y > 0.0 { y } else { slope * y }).collect();
        }
        Ok(())
    }
}

fn cross_entropy(logits: &[f64], targets: &[f64], a: usize) -> Result<f64, LearnerError> {
    let mut loss = 0.0;
    for (z, t) in logits.chunks(a).zip(targets.chunks(a)) {
        let lse = log_sum_exp(z);
        for (&zk, &tk) in z.iter().zip(t) {
            if tk != 0.0 {
                loss -= tk * (zk - lse).max(LOG_CLAMP);
            }
        }
    }
    if !loss.is_finite() {
        return Err(LearnerError::NonFiniteLoss(loss));
    }
    Ok(loss)
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Softmax at `temperature` restricted to `mask`; masked-out entries are exactly 0.
pub fn masked_softmax(z: &[f64], mask: &[bool], temperature: f64) -> Vec<f64> {
    let m = z
        .iter()
        .zip(mask)
        .filter(|(_, &ok)| ok)
        .map(|(&v, _)| v)
        .fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z
        .iter()
        .zip(mask)
        .map(|(&v, &ok)| if ok { ((v - m) / temperature).exp() } else { 0.0 })
        .collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Index of the largest value among `mask`-true entries (ties: lowest index).
pub fn masked_argmax(values: &[f64], mask: &[bool]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, (&v, &ok)) in values.iter().zip(mask).enumerate() {
        if ok && best.map_or(true, |b| v > values[b]) {
            best = Some(i);
        }
    }
    best
}

/// Parameter update rule. `Sgd` is the plain `theta + lr * grad` ascent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn adam() -> Self {
        OptimizerKind::Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        Optimizer { kind, lr, m: Vec::new(), v: Vec::new(), t: 0 }
    }

    /// Moves parameters along the ascent direction `grad`.
    pub fn ascend(&mut self, net: &mut PolicyNetwork, grad: &Gradient) {
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in net.tensors_mut().into_iter().zip(&grad.tensors) {
                    for (x, d) in p.iter_mut().zip(g) {
                        *x += self.lr * d;
                    }
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                if self.m.is_empty() {
                    self.m = grad.tensors.iter().map(|t| vec![0.0; t.len()]).collect();
                    self.v = self.m.clone();
                }
                self.t += 1;
                let c1 = 1.0 - beta1.powi(self.t);
                let c2 = 1.0 - beta2.powi(self.t);
                for (((p, g), m), v) in net.tensors_mut().into_iter().zip(&grad.tensors).zip(&mut self.m).zip(&mut self.v) {
                    for k in 0..p.len() {
                        m[k] = beta1 * m[k] + (1.0 - beta1) * g[k];
                        v[k] = beta2 * v[k] + (1.0 - beta2) * g[k] * g[k];
                        p[k] += self.lr * (m[k] / c1) / ((v[k] / c2).sqrt() + eps);
                    }
                }
            }
        }
    }
}
