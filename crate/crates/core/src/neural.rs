//! Small fully connected networks with hand-written backpropagation.
//!
//! Everything is `f64` and row-major. Parameters of a network live in one flat
//! vector (per layer: weights `out x in`, then biases), which keeps the
//! optimizer and the checkpoint format trivial.

use std::io::{Read, Write};
use std::path::Path;

use matrixmultiply::dgemm;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::mdp::SimRng;

/// Multilayer perceptron: rectifier on hidden layers, identity on the output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    params: Vec<f64>,
    /// `(weight offset, bias offset)` per layer.
    offsets: Vec<(usize, usize)>,
}

/// Activations of a batched forward pass, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct MlpCache {
    pub batch: usize,
    /// `acts[0]` is the input, `acts[l]` the output of layer `l`.
    pub acts: Vec<Vec<f64>>,
}

impl MlpCache {
    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("at least the input")
    }

    /// Output of the last hidden layer (the input for a zero-hidden-layer net).
    pub fn last_hidden(&self) -> &[f64] {
        &self.acts[self.acts.len() - 2]
    }
}

fn layout(sizes: &[usize]) -> (Vec<(usize, usize)>, usize) {
    let mut offsets = Vec::with_capacity(sizes.len() - 1);
    let mut o = 0;
    for w in sizes.windows(2) {
        let wo = o;
        o += w[0] * w[1];
        offsets.push((wo, o));
        o += w[1];
    }
    (offsets, o)
}

/// `c (m x n) = a (m x k) * b (k x n) + beta * c`, all row-major unless strides say otherwise.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], rsa: isize, csa: isize, b: &[f64], rsb: isize, csb: isize, beta: f64, c: &mut [f64]) {
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: the callers pass slices sized for the stated shapes and strides.
    unsafe {
        dgemm(m, k, n, 1.0, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta, c.as_mut_ptr(), n as isize, 1);
    }
}

impl Mlp {
    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(invalid(format!("invalid layer sizes {sizes:?}")));
        }
        let (offsets, n) = layout(sizes);
        Ok(Self {
            sizes: sizes.to_vec(),
            params: vec![0.0; n],
            offsets,
        })
    }

    /// Uniform fan-in initialisation `U(-sqrt(6/fan_in), sqrt(6/fan_in))`, zero biases.
    pub fn new(sizes: &[usize], rng: &mut SimRng) -> Result<Self> {
        let mut net = Self::zeros(sizes)?;
        for l in 0..net.num_layers() {
            let fan_in = net.sizes[l];
            let bound = (6.0 / fan_in as f64).sqrt();
            let (wo, bo) = net.offsets[l];
            for p in &mut net.params[wo..bo] {
                *p = rng.random_range(-bound..bound);
            }
        }
        Ok(net)
    }

    pub fn from_params(sizes: &[usize], params: Vec<f64>) -> Result<Self> {
        let mut net = Self::zeros(sizes)?;
        if params.len() != net.params.len() {
            return Err(invalid(format!("expected {} parameters, got {}", net.params.len(), params.len())));
        }
        net.params = params;
        Ok(net)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn num_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().expect("non-empty")
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// Weights of layer `l` as a row-major `out x in` slice.
    pub fn weights(&self, l: usize) -> &[f64] {
        let (wo, bo) = self.offsets[l];
        &self.params[wo..bo]
    }

    pub fn biases(&self, l: usize) -> &[f64] {
        let (_, bo) = self.offsets[l];
        &self.params[bo..bo + self.sizes[l + 1]]
    }

    pub fn forward_batch(&self, input: &[f64], batch: usize) -> Result<MlpCache> {
        if input.len() != batch * self.input_dim() {
            return Err(invalid(format!(
                "input has {} values, expected {} x {}",
                input.len(),
                batch,
                self.input_dim()
            )));
        }
        let mut acts = Vec::with_capacity(self.sizes.len());
        acts.push(input.to_vec());
        for l in 0..self.num_layers() {
            let (din, dout) = (self.sizes[l], self.sizes[l + 1]);
            let b = self.biases(l);
            let mut z = Vec::with_capacity(batch * dout);
            for _ in 0..batch {
                z.extend_from_slice(b);
            }
            let x = acts.last().expect("non-empty");
            // z += x (B x in) * W^T (in x out)
            gemm(batch, din, dout, x, din as isize, 1, self.weights(l), 1, din as isize, 1.0, &mut z);
            if l + 1 < self.num_layers() {
                z.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            acts.push(z);
        }
        Ok(MlpCache { batch, acts })
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_batch(input, 1)?.acts.pop().expect("output"))
    }

    /// Reverse accumulation from `d loss / d output`. Returns parameter
    /// gradients (same layout as `params`) and, if asked, `d loss / d input`.
    pub fn backward(&self, cache: &MlpCache, grad_output: &[f64], want_input_grad: bool) -> (Vec<f64>, Option<Vec<f64>>) {
        let batch = cache.batch;
        let mut grads = vec![0.0; self.params.len()];
        let mut delta = grad_output.to_vec();
        for l in (0..self.num_layers()).rev() {
            let (din, dout) = (self.sizes[l], self.sizes[l + 1]);
            let (wo, bo) = self.offsets[l];
            let x = &cache.acts[l];
            // dW (out x in) = delta^T (out x B) * x (B x in)
            gemm(dout, batch, din, &delta, 1, dout as isize, x, din as isize, 1, 0.0, &mut grads[wo..bo]);
            let gb = &mut grads[bo..bo + dout];
            for row in delta.chunks(dout) {
                gb.iter_mut().zip(row).for_each(|(g, d)| *g += d);
            }
            if l == 0 && !want_input_grad {
                return (grads, None);
            }
            // dx (B x in) = delta (B x out) * W (out x in)
            let mut dx = vec![0.0; batch * din];
            gemm(batch, dout, din, &delta, dout as isize, 1, self.weights(l), din as isize, 1, 0.0, &mut dx);
            if l > 0 {
                // Through the rectifier of the previous layer.
                dx.iter_mut().zip(x).for_each(|(d, &a)| {
                    if a <= 0.0 {
                        *d = 0.0
                    }
                });
            }
            delta = dx;
        }
        (grads, Some(delta))
    }
}

/// Adam or plain gradient descent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, num_params: usize) -> Self {
        Self {
            kind,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            t: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        if params.len() != grad.len() || grad.len() != self.m.len() {
            return Err(invalid("optimizer state, parameters and gradient differ in size"));
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("gradient".into()));
        }
        self.t += 1;
        match self.kind {
            OptimizerKind::Sgd => params.iter_mut().zip(grad).for_each(|(p, g)| *p -= self.lr * g),
            OptimizerKind::Adam => {
                let c1 = 1.0 - self.beta1.powi(self.t as i32);
                let c2 = 1.0 - self.beta2.powi(self.t as i32);
                for i in 0..params.len() {
                    let g = grad[i];
                    self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
                    self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
                    let mh = self.m[i] / c1;
                    let vh = self.v[i] / c2;
                    params[i] -= self.lr * mh / (vh.sqrt() + self.eps);
                }
            }
        }
        Ok(())
    }
}

/// Q-network with a separate uncertainty head reading the last hidden layer.
///
/// The uncertainty head sees the features as constants: its loss never
/// reaches the Q-network, and the Q loss never reaches the head.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoHeadNet {
    q: Mlp,
    w: Mlp,
}

/// Single-state output of [`TwoHeadNet::forward`].
#[derive(Debug, Clone, PartialEq)]
pub struct HeadsOutput {
    pub q: Vec<f64>,
    pub w: Vec<f64>,
    pub phi: Vec<f64>,
}

impl TwoHeadNet {
    /// `hidden` are the Q-network hidden sizes (the last is the feature size);
    /// `w_hidden` the uncertainty head's hidden sizes.
    pub fn new(input_dim: usize, hidden: &[usize], num_actions: usize, w_hidden: &[usize], rng: &mut SimRng) -> Result<Self> {
        let (qs, ws) = Self::shapes(input_dim, hidden, num_actions, w_hidden)?;
        Ok(Self {
            q: Mlp::new(&qs, rng)?,
            w: Mlp::new(&ws, rng)?,
        })
    }

    pub fn zeros(input_dim: usize, hidden: &[usize], num_actions: usize, w_hidden: &[usize]) -> Result<Self> {
        let (qs, ws) = Self::shapes(input_dim, hidden, num_actions, w_hidden)?;
        Ok(Self {
            q: Mlp::zeros(&qs)?,
            w: Mlp::zeros(&ws)?,
        })
    }

    fn shapes(input_dim: usize, hidden: &[usize], num_actions: usize, w_hidden: &[usize]) -> Result<(Vec<usize>, Vec<usize>)> {
        if hidden.is_empty() {
            return Err(invalid("the Q-network needs at least one hidden layer"));
        }
        let mut qs = vec![input_dim];
        qs.extend_from_slice(hidden);
        qs.push(num_actions);
        let mut ws = vec![*hidden.last().expect("non-empty")];
        ws.extend_from_slice(w_hidden);
        ws.push(num_actions);
        Ok((qs, ws))
    }

    pub fn from_parts(q: Mlp, w: Mlp) -> Result<Self> {
        if q.num_layers() < 2 || w.input_dim() != q.sizes()[q.num_layers() - 1] || w.output_dim() != q.output_dim() {
            return Err(invalid("Q-network and uncertainty head do not fit together"));
        }
        Ok(Self { q, w })
    }

    /// Zeroes the uncertainty head's output weights and sets its output biases
    /// to `bias`, so every action starts at `w = bias` with gradient flowing
    /// through the clamp.
    pub fn reset_w_output(&mut self, bias: f64) {
        let l = self.w.num_layers() - 1;
        let (wo, bo) = self.w.offsets[l];
        let n = self.w.output_dim();
        self.w.params[wo..bo].iter_mut().for_each(|p| *p = 0.0);
        self.w.params[bo..bo + n].iter_mut().for_each(|p| *p = bias);
    }

    pub fn q_net(&self) -> &Mlp {
        &self.q
    }

    pub fn w_net(&self) -> &Mlp {
        &self.w
    }

    pub fn q_net_mut(&mut self) -> &mut Mlp {
        &mut self.q
    }

    pub fn w_net_mut(&mut self) -> &mut Mlp {
        &mut self.w
    }

    pub fn input_dim(&self) -> usize {
        self.q.input_dim()
    }

    pub fn num_actions(&self) -> usize {
        self.q.output_dim()
    }

    pub fn feature_dim(&self) -> usize {
        self.w.input_dim()
    }

    /// Frozen deep copy (for target networks).
    pub fn target_copy(&self) -> TwoHeadNet {
        self.clone()
    }

    pub fn forward(&self, input: &[f64]) -> Result<HeadsOutput> {
        let cache = self.q.forward_batch(input, 1)?;
        let phi = cache.last_hidden().to_vec();
        let w = self.w.forward(&phi)?.into_iter().map(|x| x.max(0.0)).collect();
        Ok(HeadsOutput {
            q: cache.output().to_vec(),
            w,
            phi,
        })
    }

    /// Q-values and features for a batch: `(q: B x A, phi: B x d)`.
    pub fn q_and_features(&self, input: &[f64], batch: usize) -> Result<(Vec<f64>, Vec<f64>)> {
        let cache = self.q.forward_batch(input, batch)?;
        Ok((cache.output().to_vec(), cache.last_hidden().to_vec()))
    }

    pub fn q_values(&self, input: &[f64], batch: usize) -> Result<Vec<f64>> {
        let mut cache = self.q.forward_batch(input, batch)?;
        Ok(cache.acts.pop().expect("output"))
    }

    /// Clamped uncertainty outputs for a batch of features.
    pub fn w_values(&self, phi: &[f64], batch: usize) -> Result<Vec<f64>> {
        let mut cache = self.w.forward_batch(phi, batch)?;
        let mut out = cache.acts.pop().expect("output");
        out.iter_mut().for_each(|x| *x = x.max(0.0));
        Ok(out)
    }

    /// Loss `mean_i (q(s_i, a_i) - y_i)^2` and its gradient w.r.t. the Q-network.
    pub fn q_loss_grad(&self, input: &[f64], actions: &[usize], targets: &[f64]) -> Result<(f64, Vec<f64>)> {
        let batch = check_batch(actions, targets, self.num_actions())?;
        let cache = self.q.forward_batch(input, batch)?;
        let (loss, grad_out) = squared_loss(cache.output(), self.num_actions(), actions, targets, |_| true)?;
        Ok((loss, self.q.backward(&cache, &grad_out, false).0))
    }

    /// Loss `mean_i (w(phi_i, a_i) - y_i)^2` with `w = max(raw, 0)`; gradient
    /// w.r.t. the uncertainty head only. `phi` is treated as a constant.
    pub fn w_loss_grad(&self, phi: &[f64], actions: &[usize], targets: &[f64]) -> Result<(f64, Vec<f64>)> {
        let batch = check_batch(actions, targets, self.num_actions())?;
        let cache = self.w.forward_batch(phi, batch)?;
        let raw = cache.output();
        let clamped: Vec<f64> = raw.iter().map(|x| x.max(0.0)).collect();
        let (loss, grad_out) = squared_loss(&clamped, self.num_actions(), actions, targets, |i| raw[i] > 0.0)?;
        Ok((loss, self.w.backward(&cache, &grad_out, false).0))
    }

    pub fn q_step(&mut self, opt: &mut Optimizer, input: &[f64], actions: &[usize], targets: &[f64]) -> Result<f64> {
        let (loss, grad) = self.q_loss_grad(input, actions, targets)?;
        opt.step(self.q.params_mut(), &grad)?;
        Ok(loss)
    }

    pub fn w_step(&mut self, opt: &mut Optimizer, phi: &[f64], actions: &[usize], targets: &[f64]) -> Result<f64> {
        let (loss, grad) = self.w_loss_grad(phi, actions, targets)?;
        opt.step(self.w.params_mut(), &grad)?;
        Ok(loss)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&2u32.to_le_bytes());
        for net in [&self.q, &self.w] {
            out.extend_from_slice(&(net.sizes.len() as u32).to_le_bytes());
            for &s in &net.sizes {
                out.extend_from_slice(&(s as u64).to_le_bytes());
            }
            out.extend_from_slice(&(net.params.len() as u64).to_le_bytes());
            for p in &net.params {
                out.extend_from_slice(&p.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader { bytes, pos: 0 };
        if r.take(MAGIC.len())? != MAGIC {
            return Err(Error::Checkpoint("not a network file".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported network format version {version}")));
        }
        if r.u32()? != 2 {
            return Err(Error::Checkpoint("expected two networks".into()));
        }
        let mut nets = Vec::with_capacity(2);
        for _ in 0..2 {
            let n = r.u32()? as usize;
            if !(2..=64).contains(&n) {
                return Err(Error::Checkpoint(format!("implausible layer count {n}")));
            }
            let sizes = (0..n).map(|_| r.u64().map(|x| x as usize)).collect::<Result<Vec<_>>>()?;
            let count = r.u64()? as usize;
            if count.checked_mul(8).is_none_or(|b| b > bytes.len()) {
                return Err(Error::Checkpoint("truncated parameter block".into()));
            }
            let params = (0..count).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            nets.push(Mlp::from_params(&sizes, params).map_err(|e| Error::Checkpoint(e.to_string()))?);
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes after network data".into()));
        }
        let w = nets.pop().expect("two");
        let q = nets.pop().expect("two");
        Self::from_parts(q, w).map_err(|e| Error::Checkpoint(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}

const MAGIC: &[u8] = b"URBENET\0";
const FORMAT_VERSION: u32 = 1;

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl ByteReader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Checkpoint("unexpected end of network file".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

fn check_batch(actions: &[usize], targets: &[f64], num_actions: usize) -> Result<usize> {
    if actions.len() != targets.len() || actions.is_empty() {
        return Err(invalid("actions and targets must be non-empty and equally long"));
    }
    if let Some(a) = actions.iter().find(|&&a| a >= num_actions) {
        return Err(invalid(format!("action {a} out of range")));
    }
    Ok(actions.len())
}

fn squared_loss(out: &[f64], na: usize, actions: &[usize], targets: &[f64], active: impl Fn(usize) -> bool) -> Result<(f64, Vec<f64>)> {
    let batch = actions.len() as f64;
    let mut grad = vec![0.0; out.len()];
    let mut loss = 0.0;
    for (i, (&a, &y)) in actions.iter().zip(targets).enumerate() {
        let idx = i * na + a;
        let diff = out[idx] - y;
        loss += diff * diff;
        if active(idx) {
            grad[idx] = 2.0 * diff / batch;
        }
    }
    loss /= batch;
    if !loss.is_finite() {
        return Err(Error::NonFinite("loss".into()));
    }
    Ok((loss, grad))
}
