//! A small fully connected network with a softmax policy head and a scalar
//! value head sharing one ReLU trunk, plus exact backpropagation and an
//! RMSProp optimizer whose statistics can be shared between workers.

use std::path::Path;

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simenv::Action;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

/// Input width, hidden widths and number of actions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpShape {
    pub input: usize,
    pub hidden: Vec<usize>,
    pub actions: usize,
}

impl MlpShape {
    pub fn new(input: usize, hidden: &[usize], actions: usize) -> MlpShape {
        MlpShape {
            input,
            hidden: hidden.to_vec(),
            actions,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.input == 0 || self.actions == 0 || self.hidden.contains(&0) {
            return Err(Error::InvalidArgument(format!("invalid layer sizes {self:?}")));
        }
        Ok(())
    }

    /// Dense layers in parameter order: trunk layers, policy head, value head.
    fn layers(&self) -> Vec<Dense> {
        let mut dims = Vec::new();
        let mut prev = self.input;
        for &h in &self.hidden {
            dims.push((prev, h));
            prev = h;
        }
        dims.push((prev, self.actions));
        dims.push((prev, 1));
        let mut off = 0;
        dims.into_iter()
            .map(|(fan_in, fan_out)| {
                let d = Dense {
                    fan_in,
                    fan_out,
                    w: off,
                    b: off + fan_in * fan_out,
                };
                off += fan_in * fan_out + fan_out;
                d
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers().iter().map(|d| d.fan_in * d.fan_out + d.fan_out).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Dense {
    fan_in: usize,
    fan_out: usize,
    /// Offset of the row-major `fan_out × fan_in` weight block.
    w: usize,
    /// Offset of the bias vector.
    b: usize,
}

impl Dense {
    fn forward(&self, params: &[f64], x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        let w = &params[self.w..self.b];
        let b = &params[self.b..self.b + self.fan_out];
        for (o, row) in w.chunks_exact(self.fan_in).enumerate() {
            out.push(b[o] + dot(row, x));
        }
    }

    /// Accumulates parameter gradients for upstream gradient `dy` at input
    /// `x`, and returns the gradient with respect to `x` when asked.
    fn backward(&self, params: &[f64], x: &[f64], dy: &[f64], grads: &mut [f64], want_dx: bool) -> Vec<f64> {
        let mut dx = if want_dx { vec![0.0; self.fan_in] } else { Vec::new() };
        let w = &params[self.w..self.b];
        for o in 0..self.fan_out {
            let g = dy[o];
            if g == 0.0 {
                continue;
            }
            grads[self.b + o] += g;
            let gw = &mut grads[self.w + o * self.fan_in..self.w + (o + 1) * self.fan_in];
            for (gi, xi) in gw.iter_mut().zip(x) {
                *gi += g * xi;
            }
            if want_dx {
                let row = &w[o * self.fan_in..(o + 1) * self.fan_in];
                for (d, wi) in dx.iter_mut().zip(row) {
                    *d += g * wi;
                }
            }
        }
        dx
    }
}

/// Dot product with independent partial sums, which the compiler can
/// vectorize.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    acc.iter().sum::<f64>() + tail
}

/// Shared-trunk actor-critic network. Parameters live in one flat vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    shape: MlpShape,
    layers: Vec<Dense>,
    params: Vec<f64>,
}

/// Activations kept by [`Mlp::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct Cache {
    /// `acts[0]` is the input; `acts[i + 1]` the output of trunk layer `i`.
    acts: Vec<Vec<f64>>,
    log_policy: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub logits: Vec<f64>,
    pub policy: Vec<f64>,
    pub value: f64,
    pub cache: Cache,
}

impl ForwardPass {
    /// Index of the most probable action; ties go to the lowest index.
    pub fn greedy(&self) -> Action {
        Action(argmax(&self.logits))
    }
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

impl Mlp {
    /// He-uniform weights for the trunk (variance `2/fan_in`), small
    /// weights for the heads, zero biases.
    pub fn init(shape: &MlpShape, seed: u64) -> Result<Mlp> {
        shape.validate()?;
        let layers = shape.layers();
        let mut params = vec![0.0; shape.param_count()];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let trunk = shape.hidden.len();
        for (i, d) in layers.iter().enumerate() {
            let variance = if i < trunk {
                2.0 / d.fan_in as f64
            } else if i == trunk {
                // near-uniform initial policy
                0.01 / d.fan_in as f64
            } else {
                1.0 / d.fan_in as f64
            };
            let a = (3.0 * variance).sqrt();
            let dist = Uniform::new_inclusive(-a, a);
            for w in &mut params[d.w..d.b] {
                *w = dist.sample(&mut rng);
            }
        }
        Ok(Mlp {
            shape: shape.clone(),
            layers,
            params,
        })
    }

    /// Builds a network from an existing flat parameter vector.
    pub fn from_params(shape: &MlpShape, params: Vec<f64>) -> Result<Mlp> {
        shape.validate()?;
        if params.len() != shape.param_count() {
            return Err(Error::ShapeMismatch {
                expected: shape.param_count(),
                got: params.len(),
            });
        }
        Ok(Mlp {
            layers: shape.layers(),
            shape: shape.clone(),
            params,
        })
    }

    pub fn shape(&self) -> &MlpShape {
        &self.shape
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Weights of dense layer `index` (trunk layers first, then the policy
    /// head, then the value head) as a flat row-major slice.
    pub fn layer_weights(&self, index: usize) -> &[f64] {
        let d = self.layers[index];
        &self.params[d.w..d.b]
    }

    pub fn layer_biases(&self, index: usize) -> &[f64] {
        let d = self.layers[index];
        &self.params[d.b..d.b + d.fan_out]
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    pub fn forward(&self, obs: &[f64]) -> Result<ForwardPass> {
        if obs.len() != self.shape.input {
            return Err(Error::ShapeMismatch {
                expected: self.shape.input,
                got: obs.len(),
            });
        }
        let trunk = self.shape.hidden.len();
        let mut acts = Vec::with_capacity(trunk + 1);
        acts.push(obs.to_vec());
        for d in &self.layers[..trunk] {
            let mut out = Vec::with_capacity(d.fan_out);
            d.forward(&self.params, acts.last().expect("input"), &mut out);
            for v in &mut out {
                *v = v.max(0.0);
            }
            acts.push(out);
        }
        let h = acts.last().expect("trunk output");
        let mut logits = Vec::with_capacity(self.shape.actions);
        self.layers[trunk].forward(&self.params, h, &mut logits);
        let mut value = Vec::with_capacity(1);
        self.layers[trunk + 1].forward(&self.params, h, &mut value);

        let log_policy = log_softmax(&logits);
        let policy = log_policy.iter().map(|&lp| lp.exp().max(f64::MIN_POSITIVE)).collect();
        Ok(ForwardPass {
            logits,
            policy,
            value: value[0],
            cache: Cache { acts, log_policy },
        })
    }

    /// Smallest magnitude among the hidden pre-activations at `obs`; a
    /// distance to the nearest ReLU kink.
    pub fn kink_margin(&self, obs: &[f64]) -> f64 {
        let trunk = self.shape.hidden.len();
        let mut x = obs.to_vec();
        let mut margin = f64::INFINITY;
        let mut out = Vec::new();
        for d in &self.layers[..trunk] {
            d.forward(&self.params, &x, &mut out);
            margin = out.iter().fold(margin, |m, v| m.min(v.abs()));
            x = out.iter().map(|v| v.max(0.0)).collect();
        }
        margin
    }

    /// Backpropagates arbitrary upstream gradients on the logits and the
    /// value output.
    pub fn backward_raw(&self, cache: &Cache, dlogits: &[f64], dvalue: f64) -> Gradients {
        let mut g = Gradients::zeros(self.params.len());
        self.backward_raw_into(cache, dlogits, dvalue, &mut g);
        g
    }

    /// As [`Mlp::backward_raw`], adding into `grads`.
    pub fn backward_raw_into(&self, cache: &Cache, dlogits: &[f64], dvalue: f64, grads: &mut Gradients) {
        let g = &mut grads.data;
        let trunk = self.shape.hidden.len();
        let h = &cache.acts[trunk];
        let mut dh = self.layers[trunk].backward(&self.params, h, dlogits, g, true);
        let dv = self.layers[trunk + 1].backward(&self.params, h, &[dvalue], g, true);
        for (a, b) in dh.iter_mut().zip(&dv) {
            *a += b;
        }
        for i in (0..trunk).rev() {
            // ReLU: output > 0 exactly where the pre-activation was positive
            for (d, &a) in dh.iter_mut().zip(&cache.acts[i + 1]) {
                if a <= 0.0 {
                    *d = 0.0;
                }
            }
            dh = self.layers[i].backward(&self.params, &cache.acts[i], &dh, g, i > 0);
        }
    }

    /// Gradient of `−log π(a|s)·A − β·H(π) + ½(target − V(s))²` with the
    /// advantage held constant.
    pub fn backward(
        &self,
        cache: &Cache,
        action: Action,
        advantage: f64,
        value_target: f64,
        entropy_coeff: f64,
    ) -> Result<Gradients> {
        let mut g = Gradients::zeros(self.params.len());
        self.backward_into(cache, action, advantage, value_target, entropy_coeff, &mut g)?;
        Ok(g)
    }

    /// As [`Mlp::backward`], adding into `grads`.
    pub fn backward_into(
        &self,
        cache: &Cache,
        action: Action,
        advantage: f64,
        value_target: f64,
        entropy_coeff: f64,
        grads: &mut Gradients,
    ) -> Result<()> {
        let n = self.shape.actions;
        if action.0 >= n {
            return Err(Error::ActionOutOfRange { action: action.0, n });
        }
        let logp = &cache.log_policy;
        let p: Vec<f64> = logp.iter().map(|l| l.exp()).collect();
        let entropy: f64 = -p.iter().zip(logp).map(|(p, l)| p * l).sum::<f64>();
        let dlogits: Vec<f64> = (0..n)
            .map(|j| {
                let onehot = if j == action.0 { 1.0 } else { 0.0 };
                advantage * (p[j] - onehot) + entropy_coeff * p[j] * (logp[j] + entropy)
            })
            .collect();
        let trunk = self.shape.hidden.len();
        let value = {
            let d = self.layers[trunk + 1];
            let h = &cache.acts[trunk];
            self.params[d.b] + self.params[d.w..d.b].iter().zip(h).map(|(w, x)| w * x).sum::<f64>()
        };
        self.backward_raw_into(cache, &dlogits, value - value_target, grads);
        Ok(())
    }
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    logits.iter().map(|l| l - lse).collect()
}

/// Entropy of a probability vector.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&x| x > 0.0).map(|x| x * x.ln()).sum::<f64>()
}

/// Parameter gradients, laid out like [`Mlp::params`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub data: Vec<f64>,
}

impl Gradients {
    pub fn zeros(len: usize) -> Gradients {
        Gradients { data: vec![0.0; len] }
    }

    pub fn add(&mut self, other: &Gradients) {
        assert_eq!(self.data.len(), other.data.len(), "gradient shapes differ");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, k: f64) {
        for a in &mut self.data {
            *a *= k;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|g| g.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, g| m.max(g.abs()))
    }
}

/// RMSProp state: `g² ← ρg² + (1−ρ)grad²`, `θ ← θ − α·grad/√(g²+ε)`.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimState {
    pub sq_avg: Vec<f64>,
    pub decay: f64,
    pub lr: f64,
    pub eps: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimConfig {
    pub lr: f64,
    pub decay: f64,
    pub eps: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            lr: 7e-4,
            decay: 0.99,
            eps: 1e-5,
        }
    }
}

impl OptimState {
    pub fn new(param_count: usize, cfg: &OptimConfig) -> OptimState {
        OptimState {
            sq_avg: vec![0.0; param_count],
            decay: cfg.decay,
            lr: cfg.lr,
            eps: cfg.eps,
        }
    }

    /// Applies one update in place. Non-finite gradients are rejected and
    /// leave both the parameters and the statistics untouched.
    pub fn apply(&mut self, params: &mut [f64], grads: &Gradients) -> Result<()> {
        if params.len() != grads.data.len() || self.sq_avg.len() != params.len() {
            return Err(Error::ShapeMismatch {
                expected: params.len(),
                got: grads.data.len(),
            });
        }
        if !grads.is_finite() {
            return Err(Error::NonFiniteGradient);
        }
        let (rho, lr, eps) = (self.decay, self.lr, self.eps);
        for ((p, s), &g) in params.iter_mut().zip(&mut self.sq_avg).zip(&grads.data) {
            *s = rho * *s + (1.0 - rho) * g * g;
            let denom = (*s + eps).sqrt();
            if denom > 0.0 {
                *p -= lr * g / denom;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointMeta {
    format_version: u32,
    shape: MlpShape,
    /// `[fan_out, fan_in]` of each dense layer in storage order.
    layers: Vec<[usize; 2]>,
    param_count: usize,
}

/// Writes `path` (little-endian f64 parameters) and `path.json` (shape).
pub fn save_checkpoint(mlp: &Mlp, path: &Path) -> Result<()> {
    let mut bytes = Vec::with_capacity(mlp.params.len() * 8);
    for p in &mlp.params {
        bytes.extend_from_slice(&p.to_le_bytes());
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    let meta = CheckpointMeta {
        format_version: CHECKPOINT_FORMAT_VERSION,
        shape: mlp.shape.clone(),
        layers: mlp.layers.iter().map(|d| [d.fan_out, d.fan_in]).collect(),
        param_count: mlp.params.len(),
    };
    let side = sidecar_path(path);
    let text = serde_json::to_string_pretty(&meta).expect("meta serialize");
    std::fs::write(&side, text + "\n").map_err(|e| Error::io(&side, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Mlp> {
    let side = sidecar_path(path);
    let text = std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let meta: CheckpointMeta = serde_json::from_str(&text).map_err(|e| Error::Json {
        path: side.display().to_string(),
        source: e,
    })?;
    if meta.format_version != CHECKPOINT_FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {}",
            meta.format_version
        )));
    }
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() != meta.param_count * 8 {
        return Err(Error::Checkpoint(format!(
            "expected {} bytes, found {}",
            meta.param_count * 8,
            bytes.len()
        )));
    }
    let params = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Mlp::from_params(&meta.shape, params)
}

pub fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    s.into()
}
