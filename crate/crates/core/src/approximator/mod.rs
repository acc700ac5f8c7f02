//! Small recurrent actor-critic with exact hand-written gradients.
//!
//! ```text
//! x  = [obs ; onehot(z)]
//! a  = tanh(W1 x + b1)
//! u  = sigmoid(Wu a + Uu h + bu)          update gate
//! r  = sigmoid(Wr a + Ur h + br)          reset gate
//! n  = tanh(Wn a + r * (Un h) + bn)       candidate
//! h' = (1 - u) * n + u * h
//! logits = P h' + p,  value = v . h' + c
//! ```
//!
//! One parameter vector may hold several recurrent cells and heads sharing a
//! trunk (used by population ablations); a `member` index selects the stack.
//! Gradients are truncated at the incoming hidden state: training replays a
//! single step from a stored hidden snapshot.

mod adam;
mod batch;
mod dist;
mod gradcheck;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use adam::{clip_grad_norm, round_to_f32, Adam, AdamConfig};
pub use batch::{BatchCache, BatchInput, BatchOutput};
pub use dist::{entropy, log_softmax, logprob_entropy, sample_action, softmax, SampleMode};
pub use gradcheck::finite_diff_check;

/// Named slice of a flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layer {
    pub name: String,
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Layer {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

pub(crate) fn build_layers(spec: &[(String, usize, usize)]) -> Vec<Layer> {
    let mut offset = 0;
    spec.iter()
        .map(|(name, rows, cols)| {
            let l = Layer { name: name.clone(), offset, rows: *rows, cols: *cols };
            offset += rows * cols;
            l
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PolicyShape {
    pub obs_dim: usize,
    /// Size of the one-hot behavior latent; 0 for policies without one.
    pub latent_dim: usize,
    pub hidden: usize,
    pub recurrent: usize,
    pub actions: usize,
    /// Number of members (action/value heads) sharing the trunk.
    pub heads: usize,
    /// All heads read from a single recurrent cell when true; otherwise
    /// every head owns its own cell.
    pub shared_recurrent: bool,
}

impl PolicyShape {
    pub fn new(obs_dim: usize, latent_dim: usize, actions: usize) -> Self {
        Self {
            obs_dim,
            latent_dim,
            hidden: 64,
            recurrent: 64,
            actions,
            heads: 1,
            shared_recurrent: true,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.obs_dim + self.latent_dim
    }

    pub fn num_recurrent(&self) -> usize {
        if self.shared_recurrent {
            1
        } else {
            self.heads
        }
    }

    pub fn layers(&self) -> Vec<Layer> {
        let (h, g, a) = (self.hidden, self.recurrent, self.actions);
        let mut spec = vec![
            ("trunk.w".to_string(), h, self.input_dim()),
            ("trunk.b".to_string(), h, 1),
        ];
        for r in 0..self.num_recurrent() {
            spec.push((format!("gru{r}.wx"), 3 * g, h));
            spec.push((format!("gru{r}.wh"), 3 * g, g));
            spec.push((format!("gru{r}.b"), 3 * g, 1));
        }
        for m in 0..self.heads {
            spec.push((format!("head{m}.pi_w"), a, g));
            spec.push((format!("head{m}.pi_b"), a, 1));
            spec.push((format!("head{m}.v_w"), 1, g));
            spec.push((format!("head{m}.v_b"), 1, 1));
        }
        build_layers(&spec)
    }

    pub fn param_count(&self) -> usize {
        let (h, g, a) = (self.hidden, self.recurrent, self.actions);
        h * self.input_dim() + h + self.num_recurrent() * (3 * g * h + 3 * g * g + 3 * g) + self.heads * (a * g + a + g + 1)
    }
}

/// Offsets of one recurrent cell and one head inside the flat vector.
#[derive(Debug, Clone, Copy)]
struct StackOffsets {
    wx: usize,
    wh: usize,
    b: usize,
    pi_w: usize,
    pi_b: usize,
    v_w: usize,
    v_b: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub shape: PolicyShape,
    pub layers: Vec<Layer>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyOutput {
    pub logits: Vec<f64>,
    pub value: f64,
    pub next_hidden: Vec<f64>,
}

/// Activations kept from a forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    member: usize,
    latent: Option<usize>,
    obs: Vec<f64>,
    a: Vec<f64>,
    h: Vec<f64>,
    u: Vec<f64>,
    r: Vec<f64>,
    n: Vec<f64>,
    hn: Vec<f64>,
    h_new: Vec<f64>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Dot product with four independent accumulators, which lets the
/// compiler keep several multiply-adds in flight.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `out += W x` for a row-major `rows x cols` matrix.
#[inline]
fn matvec_add(w: &[f64], cols: usize, x: &[f64], out: &mut [f64]) {
    for (row, o) in w.chunks_exact(cols).zip(out.iter_mut()) {
        *o += dot(row, x);
    }
}

/// `out += W^T d`.
#[inline]
fn matvec_t_add(w: &[f64], cols: usize, d: &[f64], out: &mut [f64]) {
    for (row, &di) in w.chunks_exact(cols).zip(d) {
        if di != 0.0 {
            for (o, &wij) in out.iter_mut().zip(row) {
                *o += wij * di;
            }
        }
    }
}

/// `G += d x^T`.
#[inline]
fn outer_add(g: &mut [f64], cols: usize, d: &[f64], x: &[f64]) {
    for (row, &di) in g.chunks_exact_mut(cols).zip(d) {
        if di != 0.0 {
            for (gij, &xj) in row.iter_mut().zip(x) {
                *gij += di * xj;
            }
        }
    }
}

impl PolicyParams {
    pub fn zeros(shape: PolicyShape) -> Self {
        let layers = shape.layers();
        Self { shape, data: vec![0.0; shape.param_count()], layers }
    }

    /// Gaussian init scaled by 1/sqrt(fan_in); output heads at 1/100 of that.
    /// Values are rounded to f32 so checkpoints are lossless.
    pub fn init<R: Rng>(shape: PolicyShape, rng: &mut R) -> Self {
        let mut p = Self::zeros(shape);
        for layer in p.layers.clone() {
            if layer.cols == 1 {
                continue; // biases start at zero
            }
            let head = layer.name.contains(".pi_w") || layer.name.contains(".v_w");
            let scale = if head { 0.01 } else { 1.0 } / (layer.cols as f64).sqrt();
            for x in &mut p.data[layer.range()] {
                let s: f64 = StandardNormal.sample(rng);
                *x = s * scale;
            }
        }
        round_to_f32(&mut p.data);
        p
    }

    pub fn from_data(shape: PolicyShape, data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.param_count() {
            return Err(Error::InputLength { expected: shape.param_count(), got: data.len() });
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("policy parameters".into()));
        }
        Ok(Self { layers: shape.layers(), shape, data })
    }

    pub fn zero_hidden(&self) -> Vec<f64> {
        vec![0.0; self.shape.recurrent]
    }

    fn trunk(&self) -> (usize, usize) {
        (self.layers[0].offset, self.layers[1].offset)
    }

    fn stack(&self, member: usize) -> StackOffsets {
        let rec = if self.shape.shared_recurrent { 0 } else { member };
        let nrec = self.shape.num_recurrent();
        let r = 2 + 3 * rec;
        let hd = 2 + 3 * nrec + 4 * member;
        StackOffsets {
            wx: self.layers[r].offset,
            wh: self.layers[r + 1].offset,
            b: self.layers[r + 2].offset,
            pi_w: self.layers[hd].offset,
            pi_b: self.layers[hd + 1].offset,
            v_w: self.layers[hd + 2].offset,
            v_b: self.layers[hd + 3].offset,
        }
    }

    fn check_inputs(&self, obs: &[f64], latent: Option<usize>, member: usize, hidden: &[f64]) -> Result<()> {
        let s = &self.shape;
        if obs.len() != s.obs_dim {
            return Err(Error::InputLength { expected: s.obs_dim, got: obs.len() });
        }
        if hidden.len() != s.recurrent {
            return Err(Error::InputLength { expected: s.recurrent, got: hidden.len() });
        }
        match latent {
            Some(z) if z >= s.latent_dim => return Err(Error::LatentOutOfRange { z, k: s.latent_dim }),
            None if s.latent_dim > 0 => {
                return Err(Error::LatentOutOfRange { z: usize::MAX, k: s.latent_dim })
            }
            _ => {}
        }
        if member >= s.heads {
            return Err(Error::InvalidState(format!("member {member} >= heads {}", s.heads)));
        }
        Ok(())
    }

    pub fn forward(&self, obs: &[f64], latent: Option<usize>, member: usize, hidden: &[f64]) -> Result<PolicyOutput> {
        self.forward_cached(obs, latent, member, hidden).map(|(o, _)| o)
    }

    pub fn forward_cached(
        &self,
        obs: &[f64],
        latent: Option<usize>,
        member: usize,
        hidden: &[f64],
    ) -> Result<(PolicyOutput, ForwardCache)> {
        self.check_inputs(obs, latent, member, hidden)?;
        let s = &self.shape;
        let (hsz, g, na) = (s.hidden, s.recurrent, s.actions);
        let d = &self.data;
        let in_dim = s.input_dim();
        let (w1, b1) = self.trunk();

        let mut a = d[b1..b1 + hsz].to_vec();
        for (i, ai) in a.iter_mut().enumerate() {
            let row = &d[w1 + i * in_dim..w1 + (i + 1) * in_dim];
            let mut acc = dot(&row[..s.obs_dim], obs);
            if let Some(z) = latent {
                acc += row[s.obs_dim + z];
            }
            *ai = (*ai + acc).tanh();
        }

        let o = self.stack(member);
        let mut gx = d[o.b..o.b + 3 * g].to_vec();
        matvec_add(&d[o.wx..o.wx + 3 * g * hsz], hsz, &a, &mut gx);
        let mut gh = vec![0.0; 3 * g];
        matvec_add(&d[o.wh..o.wh + 3 * g * g], g, hidden, &mut gh);

        let mut u = vec![0.0; g];
        let mut r = vec![0.0; g];
        let mut n = vec![0.0; g];
        let mut h_new = vec![0.0; g];
        let hn = gh[2 * g..].to_vec();
        for k in 0..g {
            u[k] = sigmoid(gx[k] + gh[k]);
            r[k] = sigmoid(gx[g + k] + gh[g + k]);
            n[k] = (gx[2 * g + k] + r[k] * hn[k]).tanh();
            h_new[k] = (1.0 - u[k]) * n[k] + u[k] * hidden[k];
        }

        let mut logits = d[o.pi_b..o.pi_b + na].to_vec();
        matvec_add(&d[o.pi_w..o.pi_w + na * g], g, &h_new, &mut logits);
        let value = d[o.v_b] + dot(&d[o.v_w..o.v_w + g], &h_new);

        let out = PolicyOutput { logits, value, next_hidden: h_new.clone() };
        let cache = ForwardCache {
            member,
            latent,
            obs: obs.to_vec(),
            a,
            h: hidden.to_vec(),
            u,
            r,
            n,
            hn,
            h_new,
        };
        Ok((out, cache))
    }

    /// Accumulates `dL/dθ` into `grad` given upstream gradients on the
    /// logits and the value.
    pub fn backward(&self, cache: &ForwardCache, dlogits: &[f64], dvalue: f64, grad: &mut [f64]) {
        let s = &self.shape;
        let (hsz, g, na) = (s.hidden, s.recurrent, s.actions);
        let d = &self.data;
        let o = self.stack(cache.member);

        // heads
        outer_add(&mut grad[o.pi_w..o.pi_w + na * g], g, dlogits, &cache.h_new);
        for (gb, &dl) in grad[o.pi_b..o.pi_b + na].iter_mut().zip(dlogits) {
            *gb += dl;
        }
        for (gw, &hk) in grad[o.v_w..o.v_w + g].iter_mut().zip(&cache.h_new) {
            *gw += dvalue * hk;
        }
        grad[o.v_b] += dvalue;

        let mut dh = vec![0.0; g];
        matvec_t_add(&d[o.pi_w..o.pi_w + na * g], g, dlogits, &mut dh);
        for (x, &w) in dh.iter_mut().zip(&d[o.v_w..o.v_w + g]) {
            *x += dvalue * w;
        }

        // recurrent cell
        let mut dgx = vec![0.0; 3 * g];
        let mut dgh = vec![0.0; 3 * g];
        for k in 0..g {
            let (u, r, n) = (cache.u[k], cache.r[k], cache.n[k]);
            let dn = dh[k] * (1.0 - u);
            let du = dh[k] * (cache.h[k] - n);
            let dgn = dn * (1.0 - n * n);
            let dgu = du * u * (1.0 - u);
            let dr = dgn * cache.hn[k];
            let dgr = dr * r * (1.0 - r);
            dgx[k] = dgu;
            dgx[g + k] = dgr;
            dgx[2 * g + k] = dgn;
            dgh[k] = dgu;
            dgh[g + k] = dgr;
            dgh[2 * g + k] = dgn * r;
        }
        outer_add(&mut grad[o.wx..o.wx + 3 * g * hsz], hsz, &dgx, &cache.a);
        outer_add(&mut grad[o.wh..o.wh + 3 * g * g], g, &dgh, &cache.h);
        for (gb, &x) in grad[o.b..o.b + 3 * g].iter_mut().zip(&dgx) {
            *gb += x;
        }

        // trunk
        let mut da = vec![0.0; hsz];
        matvec_t_add(&d[o.wx..o.wx + 3 * g * hsz], hsz, &dgx, &mut da);
        let (w1, b1) = self.trunk();
        let in_dim = s.input_dim();
        for i in 0..hsz {
            let dpre = da[i] * (1.0 - cache.a[i] * cache.a[i]);
            if dpre == 0.0 {
                continue;
            }
            grad[b1 + i] += dpre;
            let row = &mut grad[w1 + i * in_dim..w1 + (i + 1) * in_dim];
            for (gw, &x) in row[..s.obs_dim].iter_mut().zip(&cache.obs) {
                *gw += dpre * x;
            }
            if let Some(z) = cache.latent {
                row[s.obs_dim + z] += dpre;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

#[cfg(test)]
mod tests;
