//! Minibatch forward/backward for one member stack. Same math as the
//! per-sample path, with the matrix products done as dense GEMMs.

use super::{dot, sigmoid, PolicyParams};
use crate::{Error, Result};

/// `C (m×n) += op(A) · op(B)`, all row-major; `ta`/`tb` read the stored
/// matrix transposed (A stored `k×m`, B stored `n×k`).
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], ta: bool, b: &[f64], tb: bool, c: &mut [f64]) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above bound every index the strides can reach.
    unsafe {
        matrixmultiply::dgemm(m, k, n, 1.0, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, 1.0, c.as_mut_ptr(), n as isize, 1);
    }
}

fn broadcast(bias: &[f64], rows: usize) -> Vec<f64> {
    let mut v = Vec::with_capacity(bias.len() * rows);
    for _ in 0..rows {
        v.extend_from_slice(bias);
    }
    v
}

fn add_column_sums(dst: &mut [f64], m: &[f64], cols: usize) {
    for row in m.chunks_exact(cols) {
        for (d, x) in dst.iter_mut().zip(row) {
            *d += x;
        }
    }
}

/// One sample of a minibatch.
#[derive(Debug, Clone, Copy)]
pub struct BatchInput<'a> {
    pub obs: &'a [f64],
    pub latent: Option<usize>,
    pub hidden: &'a [f64],
}

/// Row-major `B × actions` logits and `B` values.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchOutput {
    pub logits: Vec<f64>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct BatchCache {
    member: usize,
    rows: usize,
    x: Vec<f64>,
    a: Vec<f64>,
    h: Vec<f64>,
    u: Vec<f64>,
    r: Vec<f64>,
    n: Vec<f64>,
    hn: Vec<f64>,
    h_new: Vec<f64>,
}

impl PolicyParams {
    pub fn forward_batch(&self, member: usize, inputs: &[BatchInput]) -> Result<(BatchOutput, BatchCache)> {
        if inputs.is_empty() {
            return Err(Error::Empty("policy minibatch"));
        }
        for i in inputs {
            self.check_inputs(i.obs, i.latent, member, i.hidden)?;
        }
        let s = &self.shape;
        let (hsz, g, na, rows) = (s.hidden, s.recurrent, s.actions, inputs.len());
        let in_dim = s.input_dim();
        let d = &self.data;
        let (w1, b1) = self.trunk();
        let o = self.stack(member);

        let mut x = vec![0.0; rows * in_dim];
        let mut h = Vec::with_capacity(rows * g);
        for (row, i) in x.chunks_exact_mut(in_dim).zip(inputs) {
            row[..s.obs_dim].copy_from_slice(i.obs);
            if let Some(z) = i.latent {
                row[s.obs_dim + z] = 1.0;
            }
            h.extend_from_slice(i.hidden);
        }

        let mut a = broadcast(&d[b1..b1 + hsz], rows);
        gemm(rows, in_dim, hsz, &x, false, &d[w1..w1 + hsz * in_dim], true, &mut a);
        a.iter_mut().for_each(|v| *v = v.tanh());

        let mut gx = broadcast(&d[o.b..o.b + 3 * g], rows);
        gemm(rows, hsz, 3 * g, &a, false, &d[o.wx..o.wx + 3 * g * hsz], true, &mut gx);
        let mut gh = vec![0.0; rows * 3 * g];
        gemm(rows, g, 3 * g, &h, false, &d[o.wh..o.wh + 3 * g * g], true, &mut gh);

        let mut u = vec![0.0; rows * g];
        let mut r = vec![0.0; rows * g];
        let mut n = vec![0.0; rows * g];
        let mut hn = vec![0.0; rows * g];
        let mut h_new = vec![0.0; rows * g];
        for b in 0..rows {
            let (gxb, ghb) = (&gx[b * 3 * g..(b + 1) * 3 * g], &gh[b * 3 * g..(b + 1) * 3 * g]);
            for k in 0..g {
                let i = b * g + k;
                u[i] = sigmoid(gxb[k] + ghb[k]);
                r[i] = sigmoid(gxb[g + k] + ghb[g + k]);
                hn[i] = ghb[2 * g + k];
                n[i] = (gxb[2 * g + k] + r[i] * hn[i]).tanh();
                h_new[i] = (1.0 - u[i]) * n[i] + u[i] * h[i];
            }
        }

        let mut logits = broadcast(&d[o.pi_b..o.pi_b + na], rows);
        gemm(rows, g, na, &h_new, false, &d[o.pi_w..o.pi_w + na * g], true, &mut logits);
        let values = h_new.chunks_exact(g).map(|hb| d[o.v_b] + dot(&d[o.v_w..o.v_w + g], hb)).collect();

        let cache = BatchCache { member, rows, x, a, h, u, r, n, hn, h_new };
        Ok((BatchOutput { logits, values }, cache))
    }

    /// Accumulates `dL/dθ` for the whole minibatch.
    pub fn backward_batch(&self, c: &BatchCache, dlogits: &[f64], dvalues: &[f64], grad: &mut [f64]) {
        let s = &self.shape;
        let (hsz, g, na, rows) = (s.hidden, s.recurrent, s.actions, c.rows);
        let in_dim = s.input_dim();
        let d = &self.data;
        let o = self.stack(c.member);
        assert_eq!(dlogits.len(), rows * na);
        assert_eq!(dvalues.len(), rows);

        gemm(na, rows, g, dlogits, true, &c.h_new, false, &mut grad[o.pi_w..o.pi_w + na * g]);
        add_column_sums(&mut grad[o.pi_b..o.pi_b + na], dlogits, na);
        for (hb, &dv) in c.h_new.chunks_exact(g).zip(dvalues) {
            for (gw, &hk) in grad[o.v_w..o.v_w + g].iter_mut().zip(hb) {
                *gw += dv * hk;
            }
            grad[o.v_b] += dv;
        }

        let mut dh = vec![0.0; rows * g];
        gemm(rows, na, g, dlogits, false, &d[o.pi_w..o.pi_w + na * g], false, &mut dh);
        for (dhb, &dv) in dh.chunks_exact_mut(g).zip(dvalues) {
            for (x, &w) in dhb.iter_mut().zip(&d[o.v_w..o.v_w + g]) {
                *x += dv * w;
            }
        }

        let mut dgx = vec![0.0; rows * 3 * g];
        let mut dgh = vec![0.0; rows * 3 * g];
        for b in 0..rows {
            for k in 0..g {
                let i = b * g + k;
                let (u, r, n) = (c.u[i], c.r[i], c.n[i]);
                let dn = dh[i] * (1.0 - u);
                let du = dh[i] * (c.h[i] - n);
                let dgn = dn * (1.0 - n * n);
                let dgu = du * u * (1.0 - u);
                let dgr = dgn * c.hn[i] * r * (1.0 - r);
                let base = b * 3 * g;
                dgx[base + k] = dgu;
                dgx[base + g + k] = dgr;
                dgx[base + 2 * g + k] = dgn;
                dgh[base + k] = dgu;
                dgh[base + g + k] = dgr;
                dgh[base + 2 * g + k] = dgn * r;
            }
        }
        gemm(3 * g, rows, hsz, &dgx, true, &c.a, false, &mut grad[o.wx..o.wx + 3 * g * hsz]);
        gemm(3 * g, rows, g, &dgh, true, &c.h, false, &mut grad[o.wh..o.wh + 3 * g * g]);
        add_column_sums(&mut grad[o.b..o.b + 3 * g], &dgx, 3 * g);

        let mut da = vec![0.0; rows * hsz];
        gemm(rows, 3 * g, hsz, &dgx, false, &d[o.wx..o.wx + 3 * g * hsz], false, &mut da);
        for (x, &a) in da.iter_mut().zip(&c.a) {
            *x *= 1.0 - a * a;
        }
        let (w1, b1) = self.trunk();
        gemm(hsz, rows, in_dim, &da, true, &c.x, false, &mut grad[w1..w1 + hsz * in_dim]);
        add_column_sums(&mut grad[b1..b1 + hsz], &da, hsz);
    }
}
