//! Forward and backward passes of the building blocks. Activations are
//! row-major `rows × width` buffers; sequences are packed row-wise.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::linalg::{add_col_sums, affine, gemm, softmax_in_place};
use super::params::{AttnIds, FfnIds, Grads, LinearIds, LnIds, ModelParams};

pub(crate) const LN_EPS: f64 = 1e-6;

pub(crate) fn linear(p: &ModelParams, ids: LinearIds, x: &[f64], rows: usize) -> Vec<f64> {
    affine(x, rows, p.get(ids.w), p.get(ids.b))
}

/// Accumulates weight gradients and returns the input gradient.
pub(crate) fn linear_backward(
    p: &ModelParams,
    g: &mut Grads,
    ids: LinearIds,
    x: &[f64],
    rows: usize,
    dy: &[f64],
) -> Vec<f64> {
    let spec = &p.layout.specs[ids.w];
    let (fan_in, fan_out) = (spec.rows, spec.cols);
    gemm(fan_in, rows, fan_out, x, true, dy, false, 1.0, g.get_mut(ids.w));
    add_col_sums(dy, fan_out, g.get_mut(ids.b));
    let mut dx = vec![0.0; rows * fan_in];
    gemm(rows, fan_out, fan_in, dy, false, p.get(ids.w), true, 0.0, &mut dx);
    dx
}

pub(crate) struct LnCache {
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
}

pub(crate) fn layer_norm(p: &ModelParams, ids: LnIds, x: &[f64], d: usize) -> (Vec<f64>, LnCache) {
    let gamma = p.get(ids.gamma);
    let beta = p.get(ids.beta);
    let rows = x.len() / d;
    let mut xhat = vec![0.0; x.len()];
    let mut inv_std = Vec::with_capacity(rows);
    let mut y = vec![0.0; x.len()];
    for r in 0..rows {
        let row = &x[r * d..(r + 1) * d];
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let is = 1.0 / (var + LN_EPS).sqrt();
        inv_std.push(is);
        for c in 0..d {
            let h = (row[c] - mean) * is;
            xhat[r * d + c] = h;
            y[r * d + c] = gamma[c] * h + beta[c];
        }
    }
    (y, LnCache { xhat, inv_std })
}

pub(crate) fn layer_norm_backward(
    p: &ModelParams,
    g: &mut Grads,
    ids: LnIds,
    cache: &LnCache,
    dy: &[f64],
    d: usize,
) -> Vec<f64> {
    let gamma = p.get(ids.gamma).to_vec();
    let rows = dy.len() / d;
    {
        let dgamma = g.get_mut(ids.gamma);
        for r in 0..rows {
            for c in 0..d {
                dgamma[c] += dy[r * d + c] * cache.xhat[r * d + c];
            }
        }
    }
    add_col_sums(dy, d, g.get_mut(ids.beta));
    let mut dx = vec![0.0; dy.len()];
    let mut dxhat = vec![0.0; d];
    for r in 0..rows {
        let xh = &cache.xhat[r * d..(r + 1) * d];
        for c in 0..d {
            dxhat[c] = dy[r * d + c] * gamma[c];
        }
        let mean_d = dxhat.iter().sum::<f64>() / d as f64;
        let mean_dx = dxhat.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / d as f64;
        for c in 0..d {
            dx[r * d + c] = cache.inv_std[r] * (dxhat[c] - mean_d - xh[c] * mean_dx);
        }
    }
    dx
}

/// Inverted dropout in place; returns the scaled keep mask when active.
pub(crate) fn dropout(x: &mut [f64], rate: f64, rng: Option<&mut ChaCha8Rng>) -> Option<Vec<f64>> {
    let rng = rng?;
    if rate <= 0.0 {
        return None;
    }
    let keep = 1.0 / (1.0 - rate);
    let mask: Vec<f64> = x.iter().map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep }).collect();
    for (v, m) in x.iter_mut().zip(&mask) {
        *v *= m;
    }
    Some(mask)
}

pub(crate) fn dropout_backward(dy: &mut [f64], mask: &Option<Vec<f64>>) {
    if let Some(m) = mask {
        for (v, k) in dy.iter_mut().zip(m) {
            *v *= k;
        }
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

pub(crate) fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

pub(crate) struct FfnCache {
    x: Vec<f64>,
    pre: Vec<f64>,
    h: Vec<f64>,
}

pub(crate) fn ffn(p: &ModelParams, ids: FfnIds, x: &[f64], rows: usize) -> (Vec<f64>, FfnCache) {
    let pre = linear(p, ids.inner, x, rows);
    let h: Vec<f64> = pre.iter().map(|&v| gelu(v)).collect();
    let y = linear(p, ids.outer, &h, rows);
    (y, FfnCache { x: x.to_vec(), pre, h })
}

pub(crate) fn ffn_backward(
    p: &ModelParams,
    g: &mut Grads,
    ids: FfnIds,
    cache: &FfnCache,
    rows: usize,
    dy: &[f64],
) -> Vec<f64> {
    let mut dh = linear_backward(p, g, ids.outer, &cache.h, rows, dy);
    for (v, &x) in dh.iter_mut().zip(&cache.pre) {
        *v *= gelu_grad(x);
    }
    linear_backward(p, g, ids.inner, &cache.x, rows, &dh)
}

/// One query sequence attending over one key sequence.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Segment {
    pub q_start: usize,
    pub q_len: usize,
    pub k_start: usize,
    pub k_len: usize,
}

pub(crate) struct AttnCache {
    xq: Vec<f64>,
    xk: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    probs: Vec<f64>,
    o: Vec<f64>,
    nq: usize,
    nk: usize,
}

/// Multi-head attention. Keys with `key_valid[j] == false` are ignored;
/// `causal` additionally hides keys after the query position.
#[allow(clippy::too_many_arguments)]
pub(crate) fn attention(
    p: &ModelParams,
    ids: AttnIds,
    heads: usize,
    xq: &[f64],
    xk: &[f64],
    segments: &[Segment],
    key_valid: &[bool],
    causal: bool,
) -> (Vec<f64>, AttnCache) {
    let d = p.hp.d_model;
    let nq = xq.len() / d;
    let nk = xk.len() / d;
    let q = linear(p, ids.q, xq, nq);
    let k = linear(p, ids.k, xk, nk);
    let v = linear(p, ids.v, xk, nk);
    let dk = d / heads;
    let scale = 1.0 / (dk as f64).sqrt();
    let mut o = vec![0.0; nq * d];
    let mut probs = Vec::with_capacity(segments.iter().map(|s| s.q_len * s.k_len * heads).sum());
    let mut row = Vec::new();
    for s in segments {
        for h in 0..heads {
            let c0 = h * dk;
            for i in 0..s.q_len {
                let qi = &q[(s.q_start + i) * d + c0..(s.q_start + i) * d + c0 + dk];
                row.clear();
                for j in 0..s.k_len {
                    if !key_valid[s.k_start + j] || (causal && j > i) {
                        row.push(f64::NEG_INFINITY);
                        continue;
                    }
                    let kj = &k[(s.k_start + j) * d + c0..(s.k_start + j) * d + c0 + dk];
                    row.push(qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() * scale);
                }
                softmax_in_place(&mut row);
                let out = &mut o[(s.q_start + i) * d + c0..(s.q_start + i) * d + c0 + dk];
                for (j, &pij) in row.iter().enumerate() {
                    if pij != 0.0 {
                        let vj = &v[(s.k_start + j) * d + c0..(s.k_start + j) * d + c0 + dk];
                        for (a, b) in out.iter_mut().zip(vj) {
                            *a += pij * b;
                        }
                    }
                }
                probs.extend_from_slice(&row);
            }
        }
    }
    let y = linear(p, ids.o, &o, nq);
    (y, AttnCache { xq: xq.to_vec(), xk: xk.to_vec(), q, k, v, probs, o, nq, nk })
}

/// Returns gradients for the query input and the key/value input.
pub(crate) fn attention_backward(
    p: &ModelParams,
    g: &mut Grads,
    ids: AttnIds,
    heads: usize,
    cache: &AttnCache,
    segments: &[Segment],
    dy: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let d = p.hp.d_model;
    let dk = d / heads;
    let scale = 1.0 / (dk as f64).sqrt();
    let d_o = linear_backward(p, g, ids.o, &cache.o, cache.nq, dy);
    let mut dq = vec![0.0; cache.nq * d];
    let mut dkm = vec![0.0; cache.nk * d];
    let mut dv = vec![0.0; cache.nk * d];
    let (q, k, v) = (&cache.q, &cache.k, &cache.v);
    let mut offset = 0;
    let mut dp = Vec::new();
    for s in segments {
        for h in 0..heads {
            let c0 = h * dk;
            for i in 0..s.q_len {
                let prow = &cache.probs[offset..offset + s.k_len];
                offset += s.k_len;
                let qr = (s.q_start + i) * d + c0;
                let doi = &d_o[qr..qr + dk];
                dp.clear();
                let mut dot = 0.0;
                for (j, &pij) in prow.iter().enumerate() {
                    let vr = (s.k_start + j) * d + c0;
                    let val = if pij != 0.0 { doi.iter().zip(&v[vr..vr + dk]).map(|(a, b)| a * b).sum() } else { 0.0 };
                    dp.push(val);
                    dot += pij * val;
                    if pij != 0.0 {
                        for (a, b) in dv[vr..vr + dk].iter_mut().zip(doi) {
                            *a += pij * b;
                        }
                    }
                }
                for (j, &pij) in prow.iter().enumerate() {
                    if pij == 0.0 {
                        continue;
                    }
                    let ds = pij * (dp[j] - dot) * scale;
                    let kr = (s.k_start + j) * d + c0;
                    for c in 0..dk {
                        dq[qr + c] += ds * k[kr + c];
                        dkm[kr + c] += ds * q[qr + c];
                    }
                }
            }
        }
    }
    let dxq = linear_backward(p, g, ids.q, &cache.xq, cache.nq, &dq);
    let mut dxk = linear_backward(p, g, ids.k, &cache.xk, cache.nk, &dkm);
    let dxv = linear_backward(p, g, ids.v, &cache.xk, cache.nk, &dv);
    for (a, b) in dxk.iter_mut().zip(&dxv) {
        *a += b;
    }
    (dxq, dxk)
}

/// Sinusoidal position encoding of one position.
pub(crate) fn position_encoding(pos: usize, d: usize, out: &mut [f64]) {
    for i in 0..d {
        let pair = (i / 2) as f64;
        let angle = pos as f64 / 10000f64.powf(2.0 * pair / d as f64);
        out[i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
    }
}
