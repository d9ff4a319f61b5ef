//! Incremental decoding with cached keys and values.

use super::layers::{ffn, layer_norm, linear, position_encoding};
use super::linalg::{add_assign, softmax_in_place};
use super::params::{AttnIds, ModelParams};
use super::transformer::{encode, project};
use super::ModelError;
use crate::bpe::PAD;

/// Encoder output with the cross-attention keys and values of every layer.
#[derive(Debug, Clone)]
pub struct EncodedSource {
    pub len: usize,
    cross: Vec<(Vec<f64>, Vec<f64>)>,
    key_valid: Vec<bool>,
}

impl EncodedSource {
    pub fn new(p: &ModelParams, source: &[u32]) -> Result<Self, ModelError> {
        if source.is_empty() {
            return Err(ModelError::EmptySequence);
        }
        let memory = encode(p, source, None)?;
        let n = source.len();
        let cross = p
            .layout
            .decoder
            .iter()
            .map(|ids| (linear(p, ids.cross_attn.k, &memory, n), linear(p, ids.cross_attn.v, &memory, n)))
            .collect();
        Ok(EncodedSource { len: n, cross, key_valid: source.iter().map(|&t| t != PAD).collect() })
    }
}

/// Self-attention keys and values of the prefix fed so far.
#[derive(Debug, Clone)]
pub struct DecoderState {
    self_kv: Vec<(Vec<f64>, Vec<f64>)>,
    len: usize,
}

/// One query attending over cached rows.
fn attend(p: &ModelParams, ids: AttnIds, q: &[f64], keys: &[f64], values: &[f64], valid: Option<&[bool]>) -> Vec<f64> {
    let d = p.hp.d_model;
    let heads = p.hp.heads;
    let dk = d / heads;
    let n = keys.len() / d;
    let scale = 1.0 / (dk as f64).sqrt();
    let mut o = vec![0.0; d];
    let mut row = vec![0.0; n];
    for h in 0..heads {
        let c0 = h * dk;
        for (j, r) in row.iter_mut().enumerate() {
            *r = if valid.is_some_and(|v| !v[j]) {
                f64::NEG_INFINITY
            } else {
                q[c0..c0 + dk].iter().zip(&keys[j * d + c0..j * d + c0 + dk]).map(|(a, b)| a * b).sum::<f64>() * scale
            };
        }
        softmax_in_place(&mut row);
        for (j, &pj) in row.iter().enumerate() {
            for c in 0..dk {
                o[c0 + c] += pj * values[j * d + c0 + c];
            }
        }
    }
    linear(p, ids.o, &o, 1)
}

impl DecoderState {
    pub fn new(p: &ModelParams) -> Self {
        DecoderState { self_kv: vec![(Vec::new(), Vec::new()); p.hp.layers], len: 0 }
    }

    /// Number of tokens fed so far.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Feeds one token and returns log-probabilities of the next.
    pub fn step(&mut self, p: &ModelParams, enc: &EncodedSource, token: u32) -> Result<Vec<f64>, ModelError> {
        if token as usize >= p.vocab_size {
            return Err(ModelError::IdOutOfRange { id: token, vocab: p.vocab_size });
        }
        let d = p.hp.d_model;
        let mut x = vec![0.0; d];
        position_encoding(self.len, d, &mut x);
        let e = &p.get(p.layout.embedding)[token as usize * d..(token as usize + 1) * d];
        let scale = (d as f64).sqrt();
        for (a, b) in x.iter_mut().zip(e) {
            *a += scale * b;
        }
        for (l, ids) in p.layout.decoder.iter().enumerate() {
            let q = linear(p, ids.self_attn.q, &x, 1);
            let (ks, vs) = &mut self.self_kv[l];
            ks.extend(linear(p, ids.self_attn.k, &x, 1));
            vs.extend(linear(p, ids.self_attn.v, &x, 1));
            let mut s = attend(p, ids.self_attn, &q, ks, vs, None);
            add_assign(&mut s, &x);
            let (y1, _) = layer_norm(p, ids.ln1, &s, d);
            let q = linear(p, ids.cross_attn.q, &y1, 1);
            let (ck, cv) = &enc.cross[l];
            let mut c = attend(p, ids.cross_attn, &q, ck, cv, Some(&enc.key_valid));
            add_assign(&mut c, &y1);
            let (y2, _) = layer_norm(p, ids.ln2, &c, d);
            let (mut f, _) = ffn(p, ids.ffn, &y2, 1);
            add_assign(&mut f, &y2);
            x = layer_norm(p, ids.ln3, &f, d).0;
        }
        self.len += 1;
        let mut logits = project(p, &x);
        let lse = super::linalg::log_sum_exp(&logits);
        logits.iter_mut().for_each(|v| *v -= lse);
        Ok(logits)
    }
}

/// Next-token distribution after `prefix` (which starts with bos).
pub fn decode_step(p: &ModelParams, prefix: &[u32], enc: &EncodedSource) -> Result<Vec<f64>, ModelError> {
    if prefix.is_empty() {
        return Err(ModelError::EmptySequence);
    }
    let mut state = DecoderState::new(p);
    let mut last = Vec::new();
    for &t in prefix {
        last = state.step(p, enc, t)?;
    }
    Ok(last.into_iter().map(f64::exp).collect())
}
