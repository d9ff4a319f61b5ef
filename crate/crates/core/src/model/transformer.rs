//! Encoder-decoder forward pass, loss and exact gradients.

use rand_chacha::ChaCha8Rng;

use super::layers::{
    attention, attention_backward, dropout, dropout_backward, ffn, ffn_backward, layer_norm, layer_norm_backward,
    position_encoding, AttnCache, FfnCache, LnCache, Segment,
};
use super::linalg::{add_assign, gemm, log_sum_exp};
use super::params::{Grads, ModelParams};
use super::ModelError;
use crate::bpe::{BOS, EOS, PAD};

/// One training pair: source ids and target ids starting with the tag.
pub type Pair<'a> = (&'a [u32], &'a [u32]);

/// Mean label-smoothed loss of a batch plus teacher-forced accuracy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchLoss {
    pub loss: f64,
    pub tokens: usize,
    pub correct: usize,
}

impl BatchLoss {
    pub fn accuracy(&self) -> f64 {
        if self.tokens == 0 {
            0.0
        } else {
            self.correct as f64 / self.tokens as f64
        }
    }
}

fn check_ids(p: &ModelParams, ids: &[u32]) -> Result<(), ModelError> {
    match ids.iter().find(|&&t| t as usize >= p.vocab_size) {
        Some(&id) => Err(ModelError::IdOutOfRange { id, vocab: p.vocab_size }),
        None => Ok(()),
    }
}

/// Packed rows of several sequences.
struct Packed {
    ids: Vec<u32>,
    starts: Vec<usize>,
    lens: Vec<usize>,
}

impl Packed {
    fn new(seqs: impl Iterator<Item = Vec<u32>>) -> Self {
        let mut p = Packed { ids: Vec::new(), starts: Vec::new(), lens: Vec::new() };
        for s in seqs {
            p.starts.push(p.ids.len());
            p.lens.push(s.len());
            p.ids.extend(s);
        }
        p
    }

    fn rows(&self) -> usize {
        self.ids.len()
    }
}

/// Scaled embeddings plus positions.
fn embed(p: &ModelParams, packed: &Packed) -> Vec<f64> {
    let d = p.hp.d_model;
    let scale = (d as f64).sqrt();
    let emb = p.get(p.layout.embedding);
    let mut x = vec![0.0; packed.rows() * d];
    for (s, &start) in packed.starts.iter().enumerate() {
        for pos in 0..packed.lens[s] {
            let r = start + pos;
            let row = &mut x[r * d..(r + 1) * d];
            position_encoding(pos, d, row);
            let id = packed.ids[r] as usize;
            for (a, b) in row.iter_mut().zip(&emb[id * d..(id + 1) * d]) {
                *a += scale * b;
            }
        }
    }
    x
}

fn embed_backward(p: &ModelParams, g: &mut Grads, packed: &Packed, dx: &[f64]) {
    let d = p.hp.d_model;
    let scale = (d as f64).sqrt();
    let de = g.get_mut(p.layout.embedding);
    for (r, &id) in packed.ids.iter().enumerate() {
        let id = id as usize;
        for c in 0..d {
            de[id * d + c] += scale * dx[r * d + c];
        }
    }
}

struct EncLayerCache {
    attn: AttnCache,
    drop1: Option<Vec<f64>>,
    ln1: LnCache,
    ffn: FfnCache,
    drop2: Option<Vec<f64>>,
    ln2: LnCache,
}

struct DecLayerCache {
    self_attn: AttnCache,
    drop1: Option<Vec<f64>>,
    ln1: LnCache,
    cross: AttnCache,
    drop2: Option<Vec<f64>>,
    ln2: LnCache,
    ffn: FfnCache,
    drop3: Option<Vec<f64>>,
    ln3: LnCache,
}

struct EncoderRun {
    out: Vec<f64>,
    emb_drop: Option<Vec<f64>>,
    layers: Vec<EncLayerCache>,
    segments: Vec<Segment>,
    key_valid: Vec<bool>,
}

fn run_encoder(p: &ModelParams, src: &Packed, mut rng: Option<&mut ChaCha8Rng>) -> EncoderRun {
    let hp = &p.hp;
    let d = hp.d_model;
    let rows = src.rows();
    let mut x = embed(p, src);
    let emb_drop = dropout(&mut x, hp.dropout, rng.as_deref_mut());
    let segments: Vec<Segment> = src
        .starts
        .iter()
        .zip(&src.lens)
        .map(|(&s, &l)| Segment { q_start: s, q_len: l, k_start: s, k_len: l })
        .collect();
    let key_valid: Vec<bool> = src.ids.iter().map(|&t| t != PAD).collect();
    let mut layers = Vec::with_capacity(hp.layers);
    for ids in &p.layout.encoder {
        let (mut a, attn) = attention(p, ids.attn, hp.heads, &x, &x, &segments, &key_valid, false);
        let drop1 = dropout(&mut a, hp.dropout, rng.as_deref_mut());
        add_assign(&mut a, &x);
        let (x1, ln1) = layer_norm(p, ids.ln1, &a, d);
        let (mut f, ffn_cache) = ffn(p, ids.ffn, &x1, rows);
        let drop2 = dropout(&mut f, hp.dropout, rng.as_deref_mut());
        add_assign(&mut f, &x1);
        let (x2, ln2) = layer_norm(p, ids.ln2, &f, d);
        layers.push(EncLayerCache { attn, drop1, ln1, ffn: ffn_cache, drop2, ln2 });
        x = x2;
    }
    EncoderRun { out: x, emb_drop, layers, segments, key_valid }
}

fn encoder_backward(p: &ModelParams, g: &mut Grads, src: &Packed, run: &EncoderRun, mut dx: Vec<f64>) {
    let hp = &p.hp;
    let d = hp.d_model;
    let rows = src.rows();
    for (ids, c) in p.layout.encoder.iter().zip(&run.layers).rev() {
        let dr2 = layer_norm_backward(p, g, ids.ln2, &c.ln2, &dx, d);
        let mut df = dr2.clone();
        dropout_backward(&mut df, &c.drop2);
        let mut dx1 = ffn_backward(p, g, ids.ffn, &c.ffn, rows, &df);
        add_assign(&mut dx1, &dr2);
        let dr1 = layer_norm_backward(p, g, ids.ln1, &c.ln1, &dx1, d);
        let mut da = dr1.clone();
        dropout_backward(&mut da, &c.drop1);
        let (dq, dk) = attention_backward(p, g, ids.attn, hp.heads, &c.attn, &run.segments, &da);
        dx = dr1;
        add_assign(&mut dx, &dq);
        add_assign(&mut dx, &dk);
    }
    dropout_backward(&mut dx, &run.emb_drop);
    embed_backward(p, g, src, &dx);
}

struct DecoderRun {
    out: Vec<f64>,
    emb_drop: Option<Vec<f64>>,
    layers: Vec<DecLayerCache>,
    self_segments: Vec<Segment>,
    cross_segments: Vec<Segment>,
}

fn run_decoder(
    p: &ModelParams,
    tgt: &Packed,
    src: &Packed,
    enc: &EncoderRun,
    mut rng: Option<&mut ChaCha8Rng>,
) -> DecoderRun {
    let hp = &p.hp;
    let d = hp.d_model;
    let rows = tgt.rows();
    let mut y = embed(p, tgt);
    let emb_drop = dropout(&mut y, hp.dropout, rng.as_deref_mut());
    let self_segments: Vec<Segment> = tgt
        .starts
        .iter()
        .zip(&tgt.lens)
        .map(|(&s, &l)| Segment { q_start: s, q_len: l, k_start: s, k_len: l })
        .collect();
    let cross_segments: Vec<Segment> = (0..tgt.starts.len())
        .map(|i| Segment { q_start: tgt.starts[i], q_len: tgt.lens[i], k_start: src.starts[i], k_len: src.lens[i] })
        .collect();
    let all_valid = vec![true; rows];
    let mut layers = Vec::with_capacity(hp.layers);
    for ids in &p.layout.decoder {
        let (mut s, self_attn) = attention(p, ids.self_attn, hp.heads, &y, &y, &self_segments, &all_valid, true);
        let drop1 = dropout(&mut s, hp.dropout, rng.as_deref_mut());
        add_assign(&mut s, &y);
        let (y1, ln1) = layer_norm(p, ids.ln1, &s, d);
        let (mut c, cross) =
            attention(p, ids.cross_attn, hp.heads, &y1, &enc.out, &cross_segments, &enc.key_valid, false);
        let drop2 = dropout(&mut c, hp.dropout, rng.as_deref_mut());
        add_assign(&mut c, &y1);
        let (y2, ln2) = layer_norm(p, ids.ln2, &c, d);
        let (mut f, ffn_cache) = ffn(p, ids.ffn, &y2, rows);
        let drop3 = dropout(&mut f, hp.dropout, rng.as_deref_mut());
        add_assign(&mut f, &y2);
        let (y3, ln3) = layer_norm(p, ids.ln3, &f, d);
        layers.push(DecLayerCache { self_attn, drop1, ln1, cross, drop2, ln2, ffn: ffn_cache, drop3, ln3 });
        y = y3;
    }
    DecoderRun { out: y, emb_drop, layers, self_segments, cross_segments }
}

/// Returns the gradient flowing into the encoder output.
fn decoder_backward(
    p: &ModelParams,
    g: &mut Grads,
    tgt: &Packed,
    run: &DecoderRun,
    mut dy: Vec<f64>,
    enc_rows: usize,
) -> Vec<f64> {
    let hp = &p.hp;
    let d = hp.d_model;
    let rows = tgt.rows();
    let mut denc = vec![0.0; enc_rows * d];
    for (ids, c) in p.layout.decoder.iter().zip(&run.layers).rev() {
        let dr3 = layer_norm_backward(p, g, ids.ln3, &c.ln3, &dy, d);
        let mut df = dr3.clone();
        dropout_backward(&mut df, &c.drop3);
        let mut dy2 = ffn_backward(p, g, ids.ffn, &c.ffn, rows, &df);
        add_assign(&mut dy2, &dr3);
        let dr2 = layer_norm_backward(p, g, ids.ln2, &c.ln2, &dy2, d);
        let mut dc = dr2.clone();
        dropout_backward(&mut dc, &c.drop2);
        let (dq, dmem) = attention_backward(p, g, ids.cross_attn, hp.heads, &c.cross, &run.cross_segments, &dc);
        add_assign(&mut denc, &dmem);
        let mut dy1 = dr2;
        add_assign(&mut dy1, &dq);
        let dr1 = layer_norm_backward(p, g, ids.ln1, &c.ln1, &dy1, d);
        let mut ds = dr1.clone();
        dropout_backward(&mut ds, &c.drop1);
        let (dq, dk) = attention_backward(p, g, ids.self_attn, hp.heads, &c.self_attn, &run.self_segments, &ds);
        dy = dr1;
        add_assign(&mut dy, &dq);
        add_assign(&mut dy, &dk);
    }
    dropout_backward(&mut dy, &run.emb_drop);
    embed_backward(p, g, tgt, &dy);
    denc
}

/// Output logits `rows × vocab` for decoder states `h`.
pub(crate) fn project(p: &ModelParams, h: &[f64]) -> Vec<f64> {
    let d = p.hp.d_model;
    let v = p.vocab_size;
    let rows = h.len() / d;
    match p.layout.generator {
        Some(ids) => super::layers::linear(p, ids, h, rows),
        None => {
            let mut out = vec![0.0; rows * v];
            gemm(rows, d, v, h, false, p.get(p.layout.embedding), true, 0.0, &mut out);
            out
        }
    }
}

fn project_backward(p: &ModelParams, g: &mut Grads, h: &[f64], dlogits: &[f64]) -> Vec<f64> {
    let d = p.hp.d_model;
    let v = p.vocab_size;
    let rows = h.len() / d;
    match p.layout.generator {
        Some(ids) => super::layers::linear_backward(p, g, ids, h, rows, dlogits),
        None => {
            gemm(v, rows, d, dlogits, true, h, false, 1.0, g.get_mut(p.layout.embedding));
            let mut dh = vec![0.0; rows * d];
            gemm(rows, v, d, dlogits, false, p.get(p.layout.embedding), false, 0.0, &mut dh);
            dh
        }
    }
}

struct Forward {
    src: Packed,
    tgt: Packed,
    labels: Vec<u32>,
    enc: EncoderRun,
    dec: DecoderRun,
    logits: Vec<f64>,
}

fn forward(p: &ModelParams, batch: &[Pair<'_>], mut rng: Option<&mut ChaCha8Rng>) -> Result<Forward, ModelError> {
    if batch.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    for (s, t) in batch {
        check_ids(p, s)?;
        check_ids(p, t)?;
        if s.is_empty() {
            return Err(ModelError::EmptySequence);
        }
    }
    let src = Packed::new(batch.iter().map(|(s, _)| s.to_vec()));
    let tgt = Packed::new(batch.iter().map(|(_, t)| std::iter::once(BOS).chain(t.iter().copied()).collect()));
    let labels: Vec<u32> = batch.iter().flat_map(|(_, t)| t.iter().copied().chain(std::iter::once(EOS))).collect();
    let enc = run_encoder(p, &src, rng.as_deref_mut());
    let dec = run_decoder(p, &tgt, &src, &enc, rng);
    let logits = project(p, &dec.out);
    Ok(Forward { src, tgt, labels, enc, dec, logits })
}

/// Loss and, when `want_grad`, the gradient of the loss with respect to the logits.
fn smoothed_loss(logits: &[f64], labels: &[u32], vocab: usize, eps: f64, want_grad: bool) -> (BatchLoss, Vec<f64>) {
    let counted = labels.iter().filter(|&&l| l != PAD).count();
    let off = if vocab > 1 { eps / (vocab - 1) as f64 } else { 0.0 };
    let on = if vocab > 1 { 1.0 - eps } else { 1.0 };
    let mut total = 0.0;
    let mut correct = 0;
    let mut grad = if want_grad { vec![0.0; logits.len()] } else { Vec::new() };
    for (r, &label) in labels.iter().enumerate() {
        if label == PAD {
            continue;
        }
        let row = &logits[r * vocab..(r + 1) * vocab];
        let lse = log_sum_exp(row);
        let y = label as usize;
        let sum_logp: f64 = row.iter().map(|x| x - lse).sum();
        let logp_y = row[y] - lse;
        total -= on * logp_y + off * (sum_logp - logp_y);
        let argmax = row
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, &x)| if x > best.1 { (i, x) } else { best })
            .0;
        if argmax == y {
            correct += 1;
        }
        if want_grad {
            let gr = &mut grad[r * vocab..(r + 1) * vocab];
            for (j, x) in row.iter().enumerate() {
                let q = if j == y { on } else { off };
                gr[j] = ((x - lse).exp() - q) / counted as f64;
            }
        }
    }
    let loss = if counted > 0 { total / counted as f64 } else { 0.0 };
    (BatchLoss { loss, tokens: counted, correct }, grad)
}

/// Mean label-smoothed cross entropy over all predicted target tokens
/// (tag and end-of-sequence included). Dropout is active when `rng` is given.
pub fn loss(p: &ModelParams, batch: &[Pair<'_>], rng: Option<&mut ChaCha8Rng>) -> Result<BatchLoss, ModelError> {
    let f = forward(p, batch, rng)?;
    Ok(smoothed_loss(&f.logits, &f.labels, p.vocab_size, p.hp.label_smoothing, false).0)
}

/// Loss and exact gradients of every parameter.
pub fn gradients(
    p: &ModelParams,
    batch: &[Pair<'_>],
    rng: Option<&mut ChaCha8Rng>,
) -> Result<(BatchLoss, Grads), ModelError> {
    let f = forward(p, batch, rng)?;
    let (stats, dlogits) = smoothed_loss(&f.logits, &f.labels, p.vocab_size, p.hp.label_smoothing, true);
    if !stats.loss.is_finite() {
        return Err(ModelError::NonFiniteLoss(stats.loss));
    }
    let mut g = p.zeros_like();
    let dh = project_backward(p, &mut g, &f.dec.out, &dlogits);
    let denc = decoder_backward(p, &mut g, &f.tgt, &f.dec, dh, f.src.rows());
    encoder_backward(p, &mut g, &f.src, &f.enc, denc);
    Ok((stats, g))
}

/// Encoder output (`len × d_model`) for one source sentence.
pub fn encode(p: &ModelParams, source: &[u32], rng: Option<&mut ChaCha8Rng>) -> Result<Vec<f64>, ModelError> {
    check_ids(p, source)?;
    let src = Packed::new(std::iter::once(source.to_vec()));
    Ok(run_encoder(p, &src, rng).out)
}

/// Teacher-forced next-token distributions (`len(target)+1 × vocab`) for
/// one pair, without dropout.
pub fn teacher_forced_probs(p: &ModelParams, source: &[u32], target: &[u32]) -> Result<Vec<f64>, ModelError> {
    let mut f = forward(p, &[(source, target)], None)?;
    for row in f.logits.chunks_exact_mut(p.vocab_size) {
        super::linalg::softmax_in_place(row);
    }
    Ok(f.logits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Hyperparams;
    use rand::SeedableRng;

    fn small(dropout: f64, tie: bool) -> ModelParams {
        let hp = Hyperparams {
            layers: 2,
            heads: 2,
            d_model: 8,
            d_ff: 16,
            dropout,
            tie_generator: tie,
            ..Hyperparams::tiny()
        };
        ModelParams::new(&hp, 13, 5).unwrap()
    }

    #[test]
    fn uniform_logits_give_log_v() {
        let v = 17;
        let logits = vec![0.3; 4 * v];
        for eps in [0.0, 0.1, 0.5] {
            let (l, _) = smoothed_loss(&logits, &[4, 5, 6, 2], v, eps, false);
            assert!((l.loss - (v as f64).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn one_hot_without_smoothing_is_near_zero() {
        let v = 5;
        let mut logits = vec![0.0; v];
        logits[3] = 60.0;
        let (l, _) = smoothed_loss(&logits, &[3], v, 0.0, false);
        assert!(l.loss < 1e-20);
        assert_eq!(l.correct, 1);
    }

    #[test]
    fn zero_layers_encode_to_embeddings() {
        let hp = Hyperparams { layers: 0, heads: 2, d_model: 8, d_ff: 16, ..Hyperparams::tiny() };
        let p = ModelParams::new(&hp, 10, 1).unwrap();
        let out = encode(&p, &[4, 5], None).unwrap();
        let mut want = vec![0.0; 8];
        position_encoding(1, 8, &mut want);
        let e = &p.get(p.layout.embedding)[5 * 8..6 * 8];
        for c in 0..8 {
            assert!((out[8 + c] - (want[c] + 8f64.sqrt() * e[c])).abs() < 1e-12);
        }
    }

    #[test]
    fn padding_is_masked() {
        let p = small(0.0, false);
        let a = encode(&p, &[4, 5, 6], None).unwrap();
        let b = encode(&p, &[4, 5, 6, PAD, PAD], None).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn dropout_is_seeded() {
        let p = small(0.3, false);
        let run = |seed| encode(&p, &[4, 5, 6], Some(&mut ChaCha8Rng::seed_from_u64(seed))).unwrap();
        assert_eq!(run(3), run(3));
        assert_ne!(run(3), run(4));
    }

    #[test]
    fn duplicated_batch_has_same_gradient() {
        let p = small(0.0, false);
        let one: Vec<Pair> = vec![(&[4, 5, 6], &[7, 8])];
        let two: Vec<Pair> = vec![(&[4, 5, 6], &[7, 8]), (&[4, 5, 6], &[7, 8])];
        let (l1, g1) = gradients(&p, &one, None).unwrap();
        let (l2, g2) = gradients(&p, &two, None).unwrap();
        assert!((l1.loss - l2.loss).abs() < 1e-12);
        for (a, b) in g1.data.iter().zip(&g2.data) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn unused_embedding_rows_get_no_gradient() {
        let p = small(0.0, false);
        let (_, g) = gradients(&p, &[(&[4, 5], &[7, 8])], None).unwrap();
        let de = g.get(p.layout.embedding);
        assert!(de[10 * 8..11 * 8].iter().all(|&x| x == 0.0));
        assert!(de[4 * 8..5 * 8].iter().any(|&x| x != 0.0));
    }

    #[test]
    fn out_of_range_ids() {
        let p = small(0.0, false);
        assert!(matches!(encode(&p, &[99], None), Err(ModelError::IdOutOfRange { id: 99, .. })));
        assert!(gradients(&p, &[(&[4], &[99])], None).is_err());
    }

    fn finite_difference_check(p: &mut ModelParams, dropout_seed: Option<u64>) {
        let batch: Vec<Pair> = vec![(&[4, 5, 6, PAD], &[7, 8, 9]), (&[9, 10], &[4, 11, 12, 5])];
        let rng = || dropout_seed.map(ChaCha8Rng::seed_from_u64);
        let (_, g) = gradients(p, &batch, rng().as_mut()).unwrap();
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for i in 0..p.data.len() {
            let orig = p.data[i];
            p.data[i] = orig + h;
            let up = loss(p, &batch, rng().as_mut()).unwrap().loss;
            p.data[i] = orig - h;
            let down = loss(p, &batch, rng().as_mut()).unwrap().loss;
            p.data[i] = orig;
            let num = (up - down) / (2.0 * h);
            let err = (num - g.data[i]).abs() / num.abs().max(g.data[i].abs()).max(1e-6);
            worst = worst.max(err);
        }
        assert!(worst < 1e-4, "worst relative error {worst}");
    }

    #[test]
    fn gradients_match_finite_differences() {
        finite_difference_check(&mut small(0.0, false), None);
    }

    #[test]
    fn gradients_match_with_dropout_and_tied_generator() {
        finite_difference_check(&mut small(0.2, true), Some(11));
    }
}
