//! Beam search over the incremental decoder.

use serde::{Deserialize, Serialize};

use super::decoder::{DecoderState, EncodedSource};
use super::params::ModelParams;
use super::ModelError;
use crate::bpe::{BOS, EOS, PAD, RESERVED, SPECIAL_TOKENS};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodeOptions {
    pub beam: usize,
    /// Generated tokens allowed after the tag, eos included.
    pub max_len: usize,
    /// GNMT length penalty exponent; 0 disables it.
    pub length_penalty: f64,
}

impl Default for DecodeOptions {
    fn default() -> Self {
        DecodeOptions { beam: 5, max_len: 200, length_penalty: 0.0 }
    }
}

/// A finished or truncated output.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    /// Generated ids after the tag; ends with eos unless cut at `max_len`.
    pub tokens: Vec<u32>,
    /// Sum of token log-probabilities.
    pub log_prob: f64,
}

impl Hypothesis {
    /// Tokens without the final eos.
    pub fn body(&self) -> &[u32] {
        match self.tokens.last() {
            Some(&EOS) => &self.tokens[..self.tokens.len() - 1],
            _ => &self.tokens,
        }
    }

    pub fn finished(&self) -> bool {
        self.tokens.last() == Some(&EOS)
    }

    fn score(&self, alpha: f64) -> f64 {
        if alpha == 0.0 {
            self.log_prob
        } else {
            self.log_prob / ((5.0 + self.tokens.len() as f64) / 6.0).powf(alpha)
        }
    }
}

fn banned(id: usize) -> bool {
    id == PAD as usize || id == BOS as usize || (SPECIAL_TOKENS.len()..RESERVED).contains(&id)
}

struct Live {
    state: DecoderState,
    hyp: Hypothesis,
    next: Vec<f64>,
}

/// Highest-scoring output for `source` under `tag`. The decoder is primed
/// with bos and the tag; pad, bos and tag ids are never generated.
pub fn beam_search(p: &ModelParams, source: &[u32], tag: u32, opts: &DecodeOptions) -> Result<Hypothesis, ModelError> {
    let beam = opts.beam.max(1);
    let enc = EncodedSource::new(p, source)?;
    let mut state = DecoderState::new(p);
    state.step(p, &enc, BOS)?;
    let next = state.step(p, &enc, tag)?;
    let mut live = vec![Live { state, hyp: Hypothesis { tokens: Vec::new(), log_prob: 0.0 }, next }];
    let mut finished: Vec<Hypothesis> = Vec::new();
    for step in 0..opts.max_len {
        let mut candidates: Vec<(f64, usize, u32)> = Vec::new();
        for (h, l) in live.iter().enumerate() {
            let mut ranked: Vec<(f64, u32)> = l
                .next
                .iter()
                .enumerate()
                .filter(|(id, _)| !banned(*id))
                .map(|(id, &lp)| (l.hyp.log_prob + lp, id as u32))
                .collect();
            ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            candidates.extend(ranked.into_iter().take(beam).map(|(s, id)| (s, h, id)));
        }
        candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        candidates.truncate(beam);
        let last_step = step + 1 == opts.max_len;
        let mut next_live = Vec::new();
        for (score, h, id) in candidates {
            let mut tokens = live[h].hyp.tokens.clone();
            tokens.push(id);
            let hyp = Hypothesis { tokens, log_prob: score };
            if id == EOS || last_step {
                finished.push(hyp);
            } else {
                let mut state = live[h].state.clone();
                let next = state.step(p, &enc, id)?;
                next_live.push(Live { state, hyp, next });
            }
        }
        live = next_live;
        if live.is_empty() || finished.len() >= beam {
            break;
        }
        if opts.length_penalty == 0.0 {
            let best_done = finished.iter().map(|h| h.log_prob).fold(f64::NEG_INFINITY, f64::max);
            let best_live = live.iter().map(|l| l.hyp.log_prob).fold(f64::NEG_INFINITY, f64::max);
            if best_done >= best_live {
                break;
            }
        }
    }
    if finished.is_empty() {
        finished.extend(live.into_iter().map(|l| l.hyp));
    }
    let best = finished
        .into_iter()
        .reduce(|a, b| if b.score(opts.length_penalty) > a.score(opts.length_penalty) { b } else { a })
        .unwrap_or(Hypothesis { tokens: Vec::new(), log_prob: 0.0 });
    Ok(best)
}

/// Beam search with a beam of one.
pub fn greedy_decode(p: &ModelParams, source: &[u32], tag: u32, max_len: usize) -> Result<Hypothesis, ModelError> {
    beam_search(p, source, tag, &DecodeOptions { beam: 1, max_len, length_penalty: 0.0 })
}
