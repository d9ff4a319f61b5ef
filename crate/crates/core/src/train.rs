//! Optimization: schedule, Adam, training loops, selective initialization
//! and checkpoint selection.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt::Write as _;

use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::bpe::{tag_id, tag_token};
use crate::corpus::{epoch_seed, plan_batches, Batch, CorpusError, SequenceDecoder, TaggedExample, Task};
use crate::model::{
    beam_search, gradients, loss, BatchLoss, Checkpoint, CheckpointError, Component, DecodeOptions, Grads, Hyperparams,
    ModelError, ModelParams, Pair,
};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("non-finite gradient at step {step}")]
    NonFiniteGradient { step: usize },
    #[error("tag id {0} is neither a pre-training tag of the checkpoint nor the AMR tag")]
    UnknownTag(u32),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("vocabulary mismatch: checkpoint {checkpoint}, expected {expected}")]
    VocabMismatch { checkpoint: String, expected: String },
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("no checkpoints to choose from")]
    NoCheckpoints,
}

/// `factor · d^-0.5 · min(step^-0.5, step · warmup^-1.5)`.
pub fn lr_schedule(step: usize, d_model: usize, warmup: usize, factor: f64) -> f64 {
    let s = step.max(1) as f64;
    factor * (d_model as f64).powf(-0.5) * s.powf(-0.5).min(s * (warmup as f64).powf(-1.5))
}

/// First and second moment estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        AdamState { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
) -> Result<(), TrainError> {
    assert_eq!(params.len(), grads.len());
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(TrainError::NonFiniteGradient { step: state.t as usize + 1 });
    }
    state.t += 1;
    let c1 = 1.0 - beta1.powi(state.t as i32);
    let c2 = 1.0 - beta2.powi(state.t as i32);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g;
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * g * g;
        let mhat = state.m[i] / c1;
        let vhat = state.v[i] / c2;
        params[i] -= lr * mhat / (vhat.sqrt() + eps);
    }
    Ok(())
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub step: usize,
    pub tag: u32,
    pub loss: f64,
    pub lr: f64,
}

/// `step<TAB>task<TAB>loss<TAB>lr` lines.
pub fn log_to_tsv(rows: &[LogRow]) -> String {
    let mut out = String::from("step\ttask\tloss\tlr\n");
    for r in rows {
        let _ = writeln!(out, "{}\t{}\t{:.6}\t{:.6e}", r.step, tag_token(r.tag).unwrap_or("?"), r.loss, r.lr);
    }
    out
}

fn pairs<'a>(corpus: &'a [TaggedExample], indices: &[usize]) -> Vec<Pair<'a>> {
    indices.iter().map(|&i| (corpus[i].source.as_slice(), corpus[i].target.as_slice())).collect()
}

/// Training state for one run: parameters, optimizer, schedule position
/// and the remaining batches of the current epoch.
pub struct Trainer {
    pub params: ModelParams,
    pub adam: AdamState,
    pub step: usize,
    pub epoch: u64,
    pub log: Vec<LogRow>,
    seed: u64,
    rng: ChaCha8Rng,
    queue: VecDeque<Batch>,
}

impl Trainer {
    /// Fresh optimizer and schedule starting at step 1.
    pub fn new(params: ModelParams, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        Trainer {
            adam: AdamState::new(params.len()),
            params,
            step: 0,
            epoch: 0,
            log: Vec::new(),
            seed,
            rng,
            queue: VecDeque::new(),
        }
    }

    fn next_batch(&mut self, corpus: &[TaggedExample]) -> Result<Batch, TrainError> {
        if self.queue.is_empty() {
            if corpus.is_empty() {
                return Err(TrainError::EmptyCorpus);
            }
            let plan = plan_batches(corpus, self.params.hp.batch_tokens, epoch_seed(self.seed, self.epoch))?;
            self.epoch += 1;
            self.queue = plan.batches.into();
        }
        Ok(self.queue.pop_front().expect("a plan has at least one batch"))
    }

    /// Gradient step on one batch.
    pub fn train_batch(&mut self, corpus: &[TaggedExample], batch: &Batch) -> Result<LogRow, TrainError> {
        let hp = self.params.hp.clone();
        let (stats, grads): (BatchLoss, Grads) =
            gradients(&self.params, &pairs(corpus, &batch.indices), Some(&mut self.rng))?;
        self.step += 1;
        let lr = lr_schedule(self.step, hp.d_model, hp.warmup_steps, hp.lr_factor);
        adam_step(&mut self.params.data, &grads.data, &mut self.adam, lr, hp.adam_beta1, hp.adam_beta2, hp.adam_eps)
            .map_err(|_| TrainError::NonFiniteGradient { step: self.step })?;
        let row = LogRow { step: self.step, tag: batch.tag, loss: stats.loss, lr };
        self.log.push(row.clone());
        Ok(row)
    }

    /// Runs `n` steps, crossing epoch boundaries as needed.
    pub fn run_steps(&mut self, corpus: &[TaggedExample], n: usize) -> Result<(), TrainError> {
        for _ in 0..n {
            let b = self.next_batch(corpus)?;
            self.train_batch(corpus, &b)?;
        }
        Ok(())
    }

    /// Finishes the current epoch, or runs a whole new one.
    pub fn run_epoch(&mut self, corpus: &[TaggedExample]) -> Result<(), TrainError> {
        let b = self.next_batch(corpus)?;
        self.train_batch(corpus, &b)?;
        while let Some(b) = self.queue.pop_front() {
            self.train_batch(corpus, &b)?;
        }
        Ok(())
    }
}

/// Settings of one training run.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub seed: u64,
    pub vocab_hash: String,
    /// Tags recorded in the produced checkpoints.
    pub tags: Vec<String>,
}

/// Trains for `hp.max_steps` steps and returns the checkpoint series: the
/// starting point, every `checkpoint_every` steps, and the last step.
pub fn train(params: ModelParams, corpus: &[TaggedExample], run: &RunConfig) -> Result<Vec<Checkpoint>, TrainError> {
    let hp = params.hp.clone();
    let mut trainer = Trainer::new(params, run.seed);
    let snapshot = |t: &Trainer| Checkpoint {
        params: t.params.clone(),
        vocab_hash: run.vocab_hash.clone(),
        step: t.step as u64,
        tags: run.tags.clone(),
    };
    let mut series = vec![snapshot(&trainer)];
    if hp.max_steps > 0 && corpus.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    for _ in 0..hp.max_steps {
        trainer.run_steps(corpus, 1)?;
        let last = trainer.log.last().expect("a step was logged");
        if trainer.step.is_multiple_of(100) {
            info!("step {} {} loss {:.4} lr {:.3e}", last.step, tag_token(last.tag).unwrap_or("?"), last.loss, last.lr);
        }
        if (hp.checkpoint_every > 0 && trainer.step.is_multiple_of(hp.checkpoint_every)) || trainer.step == hp.max_steps
        {
            series.push(snapshot(&trainer));
        }
    }
    TRAIN_LOG.with(|l| *l.borrow_mut() = trainer.log);
    Ok(series)
}

thread_local! {
    static TRAIN_LOG: std::cell::RefCell<Vec<LogRow>> = const { std::cell::RefCell::new(Vec::new()) };
}

/// Log of the most recent [`train`] call on this thread.
pub fn last_train_log() -> Vec<LogRow> {
    TRAIN_LOG.with(|l| l.borrow().clone())
}

fn tags_of(corpus: &[TaggedExample]) -> Vec<String> {
    let ids: BTreeSet<u32> = corpus.iter().map(|e| e.tag).collect();
    ids.into_iter().filter_map(tag_token).map(String::from).collect()
}

/// Joint pre-training from a fresh initialization.
pub fn pretrain(
    hp: &Hyperparams,
    vocab_size: usize,
    vocab_hash: &str,
    corpus: &[TaggedExample],
    seed: u64,
) -> Result<Vec<Checkpoint>, TrainError> {
    let params = ModelParams::new(hp, vocab_size, seed)?;
    train(params, corpus, &RunConfig { seed, vocab_hash: vocab_hash.into(), tags: tags_of(corpus) })
}

fn finetune_params(ckpt: &Checkpoint, hp: &Hyperparams) -> Result<ModelParams, TrainError> {
    check_shapes(&ckpt.params.hp, hp)?;
    let mut params = ckpt.params.clone();
    params.hp = hp.clone();
    Ok(params)
}

/// Continues training on the AMR corpus alone with a fresh optimizer and
/// a restarted schedule.
pub fn finetune_vanilla(
    ckpt: &Checkpoint,
    hp: &Hyperparams,
    corpus: &[TaggedExample],
    seed: u64,
) -> Result<Vec<Checkpoint>, TrainError> {
    finetune_mtl(ckpt, hp, corpus, seed)
}

/// Multi-task fine-tuning on gold AMR examples plus examples synthesized
/// for the checkpoint's pre-training tasks.
pub fn finetune_mtl(
    ckpt: &Checkpoint,
    hp: &Hyperparams,
    corpus: &[TaggedExample],
    seed: u64,
) -> Result<Vec<Checkpoint>, TrainError> {
    let amr = tag_id(Task::Amr.tag()).expect("the AMR tag is reserved");
    let known: BTreeSet<u32> = ckpt.tags.iter().filter_map(|t| tag_id(t)).chain([amr]).collect();
    if let Some(e) = corpus.iter().find(|e| !known.contains(&e.tag)) {
        return Err(TrainError::UnknownTag(e.tag));
    }
    let params = finetune_params(ckpt, hp)?;
    let mut tags = ckpt.tags.clone();
    for t in tags_of(corpus) {
        if !tags.contains(&t) {
            tags.push(t);
        }
    }
    train(params, corpus, &RunConfig { seed, vocab_hash: ckpt.vocab_hash.clone(), tags })
}

fn check_shapes(a: &Hyperparams, b: &Hyperparams) -> Result<(), TrainError> {
    let shape = |h: &Hyperparams| (h.layers, h.heads, h.d_model, h.d_ff, h.tie_generator);
    if shape(a) != shape(b) {
        return Err(TrainError::ShapeMismatch(format!(
            "checkpoint has layers/heads/d_model/d_ff/tied {:?}, run asks for {:?}",
            shape(a),
            shape(b)
        )));
    }
    Ok(())
}

/// Copies the listed components from `source` into a fresh initialization
/// drawn with `seed`.
pub fn selective_init(
    hp: &Hyperparams,
    vocab_size: usize,
    vocab_hash: &str,
    source: &Checkpoint,
    components: &[Component],
    seed: u64,
) -> Result<ModelParams, TrainError> {
    check_shapes(&source.params.hp, hp)?;
    if source.params.vocab_size != vocab_size || source.vocab_hash != vocab_hash {
        return Err(TrainError::VocabMismatch {
            checkpoint: format!("{} ({} tokens)", source.vocab_hash, source.params.vocab_size),
            expected: format!("{vocab_hash} ({vocab_size} tokens)"),
        });
    }
    let mut params = ModelParams::new(hp, vocab_size, seed)?;
    for &c in components {
        for r in params.component_ranges(c) {
            params.data[r.clone()].copy_from_slice(&source.params.data[r]);
        }
    }
    Ok(params)
}

/// Index of the best-scoring checkpoint; ties go to the later step.
pub fn select_best(
    checkpoints: &[Checkpoint],
    mut score: impl FnMut(&Checkpoint) -> Result<f64, TrainError>,
) -> Result<(usize, f64), TrainError> {
    let mut best: Option<(usize, f64, u64)> = None;
    for (i, c) in checkpoints.iter().enumerate() {
        let s = score(c)?;
        let better = match best {
            None => true,
            Some((_, bs, bstep)) => s > bs || (s == bs && c.step >= bstep),
        };
        if better {
            best = Some((i, s, c.step));
        }
    }
    best.map(|(i, s, _)| (i, s)).ok_or(TrainError::NoCheckpoints)
}

/// Teacher-forced loss and accuracy over a corpus, without dropout.
pub fn evaluate(params: &ModelParams, examples: &[TaggedExample]) -> Result<BatchLoss, TrainError> {
    let mut total = 0.0;
    let mut tokens = 0;
    let mut correct = 0;
    for chunk in examples.chunks(32) {
        let b: Vec<Pair> = chunk.iter().map(|e| (e.source.as_slice(), e.target.as_slice())).collect();
        let l = loss(params, &b, None)?;
        total += l.loss * l.tokens as f64;
        tokens += l.tokens;
        correct += l.correct;
    }
    Ok(BatchLoss { loss: if tokens > 0 { total / tokens as f64 } else { 0.0 }, tokens, correct })
}

/// Teacher-forced loss per tag.
pub fn evaluate_by_tag(
    params: &ModelParams,
    examples: &[TaggedExample],
) -> Result<BTreeMap<u32, BatchLoss>, TrainError> {
    let mut by: BTreeMap<u32, Vec<TaggedExample>> = BTreeMap::new();
    for e in examples {
        by.entry(e.tag).or_default().push(e.clone());
    }
    by.into_iter().map(|(t, v)| Ok((t, evaluate(params, &v)?))).collect()
}

/// Fraction of examples whose decoded body equals the reference body.
pub fn exact_match(params: &ModelParams, examples: &[TaggedExample], opts: &DecodeOptions) -> Result<f64, TrainError> {
    if examples.is_empty() {
        return Ok(0.0);
    }
    let mut hits = 0;
    for e in examples {
        let h = beam_search(params, &e.source, e.tag, opts)?;
        if h.body() == e.body() {
            hits += 1;
        }
    }
    Ok(hits as f64 / examples.len() as f64)
}

/// Beam-search decoding as a [`SequenceDecoder`].
pub struct ModelDecoder<'a> {
    pub params: &'a ModelParams,
    pub opts: DecodeOptions,
}

impl SequenceDecoder for ModelDecoder<'_> {
    fn decode(&self, source: &[u32], tag: u32) -> Vec<u32> {
        match beam_search(self.params, source, tag, &self.opts) {
            Ok(h) => h.body().to_vec(),
            Err(e) => {
                log::warn!("decoding failed: {e}");
                Vec::new()
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_values() {
        let d = 512;
        let w = 16000;
        let at_warmup = lr_schedule(w, d, w, 2.0);
        assert!((at_warmup - 2.0 / (d as f64).sqrt() / (w as f64).sqrt()).abs() < 1e-15);
        let first = lr_schedule(1, d, w, 2.0);
        assert!((first - 2.0 * 512f64.powf(-0.5) * 16000f64.powf(-1.5)).abs() < 1e-18);
        let rates: Vec<f64> = (1..40).map(|s| lr_schedule(s, 64, 10, 1.0)).collect();
        assert!(rates[..10].windows(2).all(|w| w[1] >= w[0]));
        assert!(rates[9..].windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn adam_zero_gradient_is_a_no_op() {
        let mut p = vec![1.0, -2.0];
        let mut s = AdamState::new(2);
        adam_step(&mut p, &[0.0, 0.0], &mut s, 0.1, 0.9, 0.998, 1e-9).unwrap();
        assert_eq!(p, [1.0, -2.0]);
    }

    #[test]
    fn adam_first_step_on_quadratic() {
        // f(x) = x^2 at x = 3: g = 6, m = 0.6, v = 0.072; corrected m = 6, v = 36
        let mut p = vec![3.0];
        let mut s = AdamState::new(1);
        adam_step(&mut p, &[6.0], &mut s, 0.01, 0.9, 0.998, 1e-9).unwrap();
        let want = 3.0 - 0.01 * 6.0 / (6.0 + 1e-9);
        assert!((p[0] - want).abs() < 1e-15);
        assert!((s.m[0] - 0.6).abs() < 1e-15 && (s.v[0] - 0.072).abs() < 1e-15);
    }

    #[test]
    fn adam_rejects_nan() {
        let mut p = vec![0.0];
        let mut s = AdamState::new(1);
        assert!(matches!(
            adam_step(&mut p, &[f64::NAN], &mut s, 0.1, 0.9, 0.99, 1e-9),
            Err(TrainError::NonFiniteGradient { step: 1 })
        ));
    }

    fn ckpt(step: u64) -> Checkpoint {
        let hp = Hyperparams { layers: 1, heads: 2, d_model: 8, d_ff: 16, ..Hyperparams::tiny() };
        Checkpoint { params: ModelParams::new(&hp, 12, step).unwrap(), vocab_hash: "h".into(), step, tags: vec![] }
    }

    #[test]
    fn best_checkpoint_selection() {
        let cs = vec![ckpt(0), ckpt(10), ckpt(20)];
        assert_eq!(select_best(&cs[..1], |_| Ok(0.3)).unwrap().0, 0);
        assert_eq!(select_best(&cs, |c| Ok(c.step as f64)).unwrap().0, 2);
        assert_eq!(select_best(&cs, |c| Ok(if c.step == 0 { 0.1 } else { 0.5 })).unwrap().0, 2);
        assert!(matches!(select_best(&[], |_| Ok(1.0)), Err(TrainError::NoCheckpoints)));
    }

    #[test]
    fn selective_init_partition() {
        let src = ckpt(3);
        let hp = src.params.hp.clone();
        let all = selective_init(&hp, 12, "h", &src, &Component::ALL, 99).unwrap();
        assert_eq!(all.data, src.params.data);
        let none = selective_init(&hp, 12, "h", &src, &[], 99).unwrap();
        assert_eq!(none, ModelParams::new(&hp, 12, 99).unwrap());
        let emb = selective_init(&hp, 12, "h", &src, &[Component::Embedding], 99).unwrap();
        for c in Component::ALL {
            let same = emb.component_ranges(c).into_iter().all(|r| emb.data[r.clone()] == src.params.data[r]);
            assert_eq!(same, c == Component::Embedding, "{c}");
        }
        assert!(matches!(selective_init(&hp, 13, "h", &src, &[], 1), Err(TrainError::VocabMismatch { .. })));
        let other = Hyperparams { d_ff: 32, ..hp.clone() };
        assert!(matches!(selective_init(&other, 12, "h", &src, &[], 1), Err(TrainError::ShapeMismatch(_))));
    }

    fn copy_corpus() -> Vec<TaggedExample> {
        (0..8u32).map(|i| TaggedExample::new(4, vec![7 + i % 5, 8 + i % 3], vec![7 + i % 5, 8 + i % 3])).collect()
    }

    #[test]
    fn zero_steps_give_initial_checkpoint_only() {
        let hp = Hyperparams { layers: 1, heads: 2, d_model: 8, d_ff: 16, max_steps: 0, ..Hyperparams::tiny() };
        let series = pretrain(&hp, 16, "h", &copy_corpus(), 1).unwrap();
        assert_eq!(series.len(), 1);
        assert_eq!(series[0].step, 0);
    }

    #[test]
    fn training_is_deterministic_and_learns() {
        let hp = Hyperparams {
            layers: 1,
            heads: 2,
            d_model: 16,
            d_ff: 32,
            max_steps: 60,
            checkpoint_every: 20,
            batch_tokens: 64,
            warmup_steps: 20,
            lr_factor: 2.0,
            ..Hyperparams::tiny()
        };
        let corpus = copy_corpus();
        let a = pretrain(&hp, 16, "h", &corpus, 5).unwrap();
        let log = last_train_log();
        let b = pretrain(&hp, 16, "h", &corpus, 5).unwrap();
        assert_eq!(a.iter().map(|c| c.step).collect::<Vec<_>>(), [0, 20, 40, 60]);
        assert_eq!(a.last().unwrap().to_bytes(), b.last().unwrap().to_bytes());
        let before = evaluate(&a[0].params, &corpus).unwrap().loss;
        let after = evaluate(&a[3].params, &corpus).unwrap().loss;
        assert!(after < before, "{before} -> {after}");
        assert!(log_to_tsv(&log).starts_with("step\ttask\tloss\tlr\n1\t<to_mt>\t"));
    }

    #[test]
    fn mtl_rejects_unknown_tags() {
        let c = Checkpoint { tags: vec!["<to_mt>".into()], ..ckpt(0) };
        let hp = Hyperparams { max_steps: 0, ..c.params.hp.clone() };
        let bad = vec![TaggedExample::new(5, vec![7], vec![8])];
        assert!(matches!(finetune_mtl(&c, &hp, &bad, 0), Err(TrainError::UnknownTag(5))));
        let ok = vec![TaggedExample::new(4, vec![7], vec![8]), TaggedExample::new(6, vec![7], vec![8])];
        assert!(finetune_mtl(&c, &hp, &ok, 0).is_ok());
    }
}
