//! Tagged multi-task corpora and interleaved batch plans.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bpe::{BpeModel, TAG_TOKENS};
use crate::preprocess::{LinearSeq, SeqKind};

pub const DEFAULT_MAX_LEN: usize = 100;
pub const DEFAULT_MAX_RATIO: f64 = 1.5;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("tasks `{first}` and `{second}` share the tag {tag}")]
    TagCollision { tag: String, first: Task, second: Task },
    #[error("unknown task tag `{0}`")]
    UnknownTag(String),
    #[error("unknown task `{0}`")]
    UnknownTask(String),
    #[error("example of {tokens} tokens exceeds the batch budget of {budget}")]
    BudgetTooSmall { tokens: usize, budget: usize },
    #[error("{source_lines} source lines but {target_lines} target lines")]
    Misaligned { source_lines: usize, target_lines: usize },
    #[error("subsample fraction must lie in (0, 1], got {0}")]
    BadFraction(f64),
    #[error("the fine-tuning task cannot also be an auxiliary task")]
    FineTuneTaskAsAuxiliary,
    #[error("no examples left")]
    Empty,
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    /// English-German translation.
    Mt,
    /// Constituency parsing.
    Syn,
    /// AMR parsing.
    Amr,
}

impl Task {
    pub const ALL: [Task; 3] = [Task::Mt, Task::Syn, Task::Amr];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Default tag string.
    pub fn tag(self) -> &'static str {
        TAG_TOKENS[self.index()]
    }

    pub fn target_kind(self) -> SeqKind {
        match self {
            Task::Mt => SeqKind::Sentence,
            Task::Syn => SeqKind::Syntax,
            Task::Amr => SeqKind::Amr,
        }
    }

    pub fn from_tag(tag: &str) -> Result<Task, CorpusError> {
        Task::ALL.into_iter().find(|t| t.tag() == tag).ok_or_else(|| CorpusError::UnknownTag(tag.to_string()))
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Mt => "mt",
            Task::Syn => "syn",
            Task::Amr => "amr",
        })
    }
}

impl FromStr for Task {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mt" => Ok(Task::Mt),
            "syn" => Ok(Task::Syn),
            "amr" | "sem" => Ok(Task::Amr),
            _ => Err(CorpusError::UnknownTask(s.to_string())),
        }
    }
}

/// A training pair whose target starts with its task tag.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaggedExample {
    pub tag: u32,
    pub source: Vec<u32>,
    pub target: Vec<u32>,
}

impl TaggedExample {
    pub fn new(tag: u32, source: Vec<u32>, mut body: Vec<u32>) -> Self {
        body.insert(0, tag);
        TaggedExample { tag, source, target: body }
    }

    /// Target without the tag.
    pub fn body(&self) -> &[u32] {
        &self.target[1..]
    }

    pub fn tokens(&self) -> usize {
        self.source.len() + self.target.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterOptions {
    pub max_len: usize,
    pub ratio: f64,
}

impl Default for FilterOptions {
    fn default() -> Self {
        FilterOptions { max_len: DEFAULT_MAX_LEN, ratio: DEFAULT_MAX_RATIO }
    }
}

/// Drops pairs with an empty or over-long side, or whose longer side
/// exceeds `ratio` times the shorter.
pub fn filter_pairs<T>(pairs: Vec<(Vec<T>, Vec<T>)>, opts: &FilterOptions) -> Vec<(Vec<T>, Vec<T>)> {
    pairs
        .into_iter()
        .filter(|(s, t)| {
            let (a, b) = (s.len().min(t.len()), s.len().max(t.len()));
            a > 0 && b <= opts.max_len && b as f64 <= opts.ratio * a as f64
        })
        .collect()
}

/// One task's raw, line-aligned data and the tag it is trained under.
#[derive(Debug, Clone)]
pub struct TaskData {
    pub task: Task,
    pub tag: String,
    pub pairs: Vec<(LinearSeq, LinearSeq)>,
}

impl TaskData {
    pub fn new(task: Task, pairs: Vec<(LinearSeq, LinearSeq)>) -> Self {
        TaskData { task, tag: task.tag().to_string(), pairs }
    }
}

fn resolve_tags(tasks: &[TaskData], bpe: &BpeModel) -> Result<Vec<u32>, CorpusError> {
    let mut seen: BTreeMap<&str, Task> = BTreeMap::new();
    let mut ids = Vec::new();
    for t in tasks {
        if let Some(&first) = seen.get(t.tag.as_str()) {
            return Err(CorpusError::TagCollision { tag: t.tag.clone(), first, second: t.task });
        }
        seen.insert(&t.tag, t.task);
        let index =
            TAG_TOKENS.iter().position(|x| *x == t.tag).ok_or_else(|| CorpusError::UnknownTag(t.tag.clone()))?;
        ids.push(bpe.tag_id(index));
    }
    Ok(ids)
}

/// Encodes every task with the shared BPE model and prepends its tag.
/// Order is kept within a task; tasks follow each other.
pub fn build_joint_corpus(
    tasks: &[TaskData],
    bpe: &BpeModel,
    filter: Option<&FilterOptions>,
) -> Result<Vec<TaggedExample>, CorpusError> {
    let tags = resolve_tags(tasks, bpe)?;
    let mut out = Vec::new();
    for (t, &tag) in tasks.iter().zip(&tags) {
        if t.pairs.is_empty() {
            warn!("task {} has no data and is left out", t.task);
            continue;
        }
        let encoded: Vec<_> = t.pairs.iter().map(|(s, g)| (bpe.encode(s), bpe.encode(g))).collect();
        let before = encoded.len();
        let kept = match filter {
            Some(f) => filter_pairs(encoded, f),
            None => encoded.into_iter().filter(|(s, g)| !s.is_empty() && !g.is_empty()).collect(),
        };
        info!("task {}: kept {} of {before} pairs", t.task, kept.len());
        out.extend(kept.into_iter().map(|(s, g)| TaggedExample::new(tag, s, g)));
    }
    Ok(out)
}

/// Single-task group of example indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Batch {
    pub tag: u32,
    pub indices: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchPlan {
    pub batches: Vec<Batch>,
    pub token_budget: usize,
}

/// Seed for one epoch's plan.
pub fn epoch_seed(seed: u64, epoch: u64) -> u64 {
    seed ^ epoch.wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Shuffles each task, sorts it by length, packs batches of at most
/// `token_budget` source plus target tokens, shuffles the batch order and
/// interleaves tasks round-robin until all are exhausted.
pub fn plan_batches(corpus: &[TaggedExample], token_budget: usize, seed: u64) -> Result<BatchPlan, CorpusError> {
    if let Some(e) = corpus.iter().find(|e| e.tokens() > token_budget) {
        return Err(CorpusError::BudgetTooSmall { tokens: e.tokens(), budget: token_budget });
    }
    let mut by_tag: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, e) in corpus.iter().enumerate() {
        by_tag.entry(e.tag).or_default().push(i);
    }
    let mut queues: Vec<std::vec::IntoIter<Batch>> = Vec::new();
    for (&tag, indices) in &mut by_tag {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(tag as u64);
        indices.shuffle(&mut rng);
        indices.sort_by_key(|&i| corpus[i].tokens());
        let mut batches = Vec::new();
        let mut current = Vec::new();
        let mut used = 0;
        for &i in indices.iter() {
            let n = corpus[i].tokens();
            if used + n > token_budget && !current.is_empty() {
                batches.push(Batch { tag, indices: std::mem::take(&mut current) });
                used = 0;
            }
            current.push(i);
            used += n;
        }
        if !current.is_empty() {
            batches.push(Batch { tag, indices: current });
        }
        batches.shuffle(&mut rng);
        queues.push(batches.into_iter());
    }
    let mut batches = Vec::new();
    loop {
        let before = batches.len();
        for q in &mut queues {
            if let Some(b) = q.next() {
                batches.push(b);
            }
        }
        if batches.len() == before {
            break;
        }
    }
    Ok(BatchPlan { batches, token_budget })
}

/// Produces a target sequence for a source under a given task tag.
pub trait SequenceDecoder {
    /// Subword ids without bos, tag or eos; an empty result counts as a failure.
    fn decode(&self, source: &[u32], tag: u32) -> Vec<u32>;
}

/// For every gold pair, the fine-tuning example plus one example per
/// auxiliary tag whose target is the decoder's output for the source.
/// Sentences with an empty decode are skipped entirely.
pub fn build_mtl_corpus(
    decoder: &dyn SequenceDecoder,
    gold: &[TaggedExample],
    aux_tags: &[u32],
) -> Result<Vec<TaggedExample>, CorpusError> {
    let mut out = Vec::with_capacity(gold.len() * (aux_tags.len() + 1));
    let mut skipped = 0;
    for (n, g) in gold.iter().enumerate() {
        if aux_tags.contains(&g.tag) {
            return Err(CorpusError::FineTuneTaskAsAuxiliary);
        }
        let mut group = vec![g.clone()];
        for &tag in aux_tags {
            let body = decoder.decode(&g.source, tag);
            if body.is_empty() {
                warn!("sentence {n}: empty decode under tag {tag}, sentence skipped");
                break;
            }
            group.push(TaggedExample::new(tag, g.source.clone(), body));
        }
        if group.len() == aux_tags.len() + 1 {
            out.extend(group);
        } else {
            skipped += 1;
        }
    }
    if skipped > 0 {
        warn!("{skipped} of {} sentences skipped", gold.len());
    }
    Ok(out)
}

/// Uniform random subset of `round(fraction * n)` items, order kept.
pub fn subsample<T: Clone>(corpus: &[T], fraction: f64, seed: u64) -> Result<Vec<T>, CorpusError> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(CorpusError::BadFraction(fraction));
    }
    let k = ((corpus.len() as f64) * fraction).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = rand::seq::index::sample(&mut rng, corpus.len(), k).into_vec();
    idx.sort_unstable();
    Ok(idx.into_iter().map(|i| corpus[i].clone()).collect())
}

/// Reads line-aligned source and target files.
pub fn read_parallel(
    source: &Path,
    target: &Path,
    target_kind: SeqKind,
) -> Result<Vec<(LinearSeq, LinearSeq)>, CorpusError> {
    let s = std::fs::read_to_string(source).map_err(io_err(source))?;
    let t = std::fs::read_to_string(target).map_err(io_err(target))?;
    let (s, t): (Vec<&str>, Vec<&str>) = (s.lines().collect(), t.lines().collect());
    if s.len() != t.len() {
        return Err(CorpusError::Misaligned { source_lines: s.len(), target_lines: t.len() });
    }
    Ok(s.iter()
        .zip(&t)
        .map(|(a, b)| (LinearSeq::from_line(a, SeqKind::Sentence), LinearSeq::from_line(b, target_kind)))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestTask {
    pub task: Task,
    #[serde(default)]
    pub tag: Option<String>,
    pub source: PathBuf,
    pub target: PathBuf,
}

/// JSON description of a multi-task corpus. Paths are relative to the
/// manifest file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub tasks: Vec<ManifestTask>,
    #[serde(default)]
    pub filter: FilterOptions,
}

impl CorpusManifest {
    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let mut m: CorpusManifest =
            serde_json::from_str(&text).map_err(|source| CorpusError::Json { path: path.to_path_buf(), source })?;
        let base = path.parent().unwrap_or(Path::new("."));
        for t in &mut m.tasks {
            t.source = base.join(&t.source);
            t.target = base.join(&t.target);
        }
        Ok(m)
    }

    pub fn read_tasks(&self) -> Result<Vec<TaskData>, CorpusError> {
        self.tasks
            .iter()
            .map(|t| {
                let pairs = read_parallel(&t.source, &t.target, t.task.target_kind())?;
                Ok(TaskData { task: t.task, tag: t.tag.clone().unwrap_or_else(|| t.task.tag().into()), pairs })
            })
            .collect()
    }
}

/// One JSON object per line.
pub fn write_examples(path: &Path, examples: &[TaggedExample]) -> Result<(), CorpusError> {
    let mut out = String::new();
    for e in examples {
        out.push_str(&serde_json::to_string(e).expect("examples serialize"));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(io_err(path))
}

pub fn read_examples(path: &Path) -> Result<Vec<TaggedExample>, CorpusError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|source| CorpusError::Json { path: path.to_path_buf(), source }))
        .collect()
}
