//! `amrseq`: every stage of the pipeline behind one binary.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numeric(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "amrseq", version, about = "Seq2seq AMR parsing with multi-task pre-training")]
pub struct Cli {
    /// JSON run configuration: a preset name plus hyperparameter overrides.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,
    /// Upper bound on worker threads.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Kind {
    Amr,
    Syntax,
    Sentence,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Vanilla,
    Mtl,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Metric {
    Smatch,
    Loss,
    Exact,
}

#[derive(Debug, Args)]
pub struct BpeFiles {
    /// Merge file written by `bpe-learn`.
    #[arg(long)]
    merges_file: PathBuf,
    /// Vocabulary file written by `bpe-learn`.
    #[arg(long)]
    vocab_file: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Linearize AMR graphs, parse trees or sentences, one sequence per line.
    Preprocess {
        #[arg(long, value_enum, default_value_t = Kind::Amr)]
        kind: Kind,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// For AMR input: also write each graph's `::snt` sentence, aligned.
        #[arg(long)]
        sentences: Option<PathBuf>,
        /// For syntax input: keep part-of-speech nodes.
        #[arg(long)]
        keep_preterminals: bool,
    },
    /// Turn predicted AMR sequences back into PENMAN graphs.
    Postprocess {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// `name<TAB>title` dictionary; without it no `:wiki` is added.
        #[arg(long)]
        wiki_dict: Option<PathBuf>,
    },
    /// Learn a joint BPE model from whitespace-tokenized files.
    BpeLearn {
        #[arg(long, required = true, num_args = 1..)]
        input: Vec<PathBuf>,
        #[arg(long, default_value_t = amrseq::bpe::DEFAULT_NUM_MERGES)]
        merges: usize,
        #[arg(long)]
        out_merges: PathBuf,
        #[arg(long)]
        out_vocab: PathBuf,
    },
    /// Segment token lines into subwords (`@@` marks a continued piece).
    BpeApply {
        #[command(flatten)]
        bpe: BpeFiles,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Join subword lines back into tokens.
    BpeDecode {
        #[command(flatten)]
        bpe: BpeFiles,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Encode and tag every task listed in a corpus manifest.
    BuildCorpus {
        #[arg(long)]
        manifest: PathBuf,
        #[command(flatten)]
        bpe: BpeFiles,
        #[arg(long)]
        output: PathBuf,
    },
    /// Add examples decoded by a pre-trained model for auxiliary tasks.
    BuildMtlCorpus {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        gold: PathBuf,
        /// Auxiliary tasks (`mt`, `syn`) or their tags.
        #[arg(long, required = true, value_delimiter = ',')]
        aux: Vec<String>,
        #[arg(long)]
        output: PathBuf,
    },
    /// Joint pre-training from scratch.
    Pretrain {
        #[arg(long)]
        corpus: PathBuf,
        #[command(flatten)]
        bpe: BpeFiles,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Fine-tune a pre-trained checkpoint.
    Finetune {
        #[arg(long, value_enum, default_value_t = Mode::Vanilla)]
        mode: Mode,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Components copied from the checkpoint; the rest start fresh.
        #[arg(long, value_delimiter = ',', default_value = "embedding,encoder,decoder")]
        init: Vec<String>,
    },
    /// Score checkpoints on a dev set and report the best one.
    SelectBest {
        #[arg(long, required = true, num_args = 1..)]
        checkpoints: Vec<PathBuf>,
        /// Encoded dev examples (JSON lines).
        #[arg(long)]
        dev: PathBuf,
        #[arg(long, value_enum, default_value_t = Metric::Smatch)]
        metric: Metric,
        /// Gold PENMAN graphs aligned with `--dev`, for `smatch`.
        #[arg(long)]
        gold: Option<PathBuf>,
        #[arg(long)]
        merges_file: Option<PathBuf>,
        #[arg(long)]
        vocab_file: Option<PathBuf>,
        /// Copy the winner here.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Beam-search decode token lines under a task tag.
    Decode {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        bpe: BpeFiles,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value = "amr")]
        task: String,
    },
    /// Smatch (and optionally fine-grained scores) as `metric P R F1` TSV.
    Smatch {
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        gold: PathBuf,
        #[arg(long)]
        fine_grained: bool,
        #[arg(long, default_value_t = 4)]
        restarts: usize,
        /// Leave the `TOP` triple out of the counts.
        #[arg(long)]
        no_top: bool,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).format_timestamp(None).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
