use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use amrseq::amr::{read_corpus, write_corpus, AmrGraph};
use amrseq::bpe::{learn_bpe, subwords_from_text, subwords_to_text, tag_id, BpeError, BpeModel};
use amrseq::corpus::{
    build_joint_corpus, build_mtl_corpus, read_examples, write_examples, CorpusError, CorpusManifest, Task,
};
use amrseq::metrics::{fine_grained, smatch_corpus, SmatchOptions, SmatchResult};
use amrseq::model::{beam_search, Checkpoint, CheckpointError, Component, DecodeOptions, ModelError, ModelParams};
use amrseq::postprocess::{recover_graph, DictWikifier, PostprocessError, Wikifier};
use amrseq::preprocess::{
    linearize_amr, linearize_syntax, sentence_tokens, simplify_amr, LinearSeq, PreprocessError, SeqKind,
};
use amrseq::train::{
    evaluate, exact_match, finetune_mtl, finetune_vanilla, last_train_log, log_to_tsv, pretrain, select_best,
    selective_init, ModelDecoder, TrainError,
};
use log::{info, warn};

use crate::config::{resolve, RunConfig};
use crate::{BpeFiles, Cli, CliError, Command, Kind, Metric, Mode};

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::NonFiniteGradient { .. } | TrainError::Model(ModelError::NonFiniteLoss(_)) => {
                CliError::Numeric(e.to_string())
            }
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        TrainError::from(e).into()
    }
}

macro_rules! data_error {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Data(e.to_string())
            }
        }
    )*};
}

data_error!(CorpusError, CheckpointError, BpeError, PostprocessError, PreprocessError, amrseq::metrics::MetricsError);

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn lines(path: &Path) -> Result<Vec<String>, CliError> {
    Ok(read(path)?.lines().map(str::to_string).collect())
}

fn load_bpe(files: &BpeFiles) -> Result<BpeModel, CliError> {
    Ok(BpeModel::from_files(&read(&files.merges_file)?, &read(&files.vocab_file)?)?)
}

fn read_graphs(path: &Path) -> Result<Vec<AmrGraph>, CliError> {
    let r = read_corpus(&read(path)?);
    if let Some((i, e)) = r.skipped.first() {
        return Err(CliError::Data(format!("{}: graph {} is malformed: {e}", path.display(), i + 1)));
    }
    Ok(r.graphs)
}

fn parse_task(s: &str) -> Result<Task, CliError> {
    Task::from_str(s).or_else(|_| Task::from_tag(s)).map_err(|e| CliError::Usage(e.to_string()))
}

fn task_tag(task: Task) -> u32 {
    tag_id(task.tag()).expect("task tags are reserved")
}

/// Uses the checkpoint's own hyperparameters unless a config file was given.
fn with_checkpoint_model(cfg: &mut RunConfig, ckpt: &Checkpoint, explicit: bool) {
    if !explicit {
        cfg.model = ckpt.params.hp.clone();
    }
}

fn check_vocab(ckpt: &Checkpoint, bpe: &BpeModel) -> Result<(), CliError> {
    if ckpt.vocab_hash != bpe.fingerprint() || ckpt.params.vocab_size != bpe.vocab_size() {
        return Err(CliError::Data(format!(
            "checkpoint was trained with vocabulary {} ({} tokens), the given BPE files are {} ({} tokens)",
            ckpt.vocab_hash,
            ckpt.params.vocab_size,
            bpe.fingerprint(),
            bpe.vocab_size()
        )));
    }
    Ok(())
}

fn print_config(cfg: &RunConfig) {
    eprintln!("config: {}", serde_json::to_string(cfg).expect("config serializes"));
    eprintln!("seed: {}", cfg.seed);
}

fn save_series(dir: &Path, series: &[Checkpoint]) -> Result<(), CliError> {
    create_dir(dir)?;
    for c in series {
        let path = dir.join(format!("checkpoint-{:07}.ckpt", c.step));
        c.save(&path)?;
        info!("wrote {}", path.display());
    }
    write(&dir.join("train.tsv"), &log_to_tsv(&last_train_log()))
}

fn decode_amr(
    params: &ModelParams,
    bpe: &BpeModel,
    source: &[u32],
    opts: &DecodeOptions,
) -> Result<AmrGraph, CliError> {
    let h = beam_search(params, source, task_tag(Task::Amr), opts)?;
    Ok(recover_graph(&bpe.decode_ids(h.body(), SeqKind::Amr), None))
}

fn score_tsv(rows: &[(&str, SmatchResult)]) -> String {
    let mut out = String::from("metric\tP\tR\tF1\n");
    for (name, r) in rows {
        let _ = writeln!(out, "{name}\t{:.4}\t{:.4}\t{:.4}", r.precision, r.recall, r.f1);
    }
    out
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let explicit_config = cli.config.is_some();
    let mut cfg = resolve(cli.config.as_deref(), cli.seed, cli.threads)?;
    if cfg.threads == 0 {
        return Err(CliError::Usage("--threads must be at least 1".into()));
    }
    match cli.command {
        Command::Preprocess { kind, input, output, sentences, keep_preterminals } => {
            print_config(&cfg);
            let text = read(&input)?;
            let mut out = String::new();
            let mut snts = String::new();
            match kind {
                Kind::Amr => {
                    let r = read_corpus(&text);
                    for (i, e) in &r.skipped {
                        warn!("graph {} skipped: {e}", i + 1);
                    }
                    for g in &r.graphs {
                        match simplify_amr(g) {
                            Ok(tree) => {
                                let _ = writeln!(out, "{}", linearize_amr(&tree));
                                let _ = writeln!(snts, "{}", g.meta("snt").unwrap_or_default());
                            }
                            Err(e) => warn!("graph {} skipped: {e}", g.meta("id").unwrap_or("?")),
                        }
                    }
                }
                Kind::Syntax => {
                    for (i, line) in text.lines().enumerate() {
                        let seq = linearize_syntax(line, keep_preterminals)
                            .map_err(|e| CliError::Data(format!("line {}: {e}", i + 1)))?;
                        let _ = writeln!(out, "{seq}");
                    }
                }
                Kind::Sentence => {
                    for line in text.lines() {
                        let _ = writeln!(out, "{}", sentence_tokens(line));
                    }
                }
            }
            write(&output, &out)?;
            if let Some(p) = sentences {
                if kind != Kind::Amr {
                    return Err(CliError::Usage("--sentences only applies to --kind amr".into()));
                }
                write(&p, &snts)?;
            }
        }
        Command::Postprocess { input, output, wiki_dict } => {
            print_config(&cfg);
            let wiki = match &wiki_dict {
                Some(p) => Some(DictWikifier::from_tsv(&read(p)?)?),
                None => None,
            };
            let graphs: Vec<AmrGraph> = lines(&input)?
                .iter()
                .map(|l| {
                    recover_graph(&LinearSeq::from_line(l, SeqKind::Amr), wiki.as_ref().map(|w| w as &dyn Wikifier))
                })
                .collect();
            write(&output, &write_corpus(&graphs))?;
        }
        Command::BpeLearn { input, merges, out_merges, out_vocab } => {
            print_config(&cfg);
            let mut text = String::new();
            for p in &input {
                text.push_str(&read(p)?);
                text.push('\n');
            }
            let model = learn_bpe(text.split_whitespace(), merges)?;
            info!("{} merges, vocabulary of {}", model.merges().len(), model.vocab_size());
            write(&out_merges, &model.merges_to_string())?;
            write(&out_vocab, &model.vocab_to_string())?;
        }
        Command::BpeApply { bpe, input, output } => {
            print_config(&cfg);
            let model = load_bpe(&bpe)?;
            let mut out = String::new();
            for l in lines(&input)? {
                let _ =
                    writeln!(out, "{}", subwords_to_text(&model.apply(&LinearSeq::from_line(&l, SeqKind::Sentence))));
            }
            write(&output, &out)?;
        }
        Command::BpeDecode { bpe, input, output } => {
            print_config(&cfg);
            let model = load_bpe(&bpe)?;
            let mut out = String::new();
            for l in lines(&input)? {
                let _ = writeln!(out, "{}", model.decode(&subwords_from_text(&l), SeqKind::Sentence));
            }
            write(&output, &out)?;
        }
        Command::BuildCorpus { manifest, bpe, output } => {
            print_config(&cfg);
            let model = load_bpe(&bpe)?;
            let m = CorpusManifest::load(&manifest)?;
            let corpus = build_joint_corpus(&m.read_tasks()?, &model, Some(&m.filter))?;
            info!("{} examples", corpus.len());
            write_examples(&output, &corpus)?;
        }
        Command::BuildMtlCorpus { checkpoint, gold, aux, output } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            with_checkpoint_model(&mut cfg, &ckpt, explicit_config);
            print_config(&cfg);
            let tags: Vec<u32> = aux.iter().map(|a| parse_task(a).map(task_tag)).collect::<Result<_, _>>()?;
            let gold = read_examples(&gold)?;
            let decoder = ModelDecoder { params: &ckpt.params, opts: cfg.decode };
            let corpus = build_mtl_corpus(&decoder, &gold, &tags)?;
            info!("{} examples from {} gold pairs", corpus.len(), gold.len());
            write_examples(&output, &corpus)?;
        }
        Command::Pretrain { corpus, bpe, out_dir } => {
            print_config(&cfg);
            let model = load_bpe(&bpe)?;
            let examples = read_examples(&corpus)?;
            let series = pretrain(&cfg.model, model.vocab_size(), &model.fingerprint(), &examples, cfg.seed)?;
            save_series(&out_dir, &series)?;
        }
        Command::Finetune { mode, checkpoint, corpus, out_dir, init } => {
            let mut ckpt = Checkpoint::load(&checkpoint)?;
            with_checkpoint_model(&mut cfg, &ckpt, explicit_config);
            print_config(&cfg);
            let components: Vec<Component> = init
                .iter()
                .map(|c| Component::from_str(c).map_err(|e| CliError::Usage(e.to_string())))
                .collect::<Result<_, _>>()?;
            if Component::ALL.iter().any(|c| !components.contains(c)) {
                let params =
                    selective_init(&cfg.model, ckpt.params.vocab_size, &ckpt.vocab_hash, &ckpt, &components, cfg.seed)?;
                ckpt = Checkpoint { params, ..ckpt };
            }
            let examples = read_examples(&corpus)?;
            let series = match mode {
                Mode::Vanilla => {
                    let amr = task_tag(Task::Amr);
                    if let Some(e) = examples.iter().find(|e| e.tag != amr) {
                        return Err(CliError::Data(format!(
                            "vanilla fine-tuning expects AMR examples only, found tag id {}",
                            e.tag
                        )));
                    }
                    finetune_vanilla(&ckpt, &cfg.model, &examples, cfg.seed)?
                }
                Mode::Mtl => finetune_mtl(&ckpt, &cfg.model, &examples, cfg.seed)?,
            };
            save_series(&out_dir, &series)?;
        }
        Command::SelectBest { checkpoints, dev, metric, gold, merges_file, vocab_file, output } => {
            print_config(&cfg);
            let dev_examples = read_examples(&dev)?;
            let ckpts: Vec<Checkpoint> = checkpoints.iter().map(|p| Checkpoint::load(p)).collect::<Result<_, _>>()?;
            let bpe_and_gold = match metric {
                Metric::Smatch => {
                    let (Some(m), Some(v), Some(g)) = (merges_file, vocab_file, gold) else {
                        return Err(CliError::Usage(
                            "--metric smatch needs --gold, --merges-file and --vocab-file".into(),
                        ));
                    };
                    let bpe = load_bpe(&BpeFiles { merges_file: m, vocab_file: v })?;
                    let gold = read_graphs(&g)?;
                    if gold.len() != dev_examples.len() {
                        return Err(CliError::Data(format!(
                            "{} dev examples but {} gold graphs",
                            dev_examples.len(),
                            gold.len()
                        )));
                    }
                    Some((bpe, gold))
                }
                _ => None,
            };
            let mut report = String::from("checkpoint\tstep\tscore\n");
            let mut failure: Option<CliError> = None;
            let mut index = 0;
            let (best, score) = select_best(&ckpts, |c| {
                let s = match (&metric, &bpe_and_gold) {
                    (Metric::Loss, _) => -evaluate(&c.params, &dev_examples)?.loss,
                    (Metric::Exact, _) => exact_match(&c.params, &dev_examples, &cfg.decode)?,
                    (Metric::Smatch, Some((bpe, gold))) => {
                        if let Err(e) = check_vocab(c, bpe) {
                            failure.get_or_insert(e);
                            return Ok(f64::NEG_INFINITY);
                        }
                        let mut predicted = Vec::with_capacity(dev_examples.len());
                        for e in &dev_examples {
                            match decode_amr(&c.params, bpe, &e.source, &cfg.decode) {
                                Ok(g) => predicted.push(g),
                                Err(err) => {
                                    failure.get_or_insert(err);
                                    return Ok(f64::NEG_INFINITY);
                                }
                            }
                        }
                        smatch_corpus(&predicted, gold, &SmatchOptions { seed: cfg.seed, ..SmatchOptions::default() })
                            .map(|r| r.f1)
                            .unwrap_or(f64::NEG_INFINITY)
                    }
                    (Metric::Smatch, None) => unreachable!("checked above"),
                };
                let _ = writeln!(report, "{}\t{}\t{s:.6}", checkpoints[index].display(), c.step);
                index += 1;
                Ok(s)
            })?;
            if let Some(e) = failure {
                return Err(e);
            }
            print!("{report}");
            println!("best\t{}\t{score:.6}", checkpoints[best].display());
            if let Some(out) = output {
                ckpts[best].save(&out)?;
            }
        }
        Command::Decode { checkpoint, bpe, input, output, task } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            with_checkpoint_model(&mut cfg, &ckpt, explicit_config);
            print_config(&cfg);
            let model = load_bpe(&bpe)?;
            check_vocab(&ckpt, &model)?;
            let task = parse_task(&task)?;
            let mut out = String::new();
            for l in lines(&input)? {
                let source = model.encode(&sentence_tokens(&l));
                let body = if source.is_empty() {
                    Vec::new()
                } else {
                    beam_search(&ckpt.params, &source, task_tag(task), &cfg.decode)?.body().to_vec()
                };
                let _ = writeln!(out, "{}", model.decode_ids(&body, task.target_kind()));
            }
            write(&output, &out)?;
        }
        Command::Smatch { test, gold, fine_grained: fine, restarts, no_top } => {
            print_config(&cfg);
            if restarts == 0 {
                return Err(CliError::Usage("--restarts must be at least 1".into()));
            }
            let opts = SmatchOptions { restarts, seed: cfg.seed, include_top: !no_top };
            let (t, g) = (read_graphs(&test)?, read_graphs(&gold)?);
            let mut rows = vec![("Smatch", smatch_corpus(&t, &g, &opts)?)];
            if fine {
                rows.extend(fine_grained(&t, &g, &opts)?);
            }
            print!("{}", score_tsv(&rows));
        }
    }
    Ok(())
}
