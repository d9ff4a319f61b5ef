use amrseq::amr::{parse_penman, print_penman, AmrGraph, Node, Relation, Target};
use amrseq::bpe::learn_bpe;
use amrseq::corpus::{epoch_seed, plan_batches, TaggedExample};
use amrseq::metrics::smatch;
use amrseq::model::{Checkpoint, Hyperparams, ModelParams};
use amrseq::postprocess::{recover_graph, repair_brackets};
use amrseq::preprocess::{LinearSeq, SeqKind};
use amrseq::synthetic::{garbage_tokens, random_amr, AmrGenConfig};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn graph(seed: u64) -> AmrGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    random_amr(&mut rng, &AmrGenConfig { max_nodes: 8, ..AmrGenConfig::default() })
}

fn rename(g: &AmrGraph, prefix: &str) -> AmrGraph {
    let name = |v: &str| format!("{prefix}{v}");
    let nodes = g.nodes().iter().map(|n| Node { var: name(&n.var), concept: n.concept.clone() }).collect();
    let relations = g
        .relations()
        .iter()
        .map(|r| Relation {
            source: name(&r.source),
            role: r.role.clone(),
            target: match &r.target {
                Target::Node(v) => Target::Node(name(v)),
                Target::Const(c) => Target::Const(c.clone()),
            },
        })
        .collect();
    AmrGraph::new(name(g.top()), nodes, relations).unwrap()
}

fn balanced(seq: &LinearSeq) -> bool {
    let mut depth = 0i64;
    for t in &seq.tokens {
        match t.as_str() {
            "(" => depth += 1,
            ")" => depth -= 1,
            _ => {}
        }
        if depth < 0 {
            return false;
        }
    }
    depth == 0
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn smatch_self_score_is_one(seed in any::<u64>()) {
        let g = graph(seed);
        prop_assert_eq!(smatch(&g, &g, 4, seed).f1, 1.0);
    }

    #[test]
    fn smatch_ignores_variable_names(seed in any::<u64>()) {
        let g = graph(seed);
        let h = rename(&g, "z");
        prop_assert_eq!(smatch(&h, &g, 4, seed).f1, 1.0);
    }

    #[test]
    fn smatch_counts_are_consistent(a in any::<u64>(), b in any::<u64>()) {
        let (x, y) = (graph(a), graph(b));
        let xy = smatch(&x, &y, 4, 7);
        let yx = smatch(&y, &x, 4, 7);
        prop_assert!(xy.f1 >= 0.0 && xy.f1 <= 1.0);
        prop_assert!(xy.matched <= xy.test_total.min(xy.gold_total));
        prop_assert_eq!(xy.test_total, yx.gold_total);
    }

    #[test]
    fn penman_print_parse_round_trip(seed in any::<u64>()) {
        let g = graph(seed);
        let back = parse_penman(&print_penman(&g)).unwrap();
        prop_assert_eq!(smatch(&back, &g, 4, 1).f1, 1.0);
    }

    #[test]
    fn repair_brackets_always_balances(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let seq = garbage_tokens(&mut rng, 40);
        prop_assert!(balanced(&repair_brackets(&seq)));
        let g = recover_graph(&seq, None);
        prop_assert!(g.validate().is_ok());
    }

    #[test]
    fn bpe_round_trip(words in prop::collection::vec("[a-zé@()]{1,8}", 1..30), merges in 0usize..60) {
        let model = learn_bpe(words.iter().map(String::as_str), merges).unwrap();
        let seq = LinearSeq::new(words.clone(), SeqKind::Sentence);
        prop_assert_eq!(model.decode(&model.apply(&seq), SeqKind::Sentence), seq.clone());
        prop_assert_eq!(model.decode_ids(&model.encode(&seq), SeqKind::Sentence), seq);
    }

    #[test]
    fn batches_respect_budget_and_cover_corpus(
        lens in prop::collection::vec((0u32..3, 1usize..20, 1usize..20), 1..80),
        budget in 40usize..200,
        seed in any::<u64>(),
        epoch in 0u64..5,
    ) {
        let corpus: Vec<TaggedExample> = lens
            .iter()
            .map(|&(t, s, b)| TaggedExample::new(4 + t, vec![9; s], vec![9; b]))
            .collect();
        let plan = plan_batches(&corpus, budget, epoch_seed(seed, epoch)).unwrap();
        let mut seen = vec![0; corpus.len()];
        for batch in &plan.batches {
            let used: usize = batch.indices.iter().map(|&i| corpus[i].tokens()).sum();
            prop_assert!(used <= budget);
            for &i in &batch.indices {
                prop_assert_eq!(corpus[i].tag, batch.tag);
                seen[i] += 1;
            }
        }
        prop_assert!(seen.iter().all(|&n| n == 1));
    }

    #[test]
    fn checkpoint_round_trip(seed in any::<u64>(), step in any::<u64>()) {
        let hp = Hyperparams { layers: 1, heads: 2, d_model: 8, d_ff: 16, ..Hyperparams::tiny() };
        let params = ModelParams::new(&hp, 12, seed).unwrap();
        let ckpt = Checkpoint { params, vocab_hash: format!("{seed:x}"), step, tags: vec!["<to_mt>".into()] };
        let back = Checkpoint::from_bytes(&ckpt.to_bytes()).unwrap();
        prop_assert_eq!(back.params, ckpt.params);
        prop_assert_eq!(back.step, step);
        prop_assert_eq!(back.vocab_hash, ckpt.vocab_hash);
        prop_assert_eq!(back.tags, ckpt.tags);
    }
}
