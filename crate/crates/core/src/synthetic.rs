//! Seeded synthetic data: random AMR graphs, garbage token streams, tagged
//! symbol tasks and a small toy language with aligned sentences, graphs,
//! translations and parses.

use std::collections::{HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::Rng;

use crate::amr::{AmrGraph, Node, Relation, Target};
use crate::bpe::RESERVED;
use crate::corpus::TaggedExample;
use crate::preprocess::{linearize_amr, linearize_syntax, sentence_tokens, simplify_amr, LinearSeq};

const NOUNS: [&str; 100] = [
    "boy",
    "girl",
    "dog",
    "cat",
    "teacher",
    "doctor",
    "city",
    "car",
    "book",
    "house",
    "river",
    "tree",
    "bird",
    "king",
    "queen",
    "child",
    "student",
    "farmer",
    "painter",
    "sailor",
    "country",
    "war",
    "money",
    "law",
    "government",
    "school",
    "game",
    "music",
    "film",
    "story",
    "letter",
    "road",
    "bridge",
    "market",
    "price",
    "company",
    "worker",
    "army",
    "soldier",
    "island",
    "ship",
    "plane",
    "train",
    "station",
    "village",
    "forest",
    "mountain",
    "lake",
    "sea",
    "sun",
    "moon",
    "star",
    "night",
    "day",
    "year",
    "week",
    "hour",
    "family",
    "friend",
    "enemy",
    "leader",
    "party",
    "vote",
    "election",
    "court",
    "judge",
    "police",
    "crime",
    "hospital",
    "medicine",
    "disease",
    "energy",
    "oil",
    "gas",
    "water",
    "food",
    "bread",
    "wine",
    "coffee",
    "tea",
    "garden",
    "flower",
    "horse",
    "cow",
    "fish",
    "computer",
    "phone",
    "internet",
    "language",
    "word",
    "idea",
    "plan",
    "problem",
    "answer",
    "question",
    "team",
    "player",
    "ball",
    "window",
    "door",
];

const VERBS: [&str; 50] = [
    "want", "see", "like", "help", "find", "call", "chase", "meet", "follow", "watch", "push", "hold", "say", "give",
    "take", "make", "know", "think", "believe", "ask", "tell", "build", "break", "open", "close", "buy", "sell", "pay",
    "visit", "leave", "arrive", "win", "lose", "fight", "attack", "defend", "protect", "support", "oppose", "announce",
    "report", "describe", "explain", "plan", "start", "stop", "finish", "carry", "send", "receive",
];

const ROLES: [&str; 18] = [
    ":ARG0",
    ":ARG1",
    ":ARG2",
    ":ARG3",
    ":ARG4",
    ":mod",
    ":time",
    ":location",
    ":manner",
    ":purpose",
    ":poss",
    ":domain",
    ":topic",
    ":instrument",
    ":beneficiary",
    ":degree",
    ":source",
    ":destination",
];

const NAMES: [&str; 12] = [
    "\"Paris\"",
    "\"London\"",
    "\"Obama\"",
    "\"Berlin\"",
    "\"Nile\"",
    "\"Google\"",
    "\"Ada\"",
    "\"Tokyo\"",
    "\"Rome\"",
    "\"Mars\"",
    "\"Kenya\"",
    "\"Peru\"",
];

/// 200 concepts: every noun plus two senses of every verb.
pub fn concept_pool() -> Vec<String> {
    let mut pool: Vec<String> = NOUNS.iter().map(|s| s.to_string()).collect();
    for v in VERBS {
        pool.push(format!("{v}-01"));
        pool.push(format!("{v}-02"));
    }
    pool
}

/// Shape of [`random_amr`] graphs.
#[derive(Debug, Clone, PartialEq)]
pub struct AmrGenConfig {
    pub max_nodes: usize,
    /// Chance that a node gets a second incoming edge.
    pub reentrancy: f64,
    /// Chance that a node gets a constant attribute.
    pub attribute: f64,
}

impl Default for AmrGenConfig {
    fn default() -> Self {
        AmrGenConfig { max_nodes: 15, reentrancy: 0.3, attribute: 0.2 }
    }
}

/// Random rooted acyclic graph with 1..=max_nodes nodes. Edges always go
/// from an earlier to a later node and use non-inverted roles.
pub fn random_amr<R: Rng>(rng: &mut R, cfg: &AmrGenConfig) -> AmrGraph {
    let pool = concept_pool();
    let n = rng.gen_range(1..=cfg.max_nodes.max(1));
    let nodes: Vec<Node> =
        (0..n).map(|i| Node { var: format!("v{i}"), concept: pool.choose(rng).expect("pool").clone() }).collect();
    let mut relations = Vec::new();
    let mut used: HashSet<(usize, usize)> = HashSet::new();
    for i in 1..n {
        let parent = rng.gen_range(0..i);
        used.insert((parent, i));
        relations.push(Relation::edge(&nodes[parent].var, *ROLES.choose(rng).expect("roles"), &nodes[i].var));
    }
    for i in 1..n {
        if rng.gen_bool(cfg.reentrancy) {
            let from = rng.gen_range(0..i);
            if used.insert((from, i)) {
                relations.push(Relation::edge(&nodes[from].var, *ROLES.choose(rng).expect("roles"), &nodes[i].var));
            }
        }
    }
    for node in &nodes {
        if rng.gen_bool(cfg.attribute) {
            let (role, value) = match rng.gen_range(0..3) {
                0 => (":polarity", "-".to_string()),
                1 => (":quant", rng.gen_range(1..100).to_string()),
                _ => (":op1", NAMES.choose(rng).expect("names").to_string()),
            };
            relations.push(Relation::attribute(&node.var, role, value));
        }
    }
    relations.shuffle(rng);
    AmrGraph::new("v0", nodes, relations).expect("forward edges from the root form a valid graph")
}

/// Whether every duplicated subtree of `simplify_amr(g)` can be told apart
/// from the other nodes when merging copies: nodes that share a concept
/// must all have children and pairwise different unrolled subtrees, and no
/// node repeats a `(role, constant)` pair.
pub fn round_trip_eligible(g: &AmrGraph) -> bool {
    if g.relations().iter().any(|r| r.role == ":wiki") {
        return false;
    }
    let mut attrs = HashSet::new();
    for r in g.relations() {
        if let Target::Const(v) = &r.target {
            if !attrs.insert((&r.source, &r.role, v)) {
                return false;
            }
        }
    }
    let mut by_concept: HashMap<&str, Vec<&str>> = HashMap::new();
    for n in g.nodes() {
        by_concept.entry(&n.concept).or_default().push(&n.var);
    }
    let limit = g.nodes().len() * 64;
    by_concept.values().filter(|vs| vs.len() > 1).all(|vs| {
        let mut trees = HashSet::new();
        vs.iter().all(|v| g.outgoing(v).next().is_some() && trees.insert(g.unroll(v, limit)))
    })
}

/// Concept stems of `g` in node order, as a whitespace-separated sentence.
pub fn realize(g: &AmrGraph) -> String {
    g.nodes().iter().map(|n| strip_sense(&n.concept)).collect::<Vec<_>>().join(" ")
}

fn strip_sense(concept: &str) -> &str {
    match concept.rsplit_once('-') {
        Some((stem, sense)) if !stem.is_empty() && sense.chars().all(|c| c.is_ascii_digit()) => stem,
        _ => concept,
    }
}

/// Random token sequence mixing structural tokens, concepts, constants and
/// junk, of length 0..=max_len.
pub fn garbage_tokens<R: Rng>(rng: &mut R, max_len: usize) -> LinearSeq {
    const JUNK: [&str; 16] =
        ["(", ")", "(", ")", "/", ":", "\"", "\"\"", "-", "+", "amr-unknown", "x1", "é", "((", "\\", ":ARG0-of"];
    let pool = concept_pool();
    let len = rng.gen_range(0..=max_len);
    let tokens = (0..len)
        .map(|_| match rng.gen_range(0..5) {
            0 | 1 => JUNK.choose(rng).expect("junk").to_string(),
            2 => ROLES.choose(rng).expect("roles").to_string(),
            3 => pool.choose(rng).expect("pool").clone(),
            _ => match rng.gen_range(0..3) {
                0 => NAMES.choose(rng).expect("names").to_string(),
                1 => rng.gen_range(0..1000).to_string(),
                _ => (0..rng.gen_range(1..6)).map(|_| rng.gen_range('!'..='~')).collect(),
            },
        })
        .collect();
    LinearSeq::new(tokens, crate::preprocess::SeqKind::Amr)
}

/// Transformation applied by a tagged symbol task.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SymbolTask {
    Copy,
    Reverse,
}

/// Random strings over `alphabet` symbols (ids from [`RESERVED`]) with the
/// target given by `task`, tagged with `tag`.
pub fn symbol_examples<R: Rng>(
    rng: &mut R,
    n: usize,
    alphabet: u32,
    lengths: std::ops::RangeInclusive<usize>,
    task: SymbolTask,
    tag: u32,
) -> Vec<TaggedExample> {
    (0..n)
        .map(|_| {
            let len = rng.gen_range(lengths.clone());
            let source: Vec<u32> = (0..len).map(|_| RESERVED as u32 + rng.gen_range(0..alphabet)).collect();
            let mut body = source.clone();
            if task == SymbolTask::Reverse {
                body.reverse();
            }
            TaggedExample::new(tag, source, body)
        })
        .collect()
}

/// One sentence of the toy language with its aligned annotations.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyExample {
    pub sentence: LinearSeq,
    pub graph: AmrGraph,
    pub amr: LinearSeq,
    pub translation: LinearSeq,
    pub syntax: LinearSeq,
}

const ONSETS: &[u8] = b"bdfgklmnprstvz";
const VOWELS: &[u8] = b"aeiou";

/// Pronounceable pseudo-word number `i` with `syllables` syllables.
fn pseudo_word(mut i: usize, syllables: usize) -> String {
    let base = ONSETS.len() * VOWELS.len();
    let mut w = String::new();
    for _ in 0..syllables {
        let s = i % base;
        i /= base;
        w.push(ONSETS[s / VOWELS.len()] as char);
        w.push(VOWELS[s % VOWELS.len()] as char);
    }
    w
}

/// Word lists of a toy lexicon; real words first, then pseudo-words.
fn toy_words(lexicon: ToyLexicon) -> (Vec<String>, Vec<String>) {
    let words = |real: &[&str], n: usize, syllables: usize| -> Vec<String> {
        let mut out: Vec<String> = real.iter().take(n).map(|w| w.to_string()).collect();
        let fresh: Vec<String> = (0..)
            .map(|i| pseudo_word(i, syllables))
            .filter(|w| !real.contains(&w.as_str()))
            .take(n - out.len())
            .collect();
        out.extend(fresh);
        out
    };
    (words(&NOUNS, lexicon.nouns.max(2), 2), words(&VERBS, lexicon.verbs.max(1), 3))
}

/// Number of nouns and verbs used by [`toy_example`]. Beyond the built-in
/// word lists, pseudo-words are generated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ToyLexicon {
    pub nouns: usize,
    pub verbs: usize,
}

impl ToyLexicon {
    pub const SMALL: ToyLexicon = ToyLexicon { nouns: 20, verbs: 12 };
    pub const FULL: ToyLexicon = ToyLexicon { nouns: NOUNS.len(), verbs: VERBS.len() };
}

/// `agent [not] verb [patient]` sentences whose concepts are the words
/// themselves. The translation reorders them verb-first, with `na` for
/// negation.
pub fn toy_example<R: Rng>(rng: &mut R, lexicon: ToyLexicon) -> ToyExample {
    let (nouns, verbs) = toy_words(lexicon);
    let agent = nouns.choose(rng).expect("nouns").as_str();
    let verb = verbs.choose(rng).expect("verbs").as_str();
    let patient = if rng.gen_bool(0.7) {
        let i = rng.gen_range(0..nouns.len() - 1);
        Some(if nouns[i] == agent { nouns[nouns.len() - 1].as_str() } else { nouns[i].as_str() })
    } else {
        None
    };
    let negated = rng.gen_bool(0.2);

    let mut words = vec![agent];
    if negated {
        words.push("not");
    }
    words.push(verb);
    words.extend(patient);

    let mut nodes =
        vec![Node { var: "p".into(), concept: verb.into() }, Node { var: "a".into(), concept: agent.into() }];
    let mut relations = vec![Relation::edge("p", ":ARG0", "a")];
    if negated {
        relations.push(Relation::attribute("p", ":polarity", "-"));
    }
    if let Some(t) = patient {
        nodes.push(Node { var: "t".into(), concept: t.into() });
        relations.push(Relation::edge("p", ":ARG1", "t"));
    }
    let graph = AmrGraph::new("p", nodes, relations).expect("toy graphs are trees");

    let mut reordered = Vec::new();
    if negated {
        reordered.push("na".to_string());
    }
    reordered.push(verb.to_string());
    reordered.push(agent.to_string());
    reordered.extend(patient.map(str::to_string));

    let vp = match (negated, patient) {
        (false, None) => format!("(VP (V {verb}))"),
        (true, None) => format!("(VP (NEG not) (V {verb}))"),
        (false, Some(t)) => format!("(VP (V {verb}) (NP {t}))"),
        (true, Some(t)) => format!("(VP (NEG not) (V {verb}) (NP {t}))"),
    };
    let parse = format!("(S (NP {agent}) {vp})");

    ToyExample {
        sentence: sentence_tokens(&words.join(" ")),
        amr: linearize_amr(&simplify_amr(&graph).expect("toy graphs are small")),
        graph,
        translation: LinearSeq::new(reordered, crate::preprocess::SeqKind::Sentence),
        syntax: linearize_syntax(&parse, true).expect("well-formed parse"),
    }
}
