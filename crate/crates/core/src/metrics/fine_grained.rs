use std::collections::{HashMap, HashSet};

use crate::amr::{graph_to_triples, AmrGraph, Target, TripleSet, TOP_ROLE};

use super::{smatch_triples, MetricsError, SmatchOptions, SmatchResult};

/// Names of the fine-grained scores, in reporting order.
pub const FINE_GRAINED_METRICS: [&str; 8] =
    ["Unlabeled", "No WSD", "Reentrancy", "Concepts", "NER", "Wiki", "Negations", "SRL"];

const UNLABELED_ROLE: &str = ":label";

fn unlabeled(t: &TripleSet) -> TripleSet {
    let mut t = t.clone();
    for r in &mut t.relations {
        r.1 = UNLABELED_ROLE.into();
    }
    for a in &mut t.attributes {
        if a.1 != TOP_ROLE {
            a.1 = UNLABELED_ROLE.into();
        }
    }
    t
}

fn strip_sense(concept: &str) -> String {
    match concept.rsplit_once('-') {
        Some((stem, sense)) if !stem.is_empty() && !sense.is_empty() && sense.chars().all(|c| c.is_ascii_digit()) => {
            stem.to_string()
        }
        _ => concept.to_string(),
    }
}

fn no_wsd(t: &TripleSet) -> TripleSet {
    let mut t = t.clone();
    for (_, c) in &mut t.instances {
        *c = strip_sense(c);
    }
    for a in &mut t.attributes {
        if a.1 == TOP_ROLE {
            a.2 = strip_sense(&a.2);
        }
    }
    t
}

/// Keeps the chosen relation triples plus the instances of their endpoints.
fn restrict(t: &TripleSet, keep: impl Fn(&(String, String, String)) -> bool) -> TripleSet {
    let relations: Vec<_> = t.relations.iter().filter(|r| keep(r)).cloned().collect();
    let vars: HashSet<&str> = relations.iter().flat_map(|(s, _, x)| [s.as_str(), x.as_str()]).collect();
    let instances = t.instances.iter().filter(|(v, _)| vars.contains(v.as_str())).cloned().collect();
    TripleSet { instances, relations, attributes: Vec::new() }
}

fn reentrancies(t: &TripleSet) -> TripleSet {
    let mut indeg: HashMap<&str, usize> = HashMap::new();
    for (_, _, x) in &t.relations {
        *indeg.entry(x.as_str()).or_default() += 1;
    }
    let reentrant: HashSet<String> = indeg.into_iter().filter(|&(_, d)| d > 1).map(|(v, _)| v.to_string()).collect();
    restrict(t, |(_, _, x)| reentrant.contains(x))
}

fn is_arg_role(role: &str) -> bool {
    role.strip_prefix(":ARG").is_some_and(|n| !n.is_empty() && n.chars().all(|c| c.is_ascii_digit()))
}

fn srl(t: &TripleSet) -> TripleSet {
    restrict(t, |(_, r, _)| is_arg_role(r))
}

type Bag = HashMap<String, usize>;

fn bag(items: impl IntoIterator<Item = String>) -> Bag {
    let mut b = Bag::new();
    for i in items {
        *b.entry(i).or_default() += 1;
    }
    b
}

fn bag_result(test: &Bag, gold: &Bag) -> SmatchResult {
    let matched = test.iter().map(|(k, &c)| c.min(gold.get(k).copied().unwrap_or(0))).sum();
    SmatchResult::from_counts(matched, test.values().sum(), gold.values().sum())
}

fn concepts(g: &AmrGraph) -> Bag {
    bag(g.nodes().iter().map(|n| n.concept.clone()))
}

fn ner(g: &AmrGraph) -> Bag {
    bag(g.named_entities().into_iter().map(|e| format!("{}\t{}", e.entity_type, e.name)))
}

fn wiki(g: &AmrGraph) -> Bag {
    bag(g.attributes().filter(|(_, r, _)| *r == ":wiki").map(|(_, _, v)| v.to_string()))
}

fn negations(g: &AmrGraph) -> Bag {
    bag(g
        .relations()
        .iter()
        .filter(|r| r.role == ":polarity" && r.target == Target::Const("-".into()))
        .map(|r| g.concept(&r.source).unwrap_or_default().to_string()))
}

/// The eight fine-grained scores, micro-averaged over the corpus.
pub fn fine_grained(
    test: &[AmrGraph],
    gold: &[AmrGraph],
    opts: &SmatchOptions,
) -> Result<Vec<(&'static str, SmatchResult)>, MetricsError> {
    if test.len() != gold.len() {
        return Err(MetricsError::AlignmentMismatch { test: test.len(), gold: gold.len() });
    }
    let mut per: HashMap<&'static str, Vec<SmatchResult>> = HashMap::new();
    for (t, g) in test.iter().zip(gold) {
        let tt = graph_to_triples(t);
        let gt = graph_to_triples(g);
        let mut push = |name: &'static str, r: SmatchResult| per.entry(name).or_default().push(r);
        push("Unlabeled", smatch_triples(&unlabeled(&tt), &unlabeled(&gt), opts));
        push("No WSD", smatch_triples(&no_wsd(&tt), &no_wsd(&gt), opts));
        push("Reentrancy", smatch_triples(&reentrancies(&tt), &reentrancies(&gt), opts));
        push("SRL", smatch_triples(&srl(&tt), &srl(&gt), opts));
        push("Concepts", bag_result(&concepts(t), &concepts(g)));
        push("NER", bag_result(&ner(t), &ner(g)));
        push("Wiki", bag_result(&wiki(t), &wiki(g)));
        push("Negations", bag_result(&negations(t), &negations(g)));
    }
    Ok(FINE_GRAINED_METRICS
        .iter()
        .map(|&name| (name, SmatchResult::sum(per.get(name).map(Vec::as_slice).unwrap_or(&[]))))
        .collect())
}
