//! Brute-force Smatch over every injective variable mapping. Used as the
//! reference that hill climbing is checked against, so it deliberately
//! shares no scoring code with it.

use std::collections::HashMap;

use crate::amr::{graph_to_triples, AmrGraph, TripleSet};

use super::smatch::prepare;
use super::{MetricsError, SmatchOptions, SmatchResult};

/// Largest smaller side accepted.
pub const EXHAUSTIVE_MAX_VARS: usize = 8;
/// Upper bound on enumerated mappings.
pub const EXHAUSTIVE_MAX_MAPPINGS: u128 = 5_000_000;

fn mapping_count(n: usize, m: usize) -> u128 {
    // sum over k of C(n, k) * P(m, k)
    let mut total = 0u128;
    for k in 0..=n.min(m) {
        let mut c = 1u128;
        for i in 0..k {
            c = c * (n - i) as u128 / (i + 1) as u128;
        }
        let mut p = 1u128;
        for i in 0..k {
            p *= (m - i) as u128;
        }
        total = total.saturating_add(c.saturating_mul(p));
    }
    total
}

/// Triple with interned fields: `(kind, source, label, target)`. For
/// relations the target is a variable index, otherwise a constant id.
type Key = (u8, usize, usize, usize);

struct Interned {
    test: Vec<Key>,
    gold: HashMap<Key, usize>,
}

fn intern(test: &TripleSet, gold: &TripleSet, tv: &[String], gv: &[String]) -> Interned {
    let mut labels: HashMap<String, usize> = HashMap::new();
    let mut id = |s: &str| {
        let next = labels.len();
        *labels.entry(s.to_string()).or_insert(next)
    };
    let pos = |vars: &[String], v: &str| vars.iter().position(|x| x == v).expect("known variable");
    let mut keys = |t: &TripleSet, vars: &[String]| {
        let mut out = Vec::new();
        for (v, c) in &t.instances {
            out.push((0u8, pos(vars, v), 0, id(c)));
        }
        for (s, r, c) in &t.attributes {
            out.push((1u8, pos(vars, s), id(r), id(c)));
        }
        for (s, r, x) in &t.relations {
            out.push((2u8, pos(vars, s), id(r), pos(vars, x)));
        }
        out
    };
    let test_keys = keys(test, tv);
    let mut gold_bag = HashMap::new();
    for k in keys(gold, gv) {
        *gold_bag.entry(k).or_default() += 1;
    }
    Interned { test: test_keys, gold: gold_bag }
}

/// Matched triples when test variable `i` is sent to `map[i]`.
fn count_matches(problem: &Interned, map: &[Option<usize>]) -> usize {
    let mut taken: HashMap<Key, usize> = HashMap::new();
    let mut matched = 0;
    for &(kind, s, label, t) in &problem.test {
        let Some(gs) = map[s] else { continue };
        let gt = if kind == 2 {
            match map[t] {
                Some(x) => x,
                None => continue,
            }
        } else {
            t
        };
        let key = (kind, gs, label, gt);
        let available = problem.gold.get(&key).copied().unwrap_or(0);
        let used = taken.entry(key).or_default();
        if *used < available {
            *used += 1;
            matched += 1;
        }
    }
    matched
}

/// Exact Smatch over triple sets.
pub fn smatch_exhaustive_triples(
    test: &TripleSet,
    gold: &TripleSet,
    include_top: bool,
) -> Result<SmatchResult, MetricsError> {
    let (test, gold) = prepare(test, gold, include_top);
    let tv = test.variables();
    let gv = gold.variables();
    if tv.len().min(gv.len()) > EXHAUSTIVE_MAX_VARS || mapping_count(tv.len(), gv.len()) > EXHAUSTIVE_MAX_MAPPINGS {
        return Err(MetricsError::TooLarge { test_vars: tv.len(), gold_vars: gv.len() });
    }
    let problem = intern(&test, &gold, &tv, &gv);
    let mut best: (usize, Vec<Option<usize>>) = (0, vec![None; tv.len()]);
    let mut current = vec![None; tv.len()];
    let mut used = vec![false; gv.len()];
    enumerate(&problem, 0, &mut current, &mut used, &mut best);
    let mapping = best.1.iter().enumerate().filter_map(|(i, j)| j.map(|j| (tv[i].clone(), gv[j].clone()))).collect();
    Ok(SmatchResult::from_counts(best.0, test.len(), gold.len()).with_mapping(mapping))
}

fn enumerate(
    problem: &Interned,
    i: usize,
    current: &mut Vec<Option<usize>>,
    used: &mut [bool],
    best: &mut (usize, Vec<Option<usize>>),
) {
    if i == current.len() {
        let score = count_matches(problem, current);
        if score > best.0 {
            *best = (score, current.clone());
        }
        return;
    }
    // leave variable i unmapped
    enumerate(problem, i + 1, current, used, best);
    for j in 0..used.len() {
        if used[j] {
            continue;
        }
        used[j] = true;
        current[i] = Some(j);
        enumerate(problem, i + 1, current, used, best);
        current[i] = None;
        used[j] = false;
    }
}

/// Exact Smatch between two graphs; `TooLarge` when enumeration is infeasible.
pub fn smatch_exhaustive(test: &AmrGraph, gold: &AmrGraph) -> Result<SmatchResult, MetricsError> {
    smatch_exhaustive_triples(&graph_to_triples(test), &graph_to_triples(gold), SmatchOptions::default().include_top)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::amr::parse_penman;

    #[test]
    fn counts() {
        assert_eq!(mapping_count(1, 1), 2);
        assert_eq!(mapping_count(2, 2), 7);
        assert_eq!(mapping_count(6, 6), 13327);
    }

    #[test]
    fn single_node_pairs() {
        let boy = parse_penman("(b / boy)").unwrap();
        let girl = parse_penman("(g / girl)").unwrap();
        let r = smatch_exhaustive(&boy, &boy).unwrap();
        assert_eq!((r.matched, r.f1), (2, 1.0));
        let r = smatch_exhaustive(&boy, &girl).unwrap();
        assert_eq!((r.matched, r.f1), (0, 0.0));
    }

    #[test]
    fn too_large() {
        let mut s = String::from("(a / x");
        for i in 0..9 {
            s.push_str(&format!(" :op{i} (n{i} / y)"));
        }
        s.push(')');
        let g = parse_penman(&s).unwrap();
        assert!(matches!(smatch_exhaustive(&g, &g), Err(MetricsError::TooLarge { .. })));
    }
}
