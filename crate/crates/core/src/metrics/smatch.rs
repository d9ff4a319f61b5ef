use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::amr::{graph_to_triples, AmrGraph, TripleSet, TOP_ROLE};

use super::{SmatchOptions, SmatchResult};

/// Precomputed match weights between the variables of two triple sets.
struct Problem {
    test_vars: Vec<String>,
    gold_vars: Vec<String>,
    /// `unary[i][j]`: instance + attribute triples matched when test var i maps to gold var j.
    unary: Vec<Vec<u32>>,
    /// Test relation triples `(i, role, k)` with multiplicity.
    relations: Vec<(usize, u32, usize, u32)>,
    /// Gold relation multiplicities keyed by `(j, role, l)`.
    gold_relations: HashMap<(usize, u32, usize), u32>,
    /// Relation indices touching each test variable.
    touching: Vec<Vec<usize>>,
    test_total: usize,
    gold_total: usize,
}

fn strip_top(t: &TripleSet) -> TripleSet {
    let mut t = t.clone();
    t.attributes.retain(|(_, r, _)| r != TOP_ROLE);
    t
}

impl Problem {
    fn new(test: &TripleSet, gold: &TripleSet) -> Self {
        let test_vars = test.variables();
        let gold_vars = gold.variables();
        let ti: HashMap<&str, usize> = test_vars.iter().enumerate().map(|(i, v)| (v.as_str(), i)).collect();
        let gi: HashMap<&str, usize> = gold_vars.iter().enumerate().map(|(i, v)| (v.as_str(), i)).collect();

        // Unary triples per variable as (role, value) multisets; instance uses role "instance".
        let unary_of = |t: &TripleSet, index: &HashMap<&str, usize>, n: usize| {
            let mut per: Vec<HashMap<(String, String), u32>> = vec![HashMap::new(); n];
            for (v, c) in &t.instances {
                *per[index[v.as_str()]].entry(("instance".into(), c.clone())).or_default() += 1;
            }
            for (v, r, c) in &t.attributes {
                *per[index[v.as_str()]].entry((r.clone(), c.clone())).or_default() += 1;
            }
            per
        };
        let tu = unary_of(test, &ti, test_vars.len());
        let gu = unary_of(gold, &gi, gold_vars.len());
        let unary = tu
            .iter()
            .map(|a| gu.iter().map(|b| a.iter().map(|(k, &c)| c.min(b.get(k).copied().unwrap_or(0))).sum()).collect())
            .collect();

        let mut roles: HashMap<String, u32> = HashMap::new();
        let mut role_id = |r: &str| {
            let next = roles.len() as u32;
            *roles.entry(r.to_string()).or_insert(next)
        };
        let mut test_rel: HashMap<(usize, u32, usize), u32> = HashMap::new();
        for (s, r, t) in &test.relations {
            *test_rel.entry((ti[s.as_str()], role_id(r), ti[t.as_str()])).or_default() += 1;
        }
        let mut gold_relations = HashMap::new();
        for (s, r, t) in &gold.relations {
            *gold_relations.entry((gi[s.as_str()], role_id(r), gi[t.as_str()])).or_default() += 1;
        }
        let mut relations: Vec<_> = test_rel.into_iter().map(|((i, r, k), c)| (i, r, k, c)).collect();
        relations.sort_unstable();
        let mut touching = vec![Vec::new(); test_vars.len()];
        for (idx, &(i, _, k, _)) in relations.iter().enumerate() {
            touching[i].push(idx);
            if k != i {
                touching[k].push(idx);
            }
        }
        Problem {
            test_vars,
            gold_vars,
            unary,
            relations,
            gold_relations,
            touching,
            test_total: test.len(),
            gold_total: gold.len(),
        }
    }

    fn relation_score(&self, idx: usize, map: &[Option<usize>]) -> u32 {
        let (i, r, k, c) = self.relations[idx];
        match (map[i], map[k]) {
            (Some(j), Some(l)) => c.min(self.gold_relations.get(&(j, r, l)).copied().unwrap_or(0)),
            _ => 0,
        }
    }

    fn score(&self, map: &[Option<usize>]) -> u32 {
        let unary: u32 = map.iter().enumerate().filter_map(|(i, j)| j.map(|j| self.unary[i][j])).sum();
        let rel: u32 = (0..self.relations.len()).map(|idx| self.relation_score(idx, map)).sum();
        unary + rel
    }

    /// Score contributions that depend on any of `vars`.
    fn local_score(&self, map: &[Option<usize>], vars: &[usize]) -> i64 {
        let mut total = 0i64;
        for &v in vars {
            if let Some(j) = map[v] {
                total += self.unary[v][j] as i64;
            }
        }
        for (n, &v) in vars.iter().enumerate() {
            for &idx in &self.touching[v] {
                let (i, _, k, _) = self.relations[idx];
                let other = if i == v { k } else { i };
                // count each relation once when both endpoints are in `vars`
                if vars[..n].contains(&other) {
                    continue;
                }
                total += self.relation_score(idx, map) as i64;
            }
        }
        total
    }

    fn smart_init(&self, rng: &mut ChaCha8Rng) -> Vec<Option<usize>> {
        let mut used = vec![false; self.gold_vars.len()];
        let mut map = vec![None; self.test_vars.len()];
        // same-concept candidates first, in variable order
        for (i, slot) in map.iter_mut().enumerate() {
            let best = (0..self.gold_vars.len())
                .filter(|&j| !used[j] && self.unary[i][j] > 0)
                .max_by_key(|&j| (self.unary[i][j], std::cmp::Reverse(j)));
            if let Some(j) = best {
                used[j] = true;
                *slot = Some(j);
            }
        }
        self.complete_randomly(&mut map, &mut used, rng);
        map
    }

    fn random_init(&self, rng: &mut ChaCha8Rng) -> Vec<Option<usize>> {
        let mut used = vec![false; self.gold_vars.len()];
        let mut map = vec![None; self.test_vars.len()];
        self.complete_randomly(&mut map, &mut used, rng);
        map
    }

    fn complete_randomly(&self, map: &mut [Option<usize>], used: &mut [bool], rng: &mut ChaCha8Rng) {
        let mut free: Vec<usize> = (0..used.len()).filter(|&j| !used[j]).collect();
        free.shuffle(rng);
        let mut order: Vec<usize> = (0..map.len()).filter(|&i| map[i].is_none()).collect();
        order.shuffle(rng);
        for i in order {
            if let Some(j) = free.pop() {
                used[j] = true;
                map[i] = Some(j);
            }
        }
    }

    /// Steepest-ascent hill climbing over reassign and swap moves.
    fn climb(&self, mut map: Vec<Option<usize>>) -> (u32, Vec<Option<usize>>) {
        let n = self.test_vars.len();
        let m = self.gold_vars.len();
        loop {
            let mut used = vec![false; m];
            for j in map.iter().flatten() {
                used[*j] = true;
            }
            let mut best_gain = 0i64;
            let mut best_move: Option<(usize, usize, bool)> = None;
            for i in 0..n {
                let before = self.local_score(&map, &[i]);
                for j in 0..m {
                    if used[j] {
                        continue;
                    }
                    let old = map[i];
                    map[i] = Some(j);
                    let gain = self.local_score(&map, &[i]) - before;
                    map[i] = old;
                    if gain > best_gain {
                        best_gain = gain;
                        best_move = Some((i, j, false));
                    }
                }
            }
            for i in 0..n {
                for k in i + 1..n {
                    if map[i] == map[k] {
                        continue;
                    }
                    let before = self.local_score(&map, &[i, k]);
                    map.swap(i, k);
                    let gain = self.local_score(&map, &[i, k]) - before;
                    map.swap(i, k);
                    if gain > best_gain {
                        best_gain = gain;
                        best_move = Some((i, k, true));
                    }
                }
            }
            match best_move {
                None => break,
                Some((i, k, true)) => map.swap(i, k),
                Some((i, j, false)) => map[i] = Some(j),
            }
        }
        (self.score(&map), map)
    }
}

pub(crate) fn prepare(test: &TripleSet, gold: &TripleSet, include_top: bool) -> (TripleSet, TripleSet) {
    if include_top {
        (test.clone(), gold.clone())
    } else {
        (strip_top(test), strip_top(gold))
    }
}

/// Hill-climbing Smatch between two triple sets.
pub fn smatch_triples(test: &TripleSet, gold: &TripleSet, opts: &SmatchOptions) -> SmatchResult {
    let (test, gold) = prepare(test, gold, opts.include_top);
    let problem = Problem::new(&test, &gold);
    let mut best: Option<(u32, Vec<Option<usize>>)> = None;
    for restart in 0..opts.restarts.max(1) {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        rng.set_stream(restart as u64);
        let init = if restart == 0 { problem.smart_init(&mut rng) } else { problem.random_init(&mut rng) };
        let (score, map) = problem.climb(init);
        if best.as_ref().is_none_or(|(b, _)| score > *b) {
            best = Some((score, map));
        }
    }
    let (matched, map) = best.expect("at least one restart");
    let mapping = map
        .iter()
        .enumerate()
        .filter_map(|(i, j)| j.map(|j| (problem.test_vars[i].clone(), problem.gold_vars[j].clone())))
        .collect();
    SmatchResult::from_counts(matched as usize, problem.test_total, problem.gold_total).with_mapping(mapping)
}

/// Smatch between two graphs.
pub fn smatch(test: &AmrGraph, gold: &AmrGraph, restarts: usize, seed: u64) -> SmatchResult {
    let opts = SmatchOptions { restarts, seed, ..SmatchOptions::default() };
    smatch_triples(&graph_to_triples(test), &graph_to_triples(gold), &opts)
}
