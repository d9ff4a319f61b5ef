//! From decoder output back to a full AMR graph.

use std::collections::{HashMap, HashSet};

use log::warn;
use thiserror::Error;

use crate::amr::{looks_like_variable, AmrGraph, AmrTree, Node, Relation, Target, TreeChild};
use crate::preprocess::{LinearSeq, SeqKind};

/// Concept used wherever a node has to be invented.
pub const PLACEHOLDER_CONCEPT: &str = "amr-unknown";

/// Largest tree compared when looking for duplicated subtrees.
const UNROLL_LIMIT: usize = 100_000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PostprocessError {
    #[error("malformed sequence at token {position}: {message}")]
    Malformed { message: String, position: usize },
    #[error("wiki dictionary line {line}: {message}")]
    WikiDictionary { line: usize, message: String },
}

fn is_role(tok: &str) -> bool {
    tok.len() > 1 && tok.starts_with(':')
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum State {
    Start,
    Concept,
    Body,
    Value,
    Done,
}

/// Makes any token sequence well formed.
///
/// Surplus `)` and everything after the top node closes are dropped, a
/// stray `(` where a relation is expected is skipped with its subtree, a
/// relation without a value gets `( amr-unknown )`, and missing `)` are
/// appended.
pub fn repair_brackets(seq: &LinearSeq) -> LinearSeq {
    let toks = &seq.tokens;
    let mut out: Vec<String> = Vec::with_capacity(toks.len() + 4);
    let mut depth = 0usize;
    let mut state = State::Start;
    let placeholder = |out: &mut Vec<String>| {
        out.extend(["(", PLACEHOLDER_CONCEPT, ")"].map(String::from));
    };
    let mut i = 0;
    while i < toks.len() {
        let tok = toks[i].as_str();
        match state {
            State::Start => {
                if tok == "(" {
                    out.push(tok.into());
                    depth = 1;
                    state = State::Concept;
                }
                i += 1;
            }
            State::Concept => {
                if tok == "(" {
                    i += 1;
                } else if tok == ")" || is_role(tok) {
                    out.push(PLACEHOLDER_CONCEPT.into());
                    state = State::Body;
                } else {
                    out.push(tok.into());
                    state = State::Body;
                    i += 1;
                }
            }
            State::Body => {
                if tok == ")" {
                    out.push(tok.into());
                    depth -= 1;
                    state = if depth == 0 { State::Done } else { State::Body };
                    i += 1;
                } else if is_role(tok) {
                    out.push(tok.into());
                    state = State::Value;
                    i += 1;
                } else if tok == "(" {
                    let mut level = 0usize;
                    while i < toks.len() {
                        match toks[i].as_str() {
                            "(" => level += 1,
                            ")" => level -= 1,
                            _ => {}
                        }
                        i += 1;
                        if level == 0 {
                            break;
                        }
                    }
                } else {
                    i += 1;
                }
            }
            State::Value => {
                if tok == "(" {
                    out.push(tok.into());
                    depth += 1;
                    state = State::Concept;
                    i += 1;
                } else if tok == ")" || is_role(tok) {
                    placeholder(&mut out);
                    state = State::Body;
                } else {
                    out.push(tok.into());
                    state = State::Body;
                    i += 1;
                }
            }
            State::Done => break,
        }
    }
    match state {
        State::Concept => out.push(PLACEHOLDER_CONCEPT.into()),
        State::Value => placeholder(&mut out),
        _ => {}
    }
    out.extend(std::iter::repeat_n(")".to_string(), depth));
    LinearSeq::new(out, SeqKind::Amr)
}

/// Inverse of `linearize_amr` on well-formed input.
pub fn delinearize(seq: &LinearSeq) -> Result<AmrTree, PostprocessError> {
    let toks = &seq.tokens;
    let mut pos = 0;
    let tree = delinearize_node(toks, &mut pos)?;
    if pos != toks.len() {
        return Err(PostprocessError::Malformed { message: "tokens after the top node".into(), position: pos });
    }
    Ok(tree)
}

fn delinearize_node(toks: &[String], pos: &mut usize) -> Result<AmrTree, PostprocessError> {
    let err = |message: &str, position: usize| PostprocessError::Malformed { message: message.into(), position };
    if toks.get(*pos).map(String::as_str) != Some("(") {
        return Err(err("expected `(`", *pos));
    }
    *pos += 1;
    let concept = match toks.get(*pos).map(String::as_str) {
        Some(c) if c != "(" && c != ")" && !is_role(c) => c.to_string(),
        _ => return Err(err("expected a concept", *pos)),
    };
    *pos += 1;
    let mut children = Vec::new();
    loop {
        match toks.get(*pos).map(String::as_str) {
            Some(")") => {
                *pos += 1;
                return Ok(AmrTree { concept, children });
            }
            Some(role) if is_role(role) => {
                *pos += 1;
                let child = match toks.get(*pos).map(String::as_str) {
                    Some("(") => TreeChild::Node(delinearize_node(toks, pos)?),
                    Some(v) if v != ")" && !is_role(v) => {
                        *pos += 1;
                        TreeChild::Const(v.to_string())
                    }
                    _ => return Err(err("relation without a value", *pos)),
                };
                children.push((role.to_string(), child));
            }
            _ => return Err(err("expected a relation or `)`", *pos)),
        }
    }
}

/// Concept safe to print as a PENMAN symbol.
fn sanitize_concept(c: &str) -> String {
    let mut s: String =
        c.chars().map(|ch| if ch.is_whitespace() || matches!(ch, '(' | ')' | '/' | '"') { '_' } else { ch }).collect();
    if s.starts_with(':') {
        s.replace_range(0..1, "_");
    }
    if s.is_empty() {
        s = PLACEHOLDER_CONCEPT.into();
    }
    s
}

fn well_quoted(v: &str) -> bool {
    v.len() >= 2 && v.starts_with('"') && v.ends_with('"') && !v[1..v.len() - 1].contains(['"', '\\'])
}

/// Constant that re-parses as the same constant.
fn sanitize_constant(v: &str) -> String {
    if well_quoted(v) {
        return v.to_string();
    }
    let bad = v.is_empty()
        || v.starts_with(':')
        || looks_like_variable(v)
        || v.chars().any(|ch| ch.is_whitespace() || matches!(ch, '(' | ')' | '/' | '"' | '\\'));
    if bad {
        let inner: String = v.chars().filter(|ch| !matches!(ch, '"' | '\\')).collect();
        format!("\"{inner}\"")
    } else {
        v.to_string()
    }
}

/// Assigns fresh variables (concept initial plus counter) in depth-first order.
pub fn restore_variables(tree: &AmrTree) -> AmrGraph {
    fn walk(
        t: &AmrTree,
        counters: &mut HashMap<char, usize>,
        nodes: &mut Vec<Node>,
        relations: &mut Vec<Relation>,
    ) -> String {
        let concept = sanitize_concept(&t.concept);
        let initial =
            concept.chars().next().filter(char::is_ascii_alphabetic).map(|c| c.to_ascii_lowercase()).unwrap_or('x');
        let n = counters.entry(initial).or_insert(0);
        *n += 1;
        let var = if *n == 1 { initial.to_string() } else { format!("{initial}{n}") };
        nodes.push(Node { var: var.clone(), concept });
        for (role, child) in &t.children {
            let target = match child {
                TreeChild::Node(c) => Target::Node(walk(c, counters, nodes, relations)),
                TreeChild::Const(v) => Target::Const(sanitize_constant(v)),
            };
            relations.push(Relation { source: var.clone(), role: role.clone(), target });
        }
        var
    }
    let mut nodes = Vec::new();
    let mut relations = Vec::new();
    let top = walk(tree, &mut HashMap::new(), &mut nodes, &mut relations);
    AmrGraph::new(top, nodes, relations).expect("a tree is always a valid graph")
}

/// Nodes reachable from the top along written edges, in first-visit order.
fn reachable(top: &str, relations: &[Relation]) -> Vec<String> {
    let mut seen = HashSet::new();
    let mut order = Vec::new();
    let mut stack = vec![top.to_string()];
    while let Some(v) = stack.pop() {
        if !seen.insert(v.clone()) {
            continue;
        }
        let children: Vec<String> = relations
            .iter()
            .filter(|r| r.source == v)
            .filter_map(|r| match &r.target {
                Target::Node(t) => Some(t.clone()),
                Target::Const(_) => None,
            })
            .collect();
        order.push(v);
        stack.extend(children.into_iter().rev());
    }
    order
}

/// Drops nodes no longer reachable from the top, with their relations.
fn rebuild(g: &AmrGraph, relations: Vec<Relation>) -> Result<AmrGraph, crate::amr::GraphError> {
    let keep: HashSet<String> = reachable(g.top(), &relations).into_iter().collect();
    let nodes = g.nodes().iter().filter(|n| keep.contains(&n.var)).cloned().collect();
    let relations = relations.into_iter().filter(|r| keep.contains(&r.source)).collect();
    Ok(AmrGraph::new(g.top(), nodes, relations)?.with_metadata(g.metadata().to_vec()))
}

/// Among the relations of each node, keeps only the first of any identical
/// `(role, value)` pairs, where node values compare by unrolled subtree.
pub fn prune_duplicates(g: &AmrGraph) -> AmrGraph {
    let mut seen: HashSet<(&str, &str, Result<AmrTree, &str>)> = HashSet::new();
    let mut kept = Vec::new();
    for r in g.relations() {
        let value = match &r.target {
            Target::Const(v) => Err(v.as_str()),
            Target::Node(t) => g.unroll(t, UNROLL_LIMIT).ok_or(t.as_str()),
        };
        if seen.insert((r.source.as_str(), r.role.as_str(), value)) {
            kept.push(r.clone());
        }
    }
    if kept.len() == g.relations().len() {
        return g.clone();
    }
    rebuild(g, kept).expect("removing duplicate relations keeps the graph valid")
}

/// Merges a node into an earlier node with the same concept when it is a
/// leaf or an exact copy of that node's subtree. Merges that would create
/// a cycle are skipped.
pub fn restore_coreference(g: &AmrGraph) -> AmrGraph {
    let order = reachable(g.top(), g.relations());
    let mut current = g.clone();
    let mut kept: Vec<String> = Vec::new();
    for v in order {
        if current.concept(&v).is_none() {
            continue;
        }
        let concept = current.concept(&v).unwrap_or_default().to_string();
        let is_leaf = current.outgoing(&v).next().is_none();
        let v_tree = if is_leaf { None } else { current.unroll(&v, UNROLL_LIMIT) };
        let mut merged = false;
        for u in &kept {
            if current.concept(u) != Some(concept.as_str()) {
                continue;
            }
            if !is_leaf && (v_tree.is_none() || current.unroll(u, UNROLL_LIMIT) != v_tree) {
                continue;
            }
            let relations = current
                .relations()
                .iter()
                .map(|r| match &r.target {
                    Target::Node(t) if *t == v => Relation { target: Target::Node(u.clone()), ..r.clone() },
                    _ => r.clone(),
                })
                .collect();
            if let Ok(next) = rebuild(&current, relations) {
                current = next;
                merged = true;
                break;
            }
        }
        if !merged {
            kept.push(v);
        }
    }
    current
}

/// Entity linking from a concatenated entity name to a title.
pub trait Wikifier {
    fn lookup(&self, name: &str) -> Option<String>;
}

/// Offline name-to-title dictionary.
#[derive(Debug, Clone, Default)]
pub struct DictWikifier {
    entries: HashMap<String, String>,
}

impl DictWikifier {
    pub fn new(entries: HashMap<String, String>) -> Self {
        DictWikifier { entries }
    }

    /// Reads `name<TAB>title` lines; blank lines and `#` comments are skipped.
    pub fn from_tsv(text: &str) -> Result<Self, PostprocessError> {
        let mut entries = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((name, title)) = line.split_once('\t') else {
                return Err(PostprocessError::WikiDictionary {
                    line: i + 1,
                    message: "expected name<TAB>title".into(),
                });
            };
            if name.is_empty() || title.trim().is_empty() {
                return Err(PostprocessError::WikiDictionary { line: i + 1, message: "empty field".into() });
            }
            entries.insert(name.to_string(), title.trim().to_string());
        }
        Ok(DictWikifier { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl Wikifier for DictWikifier {
    fn lookup(&self, name: &str) -> Option<String> {
        self.entries.get(name).cloned()
    }
}

/// Adds `:wiki` to every named entity lacking one: the title on a hit,
/// `-` otherwise.
pub fn wikify(g: &AmrGraph, wikifier: &dyn Wikifier) -> AmrGraph {
    let has_wiki: HashSet<&str> = g.attributes().filter(|(_, r, _)| *r == ":wiki").map(|(s, _, _)| s).collect();
    let mut titles: HashMap<String, String> = HashMap::new();
    for e in g.named_entities() {
        if has_wiki.contains(e.owner.as_str()) || titles.contains_key(&e.owner) {
            continue;
        }
        let value = match wikifier.lookup(&e.name) {
            Some(t) => {
                format!("\"{}\"", t.trim_matches('"').replace(char::is_whitespace, "_").replace(['"', '\\'], ""))
            }
            None => "-".to_string(),
        };
        titles.insert(e.owner, value);
    }
    if titles.is_empty() {
        return g.clone();
    }
    let mut relations = Vec::with_capacity(g.relations().len() + titles.len());
    for r in g.relations() {
        if r.role == ":name" {
            if let Some(v) = titles.remove(&r.source) {
                relations.push(Relation::attribute(r.source.clone(), ":wiki", v));
            }
        }
        relations.push(r.clone());
    }
    AmrGraph::new(g.top(), g.nodes().to_vec(), relations)
        .expect("adding attributes keeps the graph valid")
        .with_metadata(g.metadata().to_vec())
}

/// Full post-processing of one decoder output. Never fails; the worst case
/// is `(a / amr-unknown)`. With no wikifier the `:wiki` step is skipped.
pub fn recover_graph(seq: &LinearSeq, wikifier: Option<&dyn Wikifier>) -> AmrGraph {
    let repaired = repair_brackets(seq);
    let tree = match delinearize(&repaired) {
        Ok(t) => t,
        Err(e) => {
            if !repaired.is_empty() {
                warn!("unrecoverable output `{seq}`: {e}");
            }
            AmrTree::leaf(PLACEHOLDER_CONCEPT)
        }
    };
    let g = restore_coreference(&prune_duplicates(&restore_variables(&tree)));
    match wikifier {
        Some(w) => wikify(&g, w),
        None => g,
    }
}
