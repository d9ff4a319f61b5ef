//! Turning AMR graphs and constituency trees into flat token sequences.

use std::collections::HashSet;
use std::fmt;

use thiserror::Error;

use crate::amr::{AmrGraph, AmrTree, Relation, Target, TreeChild};

/// Default node budget for [`simplify_amr`], as a multiple of the graph size.
pub const DEFAULT_DUPLICATION_FACTOR: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SeqKind {
    Amr,
    Syntax,
    Sentence,
}

/// A whitespace-free token sequence.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LinearSeq {
    pub tokens: Vec<String>,
    pub kind: SeqKind,
}

impl LinearSeq {
    pub fn new(tokens: Vec<String>, kind: SeqKind) -> Self {
        LinearSeq { tokens, kind }
    }

    /// Splits a line on whitespace.
    pub fn from_line(line: &str, kind: SeqKind) -> Self {
        LinearSeq { tokens: line.split_whitespace().map(str::to_string).collect(), kind }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

impl fmt::Display for LinearSeq {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.tokens.join(" "))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PreprocessError {
    #[error("duplicating re-entrant nodes needs more than {limit} nodes (graph has {original})")]
    DuplicationBlowup { limit: usize, original: usize },
    #[error("malformed tree at token {position}: {message}")]
    MalformedTree { message: String, position: usize },
}

/// Removes `:wiki` and variables, duplicating re-entrant nodes so the
/// result is a tree. Uses the default node budget.
pub fn simplify_amr(g: &AmrGraph) -> Result<AmrTree, PreprocessError> {
    simplify_amr_with_budget(g, DEFAULT_DUPLICATION_FACTOR)
}

/// Like [`simplify_amr`] with at most `factor` times as many nodes as `g`.
///
/// The first mention in depth-first order keeps its subtree; every later
/// mention becomes a full copy of it.
pub fn simplify_amr_with_budget(g: &AmrGraph, factor: usize) -> Result<AmrTree, PreprocessError> {
    let original = g.nodes().len();
    let limit = original.saturating_mul(factor.max(1));
    let mut budget = limit;
    let mut expanded = HashSet::new();
    expand(g, g.top(), &mut expanded, &mut budget).ok_or(PreprocessError::DuplicationBlowup { limit, original })
}

fn not_wiki(r: &Relation) -> bool {
    r.role != ":wiki"
}

fn expand<'a>(g: &'a AmrGraph, var: &'a str, expanded: &mut HashSet<&'a str>, budget: &mut usize) -> Option<AmrTree> {
    *budget = budget.checked_sub(1)?;
    expanded.insert(var);
    let mut children = Vec::new();
    for r in g.outgoing(var).filter(|r| not_wiki(r)) {
        let child = match &r.target {
            Target::Const(v) => TreeChild::Const(v.clone()),
            Target::Node(t) if expanded.contains(t.as_str()) => {
                TreeChild::Node(g.unroll_inner(t, &mut Vec::new(), budget, &not_wiki)?)
            }
            Target::Node(t) => TreeChild::Node(expand(g, t, expanded, budget)?),
        };
        children.push((r.role.clone(), child));
    }
    Some(AmrTree { concept: g.concept(var).unwrap_or_default().to_string(), children })
}

/// Whitespace inside quoted constants becomes `_`.
fn constant_token(v: &str) -> String {
    v.chars().map(|c| if c.is_whitespace() { '_' } else { c }).collect()
}

/// Depth-first PENMAN order with every bracket, concept and role a token.
pub fn linearize_amr(tree: &AmrTree) -> LinearSeq {
    fn walk(t: &AmrTree, out: &mut Vec<String>) {
        out.push("(".into());
        out.push(constant_token(&t.concept));
        for (role, child) in &t.children {
            out.push(role.clone());
            match child {
                TreeChild::Node(c) => walk(c, out),
                TreeChild::Const(v) => out.push(constant_token(v)),
            }
        }
        out.push(")".into());
    }
    let mut tokens = Vec::new();
    walk(tree, &mut tokens);
    LinearSeq::new(tokens, SeqKind::Amr)
}

/// Bracketed constituency tree.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SyntaxTree {
    Node { label: String, children: Vec<SyntaxTree> },
    Word(String),
}

impl SyntaxTree {
    pub fn leaves(&self) -> Vec<&str> {
        match self {
            SyntaxTree::Word(w) => vec![w.as_str()],
            SyntaxTree::Node { children, .. } => children.iter().flat_map(|c| c.leaves()).collect(),
        }
    }
}

fn syntax_tokens(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut word = String::new();
    for c in text.chars() {
        if c == '(' || c == ')' || c.is_whitespace() {
            if !word.is_empty() {
                out.push(std::mem::take(&mut word));
            }
            if !c.is_whitespace() {
                out.push(c.to_string());
            }
        } else {
            word.push(c);
        }
    }
    if !word.is_empty() {
        out.push(word);
    }
    out
}

/// Parses `(S (NP (NNS Children)) ...)`.
pub fn parse_syntax(text: &str) -> Result<SyntaxTree, PreprocessError> {
    let tokens = syntax_tokens(text);
    let err = |message: &str, position: usize| PreprocessError::MalformedTree { message: message.into(), position };
    if tokens.is_empty() {
        return Err(err("empty input", 0));
    }
    let mut pos = 0;
    let tree = parse_syntax_node(&tokens, &mut pos)?;
    if pos != tokens.len() {
        return Err(err("trailing tokens after the tree", pos));
    }
    Ok(tree)
}

fn parse_syntax_node(tokens: &[String], pos: &mut usize) -> Result<SyntaxTree, PreprocessError> {
    let err = |message: &str, position: usize| PreprocessError::MalformedTree { message: message.into(), position };
    if tokens.get(*pos).map(String::as_str) != Some("(") {
        return Err(err("expected `(`", *pos));
    }
    *pos += 1;
    let label = match tokens.get(*pos).map(String::as_str) {
        None => return Err(err("unbalanced brackets", *pos)),
        Some("(") | Some(")") => return Err(err("missing label", *pos)),
        Some(l) => l.to_string(),
    };
    *pos += 1;
    let mut children = Vec::new();
    loop {
        match tokens.get(*pos).map(String::as_str) {
            None => return Err(err("unbalanced brackets", *pos)),
            Some(")") => {
                *pos += 1;
                break;
            }
            Some("(") => children.push(parse_syntax_node(tokens, pos)?),
            Some(w) => {
                children.push(SyntaxTree::Word(w.to_string()));
                *pos += 1;
            }
        }
    }
    if children.is_empty() {
        return Err(err(&format!("constituent `{label}` has no children"), *pos - 1));
    }
    Ok(SyntaxTree::Node { label, children })
}

/// Linearized parse tree that keeps the source words. With
/// `keep_preterminals` false, POS nodes are replaced by their word.
pub fn linearize_syntax(text: &str, keep_preterminals: bool) -> Result<LinearSeq, PreprocessError> {
    fn walk(t: &SyntaxTree, keep: bool, out: &mut Vec<String>) {
        match t {
            SyntaxTree::Word(w) => out.push(w.clone()),
            SyntaxTree::Node { children, .. } if !keep && matches!(children.as_slice(), [SyntaxTree::Word(_)]) => {
                walk(&children[0], keep, out)
            }
            SyntaxTree::Node { label, children } => {
                out.push("(".into());
                out.push(label.clone());
                for c in children {
                    walk(c, keep, out);
                }
                out.push(")".into());
            }
        }
    }
    let tree = parse_syntax(text)?;
    let mut tokens = Vec::new();
    walk(&tree, keep_preterminals, &mut tokens);
    Ok(LinearSeq::new(tokens, SeqKind::Syntax))
}

/// Source-side tokens of a sentence.
pub fn sentence_tokens(text: &str) -> LinearSeq {
    LinearSeq::from_line(text, SeqKind::Sentence)
}
