//! AMR graphs: representation, validation, PENMAN I/O and triples.

mod penman;
mod tree;
mod triples;

use std::collections::{HashMap, HashSet};
use std::fmt;

use thiserror::Error;

pub(crate) use penman::looks_like_variable;
pub use penman::{parse_penman, print_penman, print_penman_compact, read_corpus, write_corpus, CorpusRead};
pub use tree::{AmrTree, TreeChild};
pub use triples::{graph_to_triples, Triple, TripleSet, TOP_ROLE};

/// Roles that end in `-of` but are not inversions.
const NON_INVERTED_OF: [&str; 3] = [":consist-of", ":prep-out-of", ":prep-on-behalf-of"];

/// Line/column position in PENMAN text, both 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Location {
    pub line: usize,
    pub col: usize,
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}, column {}", self.line, self.col)
    }
}

/// Structural problems of a graph, independent of any source text.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GraphError {
    #[error("variable `{0}` declared more than once")]
    DuplicateVariable(String),
    #[error("reference to undeclared variable `{0}`")]
    DanglingReference(String),
    #[error("top variable `{0}` is not declared")]
    UnknownTop(String),
    #[error("relation label `{0}` must start with `:`")]
    InvalidRole(String),
    #[error("node `{0}` is not reachable from the top")]
    Disconnected(String),
    #[error("graph contains a cycle through `{0}`")]
    Cycle(String),
    #[error("graph has no nodes")]
    Empty,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AmrError {
    #[error("empty input")]
    EmptyInput,
    #[error("unbalanced parentheses at {0}")]
    UnbalancedParens(Location),
    #[error("duplicate variable `{var}` at {at}")]
    DuplicateVariable { var: String, at: Location },
    #[error("reference to undeclared variable `{var}` at {at}")]
    DanglingReference { var: String, at: Location },
    #[error("syntax error at {at}: {message}")]
    Syntax { message: String, at: Location },
    #[error(transparent)]
    Invalid(#[from] GraphError),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Node {
    pub var: String,
    pub concept: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Target {
    /// Edge to another node, by variable.
    Node(String),
    /// Constant value; quoted strings keep their quotes.
    Const(String),
}

/// One outgoing relation as written: `source role target`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Relation {
    pub source: String,
    pub role: String,
    pub target: Target,
}

impl Relation {
    pub fn edge(source: impl Into<String>, role: impl Into<String>, target: impl Into<String>) -> Self {
        Relation { source: source.into(), role: role.into(), target: Target::Node(target.into()) }
    }

    pub fn attribute(source: impl Into<String>, role: impl Into<String>, value: impl Into<String>) -> Self {
        Relation { source: source.into(), role: role.into(), target: Target::Const(value.into()) }
    }
}

/// A rooted, labeled, acyclic AMR graph.
///
/// Relations are kept in document order with their written direction, so
/// `:ARG0-of` edges survive verbatim. Instances are immutable once built;
/// every constructor validates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AmrGraph {
    nodes: Vec<Node>,
    relations: Vec<Relation>,
    top: String,
    metadata: Vec<(String, String)>,
}

/// True when `role` is an inverted relation such as `:ARG0-of`.
pub fn is_inverted_role(role: &str) -> bool {
    role.ends_with("-of") && role.len() > 4 && !NON_INVERTED_OF.contains(&role)
}

/// Canonical direction of a relation: `(role, inverted)`.
pub fn normalize_role(role: &str) -> (&str, bool) {
    if is_inverted_role(role) {
        (&role[..role.len() - 3], true)
    } else {
        (role, false)
    }
}

impl AmrGraph {
    pub fn new(top: impl Into<String>, nodes: Vec<Node>, relations: Vec<Relation>) -> Result<Self, GraphError> {
        let graph = AmrGraph { nodes, relations, top: top.into(), metadata: Vec::new() };
        graph.validate()?;
        Ok(graph)
    }

    /// Single-node graph, handy as a placeholder.
    pub fn singleton(var: &str, concept: &str) -> Self {
        AmrGraph {
            nodes: vec![Node { var: var.to_string(), concept: concept.to_string() }],
            relations: Vec::new(),
            top: var.to_string(),
            metadata: Vec::new(),
        }
    }

    pub fn with_metadata(mut self, metadata: Vec<(String, String)>) -> Self {
        self.metadata = metadata;
        self
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn relations(&self) -> &[Relation] {
        &self.relations
    }

    pub fn top(&self) -> &str {
        &self.top
    }

    pub fn metadata(&self) -> &[(String, String)] {
        &self.metadata
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.metadata.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn concept(&self, var: &str) -> Option<&str> {
        self.nodes.iter().find(|n| n.var == var).map(|n| n.concept.as_str())
    }

    /// Edges as `(source, role, target)`, as written.
    pub fn edges(&self) -> impl Iterator<Item = (&str, &str, &str)> {
        self.relations.iter().filter_map(|r| match &r.target {
            Target::Node(t) => Some((r.source.as_str(), r.role.as_str(), t.as_str())),
            Target::Const(_) => None,
        })
    }

    /// Attributes as `(source, role, value)`.
    pub fn attributes(&self) -> impl Iterator<Item = (&str, &str, &str)> {
        self.relations.iter().filter_map(|r| match &r.target {
            Target::Const(v) => Some((r.source.as_str(), r.role.as_str(), v.as_str())),
            Target::Node(_) => None,
        })
    }

    pub fn edge_count(&self) -> usize {
        self.edges().count()
    }

    pub fn attribute_count(&self) -> usize {
        self.attributes().count()
    }

    /// Outgoing relations of `var` in document order.
    pub fn outgoing<'a>(&'a self, var: &'a str) -> impl Iterator<Item = &'a Relation> + 'a {
        self.relations.iter().filter(move |r| r.source == var)
    }

    /// Edges in canonical direction (inversions undone).
    pub fn normalized_edges(&self) -> Vec<(&str, &str, &str)> {
        self.edges()
            .map(|(s, r, t)| match normalize_role(r) {
                (base, true) => (t, base, s),
                (base, false) => (s, base, t),
            })
            .collect()
    }

    /// Number of incoming normalized edges per variable.
    pub fn in_degrees(&self) -> HashMap<&str, usize> {
        let mut deg: HashMap<&str, usize> = self.nodes.iter().map(|n| (n.var.as_str(), 0)).collect();
        for (_, _, t) in self.normalized_edges() {
            *deg.entry(t).or_default() += 1;
        }
        deg
    }

    /// Variables involved in a re-entrancy: more than one incoming edge.
    pub fn reentrant_vars(&self) -> Vec<&str> {
        let deg = self.in_degrees();
        self.nodes.iter().map(|n| n.var.as_str()).filter(|v| deg[v] > 1).collect()
    }

    /// Every node owning a `:name` edge to a node with `:opN` attributes.
    pub fn named_entities(&self) -> Vec<NamedEntity> {
        let mut out = Vec::new();
        for (owner, role, name_var) in self.edges() {
            if role != ":name" {
                continue;
            }
            let mut ops: Vec<(usize, &str)> = self
                .attributes()
                .filter(|(s, _, _)| *s == name_var)
                .filter_map(|(_, r, v)| {
                    let n: usize = r.strip_prefix(":op")?.parse().ok()?;
                    Some((n, unquote(v)))
                })
                .collect();
            if ops.is_empty() {
                continue;
            }
            ops.sort_by_key(|(n, _)| *n);
            out.push(NamedEntity {
                owner: owner.to_string(),
                entity_type: self.concept(owner).unwrap_or_default().to_string(),
                name: ops.iter().map(|(_, v)| *v).collect::<Vec<_>>().join(" "),
            });
        }
        out
    }

    /// Tree obtained by following written edges from `var`; a node already
    /// on the current path is emitted as a bare leaf. `None` once more than
    /// `limit` nodes would be produced.
    pub fn unroll(&self, var: &str, limit: usize) -> Option<AmrTree> {
        let mut path = Vec::new();
        let mut budget = limit;
        self.unroll_inner(var, &mut path, &mut budget, &|_| true)
    }

    pub(crate) fn unroll_inner<'a>(
        &'a self,
        var: &'a str,
        path: &mut Vec<&'a str>,
        budget: &mut usize,
        keep: &dyn Fn(&Relation) -> bool,
    ) -> Option<AmrTree> {
        *budget = budget.checked_sub(1)?;
        let concept = self.concept(var).unwrap_or_default().to_string();
        if path.contains(&var) {
            return Some(AmrTree::leaf(concept));
        }
        path.push(var);
        let mut children = Vec::new();
        for r in self.outgoing(var).filter(|r| keep(r)) {
            let child = match &r.target {
                Target::Const(v) => TreeChild::Const(v.clone()),
                Target::Node(t) => TreeChild::Node(self.unroll_inner(t, path, budget, keep)?),
            };
            children.push((r.role.clone(), child));
        }
        path.pop();
        Some(AmrTree { concept, children })
    }

    pub fn validate(&self) -> Result<(), GraphError> {
        if self.nodes.is_empty() {
            return Err(GraphError::Empty);
        }
        let mut seen = HashSet::new();
        for n in &self.nodes {
            if !seen.insert(n.var.as_str()) {
                return Err(GraphError::DuplicateVariable(n.var.clone()));
            }
        }
        if !seen.contains(self.top.as_str()) {
            return Err(GraphError::UnknownTop(self.top.clone()));
        }
        for r in &self.relations {
            if !r.role.starts_with(':') || r.role.len() < 2 {
                return Err(GraphError::InvalidRole(r.role.clone()));
            }
            if !seen.contains(r.source.as_str()) {
                return Err(GraphError::DanglingReference(r.source.clone()));
            }
            if let Target::Node(t) = &r.target {
                if !seen.contains(t.as_str()) {
                    return Err(GraphError::DanglingReference(t.clone()));
                }
            }
        }
        self.check_connected()?;
        self.check_acyclic()
    }

    fn check_connected(&self) -> Result<(), GraphError> {
        let mut reached: HashSet<&str> = HashSet::new();
        let mut stack = vec![self.top.as_str()];
        while let Some(v) = stack.pop() {
            if !reached.insert(v) {
                continue;
            }
            for (s, _, t) in self.edges() {
                if s == v && !reached.contains(t) {
                    stack.push(t);
                }
            }
        }
        match self.nodes.iter().find(|n| !reached.contains(n.var.as_str())) {
            Some(n) => Err(GraphError::Disconnected(n.var.clone())),
            None => Ok(()),
        }
    }

    fn check_acyclic(&self) -> Result<(), GraphError> {
        match find_cycle(&self.nodes, &self.normalized_edges()) {
            Some(v) => Err(GraphError::Cycle(v.to_string())),
            None => Ok(()),
        }
    }
}

/// A named entity: owner node, its concept, and its `:opN` values joined by spaces.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NamedEntity {
    pub owner: String,
    pub entity_type: String,
    pub name: String,
}

/// Strips one pair of surrounding double quotes.
pub fn unquote(s: &str) -> &str {
    s.strip_prefix('"').and_then(|s| s.strip_suffix('"')).unwrap_or(s)
}

/// Returns a variable on a directed cycle, if any.
pub(crate) fn find_cycle<'a>(nodes: &'a [Node], edges: &[(&'a str, &str, &'a str)]) -> Option<&'a str> {
    let index: HashMap<&str, usize> = nodes.iter().enumerate().map(|(i, n)| (n.var.as_str(), i)).collect();
    let mut adj = vec![Vec::new(); nodes.len()];
    for (s, _, t) in edges {
        adj[index[s]].push(index[t]);
    }
    // 0 = unvisited, 1 = on stack, 2 = done
    let mut state = vec![0u8; nodes.len()];
    for start in 0..nodes.len() {
        if state[start] != 0 {
            continue;
        }
        let mut stack = vec![(start, 0usize)];
        state[start] = 1;
        while let Some(&mut (v, ref mut next)) = stack.last_mut() {
            if *next < adj[v].len() {
                let w = adj[v][*next];
                *next += 1;
                match state[w] {
                    0 => {
                        state[w] = 1;
                        stack.push((w, 0));
                    }
                    1 => return Some(nodes[w].var.as_str()),
                    _ => {}
                }
            } else {
                state[v] = 2;
                stack.pop();
            }
        }
    }
    None
}
