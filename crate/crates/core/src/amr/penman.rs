use std::collections::{HashMap, HashSet};
use std::fmt::Write;

use super::{AmrError, AmrGraph, Location, Node, Relation, Target};

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Open,
    Close,
    Slash,
    Role(String),
    Symbol(String),
    Quoted(String),
}

#[derive(Debug, Clone)]
struct Lexeme {
    tok: Tok,
    at: Location,
}

fn lex(text: &str, first_line: usize) -> Result<Vec<Lexeme>, AmrError> {
    let mut out = Vec::new();
    for (li, line) in text.lines().enumerate() {
        let line_no = first_line + li;
        let chars: Vec<char> = line.chars().collect();
        let mut i = 0;
        while i < chars.len() {
            let c = chars[i];
            let at = Location { line: line_no, col: i + 1 };
            if c.is_whitespace() {
                i += 1;
                continue;
            }
            match c {
                '(' => {
                    out.push(Lexeme { tok: Tok::Open, at });
                    i += 1;
                }
                ')' => {
                    out.push(Lexeme { tok: Tok::Close, at });
                    i += 1;
                }
                '/' => {
                    out.push(Lexeme { tok: Tok::Slash, at });
                    i += 1;
                }
                '"' => {
                    let start = i;
                    i += 1;
                    let mut closed = false;
                    while i < chars.len() {
                        match chars[i] {
                            '\\' => i += 2,
                            '"' => {
                                closed = true;
                                i += 1;
                                break;
                            }
                            _ => i += 1,
                        }
                    }
                    if !closed {
                        return Err(AmrError::Syntax { message: "unterminated string".into(), at });
                    }
                    let s: String = chars[start..i.min(chars.len())].iter().collect();
                    out.push(Lexeme { tok: Tok::Quoted(s), at });
                }
                _ => {
                    let start = i;
                    while i < chars.len() && !chars[i].is_whitespace() && !matches!(chars[i], '(' | ')' | '/' | '"') {
                        i += 1;
                    }
                    let s: String = chars[start..i].iter().collect();
                    let tok = if s.starts_with(':') { Tok::Role(s) } else { Tok::Symbol(s) };
                    out.push(Lexeme { tok, at });
                }
            }
        }
    }
    Ok(out)
}

fn check_balance(lexemes: &[Lexeme]) -> Result<(), AmrError> {
    let mut open: Vec<Location> = Vec::new();
    for lx in lexemes {
        match lx.tok {
            Tok::Open => open.push(lx.at),
            Tok::Close if open.pop().is_none() => {
                return Err(AmrError::UnbalancedParens(lx.at));
            }
            _ => {}
        }
    }
    match open.last() {
        Some(at) => Err(AmrError::UnbalancedParens(*at)),
        None => Ok(()),
    }
}

/// Unquoted symbols that look like variables are references, never constants.
pub(crate) fn looks_like_variable(s: &str) -> bool {
    let letters = s.chars().take_while(|c| c.is_ascii_lowercase()).count();
    if letters == 0 {
        return false;
    }
    let rest = &s[letters..];
    (letters == 1 && rest.is_empty()) || (!rest.is_empty() && rest.chars().all(|c| c.is_ascii_digit()))
}

struct Pending {
    source: String,
    role: String,
    symbol: String,
    at: Location,
    slot: usize,
}

struct Parser<'a> {
    lexemes: &'a [Lexeme],
    pos: usize,
    nodes: Vec<Node>,
    declared: HashMap<String, Location>,
    relations: Vec<Option<Relation>>,
    pending: Vec<Pending>,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&'a Lexeme> {
        self.lexemes.get(self.pos)
    }

    fn next(&mut self) -> Option<&'a Lexeme> {
        let lx = self.lexemes.get(self.pos);
        self.pos += 1;
        lx
    }

    fn end_location(&self) -> Location {
        self.lexemes.last().map(|l| l.at).unwrap_or_default()
    }

    fn syntax(&self, message: &str, at: Location) -> AmrError {
        AmrError::Syntax { message: message.to_string(), at }
    }

    fn node(&mut self) -> Result<String, AmrError> {
        let open = self.next().ok_or(AmrError::EmptyInput)?;
        if open.tok != Tok::Open {
            return Err(self.syntax("expected `(`", open.at));
        }
        let var_lx = self.next().ok_or_else(|| self.syntax("expected variable", open.at))?;
        let var = match &var_lx.tok {
            Tok::Symbol(s) => s.clone(),
            _ => return Err(self.syntax("expected variable", var_lx.at)),
        };
        if self.declared.contains_key(&var) {
            return Err(AmrError::DuplicateVariable { var, at: var_lx.at });
        }
        self.declared.insert(var.clone(), var_lx.at);
        match self.next() {
            Some(Lexeme { tok: Tok::Slash, .. }) => {}
            Some(lx) => return Err(self.syntax("expected `/` after variable", lx.at)),
            None => return Err(self.syntax("expected `/` after variable", self.end_location())),
        }
        let concept = match self.next() {
            Some(Lexeme { tok: Tok::Symbol(s), .. }) | Some(Lexeme { tok: Tok::Quoted(s), .. }) => s.clone(),
            Some(lx) => return Err(self.syntax("expected concept", lx.at)),
            None => return Err(self.syntax("expected concept", self.end_location())),
        };
        self.nodes.push(Node { var: var.clone(), concept });
        loop {
            let lx = self.next().ok_or_else(|| self.syntax("unexpected end of input", self.end_location()))?;
            match &lx.tok {
                Tok::Close => return Ok(var),
                Tok::Role(role) => self.value(&var, role, lx.at)?,
                _ => return Err(self.syntax("expected relation or `)`", lx.at)),
            }
        }
    }

    fn value(&mut self, source: &str, role: &str, role_at: Location) -> Result<(), AmrError> {
        let lx = self.peek().ok_or_else(|| self.syntax("relation without value", role_at))?;
        match &lx.tok {
            Tok::Open => {
                let slot = self.relations.len();
                self.relations.push(None);
                let target = self.node()?;
                self.relations[slot] = Some(Relation::edge(source, role, target));
            }
            Tok::Quoted(s) => {
                self.pos += 1;
                self.relations.push(Some(Relation::attribute(source, role, s.clone())));
            }
            Tok::Symbol(s) => {
                self.pos += 1;
                self.pending.push(Pending {
                    source: source.to_string(),
                    role: role.to_string(),
                    symbol: s.clone(),
                    at: lx.at,
                    slot: self.relations.len(),
                });
                self.relations.push(None);
            }
            _ => return Err(self.syntax("relation without value", role_at)),
        }
        Ok(())
    }
}

/// Splits leading `#` lines into metadata pairs; returns the remaining text
/// and the line number it starts on.
fn split_metadata(text: &str) -> (Vec<(String, String)>, &str, usize) {
    let mut metadata = Vec::new();
    let mut offset = 0;
    let mut line_no = 1;
    for line in text.split_inclusive('\n') {
        let trimmed = line.trim();
        if trimmed.is_empty() {
            offset += line.len();
            line_no += 1;
            continue;
        }
        let Some(comment) = trimmed.strip_prefix('#') else { break };
        let comment = comment.trim();
        if comment.starts_with("::") {
            for part in comment.split("::").filter(|p| !p.trim().is_empty()) {
                let part = part.trim();
                let (k, v) = part.split_once(char::is_whitespace).unwrap_or((part, ""));
                metadata.push((k.to_string(), v.trim().to_string()));
            }
        } else {
            metadata.push((String::new(), comment.to_string()));
        }
        offset += line.len();
        line_no += 1;
    }
    (metadata, &text[offset..], line_no)
}

/// Parses a single PENMAN graph, optionally preceded by `#` metadata lines.
pub fn parse_penman(text: &str) -> Result<AmrGraph, AmrError> {
    let (metadata, body, first_line) = split_metadata(text);
    let lexemes = lex(body, first_line)?;
    if lexemes.is_empty() {
        return Err(AmrError::EmptyInput);
    }
    check_balance(&lexemes)?;
    let mut p = Parser {
        lexemes: &lexemes,
        pos: 0,
        nodes: Vec::new(),
        declared: HashMap::new(),
        relations: Vec::new(),
        pending: Vec::new(),
    };
    let top = p.node()?;
    if let Some(lx) = p.peek() {
        return Err(p.syntax("trailing input after graph", lx.at));
    }
    for pend in std::mem::take(&mut p.pending) {
        let rel = if p.declared.contains_key(&pend.symbol) {
            Relation::edge(pend.source, pend.role, pend.symbol)
        } else if looks_like_variable(&pend.symbol) {
            return Err(AmrError::DanglingReference { var: pend.symbol, at: pend.at });
        } else {
            Relation::attribute(pend.source, pend.role, pend.symbol)
        };
        p.relations[pend.slot] = Some(rel);
    }
    let relations = p.relations.into_iter().map(|r| r.expect("every slot filled")).collect();
    let graph = AmrGraph::new(top, p.nodes, relations)?;
    Ok(graph.with_metadata(metadata))
}

fn canonical_variables(g: &AmrGraph, order: &[&str]) -> HashMap<String, String> {
    let mut counters: HashMap<char, usize> = HashMap::new();
    let mut names = HashMap::new();
    for var in order {
        let concept = g.concept(var).unwrap_or("x");
        let initial =
            concept.chars().next().filter(|c| c.is_ascii_alphabetic()).map(|c| c.to_ascii_lowercase()).unwrap_or('x');
        let n = counters.entry(initial).or_insert(0);
        *n += 1;
        let name = if *n == 1 { initial.to_string() } else { format!("{initial}{n}") };
        names.insert(var.to_string(), name);
    }
    names
}

/// Depth-first order in which the printer first mentions each variable.
fn print_order(g: &AmrGraph) -> Vec<&str> {
    fn visit<'a>(g: &'a AmrGraph, v: &'a str, seen: &mut HashSet<&'a str>, order: &mut Vec<&'a str>) {
        seen.insert(v);
        order.push(v);
        for r in g.outgoing(v) {
            if let Target::Node(t) = &r.target {
                if !seen.contains(t.as_str()) {
                    visit(g, t, seen, order);
                }
            }
        }
    }
    let mut seen = HashSet::new();
    let mut order = Vec::new();
    visit(g, g.top(), &mut seen, &mut order);
    order
}

fn render(g: &AmrGraph, indent: Option<usize>) -> String {
    let order = print_order(g);
    let names = canonical_variables(g, &order);
    let mut out = String::new();
    let mut printed = HashSet::new();
    render_node(g, g.top(), &names, &mut printed, 1, indent, &mut out);
    out
}

fn render_node<'a>(
    g: &'a AmrGraph,
    var: &'a str,
    names: &HashMap<String, String>,
    printed: &mut HashSet<&'a str>,
    depth: usize,
    indent: Option<usize>,
    out: &mut String,
) {
    printed.insert(var);
    let _ = write!(out, "({} / {}", names[var], g.concept(var).unwrap_or_default());
    for r in g.outgoing(var) {
        match indent {
            Some(width) => {
                out.push('\n');
                out.extend(std::iter::repeat_n(' ', width * depth));
            }
            None => out.push(' '),
        }
        out.push_str(&r.role);
        out.push(' ');
        match &r.target {
            Target::Const(v) => out.push_str(v),
            Target::Node(t) if printed.contains(t.as_str()) => out.push_str(&names[t.as_str()]),
            Target::Node(t) => render_node(g, t, names, printed, depth + 1, indent, out),
        }
    }
    out.push(')');
}

/// Canonical multi-line PENMAN. Variables are re-lettered by concept
/// initial and counter in depth-first order; the first mention of a node
/// expands it.
pub fn print_penman(g: &AmrGraph) -> String {
    render(g, Some(4))
}

/// Canonical PENMAN on a single line.
pub fn print_penman_compact(g: &AmrGraph) -> String {
    render(g, None)
}

/// Result of reading a corpus file: valid graphs plus rejected blocks.
#[derive(Debug, Default)]
pub struct CorpusRead {
    pub graphs: Vec<AmrGraph>,
    /// `(block index, error)` for every malformed graph that was skipped.
    pub skipped: Vec<(usize, AmrError)>,
}

/// Reads blank-line separated graphs. Comment-only blocks (file headers) are
/// ignored; malformed graphs are logged and skipped.
pub fn read_corpus(text: &str) -> CorpusRead {
    let mut read = CorpusRead::default();
    let mut block = String::new();
    let mut index = 0;
    let mut flush = |block: &mut String, read: &mut CorpusRead| {
        if block.trim().is_empty() {
            block.clear();
            return;
        }
        let has_graph = block.lines().any(|l| !l.trim().is_empty() && !l.trim_start().starts_with('#'));
        if has_graph {
            match parse_penman(block) {
                Ok(g) => read.graphs.push(g),
                Err(e) => {
                    log::warn!("skipping malformed AMR #{index}: {e}");
                    read.skipped.push((index, e));
                }
            }
            index += 1;
        }
        block.clear();
    };
    for line in text.lines() {
        if line.trim().is_empty() {
            flush(&mut block, &mut read);
        } else {
            block.push_str(line);
            block.push('\n');
        }
    }
    flush(&mut block, &mut read);
    read
}

fn write_metadata(g: &AmrGraph, out: &mut String) {
    for (k, v) in g.metadata() {
        if k.is_empty() {
            let _ = writeln!(out, "# {v}");
        } else if v.is_empty() {
            let _ = writeln!(out, "# ::{k}");
        } else {
            let _ = writeln!(out, "# ::{k} {v}");
        }
    }
}

/// Writes graphs with their metadata, separated by blank lines.
pub fn write_corpus(graphs: &[AmrGraph]) -> String {
    let mut out = String::new();
    for (i, g) in graphs.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        write_metadata(g, &mut out);
        out.push_str(&print_penman(g));
        out.push('\n');
    }
    out
}
