use super::{normalize_role, AmrGraph};

/// Role of the distinguished attribute marking the root.
pub const TOP_ROLE: &str = "TOP";

/// `(source, role, target)` where the target is a variable or a constant.
pub type Triple = (String, String, String);

/// Canonical triple form of a graph, as scored by Smatch.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TripleSet {
    /// `(var, concept)`: the `instance` triples.
    pub instances: Vec<(String, String)>,
    /// Variable-to-variable triples in canonical direction.
    pub relations: Vec<Triple>,
    /// Variable-to-constant triples, including the `TOP` triple.
    pub attributes: Vec<Triple>,
}

impl TripleSet {
    pub fn len(&self) -> usize {
        self.instances.len() + self.relations.len() + self.attributes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Distinct variables in order of first appearance.
    pub fn variables(&self) -> Vec<String> {
        let mut vars: Vec<String> = Vec::new();
        let mut push = |v: &String| {
            if !vars.contains(v) {
                vars.push(v.clone());
            }
        };
        self.instances.iter().for_each(|(v, _)| push(v));
        self.relations.iter().for_each(|(s, _, t)| {
            push(s);
            push(t);
        });
        self.attributes.iter().for_each(|(s, _, _)| push(s));
        vars
    }
}

/// One instance triple per node, one per edge and attribute, and a `TOP`
/// attribute on the root whose value is the root concept. Inverted roles
/// are normalized.
pub fn graph_to_triples(g: &AmrGraph) -> TripleSet {
    let instances = g.nodes().iter().map(|n| (n.var.clone(), n.concept.clone())).collect();
    let relations =
        g.normalized_edges().into_iter().map(|(s, r, t)| (s.to_string(), r.to_string(), t.to_string())).collect();
    let mut attributes: Vec<Triple> = g
        .attributes()
        .map(|(s, r, v)| {
            let (role, _) = normalize_role(r);
            (s.to_string(), role.to_string(), v.to_string())
        })
        .collect();
    let top_concept = g.concept(g.top()).unwrap_or_default().to_string();
    attributes.push((g.top().to_string(), TOP_ROLE.to_string(), top_concept));
    TripleSet { instances, relations, attributes }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::amr::parse_penman;

    #[test]
    fn single_node() {
        let t = graph_to_triples(&parse_penman("(b / boy)").unwrap());
        assert_eq!(t.instances, vec![("b".into(), "boy".into())]);
        assert_eq!(t.attributes, vec![("b".into(), "TOP".into(), "boy".into())]);
        assert!(t.relations.is_empty());
    }

    #[test]
    fn want_graph_counts() {
        let g = parse_penman("(w / want-01 :ARG0 (b / boy) :ARG1 (g / go-01 :ARG0 b))").unwrap();
        let t = graph_to_triples(&g);
        assert_eq!(t.instances.len(), 3);
        assert_eq!(t.relations.len(), 3);
        assert_eq!(t.attributes.len(), 1);
        assert_eq!(t.len(), g.nodes().len() + g.edge_count() + g.attribute_count() + 1);
        assert!(t.relations.contains(&("g".into(), ":ARG0".into(), "b".into())));
    }

    #[test]
    fn inversions_normalized() {
        let t = graph_to_triples(&parse_penman("(b / boy :ARG0-of (w / want-01))").unwrap());
        assert_eq!(t.relations, vec![("w".into(), ":ARG0".into(), "b".into())]);
    }

    #[test]
    fn attribute_difference_touches_only_attributes() {
        let a = graph_to_triples(&parse_penman("(r / run-01 :polarity - :ARG0 (b / boy))").unwrap());
        let b = graph_to_triples(&parse_penman("(r / run-01 :polarity + :ARG0 (b / boy))").unwrap());
        assert_eq!(a.instances, b.instances);
        assert_eq!(a.relations, b.relations);
        assert_ne!(a.attributes, b.attributes);
    }
}
