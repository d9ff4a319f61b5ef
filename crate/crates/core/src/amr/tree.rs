use std::fmt;

/// Variable-free AMR tree, the shape that linearization works on.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AmrTree {
    pub concept: String,
    pub children: Vec<(String, TreeChild)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum TreeChild {
    Node(AmrTree),
    Const(String),
}

impl AmrTree {
    pub fn leaf(concept: impl Into<String>) -> Self {
        AmrTree { concept: concept.into(), children: Vec::new() }
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    /// Number of concept nodes.
    pub fn size(&self) -> usize {
        1 + self
            .children
            .iter()
            .map(|(_, c)| match c {
                TreeChild::Node(t) => t.size(),
                TreeChild::Const(_) => 0,
            })
            .sum::<usize>()
    }
}

impl fmt::Display for AmrTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}", self.concept)?;
        for (role, child) in &self.children {
            match child {
                TreeChild::Node(t) => write!(f, " {role} {t}")?,
                TreeChild::Const(v) => write!(f, " {role} {v}")?,
            }
        }
        write!(f, ")")
    }
}
