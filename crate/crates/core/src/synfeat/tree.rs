//! Bracketed (Penn-style) constituency trees: parsing, serialization, and the
//! two traversal features.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParseTree {
    Node {
        label: String,
        children: Vec<ParseTree>,
    },
    Leaf {
        token: String,
    },
}

impl ParseTree {
    pub fn is_leaf(&self) -> bool {
        matches!(self, ParseTree::Leaf { .. })
    }

    /// A non-terminal whose children are all terminals (a POS-tag node).
    pub fn is_preterminal(&self) -> bool {
        match self {
            ParseTree::Node { children, .. } => {
                !children.is_empty() && children.iter().all(ParseTree::is_leaf)
            }
            ParseTree::Leaf { .. } => false,
        }
    }

    /// A non-terminal above the POS level.
    pub fn is_phrasal(&self) -> bool {
        matches!(self, ParseTree::Node { .. }) && !self.is_preterminal()
    }

    /// Base label with Penn function annotations stripped: `NP-SBJ` -> `NP`.
    pub fn base_label(&self) -> Option<&str> {
        match self {
            ParseTree::Node { label, .. } => label.split(['-', '=']).next(),
            ParseTree::Leaf { .. } => None,
        }
    }

    pub fn children(&self) -> &[ParseTree] {
        match self {
            ParseTree::Node { children, .. } => children,
            ParseTree::Leaf { .. } => &[],
        }
    }

    /// Pre-order traversal over every node including leaves.
    pub fn walk<'a>(&'a self, f: &mut impl FnMut(&'a ParseTree)) {
        f(self);
        for child in self.children() {
            child.walk(f);
        }
    }

    pub fn leaves(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.walk(&mut |node| {
            if let ParseTree::Leaf { token } = node {
                out.push(token.as_str());
            }
        });
        out
    }

    pub fn serialize(&self) -> String {
        match self {
            ParseTree::Leaf { token } => token.clone(),
            ParseTree::Node { label, children } => {
                let body: Vec<String> = children.iter().map(ParseTree::serialize).collect();
                format!("({label} {})", body.join(" "))
            }
        }
    }
}

struct Parser<'a> {
    chars: std::iter::Peekable<std::str::Chars<'a>>,
}

impl<'a> Parser<'a> {
    fn new(s: &'a str) -> Self {
        Parser {
            chars: s.chars().peekable(),
        }
    }

    fn skip_ws(&mut self) {
        while self.chars.peek().is_some_and(|c| c.is_whitespace()) {
            self.chars.next();
        }
    }

    fn atom(&mut self) -> String {
        let mut out = String::new();
        while let Some(&c) = self.chars.peek() {
            if c == '(' || c == ')' || c.is_whitespace() {
                break;
            }
            out.push(c);
            self.chars.next();
        }
        out
    }

    fn tree(&mut self) -> Result<ParseTree> {
        self.skip_ws();
        match self.chars.peek() {
            Some('(') => {
                self.chars.next();
                self.skip_ws();
                let label = self.atom();
                if label.is_empty() {
                    return Err(Error::MalformedTree("missing constituent label".into()));
                }
                let mut children = Vec::new();
                loop {
                    self.skip_ws();
                    match self.chars.peek() {
                        Some(')') => {
                            self.chars.next();
                            break;
                        }
                        Some('(') => children.push(self.tree()?),
                        Some(_) => {
                            let token = self.atom();
                            children.push(ParseTree::Leaf { token });
                        }
                        None => return Err(Error::MalformedTree("unbalanced parentheses".into())),
                    }
                }
                if children.is_empty() {
                    return Err(Error::MalformedTree(format!(
                        "constituent {label} has no children"
                    )));
                }
                Ok(ParseTree::Node { label, children })
            }
            Some(_) => Err(Error::MalformedTree("expected '('".into())),
            None => Err(Error::MalformedTree("empty input".into())),
        }
    }
}

/// Parses one bracketed tree. Serializing the result reproduces the input up
/// to whitespace normalization.
pub fn parse_tree_from_bracketed(s: &str) -> Result<ParseTree> {
    let mut parser = Parser::new(s);
    let tree = parser.tree()?;
    parser.skip_ws();
    if parser.chars.next().is_some() {
        return Err(Error::MalformedTree("trailing content after root".into()));
    }
    Ok(tree)
}

/// Maximum number of edges on any root-to-leaf path.
pub fn longest_path(tree: &ParseTree) -> usize {
    match tree {
        ParseTree::Leaf { .. } => 0,
        ParseTree::Node { children, .. } => {
            1 + children.iter().map(longest_path).max().unwrap_or(0)
        }
    }
}

/// `100 * PP-labeled phrasal constituents / all phrasal constituents`; zero
/// when the tree has no phrasal constituents.
pub fn pp_percentage(tree: &ParseTree) -> f64 {
    let mut phrasal = 0u64;
    let mut pp = 0u64;
    tree.walk(&mut |node| {
        if node.is_phrasal() {
            phrasal += 1;
            if node.base_label() == Some("PP") {
                pp += 1;
            }
        }
    });
    if phrasal == 0 {
        0.0
    } else {
        100.0 * pp as f64 / phrasal as f64
    }
}
