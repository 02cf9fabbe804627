//! Labeled binary constituency trees and their line-oriented s-expression
//! format.
//!
//! Every node is written `(HEADER ...)` where `HEADER` is
//! `LABEL#CATEGORY#E`: `LABEL` a sentiment class `0..=4` or `_` when absent,
//! `CATEGORY` a syntactic category or POS tag, and `E` the entity-of-interest
//! bit. A leaf carries a single token, an internal node exactly two child
//! trees. `#` is reserved as the field separator inside headers only; tokens
//! may contain it freely.

use std::fmt;
use std::fs;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TreebankError {
    #[error("empty input")]
    EmptyInput,
    #[error("unbalanced parentheses at byte {pos}")]
    UnbalancedParens { pos: usize },
    #[error("expected '(' at byte {pos}")]
    ExpectedOpenParen { pos: usize },
    #[error("internal node at byte {pos} must have exactly two child trees, found {found} items")]
    NonBinaryNode { pos: usize, found: usize },
    #[error("label must be 0..=4 or '_', got {found:?} at byte {pos}")]
    BadLabel { pos: usize, found: String },
    #[error("malformed node header {found:?} at byte {pos} (want LABEL#CATEGORY#E)")]
    MalformedHeader { pos: usize, found: String },
    #[error("trailing input after tree at byte {pos}")]
    TrailingInput { pos: usize },
    #[error("entity flag at {path} is not the OR of its children")]
    EntityFlagMismatch { path: String },
    #[error("line {line}: {source}")]
    Line {
        line: usize,
        #[source]
        source: Box<TreebankError>,
    },
    #[error("treebank {path}: {message}")]
    File { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NodeKind {
    Leaf { token: String },
    Internal { left: Box<ParseTree>, right: Box<ParseTree> },
}

/// A binary-branching constituency tree node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseTree {
    pub kind: NodeKind,
    /// Sentiment class in `0..=4`, absent on inference-only trees.
    pub label: Option<u8>,
    pub category: String,
    /// True when the entity of interest occurs in this span.
    pub entity_flag: bool,
}

impl ParseTree {
    pub fn leaf(label: Option<u8>, category: &str, entity_flag: bool, token: &str) -> Self {
        Self {
            kind: NodeKind::Leaf { token: token.to_string() },
            label,
            category: category.to_string(),
            entity_flag,
        }
    }

    pub fn internal(
        label: Option<u8>,
        category: &str,
        entity_flag: bool,
        left: ParseTree,
        right: ParseTree,
    ) -> Self {
        Self {
            kind: NodeKind::Internal { left: Box::new(left), right: Box::new(right) },
            label,
            category: category.to_string(),
            entity_flag,
        }
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self.kind, NodeKind::Leaf { .. })
    }

    /// Leaf tokens in left-to-right order.
    pub fn tokens(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.collect_tokens(&mut out);
        out
    }

    fn collect_tokens<'a>(&'a self, out: &mut Vec<&'a str>) {
        match &self.kind {
            NodeKind::Leaf { token } => out.push(token),
            NodeKind::Internal { left, right } => {
                left.collect_tokens(out);
                right.collect_tokens(out);
            }
        }
    }

    pub fn node_count(&self) -> usize {
        match &self.kind {
            NodeKind::Leaf { .. } => 1,
            NodeKind::Internal { left, right } => 1 + left.node_count() + right.node_count(),
        }
    }

    /// Distinct node categories, depth-first.
    pub fn categories(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.visit(&mut |t| out.push(t.category.as_str()));
        out
    }

    pub fn visit<'a>(&'a self, f: &mut impl FnMut(&'a ParseTree)) {
        f(self);
        if let NodeKind::Internal { left, right } = &self.kind {
            left.visit(f);
            right.visit(f);
        }
    }
}

/// Which invariant a node breaks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ViolationRule {
    /// Label outside `0..=4`.
    BadLabel(u8),
    /// Internal entity flag differs from the OR of its children's flags.
    EntityFlagInconsistent,
    /// Leaf token empty or not writable as a single atom.
    BadToken(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    /// Node path from the root, `root` then `.L`/`.R` per step.
    pub path: String,
    pub rule: ViolationRule,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.rule {
            ViolationRule::BadLabel(l) => write!(f, "BadLabel({l})@{}", self.path),
            ViolationRule::EntityFlagInconsistent => {
                write!(f, "EntityFlagInconsistent@{}", self.path)
            }
            ViolationRule::BadToken(t) => write!(f, "BadToken({t:?})@{}", self.path),
        }
    }
}

/// Checks every node against the tree invariants. Violations are data, not
/// errors: an empty list means the tree is valid.
pub fn validate(tree: &ParseTree) -> Vec<Violation> {
    let mut out = Vec::new();
    validate_at(tree, "root", &mut out);
    out
}

fn validate_at(tree: &ParseTree, path: &str, out: &mut Vec<Violation>) {
    if let Some(label) = tree.label {
        if label > 4 {
            out.push(Violation { path: path.to_string(), rule: ViolationRule::BadLabel(label) });
        }
    }
    match &tree.kind {
        NodeKind::Leaf { token } => {
            if token.is_empty() || token.chars().any(|c| c.is_whitespace() || c == '(' || c == ')')
            {
                out.push(Violation {
                    path: path.to_string(),
                    rule: ViolationRule::BadToken(token.clone()),
                });
            }
        }
        NodeKind::Internal { left, right } => {
            if tree.entity_flag != (left.entity_flag || right.entity_flag) {
                out.push(Violation {
                    path: path.to_string(),
                    rule: ViolationRule::EntityFlagInconsistent,
                });
            }
            validate_at(left, &format!("{path}.L"), out);
            validate_at(right, &format!("{path}.R"), out);
        }
    }
}

/// Parses a single s-expression tree. Whitespace between tokens is free-form.
pub fn parse_ptb(text: &str) -> Result<ParseTree, TreebankError> {
    let bytes = text.as_bytes();
    let mut pos = skip_ws(bytes, 0);
    if pos >= bytes.len() {
        return Err(TreebankError::EmptyInput);
    }
    let (tree, next) = parse_node(text, pos)?;
    pos = skip_ws(bytes, next);
    if pos < bytes.len() {
        return Err(TreebankError::TrailingInput { pos });
    }
    // The grammar cannot express label or token violations, so only the
    // entity-OR rule can fail here.
    if let Some(v) = validate(&tree)
        .into_iter()
        .find(|v| v.rule == ViolationRule::EntityFlagInconsistent)
    {
        return Err(TreebankError::EntityFlagMismatch { path: v.path });
    }
    Ok(tree)
}

fn skip_ws(bytes: &[u8], mut pos: usize) -> usize {
    while pos < bytes.len() && (bytes[pos] as char).is_whitespace() {
        pos += 1;
    }
    pos
}

fn atom_end(bytes: &[u8], mut pos: usize) -> usize {
    while pos < bytes.len() {
        let c = bytes[pos] as char;
        if c.is_whitespace() || c == '(' || c == ')' {
            break;
        }
        pos += 1;
    }
    pos
}

enum Item {
    Tree(ParseTree),
    Atom(String),
}

fn parse_node(text: &str, open: usize) -> Result<(ParseTree, usize), TreebankError> {
    let bytes = text.as_bytes();
    if bytes.get(open) != Some(&b'(') {
        return Err(TreebankError::ExpectedOpenParen { pos: open });
    }
    let mut pos = skip_ws(bytes, open + 1);
    let header_end = atom_end(bytes, pos);
    if header_end == pos {
        return Err(TreebankError::MalformedHeader { pos, found: String::new() });
    }
    let (label, category, entity_flag) = parse_header(&text[pos..header_end], pos)?;
    pos = skip_ws(bytes, header_end);

    let mut items = Vec::new();
    loop {
        match bytes.get(pos) {
            None => return Err(TreebankError::UnbalancedParens { pos }),
            Some(b')') => {
                pos += 1;
                break;
            }
            Some(b'(') => {
                let (child, next) = parse_node(text, pos)?;
                items.push(Item::Tree(child));
                pos = skip_ws(bytes, next);
            }
            Some(_) => {
                let end = atom_end(bytes, pos);
                items.push(Item::Atom(text[pos..end].to_string()));
                pos = skip_ws(bytes, end);
            }
        }
    }

    let kind = match items.len() {
        1 => match items.pop().unwrap() {
            Item::Atom(token) => NodeKind::Leaf { token },
            Item::Tree(_) => return Err(TreebankError::NonBinaryNode { pos: open, found: 1 }),
        },
        2 => {
            let mut trees = Vec::with_capacity(2);
            for item in items {
                match item {
                    Item::Tree(t) => trees.push(t),
                    Item::Atom(_) => {
                        return Err(TreebankError::NonBinaryNode { pos: open, found: 2 })
                    }
                }
            }
            let right = trees.pop().unwrap();
            let left = trees.pop().unwrap();
            NodeKind::Internal { left: Box::new(left), right: Box::new(right) }
        }
        n => return Err(TreebankError::NonBinaryNode { pos: open, found: n }),
    };

    Ok((
        ParseTree { kind, label, category: category.to_string(), entity_flag },
        pos,
    ))
}

fn parse_header(header: &str, pos: usize) -> Result<(Option<u8>, &str, bool), TreebankError> {
    let mut parts = header.split('#');
    let (label_s, category, entity_s) = match (parts.next(), parts.next(), parts.next(), parts.next())
    {
        (Some(l), Some(c), Some(e), None) => (l, c, e),
        _ => {
            return Err(TreebankError::MalformedHeader { pos, found: header.to_string() });
        }
    };
    let label = match label_s {
        "_" => None,
        s => match s.parse::<u8>() {
            Ok(v) if v <= 4 => Some(v),
            _ => return Err(TreebankError::BadLabel { pos, found: s.to_string() }),
        },
    };
    let entity_flag = match entity_s {
        "0" => false,
        "1" => true,
        _ => return Err(TreebankError::MalformedHeader { pos, found: header.to_string() }),
    };
    Ok((label, category, entity_flag))
}

/// Canonical single-line form; `parse_ptb(to_ptb(t))` is structurally `t`.
pub fn to_ptb(tree: &ParseTree) -> String {
    let mut out = String::new();
    write_node(tree, &mut out);
    out
}

fn write_node(tree: &ParseTree, out: &mut String) {
    out.push('(');
    match tree.label {
        Some(l) => out.push_str(&l.to_string()),
        None => out.push('_'),
    }
    out.push('#');
    out.push_str(&tree.category);
    out.push('#');
    out.push(if tree.entity_flag { '1' } else { '0' });
    out.push(' ');
    match &tree.kind {
        NodeKind::Leaf { token } => out.push_str(token),
        NodeKind::Internal { left, right } => {
            write_node(left, out);
            out.push(' ');
            write_node(right, out);
        }
    }
    out.push(')');
}

/// An ordered collection of trees read from one file, one tree per line.
#[derive(Debug, Clone)]
pub struct Treebank {
    pub trees: Vec<ParseTree>,
    pub source: String,
}

impl Treebank {
    pub fn from_str(text: &str, source: &str) -> Result<Self, TreebankError> {
        let mut trees = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let tree = parse_ptb(line)
                .map_err(|e| TreebankError::Line { line: i + 1, source: Box::new(e) })?;
            trees.push(tree);
        }
        Ok(Self { trees, source: source.to_string() })
    }

    pub fn load(path: &Path) -> Result<Self, TreebankError> {
        let text = fs::read_to_string(path).map_err(|e| TreebankError::File {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_str(&text, &path.display().to_string())
    }

    pub fn is_empty(&self) -> bool {
        self.trees.is_empty()
    }

    pub fn len(&self) -> usize {
        self.trees.len()
    }
}
