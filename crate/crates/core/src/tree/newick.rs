//! Newick reader and writer.
//!
//! Accepts labels on leaves and internal nodes, single-quoted labels with `''`
//! escapes, and bracketed comments anywhere whitespace is allowed. Missing
//! branch lengths default to 1.0; a length on the root is ignored.

use super::{Node, NodeId, Tree};
use crate::error::{Error, Result};

const DEFAULT_BRANCH_LENGTH: f64 = 1.0;

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    nodes: Vec<Node>,
}

impl<'a> Parser<'a> {
    fn err<T>(&self, message: impl Into<String>) -> Result<T> {
        Err(Error::Newick {
            position: self.pos,
            message: message.into(),
        })
    }

    fn skip_blank(&mut self) -> Result<()> {
        loop {
            match self.src.get(self.pos) {
                Some(c) if c.is_ascii_whitespace() => self.pos += 1,
                Some(b'[') => {
                    let start = self.pos;
                    match self.src[start..].iter().position(|&c| c == b']') {
                        Some(off) => self.pos = start + off + 1,
                        None => return self.err("unterminated comment"),
                    }
                }
                _ => return Ok(()),
            }
        }
    }

    fn peek(&mut self) -> Result<Option<u8>> {
        self.skip_blank()?;
        Ok(self.src.get(self.pos).copied())
    }

    fn new_node(&mut self, parent: Option<NodeId>) -> NodeId {
        let id = self.nodes.len();
        self.nodes.push(Node {
            label: None,
            parent,
            children: Vec::new(),
            branch_length: DEFAULT_BRANCH_LENGTH,
            observations: Vec::new(),
        });
        if let Some(p) = parent {
            self.nodes[p].children.push(id);
        }
        id
    }

    fn subtree(&mut self, parent: Option<NodeId>) -> Result<NodeId> {
        let id = self.new_node(parent);
        if self.peek()? == Some(b'(') {
            self.pos += 1;
            loop {
                self.subtree(Some(id))?;
                match self.peek()? {
                    Some(b',') => self.pos += 1,
                    Some(b')') => {
                        self.pos += 1;
                        break;
                    }
                    Some(c) => return self.err(format!("expected ',' or ')', found '{}'", c as char)),
                    None => return self.err("unbalanced parentheses: missing ')'"),
                }
            }
        }
        self.nodes[id].label = self.label()?;
        if self.peek()? == Some(b':') {
            self.pos += 1;
            self.nodes[id].branch_length = self.length()?;
        }
        Ok(id)
    }

    fn label(&mut self) -> Result<Option<String>> {
        match self.peek()? {
            Some(b'\'') => {
                self.pos += 1;
                let mut out = Vec::new();
                loop {
                    match self.src.get(self.pos) {
                        None => return self.err("unterminated quoted label"),
                        Some(b'\'') if self.src.get(self.pos + 1) == Some(&b'\'') => {
                            out.push(b'\'');
                            self.pos += 2;
                        }
                        Some(b'\'') => {
                            self.pos += 1;
                            break;
                        }
                        Some(&c) => {
                            out.push(c);
                            self.pos += 1;
                        }
                    }
                }
                String::from_utf8(out)
                    .map(Some)
                    .or_else(|_| self.err("label is not valid UTF-8"))
            }
            _ => {
                let start = self.pos;
                while let Some(&c) = self.src.get(self.pos) {
                    if is_delimiter(c) || c.is_ascii_whitespace() {
                        break;
                    }
                    self.pos += 1;
                }
                if start == self.pos {
                    return Ok(None);
                }
                let text = std::str::from_utf8(&self.src[start..self.pos])
                    .map_err(|_| Error::Newick {
                        position: start,
                        message: "label is not valid UTF-8".into(),
                    })?;
                Ok(Some(text.to_string()))
            }
        }
    }

    fn length(&mut self) -> Result<f64> {
        self.skip_blank()?;
        let start = self.pos;
        while let Some(&c) = self.src.get(self.pos) {
            if c.is_ascii_digit() || matches!(c, b'.' | b'-' | b'+' | b'e' | b'E') {
                self.pos += 1;
            } else {
                break;
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap_or("");
        match text.parse::<f64>() {
            Ok(v) if v.is_finite() && v >= 0.0 => Ok(v),
            Ok(v) => Err(Error::Newick {
                position: start,
                message: format!("branch length {v} must be finite and non-negative"),
            }),
            Err(_) => Err(Error::Newick {
                position: start,
                message: format!("bad branch length '{text}'"),
            }),
        }
    }
}

fn is_delimiter(c: u8) -> bool {
    matches!(c, b'(' | b')' | b',' | b':' | b';' | b'[' | b']' | b'\'')
}

/// Parses a single Newick statement terminated by `;`.
pub fn parse_newick(text: &str) -> Result<Tree> {
    let mut p = Parser {
        src: text.as_bytes(),
        pos: 0,
        nodes: Vec::new(),
    };
    if p.peek()?.is_none() {
        return p.err("empty input");
    }
    let root = p.subtree(None)?;
    match p.peek()? {
        Some(b';') => p.pos += 1,
        Some(b')') => return p.err("unbalanced parentheses: unexpected ')'"),
        Some(c) => return p.err(format!("expected ';', found '{}'", c as char)),
        None => return p.err("missing terminating ';'"),
    }
    if p.peek()?.is_some() {
        return p.err("trailing content after ';'");
    }
    p.nodes[root].branch_length = 0.0;
    Tree::assemble(p.nodes, root, 2)
}

fn quote_label(label: &str) -> String {
    let plain = !label.is_empty()
        && label
            .bytes()
            .all(|c| !is_delimiter(c) && !c.is_ascii_whitespace());
    if plain {
        label.to_string()
    } else {
        format!("'{}'", label.replace('\'', "''"))
    }
}

pub(super) fn write_newick(tree: &Tree) -> String {
    fn write(tree: &Tree, id: NodeId, out: &mut String) {
        let node = tree.node(id);
        if !node.children.is_empty() {
            out.push('(');
            for (i, &c) in node.children.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write(tree, c, out);
            }
            out.push(')');
        }
        if let Some(l) = &node.label {
            out.push_str(&quote_label(l));
        }
        if node.parent.is_some() {
            out.push(':');
            out.push_str(&format!("{}", node.branch_length));
        }
    }
    let mut out = String::new();
    write(tree, tree.root(), &mut out);
    out.push(';');
    out
}
