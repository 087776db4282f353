//! Minimal Newick reader and writer.
//!
//! Supports nested clades, unquoted or single-quoted labels, and `:length`
//! annotations. Comments in square brackets are skipped.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct NewickNode {
    pub name: Option<String>,
    pub length: Option<f64>,
    pub children: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NewickTree {
    pub nodes: Vec<NewickNode>,
    pub root: usize,
}

/// Formats a branch length with 12 significant digits, in the shortest form
/// that parses back to the same value.
pub fn format_length(x: f64) -> String {
    let rounded: f64 = format!("{x:.11e}").parse().unwrap_or(x);
    let s = format!("{rounded}");
    if s == "-0" {
        "0".to_string()
    } else {
        s
    }
}

fn needs_quotes(name: &str) -> bool {
    name.chars()
        .any(|c| c.is_whitespace() || "(),:;[]'".contains(c))
}

fn write_label(out: &mut String, name: &str) {
    if needs_quotes(name) {
        out.push('\'');
        out.push_str(&name.replace('\'', "''"));
        out.push('\'');
    } else {
        out.push_str(name);
    }
}

impl NewickTree {
    pub fn parse(text: &str) -> Result<Self> {
        let mut p = Parser {
            chars: text.chars().collect(),
            pos: 0,
            nodes: Vec::new(),
        };
        let root = p.clade()?;
        p.skip_ws();
        if p.peek() != Some(';') {
            return Err(p.err("expected ';' at end of tree"));
        }
        p.pos += 1;
        p.skip_ws();
        if p.pos != p.chars.len() {
            return Err(p.err("trailing characters after ';'"));
        }
        Ok(NewickTree {
            nodes: p.nodes,
            root,
        })
    }

    pub fn is_leaf(&self, id: usize) -> bool {
        self.nodes[id].children.is_empty()
    }

    /// Leaf names in depth-first order.
    pub fn leaf_names(&self) -> Vec<Option<String>> {
        let mut out = Vec::new();
        let mut stack = vec![self.root];
        while let Some(v) = stack.pop() {
            let n = &self.nodes[v];
            if n.children.is_empty() {
                out.push(n.name.clone());
            }
            stack.extend(n.children.iter().rev());
        }
        out
    }

    /// Serializes the tree as written (no reordering).
    pub fn to_newick(&self) -> String {
        let mut out = String::new();
        self.write_node(self.root, &mut out);
        out.push(';');
        out
    }

    fn write_node(&self, id: usize, out: &mut String) {
        let n = &self.nodes[id];
        if !n.children.is_empty() {
            out.push('(');
            for (i, &c) in n.children.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                self.write_node(c, out);
            }
            out.push(')');
        }
        if let Some(name) = &n.name {
            write_label(out, name);
        }
        if let Some(len) = n.length {
            out.push(':');
            out.push_str(&format_length(len));
        }
    }

    /// Reorders children so that each clade precedes its siblings when its
    /// smallest leaf label is smaller.
    pub fn canonicalize(&mut self) {
        fn min_label(t: &mut NewickTree, id: usize) -> String {
            if t.nodes[id].children.is_empty() {
                return t.nodes[id].name.clone().unwrap_or_default();
            }
            let kids = t.nodes[id].children.clone();
            let mut keyed: Vec<(String, usize)> =
                kids.into_iter().map(|c| (min_label(t, c), c)).collect();
            keyed.sort();
            let m = keyed[0].0.clone();
            t.nodes[id].children = keyed.into_iter().map(|(_, c)| c).collect();
            m
        }
        let root = self.root;
        min_label(self, root);
    }
}

struct Parser {
    chars: Vec<char>,
    pos: usize,
    nodes: Vec<NewickNode>,
}

impl Parser {
    fn err(&self, msg: &str) -> Error {
        let line = self.chars[..self.pos.min(self.chars.len())]
            .iter()
            .filter(|&&c| c == '\n')
            .count()
            + 1;
        Error::Parse {
            line,
            msg: format!("{msg} (offset {})", self.pos),
        }
    }

    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).copied()
    }

    fn skip_ws(&mut self) {
        loop {
            match self.peek() {
                Some(c) if c.is_whitespace() => self.pos += 1,
                Some('[') => {
                    while let Some(c) = self.peek() {
                        self.pos += 1;
                        if c == ']' {
                            break;
                        }
                    }
                }
                _ => break,
            }
        }
    }

    fn clade(&mut self) -> Result<usize> {
        self.skip_ws();
        let mut children = Vec::new();
        if self.peek() == Some('(') {
            self.pos += 1;
            loop {
                children.push(self.clade()?);
                self.skip_ws();
                match self.peek() {
                    Some(',') => self.pos += 1,
                    Some(')') => {
                        self.pos += 1;
                        break;
                    }
                    _ => return Err(self.err("expected ',' or ')'")),
                }
            }
        }
        self.skip_ws();
        let name = self.label()?;
        self.skip_ws();
        let length = if self.peek() == Some(':') {
            self.pos += 1;
            self.skip_ws();
            Some(self.number()?)
        } else {
            None
        };
        if children.is_empty() && name.is_none() && length.is_none() {
            return Err(self.err("empty clade"));
        }
        self.nodes.push(NewickNode {
            name,
            length,
            children,
        });
        Ok(self.nodes.len() - 1)
    }

    fn label(&mut self) -> Result<Option<String>> {
        if self.peek() == Some('\'') {
            self.pos += 1;
            let mut s = String::new();
            loop {
                match self.peek() {
                    None => return Err(self.err("unterminated quoted label")),
                    Some('\'') => {
                        self.pos += 1;
                        if self.peek() == Some('\'') {
                            s.push('\'');
                            self.pos += 1;
                        } else {
                            break;
                        }
                    }
                    Some(c) => {
                        s.push(c);
                        self.pos += 1;
                    }
                }
            }
            return Ok(Some(s));
        }
        let start = self.pos;
        while let Some(c) = self.peek() {
            if c.is_whitespace() || "(),:;[".contains(c) {
                break;
            }
            self.pos += 1;
        }
        if self.pos == start {
            Ok(None)
        } else {
            Ok(Some(self.chars[start..self.pos].iter().collect()))
        }
    }

    fn number(&mut self) -> Result<f64> {
        let start = self.pos;
        while let Some(c) = self.peek() {
            if c.is_ascii_digit() || "+-.eE".contains(c) {
                self.pos += 1;
            } else {
                break;
            }
        }
        let s: String = self.chars[start..self.pos].iter().collect();
        s.parse::<f64>()
            .map_err(|_| self.err(&format!("invalid branch length {s:?}")))
    }
}
