//! Newick with per-edge model annotations.
//!
//! An edge may carry `[&model=K3,a=0.1,b=0.2,c=0.3]` (F adds
//! `pi=0.1:0.2:0.3:0.4`). Edges with only a length get JC parameters, or B
//! parameters when the tree uses binary models. The root may carry
//! `[&root=...]` with its stationary vector.

use std::fmt::Write as _;

use super::{EdgeModel, NodeId, PhyloTree, TreeBuilder};
use crate::alphabet::Alphabet;
use crate::error::{Error, Result};
use crate::models::{Family, ModelParams};
use crate::tensor::ProbabilityVector;

#[derive(Debug, Default)]
struct Annotation {
    model: Option<ModelParams>,
    root_pi: Option<Vec<f64>>,
}

#[derive(Debug)]
struct RawNode {
    label: Option<String>,
    length: Option<f64>,
    annotation: Annotation,
    children: Vec<RawNode>,
    offset: usize,
}

struct Parser<'a> {
    text: &'a str,
    pos: usize,
}

fn syntax(offset: usize, message: impl Into<String>) -> Error {
    Error::NewickSyntax { offset, message: message.into() }
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<u8> {
        self.text.as_bytes().get(self.pos).copied()
    }

    fn skip_ws(&mut self) {
        while self.peek().is_some_and(|b| b.is_ascii_whitespace()) {
            self.pos += 1;
        }
    }

    fn expect(&mut self, b: u8) -> Result<()> {
        self.skip_ws();
        if self.peek() == Some(b) {
            self.pos += 1;
            Ok(())
        } else {
            Err(syntax(self.pos, format!("expected `{}`", b as char)))
        }
    }

    fn subtree(&mut self) -> Result<RawNode> {
        self.skip_ws();
        let offset = self.pos;
        let mut children = Vec::new();
        if self.peek() == Some(b'(') {
            self.pos += 1;
            loop {
                children.push(self.subtree()?);
                self.skip_ws();
                match self.peek() {
                    Some(b',') => self.pos += 1,
                    Some(b')') => {
                        self.pos += 1;
                        break;
                    }
                    _ => return Err(syntax(self.pos, "expected `,` or `)`")),
                }
            }
        }
        let label = self.label();
        let mut annotation = Annotation::default();
        let mut length = None;
        self.annotation(&mut annotation)?;
        self.skip_ws();
        if self.peek() == Some(b':') {
            self.pos += 1;
            length = Some(self.number()?);
            self.annotation(&mut annotation)?;
        }
        if children.is_empty() && label.is_none() {
            return Err(syntax(offset, "leaf without a label"));
        }
        Ok(RawNode { label, length, annotation, children, offset })
    }

    fn label(&mut self) -> Option<String> {
        self.skip_ws();
        let start = self.pos;
        while let Some(b) = self.peek() {
            if b"()[],:;".contains(&b) || b.is_ascii_whitespace() {
                break;
            }
            self.pos += 1;
        }
        (self.pos > start).then(|| self.text[start..self.pos].to_owned())
    }

    fn number(&mut self) -> Result<f64> {
        self.skip_ws();
        let start = self.pos;
        while self.peek().is_some_and(|b| b.is_ascii_digit() || b"+-.eE".contains(&b)) {
            self.pos += 1;
        }
        let t = self.text[start..self.pos]
            .parse::<f64>()
            .map_err(|_| syntax(start, "malformed branch length"))?;
        if !t.is_finite() || t < 0.0 {
            return Err(syntax(start, "branch length must be a nonnegative number"));
        }
        Ok(t)
    }

    /// Zero or more `[...]` blocks; only `&`-prefixed ones are interpreted.
    fn annotation(&mut self, into: &mut Annotation) -> Result<()> {
        loop {
            self.skip_ws();
            if self.peek() != Some(b'[') {
                return Ok(());
            }
            let open = self.pos;
            let close = self.text[open..].find(']').ok_or_else(|| syntax(open, "unterminated comment"))? + open;
            self.pos = close + 1;
            let body = &self.text[open + 1..close];
            if let Some(fields) = body.strip_prefix('&') {
                parse_fields(fields, open + 2, into)?;
            }
        }
    }
}

fn parse_fields(body: &str, offset: usize, into: &mut Annotation) -> Result<()> {
    let mut family = None;
    let mut values: [Option<f64>; 3] = [None; 3];
    let mut pi = None;
    let mut at = offset;
    for field in body.split(',') {
        let here = at;
        at += field.len() + 1;
        let field = field.trim();
        if field.is_empty() {
            continue;
        }
        let (key, value) = field.split_once('=').ok_or_else(|| syntax(here, format!("`{field}` is not key=value")))?;
        let (key, value) = (key.trim(), value.trim());
        let num = |v: &str| v.parse::<f64>().map_err(|_| syntax(here, format!("`{v}` is not a number")));
        match key {
            "model" => family = Some(value.parse::<Family>().map_err(|e| syntax(here, e.to_string()))?),
            "a" => values[0] = Some(num(value)?),
            "b" => values[1] = Some(num(value)?),
            "c" => values[2] = Some(num(value)?),
            "pi" | "root" => {
                let v = value.split(':').map(num).collect::<Result<Vec<_>>>()?;
                if key == "root" {
                    into.root_pi = Some(v);
                } else {
                    pi = Some(v);
                }
            }
            _ => return Err(syntax(here, format!("unknown annotation key `{key}`"))),
        }
    }
    let Some(family) = family else {
        if values.iter().any(Option::is_some) || pi.is_some() {
            return Err(syntax(offset, "model weights given without `model=`"));
        }
        return Ok(());
    };
    let need = |i: usize| values[i].ok_or_else(|| syntax(offset, format!("{family} needs `{}`", ["a", "b", "c"][i])));
    let params = match family {
        Family::Jc => ModelParams::Jc { a: need(0)? },
        Family::K2 => ModelParams::K2 { a: need(0)?, b: need(1)? },
        Family::K3 => ModelParams::K3 { a: need(0)?, b: need(1)?, c: need(2)? },
        Family::B => ModelParams::Binary { a: need(0)? },
        Family::F => {
            let pi = pi.ok_or_else(|| syntax(offset, "F needs `pi`"))?;
            let pi: [f64; 4] = pi.try_into().map_err(|_| syntax(offset, "F needs four `pi` entries"))?;
            ModelParams::Felsenstein { a: need(0)?, pi }
        }
    };
    into.model = Some(params);
    Ok(())
}

fn uses_binary(node: &RawNode) -> bool {
    node.annotation.model.as_ref().is_some_and(|m| m.alphabet() == Alphabet::Binary)
        || node.children.iter().any(uses_binary)
}

fn build(raw: RawNode, b: &mut TreeBuilder, alphabet: Alphabet) -> Result<NodeId> {
    if !raw.children.is_empty() && raw.children.len() != 2 {
        return Err(Error::NonBinary { offset: raw.offset, children: raw.children.len() });
    }
    let id = b.add_node(raw.label.as_deref());
    for child in raw.children {
        let edge = match (&child.annotation.model, child.length) {
            (Some(m), Some(t)) => EdgeModel::with_length(m.clone(), t),
            (Some(m), None) => EdgeModel::from_params(m.clone()),
            (None, t) => EdgeModel::from_length(t.unwrap_or(0.0), alphabet)?,
        };
        let c = build(child, b, alphabet)?;
        b.attach(id, c, edge);
    }
    Ok(id)
}

pub fn parse_newick(text: &str) -> Result<PhyloTree> {
    let mut p = Parser { text, pos: 0 };
    let raw = p.subtree()?;
    p.expect(b';')?;
    p.skip_ws();
    if p.pos != text.len() {
        return Err(syntax(p.pos, "trailing input after `;`"));
    }
    if raw.children.is_empty() {
        return Err(syntax(0, "tree has a single leaf"));
    }
    if raw.annotation.model.is_some() {
        return Err(syntax(raw.offset, "the root has no edge to annotate"));
    }
    let alphabet = if uses_binary(&raw) { Alphabet::Binary } else { Alphabet::Dna };
    let root_pi = match &raw.annotation.root_pi {
        Some(v) => ProbabilityVector::new(v.clone())?,
        None => ProbabilityVector::uniform(alphabet.size()),
    };
    let mut b = TreeBuilder::new();
    let root = build(raw, &mut b, alphabet)?;
    b.finish(root, alphabet, root_pi)
}

fn emit_annotation(out: &mut String, params: &ModelParams) {
    let _ = write!(out, "[&model={}", params.family());
    for (name, v) in params.family().parameter_names().iter().zip(params.free_values()) {
        let _ = write!(out, ",{name}={v}");
    }
    if let ModelParams::Felsenstein { pi, .. } = params {
        let _ = write!(out, ",pi={}:{}:{}:{}", pi[0], pi[1], pi[2], pi[3]);
    }
    out.push(']');
}

fn emit_node(tree: &PhyloTree, id: NodeId, out: &mut String) {
    if let Some((l, r)) = tree.children(id) {
        out.push('(');
        emit_node(tree, l, out);
        out.push(',');
        emit_node(tree, r, out);
        out.push(')');
    }
    if let Some(label) = tree.label(id) {
        out.push_str(label);
    }
    if let Some(edge) = tree.edge(id) {
        if !edge.is_from_length() {
            emit_annotation(out, edge.params());
        }
        if let Some(t) = edge.length() {
            let _ = write!(out, ":{t}");
        }
    }
}

/// Canonical text: no whitespace, annotations before lengths, shortest
/// round-tripping number formatting.
pub fn emit_newick(tree: &PhyloTree) -> String {
    let mut out = String::new();
    emit_node(tree, tree.root(), &mut out);
    let uniform = ProbabilityVector::uniform(tree.alphabet().size());
    if tree.root_pi() != &uniform {
        let w: Vec<String> = tree.root_pi().weights().iter().map(f64::to_string).collect();
        let _ = write!(out, "[&root={}]", w.join(":"));
    }
    out.push(';');
    out
}
