//! Rooted binary trees, alignments and circuit schedules.

mod circuit;
mod fasta;
mod newick;

pub use circuit::{compile_circuit, CircuitSchedule, Gate};
pub use fasta::{parse_fasta, parse_fasta_with, Alignment};
pub use newick::{emit_newick, parse_newick};

use std::collections::HashSet;

use crate::alphabet::Alphabet;
use crate::error::{Error, Result};
use crate::models::{binary_from_branch_length, jc_from_branch_length, ModelParams};
use crate::tensor::ProbabilityVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Substitution model on the edge above a node. `length` is kept for
/// display and round-tripping; `from_length` records that the parameters
/// were derived from it rather than given explicitly.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeModel {
    params: ModelParams,
    length: Option<f64>,
    from_length: bool,
}

impl EdgeModel {
    pub fn from_params(params: ModelParams) -> Self {
        Self { params, length: None, from_length: false }
    }

    /// JC (DNA) or B (binary) parameters from a branch length.
    pub fn from_length(t: f64, alphabet: Alphabet) -> Result<Self> {
        let params = match alphabet {
            Alphabet::Dna => jc_from_branch_length(t)?,
            Alphabet::Binary => binary_from_branch_length(t)?,
        };
        Ok(Self { params, length: Some(t), from_length: true })
    }

    /// Explicit parameters that also carry a displayed length.
    pub fn with_length(params: ModelParams, length: f64) -> Self {
        Self { params, length: Some(length), from_length: false }
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn length(&self) -> Option<f64> {
        self.length
    }

    pub fn is_from_length(&self) -> bool {
        self.from_length
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Node {
    label: Option<String>,
    parent: Option<NodeId>,
    children: Vec<NodeId>,
    edge: Option<EdgeModel>,
}

/// Incremental tree construction; [`TreeBuilder::finish`] validates.
#[derive(Debug, Clone, Default)]
pub struct TreeBuilder {
    nodes: Vec<Node>,
}

impl TreeBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_node(&mut self, label: Option<&str>) -> NodeId {
        self.nodes.push(Node { label: label.map(str::to_owned), parent: None, children: Vec::new(), edge: None });
        NodeId(self.nodes.len() - 1)
    }

    pub fn add_leaf(&mut self, label: &str) -> NodeId {
        self.add_node(Some(label))
    }

    /// Appends `child` as the last child of `parent`.
    pub fn attach(&mut self, parent: NodeId, child: NodeId, edge: EdgeModel) {
        self.nodes[child.0].parent = Some(parent);
        self.nodes[child.0].edge = Some(edge);
        self.nodes[parent.0].children.push(child);
    }

    pub fn non_root_nodes(&self) -> Vec<NodeId> {
        (0..self.nodes.len()).filter(|&i| self.nodes[i].parent.is_some()).map(NodeId).collect()
    }

    /// Inserts `mid` on the edge above `target`. `target` keeps its edge and
    /// becomes the first child of `mid`, which hangs from the old parent by `upper`.
    pub fn subdivide(&mut self, target: NodeId, mid: NodeId, upper: EdgeModel) {
        let parent = self.nodes[target.0].parent.expect("subdivided node has a parent");
        let pos = self.nodes[parent.0].children.iter().position(|&c| c == target).expect("child of its parent");
        self.nodes[parent.0].children[pos] = mid;
        self.nodes[mid.0].parent = Some(parent);
        self.nodes[mid.0].edge = Some(upper);
        self.nodes[mid.0].children.insert(0, target);
        self.nodes[target.0].parent = Some(mid);
    }

    pub fn swap_children(&mut self, node: NodeId) {
        self.nodes[node.0].children.reverse();
    }

    pub fn finish(self, root: NodeId, alphabet: Alphabet, root_pi: ProbabilityVector) -> Result<PhyloTree> {
        PhyloTree::from_parts(self.nodes, root, alphabet, root_pi)
    }
}

/// Rooted binary tree with a substitution model on every edge and a
/// stationary vector at the root.
#[derive(Debug, Clone, PartialEq)]
pub struct PhyloTree {
    nodes: Vec<Node>,
    root: NodeId,
    alphabet: Alphabet,
    root_pi: ProbabilityVector,
    leaves: Vec<NodeId>,
    postorder: Vec<NodeId>,
}

impl PhyloTree {
    fn from_parts(nodes: Vec<Node>, root: NodeId, alphabet: Alphabet, root_pi: ProbabilityVector) -> Result<Self> {
        if root.0 >= nodes.len() || nodes[root.0].parent.is_some() {
            return Err(Error::Dimension("root must be a parentless node".into()));
        }
        if root_pi.len() != alphabet.size() {
            return Err(Error::Dimension(format!(
                "root distribution has {} entries for an alphabet of {}",
                root_pi.len(),
                alphabet.size()
            )));
        }
        let mut leaves = Vec::new();
        let mut postorder = Vec::new();
        let mut labels = HashSet::new();
        let mut visited = 0;
        // iterative DFS; children pushed in reverse so the left child is visited first
        let mut stack = vec![(root, false)];
        while let Some((id, expanded)) = stack.pop() {
            let node = &nodes[id.0];
            if expanded {
                postorder.push(id);
                continue;
            }
            visited += 1;
            if id != root {
                let edge = node.edge.as_ref().ok_or_else(|| Error::InvalidParams("edge without a model".into()))?;
                edge.params.validate()?;
                if edge.params.alphabet() != alphabet {
                    return Err(Error::AlphabetMismatch(format!(
                        "{} edge in a {alphabet:?} tree",
                        edge.params.family()
                    )));
                }
            }
            match node.children.len() {
                0 => {
                    let label = node.label.clone().filter(|l| !l.is_empty()).ok_or_else(|| {
                        Error::InvalidParams("leaf without a label".into())
                    })?;
                    if !labels.insert(label.clone()) {
                        return Err(Error::DuplicateLabel(label));
                    }
                    leaves.push(id);
                    postorder.push(id);
                }
                2 => {
                    stack.push((id, true));
                    stack.push((node.children[1], false));
                    stack.push((node.children[0], false));
                }
                n => return Err(Error::NonBinary { offset: 0, children: n }),
            }
        }
        if leaves.len() < 2 {
            return Err(Error::InvalidParams("a tree needs at least two leaves".into()));
        }
        if visited != nodes.len() {
            return Err(Error::InvalidParams("builder holds nodes unreachable from the root".into()));
        }
        Ok(Self { nodes, root, alphabet, root_pi, leaves, postorder })
    }

    pub fn root(&self) -> NodeId {
        self.root
    }

    pub fn alphabet(&self) -> Alphabet {
        self.alphabet
    }

    pub fn root_pi(&self) -> &ProbabilityVector {
        &self.root_pi
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn leaf_count(&self) -> usize {
        self.leaves.len()
    }

    /// Leaves in left-to-right order.
    pub fn leaves(&self) -> &[NodeId] {
        &self.leaves
    }

    pub fn leaf_labels(&self) -> Vec<&str> {
        self.leaves.iter().map(|&l| self.label(l).expect("leaves are labeled")).collect()
    }

    pub fn label(&self, id: NodeId) -> Option<&str> {
        self.nodes[id.0].label.as_deref()
    }

    pub fn is_leaf(&self, id: NodeId) -> bool {
        self.nodes[id.0].children.is_empty()
    }

    pub fn parent(&self, id: NodeId) -> Option<NodeId> {
        self.nodes[id.0].parent
    }

    /// Left and right child of an internal node.
    pub fn children(&self, id: NodeId) -> Option<(NodeId, NodeId)> {
        match self.nodes[id.0].children.as_slice() {
            [l, r] => Some((*l, *r)),
            _ => None,
        }
    }

    pub fn edge(&self, id: NodeId) -> Option<&EdgeModel> {
        self.nodes[id.0].edge.as_ref()
    }

    /// Children before parents, left subtree before right.
    pub fn postorder(&self) -> &[NodeId] {
        &self.postorder
    }

    pub fn preorder(&self) -> Vec<NodeId> {
        let mut out = Vec::with_capacity(self.nodes.len());
        let mut stack = vec![self.root];
        while let Some(id) = stack.pop() {
            out.push(id);
            if let Some((l, r)) = self.children(id) {
                stack.push(r);
                stack.push(l);
            }
        }
        out
    }

    /// Non-root nodes in pre-order; each stands for the edge above it.
    pub fn edges(&self) -> Vec<NodeId> {
        self.preorder().into_iter().filter(|&id| id != self.root).collect()
    }

    pub fn leaves_under(&self, id: NodeId) -> usize {
        match self.children(id) {
            Some((l, r)) => self.leaves_under(l) + self.leaves_under(r),
            None => 1,
        }
    }

    pub fn find_leaf(&self, label: &str) -> Option<NodeId> {
        self.leaves.iter().copied().find(|&l| self.label(l) == Some(label))
    }

    /// Same topology with every edge model replaced by `f(node, old)`. A
    /// change of alphabet resets the root distribution to uniform.
    pub fn map_edges(&self, mut f: impl FnMut(NodeId, &EdgeModel) -> Result<EdgeModel>) -> Result<Self> {
        let mut nodes = self.nodes.clone();
        for (i, node) in nodes.iter_mut().enumerate() {
            if let Some(edge) = &node.edge {
                node.edge = Some(f(NodeId(i), edge)?);
            }
        }
        let alphabet = nodes
            .iter()
            .find_map(|n| n.edge.as_ref().map(|e| e.params.alphabet()))
            .unwrap_or(self.alphabet);
        let root_pi = if alphabet == self.alphabet {
            self.root_pi.clone()
        } else {
            ProbabilityVector::uniform(alphabet.size())
        };
        Self::from_parts(nodes, self.root, alphabet, root_pi)
    }

    pub fn with_root_pi(&self, pi: ProbabilityVector) -> Result<Self> {
        Self::from_parts(self.nodes.clone(), self.root, self.alphabet, pi)
    }
}
