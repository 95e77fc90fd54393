use super::{NodeId, PhyloTree};
use crate::models::ModelParams;
use crate::tensor::SlotIndex;

#[derive(Debug, Clone, PartialEq)]
pub enum Gate {
    /// Copy the lineage in `slot` into `slot` and `slot + 1`.
    Split { slot: SlotIndex },
    /// Evolve `slot` along the edge above `edge`.
    Evolve { slot: SlotIndex, edge: NodeId, params: ModelParams },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CircuitSchedule {
    gates: Vec<Gate>,
    leaves: Vec<NodeId>,
}

impl CircuitSchedule {
    pub fn gates(&self) -> &[Gate] {
        &self.gates
    }

    /// Leaf held by each output slot.
    pub fn leaves(&self) -> &[NodeId] {
        &self.leaves
    }

    pub fn split_slots(&self) -> Vec<usize> {
        self.gates
            .iter()
            .filter_map(|g| match g {
                Gate::Split { slot } => Some(slot.position()),
                _ => None,
            })
            .collect()
    }
}

/// Pre-order schedule: each internal node splits its slot, the two copies
/// evolve along the child edges, then the left and right subtrees follow.
pub fn compile_circuit(tree: &PhyloTree) -> CircuitSchedule {
    let mut gates = Vec::with_capacity(3 * tree.leaf_count());
    emit(tree, tree.root(), 1, &mut gates);
    CircuitSchedule { gates, leaves: tree.leaves().to_vec() }
}

fn emit(tree: &PhyloTree, node: NodeId, slot: usize, gates: &mut Vec<Gate>) {
    let Some((l, r)) = tree.children(node) else { return };
    let evolve = |slot: usize, edge: NodeId| Gate::Evolve {
        slot: SlotIndex::new(slot),
        edge,
        params: tree.edge(edge).expect("non-root node has an edge").params().clone(),
    };
    gates.push(Gate::Split { slot: SlotIndex::new(slot) });
    gates.push(evolve(slot, l));
    gates.push(evolve(slot + 1, r));
    emit(tree, l, slot, gates);
    emit(tree, r, slot + tree.leaves_under(l), gates);
}
