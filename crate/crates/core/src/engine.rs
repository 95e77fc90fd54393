//! Pattern distributions and tree likelihoods.
//!
//! Three likelihood engines share one pruning order:
//!
//! * `classical` multiplies propagated likelihood vectors, `L^A = (W^B L^B) ∘ (W^C L^C)`
//!   with `W = Mᵀ`;
//! * `quantum` evaluates the pruning map `μ = Tr_2 ∘ Ad U_cn^† ∘ E_dd ∘ (E_B ⊗ E_C)`
//!   on diagonal likelihood operators;
//! * `dual` rewrites each step as a probabilistic pinching driven by the left
//!   daughter, and finishes with the adjoint map applied to the root density.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::alphabet::Alphabet;
use crate::channels::{collective_diagonalizer, control_not, DiagonalDensity};
use crate::error::{Error, Result};
use crate::linalg::{conjugate_on_slot, kron, partial_trace, ComplexMatrix, STRUCTURAL_TOL};
use crate::models::{klein_unitary, markov, weights, MarkovMatrix, ModelParams};
use crate::tensor::{ProbabilityTensor, ProbabilityVector, SlotIndex};
use crate::treeio::{compile_circuit, Alignment, Gate, NodeId, PhyloTree};

/// Diagonal observable `L̂ = Σ_i L_i P_i` over the observable characters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LikelihoodOperator(Vec<f64>);

impl LikelihoodOperator {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Dimension("empty likelihood operator".into()));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::NotProbability(format!("likelihood entry {v}")));
        }
        Ok(Self(values))
    }

    pub fn indicator(n: usize, i: usize) -> Self {
        let mut v = vec![0.0; n];
        v[i] = 1.0;
        Self(v)
    }

    pub fn ones(n: usize) -> Self {
        Self(vec![1.0; n])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn to_matrix(&self) -> ComplexMatrix {
        ComplexMatrix::from_diagonal(&self.0)
    }

    /// Reads the diagonal of an operator; rounding-level negative entries are
    /// clipped, anything larger is an error.
    pub fn from_diagonal(m: &ComplexMatrix) -> Result<Self> {
        let d = m.diagonal();
        if let Some(v) = d.iter().find(|v| **v < -STRUCTURAL_TOL) {
            return Err(Error::NotProbability(format!("likelihood entry {v}")));
        }
        Self::new(d.into_iter().map(|v| v.max(0.0)).collect())
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        if self.dim() != other.dim() {
            return f64::INFINITY;
        }
        self.0.iter().zip(&other.0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

pub fn leaf_likelihood(character: char, alphabet: Alphabet) -> Result<LikelihoodOperator> {
    Ok(LikelihoodOperator::indicator(alphabet.size(), alphabet.index_of(character)?))
}

/// `ρ^π = Σ_i π_i P_i`, the root density.
#[derive(Debug, Clone, PartialEq)]
pub struct StationaryDensity {
    pi: ProbabilityVector,
}

impl StationaryDensity {
    pub fn new(pi: ProbabilityVector) -> Self {
        Self { pi }
    }

    pub fn pi(&self) -> &ProbabilityVector {
        &self.pi
    }

    pub fn dim(&self) -> usize {
        self.pi.len()
    }

    pub fn to_matrix(&self) -> ComplexMatrix {
        ComplexMatrix::from_diagonal(self.pi.weights())
    }

    /// The same state on the full character space, null symbol included.
    pub fn to_full(&self, alphabet: Alphabet) -> Result<DiagonalDensity> {
        DiagonalDensity::new(alphabet, &self.pi)
    }
}

fn check_dim(expect: usize, got: usize, what: &str) -> Result<()> {
    if expect != got {
        return Err(Error::Dimension(format!("{what}: expected dimension {expect}, got {got}")));
    }
    Ok(())
}

/// `W L` with `W = Mᵀ`: `(W L)_i = Σ_j M[j][i] L_j`.
fn propagate_classical(m: &MarkovMatrix, l: &LikelihoodOperator) -> Vec<f64> {
    let n = m.dim();
    (0..n).map(|i| (0..n).map(|j| m.get(j, i) * l.0[j]).sum()).collect()
}

pub fn classical_prune(
    lb: &LikelihoodOperator,
    lc: &LikelihoodOperator,
    mb: &MarkovMatrix,
    mc: &MarkovMatrix,
) -> Result<LikelihoodOperator> {
    let n = lb.dim();
    check_dim(n, lc.dim(), "classical prune")?;
    check_dim(n, mb.dim(), "classical prune")?;
    check_dim(n, mc.dim(), "classical prune")?;
    let b = propagate_classical(mb, lb);
    let c = propagate_classical(mc, lc);
    Ok(LikelihoodOperator(b.iter().zip(&c).map(|(x, y)| x * y).collect()))
}

/// Heisenberg-picture action of an edge on likelihood operators,
/// `X ↦ Σ_m K_m X K_m^†` with `Σ_m |K_m|∘² = Mᵀ`.
#[derive(Debug, Clone)]
pub struct EdgePropagator {
    kraus: Vec<ComplexMatrix>,
}

impl EdgePropagator {
    /// A single unitary; its Hadamard square `U ∘ U*` plays the role of `W`.
    pub fn from_unitary(u: &ComplexMatrix) -> Result<Self> {
        if !u.is_square() {
            return Err(Error::Dimension("propagator must be square".into()));
        }
        let defect = u.unitarity_defect();
        if defect > STRUCTURAL_TOL {
            return Err(Error::NotUnitary(defect));
        }
        Ok(Self { kraus: vec![u.clone()] })
    }

    /// Operator-sum propagator for any model: mixtures of the Klein
    /// permutations for the group-based families, identity and flip for B,
    /// and `√a·1` with `√((1−a)π_j)|i⟩⟨j|` for F.
    pub fn from_params(params: &ModelParams) -> Result<Self> {
        params.validate()?;
        let kraus = match *params {
            ModelParams::Jc { .. } | ModelParams::K2 { .. } | ModelParams::K3 { .. } => {
                let w = weights(params)?;
                let mut ops = Vec::new();
                for k in 0..2 {
                    for l in 0..2 {
                        if w.get(k, l) > 0.0 {
                            ops.push(klein_unitary(k, l).scale_real(w.get(k, l).sqrt()));
                        }
                    }
                }
                ops
            }
            ModelParams::Binary { a } => vec![
                ComplexMatrix::identity(2).scale_real((1.0 - a).sqrt()),
                ComplexMatrix::pauli_x().scale_real(a.sqrt()),
            ],
            ModelParams::Felsenstein { a, pi } => {
                let mut ops = vec![ComplexMatrix::identity(4).scale_real(a.sqrt())];
                for i in 0..4 {
                    for (j, p) in pi.iter().enumerate() {
                        ops.push(ComplexMatrix::unit(4, i, j).scale_real(((1.0 - a) * p).sqrt()));
                    }
                }
                ops
            }
        };
        Ok(Self { kraus })
    }

    pub fn dim(&self) -> usize {
        self.kraus[0].rows()
    }

    pub fn operators(&self) -> &[ComplexMatrix] {
        &self.kraus
    }

    /// `Σ_m |K_m|∘²`, the likelihood propagation matrix this realizes.
    pub fn propagation_matrix(&self) -> Vec<Vec<f64>> {
        let n = self.dim();
        let mut w = vec![vec![0.0; n]; n];
        for k in &self.kraus {
            for (i, row) in w.iter_mut().enumerate() {
                for (j, v) in row.iter_mut().enumerate() {
                    *v += k[(i, j)].norm_sqr();
                }
            }
        }
        w
    }

    pub fn apply(&self, x: &ComplexMatrix) -> Result<ComplexMatrix> {
        check_dim(self.dim(), x.rows(), "edge propagator")?;
        let n = self.dim();
        Ok(self.kraus.iter().fold(ComplexMatrix::zeros(n, n), |acc, k| &acc + &(&(k * x) * &k.adjoint())))
    }

    /// `E^*(ρ) = Σ_m K_m^† ρ K_m`.
    pub fn apply_adjoint(&self, rho: &ComplexMatrix) -> Result<ComplexMatrix> {
        check_dim(self.dim(), rho.rows(), "edge propagator")?;
        let n = self.dim();
        Ok(self.kraus.iter().fold(ComplexMatrix::zeros(n, n), |acc, k| &acc + &(&(&k.adjoint() * rho) * k)))
    }
}

/// `μ` built literally on the two-slot space: `E_B ⊗ E_C` slot by slot,
/// the collective pinching, `U_cn^†`, and the trace over slot 2.
pub fn quantum_prune_with(
    lb: &LikelihoodOperator,
    lc: &LikelihoodOperator,
    eb: &EdgePropagator,
    ec: &EdgePropagator,
) -> Result<LikelihoodOperator> {
    let n = lb.dim();
    check_dim(n, lc.dim(), "quantum prune")?;
    check_dim(n, eb.dim(), "quantum prune")?;
    check_dim(n, ec.dim(), "quantum prune")?;
    let slots = [n, n];
    let joint = kron(&lb.to_matrix(), &lc.to_matrix());
    let mut after_b = ComplexMatrix::zeros(n * n, n * n);
    for k in &eb.kraus {
        after_b = &after_b + &conjugate_on_slot(k, &joint, &slots, SlotIndex::new(1))?;
    }
    let mut after_c = ComplexMatrix::zeros(n * n, n * n);
    for k in &ec.kraus {
        after_c = &after_c + &conjugate_on_slot(k, &after_b, &slots, SlotIndex::new(2))?;
    }
    let pinched = crate::channels::apply_channel(&collective_diagonalizer(n)?, &after_c)?;
    let ucn = control_not(n)?;
    let returned = &(&ucn.adjoint() * &pinched) * &ucn;
    LikelihoodOperator::from_diagonal(&partial_trace(&returned, &slots, SlotIndex::new(2))?)
}

/// The quantum pruning map with unitary edges.
pub fn quantum_prune(
    lb: &LikelihoodOperator,
    lc: &LikelihoodOperator,
    ub: &ComplexMatrix,
    uc: &ComplexMatrix,
) -> Result<LikelihoodOperator> {
    quantum_prune_with(lb, lc, &EdgePropagator::from_unitary(ub)?, &EdgePropagator::from_unitary(uc)?)
}

/// `μ` on product inputs evaluated slot-wise: `(E_B ⊗ E_C)(L^B ⊗ L^C)` is the
/// product `E_B(L^B) ⊗ E_C(L^C)`, whose collective pinching keeps
/// `⟨k|E_B(L^B)|k⟩⟨k|E_C(L^C)|k⟩` on `|kk⟩`, and `U_cn^†` then `Tr_2` moves
/// that weight to `|k⟩`.
fn quantum_prune_factored(
    lb: &LikelihoodOperator,
    lc: &LikelihoodOperator,
    eb: &EdgePropagator,
    ec: &EdgePropagator,
) -> Result<LikelihoodOperator> {
    let b = eb.apply(&lb.to_matrix())?;
    let c = ec.apply(&lc.to_matrix())?;
    let out: Vec<f64> = (0..lb.dim()).map(|k| b[(k, k)].re * c[(k, k)].re).collect();
    LikelihoodOperator::new(out.into_iter().map(|v| v.max(0.0)).collect())
}

/// Replaces the operators in slots `r` and `r+1` by their pruned parent.
pub fn prune_embedded(
    state: &[LikelihoodOperator],
    r: SlotIndex,
    eb: &EdgePropagator,
    ec: &EdgePropagator,
) -> Result<Vec<LikelihoodOperator>> {
    if state.len() < 2 {
        return Err(Error::InvalidSlot { slot: r.position(), slots: state.len() });
    }
    r.check(state.len() - 1)?;
    let k = r.axis();
    let parent = quantum_prune_factored(&state[k], &state[k + 1], eb, ec)?;
    let mut out = Vec::with_capacity(state.len() - 1);
    out.extend_from_slice(&state[..k]);
    out.push(parent);
    out.extend_from_slice(&state[k + 2..]);
    Ok(out)
}

/// `Tr(L̂ ρ^π) = Σ_i π_i L_i`.
pub fn site_likelihood(l: &LikelihoodOperator, pi: &StationaryDensity) -> Result<f64> {
    check_dim(pi.dim(), l.dim(), "site likelihood")?;
    Ok(l.0.iter().zip(pi.pi.weights()).map(|(a, b)| a * b).sum())
}

/// Probabilistic pinching `E_B(X) = Σ_k q_k P_k E_C(X) P_k` driven by the
/// left daughter, with `q_k = ν^{-1}⟨k|E_B(L^B)|k⟩`.
#[derive(Debug, Clone)]
pub struct DualStep {
    q: Vec<f64>,
    nu: f64,
    right: EdgePropagator,
}

impl DualStep {
    pub fn new(lb: &LikelihoodOperator, eb: &EdgePropagator, ec: &EdgePropagator) -> Result<Self> {
        check_dim(eb.dim(), lb.dim(), "dual prune")?;
        check_dim(eb.dim(), ec.dim(), "dual prune")?;
        let propagated = eb.apply(&lb.to_matrix())?.diagonal();
        let nu: f64 = propagated.iter().sum();
        if !(nu > 0.0) {
            return Err(Error::DeadLineage);
        }
        Ok(Self { q: propagated.iter().map(|p| p.max(0.0) / nu).collect(), nu, right: ec.clone() })
    }

    pub fn weights(&self) -> &[f64] {
        &self.q
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn apply(&self, x: &ComplexMatrix) -> Result<ComplexMatrix> {
        let y = self.right.apply(x)?;
        Ok(ComplexMatrix::from_fn(y.rows(), y.cols(), |i, j| if i == j { y[(i, i)] * self.q[i] } else { Complex64::new(0.0, 0.0) }))
    }

    /// `E^*(ρ) = Σ_k q_k Σ_m K_m^† P_k ρ P_k K_m`.
    pub fn apply_adjoint(&self, rho: &ComplexMatrix) -> Result<ComplexMatrix> {
        let pinched = ComplexMatrix::from_fn(rho.rows(), rho.cols(), |i, j| {
            if i == j {
                rho[(i, i)] * self.q[i]
            } else {
                Complex64::new(0.0, 0.0)
            }
        });
        self.right.apply_adjoint(&pinched)
    }
}

/// Dual-picture prune: returns `ν·E_B(L̂^C)` and `ν`, the trace of the
/// propagated left daughter.
pub fn dual_prune_with(
    lb: &LikelihoodOperator,
    lc: &LikelihoodOperator,
    eb: &EdgePropagator,
    ec: &EdgePropagator,
) -> Result<(LikelihoodOperator, f64)> {
    check_dim(lb.dim(), lc.dim(), "dual prune")?;
    let step = DualStep::new(lb, eb, ec)?;
    let out = step.apply(&lc.to_matrix())?.scale_real(step.nu);
    Ok((LikelihoodOperator::from_diagonal(&out)?, step.nu))
}

pub fn dual_prune(
    lb: &LikelihoodOperator,
    lc: &LikelihoodOperator,
    ub: &ComplexMatrix,
    uc: &ComplexMatrix,
) -> Result<(LikelihoodOperator, f64)> {
    dual_prune_with(lb, lc, &EdgePropagator::from_unitary(ub)?, &EdgePropagator::from_unitary(uc)?)
}

/// Runs the compiled circuit: split gates duplicate a slot, evolve gates
/// apply the edge's Markov matrix to it.
pub fn simulate_tree(tree: &PhyloTree) -> Result<ProbabilityTensor> {
    let schedule = compile_circuit(tree);
    let mut p = ProbabilityTensor::from_vector(tree.root_pi());
    for gate in schedule.gates() {
        p = match gate {
            Gate::Split { slot } => p.split_at(*slot)?,
            Gate::Evolve { slot, params, .. } => p.apply_matrix(*slot, markov(params)?.rows())?,
        };
    }
    Ok(p)
}

/// Draws `sites` independent columns by sending root states down the tree.
/// Rows follow the tree's leaf order.
pub fn sample_alignment<R: Rng + ?Sized>(tree: &PhyloTree, sites: usize, rng: &mut R) -> Result<Alignment> {
    let mut matrices: HashMap<NodeId, MarkovMatrix> = HashMap::new();
    for e in tree.edges() {
        matrices.insert(e, markov(tree.edge(e).expect("edge").params())?);
    }
    let leaf_slot: HashMap<NodeId, usize> = tree.leaves().iter().enumerate().map(|(i, &l)| (l, i)).collect();
    let mut rows = vec![Vec::with_capacity(sites); tree.leaf_count()];
    let preorder = tree.preorder();
    let mut state = vec![0usize; tree.node_count()];
    let draw = |weights: &mut dyn Iterator<Item = f64>, u: f64| {
        let mut acc = 0.0;
        let mut last = 0;
        for (i, w) in weights.enumerate() {
            acc += w;
            last = i;
            if u < acc {
                return i;
            }
        }
        last
    };
    for _ in 0..sites {
        for &v in &preorder {
            let u: f64 = rng.random();
            state[v.index()] = match tree.parent(v) {
                None => draw(&mut tree.root_pi().weights().iter().copied(), u),
                Some(p) => {
                    let m = &matrices[&v];
                    let from = state[p.index()];
                    draw(&mut (0..m.dim()).map(|i| m.get(i, from)), u)
                }
            };
            if let Some(&slot) = leaf_slot.get(&v) {
                rows[slot].push(state[v.index()] as u8);
            }
        }
    }
    let taxa = tree.leaf_labels().into_iter().map(str::to_owned).collect();
    Alignment::new(tree.alphabet(), taxa, rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EngineTag {
    Classical,
    Quantum,
    Dual,
}

impl EngineTag {
    pub const ALL: [EngineTag; 3] = [EngineTag::Classical, EngineTag::Quantum, EngineTag::Dual];
}

impl fmt::Display for EngineTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EngineTag::Classical => "classical",
            EngineTag::Quantum => "quantum",
            EngineTag::Dual => "dual",
        })
    }
}

impl FromStr for EngineTag {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "classical" => Ok(EngineTag::Classical),
            "quantum" => Ok(EngineTag::Quantum),
            "dual" => Ok(EngineTag::Dual),
            _ => Err(Error::InvalidParams(format!("unknown engine `{s}`"))),
        }
    }
}

/// Per-edge data prepared once per tree.
pub struct TreeEvaluator<'t> {
    tree: &'t PhyloTree,
    markov: HashMap<NodeId, MarkovMatrix>,
    propagators: HashMap<NodeId, EdgePropagator>,
    root: StationaryDensity,
}

/// Likelihood of one pattern and, for the dual engine, the root trace factor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatternLikelihood {
    pub likelihood: f64,
    pub nu: Option<f64>,
}

impl<'t> TreeEvaluator<'t> {
    pub fn new(tree: &'t PhyloTree) -> Result<Self> {
        let mut markov_map = HashMap::new();
        let mut propagators = HashMap::new();
        for e in tree.edges() {
            let params = tree.edge(e).expect("edge").params();
            markov_map.insert(e, markov(params)?);
            propagators.insert(e, EdgePropagator::from_params(params)?);
        }
        Ok(Self { tree, markov: markov_map, propagators, root: StationaryDensity::new(tree.root_pi().clone()) })
    }

    /// Replaces the propagator of one edge, e.g. by a unitary realization.
    pub fn set_propagator(&mut self, edge: NodeId, prop: EdgePropagator) -> Result<()> {
        check_dim(self.tree.alphabet().size(), prop.dim(), "edge propagator")?;
        self.propagators.insert(edge, prop);
        Ok(())
    }

    fn leaves(&self, pattern: &[usize]) -> Result<Vec<LikelihoodOperator>> {
        check_dim(self.tree.leaf_count(), pattern.len(), "pattern length")?;
        let n = self.tree.alphabet().size();
        pattern
            .iter()
            .map(|&c| {
                if c >= n {
                    Err(Error::AlphabetMismatch(format!("state {c} outside an alphabet of {n}")))
                } else {
                    Ok(LikelihoodOperator::indicator(n, c))
                }
            })
            .collect()
    }

    /// Likelihood of a single site pattern (states in leaf order).
    pub fn pattern_likelihood(&self, pattern: &[usize], engine: EngineTag) -> Result<PatternLikelihood> {
        let leaves = self.leaves(pattern)?;
        match engine {
            EngineTag::Classical => self.classical(leaves),
            EngineTag::Quantum => self.quantum(leaves),
            EngineTag::Dual => self.dual(leaves),
        }
    }

    fn classical(&self, leaves: Vec<LikelihoodOperator>) -> Result<PatternLikelihood> {
        let mut ops: HashMap<NodeId, LikelihoodOperator> = self.tree.leaves().iter().copied().zip(leaves).collect();
        for &v in self.tree.postorder() {
            if let Some((l, r)) = self.tree.children(v) {
                let lb = ops.remove(&l).expect("left child pruned");
                let lc = ops.remove(&r).expect("right child pruned");
                ops.insert(v, classical_prune(&lb, &lc, &self.markov[&l], &self.markov[&r])?);
            }
        }
        let root = ops.remove(&self.tree.root()).expect("root pruned");
        Ok(PatternLikelihood { likelihood: site_likelihood(&root, &self.root)?, nu: None })
    }

    /// Cherries are pruned in place inside the slot list; the slots of two
    /// siblings are always adjacent because leaves sit in left-to-right order.
    fn quantum(&self, leaves: Vec<LikelihoodOperator>) -> Result<PatternLikelihood> {
        let mut state = leaves;
        let mut holders: Vec<NodeId> = self.tree.leaves().to_vec();
        for &v in self.tree.postorder() {
            let Some((l, r)) = self.tree.children(v) else { continue };
            let k = holders.iter().position(|&h| h == l).expect("left child occupies a slot");
            debug_assert_eq!(holders[k + 1], r);
            state = prune_embedded(&state, SlotIndex::new(k + 1), &self.propagators[&l], &self.propagators[&r])?;
            holders.splice(k..k + 2, [v]);
        }
        let root = state.pop().expect("one operator left");
        let rho = self.root.to_matrix();
        let value = (&root.to_matrix() * &rho).trace().re;
        Ok(PatternLikelihood { likelihood: value, nu: None })
    }

    fn dual(&self, leaves: Vec<LikelihoodOperator>) -> Result<PatternLikelihood> {
        let mut ops: HashMap<NodeId, LikelihoodOperator> = self.tree.leaves().iter().copied().zip(leaves).collect();
        for &v in self.tree.postorder() {
            let Some((l, r)) = self.tree.children(v) else { continue };
            if v == self.tree.root() {
                break;
            }
            let lb = ops.remove(&l).expect("left child pruned");
            let lc = ops.remove(&r).expect("right child pruned");
            let parent = match dual_prune_with(&lb, &lc, &self.propagators[&l], &self.propagators[&r]) {
                Ok((p, _)) => p,
                Err(Error::DeadLineage) => return Ok(PatternLikelihood { likelihood: 0.0, nu: Some(0.0) }),
                Err(e) => return Err(e),
            };
            ops.insert(v, parent);
        }
        let (l, r) = self.tree.children(self.tree.root()).expect("root is internal");
        let lb = &ops[&l];
        let lc = &ops[&r];
        let step = match DualStep::new(lb, &self.propagators[&l], &self.propagators[&r]) {
            Ok(s) => s,
            Err(Error::DeadLineage) => return Ok(PatternLikelihood { likelihood: 0.0, nu: Some(0.0) }),
            Err(e) => return Err(e),
        };
        let evolved = step.apply_adjoint(&self.root.to_matrix())?;
        let value = step.nu() * (&lc.to_matrix() * &evolved).trace().re;
        Ok(PatternLikelihood { likelihood: value, nu: Some(step.nu()) })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteEntry {
    pub site: usize,
    pub likelihood: f64,
    pub log: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nu: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeReport {
    pub node: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub params: ModelParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteLikelihoodReport {
    pub engine: EngineTag,
    pub per_site: Vec<SiteEntry>,
    pub total_log_likelihood: f64,
    pub parameters: Vec<EdgeReport>,
}

pub fn edge_reports(tree: &PhyloTree) -> Vec<EdgeReport> {
    tree.edges()
        .into_iter()
        .map(|e| EdgeReport {
            node: e.index(),
            label: tree.label(e).map(str::to_owned),
            params: tree.edge(e).expect("edge").params().clone(),
        })
        .collect()
}

/// Sum in a fixed binary-tree order, independent of how the terms were produced.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    match xs.len() {
        0 => 0.0,
        1 => xs[0],
        n if n <= 8 => xs.iter().sum(),
        n => pairwise_sum(&xs[..n / 2]) + pairwise_sum(&xs[n / 2..]),
    }
}

/// Distinct site patterns in order of first appearance, and the pattern of each site.
pub fn compress_patterns(tree: &PhyloTree, aln: &Alignment) -> Result<(Vec<Vec<usize>>, Vec<usize>)> {
    let order = aln.leaf_order(tree)?;
    let mut index: HashMap<Vec<usize>, usize> = HashMap::new();
    let mut patterns = Vec::new();
    let mut site_pattern = Vec::with_capacity(aln.sites());
    for site in 0..aln.sites() {
        let col = aln.column(site, &order);
        let next = patterns.len();
        let id = *index.entry(col.clone()).or_insert(next);
        if id == next {
            patterns.push(col);
        }
        site_pattern.push(id);
    }
    Ok((patterns, site_pattern))
}

/// Per-pattern likelihoods; patterns are evaluated in parallel, results keep pattern order.
pub fn pattern_likelihoods(
    evaluator: &TreeEvaluator<'_>,
    patterns: &[Vec<usize>],
    engine: EngineTag,
) -> Result<Vec<PatternLikelihood>> {
    patterns.par_iter().map(|p| evaluator.pattern_likelihood(p, engine)).collect()
}

/// Log-likelihood of an alignment under a fixed tree.
pub fn alignment_loglik(tree: &PhyloTree, aln: &Alignment, engine: EngineTag) -> Result<SiteLikelihoodReport> {
    let evaluator = TreeEvaluator::new(tree)?;
    alignment_loglik_with(&evaluator, aln, engine)
}

pub fn alignment_loglik_with(
    evaluator: &TreeEvaluator<'_>,
    aln: &Alignment,
    engine: EngineTag,
) -> Result<SiteLikelihoodReport> {
    let tree = evaluator.tree;
    let (patterns, site_pattern) = compress_patterns(tree, aln)?;
    let values = pattern_likelihoods(evaluator, &patterns, engine)?;
    let mut per_site = Vec::with_capacity(site_pattern.len());
    for (site, &p) in site_pattern.iter().enumerate() {
        let v = values[p];
        if !(v.likelihood > 0.0) {
            return Err(Error::ZeroSiteLikelihood { site });
        }
        per_site.push(SiteEntry { site, likelihood: v.likelihood, log: v.likelihood.ln(), nu: v.nu });
    }
    let logs: Vec<f64> = per_site.iter().map(|s| s.log).collect();
    Ok(SiteLikelihoodReport {
        engine,
        total_log_likelihood: pairwise_sum(&logs),
        per_site,
        parameters: edge_reports(tree),
    })
}

/// Total log-likelihood from pattern counts; `None` when some site has zero likelihood.
pub fn compressed_loglik(
    evaluator: &TreeEvaluator<'_>,
    patterns: &[Vec<usize>],
    site_pattern: &[usize],
    engine: EngineTag,
) -> Result<Option<f64>> {
    let values = pattern_likelihoods(evaluator, patterns, engine)?;
    if values.iter().any(|v| !(v.likelihood > 0.0)) {
        return Ok(None);
    }
    let logs: Vec<f64> = values.iter().map(|v| v.likelihood.ln()).collect();
    let per_site: Vec<f64> = site_pattern.iter().map(|&p| logs[p]).collect();
    Ok(Some(pairwise_sum(&per_site)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{model_channel, unitary_from_markov, Family};
    use crate::random;
    use crate::treeio::{parse_fasta, parse_newick};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn jc(a: f64) -> MarkovMatrix {
        markov(&ModelParams::Jc { a }).unwrap()
    }

    fn e(i: usize) -> LikelihoodOperator {
        LikelihoodOperator::indicator(4, i)
    }

    fn close_vec(a: &LikelihoodOperator, b: &[f64], tol: f64) -> bool {
        a.values().iter().zip(b).all(|(x, y)| (x - y).abs() < tol)
    }

    fn random_l(rng: &mut ChaCha8Rng, n: usize) -> LikelihoodOperator {
        LikelihoodOperator::new((0..n).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap()
    }

    /// Joint leaf distribution by summing over every internal-node state.
    fn enumerate_joint(tree: &PhyloTree) -> ProbabilityTensor {
        let n = tree.alphabet().size();
        let s = tree.leaf_count();
        let internal: Vec<NodeId> = tree.preorder().into_iter().filter(|&v| !tree.is_leaf(v)).collect();
        let mut values = vec![0.0; n.pow(s as u32)];
        let mut state = vec![0usize; tree.node_count()];
        for code in 0..n.pow(internal.len() as u32) {
            let mut c = code;
            for &v in &internal {
                state[v.index()] = c % n;
                c /= n;
            }
            let mut weight = tree.root_pi().weights()[state[tree.root().index()]];
            for &v in &internal {
                if let Some(p) = tree.parent(v) {
                    weight *= markov(tree.edge(v).unwrap().params()).unwrap().get(state[v.index()], state[p.index()]);
                }
            }
            for (linear, slot) in values.iter_mut().enumerate() {
                let mut rest = linear;
                let mut w = weight;
                for &leaf in tree.leaves().iter().rev() {
                    let x = rest % n;
                    rest /= n;
                    let p = tree.parent(leaf).unwrap();
                    w *= markov(tree.edge(leaf).unwrap().params()).unwrap().get(x, state[p.index()]);
                }
                *slot += w;
            }
        }
        ProbabilityTensor::new(s, n, values).unwrap()
    }

    #[test]
    fn leaf_operators() {
        assert_eq!(leaf_likelihood('A', Alphabet::Dna).unwrap().values(), &[1.0, 0.0, 0.0, 0.0]);
        assert_eq!(leaf_likelihood('T', Alphabet::Dna).unwrap().values(), &[0.0, 0.0, 0.0, 1.0]);
        assert_eq!(leaf_likelihood('1', Alphabet::Binary).unwrap().values(), &[1.0, 0.0]);
        assert!(leaf_likelihood('N', Alphabet::Dna).is_err());
    }

    #[test]
    fn classical_prune_cases() {
        let id = MarkovMatrix::identity(4);
        assert_eq!(classical_prune(&e(0), &e(0), &id, &id).unwrap(), e(0));
        assert_eq!(classical_prune(&e(0), &e(1), &id, &id).unwrap().values(), &[0.0; 4]);
        // columns of JC(0.1): e_A ↦ (0.7, 0.1, 0.1, 0.1), e_C ↦ (0.1, 0.7, 0.1, 0.1)
        let out = classical_prune(&e(0), &e(1), &jc(0.1), &jc(0.1)).unwrap();
        assert!(close_vec(&out, &[0.07, 0.07, 0.01, 0.01], 1e-15));
        assert!(classical_prune(&e(0), &LikelihoodOperator::ones(2), &id, &id).is_err());
    }

    #[test]
    fn classical_prune_uses_transpose_for_felsenstein() {
        let params = ModelParams::Felsenstein { a: 0.3, pi: [0.1, 0.2, 0.3, 0.4] };
        let m = markov(&params).unwrap();
        let id = MarkovMatrix::identity(4);
        let out = classical_prune(&e(2), &LikelihoodOperator::ones(4), &m, &id).unwrap();
        // L_i = P(leaf = G | parent = i)
        for i in 0..4 {
            assert!((out.values()[i] - m.get(2, i)).abs() < 1e-15);
        }
    }

    #[test]
    fn quantum_prune_identity_is_elementwise_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let lb = random_l(&mut rng, 4);
        let lc = random_l(&mut rng, 4);
        let id = ComplexMatrix::identity(4);
        let out = quantum_prune(&lb, &lc, &id, &id).unwrap();
        let expect: Vec<f64> = lb.values().iter().zip(lc.values()).map(|(a, b)| a * b).collect();
        assert!(close_vec(&out, &expect, 1e-15));
    }

    #[test]
    fn quantum_prune_jc_cherry() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let u = unitary_from_markov(&jc(0.1), &mut rng).unwrap();
        let out = quantum_prune(&e(0), &e(1), &u, &u).unwrap();
        assert!(close_vec(&out, &[0.07, 0.07, 0.01, 0.01], 1e-10));
        assert!(matches!(
            quantum_prune(&e(0), &e(1), &ComplexMatrix::identity(4).scale_real(2.0), &u),
            Err(Error::NotUnitary(_))
        ));
        assert!(quantum_prune(&e(0), &e(1), &ComplexMatrix::identity(3), &u).is_err());
    }

    #[test]
    fn quantum_prune_matches_classical_on_unistochastic_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut worst = 0.0f64;
        for _ in 0..100 {
            let n = if rng.random_bool(0.5) { 4 } else { 3 };
            let ub = random::random_unitary(&mut rng, n);
            let uc = random::random_unitary(&mut rng, n);
            // W = U ∘ U*, so the stored column-stochastic M is its transpose
            let mb = MarkovMatrix::new(transpose(&ub.squared_moduli())).unwrap();
            let mc = MarkovMatrix::new(transpose(&uc.squared_moduli())).unwrap();
            let lb = random_l(&mut rng, n);
            let lc = random_l(&mut rng, n);
            let q = quantum_prune(&lb, &lc, &ub, &uc).unwrap();
            let c = classical_prune(&lb, &lc, &mb, &mc).unwrap();
            worst = worst.max(q.max_abs_diff(&c));
        }
        assert!(worst < 1e-10, "{worst}");
    }

    fn transpose(m: &[Vec<f64>]) -> Vec<Vec<f64>> {
        (0..m.len()).map(|i| m.iter().map(|row| row[i]).collect()).collect()
    }

    #[test]
    fn quantum_prune_sees_only_hadamard_squares() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let u = random::random_unitary(&mut rng, 4);
            let v = random::random_unitary(&mut rng, 4);
            let phase = |rng: &mut ChaCha8Rng| {
                let p: Vec<Complex64> = (0..4).map(|_| Complex64::from_polar(1.0, rng.random_range(0.0..6.3))).collect();
                ComplexMatrix::from_fn(4, 4, |i, j| if i == j { p[i] } else { Complex64::new(0.0, 0.0) })
            };
            let u2 = &(&phase(&mut rng) * &u) * &phase(&mut rng);
            let lb = random_l(&mut rng, 4);
            let lc = random_l(&mut rng, 4);
            let a = quantum_prune(&lb, &lc, &u, &v).unwrap();
            let b = quantum_prune(&lb, &lc, &u2, &v).unwrap();
            assert!(a.max_abs_diff(&b) < 1e-12);
        }
    }

    #[test]
    fn factored_prune_matches_literal_for_every_family() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for family in Family::ALL {
            for _ in 0..10 {
                let eb = EdgePropagator::from_params(&random::random_params(&mut rng, family)).unwrap();
                let ec = EdgePropagator::from_params(&random::random_params(&mut rng, family)).unwrap();
                let n = family.alphabet().size();
                let lb = random_l(&mut rng, n);
                let lc = random_l(&mut rng, n);
                let literal = quantum_prune_with(&lb, &lc, &eb, &ec).unwrap();
                let factored = quantum_prune_factored(&lb, &lc, &eb, &ec).unwrap();
                assert!(literal.max_abs_diff(&factored) < 1e-14);
            }
        }
    }

    #[test]
    fn propagators_realize_transposed_markov() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for family in Family::ALL {
            let params = random::random_params(&mut rng, family);
            let w = EdgePropagator::from_params(&params).unwrap().propagation_matrix();
            let m = markov(&params).unwrap();
            for i in 0..m.dim() {
                for j in 0..m.dim() {
                    assert!((w[i][j] - m.get(j, i)).abs() < 1e-15);
                }
            }
            // the Schrödinger channel induces M itself
            let ch = model_channel(&params).unwrap().induced_markov();
            for i in 0..m.dim() {
                for j in 0..m.dim() {
                    assert!((ch[i][j] - m.get(i, j)).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn prune_embedded_locality() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let prop = EdgePropagator::from_params(&ModelParams::Jc { a: 0.1 }).unwrap();
        let state: Vec<LikelihoodOperator> = (0..3).map(|_| random_l(&mut rng, 4)).collect();
        let out = prune_embedded(&state, SlotIndex::new(2), &prop, &prop).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out[0], state[0]);
        let direct = quantum_prune_with(&state[1], &state[2], &prop, &prop).unwrap();
        assert!(out[1].max_abs_diff(&direct) < 1e-15);
        let two = prune_embedded(&state[..2], SlotIndex::new(1), &prop, &prop).unwrap();
        assert!(two[0].max_abs_diff(&quantum_prune_with(&state[0], &state[1], &prop, &prop).unwrap()) < 1e-15);
        assert!(prune_embedded(&state, SlotIndex::new(3), &prop, &prop).is_err());
        assert!(prune_embedded(&state, SlotIndex::new(0), &prop, &prop).is_err());
    }

    #[test]
    fn site_likelihood_cases() {
        let pi = StationaryDensity::new(ProbabilityVector::uniform(4));
        assert!((site_likelihood(&LikelihoodOperator::ones(4), &pi).unwrap() - 1.0).abs() < 1e-15);
        let l = LikelihoodOperator::new(vec![0.07, 0.07, 0.01, 0.01]).unwrap();
        assert!((site_likelihood(&l, &pi).unwrap() - 0.04).abs() < 1e-15);
        assert_eq!(site_likelihood(&LikelihoodOperator::new(vec![0.0; 4]).unwrap(), &pi).unwrap(), 0.0);
        let skew = StationaryDensity::new(ProbabilityVector::new(vec![0.1, 0.2, 0.3, 0.4]).unwrap());
        assert!((site_likelihood(&LikelihoodOperator::ones(4), &skew).unwrap() - 1.0).abs() < 1e-15);
        assert!(site_likelihood(&LikelihoodOperator::ones(2), &pi).is_err());
    }

    #[test]
    fn site_likelihood_is_bilinear() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (l1, l2) = (random_l(&mut rng, 4), random_l(&mut rng, 4));
        let (p1, p2) = (random::random_probability(&mut rng, 4), random::random_probability(&mut rng, 4));
        let (s, t) = (0.3, 0.7);
        let mix_l = LikelihoodOperator::new(l1.values().iter().zip(l2.values()).map(|(a, b)| s * a + t * b).collect()).unwrap();
        let d1 = StationaryDensity::new(p1.clone());
        let lhs = site_likelihood(&mix_l, &d1).unwrap();
        let rhs = s * site_likelihood(&l1, &d1).unwrap() + t * site_likelihood(&l2, &d1).unwrap();
        assert!((lhs - rhs).abs() < 1e-15);
        let mix_p = ProbabilityVector::new(p1.weights().iter().zip(p2.weights()).map(|(a, b)| s * a + t * b).collect()).unwrap();
        let lhs = site_likelihood(&l1, &StationaryDensity::new(mix_p)).unwrap();
        let rhs = s * site_likelihood(&l1, &d1).unwrap() + t * site_likelihood(&l1, &StationaryDensity::new(p2)).unwrap();
        assert!((lhs - rhs).abs() < 1e-15);
    }

    #[test]
    fn tensor_product_trace_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let [a, b, c, d] = [0; 4].map(|_| random_l(&mut rng, 4).to_matrix());
            let lhs = (&a * &b).trace() * (&c * &d).trace();
            let rhs = (&kron(&a, &c) * &kron(&b, &d)).trace();
            assert!((lhs - rhs).norm() < 1e-12);
        }
    }

    #[test]
    fn dual_prune_identity_pinches_at_observed_state() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let lc = random_l(&mut rng, 4);
        let id = ComplexMatrix::identity(4);
        let (out, nu) = dual_prune(&e(0), &lc, &id, &id).unwrap();
        assert_eq!(nu, 1.0);
        assert!(close_vec(&out, &[lc.values()[0], 0.0, 0.0, 0.0], 1e-15));
        let step = DualStep::new(&e(0), &EdgePropagator::from_unitary(&id).unwrap(), &EdgePropagator::from_unitary(&id).unwrap()).unwrap();
        assert_eq!(step.weights(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn dual_prune_jc_cherry() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let u = unitary_from_markov(&jc(0.1), &mut rng).unwrap();
        let (out, nu) = dual_prune(&e(0), &e(1), &u, &u).unwrap();
        assert!((nu - 1.0).abs() < 1e-10);
        assert!(close_vec(&out, &[0.07, 0.07, 0.01, 0.01], 1e-10));
        let zero = LikelihoodOperator::new(vec![0.0; 4]).unwrap();
        assert!(matches!(dual_prune(&zero, &e(1), &u, &u), Err(Error::DeadLineage)));
    }

    #[test]
    fn dual_weights_and_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for k in 0..100 {
            let family = Family::ALL[k % Family::ALL.len()];
            let n = family.alphabet().size();
            let eb = EdgePropagator::from_params(&random::random_params(&mut rng, family)).unwrap();
            let ec = EdgePropagator::from_params(&random::random_params(&mut rng, family)).unwrap();
            let lb = random_l(&mut rng, n);
            let step = DualStep::new(&lb, &eb, &ec).unwrap();
            assert!((step.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let x = random::random_hermitian(&mut rng, n);
            let rho = random::random_density(&mut rng, n);
            let lhs = (&step.apply(&x).unwrap() * &rho).trace();
            let rhs = (&x * &step.apply_adjoint(&rho).unwrap()).trace();
            assert!((lhs - rhs).norm() < 1e-12);
            let lc = random_l(&mut rng, n);
            let (dual, _) = dual_prune_with(&lb, &lc, &eb, &ec).unwrap();
            let quantum = quantum_prune_with(&lb, &lc, &eb, &ec).unwrap();
            assert!(dual.max_abs_diff(&quantum) < 1e-12);
        }
    }

    #[test]
    fn simulate_cherry_cases() {
        let t = parse_newick("(A:0,B:0);").unwrap();
        let p = simulate_tree(&t).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(p.get(&[i, j]), if i == j { 0.25 } else { 0.0 });
            }
        }
        let t = parse_newick("(A[&model=JC,a=0.1],B[&model=JC,a=0.1]);").unwrap();
        let p = simulate_tree(&t).unwrap();
        assert!((p.get(&[0, 0]) - 0.13).abs() < 1e-15);
        // P(x, y) = Σ_r π_r M_xr M_yr
        let m = jc(0.1);
        for x in 0..4 {
            for y in 0..4 {
                let expect: f64 = (0..4).map(|r| 0.25 * m.get(x, r) * m.get(y, r)).sum();
                assert!((p.get(&[x, y]) - expect).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn simulate_matches_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for family in Family::ALL {
            for leaves in [2, 3, 4, 5] {
                let t = random::random_tree(&mut rng, leaves, family);
                let sim = simulate_tree(&t).unwrap();
                assert!((sim.total_mass() - 1.0).abs() < 1e-12);
                assert!(sim.max_abs_diff(&enumerate_joint(&t)) < 1e-12, "{family} {leaves}");
            }
        }
        let fig1 = random::random_tree(&mut rng, 4, Family::K3);
        assert!(simulate_tree(&fig1).unwrap().max_abs_diff(&enumerate_joint(&fig1)) < 1e-12);
    }

    #[test]
    fn caterpillar_schedule_matches_chain() {
        let t = parse_newick("((A[&model=K2,a=0.2,b=0.1],B[&model=JC,a=0.05])[&model=K3,a=0.1,b=0.2,c=0.05],C[&model=JC,a=0.3]);").unwrap();
        assert!(simulate_tree(&t).unwrap().max_abs_diff(&enumerate_joint(&t)) < 1e-13);
    }

    #[test]
    fn simulation_and_likelihood_agree_on_every_pattern() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for family in Family::ALL {
            let t = random::random_tree(&mut rng, 4, family);
            let sim = simulate_tree(&t).unwrap();
            let ev = TreeEvaluator::new(&t).unwrap();
            let mut total = 0.0;
            for linear in 0..sim.values().len() {
                let pat = sim.pattern(linear);
                for engine in EngineTag::ALL {
                    let l = ev.pattern_likelihood(&pat, engine).unwrap().likelihood;
                    assert!((l - sim.values()[linear]).abs() < 1e-10, "{family} {engine}");
                }
                total += ev.pattern_likelihood(&pat, EngineTag::Quantum).unwrap().likelihood;
            }
            assert!((total - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn engines_agree_with_unitary_edges() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let t = random::random_tree(&mut rng, 6, Family::Jc);
        let mut ev = TreeEvaluator::new(&t).unwrap();
        for edge in t.edges() {
            let m = markov(t.edge(edge).unwrap().params()).unwrap();
            let u = unitary_from_markov(&m, &mut rng).unwrap();
            ev.set_propagator(edge, EdgePropagator::from_unitary(&u).unwrap()).unwrap();
        }
        let reference = TreeEvaluator::new(&t).unwrap();
        for _ in 0..50 {
            let pat: Vec<usize> = (0..6).map(|_| rng.random_range(0..4)).collect();
            let c = reference.pattern_likelihood(&pat, EngineTag::Classical).unwrap().likelihood;
            for engine in [EngineTag::Quantum, EngineTag::Dual] {
                let q = ev.pattern_likelihood(&pat, engine).unwrap().likelihood;
                assert!((c - q).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn alignment_examples() {
        let t = parse_newick("(A:0,B:0);").unwrap();
        let aln = parse_fasta(">A\nA\n>B\nA\n").unwrap();
        for engine in EngineTag::ALL {
            let r = alignment_loglik(&t, &aln, engine).unwrap();
            assert!((r.per_site[0].likelihood - 0.25).abs() < 1e-15);
            assert!((r.total_log_likelihood + 4f64.ln()).abs() < 1e-14);
        }
        let t = parse_newick("(A[&model=JC,a=0.1],B[&model=JC,a=0.1]);").unwrap();
        let aln = parse_fasta(">A\nA\n>B\nC\n").unwrap();
        for engine in EngineTag::ALL {
            let r = alignment_loglik(&t, &aln, engine).unwrap();
            assert!((r.per_site[0].likelihood - 0.04).abs() < 1e-12);
        }
        let aln = parse_fasta(">A\nACG\n>B\nCCT\n").unwrap();
        let r = alignment_loglik(&t, &aln, EngineTag::Classical).unwrap();
        let sum: f64 = r.per_site.iter().map(|s| s.log).sum();
        assert_eq!(r.total_log_likelihood, sum);
        assert_eq!(r.per_site.len(), 3);
        for s in &r.per_site {
            assert_eq!(s.log, s.likelihood.ln());
        }
    }

    #[test]
    fn zero_likelihood_sites_are_reported() {
        let t = parse_newick("(A:0,B:0);").unwrap();
        let aln = parse_fasta(">A\nAA\n>B\nAC\n").unwrap();
        for engine in EngineTag::ALL {
            assert!(matches!(alignment_loglik(&t, &aln, engine), Err(Error::ZeroSiteLikelihood { site: 1 })));
        }
    }

    #[test]
    fn taxa_mismatch_is_reported() {
        let t = parse_newick("(A:0,B:0);").unwrap();
        let aln = parse_fasta(">A\nA\n>C\nA\n").unwrap();
        assert!(matches!(alignment_loglik(&t, &aln, EngineTag::Classical), Err(Error::TaxaMismatch(_))));
    }

    #[test]
    fn dual_report_carries_trace_factors() {
        let t = parse_newick("((A:0.1,B:0.2):0.05,(C:0.1,D:0.3):0.1);").unwrap();
        let aln = parse_fasta(">A\nAC\n>B\nAG\n>C\nAT\n>D\nCC\n").unwrap();
        let r = alignment_loglik(&t, &aln, EngineTag::Dual).unwrap();
        assert!(r.per_site.iter().all(|s| s.nu.is_some_and(|nu| nu > 0.0)));
        let c = alignment_loglik(&t, &aln, EngineTag::Classical).unwrap();
        assert!(c.per_site.iter().all(|s| s.nu.is_none()));
        assert!((r.total_log_likelihood - c.total_log_likelihood).abs() < 1e-12);
    }

    #[test]
    fn sampled_alignments_are_reproducible() {
        let t = parse_newick("((A:0.1,B:0.2):0.05,(C:0.1,D:0.3):0.1);").unwrap();
        let a = sample_alignment(&t, 200, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = sample_alignment(&t, 200, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.taxa(), &["A", "B", "C", "D"]);
        assert_eq!(a.sites(), 200);
    }

    #[test]
    fn sampled_pattern_frequencies_follow_the_tensor() {
        let t = parse_newick("(A[&model=K3,a=0.1,b=0.2,c=0.05],B[&model=JC,a=0.2]);").unwrap();
        let sites = 40_000;
        let aln = sample_alignment(&t, sites, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let p = simulate_tree(&t).unwrap();
        let mut counts = vec![0.0; 16];
        for s in 0..sites {
            counts[aln.row(0)[s] as usize * 4 + aln.row(1)[s] as usize] += 1.0;
        }
        for (c, q) in counts.iter().zip(p.values()) {
            let sd = (q * (1.0 - q) / sites as f64).sqrt();
            assert!((c / sites as f64 - q).abs() < 5.0 * sd + 1e-9);
        }
    }

    #[test]
    fn pattern_compression() {
        let t = parse_newick("(A:0.1,B:0.1);").unwrap();
        let aln = parse_fasta(">B\nACAC\n>A\nGGGT\n").unwrap();
        let (pats, sites) = compress_patterns(&t, &aln).unwrap();
        assert_eq!(pats, vec![vec![2, 0], vec![2, 1], vec![3, 1]]);
        assert_eq!(sites, vec![0, 1, 0, 2]);
    }

    #[test]
    fn pairwise_sum_is_exact_on_integers() {
        let xs: Vec<f64> = (0..1000).map(f64::from).collect();
        assert_eq!(pairwise_sum(&xs), 499_500.0);
        assert_eq!(pairwise_sum(&[]), 0.0);
    }

    #[test]
    fn engine_tags() {
        assert_eq!("Quantum".parse::<EngineTag>().unwrap(), EngineTag::Quantum);
        assert!("x".parse::<EngineTag>().is_err());
        assert_eq!(serde_json::to_string(&EngineTag::Dual).unwrap(), "\"dual\"");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn engines_agree_on_random_trees(seed in any::<u64>(), leaves in 2usize..=8, fam in 0usize..5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let family = Family::ALL[fam];
            let t = random::random_tree(&mut rng, leaves, family);
            let n = family.alphabet().size();
            let rows: Vec<Vec<u8>> = (0..leaves).map(|_| (0..12).map(|_| rng.random_range(0..n as u8)).collect()).collect();
            let aln = Alignment::new(family.alphabet(), t.leaf_labels().iter().map(|s| s.to_string()).collect(), rows).unwrap();
            let c = alignment_loglik(&t, &aln, EngineTag::Classical).unwrap().total_log_likelihood;
            let q = alignment_loglik(&t, &aln, EngineTag::Quantum).unwrap().total_log_likelihood;
            let d = alignment_loglik(&t, &aln, EngineTag::Dual).unwrap().total_log_likelihood;
            prop_assert!((c - q).abs() < 1e-8);
            prop_assert!((c - d).abs() < 1e-8);
        }
    }
}
