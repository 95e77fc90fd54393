//! Maximum-likelihood estimation of model weights on a fixed topology.
//!
//! Nelder–Mead on `−log L`. Every proposed point is folded back into the
//! family's parameter simplex by reflection, so the objective is only ever
//! evaluated at valid models.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::engine::{compress_patterns, compressed_loglik, edge_reports, EdgeReport, EngineTag, TreeEvaluator};
use crate::error::{Error, Result};
use crate::models::{Family, ModelParams};
use crate::tensor::ProbabilityVector;
use crate::treeio::{Alignment, EdgeModel, NodeId, PhyloTree};

pub const DEFAULT_MAX_EVALUATIONS: usize = 2000;
pub const DEFAULT_DIAMETER_TOL: f64 = 1e-7;
pub const INITIAL_SPREAD: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Sharing {
    /// One parameter set for every edge.
    Shared,
    /// Independent parameters on each edge.
    PerEdge,
}

/// Interior starting weights for each family.
pub fn interior_point(family: Family) -> Vec<f64> {
    match family {
        Family::Jc => vec![0.1],
        Family::K2 => vec![0.1, 0.1],
        Family::K3 => vec![0.1, 0.1, 0.1],
        Family::B => vec![0.1],
        Family::F => vec![0.5],
    }
}

/// Linear constraints `coeffs · w ≤ bound` beyond the unit box.
fn simplex_constraint(family: Family) -> Option<(&'static [f64], f64)> {
    match family {
        Family::Jc => Some((&[3.0], 1.0)),
        Family::K2 => Some((&[1.0, 2.0], 1.0)),
        Family::K3 => Some((&[1.0, 1.0, 1.0], 1.0)),
        Family::B | Family::F => None,
    }
}

#[derive(Debug, Clone)]
pub struct OptimizationProblem<'a> {
    tree: &'a PhyloTree,
    alignment: &'a Alignment,
    family: Family,
    engine: EngineTag,
    sharing: Sharing,
    fixed: Vec<Option<f64>>,
    pi: Option<[f64; 4]>,
    seed: u64,
    max_evaluations: usize,
    diameter_tol: f64,
}

impl<'a> OptimizationProblem<'a> {
    pub fn new(tree: &'a PhyloTree, alignment: &'a Alignment, family: Family, engine: EngineTag, seed: u64) -> Self {
        Self {
            tree,
            alignment,
            family,
            engine,
            sharing: Sharing::Shared,
            fixed: vec![None; family.parameter_names().len()],
            pi: None,
            seed,
            max_evaluations: DEFAULT_MAX_EVALUATIONS,
            diameter_tol: DEFAULT_DIAMETER_TOL,
        }
    }

    pub fn sharing(mut self, sharing: Sharing) -> Self {
        self.sharing = sharing;
        self
    }

    /// Holds one named weight at a value on every edge.
    pub fn fix(mut self, name: &str, value: f64) -> Result<Self> {
        let i = self
            .family
            .parameter_names()
            .iter()
            .position(|n| *n == name)
            .ok_or_else(|| Error::InvalidParams(format!("{} has no parameter `{name}`", self.family)))?;
        self.fixed[i] = Some(value);
        Ok(self)
    }

    /// Stationary vector for F edges; defaults to the tree's root distribution.
    pub fn stationary(mut self, pi: [f64; 4]) -> Self {
        self.pi = Some(pi);
        self
    }

    pub fn max_evaluations(mut self, n: usize) -> Self {
        self.max_evaluations = n;
        self
    }

    pub fn diameter_tol(mut self, tol: f64) -> Self {
        self.diameter_tol = tol;
        self
    }

    fn free_indices(&self) -> Vec<usize> {
        (0..self.fixed.len()).filter(|&i| self.fixed[i].is_none()).collect()
    }

    fn edge_groups(&self) -> usize {
        match self.sharing {
            Sharing::Shared => 1,
            Sharing::PerEdge => self.tree.edges().len(),
        }
    }

    /// Full family weights of group `g` from the packed free vector.
    fn group_weights(&self, x: &[f64], g: usize) -> Vec<f64> {
        let free = self.free_indices();
        let mut w: Vec<f64> = self.fixed.iter().map(|f| f.unwrap_or(0.0)).collect();
        for (k, &i) in free.iter().enumerate() {
            w[i] = x[g * free.len() + k];
        }
        w
    }

    fn params_from(&self, w: &[f64]) -> Result<ModelParams> {
        let template = match self.family {
            Family::Jc => ModelParams::Jc { a: 0.0 },
            Family::K2 => ModelParams::K2 { a: 0.0, b: 0.0 },
            Family::K3 => ModelParams::K3 { a: 0.0, b: 0.0, c: 0.0 },
            Family::B => ModelParams::Binary { a: 0.0 },
            Family::F => ModelParams::Felsenstein { a: 0.0, pi: self.pi.expect("checked in validate") },
        };
        template.with_free_values(w)
    }

    fn feasible(&self, x: &[f64]) -> bool {
        (0..self.edge_groups()).all(|g| self.params_from(&self.group_weights(x, g)).is_ok())
    }

    /// Reflects a point into the feasible region: first off the faces of the
    /// unit box, then off the family's simplex face, and if that still fails
    /// falls back to the last feasible point on the segment from `anchor`.
    fn fold(&self, x: &[f64], anchor: &[f64]) -> Vec<f64> {
        let mut y: Vec<f64> = x
            .iter()
            .map(|&v| {
                let v = if v < 0.0 { -v } else { v };
                if v > 1.0 {
                    2.0 - v
                } else {
                    v
                }
            })
            .collect();
        if let Some((coeffs, bound)) = simplex_constraint(self.family) {
            let free = self.free_indices();
            let per = free.len();
            for g in 0..self.edge_groups() {
                let w = self.group_weights(&y, g);
                let dot: f64 = coeffs.iter().zip(&w).map(|(c, v)| c * v).sum();
                if dot > bound {
                    let norm2: f64 = free.iter().map(|&i| coeffs[i] * coeffs[i]).sum();
                    if norm2 > 0.0 {
                        let excess = dot - bound;
                        for (k, &i) in free.iter().enumerate() {
                            y[g * per + k] -= 2.0 * excess * coeffs[i] / norm2;
                        }
                    }
                }
            }
        }
        if self.feasible(&y) {
            return y;
        }
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            let p: Vec<f64> = anchor.iter().zip(x).map(|(a, b)| a + mid * (b - a)).collect();
            if self.feasible(&p) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        anchor.iter().zip(x).map(|(a, b)| a + lo * (b - a)).collect()
    }

    fn start(&self) -> Vec<f64> {
        let interior = interior_point(self.family);
        let free = self.free_indices();
        let mut x = Vec::with_capacity(free.len() * self.edge_groups());
        for _ in 0..self.edge_groups() {
            x.extend(free.iter().map(|&i| interior[i]));
        }
        x
    }

    fn validate(&mut self) -> Result<()> {
        if self.family.alphabet() != self.alignment.alphabet() {
            return Err(Error::AlphabetMismatch(format!(
                "{} model on a {:?} alignment",
                self.family,
                self.alignment.alphabet()
            )));
        }
        if self.free_indices().is_empty() {
            return Err(Error::InvalidParams("no free parameters to optimize".into()));
        }
        if self.family == Family::F && self.pi.is_none() {
            let w = self.tree.root_pi().weights();
            self.pi = Some(w.try_into().map_err(|_| Error::InvalidParams("F needs a 4-state root distribution".into()))?);
        }
        let x0 = self.start();
        if !self.feasible(&x0) {
            return Err(Error::InvalidParams("fixed parameters leave no interior starting point".into()));
        }
        Ok(())
    }

    /// The tree with the packed free vector written onto its edges.
    pub fn tree_at(&self, x: &[f64]) -> Result<PhyloTree> {
        let edges = self.tree.edges();
        let mut group_of = std::collections::HashMap::<NodeId, usize>::new();
        for (k, e) in edges.iter().enumerate() {
            group_of.insert(*e, if self.sharing == Sharing::Shared { 0 } else { k });
        }
        let tree = self.tree.map_edges(|node, _| {
            Ok(EdgeModel::from_params(self.params_from(&self.group_weights(x, group_of[&node]))?))
        })?;
        if let (Family::F, Some(pi)) = (self.family, self.pi) {
            if tree.root_pi().weights() != pi {
                return tree.with_root_pi(ProbabilityVector::new(pi.to_vec())?);
            }
        }
        Ok(tree)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iteration: usize,
    pub evaluations: usize,
    pub best_log_likelihood: f64,
    pub best_point: Vec<f64>,
    pub diameter: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationResult {
    pub family: Family,
    pub engine: EngineTag,
    pub sharing: Sharing,
    /// Packed free weights, edge group by edge group.
    pub point: Vec<f64>,
    pub parameters: Vec<EdgeReport>,
    pub log_likelihood: f64,
    pub evaluations: usize,
    pub converged: bool,
    pub trace: Vec<TraceEntry>,
}

struct Objective<'p, 'a> {
    problem: &'p OptimizationProblem<'a>,
    patterns: Vec<Vec<usize>>,
    site_pattern: Vec<usize>,
    evaluations: usize,
}

impl Objective<'_, '_> {
    /// `−log L`, or `+∞` where some site has zero likelihood.
    fn eval(&mut self, x: &[f64]) -> Result<f64> {
        self.evaluations += 1;
        let tree = self.problem.tree_at(x)?;
        let evaluator = TreeEvaluator::new(&tree)?;
        Ok(match compressed_loglik(&evaluator, &self.patterns, &self.site_pattern, self.problem.engine)? {
            Some(ll) => -ll,
            None => f64::INFINITY,
        })
    }
}

fn diameter(simplex: &[(Vec<f64>, f64)]) -> f64 {
    let mut d = 0.0f64;
    for (i, (a, _)) in simplex.iter().enumerate() {
        for (b, _) in &simplex[i + 1..] {
            let dist = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
            d = d.max(dist);
        }
    }
    d
}

fn sort_simplex(simplex: &mut [(Vec<f64>, f64)]) {
    // stable sort keeps ties in insertion order, so runs are reproducible
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
}

pub fn maximize_loglik(problem: OptimizationProblem<'_>) -> Result<OptimizationResult> {
    let mut problem = problem;
    problem.validate()?;
    let (patterns, site_pattern) = compress_patterns(problem.tree, problem.alignment)?;
    let mut obj = Objective { problem: &problem, patterns, site_pattern, evaluations: 0 };

    let x0 = problem.start();
    let dim = x0.len();
    let mut rng = ChaCha8Rng::seed_from_u64(problem.seed);
    let mut vertices: Vec<Vec<f64>> = Vec::with_capacity(dim + 1);
    vertices.push(x0.clone());
    for i in 0..dim {
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let mut v = x0.clone();
        for (k, c) in v.iter_mut().enumerate() {
            let jitter = rng.random_range(-0.1..0.1) * INITIAL_SPREAD;
            *c += if k == i { sign * INITIAL_SPREAD } else { jitter };
        }
        vertices.push(v);
    }
    // recentre on the interior point
    let centroid: Vec<f64> = (0..dim).map(|k| vertices.iter().map(|v| v[k]).sum::<f64>() / (dim + 1) as f64).collect();
    for v in vertices.iter_mut() {
        for k in 0..dim {
            v[k] += x0[k] - centroid[k];
        }
        *v = problem.fold(v, &x0);
    }
    let mut simplex = Vec::with_capacity(dim + 1);
    for v in vertices {
        let f = obj.eval(&v)?;
        simplex.push((v, f));
    }
    if simplex.iter().all(|(_, f)| !f.is_finite()) {
        return Err(Error::Degenerate("zero likelihood at every vertex of the initial simplex".into()));
    }
    sort_simplex(&mut simplex);

    let mut trace = Vec::new();
    let mut converged = false;
    let mut iteration = 0;
    loop {
        let d = diameter(&simplex);
        trace.push(TraceEntry {
            iteration,
            evaluations: obj.evaluations,
            best_log_likelihood: -simplex[0].1,
            best_point: simplex[0].0.clone(),
            diameter: d,
        });
        if d < problem.diameter_tol {
            converged = true;
            break;
        }
        if obj.evaluations >= problem.max_evaluations {
            break;
        }
        iteration += 1;

        let worst = simplex[dim].clone();
        let centroid: Vec<f64> =
            (0..dim).map(|k| simplex[..dim].iter().map(|(v, _)| v[k]).sum::<f64>() / dim as f64).collect();
        let along = |t: f64| -> Vec<f64> { centroid.iter().zip(&worst.0).map(|(c, w)| c + t * (c - w)).collect() };

        let xr = problem.fold(&along(1.0), &centroid);
        let fr = obj.eval(&xr)?;
        if fr < simplex[0].1 {
            let xe = problem.fold(&along(2.0), &centroid);
            let fe = obj.eval(&xe)?;
            simplex[dim] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[dim - 1].1 {
            simplex[dim] = (xr, fr);
        } else {
            let (xc, fc) = if fr < worst.1 {
                let xc = problem.fold(&along(0.5), &centroid);
                let fc = obj.eval(&xc)?;
                (xc, fc)
            } else {
                let xc = problem.fold(&along(-0.5), &centroid);
                let fc = obj.eval(&xc)?;
                (xc, fc)
            };
            if fc < worst.1.min(fr) {
                simplex[dim] = (xc, fc);
            } else {
                let best = simplex[0].0.clone();
                for vertex in simplex.iter_mut().skip(1) {
                    let x: Vec<f64> = best.iter().zip(&vertex.0).map(|(b, v)| b + 0.5 * (v - b)).collect();
                    let f = obj.eval(&x)?;
                    *vertex = (x, f);
                }
            }
        }
        sort_simplex(&mut simplex);
    }

    let (point, value) = simplex[0].clone();
    let fitted = problem.tree_at(&point)?;
    Ok(OptimizationResult {
        family: problem.family,
        engine: problem.engine,
        sharing: problem.sharing,
        parameters: edge_reports(&fitted),
        point,
        log_likelihood: -value,
        evaluations: obj.evaluations,
        converged,
        trace,
    })
}
