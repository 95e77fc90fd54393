//! Seeded random instances: matrices, states, channels, model parameters and
//! trees. Everything takes the generator explicitly so callers stay
//! reproducible.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};

use crate::channels::KrausChannel;
use crate::linalg::ComplexMatrix;
use crate::models::{Family, ModelParams};
use crate::tensor::{ProbabilityTensor, ProbabilityVector};
use crate::treeio::{EdgeModel, PhyloTree, TreeBuilder};

pub fn random_matrix<R: Rng + ?Sized>(rng: &mut R, n: usize) -> ComplexMatrix {
    ComplexMatrix::from_fn(n, n, |_, _| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
}

fn gaussian<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    Complex64::new(StandardNormal.sample(rng), StandardNormal.sample(rng))
}

pub fn random_hermitian<R: Rng + ?Sized>(rng: &mut R, n: usize) -> ComplexMatrix {
    let a = random_matrix(rng, n);
    (&a + &a.adjoint()).scale_real(0.5)
}

/// Haar-distributed unitary via Gram–Schmidt on a Ginibre matrix.
pub fn random_unitary<R: Rng + ?Sized>(rng: &mut R, n: usize) -> ComplexMatrix {
    let mut cols: Vec<Vec<Complex64>> = Vec::with_capacity(n);
    while cols.len() < n {
        let mut v: Vec<Complex64> = (0..n).map(|_| gaussian(rng)).collect();
        for u in &cols {
            let dot: Complex64 = u.iter().zip(&v).map(|(a, b)| a.conj() * b).sum();
            for (x, y) in v.iter_mut().zip(u) {
                *x -= dot * y;
            }
        }
        let norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if norm > 1e-8 {
            cols.push(v.into_iter().map(|z| z / norm).collect());
        }
    }
    ComplexMatrix::from_fn(n, n, |i, j| cols[j][i])
}

pub fn random_density<R: Rng + ?Sized>(rng: &mut R, n: usize) -> ComplexMatrix {
    let g = ComplexMatrix::from_fn(n, n, |_, _| gaussian(rng));
    let rho = &g * &g.adjoint();
    let tr = rho.trace().re;
    rho.scale_real(1.0 / tr)
}

/// Flat Dirichlet sample.
pub fn random_probability<R: Rng + ?Sized>(rng: &mut R, n: usize) -> ProbabilityVector {
    let draws: Vec<f64> = (0..n).map(|_| Exp1.sample(rng)).collect();
    let total: f64 = draws.iter().sum();
    let mut w: Vec<f64> = draws.iter().map(|d| d / total).collect();
    // absorb rounding so the mass check holds exactly
    let rest: f64 = w[1..].iter().sum();
    w[0] = 1.0 - rest;
    ProbabilityVector::new(w).expect("normalized Dirichlet draw")
}

/// Random tensor over `taxa` slots.
pub fn random_tensor<R: Rng + ?Sized>(rng: &mut R, taxa: usize, alphabet: usize) -> ProbabilityTensor {
    let p = random_probability(rng, alphabet.pow(taxa as u32));
    ProbabilityTensor::new(taxa, alphabet, p.into_inner()).expect("random tensor is normalized")
}

/// Channel with `ops` Kraus operators cut from a random isometry.
pub fn random_channel<R: Rng + ?Sized>(rng: &mut R, n: usize, ops: usize) -> KrausChannel {
    let big = random_unitary(rng, n * ops);
    let kraus = (0..ops)
        .map(|k| ComplexMatrix::from_fn(n, n, |i, j| big[(k * n + i, j)]))
        .collect();
    KrausChannel::new(kraus, "random").expect("isometry blocks are complete")
}

/// Interior parameters for a family; weights stay away from the simplex
/// boundary so every transition probability is positive.
pub fn random_params<R: Rng + ?Sized>(rng: &mut R, family: Family) -> ModelParams {
    match family {
        Family::Jc => ModelParams::Jc { a: rng.random_range(0.01..0.32) },
        Family::K2 => {
            let a = rng.random_range(0.01..0.5);
            let b = rng.random_range(0.01..(1.0 - a) / 2.0 - 0.005);
            ModelParams::K2 { a, b }
        }
        Family::K3 => {
            let w = random_probability(rng, 4).into_inner();
            let lift = |x: f64| 0.01 + 0.96 * x;
            ModelParams::K3 { a: lift(w[1]), b: lift(w[2]), c: lift(w[3]) }
        }
        Family::B => ModelParams::Binary { a: rng.random_range(0.01..0.99) },
        Family::F => {
            let w = random_probability(rng, 4).into_inner();
            let pi = [0.01 + 0.96 * w[0], 0.01 + 0.96 * w[1], 0.01 + 0.96 * w[2], 0.01 + 0.96 * w[3]];
            let rest: f64 = pi[1..].iter().sum();
            ModelParams::Felsenstein { a: rng.random_range(0.01..0.99), pi: [1.0 - rest, pi[1], pi[2], pi[3]] }
        }
    }
}

/// Random rooted binary tree with `leaves` taxa named `t1..tN`, every edge
/// drawn from `family`. F trees share one stationary vector, also used at the root.
pub fn random_tree<R: Rng + ?Sized>(rng: &mut R, leaves: usize, family: Family) -> PhyloTree {
    assert!(leaves >= 2, "a rooted binary tree needs two leaves");
    let alphabet = family.alphabet();
    let shared_pi = match random_params(rng, Family::F) {
        ModelParams::Felsenstein { pi, .. } => pi,
        _ => unreachable!(),
    };
    let draw = |rng: &mut R| match random_params(rng, family) {
        ModelParams::Felsenstein { a, .. } => ModelParams::Felsenstein { a, pi: shared_pi },
        p => p,
    };
    let mut b = TreeBuilder::new();
    // grow by attaching each new leaf to a uniformly chosen existing edge
    let root = b.add_node(None);
    let first = b.add_leaf("t1");
    let second = b.add_leaf("t2");
    b.attach(root, first, EdgeModel::from_params(draw(rng)));
    b.attach(root, second, EdgeModel::from_params(draw(rng)));
    for k in 3..=leaves {
        let candidates = b.non_root_nodes();
        let target = candidates[rng.random_range(0..candidates.len())];
        let mid = b.add_node(None);
        let leaf = b.add_leaf(&format!("t{k}"));
        let upper = EdgeModel::from_params(draw(rng));
        b.subdivide(target, mid, upper);
        let e = EdgeModel::from_params(draw(rng));
        b.attach(mid, leaf, e);
        if rng.random_bool(0.5) {
            b.swap_children(mid);
        }
    }
    let root_pi = if family == Family::F {
        ProbabilityVector::new(shared_pi.to_vec()).expect("shared pi is normalized")
    } else {
        ProbabilityVector::uniform(alphabet.size())
    };
    b.finish(root, alphabet, root_pi).expect("random tree is valid")
}
