//! Substitution models in three guises: column-stochastic Markov matrices,
//! Kraus channels acting on diagonal densities, and unitary coin–walker
//! dilations of those channels.
//!
//! DNA characters A, C, G, T are indexed 0..4 and read as bit pairs
//! `m = 2k + l`, so the Klein-group permutation `X^k ⊗ X^l` sends `m` to
//! `m ⊕ (2k + l)`. A matrix entry `M[i][j]` is the probability that a child
//! shows `i` given a parent in state `j`.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::alphabet::Alphabet;
use crate::channels::KrausChannel;
use crate::error::{Error, Result};
use crate::linalg::{kron, partial_trace, ComplexMatrix, STRUCTURAL_TOL, ZERO};
use crate::tensor::SlotIndex;

const SIMPLEX_SLACK: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Family {
    #[serde(rename = "JC")]
    Jc,
    K2,
    K3,
    B,
    F,
}

impl Family {
    pub const ALL: [Family; 5] = [Family::Jc, Family::K2, Family::K3, Family::B, Family::F];

    pub fn alphabet(self) -> Alphabet {
        match self {
            Family::B => Alphabet::Binary,
            _ => Alphabet::Dna,
        }
    }

    pub fn is_group_based(self) -> bool {
        !matches!(self, Family::F)
    }

    /// Names of the free weight parameters, in storage order.
    pub fn parameter_names(self) -> &'static [&'static str] {
        match self {
            Family::Jc | Family::B | Family::F => &["a"],
            Family::K2 => &["a", "b"],
            Family::K3 => &["a", "b", "c"],
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::Jc => "JC",
            Family::K2 => "K2",
            Family::K3 => "K3",
            Family::B => "B",
            Family::F => "F",
        })
    }
}

impl FromStr for Family {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "JC" => Ok(Family::Jc),
            "K2" => Ok(Family::K2),
            "K3" => Ok(Family::K3),
            "B" => Ok(Family::B),
            "F" => Ok(Family::F),
            _ => Err(Error::InvalidParams(format!("unknown model family `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family")]
pub enum ModelParams {
    #[serde(rename = "JC")]
    Jc { a: f64 },
    K2 { a: f64, b: f64 },
    K3 { a: f64, b: f64, c: f64 },
    #[serde(rename = "B")]
    Binary { a: f64 },
    #[serde(rename = "F")]
    Felsenstein { a: f64, pi: [f64; 4] },
}

fn unit_interval(name: &str, x: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&x) || !x.is_finite() {
        return Err(Error::InvalidParams(format!("{name} = {x} outside [0, 1]")));
    }
    Ok(())
}

impl ModelParams {
    pub fn family(&self) -> Family {
        match self {
            ModelParams::Jc { .. } => Family::Jc,
            ModelParams::K2 { .. } => Family::K2,
            ModelParams::K3 { .. } => Family::K3,
            ModelParams::Binary { .. } => Family::B,
            ModelParams::Felsenstein { .. } => Family::F,
        }
    }

    pub fn alphabet(&self) -> Alphabet {
        self.family().alphabet()
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            ModelParams::Jc { a } => {
                unit_interval("a", a)?;
                if 1.0 - 3.0 * a < -SIMPLEX_SLACK {
                    return Err(Error::InvalidParams(format!("JC weight a = {a} exceeds 1/3")));
                }
            }
            ModelParams::K2 { a, b } => {
                unit_interval("a", a)?;
                unit_interval("b", b)?;
                if 1.0 - a - 2.0 * b < -SIMPLEX_SLACK {
                    return Err(Error::InvalidParams(format!("K2 weights a = {a}, b = {b} leave the simplex")));
                }
            }
            ModelParams::K3 { a, b, c } => {
                unit_interval("a", a)?;
                unit_interval("b", b)?;
                unit_interval("c", c)?;
                if 1.0 - a - b - c < -SIMPLEX_SLACK {
                    return Err(Error::InvalidParams(format!("K3 weights {a}, {b}, {c} leave the simplex")));
                }
            }
            ModelParams::Binary { a } => unit_interval("a", a)?,
            ModelParams::Felsenstein { a, pi } => {
                unit_interval("a", a)?;
                if pi.iter().any(|&p| !(p > 0.0) || !p.is_finite()) {
                    return Err(Error::InvalidParams(format!("stationary vector {pi:?} must be positive")));
                }
                let total: f64 = pi.iter().sum();
                if (total - 1.0).abs() > STRUCTURAL_TOL {
                    return Err(Error::InvalidParams(format!("stationary vector sums to {total}")));
                }
            }
        }
        Ok(())
    }

    /// Free weights in [`Family::parameter_names`] order.
    pub fn free_values(&self) -> Vec<f64> {
        match *self {
            ModelParams::Jc { a } | ModelParams::Binary { a } | ModelParams::Felsenstein { a, .. } => vec![a],
            ModelParams::K2 { a, b } => vec![a, b],
            ModelParams::K3 { a, b, c } => vec![a, b, c],
        }
    }

    /// Same family (and stationary vector for F) with new free weights.
    pub fn with_free_values(&self, values: &[f64]) -> Result<Self> {
        let need = self.family().parameter_names().len();
        if values.len() != need {
            return Err(Error::InvalidParams(format!("{} values for {} parameters", values.len(), need)));
        }
        let p = match *self {
            ModelParams::Jc { .. } => ModelParams::Jc { a: values[0] },
            ModelParams::K2 { .. } => ModelParams::K2 { a: values[0], b: values[1] },
            ModelParams::K3 { .. } => ModelParams::K3 { a: values[0], b: values[1], c: values[2] },
            ModelParams::Binary { .. } => ModelParams::Binary { a: values[0] },
            ModelParams::Felsenstein { pi, .. } => ModelParams::Felsenstein { a: values[0], pi },
        };
        p.validate()?;
        Ok(p)
    }
}

/// Convex weights `λ_kl` of the four Klein-group permutations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightTable {
    lambda: [[f64; 2]; 2],
}

impl WeightTable {
    pub fn get(&self, k: usize, l: usize) -> f64 {
        self.lambda[k][l]
    }

    /// Weight of the permutation acting as `m ↦ m ⊕ g` on DNA indices.
    pub fn by_element(&self, g: usize) -> f64 {
        self.lambda[g >> 1][g & 1]
    }

    pub fn total(&self) -> f64 {
        self.lambda.iter().flatten().sum()
    }
}

pub fn weights(params: &ModelParams) -> Result<WeightTable> {
    params.validate()?;
    let (a, b, c) = match *params {
        ModelParams::Jc { a } => (a, a, a),
        ModelParams::K2 { a, b } => (a, b, b),
        ModelParams::K3 { a, b, c } => (a, b, c),
        _ => {
            return Err(Error::InvalidParams(format!(
                "{} is not a Klein-group model",
                params.family()
            )))
        }
    };
    Ok(WeightTable { lambda: [[1.0 - a - b - c, b], [a, c]] })
}

/// Column-stochastic substitution matrix, `p' = M p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkovMatrix {
    entries: Vec<Vec<f64>>,
}

impl MarkovMatrix {
    pub fn new(entries: Vec<Vec<f64>>) -> Result<Self> {
        let n = entries.len();
        if n == 0 || entries.iter().any(|r| r.len() != n) {
            return Err(Error::Dimension("markov matrix must be square and non-empty".into()));
        }
        let m = Self { entries };
        if m.entries.iter().flatten().any(|&x| x < -SIMPLEX_SLACK || !x.is_finite()) {
            return Err(Error::InvalidParams("markov matrix has negative entries".into()));
        }
        if m.column_defect() > STRUCTURAL_TOL {
            return Err(Error::InvalidParams(format!("columns sum off by {:.3e}", m.column_defect())));
        }
        Ok(m)
    }

    pub fn identity(n: usize) -> Self {
        Self { entries: (0..n).map(|i| (0..n).map(|j| f64::from(u8::from(i == j))).collect()).collect() }
    }

    pub fn dim(&self) -> usize {
        self.entries.len()
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.entries
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i][j]
    }

    /// Largest deviation of a column sum from 1.
    pub fn column_defect(&self) -> f64 {
        let n = self.dim();
        (0..n)
            .map(|j| ((0..n).map(|i| self.entries[i][j]).sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    pub fn row_defect(&self) -> f64 {
        self.entries.iter().map(|r| (r.iter().sum::<f64>() - 1.0).abs()).fold(0.0, f64::max)
    }

    pub fn asymmetry(&self) -> f64 {
        let n = self.dim();
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                worst = worst.max((self.entries[i][j] - self.entries[j][i]).abs());
            }
        }
        worst
    }

    pub fn is_doubly_stochastic(&self, tol: f64) -> bool {
        self.column_defect() <= tol && self.row_defect() <= tol
    }

    /// Likelihood-propagation orientation `W = Mᵀ`, `W[i][j] = P(child j | parent i)`.
    pub fn transposed(&self) -> Vec<Vec<f64>> {
        let n = self.dim();
        (0..n).map(|i| (0..n).map(|j| self.entries[j][i]).collect()).collect()
    }

    pub fn apply(&self, p: &[f64]) -> Vec<f64> {
        self.entries.iter().map(|row| row.iter().zip(p).map(|(m, x)| m * x).sum()).collect()
    }

    pub fn compose(&self, other: &Self) -> Self {
        let n = self.dim();
        let entries = (0..n)
            .map(|i| (0..n).map(|j| (0..n).map(|k| self.entries[i][k] * other.entries[k][j]).sum()).collect())
            .collect();
        Self { entries }
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.entries
            .iter()
            .flatten()
            .zip(other.entries.iter().flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn to_complex(&self) -> ComplexMatrix {
        ComplexMatrix::from_real_rows(&self.entries).expect("square markov matrix")
    }
}

/// `X^k ⊗ X^l` on the four DNA characters.
pub fn klein_unitary(k: usize, l: usize) -> ComplexMatrix {
    let x = ComplexMatrix::pauli_x();
    let i = ComplexMatrix::identity(2);
    kron(if k == 1 { &x } else { &i }, if l == 1 { &x } else { &i })
}

/// Generator with `exp(i H_kl) = X^k ⊗ X^l`:
/// `H_kl = (π/2)[−(k+l) 1⊗1 + k X⊗1 + l 1⊗X]`.
pub fn klein_generator(k: usize, l: usize) -> ComplexMatrix {
    let x = ComplexMatrix::pauli_x();
    let i = ComplexMatrix::identity(2);
    let h = &(&kron(&i, &i).scale_real(-((k + l) as f64)) + &kron(&x, &i).scale_real(k as f64))
        + &kron(&i, &x).scale_real(l as f64);
    h.scale_real(std::f64::consts::FRAC_PI_2)
}

pub fn markov(params: &ModelParams) -> Result<MarkovMatrix> {
    params.validate()?;
    let entries = match *params {
        ModelParams::Jc { .. } | ModelParams::K2 { .. } | ModelParams::K3 { .. } => {
            let w = weights(params)?;
            (0..4).map(|m| (0..4).map(|n| w.by_element(m ^ n)).collect()).collect()
        }
        ModelParams::Binary { a } => vec![vec![1.0 - a, a], vec![a, 1.0 - a]],
        ModelParams::Felsenstein { a, pi } => (0..4)
            .map(|i| (0..4).map(|j| (1.0 - a) * pi[i] + if i == j { a } else { 0.0 }).collect())
            .collect(),
    };
    MarkovMatrix::new(entries)
}

/// `ρ ↦ Σ_kl λ_kl U_kl ρ U_kl^†` with zero-weight terms dropped.
pub fn group_channel(params: &ModelParams) -> Result<KrausChannel> {
    let w = weights(params)?;
    let mut ops = Vec::new();
    for k in 0..2 {
        for l in 0..2 {
            let lam = w.get(k, l);
            if lam > 0.0 {
                ops.push(klein_unitary(k, l).scale_real(lam.sqrt()));
            }
        }
    }
    KrausChannel::new(ops, format!("{}", params.family()))
}

/// `ρ ↦ (1−a) ρ + a XρX`.
pub fn binary_channel(a: f64) -> Result<KrausChannel> {
    unit_interval("a", a)?;
    let mut ops = Vec::new();
    if a < 1.0 {
        ops.push(ComplexMatrix::identity(2).scale_real((1.0 - a).sqrt()));
    }
    if a > 0.0 {
        ops.push(ComplexMatrix::pauli_x().scale_real(a.sqrt()));
    }
    KrausChannel::new(ops, "B")
}

/// The Felsenstein substitution map as a channel on four characters.
///
/// On any density it acts as `ρ ↦ (1−a) Tr(ρ) Σ_i π_i P_i + a ρ`, realized by
/// the Kraus operators `√a·1` and `√((1−a)π_i)|i⟩⟨j|`; on diagonal states this
/// is `p ↦ M_F p`. The measurement weight `p_π = Σ_i π_i p_i` is exposed
/// separately.
#[derive(Debug, Clone, PartialEq)]
pub struct FelsensteinChannel {
    a: f64,
    pi: [f64; 4],
}

impl FelsensteinChannel {
    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn pi(&self) -> &[f64; 4] {
        &self.pi
    }

    pub fn normalization(&self, rho: &ComplexMatrix) -> f64 {
        rho.diagonal().iter().zip(&self.pi).map(|(p, w)| p * w).sum()
    }

    pub fn kraus(&self) -> KrausChannel {
        let mut ops = vec![ComplexMatrix::identity(4).scale_real(self.a.sqrt())];
        for i in 0..4 {
            for j in 0..4 {
                ops.push(ComplexMatrix::unit(4, i, j).scale_real(((1.0 - self.a) * self.pi[i]).sqrt()));
            }
        }
        KrausChannel::new(ops, "F").expect("felsenstein operators are complete")
    }

    pub fn apply(&self, rho: &ComplexMatrix) -> Result<ComplexMatrix> {
        if !rho.is_square() || rho.rows() != 4 {
            return Err(Error::Dimension(format!("F channel applied to {}x{}", rho.rows(), rho.cols())));
        }
        if self.normalization(rho) <= 0.0 {
            return Err(Error::ZeroNormalization);
        }
        let stationary = ComplexMatrix::from_diagonal(&self.pi).scale(rho.trace() * (1.0 - self.a));
        Ok(&stationary + &rho.scale_real(self.a))
    }

    pub fn apply_diagonal(&self, p: &[f64]) -> Result<Vec<f64>> {
        let out = self.apply(&ComplexMatrix::from_diagonal(p))?;
        Ok(out.diagonal())
    }
}

pub fn felsenstein_channel(params: &ModelParams) -> Result<FelsensteinChannel> {
    params.validate()?;
    match *params {
        ModelParams::Felsenstein { a, pi } => Ok(FelsensteinChannel { a, pi }),
        _ => Err(Error::InvalidParams(format!("{} is not the F model", params.family()))),
    }
}

/// Trace-preserving channel realizing a model on its observable characters.
pub fn model_channel(params: &ModelParams) -> Result<KrausChannel> {
    match *params {
        ModelParams::Binary { a } => binary_channel(a),
        ModelParams::Felsenstein { .. } => Ok(felsenstein_channel(params)?.kraus()),
        _ => group_channel(params),
    }
}

/// Unitary on coin ⊗ walker whose traced action realizes a channel.
#[derive(Debug, Clone)]
pub struct Dilation {
    unitary: ComplexMatrix,
    coin_state: ComplexMatrix,
    coin_dim: usize,
    walker_dim: usize,
    flip_weight: Option<f64>,
}

impl Dilation {
    pub fn unitary(&self) -> &ComplexMatrix {
        &self.unitary
    }

    pub fn coin_state(&self) -> &ComplexMatrix {
        &self.coin_state
    }

    pub fn coin_dim(&self) -> usize {
        self.coin_dim
    }

    /// For the binary dilation: the bit-flip weight the traced map realizes.
    pub fn flip_weight(&self) -> Option<f64> {
        self.flip_weight
    }

    /// `Tr_c V (ρ_c ⊗ ρ) V^†`.
    pub fn apply(&self, rho: &ComplexMatrix) -> Result<ComplexMatrix> {
        if !rho.is_square() || rho.rows() != self.walker_dim {
            return Err(Error::Dimension(format!(
                "dilation on walker dimension {} applied to {}x{}",
                self.walker_dim,
                rho.rows(),
                rho.cols()
            )));
        }
        let joint = kron(&self.coin_state, rho);
        let evolved = &(&self.unitary * &joint) * &self.unitary.adjoint();
        partial_trace(&evolved, &[self.coin_dim, self.walker_dim], SlotIndex::new(1))
    }
}

/// Real orthogonal matrix whose first column is the unit vector `v`
/// (a Householder reflection exchanging `v` and `e_0`).
fn householder_completion(v: &[f64]) -> ComplexMatrix {
    let n = v.len();
    let mut w: Vec<f64> = v.to_vec();
    w[0] -= 1.0;
    let norm2: f64 = w.iter().map(|x| x * x).sum();
    if norm2 < 1e-30 {
        return ComplexMatrix::identity(n);
    }
    ComplexMatrix::from_fn(n, n, |i, j| {
        let delta = if i == j { 1.0 } else { 0.0 };
        Complex64::new(delta - 2.0 * w[i] * w[j] / norm2, 0.0)
    })
}

/// Quantum-walk dilation of a Klein-group model: a four-dimensional coin
/// `|kl⟩` (index `2k + l`) tossed by `U_τ` from `|00⟩`, then
/// control-control-`U_kl` on the walker.
pub fn qw_dilation(params: &ModelParams) -> Result<Dilation> {
    let w = weights(params)?;
    let column: Vec<f64> = (0..4).map(|g| w.by_element(g).max(0.0).sqrt()).collect();
    let coin_toss = householder_completion(&column);
    let mut controlled = ComplexMatrix::zeros(16, 16);
    for k in 0..2 {
        for l in 0..2 {
            let proj = ComplexMatrix::projector(4, 2 * k + l);
            controlled = &controlled + &kron(&proj, &klein_unitary(k, l));
        }
    }
    let unitary = &controlled * &kron(&coin_toss, &ComplexMatrix::identity(4));
    Ok(Dilation {
        unitary,
        coin_state: ComplexMatrix::projector(4, 0),
        coin_dim: 4,
        walker_dim: 4,
        flip_weight: None,
    })
}

/// Coin-toss unitary of [`qw_dilation`], exposed for inspection.
pub fn qw_coin_unitary(params: &ModelParams) -> Result<ComplexMatrix> {
    let w = weights(params)?;
    let column: Vec<f64> = (0..4).map(|g| w.by_element(g).max(0.0).sqrt()).collect();
    Ok(householder_completion(&column))
}

/// Binary dilation `V_B = √a 1⊗1 + √(1−a) Y⊗X` with `Y = ZX`, coin in `|1⟩`.
///
/// Tracing out the coin leaves `a ρ + (1−a) XρX`, so the realized flip weight
/// is `1 − a`; it is recorded in [`Dilation::flip_weight`].
pub fn binary_dilation(a: f64) -> Result<Dilation> {
    unit_interval("a", a)?;
    let id = kron(&ComplexMatrix::identity(2), &ComplexMatrix::identity(2));
    let yx = kron(&ComplexMatrix::pauli_zx(), &ComplexMatrix::pauli_x());
    let unitary = &id.scale_real(a.sqrt()) + &yx.scale_real((1.0 - a).sqrt());
    Ok(Dilation {
        unitary,
        coin_state: ComplexMatrix::projector(2, 1),
        coin_dim: 2,
        walker_dim: 2,
        flip_weight: Some(1.0 - a),
    })
}

/// Search budget for [`unitary_from_markov`].
pub const UNISTOCHASTIC_STARTS: usize = 64;
pub const UNISTOCHASTIC_ITERATIONS: usize = 500;
pub const UNISTOCHASTIC_TOL: f64 = 1e-8;
const UNISTOCHASTIC_EXACT: f64 = 1e-14;

/// Is `M[m][n]` a function of `m ⊕ n` alone?
fn klein_circulant(m: &MarkovMatrix) -> bool {
    m.dim() == 4 && (0..4).all(|i| (0..4).all(|j| (m.get(i, j) - m.get(i ^ j, 0)).abs() <= STRUCTURAL_TOL))
}

const KLEIN_CHARACTERS: [[f64; 4]; 4] =
    [[1.0, 1.0, 1.0, 1.0], [1.0, 1.0, -1.0, -1.0], [1.0, -1.0, 1.0, -1.0], [1.0, -1.0, -1.0, 1.0]];

fn klein_coefficients(phases: &[f64; 4]) -> [Complex64; 4] {
    let mut c = [ZERO; 4];
    for (g, cg) in c.iter_mut().enumerate() {
        *cg = (0..4).map(|chi| Complex64::from_polar(0.25, phases[chi]) * KLEIN_CHARACTERS[chi][g]).sum();
    }
    c
}

fn klein_residual(c: &[Complex64; 4], lambda: &[f64; 4]) -> f64 {
    c.iter().zip(lambda).map(|(z, l)| (z.norm_sqr() - l).abs()).fold(0.0, f64::max)
}

fn solve3(mut a: [[f64; 3]; 3], mut b: [f64; 3]) -> Option<[f64; 3]> {
    for col in 0..3 {
        let piv = (col..3).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-14 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..3 {
            let f = a[row][col] / a[col][col];
            for k in col..3 {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; 3];
    for row in (0..3).rev() {
        let s: f64 = (row + 1..3).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    Some(x)
}

/// Newton refinement of the three relative phases (the trivial character's
/// phase is a global phase and stays fixed).
fn klein_newton(phases: &mut [f64; 4], lambda: &[f64; 4]) {
    for _ in 0..30 {
        let c = klein_coefficients(phases);
        if klein_residual(&c, lambda) < 1e-15 {
            return;
        }
        let r = [c[1].norm_sqr() - lambda[1], c[2].norm_sqr() - lambda[2], c[3].norm_sqr() - lambda[3]];
        let mut jac = [[0.0; 3]; 3];
        for (row, g) in (1..4).enumerate() {
            for (col, chi) in (1..4).enumerate() {
                let d = Complex64::new(0.0, 0.25) * Complex64::from_polar(1.0, phases[chi]) * KLEIN_CHARACTERS[chi][g];
                jac[row][col] = 2.0 * (c[g].conj() * d).re;
            }
        }
        let Some(step) = solve3(jac, r) else { return };
        for (k, s) in step.iter().enumerate() {
            phases[k + 1] -= s;
        }
    }
}

fn klein_search<R: Rng + ?Sized>(m: &MarkovMatrix, rng: &mut R) -> (ComplexMatrix, f64) {
    let lambda = [m.get(0, 0), m.get(1, 0), m.get(2, 0), m.get(3, 0)];
    let mut best = ([0.0; 4], f64::INFINITY);
    for start in 0..UNISTOCHASTIC_STARTS {
        let mut phases = [0.0; 4];
        if start > 0 {
            for p in phases.iter_mut().skip(1) {
                *p = rng.random_range(0.0..std::f64::consts::TAU);
            }
        }
        // alternate between the modulus constraint and the unit-circle
        // constraint on the character transform
        for _ in 0..UNISTOCHASTIC_ITERATIONS {
            let c = klein_coefficients(&phases);
            if klein_residual(&c, &lambda) < 1e-6 {
                break;
            }
            let projected: Vec<Complex64> = c
                .iter()
                .zip(&lambda)
                .map(|(z, l)| if z.norm() > 1e-300 { z * (l.sqrt() / z.norm()) } else { Complex64::new(l.sqrt(), 0.0) })
                .collect();
            for chi in 0..4 {
                let hat: Complex64 = (0..4).map(|g| projected[g] * KLEIN_CHARACTERS[chi][g]).sum();
                phases[chi] = hat.arg();
            }
            let shift = phases[0];
            phases.iter_mut().for_each(|p| *p -= shift);
        }
        klein_newton(&mut phases, &lambda);
        let res = klein_residual(&klein_coefficients(&phases), &lambda);
        if res < best.1 {
            best = (phases, res);
        }
        if best.1 < UNISTOCHASTIC_EXACT {
            break;
        }
    }
    let c = klein_coefficients(&best.0);
    (ComplexMatrix::from_fn(4, 4, |i, j| c[i ^ j]), best.1)
}

fn hadamard_residual(u: &ComplexMatrix, m: &MarkovMatrix) -> f64 {
    let n = m.dim();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            worst = worst.max((u[(i, j)].norm_sqr() - m.get(i, j)).abs());
        }
    }
    worst
}

fn hermitian_basis(n: usize) -> Vec<ComplexMatrix> {
    let mut basis = Vec::with_capacity(n * n);
    for j in 0..n {
        basis.push(ComplexMatrix::unit(n, j, j));
        for k in j + 1..n {
            basis.push(&ComplexMatrix::unit(n, j, k) + &ComplexMatrix::unit(n, k, j));
            let mut g = ComplexMatrix::zeros(n, n);
            g[(j, k)] = Complex64::new(0.0, 1.0);
            g[(k, j)] = Complex64::new(0.0, -1.0);
            basis.push(g);
        }
    }
    basis
}

/// Gauss–Newton on `U exp(iH)`, solving for the Hermitian step by least
/// squares on the squared-modulus residuals.
fn polish_unitary(mut u: ComplexMatrix, m: &MarkovMatrix) -> Result<(ComplexMatrix, f64)> {
    let n = m.dim();
    let basis = hermitian_basis(n);
    let mut res = hadamard_residual(&u, m);
    for _ in 0..40 {
        if res < UNISTOCHASTIC_EXACT {
            break;
        }
        let derivs: Vec<ComplexMatrix> = basis.iter().map(|g| (&u * g).scale(Complex64::new(0.0, 1.0))).collect();
        let jac = DMatrix::from_fn(n * n, basis.len(), |r, k| 2.0 * (u[(r / n, r % n)].conj() * derivs[k][(r / n, r % n)]).re);
        let rhs = DVector::from_fn(n * n, |r, _| m.get(r / n, r % n) - u[(r / n, r % n)].norm_sqr());
        let step = jac.svd(true, true).solve(&rhs, 1e-10).map_err(|e| Error::Dimension(e.to_string()))?;
        let mut h = ComplexMatrix::zeros(n, n);
        for (g, s) in basis.iter().zip(step.iter()) {
            h = &h + &g.scale_real(*s);
        }
        let next = &u * &h.scale(Complex64::new(0.0, 1.0)).expm()?;
        let next_res = hadamard_residual(&next, m);
        if next_res >= res {
            break;
        }
        u = next;
        res = next_res;
    }
    Ok((u, res))
}

fn generic_search<R: Rng + ?Sized>(m: &MarkovMatrix, rng: &mut R) -> Result<(ComplexMatrix, f64)> {
    let n = m.dim();
    let moduli: Vec<Vec<f64>> = m.rows().iter().map(|r| r.iter().map(|x| x.max(0.0).sqrt()).collect()).collect();
    let mut best: Option<(ComplexMatrix, f64)> = None;
    for start in 0..UNISTOCHASTIC_STARTS {
        let mut phases: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..n).map(|_| if start == 0 { 0.0 } else { rng.random_range(0.0..std::f64::consts::TAU) }).collect())
            .collect();
        let mut u = ComplexMatrix::identity(n);
        let mut res = f64::INFINITY;
        for _ in 0..UNISTOCHASTIC_ITERATIONS {
            let target = ComplexMatrix::from_fn(n, n, |i, j| Complex64::from_polar(moduli[i][j], phases[i][j]));
            u = target.unitary_polar_factor()?;
            res = hadamard_residual(&u, m);
            if res < UNISTOCHASTIC_EXACT {
                break;
            }
            for (i, row) in phases.iter_mut().enumerate() {
                for (j, p) in row.iter_mut().enumerate() {
                    if u[(i, j)].norm() > 1e-300 {
                        *p = u[(i, j)].arg();
                    }
                }
            }
        }
        if res > UNISTOCHASTIC_EXACT && res < 1e-2 {
            (u, res) = polish_unitary(u, m)?;
        }
        if best.as_ref().is_none_or(|(_, r)| res < *r) {
            best = Some((u, res));
        }
        if best.as_ref().is_some_and(|(_, r)| *r < UNISTOCHASTIC_EXACT) {
            break;
        }
    }
    Ok(best.expect("at least one start"))
}

/// Finds a unitary `U` with `U ∘ U* = M`.
///
/// Klein-circulant matrices are searched inside the group algebra, where `U`
/// is unitary exactly when its character transform has unit moduli; other
/// doubly stochastic matrices use alternating projections between the
/// modulus pattern and the unitary group. The search is randomized over
/// [`UNISTOCHASTIC_STARTS`] phase starts and fails with
/// [`Error::NotUnistochastic`] if no start gets below [`UNISTOCHASTIC_TOL`].
pub fn unitary_from_markov<R: Rng + ?Sized>(m: &MarkovMatrix, rng: &mut R) -> Result<ComplexMatrix> {
    if !m.is_doubly_stochastic(STRUCTURAL_TOL) {
        return Err(Error::InvalidParams("only doubly stochastic matrices can be unistochastic".into()));
    }
    let (mut u, mut residual) = if klein_circulant(m) { klein_search(m, rng) } else { generic_search(m, rng)? };
    if residual > UNISTOCHASTIC_TOL {
        // some Klein-circulant matrices are only realized by non-circulant unitaries
        (u, residual) = generic_search(m, rng)?;
    }
    if residual > UNISTOCHASTIC_TOL {
        return Err(Error::NotUnistochastic { residual, starts: UNISTOCHASTIC_STARTS });
    }
    Ok(u)
}

/// JC weight after branch length `t`: `a(t) = (1 − e^{−4t/3}) / 4`, the
/// probability of each particular substitution.
pub fn jc_from_branch_length(t: f64) -> Result<ModelParams> {
    if !(t >= 0.0) {
        return Err(Error::InvalidParams(format!("branch length {t} is negative")));
    }
    Ok(ModelParams::Jc { a: 0.25 * (1.0 - (-4.0 * t / 3.0).exp()) })
}

/// Binary symmetric weight after branch length `t`: `a(t) = (1 − e^{−2t}) / 2`.
pub fn binary_from_branch_length(t: f64) -> Result<ModelParams> {
    if !(t >= 0.0) {
        return Err(Error::InvalidParams(format!("branch length {t} is negative")));
    }
    Ok(ModelParams::Binary { a: 0.5 * (1.0 - (-2.0 * t).exp()) })
}
