//! Dense complex matrices and the handful of tensor-product primitives the
//! simulator is built from.
//!
//! Matrices are stored row-major. For multi-slot spaces the first slot is the
//! leftmost tensor factor and the most significant digit of the linear index.

use std::fmt;
use std::ops::{Add, Index, IndexMut, Mul, Sub};

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::tensor::SlotIndex;

/// Max-abs tolerance for structural predicates (unitary, Hermitian, stochastic).
pub const STRUCTURAL_TOL: f64 = 1e-12;
/// Default tolerance when comparing two independently computed quantities.
pub const COMPARISON_TOL: f64 = 1e-10;

pub const ZERO: Complex64 = Complex64::new(0.0, 0.0);
pub const ONE: Complex64 = Complex64::new(1.0, 0.0);

#[derive(Clone, PartialEq)]
pub struct ComplexMatrix {
    rows: usize,
    cols: usize,
    data: Vec<Complex64>,
}

impl ComplexMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![ZERO; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = ONE;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> Complex64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// Builds a matrix from row-major entries.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "{} entries for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_real(rows: usize, cols: usize, data: &[f64]) -> Result<Self> {
        Self::from_vec(rows, cols, data.iter().map(|&x| Complex64::new(x, 0.0)).collect())
    }

    pub fn from_real_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::Dimension("ragged rows".into()));
        }
        Ok(Self::from_fn(r, c, |i, j| Complex64::new(rows[i][j], 0.0)))
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut m = Self::zeros(n, n);
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = Complex64::new(d, 0.0);
        }
        m
    }

    /// `|i><i|` in dimension `n`.
    pub fn projector(n: usize, i: usize) -> Self {
        let mut m = Self::zeros(n, n);
        m[(i, i)] = ONE;
        m
    }

    /// `|i><j|` in dimension `n`.
    pub fn unit(n: usize, i: usize, j: usize) -> Self {
        let mut m = Self::zeros(n, n);
        m[(i, j)] = ONE;
        m
    }

    /// Cyclic shift `h|i> = |i+1 mod n>`.
    pub fn shift(n: usize) -> Self {
        Self::from_fn(n, n, |i, j| if i == (j + 1) % n { ONE } else { ZERO })
    }

    pub fn pauli_x() -> Self {
        Self::shift(2)
    }

    pub fn pauli_z() -> Self {
        Self::from_diagonal(&[1.0, -1.0])
    }

    /// `Y = ZX`, the real antisymmetric variant.
    pub fn pauli_zx() -> Self {
        &Self::pauli_z() * &Self::pauli_x()
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn entries(&self) -> &[Complex64] {
        &self.data
    }

    pub fn scale(&self, s: Complex64) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&z| z * s).collect() }
    }

    pub fn scale_real(&self, s: f64) -> Self {
        self.scale(Complex64::new(s, 0.0))
    }

    pub fn adjoint(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)].conj())
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn trace(&self) -> Complex64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    /// Real parts of the diagonal.
    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)].re).collect()
    }

    /// Keeps the diagonal, zeroes everything else.
    pub fn diagonal_part(&self) -> Self {
        Self::from_fn(self.rows, self.cols, |i, j| if i == j { self[(i, j)] } else { ZERO })
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// Max absolute entry-wise difference; infinite if shapes differ.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        if self.rows != other.rows || self.cols != other.cols {
            return f64::INFINITY;
        }
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max)
    }

    /// `max |U U^† - 1|`.
    pub fn unitarity_defect(&self) -> f64 {
        if !self.is_square() {
            return f64::INFINITY;
        }
        (self * &self.adjoint()).max_abs_diff(&Self::identity(self.rows))
    }

    pub fn is_unitary(&self, tol: f64) -> bool {
        self.unitarity_defect() <= tol
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.is_square() && self.max_abs_diff(&self.adjoint()) <= tol
    }

    /// Entry-wise squared moduli `U ∘ U*` as a real row-major table.
    pub fn squared_moduli(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|i| (0..self.cols).map(|j| self[(i, j)].norm_sqr()).collect()).collect()
    }

    /// Matrix exponential by scaling and squaring with a Taylor core.
    pub fn expm(&self) -> Result<Self> {
        if !self.is_square() {
            return Err(Error::Dimension("expm of a non-square matrix".into()));
        }
        let norm: f64 = (0..self.rows)
            .map(|i| (0..self.cols).map(|j| self[(i, j)].norm()).sum::<f64>())
            .fold(0.0, f64::max);
        let squarings = if norm > 0.5 { (norm / 0.5).log2().ceil() as u32 } else { 0 };
        let a = self.scale_real(1.0 / f64::from(2u32.pow(squarings)));
        let mut result = Self::identity(self.rows);
        let mut term = Self::identity(self.rows);
        for k in 1..=24 {
            term = (&term * &a).scale_real(1.0 / k as f64);
            result = &result + &term;
        }
        for _ in 0..squarings {
            result = &result * &result;
        }
        Ok(result)
    }

    pub(crate) fn to_nalgebra(&self) -> DMatrix<Complex64> {
        DMatrix::from_fn(self.rows, self.cols, |i, j| self[(i, j)])
    }

    pub(crate) fn from_nalgebra(m: &DMatrix<Complex64>) -> Self {
        Self::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
    }

    /// Unitary factor of the polar decomposition, `W V^†` from the SVD.
    pub fn unitary_polar_factor(&self) -> Result<Self> {
        if !self.is_square() {
            return Err(Error::Dimension("polar factor of a non-square matrix".into()));
        }
        let svd = self.to_nalgebra().svd(true, true);
        match (svd.u, svd.v_t) {
            (Some(u), Some(v_t)) => Ok(Self::from_nalgebra(&(u * v_t))),
            _ => Err(Error::Dimension("svd did not converge".into())),
        }
    }
}

impl Index<(usize, usize)> for ComplexMatrix {
    type Output = Complex64;
    fn index(&self, (i, j): (usize, usize)) -> &Complex64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for ComplexMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut Complex64 {
        &mut self.data[i * self.cols + j]
    }
}

impl Mul for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn mul(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        assert_eq!(self.cols, rhs.rows, "matrix product shape mismatch");
        let mut out = ComplexMatrix::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == ZERO {
                    continue;
                }
                let row = &rhs.data[k * rhs.cols..(k + 1) * rhs.cols];
                let dst = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
                for (d, &b) in dst.iter_mut().zip(row) {
                    *d += a * b;
                }
            }
        }
        out
    }
}

impl Add for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn add(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols), "matrix sum shape mismatch");
        ComplexMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect(),
        }
    }
}

impl Sub for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn sub(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols), "matrix difference shape mismatch");
        ComplexMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect(),
        }
    }
}

impl fmt::Debug for ComplexMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "ComplexMatrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            write!(f, "  ")?;
            for j in 0..self.cols {
                let z = self[(i, j)];
                write!(f, "{:+.4}{:+.4}i ", z.re, z.im)?;
            }
            writeln!(f)?;
        }
        write!(f, "]")
    }
}

/// Kronecker product: `(A⊗B)[i·rB+k, j·cB+l] = A[i,j]·B[k,l]`.
pub fn kron(a: &ComplexMatrix, b: &ComplexMatrix) -> ComplexMatrix {
    let (rb, cb) = (b.rows, b.cols);
    ComplexMatrix::from_fn(a.rows * rb, a.cols * cb, |r, c| a[(r / rb, c / cb)] * b[(r % rb, c % cb)])
}

/// Kronecker product of a list of factors, left to right.
pub fn kron_all<'a>(factors: impl IntoIterator<Item = &'a ComplexMatrix>) -> ComplexMatrix {
    factors.into_iter().fold(ComplexMatrix::identity(1), |acc, f| kron(&acc, f))
}

pub fn hadamard_product(a: &ComplexMatrix, b: &ComplexMatrix) -> Result<ComplexMatrix> {
    if (a.rows, a.cols) != (b.rows, b.cols) {
        return Err(Error::Dimension(format!(
            "hadamard product of {}x{} and {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    Ok(ComplexMatrix {
        rows: a.rows,
        cols: a.cols,
        data: a.data.iter().zip(&b.data).map(|(x, y)| x * y).collect(),
    })
}

/// `S ρ S^†`.
pub fn adjoint_action(s: &ComplexMatrix, rho: &ComplexMatrix) -> Result<ComplexMatrix> {
    if !s.is_square() || !rho.is_square() || s.rows != rho.rows {
        return Err(Error::Dimension(format!(
            "adjoint action of {}x{} on {}x{}",
            s.rows, s.cols, rho.rows, rho.cols
        )));
    }
    Ok(&(s * rho) * &s.adjoint())
}

fn check_slots(dim: usize, slots: &[usize], slot: SlotIndex) -> Result<(usize, usize, usize)> {
    let total: usize = slots.iter().product();
    if total != dim {
        return Err(Error::Dimension(format!(
            "slot dimensions {slots:?} multiply to {total}, matrix has dimension {dim}"
        )));
    }
    let k = slot.position();
    if k == 0 || k > slots.len() {
        return Err(Error::InvalidSlot { slot: k, slots: slots.len() });
    }
    let left: usize = slots[..k - 1].iter().product();
    let right: usize = slots[k..].iter().product();
    Ok((left, slots[k - 1], right))
}

/// Traces out one tensor slot of a square operator.
pub fn partial_trace(rho: &ComplexMatrix, slots: &[usize], traced: SlotIndex) -> Result<ComplexMatrix> {
    if !rho.is_square() {
        return Err(Error::Dimension("partial trace of a non-square matrix".into()));
    }
    let (left, mid, right) = check_slots(rho.rows, slots, traced)?;
    let out_dim = left * right;
    let mut out = ComplexMatrix::zeros(out_dim, out_dim);
    for a in 0..left {
        for c in 0..right {
            for a2 in 0..left {
                for c2 in 0..right {
                    let mut acc = ZERO;
                    for b in 0..mid {
                        acc += rho[((a * mid + b) * right + c, (a2 * mid + b) * right + c2)];
                    }
                    out[(a * right + c, a2 * right + c2)] = acc;
                }
            }
        }
    }
    Ok(out)
}

/// `(1 ⊗ op ⊗ 1) X (1 ⊗ op ⊗ 1)^†` with `op` acting on a single slot, computed
/// without materializing the embedded operator.
pub fn conjugate_on_slot(
    op: &ComplexMatrix,
    x: &ComplexMatrix,
    slots: &[usize],
    slot: SlotIndex,
) -> Result<ComplexMatrix> {
    if !x.is_square() {
        return Err(Error::Dimension("conjugation of a non-square matrix".into()));
    }
    let (left, mid, right) = check_slots(x.rows, slots, slot)?;
    if op.rows != mid || op.cols != mid {
        return Err(Error::Dimension(format!(
            "{}x{} operator on a slot of dimension {mid}",
            op.rows, op.cols
        )));
    }
    let n = x.rows;
    let idx = |a: usize, b: usize, c: usize| (a * mid + b) * right + c;
    // Y = (1⊗op⊗1) X
    let mut y = ComplexMatrix::zeros(n, n);
    for a in 0..left {
        for c in 0..right {
            for b in 0..mid {
                let row = idx(a, b, c);
                for b2 in 0..mid {
                    let w = op[(b, b2)];
                    if w == ZERO {
                        continue;
                    }
                    let src = idx(a, b2, c);
                    for col in 0..n {
                        y.data[row * n + col] += w * x.data[src * n + col];
                    }
                }
            }
        }
    }
    // Z = Y (1⊗op⊗1)^†, so Z[r,(a,b,c)] = Σ_b2 Y[r,(a,b2,c)] conj(op[b,b2])
    let mut z = ComplexMatrix::zeros(n, n);
    for r in 0..n {
        for a in 0..left {
            for c in 0..right {
                for b in 0..mid {
                    let mut acc = ZERO;
                    for b2 in 0..mid {
                        let w = op[(b, b2)];
                        if w != ZERO {
                            acc += y.data[r * n + idx(a, b2, c)] * w.conj();
                        }
                    }
                    z.data[r * n + idx(a, b, c)] = acc;
                }
            }
        }
    }
    Ok(z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn random_matrix(rng: &mut ChaCha8Rng, r: usize, cols: usize) -> ComplexMatrix {
        ComplexMatrix::from_fn(r, cols, |_, _| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
    }

    #[test]
    fn kron_of_identities_is_identity() {
        let i2 = ComplexMatrix::identity(2);
        assert_eq!(kron(&i2, &i2), ComplexMatrix::identity(4));
    }

    #[test]
    fn double_bit_flip_maps_e0_to_e3() {
        let x = ComplexMatrix::pauli_x();
        let xx = kron(&x, &x);
        let e0 = ComplexMatrix::from_real(4, 1, &[1.0, 0.0, 0.0, 0.0]).unwrap();
        let out = &xx * &e0;
        assert_eq!(out.diagonal_part().rows(), 4);
        assert_eq!(out[(3, 0)], ONE);
        assert_eq!(out[(0, 0)], ZERO);
    }

    #[test]
    fn kron_matches_index_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let a = random_matrix(&mut rng, 2, 2);
            let b = random_matrix(&mut rng, 2, 2);
            let k = kron(&a, &b);
            for i in 0..2 {
                for j in 0..2 {
                    for p in 0..2 {
                        for q in 0..2 {
                            let expect = a[(i, j)] * b[(p, q)];
                            assert!((k[(i * 2 + p, j * 2 + q)] - expect).norm() < 1e-15);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn kron_is_associative() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_matrix(&mut rng, 2, 3);
        let b = random_matrix(&mut rng, 3, 2);
        let d = random_matrix(&mut rng, 2, 2);
        assert!(kron(&kron(&a, &b), &d).max_abs_diff(&kron(&a, &kron(&b, &d))) < 1e-15);
    }

    #[test]
    fn hadamard_with_all_ones_is_identity_op() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_matrix(&mut rng, 3, 3);
        let j = ComplexMatrix::from_fn(3, 3, |_, _| ONE);
        assert_eq!(hadamard_product(&a, &j).unwrap(), a);
    }

    #[test]
    fn hadamard_square_of_balanced_unitary_is_half() {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let u = ComplexMatrix::from_real(2, 2, &[s, s, s, -s]).unwrap();
        let m = hadamard_product(&u, &u.adjoint().transpose()).unwrap();
        for z in m.entries() {
            assert!((z - c(0.5, 0.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn hadamard_of_pauli_x_is_idempotent_and_rejects_shape_mismatch() {
        let x = ComplexMatrix::pauli_x();
        assert_eq!(hadamard_product(&x, &x).unwrap(), x);
        assert!(hadamard_product(&x, &ComplexMatrix::identity(3)).is_err());
    }

    #[test]
    fn hadamard_of_zero_one_matrices_is_and() {
        let a = ComplexMatrix::from_real(2, 3, &[1.0, 0.0, 1.0, 0.0, 1.0, 1.0]).unwrap();
        let b = ComplexMatrix::from_real(2, 3, &[1.0, 1.0, 0.0, 0.0, 1.0, 0.0]).unwrap();
        let expect = ComplexMatrix::from_real(2, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]).unwrap();
        assert_eq!(hadamard_product(&a, &b).unwrap(), expect);
    }

    #[test]
    fn partial_trace_of_product_state() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let rho = random_matrix(&mut rng, 3, 3);
        let sigma = random_matrix(&mut rng, 2, 2);
        let out = partial_trace(&kron(&rho, &sigma), &[3, 2], SlotIndex::new(2)).unwrap();
        assert!(out.max_abs_diff(&rho.scale(sigma.trace())) < 1e-14);
        let out1 = partial_trace(&kron(&rho, &sigma), &[3, 2], SlotIndex::new(1)).unwrap();
        assert!(out1.max_abs_diff(&sigma.scale(rho.trace())) < 1e-14);
    }

    #[test]
    fn partial_trace_of_bell_pair_is_maximally_mixed() {
        let mut bell = ComplexMatrix::zeros(4, 4);
        for &i in &[0, 3] {
            for &j in &[0, 3] {
                bell[(i, j)] = c(0.5, 0.0);
            }
        }
        let out = partial_trace(&bell, &[2, 2], SlotIndex::new(2)).unwrap();
        assert!(out.max_abs_diff(&ComplexMatrix::identity(2).scale_real(0.5)) < 1e-15);
    }

    #[test]
    fn partial_trace_rejects_bad_dimensions() {
        let m = ComplexMatrix::identity(6);
        assert!(matches!(partial_trace(&m, &[2, 2], SlotIndex::new(1)), Err(Error::Dimension(_))));
        assert!(matches!(partial_trace(&m, &[2, 3], SlotIndex::new(3)), Err(Error::InvalidSlot { .. })));
    }

    #[test]
    fn sequential_partial_traces_equal_full_trace() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = random_matrix(&mut rng, 24, 24);
        let mut dims = vec![2, 3, 4];
        let mut cur = m.clone();
        while !dims.is_empty() {
            cur = partial_trace(&cur, &dims, SlotIndex::new(1)).unwrap();
            dims.remove(0);
        }
        assert!((cur[(0, 0)] - m.trace()).norm() < 1e-13);
    }

    #[test]
    fn adjoint_action_basics() {
        let rho = ComplexMatrix::from_diagonal(&[0.3, 0.7]);
        assert_eq!(adjoint_action(&ComplexMatrix::identity(2), &rho).unwrap(), rho);
        let flipped = adjoint_action(&ComplexMatrix::pauli_x(), &rho).unwrap();
        assert_eq!(flipped, ComplexMatrix::from_diagonal(&[0.7, 0.3]));
        assert!(adjoint_action(&ComplexMatrix::identity(3), &rho).is_err());
    }

    #[test]
    fn conjugate_on_slot_matches_embedded_operator() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = random_matrix(&mut rng, 24, 24);
        for (slot, op_dim) in [(1, 2), (2, 3), (3, 4)] {
            let op = random_matrix(&mut rng, op_dim, op_dim);
            let factors: Vec<ComplexMatrix> = [2, 3, 4]
                .iter()
                .enumerate()
                .map(|(i, &d)| if i + 1 == slot { op.clone() } else { ComplexMatrix::identity(d) })
                .collect();
            let full = kron_all(&factors);
            let expect = adjoint_action(&full, &x).unwrap();
            let got = conjugate_on_slot(&op, &x, &[2, 3, 4], SlotIndex::new(slot)).unwrap();
            assert!(got.max_abs_diff(&expect) < 1e-12);
        }
    }

    #[test]
    fn expm_of_zero_and_diagonal() {
        assert!(ComplexMatrix::zeros(3, 3).expm().unwrap().max_abs_diff(&ComplexMatrix::identity(3)) < 1e-15);
        let d = ComplexMatrix::from_diagonal(&[1.0, -2.0]);
        let e = d.expm().unwrap();
        assert!((e[(0, 0)].re - 1f64.exp()).abs() < 1e-12);
        assert!((e[(1, 1)].re - (-2f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn polar_factor_is_unitary() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_matrix(&mut rng, 4, 4);
        assert!(a.unitary_polar_factor().unwrap().is_unitary(1e-12));
    }
}
