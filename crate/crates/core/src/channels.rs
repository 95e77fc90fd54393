//! Kraus channels, the diagonalizing maps, the modular control-not and the
//! splitting operation that turns one lineage into two.

use num_complex::Complex64;

use crate::alphabet::Alphabet;
use crate::error::{Error, Result};
use crate::linalg::{kron, ComplexMatrix, ONE, STRUCTURAL_TOL, ZERO};
use crate::tensor::{ProbabilityTensor, ProbabilityVector, SlotIndex};

/// A completely positive map in operator-sum form, `ρ ↦ Σ_k K_k ρ K_k^†`.
#[derive(Debug, Clone)]
pub struct KrausChannel {
    operators: Vec<ComplexMatrix>,
    label: String,
    trace_preserving: bool,
}

impl KrausChannel {
    /// Builds a trace-preserving channel, rejecting operator sets whose
    /// completeness defect exceeds [`STRUCTURAL_TOL`].
    pub fn new(operators: Vec<ComplexMatrix>, label: impl Into<String>) -> Result<Self> {
        let ch = Self::unchecked(operators, label, true)?;
        let defect = ch.completeness_defect();
        if defect > STRUCTURAL_TOL {
            return Err(Error::InvalidParams(format!(
                "kraus operators of `{}` are incomplete (defect {defect:.3e})",
                ch.label
            )));
        }
        Ok(ch)
    }

    /// Builds a trace non-increasing map; completeness is not required.
    pub fn trace_nonincreasing(operators: Vec<ComplexMatrix>, label: impl Into<String>) -> Result<Self> {
        Self::unchecked(operators, label, false)
    }

    fn unchecked(operators: Vec<ComplexMatrix>, label: impl Into<String>, trace_preserving: bool) -> Result<Self> {
        let label = label.into();
        let dim = operators.first().map(ComplexMatrix::rows).ok_or_else(|| {
            Error::Dimension(format!("channel `{label}` has no operators"))
        })?;
        if operators.iter().any(|k| k.rows() != dim || k.cols() != dim) {
            return Err(Error::Dimension(format!("channel `{label}` mixes operator shapes")));
        }
        Ok(Self { operators, label, trace_preserving })
    }

    pub fn operators(&self) -> &[ComplexMatrix] {
        &self.operators
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn dim(&self) -> usize {
        self.operators[0].rows()
    }

    /// False for pinchings such as [`collective_diagonalizer`].
    pub fn is_trace_preserving(&self) -> bool {
        self.trace_preserving
    }

    /// `max |Σ K^†K − 1|`.
    pub fn completeness_defect(&self) -> f64 {
        let n = self.dim();
        let sum = self
            .operators
            .iter()
            .fold(ComplexMatrix::zeros(n, n), |acc, k| &acc + &(&k.adjoint() * k));
        sum.max_abs_diff(&ComplexMatrix::identity(n))
    }

    /// Column-stochastic matrix the channel induces on diagonal states:
    /// `M[i][j] = Σ_k |K_k[i,j]|²`.
    pub fn induced_markov(&self) -> Vec<Vec<f64>> {
        let n = self.dim();
        let mut m = vec![vec![0.0; n]; n];
        for k in &self.operators {
            for (i, row) in m.iter_mut().enumerate() {
                for (j, v) in row.iter_mut().enumerate() {
                    *v += k[(i, j)].norm_sqr();
                }
            }
        }
        m
    }

    /// Extends a channel on the observable characters to the full character
    /// space by acting as the identity on the null symbol.
    pub fn extend_null(&self) -> Result<Self> {
        let n = self.dim();
        let ops = self
            .operators
            .iter()
            .enumerate()
            .map(|(idx, k)| {
                ComplexMatrix::from_fn(n + 1, n + 1, |i, j| match (i, j) {
                    (0, 0) => {
                        if idx == 0 {
                            ONE
                        } else {
                            ZERO
                        }
                    }
                    (0, _) | (_, 0) => ZERO,
                    _ => k[(i - 1, j - 1)],
                })
            })
            .collect();
        Self::unchecked(ops, format!("{}+null", self.label), self.trace_preserving)
    }
}

pub fn apply_channel(ch: &KrausChannel, rho: &ComplexMatrix) -> Result<ComplexMatrix> {
    if !rho.is_square() || rho.rows() != ch.dim() {
        return Err(Error::Dimension(format!(
            "channel `{}` of dimension {} applied to {}x{} matrix",
            ch.label,
            ch.dim(),
            rho.rows(),
            rho.cols()
        )));
    }
    let n = ch.dim();
    Ok(ch
        .operators
        .iter()
        .fold(ComplexMatrix::zeros(n, n), |acc, k| &acc + &(&(k * rho) * &k.adjoint())))
}

fn check_dim(n: usize) -> Result<()> {
    if n < 2 {
        Err(Error::DimensionTooSmall(n))
    } else {
        Ok(())
    }
}

/// Pinching onto the computational basis, `Σ_k P_k (·) P_k`.
pub fn diagonalizer(n: usize) -> Result<KrausChannel> {
    check_dim(n)?;
    KrausChannel::new((0..n).map(|k| ComplexMatrix::projector(n, k)).collect(), format!("E_d({n})"))
}

/// The same pinching written as a uniform mixture of the Fourier phase
/// unitaries `U_k = Σ_l ω^{kl} P_l`, `ω = exp(2πi/n)`.
pub fn diagonalizer_fourier(n: usize) -> Result<KrausChannel> {
    check_dim(n)?;
    let weight = (1.0 / n as f64).sqrt();
    let ops = (0..n)
        .map(|k| {
            let phases: Vec<Complex64> = (0..n)
                .map(|l| Complex64::from_polar(weight, 2.0 * std::f64::consts::PI * ((k * l) % n) as f64 / n as f64))
                .collect();
            ComplexMatrix::from_fn(n, n, |i, j| if i == j { phases[i] } else { ZERO })
        })
        .collect();
    KrausChannel::new(ops, format!("E_d-fourier({n})"))
}

/// Collective pinching `Σ_k (P_k⊗P_k)(·)(P_k⊗P_k)` on the `n²`-dimensional
/// two-slot space. Trace non-increasing: only the `|kk⟩` diagonal survives.
pub fn collective_diagonalizer(n: usize) -> Result<KrausChannel> {
    check_dim(n)?;
    let ops = (0..n)
        .map(|k| kron(&ComplexMatrix::projector(n, k), &ComplexMatrix::projector(n, k)))
        .collect();
    KrausChannel::trace_nonincreasing(ops, format!("E_dd({n})"))
}

/// `U_cn = Σ_k P_k ⊗ h^k`, so `|i⟩|j⟩ ↦ |i⟩|j + i mod n⟩`.
pub fn control_not(n: usize) -> Result<ComplexMatrix> {
    check_dim(n)?;
    let dim = n * n;
    Ok(ComplexMatrix::from_fn(dim, dim, |row, col| {
        let (i, j) = (col / n, col % n);
        if row == i * n + (j + i) % n {
            ONE
        } else {
            ZERO
        }
    }))
}

/// A classical state on the full character space: diagonal, with no weight
/// on the null symbol.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagonalDensity {
    alphabet: Alphabet,
    weights: ProbabilityVector,
}

impl DiagonalDensity {
    /// From weights over the observable characters.
    pub fn new(alphabet: Alphabet, observable: &ProbabilityVector) -> Result<Self> {
        if observable.len() != alphabet.size() {
            return Err(Error::Dimension(format!(
                "{} weights for a {}-symbol alphabet",
                observable.len(),
                alphabet.size()
            )));
        }
        let mut full = Vec::with_capacity(alphabet.full_dim());
        full.push(0.0);
        full.extend_from_slice(observable.weights());
        Ok(Self { alphabet, weights: ProbabilityVector::new(full)? })
    }

    /// From weights over the full character space; the null entry must be exactly 0.
    pub fn from_full(alphabet: Alphabet, full: Vec<f64>) -> Result<Self> {
        if full.len() != alphabet.full_dim() {
            return Err(Error::Dimension(format!("{} weights for dimension {}", full.len(), alphabet.full_dim())));
        }
        if full[0] != 0.0 {
            return Err(Error::NotProbability(format!("null symbol carries weight {}", full[0])));
        }
        Ok(Self { alphabet, weights: ProbabilityVector::new(full)? })
    }

    pub fn alphabet(&self) -> Alphabet {
        self.alphabet
    }

    pub fn full_weights(&self) -> &[f64] {
        self.weights.weights()
    }

    pub fn observable_weights(&self) -> &[f64] {
        &self.weights.weights()[1..]
    }

    pub fn to_matrix(&self) -> ComplexMatrix {
        ComplexMatrix::from_diagonal(self.weights.weights())
    }
}

/// Splits one lineage into two perfectly correlated copies,
/// `p_ij = p_i δ_ij` over the observable characters.
pub fn split(rho: &DiagonalDensity) -> ProbabilityTensor {
    let p = ProbabilityVector::new(rho.observable_weights().to_vec())
        .expect("observable weights of a valid density form a probability vector");
    ProbabilityTensor::from_vector(&p)
        .split_at(SlotIndex::new(1))
        .expect("slot 1 exists in a one-slot tensor")
}

/// Splits slot `k` of an `s`-taxon tensor into slots `k` and `k+1`.
pub fn split_at(tensor: &ProbabilityTensor, k: SlotIndex) -> Result<ProbabilityTensor> {
    tensor.split_at(k)
}
