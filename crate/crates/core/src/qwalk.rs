//! Discrete-time quantum walks on the cyclic character space.
//!
//! The coin has basis `|+⟩, |−⟩` (indices 0 and 1); a step tosses the coin
//! with `U` and then shifts the walker by `+1` or `−1` modulo `N` depending
//! on the coin.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::{kron, partial_trace, ComplexMatrix, STRUCTURAL_TOL};
use crate::tensor::{ProbabilityTensor, ProbabilityVector, SlotIndex};

/// Steps per edge unless configured otherwise.
pub const DEFAULT_STEPS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoinLabel {
    Plus,
    Minus,
}

impl CoinLabel {
    pub fn index(self) -> usize {
        match self {
            CoinLabel::Plus => 0,
            CoinLabel::Minus => 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct WalkConfig {
    coin_unitary: ComplexMatrix,
    coin_state: ComplexMatrix,
    steps: usize,
    walker_dim: usize,
}

impl WalkConfig {
    pub fn new(coin_unitary: ComplexMatrix, coin_state: ComplexMatrix, steps: usize, walker_dim: usize) -> Result<Self> {
        if coin_unitary.rows() != 2 || coin_unitary.cols() != 2 {
            return Err(Error::Dimension("coin unitary must be 2x2".into()));
        }
        let defect = coin_unitary.unitarity_defect();
        if defect > STRUCTURAL_TOL {
            return Err(Error::NotUnitary(defect));
        }
        if coin_state.rows() != 2
            || !coin_state.is_hermitian(STRUCTURAL_TOL)
            || (coin_state.trace().re - 1.0).abs() > STRUCTURAL_TOL
            || coin_state.diagonal().iter().any(|&d| d < -STRUCTURAL_TOL)
            || coin_state[(0, 0)].re * coin_state[(1, 1)].re - coin_state[(0, 1)].norm_sqr() < -STRUCTURAL_TOL
        {
            return Err(Error::NotProbability("coin state is not a 2x2 density matrix".into()));
        }
        if steps == 0 {
            return Err(Error::InvalidParams("a walk needs at least one step".into()));
        }
        if walker_dim < 2 {
            return Err(Error::DimensionTooSmall(walker_dim));
        }
        Ok(Self { coin_unitary, coin_state, steps, walker_dim })
    }

    /// Coin prepared in `|+⟩` or `|−⟩`.
    pub fn pure(coin_unitary: ComplexMatrix, coin: CoinLabel, steps: usize, walker_dim: usize) -> Result<Self> {
        Self::new(coin_unitary, ComplexMatrix::projector(2, coin.index()), steps, walker_dim)
    }

    pub fn coin_unitary(&self) -> &ComplexMatrix {
        &self.coin_unitary
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn walker_dim(&self) -> usize {
        self.walker_dim
    }
}

/// Balanced real coin with entries `±1/√2`.
pub fn hadamard_coin() -> ComplexMatrix {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    ComplexMatrix::from_real(2, 2, &[s, s, s, -s]).expect("2x2")
}

/// `V = (P_+ ⊗ h + P_− ⊗ h^†)(U ⊗ 1)` on the `2N`-dimensional coin ⊗ walker space.
pub fn walk_unitary(cfg: &WalkConfig) -> ComplexMatrix {
    let n = cfg.walker_dim;
    let h = ComplexMatrix::shift(n);
    let conditional = &kron(&ComplexMatrix::projector(2, 0), &h) + &kron(&ComplexMatrix::projector(2, 1), &h.adjoint());
    &conditional * &kron(&cfg.coin_unitary, &ComplexMatrix::identity(n))
}

/// `ρ ↦ Tr_c V^k (ρ_c ⊗ ρ) V^{†k}`.
pub fn qw_step_map(cfg: &WalkConfig, rho: &ComplexMatrix) -> Result<ComplexMatrix> {
    let n = cfg.walker_dim;
    if !rho.is_square() || rho.rows() != n {
        return Err(Error::Dimension(format!("walker of dimension {n} given a {}x{} state", rho.rows(), rho.cols())));
    }
    let v = walk_unitary(cfg);
    let mut vk = ComplexMatrix::identity(2 * n);
    for _ in 0..cfg.steps {
        vk = &v * &vk;
    }
    let joint = kron(&cfg.coin_state, rho);
    let evolved = &(&vk * &joint) * &vk.adjoint();
    partial_trace(&evolved, &[2, n], SlotIndex::new(1))
}

/// Column-stochastic transition matrix of the walk followed by decoherence:
/// `T[y][x]` is the weight that a walker starting at `x` ends at `y`.
pub fn walk_transition(cfg: &WalkConfig) -> Result<Vec<Vec<f64>>> {
    let n = cfg.walker_dim;
    let mut t = vec![vec![0.0; n]; n];
    for x in 0..n {
        let out = qw_step_map(cfg, &ComplexMatrix::projector(n, x))?;
        for (y, row) in t.iter_mut().enumerate() {
            row[x] = out[(y, y)].re;
        }
    }
    Ok(t)
}

fn shift_of(coin: usize) -> isize {
    if coin == 0 {
        1
    } else {
        -1
    }
}

/// Two-step shift distribution for a general coin state:
/// `q_d = Σ_{c1,c2 : s(c1)+s(c2) ≡ d} |U_{c2 c1}|² ⟨c1|U ρ_c U^†|c1⟩`.
fn two_step_distribution(u: &ComplexMatrix, coin_state: &ComplexMatrix, n: usize) -> Vec<f64> {
    let tossed = &(u * coin_state) * &u.adjoint();
    let mut q = vec![0.0; n];
    for c1 in 0..2 {
        for c2 in 0..2 {
            let d = (shift_of(c1) + shift_of(c2)).rem_euclid(n as isize) as usize;
            q[d] += u[(c2, c1)].norm_sqr() * tossed[(c1, c1)].re;
        }
    }
    q
}

/// Distribution of the walker's net shift (mod `n`) after two steps from a
/// coin prepared in `|c⟩`. With `M = U ∘ U*`,
/// `q_d = Σ_{c1,c2 : s(c1)+s(c2) ≡ d} M_{c2 c1} M_{c1 c}`.
pub fn coin_distribution(u: &ComplexMatrix, c: CoinLabel, n: usize) -> Result<ProbabilityVector> {
    if u.rows() != 2 || u.cols() != 2 {
        return Err(Error::Dimension("coin unitary must be 2x2".into()));
    }
    let defect = u.unitarity_defect();
    if defect > STRUCTURAL_TOL {
        return Err(Error::NotUnitary(defect));
    }
    if n < 2 {
        return Err(Error::DimensionTooSmall(n));
    }
    let q = two_step_distribution(u, &ComplexMatrix::projector(2, c.index()), n);
    ProbabilityVector::new(q)
}

/// Shift distribution of a configured walk. Two-step walks use the closed
/// form; other step counts read it off the simulated walk of a point mass.
pub fn shift_distribution(cfg: &WalkConfig) -> Result<ProbabilityVector> {
    let n = cfg.walker_dim;
    if cfg.steps == DEFAULT_STEPS {
        return ProbabilityVector::new(two_step_distribution(&cfg.coin_unitary, &cfg.coin_state, n));
    }
    let t = walk_transition(cfg)?;
    ProbabilityVector::new((0..n).map(|d| t[d][0]).collect())
}

/// The two-entry coin weights `Σ_γ M_{γ,a−γ} M_{γ−a,c}` with all indices
/// taken mod 2. Entry 0 is the mass of the two straight paths (net shift
/// `±2`) and entry 1 the mass of the turning paths (net shift 0).
pub fn lumped_coin_weights(u: &ComplexMatrix, c: CoinLabel) -> [f64; 2] {
    let m = u.squared_moduli();
    let mut q = [0.0; 2];
    for (a, qa) in q.iter_mut().enumerate() {
        for g in 0..2 {
            *qa += m[g][(a + g) % 2] * m[(g + a) % 2][c.index()];
        }
    }
    q
}

/// Applies the decohered walk independently to each slot of a tensor.
pub fn evolve_taxa_qw(tensor: &ProbabilityTensor, cfgs: &[WalkConfig]) -> Result<ProbabilityTensor> {
    if cfgs.len() != tensor.taxa() {
        return Err(Error::Dimension(format!("{} walk configs for {} taxa", cfgs.len(), tensor.taxa())));
    }
    let mut out = tensor.clone();
    for (k, cfg) in cfgs.iter().enumerate() {
        if cfg.walker_dim != tensor.alphabet() {
            return Err(Error::Dimension(format!(
                "walker dimension {} on an alphabet of {}",
                cfg.walker_dim,
                tensor.alphabet()
            )));
        }
        out = out.apply_matrix(SlotIndex::new(k + 1), &walk_transition(cfg)?)?;
    }
    Ok(out)
}

/// `p̃_mn = Σ_ab p_{m−a, n−b} q_a q_b`, indices mod the alphabet size.
pub fn closed_form_two_taxon(p: &ProbabilityTensor, q: &ProbabilityVector) -> Result<ProbabilityTensor> {
    let n = p.alphabet();
    if p.taxa() != 2 || q.len() != n {
        return Err(Error::Dimension(format!(
            "closed form needs a two-taxon tensor and a length-{n} shift distribution"
        )));
    }
    let q = q.weights();
    let mut out = vec![0.0; n * n];
    for m in 0..n {
        for nn in 0..n {
            let mut acc = 0.0;
            for a in 0..n {
                for b in 0..n {
                    acc += p.get(&[(m + n - a) % n, (nn + n - b) % n]) * q[a] * q[b];
                }
            }
            out[m * n + nn] = acc;
        }
    }
    ProbabilityTensor::new(2, n, out)
}

/// Coin unitary `[[cos θ, e^{iφ} sin θ], [sin θ, −e^{iφ} cos θ]]`.
pub fn parametrized_coin(theta: f64, phi: f64) -> ComplexMatrix {
    let (s, c) = theta.sin_cos();
    let e = Complex64::from_polar(1.0, phi);
    ComplexMatrix::from_vec(2, 2, vec![Complex64::new(c, 0.0), e * s, Complex64::new(s, 0.0), -e * c]).expect("2x2")
}
