//! Probability vectors and multi-taxon probability tensors.
//!
//! A tensor over `s` taxa stores `p[i_1, ..., i_s]` in mixed-radix order with
//! slot 1 as the most significant digit, the same order used for tensor
//! products of operators in [`crate::linalg`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const NEGATIVE_SLACK: f64 = 1e-14;
const MASS_TOL: f64 = 1e-12;

/// 1-based position of a tensor factor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SlotIndex(usize);

impl SlotIndex {
    pub const fn new(position: usize) -> Self {
        Self(position)
    }

    pub const fn position(self) -> usize {
        self.0
    }

    /// Zero-based axis.
    pub fn axis(self) -> usize {
        self.0 - 1
    }

    pub fn check(self, slots: usize) -> Result<Self> {
        if self.0 == 0 || self.0 > slots {
            Err(Error::InvalidSlot { slot: self.0, slots })
        } else {
            Ok(self)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityVector(Vec<f64>);

impl ProbabilityVector {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::NotProbability("empty vector".into()));
        }
        if let Some(w) = weights.iter().find(|w| !w.is_finite() || **w < -NEGATIVE_SLACK) {
            return Err(Error::NotProbability(format!("entry {w}")));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > MASS_TOL {
            return Err(Error::NotProbability(format!("mass {sum}")));
        }
        Ok(Self(weights))
    }

    pub fn uniform(n: usize) -> Self {
        Self(vec![1.0 / n as f64; n])
    }

    pub fn point_mass(n: usize, i: usize) -> Self {
        let mut w = vec![0.0; n];
        w[i] = 1.0;
        Self(w)
    }

    pub fn weights(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityTensor {
    taxa: usize,
    alphabet: usize,
    values: Vec<f64>,
}

impl ProbabilityTensor {
    pub fn new(taxa: usize, alphabet: usize, values: Vec<f64>) -> Result<Self> {
        if taxa == 0 || alphabet == 0 {
            return Err(Error::Dimension("tensor needs at least one slot and one symbol".into()));
        }
        let expect = alphabet.checked_pow(taxa as u32).ok_or_else(|| Error::Dimension("tensor too large".into()))?;
        if values.len() != expect {
            return Err(Error::Dimension(format!("{} values for {alphabet}^{taxa}", values.len())));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite() || **v < -NEGATIVE_SLACK) {
            return Err(Error::NotProbability(format!("tensor entry {v}")));
        }
        let mass: f64 = values.iter().sum();
        if (mass - 1.0).abs() > MASS_TOL {
            return Err(Error::NotProbability(format!("tensor mass {mass}")));
        }
        Ok(Self { taxa, alphabet, values })
    }

    pub fn from_vector(p: &ProbabilityVector) -> Self {
        Self { taxa: 1, alphabet: p.len(), values: p.weights().to_vec() }
    }

    pub fn taxa(&self) -> usize {
        self.taxa
    }

    pub fn alphabet(&self) -> usize {
        self.alphabet
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn total_mass(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn linear_index(&self, pattern: &[usize]) -> usize {
        debug_assert_eq!(pattern.len(), self.taxa);
        pattern.iter().fold(0, |acc, &i| acc * self.alphabet + i)
    }

    pub fn pattern(&self, mut linear: usize) -> Vec<usize> {
        let mut out = vec![0; self.taxa];
        for slot in (0..self.taxa).rev() {
            out[slot] = linear % self.alphabet;
            linear /= self.alphabet;
        }
        out
    }

    pub fn get(&self, pattern: &[usize]) -> f64 {
        self.values[self.linear_index(pattern)]
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        if self.taxa != other.taxa || self.alphabet != other.alphabet {
            return f64::INFINITY;
        }
        self.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    /// Strides of (left block, slot, right block) for a slot.
    fn split_dims(&self, slot: SlotIndex) -> (usize, usize) {
        let left = self.alphabet.pow(slot.axis() as u32);
        let right = self.alphabet.pow((self.taxa - slot.position()) as u32);
        (left, right)
    }

    /// Applies a column-stochastic matrix along one slot:
    /// `p'[.., i, ..] = Σ_j m[i][j] p[.., j, ..]`.
    pub fn apply_matrix(&self, slot: SlotIndex, m: &[Vec<f64>]) -> Result<Self> {
        slot.check(self.taxa)?;
        let n = self.alphabet;
        if m.len() != n || m.iter().any(|row| row.len() != n) {
            return Err(Error::Dimension(format!("matrix does not match alphabet of size {n}")));
        }
        let (left, right) = self.split_dims(slot);
        let mut out = vec![0.0; self.values.len()];
        for a in 0..left {
            for c in 0..right {
                for (i, row) in m.iter().enumerate() {
                    let mut acc = 0.0;
                    for (j, &w) in row.iter().enumerate() {
                        acc += w * self.values[(a * n + j) * right + c];
                    }
                    out[(a * n + i) * right + c] = acc;
                }
            }
        }
        Ok(Self { taxa: self.taxa, alphabet: n, values: out })
    }

    /// Duplicates slot `k` into slots `k` and `k+1`: `p'[.., i, j, ..] = p[.., i, ..] δ_ij`.
    pub fn split_at(&self, slot: SlotIndex) -> Result<Self> {
        slot.check(self.taxa)?;
        let n = self.alphabet;
        let (left, right) = self.split_dims(slot);
        let mut out = vec![0.0; self.values.len() * n];
        for a in 0..left {
            for i in 0..n {
                for c in 0..right {
                    let src = (a * n + i) * right + c;
                    let dst = ((a * n + i) * n + i) * right + c;
                    out[dst] = self.values[src];
                }
            }
        }
        Ok(Self { taxa: self.taxa + 1, alphabet: n, values: out })
    }

    /// Sums out one slot.
    pub fn marginalize(&self, slot: SlotIndex) -> Result<Self> {
        slot.check(self.taxa)?;
        if self.taxa == 1 {
            return Err(Error::Dimension("cannot marginalize the only slot".into()));
        }
        let n = self.alphabet;
        let (left, right) = self.split_dims(slot);
        let mut out = vec![0.0; left * right];
        for a in 0..left {
            for i in 0..n {
                for c in 0..right {
                    out[a * right + c] += self.values[(a * n + i) * right + c];
                }
            }
        }
        Ok(Self { taxa: self.taxa - 1, alphabet: n, values: out })
    }

    /// Reorders slots: output slot `k` holds input slot `perm[k]` (both 0-based).
    pub fn permute_slots(&self, perm: &[usize]) -> Result<Self> {
        let mut seen = vec![false; self.taxa];
        if perm.len() != self.taxa || perm.iter().any(|&p| p >= self.taxa || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::Dimension(format!("{perm:?} is not a permutation of {} slots", self.taxa)));
        }
        let mut out = vec![0.0; self.values.len()];
        let mut src = vec![0; self.taxa];
        for (linear, slot) in out.iter_mut().enumerate() {
            let pat = self.pattern(linear);
            for (k, &p) in perm.iter().enumerate() {
                src[p] = pat[k];
            }
            *slot = self.values[self.linear_index(&src)];
        }
        Ok(Self { taxa: self.taxa, alphabet: self.alphabet, values: out })
    }
}
