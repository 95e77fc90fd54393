//! Cross-representation property suites.
//!
//! Every suite draws from a fixed seed, so reports are reproducible.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::alphabet::Alphabet;
use crate::channels::{apply_channel, control_not, diagonalizer, diagonalizer_fourier, split, DiagonalDensity};
use crate::engine::{simulate_tree, EngineTag, TreeEvaluator};
use crate::error::Result;
use crate::linalg::{adjoint_action, hadamard_product, kron, ComplexMatrix};
use crate::models::{
    binary_channel, binary_dilation, felsenstein_channel, group_channel, klein_generator, klein_unitary, markov,
    qw_dilation, weights, Family, ModelParams,
};
use crate::qwalk::{closed_form_two_taxon, coin_distribution, evolve_taxa_qw, hadamard_coin, CoinLabel, WalkConfig};
use crate::random;
use crate::tensor::ProbabilityVector;
use crate::treeio::{EdgeModel, PhyloTree, TreeBuilder};

const SEED: u64 = 0x5eed_0f_7e57;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    #[default]
    Default,
    Deep,
}

/// Test hook: deliberately corrupts computed matrices before they are
/// compared, so the suites can be shown to fail.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Perturbation {
    /// Added to `M[0][0]` of every Markov matrix the model suites inspect.
    pub markov_eps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteResult {
    pub name: &'static str,
    pub cases: usize,
    pub max_deviation: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl SuiteResult {
    fn new(name: &'static str, cases: usize, max_deviation: f64, tolerance: f64) -> Self {
        // NaN deviations fail
        let passed = max_deviation < tolerance;
        Self { name, cases, max_deviation, tolerance, passed }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub level: Level,
    pub suites: Vec<SuiteResult>,
    pub passed: bool,
}

impl VerifyReport {
    pub fn failed(&self) -> impl Iterator<Item = &SuiteResult> {
        self.suites.iter().filter(|s| !s.passed)
    }
}

pub fn run(level: Level, perturb: Perturbation) -> Result<VerifyReport> {
    let suites = vec![
        split_suite()?,
        model_identity(perturb)?,
        model_stochasticity(perturb)?,
        dilation_channel()?,
        dilation_unitarity()?,
        klein_generators()?,
        diagonalizer_fourier_suite()?,
        qwalk_closed_form()?,
        coin_distribution_mass()?,
        coin_distribution_sign()?,
        felsenstein_uniform(perturb)?,
        pruning_equivalence(level)?,
        simulation_duality()?,
    ];
    let passed = suites.iter().all(|s| s.passed);
    Ok(VerifyReport { level, suites, passed })
}

fn rng(tag: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(SEED ^ tag.wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

fn perturbed(params: &ModelParams, perturb: Perturbation) -> Result<Vec<Vec<f64>>> {
    let mut rows = markov(params)?.rows().to_vec();
    rows[0][0] += perturb.markov_eps;
    Ok(rows)
}

fn max_diff(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter().flatten().zip(b.iter().flatten()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn split_suite() -> Result<SuiteResult> {
    let mut rng = rng(1);
    let mut worst: f64 = 0.0;
    let cases = 200;
    for case in 0..cases {
        let alphabet = if case % 2 == 0 { Alphabet::Dna } else { Alphabet::Binary };
        let n = alphabet.full_dim();
        let p = random::random_probability(&mut rng, alphabet.size());
        let rho = DiagonalDensity::new(alphabet, &p)?;
        let full = adjoint_action(&control_not(n)?, &kron(&rho.to_matrix(), &ComplexMatrix::projector(n, 0)))?;
        let t = split(&rho);
        for row in 0..n * n {
            for col in 0..n * n {
                let expect = if row == col && row / n == row % n && row / n > 0 {
                    let i = row / n - 1;
                    worst = worst.max((t.get(&[i, i]) - p.weights()[i]).abs());
                    p.weights()[i]
                } else {
                    0.0
                };
                worst = worst.max((full[(row, col)] - expect).norm());
            }
        }
        for i in 0..alphabet.size() {
            for j in 0..alphabet.size() {
                let idx = (i + 1) * n + (j + 1);
                worst = worst.max((full[(idx, idx)].re - t.get(&[i, j])).abs());
            }
        }
    }
    Ok(SuiteResult::new("split", cases, worst, 1e-13))
}

/// `Σ_g w_g (U_g ∘ U_g*)` for the group-based and binary models; the
/// Kraus-induced matrix for F.
fn hadamard_mixture(params: &ModelParams) -> Result<Vec<Vec<f64>>> {
    let mixture = |terms: Vec<(f64, ComplexMatrix)>| -> Result<Vec<Vec<f64>>> {
        let n = terms[0].1.rows();
        let mut out = vec![vec![0.0; n]; n];
        for (w, u) in terms {
            let h = hadamard_product(&u, &u.adjoint().transpose())?;
            for (i, row) in out.iter_mut().enumerate() {
                for (j, v) in row.iter_mut().enumerate() {
                    *v += w * h[(i, j)].re;
                }
            }
        }
        Ok(out)
    };
    match params {
        ModelParams::Binary { a } => {
            mixture(vec![(1.0 - a, ComplexMatrix::identity(2)), (*a, ComplexMatrix::pauli_x())])
        }
        ModelParams::Felsenstein { .. } => Ok(felsenstein_channel(params)?.kraus().induced_markov()),
        _ => {
            let w = weights(params)?;
            let mut terms = Vec::new();
            for k in 0..2 {
                for l in 0..2 {
                    terms.push((w.get(k, l), klein_unitary(k, l)));
                }
            }
            mixture(terms)
        }
    }
}

fn model_identity(perturb: Perturbation) -> Result<SuiteResult> {
    let mut rng = rng(2);
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for family in Family::ALL {
        for _ in 0..100 {
            let params = random::random_params(&mut rng, family);
            worst = worst.max(max_diff(&perturbed(&params, perturb)?, &hadamard_mixture(&params)?));
            cases += 1;
        }
    }
    Ok(SuiteResult::new("model-identity", cases, worst, 1e-14))
}

fn model_stochasticity(perturb: Perturbation) -> Result<SuiteResult> {
    let mut rng = rng(3);
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for family in Family::ALL {
        for _ in 0..100 {
            let m = perturbed(&random::random_params(&mut rng, family), perturb)?;
            let n = m.len();
            for i in 0..n {
                worst = worst.max(((0..n).map(|r| m[r][i]).sum::<f64>() - 1.0).abs());
                if family.is_group_based() {
                    worst = worst.max((m[i].iter().sum::<f64>() - 1.0).abs());
                }
            }
            cases += 1;
        }
    }
    Ok(SuiteResult::new("model-stochasticity", cases, worst, 1e-12))
}

fn dilation_channel() -> Result<SuiteResult> {
    let mut rng = rng(4);
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for family in [Family::Jc, Family::K2, Family::K3, Family::B] {
        for _ in 0..50 {
            let params = random::random_params(&mut rng, family);
            let (dilation, channel) = match params {
                // the binary dilation with coin weight 1 − a realizes flip weight a
                ModelParams::Binary { a } => (binary_dilation(1.0 - a)?, binary_channel(a)?),
                _ => (qw_dilation(&params)?, group_channel(&params)?),
            };
            let n = channel.dim();
            for _ in 0..20 {
                let rho = random::random_density(&mut rng, n);
                worst = worst.max(dilation.apply(&rho)?.max_abs_diff(&apply_channel(&channel, &rho)?));
                cases += 1;
            }
        }
    }
    Ok(SuiteResult::new("dilation-channel", cases, worst, 1e-12))
}

fn dilation_unitarity() -> Result<SuiteResult> {
    let mut rng = rng(5);
    let mut worst: f64 = 0.0;
    let cases = 100;
    for _ in 0..cases {
        worst = worst.max(binary_dilation(rng.random_range(0.0..=1.0))?.unitary().unitarity_defect());
    }
    Ok(SuiteResult::new("dilation-unitarity", cases, worst, 1e-14))
}

fn klein_generators() -> Result<SuiteResult> {
    let mut worst: f64 = 0.0;
    for k in 0..2 {
        for l in 0..2 {
            let exp = klein_generator(k, l).scale(num_complex::Complex64::i()).expm()?;
            worst = worst.max(exp.max_abs_diff(&klein_unitary(k, l)));
        }
    }
    Ok(SuiteResult::new("klein-generator", 4, worst, 1e-10))
}

fn diagonalizer_fourier_suite() -> Result<SuiteResult> {
    let mut rng = rng(6);
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for n in [2, 4, 5] {
        let (ed, ef) = (diagonalizer(n)?, diagonalizer_fourier(n)?);
        for _ in 0..50 {
            let x = random::random_matrix(&mut rng, n);
            worst = worst.max(apply_channel(&ed, &x)?.max_abs_diff(&apply_channel(&ef, &x)?));
            cases += 1;
        }
    }
    Ok(SuiteResult::new("diagonalizer-fourier", cases, worst, 1e-12))
}

fn random_coin(rng: &mut ChaCha8Rng) -> (ComplexMatrix, CoinLabel) {
    let u = if rng.random_bool(0.5) { hadamard_coin() } else { random::random_unitary(rng, 2) };
    let c = if rng.random_bool(0.5) { CoinLabel::Plus } else { CoinLabel::Minus };
    (u, c)
}

fn qwalk_closed_form() -> Result<SuiteResult> {
    let mut rng = rng(7);
    let mut worst: f64 = 0.0;
    let cases = 100;
    for _ in 0..cases {
        let (u, c) = random_coin(&mut rng);
        let p = random::random_tensor(&mut rng, 2, 4);
        let cfg = WalkConfig::pure(u.clone(), c, crate::qwalk::DEFAULT_STEPS, 4)?;
        let sim = evolve_taxa_qw(&p, &[cfg.clone(), cfg])?;
        let closed = closed_form_two_taxon(&p, &coin_distribution(&u, c, 4)?)?;
        worst = worst.max(sim.max_abs_diff(&closed));
    }
    Ok(SuiteResult::new("qwalk-closed-form", cases, worst, 1e-12))
}

fn coin_distributions() -> Result<Vec<ProbabilityVector>> {
    let mut rng = rng(8);
    let mut out = Vec::new();
    for _ in 0..100 {
        let (u, c) = random_coin(&mut rng);
        for n in 2..=6 {
            out.push(coin_distribution(&u, c, n)?);
        }
    }
    Ok(out)
}

fn coin_distribution_mass() -> Result<SuiteResult> {
    let dists = coin_distributions()?;
    let worst = dists.iter().map(|q| (q.weights().iter().sum::<f64>() - 1.0).abs()).fold(0.0, f64::max);
    Ok(SuiteResult::new("coin-distribution-mass", dists.len(), worst, 1e-12))
}

fn coin_distribution_sign() -> Result<SuiteResult> {
    let dists = coin_distributions()?;
    let worst = dists.iter().flat_map(|q| q.weights().iter()).map(|&w| (-w).max(0.0)).fold(0.0, f64::max);
    // entries may dip below zero by rounding, never by more than 1e-14
    Ok(SuiteResult::new("coin-distribution-sign", dists.len(), worst, 1e-14 + f64::MIN_POSITIVE))
}

fn felsenstein_uniform(perturb: Perturbation) -> Result<SuiteResult> {
    let mut worst: f64 = 0.0;
    let cases = 50;
    for k in 0..cases {
        let a = k as f64 / (cases - 1) as f64;
        let f = perturbed(&ModelParams::Felsenstein { a, pi: [0.25; 4] }, perturb)?;
        let jc = markov(&ModelParams::Jc { a: (1.0 - a) / 4.0 })?;
        worst = worst.max(max_diff(&f, jc.rows()));
    }
    Ok(SuiteResult::new("felsenstein-uniform", cases, worst, 1e-14))
}

fn pruning_equivalence(level: Level) -> Result<SuiteResult> {
    let mut rng = rng(9);
    let (instances, max_leaves) = match level {
        Level::Default => (100, 6),
        Level::Deep => (400, 8),
    };
    let mut worst: f64 = 0.0;
    for case in 0..instances {
        let family = Family::ALL[case % Family::ALL.len()];
        let leaves = if level == Level::Deep && case % 2 == 0 { 8 } else { rng.random_range(2..=max_leaves) };
        let tree = random::random_tree(&mut rng, leaves, family);
        let ev = TreeEvaluator::new(&tree)?;
        let n = family.alphabet().size();
        let pattern: Vec<usize> = (0..leaves).map(|_| rng.random_range(0..n)).collect();
        let c = ev.pattern_likelihood(&pattern, EngineTag::Classical)?.likelihood.ln();
        let q = ev.pattern_likelihood(&pattern, EngineTag::Quantum)?.likelihood.ln();
        let d = ev.pattern_likelihood(&pattern, EngineTag::Dual)?.likelihood.ln();
        worst = worst.max((c - q).abs()).max((c - d).abs());
    }
    Ok(SuiteResult::new("pruning-equivalence", instances, worst, 1e-8))
}

/// `((A,B),(C,D))` with independent random parameters on all six edges.
pub fn balanced_quartet<R: Rng + ?Sized>(rng: &mut R, family: Family) -> Result<PhyloTree> {
    let shared_pi = match random::random_params(rng, Family::F) {
        ModelParams::Felsenstein { pi, .. } => pi,
        _ => unreachable!(),
    };
    let edge = |rng: &mut R| {
        EdgeModel::from_params(match random::random_params(rng, family) {
            ModelParams::Felsenstein { a, .. } => ModelParams::Felsenstein { a, pi: shared_pi },
            p => p,
        })
    };
    let mut b = TreeBuilder::new();
    let root = b.add_node(None);
    let left = b.add_node(None);
    let right = b.add_node(None);
    b.attach(root, left, edge(rng));
    b.attach(root, right, edge(rng));
    for (parent, names) in [(left, ["A", "B"]), (right, ["C", "D"])] {
        for name in names {
            let leaf = b.add_leaf(name);
            b.attach(parent, leaf, edge(rng));
        }
    }
    let alphabet = family.alphabet();
    let root_pi = if family == Family::F {
        ProbabilityVector::new(shared_pi.to_vec())?
    } else {
        ProbabilityVector::uniform(alphabet.size())
    };
    b.finish(root, alphabet, root_pi)
}

fn simulation_duality() -> Result<SuiteResult> {
    let mut rng = rng(10);
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for family in Family::ALL {
        for _ in 0..4 {
            let tree = balanced_quartet(&mut rng, family)?;
            let sim = simulate_tree(&tree)?;
            let ev = TreeEvaluator::new(&tree)?;
            let mut total = 0.0;
            for (linear, p) in sim.values().iter().enumerate() {
                let l = ev.pattern_likelihood(&sim.pattern(linear), EngineTag::Quantum)?.likelihood;
                worst = worst.max((l - p).abs());
                total += l;
            }
            worst = worst.max((total - 1.0).abs());
            cases += 1;
        }
    }
    Ok(SuiteResult::new("simulation-duality", cases, worst, 1e-10))
}
