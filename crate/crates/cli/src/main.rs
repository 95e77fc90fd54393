use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use qphylo::engine::{alignment_loglik_with, sample_alignment, simulate_tree, EngineTag, SiteLikelihoodReport, TreeEvaluator};
use qphylo::optimize::{maximize_loglik, OptimizationProblem, Sharing, DEFAULT_DIAMETER_TOL, DEFAULT_MAX_EVALUATIONS};
use qphylo::treeio::{parse_fasta, parse_newick};
use qphylo::verify::{self, Level, Perturbation};
use qphylo::{Alignment, ErrorCategory, Family, PhyloTree};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

#[derive(Parser)]
#[command(name = "qphylo", version, about = "Phylogenetic likelihoods through classical, quantum-channel and dual pruning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample an alignment from a tree and write the exact pattern distribution.
    Simulate(SimulateArgs),
    /// Per-site and total log-likelihood of an alignment on a tree.
    Likelihood(LikelihoodArgs),
    /// Maximum-likelihood model weights on a fixed topology.
    Optimize(OptimizeArgs),
    /// Run the cross-representation property suites.
    Verify(VerifyArgs),
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    tree: PathBuf,
    #[arg(long)]
    sites: usize,
    #[arg(long)]
    seed: u64,
    /// FASTA output.
    #[arg(long)]
    out: PathBuf,
    /// Pattern-distribution document; defaults to `<out>.tensor.json`.
    #[arg(long)]
    tensor_out: Option<PathBuf>,
}

#[derive(Args)]
struct LikelihoodArgs {
    #[arg(long)]
    tree: PathBuf,
    #[arg(long)]
    alignment: PathBuf,
    #[arg(long, default_value = "classical")]
    engine: EngineChoice,
    /// Report path; the report goes to standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct OptimizeArgs {
    #[arg(long)]
    tree: PathBuf,
    #[arg(long)]
    alignment: PathBuf,
    #[arg(long)]
    family: Family,
    #[arg(long, default_value = "classical")]
    engine: EngineTag,
    #[arg(long)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = SharingArg::Shared)]
    sharing: SharingArg,
    /// Hold a weight fixed, e.g. `--fix b=0.05`; repeatable.
    #[arg(long, value_name = "NAME=VALUE")]
    fix: Vec<String>,
    #[arg(long, default_value_t = DEFAULT_MAX_EVALUATIONS)]
    max_evaluations: usize,
    #[arg(long, default_value_t = DEFAULT_DIAMETER_TOL)]
    diameter_tol: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, value_enum, default_value_t = LevelArg::Default)]
    level: LevelArg,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, hide = true, default_value_t = 0.0)]
    perturb_markov: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum SharingArg {
    Shared,
    PerEdge,
}

#[derive(Clone, Copy, ValueEnum)]
enum LevelArg {
    Default,
    Deep,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum EngineChoice {
    One(EngineTag),
    All,
}

impl FromStr for EngineChoice {
    type Err = qphylo::Error;
    fn from_str(s: &str) -> qphylo::Result<Self> {
        if s.eq_ignore_ascii_case("all") {
            Ok(EngineChoice::All)
        } else {
            s.parse().map(EngineChoice::One)
        }
    }
}

/// Failure carrying its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Self { code, message: message.into() }
    }
}

impl From<qphylo::Error> for Failure {
    fn from(e: qphylo::Error) -> Self {
        let code = match e.category() {
            ErrorCategory::Parse => 2,
            ErrorCategory::Model => 3,
            ErrorCategory::Taxa => 4,
            ErrorCategory::ZeroLikelihood => 5,
            ErrorCategory::Optimizer => 6,
        };
        Failure::new(code, e.to_string())
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

type CmdResult = Result<(), Failure>;

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::new(2, format!("cannot read {}: {e}", path.display())))
}

fn write(path: &Path, text: &str) -> CmdResult {
    fs::write(path, text).map_err(|e| Failure::new(2, format!("cannot write {}: {e}", path.display())))
}

fn json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("reports serialize");
    s.push('\n');
    s
}

/// Writes the document to `out`, or to standard output when there is none.
/// Returns whether a summary should follow on standard output.
fn emit(out: Option<&Path>, document: &str) -> Result<bool, Failure> {
    match out {
        Some(path) => write(path, document).map(|_| true),
        None => {
            print!("{document}");
            Ok(false)
        }
    }
}

fn load_tree(path: &Path) -> Result<PhyloTree, Failure> {
    Ok(parse_newick(&read(path)?)?)
}

fn load_alignment(path: &Path) -> Result<Alignment, Failure> {
    Ok(parse_fasta(&read(path)?)?)
}

#[derive(Serialize)]
struct PatternProbability {
    pattern: String,
    probability: f64,
}

#[derive(Serialize)]
struct TensorDocument {
    alphabet: String,
    taxa: Vec<String>,
    total_mass: f64,
    patterns: Vec<PatternProbability>,
}

fn simulate(args: SimulateArgs) -> CmdResult {
    let tree = load_tree(&args.tree)?;
    let tensor = simulate_tree(&tree)?;
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let aln = sample_alignment(&tree, args.sites, &mut rng)?;
    let alphabet = tree.alphabet();
    let doc = TensorDocument {
        alphabet: alphabet.symbols().iter().collect(),
        taxa: tree.leaf_labels().iter().map(|s| s.to_string()).collect(),
        total_mass: tensor.total_mass(),
        patterns: (0..tensor.values().len())
            .map(|i| PatternProbability {
                pattern: tensor.pattern(i).into_iter().map(|c| alphabet.symbol(c)).collect(),
                probability: tensor.values()[i],
            })
            .collect(),
    };
    let tensor_out = args.tensor_out.unwrap_or_else(|| {
        let mut name = args.out.clone().into_os_string();
        name.push(".tensor.json");
        PathBuf::from(name)
    });
    write(&args.out, &aln.to_fasta())?;
    write(&tensor_out, &json(&doc))?;
    println!(
        "simulated {} sites for {} taxa -> {} (pattern distribution -> {})",
        args.sites,
        tree.leaf_count(),
        args.out.display(),
        tensor_out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct Deviation {
    engines: [EngineTag; 2],
    max_site_log_deviation: f64,
    total_log_deviation: f64,
}

#[derive(Serialize)]
struct AllEnginesReport {
    reports: Vec<SiteLikelihoodReport>,
    deviations: Vec<Deviation>,
    max_deviation: f64,
}

fn likelihood(args: LikelihoodArgs) -> CmdResult {
    let tree = load_tree(&args.tree)?;
    let aln = load_alignment(&args.alignment)?;
    let evaluator = TreeEvaluator::new(&tree)?;
    match args.engine {
        EngineChoice::One(engine) => {
            let report = alignment_loglik_with(&evaluator, &aln, engine)?;
            if emit(args.out.as_deref(), &json(&report))? {
                println!("{engine}: log-likelihood {} over {} sites", report.total_log_likelihood, aln.sites());
            }
        }
        EngineChoice::All => {
            let reports = EngineTag::ALL
                .iter()
                .map(|&e| alignment_loglik_with(&evaluator, &aln, e))
                .collect::<qphylo::Result<Vec<_>>>()?;
            let mut deviations = Vec::new();
            for i in 0..reports.len() {
                for j in i + 1..reports.len() {
                    let (a, b) = (&reports[i], &reports[j]);
                    let site = a.per_site.iter().zip(&b.per_site).map(|(x, y)| (x.log - y.log).abs()).fold(0.0, f64::max);
                    deviations.push(Deviation {
                        engines: [a.engine, b.engine],
                        max_site_log_deviation: site,
                        total_log_deviation: (a.total_log_likelihood - b.total_log_likelihood).abs(),
                    });
                }
            }
            let max_deviation = deviations
                .iter()
                .map(|d| d.max_site_log_deviation.max(d.total_log_deviation))
                .fold(0.0, f64::max);
            let doc = AllEnginesReport { reports, deviations, max_deviation };
            if emit(args.out.as_deref(), &json(&doc))? {
                for r in &doc.reports {
                    println!("{}: log-likelihood {}", r.engine, r.total_log_likelihood);
                }
                println!("max cross-engine deviation {:e}", doc.max_deviation);
            }
        }
    }
    Ok(())
}

fn optimize(args: OptimizeArgs) -> CmdResult {
    let tree = load_tree(&args.tree)?;
    let aln = load_alignment(&args.alignment)?;
    let sharing = match args.sharing {
        SharingArg::Shared => Sharing::Shared,
        SharingArg::PerEdge => Sharing::PerEdge,
    };
    let mut problem = OptimizationProblem::new(&tree, &aln, args.family, args.engine, args.seed)
        .sharing(sharing)
        .max_evaluations(args.max_evaluations)
        .diameter_tol(args.diameter_tol);
    for spec in &args.fix {
        let (name, value) = spec
            .split_once('=')
            .ok_or_else(|| Failure::new(2, format!("--fix expects NAME=VALUE, got `{spec}`")))?;
        let value: f64 = value
            .trim()
            .parse()
            .map_err(|_| Failure::new(2, format!("--fix {name}: `{value}` is not a number")))?;
        problem = problem.fix(name.trim(), value)?;
    }
    let result = maximize_loglik(problem)?;
    if emit(args.out.as_deref(), &json(&result))? {
        println!(
            "{} ({}): log-likelihood {} at {:?} after {} evaluations{}",
            result.family,
            result.engine,
            result.log_likelihood,
            result.point,
            result.evaluations,
            if result.converged { "" } else { " (evaluation budget exhausted)" }
        );
    }
    Ok(())
}

fn run_verify(args: VerifyArgs) -> CmdResult {
    let level = match args.level {
        LevelArg::Default => Level::Default,
        LevelArg::Deep => Level::Deep,
    };
    let report = verify::run(level, Perturbation { markov_eps: args.perturb_markov })?;
    for s in &report.suites {
        println!(
            "{} {:<24} max deviation {:.3e} (tolerance {:.0e}, {} cases)",
            if s.passed { "ok  " } else { "FAIL" },
            s.name,
            s.max_deviation,
            s.tolerance,
            s.cases
        );
    }
    if let Some(out) = &args.out {
        write(out, &json(&report))?;
    }
    let failed: Vec<&str> = report.failed().map(|s| s.name).collect();
    if failed.is_empty() {
        println!("all {} suites passed", report.suites.len());
        Ok(())
    } else {
        Err(Failure::new(1, format!("failed suites: {}", failed.join(", "))))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Likelihood(a) => likelihood(a),
        Command::Optimize(a) => optimize(a),
        Command::Verify(a) => run_verify(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code)
        }
    }
}
