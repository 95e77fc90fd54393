use thiserror::Error;

/// Errors raised anywhere in the library.
///
/// Variants are grouped by the stage that produces them; [`Error::category`]
/// collapses them into the coarse classes the command-line front end maps
/// onto exit codes.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid slot {slot} for a {slots}-slot tensor")]
    InvalidSlot { slot: usize, slots: usize },

    #[error("dimension must be at least 2, got {0}")]
    DimensionTooSmall(usize),

    #[error("not a probability vector: {0}")]
    NotProbability(String),

    #[error("invalid model parameters: {0}")]
    InvalidParams(String),

    #[error("matrix is not unistochastic: best residual {residual:.3e} after {starts} starts")]
    NotUnistochastic { residual: f64, starts: usize },

    #[error("operator is not unitary (max deviation {0:.3e})")]
    NotUnitary(f64),

    #[error("alphabet mismatch: {0}")]
    AlphabetMismatch(String),

    #[error("newick syntax error at byte {offset}: {message}")]
    NewickSyntax { offset: usize, message: String },

    #[error("node with {children} children at byte {offset}; only binary trees are supported")]
    NonBinary { offset: usize, children: usize },

    #[error("duplicate leaf label `{0}`")]
    DuplicateLabel(String),

    #[error("fasta: {0}")]
    Fasta(String),

    #[error("taxa mismatch: {0}")]
    TaxaMismatch(String),

    #[error("zero likelihood at site {site}")]
    ZeroSiteLikelihood { site: usize },

    #[error("dead lineage: likelihood operator has zero trace")]
    DeadLineage,

    #[error("normalization p_pi vanished")]
    ZeroNormalization,

    #[error("optimizer degenerate: {0}")]
    Degenerate(String),
}

/// Coarse error classes; stable across releases.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Parse,
    Model,
    Taxa,
    ZeroLikelihood,
    Optimizer,
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::NewickSyntax { .. }
            | Error::NonBinary { .. }
            | Error::DuplicateLabel(_)
            | Error::Fasta(_) => ErrorCategory::Parse,
            Error::TaxaMismatch(_) => ErrorCategory::Taxa,
            Error::ZeroSiteLikelihood { .. } | Error::DeadLineage => ErrorCategory::ZeroLikelihood,
            Error::Degenerate(_) => ErrorCategory::Optimizer,
            _ => ErrorCategory::Model,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
