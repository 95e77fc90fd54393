//! Quantum-circuit simulation and likelihood computation for phylogenetic
//! substitution models.
//!
//! Character states live on the diagonal of density matrices. Lineage
//! splitting, Markov evolution and pruning of likelihoods are expressed as
//! quantum channels, and each is checked against the classical computation
//! it reproduces.

pub mod alphabet;
pub mod channels;
pub mod engine;
pub mod error;
pub mod linalg;
pub mod models;
pub mod optimize;
pub mod qwalk;
pub mod random;
pub mod tensor;
pub mod treeio;
pub mod verify;

pub use alphabet::Alphabet;
pub use error::{Error, ErrorCategory, Result};
pub use linalg::ComplexMatrix;
pub use models::{Family, MarkovMatrix, ModelParams};
pub use tensor::{ProbabilityTensor, ProbabilityVector, SlotIndex};
pub use treeio::{Alignment, PhyloTree};
