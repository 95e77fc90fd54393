use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Observable character sets.
///
/// Indices here run over the observable characters only. The null symbol used
/// as the splitting ancilla sits in front of them in the full character space,
/// so observable index `i` is full index `i + 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Alphabet {
    /// A, C, G, T, indexed 0..4 so that index `2k + l` carries the bit pair `(k, l)`.
    Dna,
    /// Two-state characters written `1` and `2`.
    Binary,
}

impl Alphabet {
    pub const fn size(self) -> usize {
        match self {
            Alphabet::Dna => 4,
            Alphabet::Binary => 2,
        }
    }

    /// Dimension of the character space including the null symbol.
    pub const fn full_dim(self) -> usize {
        self.size() + 1
    }

    pub const fn symbols(self) -> &'static [char] {
        match self {
            Alphabet::Dna => &['A', 'C', 'G', 'T'],
            Alphabet::Binary => &['1', '2'],
        }
    }

    pub fn symbol(self, index: usize) -> char {
        self.symbols()[index]
    }

    pub fn index_of(self, c: char) -> Result<usize> {
        let up = c.to_ascii_uppercase();
        self.symbols()
            .iter()
            .position(|&s| s == up)
            .ok_or_else(|| Error::AlphabetMismatch(format!("character {c:?} is not in the {self:?} alphabet")))
    }

    /// Picks the alphabet whose symbol set contains every character given.
    pub fn detect(chars: impl IntoIterator<Item = char>) -> Result<Self> {
        let mut dna = true;
        let mut binary = true;
        let mut any = false;
        for c in chars {
            any = true;
            dna &= Alphabet::Dna.index_of(c).is_ok();
            binary &= Alphabet::Binary.index_of(c).is_ok();
        }
        match (any, dna, binary) {
            (false, _, _) | (_, true, _) => Ok(Alphabet::Dna),
            (_, false, true) => Ok(Alphabet::Binary),
            _ => Err(Error::AlphabetMismatch("characters fit neither DNA nor binary alphabet".into())),
        }
    }
}
