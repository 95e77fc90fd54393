use std::collections::HashSet;
use std::fmt::Write as _;

use super::PhyloTree;
use crate::alphabet::Alphabet;
use crate::error::{Error, Result};

/// Equal-length character rows over an observable alphabet.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Alignment {
    alphabet: Alphabet,
    taxa: Vec<String>,
    rows: Vec<Vec<u8>>,
}

impl Alignment {
    /// Rows hold observable indices.
    pub fn new(alphabet: Alphabet, taxa: Vec<String>, rows: Vec<Vec<u8>>) -> Result<Self> {
        if taxa.is_empty() || taxa.len() != rows.len() {
            return Err(Error::Fasta(format!("{} names for {} sequences", taxa.len(), rows.len())));
        }
        let mut seen = HashSet::new();
        if let Some(dup) = taxa.iter().find(|t| !seen.insert(t.as_str())) {
            return Err(Error::Fasta(format!("taxon `{dup}` appears twice")));
        }
        let sites = rows[0].len();
        if sites == 0 {
            return Err(Error::Fasta("sequences are empty".into()));
        }
        for (name, row) in taxa.iter().zip(&rows) {
            if row.len() != sites {
                return Err(Error::Fasta(format!("`{name}` has {} sites, expected {sites}", row.len())));
            }
            if row.iter().any(|&c| c as usize >= alphabet.size()) {
                return Err(Error::Fasta(format!("`{name}` holds an index outside the alphabet")));
            }
        }
        Ok(Self { alphabet, taxa, rows })
    }

    pub fn alphabet(&self) -> Alphabet {
        self.alphabet
    }

    pub fn taxa(&self) -> &[String] {
        &self.taxa
    }

    pub fn sites(&self) -> usize {
        self.rows[0].len()
    }

    pub fn row(&self, taxon: usize) -> &[u8] {
        &self.rows[taxon]
    }

    /// Characters of one site, rows in the given taxon order.
    pub fn column(&self, site: usize, order: &[usize]) -> Vec<usize> {
        order.iter().map(|&t| self.rows[t][site] as usize).collect()
    }

    /// Row index of each tree leaf, leaves in left-to-right order. The
    /// alignment must name exactly the tree's leaves.
    pub fn leaf_order(&self, tree: &PhyloTree) -> Result<Vec<usize>> {
        if self.alphabet != tree.alphabet() {
            return Err(Error::AlphabetMismatch(format!(
                "{:?} alignment on a {:?} tree",
                self.alphabet,
                tree.alphabet()
            )));
        }
        let labels = tree.leaf_labels();
        let mut order = Vec::with_capacity(labels.len());
        for label in &labels {
            let i = self
                .taxa
                .iter()
                .position(|t| t == label)
                .ok_or_else(|| Error::TaxaMismatch(format!("leaf `{label}` has no sequence")))?;
            order.push(i);
        }
        if let Some(extra) = self.taxa.iter().find(|t| !labels.contains(&t.as_str())) {
            return Err(Error::TaxaMismatch(format!("sequence `{extra}` is not a leaf of the tree")));
        }
        Ok(order)
    }

    pub fn to_fasta(&self) -> String {
        let mut out = String::new();
        for (name, row) in self.taxa.iter().zip(&self.rows) {
            let seq: String = row.iter().map(|&c| self.alphabet.symbol(c as usize)).collect();
            let _ = writeln!(out, ">{name}\n{seq}");
        }
        out
    }
}

fn records(text: &str) -> Result<Vec<(String, String)>> {
    let mut out: Vec<(String, String)> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r').trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('>') {
            let name = name.split_whitespace().next().unwrap_or("");
            if name.is_empty() {
                return Err(Error::Fasta(format!("line {}: record without a name", lineno + 1)));
            }
            out.push((name.to_owned(), String::new()));
        } else {
            let (_, seq) = out
                .last_mut()
                .ok_or_else(|| Error::Fasta(format!("line {}: sequence before the first header", lineno + 1)))?;
            seq.extend(line.chars().filter(|c| !c.is_whitespace()).map(|c| c.to_ascii_uppercase()));
        }
    }
    if out.is_empty() {
        return Err(Error::Fasta("no records".into()));
    }
    Ok(out)
}

/// Parses FASTA, choosing DNA or binary from the characters present.
pub fn parse_fasta(text: &str) -> Result<Alignment> {
    let recs = records(text)?;
    let alphabet = Alphabet::detect(recs.iter().flat_map(|(_, s)| s.chars()))
        .map_err(|_| Error::Fasta(unknown_char(&recs, Alphabet::Dna)))?;
    build(recs, alphabet)
}

pub fn parse_fasta_with(text: &str, alphabet: Alphabet) -> Result<Alignment> {
    build(records(text)?, alphabet)
}

fn unknown_char(recs: &[(String, String)], alphabet: Alphabet) -> String {
    for (name, seq) in recs {
        if let Some((i, c)) = seq.chars().enumerate().find(|(_, c)| alphabet.index_of(*c).is_err()) {
            return format!("`{name}` site {}: unknown character {c:?}", i + 1);
        }
    }
    "unknown character".into()
}

fn build(recs: Vec<(String, String)>, alphabet: Alphabet) -> Result<Alignment> {
    let mut taxa = Vec::with_capacity(recs.len());
    let mut rows = Vec::with_capacity(recs.len());
    for (name, seq) in &recs {
        let row = seq
            .chars()
            .map(|c| alphabet.index_of(c).map(|i| i as u8))
            .collect::<Result<Vec<u8>>>()
            .map_err(|_| Error::Fasta(unknown_char(std::slice::from_ref(&(name.clone(), seq.clone())), alphabet)))?;
        taxa.push(name.clone());
        rows.push(row);
    }
    Alignment::new(alphabet, taxa, rows)
}
