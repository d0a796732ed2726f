//! Sparse Pauli strings and products-of-traces observable polynomials.
//!
//! An observable polynomial is a weighted sum of products of Pauli expectation
//! values: `g(rho) = sum_i c_i prod_j tr(P_ij rho)`. Strings store only their
//! non-identity sites, so the same polynomial works on any lattice large enough
//! to contain its support. The JSON form round-trips bit-exactly.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::Lattice;

/// Single-site Pauli letter. Identity is represented by absence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PauliLetter {
    X,
    Y,
    Z,
}

/// Tensor product of single-site Paulis, stored sparsely and site-sorted.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PauliString {
    letters: BTreeMap<usize, PauliLetter>,
}

impl PauliString {
    /// Build from (site, letter) pairs; duplicate sites are rejected.
    pub fn new<I: IntoIterator<Item = (usize, PauliLetter)>>(pairs: I) -> Result<Self> {
        let mut letters = BTreeMap::new();
        for (site, letter) in pairs {
            if letters.insert(site, letter).is_some() {
                return Err(Error::InvalidArgument(format!(
                    "duplicate site {site} in Pauli string"
                )));
            }
        }
        Ok(PauliString { letters })
    }

    /// The identity string (empty support).
    pub fn identity() -> Self {
        PauliString::default()
    }

    /// Number of non-identity sites.
    pub fn weight(&self) -> usize {
        self.letters.len()
    }

    pub fn is_identity(&self) -> bool {
        self.letters.is_empty()
    }

    /// Sites carrying a non-identity letter, ascending.
    pub fn support(&self) -> Vec<usize> {
        self.letters.keys().copied().collect()
    }

    pub fn letter(&self, site: usize) -> Option<PauliLetter> {
        self.letters.get(&site).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, PauliLetter)> + '_ {
        self.letters.iter().map(|(&s, &l)| (s, l))
    }

    /// The sub-string on a subset of sites.
    pub fn restricted(&self, sites: &[usize]) -> Self {
        let letters = sites
            .iter()
            .filter_map(|s| self.letters.get(s).map(|&l| (*s, l)))
            .collect();
        PauliString { letters }
    }

    /// Translate every site by `shift` on a periodic lattice.
    pub fn shifted(&self, lat: &Lattice, shift: usize) -> Result<Self> {
        let n = lat.num_sites();
        let mut letters = BTreeMap::new();
        for (&site, &l) in &self.letters {
            if site >= n {
                return Err(Error::InvalidArgument(format!(
                    "site {site} outside lattice of {n} sites"
                )));
            }
            letters.insert((site + shift) % n, l);
        }
        Ok(PauliString { letters })
    }

    /// Largest site index used, if any.
    pub fn max_site(&self) -> Option<usize> {
        self.letters.keys().next_back().copied()
    }
}

impl fmt::Display for PauliString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.letters.is_empty() {
            return write!(f, "I");
        }
        let mut first = true;
        for (&site, &l) in &self.letters {
            if !first {
                write!(f, " ")?;
            }
            first = false;
            write!(f, "{l:?}{site}")?;
        }
        Ok(())
    }
}

/// One weighted product of Pauli expectation values.
#[derive(Debug, Clone, PartialEq)]
pub struct Term {
    pub coefficient: f64,
    pub factors: Vec<PauliString>,
}

impl Term {
    /// Build a term; the factor list must be non-empty and the coefficient finite.
    pub fn new(coefficient: f64, factors: Vec<PauliString>) -> Result<Self> {
        if factors.is_empty() {
            return Err(Error::InvalidArgument("term needs at least one factor".into()));
        }
        if !coefficient.is_finite() {
            return Err(Error::InvalidArgument("term coefficient must be finite".into()));
        }
        Ok(Term { coefficient, factors })
    }

    /// Largest single-factor weight in this term.
    pub fn max_weight(&self) -> usize {
        self.factors.iter().map(PauliString::weight).max().unwrap_or(0)
    }
}

/// Anything that can report an expectation value for a sparse Pauli string:
/// exact states, density matrices, or shadow estimators.
pub trait ExpectationSource {
    fn pauli_expectation(&self, p: &PauliString) -> f64;
}

/// Weighted sum of products of Pauli expectations.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ObservablePolynomial {
    terms: Vec<Term>,
}

impl ObservablePolynomial {
    pub fn new(terms: Vec<Term>) -> Self {
        ObservablePolynomial { terms }
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// Maximum number of trace factors in any term (the polynomial degree `p`).
    pub fn degree(&self) -> usize {
        self.terms.iter().map(|t| t.factors.len()).max().unwrap_or(0)
    }

    /// Maximum Pauli weight over all factors (`m`).
    pub fn max_weight(&self) -> usize {
        self.terms.iter().map(Term::max_weight).max().unwrap_or(0)
    }

    /// Sum of absolute coefficients.
    pub fn norm1(&self) -> f64 {
        self.terms.iter().map(|t| t.coefficient.abs()).sum()
    }

    /// Euclidean norm of the coefficient vector.
    pub fn norm2(&self) -> f64 {
        self.terms.iter().map(|t| t.coefficient * t.coefficient).sum::<f64>().sqrt()
    }

    /// Largest site index referenced by any factor.
    pub fn max_site(&self) -> Option<usize> {
        self.terms
            .iter()
            .flat_map(|t| t.factors.iter().filter_map(PauliString::max_site))
            .max()
    }

    /// Check that every referenced site exists on `lat`.
    pub fn validate_on(&self, lat: &Lattice) -> Result<()> {
        if let Some(max) = self.max_site() {
            if max >= lat.num_sites() {
                return Err(Error::InvalidArgument(format!(
                    "polynomial references site {max} but lattice has {} sites",
                    lat.num_sites()
                )));
            }
        }
        Ok(())
    }

    /// Evaluate `sum_i c_i prod_j <P_ij>` against any expectation source.
    pub fn evaluate(&self, src: &impl ExpectationSource) -> f64 {
        self.terms
            .iter()
            .map(|t| {
                let prod: f64 = t.factors.iter().map(|p| src.pauli_expectation(p)).product();
                t.coefficient * prod
            })
            .sum()
    }

    /// Serialize to the on-disk JSON form.
    pub fn to_json(&self) -> String {
        let repr = PolyRepr {
            terms: self
                .terms
                .iter()
                .map(|t| TermRepr {
                    c: t.coefficient,
                    factors: t.factors.iter().map(|p| p.iter().collect()).collect(),
                })
                .collect(),
        };
        serde_json::to_string(&repr).expect("polynomial serialization cannot fail")
    }

    /// Parse the on-disk JSON form; coefficients round-trip bit-exactly.
    pub fn from_json(text: &str) -> Result<Self> {
        let repr: PolyRepr = serde_json::from_str(text)
            .map_err(|e| Error::Malformed(format!("polynomial JSON: {e}")))?;
        let mut terms = Vec::with_capacity(repr.terms.len());
        for t in repr.terms {
            let factors = t
                .factors
                .into_iter()
                .map(PauliString::new)
                .collect::<Result<Vec<_>>>()?;
            terms.push(Term::new(t.c, factors)?);
        }
        Ok(ObservablePolynomial::new(terms))
    }
}

#[derive(Serialize, Deserialize)]
struct PolyRepr {
    terms: Vec<TermRepr>,
}

#[derive(Serialize, Deserialize)]
struct TermRepr {
    c: f64,
    factors: Vec<Vec<(usize, PauliLetter)>>,
}
