//! Nearest-neighbour bond Hamiltonians on rings and open chains.
//!
//! Every family reduces to a list of two-site bonds, each carrying a dense
//! 4x4 Hermitian matrix in the `bit(a)*2 + bit(b)` basis. That uniform shape
//! keeps matrix-vector products, Krylov evolution, and dense test oracles on
//! a single code path.

use num_complex::Complex64;
use rand::Rng;

use crate::error::{Error, Result};
use crate::lattice::Lattice;
use crate::seed;

/// 3x3 real coupling block: row = Pauli on the left site (X, Y, Z), column =
/// Pauli on the right site.
pub type CouplingMatrix = [[f64; 3]; 3];

/// Supported Hamiltonian families.
#[derive(Debug, Clone)]
pub enum HamiltonianSpec {
    /// Translation-symmetric ring: one shared coupling matrix on every bond
    /// (j, j+1 mod n).
    RandomSymmetric { couplings: CouplingMatrix },
    /// Generic ring: an independent coupling matrix per bond, listed for
    /// bonds (0,1), (1,2), ..., (n-1,0).
    RandomGeneral { couplings: Vec<CouplingMatrix> },
    /// Bond-alternating XXZ open chain: odd bonds (0,1), (2,3), ... carry
    /// strength 1, even bonds (1,2), (3,4), ... carry strength `j`, each as
    /// XX + YY + delta*ZZ.
    XxzBondAlternating { j: f64, delta: f64 },
}

/// One two-site bond with its dense 4x4 matrix.
#[derive(Debug, Clone)]
pub struct Bond {
    pub a: usize,
    pub b: usize,
    pub matrix: [[Complex64; 4]; 4],
}

/// A Hamiltonian lowered to bonds, ready for matrix-vector products.
#[derive(Debug, Clone)]
pub struct BondHamiltonian {
    num_qubits: usize,
    bonds: Vec<Bond>,
    norm_bound: f64,
}

fn pauli_2x2(idx: usize) -> [[Complex64; 2]; 2] {
    let z = Complex64::ZERO;
    let o = Complex64::ONE;
    let i = Complex64::I;
    match idx {
        0 => [[z, o], [o, z]],    // X
        1 => [[z, -i], [i, z]],   // Y
        _ => [[o, z], [z, -o]],   // Z
    }
}

/// Dense 4x4 for sum_{mu,nu} J[mu][nu] * sigma_mu (x) sigma_nu.
fn bond_matrix(j: &CouplingMatrix) -> [[Complex64; 4]; 4] {
    let mut m = [[Complex64::ZERO; 4]; 4];
    for mu in 0..3 {
        let sa = pauli_2x2(mu);
        for nu in 0..3 {
            let c = j[mu][nu];
            if c == 0.0 {
                continue;
            }
            let sb = pauli_2x2(nu);
            for ra in 0..2 {
                for ca in 0..2 {
                    for rb in 0..2 {
                        for cb in 0..2 {
                            m[ra * 2 + rb][ca * 2 + cb] += c * sa[ra][ca] * sb[rb][cb];
                        }
                    }
                }
            }
        }
    }
    m
}

fn coupling_norm(j: &CouplingMatrix) -> f64 {
    j.iter().flatten().map(|c| c.abs()).sum()
}

/// Draw a coupling matrix with i.i.d. entries uniform on [-1, 1], row-major.
pub fn random_couplings(rng: &mut impl Rng) -> CouplingMatrix {
    std::array::from_fn(|_| std::array::from_fn(|_| rng.random_range(-1.0..=1.0)))
}

/// Sample the translation-symmetric family from the Hamiltonian seed stream.
pub fn sample_symmetric(seed_value: u64) -> HamiltonianSpec {
    let mut rng = seed::stream_rng(seed_value, seed::STREAM_HAM, 0);
    HamiltonianSpec::RandomSymmetric { couplings: random_couplings(&mut rng) }
}

/// Sample the generic family (one coupling matrix per ring bond).
pub fn sample_general(n: usize, seed_value: u64) -> HamiltonianSpec {
    let mut rng = seed::stream_rng(seed_value, seed::STREAM_HAM, 0);
    let couplings = (0..n).map(|_| random_couplings(&mut rng)).collect();
    HamiltonianSpec::RandomGeneral { couplings }
}

impl BondHamiltonian {
    /// Lower a spec onto a one-dimensional lattice.
    pub fn build(spec: &HamiltonianSpec, lat: &Lattice) -> Result<Self> {
        if lat.num_axes() != 1 {
            return Err(Error::InvalidArgument(
                "bond Hamiltonians are defined on one-dimensional lattices".into(),
            ));
        }
        let n = lat.num_sites();
        if n < 2 {
            return Err(Error::InvalidArgument("need at least 2 sites".into()));
        }
        let mut bonds = Vec::new();
        let mut norm_bound = 0.0;
        match spec {
            HamiltonianSpec::RandomSymmetric { couplings } => {
                let m = bond_matrix(couplings);
                let nm = coupling_norm(couplings);
                for a in 0..n {
                    bonds.push(Bond { a, b: (a + 1) % n, matrix: m });
                    norm_bound += nm;
                }
            }
            HamiltonianSpec::RandomGeneral { couplings } => {
                if couplings.len() != n {
                    return Err(Error::InvalidArgument(format!(
                        "expected {n} coupling matrices, got {}",
                        couplings.len()
                    )));
                }
                for (a, j) in couplings.iter().enumerate() {
                    bonds.push(Bond { a, b: (a + 1) % n, matrix: bond_matrix(j) });
                    norm_bound += coupling_norm(j);
                }
            }
            HamiltonianSpec::XxzBondAlternating { j, delta } => {
                if n % 2 != 0 {
                    return Err(Error::InvalidArgument(
                        "bond-alternating chain needs an even number of sites".into(),
                    ));
                }
                if !j.is_finite() || !delta.is_finite() {
                    return Err(Error::InvalidArgument("couplings must be finite".into()));
                }
                for a in 0..n - 1 {
                    let strength = if a % 2 == 0 { 1.0 } else { *j };
                    let c: CouplingMatrix =
                        [[strength, 0.0, 0.0], [0.0, strength, 0.0], [0.0, 0.0, strength * delta]];
                    bonds.push(Bond { a, b: a + 1, matrix: bond_matrix(&c) });
                    norm_bound += coupling_norm(&c);
                }
            }
        }
        Ok(BondHamiltonian { num_qubits: n, bonds, norm_bound })
    }

    pub fn num_qubits(&self) -> usize {
        self.num_qubits
    }

    pub fn bonds(&self) -> &[Bond] {
        &self.bonds
    }

    /// Upper bound on the operator norm (sum of bond coupling 1-norms).
    pub fn norm_bound(&self) -> f64 {
        self.norm_bound
    }

    /// out += H * amps (caller controls the accumulator).
    pub fn accumulate_matvec(&self, amps: &[Complex64], out: &mut [Complex64]) {
        for bond in &self.bonds {
            let sa = 1usize << bond.a;
            let sb = 1usize << bond.b;
            let m = &bond.matrix;
            for x in 0..amps.len() {
                if x & (sa | sb) != 0 {
                    continue;
                }
                let idx = [x, x | sb, x | sa, x | sa | sb];
                let v = [amps[idx[0]], amps[idx[1]], amps[idx[2]], amps[idx[3]]];
                for r in 0..4 {
                    out[idx[r]] +=
                        m[r][0] * v[0] + m[r][1] * v[1] + m[r][2] * v[2] + m[r][3] * v[3];
                }
            }
        }
    }

    /// H * amps as a fresh vector.
    pub fn matvec(&self, amps: &[Complex64]) -> Vec<Complex64> {
        let mut out = vec![Complex64::ZERO; amps.len()];
        self.accumulate_matvec(amps, &mut out);
        out
    }

    /// <psi|H|psi> for a normalized amplitude vector.
    pub fn energy(&self, amps: &[Complex64]) -> f64 {
        let h = self.matvec(amps);
        amps.iter().zip(&h).map(|(a, b)| (a.conj() * b).re).sum()
    }

    /// Dense matrix form, for small-system oracles and tests.
    pub fn dense(&self) -> nalgebra::DMatrix<Complex64> {
        let dim = 1usize << self.num_qubits;
        let mut h = nalgebra::DMatrix::<Complex64>::zeros(dim, dim);
        for bond in &self.bonds {
            let sa = 1usize << bond.a;
            let sb = 1usize << bond.b;
            for x in 0..dim {
                if x & (sa | sb) != 0 {
                    continue;
                }
                let idx = [x, x | sb, x | sa, x | sa | sb];
                for r in 0..4 {
                    for c in 0..4 {
                        h[(idx[r], idx[c])] += bond.matrix[r][c];
                    }
                }
            }
        }
        h
    }
}
