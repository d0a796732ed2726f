//! Exact state-vector simulation of small qubit lattices.
//!
//! States live on a periodic [`Lattice`]; site `q` maps to bit `q` of the
//! amplitude index (site 0 least significant). The module covers product-state
//! preparation, Hamiltonian time evolution and ground states (see [`ham`] and
//! [`krylov`]), Pauli expectations, reduced density matrices, and the
//! diagnostic probes used by the experiment harness.

pub mod ham;
pub mod krylov;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::lattice::Lattice;
use crate::pauli::{ExpectationSource, PauliLetter, PauliString};
use crate::seed;

pub use ham::{sample_general, sample_symmetric, BondHamiltonian, HamiltonianSpec};
pub use krylov::{evolve, ground_state};

/// Hard cap on qubit count (amplitude vectors are dense).
pub const MAX_QUBITS: usize = 20;
/// Hard cap on reduced-density-matrix subsystem size.
pub const MAX_RDM_SITES: usize = 12;

/// Dense pure state over all lattice sites.
#[derive(Debug, Clone)]
pub struct StateVector {
    lat: Lattice,
    amps: Vec<Complex64>,
}

/// Outcome of [`StateVector::correlation_length_probe`].
#[derive(Debug, Clone)]
pub struct CorrelationProbe {
    /// Fitted correlation length; infinite when correlations do not decay.
    pub xi: f64,
    /// True when a decaying exponential fit succeeded.
    pub decaying: bool,
    /// True when all probed connected correlators are numerically zero.
    pub uncorrelated: bool,
    /// The (distance, connected-correlator) samples behind the fit.
    pub points: Vec<(usize, f64)>,
}

fn check_qubit_cap(lat: &Lattice) -> Result<()> {
    if lat.num_sites() > MAX_QUBITS {
        return Err(Error::ResourceLimit(format!(
            "state vectors support at most {MAX_QUBITS} qubits, lattice has {}",
            lat.num_sites()
        )));
    }
    Ok(())
}

/// Apply a 2x2 gate to one qubit of a raw amplitude slice.
pub fn apply_single_qubit_gate(amps: &mut [Complex64], qubit: usize, u: &[[Complex64; 2]; 2]) {
    let stride = 1usize << qubit;
    let dim = amps.len();
    let mut base = 0usize;
    while base < dim {
        for x in base..base + stride {
            let a = amps[x];
            let b = amps[x + stride];
            amps[x] = u[0][0] * a + u[0][1] * b;
            amps[x + stride] = u[1][0] * a + u[1][1] * b;
        }
        base += 2 * stride;
    }
}

/// Apply a 4x4 gate to a qubit pair; row/column index is `bit(qa)*2 + bit(qb)`.
pub fn apply_two_qubit_gate(
    amps: &mut [Complex64],
    qa: usize,
    qb: usize,
    m: &[[Complex64; 4]; 4],
) {
    let sa = 1usize << qa;
    let sb = 1usize << qb;
    for x in 0..amps.len() {
        if x & (sa | sb) != 0 {
            continue;
        }
        let idx = [x, x | sb, x | sa, x | sa | sb];
        let v = [amps[idx[0]], amps[idx[1]], amps[idx[2]], amps[idx[3]]];
        for r in 0..4 {
            amps[idx[r]] =
                m[r][0] * v[0] + m[r][1] * v[1] + m[r][2] * v[2] + m[r][3] * v[3];
        }
    }
}

/// One Haar-random single-qubit state (four standard normals, normalized).
fn haar_qubit(rng: &mut impl Rng) -> [Complex64; 2] {
    let g: [f64; 4] = std::array::from_fn(|_| rng.sample(StandardNormal));
    let a = Complex64::new(g[0], g[1]);
    let b = Complex64::new(g[2], g[3]);
    let norm = (a.norm_sqr() + b.norm_sqr()).sqrt();
    [a / norm, b / norm]
}

/// One Haar-random 2x2 unitary: Gram-Schmidt on a complex Gaussian matrix with
/// the R-diagonal kept real positive (draw order: column 0 then column 1,
/// real before imaginary part within each entry).
pub fn haar_unitary(rng: &mut impl Rng) -> [[Complex64; 2]; 2] {
    let g: [f64; 8] = std::array::from_fn(|_| rng.sample(StandardNormal));
    let a0 = Complex64::new(g[0], g[1]);
    let a1 = Complex64::new(g[2], g[3]);
    let b0 = Complex64::new(g[4], g[5]);
    let b1 = Complex64::new(g[6], g[7]);
    let na = (a0.norm_sqr() + a1.norm_sqr()).sqrt();
    let (q00, q10) = (a0 / na, a1 / na);
    let proj = q00.conj() * b0 + q10.conj() * b1;
    let (r0, r1) = (b0 - proj * q00, b1 - proj * q10);
    let nb = (r0.norm_sqr() + r1.norm_sqr()).sqrt();
    [[q00, r0 / nb], [q10, r1 / nb]]
}

impl StateVector {
    /// The all-zeros computational basis state.
    pub fn zero_state(lat: &Lattice) -> Result<Self> {
        check_qubit_cap(lat)?;
        let mut amps = vec![Complex64::ZERO; 1 << lat.num_sites()];
        amps[0] = Complex64::ONE;
        Ok(StateVector { lat: lat.clone(), amps })
    }

    /// Build from raw amplitudes (must be normalized to within 1e-9).
    pub fn from_amplitudes(lat: &Lattice, amps: Vec<Complex64>) -> Result<Self> {
        check_qubit_cap(lat)?;
        if amps.len() != 1 << lat.num_sites() {
            return Err(Error::InvalidArgument(format!(
                "expected {} amplitudes, got {}",
                1usize << lat.num_sites(),
                amps.len()
            )));
        }
        let norm: f64 = amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "amplitudes are not normalized (norm {norm})"
            )));
        }
        Ok(StateVector { lat: lat.clone(), amps })
    }

    /// Product of Haar-random single-qubit states; with `symmetric` the same
    /// qubit state is repeated on every site.
    pub fn random_product_state(lat: &Lattice, seed_value: u64, symmetric: bool) -> Result<Self> {
        check_qubit_cap(lat)?;
        let n = lat.num_sites();
        let mut rng = seed::stream_rng(seed_value, seed::STREAM_STATE, 0);
        let qubits: Vec<[Complex64; 2]> = if symmetric {
            let q = haar_qubit(&mut rng);
            vec![q; n]
        } else {
            (0..n).map(|_| haar_qubit(&mut rng)).collect()
        };
        let dim = 1usize << n;
        let mut amps = vec![Complex64::ONE; dim];
        for (x, amp) in amps.iter_mut().enumerate() {
            for (q, c) in qubits.iter().enumerate() {
                *amp *= c[(x >> q) & 1];
            }
        }
        Ok(StateVector { lat: lat.clone(), amps })
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lat
    }

    pub fn num_qubits(&self) -> usize {
        self.lat.num_sites()
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amps
    }

    pub fn norm(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Squared overlap with another state on the same lattice.
    pub fn fidelity(&self, other: &StateVector) -> f64 {
        let inner: Complex64 = self
            .amps
            .iter()
            .zip(&other.amps)
            .map(|(a, b)| a.conj() * b)
            .sum();
        inner.norm_sqr()
    }

    /// Apply a single-qubit gate in place.
    pub fn apply_single(&mut self, qubit: usize, u: &[[Complex64; 2]; 2]) -> Result<()> {
        if qubit >= self.num_qubits() {
            return Err(Error::InvalidArgument(format!("qubit {qubit} out of range")));
        }
        apply_single_qubit_gate(&mut self.amps, qubit, u);
        Ok(())
    }

    /// Exact expectation of a sparse Pauli string.
    pub fn expectation(&self, p: &PauliString) -> Result<f64> {
        let n = self.num_qubits();
        let mut flip = 0usize;
        let mut phase_mask = 0usize; // sites contributing (-1)^bit
        let mut ny = 0u32;
        for (site, letter) in p.iter() {
            if site >= n {
                return Err(Error::InvalidArgument(format!("site {site} out of range")));
            }
            match letter {
                PauliLetter::X => flip |= 1 << site,
                PauliLetter::Y => {
                    flip |= 1 << site;
                    phase_mask |= 1 << site;
                    ny += 1;
                }
                PauliLetter::Z => phase_mask |= 1 << site,
            }
        }
        // i^ny collected once; per-index sign from parity of masked bits.
        let iy = match ny % 4 {
            0 => Complex64::ONE,
            1 => Complex64::I,
            2 => -Complex64::ONE,
            _ => -Complex64::I,
        };
        let mut acc = Complex64::ZERO;
        for (x, amp) in self.amps.iter().enumerate() {
            let sign = if ((x & phase_mask).count_ones() & 1) == 1 { -1.0 } else { 1.0 };
            acc += self.amps[x ^ flip].conj() * amp * sign;
        }
        Ok((acc * iy).re)
    }

    /// Reduced density matrix on `sites` (distinct, in the given tensor order;
    /// the first listed site is the most significant factor).
    pub fn reduced_density_matrix(&self, sites: &[usize]) -> Result<DMatrix<Complex64>> {
        let n = self.num_qubits();
        let k = sites.len();
        if k == 0 {
            return Err(Error::InvalidArgument("subsystem must be non-empty".into()));
        }
        if k > MAX_RDM_SITES {
            return Err(Error::ResourceLimit(format!(
                "reduced density matrices support at most {MAX_RDM_SITES} sites, got {k}"
            )));
        }
        let mut seen = vec![false; n];
        for &s in sites {
            if s >= n {
                return Err(Error::InvalidArgument(format!("site {s} out of range")));
            }
            if seen[s] {
                return Err(Error::InvalidArgument(format!("duplicate site {s}")));
            }
            seen[s] = true;
        }
        let rest: Vec<usize> = (0..n).filter(|&q| !seen[q]).collect();
        let rows = 1usize << k;
        let cols = 1usize << rest.len();
        let mut m = DMatrix::<Complex64>::zeros(rows, cols);
        for (x, amp) in self.amps.iter().enumerate() {
            let mut r = 0usize;
            for (pos, &s) in sites.iter().enumerate() {
                r |= ((x >> s) & 1) << (k - 1 - pos);
            }
            let mut c = 0usize;
            for (pos, &s) in rest.iter().enumerate() {
                c |= ((x >> s) & 1) << (rest.len() - 1 - pos);
            }
            m[(r, c)] = *amp;
        }
        Ok(&m * m.adjoint())
    }

    /// tr(rho^2) of the reduced state on `sites`.
    pub fn purity(&self, sites: &[usize]) -> Result<f64> {
        let rho = self.reduced_density_matrix(sites)?;
        Ok(rho.iter().map(|e| e.norm_sqr()).sum())
    }

    /// String-order diagnostic for inversion-symmetric chains: the expectation
    /// of the mirror-swap operator on the `2a` central sites, normalized by
    /// the mean purity of its two halves.
    pub fn order_parameter_z(&self, a: usize) -> Result<f64> {
        let n = self.num_qubits();
        if self.lat.num_axes() != 1 {
            return Err(Error::InvalidArgument("order parameter is defined for chains".into()));
        }
        if n % 2 != 0 || a == 0 || 2 * a > n {
            return Err(Error::InvalidArgument(format!(
                "order parameter needs even n and 0 < a <= n/2, got n={n}, a={a}"
            )));
        }
        let half = n / 2;
        let left: Vec<usize> = (half - a..half).collect();
        let right: Vec<usize> = (half..half + a).collect();
        let both: Vec<usize> = left.iter().chain(right.iter()).copied().collect();
        let rho = self.reduced_density_matrix(&both)?;
        let bits = 2 * a;
        // The mirror swap reverses the site order of `both`, i.e. reverses the
        // index bit string.
        let mut swap_expect = 0.0;
        for x in 0..(1usize << bits) {
            let mut rev = 0usize;
            for b in 0..bits {
                rev |= ((x >> b) & 1) << (bits - 1 - b);
            }
            swap_expect += rho[(rev, x)].re;
        }
        let pl = self.purity(&left)?;
        let pr = self.purity(&right)?;
        Ok(std::f64::consts::SQRT_2 * swap_expect / (pl + pr).sqrt())
    }

    /// Apply the mirrored random local disturbance: site `j` and its inversion
    /// partner `n-1-j` receive the same Haar unitary.
    pub fn disturb_inversion_symmetric(&mut self, seed_value: u64) -> Result<()> {
        let n = self.num_qubits();
        if n % 2 != 0 {
            return Err(Error::InvalidArgument("disturbance needs an even chain".into()));
        }
        let mut rng = seed::stream_rng(seed_value, seed::STREAM_DISTURB, 0);
        for j in 0..n / 2 {
            let u = haar_unitary(&mut rng);
            self.apply_single(j, &u)?;
            self.apply_single(n - 1 - j, &u)?;
        }
        Ok(())
    }

    /// Worst-case violation of translation symmetry over single-site letters
    /// and adjacent two-site letter pairs, compared against all shifts.
    pub fn translation_symmetry_defect(&self) -> Result<f64> {
        let n = self.num_qubits();
        if self.lat.num_axes() != 1 {
            return Err(Error::InvalidArgument("symmetry defect is defined for chains".into()));
        }
        let letters = [PauliLetter::X, PauliLetter::Y, PauliLetter::Z];
        let mut probes = Vec::new();
        for &l in &letters {
            probes.push(PauliString::new([(0, l)])?);
        }
        for &l in &letters {
            for &m in &letters {
                probes.push(PauliString::new([(0, l), (1, m)])?);
            }
        }
        let mut defect = 0.0f64;
        for p in &probes {
            let base = self.expectation(p)?;
            for s in 1..n {
                let shifted = p.shifted(&self.lat, s)?;
                defect = defect.max((self.expectation(&shifted)? - base).abs());
            }
        }
        Ok(defect)
    }

    /// Fit a correlation length from two-point connected correlators
    /// `<A_0 B_d> - <A_0><B_d>` along the chain, d = 1..n/2.
    pub fn correlation_length_probe(
        &self,
        a: PauliLetter,
        b: PauliLetter,
    ) -> Result<CorrelationProbe> {
        let n = self.num_qubits();
        if self.lat.num_axes() != 1 {
            return Err(Error::InvalidArgument("correlation probe is defined for chains".into()));
        }
        if n < 4 {
            return Err(Error::InvalidArgument("correlation probe needs at least 4 sites".into()));
        }
        let pa = PauliString::new([(0, a)])?;
        let ea = self.expectation(&pa)?;
        let mut points = Vec::new();
        for d in 1..=n / 2 {
            let pb = PauliString::new([(d, b)])?;
            let joint = PauliString::new([(0, a), (d, b)])?;
            let c = self.expectation(&joint)? - ea * self.expectation(&pb)?;
            points.push((d, c));
        }
        let usable: Vec<(f64, f64)> = points
            .iter()
            .filter(|(_, c)| c.abs() > 1e-12)
            .map(|&(d, c)| (d as f64, c.abs().ln()))
            .collect();
        if points.iter().all(|(_, c)| c.abs() < 1e-8) || usable.len() < 2 {
            return Ok(CorrelationProbe { xi: 0.0, decaying: false, uncorrelated: true, points });
        }
        // Least-squares slope of ln|C| against distance.
        let np = usable.len() as f64;
        let mx = usable.iter().map(|(d, _)| d).sum::<f64>() / np;
        let my = usable.iter().map(|(_, y)| y).sum::<f64>() / np;
        let sxx: f64 = usable.iter().map(|(d, _)| (d - mx) * (d - mx)).sum();
        let sxy: f64 = usable.iter().map(|(d, y)| (d - mx) * (y - my)).sum();
        let slope = sxy / sxx;
        if slope >= -1e-9 {
            return Ok(CorrelationProbe {
                xi: f64::INFINITY,
                decaying: false,
                uncorrelated: false,
                points,
            });
        }
        Ok(CorrelationProbe { xi: -1.0 / slope, decaying: true, uncorrelated: false, points })
    }
}

impl ExpectationSource for StateVector {
    fn pauli_expectation(&self, p: &PauliString) -> f64 {
        self.expectation(p).expect("polynomial was validated against the lattice")
    }
}
