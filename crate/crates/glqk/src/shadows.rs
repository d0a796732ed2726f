//! Classical shadows: randomized Pauli measurements, compact storage, and
//! shadow-side estimators.
//!
//! A shadow stores one byte per (shot, qubit): bits 0-1 hold the measurement
//! basis (0 = X, 1 = Y, 2 = Z), bit 2 the outcome (0 maps to +1, 1 to -1),
//! bits 3-7 are zero. Records are laid out shot-major, so the per-shot byte
//! rows the kernel loops consume are contiguous.

use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;

use crate::error::{Error, Result};
use crate::lattice::Lattice;
use crate::pauli::{ExpectationSource, ObservablePolynomial, PauliLetter, PauliString};
use crate::qsim::{apply_single_qubit_gate, StateVector};
use crate::seed;

pub const BASIS_X: u8 = 0;
pub const BASIS_Y: u8 = 1;
pub const BASIS_Z: u8 = 2;
/// Cap on reduced-density-matrix estimation width.
pub const MAX_ESTIMATED_RDM_SITES: usize = 8;

const MAGIC: &[u8; 4] = b"GLQS";
const FORMAT_VERSION: u16 = 1;

/// Pack a (basis, outcome) pair into a record byte.
pub fn encode_record(basis: u8, outcome_positive: bool) -> u8 {
    debug_assert!(basis <= BASIS_Z);
    basis | ((!outcome_positive as u8) << 2)
}

/// Unpack a record byte into (basis, outcome sign).
pub fn decode_record(record: u8) -> (u8, f64) {
    (record & 0b11, if record & 0b100 == 0 { 1.0 } else { -1.0 })
}

fn valid_record(record: u8) -> bool {
    record & !0b111 == 0 && record & 0b11 <= BASIS_Z
}

fn basis_letter(basis: u8) -> PauliLetter {
    match basis {
        BASIS_X => PauliLetter::X,
        BASIS_Y => PauliLetter::Y,
        _ => PauliLetter::Z,
    }
}

/// The measurement record of `T` randomized Pauli-basis shots on one state.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassicalShadow {
    lat: Lattice,
    shots: usize,
    records: Vec<u8>,
}

impl ClassicalShadow {
    /// Build from raw records (shot-major); validates length and byte values.
    pub fn from_records(lat: &Lattice, shots: usize, records: Vec<u8>) -> Result<Self> {
        if shots == 0 {
            return Err(Error::InvalidArgument("shadow needs at least one shot".into()));
        }
        if records.len() != shots * lat.num_sites() {
            return Err(Error::InvalidArgument(format!(
                "expected {} records, got {}",
                shots * lat.num_sites(),
                records.len()
            )));
        }
        if let Some(bad) = records.iter().find(|r| !valid_record(**r)) {
            return Err(Error::Malformed(format!("invalid record byte 0x{bad:02x}")));
        }
        Ok(ClassicalShadow { lat: lat.clone(), shots, records })
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lat
    }

    pub fn num_qubits(&self) -> usize {
        self.lat.num_sites()
    }

    pub fn shots(&self) -> usize {
        self.shots
    }

    pub fn records(&self) -> &[u8] {
        &self.records
    }

    /// The byte row of one shot (all qubits, site-ascending).
    pub fn shot_row(&self, t: usize) -> &[u8] {
        let n = self.num_qubits();
        &self.records[t * n..(t + 1) * n]
    }

    pub fn record(&self, t: usize, qubit: usize) -> u8 {
        self.records[t * self.num_qubits() + qubit]
    }

    pub fn basis(&self, t: usize, qubit: usize) -> u8 {
        self.record(t, qubit) & 0b11
    }

    pub fn outcome(&self, t: usize, qubit: usize) -> f64 {
        decode_record(self.record(t, qubit)).1
    }

    /// Relabel sites by a cyclic shift (one-dimensional lattices): the new
    /// shadow's site `(q + shift) mod n` carries the old site `q`'s record.
    /// Diagnostic helper for translation-covariance checks.
    pub fn shifted(&self, shift: usize) -> Result<Self> {
        if self.lat.num_axes() != 1 {
            return Err(Error::InvalidArgument("shift is defined for chains".into()));
        }
        let n = self.num_qubits();
        let mut records = vec![0u8; self.records.len()];
        for t in 0..self.shots {
            for q in 0..n {
                records[t * n + (q + shift) % n] = self.records[t * n + q];
            }
        }
        Ok(ClassicalShadow { lat: self.lat.clone(), shots: self.shots, records })
    }

    /// Unbiased Pauli-expectation estimator: the per-shot product of
    /// `3 * outcome` over the string's support when every basis matches,
    /// zero otherwise, averaged over shots.
    pub fn estimate_pauli(&self, p: &PauliString) -> Result<f64> {
        let n = self.num_qubits();
        if p.max_site().is_some_and(|s| s >= n) {
            return Err(Error::InvalidArgument("Pauli string exceeds the lattice".into()));
        }
        let mut acc = 0.0;
        for t in 0..self.shots {
            let row = self.shot_row(t);
            let mut prod = 1.0;
            for (site, letter) in p.iter() {
                let (basis, sign) = decode_record(row[site]);
                if basis_letter(basis) != letter {
                    prod = 0.0;
                    break;
                }
                prod *= 3.0 * sign;
            }
            acc += prod;
        }
        Ok(acc / self.shots as f64)
    }

    /// Plug-in polynomial estimator g(sigma): every factor of every term is
    /// estimated from this same shadow (matching the definition; products of
    /// estimators carry a finite-T bias that the shot budget accounts for).
    pub fn estimate_polynomial(&self, g: &ObservablePolynomial) -> Result<f64> {
        g.validate_on(&self.lat)?;
        Ok(g.evaluate(self))
    }

    /// Reduced-density-matrix estimator: the shot average of tensor products
    /// of per-site inverted snapshots (3*outcome*W + I)/2. Hermitian with
    /// unit trace by construction, but not necessarily positive.
    pub fn estimate_rdm(&self, sites: &[usize]) -> Result<DMatrix<Complex64>> {
        let n = self.num_qubits();
        let k = sites.len();
        if k == 0 {
            return Err(Error::InvalidArgument("subsystem must be non-empty".into()));
        }
        if k > MAX_ESTIMATED_RDM_SITES {
            return Err(Error::ResourceLimit(format!(
                "RDM estimation supports at most {MAX_ESTIMATED_RDM_SITES} sites, got {k}"
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
        let dim = 1usize << k;
        let mut acc = DMatrix::<Complex64>::zeros(dim, dim);
        for t in 0..self.shots {
            let row = self.shot_row(t);
            let mut snapshot = DMatrix::<Complex64>::identity(1, 1);
            for &site in sites {
                let (basis, sign) = decode_record(row[site]);
                snapshot = snapshot.kronecker(&single_site_snapshot(basis, sign));
            }
            acc += snapshot;
        }
        Ok(acc / Complex64::new(self.shots as f64, 0.0))
    }
}

impl ExpectationSource for ClassicalShadow {
    fn pauli_expectation(&self, p: &PauliString) -> f64 {
        self.estimate_pauli(p).expect("polynomial was validated against the lattice")
    }
}

/// (3*outcome*W + I)/2 for one measured qubit.
fn single_site_snapshot(basis: u8, sign: f64) -> DMatrix<Complex64> {
    let s = 3.0 * sign;
    let (m00, m01, m10, m11) = match basis {
        BASIS_X => (1.0.into(), Complex64::new(s, 0.0), Complex64::new(s, 0.0), 1.0.into()),
        BASIS_Y => (1.0.into(), Complex64::new(0.0, -s), Complex64::new(0.0, s), 1.0.into()),
        _ => (Complex64::new(1.0 + s, 0.0), 0.0.into(), 0.0.into(), Complex64::new(1.0 - s, 0.0)),
    };
    DMatrix::from_row_slice(2, 2, &[m00, m01, m10, m11]) / Complex64::new(2.0, 0.0)
}

/// Measure `t_shots` randomized-Pauli snapshots of a state.
///
/// RNG draw order per shot: `n` basis draws (site-ascending, uniform over
/// {X, Y, Z}), then one uniform f64 for the Born sample of the rotated state.
/// The whole record is a pure function of (state, t_shots, seed).
pub fn sample_shadow(state: &StateVector, t_shots: usize, seed_value: u64) -> Result<ClassicalShadow> {
    if t_shots == 0 {
        return Err(Error::InvalidArgument("shot count must be positive".into()));
    }
    let n = state.num_qubits();
    let mut rng = seed::stream_rng(seed_value, seed::STREAM_SHADOW, 0);
    let mut records = Vec::with_capacity(t_shots * n);
    let mut scratch = vec![Complex64::ZERO; state.amplitudes().len()];
    let mut bases = vec![0u8; n];

    let s = std::f64::consts::FRAC_1_SQRT_2;
    let h = [[Complex64::new(s, 0.0), Complex64::new(s, 0.0)],
             [Complex64::new(s, 0.0), Complex64::new(-s, 0.0)]];
    // H * S-adjoint rotates the Y eigenbasis onto the computational basis.
    let hs = [[Complex64::new(s, 0.0), Complex64::new(0.0, -s)],
              [Complex64::new(s, 0.0), Complex64::new(0.0, s)]];

    for _ in 0..t_shots {
        for b in bases.iter_mut() {
            *b = rng.random_range(0..3u8);
        }
        scratch.copy_from_slice(state.amplitudes());
        for (q, &b) in bases.iter().enumerate() {
            match b {
                BASIS_X => apply_single_qubit_gate(&mut scratch, q, &h),
                BASIS_Y => apply_single_qubit_gate(&mut scratch, q, &hs),
                _ => {}
            }
        }
        let u: f64 = rng.random();
        let mut outcome = scratch.len() - 1;
        let mut cum = 0.0;
        for (x, amp) in scratch.iter().enumerate() {
            cum += amp.norm_sqr();
            if u < cum {
                outcome = x;
                break;
            }
        }
        for (q, &b) in bases.iter().enumerate() {
            records.push(encode_record(b, (outcome >> q) & 1 == 0));
        }
    }
    ClassicalShadow::from_records(state.lattice(), t_shots, records)
}

/// One labelled pool entry: a shadow, its target value, and free-form
/// JSON provenance (task, target id, per-entry seed, generator parameters).
#[derive(Debug, Clone, PartialEq)]
pub struct PoolEntry {
    pub shadow: ClassicalShadow,
    pub label: f64,
    pub metadata: serde_json::Value,
}

/// A homogeneous collection of labelled shadows (same lattice, same T).
#[derive(Debug, Clone, PartialEq)]
pub struct ShadowPool {
    lat: Lattice,
    shots: usize,
    entries: Vec<PoolEntry>,
}

impl ShadowPool {
    pub fn new(lat: &Lattice, shots: usize) -> Result<Self> {
        if shots == 0 {
            return Err(Error::InvalidArgument("shot count must be positive".into()));
        }
        Ok(ShadowPool { lat: lat.clone(), shots, entries: Vec::new() })
    }

    pub fn push(&mut self, entry: PoolEntry) -> Result<()> {
        if entry.shadow.lattice() != &self.lat || entry.shadow.shots() != self.shots {
            return Err(Error::InvalidArgument(
                "pool entries must share one lattice and shot count".into(),
            ));
        }
        if !entry.label.is_finite() {
            return Err(Error::InvalidArgument("labels must be finite".into()));
        }
        self.entries.push(entry);
        Ok(())
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lat
    }

    pub fn shots(&self) -> usize {
        self.shots
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[PoolEntry] {
        &self.entries
    }

    pub fn labels(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.label).collect()
    }

    pub fn shadows(&self) -> Vec<&ClassicalShadow> {
        self.entries.iter().map(|e| &e.shadow).collect()
    }

    /// Serialize to the GLQS binary format (little-endian throughout):
    /// magic "GLQS", u16 version, u8 axis count, u32 per-axis sizes, u32 T,
    /// u32 entry count, then per entry: f64 label, u32 metadata length,
    /// UTF-8 JSON metadata, n*T record bytes (shot-major).
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.push(self.lat.num_axes() as u8);
        for &d in self.lat.dims() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        out.extend_from_slice(&(self.shots as u32).to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for entry in &self.entries {
            out.extend_from_slice(&entry.label.to_le_bytes());
            let meta = serde_json::to_string(&entry.metadata)?;
            out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
            out.extend_from_slice(meta.as_bytes());
            out.extend_from_slice(entry.shadow.records());
        }
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        file.write_all(&out)?;
        file.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        let mut cur = Cursor { bytes: &bytes, pos: 0 };
        if cur.take(4)? != MAGIC {
            return Err(Error::Malformed("not a GLQS pool file (bad magic)".into()));
        }
        let version = u16::from_le_bytes(cur.take(2)?.try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(Error::Malformed(format!("unsupported pool version {version}")));
        }
        let axes = cur.take(1)?[0] as usize;
        if axes == 0 {
            return Err(Error::Malformed("pool lattice has no axes".into()));
        }
        let mut dims = Vec::with_capacity(axes);
        for _ in 0..axes {
            dims.push(cur.take_u32()? as usize);
        }
        let lat = Lattice::new(dims).map_err(|e| Error::Malformed(format!("bad lattice: {e}")))?;
        let shots = cur.take_u32()? as usize;
        if shots == 0 {
            return Err(Error::Malformed("pool has zero shots".into()));
        }
        let count = cur.take_u32()? as usize;
        let n = lat.num_sites();
        let mut pool = ShadowPool::new(&lat, shots)?;
        for _ in 0..count {
            let label = f64::from_le_bytes(cur.take(8)?.try_into().unwrap());
            let meta_len = cur.take_u32()? as usize;
            let meta_bytes = cur.take(meta_len)?;
            let metadata: serde_json::Value = serde_json::from_slice(meta_bytes)
                .map_err(|e| Error::Malformed(format!("bad entry metadata: {e}")))?;
            let records = cur.take(n * shots)?.to_vec();
            let shadow = ClassicalShadow::from_records(&lat, shots, records)?;
            if !label.is_finite() {
                return Err(Error::Malformed("non-finite label".into()));
            }
            pool.entries.push(PoolEntry { shadow, label, metadata });
        }
        if cur.pos != bytes.len() {
            return Err(Error::Malformed(format!(
                "{} trailing bytes after the last entry",
                bytes.len() - cur.pos
            )));
        }
        Ok(pool)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        if self.pos + len > self.bytes.len() {
            return Err(Error::Malformed("pool file truncated".into()));
        }
        let out = &self.bytes[self.pos..self.pos + len];
        self.pos += len;
        Ok(out)
    }

    fn take_u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pauli::PauliLetter::{X, Y, Z};
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;

    fn ring(n: usize) -> Lattice {
        Lattice::ring(n).unwrap()
    }

    fn zero_state(n: usize) -> StateVector {
        StateVector::zero_state(&ring(n)).unwrap()
    }

    fn ghz(n: usize) -> StateVector {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let mut amps = vec![Complex64::ZERO; 1 << n];
        amps[0] = Complex64::new(s, 0.0);
        amps[(1 << n) - 1] = Complex64::new(s, 0.0);
        StateVector::from_amplitudes(&ring(n), amps).unwrap()
    }

    #[test]
    fn record_encoding_round_trips() {
        for basis in [BASIS_X, BASIS_Y, BASIS_Z] {
            for positive in [true, false] {
                let byte = encode_record(basis, positive);
                assert!(valid_record(byte));
                let (b, s) = decode_record(byte);
                assert_eq!(b, basis);
                assert_eq!(s, if positive { 1.0 } else { -1.0 });
            }
        }
        assert!(!valid_record(0b011)); // basis 3
        assert!(!valid_record(0b1000)); // high bit set
    }

    #[test]
    fn zero_state_z_shots_always_come_up_plus() {
        let shadow = sample_shadow(&zero_state(4), 300, 7).unwrap();
        let mut z_records = 0;
        for t in 0..shadow.shots() {
            for q in 0..4 {
                if shadow.basis(t, q) == BASIS_Z {
                    assert_eq!(shadow.outcome(t, q), 1.0);
                    z_records += 1;
                }
            }
        }
        assert!(z_records > 0);
    }

    #[test]
    fn bases_are_uniform_within_binomial_bounds() {
        let shadow = sample_shadow(&zero_state(4), 2000, 3).unwrap();
        let total = (4 * 2000) as f64;
        let sigma = (total * (1.0 / 3.0) * (2.0 / 3.0)).sqrt();
        for basis in [BASIS_X, BASIS_Y, BASIS_Z] {
            let count = shadow.records().iter().filter(|r| *r & 0b11 == basis).count() as f64;
            assert!(
                (count - total / 3.0).abs() <= 5.0 * sigma,
                "basis {basis}: count {count}"
            );
        }
    }

    #[test]
    fn ghz_xx_shots_are_perfectly_correlated() {
        let shadow = sample_shadow(&ghz(2), 500, 11).unwrap();
        let mut seen = 0;
        for t in 0..shadow.shots() {
            if shadow.basis(t, 0) == BASIS_X && shadow.basis(t, 1) == BASIS_X {
                assert_eq!(shadow.outcome(t, 0), shadow.outcome(t, 1));
                seen += 1;
            }
        }
        assert!(seen > 10);
    }

    #[test]
    fn sampling_is_deterministic_per_seed() {
        let state = StateVector::random_product_state(&ring(3), 5, false).unwrap();
        let a = sample_shadow(&state, 50, 9).unwrap();
        let b = sample_shadow(&state, 50, 9).unwrap();
        let c = sample_shadow(&state, 50, 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.records(), c.records());
    }

    #[test]
    fn single_shot_estimator_values() {
        let lat = ring(2);
        // One shot: qubit 0 measured Z -> +1, qubit 1 measured X -> -1.
        let records = vec![encode_record(BASIS_Z, true), encode_record(BASIS_X, false)];
        let shadow = ClassicalShadow::from_records(&lat, 1, records).unwrap();
        let z0 = PauliString::new([(0, Z)]).unwrap();
        let x0 = PauliString::new([(0, X)]).unwrap();
        let x1 = PauliString::new([(1, X)]).unwrap();
        assert_eq!(shadow.estimate_pauli(&z0).unwrap(), 3.0);
        assert_eq!(shadow.estimate_pauli(&x0).unwrap(), 0.0); // basis mismatch
        assert_eq!(shadow.estimate_pauli(&x1).unwrap(), -3.0);
        assert_eq!(shadow.estimate_pauli(&PauliString::identity()).unwrap(), 1.0);
    }

    #[test]
    fn estimates_stay_within_the_hard_range() {
        let state = StateVector::random_product_state(&ring(4), 1, false).unwrap();
        let shadow = sample_shadow(&state, 40, 2).unwrap();
        let probes = [
            PauliString::new([(0, X)]).unwrap(),
            PauliString::new([(1, Y), (3, Z)]).unwrap(),
            PauliString::new([(0, Z), (1, Z), (2, Z)]).unwrap(),
        ];
        for p in &probes {
            let est = shadow.estimate_pauli(p).unwrap();
            let bound = 3f64.powi(p.weight() as i32);
            assert!(est.abs() <= bound + 1e-12, "{p}: {est}");
        }
    }

    #[test]
    fn estimator_is_unbiased_on_exact_states() {
        let state = ghz(4);
        let shadow = sample_shadow(&state, 20_000, 13).unwrap();
        let probes = [
            PauliString::new([(0, Z)]).unwrap(),
            PauliString::new([(0, Z), (1, Z)]).unwrap(),
            PauliString::new([(0, X), (1, X)]).unwrap(),
            PauliString::new([(2, Y)]).unwrap(),
        ];
        for p in &probes {
            let exact = state.expectation(p).unwrap();
            let est = shadow.estimate_pauli(p).unwrap();
            let sigma = (3f64.powi(p.weight() as i32) / 20_000f64).sqrt();
            assert!(
                (est - exact).abs() <= 5.0 * sigma,
                "{p}: est {est}, exact {exact}"
            );
        }
    }

    #[test]
    fn polynomial_estimates_reuse_one_shadow_per_factor() {
        let state = StateVector::random_product_state(&ring(3), 21, false).unwrap();
        let shadow = sample_shadow(&state, 100, 4).unwrap();
        let z0 = PauliString::new([(0, Z)]).unwrap();
        // g = <Z0>^2 as a single two-factor term.
        let g = ObservablePolynomial::new(vec![crate::pauli::Term::new(
            1.0,
            vec![z0.clone(), z0.clone()],
        )
        .unwrap()]);
        let single = shadow.estimate_pauli(&z0).unwrap();
        assert_eq!(shadow.estimate_polynomial(&g).unwrap(), single * single);

        // A constant polynomial estimates to its constant for any shadow.
        let constant = ObservablePolynomial::new(vec![crate::pauli::Term::new(
            -0.75,
            vec![PauliString::identity()],
        )
        .unwrap()]);
        assert_eq!(shadow.estimate_polynomial(&constant).unwrap(), -0.75);
    }

    #[test]
    fn budgeted_shots_reach_the_requested_accuracy() {
        // One-sided end-to-end check: at the planned shot count the mean
        // squared estimation error over resamples sits below epsilon^2.
        let lat = ring(6);
        let state = StateVector::random_product_state(&lat, 33, false).unwrap();
        let g = ObservablePolynomial::new(vec![crate::pauli::Term::new(
            1.0,
            vec![PauliString::new([(0, Z)]).unwrap()],
        )
        .unwrap()]);
        let eps = 0.5;
        let t = crate::plan::shadow_budget(&g, eps, false).unwrap() as usize;
        let exact = g.evaluate(&state);
        let mut mse = 0.0;
        let resamples = 100;
        for rep in 0..resamples {
            let shadow = sample_shadow(&state, t, 1000 + rep).unwrap();
            let err = shadow.estimate_polynomial(&g).unwrap() - exact;
            mse += err * err;
        }
        mse /= resamples as f64;
        assert!(mse <= eps * eps, "mse {mse} at T={t}");
    }

    #[test]
    fn rdm_estimates_match_hand_values_and_exact_marginals() {
        let lat = ring(2);
        // Single shot, single site, (Z, +1) -> (3Z + I)/2 = diag(2, -1).
        let records = vec![encode_record(BASIS_Z, true), encode_record(BASIS_X, true)];
        let shadow = ClassicalShadow::from_records(&lat, 1, records).unwrap();
        let rho = shadow.estimate_rdm(&[0]).unwrap();
        assert_abs_diff_eq!(rho[(0, 0)].re, 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(rho[(1, 1)].re, -1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(rho[(0, 1)].norm(), 0.0, epsilon = 1e-15);

        // Bell pair on (0,1) of a 4-ring, ancillas in |0>: the estimated
        // 2-site RDM converges to the exact marginal.
        let state = {
            let s = std::f64::consts::FRAC_1_SQRT_2;
            let mut amps = vec![Complex64::ZERO; 16];
            amps[0b0000] = Complex64::new(s, 0.0);
            amps[0b0011] = Complex64::new(s, 0.0);
            StateVector::from_amplitudes(&ring(4), amps).unwrap()
        };
        let shadow = sample_shadow(&state, 50_000, 5).unwrap();
        let est = shadow.estimate_rdm(&[0, 1]).unwrap();
        let exact = state.reduced_density_matrix(&[0, 1]).unwrap();
        // Unit trace holds exactly shot by shot; entries within sampling noise.
        let trace: Complex64 = (0..4).map(|i| est[(i, i)]).sum();
        assert_abs_diff_eq!(trace.re, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(trace.im, 0.0, epsilon = 1e-12);
        for i in 0..4 {
            for j in 0..4 {
                assert!((est[(i, j)] - exact[(i, j)]).norm() < 0.1);
                assert!((est[(i, j)] - est[(j, i)].conj()).norm() < 1e-12);
            }
        }

        assert!(matches!(
            shadow.estimate_rdm(&[0; 9]),
            Err(Error::ResourceLimit(_))
        ));
    }

    #[test]
    fn shifted_shadows_relabel_sites() {
        let state = StateVector::random_product_state(&ring(5), 2, false).unwrap();
        let shadow = sample_shadow(&state, 30, 6).unwrap();
        let shifted = shadow.shifted(2).unwrap();
        for q in 0..5 {
            let p_new = PauliString::new([((q + 2) % 5, Y)]).unwrap();
            let p_old = PauliString::new([(q, Y)]).unwrap();
            assert_eq!(
                shifted.estimate_pauli(&p_new).unwrap(),
                shadow.estimate_pauli(&p_old).unwrap()
            );
        }
        // Shifting by n is the identity.
        assert_eq!(shadow.shifted(5).unwrap(), shadow);
    }

    #[test]
    fn pool_round_trip_is_bit_exact() {
        let lat = ring(3);
        let mut pool = ShadowPool::new(&lat, 7).unwrap();
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(4);
        for i in 0..4 {
            let records: Vec<u8> = (0..21)
                .map(|_| encode_record(rng.random_range(0..3u8), rng.random()))
                .collect();
            let shadow = ClassicalShadow::from_records(&lat, 7, records).unwrap();
            pool.push(PoolEntry {
                shadow,
                label: 0.1 + 0.2 * i as f64, // deliberately non-representable values
                metadata: serde_json::json!({"task": "test", "seed": i, "symmetric": false}),
            })
            .unwrap();
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pool.glqs");
        pool.save(&path).unwrap();
        let loaded = ShadowPool::load(&path).unwrap();
        assert_eq!(pool, loaded);
        for (a, b) in pool.entries().iter().zip(loaded.entries()) {
            assert_eq!(a.label.to_bits(), b.label.to_bits());
        }
        // Saving the loaded pool reproduces the file byte for byte.
        let path2 = dir.path().join("pool2.glqs");
        loaded.save(&path2).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
        assert_eq!(&std::fs::read(&path).unwrap()[..4], b"GLQS");
    }

    #[test]
    fn malformed_pool_files_are_rejected() {
        let lat = ring(2);
        let mut pool = ShadowPool::new(&lat, 2).unwrap();
        let shadow = ClassicalShadow::from_records(
            &lat,
            2,
            vec![0, 1, 2, encode_record(BASIS_Z, false)],
        )
        .unwrap();
        pool.push(PoolEntry { shadow, label: 1.0, metadata: serde_json::json!({}) }).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pool.glqs");
        pool.save(&path).unwrap();
        let good = std::fs::read(&path).unwrap();

        // Bad magic.
        let mut bad = good.clone();
        bad[0] = b'X';
        std::fs::write(&path, &bad).unwrap();
        assert!(matches!(ShadowPool::load(&path), Err(Error::Malformed(_))));

        // Unsupported version.
        let mut bad = good.clone();
        bad[4] = 9;
        std::fs::write(&path, &bad).unwrap();
        assert!(matches!(ShadowPool::load(&path), Err(Error::Malformed(_))));

        // Truncation.
        std::fs::write(&path, &good[..good.len() - 3]).unwrap();
        assert!(matches!(ShadowPool::load(&path), Err(Error::Malformed(_))));

        // Trailing garbage.
        let mut bad = good.clone();
        bad.push(0);
        std::fs::write(&path, &bad).unwrap();
        assert!(matches!(ShadowPool::load(&path), Err(Error::Malformed(_))));

        // Invalid record byte (basis 3) in the last entry's records.
        let mut bad = good.clone();
        let len = bad.len();
        bad[len - 1] = 0b011;
        std::fs::write(&path, &bad).unwrap();
        assert!(matches!(ShadowPool::load(&path), Err(Error::Malformed(_))));
    }

    #[test]
    fn pools_enforce_homogeneous_shapes() {
        let mut pool = ShadowPool::new(&ring(3), 5).unwrap();
        let other = ClassicalShadow::from_records(&ring(4), 5, vec![0; 20]).unwrap();
        assert!(pool
            .push(PoolEntry { shadow: other, label: 0.0, metadata: serde_json::json!({}) })
            .is_err());
        let wrong_shots = ClassicalShadow::from_records(&ring(3), 4, vec![0; 12]).unwrap();
        assert!(pool
            .push(PoolEntry { shadow: wrong_shots, label: 0.0, metadata: serde_json::json!({}) })
            .is_err());
    }
}
