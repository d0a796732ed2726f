//! Krylov-subspace time evolution and Lanczos ground states.
//!
//! Both routines build an orthonormal Lanczos basis with full
//! reorthogonalization (the subspaces are at most [`KRYLOV_DIM`] wide, so the
//! extra dot products are cheap and keep the basis orthogonal to machine
//! precision) and diagonalize the small tridiagonal projection with a dense
//! symmetric eigensolver.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::seed;
use super::ham::BondHamiltonian;
use super::StateVector;

/// Maximum Krylov subspace dimension per step.
pub const KRYLOV_DIM: usize = 30;
/// Per-step error budget for adaptive substepping.
const STEP_TOL: f64 = 1e-12;
/// Residual tolerance for ground-state convergence.
const GROUND_TOL: f64 = 1e-8;

fn inner(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

fn norm(a: &[Complex64]) -> f64 {
    a.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

struct LanczosBasis {
    vectors: Vec<Vec<Complex64>>,
    alphas: Vec<f64>,
    betas: Vec<f64>,
    /// Norm of the residual after the final step: the weight leaking out of
    /// the subspace. Zero-ish means the Krylov space closed (exact result).
    leak: f64,
}

/// Run `m` Lanczos steps from a normalized start vector.
fn lanczos(ham: &BondHamiltonian, start: &[Complex64], m: usize) -> LanczosBasis {
    let mut vectors = vec![start.to_vec()];
    let mut alphas = Vec::new();
    let mut betas = Vec::new();
    let mut leak = 0.0;
    for j in 0..m {
        let mut w = ham.matvec(&vectors[j]);
        let alpha = inner(&vectors[j], &w).re;
        alphas.push(alpha);
        for (wi, vi) in w.iter_mut().zip(&vectors[j]) {
            *wi -= alpha * vi;
        }
        if j > 0 {
            let beta = betas[j - 1];
            for (wi, vi) in w.iter_mut().zip(&vectors[j - 1]) {
                *wi -= beta * vi;
            }
        }
        // Full reorthogonalization against the whole basis.
        for v in &vectors {
            let c = inner(v, &w);
            for (wi, vi) in w.iter_mut().zip(v) {
                *wi -= c * vi;
            }
        }
        let beta = norm(&w);
        leak = beta;
        if j + 1 == m || beta < 1e-13 * (1.0 + ham.norm_bound()) {
            break;
        }
        betas.push(beta);
        for wi in w.iter_mut() {
            *wi /= beta;
        }
        vectors.push(w);
    }
    LanczosBasis { vectors, alphas, betas, leak }
}

fn tridiagonal(alphas: &[f64], betas: &[f64]) -> DMatrix<f64> {
    let m = alphas.len();
    let mut t = DMatrix::<f64>::zeros(m, m);
    for (i, &a) in alphas.iter().enumerate() {
        t[(i, i)] = a;
    }
    for (i, &b) in betas.iter().enumerate() {
        t[(i, i + 1)] = b;
        t[(i + 1, i)] = b;
    }
    t
}

/// One Krylov propagation attempt over `dt`. Returns the unnormalized result
/// and an a-posteriori error estimate.
fn step(ham: &BondHamiltonian, amps: &[Complex64], dt: f64, m: usize) -> (Vec<Complex64>, f64) {
    let basis = lanczos(ham, amps, m);
    let width = basis.alphas.len();
    let t = tridiagonal(&basis.alphas, &basis.betas[..width.saturating_sub(1)]);
    let eig = SymmetricEigen::new(t);
    // u = Q exp(-i dt D) Q^T e_1, evaluated column by column.
    let mut u = vec![Complex64::ZERO; width];
    for k in 0..width {
        let phase = Complex64::from_polar(1.0, -dt * eig.eigenvalues[k]);
        let coeff = phase * eig.eigenvectors[(0, k)];
        for (j, uj) in u.iter_mut().enumerate() {
            *uj += eig.eigenvectors[(j, k)] * coeff;
        }
    }
    let mut out = vec![Complex64::ZERO; amps.len()];
    for (j, &uj) in u.iter().enumerate() {
        for (oi, vi) in out.iter_mut().zip(&basis.vectors[j]) {
            *oi += uj * vi;
        }
    }
    // The standard residual proxy: weight leaking out of the subspace,
    // scaled by the propagated amplitude on the last basis vector.
    let err = basis.leak * u[width - 1].norm();
    (out, err)
}

/// Propagate `state` under `exp(-i H t)` with adaptive substepping.
pub fn evolve(state: &StateVector, ham: &BondHamiltonian, t: f64) -> Result<StateVector> {
    if ham.num_qubits() != state.num_qubits() {
        return Err(Error::InvalidArgument(
            "state and Hamiltonian act on different qubit counts".into(),
        ));
    }
    if !t.is_finite() {
        return Err(Error::InvalidArgument("evolution time must be finite".into()));
    }
    if t == 0.0 {
        return Ok(state.clone());
    }
    let dim = state.amplitudes().len();
    let m = KRYLOV_DIM.min(dim);
    let mut amps = state.amplitudes().to_vec();
    let mut remaining = t;
    let mut dt = t;
    let mut steps = 0u32;
    while remaining.abs() > t.abs() * 1e-15 {
        if dt.abs() > remaining.abs() {
            dt = remaining;
        }
        let (next, err) = step(ham, &amps, dt, m);
        if err > STEP_TOL && dt.abs() > t.abs() * 1e-12 {
            dt *= 0.5;
            continue;
        }
        amps = next;
        // Renormalize: Krylov propagation is unitary up to the step error.
        let nrm = norm(&amps);
        if !(0.5..2.0).contains(&nrm) {
            return Err(Error::NumericFailure(format!(
                "propagation lost normalization (norm {nrm})"
            )));
        }
        for a in amps.iter_mut() {
            *a /= nrm;
        }
        remaining -= dt;
        if err < STEP_TOL / 100.0 {
            dt *= 2.0;
        }
        steps += 1;
        if steps > 100_000 {
            return Err(Error::NumericFailure(
                "evolution did not converge within the step budget".into(),
            ));
        }
    }
    StateVector::from_amplitudes(state.lattice(), amps)
}

/// Compute the ground state by restarted Lanczos iteration. Returns the
/// energy and the eigenvector with its global phase fixed so that the
/// largest-magnitude amplitude is real and positive.
pub fn ground_state(
    ham: &BondHamiltonian,
    lat: &crate::lattice::Lattice,
    seed_value: u64,
) -> Result<(f64, StateVector)> {
    if lat.num_sites() != ham.num_qubits() {
        return Err(Error::InvalidArgument(
            "lattice and Hamiltonian disagree on qubit count".into(),
        ));
    }
    let dim = 1usize << ham.num_qubits();
    let m = KRYLOV_DIM.min(dim);
    let mut rng = seed::stream_rng(seed_value, seed::STREAM_START, 0);
    let mut v: Vec<Complex64> = (0..dim)
        .map(|_| Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
        .collect();
    let nrm = norm(&v);
    for a in v.iter_mut() {
        *a /= nrm;
    }
    let scale = 1.0f64.max(ham.norm_bound());
    for _restart in 0..300 {
        let basis = lanczos(ham, &v, m);
        let width = basis.alphas.len();
        let t = tridiagonal(&basis.alphas, &basis.betas[..width.saturating_sub(1)]);
        let eig = SymmetricEigen::new(t);
        let mut best = 0;
        for k in 1..width {
            if eig.eigenvalues[k] < eig.eigenvalues[best] {
                best = k;
            }
        }
        let energy = eig.eigenvalues[best];
        let mut psi = vec![Complex64::ZERO; dim];
        for j in 0..width {
            let w = eig.eigenvectors[(j, best)];
            for (pi, vi) in psi.iter_mut().zip(&basis.vectors[j]) {
                *pi += w * vi;
            }
        }
        let nrm = norm(&psi);
        for a in psi.iter_mut() {
            *a /= nrm;
        }
        let h_psi = ham.matvec(&psi);
        let residual: f64 = h_psi
            .iter()
            .zip(&psi)
            .map(|(h, p)| (h - energy * p).norm_sqr())
            .sum::<f64>()
            .sqrt();
        if residual <= GROUND_TOL * scale {
            // Phase fix: rotate the largest-|amplitude| entry onto the
            // positive real axis (ties broken by lowest index).
            let mut arg = 0usize;
            for (i, a) in psi.iter().enumerate() {
                if a.norm_sqr() > psi[arg].norm_sqr() + 1e-15 {
                    arg = i;
                }
            }
            let phase = psi[arg] / psi[arg].norm();
            for a in psi.iter_mut() {
                *a /= phase;
            }
            let state = StateVector::from_amplitudes(lat, psi)?;
            return Ok((energy, state));
        }
        v = psi;
    }
    Err(Error::NumericFailure(
        "ground-state iteration did not reach the residual tolerance".into(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::Lattice;
    use crate::pauli::{PauliLetter, PauliString};
    use crate::qsim::ham::{sample_general, sample_symmetric, HamiltonianSpec};
    use approx::assert_abs_diff_eq;

    /// Dense exp(-iHt) |psi> via scaling-and-squaring Taylor series; the slow
    /// but independent oracle for the Krylov propagator.
    fn dense_evolve(ham: &BondHamiltonian, amps: &[Complex64], t: f64) -> Vec<Complex64> {
        let dim = amps.len();
        let h = ham.dense();
        let mut a = DMatrix::<Complex64>::zeros(dim, dim);
        for i in 0..dim {
            for j in 0..dim {
                a[(i, j)] = h[(i, j)] * Complex64::new(0.0, -t);
            }
        }
        let mut k = 0u32;
        let bound = ham.norm_bound() * t.abs();
        while bound / 2f64.powi(k as i32) > 0.5 {
            k += 1;
        }
        let a = a / Complex64::new(2f64.powi(k as i32), 0.0);
        let mut u = DMatrix::<Complex64>::identity(dim, dim);
        let mut term = DMatrix::<Complex64>::identity(dim, dim);
        for order in 1..200 {
            term = (&term * &a) / Complex64::new(order as f64, 0.0);
            u += &term;
            if term.iter().map(|e| e.norm()).fold(0.0, f64::max) < 1e-18 {
                break;
            }
        }
        let mut u2 = u;
        for _ in 0..k {
            u2 = &u2 * &u2;
        }
        let v = nalgebra::DVector::from_column_slice(amps);
        (&u2 * v).iter().copied().collect()
    }

    #[test]
    fn krylov_matches_dense_taylor_propagator() {
        let lat = Lattice::ring(4).unwrap();
        let ham = BondHamiltonian::build(&sample_general(4, 5), &lat).unwrap();
        let psi = StateVector::random_product_state(&lat, 1, false).unwrap();
        for &t in &[0.1, 0.5, 2.0] {
            let fast = evolve(&psi, &ham, t).unwrap();
            let slow = dense_evolve(&ham, psi.amplitudes(), t);
            let ov: Complex64 = fast
                .amplitudes()
                .iter()
                .zip(&slow)
                .map(|(a, b)| a.conj() * b)
                .sum();
            assert!(ov.norm_sqr() > 1.0 - 1e-10, "t={t}: fidelity {}", ov.norm_sqr());
            assert_abs_diff_eq!(fast.norm(), 1.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn evolution_preserves_energy_and_reverses() {
        let lat = Lattice::ring(6).unwrap();
        let ham = BondHamiltonian::build(&sample_symmetric(9), &lat).unwrap();
        let psi = StateVector::random_product_state(&lat, 3, false).unwrap();
        let e0 = ham.energy(psi.amplitudes());
        let fwd = evolve(&psi, &ham, 0.5).unwrap();
        assert_abs_diff_eq!(ham.energy(fwd.amplitudes()), e0, epsilon = 1e-9);
        let back = evolve(&fwd, &ham, -0.5).unwrap();
        assert!(back.fidelity(&psi) > 1.0 - 1e-9);
        assert!(evolve(&psi, &ham, 0.0).unwrap().fidelity(&psi) > 1.0 - 1e-12);
    }

    #[test]
    fn symmetric_evolution_keeps_translation_symmetry() {
        let lat = Lattice::ring(6).unwrap();
        let sym = BondHamiltonian::build(&sample_symmetric(4), &lat).unwrap();
        let psi = StateVector::random_product_state(&lat, 4, true).unwrap();
        let out = evolve(&psi, &sym, 0.5).unwrap();
        assert!(out.translation_symmetry_defect().unwrap() < 1e-9);

        let gen = BondHamiltonian::build(&sample_general(6, 4), &lat).unwrap();
        let out = evolve(&psi, &gen, 0.5).unwrap();
        assert!(out.translation_symmetry_defect().unwrap() > 1e-3);
    }

    #[test]
    fn decoupled_xxz_ground_state_is_a_singlet_product() {
        // At j = 0 the chain splits into n/2 independent strength-1 bonds,
        // each with ground energy -(2 + delta): singlet pairs.
        let lat = Lattice::ring(6).unwrap();
        let spec = HamiltonianSpec::XxzBondAlternating { j: 0.0, delta: 0.5 };
        let ham = BondHamiltonian::build(&spec, &lat).unwrap();
        let (e, psi) = ground_state(&ham, &lat, 17).unwrap();
        assert_abs_diff_eq!(e, -2.5 * 3.0, epsilon = 1e-8);
        // The singlet has <X_0 X_1> = -1 on every strength-1 bond.
        let p = PauliString::new([(0, PauliLetter::X), (1, PauliLetter::X)]).unwrap();
        assert_abs_diff_eq!(psi.expectation(&p).unwrap(), -1.0, epsilon = 1e-7);
    }

    #[test]
    fn ground_state_matches_dense_eigensolver() {
        let lat = Lattice::ring(6).unwrap();
        let spec = HamiltonianSpec::XxzBondAlternating { j: 0.7, delta: 0.5 };
        let ham = BondHamiltonian::build(&spec, &lat).unwrap();
        let (e, psi) = ground_state(&ham, &lat, 1).unwrap();

        // The XXZ chain is real in the computational basis; use the real
        // dense symmetric eigensolver as the oracle.
        let dense = ham.dense();
        let mut real = DMatrix::<f64>::zeros(dense.nrows(), dense.ncols());
        for i in 0..dense.nrows() {
            for j in 0..dense.ncols() {
                assert!(dense[(i, j)].im.abs() < 1e-14);
                real[(i, j)] = dense[(i, j)].re;
            }
        }
        let eig = SymmetricEigen::new(real);
        let emin = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
        assert_abs_diff_eq!(e, emin, epsilon = 1e-8);

        // Residual check: H psi = e psi.
        let h_psi = ham.matvec(psi.amplitudes());
        let res: f64 = h_psi
            .iter()
            .zip(psi.amplitudes())
            .map(|(h, p)| (h - e * p).norm_sqr())
            .sum::<f64>()
            .sqrt();
        assert!(res < 1e-7, "residual {res}");
    }

    #[test]
    fn ground_state_phase_is_deterministic() {
        let lat = Lattice::ring(4).unwrap();
        let spec = HamiltonianSpec::XxzBondAlternating { j: 0.3, delta: 0.5 };
        let ham = BondHamiltonian::build(&spec, &lat).unwrap();
        let (_, a) = ground_state(&ham, &lat, 1).unwrap();
        let (_, b) = ground_state(&ham, &lat, 2).unwrap();
        // Different start vectors, same fixed-phase eigenvector.
        for (x, y) in a.amplitudes().iter().zip(b.amplitudes()) {
            assert_abs_diff_eq!(x.re, y.re, epsilon = 1e-6);
            assert_abs_diff_eq!(x.im, y.im, epsilon = 1e-6);
        }
    }
}
