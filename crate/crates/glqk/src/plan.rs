//! Analytic resource planners: shadow-shot budgets for estimating observable
//! polynomials, and end-to-end training-resource plans (sample count, shot
//! count, window width, kernel power, ridge strength) for the locality-aware
//! and dense shadow kernels in their general and translation-symmetric
//! regimes.
//!
//! The planner evaluates rigorous worst-case guarantees, so the numbers are
//! astronomically conservative; every headline quantity carries an ln-domain
//! twin so regimes remain comparable when the linear value overflows f64.

use serde::{Deserialize, Serialize};

use crate::cluster::{cluster_approximation, local_cover_number, local_factor_count};
use crate::error::{Error, Result};
use crate::kernels::KernelKind;
use crate::lattice::Lattice;
use crate::pauli::ObservablePolynomial;

/// Fixed kernel temperature in the planner formulas.
pub const PLAN_TAU: f64 = 1.0;
/// Fixed kernel bandwidth in the planner formulas.
pub const PLAN_GAMMA: f64 = 1.0;

/// Shadow shots sufficient to estimate `g` to additive error `eps` with high
/// probability, rounded up. With `clustered` the bound covers every cluster
/// configuration that distance-based splitting can produce (degree grows from
/// `p` to `m*p`), so it dominates the plain bound.
pub fn shadow_budget(g: &ObservablePolynomial, eps: f64, clustered: bool) -> Result<f64> {
    let norm1 = g.norm1();
    if g.is_empty() || norm1 == 0.0 {
        return Err(Error::InvalidArgument("shadow budget of an empty polynomial".into()));
    }
    if !(eps > 0.0 && eps < norm1) {
        return Err(Error::InvalidArgument(format!(
            "accuracy must satisfy 0 < eps < {norm1}, got {eps}"
        )));
    }
    let m = g.max_weight() as f64;
    let p = g.degree() as f64;
    let degree = if clustered { m * p } else { p };
    let tail_exponent = if clustered { m * m * p } else { m * p };
    // log[ norm1^2 * 2^(m+3) * degree * (3^tail + 1)^2 / eps^2 ], evaluated in
    // parts so large exponents cannot overflow.
    let log_arg = 2.0 * norm1.ln()
        + (m + 3.0) * std::f64::consts::LN_2
        + degree.ln()
        + 2.0 * ln_3_pow_plus_1(tail_exponent)
        - 2.0 * eps.ln();
    let t = (64.0 / (3.0 * eps * eps))
        * norm1
        * norm1
        * 12f64.powf(m)
        * degree
        * degree
        * log_arg;
    if !t.is_finite() {
        return Err(Error::NumericFailure("shadow budget overflows f64".into()));
    }
    Ok(t.ceil())
}

/// ln(3^k + 1) without forming 3^k.
fn ln_3_pow_plus_1(k: f64) -> f64 {
    let ln3 = 3f64.ln();
    if k * ln3 > 700.0 {
        k * ln3
    } else {
        (3f64.powf(k) + 1.0).ln()
    }
}

/// Which of the four guarantee regimes a plan was computed for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanRegime {
    GlqkGeneral,
    GlqkSymmetric,
    ShadowGeneral,
    ShadowSymmetric,
}

/// End-to-end training-resource plan for one kernel/symmetry regime.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResourcePlan {
    pub regime: PlanRegime,
    /// Training-set size guaranteeing prediction error `eps`; `ln_n_train` is
    /// always finite even when this overflows.
    pub n_train: f64,
    pub ln_n_train: f64,
    /// Shadow shots per training state.
    pub t_shots: f64,
    /// Cluster-splitting range backing the guarantee.
    pub delta: usize,
    /// Window width (locality-aware kernels only; reported for all regimes).
    pub zeta: usize,
    /// Kernel power for the locality-aware kernel, absent for dense kernels.
    pub h: Option<usize>,
    /// Ridge strength.
    pub lambda: f64,
    pub ln_lambda: f64,
    /// Norm-constraint budget (squared).
    pub b_squared: f64,
    pub ln_b_squared: f64,
    /// Window cover number used by the general locality-aware regime.
    pub cover_number: Option<usize>,
    /// Per-term factor count used by the symmetric dense regime.
    pub factor_count: Option<usize>,
    /// Violated assumptions and other caveats.
    pub warnings: Vec<String>,
}

/// Compute the training-resource plan for `g` on `lat` given correlation
/// length `xi`, target accuracy `eps`, kernel family and symmetry regime.
pub fn plan_resources(
    g: &ObservablePolynomial,
    lat: &Lattice,
    xi: f64,
    eps: f64,
    symmetric: bool,
    kind: KernelKind,
) -> Result<ResourcePlan> {
    let norm1 = g.norm1();
    if g.is_empty() || norm1 == 0.0 {
        return Err(Error::InvalidArgument("cannot plan for an empty polynomial".into()));
    }
    if !(xi > 0.0 && xi.is_finite()) {
        return Err(Error::InvalidArgument("correlation length must be positive".into()));
    }
    if !(eps > 0.0 && eps < norm1) {
        return Err(Error::InvalidArgument(format!(
            "accuracy must satisfy 0 < eps < {norm1}, got {eps}"
        )));
    }
    g.validate_on(lat)?;

    let m = g.max_weight();
    let p = g.degree();
    if m == 0 || p == 0 {
        return Err(Error::InvalidArgument("polynomial has no non-identity factors".into()));
    }
    let mf = m as f64;
    let pf = p as f64;
    let n = lat.num_sites() as f64;
    let d_axes = lat.num_axes() as u32;
    let mut warnings = Vec::new();

    // Splitting range from the locality guarantee at accuracy eps/2, then the
    // window width that contains any split cluster. Both are lattice
    // distances, so real-valued formulas are ceiled (which only tightens).
    let delta_real = xi * (2.0 * norm1 * mf * pf / eps).ln();
    let delta = (delta_real.ceil().max(1.0)) as usize;
    let zeta = m * delta;

    // Shot budget at accuracy eps/2 under the clustered bound.
    let t_shots = shadow_budget(g, eps / 2.0, true)?;

    let dec = cluster_approximation(g, lat, delta)?;
    if dec.is_empty() {
        return Err(Error::InvalidArgument(
            "polynomial cancels exactly under cluster merging; nothing to plan".into(),
        ));
    }

    let mp = mf * pf;
    let zeta_pow_d = (zeta as f64).powi(d_axes as i32);
    let e5 = (5.0 * PLAN_GAMMA).exp();
    if 2.0 * zeta_pow_d / PLAN_GAMMA < 1.0 {
        warnings.push("assumption 2*zeta^D >= gamma violated".into());
    }
    if mp / PLAN_TAU < 1.0 {
        warnings.push("assumption m*p >= tau violated".into());
    }

    let ln_600_eps4 = 600f64.ln() - 4.0 * eps.ln();
    let ln_norm4 = 4.0 * norm1.ln();
    let ln_b_base = 2.0 * norm1.ln();

    let (regime, ln_n, ln_b2, h, cover_number, factor_count) = match (kind, symmetric) {
        (KernelKind::GlqkPoly, false) => {
            let alpha = glqk_cover_number(&dec, lat, zeta, &mut warnings)?;
            let af = alpha as f64;
            let ln_geom = mp * (2.0 * mp * zeta_pow_d / (PLAN_TAU * PLAN_GAMMA)).ln();
            let ln_n = ln_600_eps4 + ln_norm4 + af * PLAN_TAU * e5 + ln_geom + af * n.ln();
            let ln_b2 = ln_b_base + ln_geom + af * n.ln();
            (PlanRegime::GlqkGeneral, ln_n, ln_b2, Some(alpha), Some(alpha), None)
        }
        (KernelKind::GlqkPoly, true) => {
            let ln_geom = mp * (2.0 * mp * zeta_pow_d / (PLAN_TAU * PLAN_GAMMA)).ln();
            let ln_n = ln_600_eps4 + ln_norm4 + PLAN_TAU * e5 + ln_geom;
            let ln_b2 = ln_b_base + ln_geom;
            (PlanRegime::GlqkSymmetric, ln_n, ln_b2, Some(1), None, None)
        }
        (KernelKind::Shadow, false) => {
            if 2.0 * n / PLAN_GAMMA < 1.0 {
                warnings.push("assumption 2n >= gamma violated".into());
            }
            let ln_geom = mp * (2.0 * mp * mp / (PLAN_TAU * PLAN_GAMMA)).ln();
            let ln_n = ln_600_eps4 + ln_norm4 + PLAN_TAU * e5 + ln_geom + mp * n.ln();
            let ln_b2 = ln_b_base + ln_geom + mp * n.ln();
            (PlanRegime::ShadowGeneral, ln_n, ln_b2, None, None, None)
        }
        (KernelKind::Shadow, true) => {
            if 2.0 / PLAN_GAMMA < 1.0 {
                warnings.push("assumption 2 >= gamma violated".into());
            }
            let beta = local_factor_count(&dec)?;
            let exponent = (mp - beta as f64).max(0.0);
            let ln_geom = mp * (2.0 * mp * mp / (PLAN_TAU * PLAN_GAMMA)).ln();
            let ln_n = ln_600_eps4 + ln_norm4 + PLAN_TAU * e5 + ln_geom + exponent * n.ln();
            let ln_b2 = ln_b_base + ln_geom + exponent * n.ln();
            (PlanRegime::ShadowSymmetric, ln_n, ln_b2, None, None, Some(beta))
        }
    };

    // Linear-domain twins, built as plain products so that equal-structure
    // plans at different `n` differ by exactly the n-power factor.
    let n_train = linear_n(regime, eps, norm1, mp, zeta_pow_d, mf, e5, n, cover_number, factor_count);
    let b_squared = linear_b2(regime, norm1, mp, zeta_pow_d, mf, n, cover_number, factor_count);
    let lambda = eps * eps / (6.0 * b_squared);
    let ln_lambda = 2.0 * eps.ln() - 6f64.ln() - ln_b2;

    Ok(ResourcePlan {
        regime,
        n_train,
        ln_n_train: ln_n,
        t_shots,
        delta,
        zeta,
        h,
        lambda,
        ln_lambda,
        b_squared,
        ln_b_squared: ln_b2,
        cover_number,
        factor_count,
        warnings,
    })
}

/// Cover number at the plan's window width, degrading gracefully when the
/// window outgrows the lattice (a single window then covers everything).
fn glqk_cover_number(
    dec: &crate::cluster::ClusterDecomposition,
    lat: &Lattice,
    zeta: usize,
    warnings: &mut Vec<String>,
) -> Result<usize> {
    if zeta > lat.min_side() {
        warnings.push(format!(
            "plan window width {zeta} exceeds shortest lattice side {}; treating windows as global",
            lat.min_side()
        ));
        if zeta >= lat.dims().iter().copied().max().unwrap_or(0) {
            return Ok(1);
        }
        let clamped = lat.min_side();
        let cn = local_cover_number(dec, lat, clamped)?;
        if !cn.exact {
            warnings.push("cover number is a greedy upper bound".into());
        }
        return Ok(cn.value);
    }
    let cn = local_cover_number(dec, lat, zeta)?;
    if !cn.exact {
        warnings.push("cover number is a greedy upper bound".into());
    }
    Ok(cn.value)
}

#[allow(clippy::too_many_arguments)]
fn linear_n(
    regime: PlanRegime,
    eps: f64,
    norm1: f64,
    mp: f64,
    zeta_pow_d: f64,
    m: f64,
    e5: f64,
    n: f64,
    cover: Option<usize>,
    factor: Option<usize>,
) -> f64 {
    let lead = 600.0 / eps.powi(4) * norm1.powi(4);
    // Integer n-powers via powi so that equal-structure plans at n and 2n
    // differ by an exact power of two (rounding commutes with binary scaling).
    match regime {
        PlanRegime::GlqkGeneral => {
            let a = cover.expect("general plan carries a cover number");
            lead * (a as f64 * PLAN_TAU * e5).exp()
                * (2.0 * mp * zeta_pow_d / (PLAN_TAU * PLAN_GAMMA)).powf(mp)
                * n.powi(a as i32)
        }
        PlanRegime::GlqkSymmetric => {
            lead * (PLAN_TAU * e5).exp()
                * (2.0 * mp * zeta_pow_d / (PLAN_TAU * PLAN_GAMMA)).powf(mp)
        }
        PlanRegime::ShadowGeneral => {
            let _ = m;
            lead * (PLAN_TAU * e5).exp()
                * (2.0 * mp * mp / (PLAN_TAU * PLAN_GAMMA)).powf(mp)
                * n.powi(mp as i32)
        }
        PlanRegime::ShadowSymmetric => {
            let b = factor.expect("symmetric dense plan carries a factor count");
            let ex = (mp as i32 - b as i32).max(0);
            lead * (PLAN_TAU * e5).exp()
                * (2.0 * mp * mp / (PLAN_TAU * PLAN_GAMMA)).powf(mp)
                * n.powi(ex)
        }
    }
}

fn linear_b2(
    regime: PlanRegime,
    norm1: f64,
    mp: f64,
    zeta_pow_d: f64,
    _m: f64,
    n: f64,
    cover: Option<usize>,
    factor: Option<usize>,
) -> f64 {
    let lead = norm1 * norm1;
    match regime {
        PlanRegime::GlqkGeneral => {
            let a = cover.expect("general plan carries a cover number");
            lead * (2.0 * mp * zeta_pow_d / (PLAN_TAU * PLAN_GAMMA)).powf(mp) * n.powi(a as i32)
        }
        PlanRegime::GlqkSymmetric => {
            lead * (2.0 * mp * zeta_pow_d / (PLAN_TAU * PLAN_GAMMA)).powf(mp)
        }
        PlanRegime::ShadowGeneral => {
            lead * (2.0 * mp * mp / (PLAN_TAU * PLAN_GAMMA)).powf(mp) * n.powi(mp as i32)
        }
        PlanRegime::ShadowSymmetric => {
            let b = factor.expect("symmetric dense plan carries a factor count");
            let ex = (mp as i32 - b as i32).max(0);
            lead * (2.0 * mp * mp / (PLAN_TAU * PLAN_GAMMA)).powf(mp) * n.powi(ex)
        }
    }
}
