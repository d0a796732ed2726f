//! Kernel functions on classical shadows: per-qubit overlaps, the truncated
//! shadow kernel on subsystems, the windowed polynomial kernel, the global
//! shadow kernel, Gram-matrix assembly, standardization, and persistence.
//!
//! All kernels reduce to sums over shot pairs (t, t') of per-site overlap
//! classes. For each shadow pair the classes are tabulated once (T_a x T_b x n
//! bytes) and shared across every window; window products are recomputed per
//! window from class counts rather than slid incrementally, since the factors
//! can be zero or negative. Per-entry summation order is fixed so results are
//! independent of scheduling, and grouped so that swapping the two shadows or
//! cyclically relabeling both leaves values bit-identical.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{Lattice, Subsystem};
use crate::shadows::ClassicalShadow;

/// tr of two inverted snapshots on one qubit: same basis, same outcome.
pub const OVERLAP_SAME: f64 = 5.0;
/// Same basis, opposite outcomes.
pub const OVERLAP_OPPOSITE: f64 = -4.0;
/// Different bases.
pub const OVERLAP_DIFFERENT: f64 = 0.5;

const CODE_SAME: u8 = 0;
const CODE_OPPOSITE: u8 = 1;
const CODE_DIFFERENT: u8 = 2;

/// Guard on explicit feature-vector length (test plumbing, not production).
const MAX_FEATURE_LEN: usize = 20_000_000;

const GRAM_MAGIC: &[u8; 4] = b"GLQK";
const GRAM_FORMAT_VERSION: u16 = 1;

/// The two implemented kernel families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    /// Global doubly-exponential kernel on full-system shadows (baseline).
    Shadow,
    /// Mean of truncated shadow kernels over all width-zeta windows, raised
    /// to an integer power h.
    GlqkPoly,
}

impl KernelKind {
    /// Stable lowercase identifier used in file names and report rows.
    pub fn name(self) -> &'static str {
        match self {
            KernelKind::Shadow => "shadow",
            KernelKind::GlqkPoly => "glqk_poly",
        }
    }
}

/// Hyperparameters for one kernel instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    pub kind: KernelKind,
    pub tau: f64,
    pub gamma: f64,
    /// Outer power (windowed kernel only).
    #[serde(default = "default_one")]
    pub h: usize,
    /// Window width per axis (windowed kernel only).
    #[serde(default = "default_one")]
    pub zeta: usize,
}

fn default_one() -> usize {
    1
}

impl KernelConfig {
    pub fn shadow(tau: f64, gamma: f64) -> Self {
        KernelConfig { kind: KernelKind::Shadow, tau, gamma, h: 1, zeta: 1 }
    }

    pub fn glqk(tau: f64, gamma: f64, h: usize, zeta: usize) -> Self {
        KernelConfig { kind: KernelKind::GlqkPoly, tau, gamma, h, zeta }
    }

    pub fn validate(&self, lat: &Lattice) -> Result<()> {
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(Error::InvalidArgument(format!("tau must be positive, got {}", self.tau)));
        }
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "gamma must be positive, got {}",
                self.gamma
            )));
        }
        if self.kind == KernelKind::GlqkPoly {
            if self.h == 0 {
                return Err(Error::InvalidArgument("h must be at least 1".into()));
            }
            if self.zeta == 0 || self.zeta > lat.min_side() {
                return Err(Error::InvalidArgument(format!(
                    "zeta {} outside 1..={}",
                    self.zeta,
                    lat.min_side()
                )));
            }
        }
        Ok(())
    }
}

/// Overlap value tr(sigma sigma~) for two record bytes at one qubit.
pub fn qubit_overlap(rec_a: u8, rec_b: u8) -> f64 {
    match overlap_code(rec_a, rec_b) {
        CODE_SAME => OVERLAP_SAME,
        CODE_OPPOSITE => OVERLAP_OPPOSITE,
        _ => OVERLAP_DIFFERENT,
    }
}

fn overlap_code(rec_a: u8, rec_b: u8) -> u8 {
    if rec_a & 0b11 != rec_b & 0b11 {
        CODE_DIFFERENT
    } else if rec_a == rec_b {
        CODE_SAME
    } else {
        CODE_OPPOSITE
    }
}

/// 64-entry lookup from a packed record-byte pair to its overlap class.
fn code_table() -> [u8; 64] {
    let mut t = [CODE_DIFFERENT; 64];
    for a in 0..8u8 {
        for b in 0..8u8 {
            t[((a as usize) << 3) | b as usize] = overlap_code(a, b);
        }
    }
    t
}

/// x^e by left-to-right repeated multiplication (fixed rounding order, so
/// h=2 is exactly the square of the h=1 value, and so on).
fn ipow(x: f64, e: usize) -> f64 {
    let mut acc = 1.0;
    for _ in 0..e {
        acc *= x;
    }
    acc
}

/// Elementwise integer power of a matrix (the GLQK outer power h).
pub fn apply_power(m: &DMatrix<f64>, h: usize) -> DMatrix<f64> {
    m.map(|x| ipow(x, h))
}

/// Scalar integer power with the same rounding order as [`apply_power`], so
/// diagonals powered one entry at a time match the powered matrix bitwise.
pub fn int_power(x: f64, e: usize) -> f64 {
    ipow(x, e)
}

/// Extract values[rows x cols] of a matrix (pool-gram slicing).
pub fn submatrix(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
}

fn check_pair(a: &ClassicalShadow, b: &ClassicalShadow) -> Result<()> {
    if a.lattice() != b.lattice() {
        return Err(Error::InvalidArgument("shadows live on different lattices".into()));
    }
    Ok(())
}

fn check_scalars(tau: f64, gamma: f64) -> Result<()> {
    if !tau.is_finite() || !gamma.is_finite() || tau < 0.0 || gamma < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "tau and gamma must be finite and non-negative, got ({tau}, {gamma})"
        )));
    }
    Ok(())
}

/// Shot-pair iteration with a swap-invariant accumulation structure: the
/// diagonal, the upper triangle (t < t'), and the lower triangle accumulate
/// separately and combine as diag + (upper + lower). Swapping the shadows of
/// an equal-T pair exchanges the two triangle sums, which addition
/// commutes over bit-exactly.
fn summed_over_pairs<S, F>(ta: usize, tb: usize, mut state: impl FnMut() -> S, mut add: F, mut merge: impl FnMut(S, S, S) -> S) -> S
where
    F: FnMut(&mut S, usize, usize),
{
    if ta == tb {
        let mut diag = state();
        let mut upper = state();
        let mut lower = state();
        for t in 0..ta {
            add(&mut diag, t, t);
        }
        for t in 0..ta {
            for u in t + 1..ta {
                add(&mut upper, t, u);
                add(&mut lower, u, t);
            }
        }
        merge(diag, upper, lower)
    } else {
        let mut acc = state();
        for t in 0..ta {
            for u in 0..tb {
                add(&mut acc, t, u);
            }
        }
        acc
    }
}

/// The exact inner sum M of the truncated shadow kernel: the shot-pair mean
/// of per-site factor products over the subsystem. Reference (direct-product)
/// route, also used to compute analytic truncation tails in tests.
pub fn truncated_kernel_exponent(
    a: &ClassicalShadow,
    b: &ClassicalShadow,
    subsystem: &Subsystem,
    gamma: f64,
) -> Result<f64> {
    let (m, _) = exponent_with_ops(a, b, subsystem, gamma)?;
    Ok(m)
}

fn exponent_with_ops(
    a: &ClassicalShadow,
    b: &ClassicalShadow,
    subsystem: &Subsystem,
    gamma: f64,
) -> Result<(f64, u64)> {
    check_pair(a, b)?;
    check_scalars(1.0, gamma)?;
    let n = a.num_qubits();
    if subsystem.sites.is_empty() || subsystem.sites.iter().any(|&s| s >= n) {
        return Err(Error::InvalidArgument("subsystem does not fit the lattice".into()));
    }
    let c = gamma / subsystem.sites.len() as f64;
    let mut ops = 0u64;
    let sum = summed_over_pairs(
        a.shots(),
        b.shots(),
        || 0.0f64,
        |acc, t, u| {
            let ra = a.shot_row(t);
            let rb = b.shot_row(u);
            let mut prod = 1.0;
            for &s in &subsystem.sites {
                prod *= 1.0 + c * qubit_overlap(ra[s], rb[s]);
                ops += 1;
            }
            *acc += prod;
        },
        |d, u, l| d + (u + l),
    );
    Ok((sum / (a.shots() as f64 * b.shots() as f64), ops))
}

/// Truncated shadow kernel on one subsystem: exp(tau * M).
pub fn truncated_shadow_kernel(
    a: &ClassicalShadow,
    b: &ClassicalShadow,
    subsystem: &Subsystem,
    tau: f64,
    gamma: f64,
) -> Result<f64> {
    check_scalars(tau, gamma)?;
    Ok((tau * truncated_kernel_exponent(a, b, subsystem, gamma)?).exp())
}

/// As [`truncated_shadow_kernel`], also reporting the number of per-site
/// factor multiplications performed (exactly T_a * T_b * |A|), for
/// complexity assertions.
pub fn truncated_shadow_kernel_counted(
    a: &ClassicalShadow,
    b: &ClassicalShadow,
    subsystem: &Subsystem,
    tau: f64,
    gamma: f64,
) -> Result<(f64, u64)> {
    check_scalars(tau, gamma)?;
    let (m, ops) = exponent_with_ops(a, b, subsystem, gamma)?;
    Ok(((tau * m).exp(), ops))
}

/// Precomputed per-lattice machinery shared by every pair of one Gram pass.
struct GramContext {
    n: usize,
    tau: f64,
    zetas: Vec<usize>,
    /// Per zeta: one site bitmask per window (anchor-ascending), so window
    /// class counts are mask-and-popcount over a row summary of the shared
    /// code table. Site counts are capped well below the 32-bit width.
    window_masks: Vec<Vec<u32>>,
    /// Per zeta: factor-product lookup by (same-count, opposite-count).
    pow_tables: Vec<PowTable>,
    /// Full-system exp lookup for the shadow kernel, when requested.
    sk_table: Option<Vec<f64>>,
}

struct PowTable {
    stride: usize,
    values: Vec<f64>,
}

impl GramContext {
    fn new(
        lat: &Lattice,
        zetas_in: &[usize],
        include_shadow: bool,
        tau: f64,
        gamma: f64,
    ) -> Result<Self> {
        check_scalars(tau, gamma)?;
        let mut zetas = zetas_in.to_vec();
        zetas.sort_unstable();
        zetas.dedup();
        if zetas.is_empty() && !include_shadow {
            return Err(Error::InvalidArgument("no kernel requested".into()));
        }
        let n = lat.num_sites();
        if n > 32 {
            return Err(Error::ResourceLimit(format!(
                "gram computation supports at most 32 sites, lattice has {n}"
            )));
        }
        let mut window_masks = Vec::new();
        let mut pow_tables = Vec::new();
        for &zeta in &zetas {
            let subs = lat.local_subsystems(zeta)?;
            let width = subs[0].sites.len();
            let c = gamma / width as f64;
            let f = [1.0 + c * OVERLAP_SAME, 1.0 + c * OVERLAP_OPPOSITE, 1.0 + c * OVERLAP_DIFFERENT];
            let stride = width + 1;
            let mut values = vec![0.0; stride * stride];
            for n0 in 0..=width {
                for n1 in 0..=width - n0 {
                    values[n0 * stride + n1] =
                        ipow(f[0], n0) * ipow(f[1], n1) * ipow(f[2], width - n0 - n1);
                }
            }
            window_masks.push(
                subs.iter()
                    .map(|s| s.sites.iter().fold(0u32, |m, &q| m | (1 << q)))
                    .collect(),
            );
            pow_tables.push(PowTable { stride, values });
        }
        let sk_table = include_shadow.then(|| {
            let g = gamma / n as f64;
            let mut values = vec![0.0; (n + 1) * (n + 1)];
            for n0 in 0..=n {
                for n1 in 0..=n - n0 {
                    let sum = OVERLAP_SAME * n0 as f64
                        + OVERLAP_OPPOSITE * n1 as f64
                        + OVERLAP_DIFFERENT * (n - n0 - n1) as f64;
                    values[n0 * (n + 1) + n1] = (g * sum).exp();
                }
            }
            values
        });
        Ok(GramContext { n, tau, zetas, window_masks, pow_tables, sk_table })
    }
}

/// Per-pair accumulators: one sum per window per zeta, plus the global sum.
#[derive(Clone)]
struct PairAcc {
    win: Vec<Vec<f64>>,
    sk: f64,
}

/// One Gram entry: base (h = 1) windowed-kernel value per zeta, plus the
/// shadow-kernel value when requested.
fn pair_values(
    a: &ClassicalShadow,
    b: &ClassicalShadow,
    ctx: &GramContext,
    code: &[u8; 64],
) -> (Vec<f64>, Option<f64>) {
    let n = ctx.n;
    let (ta, tb) = (a.shots(), b.shots());
    // Overlap classes for every (shot, shot', qubit), built once per pair and
    // shared across all windows.
    let mut codes = vec![0u8; ta * tb * n];
    for t in 0..ta {
        let ra = a.shot_row(t);
        for u in 0..tb {
            let rb = b.shot_row(u);
            let row = &mut codes[(t * tb + u) * n..(t * tb + u + 1) * n];
            for q in 0..n {
                row[q] = code[((ra[q] as usize) << 3) | rb[q] as usize];
            }
        }
    }

    let fresh = || PairAcc {
        win: ctx.window_masks.iter().map(|w| vec![0.0; w.len()]).collect(),
        sk: 0.0,
    };
    let add = |acc: &mut PairAcc, t: usize, u: usize| {
        let row = &codes[(t * tb + u) * n..(t * tb + u + 1) * n];
        // Summarize the row as one bit per qubit and class; every window's
        // class counts then reduce to mask-and-popcount.
        let (mut m0, mut m1) = (0u32, 0u32);
        for (q, &c) in row.iter().enumerate() {
            m0 |= u32::from(c == CODE_SAME) << q;
            m1 |= u32::from(c == CODE_OPPOSITE) << q;
        }
        for (zi, masks) in ctx.window_masks.iter().enumerate() {
            let table = &ctx.pow_tables[zi];
            let sums = &mut acc.win[zi];
            for (sum, &mask) in sums.iter_mut().zip(masks) {
                let n0 = (m0 & mask).count_ones() as usize;
                let n1 = (m1 & mask).count_ones() as usize;
                *sum += table.values[n0 * table.stride + n1];
            }
        }
        if let Some(sk) = &ctx.sk_table {
            let n0 = m0.count_ones() as usize;
            let n1 = m1.count_ones() as usize;
            acc.sk += sk[n0 * (n + 1) + n1];
        }
    };
    let merge = |d: PairAcc, up: PairAcc, lo: PairAcc| {
        let mut out = d;
        for (zi, (u, l)) in up.win.iter().zip(&lo.win).enumerate() {
            for (w, (uv, lv)) in u.iter().zip(l).enumerate() {
                out.win[zi][w] += uv + lv;
            }
        }
        out.sk += up.sk + lo.sk;
        out
    };
    let total = summed_over_pairs(ta, tb, fresh, add, merge);

    let tt = ta as f64 * tb as f64;
    let bases = total
        .win
        .iter()
        .map(|sums| {
            // Per-window kernel values, sorted before averaging so the mean
            // is bit-identical under any relabeling that permutes windows
            // (cyclic shifts in particular).
            let mut vals: Vec<f64> =
                sums.iter().map(|s| (ctx.tau * (s / tt)).exp()).collect();
            vals.sort_by(f64::total_cmp);
            vals.iter().sum::<f64>() / vals.len() as f64
        })
        .collect();
    let sk = total.sk;
    let shadow = ctx.sk_table.as_ref().map(|_| (ctx.tau * (sk / tt)).exp());
    (bases, shadow)
}

/// Windowed polynomial kernel: the mean of truncated shadow kernels over all
/// width-zeta windows, raised to the integer power h.
pub fn glqk_polynomial(
    a: &ClassicalShadow,
    b: &ClassicalShadow,
    config: &KernelConfig,
) -> Result<f64> {
    if config.kind != KernelKind::GlqkPoly {
        return Err(Error::InvalidArgument("config is not a windowed-kernel config".into()));
    }
    check_pair(a, b)?;
    config.validate(a.lattice())?;
    let ctx = GramContext::new(a.lattice(), &[config.zeta], false, config.tau, config.gamma)?;
    let (bases, _) = pair_values(a, b, &ctx, &code_table());
    Ok(ipow(bases[0], config.h))
}

/// Global shadow kernel on full-system shadows.
pub fn shadow_kernel(a: &ClassicalShadow, b: &ClassicalShadow, tau: f64, gamma: f64) -> Result<f64> {
    check_pair(a, b)?;
    check_scalars(tau, gamma)?;
    let ctx = GramContext::new(a.lattice(), &[], true, tau, gamma)?;
    let (_, sk) = pair_values(a, b, &ctx, &code_table());
    Ok(sk.expect("shadow kernel was requested"))
}

/// A batch of base Gram matrices sharing one pass over shot pairs: the h = 1
/// windowed-kernel matrix for each requested zeta, and optionally the
/// shadow-kernel matrix. Raising to h and standardizing are cheap per-cell
/// transforms applied downstream.
#[derive(Debug, Clone)]
pub struct GramSet {
    pub tau: f64,
    pub gamma: f64,
    pub bases: BTreeMap<usize, DMatrix<f64>>,
    pub shadow: Option<DMatrix<f64>>,
}

impl GramSet {
    pub fn size(&self) -> (usize, usize) {
        if let Some(m) = self.bases.values().next() {
            (m.nrows(), m.ncols())
        } else if let Some(m) = &self.shadow {
            (m.nrows(), m.ncols())
        } else {
            (0, 0)
        }
    }

    /// Slice every matrix in the set down to `rows` x `cols` (pool-level
    /// caching: one big Gram pass, then cheap views per repeat or fold).
    pub fn select(&self, rows: &[usize], cols: &[usize]) -> GramSet {
        GramSet {
            tau: self.tau,
            gamma: self.gamma,
            bases: self
                .bases
                .iter()
                .map(|(&z, m)| (z, submatrix(m, rows, cols)))
                .collect(),
            shadow: self.shadow.as_ref().map(|m| submatrix(m, rows, cols)),
        }
    }
}

/// Self-kernel values k(s, s) for each shadow, computed through the same
/// pair path as [`gram`] so they agree bit-for-bit with self-gram diagonals.
pub fn self_kernel_values(
    shadows: &[&ClassicalShadow],
    config: &KernelConfig,
) -> Result<Vec<f64>> {
    check_homogeneous(shadows)?;
    config.validate(shadows[0].lattice())?;
    let (zetas, include_shadow): (Vec<usize>, bool) = match config.kind {
        KernelKind::GlqkPoly => (vec![config.zeta], false),
        KernelKind::Shadow => (Vec::new(), true),
    };
    let ctx =
        GramContext::new(shadows[0].lattice(), &zetas, include_shadow, config.tau, config.gamma)?;
    let code = code_table();
    Ok(shadows
        .par_iter()
        .map(|s| {
            let (bases, sk) = pair_values(s, s, &ctx, &code);
            match config.kind {
                KernelKind::GlqkPoly => ipow(bases[0], config.h),
                KernelKind::Shadow => sk.expect("shadow kernel was requested"),
            }
        })
        .collect())
}

fn check_homogeneous(shadows: &[&ClassicalShadow]) -> Result<()> {
    if shadows.is_empty() {
        return Err(Error::InvalidArgument("empty shadow list".into()));
    }
    let first = shadows[0];
    for s in shadows.iter().skip(1) {
        if s.lattice() != first.lattice() || s.shots() != first.shots() {
            return Err(Error::InvalidArgument(
                "gram inputs must share one lattice and shot count".into(),
            ));
        }
    }
    Ok(())
}

/// All requested base Gram matrices over one shadow list (self-gram): the
/// upper triangle is computed in parallel and mirrored.
pub fn gram_set(
    shadows: &[&ClassicalShadow],
    zetas: &[usize],
    include_shadow: bool,
    tau: f64,
    gamma: f64,
) -> Result<GramSet> {
    check_homogeneous(shadows)?;
    let ctx = GramContext::new(shadows[0].lattice(), zetas, include_shadow, tau, gamma)?;
    let code = code_table();
    let p = shadows.len();
    let pairs: Vec<(usize, usize)> =
        (0..p).flat_map(|i| (i..p).map(move |j| (i, j))).collect();
    let computed: Vec<((usize, usize), Vec<f64>, Option<f64>)> = pairs
        .par_iter()
        .map(|&(i, j)| {
            let (bases, sk) = pair_values(shadows[i], shadows[j], &ctx, &code);
            ((i, j), bases, sk)
        })
        .collect();
    let mut bases: BTreeMap<usize, DMatrix<f64>> =
        ctx.zetas.iter().map(|&z| (z, DMatrix::zeros(p, p))).collect();
    let mut shadow = include_shadow.then(|| DMatrix::zeros(p, p));
    for ((i, j), vals, sk) in computed {
        for (zi, &z) in ctx.zetas.iter().enumerate() {
            let m = bases.get_mut(&z).expect("matrix allocated for every zeta");
            m[(i, j)] = vals[zi];
            m[(j, i)] = vals[zi];
        }
        if let (Some(m), Some(v)) = (shadow.as_mut(), sk) {
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    Ok(GramSet { tau, gamma, bases, shadow })
}

/// Rectangular variant of [`gram_set`] (rows x cols, typically test x train).
pub fn gram_set_rect(
    rows: &[&ClassicalShadow],
    cols: &[&ClassicalShadow],
    zetas: &[usize],
    include_shadow: bool,
    tau: f64,
    gamma: f64,
) -> Result<GramSet> {
    let all: Vec<&ClassicalShadow> = rows.iter().chain(cols.iter()).copied().collect();
    check_homogeneous(&all)?;
    let ctx = GramContext::new(rows[0].lattice(), zetas, include_shadow, tau, gamma)?;
    let code = code_table();
    let (nr, nc) = (rows.len(), cols.len());
    let pairs: Vec<(usize, usize)> =
        (0..nr).flat_map(|i| (0..nc).map(move |j| (i, j))).collect();
    let computed: Vec<((usize, usize), Vec<f64>, Option<f64>)> = pairs
        .par_iter()
        .map(|&(i, j)| {
            let (bases, sk) = pair_values(rows[i], cols[j], &ctx, &code);
            ((i, j), bases, sk)
        })
        .collect();
    let mut bases: BTreeMap<usize, DMatrix<f64>> =
        ctx.zetas.iter().map(|&z| (z, DMatrix::zeros(nr, nc))).collect();
    let mut shadow = include_shadow.then(|| DMatrix::zeros(nr, nc));
    for ((i, j), vals, sk) in computed {
        for (zi, &z) in ctx.zetas.iter().enumerate() {
            bases.get_mut(&z).expect("matrix allocated for every zeta")[(i, j)] = vals[zi];
        }
        if let (Some(m), Some(v)) = (shadow.as_mut(), sk) {
            m[(i, j)] = v;
        }
    }
    Ok(GramSet { tau, gamma, bases, shadow })
}

/// A kernel matrix together with its provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    pub values: DMatrix<f64>,
    pub config: KernelConfig,
    pub standardized: bool,
}

/// Full kernel matrix for one configuration (self-gram, symmetric).
pub fn gram(shadows: &[&ClassicalShadow], config: &KernelConfig) -> Result<GramMatrix> {
    check_homogeneous(shadows)?;
    config.validate(shadows[0].lattice())?;
    let values = match config.kind {
        KernelKind::GlqkPoly => {
            let set = gram_set(shadows, &[config.zeta], false, config.tau, config.gamma)?;
            apply_power(&set.bases[&config.zeta], config.h)
        }
        KernelKind::Shadow => {
            let set = gram_set(shadows, &[], true, config.tau, config.gamma)?;
            set.shadow.expect("shadow kernel was requested")
        }
    };
    Ok(GramMatrix { values, config: config.clone(), standardized: false })
}

/// Rectangular kernel matrix (rows x cols) for one configuration.
pub fn gram_rect(
    rows: &[&ClassicalShadow],
    cols: &[&ClassicalShadow],
    config: &KernelConfig,
) -> Result<GramMatrix> {
    if rows.is_empty() || cols.is_empty() {
        return Err(Error::InvalidArgument("empty shadow list".into()));
    }
    config.validate(rows[0].lattice())?;
    let values = match config.kind {
        KernelKind::GlqkPoly => {
            let set =
                gram_set_rect(rows, cols, &[config.zeta], false, config.tau, config.gamma)?;
            apply_power(&set.bases[&config.zeta], config.h)
        }
        KernelKind::Shadow => {
            let set = gram_set_rect(rows, cols, &[], true, config.tau, config.gamma)?;
            set.shadow.expect("shadow kernel was requested")
        }
    };
    Ok(GramMatrix { values, config: config.clone(), standardized: false })
}

/// Standardize a kernel matrix: K~_ij = K_ij / sqrt(d_row_i * d_col_j), with
/// the diagonal of a self-gram pinned to exactly 1. Row/column diagonal
/// references come from the caller so that test-vs-train blocks reuse the
/// diagonals captured at training time.
pub fn standardize(
    gram: &GramMatrix,
    row_diag: &[f64],
    col_diag: &[f64],
) -> Result<GramMatrix> {
    let (nr, nc) = (gram.values.nrows(), gram.values.ncols());
    if row_diag.len() != nr || col_diag.len() != nc {
        return Err(Error::InvalidArgument(format!(
            "diagonal lengths ({}, {}) do not match the matrix ({nr}, {nc})",
            row_diag.len(),
            col_diag.len()
        )));
    }
    if row_diag.iter().chain(col_diag).any(|&d| !(d.is_finite() && d > 0.0)) {
        return Err(Error::NumericFailure(
            "standardization needs strictly positive diagonal values".into(),
        ));
    }
    let rs: Vec<f64> = row_diag.iter().map(|d| d.sqrt()).collect();
    let cs: Vec<f64> = col_diag.iter().map(|d| d.sqrt()).collect();
    let self_gram = nr == nc
        && row_diag == col_diag
        && (0..nr).all(|i| gram.values[(i, i)] == row_diag[i]);
    let values = DMatrix::from_fn(nr, nc, |i, j| {
        if self_gram && i == j {
            // Mathematically K_ii / sqrt(d_i d_i) = 1; pin it so floating
            // point cannot leave the diagonal a final rounding step away.
            1.0
        } else {
            (gram.values[(i, j)] / rs[i]) / cs[j]
        }
    });
    Ok(GramMatrix { values, config: gram.config.clone(), standardized: true })
}

/// Standardize a self-gram against its own diagonal.
pub fn standardize_self(gram: &GramMatrix) -> Result<GramMatrix> {
    let diag: Vec<f64> = gram.values.diagonal().iter().copied().collect();
    standardize(gram, &diag, &diag)
}

/// Persist a Gram matrix: binary blob (magic "GLQK", version, kind, tau,
/// gamma, h, zeta, rows, cols, f64 row-major values, little-endian) plus a
/// JSON sidecar `<path>.json` holding the standardized flag and caller
/// provenance.
pub fn save_gram(path: &Path, gram: &GramMatrix, provenance: &serde_json::Value) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(GRAM_MAGIC);
    out.extend_from_slice(&GRAM_FORMAT_VERSION.to_le_bytes());
    out.push(match gram.config.kind {
        KernelKind::Shadow => 0,
        KernelKind::GlqkPoly => 1,
    });
    out.extend_from_slice(&gram.config.tau.to_le_bytes());
    out.extend_from_slice(&gram.config.gamma.to_le_bytes());
    out.extend_from_slice(&(gram.config.h as u32).to_le_bytes());
    out.extend_from_slice(&(gram.config.zeta as u32).to_le_bytes());
    out.extend_from_slice(&(gram.values.nrows() as u32).to_le_bytes());
    out.extend_from_slice(&(gram.values.ncols() as u32).to_le_bytes());
    for i in 0..gram.values.nrows() {
        for j in 0..gram.values.ncols() {
            out.extend_from_slice(&gram.values[(i, j)].to_le_bytes());
        }
    }
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    file.write_all(&out)?;
    file.flush()?;
    let sidecar = serde_json::json!({
        "standardized": gram.standardized,
        "provenance": provenance,
    });
    std::fs::write(sidecar_path(path), format!("{sidecar}\n"))?;
    Ok(())
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut os = path.as_os_str().to_owned();
    os.push(".json");
    std::path::PathBuf::from(os)
}

/// Load a Gram matrix saved by [`save_gram`]; returns the matrix and the
/// caller provenance from the sidecar.
pub fn load_gram(path: &Path) -> Result<(GramMatrix, serde_json::Value)> {
    let bytes = std::fs::read(path)?;
    let need = |at: usize, len: usize| -> Result<&[u8]> {
        bytes
            .get(at..at + len)
            .ok_or_else(|| Error::Malformed("gram file truncated".into()))
    };
    if need(0, 4)? != GRAM_MAGIC {
        return Err(Error::Malformed("not a GLQK gram file (bad magic)".into()));
    }
    let version = u16::from_le_bytes(need(4, 2)?.try_into().unwrap());
    if version != GRAM_FORMAT_VERSION {
        return Err(Error::Malformed(format!("unsupported gram version {version}")));
    }
    let kind = match need(6, 1)?[0] {
        0 => KernelKind::Shadow,
        1 => KernelKind::GlqkPoly,
        k => return Err(Error::Malformed(format!("unknown kernel kind {k}"))),
    };
    let tau = f64::from_le_bytes(need(7, 8)?.try_into().unwrap());
    let gamma = f64::from_le_bytes(need(15, 8)?.try_into().unwrap());
    let h = u32::from_le_bytes(need(23, 4)?.try_into().unwrap()) as usize;
    let zeta = u32::from_le_bytes(need(27, 4)?.try_into().unwrap()) as usize;
    let rows = u32::from_le_bytes(need(31, 4)?.try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(need(35, 4)?.try_into().unwrap()) as usize;
    let data = need(39, rows * cols * 8)?;
    if bytes.len() != 39 + rows * cols * 8 {
        return Err(Error::Malformed("trailing bytes after gram values".into()));
    }
    let values = DMatrix::from_fn(rows, cols, |i, j| {
        let at = (i * cols + j) * 8;
        f64::from_le_bytes(data[at..at + 8].try_into().unwrap())
    });
    let sidecar: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(sidecar_path(path))
            .map_err(|e| Error::Malformed(format!("missing gram sidecar: {e}")))?,
    )
    .map_err(|e| Error::Malformed(format!("bad gram sidecar: {e}")))?;
    let standardized = sidecar["standardized"].as_bool().unwrap_or(false);
    let provenance = sidecar["provenance"].clone();
    Ok((
        GramMatrix {
            values,
            config: KernelConfig { kind, tau, gamma, h, zeta },
            standardized,
        },
        provenance,
    ))
}

/// Explicit truncated feature vector of the subsystem kernel, for oracle
/// comparisons in tests: phi = (+)_d sqrt(tau^d / d!) * Wbar^(x)d, where
/// Wbar is the shot-averaged direct sum over site subsets (size <= size_cap)
/// of scaled Pauli vectorizations of the inverted snapshots.
pub fn truncated_feature_oracle(
    shadow: &ClassicalShadow,
    subsystem: &Subsystem,
    tau: f64,
    gamma: f64,
    degree_cap: usize,
    size_cap: usize,
) -> Result<Vec<f64>> {
    check_scalars(tau, gamma)?;
    let k = subsystem.sites.len();
    if k == 0 || subsystem.sites.iter().any(|&s| s >= shadow.num_qubits()) {
        return Err(Error::InvalidArgument("subsystem does not fit the lattice".into()));
    }
    if k > 4 {
        return Err(Error::ResourceLimit(format!(
            "explicit feature vectors support at most 4 sites, got {k}"
        )));
    }
    if degree_cap > 5 {
        return Err(Error::ResourceLimit(format!(
            "explicit feature vectors support degree caps up to 5, got {degree_cap}"
        )));
    }
    if size_cap > k {
        return Err(Error::InvalidArgument(format!(
            "subset size cap {size_cap} exceeds the subsystem size {k}"
        )));
    }
    let base = subsystem_feature_vector(shadow, subsystem, gamma, size_cap);
    let mut total_len = 0usize;
    let mut block = 1usize;
    for _ in 0..=degree_cap {
        total_len = total_len
            .checked_add(block)
            .filter(|&l| l <= MAX_FEATURE_LEN)
            .ok_or_else(|| {
                Error::ResourceLimit("explicit feature vector would be too large".into())
            })?;
        block = block.saturating_mul(base.len());
    }
    let mut phi = Vec::with_capacity(total_len);
    let mut power: Vec<f64> = vec![1.0];
    let mut factorial = 1.0f64;
    for d in 0..=degree_cap {
        if d > 0 {
            factorial *= d as f64;
            let mut next = Vec::with_capacity(power.len() * base.len());
            for &p in &power {
                for &w in &base {
                    next.push(p * w);
                }
            }
            power = next;
        }
        let coeff = (ipow(tau, d) / factorial).sqrt();
        phi.extend(power.iter().map(|&p| coeff * p));
    }
    Ok(phi)
}

/// The shot-averaged subset feature vector Wbar whose self-inner-products
/// reproduce the truncated kernel's inner sum M.
pub fn subsystem_feature_vector(
    shadow: &ClassicalShadow,
    subsystem: &Subsystem,
    gamma: f64,
    size_cap: usize,
) -> Vec<f64> {
    let k = subsystem.sites.len();
    let c_site = (gamma / k as f64).sqrt();
    let inv_sqrt2 = std::f64::consts::FRAC_1_SQRT_2;
    // Subsets ordered by (size, bitmask); block of size 4^r per subset.
    let mut masks: Vec<u32> = (0..(1u32 << k)).filter(|m| m.count_ones() as usize <= size_cap).collect();
    masks.sort_by_key(|m| (m.count_ones(), *m));
    let total: usize = masks.iter().map(|m| 1usize << (2 * m.count_ones())).sum();
    let mut acc = vec![0.0f64; total];
    for t in 0..shadow.shots() {
        let row = shadow.shot_row(t);
        // Per-site Pauli vectorization of (3*o*W + I)/2: [I, X, Y, Z]/sqrt(2).
        let site_vecs: Vec<[f64; 4]> = subsystem
            .sites
            .iter()
            .map(|&s| {
                let (basis, sign) = crate::shadows::decode_record(row[s]);
                let mut v = [0.0; 4];
                v[0] = inv_sqrt2;
                v[1 + basis as usize] = 3.0 * sign * inv_sqrt2;
                v
            })
            .collect();
        let mut offset = 0usize;
        for &mask in &masks {
            let r = mask.count_ones() as usize;
            let members: Vec<usize> = (0..k).filter(|i| mask >> i & 1 == 1).collect();
            let coeff = ipow(c_site, r);
            let block = 1usize << (2 * r);
            for idx in 0..block {
                // Base-4 digits, first member most significant.
                let mut v = coeff;
                for (pos, &m) in members.iter().enumerate() {
                    let digit = (idx >> (2 * (r - 1 - pos))) & 0b11;
                    v *= site_vecs[m][digit];
                }
                acc[offset + idx] += v;
            }
            offset += block;
        }
    }
    let t = shadow.shots() as f64;
    for v in acc.iter_mut() {
        *v /= t;
    }
    acc
}
