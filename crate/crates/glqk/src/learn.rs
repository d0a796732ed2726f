//! Learning on kernel matrices: ridge regression, SVM classification via
//! SMO, cross-validated grid search, kernel PCA, and evaluation metrics.
//!
//! Every learner consumes precomputed Gram matrices, so one expensive pass
//! over shot pairs (see [`crate::kernels::gram_set`]) serves the whole
//! hyperparameter grid: raising to the outer power, slicing folds, and
//! standardizing are cheap per-cell transforms applied here.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{Error, Result};
use crate::kernels::{
    apply_power, standardize, standardize_self, submatrix, GramMatrix, GramSet, KernelConfig,
    KernelKind,
};
use crate::pauli::ObservablePolynomial;
use crate::seed;

/// Which learner a model came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    /// Kernel ridge regression.
    Krr,
    /// Soft-margin SVM classification.
    Svm,
}

/// A fitted dual model: prediction is h(x) = sum_i alpha_i k~(x_i, x) + bias.
/// For the SVM, `alpha` stores the signed dual weights alpha_i * y_i, so the
/// same expansion serves both learners.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainedModel {
    pub task: TaskKind,
    /// Regularizer: lambda for ridge regression, C for the SVM.
    pub reg: f64,
    pub config: KernelConfig,
    pub alpha: Vec<f64>,
    pub bias: f64,
    /// Raw self-kernel values of the training points, for standardizing
    /// test-against-train blocks the same way the training Gram was.
    pub train_diag: Vec<f64>,
    /// Whether the model was fitted on a standardized Gram.
    pub standardize: bool,
    /// Fit diagnostics and caller provenance (jitter used, residuals, ...).
    pub metadata: serde_json::Value,
}

impl TrainedModel {
    /// Predict from a train-major kernel block: `k_block` has one row per
    /// training point and one column per test point, in the same kernel and
    /// standardization the model was fitted with. Returns one value per
    /// column (the decision value; classification thresholds at zero).
    pub fn predict(&self, k_block: &DMatrix<f64>) -> Result<Vec<f64>> {
        if k_block.nrows() != self.alpha.len() {
            return Err(Error::InvalidArgument(format!(
                "kernel block has {} rows but the model has {} training points",
                k_block.nrows(),
                self.alpha.len()
            )));
        }
        let a = DVector::from_column_slice(&self.alpha);
        Ok((k_block.transpose() * a).iter().map(|v| v + self.bias).collect())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, format!("{json}\n"))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

fn check_square_gram(gram: &GramMatrix, y_len: usize) -> Result<usize> {
    let n = gram.values.nrows();
    if gram.values.ncols() != n {
        return Err(Error::InvalidArgument("training gram must be square".into()));
    }
    if y_len != n {
        return Err(Error::InvalidArgument(format!(
            "{y_len} labels for a {n}-point gram"
        )));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    Ok(n)
}

/// Fit kernel ridge regression: solve (K~ + 2 N lambda I) alpha = y by
/// Cholesky, escalating a diagonal jitter (1e-12, x10, up to 1e-6) if the
/// factorization fails, then polishing with iterative refinement against the
/// unjittered system until the residual is within 1e-8 * ||y||.
pub fn krr_fit(gram: &GramMatrix, y: &[f64], lambda: f64) -> Result<TrainedModel> {
    let n = check_square_gram(gram, y.len())?;
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(Error::InvalidArgument(format!("lambda must be positive, got {lambda}")));
    }
    let ridge = 2.0 * n as f64 * lambda;
    let mut a = gram.values.clone();
    for i in 0..n {
        a[(i, i)] += ridge;
    }
    let rhs = DVector::from_column_slice(y);
    let y_norm = rhs.norm();

    let mut jitter = 0.0f64;
    let mut chol: Option<Cholesky<f64, nalgebra::Dyn>> = Cholesky::new(a.clone());
    while chol.is_none() {
        jitter = if jitter == 0.0 { 1e-12 } else { jitter * 10.0 };
        if jitter > 1e-6 {
            return Err(Error::NumericFailure(
                "ridge system is not positive definite even with maximal jitter".into(),
            ));
        }
        let mut aj = a.clone();
        for i in 0..n {
            aj[(i, i)] += jitter;
        }
        chol = Cholesky::new(aj);
    }
    let chol = chol.expect("factorization succeeded above");

    let mut alpha = chol.solve(&rhs);
    let mut residual = (&rhs - &a * &alpha).norm();
    for _ in 0..5 {
        if residual <= 1e-8 * y_norm.max(f64::MIN_POSITIVE) {
            break;
        }
        let r = &rhs - &a * &alpha;
        alpha += chol.solve(&r);
        residual = (&rhs - &a * &alpha).norm();
    }
    if residual > 1e-8 * y_norm.max(f64::MIN_POSITIVE) {
        return Err(Error::NumericFailure(format!(
            "ridge solve stalled at residual {residual:.3e} (||y|| = {y_norm:.3e})"
        )));
    }

    // The norm constraint from the generalization theory is monitored, not
    // enforced: record alpha^T K alpha for downstream inspection.
    let aka = (alpha.transpose() * &gram.values * &alpha)[(0, 0)];
    let train_diag: Vec<f64> = gram.values.diagonal().iter().copied().collect();
    Ok(TrainedModel {
        task: TaskKind::Krr,
        reg: lambda,
        config: gram.config.clone(),
        alpha: alpha.iter().copied().collect(),
        bias: 0.0,
        train_diag,
        standardize: gram.standardized,
        metadata: serde_json::json!({
            "residual": residual,
            "jitter": jitter,
            "alpha_k_alpha": aka,
        }),
    })
}

/// Predictions of a ridge model on a train-major kernel block.
pub fn krr_predict(model: &TrainedModel, k_block: &DMatrix<f64>) -> Result<Vec<f64>> {
    model.predict(k_block)
}

/// Fit a soft-margin SVM by SMO on the dual, driving the maximal KKT
/// violation below 1e-3. Labels must be exactly +1/-1 with both classes
/// present. The update order is arranged so that flipping every label
/// negates the decision function bit-for-bit.
pub fn svm_fit(gram: &GramMatrix, y: &[f64], c: f64) -> Result<TrainedModel> {
    let n = check_square_gram(gram, y.len())?;
    if !(c.is_finite() && c > 0.0) {
        return Err(Error::InvalidArgument(format!("C must be positive, got {c}")));
    }
    if y.iter().any(|&v| v != 1.0 && v != -1.0) {
        return Err(Error::InvalidArgument("SVM labels must be exactly +1 or -1".into()));
    }
    if !y.contains(&1.0) || !y.contains(&-1.0) {
        return Err(Error::InvalidArgument("SVM needs both classes in the training set".into()));
    }
    let k = &gram.values;
    let tol = 5e-4; // half the contracted KKT budget of 1e-3
    let mut a = vec![0.0f64; n]; // box dual variables in [0, C]
    let mut f: Vec<f64> = y.iter().map(|&yi| -yi).collect(); // f_i = sum_j beta_j K_ij - y_i
    let max_iter = 200 * n + 100_000;
    let mut iters = 0usize;
    let (mut b_up, mut b_low);
    loop {
        // Most violating pair over the up/low index sets (strict scans, so
        // ties resolve to the lowest index deterministically).
        let mut iu = usize::MAX;
        let mut il = usize::MAX;
        for i in 0..n {
            let positive = y[i] > 0.0;
            let in_up = (positive && a[i] < c) || (!positive && a[i] > 0.0);
            let in_low = (positive && a[i] > 0.0) || (!positive && a[i] < c);
            if in_up && (iu == usize::MAX || f[i] < f[iu]) {
                iu = i;
            }
            if in_low && (il == usize::MAX || f[i] > f[il]) {
                il = i;
            }
        }
        debug_assert!(iu != usize::MAX && il != usize::MAX);
        b_up = f[iu];
        b_low = f[il];
        if b_low <= b_up + 2.0 * tol {
            break;
        }
        iters += 1;
        if iters > max_iter {
            return Err(Error::NumericFailure(format!(
                "SMO did not converge within {max_iter} iterations (gap {:.3e})",
                b_low - b_up
            )));
        }
        // Canonical index order keeps the arithmetic invariant under a
        // global label flip (which swaps the roles of iu and il).
        let (i, j) = if iu < il { (iu, il) } else { (il, iu) };
        let s = y[i] * y[j];
        let (lo, hi) = if s > 0.0 {
            let sum = a[i] + a[j];
            ((sum - c).max(0.0), sum.min(c))
        } else {
            let diff = a[j] - a[i];
            (diff.max(0.0), (c + diff).min(c))
        };
        let eta = (k[(i, i)] + k[(j, j)] - 2.0 * k[(i, j)]).max(1e-12);
        let mut aj = a[j] + y[j] * (f[i] - f[j]) / eta;
        if aj < lo {
            aj = lo;
        } else if aj > hi {
            aj = hi;
        }
        if aj == a[j] {
            // Fully clipped: no progress possible on this pair (cannot
            // happen for a violating up/low pair except at rounding limits).
            break;
        }
        let ai = a[i] + s * (a[j] - aj);
        let dbi = y[i] * (ai - a[i]);
        let dbj = y[j] * (aj - a[j]);
        for t in 0..n {
            f[t] += dbi * k[(i, t)] + dbj * k[(j, t)];
        }
        a[i] = ai;
        a[j] = aj;
    }

    // Bias from on-margin support vectors when there are any; otherwise the
    // midpoint of the violation interval.
    let margin: Vec<usize> = (0..n)
        .filter(|&i| a[i] > 1e-8 * c && a[i] < c * (1.0 - 1e-8))
        .collect();
    let bias = if margin.is_empty() {
        -(b_up + b_low) / 2.0
    } else {
        -margin.iter().map(|&i| f[i]).sum::<f64>() / margin.len() as f64
    };
    let alpha: Vec<f64> = a.iter().zip(y).map(|(&ai, &yi)| ai * yi).collect();
    let train_diag: Vec<f64> = gram.values.diagonal().iter().copied().collect();
    Ok(TrainedModel {
        task: TaskKind::Svm,
        reg: c,
        config: gram.config.clone(),
        alpha,
        bias,
        train_diag,
        standardize: gram.standardized,
        metadata: serde_json::json!({
            "kkt_gap": b_low - b_up,
            "support_vectors": a.iter().filter(|&&v| v > 1e-8 * c).count(),
            "on_margin": margin.len(),
            "iterations": iters,
        }),
    })
}

/// Decision values of an SVM on a train-major kernel block; the predicted
/// class is the sign.
pub fn svm_predict(model: &TrainedModel, k_block: &DMatrix<f64>) -> Result<Vec<f64>> {
    model.predict(k_block)
}

/// Coefficient of determination R^2 = 1 - SS_res / SS_tot.
pub fn r_squared(y_true: &[f64], y_pred: &[f64]) -> Result<f64> {
    if y_true.len() != y_pred.len() {
        return Err(Error::InvalidArgument(format!(
            "{} true values against {} predictions",
            y_true.len(),
            y_pred.len()
        )));
    }
    if y_true.len() < 2 {
        return Err(Error::UndefinedMetric("R^2 needs at least two samples".into()));
    }
    let mean = y_true.iter().sum::<f64>() / y_true.len() as f64;
    let ss_tot: f64 = y_true.iter().map(|y| (y - mean).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(Error::UndefinedMetric("R^2 is undefined for constant targets".into()));
    }
    let ss_res: f64 = y_true.iter().zip(y_pred).map(|(y, p)| (y - p).powi(2)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// Fraction of decision values whose sign matches the +-1 labels
/// (a value of exactly zero counts as +1).
pub fn accuracy(y_true: &[f64], decision_values: &[f64]) -> Result<f64> {
    if y_true.len() != decision_values.len() {
        return Err(Error::InvalidArgument(format!(
            "{} labels against {} decision values",
            y_true.len(),
            decision_values.len()
        )));
    }
    if y_true.is_empty() {
        return Err(Error::UndefinedMetric("accuracy of an empty set".into()));
    }
    let hits = y_true
        .iter()
        .zip(decision_values)
        .filter(|(&y, &v)| (v >= 0.0) == (y > 0.0))
        .count();
    Ok(hits as f64 / y_true.len() as f64)
}

/// RMS gap between labels computed from exact states and from their shadows:
/// the statistical error attributable purely to the finite shot budget.
pub fn shadow_noise_floor(
    g: &ObservablePolynomial,
    states: &[crate::qsim::StateVector],
    shadows: &[crate::shadows::ClassicalShadow],
) -> Result<f64> {
    if states.len() != shadows.len() || states.is_empty() {
        return Err(Error::InvalidArgument(
            "need one shadow per state, at least one pair".into(),
        ));
    }
    let mut sq = 0.0;
    for (state, shadow) in states.iter().zip(shadows) {
        let exact = g.evaluate(state);
        let est = g.evaluate(shadow);
        sq += (exact - est) * (exact - est);
    }
    Ok((sq / states.len() as f64).sqrt())
}

/// Fold id per sample: a seeded permutation dealt round-robin into `folds`
/// near-equal parts. With `stratify_by` set (classification), each class is
/// permuted and dealt separately so folds preserve the class balance.
pub fn make_folds(
    n: usize,
    folds: usize,
    seed_value: u64,
    stratify_by: Option<&[f64]>,
) -> Result<Vec<usize>> {
    if folds < 2 || n < folds {
        return Err(Error::InvalidArgument(format!(
            "cannot split {n} samples into {folds} folds"
        )));
    }
    if let Some(labels) = stratify_by {
        if labels.len() != n {
            return Err(Error::InvalidArgument("stratification labels do not match n".into()));
        }
    }
    let mut rng = seed::stream_rng(seed_value, seed::STREAM_CV, 0);
    let mut assignment = vec![0usize; n];
    let mut deal = 0usize;
    let groups: Vec<Vec<usize>> = match stratify_by {
        None => vec![(0..n).collect()],
        Some(labels) => {
            // Classes in ascending label order; members in index order.
            let mut values: Vec<f64> = labels.to_vec();
            values.sort_by(f64::total_cmp);
            values.dedup();
            values
                .iter()
                .map(|&v| (0..n).filter(|&i| labels[i] == v).collect())
                .collect()
        }
    };
    for mut group in groups {
        // Fisher-Yates, one uniform draw per position.
        for i in (1..group.len()).rev() {
            let j = rng.random_range(0..=i);
            group.swap(i, j);
        }
        for idx in group {
            assignment[idx] = deal % folds;
            deal += 1;
        }
    }
    Ok(assignment)
}

/// Hyperparameter grids for cross-validation. Defaults follow the
/// experimental protocol: a nine-decade ridge grid, outer powers {1, 2},
/// window widths {2, 4, 6}, and SVM box constraints {0.1, 1, 10}.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchGrids {
    #[serde(default = "default_lambdas")]
    pub lambdas: Vec<f64>,
    #[serde(default = "default_hs")]
    pub hs: Vec<usize>,
    #[serde(default = "default_zetas")]
    pub zetas: Vec<usize>,
    #[serde(default = "default_cs")]
    pub cs: Vec<f64>,
}

fn default_lambdas() -> Vec<f64> {
    vec![1e-4, 1e-3, 1e-2, 1e-1, 1.0, 10.0, 100.0, 1000.0, 10000.0]
}
fn default_hs() -> Vec<usize> {
    vec![1, 2]
}
fn default_zetas() -> Vec<usize> {
    vec![2, 4, 6]
}
fn default_cs() -> Vec<f64> {
    vec![0.1, 1.0, 10.0]
}

impl Default for SearchGrids {
    fn default() -> Self {
        SearchGrids {
            lambdas: default_lambdas(),
            hs: default_hs(),
            zetas: default_zetas(),
            cs: default_cs(),
        }
    }
}

/// One grid cell's cross-validation outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    /// Lambda for regression cells, C for classification cells.
    pub reg: f64,
    pub h: usize,
    /// Window width; absent for the global shadow kernel.
    pub zeta: Option<usize>,
    pub skipped: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    pub fold_scores: Vec<f64>,
    pub mean_score: Option<f64>,
}

/// Full cross-validation record: every cell's scores in canonical grid
/// order, the selected cell, and the fold assignment that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CVReport {
    pub task: TaskKind,
    pub kind: KernelKind,
    pub seed: u64,
    pub folds: usize,
    pub standardize: bool,
    pub fold_assignments: Vec<usize>,
    pub cells: Vec<CellReport>,
    /// Index into `cells` of the winner (first maximal mean score in
    /// canonical order: regularizer ascending, then h, then zeta).
    pub selected: usize,
}

impl CVReport {
    pub fn selected_cell(&self) -> &CellReport {
        &self.cells[self.selected]
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, format!("{json}\n"))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

fn sorted_dedup_f64(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

fn sorted_dedup_usize(values: &[usize]) -> Vec<usize> {
    let mut v = values.to_vec();
    v.sort_unstable();
    v.dedup();
    v
}

struct Cell {
    reg: f64,
    h: usize,
    zeta: Option<usize>,
}

/// Cross-validated grid search over precomputed base Grams.
///
/// `grams` holds the full-pool h = 1 matrices: one per window width for the
/// windowed kernel (cells whose width has no base matrix are skipped and
/// marked), or the `shadow` matrix for the global kernel, whose grid is the
/// regularizer alone. Scores are R^2 for regression and accuracy for
/// classification; the returned model is refitted on all samples at the
/// selected cell.
#[allow(clippy::too_many_arguments)]
pub fn grid_search_cv(
    grams: &GramSet,
    kind: KernelKind,
    labels: &[f64],
    task: TaskKind,
    grids: &SearchGrids,
    folds: usize,
    seed_value: u64,
    standardize_grams: bool,
) -> Result<(CVReport, TrainedModel)> {
    let (n, ncols) = grams.size();
    if n != ncols || n == 0 {
        return Err(Error::InvalidArgument("grid search needs a square pool gram".into()));
    }
    if labels.len() != n {
        return Err(Error::InvalidArgument(format!("{} labels for {n} samples", labels.len())));
    }
    if kind == KernelKind::Shadow && grams.shadow.is_none() {
        return Err(Error::InvalidArgument("gram set has no shadow-kernel matrix".into()));
    }

    let regs = sorted_dedup_f64(match task {
        TaskKind::Krr => &grids.lambdas,
        TaskKind::Svm => &grids.cs,
    });
    if regs.is_empty() {
        return Err(Error::InvalidArgument("empty regularizer grid".into()));
    }
    let (hs, zetas): (Vec<usize>, Vec<Option<usize>>) = match kind {
        KernelKind::GlqkPoly => (
            sorted_dedup_usize(&grids.hs),
            sorted_dedup_usize(&grids.zetas).into_iter().map(Some).collect(),
        ),
        KernelKind::Shadow => (vec![1], vec![None]),
    };
    if hs.is_empty() || zetas.is_empty() {
        return Err(Error::InvalidArgument("empty h or zeta grid".into()));
    }

    let stratify = (task == TaskKind::Svm).then_some(labels);
    let assignment = make_folds(n, folds, seed_value, stratify)?;
    let fold_indices: Vec<(Vec<usize>, Vec<usize>)> = (0..folds)
        .map(|f| {
            let val: Vec<usize> = (0..n).filter(|&i| assignment[i] == f).collect();
            let train: Vec<usize> = (0..n).filter(|&i| assignment[i] != f).collect();
            (train, val)
        })
        .collect();

    // Canonical cell order: regularizer ascending, then h, then zeta.
    let mut cells = Vec::new();
    for &reg in &regs {
        for &h in &hs {
            for &zeta in &zetas {
                cells.push(Cell { reg, h, zeta });
            }
        }
    }

    let config_for = |cell: &Cell| match cell.zeta {
        Some(z) => KernelConfig::glqk(grams.tau, grams.gamma, cell.h, z),
        None => KernelConfig::shadow(grams.tau, grams.gamma),
    };
    let base_for = |cell: &Cell| -> Option<&DMatrix<f64>> {
        match cell.zeta {
            Some(z) => grams.bases.get(&z),
            None => grams.shadow.as_ref(),
        }
    };

    let reports: Vec<CellReport> = cells
        .par_iter()
        .map(|cell| -> Result<CellReport> {
            let base = match base_for(cell) {
                Some(b) => b,
                None => {
                    return Ok(CellReport {
                        reg: cell.reg,
                        h: cell.h,
                        zeta: cell.zeta,
                        skipped: true,
                        reason: Some("window width unavailable on this lattice".into()),
                        fold_scores: Vec::new(),
                        mean_score: None,
                    })
                }
            };
            let powered = apply_power(base, cell.h);
            let config = config_for(cell);
            let mut fold_scores = Vec::with_capacity(folds);
            for (train, val) in &fold_indices {
                let score = score_fold(
                    &powered, &config, labels, train, val, task, cell.reg, standardize_grams,
                )?;
                fold_scores.push(score);
            }
            let mean = fold_scores.iter().sum::<f64>() / fold_scores.len() as f64;
            Ok(CellReport {
                reg: cell.reg,
                h: cell.h,
                zeta: cell.zeta,
                skipped: false,
                reason: None,
                fold_scores,
                mean_score: Some(mean),
            })
        })
        .collect::<Result<_>>()?;

    // First maximal live cell in canonical order.
    let mut selected = None;
    for (i, r) in reports.iter().enumerate() {
        if let Some(score) = r.mean_score {
            if selected.is_none_or(|s: usize| {
                score > reports[s].mean_score.expect("selected cell has a score")
            }) {
                selected = Some(i);
            }
        }
    }
    let selected =
        selected.ok_or_else(|| Error::InvalidArgument("every grid cell was skipped".into()))?;

    // Refit on the full pool at the winning cell.
    let win = &cells[selected];
    let base = base_for(win).expect("winner was not skipped");
    let powered = apply_power(base, win.h);
    let config = config_for(win);
    let raw_diag: Vec<f64> = powered.diagonal().iter().copied().collect();
    let full = GramMatrix { values: powered, config, standardized: false };
    let fit_gram = if standardize_grams { standardize_self(&full)? } else { full };
    let mut model = match task {
        TaskKind::Krr => krr_fit(&fit_gram, labels, win.reg)?,
        TaskKind::Svm => svm_fit(&fit_gram, labels, win.reg)?,
    };
    model.train_diag = raw_diag;
    model.metadata["cv_seed"] = serde_json::json!(seed_value);

    let report = CVReport {
        task,
        kind,
        seed: seed_value,
        folds,
        standardize: standardize_grams,
        fold_assignments: assignment,
        cells: reports,
        selected,
    };
    Ok((report, model))
}

#[allow(clippy::too_many_arguments)]
fn score_fold(
    powered: &DMatrix<f64>,
    config: &KernelConfig,
    labels: &[f64],
    train: &[usize],
    val: &[usize],
    task: TaskKind,
    reg: f64,
    standardize_grams: bool,
) -> Result<f64> {
    let k_train_raw = GramMatrix {
        values: submatrix(powered, train, train),
        config: config.clone(),
        standardized: false,
    };
    let train_diag: Vec<f64> = k_train_raw.values.diagonal().iter().copied().collect();
    let k_train = if standardize_grams {
        standardize_self(&k_train_raw)?
    } else {
        k_train_raw
    };
    let y_train: Vec<f64> = train.iter().map(|&i| labels[i]).collect();
    let y_val: Vec<f64> = val.iter().map(|&i| labels[i]).collect();
    let model = match task {
        TaskKind::Krr => krr_fit(&k_train, &y_train, reg)?,
        TaskKind::Svm => svm_fit(&k_train, &y_train, reg)?,
    };
    let block_raw = GramMatrix {
        values: submatrix(powered, train, val),
        config: config.clone(),
        standardized: false,
    };
    let block = if standardize_grams {
        let val_diag: Vec<f64> = val.iter().map(|&i| powered[(i, i)]).collect();
        standardize(&block_raw, &train_diag, &val_diag)?
    } else {
        block_raw
    };
    let pred = model.predict(&block.values)?;
    match task {
        TaskKind::Krr => r_squared(&y_val, &pred),
        TaskKind::Svm => accuracy(&y_val, &pred),
    }
}

/// Kernel PCA embedding: centered Gram, top eigenpairs, coordinates scaled
/// by sqrt(eigenvalue) with each component's sign fixed so its
/// largest-magnitude coordinate is positive.
#[derive(Debug, Clone)]
pub struct PcaResult {
    /// N x `available` coordinates.
    pub coords: DMatrix<f64>,
    /// Eigenvalues of the centered Gram for the returned components.
    pub eigenvalues: Vec<f64>,
    pub requested: usize,
    /// Number of components actually returned (positive eigenvalues only).
    pub available: usize,
}

impl PcaResult {
    pub fn truncated(&self) -> bool {
        self.available < self.requested
    }
}

/// Principal components of a symmetric kernel matrix.
pub fn kernel_pca(gram: &GramMatrix, components: usize) -> Result<PcaResult> {
    let n = gram.values.nrows();
    if gram.values.ncols() != n || n == 0 {
        return Err(Error::InvalidArgument("kernel PCA needs a nonempty square gram".into()));
    }
    if components == 0 {
        return Err(Error::InvalidArgument("requested zero components".into()));
    }
    let asym = (&gram.values - gram.values.transpose()).abs().max();
    let scale = gram.values.abs().max().max(1.0);
    if asym > 1e-9 * scale {
        return Err(Error::InvalidArgument(format!(
            "kernel PCA needs a symmetric gram (asymmetry {asym:.3e})"
        )));
    }

    // Double centering: Kc = (I - 1/n) K (I - 1/n).
    let row_means: Vec<f64> = (0..n)
        .map(|i| gram.values.row(i).iter().sum::<f64>() / n as f64)
        .collect();
    let total_mean = row_means.iter().sum::<f64>() / n as f64;
    let centered = DMatrix::from_fn(n, n, |i, j| {
        gram.values[(i, j)] - row_means[i] - row_means[j] + total_mean
    });

    let eig = SymmetricEigen::new(centered);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let tol = 1e-12 * scale;
    let kept: Vec<usize> = order
        .into_iter()
        .filter(|&i| eig.eigenvalues[i] > tol)
        .take(components)
        .collect();

    let mut coords = DMatrix::zeros(n, kept.len());
    let mut eigenvalues = Vec::with_capacity(kept.len());
    for (c, &idx) in kept.iter().enumerate() {
        let lam = eig.eigenvalues[idx];
        eigenvalues.push(lam);
        let col = eig.eigenvectors.column(idx);
        // Sign fix: largest-|coordinate| entry positive, ties to the lowest index.
        let mut arg = 0usize;
        for i in 1..n {
            if col[i].abs() > col[arg].abs() {
                arg = i;
            }
        }
        let sign = if col[arg] < 0.0 { -1.0 } else { 1.0 };
        let s = lam.sqrt() * sign;
        for i in 0..n {
            coords[(i, c)] = s * col[i];
        }
    }
    Ok(PcaResult { coords, eigenvalues, requested: components, available: kept.len() })
}
