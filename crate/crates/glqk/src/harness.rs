//! Batch experiment harness behind the `glqk` command-line tool: labelled
//! shadow-pool generation, the kernel-comparison experiment loop, resource
//! planning, polynomial decomposition reports, and kernel-PCA embeddings.
//!
//! Every command is a pure function of (config, input files, master seed).
//! Pool entry `i` draws its randomness from `derive_seed(master, STREAM_*, i)`;
//! experiment run `(n_idx, repeat)` keys its train/test split and fold seed
//! by `n_idx << 32 | repeat`, independently of the kernel kind, so every
//! kernel is evaluated on identical splits. All emitted files use canonical
//! ordering (JSON objects sort their keys, CSV rows follow config order), so
//! reruns with the same inputs are byte-identical.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::cluster::{
    cluster_approximation, local_cover_number, local_cover_number_greedy, local_factor_count,
};
use crate::error::{Error, Result};
use crate::kernels::{
    apply_power, gram, gram_set, int_power, standardize, standardize_self, submatrix, GramMatrix,
    GramSet, KernelConfig, KernelKind,
};
use crate::lattice::Lattice;
use crate::learn::{
    accuracy, grid_search_cv, kernel_pca, r_squared, SearchGrids, TaskKind,
};
use crate::pauli::{ObservablePolynomial, PauliString, Term};
use crate::plan::{plan_resources, PlanRegime, ResourcePlan};
use crate::qsim::{self, StateVector};
use crate::seed::{self, derive_seed, stream_rng};
use crate::shadows::{sample_shadow, ClassicalShadow, PoolEntry, ShadowPool};

/// Crate version stamped into provenance lines and report files.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

// ---------------------------------------------------------------------------
// Configuration

/// Which data-generation task a config describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskId {
    /// Regression of observable expectation values on states produced by
    /// random local dynamics from product states.
    RandomDynamics,
    /// Binary classification of bond-alternating XXZ ground-state phases.
    Qpr,
}

/// Prediction target: a named observable for regression, or the phase sign
/// (+1 for coupling ratio above the critical point, -1 below) for
/// classification.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetId {
    /// Two-site correlator X at site 0 times Y at site 1.
    G1,
    /// Product of two correlators on the same pair: (X0 X1)(Y0 Y1).
    G2,
    /// Long-range correlator X at site 0 times Y at site n/2.
    G3,
    /// Classification phase label, not a polynomial.
    Phase,
}

/// Full description of one data-generation + experiment campaign. Serialized
/// as JSON; unknown fields are rejected so config typos fail loudly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: TaskId,
    /// Ring length (number of sites).
    pub n: usize,
    /// Use the translation-symmetric dynamics family and symmetric initial
    /// states (regression task only).
    #[serde(default)]
    pub symmetric: bool,
    pub target: TargetId,
    /// Pool size generated by `generate`; experiments subsample from it.
    #[serde(default = "default_n_pool")]
    pub n_pool: usize,
    /// Measurement shots recorded per state.
    #[serde(default = "default_shots")]
    pub shots: usize,
    /// Evolution time for the regression task.
    #[serde(default = "default_t_evolve")]
    pub t_evolve: f64,
    /// XXZ anisotropy for the classification task.
    #[serde(default = "default_delta")]
    pub delta: f64,
    /// Sampling range of the XXZ coupling ratio J.
    #[serde(default = "default_j_range")]
    pub j_range: [f64; 2],
    /// Half-width of the window around the critical ratio J=1 excluded from
    /// sampling, so labels are never ambiguous.
    #[serde(default = "default_exclusion_band")]
    pub exclusion_band: f64,
    /// Width of each edge region entering the string order parameter.
    #[serde(default = "default_a_width")]
    pub a_width: usize,
    /// Training-set sizes to sweep.
    #[serde(default = "default_n_train")]
    pub n_train: Vec<usize>,
    /// Held-out test-set size per repeat.
    #[serde(default = "default_m_test")]
    pub m_test: usize,
    /// Kernel families to compare on identical splits.
    #[serde(default = "default_kernels")]
    pub kernels: Vec<KernelKind>,
    /// Hyperparameter grids for cross-validation.
    #[serde(default)]
    pub grids: SearchGrids,
    /// Independent train/test resamplings per training-set size.
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    /// Cross-validation fold count.
    #[serde(default = "default_folds")]
    pub folds: usize,
    /// Standardize kernel matrices (unit diagonal) before fitting.
    #[serde(default = "default_true")]
    pub standardize: bool,
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default = "default_tau")]
    pub gamma: f64,
    /// Pool entries embedded by the `pca` command.
    #[serde(default = "default_pca_count")]
    pub pca_count: usize,
    /// Kernel power used by the `pca` command's windowed kernel.
    #[serde(default = "default_pca_h")]
    pub pca_h: usize,
    /// Window width used by the `pca` command's windowed kernel.
    #[serde(default = "default_pca_zeta")]
    pub pca_zeta: usize,
    /// Master seed; every random draw in the pipeline derives from it.
    pub seed: u64,
}

fn default_n_pool() -> usize {
    600
}
fn default_shots() -> usize {
    500
}
fn default_t_evolve() -> f64 {
    0.5
}
fn default_delta() -> f64 {
    0.5
}
fn default_j_range() -> [f64; 2] {
    [0.1, 1.9]
}
fn default_exclusion_band() -> f64 {
    0.05
}
fn default_a_width() -> usize {
    2
}
fn default_n_train() -> Vec<usize> {
    vec![60]
}
fn default_m_test() -> usize {
    100
}
fn default_kernels() -> Vec<KernelKind> {
    vec![KernelKind::GlqkPoly, KernelKind::Shadow]
}
fn default_repeats() -> usize {
    10
}
fn default_folds() -> usize {
    5
}
fn default_true() -> bool {
    true
}
fn default_tau() -> f64 {
    1.0
}
fn default_pca_count() -> usize {
    200
}
fn default_pca_h() -> usize {
    1
}
fn default_pca_zeta() -> usize {
    2
}

impl ExperimentConfig {
    /// Read and validate a config from a JSON file.
    pub fn load(path: &Path) -> Result<Self> {
        let config: ExperimentConfig = serde_json::from_str(&fs::read_to_string(path)?)?;
        config.validate()?;
        Ok(config)
    }

    /// Reject inconsistent configs before any expensive work starts.
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::InvalidArgument("need at least two sites".into()));
        }
        if self.n > qsim::MAX_QUBITS {
            return Err(Error::InvalidArgument(format!(
                "n = {} exceeds the exact-simulation cap of {} qubits",
                self.n,
                qsim::MAX_QUBITS
            )));
        }
        match self.task {
            TaskId::RandomDynamics => {
                if self.target == TargetId::Phase {
                    return Err(Error::InvalidArgument(
                        "phase labels require the classification task".into(),
                    ));
                }
                if !(self.t_evolve.is_finite() && self.t_evolve >= 0.0) {
                    return Err(Error::InvalidArgument(
                        "evolution time must be finite and non-negative".into(),
                    ));
                }
            }
            TaskId::Qpr => {
                if self.target != TargetId::Phase {
                    return Err(Error::InvalidArgument(
                        "the classification task predicts phase labels".into(),
                    ));
                }
                if self.symmetric {
                    return Err(Error::InvalidArgument(
                        "the classification task has no symmetric variant".into(),
                    ));
                }
                if self.n % 2 != 0 {
                    return Err(Error::InvalidArgument(
                        "the bond-alternating chain needs an even number of sites".into(),
                    ));
                }
                let [lo, hi] = self.j_range;
                if !(lo.is_finite() && hi.is_finite() && 0.0 < lo && lo < hi) {
                    return Err(Error::InvalidArgument(
                        "coupling range must satisfy 0 < lo < hi".into(),
                    ));
                }
                if !(self.exclusion_band.is_finite() && self.exclusion_band >= 0.0) {
                    return Err(Error::InvalidArgument(
                        "exclusion band must be finite and non-negative".into(),
                    ));
                }
                if lo >= 1.0 - self.exclusion_band && hi <= 1.0 + self.exclusion_band {
                    return Err(Error::InvalidArgument(
                        "exclusion band covers the whole coupling range".into(),
                    ));
                }
                if !(self.delta.is_finite()) {
                    return Err(Error::InvalidArgument("anisotropy must be finite".into()));
                }
                if self.a_width == 0 || 2 * self.a_width > self.n {
                    return Err(Error::InvalidArgument(
                        "order-parameter edge regions must fit the chain".into(),
                    ));
                }
            }
        }
        if self.n_pool == 0 {
            return Err(Error::InvalidArgument("pool size must be positive".into()));
        }
        if self.shots == 0 {
            return Err(Error::InvalidArgument("shot count must be positive".into()));
        }
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(Error::InvalidArgument("tau must be positive".into()));
        }
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return Err(Error::InvalidArgument("gamma must be non-negative".into()));
        }
        if self.n_train.is_empty() {
            return Err(Error::InvalidArgument("need at least one training-set size".into()));
        }
        let mut seen_sizes = BTreeSet::new();
        for &n_tr in &self.n_train {
            if n_tr < self.folds.max(2) {
                return Err(Error::InvalidArgument(format!(
                    "training size {n_tr} is too small for {} folds",
                    self.folds
                )));
            }
            if !seen_sizes.insert(n_tr) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate training size {n_tr}"
                )));
            }
        }
        if self.m_test == 0 {
            return Err(Error::InvalidArgument("test-set size must be positive".into()));
        }
        if self.repeats == 0 {
            return Err(Error::InvalidArgument("repeat count must be positive".into()));
        }
        if self.folds < 2 {
            return Err(Error::InvalidArgument("cross-validation needs at least 2 folds".into()));
        }
        if self.kernels.is_empty() {
            return Err(Error::InvalidArgument("need at least one kernel kind".into()));
        }
        let mut seen_kernels = BTreeSet::new();
        for kernel in &self.kernels {
            if !seen_kernels.insert(kernel.name()) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate kernel kind {}",
                    kernel.name()
                )));
            }
        }
        if self.pca_count == 0 || self.pca_h == 0 || self.pca_zeta == 0 {
            return Err(Error::InvalidArgument(
                "PCA count, power, and window width must be positive".into(),
            ));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON serialization, stamped into every
    /// emitted artifact so results stay traceable to their exact config.
    pub fn sha256(&self) -> String {
        sha256_of(self).expect("config serializes")
    }

    /// Learner matching the task: ridge regression for expectation values,
    /// max-margin classification for phase labels.
    pub fn task_kind(&self) -> TaskKind {
        match self.task {
            TaskId::RandomDynamics => TaskKind::Krr,
            TaskId::Qpr => TaskKind::Svm,
        }
    }

    /// The named regression target as a polynomial on `lat`; `None` for
    /// phase-label configs, which have no polynomial target.
    pub fn target_polynomial(&self, lat: &Lattice) -> Result<Option<ObservablePolynomial>> {
        target_polynomial(self.target, lat)
    }
}

/// Build one of the named target observables on `lat`.
pub fn target_polynomial(
    target: TargetId,
    lat: &Lattice,
) -> Result<Option<ObservablePolynomial>> {
    use crate::pauli::PauliLetter::{X, Y};
    let n = lat.num_sites();
    let poly = match target {
        TargetId::Phase => return Ok(None),
        TargetId::G1 => ObservablePolynomial::new(vec![Term::new(
            1.0,
            vec![PauliString::new([(0, X), (1, Y)])?],
        )?]),
        TargetId::G2 => ObservablePolynomial::new(vec![Term::new(
            1.0,
            vec![
                PauliString::new([(0, X), (1, X)])?,
                PauliString::new([(0, Y), (1, Y)])?,
            ],
        )?]),
        TargetId::G3 => ObservablePolynomial::new(vec![Term::new(
            1.0,
            vec![PauliString::new([(0, X), (n / 2, Y)])?],
        )?]),
    };
    poly.validate_on(lat)?;
    Ok(Some(poly))
}

// ---------------------------------------------------------------------------
// Pool generation

struct GeneratedEntry {
    entry: PoolEntry,
    manifest: serde_json::Value,
}

/// Build the labelled shadow pool for `config` in memory. Returns the pool
/// and one manifest record per entry (index order); records repeat the
/// entry metadata plus the exact label.
pub fn generate_pool(config: &ExperimentConfig) -> Result<(ShadowPool, Vec<serde_json::Value>)> {
    config.validate()?;
    let lat = Lattice::ring(config.n)?;
    let target = config.target_polynomial(&lat)?;
    let generated: Vec<GeneratedEntry> = (0..config.n_pool as u64)
        .into_par_iter()
        .map(|i| generate_entry(config, &lat, target.as_ref(), i))
        .collect::<Result<_>>()?;
    let mut pool = ShadowPool::new(&lat, config.shots)?;
    let mut manifest = Vec::with_capacity(generated.len());
    for item in generated {
        manifest.push(item.manifest);
        pool.push(item.entry)?;
    }
    Ok((pool, manifest))
}

fn generate_entry(
    config: &ExperimentConfig,
    lat: &Lattice,
    target: Option<&ObservablePolynomial>,
    i: u64,
) -> Result<GeneratedEntry> {
    match config.task {
        TaskId::RandomDynamics => {
            let ham_seed = derive_seed(config.seed, seed::STREAM_HAM, i);
            let state_seed = derive_seed(config.seed, seed::STREAM_STATE, i);
            let shadow_seed = derive_seed(config.seed, seed::STREAM_SHADOW, i);
            let spec = if config.symmetric {
                qsim::sample_symmetric(ham_seed)
            } else {
                qsim::sample_general(lat.num_sites(), ham_seed)
            };
            let ham = qsim::BondHamiltonian::build(&spec, lat)?;
            let start = StateVector::random_product_state(lat, state_seed, config.symmetric)?;
            let state = qsim::evolve(&start, &ham, config.t_evolve)?;
            let g = target.expect("regression configs always carry a polynomial target");
            let label = g.evaluate(&state);
            let shadow = sample_shadow(&state, config.shots, shadow_seed)?;
            let mut metadata = json!({
                "index": i,
                "task": TaskId::RandomDynamics,
                "target": config.target,
                "symmetric": config.symmetric,
                "t_evolve": config.t_evolve,
                "ham_seed": ham_seed,
                "state_seed": state_seed,
                "shadow_seed": shadow_seed,
            });
            if config.symmetric {
                metadata["symmetry_defect"] = json!(state.translation_symmetry_defect()?);
            }
            let mut manifest = metadata.clone();
            manifest["label"] = json!(label);
            Ok(GeneratedEntry { entry: PoolEntry { shadow, label, metadata }, manifest })
        }
        TaskId::Qpr => {
            let mut j_rng = stream_rng(config.seed, seed::STREAM_HAM, i);
            let [lo, hi] = config.j_range;
            let j = loop {
                let cand: f64 = j_rng.random_range(lo..hi);
                if (cand - 1.0).abs() > config.exclusion_band {
                    break cand;
                }
            };
            let start_seed = derive_seed(config.seed, seed::STREAM_START, i);
            let disturb_seed = derive_seed(config.seed, seed::STREAM_DISTURB, i);
            let shadow_seed = derive_seed(config.seed, seed::STREAM_SHADOW, i);
            let spec = qsim::HamiltonianSpec::XxzBondAlternating { j, delta: config.delta };
            let ham = qsim::BondHamiltonian::build(&spec, lat)?;
            let (energy, mut state) = qsim::ground_state(&ham, lat, start_seed)?;
            state.disturb_inversion_symmetric(disturb_seed)?;
            let order = state.order_parameter_z(config.a_width)?;
            let label = if j > 1.0 { 1.0 } else { -1.0 };
            let shadow = sample_shadow(&state, config.shots, shadow_seed)?;
            let metadata = json!({
                "index": i,
                "task": TaskId::Qpr,
                "j": j,
                "delta": config.delta,
                "energy": energy,
                "order_parameter_z": order,
                "start_seed": start_seed,
                "disturb_seed": disturb_seed,
                "shadow_seed": shadow_seed,
            });
            let mut manifest = metadata.clone();
            manifest["label"] = json!(label);
            Ok(GeneratedEntry { entry: PoolEntry { shadow, label, metadata }, manifest })
        }
    }
}

/// Artifact paths produced by [`cmd_generate`].
#[derive(Debug, Clone)]
pub struct GenerateOutput {
    pub pool_path: PathBuf,
    pub manifest_path: PathBuf,
    pub entries: usize,
}

/// Generate the pool and write `pool.glqs` plus `manifest.json` to `out_dir`.
pub fn cmd_generate(config: &ExperimentConfig, out_dir: &Path) -> Result<GenerateOutput> {
    let (pool, entries) = generate_pool(config)?;
    fs::create_dir_all(out_dir)?;
    let pool_path = out_dir.join("pool.glqs");
    pool.save(&pool_path)?;
    let manifest = json!({
        "version": VERSION,
        "config_sha256": config.sha256(),
        "config": config,
        "lattice": pool.lattice().dims(),
        "shots": pool.shots(),
        "entries": entries,
    });
    let manifest_path = out_dir.join("manifest.json");
    fs::write(&manifest_path, format!("{}\n", serde_json::to_string_pretty(&manifest)?))?;
    Ok(GenerateOutput { pool_path, manifest_path, entries: pool.len() })
}

// ---------------------------------------------------------------------------
// Experiment loop

/// One (kernel, training size, repeat) outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub kernel: KernelKind,
    pub n_train: usize,
    pub repeat: usize,
    /// Selected regularizer (ridge strength or box constraint).
    pub reg: f64,
    pub h: usize,
    pub zeta: Option<usize>,
    /// Mean cross-validation score of the selected cell.
    pub cv_score: f64,
    /// Held-out score: R^2 for regression, accuracy for classification.
    pub test_score: f64,
    /// RMS error of the plain shadow estimate of the target over the test
    /// set (regression runs only) — the measurement noise floor any kernel
    /// method competes against.
    pub noise_floor: Option<f64>,
}

/// Mean and population standard deviation of the test scores across repeats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRecord {
    pub kernel: KernelKind,
    pub n_train: usize,
    pub repeats: usize,
    pub mean_test_score: f64,
    pub std_test_score: f64,
}

/// One held-out prediction (regression runs only; drives scatter plots).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterRecord {
    pub kernel: KernelKind,
    pub n_train: usize,
    pub repeat: usize,
    pub pool_index: usize,
    pub y_true: f64,
    pub y_pred: f64,
}

/// Full in-memory result of [`run_experiment`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentOutput {
    pub version: String,
    pub config_sha256: String,
    pub runs: Vec<RunRecord>,
    pub summaries: Vec<SummaryRecord>,
    pub scatter: Vec<ScatterRecord>,
}

struct ExperimentContext<'a> {
    config: &'a ExperimentConfig,
    pool_grams: &'a GramSet,
    labels: &'a [f64],
    /// Plain shadow estimate of the target per pool entry (regression only).
    shadow_estimates: Option<&'a [f64]>,
    task: TaskKind,
    pool_len: usize,
}

/// Run the full kernel-comparison experiment over an in-memory pool.
///
/// The Gram matrices for every requested window width (and the dense kernel,
/// if compared) are computed once over the whole pool; each run then slices
/// its train/train and train/test blocks out of them.
pub fn run_experiment(config: &ExperimentConfig, pool: &ShadowPool) -> Result<ExperimentOutput> {
    config.validate()?;
    let lat = pool.lattice().clone();
    if lat.dims() != [config.n] {
        return Err(Error::InvalidArgument(format!(
            "pool lattice {:?} does not match the configured ring of {} sites",
            lat.dims(),
            config.n
        )));
    }
    if pool.shots() != config.shots {
        return Err(Error::InvalidArgument(format!(
            "pool records {} shots per entry but the config expects {}",
            pool.shots(),
            config.shots
        )));
    }
    let max_train = *config.n_train.iter().max().expect("validated non-empty");
    if pool.len() < max_train + config.m_test {
        return Err(Error::InvalidArgument(format!(
            "pool has {} entries but the largest split needs {}",
            pool.len(),
            max_train + config.m_test
        )));
    }

    let include_glqk = config.kernels.contains(&KernelKind::GlqkPoly);
    let include_shadow = config.kernels.contains(&KernelKind::Shadow);
    let mut zetas: Vec<usize> = Vec::new();
    if include_glqk {
        zetas = config.grids.zetas.clone();
        zetas.sort_unstable();
        zetas.dedup();
        zetas.retain(|&z| z >= 1 && z <= lat.min_side());
        if zetas.is_empty() {
            return Err(Error::InvalidArgument(
                "no window width in the grid fits the lattice".into(),
            ));
        }
    }
    let shadows = pool.shadows();
    let pool_grams = gram_set(&shadows, &zetas, include_shadow, config.tau, config.gamma)?;

    let target = config.target_polynomial(&lat)?;
    let shadow_estimates: Option<Vec<f64>> =
        target.as_ref().map(|g| shadows.par_iter().map(|s| g.evaluate(*s)).collect());

    let labels = pool.labels();
    let ctx = ExperimentContext {
        config,
        pool_grams: &pool_grams,
        labels: &labels,
        shadow_estimates: shadow_estimates.as_deref(),
        task: config.task_kind(),
        pool_len: pool.len(),
    };

    struct RunSpec {
        kernel: KernelKind,
        n_idx: usize,
        repeat: usize,
    }
    let mut specs = Vec::new();
    for &kernel in &config.kernels {
        for n_idx in 0..config.n_train.len() {
            for repeat in 0..config.repeats {
                specs.push(RunSpec { kernel, n_idx, repeat });
            }
        }
    }
    let outcomes: Vec<(RunRecord, Vec<ScatterRecord>)> = specs
        .par_iter()
        .map(|spec| run_one(&ctx, spec.kernel, spec.n_idx, spec.repeat))
        .collect::<Result<_>>()?;

    let mut runs = Vec::with_capacity(outcomes.len());
    let mut scatter = Vec::new();
    for (record, points) in outcomes {
        runs.push(record);
        scatter.extend(points);
    }

    let mut summaries = Vec::new();
    for &kernel in &config.kernels {
        for &n_tr in &config.n_train {
            let scores: Vec<f64> = runs
                .iter()
                .filter(|r| r.kernel == kernel && r.n_train == n_tr)
                .map(|r| r.test_score)
                .collect();
            let count = scores.len();
            let mean = scores.iter().sum::<f64>() / count as f64;
            let var = scores.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / count as f64;
            summaries.push(SummaryRecord {
                kernel,
                n_train: n_tr,
                repeats: count,
                mean_test_score: mean,
                std_test_score: var.sqrt(),
            });
        }
    }

    Ok(ExperimentOutput {
        version: VERSION.into(),
        config_sha256: config.sha256(),
        runs,
        summaries,
        scatter,
    })
}

fn run_one(
    ctx: &ExperimentContext,
    kernel: KernelKind,
    n_idx: usize,
    repeat: usize,
) -> Result<(RunRecord, Vec<ScatterRecord>)> {
    let config = ctx.config;
    let n_tr = config.n_train[n_idx];
    let run_key = ((n_idx as u64) << 32) | repeat as u64;

    // The split depends on (n_idx, repeat) but not the kernel, so all kernel
    // kinds are scored on identical train/test partitions. Indices are
    // sorted after the draw: Gram slicing and label gathering then use one
    // canonical order.
    let mut perm: Vec<usize> = (0..ctx.pool_len).collect();
    let mut rng = stream_rng(config.seed, seed::STREAM_SPLIT, run_key);
    perm.shuffle(&mut rng);
    let mut train: Vec<usize> = perm[..n_tr].to_vec();
    let mut test: Vec<usize> = perm[n_tr..n_tr + config.m_test].to_vec();
    train.sort_unstable();
    test.sort_unstable();

    let y_train: Vec<f64> = train.iter().map(|&i| ctx.labels[i]).collect();
    let y_test: Vec<f64> = test.iter().map(|&i| ctx.labels[i]).collect();

    let cv_seed = derive_seed(config.seed, seed::STREAM_CV, run_key);
    let train_set = ctx.pool_grams.select(&train, &train);
    let (report, model) = grid_search_cv(
        &train_set,
        kernel,
        &y_train,
        ctx.task,
        &config.grids,
        config.folds,
        cv_seed,
        config.standardize,
    )?;
    let sel = report.selected_cell();

    // Train-major test block in the selected cell's kernel, standardized
    // against the same raw diagonals the refit captured.
    let base = match kernel {
        KernelKind::GlqkPoly => &ctx.pool_grams.bases[&sel.zeta.expect("windowed cell has zeta")],
        KernelKind::Shadow => ctx.pool_grams.shadow.as_ref().expect("dense matrix was built"),
    };
    let block = GramMatrix {
        values: apply_power(&submatrix(base, &train, &test), sel.h),
        config: model.config.clone(),
        standardized: false,
    };
    let block = if config.standardize {
        let col_diag: Vec<f64> =
            test.iter().map(|&i| int_power(base[(i, i)], sel.h)).collect();
        standardize(&block, &model.train_diag, &col_diag)?
    } else {
        block
    };
    let pred = model.predict(&block.values)?;
    let test_score = match ctx.task {
        TaskKind::Krr => r_squared(&y_test, &pred)?,
        TaskKind::Svm => accuracy(&y_test, &pred)?,
    };

    let noise_floor = ctx.shadow_estimates.map(|est| {
        let sq: f64 = test
            .iter()
            .map(|&i| {
                let e = ctx.labels[i] - est[i];
                e * e
            })
            .sum();
        (sq / test.len() as f64).sqrt()
    });

    let scatter: Vec<ScatterRecord> = if ctx.task == TaskKind::Krr {
        test.iter()
            .zip(&pred)
            .map(|(&i, &y_pred)| ScatterRecord {
                kernel,
                n_train: n_tr,
                repeat,
                pool_index: i,
                y_true: ctx.labels[i],
                y_pred,
            })
            .collect()
    } else {
        Vec::new()
    };

    let record = RunRecord {
        kernel,
        n_train: n_tr,
        repeat,
        reg: sel.reg,
        h: sel.h,
        zeta: sel.zeta,
        cv_score: sel.mean_score.expect("selected cell was scored"),
        test_score,
        noise_floor,
    };
    Ok((record, scatter))
}

/// Load a pool, run the experiment, and write `results.csv`, `summary.csv`,
/// `scatter.csv` (regression only), and `experiment.json` to `out_dir`.
pub fn cmd_experiment(
    config: &ExperimentConfig,
    pool_path: &Path,
    out_dir: &Path,
) -> Result<ExperimentOutput> {
    let pool = ShadowPool::load(pool_path)?;
    let output = run_experiment(config, &pool)?;
    write_experiment_files(config, &output, out_dir)?;
    Ok(output)
}

/// Write the experiment artifacts for an already-computed output.
pub fn write_experiment_files(
    config: &ExperimentConfig,
    output: &ExperimentOutput,
    out_dir: &Path,
) -> Result<()> {
    fs::create_dir_all(out_dir)?;
    let provenance = provenance_line(&output.config_sha256);

    let rows: Vec<String> = output
        .runs
        .iter()
        .map(|r| {
            format!(
                "{},{},{},{},{},{},{},{},{}",
                r.kernel.name(),
                r.n_train,
                r.repeat,
                fmt_f64(r.reg),
                r.h,
                r.zeta.map_or(String::new(), |z| z.to_string()),
                fmt_f64(r.cv_score),
                fmt_f64(r.test_score),
                r.noise_floor.map_or(String::new(), fmt_f64),
            )
        })
        .collect();
    write_csv(
        &out_dir.join("results.csv"),
        &provenance,
        "kernel,n_train,repeat,reg,h,zeta,cv_score,test_score,noise_floor",
        &rows,
    )?;

    let rows: Vec<String> = output
        .summaries
        .iter()
        .map(|s| {
            format!(
                "{},{},{},{},{}",
                s.kernel.name(),
                s.n_train,
                s.repeats,
                fmt_f64(s.mean_test_score),
                fmt_f64(s.std_test_score),
            )
        })
        .collect();
    write_csv(
        &out_dir.join("summary.csv"),
        &provenance,
        "kernel,n_train,repeats,mean_test_score,std_test_score",
        &rows,
    )?;

    if config.task_kind() == TaskKind::Krr {
        let rows: Vec<String> = output
            .scatter
            .iter()
            .map(|p| {
                format!(
                    "{},{},{},{},{},{}",
                    p.kernel.name(),
                    p.n_train,
                    p.repeat,
                    p.pool_index,
                    fmt_f64(p.y_true),
                    fmt_f64(p.y_pred),
                )
            })
            .collect();
        write_csv(
            &out_dir.join("scatter.csv"),
            &provenance,
            "kernel,n_train,repeat,pool_index,y_true,y_pred",
            &rows,
        )?;
    }

    fs::write(
        out_dir.join("experiment.json"),
        format!("{}\n", serde_json::to_string_pretty(output)?),
    )?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Resource planning

/// Input for [`cmd_plan`]: a polynomial given either as a named target or as
/// inline JSON in the polynomial exchange format, plus the correlation
/// length and the target accuracy.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanConfig {
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<TargetId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub polynomial: Option<serde_json::Value>,
    pub xi: f64,
    pub epsilon: f64,
}

impl PlanConfig {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

/// Resource plans for all four kernel/symmetry regimes side by side.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlanTable {
    pub version: String,
    pub config_sha256: String,
    pub plans: Vec<ResourcePlan>,
}

fn regime_label(regime: PlanRegime) -> &'static str {
    match regime {
        PlanRegime::GlqkGeneral => "glqk/general",
        PlanRegime::GlqkSymmetric => "glqk/symmetric",
        PlanRegime::ShadowGeneral => "shadow/general",
        PlanRegime::ShadowSymmetric => "shadow/symmetric",
    }
}

impl PlanTable {
    /// Fixed-width text table: one column per regime, one row per quantity.
    pub fn render(&self) -> String {
        let mut columns: Vec<Vec<String>> = vec![vec![
            "regime".into(),
            "ln N".into(),
            "N".into(),
            "T".into(),
            "delta".into(),
            "zeta".into(),
            "h".into(),
            "lambda".into(),
            "ln B^2".into(),
            "alpha_g".into(),
            "beta_g".into(),
            "warnings".into(),
        ]];
        for p in &self.plans {
            columns.push(vec![
                regime_label(p.regime).into(),
                format!("{:.4}", p.ln_n_train),
                format!("{:.4e}", p.n_train),
                format!("{:.4e}", p.t_shots),
                p.delta.to_string(),
                p.zeta.to_string(),
                p.h.map_or("-".into(), |h| h.to_string()),
                format!("{:.4e}", p.lambda),
                format!("{:.4}", p.ln_b_squared),
                p.cover_number.map_or("-".into(), |a| a.to_string()),
                p.factor_count.map_or("-".into(), |b| b.to_string()),
                p.warnings.len().to_string(),
            ]);
        }
        let widths: Vec<usize> = columns
            .iter()
            .map(|col| col.iter().map(String::len).max().unwrap_or(0))
            .collect();
        let rows = columns[0].len();
        let mut text = String::new();
        for r in 0..rows {
            for (c, col) in columns.iter().enumerate() {
                if c > 0 {
                    text.push_str("  ");
                }
                let _ = write!(text, "{:>width$}", col[r], width = widths[c]);
            }
            text.push('\n');
        }
        for p in &self.plans {
            for w in &p.warnings {
                let _ = writeln!(text, "warning [{}]: {w}", regime_label(p.regime));
            }
        }
        text
    }
}

/// Plan training resources for the polynomial in all four regimes and write
/// `plan.json` + `plan.txt` to `out_dir`.
pub fn cmd_plan(config: &PlanConfig, out_dir: &Path) -> Result<PlanTable> {
    let (lat, poly) = resolve_polynomial(config.n, config.target, config.polynomial.as_ref())?;
    let regimes = [
        (KernelKind::GlqkPoly, false),
        (KernelKind::GlqkPoly, true),
        (KernelKind::Shadow, false),
        (KernelKind::Shadow, true),
    ];
    let plans = regimes
        .iter()
        .map(|&(kind, symmetric)| {
            plan_resources(&poly, &lat, config.xi, config.epsilon, symmetric, kind)
        })
        .collect::<Result<Vec<_>>>()?;
    let table =
        PlanTable { version: VERSION.into(), config_sha256: sha256_of(config)?, plans };
    fs::create_dir_all(out_dir)?;
    fs::write(
        out_dir.join("plan.json"),
        format!("{}\n", serde_json::to_string_pretty(&table)?),
    )?;
    fs::write(out_dir.join("plan.txt"), table.render())?;
    Ok(table)
}

// ---------------------------------------------------------------------------
// Polynomial analysis

/// Input for [`cmd_analyze`]: a polynomial plus the splitting range and the
/// window width to report against.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalyzeConfig {
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<TargetId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub polynomial: Option<serde_json::Value>,
    pub delta: usize,
    pub zeta: usize,
}

impl AnalyzeConfig {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

/// Cluster-decomposition report: how the polynomial splits at range `delta`
/// and what the locality diagnostics look like at window width `zeta`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnalyzeReport {
    pub version: String,
    pub config_sha256: String,
    pub delta: usize,
    pub zeta: usize,
    pub source_terms: usize,
    pub merged_terms: usize,
    /// Cluster count per merged term, in canonical term order.
    pub clusters_per_term: Vec<usize>,
    pub norm1: f64,
    /// Cover number (None for the empty polynomial).
    pub alpha_g: Option<usize>,
    /// False when the cover number fell back to the greedy bound.
    pub alpha_exact: bool,
    /// Greedy upper bound on the cover number, for cross-checking.
    pub alpha_g_greedy: Option<usize>,
    /// Factor count (None for the empty polynomial).
    pub beta_g: Option<usize>,
}

impl AnalyzeReport {
    pub fn render(&self) -> String {
        let mut text = String::new();
        let _ = writeln!(text, "delta = {}, zeta = {}", self.delta, self.zeta);
        let _ = writeln!(
            text,
            "terms: {} source -> {} merged, clusters per term {:?}",
            self.source_terms, self.merged_terms, self.clusters_per_term
        );
        let _ = writeln!(text, "norm1 = {}", fmt_f64(self.norm1));
        match (self.alpha_g, self.alpha_g_greedy, self.beta_g) {
            (Some(a), Some(g), Some(b)) => {
                let flag = if self.alpha_exact { "exact" } else { "greedy bound" };
                let _ = writeln!(text, "alpha_g = {a} ({flag}), greedy = {g}, beta_g = {b}");
            }
            _ => {
                let _ = writeln!(text, "empty polynomial: no locality diagnostics");
            }
        }
        text
    }
}

/// Decompose the polynomial and write `analyze.json` + `analyze.txt`.
pub fn cmd_analyze(config: &AnalyzeConfig, out_dir: &Path) -> Result<AnalyzeReport> {
    let (lat, poly) = resolve_polynomial(config.n, config.target, config.polynomial.as_ref())?;
    let report = if poly.is_empty() {
        AnalyzeReport {
            version: VERSION.into(),
            config_sha256: sha256_of(config)?,
            delta: config.delta,
            zeta: config.zeta,
            source_terms: 0,
            merged_terms: 0,
            clusters_per_term: Vec::new(),
            norm1: 0.0,
            alpha_g: None,
            alpha_exact: true,
            alpha_g_greedy: None,
            beta_g: None,
        }
    } else {
        let dec = cluster_approximation(&poly, &lat, config.delta)?;
        let alpha = local_cover_number(&dec, &lat, config.zeta)?;
        let greedy = local_cover_number_greedy(&dec, &lat, config.zeta)?;
        let beta = local_factor_count(&dec)?;
        AnalyzeReport {
            version: VERSION.into(),
            config_sha256: sha256_of(config)?,
            delta: config.delta,
            zeta: config.zeta,
            source_terms: poly.terms().len(),
            merged_terms: dec.terms().len(),
            clusters_per_term: dec.cluster_counts(),
            norm1: dec.norm1(),
            alpha_g: Some(alpha.value),
            alpha_exact: alpha.exact,
            alpha_g_greedy: Some(greedy.value),
            beta_g: Some(beta),
        }
    };
    fs::create_dir_all(out_dir)?;
    fs::write(
        out_dir.join("analyze.json"),
        format!("{}\n", serde_json::to_string_pretty(&report)?),
    )?;
    fs::write(out_dir.join("analyze.txt"), report.render())?;
    Ok(report)
}

fn resolve_polynomial(
    n: usize,
    target: Option<TargetId>,
    inline: Option<&serde_json::Value>,
) -> Result<(Lattice, ObservablePolynomial)> {
    let lat = Lattice::ring(n)?;
    let poly = match (target, inline) {
        (Some(t), None) => target_polynomial(t, &lat)?.ok_or_else(|| {
            Error::InvalidArgument("phase labels are not a polynomial target".into())
        })?,
        (None, Some(value)) => ObservablePolynomial::from_json(&value.to_string())?,
        _ => {
            return Err(Error::InvalidArgument(
                "give exactly one of `target` and `polynomial`".into(),
            ))
        }
    };
    poly.validate_on(&lat)?;
    Ok((lat, poly))
}

// ---------------------------------------------------------------------------
// Kernel PCA

/// One embedded pool entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaRow {
    pub index: usize,
    pub label: f64,
    pub pc1: f64,
    pub pc2: f64,
}

/// PCA embedding under one kernel kind. When fewer than two positive
/// eigenvalues exist, the missing coordinate is zero and `truncated` is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaEmbedding {
    pub kernel: KernelKind,
    pub rows: Vec<PcaRow>,
    pub eigenvalues: Vec<f64>,
    pub truncated: bool,
}

/// Result of [`run_pca`]: one embedding per configured kernel kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaOutput {
    pub version: String,
    pub config_sha256: String,
    pub embeddings: Vec<PcaEmbedding>,
}

/// Embed the first `pca_count` pool entries into two kernel-PCA coordinates
/// for every configured kernel kind.
pub fn run_pca(config: &ExperimentConfig, pool: &ShadowPool) -> Result<PcaOutput> {
    config.validate()?;
    if pool.lattice().dims() != [config.n] {
        return Err(Error::InvalidArgument(format!(
            "pool lattice {:?} does not match the configured ring of {} sites",
            pool.lattice().dims(),
            config.n
        )));
    }
    if pool.len() < config.pca_count {
        return Err(Error::InvalidArgument(format!(
            "pool has {} entries but the embedding needs {}",
            pool.len(),
            config.pca_count
        )));
    }
    let shadows: Vec<&ClassicalShadow> = pool.shadows()[..config.pca_count].to_vec();
    let labels = pool.labels();
    let mut embeddings = Vec::with_capacity(config.kernels.len());
    for &kernel in &config.kernels {
        let kernel_config = match kernel {
            KernelKind::GlqkPoly => {
                KernelConfig::glqk(config.tau, config.gamma, config.pca_h, config.pca_zeta)
            }
            KernelKind::Shadow => KernelConfig::shadow(config.tau, config.gamma),
        };
        let raw = gram(&shadows, &kernel_config)?;
        let fitted = if config.standardize { standardize_self(&raw)? } else { raw };
        let pca = kernel_pca(&fitted, 2)?;
        let rows: Vec<PcaRow> = (0..config.pca_count)
            .map(|i| PcaRow {
                index: i,
                label: labels[i],
                pc1: pca.coords[(i, 0)],
                pc2: if pca.coords.ncols() > 1 { pca.coords[(i, 1)] } else { 0.0 },
            })
            .collect();
        embeddings.push(PcaEmbedding {
            kernel,
            rows,
            eigenvalues: pca.eigenvalues.clone(),
            truncated: pca.truncated(),
        });
    }
    Ok(PcaOutput {
        version: VERSION.into(),
        config_sha256: config.sha256(),
        embeddings,
    })
}

/// Load a pool, embed it, and write one `pca_<kernel>.csv` per kernel kind
/// plus `pca.json`.
pub fn cmd_pca(
    config: &ExperimentConfig,
    pool_path: &Path,
    out_dir: &Path,
) -> Result<PcaOutput> {
    let pool = ShadowPool::load(pool_path)?;
    let output = run_pca(config, &pool)?;
    fs::create_dir_all(out_dir)?;
    let provenance = provenance_line(&output.config_sha256);
    for embedding in &output.embeddings {
        let rows: Vec<String> = embedding
            .rows
            .iter()
            .map(|r| {
                format!(
                    "{},{},{},{}",
                    r.index,
                    fmt_f64(r.label),
                    fmt_f64(r.pc1),
                    fmt_f64(r.pc2)
                )
            })
            .collect();
        write_csv(
            &out_dir.join(format!("pca_{}.csv", embedding.kernel.name())),
            &provenance,
            "index,label,pc1,pc2",
            &rows,
        )?;
    }
    fs::write(
        out_dir.join("pca.json"),
        format!("{}\n", serde_json::to_string_pretty(&output)?),
    )?;
    Ok(output)
}

// ---------------------------------------------------------------------------
// Shared plumbing

/// Cap the global worker-thread pool. Must be called before any parallel
/// work; errors if a pool was already initialized.
pub fn configure_threads(threads: usize) -> Result<()> {
    if threads == 0 {
        return Err(Error::InvalidArgument("thread count must be positive".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))
}

fn sha256_of<T: Serialize>(value: &T) -> Result<String> {
    let bytes = serde_json::to_string(value)?;
    let mut hasher = Sha256::new();
    Digest::update(&mut hasher, bytes.as_bytes());
    let digest = hasher.finalize();
    let mut hex = String::with_capacity(digest.len() * 2);
    for byte in digest {
        let _ = write!(hex, "{byte:02x}");
    }
    Ok(hex)
}

fn provenance_line(config_sha256: &str) -> String {
    format!("# config_sha256={config_sha256} version={VERSION}")
}

/// Shortest round-trip decimal form, so emitted values parse back exactly.
fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

fn write_csv(path: &Path, provenance: &str, header: &str, rows: &[String]) -> Result<()> {
    let mut text = String::with_capacity(rows.len() * 32 + 64);
    text.push_str(provenance);
    text.push('\n');
    text.push_str(header);
    text.push('\n');
    for row in rows {
        text.push_str(row);
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_dynamics_config() -> ExperimentConfig {
        let mut config: ExperimentConfig = serde_json::from_value(json!({
            "task": "random_dynamics",
            "n": 3,
            "target": "g1",
            "seed": 11
        }))
        .unwrap();
        config.n_pool = 14;
        config.shots = 12;
        config.n_train = vec![8];
        config.m_test = 4;
        config.repeats = 2;
        config.folds = 2;
        config.grids = SearchGrids {
            lambdas: vec![0.01, 1.0],
            hs: vec![1, 2],
            zetas: vec![2, 6],
            cs: vec![1.0],
        };
        config
    }

    fn tiny_qpr_config() -> ExperimentConfig {
        let mut config: ExperimentConfig = serde_json::from_value(json!({
            "task": "qpr",
            "n": 4,
            "target": "phase",
            "seed": 5
        }))
        .unwrap();
        config.n_pool = 14;
        config.shots = 12;
        config.n_train = vec![10];
        config.m_test = 4;
        config.repeats = 1;
        config.folds = 2;
        config.grids = SearchGrids {
            lambdas: vec![1.0],
            hs: vec![1],
            zetas: vec![2],
            cs: vec![1.0],
        };
        config
    }

    #[test]
    fn minimal_config_fills_documented_defaults() {
        let config: ExperimentConfig = serde_json::from_value(json!({
            "task": "random_dynamics",
            "n": 8,
            "target": "g1",
            "seed": 1
        }))
        .unwrap();
        assert_eq!(config.n_pool, 600);
        assert_eq!(config.shots, 500);
        assert_eq!(config.t_evolve, 0.5);
        assert_eq!(config.delta, 0.5);
        assert_eq!(config.j_range, [0.1, 1.9]);
        assert_eq!(config.n_train, vec![60]);
        assert_eq!(config.m_test, 100);
        assert_eq!(config.kernels, vec![KernelKind::GlqkPoly, KernelKind::Shadow]);
        assert_eq!(config.repeats, 10);
        assert_eq!(config.folds, 5);
        assert_eq!(config.tau, 1.0);
        assert_eq!(config.gamma, 1.0);
        assert!(config.standardize);
        assert!(!config.symmetric);
        assert!(config.validate().is_ok());
    }

    #[test]
    fn unknown_config_fields_are_rejected() {
        let parsed: std::result::Result<ExperimentConfig, _> =
            serde_json::from_value(json!({
                "task": "random_dynamics",
                "n": 8,
                "target": "g1",
                "seed": 1,
                "n_trian": [60]
            }));
        assert!(parsed.is_err());
    }

    #[test]
    fn validation_rejects_inconsistent_configs() {
        let mut over_cap = tiny_dynamics_config();
        over_cap.n = qsim::MAX_QUBITS + 1;
        assert!(matches!(over_cap.validate(), Err(Error::InvalidArgument(_))));

        let mut phase_regression = tiny_dynamics_config();
        phase_regression.target = TargetId::Phase;
        assert!(phase_regression.validate().is_err());

        let mut odd_qpr = tiny_qpr_config();
        odd_qpr.n = 5;
        assert!(odd_qpr.validate().is_err());

        let mut poly_qpr = tiny_qpr_config();
        poly_qpr.target = TargetId::G1;
        assert!(poly_qpr.validate().is_err());

        let mut small_train = tiny_dynamics_config();
        small_train.n_train = vec![3];
        small_train.folds = 5;
        assert!(small_train.validate().is_err());

        let mut band = tiny_qpr_config();
        band.j_range = [0.9, 1.1];
        band.exclusion_band = 0.2;
        assert!(band.validate().is_err());

        let mut dup = tiny_dynamics_config();
        dup.kernels = vec![KernelKind::Shadow, KernelKind::Shadow];
        assert!(dup.validate().is_err());
    }

    #[test]
    fn named_targets_have_expected_shape() {
        let lat = Lattice::ring(8).unwrap();
        let g1 = target_polynomial(TargetId::G1, &lat).unwrap().unwrap();
        assert_eq!(g1.degree(), 1);
        assert_eq!(g1.max_weight(), 2);
        let g2 = target_polynomial(TargetId::G2, &lat).unwrap().unwrap();
        assert_eq!(g2.degree(), 2);
        assert_eq!(g2.max_weight(), 2);
        let g3 = target_polynomial(TargetId::G3, &lat).unwrap().unwrap();
        assert_eq!(g3.terms()[0].factors[0].support(), vec![0, 4]);
        assert!(target_polynomial(TargetId::Phase, &lat).unwrap().is_none());
    }

    #[test]
    fn generated_pool_is_deterministic_and_labelled() {
        let config = tiny_dynamics_config();
        let (pool_a, manifest_a) = generate_pool(&config).unwrap();
        let (pool_b, manifest_b) = generate_pool(&config).unwrap();
        assert_eq!(pool_a, pool_b);
        assert_eq!(manifest_a, manifest_b);
        assert_eq!(pool_a.len(), config.n_pool);
        let lat = Lattice::ring(config.n).unwrap();
        let g = config.target_polynomial(&lat).unwrap().unwrap();
        let bound = g.norm1() + 1e-12;
        for (i, entry) in pool_a.entries().iter().enumerate() {
            assert!(entry.label.abs() <= bound);
            assert_eq!(entry.metadata["index"], json!(i));
            assert_eq!(manifest_a[i]["label"], json!(entry.label));
        }
    }

    #[test]
    fn symmetric_pool_records_small_defects() {
        let mut config = tiny_dynamics_config();
        config.symmetric = true;
        config.n_pool = 4;
        let (pool, manifest) = generate_pool(&config).unwrap();
        for (entry, record) in pool.entries().iter().zip(&manifest) {
            let defect = entry.metadata["symmetry_defect"].as_f64().unwrap();
            assert!(defect <= 1e-8, "defect {defect}");
            assert_eq!(record["symmetry_defect"], entry.metadata["symmetry_defect"]);
        }
    }

    #[test]
    fn qpr_pool_labels_follow_the_coupling_sign() {
        let config = tiny_qpr_config();
        let (pool, _) = generate_pool(&config).unwrap();
        for entry in pool.entries() {
            let j = entry.metadata["j"].as_f64().unwrap();
            assert!(j >= config.j_range[0] && j < config.j_range[1]);
            assert!((j - 1.0).abs() > config.exclusion_band);
            let expected = if j > 1.0 { 1.0 } else { -1.0 };
            assert_eq!(entry.label, expected);
        }
        let labels = pool.labels();
        assert!(labels.iter().any(|&y| y > 0.0) && labels.iter().any(|&y| y < 0.0));
    }

    #[test]
    fn cmd_generate_writes_byte_identical_reruns() {
        let config = tiny_dynamics_config();
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let out_a = cmd_generate(&config, dir_a.path()).unwrap();
        let out_b = cmd_generate(&config, dir_b.path()).unwrap();
        assert_eq!(out_a.entries, config.n_pool);
        let pool_a = fs::read(&out_a.pool_path).unwrap();
        let pool_b = fs::read(&out_b.pool_path).unwrap();
        assert_eq!(pool_a, pool_b);
        let man_a = fs::read(&out_a.manifest_path).unwrap();
        let man_b = fs::read(&out_b.manifest_path).unwrap();
        assert_eq!(man_a, man_b);
        let parsed: serde_json::Value =
            serde_json::from_slice(&man_a).unwrap();
        assert_eq!(parsed["config_sha256"], json!(config.sha256()));
        assert_eq!(parsed["entries"].as_array().unwrap().len(), config.n_pool);
    }

    #[test]
    fn regression_experiment_emits_expected_rows() {
        let config = tiny_dynamics_config();
        let (pool, _) = generate_pool(&config).unwrap();
        let output = run_experiment(&config, &pool).unwrap();
        let runs_expected = config.kernels.len() * config.n_train.len() * config.repeats;
        assert_eq!(output.runs.len(), runs_expected);
        assert_eq!(output.summaries.len(), config.kernels.len() * config.n_train.len());
        assert_eq!(output.scatter.len(), runs_expected * config.m_test);
        for run in &output.runs {
            assert!(run.test_score.is_finite());
            assert!(run.cv_score.is_finite());
            let floor = run.noise_floor.expect("regression runs report the noise floor");
            assert!(floor.is_finite() && floor >= 0.0);
            match run.kernel {
                KernelKind::GlqkPoly => assert!(run.zeta.is_some()),
                KernelKind::Shadow => {
                    assert!(run.zeta.is_none());
                    assert_eq!(run.h, 1);
                }
            }
        }
        // The split is shared across kernels: scatter rows for one
        // (n_train, repeat) reference the same pool indices per kernel.
        let glqk_points: Vec<usize> = output
            .scatter
            .iter()
            .filter(|p| p.kernel == KernelKind::GlqkPoly && p.repeat == 0)
            .map(|p| p.pool_index)
            .collect();
        let shadow_points: Vec<usize> = output
            .scatter
            .iter()
            .filter(|p| p.kernel == KernelKind::Shadow && p.repeat == 0)
            .map(|p| p.pool_index)
            .collect();
        assert_eq!(glqk_points, shadow_points);
        let rerun = run_experiment(&config, &pool).unwrap();
        assert_eq!(output, rerun);
    }

    #[test]
    fn single_repeat_summary_has_zero_std() {
        let mut config = tiny_dynamics_config();
        config.repeats = 1;
        let (pool, _) = generate_pool(&config).unwrap();
        let output = run_experiment(&config, &pool).unwrap();
        for summary in &output.summaries {
            assert_eq!(summary.repeats, 1);
            assert_eq!(summary.std_test_score, 0.0);
        }
    }

    #[test]
    fn classification_experiment_scores_accuracy() {
        let config = tiny_qpr_config();
        let (pool, _) = generate_pool(&config).unwrap();
        let output = run_experiment(&config, &pool).unwrap();
        assert_eq!(output.runs.len(), 2);
        assert!(output.scatter.is_empty());
        for run in &output.runs {
            assert!((0.0..=1.0).contains(&run.test_score));
            assert!(run.noise_floor.is_none());
        }
    }

    #[test]
    fn experiment_rejects_mismatched_pools() {
        let config = tiny_dynamics_config();
        let (pool, _) = generate_pool(&config).unwrap();

        let mut bigger = config.clone();
        bigger.n_train = vec![12];
        bigger.m_test = 8;
        assert!(matches!(
            run_experiment(&bigger, &pool),
            Err(Error::InvalidArgument(_))
        ));

        let mut wrong_shots = config.clone();
        wrong_shots.shots = 99;
        assert!(run_experiment(&wrong_shots, &pool).is_err());

        let mut wrong_n = config.clone();
        wrong_n.n = 4;
        assert!(run_experiment(&wrong_n, &pool).is_err());
    }

    #[test]
    fn experiment_files_are_deterministic(){
        let config = tiny_dynamics_config();
        let dir = tempfile::tempdir().unwrap();
        let pool_dir = dir.path().join("pool");
        let generated = cmd_generate(&config, &pool_dir).unwrap();
        let out_a = dir.path().join("a");
        let out_b = dir.path().join("b");
        cmd_experiment(&config, &generated.pool_path, &out_a).unwrap();
        cmd_experiment(&config, &generated.pool_path, &out_b).unwrap();
        for name in ["results.csv", "summary.csv", "scatter.csv", "experiment.json"] {
            let a = fs::read(out_a.join(name)).unwrap();
            let b = fs::read(out_b.join(name)).unwrap();
            assert_eq!(a, b, "{name} differs between reruns");
            assert!(!a.is_empty());
        }
        let results = fs::read_to_string(out_a.join("results.csv")).unwrap();
        let mut lines = results.lines();
        let provenance = lines.next().unwrap();
        assert!(provenance.starts_with("# config_sha256="));
        assert_eq!(
            lines.next().unwrap(),
            "kernel,n_train,repeat,reg,h,zeta,cv_score,test_score,noise_floor"
        );
        assert_eq!(lines.count(), config.kernels.len() * config.repeats);
    }

    #[test]
    fn plan_command_reports_all_four_regimes() {
        let config = PlanConfig {
            n: 10,
            target: Some(TargetId::G1),
            polynomial: None,
            xi: 1.0,
            epsilon: 0.1,
        };
        let dir = tempfile::tempdir().unwrap();
        let table = cmd_plan(&config, dir.path()).unwrap();
        assert_eq!(table.plans.len(), 4);
        let regimes: Vec<PlanRegime> = table.plans.iter().map(|p| p.regime).collect();
        assert_eq!(
            regimes,
            vec![
                PlanRegime::GlqkGeneral,
                PlanRegime::GlqkSymmetric,
                PlanRegime::ShadowGeneral,
                PlanRegime::ShadowSymmetric
            ]
        );
        let rendered = table.render();
        assert!(rendered.contains("glqk/general"));
        assert!(rendered.contains("shadow/symmetric"));
        assert!(dir.path().join("plan.json").exists());
        assert!(dir.path().join("plan.txt").exists());
        let reloaded: PlanTable =
            serde_json::from_str(&fs::read_to_string(dir.path().join("plan.json")).unwrap())
                .unwrap();
        assert_eq!(reloaded.plans.len(), 4);
    }

    #[test]
    fn plan_accepts_inline_polynomials() {
        let inline: serde_json::Value = serde_json::json!({
            "terms": [ {"c": 1.0, "factors": [[[0, "X"], [1, "Y"]]]} ]
        });
        let config = PlanConfig {
            n: 10,
            target: None,
            polynomial: Some(inline),
            xi: 1.0,
            epsilon: 0.1,
        };
        let dir = tempfile::tempdir().unwrap();
        let table = cmd_plan(&config, dir.path()).unwrap();
        let named = cmd_plan(
            &PlanConfig {
                n: 10,
                target: Some(TargetId::G1),
                polynomial: None,
                xi: 1.0,
                epsilon: 0.1,
            },
            dir.path(),
        )
        .unwrap();
        for (a, b) in table.plans.iter().zip(&named.plans) {
            assert_eq!(a.ln_n_train, b.ln_n_train);
        }

        let both = PlanConfig {
            n: 10,
            target: Some(TargetId::G1),
            polynomial: Some(serde_json::json!({"terms": []})),
            xi: 1.0,
            epsilon: 0.1,
        };
        assert!(cmd_plan(&both, dir.path()).is_err());
    }

    #[test]
    fn analyze_reports_local_structure() {
        let config = AnalyzeConfig {
            n: 10,
            target: Some(TargetId::G1),
            polynomial: None,
            delta: 2,
            zeta: 2,
        };
        let dir = tempfile::tempdir().unwrap();
        let report = cmd_analyze(&config, dir.path()).unwrap();
        assert_eq!(report.source_terms, 1);
        assert_eq!(report.merged_terms, 1);
        assert_eq!(report.clusters_per_term, vec![1]);
        assert_eq!(report.alpha_g, Some(1));
        assert_eq!(report.beta_g, Some(1));
        assert!(report.alpha_exact);
        assert_eq!(report.norm1, 1.0);
        assert!(dir.path().join("analyze.json").exists());
        assert!(dir.path().join("analyze.txt").exists());
    }

    #[test]
    fn analyze_handles_the_empty_polynomial() {
        let config = AnalyzeConfig {
            n: 6,
            target: None,
            polynomial: Some(serde_json::json!({"terms": []})),
            delta: 2,
            zeta: 2,
        };
        let dir = tempfile::tempdir().unwrap();
        let report = cmd_analyze(&config, dir.path()).unwrap();
        assert_eq!(report.source_terms, 0);
        assert_eq!(report.merged_terms, 0);
        assert!(report.clusters_per_term.is_empty());
        assert_eq!(report.norm1, 0.0);
        assert_eq!(report.alpha_g, None);
        assert_eq!(report.beta_g, None);
    }

    #[test]
    fn pca_embeds_the_requested_prefix() {
        let mut config = tiny_qpr_config();
        config.pca_count = 10;
        config.pca_zeta = 2;
        let (pool, _) = generate_pool(&config).unwrap();
        let output = run_pca(&config, &pool).unwrap();
        assert_eq!(output.embeddings.len(), config.kernels.len());
        for embedding in &output.embeddings {
            assert_eq!(embedding.rows.len(), 10);
            for (i, row) in embedding.rows.iter().enumerate() {
                assert_eq!(row.index, i);
                assert_eq!(row.label, pool.entries()[i].label);
                assert!(row.pc1.is_finite() && row.pc2.is_finite());
            }
        }
        let rerun = run_pca(&config, &pool).unwrap();
        assert_eq!(output, rerun);

        let mut too_many = config.clone();
        too_many.pca_count = pool.len() + 1;
        assert!(run_pca(&too_many, &pool).is_err());
    }

    #[test]
    fn cmd_pca_writes_per_kernel_files() {
        let mut config = tiny_qpr_config();
        config.pca_count = 8;
        let dir = tempfile::tempdir().unwrap();
        let pool_dir = dir.path().join("pool");
        let generated = cmd_generate(&config, &pool_dir).unwrap();
        let out = dir.path().join("pca");
        let output = cmd_pca(&config, &generated.pool_path, &out).unwrap();
        for embedding in &output.embeddings {
            let path = out.join(format!("pca_{}.csv", embedding.kernel.name()));
            let text = fs::read_to_string(&path).unwrap();
            let mut lines = text.lines();
            assert!(lines.next().unwrap().starts_with("# config_sha256="));
            assert_eq!(lines.next().unwrap(), "index,label,pc1,pc2");
            assert_eq!(lines.count(), config.pca_count);
        }
        assert!(out.join("pca.json").exists());
    }

    #[test]
    fn sha256_is_stable_and_hex() {
        let config = tiny_dynamics_config();
        let a = config.sha256();
        let b = config.sha256();
        assert_eq!(a, b);
        assert_eq!(a.len(), 64);
        assert!(a.chars().all(|c| c.is_ascii_hexdigit()));
        let mut other = config.clone();
        other.seed += 1;
        assert_ne!(a, other.sha256());
    }
}
