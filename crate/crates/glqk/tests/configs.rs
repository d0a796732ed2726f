//! The example configs shipped under `configs/` must always load and
//! validate, so the documented entry points never rot.

use std::path::{Path, PathBuf};

use glqk::harness::{AnalyzeConfig, ExperimentConfig, PlanConfig};

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

#[test]
fn experiment_configs_load_and_validate() {
    for name in ["dynamics_symmetric.json", "dynamics_general.json", "qpr.json"] {
        let config = ExperimentConfig::load(&configs_dir().join(name))
            .unwrap_or_else(|e| panic!("{name}: {e}"));
        let max_train = config.n_train.iter().copied().max().unwrap_or(0);
        assert!(
            config.n_pool >= max_train + config.m_test,
            "{name}: pool too small for its own splits"
        );
    }
}

#[test]
fn plan_config_loads_and_plans() {
    let config = PlanConfig::load(&configs_dir().join("plan_two_factor.json")).unwrap();
    let table = glqk::harness::cmd_plan(&config, tempfile::tempdir().unwrap().path()).unwrap();
    assert_eq!(table.plans.len(), 4);
}

#[test]
fn analyze_config_loads_and_analyzes() {
    let config = AnalyzeConfig::load(&configs_dir().join("analyze_clusters.json")).unwrap();
    let report =
        glqk::harness::cmd_analyze(&config, tempfile::tempdir().unwrap().path()).unwrap();
    assert_eq!(report.source_terms, 2);
    assert_eq!(report.clusters_per_term, vec![3, 2]);
    assert!(report.alpha_exact);
}
