//! Stratified cross-validation, undersampling, metrics, and the scenario
//! matrix runner.

mod folds;
mod metrics;
mod scenario;

pub use folds::{quantile_bins, stratified_kfold, stratified_kfold_from, FoldPlan};
pub use metrics::{f1_score, mean_std, roc_auc, roc_curve, trapezoid_area, undersample};
pub use scenario::{
    audit_folds, audit_scenario, producer_training_sets, run_matrix, run_scenario, scenario_matrix, DaftSettings, FoldAudit,
    FoldMetrics, HarnessConfig, InputKind, ModelKind, PhaseSet, ResNetSettings, ScenarioData, ScenarioResult,
    ScenarioSpec,
};
