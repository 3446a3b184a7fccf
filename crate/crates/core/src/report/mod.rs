//! Run configuration, pipeline orchestration, and the written reports.

mod config;
mod matrix;
mod pipeline;
mod reference;
mod summary;
mod svg;

pub use config::{Overrides, PhaseChoice, Profile, RunConfig};
pub use matrix::{
    prediction_rows, read_predictions, write_predictions, AuditFile, Matrix, MatrixEntry, PredictionRow, ScenarioAudit,
};
pub use pipeline::{
    all, audit_run, extract_latents, load_inputs, report, roc_scenarios, run, synth, train_extractors, AuditSummary,
    Layout, Pretraining, AE2D, MAE3D,
};
pub use reference::{Reference, ReferenceHeadline, ReferenceScenario, REFERENCE_JSON};
pub use summary::render_summary;
pub use svg::{render_f1_barchart, render_roc_curves, roc_points_from_svg};
