//! Experiment runner for uncertainty-filtered counterfactual explanations.
//!
//! [`run_experiment`] loads or synthesizes the dataset, runs every
//! (repetition, estimator) pair and writes the report with its artifacts.

pub mod config;
pub mod data;
pub mod experiment;
pub mod report;
pub mod split;

use std::path::Path;

pub use config::{ExperimentConfig, Overrides};
pub use report::{ExperimentReport, ReportError};

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Data(#[from] data::DataError),
    #[error(transparent)]
    Report(#[from] ReportError),
}

pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> Result<ExperimentReport, ExperimentError> {
    let data = data::load_dataset(&cfg.dataset, cfg.seed)?;
    log::info!("{}: {} molecules, {} repetitions", cfg.name, data.len(), cfg.repetitions);
    let results = experiment::run_repetitions(cfg, &data, |r| match &r.output {
        Ok(o) => log::info!(
            "repetition {} {}: UER-AUC(mean) {:.3}",
            r.repetition,
            r.estimator,
            o.metrics.uer_auc_mean
        ),
        Err(e) => log::error!("repetition {} {} failed: {e}", r.repetition, r.estimator),
    });
    Ok(report::write_report(out_dir, cfg, &data, &results)?)
}
