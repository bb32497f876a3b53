//! Experiment grid: model-count sweep × base distributions × combination
//! strategies, with CSV reporting.
//!
//! Randomness is derived from the master seed along named paths:
//!
//! - `subsample`: which series take part;
//! - `series/<id>/trainer`: parameter init, row sampling and dropout for
//!   every training run on that series (the single model and every pool
//!   share it, so runs differ only by their learning rates);
//! - `dp/<dist>/p<p>`: the learning-rate and weight draws of a pool, shared
//!   by all series;
//! - `dp/<dist>/mixed-source/p<p>`: the smaller source pools of a mixed pool;
//! - `dp/mixed/p<p>`: the weights re-drawn over a mixed pool.

mod config;
mod report;
mod run;
mod stages;

use thiserror::Error;

pub use config::{
    default_distributions, DataConfig, DpSection, EnsembleSection, ExperimentConfig, ModelConfig,
    SingleConfig,
};
pub use report::{
    emit_plot_data, emit_tables, read_summary, write_excluded, write_outputs, write_plans,
    write_summary, SummaryRow, Table,
};
pub use run::{
    load_corpus, plan_pools, prepare_series, run_experiment, select_series, DiversityRecord,
    ExperimentOutcome, MixedPlan, PoolPlan, PreparedSeries,
};
pub use stages::{evaluate_stage, predict_stage, train_stage, StageSummary};

use crate::dp::DpError;
use crate::ensemble::EnsembleError;
use crate::lstm::LstmError;
use crate::metrics::MetricError;
use crate::series::SeriesError;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("cannot load data: {0}")]
    DataLoad(#[from] SeriesError),
    #[error("no usable series remain")]
    NoSeries,
    #[error(transparent)]
    Dp(#[from] DpError),
    #[error(transparent)]
    Lstm(#[from] LstmError),
    #[error(transparent)]
    Ensemble(#[from] EnsembleError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("incomplete grid, missing {}", .0.join(", "))]
    IncompleteGrid(Vec<String>),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}
