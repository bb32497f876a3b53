//! Forecast combination for short univariate series: learning rates drawn
//! from a truncated Dirichlet process drive a piecewise-constant SGD
//! schedule for a small LSTM, the checkpoint saved at the end of each
//! segment joins an ensemble, and the ensemble is combined with simple or
//! Dirichlet-weighted averages.

pub mod dp;
pub mod ensemble;
pub mod experiment;
pub mod lstm;
pub mod metrics;
pub mod seed;
pub mod series;
pub mod synthetic;
