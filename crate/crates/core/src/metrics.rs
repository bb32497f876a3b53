//! Forecast error metrics and dataset-level reports.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("actual has {actual} points, forecast has {forecast}")]
    LengthMismatch { actual: usize, forecast: usize },
    #[error("metrics need at least one point")]
    EmptyHorizon,
    #[error("no series to aggregate")]
    EmptyDataset,
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

fn check(actual: &[f64], forecast: &[f64]) -> Result<(), MetricError> {
    if actual.len() != forecast.len() {
        return Err(MetricError::LengthMismatch {
            actual: actual.len(),
            forecast: forecast.len(),
        });
    }
    if actual.is_empty() {
        return Err(MetricError::EmptyHorizon);
    }
    Ok(())
}

/// Sum with pairwise (cascade) reduction.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const LEAF: usize = 8;
    if values.len() <= LEAF {
        return values.iter().sum();
    }
    let (a, b) = values.split_at(values.len() / 2);
    pairwise_sum(a) + pairwise_sum(b)
}

pub fn mae(actual: &[f64], forecast: &[f64]) -> Result<f64, MetricError> {
    check(actual, forecast)?;
    let abs: Vec<f64> = actual
        .iter()
        .zip(forecast)
        .map(|(y, f)| (y - f).abs())
        .collect();
    Ok(pairwise_sum(&abs) / actual.len() as f64)
}

pub fn rmse(actual: &[f64], forecast: &[f64]) -> Result<f64, MetricError> {
    check(actual, forecast)?;
    let sq: Vec<f64> = actual
        .iter()
        .zip(forecast)
        .map(|(y, f)| (y - f) * (y - f))
        .collect();
    Ok((pairwise_sum(&sq) / actual.len() as f64).sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Single,
    Simple,
    Weighted,
    Mixed,
    Trimmed,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::Single,
        Strategy::Simple,
        Strategy::Weighted,
        Strategy::Mixed,
        Strategy::Trimmed,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Strategy::Single => "single",
            Strategy::Simple => "simple",
            Strategy::Weighted => "weighted",
            Strategy::Mixed => "mixed",
            Strategy::Trimmed => "trimmed",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.label() == s)
            .ok_or_else(|| format!("unknown strategy {s:?}"))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SeriesMetrics {
    pub id: String,
    pub mae: f64,
    pub rmse: f64,
}

/// One forecast to score.
#[derive(Clone, Copy, Debug)]
pub struct ScoredForecast<'a> {
    pub id: &'a str,
    pub actual: &'a [f64],
    pub forecast: &'a [f64],
}

/// Errors of one combination strategy over a set of series.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub strategy: Strategy,
    /// `exp`, `beta`, `normal`, `mixed`, or `fixed` for the single model.
    pub distribution: String,
    /// Pool size (1 for the single model).
    pub p: usize,
    pub seed: u64,
    pub series: Vec<SeriesMetrics>,
    pub mean_mae: f64,
    pub mean_rmse: f64,
}

/// Row id used for the aggregate line of a report CSV.
pub const AGGREGATE_ROW: &str = "__mean__";

impl MetricReport {
    pub fn n(&self) -> usize {
        self.series.len()
    }

    /// `id,mae,rmse` per series, then the aggregate row.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), MetricError> {
        let mut out = csv::Writer::from_writer(writer);
        out.write_record(["id", "mae", "rmse"])?;
        for s in &self.series {
            out.write_record([s.id.clone(), s.mae.to_string(), s.rmse.to_string()])?;
        }
        out.write_record([
            AGGREGATE_ROW.to_string(),
            self.mean_mae.to_string(),
            self.mean_rmse.to_string(),
        ])?;
        out.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

/// Per-series MAE/RMSE and their unweighted means.
pub fn dataset_metrics(
    forecasts: &[ScoredForecast<'_>],
    strategy: Strategy,
    distribution: &str,
    p: usize,
    seed: u64,
) -> Result<MetricReport, MetricError> {
    if forecasts.is_empty() {
        return Err(MetricError::EmptyDataset);
    }
    let series = forecasts
        .iter()
        .map(|f| {
            Ok(SeriesMetrics {
                id: f.id.to_string(),
                mae: mae(f.actual, f.forecast)?,
                rmse: rmse(f.actual, f.forecast)?,
            })
        })
        .collect::<Result<Vec<_>, MetricError>>()?;
    let n = series.len() as f64;
    let maes: Vec<f64> = series.iter().map(|s| s.mae).collect();
    let rmses: Vec<f64> = series.iter().map(|s| s.rmse).collect();
    Ok(MetricReport {
        strategy,
        distribution: distribution.to_string(),
        p,
        seed,
        mean_mae: pairwise_sum(&maes) / n,
        mean_rmse: pairwise_sum(&rmses) / n,
        series,
    })
}
