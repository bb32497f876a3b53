//! The experiment split into resumable steps sharing one output directory:
//!
//! - [`train_stage`] saves every checkpoint under `checkpoints/<id>/<pool>/`
//!   with a `pool.csv` manifest;
//! - [`predict_stage`] reloads them and writes the raw member forecasts to
//!   `forecasts/<id>/<pool>.csv` (one row per member, scaled units) plus the
//!   combined forecasts to `forecasts/<id>/combined.csv`;
//! - [`evaluate_stage`] scores the saved forecasts exactly as
//!   [`run_experiment`](super::run_experiment) would.
//!
//! Pool directory names are `single`, `<dist>_p<p>`, `<dist>_mixsrc_p<p>`
//! (sources of a mixed pool) and, for forecasts, `mixed_p<p>`.

use std::fs;
use std::path::Path;

use log::warn;
use rayon::prelude::*;

use super::report::{create, write_excluded, write_plans};
use super::run::{
    assemble, is_divergence, mixed_name, plan_pools, pool_name, run_series, select_and_prepare,
    worker_pool, Models, SeriesRun, SINGLE_NAME,
};
use super::{
    ExperimentConfig, ExperimentError, ExperimentOutcome, MixedPlan, PoolPlan, PreparedSeries,
};
use crate::ensemble::{combine_simple, combine_weighted, ForecastTensor};
use crate::metrics::Strategy;

/// Which sampled series a stage handled.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StageSummary {
    pub processed: Vec<String>,
    /// `(id, reason)` for series too short, or missing earlier outputs.
    pub skipped: Vec<(String, String)>,
    /// `(id, reason)` for series whose training diverged.
    pub diverged: Vec<(String, String)>,
}

impl StageSummary {
    pub fn partial(&self) -> bool {
        !self.diverged.is_empty()
    }
}

fn write_manifest(config: &ExperimentConfig) -> Result<(), ExperimentError> {
    let path = config.out_dir.join("run_manifest.toml");
    fs::create_dir_all(&config.out_dir).map_err(|source| ExperimentError::Io {
        path: config.out_dir.clone(),
        source,
    })?;
    fs::write(&path, config.to_toml_string()).map_err(|source| ExperimentError::Io { path, source })
}

fn run_all(
    config: &ExperimentConfig,
    prepared: &[PreparedSeries],
    plans: &[PoolPlan],
    mixed: &[MixedPlan],
    models: Models<'_>,
) -> Result<Vec<Result<SeriesRun, ExperimentError>>, ExperimentError> {
    Ok(worker_pool(config)?.install(|| {
        prepared
            .par_iter()
            .map(|s| run_series(s, config, plans, mixed, models))
            .collect()
    }))
}

/// Splits runs into successes and divergences; any other error aborts.
fn sort_runs(
    prepared: Vec<PreparedSeries>,
    runs: Vec<Result<SeriesRun, ExperimentError>>,
) -> Result<(Vec<(PreparedSeries, SeriesRun)>, Vec<(String, String)>), ExperimentError> {
    let mut kept = Vec::new();
    let mut diverged = Vec::new();
    for (series, run) in prepared.into_iter().zip(runs) {
        match run {
            Ok(r) => kept.push((series, r)),
            Err(e) if is_divergence(&e) => {
                warn!("series {} excluded: {e}", series.id);
                diverged.push((series.id, e.to_string()));
            }
            Err(e) => return Err(e),
        }
    }
    Ok((kept, diverged))
}

/// Trains every model of the configured grid and saves the checkpoints.
pub fn train_stage(config: &ExperimentConfig) -> Result<StageSummary, ExperimentError> {
    config.validate()?;
    let selection = select_and_prepare(config)?;
    let (plans, mixed) = plan_pools(config)?;
    write_manifest(config)?;
    write_plans(&plans, &mixed, &config.out_dir)?;
    let root = config.out_dir.join("checkpoints");
    let runs = run_all(
        config,
        &selection.prepared,
        &plans,
        &mixed,
        Models::Train {
            save_to: Some(&root),
        },
    )?;
    let (kept, diverged) = sort_runs(selection.prepared, runs)?;
    write_excluded(&selection.skipped, &diverged, &root.join("excluded.csv"))?;
    Ok(StageSummary {
        processed: kept.into_iter().map(|(s, _)| s.id).collect(),
        skipped: selection.skipped,
        diverged,
    })
}

fn write_tensor(tensor: &ForecastTensor, path: &Path) -> Result<(), ExperimentError> {
    let mut out = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(create(path)?);
    for i in 0..tensor.rows() {
        out.write_record(tensor.row(i).iter().map(f64::to_string))?;
    }
    out.flush().map_err(|source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn read_tensor(id: &str, path: &Path) -> Result<ForecastTensor, ExperimentError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_path(path)?;
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record?;
        let row = record
            .iter()
            .map(|cell| {
                cell.parse::<f64>().map_err(|_| {
                    ExperimentError::DataLoad(crate::series::SeriesError::MalformedRow {
                        id: id.to_string(),
                        column: rows.len() + 1,
                        value: cell.to_string(),
                    })
                })
            })
            .collect::<Result<Vec<f64>, _>>()?;
        rows.push(row);
    }
    Ok(ForecastTensor::from_rows(id, rows)?)
}

/// `strategy,distribution,p,step,value` rows for one series, in the
/// configured units. The trimmed strategy needs diversity over all series
/// and is only available through [`evaluate_stage`].
fn write_combined(
    config: &ExperimentConfig,
    series: &PreparedSeries,
    run: &SeriesRun,
    plans: &[PoolPlan],
    mixed: &[MixedPlan],
    path: &Path,
) -> Result<(), ExperimentError> {
    let mut rows: Vec<(Strategy, &str, usize, Vec<f64>)> = Vec::new();
    if let Some(single) = &run.single {
        rows.push((Strategy::Single, "fixed", 1, single.clone()));
    }
    for (plan, tensor) in plans.iter().zip(&run.tensors) {
        if config.has(Strategy::Simple) {
            rows.push((
                Strategy::Simple,
                plan.distribution,
                plan.p,
                combine_simple(tensor),
            ));
        }
        if config.has(Strategy::Weighted) {
            rows.push((
                Strategy::Weighted,
                plan.distribution,
                plan.p,
                combine_weighted(tensor, &plan.weights)?,
            ));
        }
    }
    for (plan, tensor) in mixed.iter().zip(&run.mixed) {
        rows.push((
            Strategy::Mixed,
            "mixed",
            plan.p,
            combine_weighted(tensor, &plan.weights)?,
        ));
    }
    let mut out = csv::Writer::from_writer(create(path)?);
    out.write_record(["strategy", "distribution", "p", "step", "value"])?;
    for (strategy, dist, p, values) in rows {
        for (h, v) in series
            .to_units(&values, config.original_units)
            .iter()
            .enumerate()
        {
            out.write_record([
                strategy.to_string(),
                dist.to_string(),
                p.to_string(),
                (h + 1).to_string(),
                v.to_string(),
            ])?;
        }
    }
    out.flush().map_err(|source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Series with a directory under `root`; the rest are reported as skipped.
fn with_outputs(
    prepared: Vec<PreparedSeries>,
    root: &Path,
    what: &str,
    skipped: &mut Vec<(String, String)>,
) -> Vec<PreparedSeries> {
    prepared
        .into_iter()
        .filter(|s| {
            let present = root.join(&s.id).is_dir();
            if !present {
                skipped.push((s.id.clone(), format!("no {what}")));
            }
            present
        })
        .collect()
}

/// Reloads the saved checkpoints and writes member and combined forecasts.
pub fn predict_stage(config: &ExperimentConfig) -> Result<StageSummary, ExperimentError> {
    config.validate()?;
    let mut selection = select_and_prepare(config)?;
    let (plans, mixed) = plan_pools(config)?;
    let root = config.out_dir.join("checkpoints");
    let prepared = with_outputs(
        selection.prepared,
        &root,
        "checkpoints",
        &mut selection.skipped,
    );
    let runs = run_all(
        config,
        &prepared,
        &plans,
        &mixed,
        Models::Load { from: &root },
    )?;
    let (kept, diverged) = sort_runs(prepared, runs)?;
    let out = config.out_dir.join("forecasts");
    for (series, run) in &kept {
        let dir = out.join(&series.id);
        if let Some(single) = &run.single {
            write_tensor(
                &ForecastTensor::from_rows(&series.id, vec![single.clone()])?,
                &dir.join(format!("{SINGLE_NAME}.csv")),
            )?;
        }
        for (plan, tensor) in plans.iter().zip(&run.tensors) {
            write_tensor(tensor, &dir.join(format!("{}.csv", pool_name(plan))))?;
        }
        for (plan, tensor) in mixed.iter().zip(&run.mixed) {
            write_tensor(tensor, &dir.join(format!("{}.csv", mixed_name(plan.p))))?;
        }
        write_combined(
            config,
            series,
            run,
            &plans,
            &mixed,
            &dir.join("combined.csv"),
        )?;
    }
    Ok(StageSummary {
        processed: kept.into_iter().map(|(s, _)| s.id).collect(),
        skipped: selection.skipped,
        diverged,
    })
}

/// Scores the forecasts written by [`predict_stage`]. Sampled series
/// without forecasts count as diverged, so the outcome is partial.
pub fn evaluate_stage(config: &ExperimentConfig) -> Result<ExperimentOutcome, ExperimentError> {
    config.validate()?;
    let selection = select_and_prepare(config)?;
    let (plans, mixed) = plan_pools(config)?;
    let root = config.out_dir.join("forecasts");
    let mut kept = Vec::new();
    let mut diverged = Vec::new();
    for series in selection.prepared {
        let dir = root.join(&series.id);
        if !dir.is_dir() {
            diverged.push((series.id.clone(), "no forecasts".to_string()));
            continue;
        }
        let read = |name: String| read_tensor(&series.id, &dir.join(format!("{name}.csv")));
        let single = if config.has(Strategy::Single) {
            Some(read(SINGLE_NAME.to_string())?.row(0).to_vec())
        } else {
            None
        };
        let tensors = plans
            .iter()
            .map(|p| read(pool_name(p)))
            .collect::<Result<Vec<_>, _>>()?;
        let mixed_tensors = mixed
            .iter()
            .map(|p| read(mixed_name(p.p)))
            .collect::<Result<Vec<_>, _>>()?;
        kept.push((
            series,
            SeriesRun {
                single,
                tensors,
                mixed: mixed_tensors,
            },
        ));
    }
    assemble(
        config,
        kept,
        plans,
        mixed,
        selection.skipped,
        diverged,
        selection.corpus_lengths,
    )
}
