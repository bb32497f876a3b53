use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{ExperimentConfig, ExperimentError, ExperimentOutcome, MixedPlan, PoolPlan};
use crate::metrics::{MetricReport, Strategy};
use crate::series::{length_histogram, write_length_histogram};

/// One line of `summary.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub strategy: Strategy,
    pub distribution: String,
    pub p: usize,
    pub n: usize,
    pub mae: f64,
    pub rmse: f64,
}

impl From<&MetricReport> for SummaryRow {
    fn from(r: &MetricReport) -> Self {
        Self {
            strategy: r.strategy,
            distribution: r.distribution.clone(),
            p: r.p,
            n: r.n(),
            mae: r.mean_mae,
            rmse: r.mean_rmse,
        }
    }
}

pub(super) fn create(path: &Path) -> Result<BufWriter<File>, ExperimentError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|source| ExperimentError::Io {
            path: parent.to_path_buf(),
            source,
        })?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|source| ExperimentError::Io {
            path: path.to_path_buf(),
            source,
        })
}

pub fn write_summary(rows: &[SummaryRow], path: &Path) -> Result<(), ExperimentError> {
    let mut out = csv::Writer::from_writer(create(path)?);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush().map_err(|source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_summary(path: &Path) -> Result<Vec<SummaryRow>, ExperimentError> {
    let mut reader = csv::Reader::from_path(path)?;
    Ok(reader
        .deserialize()
        .collect::<Result<Vec<SummaryRow>, _>>()?)
}

/// A labelled grid of numbers, written as CSV with a `strategy` column.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<(String, Vec<f64>)>,
}

impl Table {
    pub fn get(&self, row: &str, column: &str) -> Option<f64> {
        let c = self.columns.iter().position(|x| x == column)?;
        self.rows.iter().find(|(r, _)| r == row).map(|(_, v)| v[c])
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), ExperimentError> {
        let mut out = csv::Writer::from_writer(create(path)?);
        out.write_record(
            std::iter::once("strategy").chain(self.columns.iter().map(String::as_str)),
        )?;
        for (label, values) in &self.rows {
            out.write_record(
                std::iter::once(label.clone()).chain(values.iter().map(f64::to_string)),
            )?;
        }
        out.flush().map_err(|source| ExperimentError::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

#[derive(Clone, Copy)]
enum Metric {
    Mae,
    Rmse,
}

impl Metric {
    fn label(self) -> &'static str {
        match self {
            Metric::Mae => "mae",
            Metric::Rmse => "rmse",
        }
    }

    fn of(self, row: &SummaryRow) -> f64 {
        match self {
            Metric::Mae => row.mae,
            Metric::Rmse => row.rmse,
        }
    }
}

struct Grid<'a> {
    rows: &'a [SummaryRow],
    missing: Vec<String>,
}

impl Grid<'_> {
    fn find(&mut self, strategy: Strategy, dist: &str, p: usize, metric: Metric) -> f64 {
        match self
            .rows
            .iter()
            .find(|r| r.strategy == strategy && r.distribution == dist && r.p == p)
        {
            Some(r) => metric.of(r),
            None => {
                let cell = if strategy == Strategy::Single {
                    "(single)".to_string()
                } else {
                    format!("({strategy}, {p})")
                };
                if !self.missing.contains(&cell) {
                    self.missing.push(cell);
                }
                f64::NAN
            }
        }
    }

    /// Mean over the given distributions.
    fn mean(&mut self, strategy: Strategy, dists: &[&str], p: usize, metric: Metric) -> f64 {
        let sum: f64 = dists
            .iter()
            .map(|d| self.find(strategy, d, p, metric))
            .sum();
        sum / dists.len() as f64
    }
}

/// Error tables with one column per pool size, plus a `single` column
/// holding the single model's error when it was run:
///
/// - `table_<metric>`: simple, weighted and trimmed rows, each the mean over
///   base distributions;
/// - `table_mixed_<metric>`: the mixed pool next to those means.
///
/// Fails with the missing `(strategy, p)` cells if the summary does not
/// cover the configured grid.
pub fn emit_tables(
    summary: &[SummaryRow],
    config: &ExperimentConfig,
) -> Result<Vec<Table>, ExperimentError> {
    let dists = config.distribution_labels();
    let with_single = config.has(Strategy::Single);
    let mut columns: Vec<String> = config.models.iter().map(|p| format!("p{p}")).collect();
    if with_single {
        columns.push("single".into());
    }
    let mut grid = Grid {
        rows: summary,
        missing: Vec::new(),
    };
    let pooled: Vec<Strategy> = [Strategy::Simple, Strategy::Weighted, Strategy::Trimmed]
        .into_iter()
        .filter(|s| config.has(*s))
        .collect();
    let mut tables = Vec::new();
    for metric in [Metric::Mae, Metric::Rmse] {
        let single = with_single.then(|| grid.find(Strategy::Single, "fixed", 1, metric));
        let row = |grid: &mut Grid<'_>, strategy: Strategy| {
            let mut v: Vec<f64> = config
                .models
                .iter()
                .map(|&p| match strategy {
                    Strategy::Mixed => grid.find(strategy, "mixed", p, metric),
                    _ => grid.mean(strategy, &dists, p, metric),
                })
                .collect();
            v.extend(single);
            (strategy.to_string(), v)
        };
        if !pooled.is_empty() {
            let rows = pooled.iter().map(|s| row(&mut grid, *s)).collect();
            tables.push(Table {
                name: format!("table_{}", metric.label()),
                columns: columns.clone(),
                rows,
            });
        }
        if config.has(Strategy::Mixed) {
            let rows = std::iter::once(Strategy::Mixed)
                .chain(pooled.iter().copied())
                .map(|s| row(&mut grid, s))
                .collect();
            tables.push(Table {
                name: format!("table_mixed_{}", metric.label()),
                columns: columns.clone(),
                rows,
            });
        }
    }
    if grid.missing.is_empty() {
        Ok(tables)
    } else {
        Err(ExperimentError::IncompleteGrid(grid.missing))
    }
}

/// `plots/curve_<strategy>.csv` with `distribution,p,mae,rmse`, one row per
/// summary line, for every pooled strategy present.
pub fn emit_plot_data(
    summary: &[SummaryRow],
    out_dir: &Path,
) -> Result<Vec<PathBuf>, ExperimentError> {
    let mut written = Vec::new();
    for strategy in Strategy::ALL {
        let mut rows: Vec<&SummaryRow> =
            summary.iter().filter(|r| r.strategy == strategy).collect();
        if rows.is_empty() {
            continue;
        }
        rows.sort_by(|a, b| (&a.distribution, a.p).cmp(&(&b.distribution, b.p)));
        let path = out_dir.join("plots").join(format!("curve_{strategy}.csv"));
        let mut out = csv::Writer::from_writer(create(&path)?);
        out.write_record(["distribution", "p", "mae", "rmse"])?;
        for r in rows {
            out.write_record([
                r.distribution.clone(),
                r.p.to_string(),
                r.mae.to_string(),
                r.rmse.to_string(),
            ])?;
        }
        out.flush().map_err(|source| ExperimentError::Io {
            path: path.clone(),
            source,
        })?;
        written.push(path);
    }
    Ok(written)
}

/// `id,status,reason` for every sampled series left out of the run, with
/// status `skipped` (too short) or `diverged`.
pub fn write_excluded(
    skipped: &[(String, String)],
    diverged: &[(String, String)],
    path: &Path,
) -> Result<(), ExperimentError> {
    let mut out = csv::Writer::from_writer(create(path)?);
    out.write_record(["id", "status", "reason"])?;
    for (status, list) in [("skipped", skipped), ("diverged", diverged)] {
        for (id, reason) in list {
            out.write_record([id, status, reason])?;
        }
    }
    out.flush().map_err(|source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// `pools/<dist>_p<p>.csv` and `pools/mixed_p<p>.csv` with
/// `member,learning_rate,weight`; mixed pools leave the rate empty since
/// their members come from the three source schedules.
pub fn write_plans(
    plans: &[PoolPlan],
    mixed: &[MixedPlan],
    out_dir: &Path,
) -> Result<(), ExperimentError> {
    let write =
        |name: String, rates: Option<&[f64]>, weights: &[f64]| -> Result<(), ExperimentError> {
            let path = out_dir.join("pools").join(format!("{name}.csv"));
            let mut out = csv::Writer::from_writer(create(&path)?);
            out.write_record(["member", "learning_rate", "weight"])?;
            for (i, w) in weights.iter().enumerate() {
                let rate = rates.map(|r| r[i].to_string()).unwrap_or_default();
                out.write_record([(i + 1).to_string(), rate, w.to_string()])?;
            }
            out.flush()
                .map_err(|source| ExperimentError::Io { path, source })
        };
    for plan in plans {
        write(
            format!("{}_p{}", plan.distribution, plan.p),
            Some(&plan.learning_rates),
            &plan.weights.normalized,
        )?;
    }
    for plan in mixed {
        write(format!("mixed_p{}", plan.p), None, &plan.weights.normalized)?;
    }
    Ok(())
}

/// Bins used for the corpus length histogram.
const LENGTH_BINS: usize = 20;

/// Everything a run produces, under `out_dir`: the resolved config,
/// `summary.csv`, per-report CSVs, tables, plot data, diversity matrices,
/// the length histogram and pool manifests.
pub fn write_outputs(outcome: &ExperimentOutcome, out_dir: &Path) -> Result<(), ExperimentError> {
    let config = &outcome.config;
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| ExperimentError::Io { path, source }
    };
    fs::create_dir_all(out_dir).map_err(io(out_dir))?;

    let manifest = out_dir.join("run_manifest.toml");
    fs::write(&manifest, config.to_toml_string()).map_err(io(&manifest))?;
    write_excluded(
        &outcome.skipped,
        &outcome.diverged,
        &out_dir.join("excluded.csv"),
    )?;

    let summary: Vec<SummaryRow> = outcome.reports.iter().map(SummaryRow::from).collect();
    write_summary(&summary, &out_dir.join("summary.csv"))?;
    for r in &outcome.reports {
        let path = out_dir
            .join("reports")
            .join(format!("{}_{}_p{}.csv", r.strategy, r.distribution, r.p));
        r.write_csv(create(&path)?)?;
    }
    for t in emit_tables(&summary, config)? {
        t.write_csv(&out_dir.join("tables").join(format!("{}.csv", t.name)))?;
    }
    emit_plot_data(&summary, out_dir)?;
    for d in &outcome.diversity {
        let path = out_dir
            .join("plots")
            .join("diversity")
            .join(format!("{}_p{}.csv", d.distribution, d.p));
        d.matrix.write_csv(create(&path)?)?;
    }
    let hist = length_histogram(&outcome.corpus_lengths, LENGTH_BINS);
    write_length_histogram(
        &hist,
        create(&out_dir.join("plots").join("length_histogram.csv"))?,
    )?;

    write_plans(&outcome.plans, &outcome.mixed_plans, out_dir)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(strategy: Strategy, distribution: &str, p: usize, mae: f64) -> SummaryRow {
        SummaryRow {
            strategy,
            distribution: distribution.into(),
            p,
            n: 20,
            mae,
            rmse: 2.0 * mae,
        }
    }

    fn full_grid(config: &ExperimentConfig) -> Vec<SummaryRow> {
        let mut rows = vec![row(Strategy::Single, "fixed", 1, 0.3)];
        for &p in &config.models {
            for (k, d) in config.distribution_labels().into_iter().enumerate() {
                rows.push(row(Strategy::Simple, d, p, 0.1 * k as f64));
                rows.push(row(Strategy::Weighted, d, p, 0.2));
            }
            rows.push(row(Strategy::Mixed, "mixed", p, 0.25));
        }
        rows
    }

    #[test]
    fn full_grid_tables_have_one_row_per_strategy_and_one_column_per_p() {
        let config = ExperimentConfig::default();
        let tables = emit_tables(&full_grid(&config), &config).unwrap();
        let names: Vec<&str> = tables.iter().map(|t| t.name.as_str()).collect();
        assert_eq!(
            names,
            [
                "table_mae",
                "table_mixed_mae",
                "table_rmse",
                "table_mixed_rmse"
            ]
        );
        let mae = &tables[0];
        assert_eq!(mae.rows.len(), 2);
        assert_eq!(mae.columns.len(), 11);
        assert_eq!(mae.columns.last().unwrap(), "single");
        assert!((mae.get("simple", "p30").unwrap() - 0.1).abs() < 1e-15);
        assert_eq!(mae.get("weighted", "single"), Some(0.3));
        assert!((tables[2].get("weighted", "p100").unwrap() - 0.4).abs() < 1e-15);
        assert_eq!(tables[1].get("mixed", "p10"), Some(0.25));
    }

    #[test]
    fn missing_cell_is_named() {
        let config = ExperimentConfig::default();
        let rows: Vec<SummaryRow> = full_grid(&config)
            .into_iter()
            .filter(|r| {
                !(r.strategy == Strategy::Weighted && r.p == 50 && r.distribution == "beta")
            })
            .collect();
        match emit_tables(&rows, &config) {
            Err(ExperimentError::IncompleteGrid(cells)) => {
                assert_eq!(cells, vec!["(weighted, 50)".to_string()])
            }
            other => panic!("expected IncompleteGrid, got {other:?}"),
        }
    }

    #[test]
    fn summary_round_trips_through_csv() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("summary.csv");
        let rows = full_grid(&ExperimentConfig::default());
        write_summary(&rows, &path).unwrap();
        assert_eq!(read_summary(&path).unwrap(), rows);
    }

    #[test]
    fn curves_are_long_format() {
        let dir = tempfile::tempdir().unwrap();
        let config = ExperimentConfig::default();
        let written = emit_plot_data(&full_grid(&config), dir.path()).unwrap();
        assert_eq!(written.len(), 4);
        let text = fs::read_to_string(dir.path().join("plots/curve_weighted.csv")).unwrap();
        assert_eq!(text.lines().count(), 1 + 30);
        assert!(text.starts_with("distribution,p,mae,rmse\nbeta,10,"));
    }
}
