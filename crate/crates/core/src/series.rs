//! Series ingestion and preprocessing.
//!
//! Train and test files use the M4 row layout `id,v1,v2,...`; a header row is
//! detected automatically and empty trailing cells (the M4 padding) are
//! ignored. Each series is the train values followed by the test values, and
//! min-max statistics are taken over that merged series, so the scaling sees
//! the held-out range.

use std::collections::HashMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use log::warn;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SeriesError {
    #[error("series {id}: column {column} holds non-numeric value {value:?}")]
    MalformedRow {
        id: String,
        column: usize,
        value: String,
    },
    #[error("series {id} appears more than once in {file}")]
    DuplicateId { id: String, file: String },
    #[error("series needs at least {needed} observations, got {got}")]
    SeriesTooShort { needed: usize, got: usize },
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

/// Non-fatal conditions met while loading a corpus.
#[derive(Clone, Debug, PartialEq)]
pub enum LoadWarning {
    /// Present in the train file only; loaded with an empty test suffix.
    MissingTestSeries { id: String },
    /// Present in the test file only; ignored.
    OrphanTestSeries { id: String },
    /// Fewer than `lag + 1` observations; skipped.
    TooShort { id: String, length: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct RawSeries {
    pub id: String,
    pub observations: Vec<f64>,
    pub horizon: usize,
}

impl RawSeries {
    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }
}

#[derive(Clone, Debug, Default)]
pub struct Corpus {
    pub series: Vec<RawSeries>,
    pub warnings: Vec<LoadWarning>,
}

fn open(path: &Path) -> Result<File, SeriesError> {
    File::open(path).map_err(|source| SeriesError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Parse M4-layout rows. Returns `(id, values)` in file order.
pub fn parse_rows<R: Read>(reader: R, file: &str) -> Result<Vec<(String, Vec<f64>)>, SeriesError> {
    let mut csv = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut rows = Vec::new();
    let mut seen = HashMap::new();
    for (line, record) in csv.records().enumerate() {
        let record = record?;
        let Some(id) = record.get(0) else { continue };
        if id.is_empty() && record.iter().all(str::is_empty) {
            continue;
        }
        let cells: Vec<&str> = record.iter().skip(1).collect();
        if line == 0 && is_header(&cells) {
            continue;
        }
        let mut values = Vec::with_capacity(cells.len());
        let mut ended = false;
        for (offset, cell) in cells.iter().enumerate() {
            let column = offset + 2;
            if cell.is_empty() {
                ended = true;
                continue;
            }
            let parsed = cell.parse::<f64>().ok().filter(|v| v.is_finite());
            match parsed {
                Some(v) if !ended => values.push(v),
                _ => {
                    return Err(SeriesError::MalformedRow {
                        id: id.to_string(),
                        column,
                        value: cell.to_string(),
                    })
                }
            }
        }
        if seen.insert(id.to_string(), ()).is_some() {
            return Err(SeriesError::DuplicateId {
                id: id.to_string(),
                file: file.to_string(),
            });
        }
        rows.push((id.to_string(), values));
    }
    Ok(rows)
}

fn is_header(cells: &[&str]) -> bool {
    let non_empty: Vec<_> = cells.iter().filter(|c| !c.is_empty()).collect();
    !non_empty.is_empty() && non_empty.iter().all(|c| c.parse::<f64>().is_err())
}

/// Merge train and test rows by id into series of at least `lag + 1`
/// observations.
pub fn merge_rows(
    train: Vec<(String, Vec<f64>)>,
    test: Vec<(String, Vec<f64>)>,
    horizon: usize,
    lag: usize,
) -> Corpus {
    let mut test: HashMap<String, Vec<f64>> = test.into_iter().collect();
    let mut corpus = Corpus::default();
    for (id, mut observations) in train {
        match test.remove(&id) {
            Some(suffix) => observations.extend(suffix),
            None => {
                warn!("series {id} has no test row; loading train values only");
                corpus
                    .warnings
                    .push(LoadWarning::MissingTestSeries { id: id.clone() });
            }
        }
        if observations.len() < lag + 1 {
            warn!(
                "series {id} has {} observations, needs {}; skipped",
                observations.len(),
                lag + 1
            );
            corpus.warnings.push(LoadWarning::TooShort {
                id,
                length: observations.len(),
            });
            continue;
        }
        corpus.series.push(RawSeries {
            id,
            observations,
            horizon,
        });
    }
    let mut orphans: Vec<String> = test.into_keys().collect();
    orphans.sort();
    for id in orphans {
        warn!("series {id} appears only in the test file; ignored");
        corpus.warnings.push(LoadWarning::OrphanTestSeries { id });
    }
    corpus
}

/// Load an M4-weekly style train/test pair.
pub fn load_m4_weekly(
    train_path: &Path,
    test_path: &Path,
    horizon: usize,
    lag: usize,
) -> Result<Corpus, SeriesError> {
    let train = parse_rows(open(train_path)?, &train_path.display().to_string())?;
    let test = parse_rows(open(test_path)?, &test_path.display().to_string())?;
    Ok(merge_rows(train, test, horizon, lag))
}

/// A series mapped onto [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct ScaledSeries {
    pub id: String,
    pub values: Vec<f64>,
    pub scale_min: f64,
    pub scale_max: f64,
    /// Constant input: every value is 0 and inversion returns the constant.
    pub degenerate: bool,
}

impl ScaledSeries {
    pub fn invert(&self, preds: &[f64]) -> Vec<f64> {
        invert_scale(preds, self.scale_min, self.scale_max)
    }
}

pub fn minmax_scale(series: &RawSeries) -> ScaledSeries {
    let (min, max) = series
        .observations
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let degenerate = !(max > min);
    let values = if degenerate {
        vec![0.0; series.observations.len()]
    } else {
        let range = max - min;
        series
            .observations
            .iter()
            .map(|y| (y - min) / range)
            .collect()
    };
    ScaledSeries {
        id: series.id.clone(),
        values,
        scale_min: min,
        scale_max: if degenerate { min } else { max },
        degenerate,
    }
}

/// `y = min + p * (max - min)`, without clamping `p`.
pub fn invert_scale(preds: &[f64], scale_min: f64, scale_max: f64) -> Vec<f64> {
    let range = scale_max - scale_min;
    preds.iter().map(|p| scale_min + p * range).collect()
}

/// Lag-embedded regression frame: row `r` holds `values[r..r + lag]` and its
/// target is `values[r + lag]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SupervisedFrame {
    pub lag: usize,
    inputs: Vec<f64>,
    pub targets: Vec<f64>,
}

impl SupervisedFrame {
    pub fn rows(&self) -> usize {
        self.targets.len()
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.inputs[r * self.lag..(r + 1) * self.lag]
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    /// Row-major `rows x lag` input matrix.
    pub fn inputs(&self) -> &[f64] {
        &self.inputs
    }
}

pub fn embed_lags(values: &[f64], lag: usize) -> Result<SupervisedFrame, SeriesError> {
    if lag == 0 || values.len() < lag + 1 {
        return Err(SeriesError::SeriesTooShort {
            needed: lag + 1,
            got: values.len(),
        });
    }
    let rows = values.len() - lag;
    let mut inputs = Vec::with_capacity(rows * lag);
    for r in 0..rows {
        inputs.extend_from_slice(&values[r..r + lag]);
    }
    Ok(SupervisedFrame {
        lag,
        inputs,
        targets: values[lag..].to_vec(),
    })
}

/// Multi-step forecast by feeding each one-step prediction back into the
/// window.
pub fn recursive_forecast<F>(mut predict_one: F, last_window: &[f64], horizon: usize) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let lag = last_window.len();
    let mut buffer = Vec::with_capacity(lag + horizon);
    buffer.extend_from_slice(last_window);
    for step in 0..horizon {
        let next = predict_one(&buffer[step..step + lag]);
        buffer.push(next);
    }
    buffer.split_off(lag)
}

/// Equal-width bins starting at the shortest length; `(lower edge, count)`.
pub fn length_histogram(lengths: &[usize], bins: usize) -> Vec<(usize, usize)> {
    let (Some(&min), Some(&max)) = (lengths.iter().min(), lengths.iter().max()) else {
        return Vec::new();
    };
    let bins = bins.max(1);
    let width = (max - min + 1).div_ceil(bins).max(1);
    let count = (max - min) / width + 1;
    let mut hist: Vec<(usize, usize)> = (0..count).map(|k| (min + k * width, 0)).collect();
    for &len in lengths {
        hist[(len - min) / width].1 += 1;
    }
    hist
}

pub fn write_length_histogram<W: Write>(
    hist: &[(usize, usize)],
    writer: W,
) -> Result<(), SeriesError> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(["length_bin", "count"])?;
    for (bin, count) in hist {
        out.write_record([bin.to_string(), count.to_string()])?;
    }
    out.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Rows `id,scale_min,scale_max,degenerate,v1,v2,...`.
pub fn write_scaled_csv<W: Write>(series: &[ScaledSeries], writer: W) -> Result<(), SeriesError> {
    let mut out = csv::WriterBuilder::new().flexible(true).from_writer(writer);
    out.write_record(["id", "scale_min", "scale_max", "degenerate", "values"])?;
    for s in series {
        let mut row = vec![
            s.id.clone(),
            s.scale_min.to_string(),
            s.scale_max.to_string(),
            s.degenerate.to_string(),
        ];
        row.extend(s.values.iter().map(f64::to_string));
        out.write_record(&row)?;
    }
    out.flush().map_err(csv::Error::from)?;
    Ok(())
}
