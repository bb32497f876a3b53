//! Seeded stand-in for the M4 weekly corpus.
//!
//! Each series is a positive level with a linear drift, an annual (52-week)
//! sinusoid and persistent AR(1) noise:
//!
//! ```text
//! y_t = level · (1 + drift · t / T) + amp · level · sin(2π t / 52 + phase) + e_t
//! e_t = phi · e_{t-1} + sigma · level · z_t,   z_t ~ N(0, 1)
//! ```
//!
//! with per-series parameters drawn uniformly: level in [1e3, 1e4], drift in
//! [-0.3, 0.3], amp in [0.05, 0.25], phase in [0, 2π), phi in [0.6, 0.95],
//! sigma in [0.01, 0.04]. Lengths are uniform in `[min_length, max_length]`,
//! and the first series always has exactly `min_length` points. Ids are
//! `W1, W2, ...`.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::seed::derive_stream;
use crate::series::{merge_rows, Corpus, SeriesError};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub count: usize,
    pub min_length: usize,
    pub max_length: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            count: 60,
            min_length: 276,
            max_length: 1000,
            seed: 4,
        }
    }
}

/// Full (train + test) series as `(id, values)`.
pub fn generate(spec: &SyntheticSpec) -> Vec<(String, Vec<f64>)> {
    (0..spec.count)
        .map(|k| {
            let id = format!("W{}", k + 1);
            let mut rng = derive_stream(spec.seed, &format!("synthetic/{id}"));
            let len = if k == 0 {
                spec.min_length
            } else {
                rng.random_range(spec.min_length..=spec.max_length.max(spec.min_length))
            };
            let level = rng.random_range(1e3..1e4);
            let drift = rng.random_range(-0.3..0.3);
            let amp = rng.random_range(0.05..0.25);
            let phase = rng.random_range(0.0..2.0 * PI);
            let phi = rng.random_range(0.6..0.95);
            let sigma = rng.random_range(0.01..0.04);
            let mut noise = 0.0;
            let values = (0..len)
                .map(|t| {
                    let z: f64 = rng.sample(StandardNormal);
                    noise = phi * noise + sigma * level * z;
                    let tf = t as f64;
                    level * (1.0 + drift * tf / len as f64)
                        + amp * level * (2.0 * PI * tf / 52.0 + phase).sin()
                        + noise
                })
                .collect();
            (id, values)
        })
        .collect()
}

fn split(
    series: Vec<(String, Vec<f64>)>,
    horizon: usize,
) -> (Vec<(String, Vec<f64>)>, Vec<(String, Vec<f64>)>) {
    series
        .into_iter()
        .map(|(id, mut values)| {
            let cut = values.len().saturating_sub(horizon);
            let test = values.split_off(cut);
            ((id.clone(), values), (id, test))
        })
        .unzip()
}

/// The synthetic corpus, split into train/test at `horizon` and merged back
/// exactly as files would be.
pub fn corpus(spec: &SyntheticSpec, horizon: usize, lag: usize) -> Corpus {
    let (train, test) = split(generate(spec), horizon);
    merge_rows(train, test, horizon, lag)
}

fn write_rows(rows: &[(String, Vec<f64>)], path: &Path) -> Result<(), SeriesError> {
    let io_err = |source| SeriesError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut out = BufWriter::new(File::create(path).map_err(io_err)?);
    let width = rows.iter().map(|r| r.1.len()).max().unwrap_or(0);
    let header: Vec<String> = (1..=width + 1).map(|i| format!("V{i}")).collect();
    writeln!(out, "{}", header.join(",")).map_err(io_err)?;
    for (id, values) in rows {
        let cells: Vec<String> = values.iter().map(f64::to_string).collect();
        writeln!(out, "{id},{}", cells.join(",")).map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

/// Writes M4-layout `train` and `test` files.
pub fn write_m4_pair(
    spec: &SyntheticSpec,
    horizon: usize,
    train: &Path,
    test: &Path,
) -> Result<(), SeriesError> {
    let (train_rows, test_rows) = split(generate(spec), horizon);
    write_rows(&train_rows, train)?;
    write_rows(&test_rows, test)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::series::load_m4_weekly;

    #[test]
    fn corpus_is_seeded_and_bounded() {
        let spec = SyntheticSpec {
            count: 12,
            ..SyntheticSpec::default()
        };
        let a = generate(&spec);
        assert_eq!(a, generate(&spec));
        let lengths: Vec<usize> = a.iter().map(|s| s.1.len()).collect();
        assert_eq!(*lengths.iter().min().unwrap(), 276);
        assert!(lengths.iter().all(|&l| (276..=1000).contains(&l)));
        assert!(a.iter().flat_map(|s| &s.1).all(|v| v.is_finite()));
    }

    #[test]
    fn files_load_back_to_the_in_memory_corpus() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SyntheticSpec {
            count: 5,
            ..SyntheticSpec::default()
        };
        let (train, test) = (dir.path().join("train.csv"), dir.path().join("test.csv"));
        write_m4_pair(&spec, 13, &train, &test).unwrap();
        let loaded = load_m4_weekly(&train, &test, 13, 7).unwrap();
        let direct = corpus(&spec, 13, 7);
        assert_eq!(loaded.series, direct.series);
        assert!(loaded.warnings.is_empty());
    }
}
