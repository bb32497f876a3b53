//! Model pools, forecast tensors and combination rules.
//!
//! Combination happens in scaled space; inverting the min-max scaling
//! afterwards gives the same result as combining inverted forecasts because
//! the inversion is affine and the weights sum to one.

use std::fmt;
use std::io::Write;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lstm::{load_checkpoint, Checkpoint, LstmError};

#[derive(Debug, Error)]
pub enum EnsembleError {
    #[error("pool member {index} failed: {source}")]
    Member {
        index: usize,
        #[source]
        source: LstmError,
    },
    #[error("expected {expected} entries, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("inconsistent forecast shapes: {0}")]
    InconsistentShapes(String),
    #[error("invalid combination weights: {0}")]
    InvalidWeights(String),
    #[error("source pool {source_label} has {have} members, {need} required")]
    InsufficientMembers {
        source_label: String,
        have: usize,
        need: usize,
    },
    #[error("empty pool")]
    EmptyPool,
    #[error("cannot keep {keep} of {size} members")]
    InvalidTrimSize { keep: usize, size: usize },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

/// Which base distribution produced a member's learning rate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Exp,
    Beta,
    Normal,
    Mixed,
}

impl Provenance {
    pub fn label(self) -> &'static str {
        match self {
            Provenance::Exp => "exp",
            Provenance::Beta => "beta",
            Provenance::Normal => "normal",
            Provenance::Mixed => "mixed",
        }
    }
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Provenance {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "exp" => Ok(Provenance::Exp),
            "beta" => Ok(Provenance::Beta),
            "normal" => Ok(Provenance::Normal),
            "mixed" => Ok(Provenance::Mixed),
            other => Err(format!("unknown provenance {other:?}")),
        }
    }
}

#[derive(Clone, Debug)]
pub enum CheckpointRef {
    Loaded(Arc<Checkpoint>),
    File(PathBuf),
}

impl CheckpointRef {
    pub fn resolve(&self) -> Result<Arc<Checkpoint>, LstmError> {
        match self {
            CheckpointRef::Loaded(c) => Ok(Arc::clone(c)),
            CheckpointRef::File(path) => load_checkpoint(path).map(Arc::new),
        }
    }

    pub fn path(&self) -> Option<&PathBuf> {
        match self {
            CheckpointRef::File(p) => Some(p),
            CheckpointRef::Loaded(_) => None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct PoolMember {
    pub checkpoint: CheckpointRef,
    pub provenance: Provenance,
    pub learning_rate: f64,
    pub segment_index: usize,
}

/// Ordered base models. Member `i` pairs with combination weight `i`; pools
/// built from one training run keep checkpoint (segment) order.
#[derive(Clone, Debug)]
pub struct ModelPool {
    members: Vec<PoolMember>,
}

impl ModelPool {
    pub fn new(members: Vec<PoolMember>) -> Result<Self, EnsembleError> {
        if members.is_empty() {
            return Err(EnsembleError::EmptyPool);
        }
        Ok(Self { members })
    }

    pub fn from_checkpoints(
        checkpoints: Vec<Checkpoint>,
        provenance: Provenance,
    ) -> Result<Self, EnsembleError> {
        Self::new(
            checkpoints
                .into_iter()
                .map(|c| PoolMember {
                    provenance,
                    learning_rate: c.learning_rate,
                    segment_index: c.segment_index,
                    checkpoint: CheckpointRef::Loaded(Arc::new(c)),
                })
                .collect(),
        )
    }

    pub fn members(&self) -> &[PoolMember] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Sub-pool with the given member indices, in the order given.
    pub fn select(&self, indices: &[usize]) -> Result<Self, EnsembleError> {
        Self::new(indices.iter().map(|&i| self.members[i].clone()).collect())
    }

    /// Rows `member,provenance,learning_rate,segment_index,checkpoint`.
    pub fn write_manifest<W: Write>(&self, writer: W) -> Result<(), EnsembleError> {
        let mut out = csv::Writer::from_writer(writer);
        out.write_record([
            "member",
            "provenance",
            "learning_rate",
            "segment_index",
            "checkpoint",
        ])?;
        for (i, m) in self.members.iter().enumerate() {
            out.write_record([
                (i + 1).to_string(),
                m.provenance.to_string(),
                m.learning_rate.to_string(),
                m.segment_index.to_string(),
                m.checkpoint
                    .path()
                    .map(|p| p.display().to_string())
                    .unwrap_or_default(),
            ])?;
        }
        out.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

/// Forecasts of every pool member for one series: `rows × horizon`,
/// row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ForecastTensor {
    pub series_id: String,
    rows: usize,
    horizon: usize,
    values: Vec<f64>,
}

impl ForecastTensor {
    pub fn from_rows(
        series_id: impl Into<String>,
        rows: Vec<Vec<f64>>,
    ) -> Result<Self, EnsembleError> {
        let horizon = rows.first().map(Vec::len).ok_or(EnsembleError::EmptyPool)?;
        if horizon == 0 {
            return Err(EnsembleError::InconsistentShapes("zero horizon".into()));
        }
        if let Some(bad) = rows.iter().position(|r| r.len() != horizon) {
            return Err(EnsembleError::InconsistentShapes(format!(
                "row {} has {} steps, expected {horizon}",
                bad + 1,
                rows[bad].len()
            )));
        }
        if rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(EnsembleError::InconsistentShapes(
                "non-finite forecast".into(),
            ));
        }
        Ok(Self {
            series_id: series_id.into(),
            rows: rows.len(),
            horizon,
            values: rows.concat(),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.horizon..(i + 1) * self.horizon]
    }

    pub fn get(&self, i: usize, h: usize) -> f64 {
        self.values[i * self.horizon + h]
    }

    pub fn select(&self, indices: &[usize]) -> Result<Self, EnsembleError> {
        Self::from_rows(
            self.series_id.clone(),
            indices.iter().map(|&i| self.row(i).to_vec()).collect(),
        )
    }

    /// Per-step `(min, max)` over the rows.
    pub fn column_bounds(&self, h: usize) -> (f64, f64) {
        (0..self.rows)
            .map(|i| self.get(i, h))
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                (lo.min(v), hi.max(v))
            })
    }
}

/// Row `i` is member `i`'s recursive eval-mode forecast from `window`.
pub fn predict_pool(
    pool: &ModelPool,
    series_id: &str,
    window: &[f64],
    horizon: usize,
) -> Result<ForecastTensor, EnsembleError> {
    let rows = pool
        .members()
        .iter()
        .enumerate()
        .map(|(index, m)| {
            m.checkpoint
                .resolve()
                .and_then(|c| c.forecast(window, horizon))
                .map_err(|source| EnsembleError::Member { index, source })
        })
        .collect::<Result<Vec<_>, _>>()?;
    ForecastTensor::from_rows(series_id, rows)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CombinationWeights {
    pub raw: Vec<f64>,
    pub normalized: Vec<f64>,
}

impl CombinationWeights {
    /// `normalized_i = raw_i / sum(raw)`.
    pub fn new(raw: Vec<f64>) -> Result<Self, EnsembleError> {
        if raw.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(EnsembleError::InvalidWeights(
                "weights must be finite and nonnegative".into(),
            ));
        }
        let total: f64 = raw.iter().sum();
        if !(total > 0.0) {
            return Err(EnsembleError::InvalidWeights("weights are all zero".into()));
        }
        let normalized = raw.iter().map(|w| w / total).collect();
        Ok(Self { raw, normalized })
    }

    pub fn uniform(p: usize) -> Self {
        Self::new(vec![1.0; p]).expect("p >= 1")
    }

    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }
}

// A convex combination can land an ulp outside the hull of its inputs;
// clamp so the hull property holds exactly.
fn clamp_to_column(tensor: &ForecastTensor, h: usize, v: f64) -> f64 {
    let (lo, hi) = tensor.column_bounds(h);
    v.clamp(lo, hi)
}

/// Column-wise arithmetic mean.
pub fn combine_simple(tensor: &ForecastTensor) -> Vec<f64> {
    let p = tensor.rows() as f64;
    (0..tensor.horizon())
        .map(|h| {
            let sum: f64 = (0..tensor.rows()).map(|i| tensor.get(i, h)).sum();
            clamp_to_column(tensor, h, sum / p)
        })
        .collect()
}

/// `out_h = sum_i normalized_i * f_ih`.
pub fn combine_weighted(
    tensor: &ForecastTensor,
    weights: &CombinationWeights,
) -> Result<Vec<f64>, EnsembleError> {
    if weights.len() != tensor.rows() {
        return Err(EnsembleError::LengthMismatch {
            expected: tensor.rows(),
            got: weights.len(),
        });
    }
    Ok((0..tensor.horizon())
        .map(|h| {
            let v: f64 = weights
                .normalized
                .iter()
                .enumerate()
                .map(|(i, w)| w * tensor.get(i, h))
                .sum();
            clamp_to_column(tensor, h, v)
        })
        .collect())
}

/// Prefactor applied to the summed squared disagreements.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiversityNormalization {
    /// `1 / (N * H)`: mean squared disagreement per series and step.
    #[default]
    SeriesHorizon,
    /// `1 / (H * H)`: sum of squared disagreements scaled by the squared horizon.
    HorizonSquared,
}

/// Symmetric `p × p` matrix, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct DiversityMatrix {
    size: usize,
    values: Vec<f64>,
}

impl DiversityMatrix {
    /// A matrix given in full, e.g. one read back from CSV. Must be square.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self, EnsembleError> {
        let size = rows.len();
        if let Some(bad) = rows.iter().find(|r| r.len() != size) {
            return Err(EnsembleError::LengthMismatch {
                expected: size,
                got: bad.len(),
            });
        }
        Ok(Self {
            size,
            values: rows.concat(),
        })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.size + j]
    }

    /// Mean over the `p (p - 1)` off-diagonal entries; 0 for `p = 1`.
    pub fn mean_off_diagonal(&self) -> f64 {
        let p = self.size;
        if p < 2 {
            return 0.0;
        }
        let upper: f64 = (0..p)
            .flat_map(|i| (i + 1..p).map(move |j| (i, j)))
            .map(|(i, j)| self.get(i, j))
            .sum();
        2.0 * upper / (p * (p - 1)) as f64
    }

    /// `p` rows of `p` comma-separated values, no header.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), EnsembleError> {
        let mut out = csv::WriterBuilder::new()
            .has_headers(false)
            .from_writer(writer);
        for i in 0..self.size {
            out.write_record((0..self.size).map(|j| self.get(i, j).to_string()))?;
        }
        out.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

/// `DIV_ij = c · sum_k sum_h (f_ikh − f_jkh)²` over all series `k`.
pub fn diversity_matrix(
    tensors: &[ForecastTensor],
    normalization: DiversityNormalization,
) -> Result<DiversityMatrix, EnsembleError> {
    let first = tensors
        .first()
        .ok_or_else(|| EnsembleError::InconsistentShapes("no forecast tensors".into()))?;
    let (p, horizon) = (first.rows(), first.horizon());
    if let Some(t) = tensors
        .iter()
        .find(|t| t.rows() != p || t.horizon() != horizon)
    {
        return Err(EnsembleError::InconsistentShapes(format!(
            "series {} has shape {}x{}, expected {p}x{horizon}",
            t.series_id,
            t.rows(),
            t.horizon()
        )));
    }
    let n = tensors.len() as f64;
    let h = horizon as f64;
    let scale = match normalization {
        DiversityNormalization::SeriesHorizon => 1.0 / (n * h),
        DiversityNormalization::HorizonSquared => 1.0 / (h * h),
    };
    let mut values = vec![0.0; p * p];
    for i in 0..p {
        for j in i + 1..p {
            let total: f64 = tensors
                .iter()
                .map(|t| {
                    t.row(i)
                        .iter()
                        .zip(t.row(j))
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>()
                })
                .sum();
            values[i * p + j] = scale * total;
            values[j * p + i] = scale * total;
        }
    }
    Ok(DiversityMatrix { size: p, values })
}

/// Members per source for a mixed pool of size `p`: `(exp, beta, normal)`.
pub fn mixed_split(p: usize) -> (usize, usize, usize) {
    let (base, rem) = (p / 3, p % 3);
    (
        base + usize::from(rem >= 1),
        base + usize::from(rem >= 2),
        base,
    )
}

/// Mixed pool: `floor(p/3)` leading members of each source, with the
/// `p mod 3` extra members taken from `exp` then `beta`. Provenance labels of
/// the sources are kept.
pub fn mixed_pool(
    exp: &ModelPool,
    beta: &ModelPool,
    normal: &ModelPool,
    p: usize,
) -> Result<ModelPool, EnsembleError> {
    if p == 0 {
        return Err(EnsembleError::EmptyPool);
    }
    let need = p.div_ceil(3);
    for (label, pool) in [("exp", exp), ("beta", beta), ("normal", normal)] {
        if pool.len() < need {
            return Err(EnsembleError::InsufficientMembers {
                source_label: label.to_string(),
                have: pool.len(),
                need,
            });
        }
    }
    let (n_exp, n_beta, n_normal) = mixed_split(p);
    let members = exp.members()[..n_exp]
        .iter()
        .chain(&beta.members()[..n_beta])
        .chain(&normal.members()[..n_normal])
        .cloned()
        .collect();
    ModelPool::new(members)
}

/// Greedy diverse subset of size `keep`, returned in ascending index order.
///
/// Starts from the pair with the largest entry, then repeatedly adds the
/// member with the largest summed diversity to the current selection. Ties
/// go to the lowest index.
pub fn select_diverse(div: &DiversityMatrix, keep: usize) -> Result<Vec<usize>, EnsembleError> {
    let p = div.size();
    if keep == 0 || keep > p {
        return Err(EnsembleError::InvalidTrimSize { keep, size: p });
    }
    if keep == p {
        return Ok((0..p).collect());
    }
    let mut best = (0, 1, f64::NEG_INFINITY);
    for i in 0..p {
        for j in i + 1..p {
            if div.get(i, j) > best.2 {
                best = (i, j, div.get(i, j));
            }
        }
    }
    let mut selected = vec![best.0];
    if keep >= 2 {
        selected.push(best.1);
    }
    while selected.len() < keep {
        let mut pick = (usize::MAX, f64::NEG_INFINITY);
        for m in (0..p).filter(|m| !selected.contains(m)) {
            let score: f64 = selected.iter().map(|&s| div.get(m, s)).sum();
            if score > pick.1 {
                pick = (m, score);
            }
        }
        selected.push(pick.0);
    }
    selected.sort_unstable();
    Ok(selected)
}

pub fn trim_by_diversity(
    pool: &ModelPool,
    div: &DiversityMatrix,
    keep: usize,
) -> Result<ModelPool, EnsembleError> {
    if div.size() != pool.len() {
        return Err(EnsembleError::LengthMismatch {
            expected: pool.len(),
            got: div.size(),
        });
    }
    pool.select(&select_diverse(div, keep)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lstm::{Architecture, LstmParams};

    fn tensor(rows: &[&[f64]]) -> ForecastTensor {
        ForecastTensor::from_rows("s", rows.iter().map(|r| r.to_vec()).collect()).unwrap()
    }

    fn matrix(rows: &[&[f64]]) -> DiversityMatrix {
        DiversityMatrix {
            size: rows.len(),
            values: rows.concat(),
        }
    }

    fn pool(n: usize, provenance: Provenance) -> ModelPool {
        let cps = (0..n)
            .map(|i| Checkpoint {
                params: LstmParams::zeros(Architecture::default()),
                segment_index: i + 1,
                iteration: (i as u64 + 1) * 10,
                learning_rate: 0.001,
                seed: 0,
            })
            .collect();
        ModelPool::from_checkpoints(cps, provenance).unwrap()
    }

    #[test]
    fn simple_average_examples() {
        for v in combine_simple(&tensor(&[&[0.2, 0.2], &[0.4, 0.4]])) {
            assert!((v - 0.3).abs() < 1e-15);
        }
        assert_eq!(combine_simple(&tensor(&[&[0.1, 0.7]])), vec![0.1, 0.7]);
        assert_eq!(
            combine_simple(&tensor(&[&[0.0, 1.0], &[1.0, 0.0], &[2.0, 2.0]])),
            vec![1.0, 1.0]
        );
    }

    #[test]
    fn weighted_average_examples() {
        let t = tensor(&[&[0.0, 0.0], &[1.0, 1.0]]);
        let w = CombinationWeights::new(vec![1.0, 3.0]).unwrap();
        assert_eq!(combine_weighted(&t, &w).unwrap(), vec![0.75, 0.75]);
        let t3 = tensor(&[&[0.3, 0.9], &[1.0, 1.0], &[5.0, 2.0]]);
        let first = CombinationWeights::new(vec![1.0, 0.0, 0.0]).unwrap();
        assert_eq!(combine_weighted(&t3, &first).unwrap(), vec![0.3, 0.9]);
        let uniform = combine_weighted(&t3, &CombinationWeights::uniform(3)).unwrap();
        for (a, b) in uniform.iter().zip(combine_simple(&t3)) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(matches!(
            combine_weighted(&t3, &CombinationWeights::uniform(2)),
            Err(EnsembleError::LengthMismatch {
                expected: 3,
                got: 2
            })
        ));
    }

    #[test]
    fn weights_reject_degenerate_input() {
        assert!(CombinationWeights::new(vec![0.0, 0.0]).is_err());
        assert!(CombinationWeights::new(vec![1.0, -0.5]).is_err());
        assert!(CombinationWeights::new(vec![1.0, f64::NAN]).is_err());
    }

    #[test]
    fn diversity_of_two_models_by_hand() {
        let d = diversity_matrix(
            &[tensor(&[&[0.0, 0.0], &[2.0, 2.0]])],
            DiversityNormalization::SeriesHorizon,
        )
        .unwrap();
        assert_eq!(d.get(0, 1), 4.0);
        assert_eq!(d.get(1, 0), 4.0);
        assert_eq!(d.get(0, 0), 0.0);
        let squared = diversity_matrix(
            &[tensor(&[&[0.0, 0.0], &[2.0, 2.0]])],
            DiversityNormalization::HorizonSquared,
        )
        .unwrap();
        assert_eq!(squared.get(0, 1), 2.0);
        // a second, model-agreeing series halves the per-series mean
        let pair = [
            tensor(&[&[0.0, 0.0], &[2.0, 2.0]]),
            tensor(&[&[1.0, 1.0], &[1.0, 1.0]]),
        ];
        let mean = diversity_matrix(&pair, DiversityNormalization::SeriesHorizon).unwrap();
        assert_eq!(mean.get(0, 1), 2.0);
        let identical = diversity_matrix(
            &[tensor(&[&[0.5, 0.1], &[0.5, 0.1]])],
            DiversityNormalization::SeriesHorizon,
        )
        .unwrap();
        assert_eq!(identical.get(0, 1), 0.0);
    }

    #[test]
    fn diversity_rejects_mixed_shapes() {
        let a = tensor(&[&[0.0, 0.0], &[1.0, 1.0]]);
        let b = tensor(&[&[0.0, 0.0]]);
        assert!(matches!(
            diversity_matrix(&[a, b], DiversityNormalization::SeriesHorizon),
            Err(EnsembleError::InconsistentShapes(_))
        ));
    }

    #[test]
    fn diversity_csv_is_square() {
        let d = diversity_matrix(
            &[tensor(&[&[0.0], &[1.0], &[3.0]])],
            DiversityNormalization::SeriesHorizon,
        )
        .unwrap();
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "0,1,9\n1,0,4\n9,4,0\n");
        assert!((d.mean_off_diagonal() - 14.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn mixed_pool_splits() {
        assert_eq!(mixed_split(9), (3, 3, 3));
        assert_eq!(mixed_split(10), (4, 3, 3));
        assert_eq!(mixed_split(11), (4, 4, 3));
        let (e, b, n) = (
            pool(4, Provenance::Exp),
            pool(4, Provenance::Beta),
            pool(4, Provenance::Normal),
        );
        let m = mixed_pool(&e, &b, &n, 10).unwrap();
        let labels: Vec<_> = m.members().iter().map(|m| m.provenance).collect();
        assert_eq!(labels.iter().filter(|&&p| p == Provenance::Exp).count(), 4);
        assert_eq!(labels.iter().filter(|&&p| p == Provenance::Beta).count(), 3);
        assert_eq!(
            labels.iter().filter(|&&p| p == Provenance::Normal).count(),
            3
        );
        let segments: Vec<_> = m.members().iter().map(|m| m.segment_index).collect();
        assert_eq!(segments, vec![1, 2, 3, 4, 1, 2, 3, 1, 2, 3]);
        let ones = mixed_pool(
            &pool(1, Provenance::Exp),
            &pool(1, Provenance::Beta),
            &pool(1, Provenance::Normal),
            3,
        )
        .unwrap();
        assert_eq!(ones.len(), 3);
        assert!(matches!(
            mixed_pool(&pool(3, Provenance::Exp), &b, &n, 10),
            Err(EnsembleError::InsufficientMembers {
                need: 4,
                have: 3,
                ..
            })
        ));
    }

    #[test]
    fn greedy_trimming() {
        let div = matrix(&[&[0.0, 1.0, 5.0], &[1.0, 0.0, 2.0], &[5.0, 2.0, 0.0]]);
        assert_eq!(select_diverse(&div, 2).unwrap(), vec![0, 2]);
        assert_eq!(select_diverse(&div, 3).unwrap(), vec![0, 1, 2]);
        assert_eq!(select_diverse(&div, 1).unwrap(), vec![0]);
        assert!(select_diverse(&div, 4).is_err());
        assert!(select_diverse(&div, 0).is_err());
        let four = matrix(&[
            &[0.0, 1.0, 1.0, 3.0],
            &[1.0, 0.0, 2.0, 1.0],
            &[1.0, 2.0, 0.0, 1.0],
            &[3.0, 1.0, 1.0, 0.0],
        ]);
        // after {0, 3}, members 1 and 2 tie at 2.0; the lower index wins
        assert_eq!(select_diverse(&four, 3).unwrap(), vec![0, 1, 3]);
        let p = pool(3, Provenance::Exp);
        let trimmed = trim_by_diversity(&p, &div, 2).unwrap();
        let segments: Vec<_> = trimmed.members().iter().map(|m| m.segment_index).collect();
        assert_eq!(segments, vec![1, 3]);
    }

    #[test]
    fn pool_prediction_shapes() {
        let p = pool(3, Provenance::Exp);
        let t = predict_pool(&p, "W1", &[0.4; 7], 13).unwrap();
        assert_eq!((t.rows(), t.horizon()), (3, 13));
        assert_eq!(t.row(0), t.row(1));
        assert!(matches!(
            predict_pool(&p, "W1", &[0.4; 5], 2),
            Err(EnsembleError::Member { index: 0, .. })
        ));
    }

    #[test]
    fn missing_checkpoint_file_names_member() {
        let mut members = pool(2, Provenance::Beta).members().to_vec();
        members[1].checkpoint = CheckpointRef::File(PathBuf::from("/nonexistent/m2.ckpt"));
        let p = ModelPool::new(members).unwrap();
        assert!(matches!(
            predict_pool(&p, "W1", &[0.4; 7], 2),
            Err(EnsembleError::Member { index: 1, .. })
        ));
    }

    #[test]
    fn manifest_lists_members() {
        let mut buf = Vec::new();
        pool(2, Provenance::Normal)
            .write_manifest(&mut buf)
            .unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "member,provenance,learning_rate,segment_index,checkpoint\n1,normal,0.001,1,\n2,normal,0.001,2,\n"
        );
    }
}
