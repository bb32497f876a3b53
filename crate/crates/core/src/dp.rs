//! Truncated Dirichlet-process sampling.
//!
//! A draw `G ~ DP(alpha, H)` is represented by truncated stick breaking:
//! fractions `beta_i ~ Beta(1, alpha)` break a unit stick into pieces
//! `beta_i * prod_{j<i} (1 - beta_j)`, each piece carrying an atom drawn
//! i.i.d. from the base distribution `H`. Only the first `p` pieces are kept;
//! the residual stick is discarded and the kept pieces are renormalized.
//!
//! In this toolkit the atoms are learning rates and the normalized pieces are
//! forecast-combination weights.

use std::io::Write;

use rand::distr::Open01;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed::{derive_stream, Stream};

/// Rejection sampling gives up after this many attempts.
pub const MAX_REJECTION_ATTEMPTS: u64 = 1_000_000;

#[derive(Debug, Error)]
pub enum DpError {
    #[error("invalid sampler configuration: {0}")]
    InvalidConfig(String),
    #[error(
        "rejection sampling did not produce a value inside [{lo}, {hi}] after {attempts} attempts"
    )]
    NonConvergence { lo: f64, hi: f64, attempts: u64 },
    #[error("failed to write draw: {0}")]
    Io(#[from] csv::Error),
}

fn default_lo() -> f64 {
    1e-8
}

fn default_hi() -> f64 {
    1.0
}

/// Parametric family of a base distribution.
///
/// `Exponential` is parameterized by its mean (so `EXP(0.001)` has rate
/// 1000). `TruncatedGaussian` takes a mean and a standard deviation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Family {
    Exponential { mean: f64 },
    TruncatedGaussian { mean: f64, stddev: f64 },
    Beta { shape_a: f64, shape_b: f64 },
}

/// A base distribution restricted to the support `[lo, hi]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaseDistribution {
    #[serde(flatten)]
    pub family: Family,
    #[serde(default = "default_lo")]
    pub lo: f64,
    #[serde(default = "default_hi")]
    pub hi: f64,
}

impl BaseDistribution {
    pub fn new(family: Family) -> Self {
        Self {
            family,
            lo: default_lo(),
            hi: default_hi(),
        }
    }

    pub fn exponential(mean: f64) -> Self {
        Self::new(Family::Exponential { mean })
    }

    pub fn truncated_gaussian(mean: f64, stddev: f64) -> Self {
        Self::new(Family::TruncatedGaussian { mean, stddev })
    }

    pub fn beta(shape_a: f64, shape_b: f64) -> Self {
        Self::new(Family::Beta { shape_a, shape_b })
    }

    pub fn with_bounds(mut self, lo: f64, hi: f64) -> Self {
        self.lo = lo;
        self.hi = hi;
        self
    }

    /// Short provenance label: `exp`, `normal` or `beta`.
    pub fn label(&self) -> &'static str {
        match self.family {
            Family::Exponential { .. } => "exp",
            Family::TruncatedGaussian { .. } => "normal",
            Family::Beta { .. } => "beta",
        }
    }

    pub fn validate(&self) -> Result<(), DpError> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(DpError::InvalidConfig(format!(
                    "{name} must be positive and finite, got {v}"
                )))
            }
        };
        positive("lo", self.lo)?;
        positive("hi", self.hi)?;
        if self.lo >= self.hi {
            return Err(DpError::InvalidConfig(format!(
                "support bounds must satisfy lo < hi, got [{}, {}]",
                self.lo, self.hi
            )));
        }
        match self.family {
            Family::Exponential { mean } => positive("mean", mean),
            Family::TruncatedGaussian { mean, stddev } => {
                positive("stddev", stddev)?;
                if !(mean > self.lo && mean < self.hi) {
                    return Err(DpError::InvalidConfig(format!(
                        "truncated gaussian mean {mean} must lie in ({}, {})",
                        self.lo, self.hi
                    )));
                }
                Ok(())
            }
            Family::Beta { shape_a, shape_b } => {
                positive("shape_a", shape_a)?;
                positive("shape_b", shape_b)
            }
        }
    }

    /// Untruncated inverse CDF. `None` for the Gaussian family, which is
    /// sampled by rejection instead.
    pub fn quantile(&self, u: f64) -> Option<f64> {
        match self.family {
            Family::Exponential { mean } => Some(-mean * (-u).ln_1p()),
            Family::Beta { shape_a, shape_b } => Some(beta_quantile(shape_a, shape_b, u)),
            Family::TruncatedGaussian { .. } => None,
        }
    }

    /// One variate from the distribution restricted to `[lo, hi]`.
    ///
    /// Exponential and Beta transform a single uniform through the inverse
    /// CDF and redraw when the result falls outside the support; the Gaussian
    /// redraws normal variates until one lands inside.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<f64, DpError> {
        for _ in 0..MAX_REJECTION_ATTEMPTS {
            let x = match self.family {
                Family::TruncatedGaussian { mean, stddev } => {
                    let z: f64 = rng.sample(StandardNormal);
                    mean + stddev * z
                }
                _ => {
                    let u: f64 = rng.random();
                    self.quantile(u).expect("closed-form family")
                }
            };
            if x >= self.lo && x <= self.hi {
                return Ok(x);
            }
        }
        Err(DpError::NonConvergence {
            lo: self.lo,
            hi: self.hi,
            attempts: MAX_REJECTION_ATTEMPTS,
        })
    }
}

/// Inverse CDF of Beta(a, b).
///
/// Closed forms when either shape is 1, bisection on the regularized
/// incomplete beta function otherwise.
pub fn beta_quantile(a: f64, b: f64, u: f64) -> f64 {
    if u <= 0.0 {
        return 0.0;
    }
    if u >= 1.0 {
        return 1.0;
    }
    if a == 1.0 {
        // 1 - (1 - u)^(1/b)
        return -((-u).ln_1p() / b).exp_m1();
    }
    if b == 1.0 {
        return (u.ln() / a).exp();
    }
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if statrs::function::beta::beta_reg(a, b, mid) < u {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Parameters of one truncated DP draw.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DpConfig {
    pub alpha: f64,
    pub base: BaseDistribution,
    pub truncation: usize,
    pub seed: u64,
}

impl DpConfig {
    pub fn validate(&self) -> Result<(), DpError> {
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(DpError::InvalidConfig(format!(
                "alpha must be positive, got {}",
                self.alpha
            )));
        }
        if self.truncation == 0 {
            return Err(DpError::InvalidConfig(
                "truncation level must be at least 1".into(),
            ));
        }
        self.base.validate()
    }

    /// Descending learning rates from the `learning-rates` child stream of
    /// `seed`.
    pub fn learning_rates(&self) -> Result<Vec<f64>, DpError> {
        draw_learning_rates(self, &mut derive_stream(self.seed, "learning-rates"))
    }

    /// Combination weights from the `combination-weights` child stream of
    /// `seed`, independent of [`DpConfig::learning_rates`].
    pub fn combination_weights(&self) -> Result<Vec<f64>, DpError> {
        draw_combination_weights(self, &mut derive_stream(self.seed, "combination-weights"))
    }

    /// The full draw from the `draw` child stream of `seed`.
    pub fn draw(&self) -> Result<StickBreakingDraw, DpError> {
        stick_breaking(self, &mut derive_stream(self.seed, "draw"))
    }
}

/// One truncated stick-breaking realization.
#[derive(Clone, Debug, PartialEq)]
pub struct StickBreakingDraw {
    pub betas: Vec<f64>,
    pub weights: Vec<f64>,
    pub atoms: Vec<f64>,
}

impl StickBreakingDraw {
    /// Assemble a draw from given stick fractions and atoms.
    pub fn from_parts(betas: Vec<f64>, atoms: Vec<f64>) -> Self {
        assert_eq!(betas.len(), atoms.len(), "betas and atoms must align");
        let weights = normalize(&stick_pieces(&betas));
        Self {
            betas,
            weights,
            atoms,
        }
    }

    pub fn len(&self) -> usize {
        self.betas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.betas.is_empty()
    }

    /// Stick mass discarded by the truncation.
    pub fn residual_mass(&self) -> f64 {
        residual_mass(&self.betas)
    }

    /// Writes `index,beta,weight,atom` rows (1-based index) with a header.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), DpError> {
        let mut out = csv::Writer::from_writer(writer);
        out.write_record(["index", "beta", "weight", "atom"])?;
        for i in 0..self.len() {
            out.write_record([
                (i + 1).to_string(),
                self.betas[i].to_string(),
                self.weights[i].to_string(),
                self.atoms[i].to_string(),
            ])?;
        }
        out.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

/// Pre-normalization weights `beta_i * prod_{j<i} (1 - beta_j)`.
pub fn stick_pieces(betas: &[f64]) -> Vec<f64> {
    let mut remaining = 1.0;
    betas
        .iter()
        .map(|&b| {
            let piece = b * remaining;
            remaining *= 1.0 - b;
            piece
        })
        .collect()
}

/// `prod_i (1 - beta_i)`.
pub fn residual_mass(betas: &[f64]) -> f64 {
    betas.iter().map(|b| 1.0 - b).product()
}

fn normalize(pieces: &[f64]) -> Vec<f64> {
    let total: f64 = pieces.iter().sum();
    pieces.iter().map(|w| w / total).collect()
}

/// One `Beta(1, alpha)` stick fraction, strictly inside (0, 1).
fn stick_fraction<R: Rng + ?Sized>(alpha: f64, rng: &mut R) -> f64 {
    let u: f64 = rng.sample(Open01);
    let beta = beta_quantile(1.0, alpha, u);
    if beta >= 1.0 {
        1.0 - f64::EPSILON / 2.0
    } else if beta <= 0.0 {
        f64::MIN_POSITIVE
    } else {
        beta
    }
}

/// `sample_base`: one variate from the base distribution.
pub fn sample_base<R: Rng + ?Sized>(base: &BaseDistribution, rng: &mut R) -> Result<f64, DpError> {
    base.sample(rng)
}

/// Truncated stick breaking at level `config.truncation`.
///
/// All `p` stick fractions are drawn first, then the `p` atoms.
pub fn stick_breaking<R: Rng + ?Sized>(
    config: &DpConfig,
    rng: &mut R,
) -> Result<StickBreakingDraw, DpError> {
    config.validate()?;
    let betas: Vec<f64> = (0..config.truncation)
        .map(|_| stick_fraction(config.alpha, rng))
        .collect();
    let atoms = (0..config.truncation)
        .map(|_| config.base.sample(rng))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(StickBreakingDraw::from_parts(betas, atoms))
}

/// Sort in descending order; equal values keep their relative order.
pub fn sort_descending(values: &mut [f64]) {
    values.sort_by(|a, b| b.partial_cmp(a).expect("finite learning rates"));
}

/// Atoms of one draw, sorted descending.
pub fn draw_learning_rates<R: Rng + ?Sized>(
    config: &DpConfig,
    rng: &mut R,
) -> Result<Vec<f64>, DpError> {
    let mut atoms = stick_breaking(config, rng)?.atoms;
    sort_descending(&mut atoms);
    Ok(atoms)
}

/// Normalized weights of one draw.
pub fn draw_combination_weights<R: Rng + ?Sized>(
    config: &DpConfig,
    rng: &mut R,
) -> Result<Vec<f64>, DpError> {
    Ok(stick_breaking(config, rng)?.weights)
}

/// Convenience for callers holding a [`Stream`].
pub fn sample_many(
    base: &BaseDistribution,
    n: usize,
    rng: &mut Stream,
) -> Result<Vec<f64>, DpError> {
    (0..n).map(|_| base.sample(rng)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::stream_from_seed;

    fn cfg(p: usize, base: BaseDistribution) -> DpConfig {
        DpConfig {
            alpha: 1000.0,
            base,
            truncation: p,
            seed: 11,
        }
    }

    #[test]
    fn exponential_median_matches_closed_form() {
        let x = BaseDistribution::exponential(0.001).quantile(0.5).unwrap();
        assert!((x - 0.001 * 2f64.ln()).abs() < 1e-18);
        assert!((x - 6.9315e-4).abs() < 1e-8);
    }

    #[test]
    fn beta_one_thousand_median_matches_closed_form() {
        let x = BaseDistribution::beta(1.0, 1000.0).quantile(0.5).unwrap();
        assert!((x - (1.0 - 0.5f64.powf(1.0 / 1000.0))).abs() < 1e-15);
        assert!((x - 6.9291e-4).abs() < 1e-8);
    }

    #[test]
    fn general_beta_quantile_inverts_cdf() {
        for &(a, b) in &[(2.0, 5.0), (0.5, 0.5), (3.0, 1.5)] {
            for &u in &[0.1, 0.5, 0.9] {
                let x = beta_quantile(a, b, u);
                assert!((statrs::function::beta::beta_reg(a, b, x) - u).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn truncated_gaussian_is_positive() {
        let base = BaseDistribution::truncated_gaussian(0.001, 0.01);
        let mut rng = stream_from_seed(3);
        for _ in 0..5000 {
            let x = base.sample(&mut rng).unwrap();
            assert!(x > 0.0 && x >= base.lo && x <= base.hi);
        }
    }

    #[test]
    fn infeasible_window_reports_non_convergence() {
        let base = BaseDistribution::truncated_gaussian(0.5, 1e-6).with_bounds(0.1, 0.4);
        // mean outside the window fails validation
        assert!(base.validate().is_err());
        let base = BaseDistribution::truncated_gaussian(0.5, 1e-9).with_bounds(0.49, 0.51);
        let narrow = BaseDistribution {
            lo: 0.5 + 1e-3,
            hi: 0.5 + 2e-3,
            ..base
        };
        let mut rng = stream_from_seed(1);
        match narrow.sample(&mut rng) {
            Err(DpError::NonConvergence { attempts, .. }) => {
                assert_eq!(attempts, MAX_REJECTION_ATTEMPTS)
            }
            other => panic!("expected NonConvergence, got {other:?}"),
        }
    }

    #[test]
    fn invalid_configs_are_rejected() {
        assert!(BaseDistribution::exponential(-1.0).validate().is_err());
        assert!(BaseDistribution::exponential(1.0)
            .with_bounds(0.5, 0.5)
            .validate()
            .is_err());
        assert!(BaseDistribution::beta(0.0, 1.0).validate().is_err());
        let mut c = cfg(3, BaseDistribution::exponential(0.001));
        c.alpha = 0.0;
        assert!(c.validate().is_err());
        c.alpha = 1.0;
        c.truncation = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn halving_sticks_renormalize() {
        let d = StickBreakingDraw::from_parts(vec![0.5; 3], vec![0.001; 3]);
        assert_eq!(stick_pieces(&d.betas), vec![0.5, 0.25, 0.125]);
        let expected = [4.0 / 7.0, 2.0 / 7.0, 1.0 / 7.0];
        for (w, e) in d.weights.iter().zip(expected) {
            assert!((w - e).abs() < 1e-15);
        }
        let two = StickBreakingDraw::from_parts(vec![0.5; 2], vec![0.001; 2]);
        assert!((two.weights[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((two.weights[1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn single_atom_has_unit_weight() {
        for beta in [1e-6, 0.3, 0.999] {
            assert_eq!(
                StickBreakingDraw::from_parts(vec![beta], vec![0.01]).weights,
                vec![1.0]
            );
        }
    }

    #[test]
    fn learning_rates_sort_descending() {
        let mut v = vec![0.0005, 0.002, 0.001];
        sort_descending(&mut v);
        assert_eq!(v, vec![0.002, 0.001, 0.0005]);
        let c = cfg(1, BaseDistribution::exponential(0.001));
        assert_eq!(c.learning_rates().unwrap().len(), 1);
    }

    #[test]
    fn exponential_rates_respect_support() {
        let c = cfg(100, BaseDistribution::exponential(0.001));
        let rates = c.learning_rates().unwrap();
        assert_eq!(rates.len(), 100);
        assert!(rates.windows(2).all(|w| w[0] >= w[1]));
        assert!(rates[0] < 1.0);
        assert!(*rates.last().unwrap() > 1e-8);
    }

    #[test]
    fn weights_are_deterministic_and_normalized() {
        let c = cfg(25, BaseDistribution::beta(1.0, 1000.0));
        let a = c.combination_weights().unwrap();
        let b = c.combination_weights().unwrap();
        assert_eq!(a, b);
        assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        // independent of the learning-rate stream
        let mut lr_stream = derive_stream(c.seed, "learning-rates");
        assert_ne!(draw_combination_weights(&c, &mut lr_stream).unwrap(), a);
    }

    #[test]
    fn csv_export_has_one_row_per_atom() {
        let d = StickBreakingDraw::from_parts(vec![0.5, 0.5], vec![0.002, 0.001]);
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "index,beta,weight,atom");
        assert_eq!(lines.len(), 3);
        assert!(lines[2].starts_with("2,0.5,"));
    }
}
