use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::ExperimentError;
use crate::dp::BaseDistribution;
use crate::ensemble::DiversityNormalization;
use crate::lstm::{Activation, Architecture};
use crate::metrics::Strategy;
use crate::synthetic::SyntheticSpec;

/// Where series come from.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub struct DataConfig {
    pub train: Option<PathBuf>,
    pub test: Option<PathBuf>,
    /// Used when no train/test paths are given.
    #[serde(default)]
    pub synthetic: SyntheticSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub lag: usize,
    pub horizon: usize,
    pub hidden1: usize,
    pub hidden2: usize,
    pub dropout: f64,
    pub head: [Activation; 2],
    /// Iterations per schedule segment.
    pub iterations: usize,
    /// Parameters start uniform in `[-init_scale, init_scale]`.
    pub init_scale: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let arch = Architecture::default();
        Self {
            lag: arch.lag,
            horizon: 13,
            hidden1: arch.hidden1,
            hidden2: arch.hidden2,
            dropout: arch.dropout,
            head: arch.head,
            iterations: 200,
            init_scale: crate::lstm::INIT_SCALE,
        }
    }
}

impl ModelConfig {
    pub fn architecture(&self) -> Architecture {
        Architecture {
            lag: self.lag,
            hidden1: self.hidden1,
            hidden2: self.hidden2,
            dropout: self.dropout,
            head: self.head,
        }
    }
}

/// The fixed-rate reference model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SingleConfig {
    pub learning_rate: f64,
    /// Total SGD iterations.
    pub iterations: usize,
}

impl Default for SingleConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            iterations: 2000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DpSection {
    pub alpha: f64,
    pub distributions: Vec<BaseDistribution>,
}

/// `EXP(0.001)` (mean 0.001), `N(0.001, 0.01)` (sd 0.01, truncated to the
/// support) and `Beta(1, 1000)`, all on `[1e-8, 1]`.
pub fn default_distributions() -> Vec<BaseDistribution> {
    vec![
        BaseDistribution::exponential(0.001),
        BaseDistribution::beta(1.0, 1000.0),
        BaseDistribution::truncated_gaussian(0.001, 0.01),
    ]
}

impl Default for DpSection {
    fn default() -> Self {
        Self {
            alpha: 1000.0,
            distributions: default_distributions(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleSection {
    pub diversity_normalization: DiversityNormalization,
    /// Fraction of a pool kept by the trimmed strategy (at least one member).
    pub trim_keep_fraction: f64,
    /// Write every harvested checkpoint under `out_dir/checkpoints`.
    pub save_checkpoints: bool,
}

impl Default for EnsembleSection {
    fn default() -> Self {
        Self {
            diversity_normalization: DiversityNormalization::SeriesHorizon,
            trim_keep_fraction: 0.5,
            save_checkpoints: false,
        }
    }
}

/// Everything needed to reproduce a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Number of series sampled from the corpus; ignored with `full_corpus`.
    pub series_limit: usize,
    pub full_corpus: bool,
    /// Worker threads; 0 uses all cores. Never affects outputs.
    pub workers: usize,
    pub original_units: bool,
    pub models: Vec<usize>,
    pub strategies: Vec<Strategy>,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub single: SingleConfig,
    pub dp: DpSection,
    pub ensemble: EnsembleSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 2023,
            out_dir: PathBuf::from("out"),
            series_limit: 20,
            full_corpus: false,
            workers: 0,
            original_units: false,
            models: (1..=10).map(|k| 10 * k).collect(),
            strategies: vec![
                Strategy::Single,
                Strategy::Simple,
                Strategy::Weighted,
                Strategy::Mixed,
            ],
            data: DataConfig::default(),
            model: ModelConfig::default(),
            single: SingleConfig::default(),
            dp: DpSection::default(),
            ensemble: EnsembleSection::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ExperimentError> {
        toml::from_str(text).map_err(|e| ExperimentError::ConfigInvalid(e.to_string()))
    }

    pub fn from_file(path: &Path) -> Result<Self, ExperimentError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            ExperimentError::ConfigInvalid(format!("cannot read {}: {e}", path.display()))
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn has(&self, strategy: Strategy) -> bool {
        self.strategies.contains(&strategy)
    }

    /// Whether any pooled strategy is requested.
    pub fn needs_pools(&self) -> bool {
        self.strategies.iter().any(|s| *s != Strategy::Single)
    }

    pub fn distribution_labels(&self) -> Vec<&'static str> {
        self.dp.distributions.iter().map(|d| d.label()).collect()
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let invalid = |msg: String| Err(ExperimentError::ConfigInvalid(msg));
        if self.strategies.is_empty() {
            return invalid("no strategies requested".into());
        }
        if self.models.is_empty() || self.models.contains(&0) {
            return invalid("model counts must be non-empty and positive".into());
        }
        if !self.full_corpus && self.series_limit == 0 {
            return invalid("series limit must be at least 1".into());
        }
        if self.model.horizon == 0 {
            return invalid("horizon must be positive".into());
        }
        if self.model.iterations == 0 || self.single.iterations == 0 {
            return invalid("iteration counts must be positive".into());
        }
        if !(self.single.learning_rate.is_finite() && self.single.learning_rate > 0.0) {
            return invalid("single-model learning rate must be positive".into());
        }
        if !(self.dp.alpha.is_finite() && self.dp.alpha > 0.0) {
            return invalid("alpha must be positive".into());
        }
        if !(self.ensemble.trim_keep_fraction > 0.0 && self.ensemble.trim_keep_fraction <= 1.0) {
            return invalid("trim_keep_fraction must lie in (0, 1]".into());
        }
        self.model
            .architecture()
            .validate()
            .map_err(|e| ExperimentError::ConfigInvalid(e.to_string()))?;
        for d in &self.dp.distributions {
            d.validate()
                .map_err(|e| ExperimentError::ConfigInvalid(e.to_string()))?;
        }
        let labels: BTreeSet<_> = self.distribution_labels().into_iter().collect();
        if labels.len() != self.dp.distributions.len() {
            return invalid("each base-distribution family may appear once".into());
        }
        if self.needs_pools() && labels.is_empty() {
            return invalid("pooled strategies need at least one base distribution".into());
        }
        if self.has(Strategy::Mixed)
            && !["exp", "beta", "normal"].iter().all(|l| labels.contains(l))
        {
            return invalid(
                "the mixed strategy needs exp, beta and normal base distributions".into(),
            );
        }
        if self.data.train.is_some() != self.data.test.is_some() {
            return invalid("data.train and data.test must be given together".into());
        }
        Ok(())
    }

    /// Keep only the named base distributions.
    pub fn restrict_distributions(&mut self, labels: &[String]) -> Result<(), ExperimentError> {
        for l in labels {
            if !self.distribution_labels().contains(&l.as_str()) {
                return Err(ExperimentError::ConfigInvalid(format!(
                    "unknown distribution {l:?}"
                )));
            }
        }
        self.dp
            .distributions
            .retain(|d| labels.iter().any(|l| l == d.label()));
        Ok(())
    }
}
