use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::{ExperimentConfig, ExperimentError};
use crate::dp::{BaseDistribution, DpConfig};
use crate::ensemble::{
    combine_simple, combine_weighted, diversity_matrix, mixed_pool, predict_pool, select_diverse,
    CheckpointRef, CombinationWeights, DiversityMatrix, ForecastTensor, ModelPool, PoolMember,
    Provenance,
};
use crate::lstm::{
    load_checkpoint, save_checkpoint, train_with_schedule, Checkpoint, LstmError, TrainingConfig,
};
use crate::metrics::{dataset_metrics, MetricReport, ScoredForecast, Strategy};
use crate::seed::{derive_seed, derive_stream};
use crate::series::{
    embed_lags, invert_scale, load_m4_weekly, minmax_scale, Corpus, RawSeries, ScaledSeries,
    SupervisedFrame,
};
use crate::synthetic;

/// One series ready for training: scaled over its full length, with the
/// last `horizon` points held out.
#[derive(Clone, Debug)]
pub struct PreparedSeries {
    pub id: String,
    pub scaled: ScaledSeries,
    pub frame: SupervisedFrame,
    /// Last `lag` scaled values before the held-out block.
    pub window: Vec<f64>,
    /// Held-out scaled values.
    pub actual: Vec<f64>,
}

impl PreparedSeries {
    pub fn to_units(&self, scaled: &[f64], original: bool) -> Vec<f64> {
        if original {
            invert_scale(scaled, self.scaled.scale_min, self.scaled.scale_max)
        } else {
            scaled.to_vec()
        }
    }
}

pub fn load_corpus(config: &ExperimentConfig) -> Result<Corpus, ExperimentError> {
    let (lag, horizon) = (config.model.lag, config.model.horizon);
    match (&config.data.train, &config.data.test) {
        (Some(train), Some(test)) => Ok(load_m4_weekly(train, test, horizon, lag)?),
        _ => Ok(synthetic::corpus(&config.data.synthetic, horizon, lag)),
    }
}

/// Sort by id, shuffle with the `subsample` stream, keep the first
/// `series_limit`, and return them sorted by id.
pub fn select_series(mut series: Vec<RawSeries>, config: &ExperimentConfig) -> Vec<RawSeries> {
    series.sort_by(|a, b| a.id.cmp(&b.id));
    if !config.full_corpus && series.len() > config.series_limit {
        series.shuffle(&mut derive_stream(config.seed, "subsample"));
        series.truncate(config.series_limit);
        series.sort_by(|a, b| a.id.cmp(&b.id));
    }
    series
}

pub fn prepare_series(
    raw: &RawSeries,
    lag: usize,
    horizon: usize,
) -> Result<PreparedSeries, ExperimentError> {
    let scaled = minmax_scale(raw);
    let total = scaled.values.len();
    if total < horizon + lag + 1 {
        return Err(crate::series::SeriesError::SeriesTooShort {
            needed: horizon + lag + 1,
            got: total,
        }
        .into());
    }
    let cut = total - horizon;
    let frame = embed_lags(&scaled.values[..cut], lag)?;
    Ok(PreparedSeries {
        id: raw.id.clone(),
        window: scaled.values[cut - lag..cut].to_vec(),
        actual: scaled.values[cut..].to_vec(),
        frame,
        scaled,
    })
}

/// A pool shared by every series: one learning-rate schedule and one
/// weight vector.
#[derive(Clone, Debug)]
pub struct PoolPlan {
    pub distribution: &'static str,
    pub base: BaseDistribution,
    pub p: usize,
    pub dp_seed: u64,
    pub learning_rates: Vec<f64>,
    pub weights: CombinationWeights,
}

impl PoolPlan {
    fn draw(
        config: &ExperimentConfig,
        base: BaseDistribution,
        p: usize,
        path: &str,
    ) -> Result<Self, ExperimentError> {
        let dp = DpConfig {
            alpha: config.dp.alpha,
            base,
            truncation: p,
            seed: derive_seed(config.seed, path),
        };
        Ok(Self {
            distribution: base.label(),
            base,
            p,
            dp_seed: dp.seed,
            learning_rates: dp.learning_rates()?,
            weights: CombinationWeights::new(dp.combination_weights()?)?,
        })
    }

    pub fn provenance(&self) -> Provenance {
        self.distribution
            .parse()
            .expect("family labels are provenance labels")
    }
}

/// Three smaller pools (exp, beta, normal) of `ceil(p / 3)` members merged
/// into one pool of `p`, with its own weight draw.
#[derive(Clone, Debug)]
pub struct MixedPlan {
    pub p: usize,
    pub dp_seed: u64,
    pub sources: Vec<PoolPlan>,
    pub weights: CombinationWeights,
}

pub fn plan_pools(
    config: &ExperimentConfig,
) -> Result<(Vec<PoolPlan>, Vec<MixedPlan>), ExperimentError> {
    let pooled = [Strategy::Simple, Strategy::Weighted, Strategy::Trimmed]
        .iter()
        .any(|s| config.has(*s));
    let mut plans = Vec::new();
    let mut mixed = Vec::new();
    for &p in &config.models {
        if pooled {
            for base in &config.dp.distributions {
                plans.push(PoolPlan::draw(
                    config,
                    *base,
                    p,
                    &format!("dp/{}/p{p}", base.label()),
                )?);
            }
        }
        if config.has(Strategy::Mixed) {
            let sources = ["exp", "beta", "normal"]
                .iter()
                .map(|label| {
                    let base = *config
                        .dp
                        .distributions
                        .iter()
                        .find(|d| d.label() == *label)
                        .expect("validated");
                    PoolPlan::draw(
                        config,
                        base,
                        p.div_ceil(3),
                        &format!("dp/{label}/mixed-source/p{p}"),
                    )
                })
                .collect::<Result<Vec<_>, _>>()?;
            let dp = DpConfig {
                alpha: config.dp.alpha,
                base: sources[0].base,
                truncation: p,
                seed: derive_seed(config.seed, &format!("dp/mixed/p{p}")),
            };
            mixed.push(MixedPlan {
                p,
                dp_seed: dp.seed,
                sources,
                weights: CombinationWeights::new(dp.combination_weights()?)?,
            });
        }
    }
    Ok((plans, mixed))
}

/// Forecasts of one series: the single model's, one tensor per pool plan
/// and one per mixed plan, in plan order.
pub(crate) struct SeriesRun {
    pub(crate) single: Option<Vec<f64>>,
    pub(crate) tensors: Vec<ForecastTensor>,
    pub(crate) mixed: Vec<ForecastTensor>,
}

/// Where a series' models come from.
#[derive(Clone, Copy, Debug)]
pub(crate) enum Models<'a> {
    /// Train them, saving checkpoints under `save_to` when given.
    Train { save_to: Option<&'a Path> },
    /// Load checkpoints saved by an earlier `Train`.
    Load { from: &'a Path },
}

pub(crate) const SINGLE_NAME: &str = "single";

pub(crate) fn pool_name(plan: &PoolPlan) -> String {
    format!("{}_p{}", plan.distribution, plan.p)
}

pub(crate) fn mixed_source_name(source: &PoolPlan, p: usize) -> String {
    format!("{}_mixsrc_p{p}", source.distribution)
}

pub(crate) fn mixed_name(p: usize) -> String {
    format!("mixed_p{p}")
}

fn model_dir(root: &Path, id: &str, name: &str) -> PathBuf {
    root.join(id).join(name)
}

fn member_file(dir: &Path, i: usize) -> PathBuf {
    dir.join(format!("m{:03}.ckpt", i + 1))
}

fn io_error(path: &Path) -> impl FnOnce(std::io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes the checkpoints and a `pool.csv` manifest referencing them.
fn save_pool(
    checkpoints: &[Checkpoint],
    provenance: Provenance,
    dir: &Path,
) -> Result<(), ExperimentError> {
    fs::create_dir_all(dir).map_err(io_error(dir))?;
    let mut members = Vec::with_capacity(checkpoints.len());
    for (i, c) in checkpoints.iter().enumerate() {
        let path = member_file(dir, i);
        save_checkpoint(c, &path)?;
        members.push(PoolMember {
            checkpoint: CheckpointRef::File(path),
            provenance,
            learning_rate: c.learning_rate,
            segment_index: c.segment_index,
        });
    }
    let manifest = dir.join("pool.csv");
    let file = fs::File::create(&manifest).map_err(io_error(&manifest))?;
    ModelPool::new(members)?.write_manifest(std::io::BufWriter::new(file))?;
    Ok(())
}

/// Loads `count` checkpoints and checks them against the expected rates.
fn load_pool(
    dir: &Path,
    rates: &[f64],
    provenance: Provenance,
) -> Result<Vec<Checkpoint>, ExperimentError> {
    rates
        .iter()
        .enumerate()
        .map(|(i, &rate)| {
            let path = member_file(dir, i);
            if !path.exists() {
                return Err(ExperimentError::Io {
                    path,
                    source: std::io::ErrorKind::NotFound.into(),
                });
            }
            let c = load_checkpoint(&path)?;
            if c.learning_rate != rate || c.segment_index != i + 1 {
                return Err(ExperimentError::ConfigInvalid(format!(
                    "{} was trained with rate {} in segment {}, the config expects rate {rate} in segment {} ({provenance})",
                    path.display(),
                    c.learning_rate,
                    c.segment_index,
                    i + 1
                )));
            }
            Ok(c)
        })
        .collect()
}

fn obtain(
    series: &PreparedSeries,
    training: &TrainingConfig,
    provenance: Provenance,
    name: &str,
    models: Models<'_>,
) -> Result<Vec<Checkpoint>, ExperimentError> {
    match models {
        Models::Train { save_to } => {
            let checkpoints = train_with_schedule(&series.frame, training)?;
            if let Some(root) = save_to {
                save_pool(&checkpoints, provenance, &model_dir(root, &series.id, name))?;
            }
            Ok(checkpoints)
        }
        Models::Load { from } => load_pool(
            &model_dir(from, &series.id, name),
            &training.schedule,
            provenance,
        ),
    }
}

fn obtain_pool(
    series: &PreparedSeries,
    plan: &PoolPlan,
    name: &str,
    config: &ExperimentConfig,
    trainer_seed: u64,
    models: Models<'_>,
) -> Result<ModelPool, ExperimentError> {
    let training = TrainingConfig {
        arch: config.model.architecture(),
        iterations_per_segment: config.model.iterations,
        schedule: plan.learning_rates.clone(),
        init_scale: config.model.init_scale,
        seed: trainer_seed,
    };
    let checkpoints = obtain(series, &training, plan.provenance(), name, models)?;
    Ok(ModelPool::from_checkpoints(checkpoints, plan.provenance())?)
}

/// Forecasts of every requested model for one series.
pub(crate) fn run_series(
    series: &PreparedSeries,
    config: &ExperimentConfig,
    plans: &[PoolPlan],
    mixed: &[MixedPlan],
    models: Models<'_>,
) -> Result<SeriesRun, ExperimentError> {
    let trainer_seed = derive_seed(config.seed, &format!("series/{}/trainer", series.id));
    let (horizon, id) = (config.model.horizon, series.id.as_str());

    let single = if config.has(Strategy::Single) {
        let training = TrainingConfig {
            arch: config.model.architecture(),
            iterations_per_segment: config.single.iterations,
            schedule: vec![config.single.learning_rate],
            init_scale: config.model.init_scale,
            seed: trainer_seed,
        };
        // the single model is not from a DP pool; its manifest borrows the
        // first family's label
        let last = obtain(series, &training, Provenance::Exp, SINGLE_NAME, models)?
            .pop()
            .expect("one segment");
        Some(last.forecast(&series.window, horizon)?)
    } else {
        None
    };

    let tensors = plans
        .iter()
        .map(|plan| {
            let pool = obtain_pool(series, plan, &pool_name(plan), config, trainer_seed, models)?;
            Ok(predict_pool(&pool, id, &series.window, horizon)?)
        })
        .collect::<Result<Vec<_>, ExperimentError>>()?;

    let mixed = mixed
        .iter()
        .map(|plan| {
            let pools = plan
                .sources
                .iter()
                .map(|src| {
                    obtain_pool(
                        series,
                        src,
                        &mixed_source_name(src, plan.p),
                        config,
                        trainer_seed,
                        models,
                    )
                })
                .collect::<Result<Vec<_>, _>>()?;
            let pool = mixed_pool(&pools[0], &pools[1], &pools[2], plan.p)?;
            Ok(predict_pool(&pool, id, &series.window, horizon)?)
        })
        .collect::<Result<Vec<_>, ExperimentError>>()?;

    Ok(SeriesRun {
        single,
        tensors,
        mixed,
    })
}

pub(crate) fn is_divergence(err: &ExperimentError) -> bool {
    matches!(
        err,
        ExperimentError::Lstm(LstmError::DivergenceDetected { .. })
    ) || matches!(
        err,
        ExperimentError::Ensemble(crate::ensemble::EnsembleError::InconsistentShapes(msg)) if msg.contains("non-finite")
    )
}

/// Diversity of one pool across all included series.
#[derive(Clone, Debug)]
pub struct DiversityRecord {
    pub distribution: String,
    pub p: usize,
    pub matrix: DiversityMatrix,
}

#[derive(Clone, Debug)]
pub struct ExperimentOutcome {
    pub config: ExperimentConfig,
    pub reports: Vec<MetricReport>,
    pub diversity: Vec<DiversityRecord>,
    pub plans: Vec<PoolPlan>,
    pub mixed_plans: Vec<MixedPlan>,
    /// Ids evaluated, sorted.
    pub included: Vec<String>,
    /// `(id, reason)` for sampled series too short to use.
    pub skipped: Vec<(String, String)>,
    /// `(id, reason)` for sampled series whose training diverged; they are
    /// left out of every aggregate.
    pub diverged: Vec<(String, String)>,
    /// Lengths of every loaded series, for the length histogram.
    pub corpus_lengths: Vec<usize>,
}

impl ExperimentOutcome {
    pub fn report(
        &self,
        strategy: Strategy,
        distribution: &str,
        p: usize,
    ) -> Option<&MetricReport> {
        self.reports
            .iter()
            .find(|r| r.strategy == strategy && r.distribution == distribution && r.p == p)
    }

    pub fn diversity_of(&self, distribution: &str, p: usize) -> Option<&DiversityMatrix> {
        self.diversity
            .iter()
            .find(|d| d.distribution == distribution && d.p == p)
            .map(|d| &d.matrix)
    }

    /// Some sampled series were excluded because training diverged.
    pub fn partial(&self) -> bool {
        !self.diverged.is_empty()
    }
}

/// The sampled series of a run, prepared, plus the ones too short to use.
pub(crate) struct Selection {
    pub(crate) prepared: Vec<PreparedSeries>,
    pub(crate) skipped: Vec<(String, String)>,
    pub(crate) corpus_lengths: Vec<usize>,
}

pub(crate) fn select_and_prepare(config: &ExperimentConfig) -> Result<Selection, ExperimentError> {
    let corpus = load_corpus(config)?;
    let corpus_lengths: Vec<usize> = corpus.series.iter().map(RawSeries::len).collect();
    let (lag, horizon) = (config.model.lag, config.model.horizon);
    let mut prepared = Vec::new();
    let mut skipped = Vec::new();
    for raw in select_series(corpus.series, config) {
        match prepare_series(&raw, lag, horizon) {
            Ok(p) => prepared.push(p),
            Err(e) => {
                warn!("series {} skipped: {e}", raw.id);
                skipped.push((raw.id.clone(), e.to_string()));
            }
        }
    }
    Ok(Selection {
        prepared,
        skipped,
        corpus_lengths,
    })
}

pub(crate) fn worker_pool(config: &ExperimentConfig) -> Result<rayon::ThreadPool, ExperimentError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| ExperimentError::ConfigInvalid(format!("cannot start workers: {e}")))
}

/// Train, combine and score the whole grid. Outputs are independent of
/// `config.workers`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutcome, ExperimentError> {
    config.validate()?;
    let selection = select_and_prepare(config)?;
    let (plans, mixed_plans) = plan_pools(config)?;
    info!(
        "training {} series, {} pools and {} mixed pools each",
        selection.prepared.len(),
        plans.len(),
        mixed_plans.len()
    );
    let checkpoints = config.out_dir.join("checkpoints");
    let models = Models::Train {
        save_to: config
            .ensemble
            .save_checkpoints
            .then_some(checkpoints.as_path()),
    };
    let runs: Vec<Result<SeriesRun, ExperimentError>> = worker_pool(config)?.install(|| {
        selection
            .prepared
            .par_iter()
            .map(|s| run_series(s, config, &plans, &mixed_plans, models))
            .collect()
    });
    let mut kept = Vec::new();
    let mut diverged = Vec::new();
    for (series, run) in selection.prepared.into_iter().zip(runs) {
        match run {
            Ok(r) => kept.push((series, r)),
            Err(e) if is_divergence(&e) => {
                warn!("series {} excluded: {e}", series.id);
                diverged.push((series.id.clone(), e.to_string()));
            }
            Err(e) => return Err(e),
        }
    }
    assemble(
        config,
        kept,
        plans,
        mixed_plans,
        selection.skipped,
        diverged,
        selection.corpus_lengths,
    )
}

/// Combine and score per-series forecasts, in series-id order.
pub(crate) fn assemble(
    config: &ExperimentConfig,
    kept: Vec<(PreparedSeries, SeriesRun)>,
    plans: Vec<PoolPlan>,
    mixed_plans: Vec<MixedPlan>,
    skipped: Vec<(String, String)>,
    diverged: Vec<(String, String)>,
    corpus_lengths: Vec<usize>,
) -> Result<ExperimentOutcome, ExperimentError> {
    if kept.is_empty() {
        return Err(ExperimentError::NoSeries);
    }
    let units = config.original_units;
    let actuals: Vec<Vec<f64>> = kept
        .iter()
        .map(|(s, _)| s.to_units(&s.actual, units))
        .collect();
    let score = |forecasts: Vec<Vec<f64>>, strategy: Strategy, dist: &str, p: usize| {
        let scored: Vec<ScoredForecast<'_>> = kept
            .iter()
            .zip(&actuals)
            .zip(&forecasts)
            .map(|(((s, _), actual), forecast)| ScoredForecast {
                id: &s.id,
                actual,
                forecast,
            })
            .collect();
        dataset_metrics(&scored, strategy, dist, p, config.seed)
    };
    let in_units = |s: &PreparedSeries, v: Vec<f64>| s.to_units(&v, units);

    let mut reports = Vec::new();
    let mut diversity = Vec::new();

    if config.has(Strategy::Single) {
        let forecasts = kept
            .iter()
            .map(|(s, r)| in_units(s, r.single.clone().expect("single requested")))
            .collect();
        reports.push(score(forecasts, Strategy::Single, "fixed", 1)?);
    }

    for (k, plan) in plans.iter().enumerate() {
        let tensors: Vec<ForecastTensor> = kept.iter().map(|(_, r)| r.tensors[k].clone()).collect();
        let matrix = diversity_matrix(&tensors, config.ensemble.diversity_normalization)?;
        let dist = plan.distribution;
        if config.has(Strategy::Simple) {
            let f = kept
                .iter()
                .zip(&tensors)
                .map(|((s, _), t)| in_units(s, combine_simple(t)))
                .collect();
            reports.push(score(f, Strategy::Simple, dist, plan.p)?);
        }
        if config.has(Strategy::Weighted) {
            let f = kept
                .iter()
                .zip(&tensors)
                .map(|((s, _), t)| Ok(in_units(s, combine_weighted(t, &plan.weights)?)))
                .collect::<Result<Vec<_>, ExperimentError>>()?;
            reports.push(score(f, Strategy::Weighted, dist, plan.p)?);
        }
        if config.has(Strategy::Trimmed) {
            let keep = ((plan.p as f64 * config.ensemble.trim_keep_fraction).round() as usize)
                .clamp(1, plan.p);
            let chosen = select_diverse(&matrix, keep)?;
            let f = kept
                .iter()
                .zip(&tensors)
                .map(|((s, _), t)| Ok(in_units(s, combine_simple(&t.select(&chosen)?))))
                .collect::<Result<Vec<_>, ExperimentError>>()?;
            reports.push(score(f, Strategy::Trimmed, dist, plan.p)?);
        }
        diversity.push(DiversityRecord {
            distribution: dist.to_string(),
            p: plan.p,
            matrix,
        });
    }

    for (k, plan) in mixed_plans.iter().enumerate() {
        let tensors: Vec<ForecastTensor> = kept.iter().map(|(_, r)| r.mixed[k].clone()).collect();
        let f = kept
            .iter()
            .zip(&tensors)
            .map(|((s, _), t)| Ok(in_units(s, combine_weighted(t, &plan.weights)?)))
            .collect::<Result<Vec<_>, ExperimentError>>()?;
        reports.push(score(f, Strategy::Mixed, "mixed", plan.p)?);
        diversity.push(DiversityRecord {
            distribution: "mixed".into(),
            p: plan.p,
            matrix: diversity_matrix(&tensors, config.ensemble.diversity_normalization)?,
        });
    }

    Ok(ExperimentOutcome {
        config: config.clone(),
        reports,
        diversity,
        plans,
        mixed_plans,
        included: kept.into_iter().map(|(s, _)| s.id).collect(),
        skipped,
        diverged,
        corpus_lengths,
    })
}
