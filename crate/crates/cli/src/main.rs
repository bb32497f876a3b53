use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{info, warn};

use dpcombine::dp::{DpConfig, DpError};
use dpcombine::experiment::{
    emit_plot_data, emit_tables, evaluate_stage, predict_stage, read_summary, run_experiment,
    train_stage, write_outputs, ExperimentConfig, ExperimentError, ExperimentOutcome, StageSummary,
};
use dpcombine::lstm::LstmError;
use dpcombine::metrics::Strategy;
use dpcombine::seed::derive_seed;
use dpcombine::series::SeriesError;
use dpcombine::synthetic::{write_m4_pair, SyntheticSpec};

const EXIT_CONFIG: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_PARTIAL: u8 = 3;

#[derive(Parser)]
#[command(
    name = "dpcombine",
    version,
    about = "Dirichlet-process learning-rate ensembles for weekly forecasting"
)]
struct Cli {
    /// Log progress to stderr (RUST_LOG overrides).
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw truncated DP realizations and write them as CSV.
    Sample(Overrides),
    /// Train every model of the grid and save the checkpoints.
    Train(Overrides),
    /// Forecast from saved checkpoints.
    Predict(Overrides),
    /// Score saved forecasts and write reports.
    Evaluate(Overrides),
    /// Train, combine and score the full grid in one go.
    Experiment(Overrides),
    /// Rebuild tables and plot data from an output directory.
    Report(Overrides),
    /// Write a synthetic corpus as M4-style train and test files.
    GenerateData(GenerateArgs),
}

/// Flags override the config file.
#[derive(Args, Clone, Debug, Default)]
struct Overrides {
    /// TOML experiment config; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    series_limit: Option<usize>,
    /// Use every series instead of a subsample.
    #[arg(long)]
    full_corpus: bool,
    /// Pool sizes to sweep, e.g. `10,20,50`.
    #[arg(long, value_delimiter = ',')]
    models: Option<Vec<usize>>,
    /// Base distributions to keep: exp, beta, normal.
    #[arg(long, value_delimiter = ',')]
    distribution: Option<Vec<String>>,
    /// Strategies: single, simple, weighted, mixed, trimmed.
    #[arg(long, value_delimiter = ',')]
    strategy: Option<Vec<Strategy>>,
    /// Score and write forecasts in the series' original units.
    #[arg(long)]
    original_units: bool,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Worker threads (0 = all cores).
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    test: PathBuf,
    #[arg(long, default_value_t = 13)]
    horizon: usize,
    #[arg(long, default_value_t = SyntheticSpec::default().count)]
    count: usize,
    #[arg(long, default_value_t = SyntheticSpec::default().seed)]
    seed: u64,
}

impl Overrides {
    fn resolve(&self) -> Result<ExperimentConfig, ExperimentError> {
        let mut config = match &self.config {
            Some(path) => ExperimentConfig::from_file(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(limit) = self.series_limit {
            config.series_limit = limit;
        }
        if self.full_corpus {
            config.full_corpus = true;
        }
        if let Some(models) = &self.models {
            config.models = models.clone();
        }
        if let Some(strategies) = &self.strategy {
            config.strategies = strategies.clone();
        }
        if let Some(labels) = &self.distribution {
            config.restrict_distributions(labels)?;
        }
        if self.original_units {
            config.original_units = true;
        }
        if let Some(dir) = &self.out_dir {
            config.out_dir = dir.clone();
        }
        if let Some(workers) = self.workers {
            config.workers = workers;
        }
        config.validate()?;
        Ok(config)
    }
}

fn exit_code(err: &ExperimentError) -> u8 {
    match err {
        ExperimentError::ConfigInvalid(_)
        | ExperimentError::IncompleteGrid(_)
        | ExperimentError::Dp(DpError::InvalidConfig(_))
        | ExperimentError::Lstm(LstmError::InvalidConfig(_)) => EXIT_CONFIG,
        _ => EXIT_DATA,
    }
}

fn sample(config: &ExperimentConfig) -> Result<(), ExperimentError> {
    let dir = config.out_dir.join("samples");
    for &p in &config.models {
        for base in &config.dp.distributions {
            let dp = DpConfig {
                alpha: config.dp.alpha,
                base: *base,
                truncation: p,
                seed: derive_seed(config.seed, &format!("sample/{}/p{p}", base.label())),
            };
            let draw = dp.draw()?;
            std::fs::create_dir_all(&dir).map_err(|source| ExperimentError::Io {
                path: dir.clone(),
                source,
            })?;
            let path = dir.join(format!("{}_p{p}.csv", base.label()));
            let file = std::fs::File::create(&path).map_err(|source| ExperimentError::Io {
                path: path.clone(),
                source,
            })?;
            draw.write_csv(std::io::BufWriter::new(file))?;
            info!("wrote {}", path.display());
        }
    }
    Ok(())
}

fn report(config: &ExperimentConfig) -> Result<(), ExperimentError> {
    let summary = read_summary(&config.out_dir.join("summary.csv"))?;
    for table in emit_tables(&summary, config)? {
        table.write_csv(
            &config
                .out_dir
                .join("tables")
                .join(format!("{}.csv", table.name)),
        )?;
    }
    emit_plot_data(&summary, &config.out_dir)?;
    Ok(())
}

/// `report` reads the manifest of the run it reports on unless a config
/// file is given explicitly.
fn report_config(overrides: &Overrides) -> Result<ExperimentConfig, ExperimentError> {
    let mut overrides = overrides.clone();
    if overrides.config.is_none() {
        let dir = overrides
            .out_dir
            .clone()
            .unwrap_or_else(|| ExperimentConfig::default().out_dir);
        let manifest = dir.join("run_manifest.toml");
        if manifest.exists() {
            overrides.config = Some(manifest);
        }
    }
    overrides.resolve()
}

fn print_stage(name: &str, summary: &StageSummary) {
    println!(
        "{name}: {} series done, {} skipped, {} diverged",
        summary.processed.len(),
        summary.skipped.len(),
        summary.diverged.len()
    );
    for (id, reason) in &summary.diverged {
        warn!("{id}: {reason}");
    }
}

fn print_outcome(outcome: &ExperimentOutcome) {
    for r in &outcome.reports {
        println!(
            "{:<8} {:<6} p={:<4} mae={:.6} rmse={:.6} (n={})",
            r.strategy.label(),
            r.distribution,
            r.p,
            r.mean_mae,
            r.mean_rmse,
            r.n()
        );
    }
    for (id, reason) in &outcome.diverged {
        warn!("{id}: {reason}");
    }
}

fn finish(partial: bool) -> u8 {
    if partial {
        EXIT_PARTIAL
    } else {
        0
    }
}

fn run(command: Command) -> Result<u8, ExperimentError> {
    match command {
        Command::Sample(o) => sample(&o.resolve()?).map(|_| 0),
        Command::Train(o) => {
            let summary = train_stage(&o.resolve()?)?;
            print_stage("train", &summary);
            Ok(finish(summary.partial()))
        }
        Command::Predict(o) => {
            let summary = predict_stage(&o.resolve()?)?;
            print_stage("predict", &summary);
            Ok(finish(summary.partial()))
        }
        Command::Evaluate(o) => {
            let config = o.resolve()?;
            let outcome = evaluate_stage(&config)?;
            write_outputs(&outcome, &config.out_dir)?;
            print_outcome(&outcome);
            Ok(finish(outcome.partial()))
        }
        Command::Experiment(o) => {
            let config = o.resolve()?;
            let outcome = run_experiment(&config)?;
            write_outputs(&outcome, &config.out_dir)?;
            print_outcome(&outcome);
            Ok(finish(outcome.partial()))
        }
        Command::Report(o) => report(&report_config(&o)?).map(|_| 0),
        Command::GenerateData(g) => {
            let spec = SyntheticSpec {
                count: g.count,
                seed: g.seed,
                ..SyntheticSpec::default()
            };
            write_m4_pair(&spec, g.horizon, &g.train, &g.test)
                .map_err(|e: SeriesError| ExperimentError::DataLoad(e))?;
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
