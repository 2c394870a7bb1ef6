//! Command-line front end for the `abcmix` sampler.

pub mod artifact;
pub mod config;
pub mod ingest;

use abcmix::engine::{run, IterationRecord, StopReason};
use abcmix::experiments::Preset;
use abcmix::mixture::{linspace, loglik_grid, simulate, simulate_with_errors, LogLikGrid};
use abcmix::rng::{seeded, Purpose};
use abcmix::{MixtureParams, ObservedDataset, ParamSet, PriorSpec};
use anyhow::{anyhow, bail, Context};
use artifact::*;
use clap::{Args, Parser, Subcommand};
use config::{FileConfig, PriorEcho};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

#[derive(Debug, Parser)]
#[command(
    name = "abcmix",
    version,
    about = "ABC-PMC inference for Gaussian mixtures"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the sampler and write a run directory.
    Fit(FitArgs),
    /// Print posterior means and sds of a run directory.
    Summarize { run_dir: PathBuf },
    /// Sample a dataset from the forward model.
    Simulate(SimulateArgs),
    /// Tabulate the two-component log-likelihood over a grid of means.
    LoglikGrid(LoglikArgs),
}

#[derive(Debug, Args, Clone, Default)]
pub struct Source {
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Observation CSV (`value` or `value,error`).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Named experiment preset; overrides `preset` in the config.
    #[arg(long)]
    pub preset: Option<String>,
    /// Seed; overrides `seed` in the config.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub source: Source,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the log-likelihood surface (two components, known weights and variances).
    #[arg(long)]
    pub loglik_grid: bool,
    /// Suppress per-iteration progress on stderr.
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Write the dataset of this preset.
    #[arg(long, conflicts_with_all = ["weights", "means", "variances"])]
    pub preset: Option<String>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub weights: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub means: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub variances: Option<Vec<f64>>,
    /// Number of draws.
    #[arg(long, short)]
    pub n: Option<usize>,
    /// Add measurement noise using the errors of this data file, matched by rank.
    #[arg(long)]
    pub errors_from: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct LoglikArgs {
    #[command(flatten)]
    pub source: Source,
    /// Points per axis.
    #[arg(long, default_value_t = 201)]
    pub points: usize,
    /// Axis range `lo,hi` shared by both means; defaults to the data range.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub range: Option<Vec<f64>>,
    #[arg(long)]
    pub out: PathBuf,
}

/// Everything a command needs to know about the problem.
pub struct Problem {
    pub preset: Option<Preset>,
    pub file: FileConfig,
    pub data: ObservedDataset,
    pub prior: PriorSpec,
}

impl Source {
    fn file_config(&self) -> anyhow::Result<(FileConfig, Option<Preset>)> {
        let mut file = match &self.config {
            Some(path) => FileConfig::load(path)?,
            None => FileConfig::default(),
        };
        if let Some(p) = &self.preset {
            file.preset = Some(p.clone());
        }
        if let Some(seed) = self.seed {
            file.seed = Some(seed);
        }
        let preset = file.preset()?;
        Ok((file, preset))
    }

    /// Loads data and prior. `grid_size` is the KDE grid of the dataset.
    fn problem(&self, grid_size: impl FnOnce(&FileConfig) -> usize) -> anyhow::Result<Problem> {
        let (file, preset) = self.file_config()?;
        let grid = grid_size(&file);
        let data = match (&self.data, preset) {
            (Some(path), _) => ingest::read_data(path)?
                .into_dataset(grid)
                .map_err(|e| anyhow!("{}: {e}", path.display()))?,
            (None, Some(p)) => p.dataset(grid).map_err(|e| anyhow!(e))?,
            (None, None) => bail!("no data: pass --data or name a preset"),
        };
        let prior = file.prior(preset, data.values())?;
        Ok(Problem {
            preset,
            file,
            data,
            prior,
        })
    }
}

pub fn fit(args: &FitArgs) -> anyhow::Result<StopReason> {
    let problem = args
        .source
        .problem(|file| file.grid_size.unwrap_or(abcmix::summary::DEFAULT_GRID_SIZE))?;
    let config = problem.file.run_config(problem.preset)?;
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    if args.loglik_grid {
        let grid = default_loglik_grid(&problem, 201, None)?;
        write_loglik(&args.out.join(LOGLIK_FILE), &grid)?;
    }

    let started = Instant::now();
    let quiet = args.quiet;
    let mut progress = |r: &IterationRecord| {
        if !quiet {
            eprintln!(
                "iteration {:>3}  tolerance {:.5}  acceptance {:.4}  ess {:>7.1}  shift {}",
                r.iteration,
                r.tolerance,
                r.acceptance_rate,
                r.ess,
                r.marginal_shift.map_or("-".into(), |s| format!("{s:.4}")),
            );
        }
    };
    let outcome = match run(&problem.prior, &problem.data, &config, &mut progress) {
        Ok(outcome) => outcome,
        Err(e) => {
            let diagnostic = serde_json::json!({
                "error": e.to_string(),
                "detail": format!("{e:?}"),
                "seed": config.seed,
                "elapsed_seconds": started.elapsed().as_secs_f64(),
            });
            write_json(&args.out.join(ERROR_FILE), &diagnostic)?;
            return Err(anyhow!(e).context("sampler aborted"));
        }
    };
    let duration = started.elapsed().as_secs_f64();

    let table = ParticleTable::from_system(&outcome.system);
    table.write(&args.out.join(PARTICLES_FILE))?;
    write_telemetry(&args.out.join(TELEMETRY_FILE), &outcome.telemetry)?;
    write_marginals(
        &args.out.join(MARGINALS_DIR),
        &outcome.system,
        &problem.prior,
        config.grid_size,
    )?;
    let summary = RunSummary {
        preset: problem.preset.map(|p| p.name().to_string()),
        seed: config.seed,
        components: problem.prior.k(),
        n_particles: outcome.system.len(),
        iterations: outcome.system.iteration(),
        stop_reason: outcome.stop_reason,
        final_tolerance: outcome.system.tolerance(),
        duration_seconds: duration,
        iteration_seconds: outcome
            .telemetry
            .iter()
            .map(|r| r.elapsed_seconds)
            .collect(),
        config,
        prior: PriorEcho::from(&problem.prior),
        posterior: table.posterior(),
    };
    write_json(&args.out.join(SUMMARY_FILE), &summary)?;
    Ok(outcome.stop_reason)
}

/// Parameter columns that the prior fixes, hidden from summaries.
fn fixed_columns(prior: &PriorEcho, k: usize) -> Vec<String> {
    let mut fixed = Vec::new();
    if prior.fixed_weights.is_some() || k == 1 {
        fixed.extend((0..k).map(|i| column_name(ParamSet::Weights, i)));
    }
    if prior.fixed_variances.is_some() {
        fixed.extend((0..k).map(|i| column_name(ParamSet::Variances, i)));
    }
    fixed
}

/// Reads a run directory and renders its posterior table. The summary is
/// recomputed from the particle table and checked against `summary.json`.
pub fn summarize(dir: &Path) -> anyhow::Result<String> {
    if !dir.is_dir() {
        bail!("{} is not a directory", dir.display());
    }
    let summary = read_summary(dir)?;
    let table = ParticleTable::read(&dir.join(PARTICLES_FILE))?;
    if table.params.len() != summary.n_particles {
        bail!(
            "particle table has {} rows, summary expects {}",
            table.params.len(),
            summary.n_particles
        );
    }
    let recomputed = table.posterior();
    for (a, b) in recomputed.iter().zip(&summary.posterior) {
        if a.parameter != b.parameter
            || (a.mean - b.mean).abs() > 1e-10
            || (a.sd - b.sd).abs() > 1e-10
        {
            bail!(
                "summary.json disagrees with the particle table at {}",
                b.parameter
            );
        }
    }
    let mut out = String::new();
    if let Some(p) = &summary.preset {
        out += &format!("preset: {p}\n");
    }
    out += &format!(
        "seed: {}  particles: {}  iterations: {}  stop: {:?}\n",
        summary.seed, summary.n_particles, summary.iterations, summary.stop_reason
    );
    out += &format_table(&recomputed, &fixed_columns(&summary.prior, table.k));
    Ok(out)
}

pub fn simulate_command(args: &SimulateArgs) -> anyhow::Result<()> {
    let seed = args
        .seed
        .ok_or_else(|| anyhow!("a seed is required (--seed)"))?;
    if let Some(name) = &args.preset {
        let preset: Preset = name.parse().map_err(|e| anyhow!("{e}"))?;
        let (values, errors) = preset.raw_data();
        return ingest::write_data(&args.out, &values, errors.as_deref()).map_err(Into::into);
    }
    let (Some(w), Some(m), Some(v)) = (&args.weights, &args.means, &args.variances) else {
        bail!("pass --preset, or all of --weights, --means and --variances");
    };
    let params = MixtureParams::new(w.clone(), m.clone(), v.clone()).map_err(|e| anyhow!(e))?;
    let mut rng = seeded(seed, Purpose::Data);
    match &args.errors_from {
        Some(path) => {
            let raw = ingest::read_data(path)?;
            if raw.errors.is_none() {
                bail!("{} has no error column", path.display());
            };
            if args.n.is_some_and(|n| n != raw.values.len()) {
                bail!("--n must equal the number of rows in {}", path.display());
            }
            let data = raw.into_dataset(abcmix::summary::MIN_GRID_SIZE)?;
            let values = simulate_with_errors(&params, &data, &mut rng)?;
            ingest::write_data(&args.out, &values, None)?;
        }
        None => {
            let n = args.n.ok_or_else(|| anyhow!("--n is required"))?;
            ingest::write_data(&args.out, &simulate(&params, n, &mut rng), None)?;
        }
    }
    Ok(())
}

fn default_loglik_grid(
    problem: &Problem,
    points: usize,
    range: Option<&[f64]>,
) -> anyhow::Result<LogLikGrid> {
    if points < 2 {
        bail!("--points must be at least 2");
    }
    let (lo, hi) = match range {
        Some([lo, hi]) if lo < hi => (*lo, *hi),
        Some(_) => bail!("--range must be `lo,hi` with lo < hi"),
        None => {
            let v = problem.data.values();
            let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            (lo, hi)
        }
    };
    let axis = linspace(lo, hi, points);
    Ok(loglik_grid(&problem.data, &problem.prior, &axis, &axis)?)
}

/// Matrix layout: the first row holds the μ₂ axis, each later row starts with
/// its μ₁ value followed by the log-likelihoods.
pub fn write_loglik(path: &Path, grid: &LogLikGrid) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["mean_1\\mean_2".to_string()];
    header.extend(grid.axis2.iter().map(|x| format!("{x:?}")));
    w.write_record(&header)?;
    for (m1, row) in grid.axis1.iter().zip(&grid.values) {
        let mut fields = vec![format!("{m1:?}")];
        fields.extend(row.iter().map(|x| format!("{x:?}")));
        w.write_record(&fields)?;
    }
    w.flush()?;
    Ok(())
}

pub fn loglik_command(args: &LoglikArgs) -> anyhow::Result<()> {
    let mut source = args.source.clone();
    // the surface does not depend on the seed
    source.seed.get_or_insert(0);
    let problem = source.problem(|_| abcmix::summary::MIN_GRID_SIZE)?;
    let grid = default_loglik_grid(&problem, args.points, args.range.as_deref())?;
    write_loglik(&args.out, &grid)
}

/// Runs a parsed command line.
pub fn execute(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Fit(args) => fit(&args).map(|_| ()),
        Command::Summarize { run_dir } => {
            print!("{}", summarize(&run_dir)?);
            Ok(())
        }
        Command::Simulate(args) => simulate_command(&args),
        Command::LoglikGrid(args) => loglik_command(&args),
    }
}
