//! Files written by a run and read back by `summarize`.
//!
//! A run directory holds `particles_final.csv`, `telemetry.csv`,
//! `summary.json` and one density grid per free marginal under `marginals/`.
//! Floats are written in shortest round-trip form so every table re-parses
//! to the same bits.

use crate::config::PriorEcho;
use abcmix::engine::{free_marginals, IterationRecord, ParticleSystem, RunConfig, StopReason};
use abcmix::stats::weighted_mean_var;
use abcmix::summary::weighted_kde;
use abcmix::ParamSet;
use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

pub const PARTICLES_FILE: &str = "particles_final.csv";
pub const TELEMETRY_FILE: &str = "telemetry.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const MARGINALS_DIR: &str = "marginals";
pub const ERROR_FILE: &str = "error.json";
pub const LOGLIK_FILE: &str = "loglik_grid.csv";

/// Posterior mean and sd of one parameter slot, e.g. `mean_2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSummary {
    pub parameter: String,
    pub mean: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub preset: Option<String>,
    pub seed: u64,
    pub components: usize,
    pub n_particles: usize,
    pub iterations: usize,
    pub stop_reason: StopReason,
    pub final_tolerance: f64,
    pub duration_seconds: f64,
    pub iteration_seconds: Vec<f64>,
    pub config: RunConfig,
    pub prior: PriorEcho,
    pub posterior: Vec<ParameterSummary>,
}

/// Column name of parameter `set` for component `k` (zero based).
pub fn column_name(set: ParamSet, k: usize) -> String {
    let stem = match set {
        ParamSet::Weights => "weight",
        ParamSet::Means => "mean",
        ParamSet::Variances => "var",
    };
    format!("{stem}_{}", k + 1)
}

/// Particle table as plain columns.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleTable {
    pub k: usize,
    /// Row-major `[weights.., means.., variances..]` per particle.
    pub params: Vec<Vec<f64>>,
    pub importance_weights: Vec<f64>,
    pub distances: Vec<f64>,
}

impl ParticleTable {
    pub fn from_system(system: &ParticleSystem) -> Self {
        let params = system
            .particles()
            .iter()
            .map(|p| {
                let mut row = p.params.weights().to_vec();
                row.extend_from_slice(p.params.means());
                row.extend_from_slice(p.params.variances());
                row
            })
            .collect();
        Self {
            k: system.k(),
            params,
            importance_weights: system.weights(),
            distances: system.distances(),
        }
    }

    pub fn column(&self, set: ParamSet, k: usize) -> Vec<f64> {
        let offset = set.index() * self.k + k;
        self.params.iter().map(|row| row[offset]).collect()
    }

    /// Weighted posterior mean and sd of every parameter slot.
    pub fn posterior(&self) -> Vec<ParameterSummary> {
        ParamSet::ALL
            .into_iter()
            .flat_map(|set| (0..self.k).map(move |k| (set, k)))
            .map(|(set, k)| {
                let (mean, var) = weighted_mean_var(&self.column(set, k), &self.importance_weights);
                ParameterSummary {
                    parameter: column_name(set, k),
                    mean,
                    sd: var.sqrt(),
                }
            })
            .collect()
    }

    pub fn write(&self, path: &Path) -> anyhow::Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header: Vec<String> = ParamSet::ALL
            .into_iter()
            .flat_map(|set| (0..self.k).map(move |k| column_name(set, k)))
            .collect();
        header.push("importance_weight".into());
        header.push("distance".into());
        w.write_record(&header)?;
        for (i, row) in self.params.iter().enumerate() {
            let mut fields: Vec<String> = row.iter().map(|x| format!("{x:?}")).collect();
            fields.push(format!("{:?}", self.importance_weights[i]));
            fields.push(format!("{:?}", self.distances[i]));
            w.write_record(&fields)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read(path: &Path) -> anyhow::Result<Self> {
        let mut r =
            csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
        let header = r.headers()?.clone();
        let n_params = header.len().saturating_sub(2);
        if header.len() < 5 || n_params % 3 != 0 {
            bail!(
                "{}: unexpected header with {} columns",
                path.display(),
                header.len()
            );
        }
        let k = n_params / 3;
        let mut table = Self {
            k,
            params: Vec::new(),
            importance_weights: Vec::new(),
            distances: Vec::new(),
        };
        for (i, record) in r.records().enumerate() {
            let record = record?;
            let row: Vec<f64> = record
                .iter()
                .map(str::parse)
                .collect::<Result<_, _>>()
                .with_context(|| format!("{}: row {}", path.display(), i + 2))?;
            table.params.push(row[..n_params].to_vec());
            table.importance_weights.push(row[n_params]);
            table.distances.push(row[n_params + 1]);
        }
        if table.params.is_empty() {
            bail!("{}: no particles", path.display());
        }
        Ok(table)
    }
}

pub fn write_telemetry(path: &Path, records: &[IterationRecord]) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "iteration",
        "tolerance",
        "acceptance_rate",
        "ess",
        "chosen_relabel_key",
        "attempts",
        "marginal_shift",
        "zero_weight_count",
        "elapsed_seconds",
    ])?;
    for r in records {
        w.write_record([
            r.iteration.to_string(),
            format!("{:?}", r.tolerance),
            format!("{:?}", r.acceptance_rate),
            format!("{:?}", r.ess),
            r.relabel.as_ref().map_or("none".to_string(), |rep| {
                rep.chosen_parameter.name().to_string()
            }),
            r.attempts.to_string(),
            r.marginal_shift.map_or(String::new(), |s| format!("{s:?}")),
            r.zero_weight_count.to_string(),
            format!("{:?}", r.elapsed_seconds),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// One `grid,density` file per free marginal of the final system.
pub fn write_marginals(
    dir: &Path,
    system: &ParticleSystem,
    prior: &abcmix::PriorSpec,
    grid_size: usize,
) -> anyhow::Result<()> {
    fs::create_dir_all(dir)?;
    for (set, k) in free_marginals(prior) {
        let values = system.component_values(set, k);
        let Ok(kde) = weighted_kde(&values, &system.weights(), grid_size) else {
            continue;
        };
        let mut w = csv::Writer::from_path(dir.join(format!("{}.csv", column_name(set, k))))?;
        w.write_record(["grid", "density"])?;
        for (x, d) in kde.grid().iter().zip(kde.density()) {
            w.write_record([format!("{x:?}"), format!("{d:?}")])?;
        }
        w.flush()?;
    }
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

pub fn read_summary(dir: &Path) -> anyhow::Result<RunSummary> {
    let path = dir.join(SUMMARY_FILE);
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Plain-text table of posterior means and sds.
pub fn format_table(rows: &[ParameterSummary], fixed: &[String]) -> String {
    let mut out = format!("{:<12} {:>12} {:>12}\n", "parameter", "mean", "sd");
    for row in rows.iter().filter(|r| !fixed.contains(&r.parameter)) {
        out += &format!(
            "{:<12} {:>12.4} {:>12.4}\n",
            row.parameter, row.mean, row.sd
        );
    }
    out
}
