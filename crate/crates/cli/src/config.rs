//! Run configuration files.
//!
//! A config is a TOML table whose keys mirror [`RunConfig`] and the prior
//! hyperparameters. Every key is optional; missing values come from the preset
//! (when one is named) or from the library defaults. A seed must be given
//! somewhere: in the file, or on the command line.

use abcmix::experiments::Preset;
use abcmix::{PriorSpec, RelabelMode, RunConfig};
use anyhow::{anyhow, bail, Context};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub preset: Option<String>,
    pub seed: Option<u64>,
    pub n_particles: Option<usize>,
    pub n_init: Option<usize>,
    pub quantile: Option<f64>,
    pub retention: Option<f64>,
    pub stop_threshold: Option<f64>,
    pub max_iterations: Option<usize>,
    pub max_attempts_per_particle: Option<usize>,
    pub grid_size: Option<usize>,
    pub literal_kernel_density: Option<bool>,
    pub use_measurement_errors: Option<bool>,
    pub relabel_mode: Option<String>,
    pub parallel: Option<bool>,

    /// Number of mixture components; needed without a preset.
    pub components: Option<usize>,
    pub dirichlet_concentration: Option<Vec<f64>>,
    pub mean_prior_location: Option<f64>,
    pub mean_prior_variance: Option<f64>,
    pub precision_shape: Option<f64>,
    pub precision_rate: Option<f64>,
    pub fixed_weights: Option<Vec<f64>>,
    pub fixed_variances: Option<Vec<f64>>,
}

impl FileConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn preset(&self) -> anyhow::Result<Option<Preset>> {
        self.preset
            .as_deref()
            .map(|name| name.parse::<Preset>().map_err(|e| anyhow!(e)))
            .transpose()
    }

    /// Run configuration: preset or library defaults, then file overrides.
    pub fn run_config(&self, preset: Option<Preset>) -> anyhow::Result<RunConfig> {
        let seed = self.seed.ok_or_else(|| {
            anyhow!("a seed is required: set `seed` in the config or pass --seed")
        })?;
        let n = self.n_particles.unwrap_or(1000);
        let mut c = match preset {
            Some(p) => p.config(n, seed),
            None => RunConfig::new(n, seed),
        };
        c.n_init = self.n_init.unwrap_or(10 * n);
        macro_rules! apply {
            ($($field:ident),*) => {
                $(if let Some(v) = self.$field.clone() { c.$field = v; })*
            };
        }
        apply!(
            quantile,
            retention,
            stop_threshold,
            max_iterations,
            max_attempts_per_particle,
            grid_size,
            literal_kernel_density,
            use_measurement_errors,
            parallel
        );
        if let Some(mode) = &self.relabel_mode {
            c.relabel_mode = mode.parse::<RelabelMode>().map_err(|e| anyhow!(e))?;
        }
        c.validate().map_err(|e| anyhow!(e))?;
        Ok(c)
    }

    /// Prior: preset prior or data-driven defaults, then file overrides.
    pub fn prior(&self, preset: Option<Preset>, values: &[f64]) -> anyhow::Result<PriorSpec> {
        let base = match preset {
            Some(p) => p.prior(),
            None => {
                let k = self
                    .components
                    .ok_or_else(|| anyhow!("`components` is required without a preset"))?;
                PriorSpec::data_driven(values, k).map_err(|e| anyhow!(e))?
            }
        };
        if let Some(k) = self.components {
            if k != base.k() {
                bail!(
                    "`components` = {k} conflicts with the preset's {} components",
                    base.k()
                );
            }
        }
        let mut prior = PriorSpec::new(
            self.dirichlet_concentration
                .clone()
                .unwrap_or_else(|| base.dirichlet_concentration().to_vec()),
            self.mean_prior_location
                .unwrap_or(base.mean_prior_location()),
            self.mean_prior_variance
                .unwrap_or(base.mean_prior_variance()),
            self.precision_shape.unwrap_or(base.precision_shape()),
            self.precision_rate.unwrap_or(base.precision_rate()),
        )
        .map_err(|e| anyhow!(e))?;
        if let Some(w) = self
            .fixed_weights
            .clone()
            .or(base.fixed_weights().map(<[f64]>::to_vec))
        {
            prior = prior.with_fixed_weights(w).map_err(|e| anyhow!(e))?;
        }
        if let Some(v) = self
            .fixed_variances
            .clone()
            .or(base.fixed_variances().map(<[f64]>::to_vec))
        {
            prior = prior.with_fixed_variances(v).map_err(|e| anyhow!(e))?;
        }
        Ok(prior)
    }
}

/// Prior hyperparameters as echoed into `summary.json`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PriorEcho {
    pub dirichlet_concentration: Vec<f64>,
    pub mean_prior_location: f64,
    pub mean_prior_variance: f64,
    pub precision_shape: f64,
    pub precision_rate: f64,
    pub fixed_weights: Option<Vec<f64>>,
    pub fixed_variances: Option<Vec<f64>>,
}

impl From<&PriorSpec> for PriorEcho {
    fn from(p: &PriorSpec) -> Self {
        Self {
            dirichlet_concentration: p.dirichlet_concentration().to_vec(),
            mean_prior_location: p.mean_prior_location(),
            mean_prior_variance: p.mean_prior_variance(),
            precision_shape: p.precision_shape(),
            precision_rate: p.precision_rate(),
            fixed_weights: p.fixed_weights().map(<[f64]>::to_vec),
            fixed_variances: p.fixed_variances().map(<[f64]>::to_vec),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<FileConfig>("sed = 3").is_err());
    }

    #[test]
    fn seed_is_mandatory() {
        let c = FileConfig::default();
        assert!(c.run_config(None).is_err());
        let c = FileConfig {
            seed: Some(4),
            ..Default::default()
        };
        assert_eq!(c.run_config(None).unwrap().seed, 4);
    }

    #[test]
    fn overrides_apply_over_preset() {
        let c: FileConfig = toml::from_str(
            r#"
            preset = "example-3.2-marin"
            seed = 9
            n_particles = 200
            quantile = 0.3
            relabel_mode = "weights"
            mean_prior_variance = 0.01
            "#,
        )
        .unwrap();
        let preset = c.preset().unwrap();
        let run = c.run_config(preset).unwrap();
        assert_eq!(
            (run.n_particles, run.n_init, run.quantile),
            (200, 2000, 0.3)
        );
        assert_eq!(
            run.relabel_mode,
            RelabelMode::Forced(abcmix::ParamSet::Weights)
        );
        let prior = c.prior(preset, &[]).unwrap();
        assert_eq!(prior.mean_prior_variance(), 0.01);
        assert_eq!(prior.fixed_weights(), Some(&[0.3, 0.7][..]));
    }

    #[test]
    fn data_driven_prior_without_preset() {
        let c = FileConfig {
            components: Some(2),
            ..Default::default()
        };
        let prior = c.prior(None, &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(prior.k(), 2);
        assert_eq!(prior.mean_prior_location(), 2.5);
        assert!(FileConfig::default().prior(None, &[1.0, 2.0]).is_err());
    }
}
