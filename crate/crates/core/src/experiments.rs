//! Bundled datasets and experiment presets.
//!
//! Simulated presets regenerate their observations from a fixed data seed, so
//! a preset name alone pins the dataset.

use crate::engine::RunConfig;
use crate::error::{Error, Result};
use crate::mixture::{simulate, MixtureParams, ObservedDataset, PriorSpec};
use crate::rng::{seeded, Purpose};
use crate::stats::standard_normal;
use std::fmt;
use std::str::FromStr;

/// Galaxy recessional velocities in 1000 km/s with per-observation
/// measurement errors (same unit). The errors are synthetic; see
/// `data/README.md`.
pub const GALAXY_CSV: &str = include_str!("../data/galaxy.csv");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Preset {
    /// 20 draws from N(−20, 1) and 20 from N(20, 1); known unit variances.
    TwoComponent,
    /// The two-component data plus 5 draws from N(0, 1).
    ThreeComponent,
    /// 500 draws from 0.3·N(2.5, 1) + 0.7·N(0, 1); known weights and variances.
    Marin,
    /// Galaxy velocities, three components, measurement errors ignored.
    Galaxy,
    /// Galaxy velocities with the measurement-error forward model.
    GalaxyWithErrors,
}

impl Preset {
    pub const ALL: [Preset; 5] = [
        Preset::TwoComponent,
        Preset::ThreeComponent,
        Preset::Marin,
        Preset::Galaxy,
        Preset::GalaxyWithErrors,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::TwoComponent => "example-3.1-two-component",
            Preset::ThreeComponent => "example-3.1-three-component",
            Preset::Marin => "example-3.2-marin",
            Preset::Galaxy => "galaxy",
            Preset::GalaxyWithErrors => "galaxy-with-errors",
        }
    }

    /// Seed of the simulated observations.
    pub fn data_seed(self) -> u64 {
        match self {
            Preset::TwoComponent | Preset::ThreeComponent => 195_171,
            Preset::Marin => 796,
            Preset::Galaxy | Preset::GalaxyWithErrors => 0,
        }
    }

    /// Data-generating parameters of simulated presets.
    pub fn truth(self) -> Option<MixtureParams> {
        let p = match self {
            Preset::TwoComponent => {
                MixtureParams::new(vec![0.5, 0.5], vec![-20.0, 20.0], vec![1.0, 1.0])
            }
            Preset::ThreeComponent => MixtureParams::new(
                vec![20.0 / 45.0, 5.0 / 45.0, 20.0 / 45.0],
                vec![-20.0, 0.0, 20.0],
                vec![1.0; 3],
            ),
            Preset::Marin => MixtureParams::new(vec![0.3, 0.7], vec![2.5, 0.0], vec![1.0, 1.0]),
            Preset::Galaxy | Preset::GalaxyWithErrors => return None,
        };
        Some(p.expect("preset parameters are valid"))
    }

    /// Observation values and optional measurement errors.
    pub fn raw_data(self) -> (Vec<f64>, Option<Vec<f64>>) {
        let mut rng = seeded(self.data_seed(), Purpose::Data);
        let mut group = |mean: f64, n: usize| -> Vec<f64> {
            (0..n).map(|_| mean + standard_normal(&mut rng)).collect()
        };
        match self {
            Preset::TwoComponent => (
                group(-20.0, 20)
                    .into_iter()
                    .chain(group(20.0, 20))
                    .collect(),
                None,
            ),
            Preset::ThreeComponent => {
                let mut values = group(-20.0, 20);
                values.extend(group(20.0, 20));
                values.extend(group(0.0, 5));
                (values, None)
            }
            Preset::Marin => {
                let truth = self.truth().expect("simulated preset");
                (simulate(&truth, 500, &mut rng), None)
            }
            Preset::Galaxy | Preset::GalaxyWithErrors => {
                let (values, errors) = galaxy();
                (values, Some(errors))
            }
        }
    }

    pub fn dataset(self, grid_size: usize) -> Result<ObservedDataset> {
        let (values, errors) = self.raw_data();
        ObservedDataset::new(values, errors, grid_size)
    }

    pub fn prior(self) -> PriorSpec {
        let prior = match self {
            Preset::TwoComponent => PriorSpec::new(vec![1.0; 2], 0.0, 100.0, 2.0, 1.0)
                .and_then(|p| p.with_fixed_variances(vec![1.0; 2])),
            Preset::ThreeComponent => PriorSpec::new(vec![1.0; 3], 0.0, 100.0, 2.0, 1.0)
                .and_then(|p| p.with_fixed_variances(vec![1.0; 3])),
            Preset::Marin => PriorSpec::new(vec![1.0; 2], 0.0, 100.0, 2.0, 1.0)
                .and_then(|p| p.with_fixed_weights(vec![0.3, 0.7]))
                .and_then(|p| p.with_fixed_variances(vec![1.0; 2])),
            Preset::Galaxy | Preset::GalaxyWithErrors => {
                let center = crate::stats::mean(&galaxy().0);
                PriorSpec::new(vec![1.0; 3], center, 100.0, 2.0, 1.0)
            }
        };
        prior.expect("preset prior is valid")
    }

    /// Run configuration with the preset's defaults.
    pub fn config(self, n_particles: usize, seed: u64) -> RunConfig {
        let mut config = RunConfig::new(n_particles, seed);
        config.max_iterations = 40;
        if matches!(self, Preset::Galaxy | Preset::GalaxyWithErrors) {
            config.quantile = 0.75;
        }
        config.use_measurement_errors = self == Preset::GalaxyWithErrors;
        config
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| {
                let known: Vec<_> = Preset::ALL.iter().map(|p| p.name()).collect();
                Error::Config(format!("unknown preset `{s}`; known: {}", known.join(", ")))
            })
    }
}

/// Parses the bundled galaxy table into velocities and errors.
pub fn galaxy() -> (Vec<f64>, Vec<f64>) {
    GALAXY_CSV
        .lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            let (v, e) = line.split_once(',').expect("two columns");
            (
                v.trim().parse::<f64>().unwrap(),
                e.trim().parse::<f64>().unwrap(),
            )
        })
        .unzip()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for p in Preset::ALL {
            assert_eq!(p.name().parse::<Preset>().unwrap(), p);
        }
        assert!("nope".parse::<Preset>().is_err());
    }

    #[test]
    fn galaxy_table_has_82_rows() {
        let (v, e) = galaxy();
        assert_eq!(v.len(), 82);
        assert_eq!(e.len(), 82);
        assert!(v.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(v[0], 9.172);
        assert_eq!(v[81], 34.279);
    }

    #[test]
    fn simulated_presets_have_expected_sizes() {
        assert_eq!(Preset::TwoComponent.raw_data().0.len(), 40);
        assert_eq!(Preset::ThreeComponent.raw_data().0.len(), 45);
        assert_eq!(Preset::Marin.raw_data().0.len(), 500);
        assert!(Preset::Galaxy
            .dataset(512)
            .unwrap()
            .measurement_errors()
            .is_some());
    }

    #[test]
    fn three_component_extends_two_component() {
        let two = Preset::TwoComponent.raw_data().0;
        let three = Preset::ThreeComponent.raw_data().0;
        assert_eq!(&three[..40], &two[..]);
    }
}
