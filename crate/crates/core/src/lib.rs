//! Approximate Bayesian computation with population Monte Carlo (ABC-PMC) for
//! finite Gaussian mixtures in one dimension.
//!
//! * [`mixture`]: parameters, priors, observed data and the forward model.
//! * [`summary`]: kernel density summaries and the Hellinger distance.
//! * [`kernels`]: perturbation kernels and importance weights.
//! * [`relabel`]: label-switching resolution across a particle system.
//! * [`engine`]: the sampler loop, stopping rule and telemetry.
//! * [`experiments`]: bundled datasets and experiment presets.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod engine;
pub mod error;
pub mod experiments;
pub mod kernels;
pub mod mixture;
pub mod relabel;
pub mod rng;
pub mod stats;
pub mod summary;

pub use engine::{
    initialize, next_tolerance, run, should_stop, step, EventSink, IterationRecord, Particle,
    ParticleSystem, RunConfig, RunOutcome, StopReason,
};
pub use error::{Error, Result};
pub use mixture::{MixtureParams, ObservedDataset, ParamSet, PriorSpec};
pub use relabel::{RelabelMode, RelabelReport};
pub use summary::{abc_distance, hellinger, kde, DensitySummary};
