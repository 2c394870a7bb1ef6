//! The ABC population Monte Carlo loop.
//!
//! Iteration 1 draws `N_init` parameter points from the prior and keeps the
//! `N` whose simulated data land closest to the observations. Each later
//! iteration shrinks the tolerance to a quantile of the previous distances and
//! refills `N` slots by perturbing weighted draws from the previous population
//! until a simulation falls within tolerance. Components are relabeled at the
//! end of every iteration. The run stops once every marginal posterior moves
//! by less than a threshold in Hellinger distance between iterations.

use crate::error::{Error, Result};
use crate::kernels::{
    compute_scales, log_importance_weight, perturb_mean, perturb_variance, resample_weights,
    KernelScales, ProposalDensity,
};
use crate::mixture::{
    sample_prior, simulate, simulate_with_errors, MixtureParams, ObservedDataset, ParamSet,
    PriorSpec,
};
use crate::relabel::{relabel_with, RelabelMode, RelabelReport};
use crate::rng::{stream, Purpose, StreamRng};
use crate::stats::{effective_sample_size, log_sum_exp};
use crate::summary::{abc_distance, hellinger, weighted_kde, DEFAULT_GRID_SIZE, MIN_GRID_SIZE};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::time::Instant;

const WEIGHT_SUM_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Particle {
    pub params: MixtureParams,
    pub importance_weight: f64,
    pub distance: f64,
}

/// The weighted population at one iteration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParticleSystem {
    particles: Vec<Particle>,
    iteration: usize,
    tolerance: f64,
    /// Kernel scales used to propose this population; absent at iteration 1.
    scales: Option<KernelScales>,
}

impl ParticleSystem {
    /// Builds a system, normalizing the importance weights.
    pub fn new(
        mut particles: Vec<Particle>,
        iteration: usize,
        tolerance: f64,
        scales: Option<KernelScales>,
    ) -> Result<Self> {
        if particles.is_empty() {
            return Err(Error::DegenerateSystem("particle system is empty".into()));
        }
        let k = particles[0].params.k();
        if particles.iter().any(|p| p.params.k() != k) {
            return Err(Error::DegenerateSystem(
                "particles disagree on the number of components".into(),
            ));
        }
        if !(tolerance >= 0.0) {
            return Err(Error::Domain(format!(
                "tolerance {tolerance} must be nonnegative"
            )));
        }
        if let Some(p) = particles.iter().find(|p| p.distance > tolerance) {
            return Err(Error::Domain(format!(
                "particle distance {} exceeds tolerance {tolerance}",
                p.distance
            )));
        }
        if particles
            .iter()
            .any(|p| !(p.importance_weight >= 0.0 && p.importance_weight.is_finite()))
        {
            return Err(Error::Domain(
                "importance weights must be finite and nonnegative".into(),
            ));
        }
        let total: f64 = particles.iter().map(|p| p.importance_weight).sum();
        if !(total > 0.0) {
            return Err(Error::ZeroWeights { iteration });
        }
        for p in &mut particles {
            p.importance_weight /= total;
        }
        debug_assert!(
            (particles.iter().map(|p| p.importance_weight).sum::<f64>() - 1.0).abs()
                <= WEIGHT_SUM_TOLERANCE
        );
        Ok(Self {
            particles,
            iteration,
            tolerance,
            scales,
        })
    }

    pub fn particles(&self) -> &[Particle] {
        &self.particles
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn k(&self) -> usize {
        self.particles[0].params.k()
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn tolerance(&self) -> f64 {
        self.tolerance
    }

    pub fn scales(&self) -> Option<&KernelScales> {
        self.scales.as_ref()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.particles.iter().map(|p| p.importance_weight).collect()
    }

    pub fn distances(&self) -> Vec<f64> {
        self.particles.iter().map(|p| p.distance).collect()
    }

    /// Values of parameter `set` for component `k` across the particles.
    pub fn component_values(&self, set: ParamSet, k: usize) -> Vec<f64> {
        self.particles
            .iter()
            .map(|p| set.of(&p.params)[k])
            .collect()
    }

    pub fn effective_sample_size(&self) -> f64 {
        effective_sample_size(&self.weights())
    }

    /// Weighted posterior mean and sd of one parameter slot.
    pub fn posterior_moments(&self, set: ParamSet, k: usize) -> (f64, f64) {
        let (m, v) =
            crate::stats::weighted_mean_var(&self.component_values(set, k), &self.weights());
        (m, v.sqrt())
    }

    /// Same population with replaced particles (same weights and distances
    /// are expected to travel with them).
    pub(crate) fn with_particles(&self, particles: Vec<Particle>) -> Self {
        Self {
            particles,
            iteration: self.iteration,
            tolerance: self.tolerance,
            scales: self.scales.clone(),
        }
    }
}

/// Tuning of a run. Build with [`RunConfig::new`] and adjust fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub n_particles: usize,
    pub n_init: usize,
    /// Quantile of the previous distances used as the next tolerance.
    pub quantile: f64,
    /// Retention `p` of the weight-resampling kernel.
    pub retention: f64,
    pub stop_threshold: f64,
    pub max_iterations: usize,
    pub max_attempts_per_particle: usize,
    pub seed: u64,
    pub grid_size: usize,
    /// Use a plain Gaussian density for the truncated variance kernel in the
    /// importance weights.
    pub literal_kernel_density: bool,
    /// Add per-observation measurement noise in the forward model.
    pub use_measurement_errors: bool,
    pub relabel_mode: RelabelMode,
    /// Run the slots of an iteration on the rayon pool.
    pub parallel: bool,
}

impl RunConfig {
    pub fn new(n_particles: usize, seed: u64) -> Self {
        Self {
            n_particles,
            n_init: 10 * n_particles,
            quantile: 0.5,
            retention: 0.5,
            stop_threshold: 0.05,
            max_iterations: 50,
            max_attempts_per_particle: 100_000,
            seed,
            grid_size: DEFAULT_GRID_SIZE,
            literal_kernel_density: false,
            use_measurement_errors: false,
            relabel_mode: RelabelMode::Auto,
            parallel: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.n_particles < 2 {
            return fail(format!(
                "n_particles must be at least 2, got {}",
                self.n_particles
            ));
        }
        if self.n_init < self.n_particles {
            return fail(format!(
                "n_init ({}) must be at least n_particles ({})",
                self.n_init, self.n_particles
            ));
        }
        if !(self.quantile > 0.0 && self.quantile <= 1.0) {
            return fail(format!("quantile {} outside (0, 1]", self.quantile));
        }
        if !(0.0..=1.0).contains(&self.retention) {
            return fail(format!("retention {} outside [0, 1]", self.retention));
        }
        if !(self.stop_threshold >= 0.0) {
            return fail(format!(
                "stop_threshold {} must be nonnegative",
                self.stop_threshold
            ));
        }
        if self.max_iterations == 0 || self.max_attempts_per_particle == 0 {
            return fail("max_iterations and max_attempts_per_particle must be positive".into());
        }
        if self.grid_size < MIN_GRID_SIZE {
            return fail(format!("grid_size must be at least {MIN_GRID_SIZE}"));
        }
        Ok(())
    }
}

/// Why a run ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// Every marginal moved less than the threshold.
    Converged,
    MaxIterations,
    /// The next tolerance equalled the current one.
    TolerancePlateau,
}

/// Per-iteration telemetry.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub tolerance: f64,
    pub attempts: usize,
    pub acceptance_rate: f64,
    pub ess: f64,
    pub relabel: Option<RelabelReport>,
    /// Largest sequential Hellinger distance over the free marginals.
    pub marginal_shift: Option<f64>,
    /// Candidates whose kernel density underflowed to zero.
    pub zero_weight_count: usize,
    pub elapsed_seconds: f64,
}

/// Consumer of per-iteration events.
pub trait EventSink {
    fn record(&mut self, event: &IterationRecord);
}

impl EventSink for Vec<IterationRecord> {
    fn record(&mut self, event: &IterationRecord) {
        self.push(event.clone());
    }
}

impl EventSink for () {
    fn record(&mut self, _event: &IterationRecord) {}
}

impl<F: FnMut(&IterationRecord)> EventSink for F {
    fn record(&mut self, event: &IterationRecord) {
        self(event)
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub system: ParticleSystem,
    pub telemetry: Vec<IterationRecord>,
    pub stop_reason: StopReason,
}

/// Counters from one iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct StepStats {
    pub attempts: usize,
    pub zero_weight_count: usize,
    pub relabel: Option<RelabelReport>,
}

fn forward<R: Rng + ?Sized>(
    params: &MixtureParams,
    data: &ObservedDataset,
    with_errors: bool,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if with_errors {
        simulate_with_errors(params, data, rng)
    } else {
        Ok(simulate(params, data.len(), rng))
    }
}

fn check_inputs(prior: &PriorSpec, data: &ObservedDataset, config: &RunConfig) -> Result<()> {
    config.validate()?;
    if config.use_measurement_errors && data.measurement_errors().is_none() {
        return Err(Error::Config(
            "use_measurement_errors is set but the dataset has no measurement errors".into(),
        ));
    }
    if data.grid_size() != config.grid_size {
        return Err(Error::Config(format!(
            "dataset summary uses {} grid points, config asks for {}",
            data.grid_size(),
            config.grid_size
        )));
    }
    if prior.k() == 0 {
        return Err(Error::Config("prior has no components".into()));
    }
    Ok(())
}

fn map_slots<T: Send>(n: usize, parallel: bool, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    if parallel {
        (0..n).into_par_iter().map(f).collect()
    } else {
        (0..n).map(f).collect()
    }
}

/// Iteration 1: `N_init` prior draws, keep the `N` closest, tolerance = the
/// `N`-th smallest distance, equal weights, relabel.
pub fn initialize(
    prior: &PriorSpec,
    data: &ObservedDataset,
    config: &RunConfig,
) -> Result<(ParticleSystem, StepStats)> {
    check_inputs(prior, data, config)?;
    let draws: Vec<Result<Option<(MixtureParams, f64)>>> =
        map_slots(config.n_init, config.parallel, |slot| {
            let mut rng = stream(config.seed, Purpose::Sampler, 1, slot as u64, 0);
            let params = sample_prior(prior, &mut rng)?;
            let sim = forward(&params, data, config.use_measurement_errors, &mut rng)?;
            match abc_distance(data, &sim) {
                Ok(d) => Ok(Some((params, d))),
                Err(Error::DegenerateSample(_)) => Ok(None),
                Err(e) => Err(e),
            }
        });
    let mut kept = Vec::with_capacity(config.n_init);
    for draw in draws {
        if let Some(pair) = draw? {
            kept.push(pair);
        }
    }
    let failed = config.n_init - kept.len();
    if 2 * failed > config.n_init || kept.len() < config.n_particles {
        return Err(Error::InitializationFailed {
            failed,
            total: config.n_init,
        });
    }
    // stable: equal distances keep draw order
    kept.sort_by(|a, b| a.1.total_cmp(&b.1));
    kept.truncate(config.n_particles);
    let tolerance = kept[config.n_particles - 1].1;
    let particles = kept
        .into_iter()
        .map(|(params, distance)| Particle {
            params,
            importance_weight: 1.0,
            distance,
        })
        .collect();
    let system = ParticleSystem::new(particles, 1, tolerance, None)?;
    let (system, relabel) = relabel_with(&system, prior, config.relabel_mode)?;
    Ok((
        system,
        StepStats {
            attempts: config.n_init,
            zero_weight_count: 0,
            relabel,
        },
    ))
}

/// The `⌈qN⌉`-th smallest distance of the system.
pub fn next_tolerance(system: &ParticleSystem, quantile: f64) -> f64 {
    let mut d = system.distances();
    d.sort_by(f64::total_cmp);
    let n = d.len();
    let rank = ((quantile * n as f64).ceil() as usize).clamp(1, n);
    d[rank - 1]
}

fn pick<R: Rng + ?Sized>(cumulative: &[f64], rng: &mut R) -> usize {
    let total = cumulative[cumulative.len() - 1];
    let u = rng.random::<f64>() * total;
    cumulative
        .partition_point(|&c| c <= u)
        .min(cumulative.len() - 1)
}

struct Proposer<'a> {
    previous: &'a ParticleSystem,
    cumulative: Vec<f64>,
    scales: &'a KernelScales,
    prior: &'a PriorSpec,
}

impl Proposer<'_> {
    fn propose(&self, rng: &mut StreamRng) -> Result<MixtureParams> {
        let particles = self.previous.particles();
        let source = &particles[pick(&self.cumulative, rng)].params;
        let weight_source = &particles[pick(&self.cumulative, rng)].params;
        let weights = match self.prior.fixed_weights() {
            Some(w) => w.to_vec(),
            None if self.prior.k() == 1 => vec![1.0],
            None => resample_weights(
                weight_source.weights(),
                self.prior.dirichlet_concentration(),
                self.scales.retention(),
                rng,
            )?,
        };
        let means = source
            .means()
            .iter()
            .zip(self.scales.mean_scale_sq())
            .map(|(&m, &t2)| perturb_mean(m, t2, rng))
            .collect();
        let variances = match (
            self.prior.fixed_variances(),
            self.scales.variance_scale_sq(),
        ) {
            (Some(v), _) => v.to_vec(),
            (None, Some(tau)) => source
                .variances()
                .iter()
                .zip(tau)
                .map(|(&v, &t2)| perturb_variance(v, t2, rng))
                .collect(),
            (None, None) => {
                return Err(Error::Config(
                    "free variances need variance kernel scales".into(),
                ))
            }
        };
        MixtureParams::new(weights, means, variances)
    }
}

/// One iteration `t ≥ 2` at tolerance `tolerance`.
pub fn step(
    previous: &ParticleSystem,
    tolerance: f64,
    prior: &PriorSpec,
    data: &ObservedDataset,
    config: &RunConfig,
) -> Result<(ParticleSystem, StepStats)> {
    check_inputs(prior, data, config)?;
    let iteration = previous.iteration() + 1;
    let scales = compute_scales(previous, prior, config.retention)?;
    let mut cumulative = Vec::with_capacity(previous.len());
    let mut acc = 0.0;
    for p in previous.particles() {
        acc += p.importance_weight;
        cumulative.push(acc);
    }
    let proposer = Proposer {
        previous,
        cumulative,
        scales: &scales,
        prior,
    };

    let slots: Vec<Result<(MixtureParams, f64, usize)>> =
        map_slots(config.n_particles, config.parallel, |slot| {
            for attempt in 0..config.max_attempts_per_particle {
                let mut rng = stream(
                    config.seed,
                    Purpose::Sampler,
                    iteration as u64,
                    slot as u64,
                    attempt as u64,
                );
                // invalid proposals (a weight rounding to zero) count as rejections
                let Ok(candidate) = proposer.propose(&mut rng) else {
                    continue;
                };
                let sim = forward(&candidate, data, config.use_measurement_errors, &mut rng)?;
                let distance = match abc_distance(data, &sim) {
                    Ok(d) => d,
                    Err(Error::DegenerateSample(_)) => continue,
                    Err(e) => return Err(e),
                };
                if distance <= tolerance {
                    return Ok((candidate, distance, attempt + 1));
                }
            }
            Err(Error::AttemptsExhausted {
                iteration,
                slot,
                attempts: config.max_attempts_per_particle,
                tolerance,
                acceptance_rate: 0.0,
            })
        });

    let mut accepted = Vec::with_capacity(config.n_particles);
    let mut attempts = 0;
    for (slot, result) in slots.into_iter().enumerate() {
        match result {
            Ok((params, distance, tries)) => {
                attempts += tries;
                accepted.push((params, distance));
            }
            Err(Error::AttemptsExhausted { .. }) => {
                let done = accepted.len();
                attempts += config.max_attempts_per_particle;
                return Err(Error::AttemptsExhausted {
                    iteration,
                    slot,
                    attempts: config.max_attempts_per_particle,
                    tolerance,
                    acceptance_rate: done as f64 / attempts as f64,
                });
            }
            Err(e) => return Err(e),
        }
    }

    let proposal = ProposalDensity::new(previous, &scales, config.literal_kernel_density);
    let log_weights: Vec<f64> = map_slots(accepted.len(), config.parallel, |i| {
        log_importance_weight(&accepted[i].0, &proposal, prior)
    })
    .into_iter()
    .collect::<Result<_>>()?;
    let zero_weight_count = log_weights
        .iter()
        .filter(|w| **w == f64::NEG_INFINITY)
        .count();
    let log_total = log_sum_exp(&log_weights);
    if !log_total.is_finite() {
        return Err(Error::ZeroWeights { iteration });
    }
    let particles = accepted
        .into_iter()
        .zip(&log_weights)
        .map(|((params, distance), lw)| Particle {
            params,
            importance_weight: (lw - log_total).exp(),
            distance,
        })
        .collect();
    let system = ParticleSystem::new(particles, iteration, tolerance, Some(scales))?;
    let (system, relabel) = relabel_with(&system, prior, config.relabel_mode)?;
    Ok((
        system,
        StepStats {
            attempts,
            zero_weight_count,
            relabel,
        },
    ))
}

/// Parameter slots whose marginals enter the stopping rule.
pub fn free_marginals(prior: &PriorSpec) -> Vec<(ParamSet, usize)> {
    ParamSet::ALL
        .into_iter()
        .filter(|&s| prior.is_free(s))
        .flat_map(|s| (0..prior.k()).map(move |k| (s, k)))
        .collect()
}

/// Hellinger distance between weighted KDEs of one marginal in two systems.
/// A marginal that is constant in both systems counts as unchanged when the
/// constants agree, and as maximally distant otherwise.
pub fn marginal_distance(
    current: &ParticleSystem,
    previous: &ParticleSystem,
    set: ParamSet,
    k: usize,
    grid_size: usize,
) -> f64 {
    let a = current.component_values(set, k);
    let b = previous.component_values(set, k);
    match (
        weighted_kde(&a, &current.weights(), grid_size),
        weighted_kde(&b, &previous.weights(), grid_size),
    ) {
        (Ok(f), Ok(g)) => hellinger(&f, &g),
        _ if a.iter().chain(&b).all(|x| *x == a[0]) => 0.0,
        _ => std::f64::consts::SQRT_2,
    }
}

/// Largest sequential Hellinger distance over the free marginals.
pub fn max_marginal_shift(
    current: &ParticleSystem,
    previous: &ParticleSystem,
    prior: &PriorSpec,
    grid_size: usize,
) -> f64 {
    free_marginals(prior)
        .into_iter()
        .map(|(s, k)| marginal_distance(current, previous, s, k, grid_size))
        .fold(0.0, f64::max)
}

/// True when every free marginal moved by less than `threshold`.
pub fn should_stop(
    current: &ParticleSystem,
    previous: &ParticleSystem,
    prior: &PriorSpec,
    threshold: f64,
    grid_size: usize,
) -> bool {
    max_marginal_shift(current, previous, prior, grid_size) < threshold
}

/// Runs the sampler to a stop condition, reporting each iteration to `sink`.
pub fn run(
    prior: &PriorSpec,
    data: &ObservedDataset,
    config: &RunConfig,
    sink: &mut dyn EventSink,
) -> Result<RunOutcome> {
    let mut telemetry = Vec::new();
    let mut emit = |record: IterationRecord, telemetry: &mut Vec<IterationRecord>| {
        sink.record(&record);
        telemetry.push(record);
    };

    let started = Instant::now();
    let (mut system, stats) = initialize(prior, data, config)?;
    emit(
        IterationRecord {
            iteration: 1,
            tolerance: system.tolerance(),
            attempts: stats.attempts,
            acceptance_rate: config.n_particles as f64 / stats.attempts as f64,
            ess: system.effective_sample_size(),
            relabel: stats.relabel,
            marginal_shift: None,
            zero_weight_count: 0,
            elapsed_seconds: started.elapsed().as_secs_f64(),
        },
        &mut telemetry,
    );

    let mut stop_reason = StopReason::MaxIterations;
    while system.iteration() < config.max_iterations {
        let tolerance = next_tolerance(&system, config.quantile);
        if tolerance == system.tolerance() && system.iteration() > 1 {
            stop_reason = StopReason::TolerancePlateau;
            break;
        }
        let started = Instant::now();
        let (next, stats) = step(&system, tolerance, prior, data, config)?;
        let shift = max_marginal_shift(&next, &system, prior, config.grid_size);
        emit(
            IterationRecord {
                iteration: next.iteration(),
                tolerance,
                attempts: stats.attempts,
                acceptance_rate: config.n_particles as f64 / stats.attempts as f64,
                ess: next.effective_sample_size(),
                relabel: stats.relabel,
                marginal_shift: Some(shift),
                zero_weight_count: stats.zero_weight_count,
                elapsed_seconds: started.elapsed().as_secs_f64(),
            },
            &mut telemetry,
        );
        system = next;
        if shift < config.stop_threshold {
            stop_reason = StopReason::Converged;
            break;
        }
    }
    Ok(RunOutcome {
        system,
        telemetry,
        stop_reason,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mixture::simulate;
    use crate::rng::seeded;

    fn particle(m: f64, d: f64) -> Particle {
        Particle {
            params: MixtureParams::new(vec![0.5, 0.5], vec![m, m + 1.0], vec![1.0, 1.0]).unwrap(),
            importance_weight: 1.0,
            distance: d,
        }
    }

    fn system_with_distances(d: &[f64]) -> ParticleSystem {
        let tol = d.iter().copied().fold(0.0, f64::max);
        ParticleSystem::new(
            d.iter()
                .enumerate()
                .map(|(i, &d)| particle(i as f64, d))
                .collect(),
            1,
            tol,
            None,
        )
        .unwrap()
    }

    #[test]
    fn tolerance_is_order_statistic() {
        let s = system_with_distances(&[0.4, 0.1, 0.3, 0.2]);
        assert_eq!(next_tolerance(&s, 0.5), 0.2);
        assert_eq!(next_tolerance(&s, 1.0), 0.4);
        assert_eq!(next_tolerance(&s, 0.999), 0.4);
        let flat = system_with_distances(&[0.3; 5]);
        assert_eq!(next_tolerance(&flat, 0.5), 0.3);
    }

    #[test]
    fn system_normalizes_and_validates() {
        let s = ParticleSystem::new(vec![particle(0.0, 0.1), particle(1.0, 0.2)], 1, 0.5, None)
            .unwrap();
        assert_eq!(s.weights(), vec![0.5, 0.5]);
        assert!(ParticleSystem::new(vec![particle(0.0, 0.9)], 1, 0.5, None).is_err());
        let mut zero = particle(0.0, 0.1);
        zero.importance_weight = 0.0;
        assert!(matches!(
            ParticleSystem::new(vec![zero], 4, 0.5, None),
            Err(Error::ZeroWeights { iteration: 4 })
        ));
    }

    #[test]
    fn identical_systems_stop_and_zero_threshold_never_does() {
        let prior = PriorSpec::new(vec![1.0, 1.0], 0.0, 100.0, 2.0, 1.0)
            .unwrap()
            .with_fixed_variances(vec![1.0, 1.0])
            .unwrap();
        let mut rng = seeded(80, Purpose::Auxiliary);
        let particles = (0..50)
            .map(|_| Particle {
                params: sample_prior(&prior, &mut rng).unwrap(),
                importance_weight: rng.random::<f64>(),
                distance: 0.0,
            })
            .collect();
        let s = ParticleSystem::new(particles, 2, 1.0, None).unwrap();
        assert!(should_stop(&s, &s, &prior, 1e-9, 128));
        assert!(!should_stop(&s, &s, &prior, 0.0, 128));
    }

    fn small_problem() -> (PriorSpec, ObservedDataset) {
        let truth = MixtureParams::new(vec![0.5, 0.5], vec![-3.0, 3.0], vec![1.0, 1.0]).unwrap();
        let values = simulate(&truth, 30, &mut seeded(81, Purpose::Data));
        let prior = PriorSpec::new(vec![1.0, 1.0], 0.0, 25.0, 2.0, 1.0)
            .unwrap()
            .with_fixed_variances(vec![1.0, 1.0])
            .unwrap();
        (prior, ObservedDataset::new(values, None, 128).unwrap())
    }

    fn small_config(seed: u64) -> RunConfig {
        let mut c = RunConfig::new(60, seed);
        c.grid_size = 128;
        c.n_init = 300;
        c.max_iterations = 4;
        c
    }

    #[test]
    fn equal_init_count_keeps_every_proposal() {
        let (prior, data) = small_problem();
        let mut config = small_config(1);
        config.n_init = config.n_particles;
        let (s, _) = initialize(&prior, &data, &config).unwrap();
        assert_eq!(s.len(), 60);
        let max = s.distances().into_iter().fold(0.0, f64::max);
        assert_eq!(s.tolerance(), max);
        assert!(s.weights().iter().all(|w| (w - 1.0 / 60.0).abs() < 1e-15));
    }

    #[test]
    fn infinite_tolerance_accepts_first_attempt() {
        let (prior, data) = small_problem();
        let config = small_config(2);
        let (s, _) = initialize(&prior, &data, &config).unwrap();
        let (next, stats) = step(&s, f64::INFINITY, &prior, &data, &config).unwrap();
        assert_eq!(stats.attempts, config.n_particles);
        assert!(next.distances().iter().all(|d| d.is_finite()));
        assert_eq!(next.iteration(), 2);
    }

    #[test]
    fn single_iteration_returns_initial_system() {
        let (prior, data) = small_problem();
        let mut config = small_config(3);
        config.max_iterations = 1;
        let (init, _) = initialize(&prior, &data, &config).unwrap();
        let outcome = run(&prior, &data, &config, &mut ()).unwrap();
        assert_eq!(outcome.system, init);
        assert_eq!(outcome.telemetry.len(), 1);
        assert_eq!(outcome.stop_reason, StopReason::MaxIterations);
    }

    #[test]
    fn run_invariants_and_scheduling_independence() {
        let (prior, data) = small_problem();
        let mut config = small_config(4);
        config.parallel = false;
        let mut events = Vec::new();
        let sequential = run(&prior, &data, &config, &mut events).unwrap();
        config.parallel = true;
        let parallel = run(&prior, &data, &config, &mut ()).unwrap();
        assert_eq!(sequential.system, parallel.system);

        assert_eq!(events.len(), sequential.telemetry.len());
        for pair in events.windows(2) {
            assert!(pair[1].tolerance <= pair[0].tolerance);
        }
        for e in &events {
            assert!(e.ess >= 1.0 - 1e-9 && e.ess <= config.n_particles as f64 + 1e-9);
        }
        let s = &sequential.system;
        assert!(s.distances().iter().all(|&d| d <= s.tolerance()));
        assert!((s.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn exhausted_attempts_abort_with_diagnostic() {
        let (prior, data) = small_problem();
        let mut config = small_config(5);
        config.max_attempts_per_particle = 3;
        let (s, _) = initialize(&prior, &data, &config).unwrap();
        let err = step(&s, 0.0, &prior, &data, &config).unwrap_err();
        assert!(matches!(err, Error::AttemptsExhausted { attempts: 3, .. }));
    }

    #[test]
    fn error_model_requires_errors() {
        let (prior, data) = small_problem();
        let mut config = small_config(6);
        config.use_measurement_errors = true;
        assert!(matches!(
            initialize(&prior, &data, &config),
            Err(Error::Config(_))
        ));
    }
}
