//! Perturbation kernels for means, variances and mixture weights, and the
//! importance weights that correct for proposing from them.

use crate::engine::ParticleSystem;
use crate::error::{Error, Result};
use crate::mixture::{prior_log_density, MixtureParams, ParamSet, PriorSpec};
use crate::stats::{
    log_sum_exp, normal_log_pdf, open_uniform, sample_beta, sample_gamma, standard_normal,
    std_normal_cdf, std_normal_inv_cdf, std_normal_log_cdf, weighted_mean_var,
};
use rand::Rng;
use serde::Serialize;

/// Kernel variances for one iteration, plus the weight-resampling retention.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KernelScales {
    mean_scale_sq: Vec<f64>,
    /// Absent when the variances are known.
    variance_scale_sq: Option<Vec<f64>>,
    retention: f64,
}

impl KernelScales {
    pub fn new(
        mean_scale_sq: Vec<f64>,
        variance_scale_sq: Option<Vec<f64>>,
        retention: f64,
    ) -> Result<Self> {
        let positive = |v: &[f64]| v.iter().all(|s| s.is_finite() && *s > 0.0);
        if !positive(&mean_scale_sq) || !variance_scale_sq.as_deref().is_none_or(positive) {
            return Err(Error::Domain(
                "kernel scales must be positive and finite".into(),
            ));
        }
        if !(0.0..=1.0).contains(&retention) {
            return Err(Error::Domain(format!(
                "retention {retention} outside [0, 1]"
            )));
        }
        Ok(Self {
            mean_scale_sq,
            variance_scale_sq,
            retention,
        })
    }

    pub fn mean_scale_sq(&self) -> &[f64] {
        &self.mean_scale_sq
    }

    pub fn variance_scale_sq(&self) -> Option<&[f64]> {
        self.variance_scale_sq.as_deref()
    }

    pub fn retention(&self) -> f64 {
        self.retention
    }
}

/// Kernel variances: twice the weighted variance of each free parameter slot
/// across the particles.
pub fn compute_scales(
    system: &ParticleSystem,
    prior: &PriorSpec,
    retention: f64,
) -> Result<KernelScales> {
    if system.len() < 2 {
        return Err(Error::DegenerateSystem(
            "kernel scales need at least two particles".into(),
        ));
    }
    let weights = system.weights();
    let slot_scales = |set: ParamSet| -> Result<Vec<f64>> {
        (0..system.k())
            .map(|k| {
                let values = system.component_values(set, k);
                let (_, var) = weighted_mean_var(&values, &weights);
                if var > 0.0 {
                    Ok(2.0 * var)
                } else {
                    Err(Error::DegenerateSystem(format!(
                        "{} of component {} has zero weighted variance",
                        set.name(),
                        k + 1
                    )))
                }
            })
            .collect()
    };
    let means = slot_scales(ParamSet::Means)?;
    let variances = if prior.variances_free() {
        Some(slot_scales(ParamSet::Variances)?)
    } else {
        None
    };
    KernelScales::new(means, variances, retention)
}

/// Gaussian jitter with variance `scale_sq`.
pub fn perturb_mean<R: Rng + ?Sized>(value: f64, scale_sq: f64, rng: &mut R) -> f64 {
    value + scale_sq.sqrt() * standard_normal(rng)
}

/// Draw from `Normal(value, scale_sq)` truncated to `(0, ∞)`.
pub fn perturb_variance<R: Rng + ?Sized>(value: f64, scale_sq: f64, rng: &mut R) -> f64 {
    sample_positive_normal(value, scale_sq, rng)
}

/// Inverse-CDF draw from `Normal(mean, variance)` restricted to `(0, ∞)`.
///
/// With `a = -mean/sd` the standardized bound, the draw is `Φ⁻¹` of a uniform
/// on `(Φ(a), 1)`; when `a > 0` the upper tail is inverted directly so that
/// heavy truncation keeps full precision. Beyond the range where `Φ(-a)` is
/// representable the Rayleigh tail approximation is exact to `O(1/a²)`.
pub fn sample_positive_normal<R: Rng + ?Sized>(mean: f64, variance: f64, rng: &mut R) -> f64 {
    let sd = variance.sqrt();
    let a = -mean / sd;
    let u = open_uniform(rng);
    let z = if a <= 0.0 {
        let lower = std_normal_cdf(a);
        std_normal_inv_cdf(lower + u * (1.0 - lower))
    } else {
        let tail = std_normal_cdf(-a);
        if tail > 1e-300 {
            -std_normal_inv_cdf(u * tail)
        } else {
            (a * a - 2.0 * u.ln()).sqrt()
        }
    };
    let x = mean + sd * z;
    if x > 0.0 && x.is_finite() {
        x
    } else {
        // rounding at the bound
        crate::mixture::VARIANCE_FLOOR.max(f64::MIN_POSITIVE)
    }
}

/// CDF of `Normal(mean, variance)` truncated to `(0, ∞)`.
pub fn positive_normal_cdf(x: f64, mean: f64, variance: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let sd = variance.sqrt();
    let lower = std_normal_cdf(-mean / sd);
    let mass = 1.0 - lower;
    ((std_normal_cdf((x - mean) / sd) - lower) / mass).clamp(0.0, 1.0)
}

/// Moves a weight vector while keeping the Dirichlet(δ) law invariant:
///
/// 1. `Z ~ Gamma(δ₊, 1)` and `ξᵢ = Z fᵢ`, so `ξᵢ ~ Gamma(δᵢ, 1)` when `f ~ Dirichlet(δ)`;
/// 2. `Bᵢ ~ Beta(p δᵢ, (1 − p) δᵢ)`, so `ξᵢ Bᵢ ~ Gamma(p δᵢ, 1)`;
/// 3. `ηᵢ ~ Gamma((1 − p) δᵢ, 1)`;
/// 4. `ξ*ᵢ = ξᵢ Bᵢ + ηᵢ ~ Gamma(δᵢ, 1)` and the output is `ξ* / Σ ξ*`.
///
/// `p = 1` returns the input unchanged; `p = 0` is a fresh Dirichlet draw.
pub fn resample_weights<R: Rng + ?Sized>(
    previous: &[f64],
    delta: &[f64],
    retention: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&retention) {
        return Err(Error::Domain(format!(
            "retention {retention} outside [0, 1]"
        )));
    }
    if previous.len() != delta.len() {
        return Err(Error::Domain(format!(
            "{} weights but {} concentration entries",
            previous.len(),
            delta.len()
        )));
    }
    if retention == 1.0 {
        return Ok(previous.to_vec());
    }
    let z = sample_gamma(delta.iter().sum(), rng);
    let moved: Vec<f64> = previous
        .iter()
        .zip(delta)
        .map(|(&f, &d)| {
            let b = sample_beta(retention * d, (1.0 - retention) * d, rng);
            let eta = sample_gamma((1.0 - retention) * d, rng);
            z * f * b + eta
        })
        .collect();
    let total: f64 = moved.iter().sum();
    Ok(moved.into_iter().map(|x| x / total).collect())
}

/// The previous population smoothed by the perturbation kernels, ready to be
/// evaluated at many candidates.
#[derive(Debug, Clone)]
pub struct ProposalDensity {
    log_weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    variances: Option<Vec<Vec<f64>>>,
    mean_scale_sq: Vec<f64>,
    variance_scale_sq: Vec<f64>,
    /// Per particle, the log normalizer `Σₖ ln Φ(σ²ₖ / τₖ)` of the truncated kernels.
    truncation_log_mass: Vec<f64>,
}

impl ProposalDensity {
    /// `literal` drops the truncation normalizer from the variance kernel.
    pub fn new(previous: &ParticleSystem, scales: &KernelScales, literal: bool) -> Self {
        let weights = previous.weights();
        let log_total = weights.iter().sum::<f64>().ln();
        let log_weights = weights.iter().map(|w| w.ln() - log_total).collect();
        let means = previous
            .particles()
            .iter()
            .map(|p| p.params.means().to_vec())
            .collect();
        let variance_scale_sq = scales.variance_scale_sq().map(<[f64]>::to_vec);
        let variances = variance_scale_sq.as_ref().map(|_| {
            previous
                .particles()
                .iter()
                .map(|p| p.params.variances().to_vec())
                .collect::<Vec<_>>()
        });
        let truncation_log_mass = match (&variances, &variance_scale_sq) {
            (Some(vars), Some(tau)) if !literal => vars
                .iter()
                .map(|v| {
                    v.iter()
                        .zip(tau)
                        .map(|(s2, t2)| std_normal_log_cdf(s2 / t2.sqrt()))
                        .sum()
                })
                .collect(),
            _ => vec![0.0; previous.len()],
        };
        Self {
            log_weights,
            means,
            variances,
            mean_scale_sq: scales.mean_scale_sq().to_vec(),
            variance_scale_sq: variance_scale_sq.unwrap_or_default(),
            truncation_log_mass,
        }
    }

    /// `ln Σⱼ Wⱼ K(candidate | particle j)` over the free mean and variance slots.
    pub fn log_density(&self, candidate: &MixtureParams) -> f64 {
        let terms: Vec<f64> = (0..self.log_weights.len())
            .map(|j| {
                let mut lp = self.log_weights[j];
                for ((&m, &mj), &t2) in candidate
                    .means()
                    .iter()
                    .zip(&self.means[j])
                    .zip(&self.mean_scale_sq)
                {
                    lp += normal_log_pdf(m, mj, t2);
                }
                if let Some(vars) = &self.variances {
                    for ((&v, &vj), &t2) in candidate
                        .variances()
                        .iter()
                        .zip(&vars[j])
                        .zip(&self.variance_scale_sq)
                    {
                        lp += normal_log_pdf(v, vj, t2);
                    }
                    lp -= self.truncation_log_mass[j];
                }
                lp
            })
            .collect();
        log_sum_exp(&terms)
    }
}

/// `ln(2⁻¹⁰⁷⁴)`, the log of the smallest positive `f64`.
const LN_SMALLEST_SUBNORMAL: f64 = -744.440_071_921_381_2;

/// `ln W` for a candidate, up to the common normalizing constant. Returns
/// `-∞` when the kernel density underflows at the candidate.
pub fn log_importance_weight(
    candidate: &MixtureParams,
    proposal: &ProposalDensity,
    prior: &PriorSpec,
) -> Result<f64> {
    let numerator = prior_log_density(prior, candidate)?;
    let denominator = proposal.log_density(candidate);
    // a kernel density below the smallest subnormal counts as zero
    if denominator < LN_SMALLEST_SUBNORMAL {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(numerator - denominator)
}

/// Unnormalized importance weight `π(μ, σ²) / Σⱼ Wⱼ K(μ, σ² | particle j)`.
/// The weight factor for `f` is left out: the resampling kernel keeps the
/// Dirichlet prior invariant, so prior and kernel factors cancel.
pub fn importance_weight(
    candidate: &MixtureParams,
    previous: &ParticleSystem,
    scales: &KernelScales,
    prior: &PriorSpec,
    literal_kernel_density: bool,
) -> Result<f64> {
    let proposal = ProposalDensity::new(previous, scales, literal_kernel_density);
    Ok(log_importance_weight(candidate, &proposal, prior)?.exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::Particle;
    use crate::rng::{seeded, Purpose};
    use crate::stats::{ks_test, mean, sample_dirichlet, sample_variance};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use statrs::distribution::{Beta, ContinuousCDF};

    fn particle(w: &[f64], m: &[f64], v: &[f64], iw: f64) -> Particle {
        Particle {
            params: MixtureParams::new(w.to_vec(), m.to_vec(), v.to_vec()).unwrap(),
            importance_weight: iw,
            distance: 0.0,
        }
    }

    fn system(particles: Vec<Particle>) -> ParticleSystem {
        ParticleSystem::new(particles, 1, 1.0, None).unwrap()
    }

    fn known_variance_prior(k: usize) -> PriorSpec {
        PriorSpec::new(vec![1.0; k], 0.0, 100.0, 2.0, 1.0)
            .unwrap()
            .with_fixed_variances(vec![1.0; k])
            .unwrap()
    }

    #[test]
    fn scales_are_twice_weighted_variance() {
        let s = system(vec![
            particle(&[0.5, 0.5], &[0.0, 5.0], &[1.0, 1.0], 0.5),
            particle(&[0.5, 0.5], &[2.0, 9.0], &[1.0, 1.0], 0.5),
        ]);
        let scales = compute_scales(&s, &known_variance_prior(2), 0.5).unwrap();
        assert_abs_diff_eq!(scales.mean_scale_sq()[0], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(scales.mean_scale_sq()[1], 8.0, epsilon = 1e-12);
        assert!(scales.variance_scale_sq().is_none());
        assert_eq!(scales.retention(), 0.5);
    }

    #[test]
    fn identical_particles_are_degenerate() {
        let s = system(vec![
            particle(&[0.5, 0.5], &[0.0, 5.0], &[1.0, 1.0], 0.5),
            particle(&[0.5, 0.5], &[0.0, 5.0], &[1.0, 1.0], 0.5),
        ]);
        assert!(matches!(
            compute_scales(&s, &known_variance_prior(2), 0.5),
            Err(Error::DegenerateSystem(_))
        ));
    }

    #[test]
    fn scales_ignore_weight_normalization() {
        let make = |c: f64| {
            ParticleSystem::new(
                vec![
                    particle(&[0.5, 0.5], &[0.0, 5.0], &[1.0, 2.0], 0.2 * c),
                    particle(&[0.5, 0.5], &[1.0, 4.0], &[3.0, 1.0], 0.3 * c),
                    particle(&[0.5, 0.5], &[3.0, 6.0], &[2.0, 2.5], 0.5 * c),
                ],
                1,
                1.0,
                None,
            )
            .unwrap()
        };
        let prior = PriorSpec::new(vec![1.0, 1.0], 0.0, 100.0, 2.0, 1.0).unwrap();
        let a = compute_scales(&make(1.0), &prior, 0.5).unwrap();
        let b = compute_scales(&make(2.0), &prior, 0.5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn mean_kernel_moments() {
        let mut rng = seeded(20, Purpose::Auxiliary);
        let draws: Vec<f64> = (0..100_000)
            .map(|_| perturb_mean(0.0, 4.0, &mut rng))
            .collect();
        // sd of the sample variance of n normals ≈ σ² sqrt(2 / n)
        let var_se = 4.0 * (2.0f64 / 1e5).sqrt();
        assert!((sample_variance(&draws) - 4.0).abs() < 4.0 * var_se);
        assert!(mean(&draws).abs() < 4.0 * (4.0f64 / 1e5).sqrt());
        assert_abs_diff_eq!(perturb_mean(3.0, 1e-30, &mut rng), 3.0, epsilon = 1e-12);
    }

    #[test]
    fn variance_kernel_stays_positive() {
        let mut rng = seeded(21, Purpose::Auxiliary);
        for i in 0..1_000_000 {
            let value = [1e-6, 0.01, 0.5, 3.0][i % 4];
            let scale = [1.0, 100.0, 1e-4, 9.0][(i / 4) % 4];
            assert!(perturb_variance(value, scale, &mut rng) > 0.0);
        }
    }

    #[test]
    fn variance_kernel_negligible_truncation() {
        let mut rng = seeded(22, Purpose::Auxiliary);
        for _ in 0..1000 {
            assert_abs_diff_eq!(perturb_variance(10.0, 1e-6, &mut rng), 10.0, epsilon = 0.01);
        }
    }

    #[test]
    fn truncated_sampler_matches_analytic_cdf() {
        let cases = [
            (0.1, 1.0),
            (1.0, 1.0),
            (5.0, 0.5),
            (-2.0, 1.0),
            (-10.0, 1.0),
            (-50.0, 4.0),
        ];
        for (i, &(value, scale)) in cases.iter().enumerate() {
            let mut rng = seeded(30 + i as u64, Purpose::Auxiliary);
            let draws: Vec<f64> = (0..100_000)
                .map(|_| sample_positive_normal(value, scale, &mut rng))
                .collect();
            let p = ks_test(&draws, |x| positive_normal_cdf(x, value, scale));
            assert!(p > 0.01, "value {value}, scale {scale}: p = {p}");
        }
    }

    #[test]
    fn extreme_truncation_draws_just_above_zero() {
        // bound 60 sd away: the conditional law is ≈ Exponential(rate 60) in sd units
        let mut rng = seeded(40, Purpose::Auxiliary);
        let draws: Vec<f64> = (0..20_000)
            .map(|_| sample_positive_normal(-60.0, 1.0, &mut rng))
            .collect();
        assert!(draws.iter().all(|&x| x > 0.0 && x < 1.0));
        assert!((mean(&draws) - 1.0 / 60.0).abs() < 0.002);
    }

    #[test]
    fn full_retention_is_identity() {
        let mut rng = seeded(50, Purpose::Auxiliary);
        let prev = vec![0.2, 0.3, 0.5];
        assert_eq!(
            resample_weights(&prev, &[1.0, 2.0, 3.0], 1.0, &mut rng).unwrap(),
            prev
        );
    }

    #[test]
    fn zero_retention_ignores_input() {
        let delta = [1.0, 1.0];
        let a = resample_weights(
            &[0.01, 0.99],
            &delta,
            0.0,
            &mut seeded(51, Purpose::Auxiliary),
        )
        .unwrap();
        let b = resample_weights(
            &[0.99, 0.01],
            &delta,
            0.0,
            &mut seeded(51, Purpose::Auxiliary),
        )
        .unwrap();
        assert_eq!(a, b);
        let mut rng = seeded(52, Purpose::Auxiliary);
        let firsts: Vec<f64> = (0..100_000)
            .map(|_| resample_weights(&[0.999, 0.001], &delta, 0.0, &mut rng).unwrap()[0])
            .collect();
        assert!(ks_test(&firsts, |x| x.clamp(0.0, 1.0)) > 0.01);
    }

    #[test]
    fn bad_retention_is_rejected() {
        let mut rng = seeded(53, Purpose::Auxiliary);
        assert!(resample_weights(&[0.5, 0.5], &[1.0, 1.0], 1.5, &mut rng).is_err());
        assert!(resample_weights(&[0.5, 0.5], &[1.0, 1.0], -0.1, &mut rng).is_err());
    }

    /// With f ~ Dirichlet(δ), coordinate i of the output is Beta(δᵢ, δ₊ − δᵢ).
    #[test]
    fn resampling_preserves_dirichlet_marginals() {
        let deltas: [&[f64]; 3] = [&[1.0, 1.0], &[0.5, 0.5, 0.5], &[2.0, 3.0, 5.0]];
        for (case, delta) in deltas.iter().enumerate() {
            let mut rng = seeded(60 + case as u64, Purpose::Auxiliary);
            let n = 100_000;
            let outputs: Vec<Vec<f64>> = (0..n)
                .map(|_| {
                    let f = sample_dirichlet(delta, &mut rng);
                    resample_weights(&f, delta, 0.5, &mut rng).unwrap()
                })
                .collect();
            let total: f64 = delta.iter().sum();
            for i in 0..delta.len() {
                let beta = Beta::new(delta[i], total - delta[i]).unwrap();
                let coord: Vec<f64> = outputs.iter().map(|o| o[i]).collect();
                let p = ks_test(&coord, |x| beta.cdf(x));
                assert!(p > 0.01, "delta {delta:?}, coordinate {i}: p = {p}");
            }
        }
    }

    #[test]
    fn single_particle_mean_only_weight_is_density_ratio() {
        let prior = PriorSpec::new(vec![1.0], 1.0, 4.0, 2.0, 1.0)
            .unwrap()
            .with_fixed_variances(vec![1.0])
            .unwrap();
        let prev = system(vec![particle(&[1.0], &[0.5], &[1.0], 1.0)]);
        let scales = KernelScales::new(vec![0.3], None, 0.5).unwrap();
        let cand = MixtureParams::new(vec![1.0], vec![0.9], vec![1.0]).unwrap();
        let w = importance_weight(&cand, &prev, &scales, &prior, false).unwrap();
        let prior_pdf =
            (-0.5 * (0.9f64 - 1.0).powi(2) / 4.0).exp() / (2.0 * std::f64::consts::PI * 4.0).sqrt();
        let kernel_pdf =
            (-0.5 * (0.9f64 - 0.5).powi(2) / 0.3).exp() / (2.0 * std::f64::consts::PI * 0.3).sqrt();
        assert_abs_diff_eq!(w, prior_pdf / kernel_pdf, epsilon = 1e-12);
    }

    #[test]
    fn truncated_kernel_normalizer_toggles_with_literal_flag() {
        let prior = PriorSpec::new(vec![1.0], 0.0, 10.0, 2.0, 1.0).unwrap();
        let prev = system(vec![particle(&[1.0], &[0.0], &[0.2], 1.0)]);
        let scales = KernelScales::new(vec![1.0], Some(vec![1.0]), 0.5).unwrap();
        let cand = MixtureParams::new(vec![1.0], vec![0.1], vec![0.4]).unwrap();
        let exact = importance_weight(&cand, &prev, &scales, &prior, false).unwrap();
        let literal = importance_weight(&cand, &prev, &scales, &prior, true).unwrap();
        // kernel mass above 0 for Normal(0.2, 1) is Φ(0.2)
        assert_abs_diff_eq!(exact / literal, std_normal_cdf(0.2), epsilon = 1e-12);
    }

    #[test]
    fn remote_candidate_gets_negligible_weight() {
        let prior = known_variance_prior(1);
        let prev = system(vec![particle(&[1.0], &[0.0], &[1.0], 1.0)]);
        let scales = KernelScales::new(vec![1.0], None, 0.5).unwrap();
        let cand = MixtureParams::new(vec![1.0], vec![1e6], vec![1.0]).unwrap();
        let w = importance_weight(&cand, &prev, &scales, &prior, false).unwrap();
        assert_eq!(w, 0.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn weight_invariant_to_previous_weight_scale(c in 0.01f64..100.0, m in -3.0f64..3.0) {
            let prior = PriorSpec::new(vec![1.0, 1.0], 0.0, 10.0, 2.0, 1.0).unwrap();
            let make = |scale: f64| {
                ParticleSystem::new(
                    vec![
                        particle(&[0.4, 0.6], &[-1.0, 2.0], &[1.0, 0.5], 0.7 * scale),
                        particle(&[0.5, 0.5], &[0.0, 1.0], &[0.3, 2.0], 0.3 * scale),
                    ],
                    2,
                    1.0,
                    None,
                )
                .unwrap()
            };
            let scales = KernelScales::new(vec![1.0, 1.0], Some(vec![0.5, 0.5]), 0.5).unwrap();
            let cand = MixtureParams::new(vec![0.5, 0.5], vec![m, m + 1.0], vec![0.8, 0.9]).unwrap();
            let a = importance_weight(&cand, &make(1.0), &scales, &prior, false).unwrap();
            let b = importance_weight(&cand, &make(c), &scales, &prior, false).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * a.abs());
        }

        #[test]
        fn resampled_weights_stay_on_simplex(
            raw in prop::collection::vec(0.01f64..1.0, 2..6),
            p in 0.0f64..1.0,
            seed in any::<u64>(),
        ) {
            let total: f64 = raw.iter().sum();
            let prev: Vec<f64> = raw.iter().map(|x| x / total).collect();
            let delta: Vec<f64> = (0..prev.len()).map(|i| 0.5 + i as f64).collect();
            let mut rng = seeded(seed, Purpose::Auxiliary);
            let out = resample_weights(&prev, &delta, p, &mut rng).unwrap();
            prop_assert!((out.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            prop_assert!(out.iter().all(|&x| x > 0.0 && x < 1.0));
        }
    }
}
