//! Gaussian mixture parameters, priors, observed data and the forward model.
//!
//! Every variance in this crate is a variance, never a standard deviation:
//! `Normal(m, v)` has mean `m` and variance `v`.

use crate::error::{Error, Result};
use crate::stats::{
    inverse_gamma_log_pdf, normal_log_pdf, sample_dirichlet, sample_gamma, standard_normal,
    LN_SQRT_2PI,
};
use crate::summary::{kde, DensitySummary};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Variances below this are rejected when parameters are constructed.
pub const VARIANCE_FLOOR: f64 = 1e-300;

const SIMPLEX_TOLERANCE: f64 = 1e-12;

/// One point in the parameter space of a `K`-component Gaussian mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureParams {
    weights: Vec<f64>,
    means: Vec<f64>,
    variances: Vec<f64>,
}

impl MixtureParams {
    pub fn new(weights: Vec<f64>, means: Vec<f64>, variances: Vec<f64>) -> Result<Self> {
        let k = weights.len();
        if k == 0 {
            return Err(Error::Domain("mixture needs at least one component".into()));
        }
        if means.len() != k || variances.len() != k {
            return Err(Error::Domain(format!(
                "component count mismatch: {} weights, {} means, {} variances",
                k,
                means.len(),
                variances.len()
            )));
        }
        check_simplex(&weights)?;
        if let Some(m) = means.iter().find(|m| !m.is_finite()) {
            return Err(Error::Domain(format!("non-finite mean {m}")));
        }
        check_variances(&variances)?;
        Ok(Self {
            weights,
            means,
            variances,
        })
    }

    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn variances(&self) -> &[f64] {
        &self.variances
    }

    /// Reorders the components jointly; `order[i]` is the old index of new
    /// component `i`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        Self {
            weights: order.iter().map(|&i| self.weights[i]).collect(),
            means: order.iter().map(|&i| self.means[i]).collect(),
            variances: order.iter().map(|&i| self.variances[i]).collect(),
        }
    }

    /// Mixture density at `y`.
    pub fn density(&self, y: f64) -> f64 {
        self.weights
            .iter()
            .zip(&self.means)
            .zip(&self.variances)
            .map(|((w, m), v)| w * normal_log_pdf(y, *m, *v).exp())
            .sum()
    }
}

/// One of the three per-component parameter vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamSet {
    Weights,
    Means,
    Variances,
}

impl ParamSet {
    pub const ALL: [ParamSet; 3] = [ParamSet::Weights, ParamSet::Means, ParamSet::Variances];

    pub fn name(self) -> &'static str {
        match self {
            ParamSet::Weights => "weights",
            ParamSet::Means => "means",
            ParamSet::Variances => "variances",
        }
    }

    /// Position in `ALL`.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn of(self, params: &MixtureParams) -> &[f64] {
        match self {
            ParamSet::Weights => params.weights(),
            ParamSet::Means => params.means(),
            ParamSet::Variances => params.variances(),
        }
    }
}

impl std::str::FromStr for ParamSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "weights" => Ok(ParamSet::Weights),
            "means" => Ok(ParamSet::Means),
            "variances" => Ok(ParamSet::Variances),
            other => Err(Error::Config(format!("unknown parameter set '{other}'"))),
        }
    }
}

fn check_simplex(weights: &[f64]) -> Result<()> {
    if let Some(w) = weights.iter().find(|&&w| !(w > 0.0 && w <= 1.0)) {
        return Err(Error::Domain(format!("mixture weight {w} outside (0, 1]")));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > SIMPLEX_TOLERANCE {
        return Err(Error::Domain(format!(
            "mixture weights sum to {total}, not 1"
        )));
    }
    Ok(())
}

fn check_variances(variances: &[f64]) -> Result<()> {
    match variances
        .iter()
        .find(|&&v| !(v.is_finite() && v >= VARIANCE_FLOOR))
    {
        Some(v) => Err(Error::Domain(format!(
            "variance {v} is not a positive finite value"
        ))),
        None => Ok(()),
    }
}

/// Priors: `f ~ Dirichlet(δ)`, `μᵢ ~ Normal(ξ, κ)`, `σᵢ⁻² ~ Gamma(α, β)` with
/// `β` a rate. Weights or variances may instead be held at known values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    dirichlet_concentration: Vec<f64>,
    mean_prior_location: f64,
    mean_prior_variance: f64,
    precision_shape: f64,
    precision_rate: f64,
    fixed_weights: Option<Vec<f64>>,
    fixed_variances: Option<Vec<f64>>,
}

impl PriorSpec {
    pub fn new(
        dirichlet_concentration: Vec<f64>,
        mean_prior_location: f64,
        mean_prior_variance: f64,
        precision_shape: f64,
        precision_rate: f64,
    ) -> Result<Self> {
        if dirichlet_concentration.is_empty() {
            return Err(Error::Config("dirichlet concentration is empty".into()));
        }
        if dirichlet_concentration
            .iter()
            .any(|&d| !(d.is_finite() && d > 0.0))
        {
            return Err(Error::Config(
                "dirichlet concentration entries must be positive".into(),
            ));
        }
        if !mean_prior_location.is_finite() {
            return Err(Error::Config("mean prior location must be finite".into()));
        }
        for (name, value) in [
            ("mean prior variance", mean_prior_variance),
            ("precision shape", precision_shape),
            ("precision rate", precision_rate),
        ] {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::Config(format!(
                    "{name} must be positive, got {value}"
                )));
            }
        }
        Ok(Self {
            dirichlet_concentration,
            mean_prior_location,
            mean_prior_variance,
            precision_shape,
            precision_rate,
            fixed_weights: None,
            fixed_variances: None,
        })
    }

    /// Data-driven defaults: `ξ` = sample mean, `κ` = sample variance,
    /// `α = 2`, `β` = sample variance, `δ = (1, …, 1)`.
    pub fn data_driven(values: &[f64], k: usize) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::Config("need at least two observations".into()));
        }
        let mean = crate::stats::mean(values);
        let var = crate::stats::sample_variance(values);
        if !(var > 0.0) {
            return Err(Error::Config("observations have zero variance".into()));
        }
        Self::new(vec![1.0; k], mean, var, 2.0, var)
    }

    pub fn with_fixed_weights(mut self, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != self.k() {
            return Err(Error::Config(format!(
                "fixed weights have {} entries, prior has {} components",
                weights.len(),
                self.k()
            )));
        }
        check_simplex(&weights).map_err(|e| Error::Config(e.to_string()))?;
        self.fixed_weights = Some(weights);
        Ok(self)
    }

    pub fn with_fixed_variances(mut self, variances: Vec<f64>) -> Result<Self> {
        if variances.len() != self.k() {
            return Err(Error::Config(format!(
                "fixed variances have {} entries, prior has {} components",
                variances.len(),
                self.k()
            )));
        }
        check_variances(&variances).map_err(|e| Error::Config(e.to_string()))?;
        self.fixed_variances = Some(variances);
        Ok(self)
    }

    pub fn k(&self) -> usize {
        self.dirichlet_concentration.len()
    }

    pub fn dirichlet_concentration(&self) -> &[f64] {
        &self.dirichlet_concentration
    }

    pub fn mean_prior_location(&self) -> f64 {
        self.mean_prior_location
    }

    pub fn mean_prior_variance(&self) -> f64 {
        self.mean_prior_variance
    }

    pub fn precision_shape(&self) -> f64 {
        self.precision_shape
    }

    pub fn precision_rate(&self) -> f64 {
        self.precision_rate
    }

    pub fn fixed_weights(&self) -> Option<&[f64]> {
        self.fixed_weights.as_deref()
    }

    pub fn fixed_variances(&self) -> Option<&[f64]> {
        self.fixed_variances.as_deref()
    }

    /// Weights are inferred (not known, and more than one component).
    pub fn weights_free(&self) -> bool {
        self.fixed_weights.is_none() && self.k() > 1
    }

    pub fn variances_free(&self) -> bool {
        self.fixed_variances.is_none()
    }

    pub fn is_free(&self, set: ParamSet) -> bool {
        match set {
            ParamSet::Weights => self.weights_free(),
            ParamSet::Means => true,
            ParamSet::Variances => self.variances_free(),
        }
    }

    /// Known weights or variances that differ across components tie each
    /// label to a component, so the labels are not exchangeable.
    pub fn labels_identified(&self) -> bool {
        let distinct = |v: &[f64]| v.iter().any(|x| *x != v[0]);
        self.fixed_weights().is_some_and(distinct) || self.fixed_variances().is_some_and(distinct)
    }

    /// Draw one parameter point from the prior.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<MixtureParams> {
        sample_prior(self, rng)
    }

    /// `ln π(μ, σ²)`; see [`prior_log_density`].
    pub fn log_density(&self, params: &MixtureParams) -> Result<f64> {
        prior_log_density(self, params)
    }
}

/// Observations, their optional per-observation measurement errors (standard
/// deviations), and the density summary of the observations.
#[derive(Debug, Clone)]
pub struct ObservedDataset {
    values: Vec<f64>,
    measurement_errors: Option<Vec<f64>>,
    /// Measurement errors reordered by the rank of their observation.
    errors_by_rank: Option<Vec<f64>>,
    summary: DensitySummary,
}

impl ObservedDataset {
    pub fn new(
        values: Vec<f64>,
        measurement_errors: Option<Vec<f64>>,
        grid_size: usize,
    ) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::Domain(format!(
                "dataset needs at least 2 observations, got {}",
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("non-finite observation {v}")));
        }
        let errors_by_rank = match &measurement_errors {
            Some(errors) => {
                if errors.len() != values.len() {
                    return Err(Error::Domain(format!(
                        "{} measurement errors for {} observations",
                        errors.len(),
                        values.len()
                    )));
                }
                if let Some(e) = errors.iter().find(|e| !(e.is_finite() && **e >= 0.0)) {
                    return Err(Error::Domain(format!("invalid measurement error {e}")));
                }
                Some(rank_order(&values).iter().map(|&i| errors[i]).collect())
            }
            None => None,
        };
        let summary = kde(&values, grid_size)?;
        Ok(Self {
            values,
            measurement_errors,
            errors_by_rank,
            summary,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn measurement_errors(&self) -> Option<&[f64]> {
        self.measurement_errors.as_deref()
    }

    pub fn summary(&self) -> &DensitySummary {
        &self.summary
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn grid_size(&self) -> usize {
        self.summary.grid().len()
    }
}

/// Indices that sort `values` ascending; ties keep input order.
fn rank_order(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    order
}

/// Draw a parameter point from the prior. Fixed slots are copied.
pub fn sample_prior<R: Rng + ?Sized>(prior: &PriorSpec, rng: &mut R) -> Result<MixtureParams> {
    let k = prior.k();
    let weights = match prior.fixed_weights() {
        Some(w) => w.to_vec(),
        None if k == 1 => vec![1.0],
        None => sample_dirichlet(prior.dirichlet_concentration(), rng),
    };
    let sd = prior.mean_prior_variance.sqrt();
    let means = (0..k)
        .map(|_| prior.mean_prior_location + sd * standard_normal(rng))
        .collect();
    let variances = match prior.fixed_variances() {
        Some(v) => v.to_vec(),
        None => (0..k)
            .map(|_| {
                let precision = sample_gamma(prior.precision_shape, rng) / prior.precision_rate;
                (1.0 / precision).clamp(VARIANCE_FLOOR, f64::MAX)
            })
            .collect(),
    };
    MixtureParams::new(weights, means, variances)
}

/// `ln π(μ, σ²)`: Normal log densities of the means plus, for free variances,
/// the inverse-gamma log density induced on `σ²` by `σ⁻² ~ Gamma(α, β)`.
/// The Dirichlet factor on the weights is not included.
pub fn prior_log_density(prior: &PriorSpec, params: &MixtureParams) -> Result<f64> {
    if params.k() != prior.k() {
        return Err(Error::Domain(format!(
            "parameters have {} components, prior has {}",
            params.k(),
            prior.k()
        )));
    }
    let mut total: f64 = params
        .means()
        .iter()
        .map(|&m| mean_log_prior(prior, m))
        .sum();
    if prior.variances_free() {
        total += params
            .variances()
            .iter()
            .map(|&v| variance_log_prior(prior, v))
            .sum::<f64>();
    }
    Ok(total)
}

pub fn mean_log_prior(prior: &PriorSpec, mean: f64) -> f64 {
    normal_log_pdf(mean, prior.mean_prior_location, prior.mean_prior_variance)
}

pub fn variance_log_prior(prior: &PriorSpec, variance: f64) -> f64 {
    inverse_gamma_log_pdf(variance, prior.precision_shape, prior.precision_rate)
}

/// Draw `n` observations from the mixture.
pub fn simulate<R: Rng + ?Sized>(params: &MixtureParams, n: usize, rng: &mut R) -> Vec<f64> {
    let mut cumulative = Vec::with_capacity(params.k());
    let mut acc = 0.0;
    for w in params.weights() {
        acc += w;
        cumulative.push(acc);
    }
    let last = params.k() - 1;
    let sds: Vec<f64> = params.variances().iter().map(|v| v.sqrt()).collect();
    (0..n)
        .map(|_| {
            let u: f64 = rng.random::<f64>() * acc;
            let i = cumulative.partition_point(|&c| c <= u).min(last);
            params.means()[i] + sds[i] * standard_normal(rng)
        })
        .collect()
}

/// Forward model with measurement error: simulate clean values, give the
/// `r`-th smallest simulated value the measurement error of the `r`-th
/// smallest observation, then add `Normal(0, error²)` noise.
pub fn simulate_with_errors<R: Rng + ?Sized>(
    params: &MixtureParams,
    data: &ObservedDataset,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let errors = data.errors_by_rank.as_ref().ok_or_else(|| {
        Error::Config("measurement-error forward model needs measurement errors".into())
    })?;
    let mut values = simulate(params, data.len(), rng);
    let errors_per_value = assign_errors_by_rank(&values, errors);
    for (v, e) in values.iter_mut().zip(&errors_per_value) {
        *v += e * standard_normal(rng);
    }
    Ok(values)
}

/// Error for each simulated value, matching ranks against `errors_by_rank`.
pub fn assign_errors_by_rank(simulated: &[f64], errors_by_rank: &[f64]) -> Vec<f64> {
    let mut assigned = vec![0.0; simulated.len()];
    for (rank, &i) in rank_order(simulated).iter().enumerate() {
        assigned[i] = errors_by_rank[rank];
    }
    assigned
}

/// Log-likelihood surface of the two-component model with known weights and
/// variances, over a grid of `(μ₁, μ₂)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogLikGrid {
    pub axis1: Vec<f64>,
    pub axis2: Vec<f64>,
    /// Row `i` holds `μ₁ = axis1[i]` against every `μ₂ = axis2[j]`.
    pub values: Vec<Vec<f64>>,
}

impl LogLikGrid {
    /// Grid point with the largest log-likelihood, as `(μ₁, μ₂, value)`.
    pub fn argmax(&self) -> (f64, f64, f64) {
        let mut best = (self.axis1[0], self.axis2[0], f64::NEG_INFINITY);
        for (i, row) in self.values.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if v > best.2 {
                    best = (self.axis1[i], self.axis2[j], v);
                }
            }
        }
        best
    }

    /// Interior grid points that are strict maxima among their 8 neighbours.
    pub fn local_maxima(&self) -> Vec<(f64, f64, f64)> {
        let mut out = Vec::new();
        let (n1, n2) = (self.axis1.len(), self.axis2.len());
        for i in 1..n1.saturating_sub(1) {
            for j in 1..n2.saturating_sub(1) {
                let v = self.values[i][j];
                let is_max = (i - 1..=i + 1)
                    .all(|a| (j - 1..=j + 1).all(|b| (a == i && b == j) || self.values[a][b] < v));
                if is_max {
                    out.push((self.axis1[i], self.axis2[j], v));
                }
            }
        }
        out
    }
}

pub fn loglik_grid(
    data: &ObservedDataset,
    prior: &PriorSpec,
    axis1: &[f64],
    axis2: &[f64],
) -> Result<LogLikGrid> {
    if axis1.is_empty() || axis2.is_empty() {
        return Err(Error::Domain(
            "log-likelihood grid axes must be nonempty".into(),
        ));
    }
    let (weights, variances) =
        match (prior.k(), prior.fixed_weights(), prior.fixed_variances()) {
            (2, Some(w), Some(v)) => (w, v),
            _ => return Err(Error::Config(
                "log-likelihood grid needs a two-component model with known weights and variances"
                    .into(),
            )),
        };
    let (f, g) = (weights[0], weights[1]);
    let (v1, v2) = (variances[0], variances[1]);
    let (c1, c2) = (
        f.ln() - 0.5 * v1.ln() - LN_SQRT_2PI,
        g.ln() - 0.5 * v2.ln() - LN_SQRT_2PI,
    );
    let values = axis1
        .iter()
        .map(|&m1| {
            axis2
                .iter()
                .map(|&m2| {
                    data.values()
                        .iter()
                        .map(|&y| {
                            let a = c1 - 0.5 * (y - m1) * (y - m1) / v1;
                            let b = c2 - 0.5 * (y - m2) * (y - m2) / v2;
                            let hi = a.max(b);
                            hi + ((a - hi).exp() + (b - hi).exp()).ln()
                        })
                        .sum()
                })
                .collect()
        })
        .collect();
    Ok(LogLikGrid {
        axis1: axis1.to_vec(),
        axis2: axis2.to_vec(),
        values,
    })
}

/// `n` equally spaced points from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let step = (hi - lo) / (n - 1) as f64;
            (0..n).map(|i| lo + step * i as f64).collect()
        }
    }
}
