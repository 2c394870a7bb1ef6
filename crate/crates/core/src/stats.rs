//! Scalar densities, samplers and small descriptive statistics shared by the
//! other modules.

use rand::Rng;
use rand_distr::{Beta, Distribution, Gamma, StandardNormal};
use statrs::function::erf::{erfc, erfc_inv};
use statrs::function::gamma::ln_gamma;
use std::f64::consts::SQRT_2;

pub const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

pub fn normal_log_pdf(x: f64, mean: f64, variance: f64) -> f64 {
    let d = x - mean;
    -0.5 * d * d / variance - 0.5 * variance.ln() - LN_SQRT_2PI
}

pub fn normal_pdf(x: f64, mean: f64, variance: f64) -> f64 {
    normal_log_pdf(x, mean, variance).exp()
}

/// Standard normal CDF.
pub fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / SQRT_2)
}

/// `ln Φ(z)`, accurate far into the lower tail.
pub fn std_normal_log_cdf(z: f64) -> f64 {
    if z > -30.0 {
        std_normal_cdf(z).ln()
    } else {
        // Mills-ratio expansion; erfc underflows below about -38.
        let z2 = z * z;
        let series = 1.0 - 1.0 / z2 + 3.0 / (z2 * z2) - 15.0 / (z2 * z2 * z2);
        -0.5 * z2 - (-z).ln() - LN_SQRT_2PI + series.ln()
    }
}

/// Standard normal quantile function.
pub fn std_normal_inv_cdf(p: f64) -> f64 {
    -SQRT_2 * erfc_inv(2.0 * p)
}

/// Log density of `x` under `Normal(mean, variance)` truncated to `(0, ∞)`.
pub fn truncated_normal_log_pdf(x: f64, mean: f64, variance: f64) -> f64 {
    if x <= 0.0 {
        return f64::NEG_INFINITY;
    }
    normal_log_pdf(x, mean, variance) - std_normal_log_cdf(mean / variance.sqrt())
}

/// `ln` of the inverse-gamma density of `x` when `1/x ~ Gamma(shape, rate)`.
pub fn inverse_gamma_log_pdf(x: f64, shape: f64, rate: f64) -> f64 {
    if x <= 0.0 {
        return f64::NEG_INFINITY;
    }
    shape * rate.ln() - ln_gamma(shape) - (shape + 1.0) * x.ln() - rate / x
}

pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// Uniform draw on `(0, 1]`.
pub fn open_uniform<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    1.0 - rng.random::<f64>()
}

/// Draw from `Gamma(shape, 1)`. A zero shape is the point mass at zero.
pub fn sample_gamma<R: Rng + ?Sized>(shape: f64, rng: &mut R) -> f64 {
    debug_assert!(shape >= 0.0);
    if shape == 0.0 {
        return 0.0;
    }
    Gamma::new(shape, 1.0)
        .expect("positive gamma shape")
        .sample(rng)
}

/// Draw `ln G` for `G ~ Gamma(shape, 1)` without underflow for small shapes.
pub fn sample_log_gamma<R: Rng + ?Sized>(shape: f64, rng: &mut R) -> f64 {
    debug_assert!(shape > 0.0);
    if shape >= 1.0 {
        sample_gamma(shape, rng).ln()
    } else {
        // Gamma(a) = Gamma(a + 1) * U^(1/a)
        sample_gamma(shape + 1.0, rng).ln() + open_uniform(rng).ln() / shape
    }
}

/// Draw from `Beta(a, b)`, with `Beta(a, 0)` the point mass at 1 and
/// `Beta(0, b)` the point mass at 0.
pub fn sample_beta<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> f64 {
    debug_assert!(a >= 0.0 && b >= 0.0 && a + b > 0.0);
    if b == 0.0 {
        return 1.0;
    }
    if a == 0.0 {
        return 0.0;
    }
    Beta::new(a, b)
        .expect("positive beta parameters")
        .sample(rng)
}

/// Draw from `Dirichlet(concentration)` through normalized log-gamma variates.
pub fn sample_dirichlet<R: Rng + ?Sized>(concentration: &[f64], rng: &mut R) -> Vec<f64> {
    let logs: Vec<f64> = concentration
        .iter()
        .map(|&a| sample_log_gamma(a, rng))
        .collect();
    let total = log_sum_exp(&logs);
    logs.iter().map(|l| (l - total).exp()).collect()
}

/// Mean and population-style variance under normalized weights.
pub fn weighted_mean_var(values: &[f64], weights: &[f64]) -> (f64, f64) {
    let total: f64 = weights.iter().sum();
    let mean = values.iter().zip(weights).map(|(x, w)| x * w).sum::<f64>() / total;
    let var = values
        .iter()
        .zip(weights)
        .map(|(x, w)| w * (x - mean) * (x - mean))
        .sum::<f64>()
        / total;
    (mean, var)
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample variance with denominator `n - 1`.
pub fn sample_variance(values: &[f64]) -> f64 {
    let m = mean(values);
    values.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (values.len() as f64 - 1.0)
}

/// Linear-interpolation quantile of already sorted data.
pub fn sorted_quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Weighted quantile of `values`, interpolating linearly between sorted
/// values placed at their weighted plotting positions.
pub fn weighted_quantile(values: &[f64], weights: &[f64], q: f64) -> f64 {
    let mut order: Vec<usize> = (0..values.len()).filter(|&i| weights[i] > 0.0).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let total: f64 = weights.iter().sum();
    // The i-th sorted value sits at S_{i-1} / (1 - w_i), with S the running
    // weight sum. Equal weights give (i-1)/(n-1), matching `sorted_quantile`.
    let mut pos = Vec::with_capacity(values.len());
    let mut acc = 0.0;
    for &i in &order {
        let w = weights[i] / total;
        pos.push(if w < 1.0 {
            (acc / (1.0 - w)).min(1.0)
        } else {
            0.0
        });
        acc += w;
    }
    let q = q.clamp(0.0, 1.0);
    let j = pos.partition_point(|&c| c < q);
    if j == 0 {
        return values[order[0]];
    }
    if j == pos.len() {
        return values[order[j - 1]];
    }
    let (c0, c1) = (pos[j - 1], pos[j]);
    let (v0, v1) = (values[order[j - 1]], values[order[j]]);
    if c1 > c0 {
        v0 + (q - c0) / (c1 - c0) * (v1 - v0)
    } else {
        v1
    }
}

/// Effective sample size `1 / Σ w²` of normalized weights.
pub fn effective_sample_size(weights: &[f64]) -> f64 {
    let total: f64 = weights.iter().sum();
    1.0 / weights
        .iter()
        .map(|w| (w / total) * (w / total))
        .sum::<f64>()
}

/// One-sample Kolmogorov-Smirnov statistic of `sample` against `cdf`.
pub fn ks_statistic(sample: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut sorted = sample.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).max((i as f64 + 1.0) / n - f)
        })
        .fold(0.0, f64::max)
}

/// Asymptotic p-value of the one-sample KS statistic `d` for sample size `n`.
pub fn ks_p_value(d: f64, n: usize) -> f64 {
    let sqrt_n = (n as f64).sqrt();
    let lambda = (sqrt_n + 0.12 + 0.11 / sqrt_n) * d;
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let k = k as f64;
        let term = (-2.0 * k * k * lambda * lambda).exp();
        sum += if k as u64 % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// One-sample KS test; returns the p-value.
pub fn ks_test(sample: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    ks_p_value(ks_statistic(sample, cdf), sample.len())
}
