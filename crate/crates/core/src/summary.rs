//! Kernel density summaries and the Hellinger distance between them.
//!
//! The distance is `H(f, g) = (∫ (√f − √g)² dy)^½` without the customary ½
//! factor, so it ranges over `[0, √2]`.

use crate::error::{Error, Result};
use crate::mixture::ObservedDataset;
use crate::stats::{effective_sample_size, sample_variance, sorted_quantile, weighted_quantile};
use serde::Serialize;
use std::f64::consts::PI;

pub const DEFAULT_GRID_SIZE: usize = 512;
pub const MIN_GRID_SIZE: usize = 16;

/// Grid extends this many bandwidths beyond the sample range on each side.
const GRID_PADDING: f64 = 3.0;

/// Kernel contributions below this fraction of the kernel peak are dropped.
const KERNEL_CUTOFF: f64 = 1e-17;

const MASS_TOLERANCE: f64 = 1e-3;

/// A density tabulated on a strictly increasing grid. Between grid points the
/// density is interpolated linearly; off the grid it is zero.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DensitySummary {
    grid: Vec<f64>,
    density: Vec<f64>,
    bandwidth: f64,
}

impl DensitySummary {
    /// Wraps an already tabulated density, checking the grid and the mass.
    pub fn from_tabulated(grid: Vec<f64>, density: Vec<f64>, bandwidth: f64) -> Result<Self> {
        if grid.len() < 2 || grid.len() != density.len() {
            return Err(Error::Domain(
                "density summary needs matching grid and density of length >= 2".into(),
            ));
        }
        if grid.windows(2).any(|w| !(w[1] > w[0])) || grid.iter().any(|x| !x.is_finite()) {
            return Err(Error::Domain(
                "density grid must be strictly increasing".into(),
            ));
        }
        if density.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
            return Err(Error::Domain(
                "density values must be finite and nonnegative".into(),
            ));
        }
        if !(bandwidth.is_finite() && bandwidth > 0.0) {
            return Err(Error::Domain(format!(
                "bandwidth {bandwidth} must be positive"
            )));
        }
        let summary = Self {
            grid,
            density,
            bandwidth,
        };
        let mass = summary.mass();
        if (mass - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::Domain(format!(
                "tabulated density integrates to {mass}"
            )));
        }
        Ok(summary)
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn density(&self) -> &[f64] {
        &self.density
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    /// Trapezoidal integral of the density over its grid.
    pub fn mass(&self) -> f64 {
        trapezoid(&self.grid, &self.density)
    }

    /// Density at `x`.
    pub fn evaluate(&self, x: f64) -> f64 {
        let (first, last) = (self.grid[0], self.grid[self.grid.len() - 1]);
        if !(first..=last).contains(&x) {
            return 0.0;
        }
        let j = self
            .grid
            .partition_point(|&g| g <= x)
            .clamp(1, self.grid.len() - 1);
        interpolate(&self.grid, &self.density, j, x)
    }
}

fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    x.windows(2)
        .zip(y.windows(2))
        .map(|(xs, ys)| 0.5 * (xs[1] - xs[0]) * (ys[0] + ys[1]))
        .sum()
}

/// Linear interpolation on segment `[x[j-1], x[j]]`.
#[inline]
fn interpolate(x: &[f64], y: &[f64], j: usize, at: f64) -> f64 {
    let t = (at - x[j - 1]) / (x[j] - x[j - 1]);
    y[j - 1] + t * (y[j] - y[j - 1])
}

/// Silverman's rule of thumb `0.9 · min(sd, IQR/1.34) · n^(-1/5)`. When the
/// IQR vanishes but the sample still has spread, the sd is used alone.
pub fn silverman_bandwidth(sample: &[f64]) -> Result<f64> {
    let mut sorted = sample.to_vec();
    sorted.sort_by(f64::total_cmp);
    let sd = sample_variance(sample).sqrt();
    let iqr = sorted_quantile(&sorted, 0.75) - sorted_quantile(&sorted, 0.25);
    rule_of_thumb(sd, iqr, sample.len() as f64)
}

fn rule_of_thumb(sd: f64, iqr: f64, n: f64) -> Result<f64> {
    if !(sd > 0.0) || !sd.is_finite() {
        return Err(Error::DegenerateSample(
            "sample has zero spread, bandwidth would be zero".into(),
        ));
    }
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    Ok(0.9 * spread * n.powf(-0.2))
}

/// Gaussian kernel density estimate of `sample` with Silverman's bandwidth,
/// on `grid_size` equally spaced points spanning the sample range padded by
/// three bandwidths on each side.
pub fn kde(sample: &[f64], grid_size: usize) -> Result<DensitySummary> {
    if sample.len() < 2 {
        return Err(Error::Domain(format!(
            "kde needs at least 2 values, got {}",
            sample.len()
        )));
    }
    if grid_size < MIN_GRID_SIZE {
        return Err(Error::Domain(format!(
            "grid size {grid_size} is below the minimum {MIN_GRID_SIZE}"
        )));
    }
    if sample.iter().any(|x| !x.is_finite()) {
        return Err(Error::Domain(
            "kde sample contains non-finite values".into(),
        ));
    }
    let bandwidth = silverman_bandwidth(sample)?;
    Ok(tabulate(sample, None, bandwidth, grid_size))
}

/// Kernel density estimate treating `weights` as point masses. The bandwidth
/// follows Silverman's rule with weighted sd and quartiles and the effective
/// sample size in place of `n`.
pub fn weighted_kde(sample: &[f64], weights: &[f64], grid_size: usize) -> Result<DensitySummary> {
    if sample.len() < 2 || sample.len() != weights.len() {
        return Err(Error::Domain(
            "weighted kde needs at least 2 values and one weight per value".into(),
        ));
    }
    if grid_size < MIN_GRID_SIZE {
        return Err(Error::Domain(format!(
            "grid size {grid_size} is below the minimum {MIN_GRID_SIZE}"
        )));
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) || weights.iter().any(|w| !(*w >= 0.0)) {
        return Err(Error::Domain(
            "kde weights must be nonnegative with positive sum".into(),
        ));
    }
    let normalized: Vec<f64> = weights.iter().map(|w| w / total).collect();
    let ess = effective_sample_size(&normalized);
    // reliability-weight correction; equal weights give the n - 1 variance
    let (_, var) = crate::stats::weighted_mean_var(sample, &normalized);
    let var = if ess > 1.0 {
        var * ess / (ess - 1.0)
    } else {
        var
    };
    let iqr =
        weighted_quantile(sample, &normalized, 0.75) - weighted_quantile(sample, &normalized, 0.25);
    let bandwidth = rule_of_thumb(var.sqrt(), iqr, ess)?;
    Ok(tabulate(sample, Some(&normalized), bandwidth, grid_size))
}

fn tabulate(
    sample: &[f64],
    weights: Option<&[f64]>,
    bandwidth: f64,
    grid_size: usize,
) -> DensitySummary {
    let (min, max) = sample
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
            (lo.min(x), hi.max(x))
        });
    let lo = min - GRID_PADDING * bandwidth;
    let hi = max + GRID_PADDING * bandwidth;
    let step = (hi - lo) / (grid_size - 1) as f64;
    let grid: Vec<f64> = (0..grid_size).map(|i| lo + step * i as f64).collect();

    let norm = 1.0 / (bandwidth * (2.0 * PI).sqrt());
    let uniform = 1.0 / sample.len() as f64;
    let mut density = vec![0.0; grid_size];
    for (i, &y) in sample.iter().enumerate() {
        let mass = weights.map_or(uniform, |w| w[i]);
        if mass > 0.0 {
            add_kernel(&mut density, lo, step, y, mass * norm, bandwidth);
        }
    }
    // Renormalize so the tabulated density carries unit trapezoidal mass;
    // this absorbs the tails cut by the finite grid.
    let mass = trapezoid(&grid, &density);
    for d in &mut density {
        *d /= mass;
    }
    DensitySummary {
        grid,
        density,
        bandwidth,
    }
}

/// Adds `scale · exp(-(x - y)² / 2h²)` at every grid point where it is not
/// negligible. Walks outward from the grid point nearest `y`, updating the
/// Gaussian by exact multiplicative recurrences instead of calling `exp`.
fn add_kernel(density: &mut [f64], lo: f64, step: f64, y: f64, scale: f64, h: f64) {
    let g = density.len();
    let inv = 0.5 / (h * h);
    let j0 = ((y - lo) / step).round().clamp(0.0, (g - 1) as f64) as usize;
    let d0 = lo + step * j0 as f64 - y;
    let e0 = (-d0 * d0 * inv).exp();
    density[j0] += scale * e0;
    let c = (-2.0 * step * step * inv).exp();
    let (left, right) = density.split_at_mut(j0);
    // ratio e_{k+1}/e_k = exp(-(2 d_k s + s²) / 2h²), d_k the offset of slot k
    let r_right = (-(2.0 * d0 * step + step * step) * inv).exp();
    let r_left = (-(-2.0 * d0 * step + step * step) * inv).exp();
    walk(&mut right[1..], true, e0, r_right, c, scale);
    walk(left, false, e0, r_left, c, scale);
}

/// Adds the kernel tail along `slots`, starting next to the peak value `e0`
/// and moving away from it. The recurrence `e_{k+1} = e_k r_k`,
/// `r_{k+1} = r_k c` is split into four interleaved lanes stepping by four
/// slots, `e_{k+4} = e_k r_k⁴ c⁶`, so the lanes have no serial dependence.
fn walk(slots: &mut [f64], forward: bool, e0: f64, r0: f64, c: f64, scale: f64) {
    let c4 = c * c * c * c;
    let c6 = c4 * c * c;
    let c16 = c4 * c4 * c4 * c4;
    let mut e = [0.0; 4];
    let mut rho = [0.0; 4];
    let (mut ek, mut rk) = (e0, r0);
    for m in 0..4 {
        ek *= rk;
        rk *= c;
        e[m] = ek;
        rho[m] = rk.powi(4) * c6;
    }
    let rest = if forward {
        let mut chunks = slots.chunks_exact_mut(4);
        for chunk in chunks.by_ref() {
            for m in 0..4 {
                chunk[m] += scale * e[m];
            }
            if e[3] < KERNEL_CUTOFF {
                return;
            }
            for m in 0..4 {
                e[m] *= rho[m];
                rho[m] *= c16;
            }
        }
        chunks.into_remainder()
    } else {
        let mut chunks = slots.rchunks_exact_mut(4);
        for chunk in chunks.by_ref() {
            for m in 0..4 {
                chunk[3 - m] += scale * e[m];
            }
            if e[3] < KERNEL_CUTOFF {
                return;
            }
            for m in 0..4 {
                e[m] *= rho[m];
                rho[m] *= c16;
            }
        }
        chunks.into_remainder()
    };
    let len = rest.len();
    for m in 0..len {
        if e[m] < KERNEL_CUTOFF {
            break;
        }
        rest[if forward { m } else { len - 1 - m }] += scale * e[m];
    }
}

// Three-point Gauss-Legendre rule on [-1, 1].
const GL_NODES: [f64; 3] = [-0.774_596_669_241_483_4, 0.0, 0.774_596_669_241_483_4];
const GL_WEIGHTS: [f64; 3] = [5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0];

/// Hellinger distance between two tabulated densities.
///
/// Each density is linear between its grid nodes and zero off its grid, so
/// `∫(√f − √g)² = ∫f + ∫g − 2∫√(fg)` with the masses exact under the
/// trapezoid rule. The cross term only lives where both grids overlap; it is
/// integrated piece by piece between consecutive nodes of the merged grid
/// with a three-point Gauss-Legendre rule.
pub fn hellinger(f: &DensitySummary, g: &DensitySummary) -> f64 {
    if f.grid == g.grid && f.density == g.density {
        return 0.0;
    }
    let overlap = bhattacharyya_overlap(f, g);
    (f.mass() + g.mass() - 2.0 * overlap).max(0.0).sqrt()
}

/// `∫√(fg)` over the common support of two piecewise-linear densities.
fn bhattacharyya_overlap(f: &DensitySummary, g: &DensitySummary) -> f64 {
    let lo = f.grid[0].max(g.grid[0]);
    let hi = f.grid[f.grid.len() - 1].min(g.grid[g.grid.len() - 1]);
    if !(lo < hi) {
        return 0.0;
    }
    // Gauss-Legendre nodes mapped to [0, 1]
    let t: [f64; 3] = GL_NODES.map(|x| 0.5 * (1.0 + x));
    let mut total = 0.0;
    let mut prev: Option<(f64, f64, f64)> = None;
    for (x, fx, gx) in merged_values(f, g, lo, hi) {
        if let Some((a, fa, ga)) = prev {
            let (df, dg) = (fx - fa, gx - ga);
            let mut piece = 0.0;
            for m in 0..3 {
                piece += GL_WEIGHTS[m] * ((fa + t[m] * df) * (ga + t[m] * dg)).sqrt();
            }
            total += 0.5 * (x - a) * piece;
        }
        prev = Some((x, fx, gx));
    }
    total
}

/// Nodes of both grids within `[lo, hi]` in increasing order, with both
/// densities evaluated there. Shared nodes appear once.
fn merged_values<'a>(
    f: &'a DensitySummary,
    g: &'a DensitySummary,
    lo: f64,
    hi: f64,
) -> impl Iterator<Item = (f64, f64, f64)> + 'a {
    let mut i = f.grid.partition_point(|&x| x < lo);
    let mut j = g.grid.partition_point(|&x| x < lo);
    std::iter::from_fn(move || {
        let next_f = f.grid.get(i).copied().filter(|&x| x <= hi);
        let next_g = g.grid.get(j).copied().filter(|&x| x <= hi);
        let out = match (next_f, next_g) {
            (None, None) => return None,
            (Some(x), Some(y)) if x == y => {
                i += 1;
                j += 1;
                (x, f.density[i - 1], g.density[j - 1])
            }
            (Some(x), y) if y.is_none_or(|y| x < y) => {
                i += 1;
                (x, f.density[i - 1], interpolate(&g.grid, &g.density, j, x))
            }
            (_, Some(y)) => {
                j += 1;
                (y, interpolate(&f.grid, &f.density, i, y), g.density[j - 1])
            }
            (Some(_), None) => unreachable!("covered by the guarded arm"),
        };
        Some(out)
    })
}

/// ABC distance: Hellinger distance between the cached summary of the
/// observations and a KDE of the simulated sample on the same grid size.
pub fn abc_distance(obs: &ObservedDataset, sim: &[f64]) -> Result<f64> {
    let summary = kde(sim, obs.grid_size())?;
    Ok(hellinger(obs.summary(), &summary))
}
