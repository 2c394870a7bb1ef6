//! Resolving label switching across a particle system.
//!
//! Each candidate parameter set (weights, means, variances) is sorted within
//! every particle, pushed through the Normal CDF with the pooled mean and sd
//! of that set, and averaged per order statistic. The set whose averaged
//! order statistics spread furthest apart becomes the sort key, and every
//! particle's components are permuted jointly so that key is ascending.

use crate::engine::{Particle, ParticleSystem};
use crate::error::{Error, Result};
use crate::mixture::{ParamSet, PriorSpec};
use crate::stats::std_normal_cdf;
use serde::{Deserialize, Serialize};

/// How the sort key is picked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum RelabelMode {
    /// Largest separation between representative values.
    #[default]
    Auto,
    /// Always sort by this set (used to demonstrate a poor identifiability
    /// constraint).
    Forced(ParamSet),
}

impl std::str::FromStr for RelabelMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(RelabelMode::Auto),
            other => other.parse().map(RelabelMode::Forced),
        }
    }
}

impl std::fmt::Display for RelabelMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RelabelMode::Auto => f.write_str("auto"),
            RelabelMode::Forced(set) => f.write_str(set.name()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RelabelReport {
    pub chosen_parameter: ParamSet,
    /// Largest entry of `per_parameter_scores`.
    pub separation_score: f64,
    /// Indexed by [`ParamSet::index`]; zero for sets that are not candidates.
    pub per_parameter_scores: [f64; 3],
    pub forced: bool,
}

/// Sets eligible as sort keys: the free ones.
pub fn candidate_sets(prior: &PriorSpec) -> Vec<ParamSet> {
    ParamSet::ALL
        .into_iter()
        .filter(|&s| prior.is_free(s))
        .collect()
}

/// Separation score of one parameter set, or `None` if its pooled sd is zero.
pub fn separation_score(system: &ParticleSystem, set: ParamSet) -> Option<f64> {
    let k = system.k();
    let sorted: Vec<Vec<f64>> = system
        .particles()
        .iter()
        .map(|p| {
            let mut v = set.of(&p.params).to_vec();
            v.sort_by(f64::total_cmp);
            v
        })
        .collect();
    let count = (sorted.len() * k) as f64;
    let pooled_mean = sorted.iter().flatten().sum::<f64>() / count;
    let pooled_var = sorted
        .iter()
        .flatten()
        .map(|x| (x - pooled_mean) * (x - pooled_mean))
        .sum::<f64>()
        / (count - 1.0);
    let sd = pooled_var.sqrt();
    if !(sd > 0.0) {
        return None;
    }
    let representatives: Vec<f64> = (0..k)
        .map(|i| {
            sorted
                .iter()
                .map(|v| std_normal_cdf((v[i] - pooled_mean) / sd))
                .sum::<f64>()
                / sorted.len() as f64
        })
        .collect();
    let mut widest: f64 = 0.0;
    for i in 0..k {
        for j in i + 1..k {
            widest = widest.max((representatives[i] - representatives[j]).abs());
        }
    }
    Some(widest)
}

/// Ties go to means, then variances, then weights.
const TIE_PRECEDENCE: [ParamSet; 3] = [ParamSet::Means, ParamSet::Variances, ParamSet::Weights];

/// Picks the sort key among `candidates`.
pub fn choose_key(system: &ParticleSystem, candidates: &[ParamSet]) -> Result<RelabelReport> {
    let mut scores = [0.0; 3];
    let mut usable = Vec::new();
    for &set in candidates {
        if let Some(score) = separation_score(system, set) {
            scores[set.index()] = score;
            usable.push(set);
        }
    }
    if usable.is_empty() {
        return Err(Error::DegenerateSystem(
            "every candidate parameter set has zero pooled standard deviation".into(),
        ));
    }
    let best = scores.iter().copied().fold(0.0, f64::max);
    let chosen = TIE_PRECEDENCE
        .into_iter()
        .find(|s| usable.contains(s) && scores[s.index()] == best)
        .expect("the maximum is attained by a usable set");
    Ok(RelabelReport {
        chosen_parameter: chosen,
        separation_score: best,
        per_parameter_scores: scores,
        forced: false,
    })
}

/// Permutes every particle's components so that `key` is ascending. The sort
/// is stable, so already ordered particles are left untouched.
pub fn sort_by_key(system: &ParticleSystem, key: ParamSet) -> ParticleSystem {
    let particles = system
        .particles()
        .iter()
        .map(|p| {
            let values = key.of(&p.params);
            let mut order: Vec<usize> = (0..values.len()).collect();
            order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
            Particle {
                params: p.params.permuted(&order),
                ..p.clone()
            }
        })
        .collect();
    system.with_particles(particles)
}

/// Relabels with the automatically chosen key.
pub fn relabel(
    system: &ParticleSystem,
    prior: &PriorSpec,
) -> Result<(ParticleSystem, RelabelReport)> {
    if system.k() < 2 {
        return Err(Error::Domain(
            "relabeling needs at least two components".into(),
        ));
    }
    let report = choose_key(system, &candidate_sets(prior))?;
    Ok((sort_by_key(system, report.chosen_parameter), report))
}

/// Relabels according to `mode`. Returns the system unchanged and no report
/// when there is nothing to resolve: a single component, or labels already
/// pinned by known, distinct weights or variances.
pub fn relabel_with(
    system: &ParticleSystem,
    prior: &PriorSpec,
    mode: RelabelMode,
) -> Result<(ParticleSystem, Option<RelabelReport>)> {
    if system.k() < 2 || prior.labels_identified() {
        return Ok((system.clone(), None));
    }
    match mode {
        RelabelMode::Auto => relabel(system, prior).map(|(s, r)| (s, Some(r))),
        RelabelMode::Forced(key) => {
            let mut report = match choose_key(system, &candidate_sets(prior)) {
                Ok(r) => r,
                Err(_) => RelabelReport {
                    chosen_parameter: key,
                    separation_score: 0.0,
                    per_parameter_scores: [0.0; 3],
                    forced: true,
                },
            };
            report.chosen_parameter = key;
            report.forced = true;
            Ok((sort_by_key(system, key), Some(report)))
        }
    }
}
