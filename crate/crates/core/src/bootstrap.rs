//! Parametric bootstrap of the block-relaxation MLE.

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SdeError};
use crate::estimation::{block_relaxation, MleOptions};
use crate::likelihood::PanelLikelihood;
use crate::model::{ModelSpec, ThetaVector};
use crate::seed::{self, Stream};
use crate::simulate::{simulate_covariate_panel, simulate_panel, CovariateGenerator, PanelShape};

/// Fraction of failed replicates above which the bootstrap is an error.
pub const MAX_FAILURE_RATE: f64 = 0.10;
pub const HISTOGRAM_BINS: usize = 40;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapOptions {
    pub replicates: usize,
    pub seed: u64,
    pub mle: MleOptions,
    /// Regenerate covariates per replicate from this law instead of
    /// holding the observed ones fixed.
    pub regenerate_covariates: Option<CovariateGenerator>,
}

impl BootstrapOptions {
    pub fn new(replicates: usize, seed: u64) -> Self {
        Self {
            replicates,
            seed,
            mle: MleOptions::with_tol(1e-5),
            regenerate_covariates: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Replicate {
    pub values: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub error: Option<String>,
}

impl Replicate {
    pub fn failed(&self) -> bool {
        !self.converged || self.error.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapDist {
    pub theta_hat: ThetaVector,
    pub replicates: Vec<Replicate>,
    pub seed: u64,
}

impl BootstrapDist {
    pub fn len(&self) -> usize {
        self.replicates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.replicates.is_empty()
    }

    pub fn n_failed(&self) -> usize {
        self.replicates.iter().filter(|r| r.failed()).count()
    }

    /// Replicates whose refit produced an estimate.
    fn usable(&self) -> impl Iterator<Item = &Replicate> {
        self.replicates.iter().filter(|r| r.error.is_none())
    }

    pub fn coordinate(&self, j: usize) -> Vec<f64> {
        self.usable().map(|r| r.values[j]).collect()
    }

    /// Samples of every identified product, labelled as in
    /// [`ModelSpec::identified_quantities`].
    pub fn identified(&self, spec: &ModelSpec) -> Vec<(String, Vec<f64>)> {
        let names: Vec<String> = spec
            .identified_quantities(self.theta_hat.values())
            .into_iter()
            .map(|(n, _)| n)
            .collect();
        let mut out: Vec<(String, Vec<f64>)> = names.into_iter().map(|n| (n, Vec::new())).collect();
        for r in self.usable() {
            for (slot, (_, v)) in out.iter_mut().zip(spec.identified_quantities(&r.values)) {
                slot.1.push(v);
            }
        }
        out
    }
}

/// Simulates `replicates` panels under `theta_hat` and refits each by block
/// relaxation started at `theta_hat`. Replicate `b` (from 1) uses the seed
/// derived from `(seed, b)`.
pub fn parametric_bootstrap(
    spec: &ModelSpec,
    theta_hat: &ThetaVector,
    shape: &PanelShape,
    replicates: usize,
    seed: u64,
) -> Result<BootstrapDist> {
    parametric_bootstrap_with(spec, theta_hat, shape, &BootstrapOptions::new(replicates, seed))
}

pub fn parametric_bootstrap_with(
    spec: &ModelSpec,
    theta_hat: &ThetaVector,
    shape: &PanelShape,
    opts: &BootstrapOptions,
) -> Result<BootstrapDist> {
    if opts.replicates == 0 {
        return Err(SdeError::InvalidParameter("bootstrap needs at least one replicate".into()));
    }
    if theta_hat.dim() != spec.dim() {
        return Err(SdeError::DimensionMismatch(format!(
            "theta has {} coordinates, model has {}",
            theta_hat.dim(),
            spec.dim()
        )));
    }
    if opts.regenerate_covariates.is_some() {
        let first = shape.grids.first().ok_or_else(|| SdeError::Empty("panel has no subjects".into()))?;
        if shape.grids.iter().any(|g| g != first) {
            return Err(SdeError::InvalidSpec(
                "covariate regeneration requires a common grid for all subjects".into(),
            ));
        }
    }
    let replicates: Vec<Replicate> = (1..=opts.replicates as u64)
        .into_par_iter()
        .map(|b| one_replicate(spec, theta_hat, shape, opts, seed::derive_stream(opts.seed, Stream::Bootstrap, &[b])))
        .collect();
    let dist = BootstrapDist {
        theta_hat: theta_hat.clone(),
        replicates,
        seed: opts.seed,
    };
    let failed = dist.n_failed();
    if failed > 0 {
        warn!("{failed} of {} bootstrap replicates did not converge", dist.len());
    }
    if failed as f64 > MAX_FAILURE_RATE * dist.len() as f64 {
        return Err(SdeError::BootstrapFailures {
            failed,
            total: dist.len(),
        });
    }
    Ok(dist)
}

fn one_replicate(
    spec: &ModelSpec,
    theta_hat: &ThetaVector,
    shape: &PanelShape,
    opts: &BootstrapOptions,
    rep_seed: u64,
) -> Replicate {
    let fit = || -> Result<(Vec<f64>, bool, usize)> {
        let regenerated;
        let shape = match &opts.regenerate_covariates {
            None => shape,
            Some(gen) => {
                let covs = simulate_covariate_panel(
                    shape.n_subjects(),
                    &shape.grids[0],
                    gen,
                    &spec.drift.covariate_ranges,
                    seed::derive(rep_seed, &[Stream::CovariateNoise as u64]),
                )?;
                regenerated = PanelShape {
                    covariates: covs,
                    ..shape.clone()
                };
                &regenerated
            }
        };
        let panel = simulate_panel(spec, theta_hat, shape, rep_seed)?;
        let lik = PanelLikelihood::new(&panel)?;
        let res = block_relaxation(lik.as_dyn(), theta_hat, &opts.mle)?;
        Ok((res.theta_hat.values().to_vec(), res.converged, res.iterations))
    };
    match fit() {
        Ok((values, converged, iterations)) => Replicate {
            values,
            converged,
            iterations,
            error: None,
        },
        Err(e) => Replicate {
            values: theta_hat.values().to_vec(),
            converged: false,
            iterations: 0,
            error: Some(e.to_string()),
        },
    }
}

/// Nearest rank `ceil(p * n)` (1-based), tolerant of rounding in `p * n`.
fn nearest_rank(p: f64, n: usize) -> usize {
    let x = p * n as f64;
    let r = x.round();
    let rank = if (x - r).abs() <= 1e-9 * x.abs().max(1.0) { r } else { x.ceil() };
    (rank as usize).clamp(1, n)
}

/// Percentile interval from the nearest-rank order statistics at
/// `ceil((1 - level) / 2 * B)` and `ceil((1 + level) / 2 * B)`.
pub fn percentile_ci(values: &[f64], level: f64) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(SdeError::Empty("percentile of an empty sample".into()));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(SdeError::InvalidParameter(format!("level must lie in (0, 1), got {level}")));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(SdeError::Numerical("NaN in percentile input".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let lo = nearest_rank((1.0 - level) / 2.0, n);
    let hi = nearest_rank((1.0 + level) / 2.0, n);
    Ok((sorted[lo - 1], sorted[hi - 1]))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub left: f64,
    pub right: f64,
    pub count: usize,
}

/// Equal-width histogram over the sample range; the last bin is closed.
pub fn histogram(values: &[f64], bins: usize) -> Vec<HistogramBin> {
    if values.is_empty() || bins == 0 {
        return Vec::new();
    }
    let mut lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let mut hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if lo == hi {
        lo -= 0.5;
        hi += 0.5;
    }
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for &v in values {
        let k = (((v - lo) / width) as usize).min(bins - 1);
        counts[k] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(k, count)| HistogramBin {
            left: lo + k as f64 * width,
            right: if k + 1 == bins { hi } else { lo + (k + 1) as f64 * width },
            count,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalSummary {
    pub name: String,
    pub estimate: f64,
    pub mean: f64,
    pub sd: f64,
    pub lower: f64,
    pub upper: f64,
}

pub fn summarize(name: &str, estimate: f64, sample: &[f64], level: f64) -> Result<IntervalSummary> {
    let (lower, upper) = percentile_ci(sample, level)?;
    let n = sample.len() as f64;
    let mean = sample.iter().sum::<f64>() / n;
    let var = if sample.len() > 1 {
        sample.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Ok(IntervalSummary {
        name: name.to_string(),
        estimate,
        mean,
        sd: var.sqrt(),
        lower,
        upper,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSummary {
    pub level: f64,
    pub replicates: usize,
    pub failed: usize,
    pub coordinates: Vec<IntervalSummary>,
    pub identified: Vec<IntervalSummary>,
}

impl BootstrapDist {
    pub fn summary(&self, spec: &ModelSpec, level: f64) -> Result<BootstrapSummary> {
        let coordinates = (0..self.theta_hat.dim())
            .map(|j| summarize(&self.theta_hat.names()[j], self.theta_hat.get(j), &self.coordinate(j), level))
            .collect::<Result<Vec<_>>>()?;
        let plug_in = spec.identified_quantities(self.theta_hat.values());
        let identified = self
            .identified(spec)
            .iter()
            .zip(plug_in)
            .map(|((name, sample), (_, est))| summarize(name, est, sample, level))
            .collect::<Result<Vec<_>>>()?;
        Ok(BootstrapSummary {
            level,
            replicates: self.len(),
            failed: self.n_failed(),
            coordinates,
            identified,
        })
    }
}
