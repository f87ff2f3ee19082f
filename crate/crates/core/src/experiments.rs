//! Monte Carlo checks of consistency and asymptotic normality of the MLE
//! and of the posterior, on identifiable models.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bayes::{gibbs_sampler, GibbsOptions, PriorSpec};
use crate::error::{Result, SdeError};
use crate::estimation::{block_relaxation, MleOptions};
use crate::likelihood::{observed_information_prepared, PanelLikelihood, PreparedPanel};
use crate::model::{ModelSpec, ThetaVector, TimeGrid};
use crate::seed::{self, Stream};
use crate::simulate::{simulate_covariate_panel, simulate_panel, CovariateGenerator, Panel, PanelShape};
use crate::stats::{ks_standard_normal, mardia, mean, variance, KsResult, MardiaResult};

/// Tolerance of the block-relaxation fits inside experiments.
pub const EXPERIMENT_TOL: f64 = 1e-10;
/// Information fallbacks above this fraction of replicates flag the report.
pub const MAX_FALLBACK_RATE: f64 = 0.05;
/// Below this many replicates a KS test has little power.
pub const MIN_KS_SAMPLE: usize = 20;

/// How subjects differ within a simulated panel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, tag = "setup", rename_all = "snake_case")]
pub enum Design {
    /// Common initial value and horizon, no covariates.
    Iid { x0: f64, t_end: f64, n_steps: usize },
    /// Subject `i` takes `x0s[i % len]`, horizon `t_ends[i % len]` on a grid
    /// with the given step, and its own covariate path.
    NonIid {
        x0s: Vec<f64>,
        t_ends: Vec<f64>,
        step: f64,
        covariates: CovariateGenerator,
    },
}

impl Design {
    fn validate(&self, spec: &ModelSpec) -> Result<()> {
        match self {
            Design::Iid { .. } if spec.n_covariates() > 0 => Err(SdeError::InvalidSpec(
                "the iid setup has no covariates; use a drift without covariates".into(),
            )),
            Design::NonIid { x0s, t_ends, step, .. } => {
                if x0s.is_empty() || t_ends.is_empty() || !(*step > 0.0) {
                    return Err(SdeError::InvalidSpec(
                        "non-iid design needs initial values, horizons and a positive step".into(),
                    ));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Panel shape for `n` subjects; covariates come from `seed`.
    pub fn shape(&self, spec: &ModelSpec, n: usize, seed: u64) -> Result<PanelShape> {
        self.validate(spec)?;
        match self {
            Design::Iid { x0, t_end, n_steps } => {
                let grid = TimeGrid::new(*t_end, *n_steps)?;
                let covs = simulate_covariate_panel(n, &grid, &CovariateGenerator::default(), &[], seed)?;
                PanelShape::iid(n, grid, *x0, covs)
            }
            Design::NonIid {
                x0s,
                t_ends,
                step,
                covariates,
            } => {
                let mut grids = Vec::with_capacity(n);
                let mut covs = Vec::with_capacity(n);
                for i in 0..n {
                    let t = t_ends[i % t_ends.len()];
                    let grid = TimeGrid::new(t, (t / step).round().max(1.0) as usize)?;
                    let mut c = simulate_covariate_panel(
                        1,
                        &grid,
                        covariates,
                        &spec.drift.covariate_ranges,
                        seed::derive(seed, &[i as u64]),
                    )?
                    .remove(0);
                    c.subject = i;
                    grids.push(grid);
                    covs.push(c);
                }
                Ok(PanelShape {
                    ids: (0..n).map(|i| format!("s{i}")).collect(),
                    grids,
                    x0s: (0..n).map(|i| x0s[i % x0s.len()]).collect(),
                    covariates: covs,
                    diffusions: vec![None; n],
                })
            }
        }
    }
}

fn require_identifiable(spec: &ModelSpec) -> Result<()> {
    if spec.is_identifiable() {
        Ok(())
    } else {
        Err(SdeError::NotIdentifiable(
            "the factor multiplies the covariate coefficients, so the likelihood is flat along \
             rescalings (xi, beta) -> (c xi, beta / c) and the information matrix is singular; \
             use a fixed factor such as the linear family"
                .into(),
        ))
    }
}

/// Seed of replicate `rep` at panel size `n`.
fn replicate_seed(seed: u64, n: usize, rep: usize) -> u64 {
    seed::derive_stream(seed, Stream::Experiment, &[n as u64, rep as u64])
}

/// Simulates the panel of one replicate.
pub fn replicate_panel(
    spec: &ModelSpec,
    theta0: &ThetaVector,
    design: &Design,
    n: usize,
    rep: usize,
    seed: u64,
) -> Result<Panel> {
    let rs = replicate_seed(seed, n, rep);
    let shape = design.shape(spec, n, seed::derive(rs, &[1]))?;
    simulate_panel(spec, theta0, &shape, seed::derive(rs, &[2]))
}

fn fit(panel: &Panel, init: &ThetaVector) -> Result<ThetaVector> {
    let lik = PanelLikelihood::new(panel)?;
    let res = block_relaxation(lik.as_dyn(), init, &MleOptions::with_tol(EXPERIMENT_TOL))?;
    if !res.converged {
        return Err(SdeError::Numerical("block relaxation did not converge".into()));
    }
    Ok(res.theta_hat)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRow {
    pub n: usize,
    pub reps: usize,
    /// Per coordinate.
    pub mean_abs_error: Vec<f64>,
    pub rmse: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub names: Vec<String>,
    pub theta0: Vec<f64>,
    pub rows: Vec<ErrorRow>,
    /// `estimates[row][rep]`.
    pub estimates: Vec<Vec<Vec<f64>>>,
    pub seed: u64,
    pub runtime_secs: f64,
}

impl ConsistencyReport {
    /// Mean absolute error strictly decreases across rows, per coordinate.
    pub fn strictly_decreasing(&self) -> bool {
        self.rows.windows(2).all(|w| {
            w[0].mean_abs_error
                .iter()
                .zip(&w[1].mean_abs_error)
                .all(|(a, b)| b < a)
        })
    }
}

/// Fits `reps` panels at each size in `n_list`. Replicate `r` at size `n`
/// depends only on `(seed, n, r)`.
pub fn consistency_experiment(
    spec: &ModelSpec,
    theta0: &ThetaVector,
    design: &Design,
    n_list: &[usize],
    reps: usize,
    seed: u64,
) -> Result<ConsistencyReport> {
    require_identifiable(spec)?;
    if reps == 0 || n_list.is_empty() || n_list.contains(&0) {
        return Err(SdeError::InvalidParameter("need reps >= 1 and nonempty positive panel sizes".into()));
    }
    let start = Instant::now();
    let mut sizes = n_list.to_vec();
    sizes.sort_unstable();
    let mut rows = Vec::new();
    let mut estimates = Vec::new();
    for &n in &sizes {
        let est: Vec<Vec<f64>> = (0..reps)
            .into_par_iter()
            .map(|r| {
                let panel = replicate_panel(spec, theta0, design, n, r, seed)?;
                Ok(fit(&panel, theta0)?.values().to_vec())
            })
            .collect::<Result<_>>()?;
        let dim = theta0.dim();
        let mean_abs_error = (0..dim)
            .map(|j| est.iter().map(|e| (e[j] - theta0.get(j)).abs()).sum::<f64>() / reps as f64)
            .collect();
        let rmse = (0..dim)
            .map(|j| {
                (est.iter().map(|e| (e[j] - theta0.get(j)).powi(2)).sum::<f64>() / reps as f64).sqrt()
            })
            .collect();
        rows.push(ErrorRow {
            n,
            reps,
            mean_abs_error,
            rmse,
        });
        estimates.push(est);
    }
    Ok(ConsistencyReport {
        names: theta0.names().to_vec(),
        theta0: theta0.values().to_vec(),
        rows,
        estimates,
        seed,
        runtime_secs: start.elapsed().as_secs_f64(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalityReport {
    pub names: Vec<String>,
    pub n: usize,
    pub reps: usize,
    /// Standardized errors `Sigma_n^{-1/2} (theta_hat - theta0)`, one row per replicate.
    pub standardized: Vec<Vec<f64>>,
    pub ks: Vec<KsResult>,
    pub means: Vec<f64>,
    pub variances: Vec<f64>,
    pub mardia: Option<MardiaResult>,
    pub fallback_rate: f64,
    /// Too few replicates for the KS test to have power.
    pub underpowered: bool,
    /// Information fallbacks exceed the allowed rate.
    pub flagged: bool,
    pub seed: u64,
    pub runtime_secs: f64,
}

fn per_coordinate(rows: &[Vec<f64>], dim: usize) -> Vec<Vec<f64>> {
    (0..dim).map(|j| rows.iter().map(|r| r[j]).collect()).collect()
}

/// Standardizes each replicate's MLE error by the observed information at
/// the estimate and tests every coordinate against `Normal(0, 1)`.
pub fn normality_experiment(
    spec: &ModelSpec,
    theta0: &ThetaVector,
    design: &Design,
    n: usize,
    reps: usize,
    seed: u64,
) -> Result<NormalityReport> {
    require_identifiable(spec)?;
    if reps == 0 || n == 0 {
        return Err(SdeError::InvalidParameter("need n >= 1 and reps >= 1".into()));
    }
    let start = Instant::now();
    let out: Vec<(Vec<f64>, bool)> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let panel = replicate_panel(spec, theta0, design, n, r, seed)?;
            let hat = fit(&panel, theta0)?;
            let info = observed_information_prepared(&PreparedPanel::new(&panel)?, hat.values());
            Ok((info.standardize(hat.values(), theta0.values()), info.fallback))
        })
        .collect::<Result<_>>()?;
    let fallbacks = out.iter().filter(|o| o.1).count();
    let standardized: Vec<Vec<f64>> = out.into_iter().map(|o| o.0).collect();
    let cols = per_coordinate(&standardized, theta0.dim());
    let fallback_rate = fallbacks as f64 / reps as f64;
    Ok(NormalityReport {
        names: theta0.names().to_vec(),
        n,
        reps,
        ks: cols.iter().map(|c| ks_standard_normal(c)).collect(),
        means: cols.iter().map(|c| mean(c)).collect(),
        variances: cols.iter().map(|c| variance(c)).collect(),
        mardia: mardia(&standardized),
        standardized,
        fallback_rate,
        underpowered: reps < MIN_KS_SAMPLE,
        flagged: fallback_rate > MAX_FALLBACK_RATE,
        seed,
        runtime_secs: start.elapsed().as_secs_f64(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorNormalityReport {
    pub names: Vec<String>,
    pub n: usize,
    pub theta_hat: Vec<f64>,
    /// `Psi_n = Sigma_n^{-1/2} (theta - theta_hat)` for every recorded draw.
    pub psi: Vec<Vec<f64>>,
    pub ks: Vec<KsResult>,
    /// The information matrix was singular, so `Psi_n` is unscaled and
    /// not expected to look normal.
    pub information_fallback: bool,
    pub seed: u64,
    pub runtime_secs: f64,
}

impl PosteriorNormalityReport {
    pub fn max_ks(&self) -> f64 {
        self.ks.iter().map(|k| k.statistic).fold(0.0, f64::max)
    }
}

/// Simulates one panel of size `n`, computes the MLE and observed
/// information, runs the Gibbs sampler and tests the standardized draws
/// against `Normal(0, 1)`.
pub fn posterior_normality_experiment(
    spec: &ModelSpec,
    theta0: &ThetaVector,
    design: &Design,
    n: usize,
    prior: &PriorSpec,
    gibbs: &GibbsOptions,
    seed: u64,
) -> Result<PosteriorNormalityReport> {
    let panel = replicate_panel(spec, theta0, design, n, 0, seed)?;
    posterior_normality_on(&panel, theta0, prior, gibbs, seed)
}

/// The posterior check on a given panel, started at `init`.
pub fn posterior_normality_on(
    panel: &Panel,
    init: &ThetaVector,
    prior: &PriorSpec,
    gibbs: &GibbsOptions,
    seed: u64,
) -> Result<PosteriorNormalityReport> {
    require_identifiable(&panel.spec)?;
    let start = Instant::now();
    let hat = fit(panel, init)?;
    let info = observed_information_prepared(&PreparedPanel::new(panel)?, hat.values());
    let chain = gibbs_sampler(panel, prior, &hat, gibbs)?;
    let root = info.precision_sqrt();
    let psi: Vec<Vec<f64>> = chain
        .chain
        .draws
        .iter()
        .map(|d| {
            let diff = nalgebra::DVector::from_iterator(d.len(), d.iter().zip(hat.values()).map(|(a, b)| a - b));
            (&root * diff).iter().copied().collect()
        })
        .collect();
    let cols = per_coordinate(&psi, hat.dim());
    Ok(PosteriorNormalityReport {
        names: hat.names().to_vec(),
        n: panel.n_subjects(),
        theta_hat: hat.values().to_vec(),
        ks: cols.iter().map(|c| ks_standard_normal(c)).collect(),
        psi,
        information_fallback: info.fallback,
        seed,
        runtime_secs: start.elapsed().as_secs_f64(),
    })
}
