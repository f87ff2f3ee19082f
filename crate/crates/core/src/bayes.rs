//! Priors, ABC rejection sampling and Gibbs sampling.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bootstrap::{percentile_ci, BootstrapDist};
use crate::error::{Result, SdeError};
use crate::likelihood::PanelLikelihood;
use crate::model::ThetaVector;
use crate::seed::{self, Stream};
use crate::simulate::{simulate_path_with_increments, subject_wiener_seed, wiener_increments, Panel};

/// Independent `Normal(mean_j, sd_j^2)` prior per coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorSpec {
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
}

impl PriorSpec {
    pub fn new(means: Vec<f64>, sds: Vec<f64>) -> Result<Self> {
        if means.len() != sds.len() {
            return Err(SdeError::DimensionMismatch(format!(
                "{} prior means, {} standard deviations",
                means.len(),
                sds.len()
            )));
        }
        if let Some(j) = sds.iter().position(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(SdeError::InvalidParameter(format!(
                "prior sd for coordinate {j} must be positive and finite, got {}",
                sds[j]
            )));
        }
        if means.iter().any(|m| !m.is_finite()) {
            return Err(SdeError::InvalidParameter("prior means must be finite".into()));
        }
        Ok(Self { means, sds })
    }

    pub fn iid(dim: usize, mean: f64, sd: f64) -> Result<Self> {
        Self::new(vec![mean; dim], vec![sd; dim])
    }

    pub fn dim(&self) -> usize {
        self.means.len()
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        self.means
            .iter()
            .zip(&self.sds)
            .map(|(m, s)| {
                let e: f64 = StandardNormal.sample(rng);
                m + s * e
            })
            .collect()
    }
}

/// Half-width multiplier of a central 95% normal interval.
const Z95: f64 = 1.96;

/// Prior centred at the bootstrap's plug-in estimate whose 95% interval
/// is as long as the bootstrap percentile interval widened by one unit on
/// each side: `sd_j = (L_j + 2) / (2 * 1.96)`.
pub fn empirical_bayes_prior(boot: &BootstrapDist) -> Result<PriorSpec> {
    if boot.is_empty() {
        return Err(SdeError::Empty("bootstrap distribution has no replicates".into()));
    }
    let dim = boot.theta_hat.dim();
    let sds = (0..dim)
        .map(|j| {
            let (lo, hi) = percentile_ci(&boot.coordinate(j), 0.95)?;
            Ok((hi - lo + 2.0) / (2.0 * Z95))
        })
        .collect::<Result<Vec<_>>>()?;
    PriorSpec::new(boot.theta_hat.values().to_vec(), sds)
}

/// Ordered draws from a sampler.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainResult {
    pub names: Vec<String>,
    pub draws: Vec<Vec<f64>>,
    pub seed: u64,
}

impl ChainResult {
    pub fn dim(&self) -> usize {
        self.names.len()
    }

    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    pub fn coordinate(&self, j: usize) -> Vec<f64> {
        self.draws.iter().map(|d| d[j]).collect()
    }
}

/// Source of the Wiener noise driving each ABC trial's simulated panel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, tag = "mode", rename_all = "snake_case")]
pub enum AbcNoise {
    /// Fresh increments per trial from the stream `(seed, trial)`.
    Independent,
    /// The increments of a panel simulated from `seed`, reused by every
    /// trial (common random numbers).
    Common { seed: u64 },
}

pub const ABC_MAX_TRIALS: u64 = 100_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbcOptions {
    pub epsilon: f64,
    pub n_accept: usize,
    pub seed: u64,
    pub noise: AbcNoise,
    pub max_trials: u64,
    /// Trials evaluated per parallel batch; does not affect results.
    pub batch: usize,
}

impl AbcOptions {
    pub fn new(epsilon: f64, n_accept: usize, seed: u64) -> Self {
        Self {
            epsilon,
            n_accept,
            seed,
            noise: AbcNoise::Independent,
            max_trials: ABC_MAX_TRIALS,
            batch: 8192,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbcResult {
    pub chain: ChainResult,
    pub distances: Vec<f64>,
    /// Index of the trial that produced each accepted draw.
    pub trial_indices: Vec<u64>,
    pub trials: u64,
    pub acceptance_rate: f64,
    pub epsilon: f64,
}

/// Wiener increments and covariates shared by every ABC trial.
struct AbcTarget<'a> {
    panel: &'a Panel,
    common: Option<Vec<Vec<f64>>>,
    n_points: usize,
}

impl<'a> AbcTarget<'a> {
    fn new(panel: &'a Panel, noise: AbcNoise) -> Self {
        let common = match noise {
            AbcNoise::Independent => None,
            AbcNoise::Common { seed } => Some(
                panel
                    .subjects
                    .iter()
                    .enumerate()
                    .map(|(i, s)| wiener_increments(subject_wiener_seed(seed, i), &s.path.grid))
                    .collect(),
            ),
        };
        let n_points = panel.subjects.iter().map(|s| s.path.grid.n_steps()).sum();
        Self { panel, common, n_points }
    }

    /// Sum of squared differences to the observed paths, abandoned once it
    /// exceeds `cap`. `None` when the simulation fails.
    fn squared_distance(&self, theta: &[f64], trial_seed: u64, cap: f64) -> Option<f64> {
        let spec = &self.panel.spec;
        let mut total = 0.0;
        for (i, s) in self.panel.subjects.iter().enumerate() {
            let fresh;
            let dw = match &self.common {
                Some(c) => &c[i],
                None => {
                    fresh = wiener_increments(subject_wiener_seed(trial_seed, i), &s.path.grid);
                    &fresh
                }
            };
            let sim = simulate_path_with_increments(
                &spec.drift,
                theta,
                self.panel.diffusion_for(i),
                &s.covariates,
                s.path.x0,
                &s.path.grid,
                dw,
            )
            .ok()?;
            total += sim.states[1..]
                .iter()
                .zip(&s.path.states[1..])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>();
            if total > cap {
                return Some(total);
            }
        }
        Some(total)
    }

    fn rms(&self, sum_sq: f64) -> f64 {
        (sum_sq / self.n_points as f64).sqrt()
    }
}

fn abc_trial_theta(seed: u64, prior: &PriorSpec, trial: u64) -> Vec<f64> {
    let mut rng = seed::rng(seed::derive_stream(seed, Stream::AbcPrior, &[trial]));
    prior.sample(&mut rng)
}

fn abc_noise_seed(seed: u64, trial: u64) -> u64 {
    seed::derive_stream(seed, Stream::AbcNoise, &[trial])
}

fn in_bounds(panel: &Panel, theta: &[f64]) -> bool {
    panel.spec.bounds.iter().zip(theta).all(|(b, v)| b.contains(*v))
}

/// ABC rejection: draw theta from the prior, simulate a panel on the
/// observed grids, initial values and covariates, and keep theta when the
/// RMS distance to the observed paths is below `epsilon`. Trials are
/// numbered from 0 and accepted in trial order, so the output does not
/// depend on the thread count. Draws outside the parameter bounds are
/// rejected.
pub fn abc_rejection(x_true: &Panel, prior: &PriorSpec, opts: &AbcOptions) -> Result<AbcResult> {
    if !(opts.epsilon > 0.0) {
        return Err(SdeError::InvalidParameter(format!("epsilon must be positive, got {}", opts.epsilon)));
    }
    if opts.n_accept == 0 || opts.batch == 0 {
        return Err(SdeError::InvalidParameter("n_accept and batch must be at least 1".into()));
    }
    if prior.dim() != x_true.spec.dim() {
        return Err(SdeError::DimensionMismatch(format!(
            "prior has {} coordinates, model has {}",
            prior.dim(),
            x_true.spec.dim()
        )));
    }
    let target = AbcTarget::new(x_true, opts.noise);
    let eps2 = opts.epsilon * opts.epsilon * target.n_points as f64;
    // Abandon a trial only when it is clearly beyond the threshold; the
    // final decision below uses the distance itself.
    let cap = if eps2.is_finite() { eps2 * (1.0 + 1e-9) } else { f64::INFINITY };
    let mut draws = Vec::with_capacity(opts.n_accept);
    let mut distances = Vec::with_capacity(opts.n_accept);
    let mut trial_indices = Vec::with_capacity(opts.n_accept);
    let mut next = 0u64;
    'outer: while next < opts.max_trials {
        let end = (next + opts.batch as u64).min(opts.max_trials);
        let results: Vec<Option<(Vec<f64>, f64)>> = (next..end)
            .into_par_iter()
            .map(|t| {
                let theta = abc_trial_theta(opts.seed, prior, t);
                if !in_bounds(x_true, &theta) {
                    return None;
                }
                let sq = target.squared_distance(&theta, abc_noise_seed(opts.seed, t), cap)?;
                let d = target.rms(sq);
                (d < opts.epsilon).then_some((theta, d))
            })
            .collect();
        for (offset, r) in results.into_iter().enumerate() {
            if let Some((theta, d)) = r {
                draws.push(theta);
                distances.push(d);
                trial_indices.push(next + offset as u64);
                if draws.len() == opts.n_accept {
                    next += offset as u64 + 1;
                    break 'outer;
                }
            }
        }
        next = end;
    }
    let rate = draws.len() as f64 / next.max(1) as f64;
    if draws.len() < opts.n_accept {
        return Err(SdeError::AbcBudget {
            trials: next,
            accepted: draws.len(),
            rate,
        });
    }
    Ok(AbcResult {
        chain: ChainResult {
            names: x_true.spec.param_names(),
            draws,
            seed: opts.seed,
        },
        distances,
        trial_indices,
        trials: next,
        acceptance_rate: rate,
        epsilon: opts.epsilon,
    })
}

/// Distances of the first `trials` ABC trials. Rejected-by-bounds or
/// failed simulations have infinite distance.
pub fn abc_trial_distances(
    x_true: &Panel,
    prior: &PriorSpec,
    trials: u64,
    seed: u64,
    noise: AbcNoise,
) -> Vec<f64> {
    let target = AbcTarget::new(x_true, noise);
    (0..trials)
        .into_par_iter()
        .map(|t| {
            let theta = abc_trial_theta(seed, prior, t);
            if !in_bounds(x_true, &theta) {
                return f64::INFINITY;
            }
            target
                .squared_distance(&theta, abc_noise_seed(seed, t), f64::INFINITY)
                .map_or(f64::INFINITY, |sq| target.rms(sq))
        })
        .collect()
}

/// Acceptance rate at each epsilon over a shared set of trials.
pub fn abc_acceptance_profile(distances: &[f64], epsilons: &[f64]) -> Vec<(f64, f64)> {
    epsilons
        .iter()
        .map(|&e| {
            let k = distances.iter().filter(|&&d| d < e).count();
            (e, k as f64 / distances.len().max(1) as f64)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GibbsOptions {
    pub iters: usize,
    pub thin: usize,
    pub seed: u64,
    /// Coordinates to sample; the others stay at their initial values.
    pub free: Option<Vec<bool>>,
    /// Keep every iteration in addition to the thinned chain.
    pub keep_all: bool,
}

impl GibbsOptions {
    pub fn new(iters: usize, thin: usize, seed: u64) -> Self {
        Self {
            iters,
            thin,
            seed,
            free: None,
            keep_all: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GibbsResult {
    /// Every `thin`-th state.
    pub chain: ChainResult,
    /// Every state, when requested.
    pub all: Option<Vec<Vec<f64>>>,
    pub iterations: usize,
    pub thin: usize,
}

/// Normal full conditional of coordinate `j`: `(mean, variance)`.
fn full_conditional(
    lik: &PanelLikelihood<'_>,
    theta: &[f64],
    j: usize,
    prior: &PriorSpec,
    names: &[String],
) -> Result<(f64, f64)> {
    let q = lik.as_dyn().coordinate_quadratic(theta, j).ok_or_else(|| {
        SdeError::InvalidSpec(format!("drift is not affine in {}; Gibbs needs normal full conditionals", names[j]))
    })?;
    if !(q.a.is_finite() && q.c.is_finite() && q.d.is_finite()) {
        return Err(SdeError::NonFiniteCoordinate {
            coordinate: names[j].clone(),
        });
    }
    let scale = q.c.abs().max(q.a.abs()).max(1.0);
    if q.c < -1e-10 * scale {
        return Err(SdeError::GibbsConsistency(format!(
            "negative curvature {} in {}",
            q.c, names[j]
        )));
    }
    let c = q.c.max(0.0);
    let prior_prec = 1.0 / (prior.sds[j] * prior.sds[j]);
    let precision = c + prior_prec;
    let mean = (q.a - 0.5 * q.d + prior.means[j] * prior_prec) / precision;
    Ok((mean, 1.0 / precision))
}

/// Mean and variance of every full conditional at `theta`.
pub fn full_conditionals(panel: &Panel, prior: &PriorSpec, theta: &ThetaVector) -> Result<Vec<(f64, f64)>> {
    let lik = PanelLikelihood::new(panel)?;
    (0..theta.dim())
        .map(|j| full_conditional(&lik, theta.values(), j, prior, theta.names()))
        .collect()
}

/// Systematic-scan Gibbs sampler with normal full conditionals built from
/// the discretized likelihood.
pub fn gibbs_sampler(
    panel: &Panel,
    prior: &PriorSpec,
    init: &ThetaVector,
    opts: &GibbsOptions,
) -> Result<GibbsResult> {
    if opts.iters == 0 || opts.thin == 0 {
        return Err(SdeError::InvalidParameter("iters and thin must be at least 1".into()));
    }
    let dim = init.dim();
    if prior.dim() != dim || panel.spec.dim() != dim {
        return Err(SdeError::DimensionMismatch(format!(
            "prior {}, initial value {dim}, model {}",
            prior.dim(),
            panel.spec.dim()
        )));
    }
    let free = opts.free.clone().unwrap_or_else(|| vec![true; dim]);
    if free.len() != dim {
        return Err(SdeError::DimensionMismatch("free-coordinate mask has the wrong length".into()));
    }
    let lik = PanelLikelihood::new(panel)?;
    let names = init.names();
    let mut rng = seed::rng(seed::derive_stream(opts.seed, Stream::Gibbs, &[0]));
    let mut theta = init.values().to_vec();
    let mut draws = Vec::with_capacity(opts.iters / opts.thin);
    let mut all = opts.keep_all.then(|| Vec::with_capacity(opts.iters));
    for it in 1..=opts.iters {
        for j in (0..dim).filter(|&j| free[j]) {
            let (mean, var) = full_conditional(&lik, &theta, j, prior, names)?;
            let e: f64 = StandardNormal.sample(&mut rng);
            let v = mean + var.sqrt() * e;
            if !v.is_finite() {
                return Err(SdeError::NonFiniteCoordinate {
                    coordinate: names[j].clone(),
                });
            }
            theta[j] = v;
        }
        if let Some(a) = all.as_mut() {
            a.push(theta.clone());
        }
        if it % opts.thin == 0 {
            draws.push(theta.clone());
        }
    }
    Ok(GibbsResult {
        chain: ChainResult {
            names: names.to_vec(),
            draws,
            seed: opts.seed,
        },
        all,
        iterations: opts.iters,
        thin: opts.thin,
    })
}

pub const MAX_REPORTED_LAG: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoordinateDiagnostics {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    /// Autocorrelation at lags 1..=50 (fewer for short chains).
    pub autocorrelation: Vec<f64>,
    pub ess: f64,
    /// The chain is constant, so autocorrelation and ESS are undefined.
    pub degenerate: bool,
    pub running_means: Vec<f64>,
}

fn autocovariances(x: &[f64], mean: f64, max_lag: usize) -> Vec<f64> {
    let n = x.len();
    (0..=max_lag.min(n - 1))
        .map(|k| {
            (0..n - k).map(|t| (x[t] - mean) * (x[t + k] - mean)).sum::<f64>() / n as f64
        })
        .collect()
}

/// Effective sample size by the initial positive sequence estimator:
/// sums of adjacent autocorrelation pairs are accumulated while positive.
pub fn effective_sample_size(x: &[f64]) -> Option<f64> {
    let n = x.len();
    if n < 2 {
        return None;
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let gamma0 = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    if !(gamma0 > 0.0) {
        return None;
    }
    let rho = |k: usize| -> f64 {
        (0..n - k).map(|t| (x[t] - mean) * (x[t + k] - mean)).sum::<f64>() / n as f64 / gamma0
    };
    let mut sum = 0.0;
    let mut m = 0;
    while 2 * m + 1 < n {
        let pair = if m == 0 { 1.0 + rho(1) } else { rho(2 * m) + rho(2 * m + 1) };
        if pair <= 0.0 {
            break;
        }
        sum += pair;
        m += 1;
    }
    let tau = (2.0 * sum - 1.0).max(1.0 / n as f64);
    Some(n as f64 / tau)
}

/// Per-coordinate summaries of a chain.
pub fn chain_diagnostics(chain: &ChainResult) -> Vec<CoordinateDiagnostics> {
    (0..chain.dim())
        .map(|j| {
            let x = chain.coordinate(j);
            let n = x.len();
            let mut running = Vec::with_capacity(n);
            let mut acc = 0.0;
            for (t, v) in x.iter().enumerate() {
                acc += v;
                running.push(acc / (t + 1) as f64);
            }
            let mean = if n > 0 { acc / n as f64 } else { f64::NAN };
            let ess = effective_sample_size(&x);
            let degenerate = ess.is_none();
            let autocorrelation = if degenerate {
                Vec::new()
            } else {
                let g = autocovariances(&x, mean, MAX_REPORTED_LAG);
                g[1..].iter().map(|v| v / g[0]).collect()
            };
            let sd = if n > 1 {
                (x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
            } else {
                0.0
            };
            CoordinateDiagnostics {
                name: chain.names[j].clone(),
                mean,
                sd,
                autocorrelation,
                ess: ess.unwrap_or(0.0),
                degenerate,
                running_means: running,
            }
        })
        .collect()
}
