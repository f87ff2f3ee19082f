//! Block-relaxation maximum likelihood.
//!
//! Each sweep maximizes the log-likelihood over one coordinate at a time, in
//! declaration order, holding the others at their latest values. Coordinates
//! in which the drift is affine have a closed-form update; others use a
//! safeguarded Newton iteration on the partial derivative.

use log::debug;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SdeError};
use crate::likelihood::{LogLikelihood, PanelLikelihood};
use crate::model::{Bounds, ThetaVector};
use crate::seed::{self, Stream};
use crate::simulate::{random_init, Panel};

pub const DEFAULT_MAX_SWEEPS: usize = 10_000;
const ROOT_TOL: f64 = 1e-10;
/// Relative tolerance for rounding noise in log-likelihood comparisons.
pub const ASCENT_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateMethod {
    ClosedForm,
    Newton,
    /// The coordinate kept its value: zero curvature or no improvement.
    Unchanged,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoordinateUpdate {
    pub value: f64,
    pub method: UpdateMethod,
    /// Zero curvature in this coordinate.
    pub flat: bool,
    /// The unconstrained solution fell outside the bounds.
    pub clamped: bool,
}

/// Maximizes a scalar function on `[lo, hi]` given its derivative. Returns
/// the best of the bracketed Newton root, the endpoints it implies, and
/// `x0`, so the result never has a lower value than `x0`.
pub fn maximize_scalar(
    f: &dyn Fn(f64) -> f64,
    df: &dyn Fn(f64) -> f64,
    lo: f64,
    hi: f64,
    x0: f64,
) -> Result<(f64, UpdateMethod)> {
    let x0 = x0.clamp(lo, hi);
    if lo == hi {
        return Ok((lo, UpdateMethod::Unchanged));
    }
    let s_lo = df(lo);
    let s_hi = df(hi);
    if !s_lo.is_finite() || !s_hi.is_finite() {
        return Err(SdeError::Numerical("non-finite derivative at a bound".into()));
    }
    let mut candidates = vec![x0];
    if s_lo > 0.0 && s_hi < 0.0 {
        candidates.push(bracketed_root(df, lo, hi, x0)?);
    } else {
        if s_lo <= 0.0 {
            candidates.push(lo);
        }
        if s_hi >= 0.0 {
            candidates.push(hi);
        }
    }
    let f0 = f(x0);
    let mut best = (x0, f0, UpdateMethod::Unchanged);
    for &c in &candidates[1..] {
        let fc = f(c);
        if fc.is_finite() && fc > best.1 {
            best = (c, fc, UpdateMethod::Newton);
        }
    }
    Ok((best.0, best.2))
}

/// Newton on `df` safeguarded by the bracket `df(a) > 0 > df(b)`.
fn bracketed_root(df: &dyn Fn(f64) -> f64, mut a: f64, mut b: f64, x0: f64) -> Result<f64> {
    let mut x = if x0 > a && x0 < b { x0 } else { 0.5 * (a + b) };
    for _ in 0..500 {
        let s = df(x);
        if !s.is_finite() {
            return Err(SdeError::Numerical(format!("non-finite derivative at {x}")));
        }
        if s == 0.0 {
            return Ok(x);
        }
        if s > 0.0 {
            a = x;
        } else {
            b = x;
        }
        let e = 1e-6 * x.abs().max(1.0);
        let curv = (df(x + e) - df(x - e)) / (2.0 * e);
        let newton = x - s / curv;
        let next = if curv < 0.0 && newton > a && newton < b {
            newton
        } else {
            0.5 * (a + b)
        };
        if (next - x).abs() <= ROOT_TOL * x.abs().max(1.0) || (b - a) <= ROOT_TOL * x.abs().max(1.0) {
            return Ok(next);
        }
        x = next;
    }
    Ok(x)
}

/// One coordinate update on a prepared likelihood.
pub fn update_coordinate(
    lik: &dyn LogLikelihood,
    theta: &[f64],
    j: usize,
    bounds: &Bounds,
    names: &[String],
) -> Result<CoordinateUpdate> {
    let current = theta[j];
    let name = || names.get(j).cloned().unwrap_or_else(|| format!("theta{j}"));
    if let Some(q) = lik.coordinate_quadratic(theta, j) {
        if !(q.a.is_finite() && q.c.is_finite() && q.d.is_finite()) {
            return Err(SdeError::NonFiniteCoordinate { coordinate: name() });
        }
        return Ok(match q.maximizer() {
            None => CoordinateUpdate {
                value: current,
                method: UpdateMethod::Unchanged,
                flat: true,
                clamped: false,
            },
            Some(t) => {
                let value = bounds.clamp(t);
                CoordinateUpdate {
                    value,
                    method: UpdateMethod::ClosedForm,
                    flat: false,
                    clamped: value != t,
                }
            }
        });
    }
    let mut work = theta.to_vec();
    let mut eval = |t: f64| {
        work[j] = t;
        lik.value(&work)
    };
    let mut work2 = theta.to_vec();
    let mut slope = |t: f64| {
        work2[j] = t;
        lik.partial(&work2, j)
    };
    if !slope(current).is_finite() {
        return Err(SdeError::NonFiniteCoordinate { coordinate: name() });
    }
    let f = std::cell::RefCell::new(&mut eval);
    let df = std::cell::RefCell::new(&mut slope);
    let (value, method) = maximize_scalar(
        &|t| (f.borrow_mut())(t),
        &|t| (df.borrow_mut())(t),
        bounds.lo,
        bounds.hi,
        current,
    )
    .map_err(|_| SdeError::NonFiniteCoordinate { coordinate: name() })?;
    Ok(CoordinateUpdate {
        value,
        method,
        flat: false,
        clamped: value == bounds.lo || value == bounds.hi,
    })
}

/// Solves `d log L / d theta_j = 0` with the other coordinates fixed,
/// clamped to the coordinate's bounds.
pub fn conditional_update(panel: &Panel, theta: &ThetaVector, j: usize) -> Result<CoordinateUpdate> {
    if j >= theta.dim() {
        return Err(SdeError::DimensionMismatch(format!(
            "coordinate {j} out of range for dimension {}",
            theta.dim()
        )));
    }
    let lik = PanelLikelihood::new(panel)?;
    update_coordinate(lik.as_dyn(), theta.values(), j, &theta.bounds()[j], theta.names())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MleResult {
    pub theta_hat: ThetaVector,
    pub iterations: usize,
    pub final_move: f64,
    /// Log-likelihood at the start and after every sweep.
    pub loglik_trace: Vec<f64>,
    pub converged: bool,
    /// Number of coordinate updates skipped for zero curvature.
    pub flat_updates: usize,
    /// Number of coordinate updates that hit a bound.
    pub clamped_updates: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MleOptions {
    pub tol: f64,
    pub max_sweeps: usize,
}

impl MleOptions {
    pub fn with_tol(tol: f64) -> Self {
        Self {
            tol,
            max_sweeps: DEFAULT_MAX_SWEEPS,
        }
    }
}

/// Block relaxation on a prepared likelihood.
pub fn block_relaxation(
    lik: &dyn LogLikelihood,
    init: &ThetaVector,
    opts: &MleOptions,
) -> Result<MleResult> {
    if !(opts.tol > 0.0) {
        return Err(SdeError::InvalidParameter(format!(
            "tolerance must be positive, got {}",
            opts.tol
        )));
    }
    if init.dim() != lik.dim() {
        return Err(SdeError::DimensionMismatch(format!(
            "initial value has {} coordinates, likelihood has {}",
            init.dim(),
            lik.dim()
        )));
    }
    let bounds = init.bounds();
    let names = init.names();
    let mut theta = init.values().to_vec();
    let mut current = lik.value(&theta);
    if !current.is_finite() {
        return Err(SdeError::Numerical("log-likelihood is not finite at the initial value".into()));
    }
    let mut trace = vec![current];
    let mut flat_updates = 0;
    let mut clamped_updates = 0;
    let mut final_move = f64::INFINITY;
    let mut sweeps = 0;
    while sweeps < opts.max_sweeps {
        sweeps += 1;
        let before = theta.clone();
        for j in 0..theta.len() {
            let upd = update_coordinate(lik, &theta, j, &bounds[j], names)?;
            flat_updates += upd.flat as usize;
            clamped_updates += upd.clamped as usize;
            if upd.value == theta[j] {
                continue;
            }
            let old = theta[j];
            theta[j] = upd.value;
            let next = lik.value(&theta);
            if !next.is_finite() {
                return Err(SdeError::NonFiniteCoordinate {
                    coordinate: names[j].clone(),
                });
            }
            // Near the optimum the gain is below the rounding error of the
            // log-likelihood, so only a loss beyond that is a real loss.
            if next < current - ASCENT_SLACK * current.abs().max(1.0) {
                theta[j] = old;
            } else {
                current = next;
            }
        }
        trace.push(current);
        final_move = theta
            .iter()
            .zip(&before)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        if final_move <= opts.tol {
            break;
        }
    }
    let converged = final_move <= opts.tol;
    if !converged {
        debug!("block relaxation stopped after {sweeps} sweeps, move {final_move:e}");
    }
    Ok(MleResult {
        theta_hat: init.with_values_clamped(&theta),
        iterations: sweeps,
        final_move,
        loglik_trace: trace,
        converged,
        flat_updates,
        clamped_updates,
    })
}

/// Block-relaxation MLE for a panel, stopping when a full sweep moves theta
/// by at most `tol` in Euclidean norm.
pub fn block_relaxation_mle(panel: &Panel, init: &ThetaVector, tol: f64) -> Result<MleResult> {
    block_relaxation_mle_with(panel, init, &MleOptions::with_tol(tol))
}

pub fn block_relaxation_mle_with(
    panel: &Panel,
    init: &ThetaVector,
    opts: &MleOptions,
) -> Result<MleResult> {
    let lik = PanelLikelihood::new(panel)?;
    block_relaxation(lik.as_dyn(), init, opts)
}

/// Runs block relaxation from `starts` independent `Normal(0, 1)`
/// initializations; start `s` draws from the stream `(seed, s)`.
pub fn multi_start_mle(panel: &Panel, starts: usize, seed: u64, opts: &MleOptions) -> Result<Vec<MleResult>> {
    let lik = PanelLikelihood::new(panel)?;
    let lik = lik.as_dyn();
    (0..starts)
        .into_par_iter()
        .map(|s| {
            let mut rng = seed::rng(seed::derive_stream(seed, Stream::Init, &[s as u64]));
            let init = random_init(&panel.spec, &mut rng);
            block_relaxation(lik, &init, opts)
        })
        .collect()
}

/// Single `Normal(0, 1)` initialization drawn from `(seed, 0)`.
pub fn random_start(panel: &Panel, seed: u64) -> ThetaVector {
    let mut rng = seed::rng(seed::derive_stream(seed, Stream::Init, &[0]));
    random_init(&panel.spec, &mut rng)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSearchResult {
    pub theta: Vec<f64>,
    pub loglik: f64,
    /// The log-likelihood is constant over the grid.
    pub flat: bool,
    /// Spacing of the grid along each axis.
    pub cell: Vec<f64>,
}

pub const GRID_SEARCH_MAX_DIM: usize = 3;

/// Exhaustive maximizer over `resolution` equispaced points per axis of
/// `bounds` (the model bounds when `None`). Test oracle only.
pub fn grid_search_mle(panel: &Panel, resolution: usize, bounds: Option<&[Bounds]>) -> Result<GridSearchResult> {
    let dim = panel.spec.dim();
    if dim > GRID_SEARCH_MAX_DIM {
        return Err(SdeError::GridSearchDimension {
            dim,
            max: GRID_SEARCH_MAX_DIM,
        });
    }
    if resolution < 2 {
        return Err(SdeError::InvalidParameter("grid resolution must be at least 2".into()));
    }
    let bounds = bounds.unwrap_or(&panel.spec.bounds);
    if bounds.len() != dim {
        return Err(SdeError::DimensionMismatch(format!(
            "{} bounds for dimension {dim}",
            bounds.len()
        )));
    }
    let lik = PanelLikelihood::new(panel)?;
    let lik = lik.as_dyn();
    let cell: Vec<f64> = bounds
        .iter()
        .map(|b| (b.hi - b.lo) / (resolution - 1) as f64)
        .collect();
    let total = resolution.pow(dim as u32);
    let point = |mut idx: usize| -> Vec<f64> {
        let mut t = vec![0.0; dim];
        for a in (0..dim).rev() {
            let i = idx % resolution;
            idx /= resolution;
            t[a] = if i == resolution - 1 {
                bounds[a].hi
            } else {
                bounds[a].lo + i as f64 * cell[a]
            };
        }
        t
    };
    // Per-chunk maxima reduced in index order keep the result deterministic.
    let chunk = 4096;
    let partial: Vec<(usize, f64, f64)> = (0..total.div_ceil(chunk))
        .into_par_iter()
        .map(|c| {
            let mut best = (usize::MAX, f64::NEG_INFINITY);
            let mut lo = f64::INFINITY;
            for idx in c * chunk..((c + 1) * chunk).min(total) {
                let v = lik.value(&point(idx));
                lo = lo.min(v);
                if v > best.1 {
                    best = (idx, v);
                }
            }
            (best.0, best.1, lo)
        })
        .collect();
    let mut best = (0usize, f64::NEG_INFINITY);
    let mut lowest = f64::INFINITY;
    for (idx, v, lo) in partial {
        lowest = lowest.min(lo);
        if v > best.1 {
            best = (idx, v);
        }
    }
    let flat = best.1 - lowest <= 1e-12 * best.1.abs().max(1.0);
    let idx = if flat { 0 } else { best.0 };
    let theta = point(idx);
    let loglik = lik.value(&theta);
    Ok(GridSearchResult {
        theta,
        loglik,
        flat,
        cell,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AscentResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub sweeps: usize,
    pub converged: bool,
}

/// Coordinate-wise maximization of an arbitrary smooth objective inside a
/// box, using numerical derivatives. This is the hook other models use to
/// reuse the block-relaxation scheme.
pub fn coordinate_ascent(
    objective: &(dyn Fn(&[f64]) -> f64 + Sync),
    init: &[f64],
    bounds: &[Bounds],
    tol: f64,
    max_sweeps: usize,
) -> Result<AscentResult> {
    if init.len() != bounds.len() {
        return Err(SdeError::DimensionMismatch(format!(
            "{} initial values for {} bounds",
            init.len(),
            bounds.len()
        )));
    }
    let mut x: Vec<f64> = init.iter().zip(bounds).map(|(v, b)| b.clamp(*v)).collect();
    let mut value = objective(&x);
    if !value.is_finite() {
        return Err(SdeError::Numerical("objective is not finite at the initial value".into()));
    }
    let mut sweeps = 0;
    let mut converged = false;
    while sweeps < max_sweeps {
        sweeps += 1;
        let before = x.clone();
        for j in 0..x.len() {
            let base = x.clone();
            let f = |t: f64| {
                let mut w = base.clone();
                w[j] = t;
                let v = objective(&w);
                if v.is_finite() {
                    v
                } else {
                    f64::NEG_INFINITY
                }
            };
            let df = |t: f64| {
                let h = 1e-6 * t.abs().max(1.0);
                let (a, b) = (f(t + h), f(t - h));
                if a.is_finite() && b.is_finite() {
                    (a - b) / (2.0 * h)
                } else if a.is_finite() {
                    1.0
                } else {
                    -1.0
                }
            };
            let (t, _) = maximize_scalar(&f, &df, bounds[j].lo, bounds[j].hi, x[j])?;
            let ft = f(t);
            if ft >= value {
                x[j] = t;
                value = ft;
            }
        }
        let mv = x
            .iter()
            .zip(&before)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        if mv <= tol {
            converged = true;
            break;
        }
    }
    Ok(AscentResult {
        x,
        value,
        sweeps,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::likelihood::{log_likelihood, score, PanelStats};
    use crate::model::{CovariateRange, DiffusionSpec, DriftSpec, FactorFamily, ModelSpec, TimeGrid, Transform};
    use crate::simulate::{simulate_covariates, simulate_panel, CovariateGenerator, PanelShape};

    fn product_panel(seed: u64) -> Panel {
        let spec = ModelSpec::product_drift();
        let grid = TimeGrid::new(1.0, 100).unwrap();
        let cov = simulate_covariates(20, &grid, &CovariateGenerator::default(), Some(spec.drift.covariate_ranges[0]), seed)
            .unwrap();
        let shape = PanelShape::iid(20, grid, 0.0, cov).unwrap();
        let theta = spec.theta(vec![1.0, -1.0, 2.0, -2.0]).unwrap();
        simulate_panel(&spec, &theta, &shape, seed ^ 0xABCD).unwrap()
    }

    fn tanh_panel() -> Panel {
        let spec = ModelSpec::new(
            DriftSpec {
                transforms: vec![Transform::Identity],
                covariate_ranges: vec![CovariateRange::new(-2.0, 2.0).unwrap()],
                factor: FactorFamily::Tanh,
            },
            DiffusionSpec::Constant { sigma: 1.0 },
        )
        .unwrap()
        .with_bounds(vec![Bounds { lo: -10.0, hi: 10.0 }; 3])
        .unwrap();
        let grid = TimeGrid::new(2.0, 200).unwrap();
        let cov = simulate_covariates(10, &grid, &CovariateGenerator { xi_mean: -1.0, xi_sd: 0.2, z0: 0.5 }, None, 4)
            .unwrap();
        let shape = PanelShape::iid(10, grid, 1.0, cov).unwrap();
        let theta = spec.theta(vec![-2.0, 0.5, 1.5]).unwrap();
        simulate_panel(&spec, &theta, &shape, 5).unwrap()
    }

    #[test]
    fn stationary_coordinate_is_unchanged() {
        let panel = product_panel(1);
        let mut theta = panel.spec.theta(vec![0.5, -0.5, 1.0, -1.0]).unwrap();
        let upd = conditional_update(&panel, &theta, 2).unwrap();
        theta = theta.with_values_clamped(&[0.5, -0.5, upd.value, -1.0]);
        let again = conditional_update(&panel, &theta, 2).unwrap();
        assert!((again.value - upd.value).abs() <= 1e-10);
    }

    #[test]
    fn closed_form_matches_bisection_root() {
        let panel = product_panel(2);
        let theta = panel.spec.theta(vec![0.7, -1.3, 1.5, -0.5]).unwrap();
        let stats = PanelStats::new(&panel).unwrap().unwrap();
        for j in 0..4 {
            let upd = conditional_update(&panel, &theta, j).unwrap();
            let slope = |t: f64| {
                let mut v = theta.values().to_vec();
                v[j] = t;
                stats.coordinate_quadratic(&v, j).slope(t)
            };
            let (mut a, mut b) = (-100.0, 100.0);
            assert!(slope(a) > 0.0 && slope(b) < 0.0);
            for _ in 0..200 {
                let m = 0.5 * (a + b);
                if slope(m) > 0.0 {
                    a = m;
                } else {
                    b = m;
                }
            }
            assert!((upd.value - 0.5 * (a + b)).abs() < 1e-8, "coordinate {j}");
        }
    }

    #[test]
    fn dense_grid_maximum_is_within_one_cell() {
        let panel = product_panel(3);
        let theta = panel.spec.theta(vec![0.4, -0.8, 1.1, -1.7]).unwrap();
        for j in 0..4 {
            let upd = conditional_update(&panel, &theta, j).unwrap();
            let b = theta.bounds()[j];
            let n = 10_000;
            let cell = (b.hi - b.lo) / (n - 1) as f64;
            let mut best = (0.0, f64::NEG_INFINITY);
            for i in 0..n {
                let mut v = theta.values().to_vec();
                v[j] = b.lo + i as f64 * cell;
                let l = log_likelihood(&panel, &v).unwrap();
                if l > best.1 {
                    best = (v[j], l);
                }
            }
            assert!((best.0 - upd.value).abs() <= cell, "coordinate {j}: grid {} vs {}", best.0, upd.value);
        }
    }

    #[test]
    fn flat_direction_is_left_unchanged() {
        let panel = product_panel(4);
        // With xi = 0 the likelihood does not depend on beta.
        let theta = panel.spec.theta(vec![0.0, 0.0, 0.3, 0.7]).unwrap();
        let upd = conditional_update(&panel, &theta, 3).unwrap();
        assert!(upd.flat);
        assert_eq!(upd.value, 0.7);
        assert_eq!(upd.method, UpdateMethod::Unchanged);
    }

    #[test]
    fn updates_clamp_to_bounds() {
        let panel = product_panel(5);
        let spec = panel.spec.clone().with_bounds(vec![Bounds { lo: -0.1, hi: 0.1 }; 4]).unwrap();
        let panel = Panel::new(spec, panel.subjects).unwrap();
        let theta = panel.spec.theta(vec![0.1, -0.1, 0.1, -0.1]).unwrap();
        let res = block_relaxation_mle(&panel, &theta, 1e-8).unwrap();
        assert!(res.theta_hat.values().iter().all(|v| v.abs() <= 0.1));
        assert!(res.clamped_updates > 0);
    }

    #[test]
    fn trace_is_nondecreasing_and_converges() {
        let panel = product_panel(6);
        let init = random_start(&panel, 6);
        let res = block_relaxation_mle(&panel, &init, 1e-5).unwrap();
        assert!(res.converged);
        for w in res.loglik_trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-12 * w[0].abs().max(1.0));
        }
    }

    #[test]
    fn stationary_start_converges_in_one_sweep() {
        let panel = product_panel(7);
        let init = random_start(&panel, 7);
        let first = block_relaxation_mle(&panel, &init, 1e-13).unwrap();
        let again = block_relaxation_mle(&panel, &first.theta_hat, 1e-8).unwrap();
        assert_eq!(again.iterations, 1);
        assert!(again.final_move < 1e-8);
    }

    #[test]
    fn newton_branch_reaches_stationarity() {
        let panel = tanh_panel();
        let init = panel.spec.theta(vec![-1.0, 0.0, 1.0]).unwrap();
        let res = block_relaxation_mle(&panel, &init, 1e-9).unwrap();
        assert!(res.converged);
        let s = score(&panel, &res.theta_hat).unwrap();
        for g in &s.gradient {
            assert!(g.abs() < 1e-4, "{:?}", s.gradient);
        }
        for w in res.loglik_trace.windows(2) {
            assert!(w[1] >= w[0] - ASCENT_SLACK * w[0].abs().max(1.0));
        }
    }

    #[test]
    fn grid_search_refuses_high_dimension() {
        let panel = product_panel(8);
        let err = grid_search_mle(&panel, 10, None).unwrap_err();
        assert!(matches!(err, SdeError::GridSearchDimension { dim: 4, .. }));
    }

    #[test]
    fn maximize_scalar_handles_monotone_objectives() {
        let (x, _) = maximize_scalar(&|t| t, &|_| 1.0, -1.0, 2.0, 0.0).unwrap();
        assert_eq!(x, 2.0);
        let (x, _) = maximize_scalar(&|t| -(t - 0.3).powi(2), &|t| -2.0 * (t - 0.3), -1.0, 2.0, 1.5).unwrap();
        assert!((x - 0.3).abs() < 1e-9);
    }

    #[test]
    fn coordinate_ascent_finds_quadratic_maximum() {
        let obj = |x: &[f64]| -(x[0] - 1.0).powi(2) - 2.0 * (x[1] + 0.5).powi(2) - 0.5 * x[0] * x[1];
        let b = vec![Bounds { lo: -5.0, hi: 5.0 }; 2];
        let res = coordinate_ascent(&obj, &[0.0, 0.0], &b, 1e-10, 1000).unwrap();
        assert!(res.converged);
        // Stationarity: -2(x0 - 1) - 0.5 x1 = 0, -4(x1 + 0.5) - 0.5 x0 = 0.
        let x1 = -2.5 / (4.0 - 0.125);
        let x0 = 1.0 - 0.25 * x1;
        assert!((res.x[0] - x0).abs() < 1e-6 && (res.x[1] - x1).abs() < 1e-6);
    }
}
