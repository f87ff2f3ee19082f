//! Euler-Maruyama simulation of covariate and subject paths, and the panel
//! container that the inference modules consume.

use log::debug;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SdeError};
use crate::model::{CovariateRange, DiffusionSpec, DriftSpec, ModelSpec, ThetaVector, TimeGrid};
use crate::seed::{self, Stream};

/// Reflection floor for state-positive diffusions.
pub const POSITIVITY_FLOOR: f64 = 1e-8;

/// Covariate values on a grid, stored knot-major: `values[k * p + l]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariatePath {
    pub subject: usize,
    pub grid: TimeGrid,
    n_covariates: usize,
    values: Vec<f64>,
    /// Number of values moved onto a range boundary.
    pub clamped: usize,
}

impl CovariatePath {
    /// `columns[l][k]` holds covariate `l` at knot `k`.
    pub fn from_columns(subject: usize, grid: TimeGrid, columns: &[Vec<f64>]) -> Result<Self> {
        let p = columns.len();
        let m = grid.n_knots();
        let mut values = vec![0.0; m * p];
        for (l, col) in columns.iter().enumerate() {
            if col.len() != m {
                return Err(SdeError::DimensionMismatch(format!(
                    "covariate {} of subject {subject} has {} values for {m} knots",
                    l + 1,
                    col.len()
                )));
            }
            for (k, v) in col.iter().enumerate() {
                if !v.is_finite() {
                    return Err(SdeError::InvalidParameter(format!(
                        "covariate {} of subject {subject} is not finite at knot {k}",
                        l + 1
                    )));
                }
                values[k * p + l] = *v;
            }
        }
        Ok(Self {
            subject,
            grid,
            n_covariates: p,
            values,
            clamped: 0,
        })
    }

    /// Path with no covariates.
    pub fn empty(subject: usize, grid: TimeGrid) -> Self {
        Self {
            subject,
            grid,
            n_covariates: 0,
            values: Vec::new(),
            clamped: 0,
        }
    }

    pub fn n_covariates(&self) -> usize {
        self.n_covariates
    }

    /// Covariate row at knot `k`.
    #[inline]
    pub fn at(&self, k: usize) -> &[f64] {
        let p = self.n_covariates;
        &self.values[k * p..(k + 1) * p]
    }

    pub fn column(&self, l: usize) -> Vec<f64> {
        (0..self.grid.n_knots())
            .map(|k| self.values[k * self.n_covariates + l])
            .collect()
    }

    /// Clamp every value into its range, counting the moves.
    pub fn clamp_to(&mut self, ranges: &[CovariateRange]) {
        let p = self.n_covariates;
        let mut moved = 0;
        for (i, v) in self.values.iter_mut().enumerate() {
            let (c, hit) = ranges[i % p].clamp(*v);
            if hit {
                *v = c;
                moved += 1;
            }
        }
        if moved > 0 {
            debug!(
                "subject {}: clamped {moved} covariate values into the declared range",
                self.subject
            );
        }
        self.clamped += moved;
    }

    /// Concatenate single-covariate paths on a common grid.
    pub fn stack(subject: usize, parts: &[CovariatePath]) -> Result<Self> {
        let grid = parts
            .first()
            .map(|c| c.grid)
            .ok_or_else(|| SdeError::Empty("no covariate paths to stack".into()))?;
        let mut columns = Vec::new();
        for part in parts {
            if part.grid != grid {
                return Err(SdeError::DimensionMismatch(
                    "stacked covariates must share a grid".into(),
                ));
            }
            for l in 0..part.n_covariates {
                columns.push(part.column(l));
            }
        }
        let mut out = Self::from_columns(subject, grid, &columns)?;
        out.clamped = parts.iter().map(|c| c.clamped).sum();
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectPath {
    pub subject: usize,
    pub x0: f64,
    pub grid: TimeGrid,
    pub states: Vec<f64>,
    /// Number of reflections at the positivity floor.
    pub reflections: usize,
}

impl SubjectPath {
    pub fn new(subject: usize, grid: TimeGrid, states: Vec<f64>) -> Result<Self> {
        if states.len() != grid.n_knots() {
            return Err(SdeError::DimensionMismatch(format!(
                "subject {subject}: {} states for {} knots",
                states.len(),
                grid.n_knots()
            )));
        }
        if let Some(k) = states.iter().position(|v| !v.is_finite()) {
            return Err(SdeError::InvalidParameter(format!(
                "subject {subject}: state at knot {k} is not finite"
            )));
        }
        Ok(Self {
            subject,
            x0: states[0],
            grid,
            states,
            reflections: 0,
        })
    }

    pub fn x_end(&self) -> f64 {
        *self.states.last().expect("paths have at least two knots")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subject {
    pub id: String,
    pub path: SubjectPath,
    pub covariates: CovariatePath,
    /// Subject-specific diffusion overriding the model default.
    pub diffusion: Option<DiffusionSpec>,
}

/// `n` subject paths with their covariates under a shared model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Panel {
    pub spec: ModelSpec,
    pub subjects: Vec<Subject>,
}

impl Panel {
    pub fn new(spec: ModelSpec, subjects: Vec<Subject>) -> Result<Self> {
        if subjects.is_empty() {
            return Err(SdeError::Empty("a panel needs at least one subject".into()));
        }
        spec.validate()?;
        for s in &subjects {
            if s.path.grid != s.covariates.grid {
                return Err(SdeError::DimensionMismatch(format!(
                    "subject {}: path and covariates are on different grids",
                    s.id
                )));
            }
            if s.covariates.n_covariates() != spec.n_covariates() {
                return Err(SdeError::DimensionMismatch(format!(
                    "subject {}: {} covariates, model expects {}",
                    s.id,
                    s.covariates.n_covariates(),
                    spec.n_covariates()
                )));
            }
            if let Some(d) = &s.diffusion {
                d.validate()?;
            }
        }
        Ok(Self { spec, subjects })
    }

    pub fn n_subjects(&self) -> usize {
        self.subjects.len()
    }

    pub fn diffusion_for(&self, i: usize) -> &DiffusionSpec {
        self.subjects[i]
            .diffusion
            .as_ref()
            .unwrap_or(&self.spec.diffusion)
    }

    /// Everything needed to re-simulate a panel of the same design.
    pub fn shape(&self) -> PanelShape {
        PanelShape {
            ids: self.subjects.iter().map(|s| s.id.clone()).collect(),
            grids: self.subjects.iter().map(|s| s.path.grid).collect(),
            x0s: self.subjects.iter().map(|s| s.path.x0).collect(),
            covariates: self.subjects.iter().map(|s| s.covariates.clone()).collect(),
            diffusions: self.subjects.iter().map(|s| s.diffusion).collect(),
        }
    }

    /// Total number of simulated states (knots after the first).
    pub fn n_observations(&self) -> usize {
        self.subjects.iter().map(|s| s.path.grid.n_steps()).sum()
    }
}

/// Design of a panel without its observed states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelShape {
    pub ids: Vec<String>,
    pub grids: Vec<TimeGrid>,
    pub x0s: Vec<f64>,
    pub covariates: Vec<CovariatePath>,
    pub diffusions: Vec<Option<DiffusionSpec>>,
}

impl PanelShape {
    /// `n` identical subjects (the iid design).
    pub fn iid(n: usize, grid: TimeGrid, x0: f64, covariates: Vec<CovariatePath>) -> Result<Self> {
        if covariates.len() != n {
            return Err(SdeError::DimensionMismatch(format!(
                "{n} subjects but {} covariate paths",
                covariates.len()
            )));
        }
        Ok(Self {
            ids: (1..=n).map(|i| i.to_string()).collect(),
            grids: vec![grid; n],
            x0s: vec![x0; n],
            covariates,
            diffusions: vec![None; n],
        })
    }

    pub fn n_subjects(&self) -> usize {
        self.x0s.len()
    }

    fn validate(&self) -> Result<()> {
        let n = self.x0s.len();
        if n == 0 {
            return Err(SdeError::Empty("panel shape has no subjects".into()));
        }
        if self.grids.len() != n
            || self.covariates.len() != n
            || self.ids.len() != n
            || self.diffusions.len() != n
        {
            return Err(SdeError::DimensionMismatch(
                "panel shape fields have different lengths".into(),
            ));
        }
        Ok(())
    }
}

/// Law of a covariate path `dz = xi z dt + dW`, `xi ~ Normal(xi_mean, xi_sd^2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CovariateGenerator {
    pub xi_mean: f64,
    pub xi_sd: f64,
    #[serde(default)]
    pub z0: f64,
}

impl Default for CovariateGenerator {
    fn default() -> Self {
        Self {
            xi_mean: 7.0,
            xi_sd: 1.0,
            z0: 0.0,
        }
    }
}

/// Standard-normal increments scaled to `N(0, step)`, one per grid step.
pub fn wiener_increments(seed: u64, grid: &TimeGrid) -> Vec<f64> {
    let mut rng = seed::rng(seed);
    let sd = grid.step().sqrt();
    (0..grid.n_steps())
        .map(|_| {
            let e: f64 = StandardNormal.sample(&mut rng);
            sd * e
        })
        .collect()
}

/// Sums consecutive pairs of increments: the same Wiener path on a grid
/// with half as many steps.
pub fn coarsen_increments(fine: &[f64]) -> Vec<f64> {
    fine.chunks_exact(2).map(|c| c[0] + c[1]).collect()
}

/// Simulates one covariate path per subject. Subject `i` draws its growth
/// coefficient and its noise from streams keyed by `(seed, i)`. When `range`
/// is given the state is clamped after every step.
pub fn simulate_covariates(
    n: usize,
    grid: &TimeGrid,
    generator: &CovariateGenerator,
    range: Option<CovariateRange>,
    seed: u64,
) -> Result<Vec<CovariatePath>> {
    if n == 0 {
        return Err(SdeError::Empty("need at least one subject".into()));
    }
    if !(generator.xi_sd >= 0.0) || !generator.xi_mean.is_finite() || !generator.z0.is_finite() {
        return Err(SdeError::InvalidParameter(format!(
            "invalid covariate generator {generator:?}"
        )));
    }
    let coef = Normal::new(generator.xi_mean, generator.xi_sd)
        .map_err(|e| SdeError::InvalidParameter(e.to_string()))?;
    let step = grid.step();
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut crng = seed::rng(seed::derive_stream(seed, Stream::CovariateCoefficient, &[i as u64]));
            let xi: f64 = coef.sample(&mut crng);
            let dw = wiener_increments(
                seed::derive_stream(seed, Stream::CovariateNoise, &[i as u64]),
                grid,
            );
            let mut z = Vec::with_capacity(grid.n_knots());
            let mut clamped = 0;
            let mut cur = generator.z0;
            if let Some(r) = range {
                let (c, hit) = r.clamp(cur);
                cur = c;
                clamped += hit as usize;
            }
            z.push(cur);
            for (k, dwk) in dw.iter().enumerate() {
                let mut next = cur + xi * cur * step + dwk;
                if !next.is_finite() {
                    return Err(SdeError::SimulationOverflow {
                        subject: i,
                        step: k + 1,
                    });
                }
                if let Some(r) = range {
                    let (c, hit) = r.clamp(next);
                    next = c;
                    clamped += hit as usize;
                }
                z.push(next);
                cur = next;
            }
            let mut path = CovariatePath::from_columns(i, *grid, &[z])?;
            path.clamped = clamped;
            if clamped > 0 {
                debug!("covariate path {i}: {clamped} values clamped into the declared range");
            }
            Ok(path)
        })
        .collect()
}

/// Simulates one covariate path per declared range and stacks them per
/// subject. A single covariate uses `seed` directly, so it agrees with
/// [`simulate_covariates`]; column `l` of several uses `(seed, l)`.
pub fn simulate_covariate_panel(
    n: usize,
    grid: &TimeGrid,
    generator: &CovariateGenerator,
    ranges: &[CovariateRange],
    seed: u64,
) -> Result<Vec<CovariatePath>> {
    match ranges.len() {
        0 => Ok((0..n).map(|i| CovariatePath::empty(i, *grid)).collect()),
        1 => simulate_covariates(n, grid, generator, Some(ranges[0]), seed),
        p => {
            let columns = (0..p)
                .map(|l| simulate_covariates(n, grid, generator, Some(ranges[l]), seed::derive(seed, &[l as u64])))
                .collect::<Result<Vec<_>>>()?;
            (0..n)
                .map(|i| {
                    let parts: Vec<CovariatePath> = columns.iter().map(|c| c[i].clone()).collect();
                    CovariatePath::stack(i, &parts)
                })
                .collect()
        }
    }
}

/// Euler-Maruyama path driven by the given Wiener increments.
#[allow(clippy::too_many_arguments)]
pub fn simulate_path_with_increments(
    drift: &DriftSpec,
    theta: &[f64],
    diffusion: &DiffusionSpec,
    covariates: &CovariatePath,
    x0: f64,
    grid: &TimeGrid,
    increments: &[f64],
) -> Result<SubjectPath> {
    let subject = covariates.subject;
    if covariates.grid != *grid {
        return Err(SdeError::DimensionMismatch(format!(
            "subject {subject}: covariates are not on the simulation grid"
        )));
    }
    if covariates.n_covariates() != drift.n_covariates() {
        return Err(SdeError::DimensionMismatch(format!(
            "subject {subject}: {} covariates, drift expects {}",
            covariates.n_covariates(),
            drift.n_covariates()
        )));
    }
    if theta.len() != drift.n_params() {
        return Err(SdeError::DimensionMismatch(format!(
            "theta has {} coordinates, drift expects {}",
            theta.len(),
            drift.n_params()
        )));
    }
    if increments.len() != grid.n_steps() {
        return Err(SdeError::DimensionMismatch(format!(
            "{} increments for {} steps",
            increments.len(),
            grid.n_steps()
        )));
    }
    if !x0.is_finite() {
        return Err(SdeError::InvalidParameter(format!("initial value {x0} is not finite")));
    }
    let positive = diffusion.requires_positive_state();
    if positive && x0 <= 0.0 {
        return Err(SdeError::DiffusionDomain {
            subject,
            step: 0,
            state: x0,
        });
    }
    let step = grid.step();
    let mut states = Vec::with_capacity(grid.n_knots());
    states.push(x0);
    let mut x = x0;
    let mut reflections = 0;
    for (k, dw) in increments.iter().enumerate() {
        let sigma = diffusion.sigma(x).ok_or(SdeError::DiffusionDomain {
            subject,
            step: k,
            state: x,
        })?;
        let f = drift.drift(theta, covariates.at(k), x);
        let mut next = x + f * step + sigma * dw;
        if !next.is_finite() {
            return Err(SdeError::SimulationOverflow {
                subject,
                step: k + 1,
            });
        }
        if positive && next <= POSITIVITY_FLOOR {
            next = 2.0 * POSITIVITY_FLOOR - next;
            reflections += 1;
        }
        states.push(next);
        x = next;
    }
    if reflections > 0 {
        debug!("subject {subject}: {reflections} reflections at the positivity floor");
    }
    Ok(SubjectPath {
        subject,
        x0,
        grid: *grid,
        states,
        reflections,
    })
}

/// Euler-Maruyama path whose increments come from `seed`.
pub fn simulate_path(
    drift: &DriftSpec,
    theta: &ThetaVector,
    diffusion: &DiffusionSpec,
    covariates: &CovariatePath,
    x0: f64,
    grid: &TimeGrid,
    seed: u64,
) -> Result<SubjectPath> {
    let dw = wiener_increments(seed, grid);
    simulate_path_with_increments(drift, theta.values(), diffusion, covariates, x0, grid, &dw)
}

/// Seed of subject `i`'s Wiener increments in a panel simulated from `seed`.
pub fn subject_wiener_seed(seed: u64, i: usize) -> u64 {
    seed::derive_stream(seed, Stream::Wiener, &[i as u64])
}

/// Simulates every subject of `shape` under `theta`. Subject `i` uses the
/// Wiener stream `(seed, i)`, so the result does not depend on scheduling.
pub fn simulate_panel(
    spec: &ModelSpec,
    theta: &ThetaVector,
    shape: &PanelShape,
    seed: u64,
) -> Result<Panel> {
    shape.validate()?;
    if theta.dim() != spec.dim() {
        return Err(SdeError::DimensionMismatch(format!(
            "theta has {} coordinates, model has {}",
            theta.dim(),
            spec.dim()
        )));
    }
    let subjects = (0..shape.n_subjects())
        .into_par_iter()
        .map(|i| {
            let diffusion = shape.diffusions[i].as_ref().unwrap_or(&spec.diffusion);
            let mut cov = shape.covariates[i].clone();
            cov.subject = i;
            let dw = wiener_increments(subject_wiener_seed(seed, i), &shape.grids[i]);
            let path = simulate_path_with_increments(
                &spec.drift,
                theta.values(),
                diffusion,
                &cov,
                shape.x0s[i],
                &shape.grids[i],
                &dw,
            )?;
            Ok(Subject {
                id: shape.ids[i].clone(),
                path,
                covariates: cov,
                diffusion: shape.diffusions[i],
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Panel::new(spec.clone(), subjects)
}

/// Draws `theta` coordinates independently from `Normal(0, 1)`, clamped into bounds.
pub fn random_init<R: Rng>(spec: &ModelSpec, rng: &mut R) -> ThetaVector {
    let values: Vec<f64> = spec
        .bounds
        .iter()
        .map(|b| {
            let e: f64 = StandardNormal.sample(rng);
            b.clamp(e)
        })
        .collect();
    spec.theta(values).expect("clamped values are in bounds")
}
