//! Discretized Girsanov likelihood.
//!
//! For subject `i`, with drift `f = phi * b` and left-point sums on the
//! subject's grid,
//!
//! ```text
//! U_i = sum_k f(t_k, X_k) / sigma^2(X_k) * (X_{k+1} - X_k)
//! V_i = sum_k f(t_k, X_k)^2 / sigma^2(X_k) * step
//! ```
//!
//! and the log-likelihood against the null-drift measure is
//! `sum_i (U_i - V_i / 2)`. Only differences of this quantity between
//! parameter values are meaningful.

use log::warn;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SdeError};
use crate::model::{DiffusionSpec, DriftSpec, ThetaVector};
use crate::simulate::{CovariatePath, Panel, SubjectPath};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GirsanovStats {
    pub u: f64,
    pub v: f64,
}

impl GirsanovStats {
    pub fn log_density(&self) -> f64 {
        self.u - 0.5 * self.v
    }
}

fn inv_variance(diffusion: &DiffusionSpec, x: f64, subject: usize, step: usize) -> Result<f64> {
    match diffusion.sigma(x) {
        Some(s) if s.is_finite() && s > 0.0 => Ok(1.0 / (s * s)),
        _ => Err(SdeError::SingularDiffusion { subject, step }),
    }
}

/// `(U, V)` for one subject by direct left-point summation.
pub fn girsanov_stats(
    drift: &DriftSpec,
    diffusion: &DiffusionSpec,
    path: &SubjectPath,
    covariates: &CovariatePath,
    theta: &[f64],
) -> Result<GirsanovStats> {
    if path.grid != covariates.grid {
        return Err(SdeError::DimensionMismatch(format!(
            "subject {}: path and covariates are on different grids",
            path.subject
        )));
    }
    let step = path.grid.step();
    let mut u = 0.0;
    let mut v = 0.0;
    for k in 0..path.grid.n_steps() {
        let x = path.states[k];
        let w = inv_variance(diffusion, x, path.subject, k)?;
        let f = drift.drift(theta, covariates.at(k), x);
        u += f * w * (path.states[k + 1] - x);
        v += f * f * w * step;
    }
    Ok(GirsanovStats { u, v })
}

/// Per-subject `(U_i, V_i)` in subject order.
pub fn panel_girsanov_stats(panel: &Panel, theta: &[f64]) -> Result<Vec<GirsanovStats>> {
    check_dim(panel, theta)?;
    panel
        .subjects
        .iter()
        .enumerate()
        .map(|(i, s)| {
            girsanov_stats(
                &panel.spec.drift,
                panel.diffusion_for(i),
                &s.path,
                &s.covariates,
                theta,
            )
        })
        .collect()
}

fn check_dim(panel: &Panel, theta: &[f64]) -> Result<()> {
    if theta.len() != panel.spec.dim() {
        return Err(SdeError::DimensionMismatch(format!(
            "theta has {} coordinates, model has {}",
            theta.len(),
            panel.spec.dim()
        )));
    }
    Ok(())
}

/// `sum_i (U_i - V_i / 2)`, summed in subject order.
pub fn log_likelihood(panel: &Panel, theta: &[f64]) -> Result<f64> {
    Ok(panel_girsanov_stats(panel, theta)?
        .iter()
        .map(GirsanovStats::log_density)
        .sum())
}

/// Panel with the diffusion weights `1 / sigma^2(X_k)` evaluated once.
#[derive(Debug, Clone)]
pub struct PreparedPanel<'a> {
    panel: &'a Panel,
    inv_var: Vec<Vec<f64>>,
}

impl<'a> PreparedPanel<'a> {
    pub fn new(panel: &'a Panel) -> Result<Self> {
        let inv_var = panel
            .subjects
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let d = panel.diffusion_for(i);
                (0..s.path.grid.n_steps())
                    .map(|k| inv_variance(d, s.path.states[k], i, k))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { panel, inv_var })
    }

    pub fn panel(&self) -> &Panel {
        self.panel
    }

    fn drift(&self) -> &DriftSpec {
        &self.panel.spec.drift
    }

    pub fn log_likelihood(&self, theta: &[f64]) -> f64 {
        let drift = self.drift();
        let mut total = 0.0;
        for (s, w) in self.panel.subjects.iter().zip(&self.inv_var) {
            let step = s.path.grid.step();
            let x = &s.path.states;
            let mut u = 0.0;
            let mut v = 0.0;
            for k in 0..w.len() {
                let f = drift.drift(theta, s.covariates.at(k), x[k]);
                u += f * w[k] * (x[k + 1] - x[k]);
                v += f * f * w[k] * step;
            }
            total += u - 0.5 * v;
        }
        total
    }

    /// Analytic gradient `sum_k df/dtheta / sigma^2 * (dX - f step)`.
    pub fn analytic_score(&self, theta: &[f64]) -> Vec<f64> {
        let drift = self.drift();
        let dim = theta.len();
        let mut grad = vec![0.0; dim];
        let mut df = vec![0.0; dim];
        for (s, w) in self.panel.subjects.iter().zip(&self.inv_var) {
            let step = s.path.grid.step();
            let x = &s.path.states;
            for k in 0..w.len() {
                let z = s.covariates.at(k);
                let f = drift.drift(theta, z, x[k]);
                drift.drift_gradient(theta, z, x[k], &mut df);
                let r = w[k] * (x[k + 1] - x[k] - f * step);
                for (g, d) in grad.iter_mut().zip(&df) {
                    *g += d * r;
                }
            }
        }
        grad
    }

    /// Central differences of the log-likelihood with step `1e-6 * max(1, |theta_j|)`.
    pub fn finite_difference_score(&self, theta: &[f64]) -> Vec<f64> {
        let mut t = theta.to_vec();
        (0..theta.len())
            .map(|j| {
                let h = fd_step(theta[j]);
                t[j] = theta[j] + h;
                let up = self.log_likelihood(&t);
                t[j] = theta[j] - h;
                let down = self.log_likelihood(&t);
                t[j] = theta[j];
                (up - down) / (2.0 * h)
            })
            .collect()
    }

    /// Coefficients of the log-likelihood restricted to coordinate `j`,
    /// computed from path sums. `None` when the drift is not affine in `j`.
    pub fn coordinate_quadratic(&self, theta: &[f64], j: usize) -> Option<CoordinateQuadratic> {
        let drift = self.drift();
        if !drift.is_affine_in(j) {
            return None;
        }
        let mut df = vec![0.0; theta.len()];
        let (mut a, mut c, mut d) = (0.0, 0.0, 0.0);
        for (s, w) in self.panel.subjects.iter().zip(&self.inv_var) {
            let step = s.path.grid.step();
            let x = &s.path.states;
            for k in 0..w.len() {
                let z = s.covariates.at(k);
                drift.drift_gradient(theta, z, x[k], &mut df);
                let alpha = df[j];
                let gamma = drift.drift(theta, z, x[k]) - theta[j] * alpha;
                a += alpha * w[k] * (x[k + 1] - x[k]);
                c += alpha * alpha * w[k] * step;
                d += 2.0 * alpha * gamma * w[k] * step;
            }
        }
        Some(CoordinateQuadratic { a, c, d })
    }
}

pub(crate) fn fd_step(v: f64) -> f64 {
    1e-6 * v.abs().max(1.0)
}

/// Restriction of the log-likelihood to one coordinate `t` with the others
/// fixed: `a t - (c t^2 + d t) / 2 + const`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoordinateQuadratic {
    pub a: f64,
    pub c: f64,
    pub d: f64,
}

impl CoordinateQuadratic {
    pub fn slope(&self, t: f64) -> f64 {
        self.a - self.c * t - 0.5 * self.d
    }

    /// Stationary point, `None` when the curvature vanishes.
    pub fn maximizer(&self) -> Option<f64> {
        (self.c > 0.0).then(|| (self.a - 0.5 * self.d) / self.c)
    }
}

/// Exact quadratic-form representation of the log-likelihood for drift
/// families linear in every parameter block.
///
/// With covariate design `h = (1, g_1(z), ..., g_p(z))` and factor basis
/// `k = (offset(x), basis_1(x), ..., basis_q(x))`, the drift is
/// `w . (h (x) k)` where `w_{l,m} = xi_l * beta~_m` and `beta~ = (1, beta)`.
/// Then `log L = w . s1 - w' s2 w / 2` with `s1`, `s2` accumulated once.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelStats {
    n_xi: usize,
    n_basis: usize,
    s1: Vec<f64>,
    s2: Vec<f64>,
}

impl PanelStats {
    /// `None` when the factor family is not linear in its parameters.
    pub fn new(panel: &Panel) -> Result<Option<Self>> {
        let prepared = PreparedPanel::new(panel)?;
        Ok(Self::from_prepared(&prepared))
    }

    pub fn from_prepared(prepared: &PreparedPanel<'_>) -> Option<Self> {
        let panel = prepared.panel;
        let drift = &panel.spec.drift;
        if !drift.factor.is_linear_in_params() {
            return None;
        }
        let n_xi = drift.n_xi();
        let n_basis = drift.factor.n_params() + 1;
        let dim = n_xi * n_basis;
        let mut s1 = vec![0.0; dim];
        let mut s2 = vec![0.0; dim * dim];
        let mut h = vec![0.0; n_xi];
        let mut kb = vec![0.0; n_basis];
        let mut feat = vec![0.0; dim];
        for (s, w) in panel.subjects.iter().zip(&prepared.inv_var) {
            let step = s.path.grid.step();
            let x = &s.path.states;
            for k in 0..w.len() {
                drift.design(s.covariates.at(k), &mut h);
                drift.factor.extended_basis(x[k], &mut kb);
                for l in 0..n_xi {
                    for m in 0..n_basis {
                        feat[l * n_basis + m] = h[l] * kb[m];
                    }
                }
                let du = w[k] * (x[k + 1] - x[k]);
                let dv = w[k] * step;
                for r in 0..dim {
                    s1[r] += feat[r] * du;
                    let fr = feat[r] * dv;
                    for c in r..dim {
                        s2[r * dim + c] += fr * feat[c];
                    }
                }
            }
        }
        for r in 0..dim {
            for c in 0..r {
                s2[r * dim + c] = s2[c * dim + r];
            }
        }
        Some(Self {
            n_xi,
            n_basis,
            s1,
            s2,
        })
    }

    pub fn dim(&self) -> usize {
        self.n_xi + self.n_basis - 1
    }

    fn weights(&self, theta: &[f64], out: &mut [f64]) {
        let (xi, beta) = theta.split_at(self.n_xi);
        for l in 0..self.n_xi {
            out[l * self.n_basis] = xi[l];
            for m in 1..self.n_basis {
                out[l * self.n_basis + m] = xi[l] * beta[m - 1];
            }
        }
    }

    fn quad(&self, u: &[f64], v: &[f64]) -> f64 {
        let dim = u.len();
        let mut acc = 0.0;
        for r in 0..dim {
            if u[r] == 0.0 {
                continue;
            }
            let row = &self.s2[r * dim..(r + 1) * dim];
            let mut inner = 0.0;
            for c in 0..dim {
                inner += row[c] * v[c];
            }
            acc += u[r] * inner;
        }
        acc
    }

    pub fn log_likelihood(&self, theta: &[f64]) -> f64 {
        let mut w = vec![0.0; self.s1.len()];
        self.weights(theta, &mut w);
        let lin: f64 = w.iter().zip(&self.s1).map(|(a, b)| a * b).sum();
        lin - 0.5 * self.quad(&w, &w)
    }

    /// Exact restriction to coordinate `j`.
    pub fn coordinate_quadratic(&self, theta: &[f64], j: usize) -> CoordinateQuadratic {
        let dim = self.s1.len();
        let mut gamma = vec![0.0; dim];
        self.weights(theta, &mut gamma);
        let mut alpha = vec![0.0; dim];
        if j < self.n_xi {
            let beta = &theta[self.n_xi..];
            for m in 0..self.n_basis {
                let idx = j * self.n_basis + m;
                alpha[idx] = if m == 0 { 1.0 } else { beta[m - 1] };
                gamma[idx] = 0.0;
            }
        } else {
            let m = j - self.n_xi + 1;
            for l in 0..self.n_xi {
                let idx = l * self.n_basis + m;
                alpha[idx] = theta[l];
                gamma[idx] = 0.0;
            }
        }
        let a = alpha.iter().zip(&self.s1).map(|(x, y)| x * y).sum();
        let c = self.quad(&alpha, &alpha);
        let d = 2.0 * self.quad(&alpha, &gamma);
        CoordinateQuadratic { a, c, d }
    }

    pub fn score(&self, theta: &[f64]) -> Vec<f64> {
        (0..theta.len())
            .map(|j| self.coordinate_quadratic(theta, j).slope(theta[j]))
            .collect()
    }
}

/// A log-likelihood the coordinate-wise optimizers and samplers can drive.
pub trait LogLikelihood: Sync {
    fn dim(&self) -> usize;
    fn value(&self, theta: &[f64]) -> f64;
    fn partial(&self, theta: &[f64], j: usize) -> f64;
    /// Exact coordinate restriction when the drift is affine in `j`.
    fn coordinate_quadratic(&self, theta: &[f64], j: usize) -> Option<CoordinateQuadratic>;
}

impl LogLikelihood for PanelStats {
    fn dim(&self) -> usize {
        PanelStats::dim(self)
    }

    fn value(&self, theta: &[f64]) -> f64 {
        self.log_likelihood(theta)
    }

    fn partial(&self, theta: &[f64], j: usize) -> f64 {
        self.coordinate_quadratic(theta, j).slope(theta[j])
    }

    fn coordinate_quadratic(&self, theta: &[f64], j: usize) -> Option<CoordinateQuadratic> {
        Some(PanelStats::coordinate_quadratic(self, theta, j))
    }
}

impl LogLikelihood for PreparedPanel<'_> {
    fn dim(&self) -> usize {
        self.panel.spec.dim()
    }

    fn value(&self, theta: &[f64]) -> f64 {
        self.log_likelihood(theta)
    }

    fn partial(&self, theta: &[f64], j: usize) -> f64 {
        if let Some(q) = PreparedPanel::coordinate_quadratic(self, theta, j) {
            return q.slope(theta[j]);
        }
        let h = fd_step(theta[j]);
        let mut t = theta.to_vec();
        t[j] = theta[j] + h;
        let up = self.log_likelihood(&t);
        t[j] = theta[j] - h;
        let down = self.log_likelihood(&t);
        (up - down) / (2.0 * h)
    }

    fn coordinate_quadratic(&self, theta: &[f64], j: usize) -> Option<CoordinateQuadratic> {
        PreparedPanel::coordinate_quadratic(self, theta, j)
    }
}

/// The fastest exact log-likelihood available for a panel.
pub enum PanelLikelihood<'a> {
    Quadratic(PanelStats),
    Direct(PreparedPanel<'a>),
}

impl<'a> PanelLikelihood<'a> {
    pub fn new(panel: &'a Panel) -> Result<Self> {
        let prepared = PreparedPanel::new(panel)?;
        Ok(match PanelStats::from_prepared(&prepared) {
            Some(stats) => PanelLikelihood::Quadratic(stats),
            None => PanelLikelihood::Direct(prepared),
        })
    }

    pub fn as_dyn(&self) -> &dyn LogLikelihood {
        match self {
            PanelLikelihood::Quadratic(s) => s,
            PanelLikelihood::Direct(p) => p,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreBranch {
    Analytic,
    FiniteDifference,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub gradient: Vec<f64>,
    pub branch: ScoreBranch,
    /// Coordinates sitting on a bound, where the gradient is one-sided in
    /// the constrained problem.
    pub boundary: Vec<usize>,
}

/// Gradient of the log-likelihood. Analytic when the drift is affine in
/// every coordinate, central differences otherwise.
pub fn score(panel: &Panel, theta: &ThetaVector) -> Result<Score> {
    check_dim(panel, theta.values())?;
    let prepared = PreparedPanel::new(panel)?;
    Ok(score_prepared(&prepared, theta))
}

fn score_prepared(prepared: &PreparedPanel<'_>, theta: &ThetaVector) -> Score {
    let boundary: Vec<usize> = theta
        .bounds()
        .iter()
        .zip(theta.values())
        .enumerate()
        .filter(|(_, (b, v))| !b.is_interior(**v))
        .map(|(j, _)| j)
        .collect();
    if !boundary.is_empty() {
        warn!(
            "score evaluated on the parameter boundary at coordinates {:?}",
            boundary
                .iter()
                .map(|&j| theta.names()[j].as_str())
                .collect::<Vec<_>>()
        );
    }
    let (gradient, branch) = if prepared.drift().is_affine_in_all() {
        (prepared.analytic_score(theta.values()), ScoreBranch::Analytic)
    } else {
        (
            prepared.finite_difference_score(theta.values()),
            ScoreBranch::FiniteDifference,
        )
    };
    Score {
        gradient,
        branch,
        boundary,
    }
}

/// Observed information `-l''(theta_hat)` and the matrix used to
/// standardize: the information itself, or the identity when it is not
/// positive definite or no estimate exists.
#[derive(Debug, Clone, PartialEq)]
pub struct InformationMatrix {
    pub matrix: DMatrix<f64>,
    pub eigenvalues: Vec<f64>,
    pub fallback: bool,
}

/// Eigenvalues at or below this fraction of the largest one count as zero.
pub const INFORMATION_RANK_TOL: f64 = 1e-6;

impl InformationMatrix {
    pub fn from_matrix(matrix: DMatrix<f64>) -> Self {
        let sym = (&matrix + matrix.transpose()) * 0.5;
        let eig = SymmetricEigen::new(sym.clone());
        let mut eigenvalues: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        eigenvalues.sort_by(|a, b| a.total_cmp(b));
        let largest = eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let smallest = eigenvalues.first().copied().unwrap_or(0.0);
        let fallback = !smallest.is_finite()
            || largest == 0.0
            || smallest <= INFORMATION_RANK_TOL * largest;
        Self {
            matrix: sym,
            eigenvalues,
            fallback,
        }
    }

    /// Used when there is no estimate to evaluate the curvature at.
    pub fn absent(dim: usize) -> Self {
        Self {
            matrix: DMatrix::zeros(dim, dim),
            eigenvalues: vec![0.0; dim],
            fallback: true,
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// `Sigma_n^{-1}`: the information, or the identity on fallback.
    pub fn precision(&self) -> DMatrix<f64> {
        if self.fallback {
            DMatrix::identity(self.dim(), self.dim())
        } else {
            self.matrix.clone()
        }
    }

    /// Symmetric square root of [`precision`](Self::precision), i.e. `Sigma_n^{-1/2}`.
    pub fn precision_sqrt(&self) -> DMatrix<f64> {
        if self.fallback {
            return DMatrix::identity(self.dim(), self.dim());
        }
        let eig = SymmetricEigen::new(self.matrix.clone());
        let root = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
        &eig.eigenvectors * DMatrix::from_diagonal(&root) * eig.eigenvectors.transpose()
    }

    /// `Sigma_n^{-1/2} (a - b)`.
    pub fn standardize(&self, a: &[f64], b: &[f64]) -> Vec<f64> {
        let diff = DVector::from_iterator(a.len(), a.iter().zip(b).map(|(x, y)| x - y));
        (self.precision_sqrt() * diff).iter().copied().collect()
    }
}

/// `-l''` by symmetric differences of the score with step
/// `1e-4 * max(1, |theta_k|)`.
pub fn observed_information(panel: &Panel, theta_hat: &ThetaVector) -> Result<InformationMatrix> {
    check_dim(panel, theta_hat.values())?;
    let prepared = PreparedPanel::new(panel)?;
    Ok(observed_information_prepared(&prepared, theta_hat.values()))
}

pub(crate) fn observed_information_prepared(
    prepared: &PreparedPanel<'_>,
    theta: &[f64],
) -> InformationMatrix {
    let analytic = prepared.drift().is_affine_in_all();
    let grad = |t: &[f64]| {
        if analytic {
            prepared.analytic_score(t)
        } else {
            prepared.finite_difference_score(t)
        }
    };
    let dim = theta.len();
    let mut m = DMatrix::zeros(dim, dim);
    let mut t = theta.to_vec();
    for k in 0..dim {
        let h = 1e-4 * theta[k].abs().max(1.0);
        t[k] = theta[k] + h;
        let up = grad(&t);
        t[k] = theta[k] - h;
        let down = grad(&t);
        t[k] = theta[k];
        for j in 0..dim {
            m[(j, k)] = -(up[j] - down[j]) / (2.0 * h);
        }
    }
    if m.iter().any(|v| !v.is_finite()) {
        return InformationMatrix::absent(dim);
    }
    InformationMatrix::from_matrix(m)
}
