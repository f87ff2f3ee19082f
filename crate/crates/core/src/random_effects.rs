//! Gaussian random effects on the covariate coefficients.
//!
//! Subject `i` has its own coefficient vector `xi_i ~ Normal(mu, Sigma)`.
//! Given `beta`, the subject log-likelihood is `xi' A_i - xi' B_i xi / 2`,
//! so `xi_i` integrates out in closed form.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SdeError};
use crate::estimation::{coordinate_ascent, AscentResult};
use crate::model::{Bounds, DiffusionSpec, DriftSpec};
use crate::simulate::{CovariatePath, Panel, SubjectPath};

/// Jitter added to a nearly singular symmetric matrix before factoring.
pub const PSD_JITTER: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct RESuffStats {
    pub a: DVector<f64>,
    pub b: DMatrix<f64>,
}

/// `A = sum_k m / sigma^2 dX_k` and `B = sum_k m m' / sigma^2 step` with
/// `m = (1, g_1(z_1) b(x), ..., g_p(z_p) b(x))` at the left end point.
pub fn re_suff_stats(
    drift: &DriftSpec,
    diffusion: &DiffusionSpec,
    path: &SubjectPath,
    cov: &CovariatePath,
    beta: &[f64],
) -> Result<RESuffStats> {
    if path.grid != cov.grid {
        return Err(SdeError::DimensionMismatch(format!(
            "subject {}: path and covariates are on different grids",
            path.subject
        )));
    }
    if beta.len() != drift.factor.n_params() {
        return Err(SdeError::DimensionMismatch(format!(
            "{} factor parameters, family expects {}",
            beta.len(),
            drift.factor.n_params()
        )));
    }
    let dim = drift.n_xi();
    let step = path.grid.step();
    let mut a = DVector::zeros(dim);
    let mut b = DMatrix::zeros(dim, dim);
    let mut m = vec![0.0; dim];
    for k in 0..path.grid.n_steps() {
        let x = path.states[k];
        let sigma = diffusion.sigma(x).ok_or(SdeError::DiffusionDomain {
            subject: path.subject,
            step: k,
            state: x,
        })?;
        if !(sigma > 0.0) {
            return Err(SdeError::SingularDiffusion {
                subject: path.subject,
                step: k,
            });
        }
        let w = 1.0 / (sigma * sigma);
        let fx = drift.factor.value(beta, x);
        let z = cov.at(k);
        m[0] = 1.0;
        for l in 0..drift.n_covariates() {
            m[l + 1] = drift.transforms[l].apply(z[l]) * fx;
        }
        let dx = path.states[k + 1] - x;
        for r in 0..dim {
            a[r] += m[r] * w * dx;
            for c in 0..=r {
                b[(r, c)] += m[r] * m[c] * w * step;
            }
        }
    }
    for r in 0..dim {
        for c in 0..r {
            b[(c, r)] = b[(r, c)];
        }
    }
    Ok(RESuffStats { a, b })
}

pub fn panel_suff_stats(panel: &Panel, beta: &[f64]) -> Result<Vec<RESuffStats>> {
    panel
        .subjects
        .par_iter()
        .enumerate()
        .map(|(i, s)| re_suff_stats(&panel.spec.drift, panel.diffusion_for(i), &s.path, &s.covariates, beta))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct REParams {
    pub mu: Vec<f64>,
    /// Row-major `(p + 1) x (p + 1)` covariance.
    pub sigma: Vec<Vec<f64>>,
    pub beta: Vec<f64>,
}

impl REParams {
    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn sigma_matrix(&self) -> DMatrix<f64> {
        let d = self.dim();
        DMatrix::from_fn(d, d, |r, c| self.sigma[r][c])
    }

    /// Lower Cholesky factor of `Sigma`; errors unless `Sigma` is symmetric
    /// positive definite.
    pub fn sigma_cholesky(&self) -> Result<DMatrix<f64>> {
        let d = self.dim();
        if self.sigma.len() != d || self.sigma.iter().any(|r| r.len() != d) {
            return Err(SdeError::DimensionMismatch(format!("Sigma must be {d} x {d}")));
        }
        let s = self.sigma_matrix();
        let scale = s.amax().max(f64::MIN_POSITIVE);
        for r in 0..d {
            for c in 0..r {
                if (s[(r, c)] - s[(c, r)]).abs() > 1e-12 * scale {
                    return Err(SdeError::InvalidParameter("Sigma is not symmetric".into()));
                }
            }
        }
        if s.iter().any(|v| !v.is_finite()) || self.mu.iter().any(|v| !v.is_finite()) {
            return Err(SdeError::InvalidParameter("random-effects parameters must be finite".into()));
        }
        let eig = s.clone().symmetric_eigen();
        if eig.eigenvalues.iter().any(|&e| e <= 0.0) {
            return Err(SdeError::InvalidParameter("Sigma is not positive definite".into()));
        }
        Cholesky::new(s)
            .map(|c| c.l())
            .ok_or_else(|| SdeError::InvalidParameter("Sigma is not positive definite".into()))
    }

    /// Unconstrained coordinates: `mu`, then the log-Cholesky entries of
    /// `Sigma` row by row (log on the diagonal), then `beta`.
    pub fn to_coordinates(&self) -> Result<Vec<f64>> {
        let l = self.sigma_cholesky()?;
        let mut out = self.mu.clone();
        for r in 0..self.dim() {
            for c in 0..=r {
                out.push(if r == c { l[(r, c)].ln() } else { l[(r, c)] });
            }
        }
        out.extend_from_slice(&self.beta);
        Ok(out)
    }

    pub fn from_coordinates(dim: usize, n_beta: usize, x: &[f64]) -> Result<Self> {
        let n_chol = dim * (dim + 1) / 2;
        if x.len() != dim + n_chol + n_beta {
            return Err(SdeError::DimensionMismatch("wrong number of random-effects coordinates".into()));
        }
        let mut l = DMatrix::zeros(dim, dim);
        let mut idx = dim;
        for r in 0..dim {
            for c in 0..=r {
                l[(r, c)] = if r == c { x[idx].exp() } else { x[idx] };
                idx += 1;
            }
        }
        let s = &l * l.transpose();
        Ok(Self {
            mu: x[..dim].to_vec(),
            sigma: (0..dim).map(|r| (0..dim).map(|c| s[(r, c)]).collect()).collect(),
            beta: x[idx..].to_vec(),
        })
    }
}

fn cholesky_with_jitter(m: DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    if let Some(c) = Cholesky::new(m.clone()) {
        return Ok(c);
    }
    let n = m.nrows();
    let scale = m.diagonal().amax().max(1.0);
    Cholesky::new(m + DMatrix::identity(n, n) * (PSD_JITTER * scale))
        .ok_or_else(|| SdeError::Numerical("matrix is not positive definite after jitter".into()))
}

/// One subject's marginal log-likelihood in the form that never inverts
/// `B`: `-log det(I + L'BL)/2 + mu'A - mu'B mu/2 + c'(I + L'BL)^{-1}c/2`,
/// with `c = L'(A - B mu)` and `Sigma = L L'`.
pub fn subject_marginal_loglik(stats: &RESuffStats, mu: &DVector<f64>, l: &DMatrix<f64>) -> Result<f64> {
    let d = mu.len();
    let m = DMatrix::identity(d, d) + l.transpose() * &stats.b * l;
    let chol = cholesky_with_jitter(m)?;
    let log_det: f64 = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let bmu = &stats.b * mu;
    let resid = &stats.a - &bmu;
    let c = l.transpose() * resid;
    let solved = chol.solve(&c);
    let value = -0.5 * log_det + mu.dot(&stats.a) - 0.5 * mu.dot(&bmu) + 0.5 * c.dot(&solved);
    if value.is_finite() {
        Ok(value)
    } else {
        Err(SdeError::Numerical("non-finite marginal log-likelihood".into()))
    }
}

/// The same quantity through `B^{-1}`:
/// `-log det(I + B Sigma)/2 - (mu - B^{-1}A)' R (mu - B^{-1}A)/2 + A'B^{-1}A/2`
/// with `R = (I + B Sigma)^{-1} B`. Requires `B` positive definite.
pub fn subject_marginal_loglik_inverse_form(
    stats: &RESuffStats,
    mu: &DVector<f64>,
    sigma: &DMatrix<f64>,
) -> Result<f64> {
    let d = mu.len();
    let b_chol = Cholesky::new(stats.b.clone())
        .ok_or_else(|| SdeError::Numerical("B is singular; use the stable form".into()))?;
    let b_inv_a = b_chol.solve(&stats.a);
    let i_bs = DMatrix::identity(d, d) + &stats.b * sigma;
    let lu = i_bs.clone().lu();
    let det = lu.determinant();
    if !(det > 0.0) {
        return Err(SdeError::Numerical(format!("det(I + B Sigma) = {det}")));
    }
    let r = lu
        .solve(&stats.b)
        .ok_or_else(|| SdeError::Numerical("I + B Sigma is singular".into()))?;
    let diff = mu - &b_inv_a;
    Ok(-0.5 * det.ln() - 0.5 * diff.dot(&(r * &diff)) + 0.5 * stats.a.dot(&b_inv_a))
}

/// Per-subject marginal log-likelihood terms, in subject order.
pub fn re_marginal_terms(panel: &Panel, params: &REParams) -> Result<Vec<f64>> {
    if params.dim() != panel.spec.drift.n_xi() {
        return Err(SdeError::DimensionMismatch(format!(
            "mu has {} entries, model has {} covariate coefficients",
            params.dim(),
            panel.spec.drift.n_xi()
        )));
    }
    let l = params.sigma_cholesky()?;
    let mu = DVector::from_vec(params.mu.clone());
    panel_suff_stats(panel, &params.beta)?
        .par_iter()
        .map(|s| subject_marginal_loglik(s, &mu, &l))
        .collect()
}

/// Marginal log-likelihood of `(mu, Sigma, beta)` summed over subjects.
pub fn re_marginal_loglik(panel: &Panel, params: &REParams) -> Result<f64> {
    Ok(re_marginal_terms(panel, params)?.iter().sum())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct REFit {
    pub params: REParams,
    pub loglik: f64,
    pub sweeps: usize,
    pub converged: bool,
}

/// Experimental maximum-likelihood fit of `(mu, Sigma, beta)` by coordinate
/// ascent over `mu`, the log-Cholesky coordinates of `Sigma` and `beta`.
pub fn fit_random_effects(panel: &Panel, init: &REParams, tol: f64, max_sweeps: usize) -> Result<REFit> {
    let dim = init.dim();
    let n_beta = init.beta.len();
    let x0 = init.to_coordinates()?;
    let mut bounds = vec![Bounds::DEFAULT; x0.len()];
    // Keep log-variances in a range where exp() stays finite and Sigma PD.
    let mut idx = dim;
    for r in 0..dim {
        for c in 0..=r {
            if r == c {
                bounds[idx] = Bounds { lo: -20.0, hi: 10.0 };
            }
            idx += 1;
        }
    }
    for (j, b) in bounds[idx..].iter_mut().enumerate() {
        *b = panel.spec.bounds[dim + j];
    }
    let objective = |x: &[f64]| -> f64 {
        REParams::from_coordinates(dim, n_beta, x)
            .and_then(|p| re_marginal_loglik(panel, &p))
            .unwrap_or(f64::NEG_INFINITY)
    };
    let AscentResult {
        x,
        value,
        sweeps,
        converged,
    } = coordinate_ascent(&objective, &x0, &bounds, tol, max_sweeps)?;
    Ok(REFit {
        params: REParams::from_coordinates(dim, n_beta, &x)?,
        loglik: value,
        sweeps,
        converged,
    })
}
