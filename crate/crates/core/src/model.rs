//! Model specification: time grids, drift and diffusion families, and the
//! parameter vector.
//!
//! The drift of subject `i` is `phi(t) * b(x)` with
//! `phi(t) = xi_0 + sum_l xi_l * g_l(z_l(t))` and a factor family `b` that may
//! carry its own parameters `beta`. Parameters are laid out as
//! `(xi_0, ..., xi_p, beta_1, ..., beta_q)`.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SdeError};

/// Equispaced grid `t_k = k * t_end / n_steps`, `k = 0..=n_steps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    t_end: f64,
    n_steps: usize,
}

impl TimeGrid {
    pub fn new(t_end: f64, n_steps: usize) -> Result<Self> {
        if !(t_end.is_finite() && t_end > 0.0) {
            return Err(SdeError::InvalidGrid(format!(
                "t_end must be positive and finite, got {t_end}"
            )));
        }
        if n_steps == 0 {
            return Err(SdeError::InvalidGrid("n_steps must be at least 1".into()));
        }
        Ok(Self { t_end, n_steps })
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn n_knots(&self) -> usize {
        self.n_steps + 1
    }

    pub fn step(&self) -> f64 {
        self.t_end / self.n_steps as f64
    }

    /// The last knot is `t_end` exactly so that a grid recovered from its own
    /// knots is bit-identical to the original.
    pub fn knot(&self, k: usize) -> f64 {
        if k == self.n_steps {
            self.t_end
        } else {
            k as f64 * self.step()
        }
    }

    pub fn knots(&self) -> impl Iterator<Item = f64> + '_ {
        (0..=self.n_steps).map(|k| self.knot(k))
    }

    /// Grid with twice as many steps over the same horizon.
    pub fn refined(&self) -> Self {
        Self {
            t_end: self.t_end,
            n_steps: self.n_steps * 2,
        }
    }
}

/// Scalar covariate transform `g_l`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    Identity,
    Tanh,
    Square,
}

impl Transform {
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Transform::Identity => z,
            Transform::Tanh => z.tanh(),
            Transform::Square => z * z,
        }
    }
}

/// Closed covariate range; values outside are clamped.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CovariateRange {
    pub lo: f64,
    pub hi: f64,
}

impl CovariateRange {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo < hi) || lo.is_nan() || hi.is_nan() {
            return Err(SdeError::InvalidSpec(format!(
                "covariate range [{lo}, {hi}] is empty"
            )));
        }
        Ok(Self { lo, hi })
    }

    pub fn unbounded() -> Self {
        Self {
            lo: f64::NEG_INFINITY,
            hi: f64::INFINITY,
        }
    }

    /// Returns the clamped value and whether clamping happened.
    pub fn clamp(&self, z: f64) -> (f64, bool) {
        if z < self.lo {
            (self.lo, true)
        } else if z > self.hi {
            (self.hi, true)
        } else {
            (z, false)
        }
    }
}

/// Multiplicative factor `b_beta(x)` of the drift.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, tag = "family", rename_all = "snake_case")]
pub enum FactorFamily {
    /// `b(x) = beta_1 + beta_2 * x`.
    Affine,
    /// `b(x) = scale * x`, no free parameters.
    Linear { scale: f64 },
    /// `b(x) = value`, no free parameters.
    Constant { value: f64 },
    /// `b(x) = tanh(beta_1 * x)`; not affine in `beta_1`.
    Tanh,
}

impl FactorFamily {
    pub fn n_params(&self) -> usize {
        match self {
            FactorFamily::Affine => 2,
            FactorFamily::Linear { .. } | FactorFamily::Constant { .. } => 0,
            FactorFamily::Tanh => 1,
        }
    }

    pub fn value(&self, beta: &[f64], x: f64) -> f64 {
        match *self {
            FactorFamily::Affine => beta[0] + beta[1] * x,
            FactorFamily::Linear { scale } => scale * x,
            FactorFamily::Constant { value } => value,
            FactorFamily::Tanh => (beta[0] * x).tanh(),
        }
    }

    /// Writes `d b / d beta_m` into `out` (length `n_params`).
    pub fn gradient(&self, beta: &[f64], x: f64, out: &mut [f64]) {
        match *self {
            FactorFamily::Affine => {
                out[0] = 1.0;
                out[1] = x;
            }
            FactorFamily::Linear { .. } | FactorFamily::Constant { .. } => {}
            FactorFamily::Tanh => {
                let t = (beta[0] * x).tanh();
                out[0] = (1.0 - t * t) * x;
            }
        }
    }

    /// True when `b` is `offset(x) + sum_m beta_m * basis_m(x)`.
    pub fn is_linear_in_params(&self) -> bool {
        !matches!(self, FactorFamily::Tanh)
    }

    /// Writes `(offset(x), basis_1(x), ..., basis_q(x))` into `out` for
    /// families linear in their parameters.
    pub fn extended_basis(&self, x: f64, out: &mut [f64]) -> bool {
        match *self {
            FactorFamily::Affine => {
                out[0] = 0.0;
                out[1] = 1.0;
                out[2] = x;
                true
            }
            FactorFamily::Linear { scale } => {
                out[0] = scale * x;
                true
            }
            FactorFamily::Constant { value } => {
                out[0] = value;
                true
            }
            FactorFamily::Tanh => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriftSpec {
    pub transforms: Vec<Transform>,
    pub covariate_ranges: Vec<CovariateRange>,
    pub factor: FactorFamily,
}

impl DriftSpec {
    pub fn n_covariates(&self) -> usize {
        self.transforms.len()
    }

    pub fn n_xi(&self) -> usize {
        self.transforms.len() + 1
    }

    pub fn n_params(&self) -> usize {
        self.n_xi() + self.factor.n_params()
    }

    /// `phi = xi_0 + sum_l xi_l g_l(z_l)` at one time point.
    #[inline]
    pub fn phi(&self, xi: &[f64], z: &[f64]) -> f64 {
        let mut acc = xi[0];
        for (l, g) in self.transforms.iter().enumerate() {
            acc += xi[l + 1] * g.apply(z[l]);
        }
        acc
    }

    /// Covariate design row `(1, g_1(z_1), ..., g_p(z_p))`.
    #[inline]
    pub fn design(&self, z: &[f64], out: &mut [f64]) {
        out[0] = 1.0;
        for (l, g) in self.transforms.iter().enumerate() {
            out[l + 1] = g.apply(z[l]);
        }
    }

    /// Full drift `phi * b` for the parameter vector `theta`.
    #[inline]
    pub fn drift(&self, theta: &[f64], z: &[f64], x: f64) -> f64 {
        let (xi, beta) = theta.split_at(self.n_xi());
        self.phi(xi, z) * self.factor.value(beta, x)
    }

    /// Whether the drift is affine in coordinate `j` with the others fixed.
    pub fn is_affine_in(&self, j: usize) -> bool {
        j < self.n_xi() || self.factor.is_linear_in_params()
    }

    pub fn is_affine_in_all(&self) -> bool {
        self.factor.is_linear_in_params()
    }

    /// Writes `d drift / d theta` into `out`.
    pub fn drift_gradient(&self, theta: &[f64], z: &[f64], x: f64, out: &mut [f64]) {
        let nx = self.n_xi();
        let (xi, beta) = theta.split_at(nx);
        let b = self.factor.value(beta, x);
        self.design(z, &mut out[..nx]);
        for o in &mut out[..nx] {
            *o *= b;
        }
        if self.factor.n_params() > 0 {
            let phi = self.phi(xi, z);
            self.factor.gradient(beta, x, &mut out[nx..]);
            for o in &mut out[nx..] {
                *o *= phi;
            }
        }
    }
}

/// Diffusion coefficient `sigma(x)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, tag = "family", rename_all = "snake_case")]
pub enum DiffusionSpec {
    Constant { sigma: f64 },
    /// `sigma(x) = a * x^b`, defined for `x > 0`.
    Ckls { a: f64, b: f64 },
}

impl DiffusionSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            DiffusionSpec::Constant { sigma } if !(sigma.is_finite() && sigma > 0.0) => Err(
                SdeError::InvalidSpec(format!("constant diffusion must be positive, got {sigma}")),
            ),
            DiffusionSpec::Ckls { a, b } if !(a.is_finite() && a > 0.0 && b.is_finite() && b >= 0.0) => {
                Err(SdeError::InvalidSpec(format!(
                    "CKLS diffusion needs a > 0 and b >= 0, got a = {a}, b = {b}"
                )))
            }
            _ => Ok(()),
        }
    }

    /// `None` outside the family's domain.
    #[inline]
    pub fn sigma(&self, x: f64) -> Option<f64> {
        match *self {
            DiffusionSpec::Constant { sigma } => Some(sigma),
            DiffusionSpec::Ckls { a, b } => {
                if x > 0.0 {
                    Some(a * x.powf(b))
                } else {
                    None
                }
            }
        }
    }

    pub fn requires_positive_state(&self) -> bool {
        matches!(self, DiffusionSpec::Ckls { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bounds {
    pub lo: f64,
    pub hi: f64,
}

impl Bounds {
    pub const DEFAULT: Bounds = Bounds { lo: -100.0, hi: 100.0 };

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lo && v <= self.hi
    }

    pub fn clamp(&self, v: f64) -> f64 {
        v.clamp(self.lo, self.hi)
    }

    pub fn is_interior(&self, v: f64) -> bool {
        v > self.lo && v < self.hi
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub drift: DriftSpec,
    pub diffusion: DiffusionSpec,
    /// Empty means `[-100, 100]` everywhere; see [`ModelSpec::with_default_bounds`].
    #[serde(default)]
    pub bounds: Vec<Bounds>,
}

impl ModelSpec {
    /// Fills missing bounds with the defaults, then validates.
    pub fn with_default_bounds(mut self) -> Result<Self> {
        if self.bounds.is_empty() {
            self.bounds = vec![Bounds::DEFAULT; self.drift.n_params()];
        }
        self.validate()?;
        Ok(self)
    }

    /// Spec with default bounds `[-100, 100]` on every coordinate.
    pub fn new(drift: DriftSpec, diffusion: DiffusionSpec) -> Result<Self> {
        let bounds = vec![Bounds::DEFAULT; drift.n_params()];
        let spec = Self {
            drift,
            diffusion,
            bounds,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_bounds(mut self, bounds: Vec<Bounds>) -> Result<Self> {
        self.bounds = bounds;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.drift.n_covariates();
        if self.drift.covariate_ranges.len() != p {
            return Err(SdeError::InvalidSpec(format!(
                "{} transforms but {} covariate ranges",
                p,
                self.drift.covariate_ranges.len()
            )));
        }
        for r in &self.drift.covariate_ranges {
            if !(r.lo < r.hi) {
                return Err(SdeError::InvalidSpec(format!(
                    "covariate range [{}, {}] is empty",
                    r.lo, r.hi
                )));
            }
        }
        if self.bounds.len() != self.dim() {
            return Err(SdeError::InvalidSpec(format!(
                "expected {} parameter bounds, got {}",
                self.dim(),
                self.bounds.len()
            )));
        }
        for (name, b) in self.param_names().iter().zip(&self.bounds) {
            if !(b.lo <= b.hi) || !b.lo.is_finite() || !b.hi.is_finite() {
                return Err(SdeError::InvalidSpec(format!(
                    "bounds for {name} must be finite with lo <= hi"
                )));
            }
        }
        self.diffusion.validate()
    }

    pub fn dim(&self) -> usize {
        self.drift.n_params()
    }

    pub fn n_covariates(&self) -> usize {
        self.drift.n_covariates()
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut names: Vec<String> = (0..self.drift.n_xi()).map(|l| format!("xi{l}")).collect();
        names.extend((1..=self.drift.factor.n_params()).map(|m| format!("beta{m}")));
        names
    }

    pub fn theta(&self, values: Vec<f64>) -> Result<ThetaVector> {
        ThetaVector::new(self.param_names(), values, self.bounds.clone())
    }

    /// The drift is identifiable from the likelihood only when it is linear in
    /// all parameters, i.e. the factor family carries no parameters of its own.
    pub fn is_identifiable(&self) -> bool {
        self.drift.factor.n_params() == 0
    }

    /// Quantities the likelihood determines. For factor families linear in
    /// their parameters these are the products `xi_l * beta_m`; otherwise the
    /// raw coordinates.
    pub fn identified_quantities(&self, theta: &[f64]) -> Vec<(String, f64)> {
        let nx = self.drift.n_xi();
        let q = self.drift.factor.n_params();
        if q == 0 || !self.drift.factor.is_linear_in_params() {
            return self.param_names().into_iter().zip(theta.iter().copied()).collect();
        }
        let mut out = Vec::with_capacity(nx * q);
        for l in 0..nx {
            for m in 0..q {
                out.push((format!("xi{l}*beta{}", m + 1), theta[l] * theta[nx + m]));
            }
        }
        out
    }

    /// Two-factor product drift `(t1 + t2 z)(t3 + t4 x)` with unit diffusion,
    /// one identity-transformed covariate clamped to `[-2, 2]`.
    pub fn product_drift() -> Self {
        Self::new(
            DriftSpec {
                transforms: vec![Transform::Identity],
                covariate_ranges: vec![CovariateRange { lo: -2.0, hi: 2.0 }],
                factor: FactorFamily::Affine,
            },
            DiffusionSpec::Constant { sigma: 1.0 },
        )
        .expect("static spec is valid")
    }

    /// `(xi_0 + sum_l xi_l z_l) * x` with unit diffusion.
    pub fn linear_covariate_drift(p: usize, range: CovariateRange) -> Self {
        Self::new(
            DriftSpec {
                transforms: vec![Transform::Identity; p],
                covariate_ranges: vec![range; p],
                factor: FactorFamily::Linear { scale: 1.0 },
            },
            DiffusionSpec::Constant { sigma: 1.0 },
        )
        .expect("static spec is valid")
    }

    /// Ornstein-Uhlenbeck reduction `dX = -theta X dt + dW`.
    pub fn ornstein_uhlenbeck() -> Self {
        Self::new(
            DriftSpec {
                transforms: vec![],
                covariate_ranges: vec![],
                factor: FactorFamily::Linear { scale: -1.0 },
            },
            DiffusionSpec::Constant { sigma: 1.0 },
        )
        .expect("static spec is valid")
    }

    /// `(t1 + t2 c1 + t3 c2 + t4 c3)(t5 + t6 x)` with CKLS power diffusion.
    pub fn ckls_covariates(a: f64, b: f64, range: CovariateRange) -> Result<Self> {
        Self::new(
            DriftSpec {
                transforms: vec![Transform::Identity; 3],
                covariate_ranges: vec![range; 3],
                factor: FactorFamily::Affine,
            },
            DiffusionSpec::Ckls { a, b },
        )
    }
}

/// Parameter vector `(xi_0..xi_p, beta_1..beta_q)` with names and box bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaVector {
    names: Vec<String>,
    values: Vec<f64>,
    bounds: Vec<Bounds>,
}

impl ThetaVector {
    pub fn new(names: Vec<String>, values: Vec<f64>, bounds: Vec<Bounds>) -> Result<Self> {
        if names.len() != values.len() || bounds.len() != values.len() {
            return Err(SdeError::DimensionMismatch(format!(
                "{} names, {} values, {} bounds",
                names.len(),
                values.len(),
                bounds.len()
            )));
        }
        for ((n, v), b) in names.iter().zip(&values).zip(&bounds) {
            if !v.is_finite() || !b.contains(*v) {
                return Err(SdeError::InvalidParameter(format!(
                    "{n} = {v} outside bounds [{}, {}]",
                    b.lo, b.hi
                )));
            }
        }
        Ok(Self {
            names,
            values,
            bounds,
        })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn bounds(&self) -> &[Bounds] {
        &self.bounds
    }

    pub fn get(&self, j: usize) -> f64 {
        self.values[j]
    }

    /// Copy with new values clamped into bounds.
    pub fn with_values_clamped(&self, values: &[f64]) -> Self {
        let values = values
            .iter()
            .zip(&self.bounds)
            .map(|(v, b)| b.clamp(*v))
            .collect();
        Self {
            names: self.names.clone(),
            values,
            bounds: self.bounds.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_knots() {
        let g = TimeGrid::new(1.0, 100).unwrap();
        assert_eq!(g.n_knots(), 101);
        assert_eq!(g.knot(0), 0.0);
        assert_eq!(g.knot(100), 1.0);
        assert!((g.step() - 0.01).abs() < 1e-15);
        assert!(TimeGrid::new(0.0, 10).is_err());
        assert!(TimeGrid::new(1.0, 0).is_err());
        assert!(TimeGrid::new(f64::NAN, 10).is_err());
    }

    #[test]
    fn parameter_layout() {
        let spec = ModelSpec::product_drift();
        assert_eq!(spec.param_names(), vec!["xi0", "xi1", "beta1", "beta2"]);
        let ckls = ModelSpec::ckls_covariates(0.2, 1.0, CovariateRange::new(-5.0, 5.0).unwrap())
            .unwrap();
        assert_eq!(ckls.dim(), 6);
        assert!(!ckls.is_identifiable());
        assert!(ModelSpec::linear_covariate_drift(1, CovariateRange::unbounded()).is_identifiable());
    }

    #[test]
    fn drift_gradient_matches_difference_quotient() {
        let spec = DriftSpec {
            transforms: vec![Transform::Tanh, Transform::Square],
            covariate_ranges: vec![CovariateRange::unbounded(); 2],
            factor: FactorFamily::Tanh,
        };
        let theta = [0.3, -0.7, 1.1, 0.9];
        let z = [0.4, -1.2];
        let x = 0.8;
        let mut g = [0.0; 4];
        spec.drift_gradient(&theta, &z, x, &mut g);
        for j in 0..4 {
            let h = 1e-6;
            let mut tp = theta;
            let mut tm = theta;
            tp[j] += h;
            tm[j] -= h;
            let fd = (spec.drift(&tp, &z, x) - spec.drift(&tm, &z, x)) / (2.0 * h);
            assert!((fd - g[j]).abs() < 1e-8, "coordinate {j}: {fd} vs {}", g[j]);
        }
    }

    #[test]
    fn identified_products_of_product_drift() {
        let spec = ModelSpec::product_drift();
        let q = spec.identified_quantities(&[1.0, -1.0, 2.0, -2.0]);
        let vals: Vec<f64> = q.iter().map(|(_, v)| *v).collect();
        assert_eq!(vals, vec![2.0, -2.0, -2.0, 2.0]);
        assert_eq!(q[0].0, "xi0*beta1");
    }

    #[test]
    fn theta_rejects_out_of_bounds() {
        let spec = ModelSpec::product_drift();
        assert!(spec.theta(vec![0.0, 0.0, 0.0, 1e3]).is_err());
        assert!(spec.theta(vec![0.0; 3]).is_err());
    }

    #[test]
    fn ckls_sigma_domain() {
        let d = DiffusionSpec::Ckls { a: 0.5, b: 0.5 };
        assert_eq!(d.sigma(4.0), Some(1.0));
        assert_eq!(d.sigma(0.0), None);
        assert!(DiffusionSpec::Constant { sigma: 0.0 }.validate().is_err());
    }
}
