//! JSON run configuration.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use sdecov_core::bayes::{AbcNoise, PriorSpec};
use sdecov_core::experiments::Design;
use sdecov_core::model::{DiffusionSpec, ModelSpec};
use sdecov_core::simulate::CovariateGenerator;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSpec,
    /// Diffusions overriding the model default, keyed by subject id.
    #[serde(default)]
    pub subject_diffusions: BTreeMap<String, DiffusionSpec>,
    pub simulation: Option<SimulationConfig>,
    pub fit: Option<FitConfig>,
    pub bootstrap: Option<BootstrapConfig>,
    pub abc: Option<AbcConfig>,
    pub gibbs: Option<GibbsConfig>,
    pub experiment: Option<ExperimentConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub n_subjects: usize,
    pub t_end: f64,
    pub n_steps: usize,
    pub x0: f64,
    pub theta: Vec<f64>,
    #[serde(default)]
    pub covariates: CovariateGenerator,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InitSpec {
    Values(Vec<f64>),
    Keyword(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_sweeps")]
    pub max_sweeps: usize,
    pub init: Option<InitSpec>,
    #[serde(default)]
    pub init_seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            tol: default_tol(),
            max_sweeps: default_max_sweeps(),
            init: None,
            init_seed: 0,
        }
    }
}

fn default_tol() -> f64 {
    1e-5
}

fn default_max_sweeps() -> usize {
    sdecov_core::estimation::DEFAULT_MAX_SWEEPS
}

fn default_level() -> f64 {
    0.95
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BootstrapConfig {
    pub replicates: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_level")]
    pub level: f64,
    pub regenerate_covariates: Option<CovariateGenerator>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, tag = "kind", rename_all = "snake_case")]
pub enum PriorConfig {
    Normal { means: Vec<f64>, sds: Vec<f64> },
    IidNormal { mean: f64, sd: f64 },
    /// Centered on the bootstrap distribution of the MLE.
    EmpiricalBayes { replicates: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AbcConfig {
    pub epsilon: f64,
    pub n_accept: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_noise")]
    pub noise: AbcNoise,
    pub max_trials: Option<u64>,
    #[serde(default = "default_level")]
    pub level: f64,
    pub prior: PriorConfig,
}

fn default_noise() -> AbcNoise {
    AbcNoise::Independent
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GibbsConfig {
    pub iters: usize,
    #[serde(default = "one")]
    pub thin: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_level")]
    pub level: f64,
    pub prior: PriorConfig,
    /// Starting point; the MLE when absent.
    pub init: Option<Vec<f64>>,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub theta0: Vec<f64>,
    pub design: Design,
    #[serde(default = "default_n_list")]
    pub n_list: Vec<usize>,
    #[serde(default = "default_reps")]
    pub reps: usize,
    /// Panel size for the normality experiments.
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default)]
    pub seed: u64,
    pub prior: Option<PriorSpec>,
    #[serde(default = "default_gibbs_iters")]
    pub gibbs_iters: usize,
    #[serde(default = "default_gibbs_thin")]
    pub gibbs_thin: usize,
}

fn default_n_list() -> Vec<usize> {
    vec![10, 40, 160]
}

fn default_reps() -> usize {
    500
}

fn default_n() -> usize {
    160
}

fn default_gibbs_iters() -> usize {
    100_000
}

fn default_gibbs_thin() -> usize {
    10
}

/// A config file's raw bytes alongside its parsed form.
pub struct LoadedConfig {
    pub config: RunConfig,
    pub bytes: Vec<u8>,
}

pub fn load(path: &Path) -> CliResult<LoadedConfig> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    let config = parse(path, &bytes)?;
    Ok(LoadedConfig { config, bytes })
}

pub fn parse(path: &Path, bytes: &[u8]) -> CliResult<RunConfig> {
    let mut de = serde_json::Deserializer::from_slice(bytes);
    let mut config: RunConfig = serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let field = e.path().to_string();
        CliError::Json {
            path: path.to_path_buf(),
            message: format!("at `{field}`: {}", e.inner()),
        }
    })?;
    config.model = config
        .model
        .with_default_bounds()
        .map_err(|e| CliError::config("model", e.to_string()))?;
    config.validate()?;
    Ok(config)
}

fn positive(field: &str, v: usize) -> CliResult<()> {
    if v == 0 {
        return Err(CliError::config(field, "must be at least 1"));
    }
    Ok(())
}

fn level(field: &str, v: f64) -> CliResult<()> {
    if !(v > 0.0 && v < 1.0) {
        return Err(CliError::config(field, format!("must lie in (0, 1), got {v}")));
    }
    Ok(())
}

fn validate_prior(field: &str, p: &PriorConfig, dim: usize) -> CliResult<()> {
    match p {
        PriorConfig::Normal { means, sds } => {
            if means.len() != dim || sds.len() != dim {
                return Err(CliError::config(field, format!("needs {dim} means and sds")));
            }
            PriorSpec::new(means.clone(), sds.clone()).map_err(|e| CliError::config(field, e.to_string()))?;
        }
        PriorConfig::IidNormal { sd, .. } => {
            if !(*sd > 0.0 && sd.is_finite()) {
                return Err(CliError::config(&format!("{field}.sd"), "must be positive and finite"));
            }
        }
        PriorConfig::EmpiricalBayes { replicates, .. } => positive(&format!("{field}.replicates"), *replicates)?,
    }
    Ok(())
}

impl RunConfig {
    fn validate(&self) -> CliResult<()> {
        let dim = self.model.dim();
        for (id, d) in &self.subject_diffusions {
            d.validate()
                .map_err(|e| CliError::config(&format!("subject_diffusions.{id}"), e.to_string()))?;
        }
        if let Some(s) = &self.simulation {
            positive("simulation.n_subjects", s.n_subjects)?;
            positive("simulation.n_steps", s.n_steps)?;
            if s.theta.len() != dim {
                return Err(CliError::config("simulation.theta", format!("needs {dim} values")));
            }
        }
        if let Some(f) = &self.fit {
            positive("fit.max_sweeps", f.max_sweeps)?;
            if !(f.tol > 0.0) {
                return Err(CliError::config("fit.tol", "must be positive"));
            }
            match &f.init {
                Some(InitSpec::Values(v)) if v.len() != dim => {
                    return Err(CliError::config("fit.init", format!("needs {dim} values")));
                }
                Some(InitSpec::Keyword(k)) if k != "random" => {
                    return Err(CliError::config("fit.init", "expected an array or \"random\""));
                }
                _ => {}
            }
        }
        if let Some(b) = &self.bootstrap {
            positive("bootstrap.replicates", b.replicates)?;
            level("bootstrap.level", b.level)?;
        }
        if let Some(a) = &self.abc {
            positive("abc.n_accept", a.n_accept)?;
            if !(a.epsilon > 0.0) {
                return Err(CliError::config("abc.epsilon", "must be positive"));
            }
            level("abc.level", a.level)?;
            validate_prior("abc.prior", &a.prior, dim)?;
        }
        if let Some(g) = &self.gibbs {
            positive("gibbs.iters", g.iters)?;
            positive("gibbs.thin", g.thin)?;
            level("gibbs.level", g.level)?;
            validate_prior("gibbs.prior", &g.prior, dim)?;
            if g.init.as_ref().is_some_and(|v| v.len() != dim) {
                return Err(CliError::config("gibbs.init", format!("needs {dim} values")));
            }
        }
        if let Some(x) = &self.experiment {
            positive("experiment.reps", x.reps)?;
            positive("experiment.n", x.n)?;
            positive("experiment.gibbs_iters", x.gibbs_iters)?;
            positive("experiment.gibbs_thin", x.gibbs_thin)?;
            if x.n_list.is_empty() || x.n_list.contains(&0) {
                return Err(CliError::config("experiment.n_list", "needs positive panel sizes"));
            }
            if x.theta0.len() != dim {
                return Err(CliError::config("experiment.theta0", format!("needs {dim} values")));
            }
            if x.prior.as_ref().is_some_and(|p| p.dim() != dim) {
                return Err(CliError::config("experiment.prior", format!("needs {dim} coordinates")));
            }
        }
        Ok(())
    }
}
