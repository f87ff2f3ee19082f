//! Subcommand implementations.

use std::path::Path;

use log::{info, warn};
use serde_json::{json, Value};

use sdecov_core::bayes::{
    abc_rejection, chain_diagnostics, empirical_bayes_prior, gibbs_sampler, AbcOptions, ChainResult, GibbsOptions,
    PriorSpec,
};
use sdecov_core::bootstrap::{histogram, parametric_bootstrap_with, summarize, BootstrapOptions, HISTOGRAM_BINS};
use sdecov_core::estimation::{block_relaxation_mle_with, random_start, MleOptions, MleResult};
use sdecov_core::experiments::{
    consistency_experiment, normality_experiment, posterior_normality_experiment, Design,
};
use sdecov_core::likelihood::{log_likelihood, observed_information, panel_girsanov_stats};
use sdecov_core::model::{CovariateRange, ModelSpec, ThetaVector, TimeGrid};
use sdecov_core::presets;
use sdecov_core::random_effects::{re_marginal_terms, REParams};
use sdecov_core::seed::{derive_stream, Stream};
use sdecov_core::simulate::{simulate_covariate_panel, simulate_panel, CovariateGenerator, Panel, PanelShape};
use sdecov_core::stats::qq_normal;

use crate::config::{self, FitConfig, InitSpec, LoadedConfig, PriorConfig, RunConfig};
use crate::error::{CliError, CliResult};
use crate::output::{sibling, Manifest, OutDir};
use crate::panel_io::{panel_to_csv, read_panel};
use crate::{DataArgs, ExperimentKind, Preset};

fn num(v: f64) -> String {
    v.to_string()
}

fn load_config(m: &mut Manifest, path: &Path) -> CliResult<RunConfig> {
    let LoadedConfig { config, bytes } = config::load(path)?;
    m.config = Some((path.to_path_buf(), bytes));
    Ok(config)
}

fn read_input(m: &mut Manifest, path: &Path) -> CliResult<()> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    m.inputs.push((path.to_path_buf(), bytes));
    Ok(())
}

/// Config plus the panel it describes.
fn load_panel(m: &mut Manifest, io: &DataArgs) -> CliResult<(RunConfig, Panel)> {
    let cfg = load_config(m, &io.config)?;
    read_input(m, &io.data)?;
    let raw = read_panel(&io.data)?;
    let panel = raw.into_panel(&cfg.model, &cfg.subject_diffusions)?;
    info!("loaded {} subjects from {}", panel.n_subjects(), io.data.display());
    Ok((cfg, panel))
}

fn block<'a, T>(b: &'a Option<T>, field: &str) -> CliResult<&'a T> {
    b.as_ref().ok_or_else(|| CliError::config(field, "block is required for this subcommand"))
}

fn sanitize(name: &str) -> String {
    name.replace('*', "_")
}

pub fn simulate(
    out: &mut OutDir,
    m: &mut Manifest,
    config: Option<&Path>,
    preset: Option<Preset>,
    seed: Option<u64>,
    name: &Path,
) -> CliResult<()> {
    let panel = match (config, preset) {
        (_, Some(Preset::NseLike)) => {
            let seed = seed.unwrap_or(0);
            m.seed("simulation", seed);
            let panel = presets::nse_like_panel(seed)?;
            let theta = presets::nse_like_theta();
            let cfg = json!({
                "model": panel.spec,
                "subject_diffusions": panel
                    .subjects
                    .iter()
                    .map(|s| (s.id.clone(), json!(s.diffusion)))
                    .collect::<serde_json::Map<_, _>>(),
                "fit": {"tol": 1e-5, "init": "random", "init_seed": seed},
            });
            out.write_json(&sibling(name, "_config.json"), &cfg)?;
            out.write_json(
                &sibling(name, "_truth.json"),
                &json!({"names": theta.names(), "theta": theta.values()}),
            )?;
            panel
        }
        (Some(path), None) => {
            let cfg = load_config(m, path)?;
            let sim = block(&cfg.simulation, "simulation")?;
            let seed = seed.unwrap_or(sim.seed);
            m.seed("simulation", seed);
            let theta = cfg
                .model
                .theta(sim.theta.clone())
                .map_err(|e| CliError::config("simulation.theta", e.to_string()))?;
            let grid = TimeGrid::new(sim.t_end, sim.n_steps)
                .map_err(|e| CliError::config("simulation.t_end", e.to_string()))?;
            let shape = config_shape(&cfg, sim.n_subjects, grid, sim.x0, &sim.covariates, seed)?;
            simulate_panel(&cfg.model, &theta, &shape, seed)?
        }
        (None, None) => return Err(CliError::Usage("simulate needs --config or --preset".into())),
    };
    let reflections: usize = panel.subjects.iter().map(|s| s.path.reflections).sum();
    let clamped: usize = panel.subjects.iter().map(|s| s.covariates.clamped).sum();
    if reflections > 0 {
        warn!("{reflections} reflections at the positivity floor across the panel");
    }
    if clamped > 0 {
        warn!("{clamped} covariate values clamped into their declared ranges");
    }
    out.write(name, &panel_to_csv(&panel)?)?;
    Ok(())
}

/// Identical subjects `s1..sn` with covariates drawn from `generator` and
/// diffusions taken from the config where given.
fn config_shape(
    cfg: &RunConfig,
    n: usize,
    grid: TimeGrid,
    x0: f64,
    generator: &CovariateGenerator,
    seed: u64,
) -> CliResult<PanelShape> {
    let ranges: Vec<CovariateRange> = cfg.model.drift.covariate_ranges.clone();
    let covs = simulate_covariate_panel(
        n,
        &grid,
        generator,
        &ranges,
        derive_stream(seed, Stream::CovariateNoise, &[]),
    )?;
    let mut shape = PanelShape::iid(n, grid, x0, covs)?;
    shape.ids = (1..=n).map(|i| format!("s{i}")).collect();
    for (id, d) in &cfg.subject_diffusions {
        let i = shape
            .ids
            .iter()
            .position(|s| s == id)
            .ok_or_else(|| CliError::config(&format!("subject_diffusions.{id}"), "no such subject"))?;
        shape.diffusions[i] = Some(*d);
    }
    Ok(shape)
}

pub fn ingest(out: &mut OutDir, m: &mut Manifest, data: &Path, config: Option<&Path>, name: &Path) -> CliResult<()> {
    read_input(m, data)?;
    let raw = read_panel(data)?;
    let subjects: Vec<Value> = raw
        .subjects
        .iter()
        .map(|s| {
            json!({
                "id": s.id,
                "first_row": s.first_row,
                "rows": s.states.len(),
                "t_end": s.grid.t_end(),
                "step": s.grid.step(),
                "x0": s.states[0],
            })
        })
        .collect();
    let summary = json!({
        "n_subjects": raw.subjects.len(),
        "n_rows": raw.n_rows(),
        "n_covariates": raw.n_covariates,
        "subjects": subjects,
    });
    let spec = match config {
        Some(path) => {
            let cfg = load_config(m, path)?;
            (cfg.model, cfg.subject_diffusions)
        }
        None => {
            // Any valid model with the right covariate count will do for
            // re-serialization.
            let spec = ModelSpec::linear_covariate_drift(raw.n_covariates, CovariateRange::unbounded());
            (spec, Default::default())
        }
    };
    let panel = raw.into_panel(&spec.0, &spec.1)?;
    out.write_json(name, &summary)?;
    out.write(&sibling(name, ".csv"), &panel_to_csv(&panel)?)?;
    Ok(())
}

fn parse_init(spec: &ModelSpec, panel: &Panel, init: &InitSpec, seed: u64, field: &str) -> CliResult<ThetaVector> {
    match init {
        InitSpec::Values(v) => spec.theta(v.clone()).map_err(|e| CliError::config(field, e.to_string())),
        InitSpec::Keyword(k) if k == "random" => Ok(random_start(panel, seed)),
        InitSpec::Keyword(k) => Err(CliError::config(field, format!("expected an array or \"random\", got `{k}`"))),
    }
}

/// MLE as configured by the `fit` block, with command-line overrides.
fn estimate(
    m: &mut Manifest,
    cfg: &RunConfig,
    panel: &Panel,
    init: Option<&str>,
    tol: Option<f64>,
) -> CliResult<(MleResult, ThetaVector, FitConfig)> {
    let mut fc = cfg.fit.clone().unwrap_or_default();
    if let Some(t) = tol {
        if !(t > 0.0) {
            return Err(CliError::Usage("--tol must be positive".into()));
        }
        fc.tol = t;
    }
    let init = match init {
        Some(s) if s == "random" => InitSpec::Keyword(s.to_string()),
        Some(s) => InitSpec::Values(
            serde_json::from_str(s).map_err(|e| CliError::Usage(format!("--init: expected a JSON array or `random`: {e}")))?,
        ),
        None => fc.init.clone().unwrap_or(InitSpec::Keyword("random".into())),
    };
    if matches!(init, InitSpec::Keyword(_)) {
        m.seed("init", fc.init_seed);
    }
    let start = parse_init(&cfg.model, panel, &init, fc.init_seed, "fit.init")?;
    let opts = MleOptions {
        tol: fc.tol,
        max_sweeps: fc.max_sweeps,
    };
    let fit = block_relaxation_mle_with(panel, &start, &opts)?;
    info!("block relaxation: {} sweeps, converged {}", fit.iterations, fit.converged);
    Ok((fit, start, fc))
}

fn fit_json(panel: &Panel, fit: &MleResult, start: &ThetaVector, fc: &FitConfig) -> CliResult<Value> {
    let hat = &fit.theta_hat;
    let info = observed_information(panel, hat)?;
    let se: Option<Vec<f64>> = if info.fallback {
        None
    } else {
        info.matrix
            .clone()
            .try_inverse()
            .map(|inv| (0..hat.dim()).map(|j| inv[(j, j)].max(0.0).sqrt()).collect())
    };
    let identified: Vec<Value> = panel
        .spec
        .identified_quantities(hat.values())
        .into_iter()
        .map(|(name, value)| json!({"name": name, "value": value}))
        .collect();
    Ok(json!({
        "names": hat.names(),
        "theta_hat": hat.values(),
        "loglik": log_likelihood(panel, hat.values())?,
        "identified": identified,
        "converged": fit.converged,
        "iterations": fit.iterations,
        "final_move": fit.final_move,
        "tol": fc.tol,
        "init": start.values(),
        "init_seed": fc.init_seed,
        "loglik_trace": fit.loglik_trace,
        "flat_updates": fit.flat_updates,
        "clamped_updates": fit.clamped_updates,
        "identifiable": panel.spec.is_identifiable(),
        "information_fallback": info.fallback,
        "standard_errors": se,
    }))
}

pub fn fit(
    out: &mut OutDir,
    m: &mut Manifest,
    io: &DataArgs,
    init: Option<&str>,
    tol: Option<f64>,
    dump_uv: bool,
    name: &Path,
) -> CliResult<()> {
    let (cfg, panel) = load_panel(m, io)?;
    let (fit, start, fc) = estimate(m, &cfg, &panel, init, tol)?;
    out.write_json(name, &fit_json(&panel, &fit, &start, &fc)?)?;
    if dump_uv {
        let stats = panel_girsanov_stats(&panel, fit.theta_hat.values())?;
        let rows: Vec<Vec<String>> = panel
            .subjects
            .iter()
            .zip(&stats)
            .map(|(s, g)| vec![s.id.clone(), num(g.u), num(g.v)])
            .collect();
        out.write_csv(&sibling(name, "_uv.csv"), &["subject".into(), "U".into(), "V".into()], &rows)?;
    }
    Ok(())
}

fn histogram_rows(values: &[f64]) -> Vec<Vec<String>> {
    histogram(values, HISTOGRAM_BINS)
        .into_iter()
        .map(|b| vec![num(b.left), num(b.right), b.count.to_string()])
        .collect()
}

fn hist_header() -> Vec<String> {
    vec!["bin_left".into(), "bin_right".into(), "count".into()]
}

pub fn bootstrap(
    out: &mut OutDir,
    m: &mut Manifest,
    io: &DataArgs,
    replicates: Option<usize>,
    seed: Option<u64>,
    name: &Path,
) -> CliResult<()> {
    let (cfg, panel) = load_panel(m, io)?;
    let bc = block(&cfg.bootstrap, "bootstrap")?.clone();
    let (fit, start, fc) = estimate(m, &cfg, &panel, None, None)?;
    let mut opts = BootstrapOptions::new(replicates.unwrap_or(bc.replicates), seed.unwrap_or(bc.seed));
    if opts.replicates == 0 {
        return Err(CliError::Usage("--replicates must be at least 1".into()));
    }
    opts.mle = MleOptions {
        tol: fc.tol,
        max_sweeps: fc.max_sweeps,
    };
    opts.regenerate_covariates = bc.regenerate_covariates;
    m.seed("bootstrap", opts.seed);
    let dist = parametric_bootstrap_with(&panel.spec, &fit.theta_hat, &panel.shape(), &opts)?;
    let summary = dist.summary(&panel.spec, bc.level)?;

    let names = fit.theta_hat.names().to_vec();
    let mut header = vec!["replicate".to_string()];
    header.extend(names.iter().cloned());
    header.push("converged".into());
    let rows: Vec<Vec<String>> = dist
        .replicates
        .iter()
        .enumerate()
        .map(|(b, r)| {
            let mut row = vec![(b + 1).to_string()];
            row.extend(r.values.iter().map(|v| num(*v)));
            row.push(r.converged.to_string());
            row
        })
        .collect();
    out.write_csv(&sibling(name, "_replicates.csv"), &header, &rows)?;
    for (j, nm) in names.iter().enumerate() {
        let rows = histogram_rows(&dist.coordinate(j));
        out.write_csv(&sibling(name, &format!("_hist_{}.csv", sanitize(nm))), &hist_header(), &rows)?;
    }
    let identified = dist.identified(&panel.spec);
    if identified.iter().map(|(n, _)| n).ne(names.iter()) {
        for (nm, values) in &identified {
            out.write_csv(&sibling(name, &format!("_hist_{}.csv", sanitize(nm))), &hist_header(), &histogram_rows(values))?;
        }
    }
    let doc = json!({
        "fit": fit_json(&panel, &fit, &start, &fc)?,
        "seed": opts.seed,
        "summary": summary,
    });
    out.write_json(name, &doc)?;
    Ok(())
}

/// Resolves a prior block; empirical Bayes runs its own fit and bootstrap.
fn resolve_prior(m: &mut Manifest, cfg: &RunConfig, panel: &Panel, prior: &PriorConfig) -> CliResult<PriorSpec> {
    let dim = cfg.model.dim();
    Ok(match prior {
        PriorConfig::Normal { means, sds } => PriorSpec::new(means.clone(), sds.clone())?,
        PriorConfig::IidNormal { mean, sd } => PriorSpec::iid(dim, *mean, *sd)?,
        PriorConfig::EmpiricalBayes { replicates, seed } => {
            let (fit, _, fc) = estimate(m, cfg, panel, None, None)?;
            let mut opts = BootstrapOptions::new(*replicates, *seed);
            opts.mle = MleOptions {
                tol: fc.tol,
                max_sweeps: fc.max_sweeps,
            };
            m.seed("prior_bootstrap", *seed);
            let dist = parametric_bootstrap_with(&panel.spec, &fit.theta_hat, &panel.shape(), &opts)?;
            empirical_bayes_prior(&dist)?
        }
    })
}

/// Posterior summaries of the coordinates and identified quantities of a chain.
fn chain_intervals(spec: &ModelSpec, chain: &ChainResult, level: f64) -> CliResult<(Value, Value)> {
    let coords = (0..chain.dim())
        .map(|j| {
            let x = chain.coordinate(j);
            summarize(&chain.names[j], sdecov_core::stats::mean(&x), &x, level)
        })
        .collect::<sdecov_core::Result<Vec<_>>>()?;
    let per_draw: Vec<Vec<(String, f64)>> = chain.draws.iter().map(|d| spec.identified_quantities(d)).collect();
    let ident = match per_draw.first() {
        Some(first) => (0..first.len())
            .map(|k| {
                let x: Vec<f64> = per_draw.iter().map(|d| d[k].1).collect();
                summarize(&first[k].0, sdecov_core::stats::mean(&x), &x, level)
            })
            .collect::<sdecov_core::Result<Vec<_>>>()?,
        None => Vec::new(),
    };
    Ok((json!(coords), json!(ident)))
}

fn chain_rows(chain: &ChainResult) -> (Vec<String>, Vec<Vec<String>>) {
    let mut header = vec!["draw".to_string()];
    header.extend(chain.names.iter().cloned());
    let rows = chain
        .draws
        .iter()
        .enumerate()
        .map(|(i, d)| {
            let mut row = vec![(i + 1).to_string()];
            row.extend(d.iter().map(|v| num(*v)));
            row
        })
        .collect();
    (header, rows)
}

pub fn abc(
    out: &mut OutDir,
    m: &mut Manifest,
    io: &DataArgs,
    epsilon: Option<f64>,
    n_accept: Option<usize>,
    seed: Option<u64>,
    name: &Path,
) -> CliResult<()> {
    let (cfg, panel) = load_panel(m, io)?;
    let ac = block(&cfg.abc, "abc")?.clone();
    let prior = resolve_prior(m, &cfg, &panel, &ac.prior)?;
    let mut opts = AbcOptions::new(epsilon.unwrap_or(ac.epsilon), n_accept.unwrap_or(ac.n_accept), seed.unwrap_or(ac.seed));
    if !(opts.epsilon > 0.0) || opts.n_accept == 0 {
        return Err(CliError::Usage("--epsilon must be positive and --n-accept at least 1".into()));
    }
    opts.noise = ac.noise;
    if let Some(t) = ac.max_trials {
        opts.max_trials = t;
    }
    m.seed("abc", opts.seed);
    let res = abc_rejection(&panel, &prior, &opts)?;
    let (coords, ident) = chain_intervals(&panel.spec, &res.chain, ac.level)?;
    let (header, rows) = chain_rows(&res.chain);
    out.write_csv(&sibling(name, "_chain.csv"), &header, &rows)?;
    let drows: Vec<Vec<String>> = res
        .distances
        .iter()
        .zip(&res.trial_indices)
        .enumerate()
        .map(|(i, (d, t))| vec![(i + 1).to_string(), t.to_string(), num(*d)])
        .collect();
    out.write_csv(
        &sibling(name, "_distances.csv"),
        &["draw".into(), "trial".into(), "distance".into()],
        &drows,
    )?;
    out.write_json(
        name,
        &json!({
            "epsilon": res.epsilon,
            "n_accept": opts.n_accept,
            "trials": res.trials,
            "acceptance_rate": res.acceptance_rate,
            "noise": opts.noise,
            "seed": opts.seed,
            "prior": prior,
            "level": ac.level,
            "coordinates": coords,
            "identified": ident,
        }),
    )?;
    Ok(())
}

pub fn gibbs(
    out: &mut OutDir,
    m: &mut Manifest,
    io: &DataArgs,
    iters: Option<usize>,
    thin: Option<usize>,
    seed: Option<u64>,
    name: &Path,
) -> CliResult<()> {
    let (cfg, panel) = load_panel(m, io)?;
    let gc = block(&cfg.gibbs, "gibbs")?.clone();
    let prior = resolve_prior(m, &cfg, &panel, &gc.prior)?;
    let init = match &gc.init {
        Some(v) => cfg.model.theta(v.clone()).map_err(|e| CliError::config("gibbs.init", e.to_string()))?,
        None => estimate(m, &cfg, &panel, None, None)?.0.theta_hat,
    };
    let opts = GibbsOptions::new(iters.unwrap_or(gc.iters), thin.unwrap_or(gc.thin), seed.unwrap_or(gc.seed));
    m.seed("gibbs", opts.seed);
    let res = gibbs_sampler(&panel, &prior, &init, &opts)?;
    let diags = chain_diagnostics(&res.chain);
    let (coords, ident) = chain_intervals(&panel.spec, &res.chain, gc.level)?;

    let (header, rows) = chain_rows(&res.chain);
    out.write_csv(&sibling(name, "_chain.csv"), &header, &rows)?;
    let running: Vec<Vec<String>> = (0..res.chain.len())
        .map(|i| {
            let mut row = vec![(i + 1).to_string()];
            row.extend(diags.iter().map(|d| num(d.running_means[i])));
            row
        })
        .collect();
    out.write_csv(&sibling(name, "_running_means.csv"), &header, &running)?;
    let max_lag = diags.iter().map(|d| d.autocorrelation.len()).max().unwrap_or(0);
    let mut acf_header = vec!["lag".to_string()];
    acf_header.extend(res.chain.names.iter().cloned());
    let acf: Vec<Vec<String>> = (0..max_lag)
        .map(|k| {
            let mut row = vec![(k + 1).to_string()];
            row.extend(diags.iter().map(|d| d.autocorrelation.get(k).map_or(String::new(), |v| num(*v))));
            row
        })
        .collect();
    out.write_csv(&sibling(name, "_autocorrelation.csv"), &acf_header, &acf)?;
    let diag_json: Vec<Value> = diags
        .iter()
        .map(|d| json!({"name": d.name, "mean": d.mean, "sd": d.sd, "ess": d.ess, "degenerate": d.degenerate}))
        .collect();
    out.write_json(
        name,
        &json!({
            "iters": res.iterations,
            "thin": res.thin,
            "draws": res.chain.len(),
            "seed": opts.seed,
            "init": init.values(),
            "prior": prior,
            "level": gc.level,
            "diagnostics": diag_json,
            "coordinates": coords,
            "identified": ident,
        }),
    )?;
    Ok(())
}

pub fn re_loglik(out: &mut OutDir, m: &mut Manifest, io: &DataArgs, params: &Path, name: &Path) -> CliResult<()> {
    let (_, panel) = load_panel(m, io)?;
    read_input(m, params)?;
    let bytes = std::fs::read(params).map_err(|e| CliError::io(params, e))?;
    let mut de = serde_json::Deserializer::from_slice(&bytes);
    let p: REParams = serde_path_to_error::deserialize(&mut de).map_err(|e| CliError::Json {
        path: params.to_path_buf(),
        message: format!("at `{}`: {}", e.path(), e.inner()),
    })?;
    let terms = re_marginal_terms(&panel, &p)?;
    let total: f64 = terms.iter().sum();
    let rows: Vec<Vec<String>> = panel
        .subjects
        .iter()
        .zip(&terms)
        .map(|(s, t)| vec![s.id.clone(), num(*t)])
        .collect();
    out.write_csv(&sibling(name, "_terms.csv"), &["subject".into(), "loglik".into()], &rows)?;
    out.write_json(
        name,
        &json!({"loglik": total, "n_subjects": panel.n_subjects(), "params": p}),
    )?;
    Ok(())
}

/// Identifiable one-covariate model used by `verify` without a config.
fn default_experiment() -> (ModelSpec, config::ExperimentConfig) {
    let range = CovariateRange::new(-2.0, 2.0).expect("static range");
    let spec = ModelSpec::linear_covariate_drift(1, range);
    let exp = config::ExperimentConfig {
        theta0: vec![-1.0, 0.5],
        design: Design::NonIid {
            x0s: vec![0.5, 1.0, 1.5],
            t_ends: vec![1.0, 2.0],
            step: 0.01,
            covariates: CovariateGenerator {
                xi_mean: -2.0,
                xi_sd: 0.5,
                z0: 1.0,
            },
        },
        n_list: vec![10, 40, 160],
        reps: 500,
        n: 160,
        seed: 0,
        prior: None,
        gibbs_iters: 100_000,
        gibbs_thin: 10,
    };
    (spec, exp)
}

fn without_runtime(mut v: Value) -> (Value, Value) {
    let rt = v.as_object_mut().and_then(|o| o.remove("runtime_secs")).unwrap_or(Value::Null);
    (v, rt)
}

fn qq_rows(names: &[String], columns: &[Vec<f64>]) -> Vec<Vec<String>> {
    names
        .iter()
        .zip(columns)
        .flat_map(|(nm, col)| {
            qq_normal(col)
                .into_iter()
                .map(move |(t, e)| vec![nm.clone(), num(t), num(e)])
        })
        .collect()
}

fn qq_header() -> Vec<String> {
    vec!["coordinate".into(), "theoretical_quantile".into(), "empirical_quantile".into()]
}

#[allow(clippy::too_many_arguments)]
pub fn verify(
    out: &mut OutDir,
    m: &mut Manifest,
    kind: ExperimentKind,
    config: Option<&Path>,
    reps: Option<usize>,
    n: Option<usize>,
    seed: Option<u64>,
    name: &Path,
) -> CliResult<()> {
    let (spec, mut exp) = match config {
        Some(path) => {
            let cfg = load_config(m, path)?;
            let exp = block(&cfg.experiment, "experiment")?.clone();
            (cfg.model, exp)
        }
        None => default_experiment(),
    };
    if let Some(r) = reps {
        exp.reps = r;
    }
    if let Some(n) = n {
        exp.n = n;
    }
    if let Some(s) = seed {
        exp.seed = s;
    }
    if exp.reps == 0 || exp.n == 0 {
        return Err(CliError::Usage("--reps and --n must be at least 1".into()));
    }
    m.seed("experiment", exp.seed);
    let theta0 = spec
        .theta(exp.theta0.clone())
        .map_err(|e| CliError::config("experiment.theta0", e.to_string()))?;
    let names = theta0.names().to_vec();
    let dim = names.len();
    let column = |rows: &[Vec<f64>], j: usize| -> Vec<f64> { rows.iter().map(|r| r[j]).collect() };
    let (report, std_header, std_rows, qq) = match kind {
        ExperimentKind::Consistency => {
            let mut r = consistency_experiment(&spec, &theta0, &exp.design, &exp.n_list, exp.reps, exp.seed)?;
            let estimates = std::mem::take(&mut r.estimates);
            let decreasing = r.strictly_decreasing();
            let mut header = vec!["n".to_string(), "replicate".into()];
            header.extend(names.iter().cloned());
            let mut rows = Vec::new();
            let mut last = Vec::new();
            for (row, est) in r.rows.iter().zip(&estimates) {
                let root = (row.n as f64).sqrt();
                last = est
                    .iter()
                    .map(|e| e.iter().zip(&exp.theta0).map(|(a, b)| root * (a - b)).collect::<Vec<f64>>())
                    .collect();
                for (k, s) in last.iter().enumerate() {
                    let mut line = vec![row.n.to_string(), (k + 1).to_string()];
                    line.extend(s.iter().map(|v| num(*v)));
                    rows.push(line);
                }
            }
            // Studentized at the largest panel size.
            let cols: Vec<Vec<f64>> = (0..dim)
                .map(|j| {
                    let c = column(&last, j);
                    let sd = sdecov_core::stats::variance(&c).sqrt();
                    c.iter().map(|v| if sd > 0.0 { v / sd } else { *v }).collect()
                })
                .collect();
            let mut v = serde_json::to_value(&r).map_err(|e| CliError::Usage(e.to_string()))?;
            v["strictly_decreasing"] = json!(decreasing);
            (v, header, rows, qq_rows(&names, &cols))
        }
        ExperimentKind::MleNormality => {
            let mut r = normality_experiment(&spec, &theta0, &exp.design, exp.n, exp.reps, exp.seed)?;
            let standardized = std::mem::take(&mut r.standardized);
            let mut header = vec!["replicate".to_string()];
            header.extend(names.iter().cloned());
            let rows = standardized
                .iter()
                .enumerate()
                .map(|(k, s)| {
                    let mut line = vec![(k + 1).to_string()];
                    line.extend(s.iter().map(|v| num(*v)));
                    line
                })
                .collect();
            let cols: Vec<Vec<f64>> = (0..dim).map(|j| column(&standardized, j)).collect();
            let v = serde_json::to_value(&r).map_err(|e| CliError::Usage(e.to_string()))?;
            (v, header, rows, qq_rows(&names, &cols))
        }
        ExperimentKind::PosteriorNormality => {
            let prior = match &exp.prior {
                Some(p) => p.clone(),
                None => PriorSpec::iid(dim, 0.0, 10.0)?,
            };
            let gibbs = GibbsOptions::new(exp.gibbs_iters, exp.gibbs_thin, derive_stream(exp.seed, Stream::Gibbs, &[]));
            let mut r = posterior_normality_experiment(&spec, &theta0, &exp.design, exp.n, &prior, &gibbs, exp.seed)?;
            let psi = std::mem::take(&mut r.psi);
            let mut header = vec!["draw".to_string()];
            header.extend(names.iter().cloned());
            let rows = psi
                .iter()
                .enumerate()
                .map(|(k, s)| {
                    let mut line = vec![(k + 1).to_string()];
                    line.extend(s.iter().map(|v| num(*v)));
                    line
                })
                .collect();
            let cols: Vec<Vec<f64>> = (0..dim).map(|j| column(&psi, j)).collect();
            let mut v = serde_json::to_value(&r).map_err(|e| CliError::Usage(e.to_string()))?;
            v["max_ks"] = json!(r.max_ks());
            v["prior"] = json!(prior);
            (v, header, rows, qq_rows(&names, &cols))
        }
    };
    let (mut report, runtime) = without_runtime(report);
    report["experiment"] = json!(format!("{kind:?}"));
    report["theta0"] = json!(exp.theta0);
    m.timings["experiment_secs"] = runtime;
    out.write_csv(&sibling(name, "_standardized.csv"), &std_header, &std_rows)?;
    out.write_csv(&sibling(name, "_qq.csv"), &qq_header(), &qq)?;
    out.write_json(name, &report)?;
    Ok(())
}
