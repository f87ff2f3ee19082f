//! End-to-end acceptance checks. Each test prints one PASS/FAIL line.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use sdecov_core::bayes::{
    abc_acceptance_profile, abc_rejection, abc_trial_distances, chain_diagnostics, effective_sample_size,
    empirical_bayes_prior, gibbs_sampler, AbcNoise, AbcOptions, GibbsOptions, PriorSpec,
};
use sdecov_core::bootstrap::{parametric_bootstrap, percentile_ci, BootstrapDist};
use sdecov_core::estimation::{block_relaxation_mle, grid_search_mle, multi_start_mle, random_start, MleOptions};
use sdecov_core::experiments::{
    consistency_experiment, normality_experiment, posterior_normality_experiment, Design,
};
use sdecov_core::likelihood::{log_likelihood, score};
use sdecov_core::model::{Bounds, CovariateRange, ModelSpec, ThetaVector, TimeGrid};
use sdecov_core::random_effects::{
    panel_suff_stats, re_marginal_loglik, subject_marginal_loglik, subject_marginal_loglik_inverse_form, REParams,
};
use sdecov_core::seed;
use sdecov_core::simulate::{
    simulate_covariates, simulate_panel, CovariateGenerator, CovariatePath, Panel, PanelShape, Subject, SubjectPath,
};

/// Writes straight to the stderr handle so the line survives output capture.
fn report(id: u32, name: &str, pass: bool, detail: &str) {
    let line = format!("criterion {id} ({name}): {} | {detail}\n", if pass { "PASS" } else { "FAIL" });
    let _ = std::io::Write::write_all(&mut std::io::stderr(), line.as_bytes());
}

const THETA0: [f64; 4] = [1.0, -1.0, 2.0, -2.0];

/// The two-factor setup with 20 subjects, unit horizon and 100 steps.
fn product_panel(seed: u64) -> (ModelSpec, ThetaVector, PanelShape, Panel) {
    let spec = ModelSpec::product_drift();
    let grid = TimeGrid::new(1.0, 100).unwrap();
    let covs = simulate_covariates(
        20,
        &grid,
        &CovariateGenerator::default(),
        Some(spec.drift.covariate_ranges[0]),
        seed,
    )
    .unwrap();
    let shape = PanelShape::iid(20, grid, 0.0, covs).unwrap();
    let theta0 = spec.theta(THETA0.to_vec()).unwrap();
    let panel = simulate_panel(&spec, &theta0, &shape, seed.wrapping_add(1)).unwrap();
    (spec, theta0, shape, panel)
}

fn true_products(spec: &ModelSpec) -> Vec<(String, f64)> {
    spec.identified_quantities(&THETA0)
}

struct OuterRun {
    spec: ModelSpec,
    panel: Panel,
    /// Wiener seed of the observed panel.
    seed: u64,
    boot: BootstrapDist,
}

fn outer_run(r: u64, replicates: usize) -> OuterRun {
    let seed = 40_000 + 2 * r;
    let (spec, _, shape, panel) = product_panel(seed);
    let init = random_start(&panel, seed);
    let mle = block_relaxation_mle(&panel, &init, 1e-5).unwrap();
    let boot = parametric_bootstrap(&spec, &mle.theta_hat, &shape, replicates, seed ^ 0x5eed).unwrap();
    OuterRun {
        spec,
        panel,
        seed: seed.wrapping_add(1),
        boot,
    }
}

#[test]
fn criterion_4_and_5_bootstrap_and_abc_coverage() {
    let start = Instant::now();
    let runs: Vec<OuterRun> = (0..20).map(|r| outer_run(r, 1000)).collect();
    let boot_secs = start.elapsed().as_secs_f64();

    let truth = true_products(&runs[0].spec);
    let mut boot_cover = vec![0usize; truth.len()];
    for run in &runs {
        for (k, (_, sample)) in run.boot.identified(&run.spec).iter().enumerate() {
            let (lo, hi) = percentile_ci(sample, 0.95).unwrap();
            boot_cover[k] += (lo <= truth[k].1 && truth[k].1 <= hi) as usize;
        }
    }
    let pass4 = boot_cover.iter().all(|&c| c >= 17) && boot_secs < 1800.0;
    report(
        4,
        "bootstrap coverage",
        pass4,
        &format!("coverage of 20 per product {boot_cover:?}, {boot_secs:.1}s"),
    );

    let start = Instant::now();
    let mut abc_cover = vec![0usize; truth.len()];
    let mut all_within = true;
    let mut rates = Vec::new();
    for run in &runs {
        let prior = empirical_bayes_prior(&run.boot).unwrap();
        let mut opts = AbcOptions::new(0.1, 1000, run.seed ^ 0xabc);
        opts.noise = AbcNoise::Common { seed: run.seed };
        let res = abc_rejection(&run.panel, &prior, &opts).unwrap();
        all_within &= res.distances.iter().all(|&d| d < 0.1);
        rates.push(res.acceptance_rate);
        for (k, (_, t)) in truth.iter().enumerate() {
            let sample: Vec<f64> = res
                .chain
                .draws
                .iter()
                .map(|d| run.spec.identified_quantities(d)[k].1)
                .collect();
            let (lo, hi) = percentile_ci(&sample, 0.95).unwrap();
            abc_cover[k] += (lo <= *t && *t <= hi) as usize;
        }
    }
    let abc_secs = start.elapsed().as_secs_f64();

    // Full-size run and the nested-threshold check on one panel.
    let run = &runs[0];
    let prior = empirical_bayes_prior(&run.boot).unwrap();
    let mut opts = AbcOptions::new(0.1, 10_000, 77);
    opts.noise = AbcNoise::Common { seed: run.seed };
    let big = abc_rejection(&run.panel, &prior, &opts).unwrap();
    all_within &= big.distances.iter().all(|&d| d < 0.1) && big.chain.len() == 10_000;
    let dist = abc_trial_distances(&run.panel, &prior, 200_000, 78, AbcNoise::Common { seed: run.seed });
    let profile = abc_acceptance_profile(&dist, &[0.05, 0.1, 0.2]);
    let monotone = profile.windows(2).all(|w| w[0].1 <= w[1].1);

    let pass5 = all_within && abc_cover.iter().all(|&c| c >= 17) && monotone;
    report(
        5,
        "ABC",
        pass5,
        &format!(
            "all d_x < eps: {all_within}; coverage {abc_cover:?}; profile {profile:?}; mean rate {:.2e}; {abc_secs:.1}s",
            rates.iter().sum::<f64>() / rates.len() as f64
        ),
    );
    assert!(pass4 && pass5);
}

/// Exact OU path `dX = -theta X dt + dW` sampled at `n` equal steps on [0, 1].
fn exact_ou_path(theta: f64, x0: f64, n: usize, seed: u64) -> Vec<f64> {
    let h = 1.0 / n as f64;
    let a = (-theta * h).exp();
    let sd = ((1.0 - (-2.0 * theta * h).exp()) / (2.0 * theta)).sqrt();
    let mut rng = seed::rng(seed);
    let mut x = vec![x0];
    for _ in 0..n {
        let e: f64 = StandardNormal.sample(&mut rng);
        x.push(a * x.last().unwrap() + sd * e);
    }
    x
}

/// Log transition density of the exact OU chain.
fn ou_exact_loglik(theta: f64, x: &[f64], h: f64) -> f64 {
    let a = (-theta * h).exp();
    let var = (1.0 - (-2.0 * theta * h).exp()) / (2.0 * theta);
    x.windows(2)
        .map(|w| {
            let r = w[1] - a * w[0];
            -0.5 * (2.0 * std::f64::consts::PI * var).ln() - r * r / (2.0 * var)
        })
        .sum()
}

fn single_path_panel(spec: &ModelSpec, states: Vec<f64>) -> Panel {
    let grid = TimeGrid::new(1.0, states.len() - 1).unwrap();
    Panel::new(
        spec.clone(),
        vec![Subject {
            id: "s0".into(),
            path: SubjectPath::new(0, grid, states).unwrap(),
            covariates: CovariatePath::empty(0, grid),
            diffusion: None,
        }],
    )
    .unwrap()
}

#[test]
fn criterion_1_ou_likelihood_oracle() {
    let start = Instant::now();
    let spec = ModelSpec::ornstein_uhlenbeck();
    let (t_true, t_alt) = (1.0, 2.0);
    let steps = [50usize, 100, 200];
    let mut err = [0.0f64; 3];
    let seeds = 200;
    for s in 0..seeds {
        let fine = exact_ou_path(t_true, 10.0, 200, 9000 + s);
        for (e, &n) in err.iter_mut().zip(&steps) {
            let stride = 200 / n;
            let x: Vec<f64> = fine.iter().step_by(stride).copied().collect();
            let panel = single_path_panel(&spec, x.clone());
            let girsanov = log_likelihood(&panel, &[t_true]).unwrap() - log_likelihood(&panel, &[t_alt]).unwrap();
            let h = 1.0 / n as f64;
            let exact = ou_exact_loglik(t_true, &x, h) - ou_exact_loglik(t_alt, &x, h);
            *e += (girsanov - exact).abs() / seeds as f64;
        }
    }
    let ratios = [err[0] / err[1], err[1] / err[2]];
    let secs = start.elapsed().as_secs_f64();
    let pass = ratios.iter().all(|r| (1.5..=3.0).contains(r)) && secs < 60.0;
    report(
        1,
        "OU likelihood oracle",
        pass,
        &format!("mean |error| {:.4e} {:.4e} {:.4e}, ratios {ratios:.3?}, {secs:.2}s", err[0], err[1], err[2]),
    );
    assert!(pass);
}

fn reduced_model_panel(seed: u64) -> (ModelSpec, Panel) {
    let spec = ModelSpec::linear_covariate_drift(1, CovariateRange::new(-2.0, 2.0).unwrap());
    let grid = TimeGrid::new(1.0, 100).unwrap();
    let gen = CovariateGenerator {
        xi_mean: -2.0,
        xi_sd: 0.5,
        z0: 1.0,
    };
    let covs = simulate_covariates(20, &grid, &gen, Some(spec.drift.covariate_ranges[0]), seed).unwrap();
    let shape = PanelShape::iid(20, grid, 1.0, covs).unwrap();
    let theta = spec.theta(vec![-1.0, 0.5]).unwrap();
    let panel = simulate_panel(&spec, &theta, &shape, seed + 1).unwrap();
    (spec, panel)
}

#[test]
fn criterion_2_block_relaxation() {
    let start = Instant::now();
    let mut trace_ok = true;
    let mut worst_score = 0.0f64;
    let mut converged = 0;
    for r in 0..100u64 {
        let (_, _, _, panel) = product_panel(70_000 + r);
        let init = random_start(&panel, r);
        let res = block_relaxation_mle(&panel, &init, 1e-12).unwrap();
        converged += res.converged as usize;
        trace_ok &= res
            .loglik_trace
            .windows(2)
            .all(|w| w[1] >= w[0] - 1e-12 * w[0].abs().max(1.0));
        let s = score(&panel, &res.theta_hat).unwrap();
        for (j, g) in s.gradient.iter().enumerate() {
            if !s.boundary.contains(&j) {
                worst_score = worst_score.max(g.abs());
            }
        }
    }

    let (spec, panel) = reduced_model_panel(123);
    let init = spec.theta(vec![0.0, 0.0]).unwrap();
    let mle = block_relaxation_mle(&panel, &init, 1e-12).unwrap();
    let box_bounds = [Bounds { lo: -3.0, hi: 1.0 }, Bounds { lo: -1.5, hi: 2.5 }];
    let grid = grid_search_mle(&panel, 4001, Some(&box_bounds)).unwrap();
    let within_cell = grid
        .theta
        .iter()
        .zip(mle.theta_hat.values())
        .zip(&grid.cell)
        .all(|((g, m), c)| (g - m).abs() <= *c);
    let secs = start.elapsed().as_secs_f64();

    let pass = trace_ok && worst_score < 1e-6 && converged == 100 && within_cell && !grid.flat && secs < 120.0;
    report(
        2,
        "block relaxation",
        pass,
        &format!(
            "traces nondecreasing: {trace_ok}; converged {converged}/100; max interior |score| {worst_score:.2e}; \
             grid {:?} vs MLE {:?} (cell {:?}); {secs:.1}s",
            grid.theta,
            mle.theta_hat.values(),
            grid.cell
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_3_product_invariance() {
    let mut worst_inv = 0.0f64;
    for r in 0..10u64 {
        let (_, _, _, panel) = product_panel(80_000 + r);
        let mut rng = seed::rng(r);
        let t: Vec<f64> = (0..4)
            .map(|_| {
                let e: f64 = StandardNormal.sample(&mut rng);
                2.0 * e
            })
            .collect();
        let base = log_likelihood(&panel, &t).unwrap();
        for c in [-1.0, 0.5, 2.0] {
            let scaled = [c * t[0], c * t[1], t[2] / c, t[3] / c];
            worst_inv = worst_inv.max((log_likelihood(&panel, &scaled).unwrap() - base).abs());
        }
    }

    let (spec, _, _, panel) = product_panel(81_000);
    let fits = multi_start_mle(&panel, 10, 5, &MleOptions::with_tol(1e-12)).unwrap();
    let products: Vec<Vec<f64>> = fits
        .iter()
        .map(|f| spec.identified_quantities(f.theta_hat.values()).into_iter().map(|p| p.1).collect())
        .collect();
    let mut worst_rel = 0.0f64;
    for k in 0..products[0].len() {
        let reference = products[0][k];
        for p in &products {
            worst_rel = worst_rel.max((p[k] - reference).abs() / reference.abs().max(1e-300));
        }
    }
    let raw_spread = fits.iter().map(|f| f.theta_hat.get(0)).fold(f64::NEG_INFINITY, f64::max)
        - fits.iter().map(|f| f.theta_hat.get(0)).fold(f64::INFINITY, f64::min);
    let pass = worst_inv < 1e-10 && worst_rel < 1e-6;
    report(
        3,
        "product invariance",
        pass,
        &format!(
            "max |logL(theta) - logL(scaled)| {worst_inv:.2e}; max relative product spread over 10 restarts \
             {worst_rel:.2e}; raw xi0 spread {raw_spread:.3}"
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_6_gibbs_conjugate_oracle() {
    let start = Instant::now();
    let (spec, _, _, panel) = product_panel(90_001);
    let beta = [2.0, -2.0];
    let prior_var = 100.0;
    // The xi block with beta fixed: log L = xi' a - xi' M xi / 2,
    // m_k = (b(x_k), z_k b(x_k)).
    let mut a = DVector::zeros(2);
    let mut m = DMatrix::zeros(2, 2);
    for s in &panel.subjects {
        let h = s.path.grid.step();
        for k in 0..s.path.grid.n_steps() {
            let x = s.path.states[k];
            let b = beta[0] + beta[1] * x;
            let v = DVector::from_vec(vec![b, s.covariates.at(k)[0] * b]);
            a += &v * (s.path.states[k + 1] - x);
            m += &v * v.transpose() * h;
        }
    }
    let precision = m + DMatrix::identity(2, 2) / prior_var;
    let cov = precision.clone().try_inverse().unwrap();
    let mean = &cov * a;

    let prior = PriorSpec::iid(4, 0.0, prior_var.sqrt()).unwrap();
    let init = spec.theta(vec![0.1, 0.1, beta[0], beta[1]]).unwrap();
    let mut opts = GibbsOptions::new(100_000, 10, 6);
    opts.free = Some(vec![true, true, false, false]);
    let res = gibbs_sampler(&panel, &prior, &init, &opts).unwrap();
    let diag = chain_diagnostics(&res.chain);
    let mut worst = 0.0f64;
    let mut detail = String::new();
    for j in 0..2 {
        let x = res.chain.coordinate(j);
        let n = x.len() as f64;
        let mu = x.iter().sum::<f64>() / n;
        let sq: Vec<f64> = x.iter().map(|v| (v - mu) * (v - mu)).collect();
        let var = sq.iter().sum::<f64>() / (n - 1.0);
        let se_mean = (var / diag[j].ess).sqrt();
        let sq_mean = sq.iter().sum::<f64>() / n;
        let sq_var = sq.iter().map(|v| (v - sq_mean) * (v - sq_mean)).sum::<f64>() / (n - 1.0);
        let se_var = (sq_var / effective_sample_size(&sq).unwrap()).sqrt();
        let zm = (mu - mean[j]).abs() / se_mean;
        let zv = (var - cov[(j, j)]).abs() / se_var;
        worst = worst.max(zm).max(zv);
        detail += &format!(
            "xi{j}: mean {mu:.5} vs {:.5} ({zm:.2} se), var {var:.3e} vs {:.3e} ({zv:.2} se); ",
            mean[j],
            cov[(j, j)]
        );
    }
    let pass = res.chain.len() == 10_000 && worst < 3.0;
    report(
        6,
        "Gibbs conjugate oracle",
        pass,
        &format!("{detail}{:.1}s", start.elapsed().as_secs_f64()),
    );
    assert!(pass);
}

/// Log of the Monte Carlo mean of exp(xi'A - xi'B xi / 2), xi ~ N(mu, Sigma),
/// and its delta-method standard error.
fn mc_log_mean(a: &DVector<f64>, b: &DMatrix<f64>, mu: &DVector<f64>, l: &DMatrix<f64>, draws: usize, seed: u64) -> (f64, f64) {
    let mut rng = seed::rng(seed);
    let d = mu.len();
    let logs: Vec<f64> = (0..draws)
        .map(|_| {
            let e = DVector::from_fn(d, |_, _| StandardNormal.sample(&mut rng));
            let xi = mu + l * e;
            xi.dot(a) - 0.5 * xi.dot(&(b * &xi))
        })
        .collect();
    let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logs.iter().map(|v| (v - top).exp()).collect();
    let n = draws as f64;
    let mean = w.iter().sum::<f64>() / n;
    let var = w.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (top + mean.ln(), (var / n).sqrt() / mean)
}

#[test]
fn criterion_7_random_effects() {
    let start = Instant::now();
    let spec = ModelSpec::product_drift();
    let grid = TimeGrid::new(1.0, 50).unwrap();
    let mut mc_ok = true;
    let mut degen_ok = true;
    let mut worst_rel = 0.0f64;
    let mut detail = String::new();
    for inst in 0..5u64 {
        let covs = simulate_covariates(5, &grid, &CovariateGenerator::default(), Some(spec.drift.covariate_ranges[0]), inst)
            .unwrap();
        let shape = PanelShape::iid(5, grid, 0.5, covs).unwrap();
        let theta = spec.theta(vec![1.0, -1.0, 2.0, -2.0]).unwrap();
        let panel = simulate_panel(&spec, &theta, &shape, 100 + inst).unwrap();
        let params = REParams {
            mu: vec![0.8, -0.7],
            sigma: vec![vec![0.3, 0.05], vec![0.05, 0.2]],
            beta: vec![2.0, -2.0],
        };
        let closed = re_marginal_loglik(&panel, &params).unwrap();
        let stats = panel_suff_stats(&panel, &params.beta).unwrap();
        let mu = DVector::from_vec(params.mu.clone());
        let l = params.sigma_cholesky().unwrap();
        let (mut mc, mut var) = (0.0, 0.0);
        for (i, st) in stats.iter().enumerate() {
            let (v, se) = mc_log_mean(&st.a, &st.b, &mu, &l, 100_000, 1000 * inst + i as u64);
            mc += v;
            var += se * se;
            let inv = subject_marginal_loglik_inverse_form(st, &mu, &params.sigma_matrix()).unwrap();
            let stable = subject_marginal_loglik(st, &mu, &l).unwrap();
            worst_rel = worst_rel.max((inv - stable).abs() / stable.abs().max(1e-300));
        }
        let z = (closed - mc).abs() / var.sqrt();
        mc_ok &= z < 3.0;
        detail += &format!("{z:.2} ");

        let tiny = REParams {
            sigma: vec![vec![1e-10, 0.0], vec![0.0, 1e-10]],
            ..params.clone()
        };
        let fixed: f64 = stats
            .iter()
            .map(|st| mu.dot(&st.a) - 0.5 * mu.dot(&(&st.b * &mu)))
            .sum();
        degen_ok &= (re_marginal_loglik(&panel, &tiny).unwrap() - fixed).abs() < 1e-6;
    }
    let pass = mc_ok && degen_ok && worst_rel < 1e-8;
    report(
        7,
        "random effects",
        pass,
        &format!(
            "MC z-scores [{}]; degenerate limit ok: {degen_ok}; max relative form gap {worst_rel:.2e}; {:.1}s",
            detail.trim(),
            start.elapsed().as_secs_f64()
        ),
    );
    assert!(pass);
}

fn identifiable_design() -> Design {
    Design::NonIid {
        x0s: vec![0.5, 1.0, 1.5],
        t_ends: vec![1.0, 2.0],
        step: 0.01,
        covariates: CovariateGenerator {
            xi_mean: -2.0,
            xi_sd: 0.5,
            z0: 1.0,
        },
    }
}

#[test]
fn criterion_8_asymptotics() {
    let start = Instant::now();
    let spec = ModelSpec::linear_covariate_drift(1, CovariateRange::new(-2.0, 2.0).unwrap());
    let theta0 = spec.theta(vec![-1.0, 0.5]).unwrap();
    let design = identifiable_design();
    let cons = consistency_experiment(&spec, &theta0, &design, &[10, 40, 160], 500, 8).unwrap();
    let decreasing = cons.strictly_decreasing();
    let norm = normality_experiment(&spec, &theta0, &design, 160, 500, 9).unwrap();
    let ks_ok = norm.ks.iter().all(|k| k.p_value > 0.01);
    let prior = PriorSpec::iid(2, 0.0, 10.0).unwrap();
    let post = posterior_normality_experiment(&spec, &theta0, &design, 160, &prior, &GibbsOptions::new(100_000, 10, 10), 10)
        .unwrap();
    let post_ok = post.psi.len() == 10_000 && post.max_ks() < 0.05;
    let secs = start.elapsed().as_secs_f64();
    let pass = decreasing && ks_ok && post_ok && secs < 1200.0;
    report(
        8,
        "asymptotics",
        pass,
        &format!(
            "MAE rows {:?}; MLE KS p {:?}; posterior KS {:?}; {secs:.1}s",
            cons.rows.iter().map(|r| (r.n, r.mean_abs_error.clone())).collect::<Vec<_>>(),
            norm.ks.iter().map(|k| k.p_value).collect::<Vec<_>>(),
            post.ks.iter().map(|k| k.statistic).collect::<Vec<_>>()
        ),
    );
    assert!(pass);
}

mod determinism {
    use std::path::{Path, PathBuf};
    use std::process::Command;

    use serde_json::Value;

    const BIN: &str = env!("CARGO_BIN_EXE_sdecov");

    const CONFIG: &str = r#"{
  "model": {
    "drift": {"transforms": ["identity"], "covariate_ranges": [{"lo": -2, "hi": 2}], "factor": {"family": "affine"}},
    "diffusion": {"family": "constant", "sigma": 1}
  },
  "simulation": {"n_subjects": 20, "t_end": 1, "n_steps": 100, "x0": 0, "theta": [1, -1, 2, -2], "seed": 5},
  "fit": {"tol": 1e-5, "init": "random", "init_seed": 3},
  "bootstrap": {"replicates": 40, "seed": 11},
  "abc": {"epsilon": 1.0, "n_accept": 30, "seed": 4, "prior": {"kind": "iid_normal", "mean": 0, "sd": 3}},
  "gibbs": {"iters": 4000, "thin": 2, "seed": 9, "prior": {"kind": "empirical_bayes", "replicates": 30, "seed": 12}}
}"#;

    const EXPERIMENT: &str = r#"{
  "model": {
    "drift": {"transforms": ["identity"], "covariate_ranges": [{"lo": -2, "hi": 2}], "factor": {"family": "linear", "scale": 1}},
    "diffusion": {"family": "constant", "sigma": 1}
  },
  "experiment": {
    "theta0": [-1, 0.5],
    "design": {"setup": "non_iid", "x0s": [0.5, 1, 1.5], "t_ends": [1, 2], "step": 0.01,
               "covariates": {"xi_mean": -2, "xi_sd": 0.5, "z0": 1}},
    "n_list": [5, 20],
    "reps": 30,
    "n": 20,
    "seed": 2,
    "gibbs_iters": 5000,
    "gibbs_thin": 5
  }
}"#;

    const RE_PARAMS: &str = r#"{"mu": [0.5, -0.5], "sigma": [[1, 0.2], [0.2, 0.5]], "beta": [2, -2]}"#;

    fn run(args: &[String]) -> i32 {
        let out = Command::new(BIN).args(args).env("RUST_LOG", "error").output().unwrap();
        if !out.status.success() {
            eprintln!("{}", String::from_utf8_lossy(&out.stderr));
        }
        out.status.code().unwrap_or(-1)
    }

    fn manifest(dir: &Path, name: &str) -> Value {
        serde_json::from_slice(&std::fs::read(dir.join(name)).unwrap()).unwrap()
    }

    /// Replays `argv` from a manifest with another thread count and output
    /// directory; returns the output paths that differ.
    fn replay(first: &Path, second: &Path, manifest_name: &str, threads: usize) -> Result<usize, String> {
        let m = manifest(first, manifest_name);
        let mut argv: Vec<String> = m["argv"]
            .as_array()
            .unwrap()
            .iter()
            .map(|a| a.as_str().unwrap().to_string())
            .collect();
        for (flag, value) in [("--threads", threads.to_string()), ("--out-dir", second.display().to_string())] {
            let i = argv.iter().position(|a| a == flag).ok_or(format!("{flag} missing"))?;
            argv[i + 1] = value;
        }
        for input in m["inputs"].as_array().unwrap() {
            let bytes = std::fs::read(input["path"].as_str().unwrap()).unwrap();
            let digest = sdecov_digest(&bytes);
            if input["sha256"].as_str() != Some(digest.as_str()) {
                return Err(format!("input {} changed", input["path"]));
            }
        }
        if run(&argv) != 0 {
            return Err(format!("replay of {manifest_name} failed"));
        }
        let again = manifest(second, manifest_name);
        if m["outputs"] != again["outputs"] {
            return Err(format!("{manifest_name}: output hashes differ"));
        }
        let outputs = m["outputs"].as_array().unwrap();
        for o in outputs {
            let rel = o["path"].as_str().unwrap();
            if std::fs::read(first.join(rel)).unwrap() != std::fs::read(second.join(rel)).unwrap() {
                return Err(format!("{rel} differs"));
            }
        }
        Ok(outputs.len())
    }

    fn sdecov_digest(bytes: &[u8]) -> String {
        use sha2::{Digest, Sha256};
        hex::encode(Sha256::digest(bytes))
    }

    fn args(dir: &Path, rest: &[&str]) -> Vec<String> {
        let mut v = vec!["--threads".to_string(), "1".into(), "--out-dir".into(), dir.display().to_string()];
        v.extend(rest.iter().map(|s| s.to_string()));
        v
    }

    #[test]
    fn criterion_9_determinism() {
        let start = std::time::Instant::now();
        let tmp = tempfile::tempdir().unwrap();
        let root = tmp.path();
        let cfg = root.join("config.json");
        let exp = root.join("experiment.json");
        let params = root.join("re.json");
        std::fs::write(&cfg, CONFIG).unwrap();
        std::fs::write(&exp, EXPERIMENT).unwrap();
        std::fs::write(&params, RE_PARAMS).unwrap();
        let a: PathBuf = root.join("a");
        let s = |p: &Path| p.display().to_string();
        let panel = s(&a.join("panel.csv"));
        let nse = s(&a.join("nse.csv"));
        let nse_cfg = s(&a.join("nse_config.json"));
        let pipelines: Vec<(Vec<String>, &str)> = vec![
            (args(&a, &["simulate", "--config", &s(&cfg), "--out", "panel.csv"]), "panel.manifest.json"),
            (args(&a, &["simulate", "--preset", "nse-like", "--seed", "8", "--out", "nse.csv"]), "nse.manifest.json"),
            (args(&a, &["ingest", &nse, "--config", &nse_cfg]), "ingest.manifest.json"),
            (args(&a, &["fit", "--config", &s(&cfg), "--data", &panel, "--dump-uv"]), "estimates.manifest.json"),
            (
                args(&a, &["fit", "--config", &nse_cfg, "--data", &nse, "--out", "nse_fit.json"]),
                "nse_fit.manifest.json",
            ),
            (args(&a, &["bootstrap", "--config", &s(&cfg), "--data", &panel]), "bootstrap.manifest.json"),
            (args(&a, &["abc", "--config", &s(&cfg), "--data", &panel]), "abc.manifest.json"),
            (args(&a, &["gibbs", "--config", &s(&cfg), "--data", &panel]), "gibbs.manifest.json"),
            (
                args(&a, &["re-loglik", "--config", &s(&cfg), "--data", &panel, "--params", &s(&params)]),
                "re_loglik.manifest.json",
            ),
            (
                args(&a, &["verify", "--experiment", "consistency", "--config", &s(&exp), "--out", "cons.json"]),
                "cons.manifest.json",
            ),
            (
                args(&a, &["verify", "--experiment", "mle-normality", "--config", &s(&exp), "--out", "norm.json"]),
                "norm.manifest.json",
            ),
            (
                args(&a, &["verify", "--experiment", "posterior-normality", "--config", &s(&exp), "--out", "post.json"]),
                "post.manifest.json",
            ),
        ];
        let mut failures = Vec::new();
        for (argv, _) in &pipelines {
            if run(argv) != 0 {
                failures.push(format!("{} failed", argv[4]));
            }
        }
        let mut compared = 0;
        if failures.is_empty() {
            for (k, threads) in [2usize, 4].into_iter().enumerate() {
                let b = root.join(format!("b{k}"));
                for (_, m) in &pipelines {
                    match replay(&a, &b, m, threads) {
                        Ok(n) => compared += n,
                        Err(e) => failures.push(e),
                    }
                }
            }
        }
        let secs = start.elapsed().as_secs_f64();
        let pass = failures.is_empty() && compared > 0;
        super::report(
            9,
            "determinism",
            pass,
            &format!(
                "{} pipelines replayed from manifests at 2 and 4 threads, {compared} output files compared; failures {failures:?}; {secs:.1}s",
                pipelines.len()
            ),
        );
        assert!(pass);
    }
}
