use sdecov_core::bayes::{GibbsOptions, PriorSpec};
use sdecov_core::experiments::{
    consistency_experiment, normality_experiment, posterior_normality_experiment, posterior_normality_on, Design,
};
use sdecov_core::model::{CovariateRange, DiffusionSpec, DriftSpec, FactorFamily, ModelSpec, TimeGrid, Transform};
use sdecov_core::simulate::{simulate_covariates, simulate_panel, CovariateGenerator, PanelShape};

fn setup() -> (ModelSpec, Design) {
    let spec = ModelSpec::linear_covariate_drift(1, CovariateRange::new(-2.0, 2.0).unwrap());
    let design = Design::NonIid {
        x0s: vec![0.5, 1.0, 1.5],
        t_ends: vec![1.0, 2.0],
        step: 0.01,
        covariates: CovariateGenerator {
            xi_mean: -2.0,
            xi_sd: 0.5,
            z0: 1.0,
        },
    };
    (spec, design)
}

#[test]
fn rmse_halves_between_smallest_and_largest_panels() {
    let (spec, design) = setup();
    let theta0 = spec.theta(vec![-1.0, 0.5]).unwrap();
    let r = consistency_experiment(&spec, &theta0, &design, &[10, 160], 500, 21).unwrap();
    for j in 0..2 {
        assert!(r.rows[1].rmse[j] < r.rows[0].rmse[j] / 2.0, "coordinate {j}: {:?}", r.rows);
    }
}

#[test]
fn standardized_errors_have_unit_moments() {
    let (spec, design) = setup();
    let theta0 = spec.theta(vec![-1.0, 0.5]).unwrap();
    let r = normality_experiment(&spec, &theta0, &design, 160, 500, 22).unwrap();
    assert!(!r.flagged && !r.underpowered);
    let bound = 3.0 / (r.reps as f64).sqrt();
    for j in 0..2 {
        assert!(r.means[j].abs() < bound, "mean {j}: {}", r.means[j]);
        assert!((r.variances[j] - 1.0).abs() < 0.2, "variance {j}: {}", r.variances[j]);
    }
}

#[test]
fn posterior_ks_shrinks_with_panel_size() {
    let (spec, design) = setup();
    let theta0 = spec.theta(vec![-1.0, 0.5]).unwrap();
    let prior = PriorSpec::new(vec![-0.5, 0.0], vec![0.5, 0.5]).unwrap();
    let avg = |n: usize| {
        (0..20u64)
            .map(|s| {
                let gibbs = GibbsOptions::new(20_000, 2, 1000 + s);
                posterior_normality_experiment(&spec, &theta0, &design, n, &prior, &gibbs, 300 + s)
                    .unwrap()
                    .max_ks()
            })
            .sum::<f64>()
            / 20.0
    };
    let (small, large) = (avg(20), avg(160));
    assert!(large <= small, "KS {small} at n = 20, {large} at n = 160");
}

#[test]
fn flat_likelihood_posterior_is_the_shifted_prior() {
    let spec = ModelSpec::new(
        DriftSpec {
            transforms: vec![Transform::Identity],
            covariate_ranges: vec![CovariateRange::new(-2.0, 2.0).unwrap()],
            factor: FactorFamily::Constant { value: 0.0 },
        },
        DiffusionSpec::Constant { sigma: 1.0 },
    )
    .unwrap();
    let grid = TimeGrid::new(1.0, 50).unwrap();
    let covs = simulate_covariates(4, &grid, &CovariateGenerator::default(), Some(spec.drift.covariate_ranges[0]), 3)
        .unwrap();
    let shape = PanelShape::iid(4, grid, 0.0, covs).unwrap();
    let init = spec.theta(vec![0.0, 0.0]).unwrap();
    let panel = simulate_panel(&spec, &init, &shape, 4).unwrap();
    let prior = PriorSpec::new(vec![1.0, -1.0], vec![3.0, 3.0]).unwrap();
    let r = posterior_normality_on(&panel, &init, &prior, &GibbsOptions::new(20_000, 1, 5), 6).unwrap();
    assert!(r.information_fallback);
    // Psi is the unscaled draw minus the estimate, so its spread is the
    // prior's and the KS check against N(0, 1) rejects.
    assert!(r.ks.iter().all(|k| k.p_value < 1e-6));
    for j in 0..2 {
        let col: Vec<f64> = r.psi.iter().map(|p| p[j]).collect();
        let m = sdecov_core::stats::mean(&col);
        assert!((m - (prior.means[j] - r.theta_hat[j])).abs() < 0.2, "coordinate {j}: mean {m}");
        let sd = sdecov_core::stats::variance(&col).sqrt();
        assert!((sd - 3.0).abs() < 0.2, "coordinate {j}: sd {sd}");
    }
}
