use nalgebra::DMatrix;
use rand::Rng;
use sdecov_core::model::{ModelSpec, TimeGrid};
use sdecov_core::random_effects::{panel_suff_stats, re_marginal_loglik, re_suff_stats, REParams};
use sdecov_core::seed;
use sdecov_core::simulate::{
    simulate_covariates, simulate_panel, CovariateGenerator, CovariatePath, Panel, PanelShape, SubjectPath,
};

fn panel(n: usize, steps: usize, seed: u64) -> Panel {
    let spec = ModelSpec::product_drift();
    let grid = TimeGrid::new(1.0, steps).unwrap();
    let gen = CovariateGenerator {
        xi_mean: -1.0,
        xi_sd: 0.5,
        z0: 1.0,
    };
    let covs = simulate_covariates(n, &grid, &gen, Some(spec.drift.covariate_ranges[0]), seed).unwrap();
    let shape = PanelShape::iid(n, grid, 0.5, covs).unwrap();
    simulate_panel(&spec, &spec.theta(vec![1.0, -1.0, 2.0, -2.0]).unwrap(), &shape, seed + 1).unwrap()
}

fn random_sigma<R: Rng>(rng: &mut R) -> Vec<Vec<f64>> {
    let l = [[rng.random_range(0.2..1.5), 0.0], [rng.random_range(-1.0..1.0), rng.random_range(0.2..1.5)]];
    (0..2)
        .map(|i| (0..2).map(|j| (0..2).map(|k| l[i][k] * l[j][k]).sum()).collect())
        .collect()
}

#[test]
fn determinants_stay_positive() {
    let mut rng = seed::rng(31);
    for k in 0..100 {
        let p = panel(3, 40, 200 + k);
        let beta = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
        let sigma = random_sigma(&mut rng);
        let s = DMatrix::from_fn(2, 2, |i, j| sigma[i][j]);
        for st in panel_suff_stats(&p, &beta).unwrap() {
            let det = (DMatrix::identity(2, 2) + &st.b * &s).determinant();
            assert!(det > 0.0, "instance {k}: det {det}");
        }
    }
}

#[test]
fn appending_observations_increases_information_diagonal() {
    // Same path observed over a longer window with the same step.
    let long = panel(1, 120, 41);
    let s = &long.subjects[0];
    let beta = [2.0, -2.0];
    let full = re_suff_stats(&long.spec.drift, &long.spec.diffusion, &s.path, &s.covariates, &beta).unwrap();
    let step = s.path.grid.step();
    for m in [10usize, 40, 80, 119] {
        let grid = TimeGrid::new(m as f64 * step, m).unwrap();
        let path = SubjectPath::new(0, grid, s.path.states[..=m].to_vec()).unwrap();
        let cols: Vec<Vec<f64>> = vec![s.covariates.column(0)[..=m].to_vec()];
        let cov = CovariatePath::from_columns(0, grid, &cols).unwrap();
        let short = re_suff_stats(&long.spec.drift, &long.spec.diffusion, &path, &cov, &beta).unwrap();
        for i in 0..2 {
            assert!(short.b[(i, i)] <= full.b[(i, i)] * (1.0 + 1e-12), "m = {m}, entry {i}");
        }
    }
}

#[test]
fn relabeling_subjects_leaves_loglik_unchanged() {
    let p = panel(6, 50, 51);
    let params = REParams {
        mu: vec![0.5, -0.5],
        sigma: vec![vec![1.0, 0.3], vec![0.3, 0.6]],
        beta: vec![2.0, -2.0],
    };
    let base = re_marginal_loglik(&p, &params).unwrap();
    let mut shuffled = p.clone();
    shuffled.subjects.reverse();
    shuffled.subjects.swap(0, 3);
    for (i, s) in shuffled.subjects.iter_mut().enumerate() {
        s.id = format!("renamed{i}");
    }
    let other = re_marginal_loglik(&shuffled, &params).unwrap();
    assert!((base - other).abs() <= 1e-12 * base.abs().max(1.0), "{base} vs {other}");
}
