//! Ready-made synthetic panels.

use crate::error::Result;
use crate::model::{CovariateRange, DiffusionSpec, ModelSpec, ThetaVector, TimeGrid};
use crate::seed::{self, Stream};
use crate::simulate::{simulate_covariate_panel, simulate_panel, CovariateGenerator, Panel, PanelShape};

pub const NSE_SUBJECTS: usize = 15;
pub const NSE_ROWS: usize = 467;
/// Trading days per year.
const NSE_DAYS_PER_YEAR: f64 = 250.0;

/// Six-parameter covariate drift `(t1 + t2 c1 + t3 c2 + t4 c3)(t5 + t6 x)`
/// with a CKLS diffusion per subject.
pub fn nse_like_spec() -> ModelSpec {
    ModelSpec::ckls_covariates(0.3, 0.9, CovariateRange { lo: -3.0, hi: 3.0 }).expect("static spec is valid")
}

pub fn nse_like_theta() -> ThetaVector {
    nse_like_spec()
        .theta(vec![0.3, 0.1, -0.05, 0.02, 1.0, 0.01])
        .expect("static values are in bounds")
}

/// Subject `i`'s CKLS coefficients `(A_i, B_i)`.
pub fn nse_like_diffusion(i: usize) -> DiffusionSpec {
    DiffusionSpec::Ckls {
        a: 0.2 + 0.02 * i as f64,
        b: 0.8 + 0.02 * i as f64,
    }
}

/// Shape of the synthetic panel: 15 price series of 467 daily closes that
/// share three market-wide covariate series.
pub fn nse_like_shape(seed: u64) -> Result<PanelShape> {
    let spec = nse_like_spec();
    let grid = TimeGrid::new((NSE_ROWS - 1) as f64 / NSE_DAYS_PER_YEAR, NSE_ROWS - 1)?;
    let generator = CovariateGenerator {
        xi_mean: -1.0,
        xi_sd: 0.2,
        z0: 0.0,
    };
    let market = simulate_covariate_panel(
        1,
        &grid,
        &generator,
        &spec.drift.covariate_ranges,
        seed::derive_stream(seed, Stream::CovariateNoise, &[0]),
    )?
    .remove(0);
    let covariates = (0..NSE_SUBJECTS)
        .map(|i| {
            let mut c = market.clone();
            c.subject = i;
            c
        })
        .collect();
    Ok(PanelShape {
        ids: (1..=NSE_SUBJECTS).map(|i| format!("company{i:02}")).collect(),
        grids: vec![grid; NSE_SUBJECTS],
        x0s: (0..NSE_SUBJECTS).map(|i| 100.0 + 25.0 * i as f64).collect(),
        covariates,
        diffusions: (0..NSE_SUBJECTS).map(|i| Some(nse_like_diffusion(i))).collect(),
    })
}

pub fn nse_like_panel(seed: u64) -> Result<Panel> {
    let shape = nse_like_shape(seed)?;
    simulate_panel(&nse_like_spec(), &nse_like_theta(), &shape, seed)
}
