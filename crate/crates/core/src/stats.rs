//! Goodness-of-fit statistics against the standard normal.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Unbiased sample variance; zero for fewer than two values.
pub fn variance(x: &[f64]) -> f64 {
    if x.len() < 2 {
        return 0.0;
    }
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() - 1) as f64
}

fn std_normal() -> Normal {
    Normal::standard()
}

/// Survival function of the Kolmogorov distribution.
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=200 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-300 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
    pub n: usize,
}

/// One-sample Kolmogorov-Smirnov test against `Normal(0, 1)`, with the
/// small-sample adjusted asymptotic p-value.
pub fn ks_standard_normal(sample: &[f64]) -> KsResult {
    let n = sample.len();
    if n == 0 {
        return KsResult {
            statistic: f64::NAN,
            p_value: f64::NAN,
            n,
        };
    }
    let mut x = sample.to_vec();
    x.sort_by(f64::total_cmp);
    let norm = std_normal();
    let nf = n as f64;
    let d = x
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let f = norm.cdf(*v);
            (f - i as f64 / nf).max((i + 1) as f64 / nf - f)
        })
        .fold(0.0, f64::max);
    let sq = nf.sqrt();
    KsResult {
        statistic: d,
        p_value: kolmogorov_sf((sq + 0.12 + 0.11 / sq) * d),
        n,
    }
}

/// Pairs `(theoretical, empirical)` quantiles with plotting positions
/// `(i - 1/2) / n`.
pub fn qq_normal(sample: &[f64]) -> Vec<(f64, f64)> {
    let mut x = sample.to_vec();
    x.sort_by(f64::total_cmp);
    let n = x.len() as f64;
    let norm = std_normal();
    x.iter()
        .enumerate()
        .map(|(i, v)| (norm.inverse_cdf((i as f64 + 0.5) / n), *v))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MardiaResult {
    pub skewness: f64,
    pub skewness_p: f64,
    pub kurtosis: f64,
    pub kurtosis_z: f64,
    pub kurtosis_p: f64,
}

/// Mardia's multivariate skewness and kurtosis tests. `None` when the
/// sample covariance is singular or there are too few rows.
pub fn mardia(rows: &[Vec<f64>]) -> Option<MardiaResult> {
    let n = rows.len();
    let d = rows.first()?.len();
    if n <= d || d == 0 {
        return None;
    }
    let nf = n as f64;
    let mean = DVector::from_fn(d, |j, _| rows.iter().map(|r| r[j]).sum::<f64>() / nf);
    let centered: Vec<DVector<f64>> = rows.iter().map(|r| DVector::from_column_slice(r) - &mean).collect();
    let mut s = DMatrix::zeros(d, d);
    for c in &centered {
        s += c * c.transpose();
    }
    s /= nf;
    let s_inv = s.try_inverse()?;
    let proj: Vec<DVector<f64>> = centered.iter().map(|c| &s_inv * c).collect();
    let mut b1 = 0.0;
    let mut b2 = 0.0;
    for i in 0..n {
        for j in 0..n {
            let g = centered[i].dot(&proj[j]);
            b1 += g * g * g;
        }
        let gii = centered[i].dot(&proj[i]);
        b2 += gii * gii;
    }
    b1 /= nf * nf;
    b2 /= nf;
    let df = (d * (d + 1) * (d + 2)) as f64 / 6.0;
    let skew_stat = nf * b1 / 6.0;
    let skewness_p = 1.0 - ChiSquared::new(df).ok()?.cdf(skew_stat);
    let df2 = (d * (d + 2)) as f64;
    let kurtosis_z = (b2 - df2) / (8.0 * df2 / nf).sqrt();
    let kurtosis_p = 2.0 * (1.0 - std_normal().cdf(kurtosis_z.abs()));
    Some(MardiaResult {
        skewness: b1,
        skewness_p,
        kurtosis: b2,
        kurtosis_z,
        kurtosis_p,
    })
}
