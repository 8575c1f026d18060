//! Regression, distribution tests and order-fixed reductions.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{FsdeError, Result};

/// Least-squares line y = intercept + slope·x.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExponentFit {
    pub slope: f64,
    pub intercept: f64,
    /// (x_min, x_max) of the fitted data in original (not log) units.
    pub window: (f64, f64),
    pub residual_norm: f64,
    pub slope_se: f64,
}

pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<(f64, f64, f64, f64)> {
    if x.len() != y.len() || x.len() < 3 {
        return Err(FsdeError::contract(format!(
            "linear fit needs >= 3 paired points, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let se = (rss / (n - 2.0) / sxx).sqrt();
    Ok((slope, intercept, rss.sqrt(), se))
}

/// Fits log y against log x over points with x in [lo, hi] and y > 0.
pub fn log_log_fit(x: &[f64], y: &[f64], lo: f64, hi: f64) -> Result<ExponentFit> {
    let (mut lx, mut ly) = (Vec::new(), Vec::new());
    let (mut wmin, mut wmax) = (f64::INFINITY, f64::NEG_INFINITY);
    for (&a, &b) in x.iter().zip(y) {
        if a >= lo && a <= hi && a > 0.0 && b > 0.0 {
            lx.push(a.ln());
            ly.push(b.ln());
            wmin = wmin.min(a);
            wmax = wmax.max(a);
        }
    }
    let (slope, intercept, residual_norm, slope_se) = linear_fit(&lx, &ly)?;
    Ok(ExponentFit { slope, intercept, window: (wmin, wmax), residual_norm, slope_se })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionTest {
    pub statistic: f64,
    pub p_value: f64,
    pub reference: String,
    pub n: usize,
}

/// Kolmogorov survival function Q(λ) = 2 Σ (−1)^{k−1} e^{−2k²λ²}.
pub fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut s = 0.0;
    for k in 1..200 {
        let kf = k as f64;
        let t = (-2.0 * kf * kf * lambda * lambda).exp();
        s += if k % 2 == 1 { t } else { -t };
        if t < 1e-17 {
            break;
        }
    }
    (2.0 * s).clamp(0.0, 1.0)
}

/// One-sample Kolmogorov–Smirnov test with Stephens' small-sample correction.
pub fn ks_test<F: Fn(f64) -> f64>(samples: &[f64], cdf: F, reference: &str) -> Result<DistributionTest> {
    if samples.len() < 2 {
        return Err(FsdeError::contract("KS test needs at least two samples"));
    }
    let mut xs = samples.to_vec();
    if xs.iter().any(|v| !v.is_finite()) {
        return Err(FsdeError::contract("KS test samples must be finite"));
    }
    xs.sort_by(|a, b| a.total_cmp(b));
    let n = xs.len() as f64;
    let mut d = 0.0f64;
    for (i, &x) in xs.iter().enumerate() {
        let f = cdf(x);
        d = d.max(f - i as f64 / n).max((i + 1) as f64 / n - f);
    }
    let sn = n.sqrt();
    let p = kolmogorov_q((sn + 0.12 + 0.11 / sn) * d);
    Ok(DistributionTest { statistic: d, p_value: p, reference: reference.into(), n: xs.len() })
}

/// Pearson chi-square test of counts against expected counts.
pub fn chi_square_test(observed: &[f64], expected: &[f64], reference: &str) -> Result<DistributionTest> {
    if observed.len() != expected.len() || observed.len() < 2 {
        return Err(FsdeError::contract("chi-square needs >= 2 matching bins"));
    }
    let stat: f64 = observed
        .iter()
        .zip(expected)
        .map(|(o, e)| if *e > 0.0 { (o - e).powi(2) / e } else { 0.0 })
        .sum();
    let dof = (observed.len() - 1) as f64;
    let p = 1.0 - ChiSquared::new(dof).map_err(|e| FsdeError::Numerical(e.to_string()))?.cdf(stat);
    Ok(DistributionTest {
        statistic: stat,
        p_value: p.clamp(0.0, 1.0),
        reference: reference.into(),
        n: observed.iter().sum::<f64>() as usize,
    })
}

/// Sum with a fixed pairwise tree, independent of how the caller iterates.
pub fn pairwise_sum(x: &[f64]) -> f64 {
    if x.len() <= 8 {
        return x.iter().sum();
    }
    let mid = x.len() / 2;
    pairwise_sum(&x[..mid]) + pairwise_sum(&x[mid..])
}

/// Unbiased sample mean and variance.
pub fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = pairwise_sum(x) / n;
    let d: Vec<f64> = x.iter().map(|v| (v - m).powi(2)).collect();
    (m, pairwise_sum(&d) / (n - 1.0))
}
