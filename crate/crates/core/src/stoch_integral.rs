//! The stochastic convolution G(t) = (C_H/Γ(α))∫₀ᵗ (t−s)^{α−1} dB_H(s).
//!
//! Paths are computed exactly for the piecewise-linear interpolant of the
//! sampled fBm: on each cell dB_H = (ΔB_j/dt) ds, so
//! G(t_n) = (C_H/Γ(α)) Σ_j κ_{n,j} ΔB_j/dt with κ the cell integral of the
//! kernel. The sum is a Toeplitz product and is evaluated by FFT.

use std::sync::Arc;

use rustfft::{num_complex::Complex64, Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{FsdeError, Result};
use crate::fbm::{FbmPath, HurstParam};
use crate::grid::{write_csv, TimeGrid};
use crate::mlf::FracOrder;
use crate::quad::adaptive;
use crate::rng::RngSpec;
use crate::special::{beta, gamma, rgamma};
use crate::stats::{log_log_fit, ExponentFit};

fn check_model(alpha: f64, h: HurstParam) -> Result<()> {
    h.require_model()?;
    let lo = 1.0 - h.value();
    if !(alpha > lo && alpha <= 1.0) {
        return Err(FsdeError::domain(format!(
            "order must lie in (1-H, 1] = ({lo}, 1], got {alpha}"
        )));
    }
    Ok(())
}

/// C_H = 1/√(H(2H−1)Γ(1−α)), defined for α ∈ (1−H, 1).
pub fn c_h(alpha: FracOrder, h: HurstParam) -> Result<f64> {
    let a = alpha.value();
    check_model(a, h)?;
    if a >= 1.0 {
        return Err(FsdeError::domain("C_H vanishes at α = 1 (Γ(1−α) is infinite)"));
    }
    let hv = h.value();
    Ok(1.0 / (hv * (2.0 * hv - 1.0) * gamma(1.0 - a)).sqrt())
}

/// β_H = √(2/Γ(3−2H)).
pub fn beta_h(h: HurstParam) -> Result<f64> {
    h.require_model()?;
    Ok((2.0 / gamma(3.0 - 2.0 * h.value())).sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct GPath {
    pub grid: TimeGrid,
    pub alpha: f64,
    pub hurst: HurstParam,
    pub values: Vec<f64>,
    pub source: Option<RngSpec>,
}

impl GPath {
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> std::io::Result<()> {
        write_csv(out, "G", &self.grid, &self.values)
    }
}

// forward plan, inverse plan, kernel transform
type Spectrum = (Arc<dyn Fft<f64>>, Arc<dyn Fft<f64>>, Vec<Complex64>);

/// Reusable convolution x_n = scale/Γ(β) Σ_{j<n} κ_{n−j} ΔB_j/dt with
/// κ_m = dt^β (m^β − (m−1)^β)/β.
#[derive(Clone)]
pub struct Convolution {
    grid: TimeGrid,
    order: f64,
    scale: f64,
    kernel: Vec<f64>,
    spectrum: Option<Spectrum>,
}

impl std::fmt::Debug for Convolution {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Convolution")
            .field("grid", &self.grid)
            .field("order", &self.order)
            .field("scale", &self.scale)
            .finish()
    }
}

const DIRECT_BELOW: usize = 64;

impl Convolution {
    /// Kernel given by its cell weights k_m, m = 1..=N (k_0 unused).
    pub(crate) fn from_kernel(grid: TimeGrid, kernel: Vec<f64>) -> Self {
        let n = grid.n_steps();
        let spectrum = (n >= DIRECT_BELOW).then(|| {
            let m = (2 * n).next_power_of_two();
            let mut planner = FftPlanner::new();
            let fwd = planner.plan_fft_forward(m);
            let inv = planner.plan_fft_inverse(m);
            let mut k = vec![Complex64::new(0.0, 0.0); m];
            for (i, v) in kernel.iter().enumerate().skip(1) {
                k[i] = Complex64::new(*v, 0.0);
            }
            fwd.process(&mut k);
            (fwd, inv, k)
        });
        Self { grid, order: f64::NAN, scale: 1.0, kernel, spectrum }
    }

    /// Convolution with (scale/Γ(β))(t − s)^{β−1} against dB.
    pub fn new(grid: TimeGrid, order: f64, scale: f64) -> Result<Self> {
        if !(order > 0.0) {
            return Err(FsdeError::domain(format!("convolution order must be positive, got {order}")));
        }
        let dt = grid.dt();
        let c = scale * rgamma(order) * dt.powf(order) / order / dt;
        let kernel = (0..=grid.n_steps())
            .map(|m| if m == 0 { 0.0 } else { c * ((m as f64).powf(order) - (m as f64 - 1.0).powf(order)) })
            .collect();
        let mut conv = Self::from_kernel(grid, kernel);
        conv.order = order;
        conv.scale = scale;
        Ok(conv)
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    /// out_n = Σ_{j<n} k_{n−j} inc_j, out_0 = 0.
    pub fn apply(&self, values: &[f64]) -> Vec<f64> {
        let n = self.grid.n_steps();
        let inc: Vec<f64> = values.windows(2).map(|w| w[1] - w[0]).collect();
        let mut out = vec![0.0; n + 1];
        match &self.spectrum {
            None => {
                for i in 1..=n {
                    out[i] = (0..i).map(|j| self.kernel[i - j] * inc[j]).sum();
                }
            }
            Some((fwd, inv, k)) => {
                let m = k.len();
                let mut buf = vec![Complex64::new(0.0, 0.0); m];
                for (b, v) in buf.iter_mut().zip(&inc) {
                    *b = Complex64::new(*v, 0.0);
                }
                fwd.process(&mut buf);
                for (b, kv) in buf.iter_mut().zip(k) {
                    *b *= kv;
                }
                inv.process(&mut buf);
                let s = 1.0 / m as f64;
                for i in 1..=n {
                    out[i] = buf[i].re * s;
                }
            }
        }
        out
    }
}

/// Sampler of G for a fixed grid, order and Hurst parameter.
#[derive(Debug, Clone)]
pub struct GSampler {
    alpha: f64,
    hurst: HurstParam,
    conv: Convolution,
}

impl GSampler {
    pub fn new(grid: TimeGrid, alpha: FracOrder, h: HurstParam) -> Result<Self> {
        let a = alpha.value();
        let lo = 1.0 - h.value();
        h.require_model()?;
        if !(a > lo && a < 1.0) {
            return Err(FsdeError::domain(format!(
                "order must lie in (1-H, 1) = ({lo}, 1), got {a}"
            )));
        }
        Ok(Self { alpha: a, hurst: h, conv: Convolution::new(grid, a, c_h(alpha, h)?)? })
    }

    pub fn sample(&self, fbm: &FbmPath) -> Result<GPath> {
        if fbm.grid != *self.conv.grid() {
            return Err(FsdeError::contract("fBm grid differs from sampler grid"));
        }
        if fbm.hurst != self.hurst {
            return Err(FsdeError::contract("fBm Hurst parameter differs from sampler"));
        }
        Ok(GPath {
            grid: fbm.grid,
            alpha: self.alpha,
            hurst: self.hurst,
            values: self.conv.apply(&fbm.values),
            source: fbm.source,
        })
    }
}

#[allow(non_snake_case)]
pub fn sample_G(fbm: &FbmPath, alpha: FracOrder) -> Result<GPath> {
    GSampler::new(fbm.grid, alpha, fbm.hurst)?.sample(fbm)
}

/// (scale/Γ(β))∫₀ᵗ (t−s)^{β−1} dB_H(s) on the fBm grid, any β > 0.
pub fn stochastic_convolution(fbm: &FbmPath, order: f64, scale: f64) -> Result<Vec<f64>> {
    Ok(Convolution::new(fbm.grid, order, scale)?.apply(&fbm.values))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhiSettings {
    pub quad_tol: f64,
    pub max_subdivisions: usize,
}

impl Default for PhiSettings {
    fn default() -> Self {
        Self { quad_tol: 1e-11, max_subdivisions: 4000 }
    }
}

/// Covariance φ(t1, t2) of G.
///
/// With t1 ≤ t2, d = t2 − t1 and s = t1 − r the integrand is
/// s^{α−1}(s+d)^p + (s+d)^{α−1}s^p, p = 2H−2+α. Each endpoint power s^q is
/// removed by u = s^{q+1} before adaptive Gauss–Kronrod.
pub fn phi_covariance(t1: f64, t2: f64, alpha: FracOrder, h: HurstParam, settings: PhiSettings) -> Result<f64> {
    let a = alpha.value();
    check_model(a, h)?;
    if a >= 1.0 {
        return Err(FsdeError::domain("φ is defined for α < 1"));
    }
    if !(t1 >= 0.0 && t2 >= 0.0) {
        return Err(FsdeError::domain(format!("φ needs t1, t2 >= 0, got ({t1}, {t2})")));
    }
    if !(settings.quad_tol > 0.0) {
        return Err(FsdeError::domain("quad_tol must be positive"));
    }
    let hv = h.value();
    let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
    if lo == 0.0 {
        return Ok(0.0);
    }
    let p = 2.0 * hv - 2.0 + a;
    let pref = beta(2.0 * hv - 1.0, a) / (beta(a, 1.0 - a) * gamma(a));
    let d = hi - lo;
    if d == 0.0 {
        let e = a - 1.0 + p;
        return Ok(pref * 2.0 * lo.powf(e + 1.0) / (e + 1.0));
    }
    let tol = 0.5 * settings.quad_tol / pref;
    // ∫₀^lo s^q g(s) ds = (1/(q+1)) ∫₀^{lo^{q+1}} g(u^{1/(q+1)}) du
    let term = |q: f64, e: f64| -> Result<f64> {
        let k = 1.0 / (q + 1.0);
        let (v, _) = adaptive(|u: f64| (u.powf(k) + d).powf(e), 0.0, lo.powf(q + 1.0), tol / k, settings.max_subdivisions)
            .map_err(|err| match err {
                FsdeError::Accuracy { achieved, target, .. } => FsdeError::Accuracy {
                    what: format!("φ({t1}, {t2}) quadrature"),
                    achieved: achieved * k * pref,
                    target: target * k * pref,
                },
                other => other,
            })?;
        Ok(k * v)
    };
    Ok(pref * (term(a - 1.0, p)? + term(p, a - 1.0)?))
}

/// β_H² R_{1−H}(t1, t2): the covariance of G at α = α*.
pub fn fdt_g_covariance(t1: f64, t2: f64, h: HurstParam) -> Result<f64> {
    let hv = h.value();
    let b2 = beta_h(h)?.powi(2);
    let e = 2.0 - 2.0 * hv;
    Ok(b2 * 0.5 * (t1.powf(e) + t2.powf(e) - (t2 - t1).abs().powf(e)))
}

fn check_ensemble(paths: &[GPath], min: usize) -> Result<()> {
    if paths.len() < min {
        return Err(FsdeError::contract(format!("need >= {min} paths, got {}", paths.len())));
    }
    let g = paths[0].grid;
    if paths.iter().any(|p| p.grid != g) {
        return Err(FsdeError::contract("paths must share a grid"));
    }
    Ok(())
}

/// Mean-square increments E|G(t+ℓ) − G(t)|² at dyadic lags ℓ = 2^k dt,
/// averaged over all start nodes and paths. Returns (lags, msq).
pub fn increment_moments(paths: &[GPath], max_lag_steps: usize) -> (Vec<f64>, Vec<f64>) {
    let grid = paths[0].grid;
    let mut lags = Vec::new();
    let mut msq = Vec::new();
    let mut l = 1;
    while l <= max_lag_steps && l < grid.n_steps() {
        let per_path: Vec<f64> = paths
            .iter()
            .map(|p| {
                let v = &p.values;
                let s: f64 = (0..v.len() - l).map(|i| (v[i + l] - v[i]).powi(2)).sum();
                s / (v.len() - l) as f64
            })
            .collect();
        let m = crate::stats::pairwise_sum(&per_path) / paths.len() as f64;
        lags.push(l as f64 * grid.dt());
        msq.push(m);
        l *= 2;
    }
    (lags, msq)
}

/// Slope of log E|ΔG|² against log lag over dyadic lags 4dt … T/8.
///
/// The fit starts at 4dt because below a few cells the piecewise-linear
/// noise is smooth.
pub fn holder_exponent_estimate(paths: &[GPath]) -> Result<ExponentFit> {
    check_ensemble(paths, 1000)?;
    let grid = paths[0].grid;
    let (lags, msq) = increment_moments(paths, grid.n_steps() / 8);
    log_log_fit(&lags, &msq, 4.0 * grid.dt(), f64::INFINITY)
}

/// Ensemble variance of G(t_n) at every node.
pub fn variance_curve(paths: &[GPath]) -> Vec<f64> {
    let n = paths[0].values.len();
    (0..n)
        .map(|i| {
            let x: Vec<f64> = paths.iter().map(|p| p.values[i]).collect();
            crate::stats::mean_var(&x).1
        })
        .collect()
}

/// Slope of log var G(t) against log t over t ∈ [16 dt, T].
pub fn subdiffusion_variance(paths: &[GPath]) -> Result<ExponentFit> {
    check_ensemble(paths, 2)?;
    let grid = paths[0].grid;
    let var = variance_curve(paths);
    let t = grid.times();
    log_log_fit(&t, &var, 16.0 * grid.dt(), f64::INFINITY)
}
