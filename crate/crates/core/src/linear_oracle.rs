//! Exact solution and stationary law of the model with V′(x) = k·x.
//!
//! With r = −ė_{α,k}, c = 1/(k²Γ(1−α)) and p = 2H − 2 the noise part of the
//! solution has variance Σ(t) = 2c∫₀ᵗ r(s)J(s)ds, where
//!
//! J(s) = ∫₀ˢ r(u)(s − u)^p du,
//!
//! and the stationary covariance is h(τ) = c∫₀^∞ r(v)P(v − τ)dv with
//! P(s) = ∫₀^∞ r(u)|s − u|^p du. J, P⁺(s) = P(s) − J(s) (s > 0) and
//! P⁻(σ) = P(−σ) are tabulated once on a log grid and interpolated.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{FsdeError, Result};
use crate::fbm::{FbmPath, HurstParam};
use crate::mlf::{FracOrder, Relaxation};
use crate::quad::{gl, gl16, graded_left, graded_right, log_panels};
use crate::solver::{InitialLaw, ModelSpec, Potential, SolutionPath, SolveMethod};
use crate::special::{gamma, rgamma};
use crate::stats::{log_log_fit, ExponentFit};
use crate::stoch_integral::{c_h, Convolution};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub k: f64,
    pub alpha: FracOrder,
    pub hurst: HurstParam,
    pub x0: f64,
}

impl LinearModel {
    pub fn new(k: f64, alpha: FracOrder, hurst: HurstParam, x0: f64) -> Result<Self> {
        if !(k > 0.0 && k.is_finite()) {
            return Err(FsdeError::domain(format!("k must be positive, got {k}")));
        }
        let alpha = FracOrder::model(alpha.value(), hurst)?;
        if alpha.value() >= 1.0 {
            return Err(FsdeError::domain("the linear model needs α < 1"));
        }
        if !x0.is_finite() {
            return Err(FsdeError::domain("x0 must be finite"));
        }
        Ok(Self { k, alpha, hurst, x0 })
    }

    /// The model with α = α* = 2 − 2H.
    pub fn fdt(k: f64, hurst: HurstParam, x0: f64) -> Result<Self> {
        Self::new(k, FracOrder::fdt(hurst)?, hurst, x0)
    }

    pub fn is_fdt(&self) -> bool {
        (self.alpha.value() - (2.0 - 2.0 * self.hurst.value())).abs() <= 1e-12
    }

    pub fn spec(&self) -> Result<ModelSpec> {
        ModelSpec::new(self.alpha, self.hurst, Potential::Linear { k: self.k }, InitialLaw::point(self.x0))
    }

    pub fn relaxation(&self) -> Result<Relaxation> {
        Relaxation::new(self.alpha, self.k)
    }

    // 1/(k²Γ(1−α))
    fn noise_factor(&self) -> f64 {
        rgamma(1.0 - self.alpha.value()) / (self.k * self.k)
    }
}

/// Exact-path generator for one grid: x0·e(t_n) plus a Toeplitz convolution
/// of the noise increments.
#[derive(Debug, Clone)]
pub struct ExactLinear {
    model: LinearModel,
    decay: Vec<f64>,
    conv: Convolution,
}

impl ExactLinear {
    pub fn new(model: LinearModel, grid: crate::grid::TimeGrid) -> Result<Self> {
        let rel = model.relaxation()?;
        let e = grid.times().iter().map(|&t| rel.value(t)).collect::<Result<Vec<_>>>()?;
        // −(C_H/k)(1/dt)∫_cell ė(t_n − τ)dτ = −(C_H/k)(e((m−1)dt)... ) with m = n − j
        let s = c_h(model.alpha, model.hurst)? / model.k / grid.dt();
        let mut kernel = vec![0.0; e.len()];
        for m in 1..e.len() {
            kernel[m] = s * (e[m - 1] - e[m]);
        }
        Ok(Self { model, decay: e, conv: Convolution::from_kernel(grid, kernel) })
    }

    pub fn sample(&self, fbm: &FbmPath) -> Result<SolutionPath> {
        self.sample_from(self.model.x0, fbm)
    }

    /// Exact path started from `x0` instead of the model's initial value.
    pub fn sample_from(&self, x0: f64, fbm: &FbmPath) -> Result<SolutionPath> {
        if fbm.grid != *self.conv.grid() {
            return Err(FsdeError::contract("fBm grid differs from the exact-path grid"));
        }
        if fbm.hurst != self.model.hurst {
            return Err(FsdeError::contract("fBm Hurst parameter differs from the model"));
        }
        let noise = self.conv.apply(&fbm.values);
        let values = self.decay.iter().zip(&noise).map(|(e, z)| x0 * e + z).collect();
        Ok(SolutionPath {
            grid: fbm.grid,
            values,
            model: LinearModel { x0, ..self.model }.spec()?,
            noise: fbm.source,
            method: SolveMethod::LinearExact,
        })
    }
}

/// x(t_n) = x0·e_{α,k}(t_n) − (C_H/k)∫₀^{t_n} ė_{α,k}(t_n − τ)dB_H(τ) for the
/// piecewise-linear interpolant of `fbm`; cell integrals of ė are exact.
pub fn exact_path(model: &LinearModel, fbm: &FbmPath) -> Result<SolutionPath> {
    ExactLinear::new(*model, fbm.grid)?.sample(fbm)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadSettings {
    /// Table points per decade of s.
    pub per_decade: usize,
    /// Table range in units of the relaxation time k^{−1/α}.
    pub decades_below: i32,
    pub decades_above: i32,
    /// Largest acceptable absolute error estimate.
    pub abs_tol: f64,
}

impl Default for QuadSettings {
    fn default() -> Self {
        Self { per_decade: 32, decades_below: 8, decades_above: 9, abs_tol: 1e-5 }
    }
}

/// A quadrature result with its absolute error estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub abs_err: f64,
}

// log-grid table with four-point Lagrange interpolation of ln f against ln s
// and power-law continuation beyond both ends
#[derive(Debug, Clone)]
struct LogTable {
    ln_s0: f64,
    step: f64,
    ln_f: Vec<f64>,
    slope_lo: f64,
    slope_hi: f64,
}

impl LogTable {
    fn build<F: Fn(f64) -> f64 + Sync>(f: F, s_min: f64, per_decade: usize, n: usize, slope_lo: f64, slope_hi: f64) -> Self {
        let step = std::f64::consts::LN_10 / per_decade as f64;
        let ln_s0 = s_min.ln();
        let ln_f = (0..n).into_par_iter().map(|i| f((ln_s0 + i as f64 * step).exp()).ln()).collect();
        Self { ln_s0, step, ln_f, slope_lo, slope_hi }
    }

    fn eval(&self, s: f64) -> f64 {
        let u = (s.ln() - self.ln_s0) / self.step;
        let last = (self.ln_f.len() - 1) as f64;
        if u <= 0.0 {
            return (self.ln_f[0] + self.slope_lo * u * self.step).exp();
        }
        if u >= last {
            return (self.ln_f[self.ln_f.len() - 1] + self.slope_hi * (u - last) * self.step).exp();
        }
        let i = (u.floor() as usize).clamp(1, self.ln_f.len() - 3);
        let x = u - i as f64;
        let (f0, f1, f2, f3) = (self.ln_f[i - 1], self.ln_f[i], self.ln_f[i + 1], self.ln_f[i + 2]);
        let v = -f0 * x * (x - 1.0) * (x - 2.0) / 6.0 + f1 * (x + 1.0) * (x - 1.0) * (x - 2.0) / 2.0
            - f2 * (x + 1.0) * x * (x - 2.0) / 2.0
            + f3 * (x + 1.0) * x * (x - 1.0) / 6.0;
        v.exp()
    }

    fn s_max(&self) -> f64 {
        (self.ln_s0 + (self.ln_f.len() - 1) as f64 * self.step).exp()
    }
}

// relative position of the graded-mesh floor
const FLOOR: f64 = 1e-13;
// ∫_a^∞ is split into log panels up to a·HALF_LINE_SPAN and a power-law tail
const HALF_LINE_SPAN: f64 = 1e10;

/// Deterministic quadratures for Σ(t), Σ − Σ(t) and h(τ) of one model.
#[derive(Debug, Clone)]
pub struct LinearQuadrature {
    model: LinearModel,
    rel: Relaxation,
    settings: QuadSettings,
    p: f64,
    scale: f64,
    j: LogTable,
    p_plus: LogTable,
    p_minus: LogTable,
    // P(s) ~ |s|^{min(α+p, 0)} near s = 0
    cusp: f64,
    // relative error of the tables at off-grid points
    table_err: f64,
}

impl LinearQuadrature {
    pub fn new(model: LinearModel, settings: QuadSettings) -> Result<Self> {
        if settings.per_decade < 4 || settings.decades_below < 1 || settings.decades_above < 1 || !(settings.abs_tol > 0.0) {
            return Err(FsdeError::domain(format!("invalid quadrature settings {settings:?}")));
        }
        let rel = model.relaxation()?;
        let a = model.alpha.value();
        let p = 2.0 * model.hurst.value() - 2.0;
        let scale = rel.time_scale();
        let s_min = scale * 10f64.powi(-settings.decades_below);
        let n = settings.per_decade * (settings.decades_below + settings.decades_above) as usize + 1;
        let mut q = Self {
            model,
            rel,
            settings,
            p,
            scale,
            j: LogTable { ln_s0: 0.0, step: 1.0, ln_f: vec![], slope_lo: 0.0, slope_hi: 0.0 },
            p_plus: LogTable { ln_s0: 0.0, step: 1.0, ln_f: vec![], slope_lo: 0.0, slope_hi: 0.0 },
            p_minus: LogTable { ln_s0: 0.0, step: 1.0, ln_f: vec![], slope_lo: 0.0, slope_hi: 0.0 },
            cusp: (a + p).min(0.0),
            table_err: 0.0,
        };
        let pd = settings.per_decade;
        let cusp = q.cusp;
        q.j = LogTable::build(|s| q.direct_j(s), s_min, pd, n, a + p, p);
        q.p_plus = LogTable::build(|s| q.direct_p_plus(s).0, s_min, pd, n, cusp, p - a);
        q.p_minus = LogTable::build(|s| q.direct_p_minus(s).0, s_min, pd, n, cusp, p);
        // off-grid spot checks at midpoints across the range
        let mut err = 0.0f64;
        for d in -(settings.decades_below - 1)..settings.decades_above {
            let s = scale * 10f64.powf(d as f64 + 0.5 / pd as f64);
            err = err.max((q.j.eval(s) / q.direct_j(s) - 1.0).abs());
            err = err.max((q.p_plus.eval(s) / q.direct_p_plus(s).0 - 1.0).abs());
            err = err.max((q.p_minus.eval(s) / q.direct_p_minus(s).0 - 1.0).abs());
        }
        q.table_err = err;
        Ok(q)
    }

    pub fn model(&self) -> &LinearModel {
        &self.model
    }

    /// Largest relative interpolation error seen at the spot checks.
    pub fn table_error(&self) -> f64 {
        self.table_err
    }

    fn r(&self, t: f64) -> f64 {
        self.rel.r_unchecked(t)
    }

    fn floor(&self, len: f64) -> f64 {
        FLOOR * len.min(self.scale)
    }

    // ∫_a^∞ f with f ~ C u^q (q < −1) at infinity; returns (value, tail size)
    fn half_line<F: FnMut(f64) -> f64>(&self, mut f: F, a: f64, q: f64) -> (f64, f64) {
        let b = a.max(self.scale) * HALF_LINE_SPAN;
        let body = log_panels(&mut f, a, b);
        let tail = f(b) * b / (-(q + 1.0));
        (body + tail, tail.abs())
    }

    fn direct_j(&self, s: f64) -> f64 {
        let (a, p) = (self.model.alpha.value(), self.p);
        let m = 0.5 * s;
        let fl = self.floor(m);
        graded_left(|u, _| self.r(u) * (s - u).powf(p), 0.0, m, a - 1.0, fl)
            + graded_right(|u, d| self.r(u) * d.powf(p), m, s, p, fl)
    }

    // ∫_s^∞ r(u)(u − s)^p du
    fn direct_p_plus(&self, s: f64) -> (f64, f64) {
        let (a, p) = (self.model.alpha.value(), self.p);
        let near = graded_left(|u, d| self.r(u) * d.powf(p), s, 2.0 * s, p, self.floor(s));
        let (far, tail) = self.half_line(|u| self.r(u) * (u - s).powf(p), 2.0 * s, p - a - 1.0);
        (near + far, tail)
    }

    // ∫_0^∞ r(u)(u + σ)^p du, σ > 0
    fn direct_p_minus(&self, sigma: f64) -> (f64, f64) {
        let (a, p) = (self.model.alpha.value(), self.p);
        let near = graded_left(|u, d| self.r(u) * (d + sigma).powf(p), 0.0, sigma, a - 1.0, self.floor(sigma));
        let (far, tail) = self.half_line(|u| self.r(u) * (u + sigma).powf(p), sigma, p - a - 1.0);
        (near + far, tail)
    }

    fn j_at(&self, s: f64) -> f64 {
        self.j.eval(s)
    }

    // P(s) for real s ≠ 0
    fn p_at(&self, s: f64) -> f64 {
        if s > 0.0 {
            self.j.eval(s) + self.p_plus.eval(s)
        } else {
            self.p_minus.eval(-s)
        }
    }

    fn finish(&self, what: &str, value: f64, tail: f64) -> Result<Estimate> {
        let abs_err = self.table_err * value.abs() + tail;
        if !(abs_err <= self.settings.abs_tol) || !value.is_finite() {
            return Err(FsdeError::Accuracy { what: what.into(), achieved: abs_err, target: self.settings.abs_tol });
        }
        Ok(Estimate { value, abs_err })
    }

    /// Σ(t) = 2c∫₀ᵗ r(s)J(s)ds.
    pub fn sigma_t(&self, t: f64) -> Result<Estimate> {
        if !(t > 0.0) {
            return Err(FsdeError::domain(format!("Σ(t) needs t > 0, got {t}")));
        }
        let (a, p) = (self.model.alpha.value(), self.p);
        let c = 2.0 * self.model.noise_factor();
        let v = graded_left(|s, _| self.r(s) * self.j_at(s), 0.0, t, 2.0 * a - 1.0 + p, self.floor(t));
        self.finish("Σ(t)", c * v, 0.0)
    }

    /// Σ − Σ(t) = 2c∫_t^∞ r(s)J(s)ds, without subtraction.
    pub fn sigma_tail(&self, t: f64) -> Result<Estimate> {
        if !(t > 0.0) {
            return Err(FsdeError::domain(format!("Σ − Σ(t) needs t > 0, got {t}")));
        }
        let (a, p) = (self.model.alpha.value(), self.p);
        let c = 2.0 * self.model.noise_factor();
        let (v, tail) = self.half_line(|s| self.r(s) * self.j_at(s), t, p - a - 1.0);
        // the tail is taken from the leading power law; its relative
        // correction decays like (s/scale)^{−α}
        let b = t.max(self.scale) * HALF_LINE_SPAN;
        let tail_err = tail * (self.scale / b).powf(a) * 10.0;
        let est = self.finish("Σ − Σ(t)", c * v, c * tail_err)?;
        Ok(Estimate { value: est.value, abs_err: est.abs_err.min(est.value.abs()).max(self.table_err * est.value.abs()) })
    }

    /// Σ = lim Σ(t).
    pub fn sigma(&self) -> Result<Estimate> {
        let t = self.scale;
        let head = self.sigma_t(t)?;
        let tail = self.sigma_tail(t)?;
        self.finish("Σ", head.value + tail.value, tail.abs_err)
    }

    /// h(τ) = c∫₀^∞ r(v)P(v − τ)dv.
    pub fn h(&self, tau: f64) -> Result<Estimate> {
        if !(tau >= 0.0) {
            return Err(FsdeError::domain(format!("h(τ) needs τ >= 0, got {tau}")));
        }
        if tau == 0.0 {
            // h(0) = Σ; going through J avoids the cusp of P at the origin
            return self.sigma();
        }
        let (a, p) = (self.model.alpha.value(), self.p);
        let c = self.model.noise_factor();
        let m = 0.5 * tau;
        let fl = self.floor(m);
        let before = graded_left(|v, _| self.r(v) * self.p_at(v - tau), 0.0, m, a - 1.0, fl)
            + graded_right(|v, d| self.r(v) * self.p_at(-d), m, tau, self.cusp, fl);
        let near = graded_left(|v, d| self.r(v) * self.p_at(d), tau, 2.0 * tau, self.cusp, fl);
        let (far, tail) = self.half_line(|v| self.r(v) * self.p_at(v - tau), 2.0 * tau, p - a - 1.0);
        let v = before + near + far;
        let b = (2.0 * tau).max(self.scale) * HALF_LINE_SPAN;
        self.finish("h(τ)", c * v, c * tail * (self.scale / b).powf(a) * 10.0)
    }

    /// Largest s covered by the tables.
    pub fn table_range(&self) -> (f64, f64) {
        (self.j.ln_s0.exp(), self.j.s_max())
    }
}

/// Stationary covariance h(τ): (1/k)e_{α,k}(τ) at α = α*, otherwise the
/// double-integral quadrature.
pub fn stationary_covariance_h(tau: f64, model: &LinearModel) -> Result<f64> {
    if !(tau >= 0.0) {
        return Err(FsdeError::domain(format!("h(τ) needs τ >= 0, got {tau}")));
    }
    if model.is_fdt() {
        return Ok(model.relaxation()?.value(tau)? / model.k);
    }
    Ok(LinearQuadrature::new(*model, QuadSettings::default())?.h(tau)?.value)
}

/// Stationary Gaussian law of the linear model.
#[derive(Debug, Clone)]
pub struct StationaryLaw {
    pub model: LinearModel,
    pub variance: f64,
    quad: Option<LinearQuadrature>,
}

impl StationaryLaw {
    pub fn new(model: LinearModel) -> Result<Self> {
        if model.is_fdt() {
            return Ok(Self { model, variance: 1.0 / model.k, quad: None });
        }
        let quad = LinearQuadrature::new(model, QuadSettings::default())?;
        let variance = quad.sigma()?.value;
        Ok(Self { model, variance, quad: Some(quad) })
    }

    pub fn covariance(&self, tau: f64) -> Result<f64> {
        let tau = tau.abs();
        match &self.quad {
            None => Ok(self.model.relaxation()?.value(tau)? / self.model.k),
            Some(q) => Ok(q.h(tau)?.value),
        }
    }

    pub fn spectral_density(&self, omega: f64) -> Result<f64> {
        spectral_density(omega, &self.model)
    }
}

/// 2Γ(2H−1)sin(Hπ)/Γ(1−α), the normalization that matches the transform of h.
pub fn spectral_normalization(alpha: FracOrder, h: HurstParam) -> f64 {
    let hv = h.value();
    2.0 * gamma(2.0 * hv - 1.0) * (hv * PI).sin() * rgamma(1.0 - alpha.value())
}

/// 2Γ(2H+1)sin(Hπ)/Γ(1−α), the alternative factor.
pub fn alternative_normalization(alpha: FracOrder, h: HurstParam) -> f64 {
    let hv = h.value();
    2.0 * gamma(2.0 * hv + 1.0) * (hv * PI).sin() * rgamma(1.0 - alpha.value())
}

// |ω|^{1−2H}/|(iω)^α + k|²
fn spectral_shape(omega: f64, model: &LinearModel) -> f64 {
    let a = model.alpha.value();
    let w = omega.abs();
    let wa = w.powf(a);
    let re = model.k + wa * (0.5 * PI * a).cos();
    let im = wa * (0.5 * PI * a).sin();
    w.powf(1.0 - 2.0 * model.hurst.value()) / (re * re + im * im)
}

/// F(h)(ω) = ∫ h(τ)e^{−iωτ}dτ.
pub fn spectral_density(omega: f64, model: &LinearModel) -> Result<f64> {
    if omega == 0.0 || !omega.is_finite() {
        return Err(FsdeError::domain(format!(
            "spectral density is singular at ω = 0 and undefined at {omega}"
        )));
    }
    Ok(spectral_normalization(model.alpha, model.hurst) * spectral_shape(omega, model))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationReport {
    pub alpha: f64,
    pub hurst: f64,
    pub k: f64,
    /// Damping parameters ε of the Gaussian test functions e^{−ετ²}.
    pub epsilons: Vec<f64>,
    /// Normalization implied by each pairing ∫h·φ = (1/2π)∫F·φ̂.
    pub measured: Vec<f64>,
    pub shipped: f64,
    pub alternative: f64,
    /// Max relative deviation of `measured` from each candidate.
    pub shipped_residual: f64,
    pub alternative_residual: f64,
    pub shipped_matches: bool,
}

/// Determines the spectral normalization from the quadrature covariance by
/// pairing h with Gaussian test functions.
pub fn resolve_normalization(model: &LinearModel, epsilons: &[f64]) -> Result<NormalizationReport> {
    if epsilons.is_empty() || epsilons.iter().any(|e| !(*e > 0.0)) {
        return Err(FsdeError::domain("need positive damping parameters"));
    }
    let quad = LinearQuadrature::new(*model, QuadSettings::default())?;
    let rule = gl16();
    let mut measured = Vec::new();
    for &eps in epsilons {
        // ∫_{−∞}^{∞} h(τ)e^{−ετ²}dτ
        let width = (40.0 / eps).sqrt();
        let mut lhs = 0.0;
        let mut hi = width;
        for _ in 0..40 {
            let lo = hi * 0.5;
            let mut err = None;
            lhs += gl(rule, lo, hi, |t| match quad.h(t) {
                Ok(v) => v.value * (-eps * t * t).exp(),
                Err(e) => {
                    err.get_or_insert(e);
                    f64::NAN
                }
            });
            if let Some(e) = err {
                return Err(e);
            }
            hi = lo;
        }
        lhs += quad.h(0.0)?.value * hi;
        lhs *= 2.0;
        // (1/2π)∫ shape(ω)·√(π/ε)e^{−ω²/(4ε)} dω
        let wmax = (4.0 * eps * 40.0).sqrt();
        let g = |w: f64| spectral_shape(w, model) * (PI / eps).sqrt() * (-w * w / (4.0 * eps)).exp();
        let e0 = 1.0 - 2.0 * model.hurst.value();
        let rhs = 2.0 * graded_left(|w, _| g(w), 0.0, wmax, e0, wmax * 1e-14) / (2.0 * PI);
        measured.push(lhs / rhs);
    }
    let shipped = spectral_normalization(model.alpha, model.hurst);
    let alternative = alternative_normalization(model.alpha, model.hurst);
    let dev = |c: f64| measured.iter().map(|m| (m / c - 1.0).abs()).fold(0.0, f64::max);
    let (sr, ar) = (dev(shipped), dev(alternative));
    Ok(NormalizationReport {
        alpha: model.alpha.value(),
        hurst: model.hurst.value(),
        k: model.k,
        epsilons: epsilons.to_vec(),
        measured,
        shipped,
        alternative,
        shipped_residual: sr,
        alternative_residual: ar,
        shipped_matches: sr < ar,
    })
}

/// Σ(t) by quadrature.
pub fn sigma_t(t: f64, model: &LinearModel) -> Result<f64> {
    Ok(LinearQuadrature::new(*model, QuadSettings::default())?.sigma_t(t)?.value)
}

/// Fit of ln(Σ − Σ(t)) against ln t at `points` log-spaced times in [t_lo, t_hi].
pub fn convergence_rate_fit(model: &LinearModel, t_lo: f64, t_hi: f64, points: usize) -> Result<ExponentFit> {
    if !(t_lo > 0.0 && t_hi > t_lo) || points < 3 {
        return Err(FsdeError::domain("need 0 < t_lo < t_hi and >= 3 points"));
    }
    let quad = LinearQuadrature::new(*model, QuadSettings::default())?;
    let ts: Vec<f64> = (0..points)
        .map(|i| t_lo * (t_hi / t_lo).powf(i as f64 / (points - 1) as f64))
        .collect();
    let gaps = ts.iter().map(|&t| quad.sigma_tail(t).map(|e| e.value)).collect::<Result<Vec<_>>>()?;
    log_log_fit(&ts, &gaps, t_lo, t_hi)
}
