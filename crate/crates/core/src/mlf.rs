//! Mittag-Leffler function E_α on the real line and the relaxation
//! function e_{α,k}(t) = E_α(−k t^α).
//!
//! Three regimes for z = −x, x > 0: the power series for x ≤ crossover,
//! the asymptotic tail when its smallest term is below tolerance, and in
//! between a trapezoid rule for the Laplace representation
//! E_α(−T^α) = ∫₀^∞ e^{−rT} K_α(r) dr on a logarithmic grid.

use std::f64::consts::PI;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{FsdeError, Result};
use crate::fbm::HurstParam;
use crate::special::{ln_gamma, rgamma};

#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct FracOrder(f64);

impl FracOrder {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(FsdeError::domain(format!("order must lie in (0,1], got {alpha}")));
        }
        Ok(Self(alpha))
    }

    /// Order admissible for the model with Hurst parameter `h`: α ∈ (1−H, 1).
    pub fn model(alpha: f64, h: HurstParam) -> Result<Self> {
        h.require_model()?;
        let lo = 1.0 - h.value();
        if !(alpha > lo && alpha < 1.0) {
            return Err(FsdeError::domain(format!(
                "order must lie in (1-H, 1) = ({lo}, 1), got {alpha}"
            )));
        }
        Ok(Self(alpha))
    }

    /// The fluctuation-dissipation order α* = 2 − 2H.
    pub fn fdt(h: HurstParam) -> Result<Self> {
        h.require_model()?;
        Self::new(2.0 - 2.0 * h.value())
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MlSettings {
    pub series_tol: f64,
    pub max_terms: usize,
    pub crossover: f64,
}

impl Default for MlSettings {
    fn default() -> Self {
        Self { series_tol: 1e-14, max_terms: 1000, crossover: 1.0 }
    }
}

impl MlSettings {
    fn validate(&self) -> Result<()> {
        if !(self.series_tol > 0.0) || !(self.crossover > 0.0) || self.max_terms < 2 {
            return Err(FsdeError::domain(format!("invalid Mittag-Leffler settings {self:?}")));
        }
        Ok(())
    }
}

/// A branch value with its estimated absolute error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BranchValue {
    pub value: f64,
    pub residual: f64,
}

#[derive(Debug, Clone)]
struct Bridge {
    // nodes r_i and weights c_i of ∫ e^{−rT} K(r) dr ≈ Σ c_i e^{−r_i T}
    r: Vec<f64>,
    c: Vec<f64>,
}

impl Bridge {
    fn new(alpha: f64, t_floor: f64) -> Self {
        let d = (PI * (1.0 - alpha) / alpha).min(PI / 2.0);
        let h = 2.0 * PI * 0.9 * d / 38.0;
        let w_lo = -39.2 / alpha;
        let w_hi = (40.0 / t_floor).ln().max(w_lo + h);
        let n = ((w_hi - w_lo) / h).ceil() as usize + 1;
        let (s, c2) = ((alpha * PI).sin() / PI, 2.0 * (alpha * PI).cos());
        let mut r = Vec::with_capacity(n);
        let mut c = Vec::with_capacity(n);
        for i in 0..n {
            let ri = (w_lo + i as f64 * h).exp();
            let ra = ri.powf(alpha);
            let k = s * ra / (ra * ra + c2 * ra + 1.0);
            r.push(ri);
            c.push(h * k);
        }
        Self { r, c }
    }

    fn value(&self, t: f64) -> f64 {
        self.r.iter().zip(&self.c).map(|(r, c)| c * (-r * t).exp()).sum()
    }

    fn deriv(&self, t: f64) -> f64 {
        -self.r.iter().zip(&self.c).map(|(r, c)| c * r * (-r * t).exp()).sum::<f64>()
    }
}

/// Evaluator for one order α with cached series coefficients.
#[derive(Debug, Clone)]
pub struct MittagLeffler {
    alpha: f64,
    settings: MlSettings,
    // 1/Γ(mα+1) and 1/Γ(mα+α)
    c_val: Vec<f64>,
    c_der: Vec<f64>,
    bridge: OnceLock<Bridge>,
}

impl MittagLeffler {
    pub fn new(alpha: FracOrder, settings: MlSettings) -> Result<Self> {
        settings.validate()?;
        let a = alpha.0;
        let n = settings.max_terms;
        let rg = |x: f64| if x > 170.0 { (-ln_gamma(x)).exp() } else { rgamma(x) };
        let c_val = (0..n).map(|m| rg(m as f64 * a + 1.0)).collect();
        let c_der = (0..n).map(|m| rg(m as f64 * a + a)).collect();
        Ok(Self { alpha: a, settings, c_val, c_der, bridge: OnceLock::new() })
    }

    pub fn with_defaults(alpha: FracOrder) -> Result<Self> {
        Self::new(alpha, MlSettings::default())
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn settings(&self) -> &MlSettings {
        &self.settings
    }

    fn bridge(&self) -> &Bridge {
        self.bridge
            .get_or_init(|| Bridge::new(self.alpha, self.bridge_floor()))
    }

    // smallest T handed to the bridge
    fn bridge_floor(&self) -> f64 {
        (0.1 * self.settings.crossover).powf(1.0 / self.alpha)
    }

    /// Σ c_m y^m with a rounding-aware residual estimate.
    fn power_sum(&self, coef: &[f64], y: f64) -> BranchValue {
        let mut sum = 0.0;
        let mut pow = 1.0;
        let mut abs_sum = 0.0f64;
        let mut small_run = 0;
        for (m, c) in coef.iter().enumerate() {
            let term = c * pow;
            sum += term;
            abs_sum += term.abs();
            if m > 0 && term.abs() <= 0.1 * self.settings.series_tol * sum.abs() {
                small_run += 1;
                if small_run == 2 {
                    return BranchValue { value: sum, residual: term.abs() + 2.0 * f64::EPSILON * abs_sum };
                }
            } else {
                small_run = 0;
            }
            pow *= y;
            if !pow.is_finite() {
                break;
            }
        }
        BranchValue { value: sum, residual: f64::INFINITY }
    }

    /// Power-series value of E_α(z) with its residual estimate.
    pub fn series(&self, z: f64) -> BranchValue {
        self.power_sum(&self.c_val, z)
    }

    /// Asymptotic tail of E_α(−x), truncated at its smallest term.
    pub fn tail(&self, x: f64) -> BranchValue {
        self.tail_sum(x, false)
    }

    // (−1)^{j+1} x^{−j}/Γ(1−jα), or for `deriv` the x-series of T·f'(T):
    // (−1)^j jα x^{−j}/Γ(1−jα)
    fn tail_sum(&self, x: f64, deriv: bool) -> BranchValue {
        let a = self.alpha;
        let lx = x.ln();
        let mut sum = 0.0;
        let mut last = f64::INFINITY;
        for j in 1..self.settings.max_terms {
            let ja = j as f64 * a;
            let frac = ja - ja.round();
            if frac.abs() < 1e-13 {
                continue;
            }
            // 1/Γ(1−jα) = Γ(jα) sin(πjα)/π
            let sin = (PI * frac).sin() * if (ja.round() as i64) % 2 == 0 { 1.0 } else { -1.0 };
            let mut mag = (ln_gamma(ja) - j as f64 * lx).exp() * sin.abs() / PI;
            if deriv {
                mag *= ja;
            }
            // the error of a truncated asymptotic sum can exceed its
            // smallest term by several times
            if mag > last {
                return BranchValue { value: sum, residual: 10.0 * last };
            }
            let sign = sin.signum() * if j % 2 == 1 { 1.0 } else { -1.0 } * if deriv { -1.0 } else { 1.0 };
            sum += sign * mag;
            last = mag;
            if mag <= 0.01 * self.settings.series_tol * sum.abs() {
                return BranchValue { value: sum, residual: 10.0 * mag };
            }
        }
        BranchValue { value: sum, residual: f64::INFINITY }
    }

    fn accept(&self, b: BranchValue) -> bool {
        b.residual <= self.settings.series_tol * b.value.abs()
    }

    /// E_α(z) for real z.
    pub fn eval(&self, z: f64) -> Result<f64> {
        if z.is_nan() {
            return Err(FsdeError::domain("Mittag-Leffler argument is NaN"));
        }
        if self.alpha == 1.0 {
            return Ok(z.exp());
        }
        if z > 0.0 {
            return self.positive_series(z);
        }
        self.relax((-z).powf(1.0 / self.alpha))
    }

    // all terms positive, so no cancellation; summed in log space to keep
    // z^m from overflowing before the terms turn down
    fn positive_series(&self, z: f64) -> Result<f64> {
        let lz = z.ln();
        let mut sum = 0.0;
        let mut prev = 0.0;
        for m in 0..self.settings.max_terms {
            let t = (m as f64 * lz - ln_gamma(m as f64 * self.alpha + 1.0)).exp();
            sum += t;
            if !sum.is_finite() {
                return Err(FsdeError::domain(format!("E_α({z}) overflows")));
            }
            if m > 0 && t < prev && t <= 0.1 * self.settings.series_tol * sum {
                return Ok(sum);
            }
            prev = t;
        }
        Err(FsdeError::Accuracy {
            what: format!("Mittag-Leffler series at z = {z}"),
            achieved: prev / sum,
            target: self.settings.series_tol,
        })
    }

    fn checked_series(&self, z: f64) -> Result<f64> {
        let b = self.series(z);
        if !self.accept(b) {
            return Err(FsdeError::Accuracy {
                what: format!("Mittag-Leffler series at z = {z}"),
                achieved: b.residual / b.value.abs(),
                target: self.settings.series_tol,
            });
        }
        Ok(b.value)
    }

    /// f(T) = E_α(−T^α) for T ≥ 0.
    pub fn relax(&self, t: f64) -> Result<f64> {
        if !(t >= 0.0) {
            return Err(FsdeError::domain(format!("relaxation needs T >= 0, got {t}")));
        }
        if self.alpha == 1.0 {
            return Ok((-t).exp());
        }
        if t == f64::INFINITY {
            return Ok(0.0);
        }
        let x = t.powf(self.alpha);
        if x <= self.settings.crossover {
            let b = self.series(-x);
            if !self.accept(b) && t >= self.bridge_floor() {
                return Ok(self.bridge().value(t));
            }
            return self.checked_series(-x);
        }
        let tail = self.tail(x);
        if self.accept(tail) {
            return Ok(tail.value);
        }
        Ok(self.bridge().value(t))
    }

    /// f′(T) for T > 0.
    pub fn relax_dot(&self, t: f64) -> Result<f64> {
        if !(t > 0.0) {
            return Err(FsdeError::domain(format!(
                "relaxation derivative needs T > 0, got {t}"
            )));
        }
        if self.alpha == 1.0 {
            return Ok(-(-t).exp());
        }
        if t == f64::INFINITY {
            return Ok(0.0);
        }
        let x = t.powf(self.alpha);
        if x <= self.settings.crossover {
            let b = self.power_sum(&self.c_der, -x);
            if !self.accept(b) && t >= self.bridge_floor() {
                return Ok(self.bridge().deriv(t));
            }
            if !self.accept(b) {
                return Err(FsdeError::Accuracy {
                    what: format!("Mittag-Leffler derivative series at T = {t}"),
                    achieved: b.residual / b.value.abs(),
                    target: self.settings.series_tol,
                });
            }
            return Ok(-t.powf(self.alpha - 1.0) * b.value);
        }
        let tail = self.tail_sum(x, true);
        if self.accept(tail) {
            return Ok(tail.value / t);
        }
        Ok(self.bridge().deriv(t))
    }
}

pub fn mittag_leffler(alpha: FracOrder, z: f64) -> Result<f64> {
    MittagLeffler::with_defaults(alpha)?.eval(z)
}

pub fn mittag_leffler_with(alpha: FracOrder, z: f64, settings: MlSettings) -> Result<f64> {
    MittagLeffler::new(alpha, settings)?.eval(z)
}

/// e_{α,k}(t) = E_α(−k t^α) with a reusable evaluator.
#[derive(Debug, Clone)]
pub struct Relaxation {
    ml: MittagLeffler,
    k: f64,
    // time scale factor k^{1/α}
    scale: f64,
}

impl Relaxation {
    pub fn new(alpha: FracOrder, k: f64) -> Result<Self> {
        Self::with_settings(alpha, k, MlSettings::default())
    }

    pub fn with_settings(alpha: FracOrder, k: f64, settings: MlSettings) -> Result<Self> {
        if !(k > 0.0 && k.is_finite()) {
            return Err(FsdeError::domain(format!("rate k must be positive, got {k}")));
        }
        Ok(Self { ml: MittagLeffler::new(alpha, settings)?, k, scale: k.powf(1.0 / alpha.0) })
    }

    pub fn alpha(&self) -> f64 {
        self.ml.alpha
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    /// Natural time scale k^{−1/α}.
    pub fn time_scale(&self) -> f64 {
        1.0 / self.scale
    }

    pub fn value(&self, t: f64) -> Result<f64> {
        if !(t >= 0.0) {
            return Err(FsdeError::domain(format!("relaxation needs t >= 0, got {t}")));
        }
        self.ml.relax(self.scale * t)
    }

    pub fn deriv(&self, t: f64) -> Result<f64> {
        if !(t > 0.0) {
            return Err(FsdeError::domain(format!("derivative needs t > 0, got {t}")));
        }
        Ok(self.scale * self.ml.relax_dot(self.scale * t)?)
    }

    /// r(t) = −ė_{α,k}(t).
    pub fn r(&self, t: f64) -> Result<f64> {
        Ok(-self.deriv(t)?)
    }

    /// r(t) for t > 0, panicking on evaluator failure; used inside quadratures
    /// whose nodes are all in the supported domain.
    pub(crate) fn r_unchecked(&self, t: f64) -> f64 {
        self.r(t).expect("relaxation derivative on positive time")
    }
}

pub fn e_alpha_k(alpha: FracOrder, k: f64, t: f64) -> Result<f64> {
    Relaxation::new(alpha, k)?.value(t)
}

pub fn e_alpha_k_dot(alpha: FracOrder, k: f64, t: f64) -> Result<f64> {
    Relaxation::new(alpha, k)?.deriv(t)
}

pub fn r_func(alpha: FracOrder, k: f64, t: f64) -> Result<f64> {
    Relaxation::new(alpha, k)?.r(t)
}
