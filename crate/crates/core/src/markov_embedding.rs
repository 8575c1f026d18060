//! Finite-mode Markovian embedding of the power-law memory kernel.
//!
//! γ(t) = t^{−α}/Γ(1−α) is completely monotone, γ(t) = ∫ e^{−λt} ρ(λ) dλ, so
//! a quadrature in λ turns it into Σ c_i e^{−λ_i t}. Each exponential becomes
//! an Ornstein–Uhlenbeck variable whose amplitude c_i is both its friction
//! weight and its stationary variance, so the discrete fluctuation-dissipation
//! relation holds mode by mode.

use nalgebra::DMatrix;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{FsdeError, Result};
use crate::fbm::HurstParam;
use crate::grid::{write_csv, TimeGrid};
use crate::mlf::FracOrder;
use crate::rng::{normal, RngSpec};
use crate::solver::{InitialLaw, ModelSpec, Potential, SolutionPath, SolveMethod};
use crate::special::{beta, rgamma};

/// Spectral density of the kernel: λ^{α−1}/B(α, 1−α).
pub fn rho(lambda: f64, alpha: f64) -> Result<f64> {
    if !(lambda > 0.0) || !(alpha > 0.0 && alpha < 1.0) {
        return Err(FsdeError::domain(format!("rho needs λ > 0 and α ∈ (0,1), got λ={lambda}, α={alpha}")));
    }
    Ok(lambda.powf(alpha - 1.0) / beta(alpha, 1.0 - alpha))
}

/// γ(t) = t^{−α}/Γ(1−α).
pub fn power_kernel(t: f64, alpha: f64) -> f64 {
    t.powf(-alpha) * rgamma(1.0 - alpha)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Mode {
    pub lambda: f64,
    pub c: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeSet {
    pub alpha: f64,
    pub t_min: f64,
    pub t_max: f64,
    pub fit_error: f64,
    pub modes: Vec<Mode>,
}

const FIT_LIMIT: f64 = 0.1;
const CHECK_POINTS: usize = 200;

impl ModeSet {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) || !(self.t_min > 0.0 && self.t_min < self.t_max) {
            return Err(FsdeError::domain("mode set needs α ∈ (0,1) and 0 < t_min < t_max"));
        }
        if self.modes.is_empty() {
            return Err(FsdeError::domain("mode set is empty"));
        }
        for (i, m) in self.modes.iter().enumerate() {
            if !(m.c > 0.0 && m.c.is_finite() && m.lambda > 0.0 && m.lambda.is_finite()) {
                return Err(FsdeError::domain(format!("mode {i} must have positive finite λ and c")));
            }
            if i > 0 && m.lambda <= self.modes[i - 1].lambda {
                return Err(FsdeError::domain("mode rates must be strictly increasing"));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    /// Σ c_i e^{−λ_i t}.
    pub fn kernel(&self, t: f64) -> f64 {
        self.modes.iter().map(|m| m.c * (-m.lambda * t).exp()).sum()
    }

    pub fn lambda_max(&self) -> f64 {
        self.modes.last().map_or(0.0, |m| m.lambda)
    }

    /// The log-spaced check grid on [t_min, t_max].
    pub fn check_grid(&self) -> Vec<f64> {
        let (a, b) = (self.t_min.ln(), self.t_max.ln());
        (0..CHECK_POINTS)
            .map(|i| (a + (b - a) * i as f64 / (CHECK_POINTS - 1) as f64).exp())
            .collect()
    }

    /// Sup relative deviation from γ on the check grid.
    pub fn measure_fit_error(&self) -> f64 {
        self.check_grid()
            .into_iter()
            .map(|t| {
                let g = power_kernel(t, self.alpha);
                ((self.kernel(t) - g) / g).abs()
            })
            .fold(0.0, f64::max)
    }

    /// (positive, decreasing, convex) for the fitted kernel on the check grid.
    pub fn shape_check(&self) -> (bool, bool, bool) {
        let t = self.check_grid();
        let k: Vec<f64> = t.iter().map(|&s| self.kernel(s)).collect();
        let positive = k.iter().all(|&v| v > 0.0);
        let decreasing = k.windows(2).all(|w| w[1] < w[0]);
        let convex = (1..t.len() - 1).all(|i| {
            let s1 = (k[i] - k[i - 1]) / (t[i] - t[i - 1]);
            let s2 = (k[i + 1] - k[i]) / (t[i + 1] - t[i]);
            s2 >= s1
        });
        (positive, decreasing, convex)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("mode sets always serialize")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let set: ModeSet = serde_json::from_str(text).map_err(|e| FsdeError::domain(format!("mode set JSON: {e}")))?;
        set.validate()?;
        Ok(set)
    }
}

/// Discretizes the Bernstein representation of γ with `m_modes` exponentials.
///
/// M−1 rates are log-equispaced on [10⁻²/t_max, 10²/t_min] and weighted by
/// the trapezoid rule in ln λ, which converges geometrically for this
/// integrand. The infinite continuation of that rule below the grid is lumped
/// into one extra slow mode matching its zeroth and first moments.
pub fn fit_modes(alpha: f64, t_min: f64, t_max: f64, m_modes: usize) -> Result<ModeSet> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(FsdeError::domain(format!("α must lie in (0,1), got {alpha}")));
    }
    if !(t_min > 0.0 && t_min < t_max && t_max.is_finite()) {
        return Err(FsdeError::domain("fit range needs 0 < t_min < t_max"));
    }
    if m_modes < 2 {
        return Err(FsdeError::domain("need at least two modes"));
    }
    let lo = 1e-2 / t_max;
    let hi = 1e2 / t_min;
    let nodes = m_modes - 1;
    let h = if nodes > 1 { (hi / lo).ln() / (nodes - 1) as f64 } else { (hi / lo).ln() };
    let mut modes = Vec::with_capacity(m_modes);

    // Σ_{j≥1} h·ρ(λ_j)λ_j with λ_j = lo·e^{−jh}, and its first moment
    let q0 = (-alpha * h).exp();
    let q1 = (-(alpha + 1.0) * h).exp();
    let base = h * rho(lo, alpha)? * lo;
    let c_tail = base * q0 / (1.0 - q0);
    let m1 = base * lo * q1 / (1.0 - q1);
    modes.push(Mode { lambda: m1 / c_tail, c: c_tail });

    for i in 0..nodes {
        let lambda = lo * (h * i as f64).exp();
        modes.push(Mode { lambda, c: h * lambda * rho(lambda, alpha)? });
    }
    let mut set = ModeSet { alpha, t_min, t_max, fit_error: 0.0, modes };
    set.fit_error = set.measure_fit_error();
    if !(set.fit_error <= FIT_LIMIT) {
        return Err(FsdeError::FitFailure { fit_error: set.fit_error, modes: m_modes });
    }
    Ok(set)
}

/// Snapshot of an embedded system, used in failure reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddedState {
    pub x: f64,
    pub z: Vec<f64>,
    pub v: Option<f64>,
    pub m: Option<f64>,
}

// exact one-step OU propagation of every mode for a fixed dt, including the
// step average of each mode for the averaged constraint
struct OuStep {
    decay: Vec<f64>,
    drift: Vec<f64>,
    noise: Vec<f64>,
    // step average: weight on z(t_n), response to Δx, and the 2×2 noise factor
    avg_decay: Vec<f64>,
    avg_drift: Vec<f64>,
    avg_noise: Vec<[f64; 3]>,
    avg_drift_sum: f64,
}

impl OuStep {
    fn new(modes: &ModeSet, dt: f64) -> Self {
        let n = modes.len();
        let mut s = OuStep {
            decay: Vec::with_capacity(n),
            drift: Vec::with_capacity(n),
            noise: Vec::with_capacity(n),
            avg_decay: Vec::with_capacity(n),
            avg_drift: Vec::with_capacity(n),
            avg_noise: Vec::with_capacity(n),
            avg_drift_sum: 0.0,
        };
        for m in &modes.modes {
            let x = m.lambda * dt;
            let e = (-x).exp();
            let one_e = -(-x).exp_m1();
            // (1 − e^{−x})/x and (1 − φ)/x without cancellation
            let (phi, psi) = if x < 1e-4 { (1.0 - 0.5 * x + x * x / 6.0, 0.5 - x / 6.0) } else { (one_e / x, (1.0 - one_e / x) / x) };
            let var_end = m.c * -(-2.0 * x).exp_m1();
            let cubic = if x < 1e-3 {
                x * x * x * (1.0 / 3.0 - x / 4.0 + 7.0 * x * x / 60.0)
            } else {
                x - 2.0 * one_e + 0.5 * -(-2.0 * x).exp_m1()
            };
            let var_avg = 2.0 * m.c * cubic / (x * x);
            let cov = m.c * one_e * one_e / x;
            let a = var_avg.sqrt();
            let b = if a > 0.0 { cov / a } else { 0.0 };
            let r = (var_end - b * b).max(0.0).sqrt();
            s.decay.push(e);
            s.drift.push(m.c * phi);
            s.noise.push(var_end.sqrt());
            s.avg_decay.push(phi);
            s.avg_drift.push(m.c * psi);
            s.avg_noise.push([a, b, r]);
        }
        s.avg_drift_sum = s.avg_drift.iter().sum();
        s
    }
}

fn stationary_modes(modes: &ModeSet, rng: &mut ChaCha8Rng) -> Vec<f64> {
    modes.modes.iter().map(|m| m.c.sqrt() * normal(rng)).collect()
}

/// Root of V′(x) + b(x − x_prev) = a, bracketed around x_prev and refined by
/// safeguarded secant steps.
fn solve_constraint(potential: &Potential, a: f64, b: f64, x_prev: f64) -> Option<f64> {
    let f = |x: f64| potential.gradient(x) + b * (x - x_prev) - a;
    let f0 = f(x_prev);
    if f0 == 0.0 {
        return Some(x_prev);
    }
    let mut width = 1e-3 * (1.0 + x_prev.abs());
    let (mut lo, mut hi, mut flo, mut fhi) = (x_prev, x_prev, f0, f0);
    let mut found = false;
    for _ in 0..80 {
        let (l, r) = (x_prev - width, x_prev + width);
        let (fl, fr) = (f(l), f(r));
        if fl.signum() != f0.signum() {
            (lo, hi, flo, fhi) = (l, x_prev, fl, f0);
            found = true;
            break;
        }
        if fr.signum() != f0.signum() {
            (lo, hi, flo, fhi) = (x_prev, r, f0, fr);
            found = true;
            break;
        }
        width *= 2.0;
    }
    if !found {
        return None;
    }
    for it in 0..200 {
        let mut x = hi - fhi * (hi - lo) / (fhi - flo);
        // alternate with bisection so one-sided secant stalls cannot happen
        if it % 2 == 1 || !(x > lo && x < hi) {
            x = 0.5 * (lo + hi);
        }
        let fx = f(x);
        if fx == 0.0 || hi - lo <= 1e-14 * (1.0 + x.abs()) {
            return Some(x);
        }
        if fx.signum() == flo.signum() {
            (lo, flo) = (x, fx);
        } else {
            (hi, fhi) = (x, fx);
        }
    }
    let x = 0.5 * (lo + hi);
    (hi - lo <= 1e-10 * (1.0 + x.abs())).then_some(x)
}

/// Model descriptor for embedded paths: the embedding is built for the
/// fluctuation-dissipation case, so H = 1 − α/2.
fn embedded_model(potential: &Potential, alpha: f64, x0: f64) -> Result<ModelSpec> {
    let h = HurstParam::model(1.0 - 0.5 * alpha)?;
    ModelSpec::new(FracOrder::fdt(h)?, h, *potential, InitialLaw::point(x0))
}

/// Overdamped embedded system: z_i relax with rate λ_i, feel −c_i·ẋ and
/// white noise √(2λ_i c_i); x is tied to the modes by V′(x) = Σ z_i.
///
/// x is piecewise linear between nodes and every mode is propagated exactly
/// against it. The constraint is imposed on step averages, with V′ averaged
/// by the trapezoid rule, because the node values of
/// modes with λ_i·dt ≫ 1 are nearly white and would otherwise inject noise
/// with no matching friction.
pub fn simulate_embedded_overdamped(
    potential: &Potential,
    modes: &ModeSet,
    grid: &TimeGrid,
    rng: RngSpec,
    x0: f64,
) -> Result<SolutionPath> {
    modes.validate()?;
    potential.validate()?;
    if !x0.is_finite() {
        return Err(FsdeError::domain("x0 must be finite"));
    }
    let model = embedded_model(potential, modes.alpha, x0)?;
    let step = OuStep::new(modes, grid.dt());
    let b = step.avg_drift_sum;
    let mut r = rng.rng();
    let mut z = stationary_modes(modes, &mut r);
    let mut values = Vec::with_capacity(grid.len());
    let mut x = x0;
    values.push(x);
    let linear = match *potential {
        Potential::Zero => Some(0.0),
        Potential::Linear { k } => Some(k),
        _ => None,
    };
    for n in 1..grid.len() {
        // free parts of the step average and of the end value of every mode
        let mut a = 0.0;
        for i in 0..z.len() {
            let [sa, sb, sr] = step.avg_noise[i];
            let (u, w) = (normal(&mut r), normal(&mut r));
            a += step.avg_decay[i] * z[i] + sa * u;
            z[i] = step.decay[i] * z[i] + sb * u + sr * w;
        }
        let next = match linear {
            Some(k) if k + b != 0.0 => Some((a + (b - 0.5 * k) * x) / (0.5 * k + b)),
            _ => solve_constraint(potential, 2.0 * a - potential.gradient(x), 2.0 * b, x),
        };
        let next = match next {
            Some(v) if v.is_finite() => v,
            _ => {
                let state = EmbeddedState { x, z: z.clone(), v: None, m: None };
                return Err(FsdeError::StepFailure {
                    step: n,
                    state: serde_json::to_string(&state).unwrap_or_default(),
                });
            }
        };
        let dx = next - x;
        for i in 0..z.len() {
            z[i] -= step.drift[i] * dx;
        }
        x = next;
        values.push(x);
    }
    Ok(SolutionPath { grid: *grid, values, model, noise: Some(rng), method: SolveMethod::Embedded })
}

/// Induced noise R(t_n) = Σ z_i of the uncoupled modes.
pub fn sample_free_noise(modes: &ModeSet, grid: &TimeGrid, rng: RngSpec) -> Result<Vec<f64>> {
    modes.validate()?;
    let step = OuStep::new(modes, grid.dt());
    let mut r = rng.rng();
    let mut z = stationary_modes(modes, &mut r);
    let mut out = Vec::with_capacity(grid.len());
    out.push(z.iter().sum());
    for _ in 1..grid.len() {
        let mut a = 0.0;
        for i in 0..z.len() {
            z[i] = step.decay[i] * z[i] + step.noise[i] * normal(&mut r);
            a += z[i];
        }
        out.push(a);
    }
    Ok(out)
}

/// Free mode variables at the final node, for per-mode variance checks.
pub fn sample_free_modes(modes: &ModeSet, grid: &TimeGrid, rng: RngSpec) -> Result<Vec<f64>> {
    modes.validate()?;
    let step = OuStep::new(modes, grid.dt());
    let mut r = rng.rng();
    let mut z = stationary_modes(modes, &mut r);
    for _ in 1..grid.len() {
        for i in 0..z.len() {
            z[i] = step.decay[i] * z[i] + step.noise[i] * normal(&mut r);
        }
    }
    Ok(z)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlePath {
    pub grid: TimeGrid,
    pub q: Vec<f64>,
    pub v: Vec<f64>,
    pub mass: f64,
}

impl GlePath {
    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "t,q,v")?;
        for j in 0..self.grid.len() {
            writeln!(out, "{:e},{:e},{:e}", self.grid.t(j), self.q[j], self.v[j])?;
        }
        Ok(())
    }

    pub fn write_position_csv<W: std::io::Write>(&self, out: W) -> std::io::Result<()> {
        write_csv(out, "q", &self.grid, &self.q)
    }
}

/// Largest step accepted by [`GleIntegrator`].
pub fn gle_dt_max(modes: &ModeSet, mass: f64, potential: &Potential) -> f64 {
    let lip = potential.lipschitz_bound().unwrap_or(f64::INFINITY);
    let by_modes = 0.5 / modes.lambda_max();
    if lip > 0.0 {
        by_modes.min((mass / lip).sqrt())
    } else {
        by_modes
    }
}

/// Splitting integrator for m q̈ = −V′(q) − ∫γ_M(t−s) q̇ ds + R.
///
/// The force acts in two half kicks around a drift–OU–drift core; the OU part
/// propagates (v, z) jointly and exactly, so it leaves
/// N(0, diag(1/m, c_i)) invariant.
pub struct GleIntegrator {
    mass: f64,
    potential: Potential,
    grid: TimeGrid,
    dim: usize,
    // row-major propagator and noise factor of the joint (v, z) OU step
    prop: Vec<f64>,
    chol: Vec<f64>,
    modes: ModeSet,
}

impl GleIntegrator {
    pub fn new(mass: f64, potential: &Potential, modes: &ModeSet, grid: &TimeGrid) -> Result<Self> {
        if !(mass > 0.0 && mass.is_finite()) {
            return Err(FsdeError::domain(format!("mass must be positive, got {mass}")));
        }
        modes.validate()?;
        potential.validate()?;
        let dt_max = gle_dt_max(modes, mass, potential);
        if grid.dt() > dt_max {
            return Err(FsdeError::Stability { dt: grid.dt(), dt_max });
        }
        let dim = modes.len() + 1;
        let mut a = DMatrix::<f64>::zeros(dim, dim);
        let mut cov = DMatrix::<f64>::zeros(dim, dim);
        cov[(0, 0)] = 1.0 / mass;
        for (i, m) in modes.modes.iter().enumerate() {
            a[(0, i + 1)] = 1.0 / mass;
            a[(i + 1, 0)] = -m.c;
            a[(i + 1, i + 1)] = -m.lambda;
            cov[(i + 1, i + 1)] = m.c;
        }
        let e = (a * grid.dt()).exp();
        let q = &cov - &e * &cov * e.transpose();
        let q = (&q + q.transpose()) * 0.5;
        let eig = q.symmetric_eigen();
        let mut f = DMatrix::<f64>::zeros(dim, dim);
        for j in 0..dim {
            let s = eig.eigenvalues[j].max(0.0).sqrt();
            for i in 0..dim {
                f[(i, j)] = eig.eigenvectors[(i, j)] * s;
            }
        }
        let flat = |m: &DMatrix<f64>| (0..dim).flat_map(|i| (0..dim).map(move |j| (i, j))).map(|(i, j)| m[(i, j)]).collect();
        Ok(Self {
            mass,
            potential: *potential,
            grid: *grid,
            dim,
            prop: flat(&e),
            chol: flat(&f),
            modes: modes.clone(),
        })
    }

    pub fn run(&self, rng: RngSpec, q0: f64, v0: f64) -> Result<GlePath> {
        let mut r = rng.rng();
        let d = self.dim;
        let h = self.grid.dt();
        let mut y = vec![0.0; d];
        y[0] = v0;
        for (i, m) in self.modes.modes.iter().enumerate() {
            y[i + 1] = m.c.sqrt() * normal(&mut r);
        }
        let mut q = q0;
        let mut qs = Vec::with_capacity(self.grid.len());
        let mut vs = Vec::with_capacity(self.grid.len());
        qs.push(q);
        vs.push(v0);
        let mut xi = vec![0.0; d];
        let mut next = vec![0.0; d];
        let kick = 0.5 * h / self.mass;
        for n in 1..self.grid.len() {
            y[0] -= kick * self.potential.gradient(q);
            q += 0.5 * h * y[0];
            for v in xi.iter_mut() {
                *v = normal(&mut r);
            }
            for i in 0..d {
                let row = &self.prop[i * d..(i + 1) * d];
                let frow = &self.chol[i * d..(i + 1) * d];
                let mut s = 0.0;
                for j in 0..d {
                    s += row[j] * y[j] + frow[j] * xi[j];
                }
                next[i] = s;
            }
            std::mem::swap(&mut y, &mut next);
            q += 0.5 * h * y[0];
            y[0] -= kick * self.potential.gradient(q);
            if !(q.is_finite() && y[0].is_finite()) {
                let state = EmbeddedState { x: q, z: y[1..].to_vec(), v: Some(y[0]), m: Some(self.mass) };
                return Err(FsdeError::StepFailure {
                    step: n,
                    state: serde_json::to_string(&state).unwrap_or_default(),
                });
            }
            qs.push(q);
            vs.push(y[0]);
        }
        Ok(GlePath { grid: self.grid, q: qs, v: vs, mass: self.mass })
    }
}

/// One massive GLE trajectory. Build a [`GleIntegrator`] directly to reuse
/// the propagator across paths.
pub fn simulate_gle_mass(
    mass: f64,
    potential: &Potential,
    modes: &ModeSet,
    grid: &TimeGrid,
    rng: RngSpec,
    q0: f64,
    v0: f64,
) -> Result<GlePath> {
    GleIntegrator::new(mass, potential, modes, grid)?.run(rng, q0, v0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rho_half() {
        assert!((rho(1.0, 0.5).unwrap() - 1.0 / std::f64::consts::PI).abs() < 1e-15);
        assert!((rho(4.0, 0.5).unwrap() - 0.5 / std::f64::consts::PI).abs() < 1e-15);
        assert!(rho(0.0, 0.5).is_err() && rho(1.0, 1.0).is_err());
    }

    #[test]
    fn fit_is_ordered_and_serializes() {
        let set = fit_modes(0.5, 1e-2, 1e2, 40).unwrap();
        assert_eq!(set.len(), 40);
        set.validate().unwrap();
        let back = ModeSet::from_json(&set.to_json()).unwrap();
        assert_eq!(back, set);
        assert!(ModeSet::from_json(r#"{"alpha":0.5}"#).is_err());
    }

    #[test]
    fn constraint_root() {
        let p = Potential::ClippedDoubleWell { a: 1.0, b: 1.0, clip_radius: 3.0 };
        let x = solve_constraint(&p, 0.7, 2.0, 0.1).unwrap();
        assert!((p.gradient(x) + 2.0 * (x - 0.1) - 0.7).abs() < 1e-12);
    }

    #[test]
    fn gle_rejects_large_steps() {
        let set = fit_modes(0.5, 1.0, 1e2, 10).unwrap();
        let grid = TimeGrid::new(1.0, 10).unwrap();
        let err = GleIntegrator::new(1.0, &Potential::Linear { k: 1.0 }, &set, &grid).err().unwrap();
        assert!(matches!(err, FsdeError::Stability { .. }));
    }
}
