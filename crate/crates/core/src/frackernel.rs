//! Discrete fractional calculus on uniform grids.
//!
//! Product-trapezoid weights integrate (t_n − s)^{γ−1} exactly against the
//! piecewise-linear interpolant of the samples:
//!
//! w_{n,0} = c·[(n−1)^{γ+1} − (n−γ−1)n^γ], w_{n,j} = c·a_{n−j}, w_{n,n} = c,
//! a_m = (m+1)^{γ+1} − 2m^{γ+1} + (m−1)^{γ+1}, c = h^γ/(γ(γ+1)).

use crate::error::{FsdeError, Result};
use crate::grid::TimeGrid;
use crate::quad::{gl, gl16, graded_left, graded_right};
use crate::special::{gamma, rgamma};

/// g_γ(t) = θ(t) t^{γ−1}/Γ(γ).
pub fn g_gamma(t: f64, g: f64) -> Result<f64> {
    if !(g > 0.0) {
        return Err(FsdeError::domain(format!("kernel order must be positive, got {g}")));
    }
    if t <= 0.0 {
        return Ok(0.0);
    }
    Ok(t.powf(g - 1.0) * rgamma(g))
}

// generalized binomial coefficients C(p, k), k = 0..n
fn binom(p: f64, n: usize) -> Vec<f64> {
    let mut c = vec![1.0; n + 1];
    for k in 1..=n {
        c[k] = c[k - 1] * (p - (k - 1) as f64) / k as f64;
    }
    c
}

// below this index the closed forms are exact enough; above it the
// differences cancel and the binomial expansions take over
const SERIES_FROM: usize = 16;

/// Product-trapezoid weights for ∫₀^{t_n} (t_n − s)^{γ−1} f(s) ds.
///
/// Stored in O(N): the interior weights depend only on n − j.
#[derive(Debug, Clone)]
pub struct KernelWeights {
    order: f64,
    grid: TimeGrid,
    scale: f64,
    // a_m, m = 0..=N (a_0 unused)
    interior: Vec<f64>,
    // w_{n,0}/scale, n = 0..=N
    first: Vec<f64>,
}

impl KernelWeights {
    pub fn order(&self) -> f64 {
        self.order
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    /// w_{n,j}.
    #[inline]
    pub fn weight(&self, n: usize, j: usize) -> f64 {
        debug_assert!(j <= n && n <= self.grid.n_steps());
        if n == 0 {
            0.0
        } else if j == n {
            self.scale
        } else if j == 0 {
            self.scale * self.first[n]
        } else {
            self.scale * self.interior[n - j]
        }
    }

    /// Row n as a vector of length n + 1.
    pub fn row(&self, n: usize) -> Vec<f64> {
        (0..=n).map(|j| self.weight(n, j)).collect()
    }

    /// Σ_{j<n} w_{n,j} f_j, the part of row n that excludes the newest node.
    #[inline]
    pub(crate) fn history(&self, n: usize, f: &[f64]) -> f64 {
        if n == 0 {
            return 0.0;
        }
        let mut s = self.first[n] * f[0];
        for j in 1..n {
            s += self.interior[n - j] * f[j];
        }
        self.scale * s
    }

    /// Σ_j w_{n,j} f_j.
    pub fn apply_row(&self, n: usize, f: &[f64]) -> f64 {
        if n == 0 {
            return 0.0;
        }
        self.history(n, f) + self.scale * f[n]
    }
}

pub fn build_weights(grid: &TimeGrid, g: f64) -> Result<KernelWeights> {
    if !(g > 0.0 && g.is_finite()) {
        return Err(FsdeError::domain(format!("kernel order must be positive, got {g}")));
    }
    let n = grid.n_steps();
    let p = g + 1.0;
    let c = binom(p, 40);
    let mut interior = vec![0.0; n + 1];
    let mut first = vec![0.0; n + 1];
    for m in 1..=n {
        let mf = m as f64;
        if m < SERIES_FROM {
            interior[m] = (mf + 1.0).powf(p) - 2.0 * mf.powf(p) + (mf - 1.0).powf(p);
            first[m] = (mf - 1.0).powf(p) - (mf - g - 1.0) * mf.powf(g);
        } else {
            // a_m = 2 m^p Σ_{k even ≥ 2} C(p,k) m^{−k}
            // b_m = m^p Σ_{k ≥ 2} C(p,k) (−1/m)^k
            let inv = 1.0 / mf;
            let (mut a, mut b) = (0.0, 0.0);
            let mut pw = inv * inv;
            for (k, ck) in c.iter().enumerate().skip(2) {
                let t = ck * pw;
                if k % 2 == 0 {
                    a += t;
                    b += t;
                } else {
                    b -= t;
                }
                if t.abs() < 1e-18 * b.abs().max(a.abs()) {
                    break;
                }
                pw *= inv;
            }
            let mp = mf.powf(p);
            interior[m] = 2.0 * mp * a;
            first[m] = mp * b;
        }
    }
    let scale = grid.dt().powf(g) / (g * (g + 1.0));
    Ok(KernelWeights { order: g, grid: *grid, scale, interior, first })
}

/// Discrete (g_γ * f)(t_n) for every node; output[0] = 0.
pub fn fractional_integral(samples: &[f64], grid: &TimeGrid, g: f64) -> Result<Vec<f64>> {
    grid.check_len(samples.len(), "samples")?;
    let w = build_weights(grid, g)?;
    Ok(apply_weights(&w, samples))
}

pub(crate) fn apply_weights(w: &KernelWeights, samples: &[f64]) -> Vec<f64> {
    let rg = rgamma(w.order);
    (0..samples.len()).map(|n| rg * w.apply_row(n, samples)).collect()
}

/// L1 discretization of (1/Γ(1−α))∫₀ᵗ ẇ(s)(t−s)^{−α} ds: first differences
/// against the exact cell integrals of the kernel. output[0] = 0.
pub fn caputo_derivative(samples: &[f64], grid: &TimeGrid, alpha: f64) -> Result<Vec<f64>> {
    grid.check_len(samples.len(), "samples")?;
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(FsdeError::domain(format!("Caputo order must lie in (0,1), got {alpha}")));
    }
    let n = grid.n_steps();
    let q = 1.0 - alpha;
    // b_m = (m+1)^{1−α} − m^{1−α}
    let b: Vec<f64> = (0..n).map(|m| (m as f64 + 1.0).powf(q) - (m as f64).powf(q)).collect();
    let d: Vec<f64> = samples.windows(2).map(|w| w[1] - w[0]).collect();
    let c = grid.dt().powf(-alpha) / gamma(2.0 - alpha);
    let mut out = vec![0.0; n + 1];
    for k in 1..=n {
        let mut s = 0.0;
        for j in 0..k {
            s += d[j] * b[k - 1 - j];
        }
        out[k] = c * s;
    }
    Ok(out)
}

/// max_n |I^{γ2}(I^{γ1} f) − I^{γ1+γ2} f|(t_n).
pub fn semigroup_check(samples: &[f64], g1: f64, g2: f64, grid: &TimeGrid) -> Result<f64> {
    if !(g1 > 0.0 && g2 > 0.0) {
        return Err(FsdeError::domain(format!("orders must be positive, got {g1}, {g2}")));
    }
    let inner = fractional_integral(samples, grid, g1)?;
    let lhs = fractional_integral(&inner, grid, g2)?;
    let rhs = fractional_integral(samples, grid, g1 + g2)?;
    Ok(lhs.iter().zip(&rhs).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
}

/// (1/Γ(γ))∫₀ᵗ (t−s)^{γ−1} f(s) ds for a function, with f allowed to behave
/// like s^p near 0. Graded Gauss–Legendre at both endpoints.
pub fn fractional_integral_fn<F: Fn(f64) -> f64>(f: F, t: f64, g: f64, p: f64) -> Result<f64> {
    if !(g > 0.0) || !(p > -1.0) {
        return Err(FsdeError::domain(format!("need γ > 0 and p > −1, got {g}, {p}")));
    }
    if t <= 0.0 {
        return Ok(0.0);
    }
    let floor = t * 1e-15;
    let h = 0.5 * t;
    let left = graded_left(|s, _| (t - s).powf(g - 1.0) * f(s), 0.0, h, p, floor);
    let right = if g == 1.0 {
        gl(gl16(), h, t, &f)
    } else {
        graded_right(|s, d| d.powf(g - 1.0) * f(s), h, t, g - 1.0, floor)
    };
    Ok((left + right) * rgamma(g))
}
