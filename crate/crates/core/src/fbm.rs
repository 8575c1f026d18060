//! Fractional Brownian motion: covariance, exact (Cholesky) and circulant
//! (Davies–Harte) samplers.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rustfft::{num_complex::Complex64, Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{FsdeError, Result};
use crate::grid::{write_csv, TimeGrid};
use crate::rng::{fill_normal, RngSpec};

#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct HurstParam(f64);

impl HurstParam {
    /// Any H in (0, 1).
    pub fn new(h: f64) -> Result<Self> {
        if !(h > 0.0 && h < 1.0) {
            return Err(FsdeError::domain(format!("Hurst parameter must lie in (0,1), got {h}")));
        }
        Ok(Self(h))
    }

    /// H in (1/2, 1), the range the fractional SDE model is defined on.
    pub fn model(h: f64) -> Result<Self> {
        if !(h > 0.5 && h < 1.0) {
            return Err(FsdeError::domain(format!(
                "model Hurst parameter must lie in (1/2,1), got {h}"
            )));
        }
        Ok(Self(h))
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub(crate) fn require_model(self) -> Result<()> {
        Self::model(self.0).map(|_| ())
    }
}

/// ½(s^{2H} + t^{2H} − |t−s|^{2H}).
pub fn fbm_covariance(s: f64, t: f64, h: HurstParam) -> Result<f64> {
    if s < 0.0 || t < 0.0 || s.is_nan() || t.is_nan() {
        return Err(FsdeError::domain(format!("fBm covariance needs s,t >= 0, got ({s}, {t})")));
    }
    let e = 2.0 * h.0;
    Ok(0.5 * (s.powf(e) + t.powf(e) - (t - s).abs().powf(e)))
}

/// Autocovariance of unit-step fractional Gaussian noise at lag `j`.
pub fn fgn_autocov(j: usize, h: HurstParam) -> f64 {
    let e = 2.0 * h.0;
    let j = j as f64;
    0.5 * ((j + 1.0).powf(e) + (j - 1.0).abs().powf(e) - 2.0 * j.powf(e))
}

/// E[(B(h)/h)·(B(t+h1) − B(t))/h1], exact from the covariance.
///
/// Tends to H(2H−1)t^{2H−2} as h, h1 → 0.
pub fn increment_noise_covariance(t: f64, h: f64, h1: f64, hp: HurstParam) -> Result<f64> {
    if !(t > 0.0 && h > 0.0 && h1 > 0.0) {
        return Err(FsdeError::domain(format!(
            "increment covariance needs t, h, h1 > 0, got ({t}, {h}, {h1})"
        )));
    }
    let e = 2.0 * hp.0;
    let num = if t > h {
        // relative increments keep the second difference accurate for tiny h, h1
        let d = |a: f64| (e * (a / t).ln_1p()).exp_m1();
        0.5 * t.powf(e) * (d(h1) - d(h1 - h) + d(-h))
    } else {
        let p = |x: f64| x.abs().powf(e);
        0.5 * (p(t + h1) - p(t) - p(t + h1 - h) + p(t - h))
    };
    Ok(num / (h * h1))
}

/// Which sampler produced a path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FbmMethod {
    Exact,
    Circulant,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FbmPath {
    pub grid: TimeGrid,
    pub hurst: HurstParam,
    pub values: Vec<f64>,
    pub source: Option<RngSpec>,
    pub method: FbmMethod,
}

impl FbmPath {
    /// Builds a path from given values, e.g. a deterministic test signal.
    pub fn from_values(grid: TimeGrid, hurst: HurstParam, values: Vec<f64>) -> Result<Self> {
        grid.check_len(values.len(), "fBm path")?;
        if values[0] != 0.0 {
            return Err(FsdeError::contract("fBm path must start at 0"));
        }
        Ok(Self { grid, hurst, values, source: None, method: FbmMethod::Exact })
    }

    pub fn increments(&self) -> Vec<f64> {
        self.values.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// Every `factor`-th node, i.e. the same path on a coarser grid.
    pub fn coarsen(&self, factor: usize) -> Result<FbmPath> {
        if factor == 0 || self.grid.n_steps() % factor != 0 {
            return Err(FsdeError::contract(format!(
                "cannot coarsen {} steps by {factor}",
                self.grid.n_steps()
            )));
        }
        let grid = TimeGrid::new(self.grid.dt() * factor as f64, self.grid.n_steps() / factor)?;
        let values = self.values.iter().step_by(factor).copied().collect();
        Ok(FbmPath { grid, values, ..self.clone() })
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> std::io::Result<()> {
        write_csv(out, "value", &self.grid, &self.values)
    }
}

fn check_hurst_for_sampling(h: HurstParam) -> Result<()> {
    HurstParam::new(h.0).map(|_| ())
}

/// Exact sampler: Cholesky factor of the increment covariance, reused
/// across draws.
#[derive(Debug, Clone)]
pub struct ExactFbm {
    grid: TimeGrid,
    hurst: HurstParam,
    // row-major lower triangle
    chol: Vec<f64>,
}

impl ExactFbm {
    pub fn new(grid: TimeGrid, hurst: HurstParam) -> Result<Self> {
        check_hurst_for_sampling(hurst)?;
        let n = grid.n_steps();
        let scale = grid.dt().powf(2.0 * hurst.0);
        let acf: Vec<f64> = (0..n).map(|j| scale * fgn_autocov(j, hurst)).collect();
        let cov = DMatrix::from_fn(n, n, |i, j| acf[i.abs_diff(j)]);
        let chol = cov.cholesky().ok_or_else(|| {
            FsdeError::Numerical(format!(
                "increment covariance not positive definite (n = {n}, H = {}, dt = {})",
                hurst.0,
                grid.dt()
            ))
        })?;
        let l = chol.l();
        let mut packed = Vec::with_capacity(n * (n + 1) / 2);
        for i in 0..n {
            for j in 0..=i {
                packed.push(l[(i, j)]);
            }
        }
        Ok(Self { grid, hurst, chol: packed })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn sample(&self, spec: RngSpec) -> FbmPath {
        let n = self.grid.n_steps();
        let mut z = vec![0.0; n];
        fill_normal(&mut spec.rng(), &mut z);
        let mut values = Vec::with_capacity(n + 1);
        values.push(0.0);
        let mut acc = 0.0;
        let mut row = 0;
        for i in 0..n {
            let l = &self.chol[row..row + i + 1];
            let inc: f64 = l.iter().zip(&z[..=i]).map(|(a, b)| a * b).sum();
            acc += inc;
            values.push(acc);
            row += i + 1;
        }
        FbmPath {
            grid: self.grid,
            hurst: self.hurst,
            values,
            source: Some(spec),
            method: FbmMethod::Exact,
        }
    }

    /// Covariance matrix of the path values at nodes 1..=n implied by the
    /// factor (cumulative sums of L Lᵀ).
    pub fn implied_path_covariance(&self) -> DMatrix<f64> {
        let n = self.grid.n_steps();
        let mut l = DMatrix::zeros(n, n);
        let mut row = 0;
        for i in 0..n {
            for j in 0..=i {
                l[(i, j)] = self.chol[row + j];
            }
            row += i + 1;
        }
        // S L with S the lower-triangular summation matrix
        for i in 1..n {
            for j in 0..n {
                l[(i, j)] += l[(i - 1, j)];
            }
        }
        &l * l.transpose()
    }
}

/// Circulant-embedding sampler (Davies–Harte, embedding size 2n).
#[derive(Clone)]
pub struct CirculantFbm {
    grid: TimeGrid,
    hurst: HurstParam,
    // sqrt(λ_k / m) for k = 0..=n
    sqrt_eig: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
    fallback: Option<ExactFbm>,
}

impl std::fmt::Debug for CirculantFbm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CirculantFbm")
            .field("grid", &self.grid)
            .field("hurst", &self.hurst)
            .field("fallback", &self.fallback.is_some())
            .finish()
    }
}

/// Relative size of a negative embedding eigenvalue that is still treated
/// as round-off and clipped to zero.
const EIG_TOL: f64 = 1e-10;

impl CirculantFbm {
    pub fn new(grid: TimeGrid, hurst: HurstParam) -> Result<Self> {
        check_hurst_for_sampling(hurst)?;
        let n = grid.n_steps();
        if n < 2 {
            return Err(FsdeError::domain("circulant sampler needs n_steps >= 2"));
        }
        let m = 2 * n;
        let scale = grid.dt().powf(2.0 * hurst.0);
        let mut c: Vec<Complex64> = (0..m)
            .map(|j| {
                let lag = if j <= n { j } else { m - j };
                Complex64::new(scale * fgn_autocov(lag, hurst), 0.0)
            })
            .collect();
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(m);
        fft.process(&mut c);
        let max = c.iter().map(|z| z.re).fold(0.0f64, f64::max);
        let min = c[..=n].iter().map(|z| z.re).fold(f64::INFINITY, f64::min);
        let mut fallback = None;
        if min < -EIG_TOL * max {
            log::warn!(
                "circulant embedding has negative eigenvalue {min:e} (max {max:e}); using exact sampler"
            );
            fallback = Some(ExactFbm::new(grid, hurst)?);
        }
        let sqrt_eig = c[..=n].iter().map(|z| (z.re.max(0.0) / m as f64).sqrt()).collect();
        Ok(Self { grid, hurst, sqrt_eig, fft, fallback })
    }

    /// True when the embedding failed and draws come from the exact sampler.
    pub fn uses_fallback(&self) -> bool {
        self.fallback.is_some()
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn sample(&self, spec: RngSpec) -> FbmPath {
        if let Some(exact) = &self.fallback {
            return exact.sample(spec);
        }
        let n = self.grid.n_steps();
        let m = 2 * n;
        let mut z = vec![0.0; m];
        fill_normal(&mut spec.rng(), &mut z);
        let mut w = vec![Complex64::new(0.0, 0.0); m];
        w[0] = Complex64::new(self.sqrt_eig[0] * z[0], 0.0);
        w[n] = Complex64::new(self.sqrt_eig[n] * z[1], 0.0);
        let s2 = std::f64::consts::FRAC_1_SQRT_2;
        for k in 1..n {
            let a = self.sqrt_eig[k] * s2;
            let v = Complex64::new(a * z[2 * k], a * z[2 * k + 1]);
            w[k] = v;
            w[m - k] = v.conj();
        }
        self.fft.process(&mut w);
        let mut values = Vec::with_capacity(n + 1);
        values.push(0.0);
        let mut acc = 0.0;
        for x in &w[..n] {
            acc += x.re;
            values.push(acc);
        }
        FbmPath {
            grid: self.grid,
            hurst: self.hurst,
            values,
            source: Some(spec),
            method: FbmMethod::Circulant,
        }
    }
}

pub fn sample_fbm_exact(grid: TimeGrid, h: HurstParam, rng: RngSpec) -> Result<FbmPath> {
    Ok(ExactFbm::new(grid, h)?.sample(rng))
}

pub fn sample_fbm_circulant(grid: TimeGrid, h: HurstParam, rng: RngSpec) -> Result<FbmPath> {
    Ok(CirculantFbm::new(grid, h)?.sample(rng))
}

/// Either sampler behind one interface.
#[derive(Debug, Clone)]
pub enum FbmSampler {
    Exact(ExactFbm),
    Circulant(CirculantFbm),
}

impl FbmSampler {
    pub fn new(grid: TimeGrid, h: HurstParam, method: FbmMethod) -> Result<Self> {
        Ok(match method {
            FbmMethod::Exact => FbmSampler::Exact(ExactFbm::new(grid, h)?),
            FbmMethod::Circulant => FbmSampler::Circulant(CirculantFbm::new(grid, h)?),
        })
    }

    /// Circulant for n ≥ 2, exact otherwise.
    pub fn fast(grid: TimeGrid, h: HurstParam) -> Result<Self> {
        if grid.n_steps() >= 2 {
            Self::new(grid, h, FbmMethod::Circulant)
        } else {
            Self::new(grid, h, FbmMethod::Exact)
        }
    }

    pub fn sample(&self, spec: RngSpec) -> FbmPath {
        match self {
            FbmSampler::Exact(s) => s.sample(spec),
            FbmSampler::Circulant(s) => s.sample(spec),
        }
    }

    pub fn grid(&self) -> &TimeGrid {
        match self {
            FbmSampler::Exact(s) => s.grid(),
            FbmSampler::Circulant(s) => s.grid(),
        }
    }
}

/// Sample covariance accumulator for equal-length vectors, batched through
/// a matrix product. Batches are combined in the order they are added.
#[derive(Debug, Clone)]
pub struct CovAccumulator {
    dim: usize,
    count: usize,
    sum: DVector<f64>,
    cross: DMatrix<f64>,
}

impl CovAccumulator {
    pub fn new(dim: usize) -> Self {
        Self { dim, count: 0, sum: DVector::zeros(dim), cross: DMatrix::zeros(dim, dim) }
    }

    pub fn add_batch(&mut self, rows: &[Vec<f64>]) {
        if rows.is_empty() {
            return;
        }
        let x = DMatrix::from_fn(self.dim, rows.len(), |i, j| rows[j][i]);
        self.cross += &x * x.transpose();
        for r in rows {
            for (s, v) in self.sum.iter_mut().zip(r) {
                *s += v;
            }
        }
        self.count += rows.len();
    }

    pub fn merge(&mut self, other: &CovAccumulator) {
        self.sum += &other.sum;
        self.cross += &other.cross;
        self.count += other.count;
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn mean(&self) -> DVector<f64> {
        &self.sum / self.count as f64
    }

    /// Unbiased sample covariance.
    pub fn covariance(&self) -> DMatrix<f64> {
        let n = self.count as f64;
        let mu = self.mean();
        (&self.cross - &mu * mu.transpose() * n) / (n - 1.0)
    }
}
