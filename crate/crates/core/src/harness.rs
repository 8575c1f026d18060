//! Ensemble runs and the statistical checks built on them.
//!
//! Paths are grouped into fixed blocks of consecutive indices. Each block is
//! reduced sequentially and the blocks are merged by a fixed pairwise tree,
//! so aggregates are bit-identical for any worker count.

use serde::{Deserialize, Serialize};

use crate::error::{FsdeError, Result};
use crate::fbm::FbmSampler;
use crate::grid::TimeGrid;
use crate::linear_oracle::{ExactLinear, LinearModel, StationaryLaw};
use crate::markov_embedding::{fit_modes, power_kernel, simulate_embedded_overdamped, GleIntegrator, ModeSet};
use crate::rng::RngSpec;
use crate::solver::{solve_picard, ModelSpec, Potential, VolterraSolver};
use crate::special::normal_cdf;
use crate::stats::{chi_square_test, ks_test, log_log_fit, mean_var, pairwise_sum, DistributionTest, ExponentFit};
use crate::stoch_integral::GSampler;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Volterra,
    Picard,
    ExactLinear,
    Embedded,
}

impl std::str::FromStr for Method {
    type Err = FsdeError;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.into()))
            .map_err(|_| FsdeError::domain(format!("unknown method {s:?}")))
    }
}

pub const DEFAULT_LAGS: [f64; 5] = [0.0, 0.5, 1.0, 2.0, 5.0];
const BLOCK: usize = 32;

#[derive(Debug, Clone)]
pub struct EnsembleOptions {
    /// Worker threads; `None` uses the global rayon pool.
    pub workers: Option<usize>,
    /// Lags for the late-window covariance estimates.
    pub lags: Vec<f64>,
    /// Mode set for the embedded method. Defaults to a 40-mode fit on
    /// [dt, T].
    pub modes: Option<ModeSet>,
    pub picard_tol: f64,
    pub picard_max_iter: usize,
}

impl Default for EnsembleOptions {
    fn default() -> Self {
        Self { workers: None, lags: DEFAULT_LAGS.to_vec(), modes: None, picard_tol: 1e-10, picard_max_iter: 200 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LagCovariance {
    pub lag: f64,
    pub value: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleResult {
    pub n_paths: usize,
    pub grid: TimeGrid,
    pub method: Method,
    pub seed: u64,
    pub mean: Vec<f64>,
    pub mean_se: Vec<f64>,
    pub variance: Vec<f64>,
    /// Normal-theory standard error var·√(2/(n−1)).
    pub variance_se: Vec<f64>,
    pub lag_covariances: Vec<LagCovariance>,
    pub terminal: Vec<f64>,
}

impl EnsembleResult {
    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "t,mean,mean_se,variance,variance_se")?;
        for j in 0..self.grid.len() {
            writeln!(
                out,
                "{:e},{:e},{:e},{:e},{:e}",
                self.grid.t(j),
                self.mean[j],
                self.mean_se[j],
                self.variance[j],
                self.variance_se[j]
            )?;
        }
        Ok(())
    }

    pub fn times(&self) -> Vec<f64> {
        self.grid.times()
    }
}

// per-node running moments (count, mean, M2) merged with Chan's formula
#[derive(Clone)]
struct Moments {
    n: f64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Moments {
    fn empty(len: usize) -> Self {
        Self { n: 0.0, mean: vec![0.0; len], m2: vec![0.0; len] }
    }

    fn push(&mut self, x: &[f64]) {
        self.n += 1.0;
        for j in 0..x.len() {
            let d = x[j] - self.mean[j];
            self.mean[j] += d / self.n;
            self.m2[j] += d * (x[j] - self.mean[j]);
        }
    }

    fn merge(a: &Moments, b: &Moments) -> Moments {
        if a.n == 0.0 {
            return b.clone();
        }
        if b.n == 0.0 {
            return a.clone();
        }
        let n = a.n + b.n;
        let mut out = Moments::empty(a.mean.len());
        out.n = n;
        for j in 0..a.mean.len() {
            let d = b.mean[j] - a.mean[j];
            out.mean[j] = a.mean[j] + d * b.n / n;
            out.m2[j] = a.m2[j] + b.m2[j] + d * d * a.n * b.n / n;
        }
        out
    }
}

fn merge_tree(blocks: &[Moments]) -> Moments {
    match blocks.len() {
        0 => unreachable!("ensembles have at least one block"),
        1 => blocks[0].clone(),
        n => Moments::merge(&merge_tree(&blocks[..n / 2]), &merge_tree(&blocks[n / 2..])),
    }
}

// what one path contributes
struct PathOut {
    terminal: f64,
    lag_products: Vec<f64>,
}

enum PathRunner {
    Volterra(FbmSampler, VolterraSolver),
    Picard(FbmSampler, GSampler, ModelSpec, f64, usize),
    Exact(FbmSampler, ExactLinear, ModelSpec),
    Embedded(ModeSet, ModelSpec, TimeGrid),
}

impl PathRunner {
    fn new(model: &ModelSpec, method: Method, grid: TimeGrid, opts: &EnsembleOptions) -> Result<Self> {
        let fbm = || FbmSampler::fast(grid, model.hurst);
        Ok(match method {
            Method::Volterra => PathRunner::Volterra(fbm()?, VolterraSolver::new(*model, grid)?),
            Method::Picard => PathRunner::Picard(
                fbm()?,
                GSampler::new(grid, model.alpha, model.hurst)?,
                *model,
                opts.picard_tol,
                opts.picard_max_iter,
            ),
            Method::ExactLinear => {
                let k = match model.potential {
                    Potential::Linear { k } if k > 0.0 => k,
                    p => return Err(FsdeError::contract(format!("exact-linear needs a linear potential with k > 0, got {}", p.name()))),
                };
                let lin = LinearModel::new(k, model.alpha, model.hurst, 0.0)?;
                PathRunner::Exact(fbm()?, ExactLinear::new(lin, grid)?, *model)
            }
            Method::Embedded => {
                if !model.fdt_flag {
                    return Err(FsdeError::contract("the embedded dynamics exist only for α = 2 − 2H"));
                }
                let modes = match &opts.modes {
                    Some(m) => {
                        if (m.alpha - model.alpha.value()).abs() > 1e-12 {
                            return Err(FsdeError::contract("mode set was fitted for a different α"));
                        }
                        m.clone()
                    }
                    None => fit_modes(model.alpha.value(), grid.dt(), grid.t_end().max(2.0 * grid.dt()), 40)?,
                };
                PathRunner::Embedded(modes, *model, grid)
            }
        })
    }

    fn run(&self, spec: RngSpec) -> Result<Vec<f64>> {
        Ok(match self {
            PathRunner::Volterra(f, s) => s.solve(&f.sample(spec))?.values,
            PathRunner::Picard(f, g, m, tol, it) => solve_picard(m, &g.sample(&f.sample(spec))?, *tol, *it)?.0.values,
            PathRunner::Exact(f, e, m) => {
                let fbm = f.sample(spec);
                e.sample_from(m.x0.draw(fbm.source)?, &fbm)?.values
            }
            PathRunner::Embedded(modes, m, grid) => {
                let x0 = m.x0.draw(Some(spec))?;
                simulate_embedded_overdamped(&m.potential, modes, grid, spec, x0)?.values
            }
        })
    }
}

/// Runs `f` on a pool of `workers` threads, or on the global pool.
pub fn with_workers<T: Send, F: FnOnce() -> T + Send>(workers: Option<usize>, f: F) -> Result<T> {
    match workers {
        Some(w) => Ok(rayon::ThreadPoolBuilder::new()
            .num_threads(w.max(1))
            .build()
            .map_err(|e| FsdeError::Numerical(format!("thread pool: {e}")))?
            .install(f)),
        None => Ok(f()),
    }
}

// first node of the late window and lag offsets in steps
fn late_window(grid: &TimeGrid, lags: &[f64]) -> (usize, Vec<Option<usize>>) {
    let len = grid.len();
    let start = (2 * (len - 1)) / 3;
    let offs = lags
        .iter()
        .map(|&l| {
            let s = (l / grid.dt()).round() as usize;
            (start + s < len).then_some(s)
        })
        .collect();
    (start, offs)
}

fn lag_products(x: &[f64], start: usize, offs: &[Option<usize>]) -> Vec<f64> {
    offs.iter()
        .map(|o| match o {
            Some(s) => {
                let p: Vec<f64> = (start..x.len() - s).map(|j| x[j] * x[j + s]).collect();
                pairwise_sum(&p) / p.len() as f64
            }
            None => f64::NAN,
        })
        .collect()
}

/// Runs `n_paths` independent paths keyed by (seed, path index).
pub fn run_ensemble(model: &ModelSpec, method: Method, n_paths: usize, grid: TimeGrid, seed: u64) -> Result<EnsembleResult> {
    run_ensemble_with(model, method, n_paths, grid, seed, &EnsembleOptions::default())
}

pub fn run_ensemble_with(
    model: &ModelSpec,
    method: Method,
    n_paths: usize,
    grid: TimeGrid,
    seed: u64,
    opts: &EnsembleOptions,
) -> Result<EnsembleResult> {
    if n_paths < 2 {
        return Err(FsdeError::domain("an ensemble needs at least two paths"));
    }
    if opts.lags.iter().any(|l| !(*l >= 0.0)) {
        return Err(FsdeError::domain("lags must be nonnegative"));
    }
    let runner = PathRunner::new(model, method, grid, opts)?;
    let (start, offs) = late_window(&grid, &opts.lags);
    let n_blocks = n_paths.div_ceil(BLOCK);

    let work = || {
        use rayon::prelude::*;
        (0..n_blocks)
            .into_par_iter()
            .map(|b| {
                let mut mom = Moments::empty(grid.len());
                let mut outs = Vec::with_capacity(BLOCK);
                let mut failed = Vec::new();
                for i in b * BLOCK..((b + 1) * BLOCK).min(n_paths) {
                    let spec = RngSpec::path(seed, i);
                    match runner.run(spec) {
                        Ok(values) => {
                            mom.push(&values);
                            let lp = lag_products(&values, start, &offs);
                            outs.push(PathOut { terminal: *values.last().unwrap(), lag_products: lp });
                        }
                        Err(e) => failed.push((spec.stream_id, e)),
                    }
                }
                (mom, outs, failed)
            })
            .collect::<Vec<_>>()
    };
    let blocks = with_workers(opts.workers, work)?;

    let mut failed: Vec<(u64, FsdeError)> = Vec::new();
    let mut moments = Vec::with_capacity(n_blocks);
    let mut outs = Vec::with_capacity(n_paths);
    for (m, o, f) in blocks {
        moments.push(m);
        outs.extend(o);
        failed.extend(f);
    }
    if let Some((_, first)) = failed.first() {
        return Err(FsdeError::Ensemble {
            failed_streams: failed.iter().map(|(s, _)| *s).collect(),
            first: Box::new(first.clone()),
        });
    }
    let mom = merge_tree(&moments);
    let n = n_paths as f64;
    let variance: Vec<f64> = mom.m2.iter().map(|m| m / (n - 1.0)).collect();
    let mean_se = variance.iter().map(|v| (v / n).sqrt()).collect();
    let variance_se = variance.iter().map(|v| v * (2.0 / (n - 1.0)).sqrt()).collect();

    let mut lag_covariances = Vec::new();
    for (l, (lag, off)) in opts.lags.iter().zip(&offs).enumerate() {
        let Some(s) = off else { continue };
        let per_path: Vec<f64> = outs.iter().map(|o| o.lag_products[l]).collect();
        let (raw, var) = mean_var(&per_path);
        let mm: Vec<f64> = (start..grid.len() - s).map(|j| mom.mean[j] * mom.mean[j + s]).collect();
        let value = raw - pairwise_sum(&mm) / mm.len() as f64;
        lag_covariances.push(LagCovariance { lag: *lag, value, se: (var / n).sqrt() });
    }

    Ok(EnsembleResult {
        n_paths,
        grid,
        method,
        seed,
        mean: mom.mean,
        mean_se,
        variance,
        variance_se,
        lag_covariances,
        terminal: outs.iter().map(|o| o.terminal).collect(),
    })
}

/// Terminal statistics of a massive-GLE ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GleEnsemble {
    pub mass: f64,
    pub n_paths: usize,
    pub t_end: f64,
    pub dt: f64,
    pub var_q: f64,
    pub var_q_se: f64,
    pub var_v: f64,
    pub var_v_se: f64,
    pub terminal_q: Vec<f64>,
    pub terminal_v: Vec<f64>,
}

/// Independent GLE paths started at (q0, v0) with stationary modes.
#[allow(clippy::too_many_arguments)]
pub fn run_gle_ensemble(
    mass: f64,
    potential: &Potential,
    modes: &ModeSet,
    grid: TimeGrid,
    n_paths: usize,
    seed: u64,
    start: (f64, f64),
    workers: Option<usize>,
) -> Result<GleEnsemble> {
    use rayon::prelude::*;
    if n_paths < 2 {
        return Err(FsdeError::domain("an ensemble needs at least two paths"));
    }
    let gle = GleIntegrator::new(mass, potential, modes, &grid)?;
    let runs: Vec<Result<(f64, f64)>> = with_workers(workers, || {
        (0..n_paths)
            .into_par_iter()
            .map(|i| {
                let p = gle.run(RngSpec::path(seed, i), start.0, start.1)?;
                Ok((*p.q.last().unwrap(), *p.v.last().unwrap()))
            })
            .collect()
    })?;
    let mut failed = Vec::new();
    let (mut q, mut v) = (Vec::with_capacity(n_paths), Vec::with_capacity(n_paths));
    for (i, r) in runs.into_iter().enumerate() {
        match r {
            Ok((a, b)) => {
                q.push(a);
                v.push(b);
            }
            Err(e) => failed.push((i as u64, e)),
        }
    }
    if let Some((_, first)) = failed.first() {
        return Err(FsdeError::Ensemble {
            failed_streams: failed.iter().map(|(s, _)| *s).collect(),
            first: Box::new(first.clone()),
        });
    }
    let k = (2.0 / (n_paths as f64 - 1.0)).sqrt();
    let (var_q, var_v) = (mean_var(&q).1, mean_var(&v).1);
    Ok(GleEnsemble {
        mass,
        n_paths,
        t_end: grid.t_end(),
        dt: grid.dt(),
        var_q,
        var_q_se: var_q * k,
        var_v,
        var_v_se: var_v * k,
        terminal_q: q,
        terminal_v: v,
    })
}

/// Slope of log variance against log t over `window`.
pub fn msd_exponent(result: &EnsembleResult, window: (f64, f64)) -> Result<ExponentFit> {
    let t = result.times();
    if !(window.0 < window.1) || window.1 < t[1] || window.0 > result.grid.t_end() {
        return Err(FsdeError::domain(format!("fit window {window:?} lies outside the data")));
    }
    log_log_fit(&t, &result.variance, window.0, window.1)
}

/// Verdict of a terminal-law check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GibbsReport {
    /// KS test against the Gibbs law.
    pub test: DistributionTest,
    /// KS test against a normal law with the sample mean and variance.
    pub gaussian_fit: DistributionTest,
    pub sample_mean: f64,
    pub sample_variance: f64,
    pub sample_variance_se: f64,
    pub gibbs_variance: f64,
    /// Sample variance is more than 4 SE away from the Gibbs variance.
    pub variance_mismatch: bool,
}

/// Density ∝ exp(−V/T) tabulated with its CDF.
#[derive(Debug, Clone)]
pub struct GibbsDensity {
    x: Vec<f64>,
    cdf: Vec<f64>,
    pub mean: f64,
    pub variance: f64,
}

impl GibbsDensity {
    pub fn new(potential: &Potential, temperature: f64) -> Result<Self> {
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(FsdeError::domain("temperature must be positive"));
        }
        potential.validate()?;
        let unnormalizable = || FsdeError::domain(format!("exp(−V) is not normalizable for {}", potential.name()));
        // V must grow at least linearly in both directions
        let big = 1e6;
        let (vl, vr) = (potential.gradient(-big), potential.gradient(big));
        if !(vr > 0.0 && vl < 0.0) {
            return Err(unnormalizable());
        }
        let beta = 1.0 / temperature;
        let mut x_min = 0.0f64;
        let mut width = 1.0;
        let v_low = (-200..=200).map(|i| potential.energy(i as f64 * 0.05)).fold(f64::INFINITY, f64::min);
        while beta * (potential.energy(-width) - v_low) < 60.0 || beta * (potential.energy(width) - v_low) < 60.0 {
            width *= 1.5;
            if width > 1e12 {
                return Err(unnormalizable());
            }
        }
        x_min -= width;
        let n = 40_000;
        let h = 2.0 * width / n as f64;
        let x: Vec<f64> = (0..=n).map(|i| x_min + i as f64 * h).collect();
        let f: Vec<f64> = x.iter().map(|&v| (-(potential.energy(v) - v_low) * beta).exp()).collect();
        let mut cdf = vec![0.0; x.len()];
        for i in 1..x.len() {
            cdf[i] = cdf[i - 1] + 0.5 * h * (f[i] + f[i - 1]);
        }
        let z = cdf[n];
        for c in cdf.iter_mut() {
            *c /= z;
        }
        let w = |i: usize| if i == 0 || i == n { 0.5 * h } else { h } / z;
        let mean: f64 = (0..=n).map(|i| w(i) * f[i] * x[i]).sum();
        let variance: f64 = (0..=n).map(|i| w(i) * f[i] * (x[i] - mean).powi(2)).sum();
        Ok(Self { x, cdf, mean, variance })
    }

    pub fn cdf(&self, v: f64) -> f64 {
        let (a, b) = (self.x[0], *self.x.last().unwrap());
        if v <= a {
            return 0.0;
        }
        if v >= b {
            return 1.0;
        }
        let h = (b - a) / (self.x.len() - 1) as f64;
        let i = (((v - a) / h) as usize).min(self.x.len() - 2);
        let s = (v - self.x[i]) / h;
        self.cdf[i] + s * (self.cdf[i + 1] - self.cdf[i])
    }

    /// Point where the CDF reaches `p`.
    pub fn quantile(&self, p: f64) -> f64 {
        let i = self.cdf.partition_point(|&c| c < p).clamp(1, self.x.len() - 1);
        let (c0, c1) = (self.cdf[i - 1], self.cdf[i]);
        let s = if c1 > c0 { (p - c0) / (c1 - c0) } else { 0.0 };
        self.x[i - 1] + s * (self.x[i] - self.x[i - 1])
    }
}

/// KS test of terminal samples against exp(−V/T).
pub fn gibbs_test(result: &EnsembleResult, potential: &Potential, temperature: f64) -> Result<GibbsReport> {
    gibbs_test_samples(&result.terminal, potential, temperature)
}

pub fn gibbs_test_samples(samples: &[f64], potential: &Potential, temperature: f64) -> Result<GibbsReport> {
    if samples.len() < 2 {
        return Err(FsdeError::contract("Gibbs test needs at least two samples"));
    }
    let (mean, var) = mean_var(samples);
    let (test, gibbs_variance) = match *potential {
        Potential::Linear { k } => {
            if !(k > 0.0) || !(temperature > 0.0) {
                return Err(FsdeError::domain("exp(−kx²/2) needs k > 0 and T > 0"));
            }
            let s2 = temperature / k;
            let sd = s2.sqrt();
            (ks_test(samples, |x| normal_cdf(x / sd), &format!("N(0,{s2})"))?, s2)
        }
        _ => {
            let d = GibbsDensity::new(potential, temperature)?;
            (ks_test(samples, |x| d.cdf(x), &format!("exp(-V/T), V = {}", potential.name()))?, d.variance)
        }
    };
    let sd = var.sqrt();
    let gaussian_fit = ks_test(samples, |x| normal_cdf((x - mean) / sd), &format!("N({mean},{var})"))?;
    let n = samples.len() as f64;
    let se = var * (2.0 / (n - 1.0)).sqrt();
    Ok(GibbsReport {
        test,
        gaussian_fit,
        sample_mean: mean,
        sample_variance: var,
        sample_variance_se: se,
        gibbs_variance,
        variance_mismatch: (var - gibbs_variance).abs() > 4.0 * se,
    })
}

/// Chi-square test of a histogram on `bins` Gibbs-equiprobable cells.
pub fn gibbs_histogram_test(samples: &[f64], potential: &Potential, temperature: f64, bins: usize) -> Result<DistributionTest> {
    if bins < 2 {
        return Err(FsdeError::domain("need at least two bins"));
    }
    let d = GibbsDensity::new(potential, temperature)?;
    let edges: Vec<f64> = (1..bins).map(|i| d.quantile(i as f64 / bins as f64)).collect();
    let mut counts = vec![0.0; bins];
    for &s in samples {
        counts[edges.partition_point(|&e| e <= s)] += 1.0;
    }
    let expected = vec![samples.len() as f64 / bins as f64; bins];
    chi_square_test(&counts, &expected, &format!("exp(-V/T) histogram, V = {}", potential.name()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceRow {
    pub lag: f64,
    pub expected: f64,
    pub measured: f64,
    pub se: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceReport {
    pub rows: Vec<CovarianceRow>,
    /// Measured values never rise by more than 4 combined SE.
    pub monotone: bool,
    pub pass: bool,
}

/// Late-window lag covariances against the stationary covariance h(τ).
pub fn covariance_test(result: &EnsembleResult, model: &LinearModel) -> Result<CovarianceReport> {
    if result.lag_covariances.is_empty() {
        return Err(FsdeError::contract("ensemble carries no lag covariances"));
    }
    let law = StationaryLaw::new(*model)?;
    let mut rows = Vec::new();
    for c in &result.lag_covariances {
        let expected = law.covariance(c.lag)?;
        rows.push(CovarianceRow {
            lag: c.lag,
            expected,
            measured: c.value,
            se: c.se,
            pass: (c.value - expected).abs() <= 4.0 * c.se,
        });
    }
    let monotone = rows.windows(2).all(|w| w[1].measured <= w[0].measured + 4.0 * (w[0].se.hypot(w[1].se)));
    let pass = monotone && rows.iter().all(|r| r.pass);
    Ok(CovarianceReport { rows, monotone, pass })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseRow {
    pub lag: f64,
    pub empirical: f64,
    pub se: f64,
    pub fitted_kernel: f64,
    /// γ(τ); absent at τ = 0 where it is infinite.
    pub power_kernel: Option<f64>,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseReport {
    pub rows: Vec<NoiseRow>,
    pub fit_error: f64,
    pub pass: bool,
}

/// Empirical cov(R(0), R(τ)) over free-noise paths against the fitted
/// kernel (4 SE) and γ (fit error).
pub fn fdt_noise_check(paths: &[Vec<f64>], grid: &TimeGrid, modes: &ModeSet, lags: &[f64]) -> Result<NoiseReport> {
    if paths.len() < 2 {
        return Err(FsdeError::contract("need at least two noise paths"));
    }
    let mut rows = Vec::new();
    for &lag in lags {
        let s = (lag / grid.dt()).round() as usize;
        if s >= grid.len() || paths.iter().any(|p| p.len() != grid.len()) {
            return Err(FsdeError::domain(format!("lag {lag} does not fit the noise paths")));
        }
        let a: Vec<f64> = paths.iter().map(|p| p[0]).collect();
        let b: Vec<f64> = paths.iter().map(|p| p[s]).collect();
        let (ma, _) = mean_var(&a);
        let (mb, _) = mean_var(&b);
        let prod: Vec<f64> = a.iter().zip(&b).map(|(x, y)| (x - ma) * (y - mb)).collect();
        let (cov, var) = mean_var(&prod);
        let n = paths.len() as f64;
        let cov = cov * n / (n - 1.0);
        let se = (var / n).sqrt();
        let tau = s as f64 * grid.dt();
        let fitted = modes.kernel(tau);
        let gamma = (tau > 0.0).then(|| power_kernel(tau, modes.alpha));
        let in_range = tau >= modes.t_min && tau <= modes.t_max;
        let kernel_ok = match gamma {
            Some(g) if in_range => ((fitted - g) / g).abs() <= modes.fit_error * (1.0 + 1e-9) + 1e-15,
            _ => true,
        };
        rows.push(NoiseRow {
            lag: tau,
            empirical: cov,
            se,
            fitted_kernel: fitted,
            power_kernel: gamma,
            pass: (cov - fitted).abs() <= 4.0 * se && kernel_ok,
        });
    }
    let pass = rows.iter().all(|r| r.pass);
    Ok(NoiseReport { rows, fit_error: modes.fit_error, pass })
}

/// Machine-readable verdict on one claim.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClaimReport {
    pub claim: String,
    pub expected: f64,
    pub measured: f64,
    pub band: f64,
    pub pass: bool,
}

impl ClaimReport {
    /// Pass when |measured − expected| ≤ band.
    pub fn within(claim: impl Into<String>, expected: f64, measured: f64, band: f64) -> Self {
        Self { claim: claim.into(), expected, measured, band, pass: (measured - expected).abs() <= band }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chan_merge_matches_direct() {
        let rows: Vec<Vec<f64>> = (0..37).map(|i| vec![(i as f64 * 0.37).sin(), i as f64]).collect();
        let mut blocks = Vec::new();
        for c in rows.chunks(5) {
            let mut m = Moments::empty(2);
            c.iter().for_each(|r| m.push(r));
            blocks.push(m);
        }
        let m = merge_tree(&blocks);
        let col: Vec<f64> = rows.iter().map(|r| r[0]).collect();
        let (mu, var) = mean_var(&col);
        assert!((m.mean[0] - mu).abs() < 1e-14);
        assert!((m.m2[0] / 36.0 - var).abs() < 1e-14);
    }

    #[test]
    fn gibbs_density_of_quadratic() {
        let d = GibbsDensity::new(&Potential::Linear { k: 2.0 }, 1.0).unwrap();
        assert!((d.variance - 0.5).abs() < 1e-8);
        assert!((d.cdf(0.3) - normal_cdf(0.3 * 2f64.sqrt())).abs() < 1e-7);
        assert!((d.quantile(0.5)).abs() < 1e-6);
    }

    #[test]
    fn unnormalizable_potentials() {
        assert!(GibbsDensity::new(&Potential::Zero, 1.0).is_err());
        assert!(GibbsDensity::new(&Potential::Linear { k: -1.0 }, 1.0).is_err());
        assert!(GibbsDensity::new(&Potential::ClippedDoubleWell { a: 0.0, b: 1.0, clip_radius: 2.0 }, 1.0).is_err());
        assert!(GibbsDensity::new(&Potential::ClippedDoubleWell { a: 1.0, b: 1.0, clip_radius: 2.0 }, 1.0).is_ok());
    }

    #[test]
    fn method_names() {
        assert_eq!("exact-linear".parse::<Method>().unwrap(), Method::ExactLinear);
        assert!("euler".parse::<Method>().is_err());
    }
}
