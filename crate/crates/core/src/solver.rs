//! Strong solutions of x(t) = x0 − I^α[V′(x)](t) + G(t) on a fixed noise path.
//!
//! The Volterra scheme splits V′(x) = L·x + N(x), where L is the linear part
//! of the potential, and writes x = y + G. Then
//!
//! y = x0 − I^α[L·y + N(x)] − L·I^α G,
//!
//! and I^α G is itself a stochastic convolution of order 2α that is computed
//! exactly for the interpolated noise. Only y, which is much smoother than G,
//! is integrated with product-trapezoid weights. The linear part is treated
//! implicitly and N by one predictor-corrector pass.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{FsdeError, Result};
use crate::fbm::{FbmPath, HurstParam};
use crate::frackernel::{apply_weights, build_weights, KernelWeights};
use crate::grid::{write_csv, TimeGrid};
use crate::mlf::{FracOrder, MittagLeffler, MlSettings};
use crate::rng::RngSpec;
use crate::special::rgamma;
use crate::stoch_integral::{c_h, Convolution, GPath, GSampler};

/// Force field V′ by name.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Potential {
    Zero,
    /// V = k x²/2.
    Linear { k: f64 },
    /// V = a x⁴/4 − b x²/2 with V′ evaluated at x clamped to ±clip_radius.
    ClippedDoubleWell { a: f64, b: f64, clip_radius: f64 },
}

impl Potential {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Potential::Zero => Ok(()),
            Potential::Linear { k } if k.is_finite() => Ok(()),
            Potential::ClippedDoubleWell { a, b, clip_radius }
                if a >= 0.0 && b.is_finite() && a.is_finite() && clip_radius > 0.0 && clip_radius.is_finite() =>
            {
                Ok(())
            }
            p => Err(FsdeError::domain(format!("invalid potential {p:?}"))),
        }
    }

    pub fn gradient(&self, x: f64) -> f64 {
        match *self {
            Potential::Zero => 0.0,
            Potential::Linear { k } => k * x,
            Potential::ClippedDoubleWell { a, b, clip_radius } => {
                let c = x.clamp(-clip_radius, clip_radius);
                a * c * c * c - b * c
            }
        }
    }

    /// V itself, with V(0) = 0. Outside the clip radius the double well
    /// continues linearly so that V′ stays consistent with `gradient`.
    pub fn energy(&self, x: f64) -> f64 {
        match *self {
            Potential::Zero => 0.0,
            Potential::Linear { k } => 0.5 * k * x * x,
            Potential::ClippedDoubleWell { a, b, clip_radius: r } => {
                let c = x.clamp(-r, r);
                let inner = 0.25 * a * c.powi(4) - 0.5 * b * c * c;
                inner + self.gradient(c) * (x - c)
            }
        }
    }

    /// A valid Lipschitz constant of V′.
    pub fn lipschitz_bound(&self) -> Option<f64> {
        match *self {
            Potential::Zero => Some(0.0),
            Potential::Linear { k } => Some(k.abs()),
            Potential::ClippedDoubleWell { a, b, clip_radius } => {
                Some((3.0 * a * clip_radius * clip_radius - b).abs().max(b.abs()))
            }
        }
    }

    /// The coefficient L ≥ 0 treated implicitly by the solver; V′ − L·x is
    /// the rest.
    pub fn linear_part(&self) -> f64 {
        match *self {
            Potential::Linear { k } if k > 0.0 => k,
            _ => 0.0,
        }
    }

    pub fn name(&self) -> String {
        match *self {
            Potential::Zero => "zero".into(),
            Potential::Linear { k } => format!("linear{{k={k}}}"),
            Potential::ClippedDoubleWell { a, b, clip_radius } => {
                format!("clipped-double-well{{a={a},b={b},clip_radius={clip_radius}}}")
            }
        }
    }

    /// Largest observed |V′(x) − V′(y)|/|x − y| over all probe pairs, and
    /// whether it stays within the declared bound.
    pub fn check_lipschitz(&self, probes: &[f64]) -> (f64, bool) {
        let mut worst = 0.0f64;
        for (i, &x) in probes.iter().enumerate() {
            for &y in &probes[i + 1..] {
                if x != y {
                    worst = worst.max((self.gradient(x) - self.gradient(y)).abs() / (x - y).abs());
                }
            }
        }
        let ok = self.lipschitz_bound().map_or(true, |l| worst <= l * (1.0 + 1e-12));
        (worst, ok)
    }
}

/// Law of x(0). Sampled independently of the driving noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InitialLaw {
    Point { value: f64 },
    Gaussian { mean: f64, std: f64 },
}

// keeps x0 draws off the streams used for the noise
const X0_SEED_SALT: u64 = 0x9E37_79B9_7F4A_7C15;

impl InitialLaw {
    pub fn point(value: f64) -> Self {
        InitialLaw::Point { value }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            InitialLaw::Point { value } if value.is_finite() => Ok(()),
            InitialLaw::Gaussian { mean, std } if mean.is_finite() && std >= 0.0 && std.is_finite() => Ok(()),
            l => Err(FsdeError::domain(format!("invalid initial law {l:?}"))),
        }
    }

    /// Draws x0 for the noise path keyed by `source`.
    pub fn draw(&self, source: Option<RngSpec>) -> Result<f64> {
        match *self {
            InitialLaw::Point { value } => Ok(value),
            InitialLaw::Gaussian { mean, std } => {
                let spec = source.ok_or_else(|| {
                    FsdeError::contract("a random initial value needs a seeded noise path")
                })?;
                let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ X0_SEED_SALT);
                rng.set_stream(spec.stream_id);
                let z: f64 = rng.sample(StandardNormal);
                Ok(mean + std * z)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub alpha: FracOrder,
    pub hurst: HurstParam,
    pub potential: Potential,
    pub x0: InitialLaw,
    pub fdt_flag: bool,
}

impl ModelSpec {
    pub fn new(alpha: FracOrder, hurst: HurstParam, potential: Potential, x0: InitialLaw) -> Result<Self> {
        let alpha = FracOrder::model(alpha.value(), hurst)?;
        if alpha.value() >= 1.0 {
            return Err(FsdeError::domain("the stochastic model needs α < 1"));
        }
        potential.validate()?;
        x0.validate()?;
        let fdt_flag = (alpha.value() - (2.0 - 2.0 * hurst.value())).abs() <= 1e-12;
        Ok(Self { alpha, hurst, potential, x0, fdt_flag })
    }

    fn validate(&self) -> Result<()> {
        let again = Self::new(self.alpha, self.hurst, self.potential, self.x0)?;
        if again.fdt_flag != self.fdt_flag {
            return Err(FsdeError::contract("fdt_flag does not match α and H"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveMethod {
    Volterra,
    Picard,
    LinearExact,
    Embedded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolutionPath {
    pub grid: TimeGrid,
    pub values: Vec<f64>,
    pub model: ModelSpec,
    pub noise: Option<RngSpec>,
    pub method: SolveMethod,
}

impl SolutionPath {
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> std::io::Result<()> {
        write_csv(out, "x", &self.grid, &self.values)
    }

    pub fn terminal(&self) -> f64 {
        *self.values.last().expect("paths are never empty")
    }
}

/// Volterra solver with weights and noise kernels prepared for one grid.
#[derive(Debug, Clone)]
pub struct VolterraSolver {
    model: ModelSpec,
    weights: KernelWeights,
    g: GSampler,
    // L·I^α G as a convolution of order 2α; absent when L = 0
    g2: Option<Convolution>,
    correctors: usize,
}

impl VolterraSolver {
    pub fn new(model: ModelSpec, grid: TimeGrid) -> Result<Self> {
        model.validate()?;
        let a = model.alpha.value();
        let weights = build_weights(&grid, a)?;
        let g = GSampler::new(grid, model.alpha, model.hurst)?;
        let l = model.potential.linear_part();
        let g2 = if l != 0.0 {
            Some(Convolution::new(grid, 2.0 * a, l * c_h(model.alpha, model.hurst)?)?)
        } else {
            None
        };
        Ok(Self { model, weights, g, g2, correctors: 1 })
    }

    /// Number of corrector passes per node (default 1). Each pass shrinks the
    /// residual of the discrete equation by about c·|V″| with c = dt^α/Γ(α+2).
    pub fn with_correctors(mut self, passes: usize) -> Result<Self> {
        if passes == 0 {
            return Err(FsdeError::domain("need at least one corrector pass"));
        }
        self.correctors = passes;
        Ok(self)
    }

    pub fn grid(&self) -> &TimeGrid {
        self.weights.grid()
    }

    pub fn model(&self) -> &ModelSpec {
        &self.model
    }

    pub fn solve(&self, fbm: &FbmPath) -> Result<SolutionPath> {
        let x0 = self.model.x0.draw(fbm.source)?;
        self.solve_from(x0, fbm)
    }

    /// Solve with a given initial value, ignoring the initial law.
    pub fn solve_from(&self, x0: f64, fbm: &FbmPath) -> Result<SolutionPath> {
        let g = self.g.sample(fbm)?;
        let lg2 = match &self.g2 {
            Some(c) => c.apply(&fbm.values),
            None => vec![0.0; g.values.len()],
        };
        let values = self.march(x0, &g.values, &lg2)?;
        Ok(SolutionPath {
            grid: *self.grid(),
            values,
            model: self.model,
            noise: fbm.source,
            method: SolveMethod::Volterra,
        })
    }

    fn march(&self, x0: f64, g: &[f64], lg2: &[f64]) -> Result<Vec<f64>> {
        let pot = self.model.potential;
        let l = pot.linear_part();
        let nonlin = |x: f64| pot.gradient(x) - l * x;
        let rg = rgamma(self.weights.order());
        let c = rg * self.weights.weight(1, 1);
        let denom = 1.0 + c * l;
        let grid = *self.grid();
        let n_nodes = grid.len();

        let mut x = vec![0.0; n_nodes];
        // f_j = L·y_j + N(x_j)
        let mut f = vec![0.0; n_nodes];
        x[0] = x0;
        f[0] = l * x0 + nonlin(x0);
        let mut n_prev = nonlin(x0);
        for n in 1..n_nodes {
            let base = x0 - rg * self.weights.history(n, &f) - lg2[n];
            let mut y = (base - c * n_prev) / denom;
            for _ in 0..self.correctors {
                y = (base - c * nonlin(y + g[n])) / denom;
            }
            let xn = y + g[n];
            if !xn.is_finite() {
                return Err(FsdeError::Divergence { node: n, t: grid.t(n), value: xn });
            }
            n_prev = nonlin(xn);
            x[n] = xn;
            f[n] = l * y + n_prev;
        }
        Ok(x)
    }

    /// x_n minus the right-hand side of the discrete integral equation
    /// evaluated on the path itself.
    pub fn residuals(&self, path: &SolutionPath, fbm: &FbmPath) -> Result<Vec<f64>> {
        self.grid().check_len(path.values.len(), "solution")?;
        let g = self.g.sample(fbm)?;
        let lg2 = match &self.g2 {
            Some(c) => c.apply(&fbm.values),
            None => vec![0.0; g.values.len()],
        };
        let pot = self.model.potential;
        let l = pot.linear_part();
        let f: Vec<f64> = path
            .values
            .iter()
            .zip(&g.values)
            .map(|(&x, &gv)| l * (x - gv) + pot.gradient(x) - l * x)
            .collect();
        let rg = rgamma(self.weights.order());
        let x0 = path.values[0];
        Ok((0..f.len())
            .map(|n| path.values[n] - (x0 - rg * self.weights.apply_row(n, &f) - lg2[n] + g.values[n]))
            .collect())
    }
}

pub fn solve_volterra(model: &ModelSpec, fbm: &FbmPath) -> Result<SolutionPath> {
    if fbm.hurst != model.hurst {
        return Err(FsdeError::contract("fBm Hurst parameter differs from the model"));
    }
    VolterraSolver::new(*model, fbm.grid)?.solve(fbm)
}

/// Picard iterates x^{(m+1)} = x0 − I^α[V′(x^{(m)})] + G started from
/// x^{(0)} = x0 + G. `deltas[m]` is sup_n |x^{(m+1)} − x^{(m)}|.
pub fn solve_picard(model: &ModelSpec, g: &GPath, tol: f64, max_iter: usize) -> Result<(SolutionPath, Vec<f64>)> {
    model.validate()?;
    if g.hurst != model.hurst || (g.alpha - model.alpha.value()).abs() > 1e-15 {
        return Err(FsdeError::contract("G path was built for a different model"));
    }
    if model.potential.lipschitz_bound().is_none() {
        return Err(FsdeError::contract("Picard iteration needs a Lipschitz potential"));
    }
    if !(tol >= 0.0) || max_iter == 0 {
        return Err(FsdeError::domain("need tol >= 0 and max_iter >= 1"));
    }
    let x0 = model.x0.draw(g.source)?;
    let w = build_weights(&g.grid, model.alpha.value())?;
    let mut x: Vec<f64> = g.values.iter().map(|v| x0 + v).collect();
    let mut deltas = Vec::new();
    for _ in 0..max_iter {
        let force: Vec<f64> = x.iter().map(|&v| model.potential.gradient(v)).collect();
        let i = apply_weights(&w, &force);
        let next: Vec<f64> = (0..x.len()).map(|n| x0 - i[n] + g.values[n]).collect();
        if let Some(n) = next.iter().position(|v| !v.is_finite()) {
            return Err(FsdeError::Divergence { node: n, t: g.grid.t(n), value: next[n] });
        }
        let d = x.iter().zip(&next).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        deltas.push(d);
        x = next;
        if d <= tol {
            let path = SolutionPath { grid: g.grid, values: x, model: *model, noise: g.source, method: SolveMethod::Picard };
            return Ok((path, deltas));
        }
    }
    Err(FsdeError::NonConvergence { iterations: max_iter, last_delta: *deltas.last().unwrap(), deltas })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UniquenessProbe {
    pub epsilon: f64,
    /// Two solves from identical inputs agreed bit for bit.
    pub repeatable: bool,
    pub max_divergence: f64,
    /// |x − y|(t_n)/ε.
    pub growth: Vec<f64>,
    /// E_α(L t_n^α), the Grönwall bound on `growth`.
    pub bound: Vec<f64>,
    /// max_n growth/bound.
    pub bound_ratio: f64,
}

/// Solves from x0 and x0 + ε on the same noise and compares the paths.
pub fn uniqueness_probe(model: &ModelSpec, fbm: &FbmPath, epsilon: f64) -> Result<UniquenessProbe> {
    if !epsilon.is_finite() {
        return Err(FsdeError::domain("perturbation must be finite"));
    }
    let solver = VolterraSolver::new(*model, fbm.grid)?;
    let x0 = model.x0.draw(fbm.source)?;
    let a = solver.solve_from(x0, fbm)?;
    let again = solver.solve_from(x0, fbm)?;
    let b = solver.solve_from(x0 + epsilon, fbm)?;
    let repeatable = a.values.iter().zip(&again.values).all(|(p, q)| p.to_bits() == q.to_bits());
    let diff: Vec<f64> = a.values.iter().zip(&b.values).map(|(p, q)| (p - q).abs()).collect();
    let max_divergence = diff.iter().copied().fold(0.0, f64::max);
    let l = model.potential.lipschitz_bound().unwrap_or(0.0);
    let ml = MittagLeffler::new(model.alpha, MlSettings { max_terms: 4000, ..MlSettings::default() })?;
    let bound = fbm
        .grid
        .times()
        .iter()
        .map(|t| ml.eval(l * t.powf(model.alpha.value())))
        .collect::<Result<Vec<_>>>()?;
    let (growth, bound_ratio) = if epsilon == 0.0 {
        (vec![0.0; diff.len()], 0.0)
    } else {
        let g: Vec<f64> = diff.iter().map(|d| d / epsilon.abs()).collect();
        let r = g.iter().zip(&bound).map(|(g, b)| g / b).fold(0.0, f64::max);
        (g, r)
    };
    Ok(UniquenessProbe { epsilon, repeatable, max_divergence, growth, bound, bound_ratio })
}
