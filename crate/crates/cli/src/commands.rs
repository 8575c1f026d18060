use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use fsde_core::fbm::FbmSampler;
use fsde_core::harness::{
    covariance_test, gibbs_test, msd_exponent, run_ensemble_with, run_gle_ensemble, ClaimReport, EnsembleOptions,
    Method,
};
use fsde_core::linear_oracle::{LinearModel, StationaryLaw};
use fsde_core::markov_embedding::fit_modes;
use fsde_core::mlf::{mittag_leffler, FracOrder};
use fsde_core::solver::InitialLaw;
use fsde_core::{Potential, RngSpec};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::{parse_config, RunConfig, SCHEMA_VERSION};
use crate::{exit, CliError};

#[derive(Debug, Parser)]
#[command(name = "fsde-lab", version, about = "Fractional SDE experiments: sampling, solving and verification")]
pub struct Cli {
    /// Run configuration (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Cap on worker threads; results do not depend on it.
    #[arg(long, global = true, env = "FSDE_LAB_WORKERS")]
    pub workers: Option<usize>,
    /// Output directory, overriding outputs.dir.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Replace the configured ensemble seed.
    #[arg(long, global = true)]
    pub seed_override: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// fBm sample paths.
    Fbm {
        #[command(subcommand)]
        action: FbmAction,
    },
    /// Mittag-Leffler values.
    Ml {
        #[command(subcommand)]
        action: MlAction,
    },
    /// Ensemble run with mean and variance curves.
    Simulate,
    /// Statistical verification against theory.
    Verify {
        #[command(subcommand)]
        claim: VerifyClaim,
    },
    /// Markovian embedding of the memory kernel.
    Embed {
        #[command(subcommand)]
        action: EmbedAction,
    },
    /// Spectral density of the stationary linear solution.
    Spectrum(SpectrumArgs),
}

#[derive(Debug, Subcommand)]
pub enum FbmAction {
    Gen,
}

#[derive(Debug, Subcommand)]
pub enum MlAction {
    Eval(MlArgs),
}

#[derive(Debug, Args)]
pub struct MlArgs {
    #[arg(long)]
    pub alpha: f64,
    #[arg(long, allow_hyphen_values = true)]
    pub z_min: f64,
    #[arg(long, allow_hyphen_values = true)]
    pub z_max: f64,
    #[arg(long, default_value_t = 101)]
    pub points: usize,
}

#[derive(Debug, Clone, Copy, Subcommand)]
pub enum VerifyClaim {
    Linear,
    Subdiff,
    Gibbs,
    Covariance,
}

#[derive(Debug, Subcommand)]
pub enum EmbedAction {
    KernelFit(KernelFitArgs),
    Simulate,
}

#[derive(Debug, Args)]
pub struct KernelFitArgs {
    #[arg(long)]
    pub alpha: f64,
    #[arg(long)]
    pub t_min: f64,
    #[arg(long)]
    pub t_max: f64,
    #[arg(long, default_value_t = 40)]
    pub modes: usize,
}

#[derive(Debug, Args)]
pub struct SpectrumArgs {
    #[arg(long, default_value_t = 1e-2)]
    pub omega_min: f64,
    #[arg(long, default_value_t = 1e2)]
    pub omega_max: f64,
    #[arg(long, default_value_t = 200)]
    pub points: usize,
}

/// Envelope of every JSON summary the tool writes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Summary {
    pub schema_version: u32,
    pub command: String,
    pub pass: bool,
    pub claims: Vec<ClaimReport>,
    pub details: Value,
}

/// Runs one invocation and returns the exit code.
pub fn run(cli: Cli) -> Result<i32, CliError> {
    match &cli.command {
        Command::Ml { action: MlAction::Eval(a) } => ml_eval(&cli, a),
        Command::Embed { action: EmbedAction::KernelFit(a) } => kernel_fit(&cli, a),
        Command::Fbm { action: FbmAction::Gen } => fbm_gen(&cli, &load(&cli)?),
        Command::Simulate => simulate(&cli, &load(&cli)?),
        Command::Verify { claim } => verify(&cli, &load(&cli)?, *claim),
        Command::Embed { action: EmbedAction::Simulate } => embed_simulate(&cli, &load(&cli)?),
        Command::Spectrum(a) => spectrum(&cli, &load(&cli)?, a),
    }
}

fn load(cli: &Cli) -> Result<RunConfig, CliError> {
    let path = cli.config.as_ref().ok_or_else(|| CliError::Usage("this command needs --config PATH".into()))?;
    let text = fs::read_to_string(path).map_err(|source| CliError::Io { path: path.display().to_string(), source })?;
    let mut cfg = parse_config(&text)?;
    if let Some(s) = cli.seed_override {
        cfg.seed = s;
    }
    log::info!("loaded {} ({} paths, seed {})", path.display(), cfg.n_paths, cfg.seed);
    Ok(cfg)
}

fn out_dir(cli: &Cli, cfg: Option<&RunConfig>) -> Result<Option<PathBuf>, CliError> {
    let dir = cli.out.clone().or_else(|| cfg.map(|c| c.outputs.dir.clone()));
    if let Some(d) = &dir {
        fs::create_dir_all(d).map_err(|source| CliError::Io { path: d.display().to_string(), source })?;
    }
    Ok(dir)
}

fn prefix(cfg: Option<&RunConfig>, default: &str) -> String {
    cfg.map_or_else(|| default.to_string(), |c| c.outputs.prefix.clone())
}

fn create(path: &Path) -> Result<std::io::BufWriter<fs::File>, CliError> {
    fs::File::create(path)
        .map(std::io::BufWriter::new)
        .map_err(|source| CliError::Io { path: path.display().to_string(), source })
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.display().to_string(), source }
}

/// Writes CSV text to `dir/name`, or to stdout without a directory.
fn emit_csv<F>(dir: &Option<PathBuf>, name: &str, write: F) -> Result<(), CliError>
where
    F: FnOnce(&mut dyn Write) -> std::io::Result<()>,
{
    match dir {
        Some(d) => {
            let path = d.join(name);
            let mut f = create(&path)?;
            write(&mut f).map_err(io_err(&path))?;
            f.flush().map_err(io_err(&path))
        }
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            write(&mut lock).map_err(io_err(Path::new("<stdout>")))
        }
    }
}

fn emit_summary(dir: &Option<PathBuf>, name: &str, summary: &Summary) -> Result<i32, CliError> {
    let text = serde_json::to_string_pretty(summary).expect("summaries always serialize");
    if let Some(d) = dir {
        let path = d.join(name);
        fs::write(&path, &text).map_err(io_err(&path))?;
    }
    println!("{text}");
    Ok(if summary.pass { exit::PASS } else { exit::STATISTICAL_FAILURE })
}

fn summary(command: &str, claims: Vec<ClaimReport>, details: Value) -> Summary {
    Summary { schema_version: SCHEMA_VERSION, command: command.into(), pass: claims.iter().all(|c| c.pass), claims, details }
}

fn ml_eval(cli: &Cli, a: &MlArgs) -> Result<i32, CliError> {
    if a.points < 2 || !(a.z_min < a.z_max) {
        return Err(CliError::Usage("need --points >= 2 and --z-min < --z-max".into()));
    }
    let alpha = FracOrder::new(a.alpha)?;
    let mut rows = Vec::with_capacity(a.points);
    for i in 0..a.points {
        let z = a.z_min + (a.z_max - a.z_min) * i as f64 / (a.points - 1) as f64;
        rows.push((z, mittag_leffler(alpha, z)?));
    }
    let dir = out_dir(cli, None)?;
    emit_csv(&dir, "mittag_leffler.csv", |w| {
        writeln!(w, "# fsde-lab ml eval v{SCHEMA_VERSION}, alpha = {:?}", a.alpha)?;
        writeln!(w, "z,value")?;
        for (z, v) in &rows {
            writeln!(w, "{z:?},{v:?}")?;
        }
        Ok(())
    })?;
    Ok(exit::PASS)
}

fn kernel_fit(cli: &Cli, a: &KernelFitArgs) -> Result<i32, CliError> {
    let set = fit_modes(a.alpha, a.t_min, a.t_max, a.modes)?;
    let text = set.to_json();
    match out_dir(cli, None)? {
        Some(d) => {
            let path = d.join("modes.json");
            fs::write(&path, &text).map_err(io_err(&path))?;
        }
        None => println!("{text}"),
    }
    Ok(exit::PASS)
}

fn fbm_gen(cli: &Cli, cfg: &RunConfig) -> Result<i32, CliError> {
    let sampler = FbmSampler::fast(cfg.grid, cfg.model.hurst)?;
    let paths: Vec<Vec<f64>> = (0..cfg.n_paths).map(|i| sampler.sample(RngSpec::path(cfg.seed, i)).values).collect();
    let dir = out_dir(cli, Some(cfg))?;
    emit_csv(&dir, &format!("{}_fbm.csv", prefix(Some(cfg), "fbm")), |w| {
        writeln!(w, "# fsde-lab fbm gen v{SCHEMA_VERSION}, H = {:?}, seed = {}", cfg.model.hurst.value(), cfg.seed)?;
        write!(w, "t")?;
        for i in 0..paths.len() {
            write!(w, ",path_{i}")?;
        }
        writeln!(w)?;
        for j in 0..cfg.grid.len() {
            write!(w, "{:?}", cfg.grid.t(j))?;
            for p in &paths {
                write!(w, ",{:?}", p[j])?;
            }
            writeln!(w)?;
        }
        Ok(())
    })?;
    Ok(exit::PASS)
}

fn options(cli: &Cli) -> EnsembleOptions {
    EnsembleOptions { workers: cli.workers, ..EnsembleOptions::default() }
}

fn simulate(cli: &Cli, cfg: &RunConfig) -> Result<i32, CliError> {
    let res = run_ensemble_with(&cfg.model, cfg.method, cfg.n_paths, cfg.grid, cfg.seed, &options(cli))?;
    let dir = out_dir(cli, Some(cfg))?;
    let p = prefix(Some(cfg), "run");
    emit_csv(&dir, &format!("{p}_ensemble.csv"), |w| res.write_csv(w))?;
    emit_csv(&dir, &format!("{p}_terminal.csv"), |w| {
        writeln!(w, "path,x")?;
        for (i, x) in res.terminal.iter().enumerate() {
            writeln!(w, "{i},{x:?}")?;
        }
        Ok(())
    })?;
    let details = json!({
        "method": res.method,
        "n_paths": res.n_paths,
        "seed": res.seed,
        "t_end": res.grid.t_end(),
        "terminal_mean": res.mean.last(),
        "terminal_variance": res.variance.last(),
        "lag_covariances": res.lag_covariances,
    });
    emit_summary(&dir, &format!("{p}_summary.json"), &summary("simulate", vec![], details))
}

fn linear_model(cfg: &RunConfig) -> Result<LinearModel, CliError> {
    let Potential::Linear { k } = cfg.model.potential else {
        return Err(CliError::Usage(format!("this check needs a linear potential, got {}", cfg.model.potential.name())));
    };
    let x0 = match cfg.model.x0 {
        InitialLaw::Point { value } => value,
        InitialLaw::Gaussian { mean, .. } => mean,
    };
    Ok(LinearModel::new(k, cfg.model.alpha, cfg.model.hurst, x0)?)
}

fn verify(cli: &Cli, cfg: &RunConfig, claim: VerifyClaim) -> Result<i32, CliError> {
    let dir = out_dir(cli, Some(cfg))?;
    let p = prefix(Some(cfg), "verify");
    // reject unsuitable configs before spending time on the ensemble
    match claim {
        VerifyClaim::Linear | VerifyClaim::Covariance => {
            linear_model(cfg)?;
        }
        VerifyClaim::Subdiff if cfg.model.potential != Potential::Zero => {
            return Err(CliError::Usage("verify subdiff needs the zero potential".into()));
        }
        _ => {}
    }
    let res = run_ensemble_with(&cfg.model, cfg.method, cfg.n_paths, cfg.grid, cfg.seed, &options(cli))?;
    emit_csv(&dir, &format!("{p}_ensemble.csv"), |w| res.write_csv(w))?;
    let (name, claims, details) = match claim {
        VerifyClaim::Subdiff => {
            let (a, h) = (cfg.model.alpha.value(), cfg.model.hurst.value());
            let expected = 2.0 * h + 2.0 * a - 2.0;
            let fit = msd_exponent(&res, (10.0 * cfg.grid.dt(), cfg.grid.t_end()))?;
            let c = ClaimReport::within("variance exponent 2H + 2α − 2", expected, fit.slope, 0.05);
            ("verify subdiff", vec![c], json!({ "fit": fit, "measured_exponent": fit.slope }))
        }
        VerifyClaim::Gibbs => {
            let g = gibbs_test(&res, &cfg.model.potential, 1.0)?;
            let c = ClaimReport { claim: "KS p-value against exp(−V)".into(), expected: 0.01, measured: g.test.p_value, band: 0.0, pass: g.test.p_value > 0.01 };
            ("verify gibbs", vec![c], json!({ "gibbs": g }))
        }
        VerifyClaim::Covariance => {
            let m = linear_model(cfg)?;
            let r = covariance_test(&res, &m)?;
            let claims = r.rows.iter().map(|row| ClaimReport {
                claim: format!("stationary covariance at lag {}", row.lag),
                expected: row.expected,
                measured: row.measured,
                band: 4.0 * row.se,
                pass: row.pass,
            });
            let mut claims: Vec<ClaimReport> = claims.collect();
            claims.push(ClaimReport { claim: "covariance nonincreasing in the lag".into(), expected: 1.0, measured: f64::from(u8::from(r.monotone)), band: 0.0, pass: r.monotone });
            ("verify covariance", claims, json!({ "covariance": r }))
        }
        VerifyClaim::Linear => {
            let m = linear_model(cfg)?;
            let cov = covariance_test(&res, &m)?;
            let g = gibbs_test(&res, &cfg.model.potential, 1.0)?;
            let law = StationaryLaw::new(m)?;
            let mut claims = vec![ClaimReport {
                claim: "terminal law is Gaussian (KS p-value)".into(),
                expected: 0.01,
                measured: g.gaussian_fit.p_value,
                band: 0.0,
                pass: g.gaussian_fit.p_value > 0.01,
            }];
            claims.push(ClaimReport::within(
                "terminal variance equals the stationary variance",
                law.variance,
                g.sample_variance,
                4.0 * g.sample_variance_se,
            ));
            for row in &cov.rows {
                claims.push(ClaimReport {
                    claim: format!("stationary covariance at lag {}", row.lag),
                    expected: row.expected,
                    measured: row.measured,
                    band: 4.0 * row.se,
                    pass: row.pass,
                });
            }
            if m.is_fdt() {
                claims.push(ClaimReport {
                    claim: "KS p-value against the Gibbs law N(0, 1/k)".into(),
                    expected: 0.01,
                    measured: g.test.p_value,
                    band: 0.0,
                    pass: g.test.p_value > 0.01,
                });
            }
            let details = json!({
                "fdt": m.is_fdt(),
                "stationary_variance": law.variance,
                "gibbs_variance": 1.0 / m.k,
                "gibbs_variance_mismatch": g.variance_mismatch,
                "covariance": cov,
                "gibbs": g,
            });
            ("verify linear", claims, details)
        }
    };
    let file = format!("{p}_{}.json", name.replace(' ', "_"));
    emit_summary(&dir, &file, &summary(name, claims, details))
}

fn embed_simulate(cli: &Cli, cfg: &RunConfig) -> Result<i32, CliError> {
    let e = cfg.embedding.unwrap_or(crate::config::EmbeddingConfig { t_min: None, t_max: None, modes: 40, mass: None });
    let t_min = e.t_min.unwrap_or(cfg.grid.dt());
    let t_max = e.t_max.unwrap_or(cfg.grid.t_end().max(2.0 * t_min));
    let modes = fit_modes(cfg.model.alpha.value(), t_min, t_max, e.modes)?;
    let dir = out_dir(cli, Some(cfg))?;
    let p = prefix(Some(cfg), "embed");
    if let Some(d) = &dir {
        let path = d.join(format!("{p}_modes.json"));
        fs::write(&path, modes.to_json()).map_err(io_err(&path))?;
    }
    if let Some(mass) = e.mass {
        let x0 = match cfg.model.x0 {
            InitialLaw::Point { value } => value,
            InitialLaw::Gaussian { mean, .. } => mean,
        };
        let res = run_gle_ensemble(mass, &cfg.model.potential, &modes, cfg.grid, cfg.n_paths, cfg.seed, (x0, 0.0), cli.workers)?;
        emit_csv(&dir, &format!("{p}_gle_terminal.csv"), |w| {
            writeln!(w, "path,q,v")?;
            for i in 0..res.n_paths {
                writeln!(w, "{i},{:?},{:?}", res.terminal_q[i], res.terminal_v[i])?;
            }
            Ok(())
        })?;
        let mut claims = vec![ClaimReport::within("m·var(v) = 1", 1.0, mass * res.var_v, 0.05)];
        if let Potential::Linear { k } = cfg.model.potential {
            claims.push(ClaimReport::within("k·var(q) = 1", 1.0, k * res.var_q, 0.05));
        }
        let details = json!({
            "mass": mass, "var_q": res.var_q, "var_q_se": res.var_q_se,
            "var_v": res.var_v, "var_v_se": res.var_v_se, "fit_error": modes.fit_error,
        });
        return emit_summary(&dir, &format!("{p}_gle_summary.json"), &summary("embed simulate", claims, details));
    }
    let opts = EnsembleOptions { workers: cli.workers, modes: Some(modes.clone()), ..EnsembleOptions::default() };
    let res = run_ensemble_with(&cfg.model, Method::Embedded, cfg.n_paths, cfg.grid, cfg.seed, &opts)?;
    emit_csv(&dir, &format!("{p}_embedded_ensemble.csv"), |w| res.write_csv(w))?;
    let g = gibbs_test(&res, &cfg.model.potential, 1.0);
    let claims = match &g {
        Ok(g) => vec![ClaimReport {
            claim: "embedded terminal law vs exp(−V) (KS p-value)".into(),
            expected: 0.01,
            measured: g.test.p_value,
            band: 0.0,
            pass: g.test.p_value > 0.01,
        }],
        Err(_) => vec![],
    };
    let details = json!({
        "fit_error": modes.fit_error,
        "modes": modes.len(),
        "terminal_variance": res.variance.last(),
        "gibbs": g.ok(),
    });
    emit_summary(&dir, &format!("{p}_embedded_summary.json"), &summary("embed simulate", claims, details))
}

fn spectrum(cli: &Cli, cfg: &RunConfig, a: &SpectrumArgs) -> Result<i32, CliError> {
    if a.points < 2 || !(a.omega_min > 0.0 && a.omega_min < a.omega_max) {
        return Err(CliError::Usage("need --points >= 2 and 0 < --omega-min < --omega-max".into()));
    }
    let m = linear_model(cfg)?;
    let (lo, hi) = (a.omega_min.ln(), a.omega_max.ln());
    let mut rows = Vec::with_capacity(a.points);
    for i in 0..a.points {
        let w = (lo + (hi - lo) * i as f64 / (a.points - 1) as f64).exp();
        rows.push((w, fsde_core::linear_oracle::spectral_density(w, &m)?));
    }
    let dir = out_dir(cli, Some(cfg))?;
    emit_csv(&dir, &format!("{}_spectrum.csv", prefix(Some(cfg), "spectrum")), |w| {
        writeln!(w, "# fsde-lab spectrum v{SCHEMA_VERSION}")?;
        writeln!(w, "omega,density")?;
        for (o, s) in &rows {
            writeln!(w, "{o:?},{s:?}")?;
        }
        Ok(())
    })?;
    Ok(exit::PASS)
}
