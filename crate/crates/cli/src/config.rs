//! Run configuration: one JSON file per run, validated at parse time.

use std::path::PathBuf;

use fsde_core::harness::Method;
use fsde_core::mlf::FracOrder;
use fsde_core::solver::InitialLaw;
use fsde_core::{HurstParam, ModelSpec, Potential, TimeGrid};
use serde::{Deserialize, Serialize};
use serde_json::Value;

pub const SCHEMA_VERSION: u32 = 1;

/// A parse or validation failure located by a JSON pointer.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("config error at {pointer}: {message}")]
pub struct ConfigError {
    pub pointer: String,
    pub message: String,
}

impl ConfigError {
    fn at(pointer: &str, message: impl Into<String>) -> Self {
        Self { pointer: pointer.into(), message: message.into() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    schema_version: u32,
    model: RawModel,
    grid: RawGrid,
    ensemble: RawEnsemble,
    method: Method,
    outputs: Outputs,
    #[serde(default)]
    embedding: Option<EmbeddingConfig>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModel {
    alpha: Value,
    hurst: f64,
    potential: PotentialConfig,
    x0: Value,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "kebab-case", deny_unknown_fields)]
enum PotentialConfig {
    Zero,
    Linear(LinearParams),
    ClippedDoubleWell(WellParams),
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LinearParams {
    k: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WellParams {
    a: f64,
    b: f64,
    clip_radius: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGrid {
    dt: f64,
    n_steps: usize,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEnsemble {
    n_paths: usize,
    seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Outputs {
    pub dir: PathBuf,
    pub prefix: String,
}

/// Optional settings for `embed simulate`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingConfig {
    /// Fit range; defaults to [dt, T].
    #[serde(default)]
    pub t_min: Option<f64>,
    #[serde(default)]
    pub t_max: Option<f64>,
    #[serde(default = "default_modes")]
    pub modes: usize,
    /// Run the massive GLE with this mass instead of the overdamped system.
    #[serde(default)]
    pub mass: Option<f64>,
}

fn default_modes() -> usize {
    40
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelSpec,
    pub grid: TimeGrid,
    pub n_paths: usize,
    pub seed: u64,
    pub method: Method,
    pub outputs: Outputs,
    pub embedding: Option<EmbeddingConfig>,
}

fn pointer_of(path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    let mut out = String::new();
    for seg in path.iter() {
        match seg {
            Segment::Seq { index } => out.push_str(&format!("/{index}")),
            Segment::Map { key } => out.push_str(&format!("/{}", key.replace('~', "~0").replace('/', "~1"))),
            Segment::Enum { variant } => out.push_str(&format!("/{variant}")),
            Segment::Unknown => {}
        }
    }
    if out.is_empty() {
        "/".into()
    } else {
        out
    }
}

fn check(ok: bool, pointer: &str, message: impl Into<String>) -> Result<(), ConfigError> {
    if ok {
        Ok(())
    } else {
        Err(ConfigError::at(pointer, message))
    }
}

pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let raw: RawConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let pointer = pointer_of(e.path());
        ConfigError { pointer, message: e.into_inner().to_string() }
    })?;

    check(
        raw.schema_version == SCHEMA_VERSION,
        "/schema_version",
        format!("unsupported schema version {}, expected {SCHEMA_VERSION}", raw.schema_version),
    )?;

    let hurst = HurstParam::model(raw.model.hurst).map_err(|e| ConfigError::at("/model/hurst", e.to_string()))?;
    let alpha = match &raw.model.alpha {
        Value::String(s) if s == "fdt" => FracOrder::fdt(hurst).map_err(|e| ConfigError::at("/model/alpha", e.to_string()))?,
        Value::Number(n) => {
            let a = n.as_f64().ok_or_else(|| ConfigError::at("/model/alpha", "alpha must be a number"))?;
            FracOrder::model(a, hurst).map_err(|e| ConfigError::at("/model/alpha", e.to_string()))?
        }
        other => return Err(ConfigError::at("/model/alpha", format!("expected a number or \"fdt\", got {other}"))),
    };
    check(alpha.value() < 1.0, "/model/alpha", "the stochastic model needs alpha < 1")?;

    let potential = match raw.model.potential {
        PotentialConfig::Zero => Potential::Zero,
        PotentialConfig::Linear(p) => Potential::Linear { k: p.k },
        PotentialConfig::ClippedDoubleWell(p) => Potential::ClippedDoubleWell { a: p.a, b: p.b, clip_radius: p.clip_radius },
    };
    potential.validate().map_err(|e| ConfigError::at("/model/potential/params", e.to_string()))?;

    let x0 = match &raw.model.x0 {
        Value::Number(n) => InitialLaw::point(n.as_f64().unwrap_or(f64::NAN)),
        Value::Object(m) => {
            let num = |k: &str| {
                m.get(k)
                    .and_then(Value::as_f64)
                    .ok_or_else(|| ConfigError::at(&format!("/model/x0/{k}"), "expected a number"))
            };
            if let Some(extra) = m.keys().find(|k| *k != "mean" && *k != "std") {
                return Err(ConfigError::at(&format!("/model/x0/{extra}"), "unknown field"));
            }
            InitialLaw::Gaussian { mean: num("mean")?, std: num("std")? }
        }
        other => return Err(ConfigError::at("/model/x0", format!("expected a number or {{mean, std}}, got {other}"))),
    };
    x0.validate().map_err(|e| ConfigError::at("/model/x0", e.to_string()))?;

    let model = ModelSpec::new(alpha, hurst, potential, x0).map_err(|e| ConfigError::at("/model", e.to_string()))?;

    check(raw.grid.dt > 0.0 && raw.grid.dt.is_finite(), "/grid/dt", "dt must be positive and finite")?;
    check(raw.grid.n_steps >= 1, "/grid/n_steps", "n_steps must be at least 1")?;
    let grid = TimeGrid::new(raw.grid.dt, raw.grid.n_steps).map_err(|e| ConfigError::at("/grid", e.to_string()))?;
    check(raw.ensemble.n_paths >= 2, "/ensemble/n_paths", "n_paths must be at least 2")?;

    check(!raw.outputs.prefix.is_empty(), "/outputs/prefix", "prefix must not be empty")?;
    check(
        raw.outputs.prefix.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c)),
        "/outputs/prefix",
        "prefix may contain only ASCII letters, digits, '-', '_' and '.'",
    )?;

    if let Some(e) = &raw.embedding {
        check(e.modes >= 2, "/embedding/modes", "need at least two modes")?;
        if let Some(t) = e.t_min {
            check(t > 0.0 && t.is_finite(), "/embedding/t_min", "t_min must be positive")?;
        }
        if let Some(t) = e.t_max {
            check(t > e.t_min.unwrap_or(raw.grid.dt) && t.is_finite(), "/embedding/t_max", "t_max must exceed t_min")?;
        }
        if let Some(m) = e.mass {
            check(m > 0.0 && m.is_finite(), "/embedding/mass", "mass must be positive")?;
        }
    }

    Ok(RunConfig {
        model,
        grid,
        n_paths: raw.ensemble.n_paths,
        seed: raw.ensemble.seed,
        method: raw.method,
        outputs: raw.outputs,
        embedding: raw.embedding,
    })
}
