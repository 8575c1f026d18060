use thiserror::Error;

/// Every failure the library reports.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum FsdeError {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    /// A requested tolerance could not be met.
    #[error("accuracy error in {what}: achieved {achieved:e}, target {target:e}")]
    Accuracy {
        what: String,
        achieved: f64,
        target: f64,
    },

    #[error("divergence at node {node} (t = {t}): state {value}")]
    Divergence { node: usize, t: f64, value: f64 },

    #[error("no convergence after {iterations} iterations (last delta {last_delta:e})")]
    NonConvergence {
        iterations: usize,
        last_delta: f64,
        deltas: Vec<f64>,
    },

    #[error("kernel fit error {fit_error:e} exceeds limit with {modes} modes; increase the mode count")]
    FitFailure { fit_error: f64, modes: usize },

    #[error("unstable step dt = {dt}: use dt <= {dt_max}")]
    Stability { dt: f64, dt_max: f64 },

    #[error("root finding failed at step {step}: {state}")]
    StepFailure { step: usize, state: String },

    #[error("{} ensemble paths failed (first: {first})", failed_streams.len())]
    Ensemble {
        failed_streams: Vec<u64>,
        first: Box<FsdeError>,
    },
}

impl FsdeError {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        FsdeError::Domain(msg.into())
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        FsdeError::Contract(msg.into())
    }

    /// True for errors caused by a numerical tolerance rather than bad input.
    pub fn is_accuracy(&self) -> bool {
        matches!(
            self,
            FsdeError::Accuracy { .. }
                | FsdeError::Numerical(_)
                | FsdeError::NonConvergence { .. }
                | FsdeError::FitFailure { .. }
                | FsdeError::Divergence { .. }
                | FsdeError::Stability { .. }
                | FsdeError::StepFailure { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, FsdeError>;
