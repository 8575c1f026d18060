use serde::{Deserialize, Serialize};

use crate::error::{FsdeError, Result};

/// Uniform grid t_j = j·dt, j = 0..=n_steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    dt: f64,
    n_steps: usize,
}

impl TimeGrid {
    pub fn new(dt: f64, n_steps: usize) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(FsdeError::domain(format!("grid step must be positive, got {dt}")));
        }
        if n_steps == 0 {
            return Err(FsdeError::domain("grid needs at least one step"));
        }
        Ok(Self { dt, n_steps })
    }

    /// Grid with `n_steps` cells covering [0, t_end].
    pub fn over(t_end: f64, n_steps: usize) -> Result<Self> {
        if n_steps == 0 {
            return Err(FsdeError::domain("grid needs at least one step"));
        }
        Self::new(t_end / n_steps as f64, n_steps)
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn len(&self) -> usize {
        self.n_steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn t(&self, j: usize) -> f64 {
        j as f64 * self.dt
    }

    pub fn t_end(&self) -> f64 {
        self.t(self.n_steps)
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.n_steps).map(|j| self.t(j)).collect()
    }

    pub(crate) fn check_len(&self, len: usize, what: &str) -> Result<()> {
        if len != self.len() {
            return Err(FsdeError::contract(format!(
                "{what} has {len} samples, grid has {} nodes",
                self.len()
            )));
        }
        Ok(())
    }
}

/// Writes a two-column CSV with full round-trip precision.
pub fn write_csv<W: std::io::Write>(
    mut out: W,
    header: &str,
    grid: &TimeGrid,
    values: &[f64],
) -> std::io::Result<()> {
    writeln!(out, "t,{header}")?;
    for (j, v) in values.iter().enumerate() {
        writeln!(out, "{:?},{:?}", grid.t(j), v)?;
    }
    Ok(())
}
