//! Solve reports: loss history, final metrics, timing and config snapshot.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// One history row; unused loss columns stay at zero (the rigid baseline
/// only fills `total`).
#[derive(Clone, Copy, Debug)]
pub struct LossRow {
    pub step: u64,
    pub total: f64,
    pub mse: f64,
    pub smooth: f64,
    pub dvf: f64,
}

#[derive(Clone, Debug)]
pub struct SolveReport {
    pub history: Vec<LossRow>,
    pub final_metrics: Vec<(String, f64)>,
    pub wall_clock_secs: f64,
    pub seed: u64,
    pub config: String,
}

impl SolveReport {
    pub fn new(seed: u64, config: impl Into<String>) -> Self {
        Self {
            history: Vec::new(),
            final_metrics: Vec::new(),
            wall_clock_secs: 0.0,
            seed,
            config: config.into(),
        }
    }

    pub fn push(&mut self, row: LossRow) {
        if let Some(last) = self.history.last() {
            debug_assert!(row.step > last.step, "history steps must be monotone");
        }
        self.history.push(row);
    }

    pub fn initial_total(&self) -> f64 {
        self.history.first().map(|r| r.total).unwrap_or(f64::NAN)
    }

    pub fn best_total(&self) -> f64 {
        self.history
            .iter()
            .map(|r| r.total)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn metric(&self, name: &str) -> Option<f64> {
        self.final_metrics
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| *v)
    }

    pub fn csv(&self) -> String {
        let mut out = String::from("step,L_total,L_MSE,L_smooth,L_DVF\n");
        for r in &self.history {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.step, r.total, r.mse, r.smooth, r.dvf
            ));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.csv()).map_err(|e| Error::io(path, e))
    }

    /// Human-readable summary. The wall-clock line makes this file
    /// non-deterministic, which is why manifests never hash it.
    pub fn summary(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("seed = {}\n", self.seed));
        out.push_str(&format!("config = {}\n", self.config));
        out.push_str(&format!("steps = {}\n", self.history.len()));
        out.push_str(&format!("initial_loss = {}\n", self.initial_total()));
        out.push_str(&format!("best_loss = {}\n", self.best_total()));
        for (name, value) in &self.final_metrics {
            out.push_str(&format!("{name} = {value}\n"));
        }
        out.push_str(&format!("wall_clock_secs = {:.3}\n", self.wall_clock_secs));
        out
    }

    pub fn write_summary(&self, path: &Path) -> Result<()> {
        fs::write(path, self.summary()).map_err(|e| Error::io(path, e))
    }
}
