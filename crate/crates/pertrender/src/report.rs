//! CSV and JSON outputs.

use std::fs;
use std::path::Path;

use serde::Serialize;

use pertrender_core::TaskResult;

use crate::config::Config;
use crate::error::{Error, Result};

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let encode = |e: csv::Error| Error::Encode {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let mut w = csv::Writer::from_path(path).map_err(encode)?;
    for row in rows {
        w.serialize(row).map_err(encode)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Encode {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialRow {
    pub magnitude_deg: f64,
    pub trial: usize,
    pub seed: u64,
    pub init_err_deg: f64,
    pub final_err_deg: f64,
    pub iterations: usize,
    pub solved: bool,
    pub failure: String,
}

pub fn trial_rows(result: &TaskResult) -> Vec<TrialRow> {
    result
        .trials
        .iter()
        .enumerate()
        .map(|(i, t)| TrialRow {
            magnitude_deg: result.magnitude_deg,
            trial: i,
            seed: t.seed,
            init_err_deg: t.init_err_deg,
            final_err_deg: t.final_err_deg,
            iterations: t.iterations,
            solved: t.solved,
            failure: t.failure.as_ref().map(|e| e.to_string()).unwrap_or_default(),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryRow {
    pub magnitude_deg: f64,
    pub trial: usize,
    pub iteration: usize,
    pub loss: f64,
    pub sigma: f64,
    pub gamma: f64,
}

pub fn trajectory_rows(result: &TaskResult) -> Vec<TrajectoryRow> {
    let mut rows = Vec::new();
    for (i, t) in result.trials.iter().enumerate() {
        for (k, ((loss, sigma), gamma)) in t.losses.iter().zip(&t.sigmas).zip(&t.gammas).enumerate() {
            rows.push(TrajectoryRow {
                magnitude_deg: result.magnitude_deg,
                trial: i,
                iteration: k,
                loss: *loss,
                sigma: *sigma,
                gamma: *gamma,
            });
        }
    }
    rows
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub magnitude_deg: f64,
    pub threshold_deg: f64,
    pub solved_fraction: f64,
}

pub fn sweep_rows(result: &TaskResult, thresholds: &[f64]) -> Vec<SweepRow> {
    thresholds
        .iter()
        .map(|&t| SweepRow {
            magnitude_deg: result.magnitude_deg,
            threshold_deg: t,
            solved_fraction: result.solved_fraction_at(t),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaskSummary {
    pub magnitude_deg: f64,
    pub threshold_deg: f64,
    pub trials: usize,
    pub failures: usize,
    pub solved_fraction: f64,
    pub solved_pct: f64,
    pub mean_final_err_deg: f64,
    pub std_final_err_deg: f64,
}

impl TaskSummary {
    pub fn new(result: &TaskResult) -> Self {
        let solved = result.solved_fraction();
        Self {
            magnitude_deg: result.magnitude_deg,
            threshold_deg: result.threshold_deg,
            trials: result.trials.len(),
            failures: result.trials.iter().filter(|t| t.failure.is_some()).count(),
            solved_fraction: solved,
            solved_pct: 100.0 * solved,
            mean_final_err_deg: result.mean_final_error(),
            std_final_err_deg: result.std_final_error(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PoseSummary<'a> {
    pub config: &'a Config,
    pub results: Vec<TaskSummary>,
}
