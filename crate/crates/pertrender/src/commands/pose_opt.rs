use pertrender_core::optim::run_pose_task;
use pertrender_core::TaskResult;

use crate::commands::ensure_dir;
use crate::config::Config;
use crate::error::Result;
use crate::report::{
    sweep_rows, trajectory_rows, trial_rows, write_csv, write_json, PoseSummary, TaskSummary,
};

/// One pose task per configured perturbation magnitude.
///
/// Writes `trials.csv` (one row per trial), `trajectories.csv` (loss and
/// smoothing per iteration), `summary.json` and, when sweep thresholds are
/// configured, `sweep.csv`.
pub fn run(config: &Config) -> Result<Vec<TaskResult>> {
    let out = &config.out;
    ensure_dir(out)?;
    let scene = config.scene()?;
    let mut results = Vec::new();
    for &magnitude in &config.task.perturbations_deg {
        results.push(run_pose_task(&scene, &config.pose_task(magnitude))?);
    }
    let trials: Vec<_> = results.iter().flat_map(trial_rows).collect();
    write_csv(&out.join("trials.csv"), &trials)?;
    let trajectories: Vec<_> = results.iter().flat_map(trajectory_rows).collect();
    write_csv(&out.join("trajectories.csv"), &trajectories)?;
    if !config.task.sweep_thresholds_deg.is_empty() {
        let sweep: Vec<_> = results
            .iter()
            .flat_map(|r| sweep_rows(r, &config.task.sweep_thresholds_deg))
            .collect();
        write_csv(&out.join("sweep.csv"), &sweep)?;
    }
    let summary = PoseSummary {
        config,
        results: results.iter().map(TaskSummary::new).collect(),
    };
    write_json(&out.join("summary.json"), &summary)?;
    Ok(results)
}
