//! Runner: executes a plan on the in-process kernel and writes its artifacts.

use std::io;

use topopt_core::optimizer::{run_optimization, OptimizationResult};
use topopt_core::plan::RunPlan;

use crate::memory::RunArtifacts;
use crate::render::{convergence_image, density_image};
use crate::workspace::Workspace;

const DENSITY_WIDTH_PX: u32 = 480;
const PLOT_SIZE: (u32, u32) = (640, 360);

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub artifacts: RunArtifacts,
    pub result: OptimizationResult,
}

/// Runs `plan` as run number `run` (1-based). Kernel failures are captured
/// in the artifacts; only workspace I/O errors are returned.
pub fn runner_execute(plan: &RunPlan, plan_index: usize, run: usize, ws: &Workspace) -> io::Result<RunOutput> {
    let result = run_optimization(plan);
    let density = Workspace::density_name(run);
    let convergence = Workspace::convergence_name(run);
    let history = Workspace::history_name(run);
    let log = Workspace::log_name(run);

    let px = (DENSITY_WIDTH_PX / result.nx.max(1) as u32).max(1);
    let img = density_image(&result.rho_bar, &result.active, result.nx, result.ny, px);
    img.save_with_format(ws.path(&density), image::ImageFormat::Png).map_err(io::Error::other)?;
    let plot = convergence_image(&result.history, PLOT_SIZE.0, PLOT_SIZE.1);
    plot.save_with_format(ws.path(&convergence), image::ImageFormat::Png).map_err(io::Error::other)?;
    ws.write(&history, result.history.to_csv())?;
    let mut log_text = result.log.join("\n");
    log_text.push('\n');
    if let Some(e) = &result.error {
        log_text.push_str(&format!("error: {e}\n"));
    }
    ws.write(&log, log_text)?;

    let artifacts = RunArtifacts {
        run,
        plan: plan_index,
        termination: result.history.termination,
        iterations: result.history.records.len(),
        final_objective: result.history.records.last().map(|r| r.objective),
        final_volume: result.final_volume(),
        error: result.error.clone(),
        density_image: density,
        convergence_plot: convergence,
        history,
        log,
    };
    Ok(RunOutput { artifacts, result })
}
