//! Subcommand implementations.

use crate::audit;
use ksm_core::config::{self, RunConfig};
use ksm_core::diagnostics::{self, Trajectory};
use ksm_core::error::{KsmError, Result};
use ksm_core::{experiments, series, stepper};
use std::fs;
use std::path::{Path, PathBuf};

fn load_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path)
        .map_err(|e| KsmError::Config(format!("{}: {e}", path.display())))?;
    config::parse_config(&text)
}

fn resolve_out(cfg: &RunConfig, out: Option<&Path>) -> Result<PathBuf> {
    if let Some(dir) = out {
        return Ok(dir.to_path_buf());
    }
    if let Some(dir) = &cfg.output.dir {
        return Ok(PathBuf::from(dir));
    }
    Err(KsmError::Config(
        "output.dir: set it in the config or pass --out".into(),
    ))
}

/// Write the per-run verification reports next to the run data. Skipped
/// (with a note) when the trajectory is too short to evaluate them.
fn write_reports(traj: &Trajectory, dir: &Path) -> Result<()> {
    let reports = dir.join("reports");
    fs::create_dir_all(&reports)?;
    match diagnostics::cumulative_bounds(traj) {
        Ok(report) => fs::write(reports.join("bounds.txt"), report.render())?,
        Err(e) => eprintln!("[run] bounds report skipped: {e}"),
    }
    match diagnostics::inequality_scan(traj) {
        Ok(report) => fs::write(reports.join("inequalities.txt"), report.render())?,
        Err(e) => eprintln!("[run] inequality report skipped: {e}"),
    }
    match diagnostics::decay_metrics(traj) {
        Ok(report) => fs::write(reports.join("decay.txt"), report.render())?,
        Err(e) => eprintln!("[run] decay report skipped: {e}"),
    }
    let tau = traj.config.relax.as_ref().map(|r| r.tau).unwrap_or(0.1);
    match diagnostics::odi_fit(traj, tau, 2.0) {
        Ok(fit) => fs::write(reports.join("odi.txt"), fit.render())?,
        Err(e) => eprintln!("[run] supersolution fit skipped: {e}"),
    }
    Ok(())
}

pub fn run(config_path: &Path, out: Option<&Path>) -> Result<()> {
    let cfg = load_config(config_path)?;
    let dir = resolve_out(&cfg, out)?;
    let traj = stepper::run(&cfg)?;
    for w in &traj.warnings {
        eprintln!("[run] warning: {w}");
    }
    series::write_series(&traj, &dir)?;
    write_reports(&traj, &dir)?;
    if let Some(failure) = &traj.failure {
        eprintln!("[run] incomplete: {failure}");
        eprintln!("[run] partial trajectory written to {}", dir.display());
        return Err(KsmError::Numerical(failure.clone()));
    }
    eprintln!(
        "[run] complete: {} records over t in [0, {:.6}] -> {}",
        traj.records.len(),
        traj.records.last().map(|r| r.t).unwrap_or(0.0),
        dir.display()
    );
    Ok(())
}

fn persist_members(
    trajectories: &[Trajectory],
    labels: &[String],
    dir: &Path,
) -> Result<()> {
    for (traj, label) in trajectories.iter().zip(labels) {
        series::write_series(traj, &dir.join("runs").join(label))?;
    }
    Ok(())
}

pub fn sweep(config_path: &Path, out: Option<&Path>) -> Result<()> {
    let cfg = load_config(config_path)?;
    let dir = resolve_out(&cfg, out)?;
    let block = cfg
        .sweep
        .clone()
        .ok_or_else(|| KsmError::Config("sweep: config lacks a [sweep] section".into()))?;
    let (report, members) = experiments::epsilon_sweep(&cfg, &block.epsilons)?;
    fs::create_dir_all(&dir)?;
    let labels: Vec<String> = (0..members.len()).map(|i| format!("eps_{i:02}")).collect();
    persist_members(&members, &labels, &dir)?;
    fs::write(dir.join("report.txt"), report.render())?;
    if report.partial {
        return Err(KsmError::Numerical("a sweep member failed".into()));
    }
    eprintln!("[sweep] {} members -> {}", members.len(), dir.display());
    Ok(())
}

pub fn relax(config_path: &Path, out: Option<&Path>) -> Result<()> {
    let cfg = load_config(config_path)?;
    let dir = resolve_out(&cfg, out)?;
    let block = cfg
        .relax
        .clone()
        .ok_or_else(|| KsmError::Config("relax: config lacks a [relax] section".into()))?;
    let (report, members) = experiments::relaxation_experiment(&cfg, &block.grids, block.tau)?;
    fs::create_dir_all(&dir)?;
    let labels: Vec<String> = (0..members.len()).map(|i| format!("grid_{i:02}")).collect();
    persist_members(&members, &labels, &dir)?;
    fs::write(dir.join("report.txt"), report.render())?;
    if report.partial {
        return Err(KsmError::Numerical("a relaxation member failed".into()));
    }
    eprintln!("[relax] {} members -> {}", members.len(), dir.display());
    Ok(())
}

pub fn refine(config_path: &Path, out: Option<&Path>) -> Result<()> {
    let cfg = load_config(config_path)?;
    let dir = resolve_out(&cfg, out)?;
    let block = cfg
        .refine
        .clone()
        .ok_or_else(|| KsmError::Config("refine: config lacks a [refine] section".into()))?;
    let (report, members) = experiments::refinement_study(&cfg, &block.levels)?;
    fs::create_dir_all(&dir)?;
    let labels: Vec<String> = (0..members.len()).map(|i| format!("level_{i:02}")).collect();
    persist_members(&members, &labels, &dir)?;
    fs::write(dir.join("report.txt"), report.render())?;
    if report.partial {
        return Err(KsmError::Numerical("a refinement member failed".into()));
    }
    eprintln!("[refine] {} levels -> {}", members.len(), dir.display());
    Ok(())
}

pub fn check(config_path: &Path, out: Option<&Path>) -> Result<()> {
    let cfg = load_config(config_path)?;
    let dir = resolve_out(&cfg, out)?;
    let traj = series::read_series(&dir)?;
    audit::audit_trajectory(&traj)
}
