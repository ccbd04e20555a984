//! Multi-run experiments: the ε → 0 approximation sweep, the
//! measure-data relaxation study across refining grids, and joint
//! space/time refinement studies with weak-residual orders.
//!
//! Member runs are independent and share the base configuration except
//! for the swept parameter; reports echo the shared initial mass and
//! assert it agrees across members. Everything is deterministic: the
//! same experiment re-run produces bit-identical reports.

use crate::config::{self, RunConfig};
use crate::diagnostics::{self, DiagRecord, TestFunction, Trajectory};
use crate::error::{KsmError, Result};
use crate::geometry::{Field, Grid};
use crate::stepper;

// ---------------------------------------------------------------------------
// epsilon sweep

/// Weight functions for the saturated-nonlinearity integrals
/// I_ε(ψ) = ∫₀^T ∫ u·v/(1+εu)·ψ. Both are nonnegative.
const PSI_NAMES: [&str; 2] = ["uniform", "half-cosine"];

fn psi_field(grid: &Grid, which: usize) -> Field {
    match which {
        0 => Field::constant(*grid, 1.0),
        _ => Field::from_fn(*grid, |x| {
            1.0 + 0.5 * (std::f64::consts::PI * x[0] / grid.extents()[0]).cos()
        }),
    }
}

/// Saturated-nonlinearity integral of one trajectory against ψ,
/// evaluated with an explicit ε (not necessarily the run's own): this is
/// what isolates the monotone-approximation mechanism on frozen fields.
pub fn nonlinearity_integral(traj: &Trajectory, psi: &Field, eps: f64) -> f64 {
    let mut terms: Vec<(f64, f64)> = Vec::with_capacity(traj.snapshots.len());
    for snap in &traj.snapshots {
        let integrand = snap
            .u
            .zip_map(&snap.v, |u, v| u * v / (1.0 + eps * u))
            .zip_map(psi, |a, p| a * p);
        terms.push((snap.t, integrand.integrate()));
    }
    let mut acc = 0.0;
    for w in terms.windows(2) {
        acc += 0.5 * (w[1].0 - w[0].0) * (w[0].1 + w[1].1);
    }
    acc
}

/// Per-ψ nonlinearity integrals across the sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct PsiIntegrals {
    pub name: String,
    /// I_ε(ψ) per sweep member.
    pub values: Vec<f64>,
    /// |I_{ε_i} − I_{ε_{i+1}}| between consecutive members.
    pub increments: Vec<f64>,
}

/// Result of an ε sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub epsilons: Vec<f64>,
    pub terminal: Vec<DiagRecord>,
    /// d(ε_i, ε_{i+1}) = ‖u_i(T)−u_{i+1}(T)‖_{L²} + ‖v_i(T)−v_{i+1}(T)‖_{L²}.
    pub cauchy_distances: Vec<f64>,
    pub cauchy_decreasing: bool,
    pub nonlinearity: Vec<PsiIntegrals>,
    /// Shared initial mass, asserted equal across members.
    pub mass0: f64,
    /// Number of completed member runs; the report is partial when a
    /// member failed.
    pub completed: usize,
    pub partial: bool,
}

/// Run the ε → 0 approximation sweep (the `epsilon_sweep` operation).
/// Members share grid, step size and initial data; ε values must be
/// strictly decreasing, within [0, 1), and at least three. Returns the
/// report together with the member trajectories in sweep order.
pub fn epsilon_sweep(
    base: &RunConfig,
    epsilons: &[f64],
) -> Result<(SweepReport, Vec<Trajectory>)> {
    config::validate_sweep(&config::SweepConfig {
        epsilons: epsilons.to_vec(),
    })?;
    base.validate()?;

    let mut trajectories: Vec<Trajectory> = Vec::with_capacity(epsilons.len());
    let mut partial = false;
    for eps in epsilons {
        let mut cfg = base.clone();
        cfg.epsilon = *eps;
        cfg.sweep = None;
        let traj = stepper::run(&cfg)?;
        let failed = !traj.complete;
        trajectories.push(traj);
        if failed {
            partial = true;
            break;
        }
    }

    let mass0 = trajectories[0].meta.mass0;
    for traj in &trajectories {
        if (traj.meta.mass0 - mass0).abs() > 1e-10 * (1.0 + mass0.abs()) {
            return Err(KsmError::Validation(format!(
                "sweep members disagree on initial mass: {} vs {mass0}",
                traj.meta.mass0
            )));
        }
    }

    let terminal: Vec<DiagRecord> = trajectories
        .iter()
        .map(|t| t.records.last().expect("runs record t = 0").clone())
        .collect();

    let mut cauchy_distances = Vec::new();
    for pair in trajectories.windows(2) {
        let a = pair[0].snapshots.last().unwrap();
        let b = pair[1].snapshots.last().unwrap();
        cauchy_distances.push(a.u.l2_distance(&b.u) + a.v.l2_distance(&b.v));
    }
    let cauchy_decreasing = cauchy_distances.windows(2).all(|w| w[1] < w[0]);

    let grid = trajectories[0].snapshots[0].u.grid();
    let nonlinearity = PSI_NAMES
        .iter()
        .enumerate()
        .map(|(which, name)| {
            let psi = psi_field(grid, which);
            let values: Vec<f64> = trajectories
                .iter()
                .map(|t| nonlinearity_integral(t, &psi, t.meta.epsilon))
                .collect();
            let increments = values.windows(2).map(|w| (w[0] - w[1]).abs()).collect();
            PsiIntegrals {
                name: (*name).into(),
                values,
                increments,
            }
        })
        .collect();

    let report = SweepReport {
        epsilons: epsilons[..trajectories.len()].to_vec(),
        terminal,
        cauchy_distances,
        cauchy_decreasing,
        nonlinearity,
        mass0,
        completed: trajectories.iter().filter(|t| t.complete).count(),
        partial,
    };
    Ok((report, trajectories))
}

impl SweepReport {
    pub fn render(&self) -> String {
        let mut s = String::from("epsilon sweep\n");
        s.push_str(
            "  note: limit statements are proxied by Cauchy distances at the terminal time\n",
        );
        if self.partial {
            s.push_str("  status: PARTIAL (a member run failed)\n");
        }
        s.push_str(&format!("  shared mass: {:.16e}\n", self.mass0));
        for (eps, rec) in self.epsilons.iter().zip(&self.terminal) {
            s.push_str(&format!(
                "  eps {eps:.6e}: uL2(T) = {:.16e}  vinf(T) = {:.16e}  hm1(T) = {:.16e}\n",
                rec.u_l2, rec.vinf, rec.hm1
            ));
        }
        for (i, d) in self.cauchy_distances.iter().enumerate() {
            s.push_str(&format!(
                "  d(eps_{i}, eps_{}) = {d:.16e}\n",
                i + 1
            ));
        }
        s.push_str(&format!(
            "  cauchy decreasing: {}\n",
            if self.cauchy_decreasing { "yes" } else { "no" }
        ));
        for psi in &self.nonlinearity {
            s.push_str(&format!("  I(psi = {}): ", psi.name));
            s.push_str(
                &psi.values
                    .iter()
                    .map(|v| format!("{v:.16e}"))
                    .collect::<Vec<_>>()
                    .join(", "),
            );
            s.push('\n');
        }
        s
    }
}

// ---------------------------------------------------------------------------
// relaxation experiment

/// Result of the measure-data relaxation experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct RelaxReport {
    pub grids: Vec<Vec<usize>>,
    pub tau: f64,
    /// ∫u² at t = 0 per grid: grows like 1/h for point-mass data.
    pub u_l2_at_0: Vec<f64>,
    pub u_l2_at_tau: Vec<f64>,
    pub u_l2_at_tau_plus_1: Vec<f64>,
    /// ∫_τ^{τ+1} (∫u²) dt per grid.
    pub window_integrals: Vec<f64>,
    pub sup_window_integral: f64,
    /// max/min spread of ∫u²(τ) across grids.
    pub spread_at_tau: f64,
    /// ∫u²(t) sampled at small times on the finest grid with the fitted
    /// log-log slope; empirical only.
    pub small_time_scan: Vec<(f64, f64)>,
    pub small_time_exponent: Option<f64>,
    pub mass0: f64,
    pub partial: bool,
}

/// Run the relaxation experiment (the `relaxation_experiment`
/// operation): point-mass initial data on strictly refining grids,
/// integrated to τ+1. Requires dirac initial data.
pub fn relaxation_experiment(
    base: &RunConfig,
    grids: &[Vec<usize>],
    tau: f64,
) -> Result<(RelaxReport, Vec<Trajectory>)> {
    if base.initial.u0.kind != "dirac" {
        return Err(KsmError::Validation(
            "relaxation experiment requires dirac initial data".into(),
        ));
    }
    let base_grid = base.grid.build()?;
    config::validate_relax(
        &config::RelaxConfig {
            grids: grids.to_vec(),
            tau,
        },
        &base_grid,
    )?;
    base.validate()?;

    let mut trajectories = Vec::with_capacity(grids.len());
    let mut partial = false;
    for cells in grids {
        let mut cfg = base.clone();
        cfg.grid.cells = cells.clone();
        cfg.output.t_end = tau + 1.0;
        cfg.relax = None;
        let level_grid = cfg.grid.build()?;
        rescale_initial(&mut cfg, &base_grid, &level_grid)?;
        let traj = stepper::run(&cfg)?;
        let failed = !traj.complete;
        trajectories.push(traj);
        if failed {
            partial = true;
            break;
        }
    }

    let mass0 = trajectories[0].meta.mass0;
    for traj in &trajectories {
        if (traj.meta.mass0 - mass0).abs() > 1e-10 * (1.0 + mass0.abs()) {
            return Err(KsmError::Validation(
                "relaxation members disagree on initial mass".into(),
            ));
        }
    }

    let at = |traj: &Trajectory, t: f64| traj.records[traj.record_nearest(t)].u_l2;
    let u_l2_at_0: Vec<f64> = trajectories.iter().map(|t| at(t, 0.0)).collect();
    let u_l2_at_tau: Vec<f64> = trajectories.iter().map(|t| at(t, tau)).collect();
    let u_l2_at_tau_plus_1: Vec<f64> = trajectories.iter().map(|t| at(t, tau + 1.0)).collect();

    let window_integrals: Vec<f64> = trajectories
        .iter()
        .map(|traj| {
            let mut acc = 0.0;
            for w in traj.records.windows(2) {
                let (a, b) = (&w[0], &w[1]);
                if a.t >= tau && b.t <= tau + 1.0 + 1e-12 {
                    acc += 0.5 * (b.t - a.t) * (a.u_l2 + b.u_l2);
                }
            }
            acc
        })
        .collect();
    let sup_window_integral = window_integrals.iter().copied().fold(0.0f64, f64::max);

    let spread_at_tau = {
        let max = u_l2_at_tau.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = u_l2_at_tau.iter().copied().fold(f64::INFINITY, f64::min);
        if min > 0.0 {
            max / min
        } else {
            f64::INFINITY
        }
    };

    let finest = trajectories.last().unwrap();
    let horizon = finest.records.last().unwrap().t;
    let mut small_time_scan = Vec::new();
    for t in [0.05, 0.1, 0.2] {
        if t <= horizon {
            let r = &finest.records[finest.record_nearest(t)];
            small_time_scan.push((r.t, r.u_l2));
        }
    }
    let small_time_exponent = fit_loglog_slope(&small_time_scan);

    let report = RelaxReport {
        grids: grids[..trajectories.len()].to_vec(),
        tau,
        u_l2_at_0,
        u_l2_at_tau,
        u_l2_at_tau_plus_1,
        window_integrals,
        sup_window_integral,
        spread_at_tau,
        small_time_scan,
        small_time_exponent,
        mass0,
        partial,
    };
    Ok((report, trajectories))
}

fn fit_loglog_slope(points: &[(f64, f64)]) -> Option<f64> {
    let logs: Vec<(f64, f64)> = points
        .iter()
        .filter(|(t, v)| *t > 0.0 && *v > 0.0)
        .map(|(t, v)| (t.ln(), v.ln()))
        .collect();
    if logs.len() < 2 {
        return None;
    }
    let n = logs.len() as f64;
    let sx: f64 = logs.iter().map(|(x, _)| x).sum();
    let sy: f64 = logs.iter().map(|(_, y)| y).sum();
    let sxx: f64 = logs.iter().map(|(x, _)| x * x).sum();
    let sxy: f64 = logs.iter().map(|(x, y)| x * y).sum();
    let denom = n * sxx - sx * sx;
    if denom.abs() < 1e-300 {
        return None;
    }
    Some((n * sxy - sx * sy) / denom)
}

impl RelaxReport {
    pub fn render(&self) -> String {
        let mut s = String::from("relaxation experiment\n");
        s.push_str(
            "  note: uniform-in-grid window integrals proxy the instantaneous-relaxation bound\n",
        );
        if self.partial {
            s.push_str("  status: PARTIAL (a member run failed)\n");
        }
        s.push_str(&format!(
            "  tau: {:.6e}  shared mass: {:.16e}\n",
            self.tau, self.mass0
        ));
        for (i, cells) in self.grids.iter().enumerate() {
            s.push_str(&format!(
                "  grid {cells:?}: uL2(0) = {:.16e}  uL2(tau) = {:.16e}  uL2(tau+1) = {:.16e}  window = {:.16e}\n",
                self.u_l2_at_0[i], self.u_l2_at_tau[i], self.u_l2_at_tau_plus_1[i], self.window_integrals[i]
            ));
        }
        s.push_str(&format!(
            "  sup window integral: {:.16e}\n  spread at tau: {:.16e}\n",
            self.sup_window_integral, self.spread_at_tau
        ));
        if let Some(e) = self.small_time_exponent {
            s.push_str(&format!("  small-time exponent (empirical): {e:.6e}\n"));
        }
        s
    }
}

// ---------------------------------------------------------------------------
// refinement study

/// Per-level outcome of a refinement study.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelResult {
    pub multiplier: usize,
    pub cells: Vec<usize>,
    pub dt: f64,
    pub r_u: f64,
    pub r_v: f64,
    /// ‖restrict(u_finest) − u‖_{L²} at the terminal time; None on the
    /// finest level.
    pub err_u: Option<f64>,
    pub err_v: Option<f64>,
}

/// Result of a joint space/time refinement study.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceReport {
    pub levels: Vec<LevelResult>,
    pub order_u: Option<f64>,
    pub order_v: Option<f64>,
    pub order_ru: Option<f64>,
    pub order_rv: Option<f64>,
    pub residuals_monotone: bool,
    pub partial: bool,
}

/// Piecewise-constant injection of a coarse field onto a finer grid with
/// integer ratio; keeps cell-value initial data meaningful across the
/// grids of one experiment.
pub fn prolong_to(coarse: &Field, fine: &Grid) -> Result<Field> {
    let cg = coarse.grid();
    let [cn0, cn1] = cg.cells_padded();
    let [fn0, fn1] = fine.cells_padded();
    if fn0 % cn0 != 0 || fn1 % cn1 != 0 {
        return Err(KsmError::Validation(
            "prolongation needs integer cell ratios".into(),
        ));
    }
    let (r0, r1) = (fn0 / cn0, fn1 / cn1);
    let mut values = vec![0.0f64; fn0 * fn1];
    for i0 in 0..fn0 {
        for i1 in 0..fn1 {
            values[i0 * fn1 + i1] = coarse.values()[(i0 / r0) * cn1 + (i1 / r1)];
        }
    }
    Field::new(*fine, values)
}

/// Rewrite cell-value (or file-backed) initial data for a refined grid by
/// injection; grid-independent kinds pass through unchanged.
fn rescale_initial(cfg: &mut RunConfig, base_grid: &Grid, level_grid: &Grid) -> Result<()> {
    if cfg.initial.u0.kind == "cells" || cfg.initial.u0.kind == "file" {
        let spec = cfg.initial.to_spec(base_grid)?;
        if let crate::initial::U0Spec::Cells { values } = spec.u0 {
            let base = Field::new(*base_grid, values)?;
            let fine = prolong_to(&base, level_grid)?;
            cfg.initial.u0 = crate::config::U0Config {
                kind: "cells".into(),
                value: None,
                center: None,
                width: None,
                mass: None,
                values: Some(fine.into_values()),
                file: None,
            };
        }
    }
    if cfg.initial.v0.kind == "cells" || cfg.initial.v0.kind == "file" {
        let spec = cfg.initial.to_spec(base_grid)?;
        if let crate::initial::V0Spec::Cells { values } = spec.v0 {
            let base = Field::new(*base_grid, values)?;
            let fine = prolong_to(&base, level_grid)?;
            cfg.initial.v0 = crate::config::V0Config {
                kind: "cells".into(),
                value: None,
                values: Some(fine.into_values()),
                file: None,
            };
        }
    }
    Ok(())
}

/// Block-average a fine field onto a coarser grid with integer ratio.
pub fn restrict_to(fine: &Field, coarse: &Grid) -> Result<Field> {
    let fg = fine.grid();
    let [fn0, fn1] = fg.cells_padded();
    let [cn0, cn1] = coarse.cells_padded();
    if fn0 % cn0 != 0 || fn1 % cn1 != 0 {
        return Err(KsmError::Validation(
            "restriction needs integer cell ratios".into(),
        ));
    }
    let (r0, r1) = (fn0 / cn0, fn1 / cn1);
    let scale = 1.0 / (r0 * r1) as f64;
    let mut values = vec![0.0f64; cn0 * cn1];
    for i0 in 0..cn0 {
        for i1 in 0..cn1 {
            let mut acc = 0.0;
            for j0 in 0..r0 {
                for j1 in 0..r1 {
                    acc += fine.values()[(i0 * r0 + j0) * fn1 + (i1 * r1 + j1)];
                }
            }
            values[i0 * cn1 + i1] = acc * scale;
        }
    }
    Field::new(*coarse, values)
}

fn mean_log2_ratio(values: &[f64]) -> Option<f64> {
    if values.len() < 2 || values.iter().any(|v| !(*v > 0.0)) {
        return None;
    }
    let mut acc = 0.0;
    for w in values.windows(2) {
        acc += (w[0] / w[1]).log2();
    }
    Some(acc / (values.len() - 1) as f64)
}

/// Run a joint refinement study (the `refinement_study` operation):
/// level i multiplies the base cell counts by `levels[i]` and divides dt
/// and cadence by the same factor. Orders are reported for the terminal
/// fields (against the finest level) and for the weak residuals.
pub fn refinement_study(
    base: &RunConfig,
    levels: &[usize],
) -> Result<(ConvergenceReport, Vec<Trajectory>)> {
    config::validate_refine(&config::RefineConfig {
        levels: levels.to_vec(),
    })?;
    base.validate()?;

    let t_end = base.output.t_end;
    let test = TestFunction::new(
        &vec![1; base.grid.dim],
        0.2 * t_end,
        0.8 * t_end,
    )?;

    let mut trajectories = Vec::with_capacity(levels.len());
    let mut results: Vec<LevelResult> = Vec::with_capacity(levels.len());
    let mut partial = false;
    let base_grid = base.grid.build()?;
    for m in levels {
        let mut cfg = base.clone();
        cfg.grid.cells = base.grid.cells.iter().map(|c| c * m).collect();
        cfg.stepper.dt = base.stepper.dt / *m as f64;
        cfg.output.cadence = base.output.cadence / *m as f64;
        cfg.refine = None;
        let level_grid = cfg.grid.build()?;
        rescale_initial(&mut cfg, &base_grid, &level_grid)?;
        let traj = stepper::run(&cfg)?;
        if !traj.complete {
            partial = true;
            trajectories.push(traj);
            break;
        }
        let (r_u, r_v) = diagnostics::weak_residual(&traj, &test)?;
        results.push(LevelResult {
            multiplier: *m,
            cells: cfg.grid.cells.clone(),
            dt: cfg.stepper.dt,
            r_u,
            r_v,
            err_u: None,
            err_v: None,
        });
        trajectories.push(traj);
    }

    if !partial {
        let finest = trajectories.last().unwrap().snapshots.last().unwrap();
        for (i, traj) in trajectories[..trajectories.len() - 1].iter().enumerate() {
            let snap = traj.snapshots.last().unwrap();
            let coarse = snap.u.grid();
            let fu = restrict_to(&finest.u, coarse)?;
            let fv = restrict_to(&finest.v, coarse)?;
            results[i].err_u = Some(snap.u.l2_distance(&fu));
            results[i].err_v = Some(snap.v.l2_distance(&fv));
        }
    }

    let errs_u: Vec<f64> = results.iter().filter_map(|l| l.err_u).collect();
    let errs_v: Vec<f64> = results.iter().filter_map(|l| l.err_v).collect();
    let rus: Vec<f64> = results.iter().map(|l| l.r_u).collect();
    let rvs: Vec<f64> = results.iter().map(|l| l.r_v).collect();
    let residuals_monotone = rus.windows(2).all(|w| w[1] < w[0])
        && rvs.windows(2).all(|w| w[1] < w[0]);

    let report = ConvergenceReport {
        order_u: mean_log2_ratio(&errs_u),
        order_v: mean_log2_ratio(&errs_v),
        order_ru: mean_log2_ratio(&rus),
        order_rv: mean_log2_ratio(&rvs),
        residuals_monotone,
        levels: results,
        partial,
    };
    Ok((report, trajectories))
}

impl ConvergenceReport {
    pub fn render(&self) -> String {
        let mut s = String::from("refinement study\n");
        if self.partial {
            s.push_str("  status: PARTIAL (a member run failed)\n");
        }
        for l in &self.levels {
            let fmt_opt = |v: &Option<f64>| match v {
                Some(x) => format!("{x:.16e}"),
                None => "-".into(),
            };
            s.push_str(&format!(
                "  x{} cells {:?} dt {:.6e}: r_u = {:.16e}  r_v = {:.16e}  err_u = {}  err_v = {}\n",
                l.multiplier,
                l.cells,
                l.dt,
                l.r_u,
                l.r_v,
                fmt_opt(&l.err_u),
                fmt_opt(&l.err_v)
            ));
        }
        let fmt_opt = |v: &Option<f64>| match v {
            Some(x) => format!("{x:.4}"),
            None => "-".into(),
        };
        s.push_str(&format!(
            "  orders: u = {}  v = {}  r_u = {}  r_v = {}\n  residuals monotone: {}\n",
            fmt_opt(&self.order_u),
            fmt_opt(&self.order_v),
            fmt_opt(&self.order_ru),
            fmt_opt(&self.order_rv),
            if self.residuals_monotone { "yes" } else { "no" }
        ));
        s
    }
}
