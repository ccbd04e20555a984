//! Time integration of the regularized system
//!
//! ```text
//!   u_t = Δ(u φ_ε(v)),   v_t = Δv − u·v/(1 + ε·u)
//! ```
//!
//! Two schemes share the spatial operators from [`crate::geometry`]:
//!
//! - `imex`: two decoupled linear solves per step with lagged
//!   coefficients. The v-update `(I + dt·(−Δ_h) + dt·diag(uⁿ/(1+εuⁿ)))
//!   vⁿ⁺¹ = vⁿ` is an M-matrix system, so vⁿ⁺¹ ≥ 0 and ‖vⁿ⁺¹‖_∞ ≤
//!   ‖vⁿ‖_∞. The u-update `(I − dt·Δ_h∘diag(φ_ε(vⁿ⁺¹))) uⁿ⁺¹ = uⁿ` has
//!   unit column sums under the zero-flux closure, so cell sums — and
//!   hence mass — are conserved exactly, and its M-matrix structure keeps
//!   uⁿ⁺¹ ≥ 0. Both pillars hold at the discrete level, not merely to
//!   truncation order.
//! - `explicit`: forward Euler in flux form, valid under the CFL limit
//!   from [`dt_cfl`]; serves as the accuracy oracle for the IMEX path.
//!
//! In 1D the tridiagonal systems are solved directly (Thomas; stable here
//! by column diagonal dominance). In 2D both systems are solved by
//! conjugate gradients after a diagonal similarity transform that makes
//! the u-system symmetric positive definite.

use crate::config::{RunConfig, Scheme};
use crate::diagnostics::{self, FieldSnapshot, RunMeta, RunStats, Trajectory};
use crate::error::{KsmError, Result};
use crate::geometry::{laplacian_slice, Field, Grid};
use crate::initial;
use crate::motility::RegularizedMotility;

/// Simulation state at one time level.
#[derive(Debug, Clone)]
pub struct State {
    pub t: f64,
    pub u: Field,
    pub v: Field,
    pub eps: f64,
    /// Conserved mass ∫u₀.
    pub mass0: f64,
    /// Mean ū₀ = mass0/|Ω|.
    pub ubar0: f64,
}

impl State {
    /// Initial state; records the conserved mass from `u`.
    pub fn initial(u: Field, v: Field, eps: f64) -> Result<State> {
        if u.grid() != v.grid() {
            return Err(KsmError::Validation(
                "u and v live on different grids".into(),
            ));
        }
        if !(0.0..1.0).contains(&eps) {
            return Err(KsmError::Validation(format!(
                "epsilon must lie in [0, 1), got {eps}"
            )));
        }
        if !u.is_nonnegative() || !v.is_nonnegative() {
            return Err(KsmError::Validation(
                "initial fields must be nonnegative".into(),
            ));
        }
        let mass0 = u.integrate();
        let ubar0 = mass0 / u.grid().measure();
        Ok(State {
            t: 0.0,
            u,
            v,
            eps,
            mass0,
            ubar0,
        })
    }

    /// Reconstruct a mid-trajectory state (e.g. from stored snapshots);
    /// the conserved quantities are supplied, not recomputed.
    pub fn resume(t: f64, u: Field, v: Field, eps: f64, mass0: f64, ubar0: f64) -> Result<State> {
        if u.grid() != v.grid() {
            return Err(KsmError::Validation(
                "u and v live on different grids".into(),
            ));
        }
        Ok(State {
            t,
            u,
            v,
            eps,
            mass0,
            ubar0,
        })
    }

    fn advance(&self, u: Field, v: Field, dt: f64) -> State {
        State {
            t: self.t + dt,
            u,
            v,
            eps: self.eps,
            mass0: self.mass0,
            ubar0: self.ubar0,
        }
    }

    pub fn grid(&self) -> &Grid {
        self.u.grid()
    }
}

/// Linear solver settings for the implicit updates.
#[derive(Debug, Clone, Copy)]
pub struct SolverConfig {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tol: 1e-12,
            max_iter: 20_000,
        }
    }
}

/// Saturated absorption coefficient u/(1+εu).
#[inline]
fn absorption(u: f64, eps: f64) -> f64 {
    u / (1.0 + eps * u)
}

/// Explicit stability limit, scaled by `safety`: the minimum over the
/// diffusion limit of the u-equation, h²/(2·dim·max φ_ε(v)), and the
/// v-equation limits min(h²/(2·dim), 1/max u/(1+εu)).
pub fn dt_cfl(s: &State, phi: &RegularizedMotility, safety: f64) -> f64 {
    let grid = s.grid();
    let hmin = grid
        .widths()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    let dim = grid.dim() as f64;
    let max_phi = s
        .v
        .values()
        .iter()
        .map(|v| phi.value(v.max(0.0)))
        .fold(0.0f64, f64::max);
    let max_c = s
        .u
        .values()
        .iter()
        .map(|u| absorption(*u, s.eps))
        .fold(0.0f64, f64::max);

    let diffusion = hmin * hmin / (2.0 * dim);
    let u_limit = diffusion / max_phi;
    let v_limit = if max_c > 0.0 {
        diffusion.min(1.0 / max_c)
    } else {
        diffusion
    };
    safety * u_limit.min(v_limit)
}

/// Thomas elimination for a tridiagonal system. `sub[i]` multiplies
/// x[i−1] in row i and `sup[i]` multiplies x[i+1]; `sub[0]` and
/// `sup[n−1]` are ignored. Stable without pivoting for the column
/// diagonally dominant M-matrices assembled here; with a nonnegative
/// right-hand side every elimination step adds terms of equal sign, so
/// the computed solution is nonnegative even in floating point.
fn thomas(sub: &[f64], diag: &[f64], sup: &[f64], rhs: &[f64]) -> Vec<f64> {
    let n = rhs.len();
    let mut d = diag.to_vec();
    let mut b = rhs.to_vec();
    for i in 1..n {
        let m = sub[i] / d[i - 1];
        d[i] -= m * sup[i - 1];
        b[i] -= m * b[i - 1];
    }
    let mut x = vec![0.0f64; n];
    x[n - 1] = b[n - 1] / d[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = (b[i] - sup[i] * x[i + 1]) / d[i];
    }
    x
}

/// Conjugate gradients for an SPD operator given matrix-free. Returns
/// (solution, relative residual); errors if `tol` is not reached within
/// `max_iter` iterations.
fn conjugate_gradient(
    apply: &dyn Fn(&[f64], &mut [f64]),
    b: &[f64],
    x0: &[f64],
    cfg: SolverConfig,
) -> Result<(Vec<f64>, f64)> {
    let n = b.len();
    let mut x = x0.to_vec();
    let mut ax = vec![0.0f64; n];
    apply(&x, &mut ax);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
    let norm_b = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm_b == 0.0 {
        return Ok((vec![0.0; n], 0.0));
    }
    let mut rr: f64 = r.iter().map(|v| v * v).sum();
    let target = cfg.tol * norm_b;
    if rr.sqrt() <= target {
        return Ok((x, rr.sqrt() / norm_b));
    }
    let mut p = r.clone();
    let mut ap = vec![0.0f64; n];
    for _ in 0..cfg.max_iter {
        apply(&p, &mut ap);
        let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        let alpha = rr / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rr_new: f64 = r.iter().map(|v| v * v).sum();
        if rr_new.sqrt() <= target {
            return Ok((x, rr_new.sqrt() / norm_b));
        }
        let beta = rr_new / rr;
        rr = rr_new;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
    }
    Err(KsmError::Numerical(format!(
        "linear solver failed to reach tol {} within {} iterations (residual {:.3e})",
        cfg.tol,
        cfg.max_iter,
        rr.sqrt() / norm_b
    )))
}

/// Diagonal entries of −Δ_h (number of interior faces per cell / h²).
fn neg_laplacian_diagonal(grid: &Grid) -> Vec<f64> {
    let [n0, n1] = grid.cells_padded();
    let [h0, h1] = grid.widths_padded();
    let mut diag = vec![0.0f64; n0 * n1];
    for i0 in 0..n0 {
        for i1 in 0..n1 {
            let mut d = 0.0;
            if n0 > 1 {
                let faces = if i0 == 0 || i0 == n0 - 1 { 1.0 } else { 2.0 };
                d += faces / (h0 * h0);
            }
            if n1 > 1 {
                let faces = if i1 == 0 || i1 == n1 - 1 { 1.0 } else { 2.0 };
                d += faces / (h1 * h1);
            }
            diag[i0 * n1 + i1] = d;
        }
    }
    diag
}

struct StepResult {
    state: State,
    /// Largest relative linear-solve residual of the step.
    residual: f64,
}

/// One IMEX step (the `step_imex` operation).
pub fn step_imex(
    s: &State,
    dt: f64,
    phi: &RegularizedMotility,
    solver: SolverConfig,
) -> Result<State> {
    Ok(step_imex_inner(s, dt, phi, solver)?.state)
}

fn step_imex_inner(
    s: &State,
    dt: f64,
    phi: &RegularizedMotility,
    solver: SolverConfig,
) -> Result<StepResult> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(KsmError::Validation(format!(
            "step size must be positive, got {dt}"
        )));
    }
    let grid = *s.grid();
    let n = grid.n_cells();
    let c: Vec<f64> = s.u.values().iter().map(|u| absorption(*u, s.eps)).collect();
    let lap_diag = neg_laplacian_diagonal(&grid);

    let mut residual = 0.0f64;

    // (i) v-update: (I + dt·(−Δ_h) + dt·diag(c)) vⁿ⁺¹ = vⁿ
    let v_new_values = if grid.dim() == 1 {
        let h = grid.widths()[0];
        let off = -dt / (h * h);
        let mut sub = vec![off; n];
        let mut sup = vec![off; n];
        sub[0] = 0.0;
        sup[n - 1] = 0.0;
        let diag: Vec<f64> = (0..n).map(|i| 1.0 + dt * lap_diag[i] + dt * c[i]).collect();
        let x = thomas(&sub, &diag, &sup, s.v.values());
        residual = residual.max(tridiag_residual(&sub, &diag, &sup, &x, s.v.values()));
        x
    } else {
        let apply = |z: &[f64], out: &mut [f64]| {
            laplacian_slice(&grid, z, out);
            for i in 0..z.len() {
                out[i] = z[i] - dt * out[i] + dt * c[i] * z[i];
            }
        };
        let (x, res) = conjugate_gradient(&apply, s.v.values(), s.v.values(), solver)?;
        residual = residual.max(res);
        x
    };
    let v_new = Field::new(grid, v_new_values)?;
    if v_new.has_nan() {
        return Err(KsmError::Numerical(format!(
            "NaN in v-update at t = {}",
            s.t
        )));
    }

    // (ii) u-update: (I + dt·(−Δ_h)∘diag(w)) uⁿ⁺¹ = uⁿ, w = φ_ε(vⁿ⁺¹)
    let w: Vec<f64> = v_new.values().iter().map(|v| phi.value(v.max(0.0))).collect();
    let u_new_values = if grid.dim() == 1 {
        let h = grid.widths()[0];
        let scale = dt / (h * h);
        let mut sub = vec![0.0f64; n];
        let mut sup = vec![0.0f64; n];
        for i in 1..n {
            sub[i] = -scale * w[i - 1];
        }
        for i in 0..n - 1 {
            sup[i] = -scale * w[i + 1];
        }
        let diag: Vec<f64> = (0..n)
            .map(|i| 1.0 + dt * lap_diag[i] * w[i])
            .collect();
        let x = thomas(&sub, &diag, &sup, s.u.values());
        residual = residual.max(tridiag_residual(&sub, &diag, &sup, &x, s.u.values()));
        x
    } else {
        // symmetrize with P = diag(√w): solve (I + dt·√w∘(−Δ_h)(√w∘·)) z
        // = √w∘uⁿ, then uⁿ⁺¹ = z/√w
        let sqrt_w: Vec<f64> = w.iter().map(|w| w.sqrt()).collect();
        let apply = |z: &[f64], out: &mut [f64]| {
            let scaled: Vec<f64> = z.iter().zip(&sqrt_w).map(|(z, s)| z * s).collect();
            laplacian_slice(&grid, &scaled, out);
            for i in 0..z.len() {
                out[i] = z[i] - dt * sqrt_w[i] * out[i];
            }
        };
        let rhs: Vec<f64> = s
            .u
            .values()
            .iter()
            .zip(&sqrt_w)
            .map(|(u, s)| u * s)
            .collect();
        let x0: Vec<f64> = rhs.clone();
        let (z, res) = conjugate_gradient(&apply, &rhs, &x0, solver)?;
        residual = residual.max(res);
        z.iter().zip(&sqrt_w).map(|(z, s)| z / s).collect()
    };
    let u_new = Field::new(grid, u_new_values)?;
    if u_new.has_nan() {
        return Err(KsmError::Numerical(format!(
            "NaN in u-update at t = {}",
            s.t
        )));
    }

    Ok(StepResult {
        state: s.advance(u_new, v_new, dt),
        residual,
    })
}

fn tridiag_residual(sub: &[f64], diag: &[f64], sup: &[f64], x: &[f64], rhs: &[f64]) -> f64 {
    let n = x.len();
    let norm_b = rhs.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm_b == 0.0 {
        return 0.0;
    }
    let mut rr = 0.0f64;
    for i in 0..n {
        let mut ax = diag[i] * x[i];
        if i > 0 {
            ax += sub[i] * x[i - 1];
        }
        if i + 1 < n {
            ax += sup[i] * x[i + 1];
        }
        let r = rhs[i] - ax;
        rr += r * r;
    }
    rr.sqrt() / norm_b
}

/// One forward-Euler step in flux form (the `step_explicit` operation).
/// Rejects dt above the unscaled stability limit.
pub fn step_explicit(s: &State, dt: f64, phi: &RegularizedMotility) -> Result<State> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(KsmError::Validation(format!(
            "step size must be positive, got {dt}"
        )));
    }
    let limit = dt_cfl(s, phi, 1.0);
    if dt > limit * (1.0 + 1e-12) {
        return Err(KsmError::Numerical(format!(
            "CFL violation: dt = {dt:.6e} exceeds the stability limit {limit:.6e}"
        )));
    }
    let grid = *s.grid();
    let g = s.v.values();

    // u-update: uⁿ⁺¹ = uⁿ + dt·Δ_h(φ_ε(vⁿ)·uⁿ)
    let flux_var: Vec<f64> = s
        .u
        .values()
        .iter()
        .zip(g)
        .map(|(u, v)| u * phi.value(v.max(0.0)))
        .collect();
    let mut lap = vec![0.0f64; flux_var.len()];
    laplacian_slice(&grid, &flux_var, &mut lap);
    let u_new: Vec<f64> = s
        .u
        .values()
        .iter()
        .zip(&lap)
        .map(|(u, l)| u + dt * l)
        .collect();

    // v-update: vⁿ⁺¹ = vⁿ + dt·(Δ_h vⁿ − uⁿvⁿ/(1+εuⁿ))
    laplacian_slice(&grid, g, &mut lap);
    let v_new: Vec<f64> = s
        .v
        .values()
        .iter()
        .zip(s.u.values())
        .zip(&lap)
        .map(|((v, u), l)| v + dt * (l - absorption(*u, s.eps) * v))
        .collect();

    let u_new = Field::new(grid, u_new)?;
    let v_new = Field::new(grid, v_new)?;
    if u_new.has_nan() || v_new.has_nan() {
        return Err(KsmError::Numerical(format!("NaN at t = {}", s.t)));
    }
    Ok(s.advance(u_new, v_new, dt))
}

/// Tolerances enforced while a run is monitored step by step.
mod guard {
    /// Relative mass-conservation budget over a whole run.
    pub const MASS_REL: f64 = 1e-10;
    /// Absolute mass budget for zero-mass runs.
    pub const MASS_ABS: f64 = 1e-12;
    /// Per-step slack on the ‖v‖_∞ maximum principle.
    pub const VINF_SLACK: f64 = 1e-12;
    /// How far below zero a field may dip before the run aborts; the
    /// 1D solves are sign-exact, iterative 2D solves may carry noise at
    /// the solver tolerance.
    pub const NEGATIVITY: f64 = 1e-9;
}

/// Drive a configured run from t = 0 to the horizon (the `run`
/// operation). Step-level numerical failures terminate the run and are
/// reported inside the returned trajectory (`complete = false`);
/// configuration errors fail outright.
pub fn run(cfg: &RunConfig) -> Result<Trajectory> {
    cfg.validate()?;
    let grid = cfg.grid.build()?;
    let motility = cfg.motility.to_spec()?;
    let phi = if cfg.epsilon == 0.0 {
        RegularizedMotility::limit(&motility)
    } else {
        RegularizedMotility::new(&motility, cfg.epsilon)?
    };
    let init_spec = cfg.initial.to_spec(&grid)?;
    let (u0, v0) = initial::realize(&init_spec, &grid, cfg.epsilon)?;
    let v0_linf = init_spec.v0.linf();
    let state = State::initial(u0, v0, cfg.epsilon)?;
    let scheme = cfg.stepper.scheme()?;
    let solver = SolverConfig {
        tol: cfg.stepper.solver_tol,
        max_iter: cfg.stepper.max_iter,
    };

    let mut warnings = Vec::new();

    // effective step size
    let mut dt = cfg.stepper.dt;
    match scheme {
        Scheme::Imex => {
            if let Some(mult) = cfg.stepper.dt_cap_cfl_multiple {
                let cap = mult * dt_cfl(&state, &phi, cfg.stepper.safety);
                if cap < dt {
                    warnings.push(format!(
                        "dt {dt:.6e} capped to {cap:.6e} ({mult} x the explicit stability limit)"
                    ));
                    dt = cap;
                }
            }
        }
        Scheme::Explicit => {
            let limit = dt_cfl(&state, &phi, cfg.stepper.safety);
            if dt > limit * (1.0 + 1e-12) {
                return Err(KsmError::Numerical(format!(
                    "explicit scheme: dt = {dt:.6e} exceeds the safety-scaled stability limit {limit:.6e}"
                )));
            }
        }
    }

    let t_end = cfg.output.t_end;
    let n_steps = if t_end == 0.0 {
        0
    } else {
        let raw = t_end / dt;
        let rounded = raw.round();
        if (raw - rounded).abs() > 1e-6 * raw.max(1.0) {
            warnings.push(format!(
                "horizon {t_end} is not a multiple of dt {dt:.6e}; running {} steps to t = {:.6e}",
                rounded as usize,
                rounded * dt
            ));
        }
        rounded as usize
    };

    let record_every = {
        let ratio = cfg.output.cadence / dt;
        let k = (ratio + 1e-9).floor().max(1.0) as usize;
        if (k as f64 * dt - cfg.output.cadence).abs() > 1e-9 * cfg.output.cadence {
            warnings.push(format!(
                "cadence {} snapped down to {} steps ({:.6e} time units)",
                cfg.output.cadence,
                k,
                k as f64 * dt
            ));
        }
        k
    };

    let mut records = Vec::new();
    let mut snapshots = Vec::new();
    let mut stats = RunStats {
        max_mass_drift: 0.0,
        max_vinf_step_increase: 0.0,
        min_u: state.u.min_value(),
        min_v: state.v.min_value(),
        max_solver_residual: 0.0,
    };
    let record =
        |s: &State, records: &mut Vec<diagnostics::DiagRecord>, snaps: &mut Vec<FieldSnapshot>| {
            records.push(diagnostics::snapshot_weighted(
                s,
                cfg.functionals.a,
                cfg.functionals.b,
            ));
            snaps.push(FieldSnapshot {
                t: s.t,
                u: s.u.clone(),
                v: s.v.clone(),
            });
        };
    record(&state, &mut records, &mut snapshots);

    let mut current = state;
    let mut prev_vinf = current.v.linf_norm();
    let mut failure: Option<String> = None;

    for step in 1..=n_steps {
        let outcome = match scheme {
            Scheme::Imex => step_imex_inner(&current, dt, &phi, solver),
            Scheme::Explicit => {
                // revalidate against the safety-scaled limit as the state evolves
                let limit = dt_cfl(&current, &phi, cfg.stepper.safety);
                if dt > limit * (1.0 + 1e-12) {
                    Err(KsmError::Numerical(format!(
                        "CFL violation at t = {:.6e}: dt = {dt:.6e} > {limit:.6e}",
                        current.t
                    )))
                } else {
                    step_explicit(&current, dt, &phi).map(|state| StepResult {
                        state,
                        residual: 0.0,
                    })
                }
            }
        };
        let StepResult { state: next, residual } = match outcome {
            Ok(r) => r,
            Err(e) => {
                failure = Some(e.to_string());
                break;
            }
        };
        // track t as step·dt to avoid accumulation drift
        let mut next = next;
        next.t = step as f64 * dt;

        // structure monitors
        let mass = next.u.integrate();
        let drift = (mass - next.mass0).abs();
        stats.max_mass_drift = stats.max_mass_drift.max(drift);
        let tol = if next.mass0 > 0.0 {
            guard::MASS_REL * next.mass0
        } else {
            guard::MASS_ABS
        };
        if drift > tol {
            failure = Some(format!(
                "mass drifted by {drift:.3e} at t = {:.6e} (budget {tol:.3e})",
                next.t
            ));
            break;
        }
        let vinf = next.v.linf_norm();
        let increase = vinf - prev_vinf;
        if increase > 0.0 {
            stats.max_vinf_step_increase = stats.max_vinf_step_increase.max(increase);
            if increase > guard::VINF_SLACK {
                failure = Some(format!(
                    "max principle violated at t = {:.6e}: vinf rose by {increase:.3e}",
                    next.t
                ));
                break;
            }
        }
        prev_vinf = vinf;
        let min_u = next.u.min_value();
        let min_v = next.v.min_value();
        stats.min_u = stats.min_u.min(min_u);
        stats.min_v = stats.min_v.min(min_v);
        let neg_budget = guard::NEGATIVITY * (1.0 + next.u.linf_norm().max(vinf));
        if min_u < -neg_budget || min_v < -neg_budget {
            failure = Some(format!(
                "negativity at t = {:.6e}: min u = {min_u:.3e}, min v = {min_v:.3e}",
                next.t
            ));
            break;
        }
        stats.max_solver_residual = stats.max_solver_residual.max(residual);

        current = next;
        if step % record_every == 0 || step == n_steps {
            record(&current, &mut records, &mut snapshots);
        }
    }

    let complete = failure.is_none();
    let meta = RunMeta {
        mass0: current.mass0,
        ubar0: current.ubar0,
        v0_linf,
        epsilon: cfg.epsilon,
        dt,
        record_every,
        cadence: record_every as f64 * dt,
        steps: n_steps,
    };
    Ok(Trajectory {
        config: cfg.clone(),
        meta,
        stats,
        records,
        snapshots,
        warnings,
        complete,
        failure,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::build_grid;
    use crate::motility::MotilitySpec;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn phi_power() -> RegularizedMotility {
        RegularizedMotility::new(&MotilitySpec::power(1.0, 1.0).unwrap(), 0.01).unwrap()
    }

    fn random_state(grid: Grid, eps: f64, rng: &mut StdRng) -> State {
        let u = Field::new(
            grid,
            (0..grid.n_cells())
                .map(|_| rng.random_range(0.2..1.5))
                .collect(),
        )
        .unwrap();
        let v = Field::new(
            grid,
            (0..grid.n_cells())
                .map(|_| rng.random_range(0.2..1.0))
                .collect(),
        )
        .unwrap();
        State::initial(u, v, eps).unwrap()
    }

    #[test]
    fn thomas_matches_dense_solve() {
        let mut rng = StdRng::seed_from_u64(1);
        let n = 12;
        for _ in 0..20 {
            // diagonally dominant random system
            let sub: Vec<f64> = (0..n).map(|_| -rng.random_range(0.1..1.0)).collect();
            let sup: Vec<f64> = (0..n).map(|_| -rng.random_range(0.1..1.0)).collect();
            let diag: Vec<f64> = (0..n)
                .map(|i| {
                    1.0 + sub[i].abs()
                        + sup[i].abs()
                        + rng.random_range(0.0..0.5)
                })
                .collect();
            let rhs: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let x = thomas(&sub, &diag, &sup, &rhs);
            let mut dense = nalgebra::DMatrix::<f64>::zeros(n, n);
            for i in 0..n {
                dense[(i, i)] = diag[i];
                if i > 0 {
                    dense[(i, i - 1)] = sub[i];
                }
                if i + 1 < n {
                    dense[(i, i + 1)] = sup[i];
                }
            }
            let expect = dense
                .lu()
                .solve(&nalgebra::DVector::from_vec(rhs.clone()))
                .unwrap();
            for (a, b) in x.iter().zip(expect.iter()) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn cg_solves_spd_system() {
        let grid = build_grid(2, &[1.0, 1.0], &[6, 6]).unwrap();
        let mut rng = StdRng::seed_from_u64(2);
        let b: Vec<f64> = (0..grid.n_cells()).map(|_| rng.random_range(0.0..1.0)).collect();
        let dt = 0.01;
        let apply = |z: &[f64], out: &mut [f64]| {
            laplacian_slice(&grid, z, out);
            for i in 0..z.len() {
                out[i] = z[i] - dt * out[i];
            }
        };
        let (x, res) =
            conjugate_gradient(&apply, &b, &vec![0.0; b.len()], SolverConfig::default()).unwrap();
        assert!(res <= 1e-12);
        let mut ax = vec![0.0; b.len()];
        apply(&x, &mut ax);
        for (a, bb) in ax.iter().zip(&b) {
            assert!((a - bb).abs() < 1e-10);
        }
    }

    #[test]
    fn imex_constant_data_reduce_to_ode() {
        let grid = build_grid(1, &[1.0], &[16]).unwrap();
        let eps = 0.01;
        let ubar = 2.0;
        let vbar = 0.7;
        let s = State::initial(
            Field::constant(grid, ubar),
            Field::constant(grid, vbar),
            eps,
        )
        .unwrap();
        let dt = 1e-2;
        let next = step_imex(&s, dt, &phi_power(), SolverConfig::default()).unwrap();
        let expect_v = vbar / (1.0 + dt * ubar / (1.0 + eps * ubar));
        for u in next.u.values() {
            assert!((u - ubar).abs() < 1e-13);
        }
        for v in next.v.values() {
            assert!((v - expect_v).abs() < 1e-13);
        }
    }

    #[test]
    fn imex_zero_population_is_heat_flow() {
        let grid = build_grid(1, &[1.0], &[32]).unwrap();
        let u = Field::zeros(grid);
        let v = Field::from_fn(grid, |x| 1.0 + (std::f64::consts::PI * x[0]).cos());
        let mut s = State::initial(u, v, 0.1).unwrap();
        let mut prev = s.v.linf_norm();
        for _ in 0..50 {
            s = step_imex(&s, 1e-3, &phi_power(), SolverConfig::default()).unwrap();
            assert!(s.u.values().iter().all(|u| *u == 0.0));
            let vinf = s.v.linf_norm();
            assert!(vinf <= prev + 1e-14);
            prev = vinf;
        }
    }

    #[test]
    fn imex_conserves_mass_and_positivity_1d() {
        let grid = build_grid(1, &[1.0], &[48]).unwrap();
        let mut rng = StdRng::seed_from_u64(3);
        let mut s = random_state(grid, 0.05, &mut rng);
        let mass0 = s.mass0;
        let mut vinf = s.v.linf_norm();
        for _ in 0..500 {
            s = step_imex(&s, 2e-3, &phi_power(), SolverConfig::default()).unwrap();
            assert!(s.u.min_value() >= 0.0, "Thomas keeps u nonnegative exactly");
            assert!(s.v.min_value() >= 0.0);
            let now = s.v.linf_norm();
            assert!(now <= vinf + 1e-12);
            vinf = now;
        }
        assert!((s.u.integrate() - mass0).abs() < 1e-11 * mass0);
    }

    #[test]
    fn imex_conserves_mass_and_positivity_2d() {
        let grid = build_grid(2, &[1.0, 1.0], &[10, 10]).unwrap();
        let mut rng = StdRng::seed_from_u64(4);
        let mut s = random_state(grid, 0.02, &mut rng);
        let mass0 = s.mass0;
        let mut vinf = s.v.linf_norm();
        for _ in 0..200 {
            s = step_imex(&s, 1e-3, &phi_power(), SolverConfig::default()).unwrap();
            assert!(s.u.min_value() > -1e-11);
            assert!(s.v.min_value() > -1e-12);
            let now = s.v.linf_norm();
            assert!(now <= vinf + 1e-11);
            vinf = now;
        }
        assert!((s.u.integrate() - mass0).abs() < 1e-10 * mass0);
    }

    #[test]
    fn explicit_constant_data_exact() {
        let grid = build_grid(1, &[1.0], &[16]).unwrap();
        let eps = 0.3;
        let ubar = 1.2;
        let vbar = 0.9;
        let s = State::initial(
            Field::constant(grid, ubar),
            Field::constant(grid, vbar),
            eps,
        )
        .unwrap();
        let dt = 1e-3;
        let next = step_explicit(&s, dt, &phi_power()).unwrap();
        let expect_v = vbar * (1.0 - dt * ubar / (1.0 + eps * ubar));
        for u in next.u.values() {
            assert!((u - ubar).abs() < 1e-14);
        }
        for v in next.v.values() {
            assert!((v - expect_v).abs() < 1e-14);
        }
    }

    #[test]
    fn explicit_mass_after_1000_random_steps() {
        let grid = build_grid(1, &[1.0], &[32]).unwrap();
        let mut rng = StdRng::seed_from_u64(5);
        let mut s = random_state(grid, 0.0, &mut rng);
        let phi = RegularizedMotility::limit(&MotilitySpec::power(1.0, 1.0).unwrap());
        let dt = 0.5 * dt_cfl(&s, &phi, 1.0);
        let mass0 = s.mass0;
        for _ in 0..1000 {
            s = step_explicit(&s, dt, &phi).unwrap();
            assert!(s.u.min_value() >= 0.0);
            assert!(s.v.min_value() >= 0.0);
        }
        assert!((s.u.integrate() - mass0).abs() <= 1e-12 * mass0);
    }

    #[test]
    fn explicit_rejects_cfl_violation() {
        let grid = build_grid(1, &[1.0], &[32]).unwrap();
        let mut rng = StdRng::seed_from_u64(6);
        let s = random_state(grid, 0.0, &mut rng);
        let phi = phi_power();
        let limit = dt_cfl(&s, &phi, 1.0);
        let err = step_explicit(&s, 2.0 * limit, &phi).unwrap_err();
        assert!(err.to_string().contains("CFL"));
    }

    #[test]
    fn dt_cfl_examples() {
        // 1D, h = 0.125, φ_ε ≤ 1.5, safety 0.9: 0.9·h²/(2·1.5)
        let grid = build_grid(1, &[1.0], &[8]).unwrap();
        let s = State::initial(Field::zeros(grid), Field::zeros(grid), 0.5).unwrap();
        let phi = RegularizedMotility::new(&MotilitySpec::power(1.0, 1.0).unwrap(), 0.5).unwrap();
        // φ_ε(0) = 1.5 is the max on v ≡ 0
        let got = dt_cfl(&s, &phi, 0.9);
        assert!((got - 0.9 * 0.125 * 0.125 / 3.0).abs() < 1e-15);

        // u ≡ 0: v-limit is pure diffusion h²/2, u-limit dominates through φ
        let phi1 = RegularizedMotility::limit(&MotilitySpec::custom(|_| (1.0, 0.0)).unwrap());
        let got = dt_cfl(&s, &phi1, 1.0);
        assert!((got - 0.125 * 0.125 / 2.0).abs() < 1e-15);

        // dim = 2 halves the diffusion limit at equal h
        let grid2 = build_grid(2, &[1.0, 1.0], &[8, 8]).unwrap();
        let s2 = State::initial(Field::zeros(grid2), Field::zeros(grid2), 0.5).unwrap();
        let got2 = dt_cfl(&s2, &phi1, 1.0);
        assert!((got2 - 0.125 * 0.125 / 4.0).abs() < 1e-15);
    }

    #[test]
    fn homogeneous_data_stay_homogeneous() {
        let grid = build_grid(1, &[2.0], &[64]).unwrap();
        let mut s = State::initial(
            Field::constant(grid, 1.0),
            Field::constant(grid, 1.0),
            0.01,
        )
        .unwrap();
        for _ in 0..200 {
            s = step_imex(&s, 5e-3, &phi_power(), SolverConfig::default()).unwrap();
            let um = s.u.mean();
            let vm = s.v.mean();
            for u in s.u.values() {
                assert!((u - um).abs() < 1e-12);
            }
            for v in s.v.values() {
                assert!((v - vm).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn explicit_self_convergence_first_order() {
        // Richardson-style study: successive dt halvings shrink the
        // solution differences at order ≈ 1
        let grid = build_grid(1, &[1.0], &[16]).unwrap();
        let u = Field::from_fn(grid, |x| 1.0 + 0.4 * (std::f64::consts::PI * x[0]).cos());
        let v = Field::from_fn(grid, |x| 1.0 + 0.3 * (std::f64::consts::PI * x[0]).cos());
        let phi = phi_power();
        let t_end = 0.02;
        let run_to = |dt: f64| {
            let mut s = State::initial(u.clone(), v.clone(), 0.01).unwrap();
            for _ in 0..(t_end / dt).round() as usize {
                s = step_explicit(&s, dt, &phi).unwrap();
            }
            s
        };
        let base = 4e-4;
        let a = run_to(base);
        let b = run_to(base / 2.0);
        let c = run_to(base / 4.0);
        let e1 = a.u.l2_distance(&b.u) + a.v.l2_distance(&b.v);
        let e2 = b.u.l2_distance(&c.u) + b.v.l2_distance(&c.v);
        let order = (e1 / e2).log2();
        assert!((order - 1.0).abs() <= 0.2, "order {order}");
    }

    #[test]
    fn run_2d_preserves_structure() {
        use crate::config::test_support::minimal_config;
        let mut cfg = minimal_config();
        cfg.grid = crate::config::GridConfig {
            dim: 2,
            extents: vec![1.0, 1.0],
            cells: vec![8, 8],
        };
        cfg.initial.u0 = crate::config::U0Config::bump(vec![0.5, 0.5], 0.2, 1.0);
        cfg.stepper.dt = 5e-4;
        cfg.output.t_end = 0.05;
        cfg.output.cadence = 0.005;
        let traj = run(&cfg).unwrap();
        assert!(traj.complete, "{:?}", traj.failure);
        assert!(traj.stats.max_mass_drift <= 1e-10 * traj.meta.mass0);
        assert!(traj.stats.max_vinf_step_increase <= 1e-12);
        assert!(traj.stats.min_u > -1e-12);
        assert!(traj.stats.min_v > -1e-12);
        assert!(traj.stats.max_solver_residual <= cfg.stepper.solver_tol * 1.01);
    }

    #[test]
    fn imex_explicit_consistency_small() {
        // short-horizon agreement between the two schemes
        let grid = build_grid(1, &[1.0], &[8]).unwrap();
        let u = Field::from_fn(grid, |x| 1.0 + 0.3 * (std::f64::consts::PI * x[0]).cos());
        let v = Field::from_fn(grid, |x| 1.0 + 0.25 * (std::f64::consts::PI * x[0]).cos());
        let phi = phi_power();
        let t_end = 0.02;

        let mut a = State::initial(u.clone(), v.clone(), 0.01).unwrap();
        let dt_a = 1e-4;
        for _ in 0..(t_end / dt_a) as usize {
            a = step_imex(&a, dt_a, &phi, SolverConfig::default()).unwrap();
        }
        let mut b = State::initial(u, v, 0.01).unwrap();
        let dt_b = 1e-6;
        for _ in 0..(t_end / dt_b) as usize {
            b = step_explicit(&b, dt_b, &phi).unwrap();
        }
        let rel_u = a.u.l2_distance(&b.u) / b.u.l2_norm();
        let rel_v = a.v.l2_distance(&b.v) / b.v.l2_norm();
        assert!(rel_u < 1e-3, "u mismatch {rel_u}");
        assert!(rel_v < 1e-3, "v mismatch {rel_v}");
    }
}
