//! Re-audit of a stored trajectory: every per-record structural
//! invariant and cumulative bound is recomputed from the persisted data,
//! never trusted from stored report files. Functionals are additionally
//! recomputed from the field snapshots and compared against the stored
//! diag.csv columns, so a tampered run directory cannot pass.

use ksm_core::diagnostics::{self, DiagRecord, Trajectory};
use ksm_core::error::{KsmError, Result};
use ksm_core::stepper::State;

const MASS_REL: f64 = 1e-10;
const MASS_ABS: f64 = 1e-12;
const VINF_SLACK: f64 = 1e-12;
/// Recomputation tolerance against stored columns; persisted values
/// round-trip bit-exactly, so this only allows for harmless libm
/// differences across platforms.
const RECOMPUTE_REL: f64 = 1e-12;

fn fail(what: &str) -> KsmError {
    KsmError::Audit(what.to_string())
}

fn columns(r: &DiagRecord) -> [(&'static str, f64); 12] {
    [
        ("t", r.t),
        ("mass", r.mass),
        ("vinf", r.vinf),
        ("grad2", r.grad2),
        ("grad4", r.grad4),
        ("lap2", r.lap2),
        ("udev2", r.udev2),
        ("uL2", r.u_l2),
        ("hm1", r.hm1),
        ("y", r.y),
        ("F", r.f_energy),
        ("absorb", r.absorb),
    ]
}

pub fn audit_trajectory(traj: &Trajectory) -> Result<()> {
    if traj.records.is_empty() {
        return Err(fail("trajectory has no records"));
    }
    if !traj.complete {
        eprintln!("[check] note: trajectory flagged incomplete ({:?})", traj.failure);
    }

    for r in &traj.records {
        if !r.is_finite_nonnegative() {
            return Err(fail(&format!(
                "record at t = {} carries non-finite or negative entries",
                r.t
            )));
        }
    }
    eprintln!("[check] record sanity: ok ({} records)", traj.records.len());

    // mass conservation against the manifest's conserved mass
    let mass0 = traj.meta.mass0;
    for r in &traj.records {
        let tol = if mass0 > 0.0 { MASS_REL * mass0 } else { MASS_ABS };
        if (r.mass - mass0).abs() > tol {
            return Err(fail(&format!(
                "mass at t = {} deviates from {} by {:.3e} (budget {:.3e})",
                r.t,
                mass0,
                (r.mass - mass0).abs(),
                tol
            )));
        }
    }
    eprintln!("[check] mass conservation: ok (mass0 = {mass0})");

    for pair in traj.records.windows(2) {
        if pair[1].vinf > pair[0].vinf + VINF_SLACK {
            return Err(fail(&format!(
                "signal sup norm rises at t = {} by {:.3e}",
                pair[1].t,
                pair[1].vinf - pair[0].vinf
            )));
        }
    }
    eprintln!("[check] signal maximum principle: ok");

    // recompute every functional from the stored fields
    if traj.snapshots.len() == traj.records.len() {
        let (a, b) = (traj.config.functionals.a, traj.config.functionals.b);
        for (r, snap) in traj.records.iter().zip(&traj.snapshots) {
            let state = State::resume(
                snap.t,
                snap.u.clone(),
                snap.v.clone(),
                traj.meta.epsilon,
                traj.meta.mass0,
                traj.meta.ubar0,
            )?;
            let fresh = diagnostics::snapshot_weighted(&state, a, b);
            for ((name, stored), (_, recomputed)) in
                columns(r).iter().zip(columns(&fresh).iter())
            {
                if (stored - recomputed).abs() > RECOMPUTE_REL * (1.0 + recomputed.abs()) {
                    return Err(fail(&format!(
                        "stored {name} at t = {} is {stored:.17e} but the fields give {recomputed:.17e}",
                        r.t
                    )));
                }
            }
        }
        eprintln!("[check] functionals vs snapshots: ok");
    } else {
        eprintln!(
            "[check] functionals vs snapshots: skipped ({} snapshots for {} records)",
            traj.snapshots.len(),
            traj.records.len()
        );
    }

    if traj.records.len() >= 2 {
        let bounds = diagnostics::cumulative_bounds(traj)?;
        eprint!("{}", indent(&bounds.render()));
        if !bounds.pass() {
            return Err(fail("a cumulative explicit bound is violated beyond slack"));
        }
    }

    if traj.records.len() >= 3 && traj.snapshots.len() == traj.records.len() {
        let scan = diagnostics::inequality_scan(traj)?;
        eprint!("{}", indent(&scan.render()));
        if !scan.all_finite() {
            return Err(fail("an empirical inequality constant is not finite"));
        }
    }

    if traj.records.len() >= 2 {
        let decay = diagnostics::decay_metrics(traj)?;
        eprint!("{}", indent(&decay.render()));
    }

    eprintln!("[check] all audits passed");
    Ok(())
}

fn indent(text: &str) -> String {
    text.lines()
        .map(|l| format!("[check] {l}\n"))
        .collect::<String>()
}
