//! Per-trajectory verification: functional snapshots, cumulative explicit
//! bounds, empirical inequality constants, weak-form residuals, ODI
//! supersolution fits and decay metrics.
//!
//! The philosophy throughout: the analysis guarantees existence of
//! constants; the harness inverts that and reports the smallest constant
//! that validates each inequality along the sampled trajectory, asserting
//! only finiteness and step-size stability. Time derivatives are centered
//! differences of stored functionals at the output cadence.

use crate::config::RunConfig;
use crate::error::{KsmError, Result};
use crate::geometry::{Field, Grid};
use crate::motility::RegularizedMotility;
use crate::spectral;
use crate::stepper::State;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// One row of diag.csv: every functional the harness tracks, at one time.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagRecord {
    pub t: f64,
    /// ∫u.
    pub mass: f64,
    /// ‖v‖_∞.
    pub vinf: f64,
    /// ∫|∇v|².
    pub grad2: f64,
    /// ∫|∇v|⁴.
    pub grad4: f64,
    /// ∫|Δv|².
    pub lap2: f64,
    /// ∫(u − ū₀)².
    pub udev2: f64,
    /// ∫u².
    pub u_l2: f64,
    /// ‖A^{−1/2}(u − ū₀)‖²_{L²}.
    pub hm1: f64,
    /// hm1 + a·grad2.
    pub y: f64,
    /// hm1 + b·grad2.
    pub f_energy: f64,
    /// ∫ u·v/(1+εu).
    pub absorb: f64,
}

/// The exact diag.csv column set, in order.
pub const DIAG_COLUMNS: [&str; 12] = [
    "t", "mass", "vinf", "grad2", "grad4", "lap2", "udev2", "uL2", "hm1", "y", "F", "absorb",
];

/// Evaluate every tracked functional on a state (the `snapshot`
/// operation), with unit weights for y and F.
pub fn snapshot(s: &State) -> DiagRecord {
    snapshot_weighted(s, 1.0, 1.0)
}

/// Snapshot with configured functional weights a (for y) and b (for F).
pub fn snapshot_weighted(s: &State, a: f64, b: f64) -> DiagRecord {
    let grad2 = s.v.grad_power_integral(2).expect("p = 2 is supported");
    let grad4 = s.v.grad_power_integral(4).expect("p = 4 is supported");
    let lap2 = s.v.laplacian_neumann().l2_norm_sq();
    let udev2 = s.u.map(|u| u - s.ubar0).l2_norm_sq();
    let hm1 = spectral::hminus_half_norm_sq(&s.u, s.ubar0);
    let absorb = s
        .u
        .zip_map(&s.v, |u, v| u * v / (1.0 + s.eps * u))
        .integrate();
    DiagRecord {
        t: s.t,
        mass: s.u.integrate(),
        vinf: s.v.linf_norm(),
        grad2,
        grad4,
        lap2,
        udev2,
        u_l2: s.u.l2_norm_sq(),
        hm1,
        y: hm1 + a * grad2,
        f_energy: hm1 + b * grad2,
        absorb,
    }
}

impl DiagRecord {
    pub fn is_finite_nonnegative(&self) -> bool {
        let entries = [
            self.mass,
            self.vinf,
            self.grad2,
            self.grad4,
            self.lap2,
            self.udev2,
            self.u_l2,
            self.hm1,
            self.y,
            self.f_energy,
            self.absorb,
        ];
        self.t.is_finite() && entries.iter().all(|v| v.is_finite() && *v >= -1e-14)
    }
}

/// Fields stored alongside a diagnostic record.
#[derive(Debug, Clone)]
pub struct FieldSnapshot {
    pub t: f64,
    pub u: Field,
    pub v: Field,
}

/// Scalar context of a run, echoed into the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub mass0: f64,
    pub ubar0: f64,
    /// ‖v₀‖_∞ of the specified datum (before the positivity floor); the
    /// explicit bounds are stated in terms of this value.
    pub v0_linf: f64,
    pub epsilon: f64,
    /// Effective step size.
    pub dt: f64,
    pub record_every: usize,
    /// Effective cadence = record_every·dt.
    pub cadence: f64,
    pub steps: usize,
}

/// Per-step monitors accumulated over a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub max_mass_drift: f64,
    pub max_vinf_step_increase: f64,
    pub min_u: f64,
    pub min_v: f64,
    pub max_solver_residual: f64,
}

/// A completed (or aborted) run: records and field snapshots at the
/// output cadence plus the run's configuration and monitors.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub config: RunConfig,
    pub meta: RunMeta,
    pub stats: RunStats,
    pub records: Vec<DiagRecord>,
    pub snapshots: Vec<FieldSnapshot>,
    pub warnings: Vec<String>,
    pub complete: bool,
    pub failure: Option<String>,
}

impl Trajectory {
    /// Index of the record nearest to time `t`.
    pub fn record_nearest(&self, t: f64) -> usize {
        let mut best = 0;
        let mut dist = f64::INFINITY;
        for (i, r) in self.records.iter().enumerate() {
            let d = (r.t - t).abs();
            if d < dist {
                dist = d;
                best = i;
            }
        }
        best
    }

    /// The regularized motility this run stepped with.
    pub fn motility(&self) -> Result<RegularizedMotility> {
        let spec = self.config.motility.to_spec()?;
        if self.meta.epsilon == 0.0 {
            Ok(RegularizedMotility::limit(&spec))
        } else {
            RegularizedMotility::new(&spec, self.meta.epsilon)
        }
    }

    /// Number of leading records with uniform spacing. All records
    /// qualify when the cadence is uniform; a single short trailing
    /// interval (horizon not a cadence multiple) drops the final record.
    fn uniform_prefix(&self) -> Result<usize> {
        let m = self.records.len();
        if m < 2 {
            return Ok(m);
        }
        let dt0 = self.records[1].t - self.records[0].t;
        let uniform_until = (1..m)
            .take_while(|i| {
                let d = self.records[*i].t - self.records[*i - 1].t;
                (d - dt0).abs() <= 1e-9 * dt0.max(1e-300)
            })
            .count()
            + 1;
        if uniform_until == m {
            Ok(m)
        } else if uniform_until == m - 1 {
            Ok(m - 1)
        } else {
            Err(KsmError::Validation(
                "record times are not uniformly spaced".into(),
            ))
        }
    }
}

/// Trapezoidal quadrature of a record-indexed quantity over [0, T].
fn trapezoid(records: &[DiagRecord], f: impl Fn(&DiagRecord) -> f64) -> f64 {
    let mut acc = 0.0;
    for pair in records.windows(2) {
        let dt = pair[1].t - pair[0].t;
        acc += 0.5 * dt * (f(&pair[0]) + f(&pair[1]));
    }
    acc
}

// ---------------------------------------------------------------------------
// cumulative explicit bounds

/// Relative quadrature slack granted when comparing a cumulative integral
/// against its closed-form bound.
pub const BOUND_SLACK: f64 = 1e-8;

/// Cumulative absorption and gradient integrals against their explicit
/// closed-form bounds |Ω|(‖v₀‖_∞+1) and ½|Ω|(‖v₀‖_∞+1)².
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub t_final: f64,
    pub absorb_integral: f64,
    pub absorb_bound: f64,
    pub absorb_pass: bool,
    pub absorb_margin: f64,
    pub grad2_integral: f64,
    pub grad2_bound: f64,
    pub grad2_pass: bool,
    pub grad2_margin: f64,
    /// Set when the trajectory was flagged incomplete.
    pub partial: bool,
}

/// Time-integrate the absorption and gradient functionals and compare
/// them with the explicit bounds (the `cumulative_bounds` operation).
pub fn cumulative_bounds(traj: &Trajectory) -> Result<BoundReport> {
    if traj.records.len() < 2 {
        return Err(KsmError::Validation(
            "cumulative bounds need at least 2 records".into(),
        ));
    }
    let measure = traj.config.grid.build()?.measure();
    let cap = traj.meta.v0_linf + 1.0;
    let absorb_bound = measure * cap;
    let grad2_bound = 0.5 * measure * cap * cap;
    let absorb_integral = trapezoid(&traj.records, |r| r.absorb);
    let grad2_integral = trapezoid(&traj.records, |r| r.grad2);
    Ok(BoundReport {
        t_final: traj.records.last().unwrap().t,
        absorb_integral,
        absorb_bound,
        absorb_pass: absorb_integral <= absorb_bound * (1.0 + BOUND_SLACK),
        absorb_margin: absorb_bound - absorb_integral,
        grad2_integral,
        grad2_bound,
        grad2_pass: grad2_integral <= grad2_bound * (1.0 + BOUND_SLACK),
        grad2_margin: grad2_bound - grad2_integral,
        partial: !traj.complete,
    })
}

impl BoundReport {
    pub fn pass(&self) -> bool {
        self.absorb_pass && self.grad2_pass
    }

    pub fn render(&self) -> String {
        let mut s = String::from("cumulative bounds\n");
        if self.partial {
            s.push_str("  status: PARTIAL (incomplete trajectory)\n");
        }
        s.push_str(&format!("  horizon: {:.16e}\n", self.t_final));
        s.push_str(&format!(
            "  absorption integral: {:.16e}  bound: {:.16e}  margin: {:.16e}  {}\n",
            self.absorb_integral,
            self.absorb_bound,
            self.absorb_margin,
            if self.absorb_pass { "PASS" } else { "FAIL" }
        ));
        s.push_str(&format!(
            "  gradient integral:   {:.16e}  bound: {:.16e}  margin: {:.16e}  {}\n",
            self.grad2_integral,
            self.grad2_bound,
            self.grad2_margin,
            if self.grad2_pass { "PASS" } else { "FAIL" }
        ));
        s
    }
}

// ---------------------------------------------------------------------------
// inequality scans

/// Empirical constant for one scanned inequality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaScan {
    /// Smallest constant validating the inequality at every scanned time.
    pub constant: f64,
    /// Time of the binding step.
    pub binding_t: f64,
    /// Interior times entering the scan.
    pub scanned: usize,
    /// Times excluded by the noise floor on the right-hand-side weight.
    pub skipped: usize,
}

/// Minimal empirical constants over a trajectory for the four scanned
/// dissipation inequalities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InequalityReport {
    /// d/dt ∫|∇v|² + ½∫|Δv|² + (1/Γ)∫|∇v|⁴ ≤ Γ·∫(u−ū₀)².
    pub gamma1: GammaScan,
    /// d/dt hm1 + (1/Γ)∫(u−ū₀)² ≤ Γ·∫|ū₀φ_ε(v) − mean(uφ_ε(v))|².
    pub gamma2: GammaScan,
    /// d/dt hm1 + (1/Γ)∫(u−ū₀)² ≤ Γ·‖∇v‖²_{L⁴}.
    pub gamma3: GammaScan,
    /// d/dt F + (1/Γ)∫(u−ū₀)² + (1/Γ)∫|∇v|⁴ ≤ Γ·∫|∇v|².
    pub gamma4: GammaScan,
    /// Set when centered differences at the cadence look under-resolved.
    pub low_confidence: bool,
}

/// Relative floor under which a scan time's right-hand-side weight is
/// considered numerically silent and skipped (the inequality carries no
/// information there once every functional sits at rounding level).
const SCAN_FLOOR_REL: f64 = 1e-8;

/// Per-cell relative rounding budget of a stored field over a whole run;
/// matches the homogeneous-exactness guarantee of the stepper.
const FIELD_NOISE: f64 = 1e-11;

/// Absolute rounding floors of the quadratic functionals on one run.
/// Values at or below their floor are indistinguishable from an exact
/// zero and are treated as such by the scans.
struct NoiseFloors {
    udev2: f64,
    grad2: f64,
    grad4: f64,
    lap2: f64,
    hm1: f64,
    rhs31: f64,
}

impl NoiseFloors {
    fn from(traj: &Trajectory, phi: &RegularizedMotility) -> Result<NoiseFloors> {
        let grid = traj.config.grid.build()?;
        let measure = grid.measure();
        let h_min = grid
            .widths()
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        let u_scale = traj.records.iter().fold(0.0f64, |m, r| {
            m.max((r.u_l2 / measure).sqrt())
        }) + traj.meta.ubar0.abs();
        let v_scale = traj.records.iter().fold(0.0f64, |m, r| m.max(r.vinf)) + 1.0;
        let w_scale = {
            // motilities need not be monotone; sample the reachable range
            let mut m = 0.0f64;
            for i in 0..=64 {
                let xi = v_scale * i as f64 / 64.0;
                m = m.max(phi.value(xi).abs());
            }
            m
        };
        let sq = |x: f64| x * x;
        let u_noise = FIELD_NOISE * u_scale;
        let v_noise = FIELD_NOISE * v_scale;
        Ok(NoiseFloors {
            udev2: sq(u_noise) * measure,
            grad2: sq(v_noise / h_min) * measure,
            grad4: sq(sq(v_noise / h_min)) * measure,
            lap2: sq(v_noise / (h_min * h_min)) * measure,
            hm1: sq(u_noise) * measure,
            rhs31: sq(u_noise * w_scale) * measure,
        })
    }
}

fn clamp_noise(x: f64, floor: f64) -> f64 {
    if x.abs() <= floor {
        0.0
    } else {
        x
    }
}

/// Minimal Γ ≥ 0 with Γ²·a − b·Γ − c ≥ 0, for a, c ≥ 0; +∞ when no
/// finite constant works.
fn minimal_gamma(a: f64, b: f64, c: f64) -> f64 {
    debug_assert!(a >= 0.0 && c >= 0.0);
    if a > 0.0 {
        let root = (b + (b * b + 4.0 * a * c).sqrt()) / (2.0 * a);
        root.max(0.0)
    } else if c == 0.0 {
        if b <= 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else if b < 0.0 {
        c / (-b)
    } else {
        f64::INFINITY
    }
}

struct ScanInput {
    t: f64,
    /// Right-hand-side weight (multiplies Γ).
    a: f64,
    /// Drift term (the time derivative plus any fixed dissipation).
    b: f64,
    /// Left-hand-side dissipation (multiplies 1/Γ).
    c: f64,
}

fn aggregate_scan(inputs: &[ScanInput]) -> GammaScan {
    let a_max = inputs.iter().fold(0.0f64, |m, s| m.max(s.a));
    let mut constant = 0.0f64;
    let mut binding_t = f64::NAN;
    let mut scanned = 0;
    let mut skipped = 0;
    for s in inputs {
        if a_max > 0.0 && s.a < SCAN_FLOOR_REL * a_max {
            skipped += 1;
            continue;
        }
        scanned += 1;
        let g = minimal_gamma(s.a, s.b, s.c);
        if g > constant || binding_t.is_nan() {
            constant = g;
            binding_t = s.t;
        }
    }
    GammaScan {
        constant,
        binding_t,
        scanned,
        skipped,
    }
}

/// Scan the four inequalities over the stored records (the
/// `inequality_scan` operation). Uses the run's own motility for the
/// coefficient-fluctuation term.
pub fn inequality_scan(traj: &Trajectory) -> Result<InequalityReport> {
    let phi = traj.motility()?;
    inequality_scan_with(traj, &phi)
}

/// Same as [`inequality_scan`] with an explicit motility.
pub fn inequality_scan_with(
    traj: &Trajectory,
    phi: &RegularizedMotility,
) -> Result<InequalityReport> {
    let m = traj.uniform_prefix()?;
    if m < 3 {
        return Err(KsmError::Validation(
            "inequality scan needs at least 3 uniformly spaced records".into(),
        ));
    }
    let records = &traj.records[..m];
    if traj.snapshots.len() < m {
        return Err(KsmError::Validation(
            "inequality scan needs field snapshots at every record".into(),
        ));
    }
    let ubar0 = traj.meta.ubar0;

    // coefficient-fluctuation integrand of the dual-norm inequality,
    // computed exactly from the stored fields
    let rhs_fluct: Vec<f64> = traj.snapshots[..m]
        .iter()
        .map(|snap| {
            let w = snap.v.map(|v| phi.value(v.max(0.0)));
            let mean_uw = snap.u.zip_map(&w, |u, w| u * w).mean();
            w.map(|w| {
                let d = ubar0 * w - mean_uw;
                d * d
            })
            .integrate()
        })
        .collect();

    let deriv = |f: &dyn Fn(&DiagRecord) -> f64, i: usize| {
        (f(&records[i + 1]) - f(&records[i - 1])) / (records[i + 1].t - records[i - 1].t)
    };

    let floors = NoiseFloors::from(traj, phi)?;
    let cadence = records[1].t - records[0].t;
    let b_weight = traj.config.functionals.b;

    let mut in1 = Vec::new();
    let mut in2 = Vec::new();
    let mut in3 = Vec::new();
    let mut in4 = Vec::new();
    for i in 1..m - 1 {
        let r = &records[i];
        let udev2 = clamp_noise(r.udev2, floors.udev2);
        let grad2 = clamp_noise(r.grad2, floors.grad2);
        let grad4 = clamp_noise(r.grad4, floors.grad4);
        let lap2 = clamp_noise(r.lap2, floors.lap2);
        let fluct = clamp_noise(rhs_fluct[i], floors.rhs31);
        let d_grad2 = clamp_noise(deriv(&|r: &DiagRecord| r.grad2, i), floors.grad2 / cadence);
        let d_hm1 = clamp_noise(deriv(&|r: &DiagRecord| r.hm1, i), floors.hm1 / cadence);
        let d_f = clamp_noise(
            deriv(&|r: &DiagRecord| r.f_energy, i),
            (floors.hm1 + b_weight.abs() * floors.grad2) / cadence,
        );
        in1.push(ScanInput {
            t: r.t,
            a: udev2,
            b: d_grad2 + 0.5 * lap2,
            c: grad4,
        });
        in2.push(ScanInput {
            t: r.t,
            a: fluct,
            b: d_hm1,
            c: udev2,
        });
        in3.push(ScanInput {
            t: r.t,
            a: grad4.sqrt(),
            b: d_hm1,
            c: udev2,
        });
        in4.push(ScanInput {
            t: r.t,
            a: grad2,
            b: d_f,
            c: udev2 + grad4,
        });
    }

    // cadence-resolution check: stride-1 vs stride-2 derivative of the
    // gradient energy should agree in sign wherever it is significant
    let mut disagreements = 0usize;
    let mut significant = 0usize;
    let scale = records.iter().fold(0.0f64, |a, r| a.max(r.grad2));
    let span = records[m - 1].t - records[0].t;
    let floor = 1e-9 * (1.0 + scale) / span.max(1e-300);
    for i in 2..m - 2 {
        let d1 = deriv(&|r: &DiagRecord| r.grad2, i);
        let d2 = (records[i + 2].grad2 - records[i - 2].grad2)
            / (records[i + 2].t - records[i - 2].t);
        if d1.abs().max(d2.abs()) > floor {
            significant += 1;
            if d1 * d2 < 0.0 {
                disagreements += 1;
            }
        }
    }
    let low_confidence = significant > 0 && disagreements * 10 > significant;

    Ok(InequalityReport {
        gamma1: aggregate_scan(&in1),
        gamma2: aggregate_scan(&in2),
        gamma3: aggregate_scan(&in3),
        gamma4: aggregate_scan(&in4),
        low_confidence,
    })
}

impl InequalityReport {
    pub fn all_finite(&self) -> bool {
        [&self.gamma1, &self.gamma2, &self.gamma3, &self.gamma4]
            .iter()
            .all(|g| g.constant.is_finite())
    }

    pub fn render(&self) -> String {
        let mut s = String::from("empirical inequality constants\n");
        if self.low_confidence {
            s.push_str("  status: LOW CONFIDENCE (cadence under-resolves the derivatives)\n");
        }
        for (name, scan) in [
            ("gamma1 (gradient-energy dissipation)", &self.gamma1),
            ("gamma2 (dual-norm vs coefficient fluctuation)", &self.gamma2),
            ("gamma3 (dual-norm vs gradient L4 norm)", &self.gamma3),
            ("gamma4 (energy decay)", &self.gamma4),
        ] {
            s.push_str(&format!(
                "  {name}: {:.16e}  binding t: {:.16e}  scanned: {}  skipped: {}\n",
                scan.constant, scan.binding_t, scan.scanned, scan.skipped
            ));
        }
        s
    }
}

// ---------------------------------------------------------------------------
// ODI supersolution

/// Explicit supersolution ȳ(t) = c₇·(t − τ/2)^{−1/(κ−1)} + c₇ of the
/// superlinearly damped comparison inequality, defined on (τ/2, ∞).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdiSupersolution {
    pub tau: f64,
    pub kappa: f64,
    pub c7: f64,
}

/// Construct the supersolution (the `odi_supersolution` operation).
pub fn odi_supersolution(tau: f64, kappa: f64, c7: f64) -> Result<OdiSupersolution> {
    if !(tau > 0.0) {
        return Err(KsmError::Validation(format!("tau must be positive, got {tau}")));
    }
    if !(kappa > 1.0) {
        return Err(KsmError::Validation(format!(
            "kappa must exceed 1, got {kappa}"
        )));
    }
    if !(c7 > 0.0) {
        return Err(KsmError::Validation(format!("c7 must be positive, got {c7}")));
    }
    Ok(OdiSupersolution { tau, kappa, c7 })
}

impl OdiSupersolution {
    /// ȳ(t); rejects t ≤ τ/2 where the profile blows up.
    pub fn eval(&self, t: f64) -> Result<f64> {
        if t <= self.tau / 2.0 {
            return Err(KsmError::Validation(format!(
                "supersolution is defined for t > tau/2 = {}, got {t}",
                self.tau / 2.0
            )));
        }
        Ok(self.c7 * (t - self.tau / 2.0).powf(-1.0 / (self.kappa - 1.0)) + self.c7)
    }
}

/// Fit of the supersolution envelope to a trajectory's y-series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OdiFit {
    pub tau: f64,
    pub kappa: f64,
    /// Smallest c₇ with y(t) ≤ ȳ(t) at every sampled t > τ.
    pub c7_min: f64,
    pub binding_t: f64,
}

/// Smallest supersolution prefactor dominating the sampled y-series for
/// t > τ.
pub fn odi_fit(traj: &Trajectory, tau: f64, kappa: f64) -> Result<OdiFit> {
    if !(tau > 0.0) || !(kappa > 1.0) {
        return Err(KsmError::Validation(
            "odi fit needs tau > 0 and kappa > 1".into(),
        ));
    }
    let mut c7_min = 0.0f64;
    let mut binding_t = f64::NAN;
    let mut seen = false;
    for r in &traj.records {
        if r.t <= tau {
            continue;
        }
        seen = true;
        let shape = (r.t - tau / 2.0).powf(-1.0 / (kappa - 1.0)) + 1.0;
        let c = r.y / shape;
        if c > c7_min || binding_t.is_nan() {
            c7_min = c;
            binding_t = r.t;
        }
    }
    if !seen {
        return Err(KsmError::Validation(format!(
            "no records beyond tau = {tau} to fit"
        )));
    }
    Ok(OdiFit {
        tau,
        kappa,
        c7_min,
        binding_t,
    })
}

impl OdiFit {
    pub fn render(&self) -> String {
        format!(
            "supersolution fit\n  tau: {:.16e}\n  kappa: {:.16e}\n  c7_min: {:.16e}\n  binding t: {:.16e}\n",
            self.tau, self.kappa, self.c7_min, self.binding_t
        )
    }
}

// ---------------------------------------------------------------------------
// weak residuals

/// Built-in space-time test function cos(k₀πx₀/L₀)·cos(k₁πx₁/L₁)·η(t)
/// with η a smooth bump supported in (t0, t1); satisfies the zero normal
/// derivative required of admissible test functions.
#[derive(Debug, Clone, PartialEq)]
pub struct TestFunction {
    pub k: [usize; 2],
    pub t0: f64,
    pub t1: f64,
}

impl TestFunction {
    pub fn new(k: &[usize], t0: f64, t1: f64) -> Result<TestFunction> {
        if !(t0 > 0.0) || !(t1 > t0) {
            return Err(KsmError::Validation(format!(
                "test function support needs 0 < t0 < t1, got ({t0}, {t1})"
            )));
        }
        let mut kk = [0usize; 2];
        for (i, v) in k.iter().enumerate() {
            if i >= 2 {
                return Err(KsmError::Validation(
                    "test function takes at most 2 wavenumbers".into(),
                ));
            }
            kk[i] = *v;
        }
        Ok(TestFunction { k: kk, t0, t1 })
    }

    fn bump(&self, t: f64) -> f64 {
        let s = (t - self.t0) / (self.t1 - self.t0);
        if s <= 0.0 || s >= 1.0 {
            0.0
        } else {
            (-1.0 / (s * (1.0 - s))).exp()
        }
    }

    fn bump_dt(&self, t: f64) -> f64 {
        let w = self.t1 - self.t0;
        let s = (t - self.t0) / w;
        if s <= 0.0 || s >= 1.0 {
            0.0
        } else {
            let q = s * (1.0 - s);
            -(2.0 * s - 1.0) / (q * q) * (-1.0 / q).exp() / w
        }
    }

    fn cosines(&self, grid: &Grid, x: &[f64]) -> f64 {
        let mut prod = 1.0;
        for (ax, xi) in x.iter().enumerate() {
            let l = grid.extents()[ax];
            prod *= (self.k[ax] as f64 * PI * xi / l).cos();
        }
        prod
    }

    fn laplacian_factor(&self, grid: &Grid) -> f64 {
        let mut lam = 0.0;
        for ax in 0..grid.dim() {
            let l = grid.extents()[ax];
            let kpi = self.k[ax] as f64 * PI / l;
            lam += kpi * kpi;
        }
        -lam
    }

    pub fn value(&self, grid: &Grid, x: &[f64], t: f64) -> f64 {
        self.cosines(grid, x) * self.bump(t)
    }

    pub fn dt(&self, grid: &Grid, x: &[f64], t: f64) -> f64 {
        self.cosines(grid, x) * self.bump_dt(t)
    }

    pub fn laplacian(&self, grid: &Grid, x: &[f64], t: f64) -> f64 {
        self.laplacian_factor(grid) * self.cosines(grid, x) * self.bump(t)
    }
}

/// Residuals of the two weak-form identities against a smooth test
/// function (the `weak_residual` operation): trapezoidal in time over the
/// stored records, midpoint in space, with analytic ψ_t and Δψ. The
/// motility enters through the unregularized φ and the absorption
/// unsaturated, matching the limit problem's weak formulation.
pub fn weak_residual(traj: &Trajectory, test: &TestFunction) -> Result<(f64, f64)> {
    if traj.snapshots.len() != traj.records.len() {
        return Err(KsmError::Validation(
            "weak residual needs field snapshots at every record".into(),
        ));
    }
    if traj.snapshots.len() < 2 {
        return Err(KsmError::Validation(
            "weak residual needs at least 2 records".into(),
        ));
    }
    let t_end = traj.snapshots.last().unwrap().t;
    if test.t1 > t_end {
        return Err(KsmError::Validation(format!(
            "test support ends at {} but the run stops at {t_end}",
            test.t1
        )));
    }
    let phi = traj.config.motility.to_spec()?;
    let grid = traj.snapshots[0].u.grid();

    let mut a_terms = Vec::with_capacity(traj.snapshots.len());
    let mut v_terms = Vec::with_capacity(traj.snapshots.len());
    for snap in &traj.snapshots {
        let t = snap.t;
        let psi_dt = Field::from_fn(*grid, |x| test.dt(grid, x, t));
        let psi_lap = Field::from_fn(*grid, |x| test.laplacian(grid, x, t));
        let psi = Field::from_fn(*grid, |x| test.value(grid, x, t));

        let u_phi_v = snap
            .u
            .zip_map(&snap.v, |u, v| u * phi.eval_unchecked(v.max(0.0)).0);
        let a = snap.u.inner(&psi_dt) + u_phi_v.inner(&psi_lap);
        let uv = snap.u.zip_map(&snap.v, |u, v| u * v);
        let b = snap.v.inner(&psi_dt) + snap.v.inner(&psi_lap) - uv.inner(&psi);
        a_terms.push((t, a));
        v_terms.push((t, b));
    }
    let trapz = |terms: &[(f64, f64)]| {
        let mut acc = 0.0;
        for w in terms.windows(2) {
            acc += 0.5 * (w[1].0 - w[0].0) * (w[0].1 + w[1].1);
        }
        acc
    };
    Ok((trapz(&a_terms).abs(), trapz(&v_terms).abs()))
}

// ---------------------------------------------------------------------------
// decay metrics

/// Large-time decay summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayReport {
    /// Reference time actually used (record nearest the configured t_ref).
    pub t_ref: f64,
    pub t_final: f64,
    /// hm1(T)/hm1(t_ref); 0 when both vanish.
    pub hm1_ratio: f64,
    /// vinf(T)/vinf(0); 0 when both vanish.
    pub vinf_ratio: f64,
    /// F(T)/F(t_ref); 0 when both vanish.
    pub f_ratio: f64,
    pub first_hm1_below: Option<f64>,
    pub first_vinf_below: Option<f64>,
    pub first_f_below: Option<f64>,
}

fn safe_ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        if num == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        num / den
    }
}

/// Decay ratios and threshold crossing times (the `decay_metrics`
/// operation). Reference values are hm1 and F at the record nearest
/// `t_ref` and vinf at t = 0; crossing times use the configured ratio
/// thresholds applied to those references.
pub fn decay_metrics(traj: &Trajectory) -> Result<DecayReport> {
    if traj.records.len() < 2 {
        return Err(KsmError::Validation(
            "decay metrics need at least 2 records".into(),
        ));
    }
    let thresholds = &traj.config.decay;
    let iref = traj.record_nearest(thresholds.t_ref);
    let rref = &traj.records[iref];
    let last = traj.records.last().unwrap();
    let vinf0 = traj.records[0].vinf;

    let first_below = |value: &dyn Fn(&DiagRecord) -> f64, reference: f64, thr: f64| {
        if reference == 0.0 {
            return None;
        }
        traj.records
            .iter()
            .find(|r| value(r) < thr * reference)
            .map(|r| r.t)
    };

    Ok(DecayReport {
        t_ref: rref.t,
        t_final: last.t,
        hm1_ratio: safe_ratio(last.hm1, rref.hm1),
        vinf_ratio: safe_ratio(last.vinf, vinf0),
        f_ratio: safe_ratio(last.f_energy, rref.f_energy),
        first_hm1_below: first_below(&|r: &DiagRecord| r.hm1, rref.hm1, thresholds.hm1_ratio),
        first_vinf_below: first_below(&|r: &DiagRecord| r.vinf, vinf0, thresholds.vinf_ratio),
        first_f_below: first_below(
            &|r: &DiagRecord| r.f_energy,
            rref.f_energy,
            thresholds.f_ratio,
        ),
    })
}

impl DecayReport {
    pub fn render(&self) -> String {
        let opt = |v: &Option<f64>| match v {
            Some(t) => format!("{t:.16e}"),
            None => "never".into(),
        };
        format!(
            "decay metrics\n  t_ref: {:.16e}  t_final: {:.16e}\n  hm1(T)/hm1(t_ref): {:.16e}\n  vinf(T)/vinf(0):   {:.16e}\n  F(T)/F(t_ref):     {:.16e}\n  first hm1 crossing: {}\n  first vinf crossing: {}\n  first F crossing: {}\n",
            self.t_ref,
            self.t_final,
            self.hm1_ratio,
            self.vinf_ratio,
            self.f_ratio,
            opt(&self.first_hm1_below),
            opt(&self.first_vinf_below),
            opt(&self.first_f_below),
        )
    }
}
