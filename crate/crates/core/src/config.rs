//! Run configuration: a TOML document with strictly validated keys.
//!
//! Unknown keys are hard errors everywhere — configs encode the
//! verification parameters, and a typo that silently fell back to a
//! default would invalidate what a run claims to certify. Section and
//! key names double as the error key paths.

use crate::error::{KsmError, Result};
use crate::geometry::{Field, Grid};
use crate::initial::{InitialSpec, U0Spec, V0Spec};
use crate::motility::MotilitySpec;
use crate::series;
use serde::{Deserialize, Serialize};

/// Time integration scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    Imex,
    Explicit,
}

/// Complete configuration of a single run plus optional experiment blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Regularization parameter ε ∈ [0, 1); ε = 0 drives the limit system.
    pub epsilon: f64,
    pub grid: GridConfig,
    pub motility: MotilityConfig,
    pub initial: InitialConfig,
    pub stepper: StepperConfig,
    pub output: OutputConfig,
    #[serde(default)]
    pub functionals: FunctionalWeights,
    #[serde(default)]
    pub decay: DecayThresholds,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relax: Option<RelaxConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub refine: Option<RefineConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub dim: usize,
    pub extents: Vec<f64>,
    pub cells: Vec<usize>,
}

impl GridConfig {
    pub fn build(&self) -> Result<Grid> {
        Grid::new(self.dim, &self.extents, &self.cells)
            .map_err(|e| KsmError::Config(format!("grid: {e}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MotilityConfig {
    /// "power" or "exponential".
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
}

impl MotilityConfig {
    pub fn power(a: f64, alpha: f64) -> MotilityConfig {
        MotilityConfig {
            kind: "power".into(),
            a: Some(a),
            alpha: Some(alpha),
            beta: None,
        }
    }

    pub fn exponential(beta: f64) -> MotilityConfig {
        MotilityConfig {
            kind: "exponential".into(),
            a: None,
            alpha: None,
            beta: Some(beta),
        }
    }

    pub fn to_spec(&self) -> Result<MotilitySpec> {
        match self.kind.as_str() {
            "power" => {
                reject_key("motility.beta", &self.beta, "power")?;
                let a = require_key("motility.a", &self.a)?;
                let alpha = require_key("motility.alpha", &self.alpha)?;
                MotilitySpec::power(a, alpha)
                    .map_err(|e| KsmError::Config(format!("motility: {e}")))
            }
            "exponential" => {
                reject_key("motility.a", &self.a, "exponential")?;
                reject_key("motility.alpha", &self.alpha, "exponential")?;
                let beta = require_key("motility.beta", &self.beta)?;
                MotilitySpec::exponential(beta)
                    .map_err(|e| KsmError::Config(format!("motility: {e}")))
            }
            other => Err(KsmError::Config(format!(
                "motility.kind: unknown kind \"{other}\", expected \"power\" or \"exponential\""
            ))),
        }
    }
}

fn require_key<T: Copy>(path: &str, value: &Option<T>) -> Result<T> {
    value
        .ok_or_else(|| KsmError::Config(format!("{path}: required key is missing")))
}

fn reject_key<T>(path: &str, value: &Option<T>, kind: &str) -> Result<()> {
    if value.is_some() {
        return Err(KsmError::Config(format!(
            "{path}: not a key for kind \"{kind}\""
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialConfig {
    pub u0: U0Config,
    pub v0: V0Config,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct U0Config {
    /// "constant", "bump", "dirac", "cells" or "file".
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mass: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<String>,
}

impl U0Config {
    pub fn constant(value: f64) -> U0Config {
        U0Config {
            kind: "constant".into(),
            value: Some(value),
            center: None,
            width: None,
            mass: None,
            values: None,
            file: None,
        }
    }

    pub fn bump(center: Vec<f64>, width: f64, mass: f64) -> U0Config {
        U0Config {
            kind: "bump".into(),
            value: None,
            center: Some(center),
            width: Some(width),
            mass: Some(mass),
            values: None,
            file: None,
        }
    }

    pub fn dirac(center: Vec<f64>, mass: f64) -> U0Config {
        U0Config {
            kind: "dirac".into(),
            value: None,
            center: Some(center),
            width: None,
            mass: Some(mass),
            values: None,
            file: None,
        }
    }

    fn to_spec(&self, grid: &Grid) -> Result<U0Spec> {
        let unused = |path: &str, set: bool| -> Result<()> {
            if set {
                Err(KsmError::Config(format!(
                    "initial.u0.{path}: not a key for kind \"{}\"",
                    self.kind
                )))
            } else {
                Ok(())
            }
        };
        match self.kind.as_str() {
            "constant" => {
                unused("center", self.center.is_some())?;
                unused("width", self.width.is_some())?;
                unused("mass", self.mass.is_some())?;
                unused("values", self.values.is_some())?;
                unused("file", self.file.is_some())?;
                Ok(U0Spec::Constant {
                    value: require_key("initial.u0.value", &self.value)?,
                })
            }
            "bump" => {
                unused("value", self.value.is_some())?;
                unused("values", self.values.is_some())?;
                unused("file", self.file.is_some())?;
                let center = self
                    .center
                    .clone()
                    .ok_or_else(|| KsmError::Config("initial.u0.center: required key is missing".into()))?;
                Ok(U0Spec::Bump {
                    center,
                    width: require_key("initial.u0.width", &self.width)?,
                    mass: require_key("initial.u0.mass", &self.mass)?,
                })
            }
            "dirac" => {
                unused("value", self.value.is_some())?;
                unused("width", self.width.is_some())?;
                unused("values", self.values.is_some())?;
                unused("file", self.file.is_some())?;
                let center = self
                    .center
                    .clone()
                    .ok_or_else(|| KsmError::Config("initial.u0.center: required key is missing".into()))?;
                Ok(U0Spec::Dirac {
                    center,
                    mass: require_key("initial.u0.mass", &self.mass)?,
                })
            }
            "cells" => {
                unused("value", self.value.is_some())?;
                unused("center", self.center.is_some())?;
                unused("width", self.width.is_some())?;
                unused("mass", self.mass.is_some())?;
                unused("file", self.file.is_some())?;
                let values = self
                    .values
                    .clone()
                    .ok_or_else(|| KsmError::Config("initial.u0.values: required key is missing".into()))?;
                Ok(U0Spec::Cells { values })
            }
            "file" => {
                unused("value", self.value.is_some())?;
                unused("center", self.center.is_some())?;
                unused("width", self.width.is_some())?;
                unused("mass", self.mass.is_some())?;
                unused("values", self.values.is_some())?;
                let path = self
                    .file
                    .clone()
                    .ok_or_else(|| KsmError::Config("initial.u0.file: required key is missing".into()))?;
                let field = load_field(&path, grid, "initial.u0.file")?;
                Ok(U0Spec::Cells {
                    values: field.into_values(),
                })
            }
            other => Err(KsmError::Config(format!(
                "initial.u0.kind: unknown kind \"{other}\""
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct V0Config {
    /// "constant", "cells" or "file".
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<String>,
}

impl V0Config {
    pub fn constant(value: f64) -> V0Config {
        V0Config {
            kind: "constant".into(),
            value: Some(value),
            values: None,
            file: None,
        }
    }

    fn to_spec(&self, grid: &Grid) -> Result<V0Spec> {
        let unused = |path: &str, set: bool| -> Result<()> {
            if set {
                Err(KsmError::Config(format!(
                    "initial.v0.{path}: not a key for kind \"{}\"",
                    self.kind
                )))
            } else {
                Ok(())
            }
        };
        match self.kind.as_str() {
            "constant" => {
                unused("values", self.values.is_some())?;
                unused("file", self.file.is_some())?;
                Ok(V0Spec::Constant {
                    value: require_key("initial.v0.value", &self.value)?,
                })
            }
            "cells" => {
                unused("value", self.value.is_some())?;
                unused("file", self.file.is_some())?;
                let values = self
                    .values
                    .clone()
                    .ok_or_else(|| KsmError::Config("initial.v0.values: required key is missing".into()))?;
                Ok(V0Spec::Cells { values })
            }
            "file" => {
                unused("value", self.value.is_some())?;
                unused("values", self.values.is_some())?;
                let path = self
                    .file
                    .clone()
                    .ok_or_else(|| KsmError::Config("initial.v0.file: required key is missing".into()))?;
                let field = load_field(&path, grid, "initial.v0.file")?;
                Ok(V0Spec::Cells {
                    values: field.into_values(),
                })
            }
            other => Err(KsmError::Config(format!(
                "initial.v0.kind: unknown kind \"{other}\""
            ))),
        }
    }
}

fn load_field(path: &str, grid: &Grid, key: &str) -> Result<Field> {
    let field = series::read_field_file(std::path::Path::new(path))
        .map_err(|e| KsmError::Config(format!("{key}: {e}")))?;
    if field.grid() != grid {
        return Err(KsmError::Config(format!(
            "{key}: snapshot grid {:?}/{:?} does not match the configured grid",
            field.grid().cells(),
            field.grid().extents()
        )));
    }
    Ok(field)
}

impl InitialConfig {
    pub fn to_spec(&self, grid: &Grid) -> Result<InitialSpec> {
        let spec = InitialSpec {
            u0: self.u0.to_spec(grid)?,
            v0: self.v0.to_spec(grid)?,
        };
        spec.validate(grid)
            .map_err(|e| KsmError::Config(format!("initial: {e}")))?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepperConfig {
    /// "imex" or "explicit".
    #[serde(default = "default_scheme")]
    pub scheme: String,
    pub dt: f64,
    #[serde(default = "default_safety")]
    pub safety: f64,
    #[serde(default = "default_solver_tol")]
    pub solver_tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    /// When set, IMEX runs cap dt at this multiple of the explicit
    /// stability limit (evaluated on the initial state).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt_cap_cfl_multiple: Option<f64>,
}

fn default_scheme() -> String {
    "imex".into()
}
fn default_safety() -> f64 {
    0.9
}
fn default_solver_tol() -> f64 {
    1e-12
}
fn default_max_iter() -> usize {
    20_000
}

impl StepperConfig {
    pub fn imex(dt: f64) -> StepperConfig {
        StepperConfig {
            scheme: default_scheme(),
            dt,
            safety: default_safety(),
            solver_tol: default_solver_tol(),
            max_iter: default_max_iter(),
            dt_cap_cfl_multiple: None,
        }
    }

    pub fn scheme(&self) -> Result<Scheme> {
        match self.scheme.as_str() {
            "imex" => Ok(Scheme::Imex),
            "explicit" => Ok(Scheme::Explicit),
            other => Err(KsmError::Config(format!(
                "stepper.scheme: unknown scheme \"{other}\", expected \"imex\" or \"explicit\""
            ))),
        }
    }

    fn validate(&self) -> Result<()> {
        self.scheme()?;
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(KsmError::Config(format!(
                "stepper.dt: must be positive and finite, got {}",
                self.dt
            )));
        }
        if !(self.safety > 0.0 && self.safety <= 1.0) {
            return Err(KsmError::Config(format!(
                "stepper.safety: must lie in (0, 1], got {}",
                self.safety
            )));
        }
        if !(self.solver_tol > 0.0) {
            return Err(KsmError::Config(format!(
                "stepper.solver_tol: must be positive, got {}",
                self.solver_tol
            )));
        }
        if self.max_iter == 0 {
            return Err(KsmError::Config("stepper.max_iter: must be at least 1".into()));
        }
        if let Some(m) = self.dt_cap_cfl_multiple {
            if !(m > 0.0) {
                return Err(KsmError::Config(format!(
                    "stepper.dt_cap_cfl_multiple: must be positive, got {m}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    /// Horizon T ≥ 0.
    pub t_end: f64,
    /// Time between diagnostic records; snapped down to a whole number of
    /// steps. The default keeps 10 records per unit time.
    #[serde(default = "default_cadence")]
    pub cadence: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<String>,
}

fn default_cadence() -> f64 {
    0.1
}

impl OutputConfig {
    fn validate(&self) -> Result<()> {
        if !(self.t_end >= 0.0) || !self.t_end.is_finite() {
            return Err(KsmError::Config(format!(
                "output.t_end: must be nonnegative and finite, got {}",
                self.t_end
            )));
        }
        if !(self.cadence > 0.0) {
            return Err(KsmError::Config(format!(
                "output.cadence: must be positive, got {}",
                self.cadence
            )));
        }
        Ok(())
    }
}

/// Weights of the two tracked energy-style functionals
/// y = hm1 + a·grad2 and F = hm1 + b·grad2.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FunctionalWeights {
    #[serde(default = "default_weight")]
    pub a: f64,
    #[serde(default = "default_weight")]
    pub b: f64,
}

fn default_weight() -> f64 {
    1.0
}

impl Default for FunctionalWeights {
    fn default() -> Self {
        FunctionalWeights { a: 1.0, b: 1.0 }
    }
}

/// Ratio thresholds used by the decay report's crossing times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecayThresholds {
    #[serde(default = "default_decay_ratio")]
    pub hm1_ratio: f64,
    #[serde(default = "default_decay_ratio")]
    pub vinf_ratio: f64,
    #[serde(default = "default_decay_ratio")]
    pub f_ratio: f64,
    #[serde(default = "default_t_ref")]
    pub t_ref: f64,
}

fn default_decay_ratio() -> f64 {
    0.05
}
fn default_t_ref() -> f64 {
    1.0
}

impl Default for DecayThresholds {
    fn default() -> Self {
        DecayThresholds {
            hm1_ratio: 0.05,
            vinf_ratio: 0.05,
            f_ratio: 0.05,
            t_ref: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    /// Strictly decreasing ε values in [0, 1); at least 3.
    pub epsilons: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RelaxConfig {
    /// Per-axis cell counts of each grid, strictly refining.
    pub grids: Vec<Vec<usize>>,
    #[serde(default = "default_tau")]
    pub tau: f64,
}

fn default_tau() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RefineConfig {
    /// Cell/step refinement multipliers relative to the base config,
    /// strictly increasing with integer ratios, e.g. [1, 2, 4].
    pub levels: Vec<usize>,
}

impl RunConfig {
    /// Full validation of every section and cross-section constraint.
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.epsilon) {
            return Err(KsmError::Config(format!(
                "epsilon: must lie in [0, 1), got {}",
                self.epsilon
            )));
        }
        let grid = self.grid.build()?;
        self.motility.to_spec()?;
        self.initial.to_spec(&grid)?;
        self.stepper.validate()?;
        self.output.validate()?;
        if !(self.functionals.a >= 0.0) || !(self.functionals.b >= 0.0) {
            return Err(KsmError::Config(
                "functionals.a / functionals.b: weights must be nonnegative".into(),
            ));
        }
        for (name, v) in [
            ("decay.hm1_ratio", self.decay.hm1_ratio),
            ("decay.vinf_ratio", self.decay.vinf_ratio),
            ("decay.f_ratio", self.decay.f_ratio),
        ] {
            if !(v > 0.0) {
                return Err(KsmError::Config(format!("{name}: must be positive, got {v}")));
            }
        }
        if !(self.decay.t_ref >= 0.0) {
            return Err(KsmError::Config(format!(
                "decay.t_ref: must be nonnegative, got {}",
                self.decay.t_ref
            )));
        }
        if let Some(sweep) = &self.sweep {
            validate_sweep(sweep)?;
        }
        if let Some(relax) = &self.relax {
            validate_relax(relax, &grid)?;
        }
        if let Some(refine) = &self.refine {
            validate_refine(refine)?;
        }
        Ok(())
    }
}

pub(crate) fn validate_sweep(sweep: &SweepConfig) -> Result<()> {
    if sweep.epsilons.len() < 3 {
        return Err(KsmError::Config(format!(
            "sweep.epsilons: at least 3 entries required, got {}",
            sweep.epsilons.len()
        )));
    }
    for pair in sweep.epsilons.windows(2) {
        if !(pair[1] < pair[0]) {
            return Err(KsmError::Config(
                "sweep.epsilons: entries must be strictly decreasing".into(),
            ));
        }
    }
    for e in &sweep.epsilons {
        if !(0.0..1.0).contains(e) {
            return Err(KsmError::Config(format!(
                "sweep.epsilons: every entry must lie in [0, 1), got {e}"
            )));
        }
    }
    Ok(())
}

pub(crate) fn validate_relax(relax: &RelaxConfig, grid: &Grid) -> Result<()> {
    if relax.grids.len() < 2 {
        return Err(KsmError::Config(format!(
            "relax.grids: at least 2 grids required, got {}",
            relax.grids.len()
        )));
    }
    for cells in &relax.grids {
        if cells.len() != grid.dim() {
            return Err(KsmError::Config(format!(
                "relax.grids: each entry wants {} cell counts, got {:?}",
                grid.dim(),
                cells
            )));
        }
    }
    for pair in relax.grids.windows(2) {
        let refines = pair[0]
            .iter()
            .zip(&pair[1])
            .all(|(coarse, fine)| fine > coarse);
        if !refines {
            return Err(KsmError::Config(
                "relax.grids: grids must strictly refine".into(),
            ));
        }
    }
    if !(relax.tau > 0.0) {
        return Err(KsmError::Config(format!(
            "relax.tau: must be positive, got {}",
            relax.tau
        )));
    }
    Ok(())
}

pub(crate) fn validate_refine(refine: &RefineConfig) -> Result<()> {
    if refine.levels.len() < 3 {
        return Err(KsmError::Config(format!(
            "refine.levels: at least 3 levels required, got {}",
            refine.levels.len()
        )));
    }
    for pair in refine.levels.windows(2) {
        if pair[1] <= pair[0] || pair[1] % pair[0] != 0 {
            return Err(KsmError::Config(
                "refine.levels: levels must strictly refine (increasing, integer ratios)".into(),
            ));
        }
    }
    if refine.levels[0] == 0 {
        return Err(KsmError::Config("refine.levels: multipliers start at 1".into()));
    }
    Ok(())
}

/// Parse and validate a config document (the `parse_config` operation).
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let cfg: RunConfig =
        toml::from_str(text).map_err(|e| KsmError::Config(e.message().to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}
