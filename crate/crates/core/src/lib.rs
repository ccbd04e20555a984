// negated comparisons are used on purpose throughout: `!(x > 0.0)`
// rejects NaN along with the out-of-range values
#![allow(clippy::neg_cmp_op_on_partial_ord)]

//! Core library of `ksm`: a structure-preserving finite-volume simulator
//! and verification harness for the cross-diffusion consumption system
//!
//! ```text
//!   u_t = Δ(u φ(v)),   v_t = Δv − u·v/(1 + ε·u)
//! ```
//!
//! on intervals and rectangles with zero-flux boundaries. The crate
//! provides the spatial discretization ([`geometry`]), motility models and
//! their ε-regularization ([`motility`]), admissible initial data
//! ([`initial`]), IMEX/explicit time stepping ([`stepper`]), the Neumann
//! cosine spectral machinery behind the dual-norm functionals
//! ([`spectral`]), per-trajectory functional and inequality reports
//! ([`diagnostics`]), multi-run experiments ([`experiments`]), and
//! config/persistence plumbing ([`config`], [`series`]).

pub mod config;
pub mod diagnostics;
pub mod error;
pub mod experiments;
pub mod geometry;
pub mod initial;
pub mod motility;
pub mod series;
pub mod spectral;
pub mod stepper;

pub use config::RunConfig;
pub use diagnostics::{DiagRecord, Trajectory};
pub use error::{KsmError, Result};
pub use geometry::{build_grid, Field, Grid};
pub use initial::InitialSpec;
pub use motility::{MotilitySpec, RegularizedMotility};
pub use stepper::State;
