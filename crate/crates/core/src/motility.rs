//! Motility models φ and their ε-regularization φ_ε.
//!
//! The simulated system diffuses the population with coefficient φ(v),
//! where φ is positive on [0, ∞). Built-in families:
//! power `φ(ξ) = 1/(ξ+a)^α` (a > 0, α > 0) and exponential
//! `φ(ξ) = e^{−βξ}` (β > 0); arbitrary positive C¹ motilities can be
//! supplied as custom evaluators returning value and derivative.
//!
//! The regularized family is `φ_ε(ξ) = φ(ξ) + ε·e^{−ξ}`. It dominates φ,
//! converges uniformly to φ on compacts as ε → 0 (the sup distance on
//! [0, M] is exactly ε), and its derivative stays within ε < 1 of φ′, so
//! the family has ε-uniform C¹ bounds on compacts.

use crate::error::{KsmError, Result};
use std::fmt;
use std::sync::Arc;

/// Evaluator used by custom motilities: ξ ↦ (φ(ξ), φ′(ξ)).
pub type MotilityEval = Arc<dyn Fn(f64) -> (f64, f64) + Send + Sync>;

/// A motility function φ with an evaluable derivative.
#[derive(Clone)]
pub enum MotilitySpec {
    Power { a: f64, alpha: f64 },
    Exponential { beta: f64 },
    Custom { eval: MotilityEval },
}

impl fmt::Debug for MotilitySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MotilitySpec::Power { a, alpha } => {
                write!(f, "Power {{ a: {a}, alpha: {alpha} }}")
            }
            MotilitySpec::Exponential { beta } => write!(f, "Exponential {{ beta: {beta} }}"),
            MotilitySpec::Custom { .. } => write!(f, "Custom {{ .. }}"),
        }
    }
}

/// Range over which custom evaluators are validated at construction.
const VALIDATION_RANGE: f64 = 10.0;
const FD_STEP: f64 = 1e-5;
const FD_TOL: f64 = 1e-6;

impl MotilitySpec {
    /// Power-law motility 1/(ξ+a)^α. `a = 0` is rejected: the motility
    /// would vanish at large signal values' inverse limit ξ → 0⁺ blow-up
    /// aside, the degenerate case φ(0) undefined/0 is out of scope.
    pub fn power(a: f64, alpha: f64) -> Result<MotilitySpec> {
        if !(a > 0.0) {
            return Err(KsmError::Validation(format!(
                "degenerate motility: power kind needs a > 0, got a = {a}"
            )));
        }
        if !(alpha > 0.0) {
            return Err(KsmError::Validation(format!(
                "power motility needs alpha > 0, got {alpha}"
            )));
        }
        Ok(MotilitySpec::Power { a, alpha })
    }

    pub fn exponential(beta: f64) -> Result<MotilitySpec> {
        if !(beta > 0.0) {
            return Err(KsmError::Validation(format!(
                "exponential motility needs beta > 0, got {beta}"
            )));
        }
        Ok(MotilitySpec::Exponential { beta })
    }

    /// Custom motility from a (value, derivative) evaluator. The evaluator
    /// must be positive on [0, 10] and its derivative must agree with a
    /// central finite difference (step 1e−5) to 1e−6 there.
    pub fn custom(eval: impl Fn(f64) -> (f64, f64) + Send + Sync + 'static) -> Result<MotilitySpec> {
        let eval: MotilityEval = Arc::new(eval);
        let samples = 101;
        for i in 0..samples {
            let xi = VALIDATION_RANGE * i as f64 / (samples - 1) as f64;
            let (value, deriv) = eval(xi);
            if !(value > 0.0) || !value.is_finite() {
                return Err(KsmError::Validation(format!(
                    "custom motility must be positive on [0, {VALIDATION_RANGE}], got {value} at xi = {xi}"
                )));
            }
            // central differences need both sides of the point
            if xi < FD_STEP {
                continue;
            }
            let fd = (eval(xi + FD_STEP).0 - eval(xi - FD_STEP).0) / (2.0 * FD_STEP);
            if (fd - deriv).abs() > FD_TOL * (1.0 + deriv.abs()) {
                return Err(KsmError::Validation(format!(
                    "custom motility derivative disagrees with finite differences at xi = {xi}: {deriv} vs {fd}"
                )));
            }
        }
        Ok(MotilitySpec::Custom { eval })
    }

    /// φ(ξ) and φ′(ξ). Rejects ξ < 0.
    pub fn eval(&self, xi: f64) -> Result<(f64, f64)> {
        if !(xi >= 0.0) {
            return Err(KsmError::Validation(format!(
                "motility argument must be nonnegative, got {xi}"
            )));
        }
        Ok(self.eval_unchecked(xi))
    }

    #[inline]
    pub(crate) fn eval_unchecked(&self, xi: f64) -> (f64, f64) {
        match self {
            MotilitySpec::Power { a, alpha } => {
                let base = xi + a;
                let value = base.powf(-alpha);
                (value, -alpha * value / base)
            }
            MotilitySpec::Exponential { beta } => {
                let value = (-beta * xi).exp();
                (value, -beta * value)
            }
            MotilitySpec::Custom { eval } => eval(xi),
        }
    }

    /// φ(ξ) alone.
    pub fn value(&self, xi: f64) -> Result<f64> {
        Ok(self.eval(xi)?.0)
    }
}

/// φ(ξ) and φ′(ξ) for a motility spec (the `eval_phi` operation).
pub fn eval_phi(spec: &MotilitySpec, xi: f64) -> Result<(f64, f64)> {
    spec.eval(xi)
}

/// The regularization φ_ε(ξ) = φ(ξ) + ε·e^{−ξ}, with ε ∈ (0,1); ε = 0
/// (via [`RegularizedMotility::limit`]) degenerates to φ itself and
/// represents the unregularized limit system.
#[derive(Debug, Clone)]
pub struct RegularizedMotility {
    base: MotilitySpec,
    eps: f64,
}

/// Build φ_ε from a base motility (the `regularize` operation). ε must
/// lie in the open interval (0, 1).
pub fn regularize(spec: &MotilitySpec, eps: f64) -> Result<RegularizedMotility> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(KsmError::Validation(format!(
            "regularization parameter must lie in (0, 1), got {eps}"
        )));
    }
    Ok(RegularizedMotility {
        base: spec.clone(),
        eps,
    })
}

impl RegularizedMotility {
    pub fn new(spec: &MotilitySpec, eps: f64) -> Result<RegularizedMotility> {
        regularize(spec, eps)
    }

    /// The ε = 0 member: φ_0 = φ, used to drive the limit system directly.
    pub fn limit(spec: &MotilitySpec) -> RegularizedMotility {
        RegularizedMotility {
            base: spec.clone(),
            eps: 0.0,
        }
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn base(&self) -> &MotilitySpec {
        &self.base
    }

    /// (φ_ε(ξ), φ_ε′(ξ)). Rejects ξ < 0.
    pub fn eval(&self, xi: f64) -> Result<(f64, f64)> {
        if !(xi >= 0.0) {
            return Err(KsmError::Validation(format!(
                "motility argument must be nonnegative, got {xi}"
            )));
        }
        Ok(self.eval_unchecked(xi))
    }

    #[inline]
    pub(crate) fn eval_unchecked(&self, xi: f64) -> (f64, f64) {
        let (v, d) = self.base.eval_unchecked(xi);
        if self.eps == 0.0 {
            (v, d)
        } else {
            let bump = self.eps * (-xi).exp();
            (v + bump, d - bump)
        }
    }

    /// φ_ε(ξ) alone.
    #[inline]
    pub fn value(&self, xi: f64) -> f64 {
        debug_assert!(xi >= 0.0);
        self.eval_unchecked(xi).0
    }
}
