//! Admissible regularized initial data (u_{0ε}, v_{0ε}).
//!
//! The population u₀ may be a constant, a Gaussian bump, a single-cell
//! concentration standing in for a Dirac measure, or explicit cell values;
//! realized data are nonnegative with their integral pinned exactly to the
//! intended mass. The signal v₀ is a constant or cell values; realization
//! applies the positivity floor v_{0ε} = max(v₀, ε), which keeps
//! ‖v_{0ε}‖_∞ ≤ ‖v₀‖_∞ + 1 for ε < 1.

use crate::error::{KsmError, Result};
use crate::geometry::{Field, Grid};

/// Population initial datum.
#[derive(Debug, Clone, PartialEq)]
pub enum U0Spec {
    Constant { value: f64 },
    Bump { center: Vec<f64>, width: f64, mass: f64 },
    /// All mass concentrated in the single cell containing `center`; the
    /// harshest grid-representable stand-in for a point measure. Its
    /// squared L² norm is mass²/h and diverges under refinement.
    Dirac { center: Vec<f64>, mass: f64 },
    Cells { values: Vec<f64> },
}

/// Signal initial datum.
#[derive(Debug, Clone, PartialEq)]
pub enum V0Spec {
    Constant { value: f64 },
    Cells { values: Vec<f64> },
}

/// Pair of initial data specifications.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialSpec {
    pub u0: U0Spec,
    pub v0: V0Spec,
}

impl U0Spec {
    fn validate(&self, grid: &Grid) -> Result<()> {
        match self {
            U0Spec::Constant { value } => {
                if !(*value >= 0.0) {
                    return Err(KsmError::Validation(format!(
                        "initial.u0.value must be nonnegative, got {value}"
                    )));
                }
            }
            U0Spec::Bump { center, width, mass } => {
                if !(*mass >= 0.0) {
                    return Err(KsmError::Validation(format!(
                        "initial.u0.mass must be nonnegative, got {mass}"
                    )));
                }
                if !(*width > 0.0) {
                    return Err(KsmError::Validation(format!(
                        "initial.u0.width must be positive, got {width}"
                    )));
                }
                check_center(grid, center)?;
            }
            U0Spec::Dirac { center, mass } => {
                if !(*mass >= 0.0) {
                    return Err(KsmError::Validation(format!(
                        "initial.u0.mass must be nonnegative, got {mass}"
                    )));
                }
                check_center(grid, center)?;
            }
            U0Spec::Cells { values } => {
                if values.len() != grid.n_cells() {
                    return Err(KsmError::Validation(format!(
                        "initial.u0.values wants {} entries, got {}",
                        grid.n_cells(),
                        values.len()
                    )));
                }
                if values.iter().any(|v| !(*v >= 0.0)) {
                    return Err(KsmError::Validation(
                        "initial.u0.values must be nonnegative".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

fn check_center(grid: &Grid, center: &[f64]) -> Result<()> {
    if grid.cell_containing(center).is_none() {
        return Err(KsmError::Validation(format!(
            "initial.u0.center {center:?} lies outside the domain"
        )));
    }
    Ok(())
}

impl V0Spec {
    fn validate(&self, grid: &Grid) -> Result<()> {
        match self {
            V0Spec::Constant { value } => {
                if !(*value >= 0.0) {
                    return Err(KsmError::Validation(format!(
                        "initial.v0.value must be nonnegative, got {value}"
                    )));
                }
            }
            V0Spec::Cells { values } => {
                if values.len() != grid.n_cells() {
                    return Err(KsmError::Validation(format!(
                        "initial.v0.values wants {} entries, got {}",
                        grid.n_cells(),
                        values.len()
                    )));
                }
                if values.iter().any(|v| !(*v >= 0.0)) {
                    return Err(KsmError::Validation(
                        "initial.v0.values must be nonnegative".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// ‖v₀‖_∞ of the specified (pre-floor) datum; explicit bounds in the
    /// verification reports are stated in terms of this value.
    pub fn linf(&self) -> f64 {
        match self {
            V0Spec::Constant { value } => value.abs(),
            V0Spec::Cells { values } => values.iter().fold(0.0f64, |m, v| m.max(v.abs())),
        }
    }
}

impl InitialSpec {
    pub fn validate(&self, grid: &Grid) -> Result<()> {
        self.u0.validate(grid)?;
        self.v0.validate(grid)
    }
}

/// Realize (u_{0ε}, v_{0ε}) on a grid. u_{0ε} is nonnegative with
/// `integrate(u0) = intended mass` after renormalization; v_{0ε} is
/// strictly positive for ε > 0 via the floor max(v₀, ε).
pub fn realize(spec: &InitialSpec, grid: &Grid, eps: f64) -> Result<(Field, Field)> {
    if !(0.0..1.0).contains(&eps) {
        return Err(KsmError::Validation(format!(
            "epsilon must lie in [0, 1), got {eps}"
        )));
    }
    spec.validate(grid)?;

    let u0 = match &spec.u0 {
        U0Spec::Constant { value } => Field::constant(*grid, *value),
        U0Spec::Bump { center, width, mass } => {
            let c = center.clone();
            let w = *width;
            let raw = Field::from_fn(*grid, |x| {
                let mut r2 = 0.0;
                for (xi, ci) in x.iter().zip(&c) {
                    r2 += (xi - ci) * (xi - ci);
                }
                (-r2 / (2.0 * w * w)).exp()
            });
            renormalize(raw, *mass)?
        }
        U0Spec::Dirac { center, mass } => {
            let mut values = vec![0.0; grid.n_cells()];
            let cell = grid
                .cell_containing(center)
                .expect("center validated above");
            values[cell] = mass / grid.cell_volume();
            Field::new(*grid, values)?
        }
        U0Spec::Cells { values } => Field::nonnegative(*grid, values.clone())?,
    };

    let v0 = match &spec.v0 {
        V0Spec::Constant { value } => Field::constant(*grid, value.max(eps)),
        V0Spec::Cells { values } => {
            Field::new(*grid, values.iter().map(|v| v.max(eps)).collect())?
        }
    };
    Ok((u0, v0))
}

fn renormalize(raw: Field, mass: f64) -> Result<Field> {
    let current = raw.integrate();
    if mass == 0.0 {
        return Ok(Field::zeros(*raw.grid()));
    }
    if current <= 0.0 {
        return Err(KsmError::Validation(
            "bump initial datum integrates to zero on this grid; widen it".into(),
        ));
    }
    let scale = mass / current;
    Ok(raw.map(|v| v * scale))
}

/// Intended total mass ∫u₀ of a specification on a grid.
pub fn intended_mass(spec: &U0Spec, grid: &Grid) -> f64 {
    match spec {
        U0Spec::Constant { value } => value * grid.measure(),
        U0Spec::Bump { mass, .. } | U0Spec::Dirac { mass, .. } => *mass,
        U0Spec::Cells { values } => values.iter().sum::<f64>() * grid.cell_volume(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::build_grid;

    #[test]
    fn constant_data_pass_through() {
        let grid = build_grid(1, &[1.0], &[64]).unwrap();
        let spec = InitialSpec {
            u0: U0Spec::Constant { value: 2.0 },
            v0: V0Spec::Constant { value: 1.0 },
        };
        let (u0, v0) = realize(&spec, &grid, 0.1).unwrap();
        assert!(u0.values().iter().all(|v| *v == 2.0));
        assert!(v0.values().iter().all(|v| *v == 1.0));
        assert!((u0.integrate() - 2.0).abs() < 1e-14);
    }

    #[test]
    fn dirac_concentrates_in_one_cell() {
        let grid = build_grid(1, &[1.0], &[64]).unwrap();
        let spec = InitialSpec {
            u0: U0Spec::Dirac { center: vec![0.5], mass: 1.0 },
            v0: V0Spec::Constant { value: 1.0 },
        };
        let (u0, _) = realize(&spec, &grid, 0.01).unwrap();
        let nonzero: Vec<_> = u0.values().iter().filter(|v| **v != 0.0).collect();
        assert_eq!(nonzero.len(), 1);
        assert_eq!(*nonzero[0], 64.0);
        assert!((u0.l2_norm_sq() - 64.0).abs() < 1e-12);
        assert!((u0.integrate() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn dirac_l2_diverges_under_refinement() {
        // discrete signature of measure data: ∫u₀² = mass²/h
        let mut prev = 0.0;
        for n in [64usize, 128, 256] {
            let grid = build_grid(1, &[1.0], &[n]).unwrap();
            let spec = InitialSpec {
                u0: U0Spec::Dirac { center: vec![0.5], mass: 1.0 },
                v0: V0Spec::Constant { value: 0.0 },
            };
            let (u0, _) = realize(&spec, &grid, 0.1).unwrap();
            let l2 = u0.l2_norm_sq();
            assert!((l2 - n as f64).abs() < 1e-10);
            assert!(l2 > prev);
            prev = l2;
        }
    }

    #[test]
    fn positivity_floor_on_v0() {
        let grid = build_grid(1, &[1.0], &[16]).unwrap();
        let spec = InitialSpec {
            u0: U0Spec::Constant { value: 1.0 },
            v0: V0Spec::Constant { value: 0.0 },
        };
        let (_, v0) = realize(&spec, &grid, 0.01).unwrap();
        assert!(v0.values().iter().all(|v| *v == 0.01));
    }

    #[test]
    fn linf_cap_respected() {
        let grid = build_grid(1, &[1.0], &[16]).unwrap();
        let values: Vec<f64> = (0..16).map(|i| 0.05 * i as f64).collect();
        let spec = InitialSpec {
            u0: U0Spec::Constant { value: 1.0 },
            v0: V0Spec::Cells { values },
        };
        let v0_linf = spec.v0.linf();
        for eps in [0.0, 0.2, 0.9] {
            let (_, v0) = realize(&spec, &grid, eps).unwrap();
            assert!(v0.linf_norm() <= v0_linf + 1.0);
            if eps > 0.0 {
                assert!(v0.min_value() >= eps.min(v0_linf.max(eps)) * 0.999);
                assert!(v0.min_value() > 0.0);
            }
        }
    }

    #[test]
    fn bump_mass_exact() {
        for n in [32usize, 64, 100] {
            let grid = build_grid(1, &[2.0], &[n]).unwrap();
            let spec = InitialSpec {
                u0: U0Spec::Bump { center: vec![1.0], width: 0.2, mass: 3.0 },
                v0: V0Spec::Constant { value: 1.0 },
            };
            let (u0, _) = realize(&spec, &grid, 0.1).unwrap();
            assert!((u0.integrate() - 3.0).abs() < 1e-12);
            assert!(u0.is_nonnegative());
        }
        // 2D bump
        let grid = build_grid(2, &[1.0, 1.0], &[16, 16]).unwrap();
        let spec = InitialSpec {
            u0: U0Spec::Bump { center: vec![0.5, 0.5], width: 0.15, mass: 1.0 },
            v0: V0Spec::Constant { value: 1.0 },
        };
        let (u0, _) = realize(&spec, &grid, 0.1).unwrap();
        assert!((u0.integrate() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_specs() {
        let grid = build_grid(1, &[1.0], &[16]).unwrap();
        let bad_mass = InitialSpec {
            u0: U0Spec::Dirac { center: vec![0.5], mass: -1.0 },
            v0: V0Spec::Constant { value: 1.0 },
        };
        assert!(realize(&bad_mass, &grid, 0.1).is_err());

        let outside = InitialSpec {
            u0: U0Spec::Dirac { center: vec![1.5], mass: 1.0 },
            v0: V0Spec::Constant { value: 1.0 },
        };
        assert!(realize(&outside, &grid, 0.1).is_err());

        let neg_v = InitialSpec {
            u0: U0Spec::Constant { value: 1.0 },
            v0: V0Spec::Constant { value: -0.5 },
        };
        assert!(realize(&neg_v, &grid, 0.1).is_err());
    }

    #[test]
    fn intended_mass_matches_realization() {
        let grid = build_grid(1, &[2.0], &[32]).unwrap();
        let specs = [
            U0Spec::Constant { value: 0.5 },
            U0Spec::Bump { center: vec![1.0], width: 0.3, mass: 2.5 },
            U0Spec::Dirac { center: vec![0.25], mass: 0.75 },
            U0Spec::Cells { values: (0..32).map(|i| i as f64 / 31.0).collect() },
        ];
        for u0 in specs {
            let m = intended_mass(&u0, &grid);
            let spec = InitialSpec { u0, v0: V0Spec::Constant { value: 1.0 } };
            let (field, _) = realize(&spec, &grid, 0.1).unwrap();
            assert!((field.integrate() - m).abs() < 1e-12 * (1.0 + m));
        }
    }
}
