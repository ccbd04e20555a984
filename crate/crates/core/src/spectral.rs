//! Cosine eigenbasis of the cell-centered Neumann Laplacian and the
//! negative-power functionals built on it.
//!
//! The stencil in [`crate::geometry`] is diagonalized exactly by the
//! midpoint-sampled cosines `cos(kπ(j+1/2)/n)` per axis, with discrete
//! eigenvalues `λ_k = (2/h²)(1 − cos(kπh/L))` (sums over axes in 2D).
//! Transforms use the orthonormal scaling: per axis the basis vector k has
//! norm 1 in the plain dot product, so Σ_cells f² = Σ_k a_k² and hence
//! ‖f‖²_{L²} = vol·Σ_k a_k². All negative powers act on the mean-free
//! part only; the k = 0 mode is projected out.

use crate::error::{KsmError, Result};
use crate::geometry::{Field, Grid};
use std::f64::consts::PI;

/// Cosine coefficients of a field, together with the per-mode discrete
/// eigenvalues of −Δ_h. Layout matches the field layout (axis 0 slow).
#[derive(Debug, Clone)]
pub struct CosineCoeffs {
    grid: Grid,
    coeffs: Vec<f64>,
    lambda_axis0: Vec<f64>,
    lambda_axis1: Vec<f64>,
}

/// Per-axis orthonormal cosine basis matrix, row k = basis vector k
/// sampled at cell centers.
fn basis(n: usize, h: f64, extent: f64) -> (Vec<f64>, Vec<f64>) {
    let mut b = vec![0.0f64; n * n];
    let mut lambda = vec![0.0f64; n];
    for k in 0..n {
        let norm = if k == 0 {
            (1.0 / n as f64).sqrt()
        } else {
            (2.0 / n as f64).sqrt()
        };
        for j in 0..n {
            b[k * n + j] = norm * (k as f64 * PI * (j as f64 + 0.5) / n as f64).cos();
        }
        lambda[k] = (2.0 / (h * h)) * (1.0 - (k as f64 * PI * h / extent).cos());
    }
    (b, lambda)
}

/// Apply the axis-0 transform of an n0×n1 row-major block: out = B·data
/// (forward) or Bᵀ·data (inverse).
fn apply_axis0(b: &[f64], n0: usize, n1: usize, data: &[f64], transpose: bool) -> Vec<f64> {
    let mut out = vec![0.0f64; n0 * n1];
    for k in 0..n0 {
        for j in 0..n0 {
            let w = if transpose { b[j * n0 + k] } else { b[k * n0 + j] };
            if w == 0.0 {
                continue;
            }
            let src = &data[j * n1..(j + 1) * n1];
            let dst = &mut out[k * n1..(k + 1) * n1];
            for i1 in 0..n1 {
                dst[i1] += w * src[i1];
            }
        }
    }
    out
}

/// Same for axis 1 (contiguous rows).
fn apply_axis1(b: &[f64], n0: usize, n1: usize, data: &[f64], transpose: bool) -> Vec<f64> {
    let mut out = vec![0.0f64; n0 * n1];
    for i0 in 0..n0 {
        let src = &data[i0 * n1..(i0 + 1) * n1];
        let dst = &mut out[i0 * n1..(i0 + 1) * n1];
        for k in 0..n1 {
            let mut acc = 0.0;
            for j in 0..n1 {
                let w = if transpose { b[j * n1 + k] } else { b[k * n1 + j] };
                acc += w * src[j];
            }
            dst[k] = acc;
        }
    }
    out
}

/// Expand a field in the cosine eigenbasis (the `to_cosine` operation).
pub fn to_cosine(f: &Field) -> CosineCoeffs {
    let grid = *f.grid();
    let [n0, n1] = grid.cells_padded();
    let [h0, h1] = grid.widths_padded();
    let [l0, l1] = grid.extents_padded();

    let (b0, lambda_axis0) = basis(n0, h0, l0);
    let (b1, lambda_axis1) = basis(n1, h1, l1);

    let stage = apply_axis1(&b1, n0, n1, f.values(), false);
    let coeffs = apply_axis0(&b0, n0, n1, &stage, false);
    CosineCoeffs {
        grid,
        coeffs,
        lambda_axis0,
        lambda_axis1,
    }
}

/// Reconstruct the field from its cosine coefficients.
pub fn from_cosine(c: &CosineCoeffs) -> Field {
    let [n0, n1] = c.grid.cells_padded();
    let [h0, h1] = c.grid.widths_padded();
    let [l0, l1] = c.grid.extents_padded();
    let (b0, _) = basis(n0, h0, l0);
    let (b1, _) = basis(n1, h1, l1);

    let stage = apply_axis0(&b0, n0, n1, &c.coeffs, true);
    let values = apply_axis1(&b1, n0, n1, &stage, true);
    Field::new(c.grid, values).expect("coefficient layout matches grid")
}

impl CosineCoeffs {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    /// Discrete eigenvalue λ_k of −Δ_h for the flat mode index.
    pub fn lambda(&self, flat: usize) -> f64 {
        let n1 = self.grid.cells_padded()[1];
        self.lambda_axis0[flat / n1] + self.lambda_axis1[flat % n1]
    }

    /// Weighted coefficient sum equal to ‖f‖²_{L²} (Parseval).
    pub fn l2_norm_sq(&self) -> f64 {
        let vol = self.grid.cell_volume();
        self.coeffs.iter().map(|a| a * a).sum::<f64>() * vol
    }
}

/// ∫ |A^{−1/2}(f − f̄)|² where A is −Δ_h restricted to mean-free fields:
/// the weighted sum Σ_{k≠0} a_k²/λ_k in the Parseval normalization.
/// The k = 0 mode is projected out, so the actual mean is subtracted
/// regardless of `ubar`; `ubar` only documents the intended mean, and the
/// caller can compare it against `f.mean()` where that matters.
pub fn hminus_half_norm_sq(f: &Field, ubar: f64) -> f64 {
    let _ = ubar;
    let c = to_cosine(f);
    let vol = c.grid.cell_volume();
    let mut sum = 0.0;
    for (flat, a) in c.coeffs.iter().enumerate() {
        if flat == 0 {
            continue;
        }
        sum += a * a / c.lambda(flat);
    }
    sum * vol
}

/// Apply A^{−β} to the mean-free part of a field; the mean mode maps to
/// zero. β must be positive.
pub fn fractional_inverse(f: &Field, beta: f64) -> Result<Field> {
    if !(beta > 0.0) {
        return Err(KsmError::Validation(format!(
            "fractional_inverse wants beta > 0, got {beta}"
        )));
    }
    let mut c = to_cosine(f);
    for flat in 0..c.coeffs.len() {
        if flat == 0 {
            c.coeffs[0] = 0.0;
        } else {
            c.coeffs[flat] *= c.lambda(flat).powf(-beta);
        }
    }
    Ok(from_cosine(&c))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::build_grid;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn random_field(grid: Grid, rng: &mut StdRng) -> Field {
        Field::new(
            grid,
            (0..grid.n_cells())
                .map(|_| rng.random_range(0.0..1.0))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn constant_field_is_pure_mean_mode() {
        let g = build_grid(1, &[1.0], &[32]).unwrap();
        let c = to_cosine(&Field::constant(g, 2.0));
        assert!((c.coeffs()[0] - 2.0 * (32f64).sqrt()).abs() < 1e-12);
        assert!(c.coeffs()[1..].iter().all(|a| a.abs() < 1e-12));
    }

    #[test]
    fn eigenvector_purity() {
        let g = build_grid(1, &[2.0], &[64]).unwrap();
        let f = Field::from_fn(g, |x| (PI * x[0] / 2.0).cos());
        let c = to_cosine(&f);
        for (k, a) in c.coeffs().iter().enumerate() {
            if k == 1 {
                assert!(a.abs() > 1.0);
            } else {
                assert!(a.abs() < 1e-12, "mode {k} leaked {a}");
            }
        }
    }

    #[test]
    fn round_trip_and_parseval() {
        let mut rng = StdRng::seed_from_u64(5);
        for (dim, ext, cells) in [(1, &[1.0][..], &[48][..]), (2, &[1.0, 2.0], &[8, 12])] {
            let g = build_grid(dim, ext, cells).unwrap();
            for _ in 0..5 {
                let f = random_field(g, &mut rng);
                let c = to_cosine(&f);
                let back = from_cosine(&c);
                for (a, b) in f.values().iter().zip(back.values()) {
                    assert!((a - b).abs() < 1e-12);
                }
                assert!((c.l2_norm_sq() - f.l2_norm_sq()).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn transform_diagonalizes_stencil() {
        // eigen-coefficients of Δ_h f are −λ_k times those of f
        let mut rng = StdRng::seed_from_u64(17);
        let g = build_grid(2, &[1.0, 1.0], &[8, 8]).unwrap();
        let f = random_field(g, &mut rng);
        let cf = to_cosine(&f);
        let cl = to_cosine(&f.laplacian_neumann());
        for flat in 0..cf.coeffs().len() {
            let expect = -cf.lambda(flat) * cf.coeffs()[flat];
            assert!((cl.coeffs()[flat] - expect).abs() < 1e-9);
        }
    }

    #[test]
    fn hminus_zero_on_constants() {
        let g = build_grid(1, &[1.0], &[64]).unwrap();
        let f = Field::constant(g, 1.5);
        assert!(hminus_half_norm_sq(&f, 1.5).abs() < 1e-14);
    }

    #[test]
    fn hminus_eigenfunction_value() {
        // ū + cos(πx/L) on [0, π]: exactly (L/2)/λ₁, approaching π/2 as λ₁ → 1
        let l = PI;
        let g = build_grid(1, &[l], &[256]).unwrap();
        let f = Field::from_fn(g, |x| 1.0 + (PI * x[0] / l).cos());
        let h = g.widths()[0];
        let lam1 = (2.0 / (h * h)) * (1.0 - (PI * h / l).cos());
        let got = hminus_half_norm_sq(&f, 1.0);
        assert!((got - (l / 2.0) / lam1).abs() < 1e-12);
        assert!((got - PI / 2.0).abs() < 1e-3);
    }

    /// Independent oracle: solve −Δ_h w = f − f̄ by integrating the flux
    /// twice (1D), then return ⟨w, f − f̄⟩.
    fn hminus_oracle_1d(f: &Field) -> f64 {
        let g = f.grid();
        let n = g.cells()[0];
        let h = g.widths()[0];
        let mean = f.mean();
        let rhs: Vec<f64> = f.values().iter().map(|v| v - mean).collect();
        let mut w = vec![0.0f64; n];
        let mut flux = 0.0;
        for j in 0..n - 1 {
            flux -= h * rhs[j];
            w[j + 1] = w[j] + h * flux;
        }
        let wf = Field::new(*g, w).unwrap();
        let rf = Field::new(*g, rhs).unwrap();
        wf.inner(&rf)
    }

    #[test]
    fn hminus_agrees_with_direct_solve_1d() {
        let mut rng = StdRng::seed_from_u64(23);
        let g = build_grid(1, &[1.0], &[64]).unwrap();
        for _ in 0..100 {
            let f = random_field(g, &mut rng);
            let spectral = hminus_half_norm_sq(&f, f.mean());
            let oracle = hminus_oracle_1d(&f);
            assert!(
                (spectral - oracle).abs() < 1e-10,
                "{spectral} vs {oracle}"
            );
        }
    }

    #[test]
    fn hminus_agrees_with_dense_solve_2d() {
        // dense saddle-point solve of −Δ_h w = f − f̄ with a mean constraint
        let mut rng = StdRng::seed_from_u64(29);
        let g = build_grid(2, &[1.0, 1.5], &[6, 8]).unwrap();
        let n = g.n_cells();
        let mut a = nalgebra::DMatrix::<f64>::zeros(n + 1, n + 1);
        for j in 0..n {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            let col = Field::new(g, e).unwrap().laplacian_neumann();
            for i in 0..n {
                a[(i, j)] = -col.values()[i];
            }
            a[(n, j)] = 1.0;
            a[(j, n)] = 1.0;
        }
        let lu = a.lu();
        for _ in 0..20 {
            let f = random_field(g, &mut rng);
            let mean = f.mean();
            let mut rhs = nalgebra::DVector::<f64>::zeros(n + 1);
            for i in 0..n {
                rhs[i] = f.values()[i] - mean;
            }
            let sol = lu.solve(&rhs).unwrap();
            let w = Field::new(g, sol.as_slice()[..n].to_vec()).unwrap();
            let r = f.map(|v| v - mean);
            let oracle = w.inner(&r);
            let spectral = hminus_half_norm_sq(&f, mean);
            assert!((spectral - oracle).abs() < 1e-10);
        }
    }

    #[test]
    fn hminus_scaling() {
        let mut rng = StdRng::seed_from_u64(31);
        let g = build_grid(1, &[1.0], &[32]).unwrap();
        let f = random_field(g, &mut rng);
        let base = hminus_half_norm_sq(&f, f.mean());
        let scaled = hminus_half_norm_sq(&f.map(|v| 3.0 * v), 3.0 * f.mean());
        assert!((scaled - 9.0 * base).abs() < 1e-10 * (1.0 + base));
    }

    #[test]
    fn fractional_inverse_eigenfunction_and_semigroup() {
        let g = build_grid(1, &[1.0], &[32]).unwrap();
        let f = Field::from_fn(g, |x| (PI * x[0]).cos());
        let h = g.widths()[0];
        let lam1 = (2.0 / (h * h)) * (1.0 - (PI * h).cos());

        let inv = fractional_inverse(&f, 1.0).unwrap();
        for (a, b) in inv.values().iter().zip(f.values()) {
            assert!((a - b / lam1).abs() < 1e-12);
        }

        let mut rng = StdRng::seed_from_u64(37);
        let f = random_field(g, &mut rng);
        let twice_half = fractional_inverse(&fractional_inverse(&f, 0.5).unwrap(), 0.5).unwrap();
        let once = fractional_inverse(&f, 1.0).unwrap();
        for (a, b) in twice_half.values().iter().zip(once.values()) {
            assert!((a - b).abs() < 1e-12);
        }

        assert!(fractional_inverse(&f, 0.0).is_err());
        assert!(fractional_inverse(&f, -1.0).is_err());
    }

    #[test]
    fn interpolation_inequality_beta_one() {
        // ‖A^{−1/2}g‖ ≤ c·‖g‖^θ·‖A^{−1}g‖^{1−θ} with θ = 1/2 holds with
        // c ≤ 1 in the discrete spectrum (Cauchy-Schwarz); report the best
        // constant over random mean-free fields.
        let mut rng = StdRng::seed_from_u64(41);
        let g = build_grid(1, &[1.0], &[64]).unwrap();
        let mut best = 0.0f64;
        for _ in 0..100 {
            let raw = random_field(g, &mut rng);
            let mean = raw.mean();
            let f = raw.map(|v| v - mean);
            let lhs = hminus_half_norm_sq(&f, 0.0).sqrt();
            let l2 = f.l2_norm();
            let am1 = fractional_inverse(&f, 1.0).unwrap().l2_norm();
            let rhs = l2.sqrt() * am1.sqrt();
            assert!(rhs > 0.0);
            best = best.max(lhs / rhs);
        }
        assert!(best <= 1.0 + 1e-12, "best constant {best}");
        assert!(best > 0.5, "constant should be nontrivial, got {best}");
    }

    #[test]
    fn beta_monotone_per_mode() {
        // λ^{−β₁} ≥ λ^{−β₂} for β₁ ≥ β₂ wherever λ ≥ 1
        let g = build_grid(1, &[1.0], &[32]).unwrap();
        let c = to_cosine(&Field::constant(g, 1.0));
        let (b1, b2) = (2.0, 0.7);
        for flat in 1..g.n_cells() {
            let lam = c.lambda(flat);
            if lam >= 1.0 {
                assert!(lam.powf(-b1) <= lam.powf(-b2) + 1e-15);
            }
        }
    }
}
