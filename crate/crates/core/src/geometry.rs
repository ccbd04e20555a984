//! Spatial discretization: tensor-product cell-centered grids on an
//! interval or rectangle, with homogeneous Neumann (zero-flux) boundary
//! closure, plus the quadrature and differential operators built on them.
//!
//! Internally every grid is stored with two axes; a 1D grid carries a
//! trailing axis of a single cell with unit extent, so the 2D loops
//! degenerate to the 1D formulas without special cases. The cell volume
//! is `h[0]*h[1]`, which reduces to the cell width in 1D.

use crate::error::{KsmError, Result};

/// Cell-centered tensor-product mesh with Neumann boundary metadata.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    dim: usize,
    extents: [f64; 2],
    cells: [usize; 2],
    h: [f64; 2],
    measure: f64,
}

/// Minimum cell count per axis.
pub const MIN_CELLS: usize = 4;

/// Build a grid (the `build_grid` operation).
///
/// `extents` and `cells` must have exactly `dim` entries, extents must be
/// positive and each axis needs at least [`MIN_CELLS`] cells.
pub fn build_grid(dim: usize, extents: &[f64], cells: &[usize]) -> Result<Grid> {
    Grid::new(dim, extents, cells)
}

impl Grid {
    pub fn new(dim: usize, extents: &[f64], cells: &[usize]) -> Result<Grid> {
        if dim != 1 && dim != 2 {
            return Err(KsmError::Validation(format!(
                "unsupported dimension {dim}, expected 1 or 2"
            )));
        }
        if extents.len() != dim || cells.len() != dim {
            return Err(KsmError::Validation(format!(
                "grid wants {dim} extents and cell counts, got {} and {}",
                extents.len(),
                cells.len()
            )));
        }
        let mut ext = [1.0f64; 2];
        let mut cel = [1usize; 2];
        for ax in 0..dim {
            if !(extents[ax] > 0.0) || !extents[ax].is_finite() {
                return Err(KsmError::Validation(format!(
                    "grid extent on axis {ax} must be positive, got {}",
                    extents[ax]
                )));
            }
            if cells[ax] < MIN_CELLS {
                return Err(KsmError::Validation(format!(
                    "grid needs at least {MIN_CELLS} cells per axis, got {} on axis {ax}",
                    cells[ax]
                )));
            }
            ext[ax] = extents[ax];
            cel[ax] = cells[ax];
        }
        let h = [ext[0] / cel[0] as f64, ext[1] / cel[1] as f64];
        let measure = if dim == 1 { ext[0] } else { ext[0] * ext[1] };
        Ok(Grid {
            dim,
            extents: ext,
            cells: cel,
            h,
            measure,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Extents of the declared axes.
    pub fn extents(&self) -> &[f64] {
        &self.extents[..self.dim]
    }

    /// Cell counts of the declared axes.
    pub fn cells(&self) -> &[usize] {
        &self.cells[..self.dim]
    }

    /// Cell widths of the declared axes.
    pub fn widths(&self) -> &[f64] {
        &self.h[..self.dim]
    }

    /// |Ω|.
    pub fn measure(&self) -> f64 {
        self.measure
    }

    /// Volume of a single cell.
    pub fn cell_volume(&self) -> f64 {
        self.h[0] * self.h[1]
    }

    pub fn n_cells(&self) -> usize {
        self.cells[0] * self.cells[1]
    }

    /// Padded per-axis cell counts (trailing axis is 1 in 1D).
    pub(crate) fn cells_padded(&self) -> [usize; 2] {
        self.cells
    }

    pub(crate) fn widths_padded(&self) -> [f64; 2] {
        self.h
    }

    pub(crate) fn extents_padded(&self) -> [f64; 2] {
        self.extents
    }

    /// Flat index of the cell (i0, i1); axis 0 is the slow axis.
    #[inline]
    pub fn idx(&self, i0: usize, i1: usize) -> usize {
        debug_assert!(i0 < self.cells[0] && i1 < self.cells[1]);
        i0 * self.cells[1] + i1
    }

    /// Coordinate of the cell center along `axis`.
    #[inline]
    pub fn center(&self, axis: usize, i: usize) -> f64 {
        (i as f64 + 0.5) * self.h[axis]
    }

    /// Index of the cell containing a point, or None if outside Ω.
    pub fn cell_containing(&self, point: &[f64]) -> Option<usize> {
        if point.len() != self.dim {
            return None;
        }
        let mut ij = [0usize; 2];
        for ax in 0..self.dim {
            let x = point[ax];
            if !(0.0..=self.extents[ax]).contains(&x) {
                return None;
            }
            ij[ax] = ((x / self.h[ax]) as usize).min(self.cells[ax] - 1);
        }
        Some(self.idx(ij[0], ij[1]))
    }
}

/// Scalar grid function: one value per cell.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    grid: Grid,
    values: Vec<f64>,
}

impl Field {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Field> {
        if values.len() != grid.n_cells() {
            return Err(KsmError::Validation(format!(
                "field wants {} values, got {}",
                grid.n_cells(),
                values.len()
            )));
        }
        Ok(Field { grid, values })
    }

    /// Like [`Field::new`] but rejects negative entries.
    pub fn nonnegative(grid: Grid, values: Vec<f64>) -> Result<Field> {
        if let Some(v) = values.iter().find(|v| !(**v >= 0.0)) {
            return Err(KsmError::Validation(format!(
                "field flagged nonnegative contains {v}"
            )));
        }
        Field::new(grid, values)
    }

    pub fn constant(grid: Grid, c: f64) -> Field {
        Field {
            grid,
            values: vec![c; grid.n_cells()],
        }
    }

    pub fn zeros(grid: Grid) -> Field {
        Field::constant(grid, 0.0)
    }

    /// Sample a function of the cell-center coordinates.
    pub fn from_fn(grid: Grid, f: impl Fn(&[f64]) -> f64) -> Field {
        let [n0, n1] = grid.cells_padded();
        let mut values = Vec::with_capacity(n0 * n1);
        for i0 in 0..n0 {
            for i1 in 0..n1 {
                let x = [grid.center(0, i0), grid.center(1, i1)];
                values.push(f(&x[..grid.dim]));
            }
        }
        Field { grid, values }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn is_nonnegative(&self) -> bool {
        self.values.iter().all(|v| *v >= 0.0)
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_value(&self) -> f64 {
        self.values
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Discrete ∫_Ω f: midpoint rule, Σ f·(cell volume).
    pub fn integrate(&self) -> f64 {
        let vol = self.grid.cell_volume();
        self.values.iter().sum::<f64>() * vol
    }

    /// Spatial mean, ∫f / |Ω|.
    pub fn mean(&self) -> f64 {
        self.integrate() / self.grid.measure()
    }

    /// ‖f‖_∞ over cells.
    pub fn linf_norm(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// ∫ f² (the squared L² norm).
    pub fn l2_norm_sq(&self) -> f64 {
        let vol = self.grid.cell_volume();
        self.values.iter().map(|v| v * v).sum::<f64>() * vol
    }

    pub fn l2_norm(&self) -> f64 {
        self.l2_norm_sq().sqrt()
    }

    /// Cell-volume inner product ⟨f, g⟩ = Σ f·g·vol.
    pub fn inner(&self, other: &Field) -> f64 {
        assert_eq!(self.grid, other.grid, "fields live on different grids");
        let vol = self.grid.cell_volume();
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum::<f64>()
            * vol
    }

    /// ‖f − g‖_{L²}.
    pub fn l2_distance(&self, other: &Field) -> f64 {
        assert_eq!(self.grid, other.grid, "fields live on different grids");
        let vol = self.grid.cell_volume();
        let s: f64 = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        (s * vol).sqrt()
    }

    /// Cell-centered Neumann Laplacian: second-order flux form with
    /// zero-flux ghost closure. Boundary face fluxes are identically zero,
    /// so the output integrates to zero (discrete divergence theorem).
    pub fn laplacian_neumann(&self) -> Field {
        let mut out = vec![0.0f64; self.values.len()];
        laplacian_slice(&self.grid, &self.values, &mut out);
        Field {
            grid: self.grid,
            values: out,
        }
    }

    /// ∫ |∇f|^p via face-based gradient reconstruction: per interior face
    /// the normal difference quotient enters as |g|^p weighted by the cell
    /// volume; boundary faces carry zero gradient. For p = 2 this equals
    /// the Dirichlet form −⟨Δ_h f, f⟩ identically.
    pub fn grad_power_integral(&self, p: u32) -> Result<f64> {
        if p != 2 && p != 4 {
            return Err(KsmError::Validation(format!(
                "grad_power_integral wants p in {{2, 4}}, got {p}"
            )));
        }
        let [n0, n1] = self.grid.cells_padded();
        let [h0, h1] = self.grid.widths_padded();
        let vol = self.grid.cell_volume();
        let v = &self.values;
        let mut sum = 0.0f64;

        if n0 > 1 {
            let inv_h0 = 1.0 / h0;
            for i0 in 0..n0 - 1 {
                for i1 in 0..n1 {
                    let g = (v[(i0 + 1) * n1 + i1] - v[i0 * n1 + i1]) * inv_h0;
                    let g2 = g * g;
                    sum += if p == 2 { g2 } else { g2 * g2 };
                }
            }
        }
        if n1 > 1 {
            let inv_h1 = 1.0 / h1;
            for i0 in 0..n0 {
                let row = i0 * n1;
                for i1 in 0..n1 - 1 {
                    let g = (v[row + i1 + 1] - v[row + i1]) * inv_h1;
                    let g2 = g * g;
                    sum += if p == 2 { g2 } else { g2 * g2 };
                }
            }
        }
        Ok(sum * vol)
    }

    /// Pointwise map into a new field.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Field {
        Field {
            grid: self.grid,
            values: self.values.iter().map(|v| f(*v)).collect(),
        }
    }

    /// Pointwise combination of two fields on the same grid.
    pub fn zip_map(&self, other: &Field, f: impl Fn(f64, f64) -> f64) -> Field {
        assert_eq!(self.grid, other.grid, "fields live on different grids");
        Field {
            grid: self.grid,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| f(*a, *b))
                .collect(),
        }
    }

    pub fn has_nan(&self) -> bool {
        self.values.iter().any(|v| !v.is_finite())
    }
}

/// Flux-form Neumann Laplacian on a raw value slice; `out` is overwritten.
pub(crate) fn laplacian_slice(grid: &Grid, v: &[f64], out: &mut [f64]) {
    let [n0, n1] = grid.cells_padded();
    let [h0, h1] = grid.widths_padded();
    debug_assert_eq!(v.len(), n0 * n1);
    debug_assert_eq!(out.len(), n0 * n1);
    out.fill(0.0);

    // axis 0: faces between (i0, i1) and (i0+1, i1)
    if n0 > 1 {
        let inv_h0 = 1.0 / h0;
        for i0 in 0..n0 - 1 {
            for i1 in 0..n1 {
                let a = i0 * n1 + i1;
                let b = (i0 + 1) * n1 + i1;
                let flux = (v[b] - v[a]) * inv_h0;
                out[a] += flux * inv_h0;
                out[b] -= flux * inv_h0;
            }
        }
    }
    // axis 1
    if n1 > 1 {
        let inv_h1 = 1.0 / h1;
        for i0 in 0..n0 {
            let row = i0 * n1;
            for i1 in 0..n1 - 1 {
                let a = row + i1;
                let b = row + i1 + 1;
                let flux = (v[b] - v[a]) * inv_h1;
                out[a] += flux * inv_h1;
                out[b] -= flux * inv_h1;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};
    use std::f64::consts::PI;

    fn random_field(grid: Grid, rng: &mut StdRng) -> Field {
        let values = (0..grid.n_cells())
            .map(|_| rng.random_range(-0.5..0.5))
            .collect();
        Field::new(grid, values).unwrap()
    }

    #[test]
    fn build_grid_examples() {
        let g = build_grid(1, &[1.0], &[8]).unwrap();
        assert_eq!(g.widths(), &[0.125]);
        assert_eq!(g.measure(), 1.0);
        assert_eq!(g.n_cells(), 8);

        let g = build_grid(2, &[1.0, 2.0], &[8, 16]).unwrap();
        assert_eq!(g.widths(), &[0.125, 0.125]);
        assert_eq!(g.measure(), 2.0);
        assert_eq!(g.n_cells(), 128);
    }

    #[test]
    fn build_grid_rejects_bad_input() {
        let err = build_grid(3, &[1.0, 1.0, 1.0], &[8, 8, 8]).unwrap_err();
        assert!(err.to_string().contains("unsupported dimension"));
        assert!(build_grid(1, &[0.0], &[8]).is_err());
        assert!(build_grid(1, &[-1.0], &[8]).is_err());
        assert!(build_grid(1, &[1.0], &[3]).is_err());
        assert!(build_grid(2, &[1.0], &[8, 8]).is_err());
    }

    #[test]
    fn integrate_constant_and_symmetric() {
        let g = build_grid(2, &[1.0, 2.0], &[8, 16]).unwrap();
        let f = Field::constant(g, 1.0);
        assert!((f.integrate() - 2.0).abs() < 1e-14);

        let g = build_grid(1, &[1.0], &[256]).unwrap();
        let f = Field::from_fn(g, |x| (PI * x[0]).cos());
        assert!(f.integrate().abs() < 1e-12, "midpoint symmetry");
    }

    #[test]
    fn integrate_exact_for_linear() {
        // midpoint rule is exact on linear integrands
        let g = build_grid(1, &[1.0], &[64]).unwrap();
        let f = Field::from_fn(g, |x| x[0]);
        assert!((f.integrate() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn laplacian_annihilates_constants() {
        for (dim, ext, cells) in [(1, &[1.0][..], &[16][..]), (2, &[1.0, 2.0], &[8, 12])] {
            let g = build_grid(dim, ext, cells).unwrap();
            let f = Field::constant(g, 3.7);
            let lap = f.laplacian_neumann();
            assert!(lap.values().iter().all(|v| v.abs() < 1e-13));
        }
    }

    /// Discrete eigenvalue of the cell-centered Neumann stencil.
    fn lambda_h(k: usize, h: f64, extent: f64) -> f64 {
        (2.0 / (h * h)) * (1.0 - (k as f64 * PI * h / extent).cos())
    }

    #[test]
    fn laplacian_cosine_eigenfunction() {
        let n = 64;
        for extent in [1.0, PI] {
            let g = build_grid(1, &[extent], &[n]).unwrap();
            let f = Field::from_fn(g, |x| (PI * x[0] / extent).cos());
            let lap = f.laplacian_neumann();
            let lam = lambda_h(1, g.widths()[0], extent);
            for (lv, fv) in lap.values().iter().zip(f.values()) {
                assert!(
                    (lv + lam * fv).abs() < 1e-12 * lam.max(1.0),
                    "stencil eigenfunction identity"
                );
            }
        }
    }

    #[test]
    fn laplacian_2d_tensor_eigenfunction() {
        let g = build_grid(2, &[1.0, 2.0], &[12, 16]).unwrap();
        let f = Field::from_fn(g, |x| (2.0 * PI * x[0]).cos() * (PI * x[1] / 2.0).cos());
        let lap = f.laplacian_neumann();
        let lam = lambda_h(2, g.widths()[0], 1.0) + lambda_h(1, g.widths()[1], 2.0);
        for (lv, fv) in lap.values().iter().zip(f.values()) {
            assert!((lv + lam * fv).abs() < 1e-11 * lam);
        }
    }

    #[test]
    fn laplacian_matches_dense_eigendecomposition() {
        // N = 16 dense stencil matrix vs the closed-form spectrum.
        let n = 16;
        let g = build_grid(1, &[1.0], &[n]).unwrap();
        let mut dense = nalgebra::DMatrix::<f64>::zeros(n, n);
        for j in 0..n {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            let col = Field::new(g, e).unwrap().laplacian_neumann();
            for i in 0..n {
                dense[(i, j)] = -col.values()[i]; // -Δ_h is PSD
            }
        }
        let eig = nalgebra::SymmetricEigen::new(dense);
        let mut got: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        got.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut expect: Vec<f64> = (0..n).map(|k| lambda_h(k, g.widths()[0], 1.0)).collect();
        expect.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for (a, b) in got.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12 * b.max(1.0), "{a} vs {b}");
        }
    }

    #[test]
    fn divergence_theorem_random_fields() {
        let mut rng = StdRng::seed_from_u64(7);
        for _ in 0..20 {
            let g = build_grid(1, &[1.0], &[32]).unwrap();
            let f = random_field(g, &mut rng);
            assert!(f.laplacian_neumann().integrate().abs() < 1e-12);
        }
        let g = build_grid(2, &[1.0, 1.5], &[8, 12]).unwrap();
        for _ in 0..10 {
            let f = random_field(g, &mut rng);
            assert!(f.laplacian_neumann().integrate().abs() < 1e-12);
        }
    }

    #[test]
    fn laplacian_self_adjoint_and_negative() {
        let mut rng = StdRng::seed_from_u64(11);
        let g = build_grid(1, &[2.0], &[24]).unwrap();
        for _ in 0..20 {
            let f = random_field(g, &mut rng);
            let gfield = random_field(g, &mut rng);
            let lhs = f.laplacian_neumann().inner(&gfield);
            let rhs = f.inner(&gfield.laplacian_neumann());
            assert!((lhs - rhs).abs() < 1e-12);
            assert!(f.laplacian_neumann().inner(&f) <= 1e-13);
        }
    }

    #[test]
    fn grad2_matches_dirichlet_form() {
        let mut rng = StdRng::seed_from_u64(13);
        for (dim, ext, cells) in [(1, &[1.0][..], &[32][..]), (2, &[1.0, 1.0], &[8, 8])] {
            let g = build_grid(dim, ext, cells).unwrap();
            for _ in 0..10 {
                let f = random_field(g, &mut rng);
                let grad2 = f.grad_power_integral(2).unwrap();
                let dirichlet = -f.laplacian_neumann().inner(&f);
                assert!((grad2 - dirichlet).abs() < 1e-12, "{grad2} vs {dirichlet}");
            }
        }
    }

    #[test]
    fn grad_power_examples() {
        let g = build_grid(1, &[1.0], &[64]).unwrap();
        let f = Field::constant(g, 4.0);
        assert_eq!(f.grad_power_integral(2).unwrap(), 0.0);

        let n = 64usize;
        let f = Field::from_fn(g, |x| x[0]);
        let expect = (n as f64 - 1.0) / n as f64;
        assert!((f.grad_power_integral(2).unwrap() - expect).abs() < 1e-13);
        assert!((f.grad_power_integral(4).unwrap() - expect).abs() < 1e-13);

        assert!(f.grad_power_integral(3).is_err());
    }

    #[test]
    fn linf_examples() {
        let g = build_grid(1, &[1.0], &[64]).unwrap();
        assert_eq!(Field::constant(g, 3.0).linf_norm(), 3.0);
        assert_eq!(Field::zeros(g).linf_norm(), 0.0);
        let f = Field::from_fn(g, |x| (PI * x[0]).cos());
        let expect = (PI * g.widths()[0] / 2.0).cos();
        assert!((f.linf_norm() - expect).abs() < 1e-15);
    }

    #[test]
    fn cell_containing_points() {
        let g = build_grid(1, &[1.0], &[64]).unwrap();
        assert_eq!(g.cell_containing(&[0.5]), Some(32));
        assert_eq!(g.cell_containing(&[1.0]), Some(63));
        assert_eq!(g.cell_containing(&[1.5]), None);
        let g2 = build_grid(2, &[1.0, 2.0], &[4, 4]).unwrap();
        assert_eq!(g2.cell_containing(&[0.1, 0.1]), Some(0));
    }

    proptest::proptest! {
        #[test]
        fn prop_divergence_theorem(values in proptest::collection::vec(-1.0f64..1.0, 16), n1 in 4usize..8) {
            let g = build_grid(2, &[1.0, 1.0], &[4, n1]).unwrap();
            let mut vals = values;
            vals.resize(g.n_cells(), 0.25);
            let f = Field::new(g, vals).unwrap();
            proptest::prop_assert!(f.laplacian_neumann().integrate().abs() < 1e-12);
        }

        #[test]
        fn prop_grad2_is_dirichlet_form(values in proptest::collection::vec(-1.0f64..1.0, 24)) {
            let g = build_grid(1, &[1.0], &[24]).unwrap();
            let f = Field::new(g, values).unwrap();
            let grad2 = f.grad_power_integral(2).unwrap();
            let dirichlet = -f.laplacian_neumann().inner(&f);
            proptest::prop_assert!((grad2 - dirichlet).abs() < 1e-12);
        }
    }
}
