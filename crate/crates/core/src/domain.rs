//! Geometry of the centered square, the boundary collar `ω`, MAC grid
//! indexing and the discrete `H` and `V` norms.
//!
//! Velocities live on cell faces (MAC layout): the `u` component on the
//! `(nx−1)·ny` interior vertical faces and the `v` component on the
//! `nx·(ny−1)` interior horizontal faces. Faces lying on `∂Ω` carry the zero
//! normal velocity and are not stored. Tangential Dirichlet values are imposed
//! through ghost values `f_ghost = −f` half a cell outside the wall.

use crate::{Error, Result};

/// Centered square `[−a, a]²` with a boundary collar of width `collar_width`.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainSpec {
    pub half_width: f64,
    pub collar_width: f64,
    pub nx: usize,
    pub ny: usize,
    pub dx: f64,
    pub dy: f64,
}

/// How a grid direction meets the wall.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum WallMode {
    /// Stored points at `k·h`, `k = 1..n`; the walls are grid points carrying zero.
    Node,
    /// Stored points at `(k+½)·h`; the walls sit half a cell away (ghost `−f`).
    Cell,
}

impl DomainSpec {
    pub fn new(half_width: f64, collar_width: f64, nx: usize, ny: usize) -> Result<Self> {
        if !(half_width > 0.0) {
            return Err(Error::InvalidDomain(format!(
                "half_width must be positive, got {half_width}"
            )));
        }
        if nx < 8 || ny < 8 {
            return Err(Error::InvalidDomain(format!(
                "grid must be at least 8x8, got {nx}x{ny}"
            )));
        }
        if !(collar_width > 0.0 && collar_width < half_width) {
            return Err(Error::InvalidDomain(format!(
                "collar width {collar_width} must lie in (0, {half_width})"
            )));
        }
        let dx = 2.0 * half_width / nx as f64;
        let dy = 2.0 * half_width / ny as f64;
        if collar_width < 2.0 * dx.max(dy) {
            return Err(Error::InvalidDomain(format!(
                "collar width {collar_width} is thinner than two cells ({:.4})",
                2.0 * dx.max(dy)
            )));
        }
        Ok(Self {
            half_width,
            collar_width,
            nx,
            ny,
            dx,
            dy,
        })
    }

    /// Unit square with the given collar on an `n × n` grid.
    pub fn unit_square(collar_width: f64, n: usize) -> Result<Self> {
        Self::new(0.5, collar_width, n, n)
    }

    /// `R₀ = max |x|` over the closed square.
    pub fn r0(&self) -> f64 {
        std::f64::consts::SQRT_2 * self.half_width
    }

    /// `R₀` measured on cell centers; tends to [`Self::r0`] under refinement.
    pub fn grid_r0(&self) -> f64 {
        let mut best = 0.0_f64;
        for j in 0..self.ny {
            for i in 0..self.nx {
                let (x, y) = self.cell_center(i, j);
                best = best.max(x.hypot(y));
            }
        }
        best
    }

    /// Lower bound of `x·ν(x)` on `∂Ω` (star-shapedness constant).
    pub fn star_gamma(&self) -> f64 {
        self.half_width
    }

    pub fn area(&self) -> f64 {
        4.0 * self.half_width * self.half_width
    }

    pub fn cell_area(&self) -> f64 {
        self.dx * self.dy
    }

    /// Area fraction of the continuum collar.
    pub fn collar_area_fraction(&self) -> f64 {
        let inner = 1.0 - self.collar_width / self.half_width;
        1.0 - inner * inner
    }

    pub fn n_cells(&self) -> usize {
        self.nx * self.ny
    }

    pub fn n_u(&self) -> usize {
        (self.nx - 1) * self.ny
    }

    pub fn n_v(&self) -> usize {
        self.nx * (self.ny - 1)
    }

    /// Number of stored velocity unknowns.
    pub fn ndof(&self) -> usize {
        self.n_u() + self.n_v()
    }

    /// Interior stream-function nodes, i.e. the dimension of the discretely
    /// divergence-free subspace.
    pub fn n_stream(&self) -> usize {
        (self.nx - 1) * (self.ny - 1)
    }

    pub fn cell_center(&self, i: usize, j: usize) -> (f64, f64) {
        (
            -self.half_width + (i as f64 + 0.5) * self.dx,
            -self.half_width + (j as f64 + 0.5) * self.dy,
        )
    }

    /// Index of the `u` face at `x = −a + i·dx`, `i ∈ 1..nx`.
    #[inline]
    pub fn u_idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(i >= 1 && i < self.nx && j < self.ny);
        (i - 1) + (self.nx - 1) * j
    }

    /// Index of the `v` face at `y = −a + j·dy`, `j ∈ 1..ny`.
    #[inline]
    pub fn v_idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < self.nx && j >= 1 && j < self.ny);
        self.n_u() + i + self.nx * (j - 1)
    }

    #[inline]
    pub fn c_idx(&self, i: usize, j: usize) -> usize {
        i + self.nx * j
    }

    pub fn u_face(&self, i: usize, j: usize) -> (f64, f64) {
        (
            -self.half_width + i as f64 * self.dx,
            -self.half_width + (j as f64 + 0.5) * self.dy,
        )
    }

    pub fn v_face(&self, i: usize, j: usize) -> (f64, f64) {
        (
            -self.half_width + (i as f64 + 0.5) * self.dx,
            -self.half_width + j as f64 * self.dy,
        )
    }

    /// Position of every stored velocity unknown, in storage order.
    pub fn dof_positions(&self) -> Vec<(f64, f64)> {
        let mut pos = vec![(0.0, 0.0); self.ndof()];
        for j in 0..self.ny {
            for i in 1..self.nx {
                pos[self.u_idx(i, j)] = self.u_face(i, j);
            }
        }
        for j in 1..self.ny {
            for i in 0..self.nx {
                pos[self.v_idx(i, j)] = self.v_face(i, j);
            }
        }
        pos
    }

    /// Distance from `(x, y)` to `∂Ω`.
    pub fn boundary_distance(&self, x: f64, y: f64) -> f64 {
        self.half_width - x.abs().max(y.abs())
    }

    pub fn control_mask(&self, kind: MaskKind) -> ControlMask {
        let weight = |x: f64, y: f64| -> f64 {
            let d = self.boundary_distance(x, y);
            match kind {
                MaskKind::Sharp => {
                    if d <= self.collar_width + 1e-12 {
                        1.0
                    } else {
                        0.0
                    }
                }
                MaskKind::Smoothed { transition } => {
                    let z = (self.collar_width + 0.5 * transition - d) / transition;
                    smoothstep(z.clamp(0.0, 1.0))
                }
                MaskKind::Full => 1.0,
            }
        };
        let cells = (0..self.ny)
            .flat_map(|j| (0..self.nx).map(move |i| (i, j)))
            .map(|(i, j)| {
                let (x, y) = self.cell_center(i, j);
                weight(x, y)
            })
            .collect();
        let faces = self
            .dof_positions()
            .into_iter()
            .map(|(x, y)| weight(x, y))
            .collect();
        ControlMask { kind, cells, faces }
    }

    pub fn sharp_mask(&self) -> ControlMask {
        self.control_mask(MaskKind::Sharp)
    }

    pub fn norms(&self) -> NormSuite {
        NormSuite {
            domain: self.clone(),
        }
    }

    pub(crate) fn check_velocity(&self, f: &VelocityField) -> Result<()> {
        if f.values.len() != self.ndof() {
            return Err(Error::ShapeMismatch {
                expected: self.ndof(),
                got: f.values.len(),
            });
        }
        Ok(())
    }

    pub(crate) fn check_cells(&self, f: &CellField) -> Result<()> {
        if f.values.len() != self.n_cells() {
            return Err(Error::ShapeMismatch {
                expected: self.n_cells(),
                got: f.values.len(),
            });
        }
        Ok(())
    }
}

pub fn smoothstep(z: f64) -> f64 {
    // quintic smoothstep: C² with zero first and second derivatives at 0 and 1
    z * z * z * (z * (6.0 * z - 15.0) + 10.0)
}

/// Realization of the indicator `1_ω`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MaskKind {
    /// `{0, 1}` weights: 1 iff the point is within the collar width of `∂Ω`.
    Sharp,
    /// Quintic smoothstep across a band of the given width centered on the collar edge.
    Smoothed { transition: f64 },
    /// Observation on all of `Ω`.
    Full,
}

/// Per-cell and per-face weights representing `1_ω`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlMask {
    pub kind: MaskKind,
    /// Cell-centered weights, indexed like [`DomainSpec::c_idx`].
    pub cells: Vec<f64>,
    /// Weights at the stored velocity faces, in velocity storage order.
    pub faces: Vec<f64>,
}

impl ControlMask {
    /// Fraction of cells (weighted) inside `ω`.
    pub fn area_fraction(&self) -> f64 {
        self.cells.iter().sum::<f64>() / self.cells.len() as f64
    }

    pub fn is_binary(&self) -> bool {
        self.faces.iter().chain(&self.cells).all(|&w| w == 0.0 || w == 1.0)
    }

    /// Pointwise product `1_ω · f`.
    pub fn apply(&self, f: &VelocityField) -> VelocityField {
        VelocityField {
            values: f.values.iter().zip(&self.faces).map(|(v, w)| v * w).collect(),
        }
    }
}

/// MAC velocity field: `u` components first, then `v` components.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityField {
    pub values: Vec<f64>,
}

impl VelocityField {
    pub fn zeros(domain: &DomainSpec) -> Self {
        Self {
            values: vec![0.0; domain.ndof()],
        }
    }

    /// Samples a continuum vector field at the face positions of each component.
    pub fn from_fn(domain: &DomainSpec, f: impl Fn(f64, f64) -> [f64; 2]) -> Self {
        let mut values = vec![0.0; domain.ndof()];
        for j in 0..domain.ny {
            for i in 1..domain.nx {
                let (x, y) = domain.u_face(i, j);
                values[domain.u_idx(i, j)] = f(x, y)[0];
            }
        }
        for j in 1..domain.ny {
            for i in 0..domain.nx {
                let (x, y) = domain.v_face(i, j);
                values[domain.v_idx(i, j)] = f(x, y)[1];
            }
        }
        Self { values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        Self {
            values: self.values.iter().map(|v| alpha * v).collect(),
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        Self {
            values: self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        Self {
            values: self.values.iter().zip(&other.values).map(|(a, b)| a + b).collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        crate::linalg::max_abs(&self.values)
    }
}

/// Cell-centered scalar field (pressure, divergence, scalar test patterns).
#[derive(Debug, Clone, PartialEq)]
pub struct CellField {
    pub values: Vec<f64>,
}

impl CellField {
    pub fn zeros(domain: &DomainSpec) -> Self {
        Self {
            values: vec![0.0; domain.n_cells()],
        }
    }

    pub fn from_fn(domain: &DomainSpec, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut values = vec![0.0; domain.n_cells()];
        for j in 0..domain.ny {
            for i in 0..domain.nx {
                let (x, y) = domain.cell_center(i, j);
                values[domain.c_idx(i, j)] = f(x, y);
            }
        }
        Self { values }
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

/// Discrete `H` (L²) and `V` (Dirichlet gradient) norms. The `V′` norm needs
/// the Stokes modes and lives on [`crate::stokesop::StokesModes::vprime_norm`].
#[derive(Debug, Clone)]
pub struct NormSuite {
    domain: DomainSpec,
}

impl NormSuite {
    pub fn domain(&self) -> &DomainSpec {
        &self.domain
    }

    pub fn h_inner(&self, a: &VelocityField, b: &VelocityField) -> Result<f64> {
        self.domain.check_velocity(a)?;
        self.domain.check_velocity(b)?;
        Ok(crate::linalg::dot(&a.values, &b.values) * self.domain.cell_area())
    }

    pub fn h_norm(&self, f: &VelocityField) -> Result<f64> {
        Ok(self.h_inner(f, f)?.sqrt())
    }

    pub fn v_norm(&self, f: &VelocityField) -> Result<f64> {
        self.domain.check_velocity(f)?;
        let d = &self.domain;
        let (u, v) = f.values.split_at(d.n_u());
        let e = dirichlet_energy(u, d.nx - 1, d.ny, WallMode::Node, WallMode::Cell, d.dx, d.dy)
            + dirichlet_energy(v, d.nx, d.ny - 1, WallMode::Cell, WallMode::Node, d.dx, d.dy);
        Ok(e.sqrt())
    }

    /// L² norm of a cell-centered scalar.
    pub fn scalar_h_norm(&self, f: &CellField) -> Result<f64> {
        self.domain.check_cells(f)?;
        Ok((crate::linalg::dot(&f.values, &f.values) * self.domain.cell_area()).sqrt())
    }

    /// Dirichlet gradient norm of a cell-centered scalar vanishing on `∂Ω`.
    pub fn scalar_v_norm(&self, f: &CellField) -> Result<f64> {
        self.domain.check_cells(f)?;
        let d = &self.domain;
        Ok(dirichlet_energy(&f.values, d.nx, d.ny, WallMode::Cell, WallMode::Cell, d.dx, d.dy).sqrt())
    }
}

/// `Σ |discrete gradient|² dx dy` for a component stored as an `n1 × n2`
/// array (x index fastest) with homogeneous Dirichlet walls.
pub(crate) fn dirichlet_energy(
    f: &[f64],
    n1: usize,
    n2: usize,
    mode_x: WallMode,
    mode_y: WallMode,
    dx: f64,
    dy: f64,
) -> f64 {
    let at = |i: usize, j: usize| f[i + n1 * j];
    let area = dx * dy;
    let mut e = 0.0;
    for j in 0..n2 {
        for i in 0..n1 {
            if i + 1 < n1 {
                let g = (at(i + 1, j) - at(i, j)) / dx;
                e += g * g * area;
            }
        }
        e += wall_terms(at(0, j), at(n1 - 1, j), mode_x, dx) * area;
    }
    for i in 0..n1 {
        for j in 0..n2 {
            if j + 1 < n2 {
                let g = (at(i, j + 1) - at(i, j)) / dy;
                e += g * g * area;
            }
        }
        e += wall_terms(at(i, 0), at(i, n2 - 1), mode_y, dy) * area;
    }
    e
}

fn wall_terms(first: f64, last: f64, mode: WallMode, h: f64) -> f64 {
    match mode {
        // wall value 0 one full spacing away
        WallMode::Node => (first * first + last * last) / (h * h),
        // wall half a spacing away: gradient 2f/h over half a cell
        WallMode::Cell => 2.0 * (first * first + last * last) / (h * h),
    }
}

/// Five-point Laplacian of one component with the same wall closures,
/// accumulated into `out`.
pub(crate) fn laplacian_component(
    f: &[f64],
    out: &mut [f64],
    n1: usize,
    n2: usize,
    mode_x: WallMode,
    mode_y: WallMode,
    dx: f64,
    dy: f64,
) {
    let (ix2, iy2) = (1.0 / (dx * dx), 1.0 / (dy * dy));
    for j in 0..n2 {
        for i in 0..n1 {
            let k = i + n1 * j;
            let c = f[k];
            let left = if i > 0 {
                f[k - 1]
            } else {
                ghost(c, mode_x)
            };
            let right = if i + 1 < n1 {
                f[k + 1]
            } else {
                ghost(c, mode_x)
            };
            let down = if j > 0 {
                f[k - n1]
            } else {
                ghost(c, mode_y)
            };
            let up = if j + 1 < n2 {
                f[k + n1]
            } else {
                ghost(c, mode_y)
            };
            out[k] = (left - 2.0 * c + right) * ix2 + (down - 2.0 * c + up) * iy2;
        }
    }
}

#[inline]
fn ghost(c: f64, mode: WallMode) -> f64 {
    match mode {
        WallMode::Node => 0.0,
        WallMode::Cell => -c,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn r0_of_centered_square() {
        let d = DomainSpec::unit_square(0.15, 32).unwrap();
        assert!((d.r0() - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
        assert!((d.r0() - 0.7071).abs() < 1e-4);
    }

    #[test]
    fn grid_r0_converges() {
        let mut prev = f64::INFINITY;
        for n in [16, 32, 64, 128] {
            let d = DomainSpec::unit_square(0.15, n).unwrap();
            let err = d.r0() - d.grid_r0();
            assert!(err > 0.0 && err < prev);
            prev = err;
        }
        assert!(prev < 0.006);
    }

    #[test]
    fn rejects_bad_domains() {
        assert!(DomainSpec::unit_square(0.6, 32).is_err());
        assert!(DomainSpec::unit_square(0.0, 32).is_err());
        assert!(DomainSpec::unit_square(0.15, 4).is_err());
        // 0.05 < 2 cells of 1/32
        let err = DomainSpec::unit_square(0.05, 32).unwrap_err();
        assert!(err.to_string().contains("thinner than two cells"));
    }

    #[test]
    fn sharp_mask_is_collar_indicator() {
        let d = DomainSpec::unit_square(0.15, 32).unwrap();
        let m = d.sharp_mask();
        for j in 0..d.ny {
            for i in 0..d.nx {
                let (x, y) = d.cell_center(i, j);
                let inside = d.boundary_distance(x, y) <= 0.15;
                assert_eq!(m.cells[d.c_idx(i, j)], if inside { 1.0 } else { 0.0 });
            }
        }
        assert!(m.is_binary());
        // 5 cells per side inside the collar: 1 − (22/32)²
        assert!((m.area_fraction() - (1.0 - (22.0_f64 / 32.0).powi(2))).abs() < 1e-14);
        assert!((d.collar_area_fraction() - 0.51).abs() < 1e-14);
    }

    #[test]
    fn mask_area_fraction_converges_to_collar_area() {
        let d = DomainSpec::unit_square(0.15, 200).unwrap();
        assert!((d.sharp_mask().area_fraction() - 0.51).abs() < 0.01);
    }

    #[test]
    fn smoothed_mask_in_unit_interval() {
        let d = DomainSpec::unit_square(0.2, 32).unwrap();
        let m = d.control_mask(MaskKind::Smoothed { transition: 0.1 });
        assert!(m.cells.iter().all(|&w| (0.0..=1.0).contains(&w)));
        assert!(!m.is_binary());
        let (x, y) = d.cell_center(0, 16);
        assert_eq!(m.cells[d.c_idx(0, 16)], 1.0, "at ({x},{y})");
        assert_eq!(m.cells[d.c_idx(16, 16)], 0.0);
    }

    #[test]
    fn mask_is_idempotent() {
        let d = DomainSpec::unit_square(0.15, 16).unwrap();
        let m = d.sharp_mask();
        let f = VelocityField::from_fn(&d, |x, y| [x.sin() + y, x * y - 0.3]);
        assert_eq!(m.apply(&m.apply(&f)), m.apply(&f));
    }

    #[test]
    fn constant_field_norm() {
        let d = DomainSpec::unit_square(0.15, 16).unwrap();
        let n = d.norms();
        let c = CellField::from_fn(&d, |_, _| -3.0);
        assert!((n.scalar_h_norm(&c).unwrap() - 3.0 * d.area().sqrt()).abs() < 1e-12);
        let z = VelocityField::zeros(&d);
        assert_eq!(n.h_norm(&z).unwrap(), 0.0);
        assert_eq!(n.v_norm(&z).unwrap(), 0.0);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let d = DomainSpec::unit_square(0.15, 16).unwrap();
        let bad = VelocityField { values: vec![0.0; 3] };
        assert!(matches!(d.norms().h_norm(&bad), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn dirichlet_rayleigh_quotient_tends_to_two_pi_squared() {
        let target = 2.0 * PI * PI;
        let mut prev_err = f64::INFINITY;
        for n in [16, 32, 64] {
            let d = DomainSpec::unit_square(0.15, n).unwrap();
            let f = CellField::from_fn(&d, |x, y| (PI * (x + 0.5)).sin() * (PI * (y + 0.5)).sin());
            let norms = d.norms();
            let q = norms.scalar_v_norm(&f).unwrap().powi(2) / norms.scalar_h_norm(&f).unwrap().powi(2);
            let err = (q - target).abs();
            assert!(err < prev_err);
            prev_err = err;
        }
        assert!(prev_err / target < 1e-3);
    }

    #[test]
    fn v_norm_matches_laplacian_form() {
        let d = DomainSpec::unit_square(0.3, 12).unwrap();
        let f = VelocityField::from_fn(&d, |x, y| [(3.0 * x).cos() * y, x * x - y]);
        let mut lap = vec![0.0; d.ndof()];
        let (u, v) = f.values.split_at(d.n_u());
        let (lu, lv) = lap.split_at_mut(d.n_u());
        laplacian_component(u, lu, d.nx - 1, d.ny, WallMode::Node, WallMode::Cell, d.dx, d.dy);
        laplacian_component(v, lv, d.nx, d.ny - 1, WallMode::Cell, WallMode::Node, d.dx, d.dy);
        let form = -crate::linalg::dot(&lap, &f.values) * d.cell_area();
        let vn = d.norms().v_norm(&f).unwrap().powi(2);
        assert!((form - vn).abs() < 1e-12 * vn);
    }
}
