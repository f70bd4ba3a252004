//! Discrete Stokes operator `A = PΔ` on the MAC grid, the Leray projector and
//! the modal engine.
//!
//! The projector solves the Neumann pressure Poisson problem `D G p = D u`
//! exactly by separable cosine transforms, so `P` is an orthogonal projector
//! in the discrete `H` inner product up to roundoff.
//!
//! Divergence-free fields with zero normal flux are exactly the discrete
//! curls of a stream function vanishing on `∂Ω`. The eigendecomposition runs
//! Rayleigh–Ritz on that basis, which spans the whole divergence-free
//! subspace, so the computed modes are exact eigenfields of the discrete `A`.

use faer::linalg::triangular_solve::solve_lower_triangular_in_place;
use faer::{Mat, Parallelism, Side};

use crate::domain::{laplacian_component, CellField, ControlMask, DomainSpec, VelocityField, WallMode};
use crate::linalg;
use crate::{Error, Result};

pub use crate::domain::CellField as PressureField;

/// Discrete operators on a fixed MAC grid.
#[derive(Debug, Clone)]
pub struct StokesOperator {
    domain: DomainSpec,
    // orthonormal Neumann cosine bases and eigenvalues of the 1D second difference
    cos_x: Vec<f64>,
    cos_y: Vec<f64>,
    mu_x: Vec<f64>,
    mu_y: Vec<f64>,
}

fn neumann_basis(n: usize, h: f64) -> (Vec<f64>, Vec<f64>) {
    let mut basis = vec![0.0; n * n];
    let mut mu = vec![0.0; n];
    for k in 0..n {
        let scale = if k == 0 {
            (1.0 / n as f64).sqrt()
        } else {
            (2.0 / n as f64).sqrt()
        };
        for i in 0..n {
            basis[i + n * k] =
                scale * (std::f64::consts::PI * k as f64 * (i as f64 + 0.5) / n as f64).cos();
        }
        let s = (std::f64::consts::PI * k as f64 / (2.0 * n as f64)).sin();
        mu[k] = 4.0 * s * s / (h * h);
    }
    (basis, mu)
}

impl StokesOperator {
    pub fn new(domain: &DomainSpec) -> Self {
        let (cos_x, mu_x) = neumann_basis(domain.nx, domain.dx);
        let (cos_y, mu_y) = neumann_basis(domain.ny, domain.dy);
        Self {
            domain: domain.clone(),
            cos_x,
            cos_y,
            mu_x,
            mu_y,
        }
    }

    pub fn domain(&self) -> &DomainSpec {
        &self.domain
    }

    /// Vector Laplacian with homogeneous Dirichlet closure.
    pub fn laplacian(&self, f: &VelocityField) -> Result<VelocityField> {
        self.domain.check_velocity(f)?;
        let d = &self.domain;
        let mut out = vec![0.0; d.ndof()];
        let (u, v) = f.values.split_at(d.n_u());
        let (lu, lv) = out.split_at_mut(d.n_u());
        laplacian_component(u, lu, d.nx - 1, d.ny, WallMode::Node, WallMode::Cell, d.dx, d.dy);
        laplacian_component(v, lv, d.nx, d.ny - 1, WallMode::Cell, WallMode::Node, d.dx, d.dy);
        Ok(VelocityField { values: out })
    }

    /// Cell-centered discrete divergence.
    pub fn divergence(&self, f: &VelocityField) -> Result<CellField> {
        self.domain.check_velocity(f)?;
        let d = &self.domain;
        let mut out = vec![0.0; d.n_cells()];
        let val = &f.values;
        for j in 0..d.ny {
            for i in 0..d.nx {
                let ue = if i + 1 < d.nx { val[d.u_idx(i + 1, j)] } else { 0.0 };
                let uw = if i > 0 { val[d.u_idx(i, j)] } else { 0.0 };
                let vn = if j + 1 < d.ny { val[d.v_idx(i, j + 1)] } else { 0.0 };
                let vs = if j > 0 { val[d.v_idx(i, j)] } else { 0.0 };
                out[d.c_idx(i, j)] = (ue - uw) / d.dx + (vn - vs) / d.dy;
            }
        }
        Ok(CellField { values: out })
    }

    /// Face gradient of a cell field; equals `−Dᵀ`.
    pub fn gradient(&self, p: &CellField) -> Result<VelocityField> {
        self.domain.check_cells(p)?;
        let d = &self.domain;
        let mut out = vec![0.0; d.ndof()];
        let pv = &p.values;
        for j in 0..d.ny {
            for i in 1..d.nx {
                out[d.u_idx(i, j)] = (pv[d.c_idx(i, j)] - pv[d.c_idx(i - 1, j)]) / d.dx;
            }
        }
        for j in 1..d.ny {
            for i in 0..d.nx {
                out[d.v_idx(i, j)] = (pv[d.c_idx(i, j)] - pv[d.c_idx(i, j - 1)]) / d.dy;
            }
        }
        Ok(VelocityField { values: out })
    }

    /// Solves `D G p = rhs` with the zero-mean gauge.
    pub fn pressure_poisson(&self, rhs: &CellField) -> Result<PressureField> {
        self.pressure_poisson_scaled(rhs, linalg::max_abs(&rhs.values))
    }

    /// `scale` is the magnitude against which the consistency and residual
    /// checks are measured; a projection passes the size of the raw field so
    /// that nearly divergence-free input is not rejected on roundoff.
    fn pressure_poisson_scaled(&self, rhs: &CellField, scale: f64) -> Result<PressureField> {
        self.domain.check_cells(rhs)?;
        let (nx, ny) = (self.domain.nx, self.domain.ny);
        // forward transform: r̂ = Cxᵀ R Cy
        let r = &rhs.values;
        let mut tmp = vec![0.0; nx * ny];
        for j in 0..ny {
            for k in 0..nx {
                let mut s = 0.0;
                for i in 0..nx {
                    s += self.cos_x[i + nx * k] * r[i + nx * j];
                }
                tmp[k + nx * j] = s;
            }
        }
        let mut hat = vec![0.0; nx * ny];
        for l in 0..ny {
            for k in 0..nx {
                let mut s = 0.0;
                for j in 0..ny {
                    s += self.cos_y[j + ny * l] * tmp[k + nx * j];
                }
                hat[k + nx * l] = s;
            }
        }
        // the constant mode must be absent from a consistent right-hand side
        if hat[0].abs() > 1e-9 * scale.max(1e-300) * ((nx * ny) as f64).sqrt() {
            return Err(Error::NonConvergence {
                solver: "pressure Poisson (inconsistent right-hand side)",
                iterations: 0,
                residual: hat[0].abs() / scale.max(1e-300),
            });
        }
        for l in 0..ny {
            for k in 0..nx {
                let denom = self.mu_x[k] + self.mu_y[l];
                hat[k + nx * l] = if k == 0 && l == 0 {
                    0.0
                } else {
                    -hat[k + nx * l] / denom
                };
            }
        }
        for j in 0..ny {
            for k in 0..nx {
                let mut s = 0.0;
                for l in 0..ny {
                    s += self.cos_y[j + ny * l] * hat[k + nx * l];
                }
                tmp[k + nx * j] = s;
            }
        }
        let mut p = vec![0.0; nx * ny];
        for j in 0..ny {
            for i in 0..nx {
                let mut s = 0.0;
                for k in 0..nx {
                    s += self.cos_x[i + nx * k] * tmp[k + nx * j];
                }
                p[i + nx * j] = s;
            }
        }
        let p = CellField { values: p };
        let check = self.divergence(&self.gradient(&p)?)?;
        let res = check
            .values
            .iter()
            .zip(&rhs.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if res > 1e-8 * scale.max(1e-300) {
            return Err(Error::NonConvergence {
                solver: "pressure Poisson",
                iterations: 1,
                residual: res / scale.max(1e-300),
            });
        }
        Ok(p)
    }

    /// Leray projection and the pressure of the removed gradient part.
    pub fn leray_project_with_pressure(
        &self,
        raw: &VelocityField,
    ) -> Result<(VelocityField, PressureField)> {
        let div = self.divergence(raw)?;
        let d = &self.domain;
        let scale = raw.max_abs() * (1.0 / d.dx + 1.0 / d.dy);
        let p = self.pressure_poisson_scaled(&div, scale)?;
        let g = self.gradient(&p)?;
        Ok((raw.sub(&g), p))
    }

    pub fn leray_project(&self, raw: &VelocityField) -> Result<VelocityField> {
        Ok(self.leray_project_with_pressure(raw)?.0)
    }

    /// `A u = P(Δ_h u)`.
    pub fn apply_a(&self, u: &VelocityField) -> Result<VelocityField> {
        self.leray_project(&self.laplacian(u)?)
    }

    /// Pressure accompanying a divergence-free field under `Δ_h`:
    /// `Δ_h u − ∇p = A u`.
    pub fn stokes_pressure(&self, u: &VelocityField) -> Result<PressureField> {
        Ok(self.leray_project_with_pressure(&self.laplacian(u)?)?.1)
    }

    pub fn stream_len(&self) -> usize {
        self.domain.n_stream()
    }

    #[inline]
    fn s_idx(&self, i: usize, j: usize) -> usize {
        (i - 1) + (self.domain.nx - 1) * (j - 1)
    }

    /// Discrete curl `C ψ` of a stream function on interior nodes.
    pub fn curl(&self, psi: &[f64]) -> VelocityField {
        let d = &self.domain;
        let at = |i: usize, j: usize| -> f64 {
            if i == 0 || j == 0 || i == d.nx || j == d.ny {
                0.0
            } else {
                psi[self.s_idx(i, j)]
            }
        };
        let mut out = vec![0.0; d.ndof()];
        for j in 0..d.ny {
            for i in 1..d.nx {
                out[d.u_idx(i, j)] = (at(i, j + 1) - at(i, j)) / d.dy;
            }
        }
        for j in 1..d.ny {
            for i in 0..d.nx {
                out[d.v_idx(i, j)] = -(at(i + 1, j) - at(i, j)) / d.dx;
            }
        }
        VelocityField { values: out }
    }

    /// Transpose of [`Self::curl`] (unweighted).
    pub fn curl_transpose(&self, f: &[f64]) -> Vec<f64> {
        let d = &self.domain;
        let mut out = vec![0.0; d.n_stream()];
        for j in 0..d.ny {
            for i in 1..d.nx {
                let val = f[d.u_idx(i, j)] / d.dy;
                if j + 1 < d.ny {
                    out[self.s_idx(i, j + 1)] += val;
                }
                if j > 0 {
                    out[self.s_idx(i, j)] -= val;
                }
            }
        }
        for j in 1..d.ny {
            for i in 0..d.nx {
                let val = f[d.v_idx(i, j)] / d.dx;
                if i + 1 < d.nx {
                    out[self.s_idx(i + 1, j)] -= val;
                }
                if i > 0 {
                    out[self.s_idx(i, j)] += val;
                }
            }
        }
        out
    }

    /// Stream-basis Gram matrices `K = Cᵀ W C` and `K₂ = Cᵀ W (−Δ_h) C`.
    fn stream_matrices(&self) -> Result<(Mat<f64>, Mat<f64>)> {
        let n = self.stream_len();
        let w = self.domain.cell_area();
        let mut k = Mat::<f64>::zeros(n, n);
        let mut k2 = Mat::<f64>::zeros(n, n);
        let mut e = vec![0.0; n];
        for col in 0..n {
            e[col] = 1.0;
            let c = self.curl(&e);
            let lc = self.laplacian(&c)?;
            let kc = self.curl_transpose(&c.values);
            let k2c = self.curl_transpose(&lc.values);
            for row in 0..n {
                k[(row, col)] = w * kc[row];
                k2[(row, col)] = -w * k2c[row];
            }
            e[col] = 0.0;
        }
        Ok((k, k2))
    }

    /// The `count` lowest eigenpairs of `−A`.
    pub fn eig_modes(&self, count: usize) -> Result<StokesModes> {
        let n = self.stream_len();
        if count == 0 || count > n {
            return Err(Error::TooManyModes {
                requested: count,
                available: n,
            });
        }
        let (k, k2) = self.stream_matrices()?;
        let chol = k
            .cholesky(Side::Lower)
            .map_err(|e| Error::Eigensolver(format!("stream Gram matrix: {e:?}")))?;
        let l = chol.compute_l();
        // S = L⁻¹ K₂ L⁻ᵀ
        let mut y = k2;
        solve_lower_triangular_in_place(l.as_ref(), y.as_mut(), Parallelism::Rayon(0));
        let mut s = y.transpose().to_owned();
        solve_lower_triangular_in_place(l.as_ref(), s.as_mut(), Parallelism::Rayon(0));
        for i in 0..n {
            for j in 0..i {
                let avg = 0.5 * (s[(i, j)] + s[(j, i)]);
                s[(i, j)] = avg;
                s[(j, i)] = avg;
            }
        }
        let (vals, vecs) = linalg::sym_eigen(&s)?;
        if vals[0] <= 0.0 {
            return Err(Error::Eigensolver(format!(
                "non-positive Stokes eigenvalue {}",
                vals[0]
            )));
        }
        // X = L⁻ᵀ Q restricted to the first `count` columns
        let mut x = Mat::from_fn(n, count, |r, c| vecs[(r, c)]);
        faer::linalg::triangular_solve::solve_upper_triangular_in_place(
            l.transpose(),
            x.as_mut(),
            Parallelism::Rayon(0),
        );
        let ndof = self.domain.ndof();
        let mut fields = Mat::<f64>::zeros(ndof, count);
        let mut psi = vec![0.0; n];
        for c in 0..count {
            for r in 0..n {
                psi[r] = x[(r, c)];
            }
            let f = self.curl(&psi);
            for r in 0..ndof {
                fields[(r, c)] = f.values[r];
            }
        }
        StokesModes::from_parts(self.domain.clone(), vals[..count].to_vec(), fields)
    }

    /// Smallest eigenvalue of `−A` by inverse iteration; usable on grids
    /// where the dense eigensolve is too expensive.
    pub fn lowest_eigenvalue(&self, tol: f64) -> Result<f64> {
        let n = self.stream_len();
        let (k, k2) = self.stream_matrices()?;
        let chol = k2
            .cholesky(Side::Lower)
            .map_err(|e| Error::Eigensolver(format!("{e:?}")))?;
        use faer::prelude::SpSolver;
        let mut x = Mat::from_fn(n, 1, |i, _| 1.0 + 0.01 * (i % 7) as f64);
        let mut lambda = f64::INFINITY;
        for _ in 0..500 {
            let kx = &k * &x;
            let y = chol.solve(&kx);
            let yky = (y.transpose() * (&k * &y))[(0, 0)];
            let yk2y = (y.transpose() * (&k2 * &y))[(0, 0)];
            let new = yk2y / yky;
            let norm = yky.sqrt();
            x = Mat::from_fn(n, 1, |i, _| y[(i, 0)] / norm);
            if (new - lambda).abs() <= tol * new {
                return Ok(new);
            }
            lambda = new;
        }
        Err(Error::NonConvergence {
            solver: "inverse iteration",
            iterations: 500,
            residual: f64::NAN,
        })
    }
}

/// Boundary sample layout for normal-derivative traces.
///
/// On each wall there are `n−1` samples of the tangential component at the
/// interior grid nodes and `n` samples of the normal component at the cell
/// midpoints. Each sample carries its position, outward normal and arc-length
/// weight.
#[derive(Debug, Clone)]
pub struct BoundaryQuadrature {
    pub positions: Vec<(f64, f64)>,
    pub normals: Vec<(f64, f64)>,
    pub weights: Vec<f64>,
}

impl BoundaryQuadrature {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// Normal-derivative trace `∂f/∂ν` of a velocity field at the samples of
/// [`boundary_layout`], by one-sided second-order differences.
pub fn boundary_trace(domain: &DomainSpec, f: &VelocityField) -> Vec<f64> {
    let d = domain;
    let val = &f.values;
    let mut out = Vec::with_capacity(4 * (d.nx + d.ny));
    // tangential: wall half a cell away, samples at r = h/2, 3h/2
    let tangential = |a: f64, b: f64, h: f64| -(9.0 * a - b) / (3.0 * h);
    // normal: wall is a grid point, samples at r = h, 2h
    let normal = |a: f64, b: f64, h: f64| -(4.0 * a - b) / (2.0 * h);
    // left wall x = −a
    for j in 1..d.ny {
        out.push(tangential(val[d.v_idx(0, j)], val[d.v_idx(1, j)], d.dx));
    }
    for j in 0..d.ny {
        out.push(normal(val[d.u_idx(1, j)], val[d.u_idx(2, j)], d.dx));
    }
    // right wall x = +a
    for j in 1..d.ny {
        out.push(tangential(val[d.v_idx(d.nx - 1, j)], val[d.v_idx(d.nx - 2, j)], d.dx));
    }
    for j in 0..d.ny {
        out.push(normal(val[d.u_idx(d.nx - 1, j)], val[d.u_idx(d.nx - 2, j)], d.dx));
    }
    // bottom wall y = −a
    for i in 1..d.nx {
        out.push(tangential(val[d.u_idx(i, 0)], val[d.u_idx(i, 1)], d.dy));
    }
    for i in 0..d.nx {
        out.push(normal(val[d.v_idx(i, 1)], val[d.v_idx(i, 2)], d.dy));
    }
    // top wall y = +a
    for i in 1..d.nx {
        out.push(tangential(val[d.u_idx(i, d.ny - 1)], val[d.u_idx(i, d.ny - 2)], d.dy));
    }
    for i in 0..d.nx {
        out.push(normal(val[d.v_idx(i, d.ny - 1)], val[d.v_idx(i, d.ny - 2)], d.dy));
    }
    out
}

pub fn boundary_layout(domain: &DomainSpec) -> BoundaryQuadrature {
    let d = domain;
    let a = d.half_width;
    let mut positions = Vec::new();
    let mut normals = Vec::new();
    let mut weights = Vec::new();
    let mut push = |p: (f64, f64), n: (f64, f64), w: f64| {
        positions.push(p);
        normals.push(n);
        weights.push(w);
    };
    for (x, nx) in [(-a, -1.0), (a, 1.0)] {
        for j in 1..d.ny {
            push((x, -a + j as f64 * d.dy), (nx, 0.0), d.dy);
        }
        for j in 0..d.ny {
            push((x, -a + (j as f64 + 0.5) * d.dy), (nx, 0.0), d.dy);
        }
    }
    for (y, ny) in [(-a, -1.0), (a, 1.0)] {
        for i in 1..d.nx {
            push((-a + i as f64 * d.dx, y), (0.0, ny), d.dx);
        }
        for i in 0..d.nx {
            push((-a + (i as f64 + 0.5) * d.dx, y), (0.0, ny), d.dx);
        }
    }
    BoundaryQuadrature {
        positions,
        normals,
        weights,
    }
}

/// Eigendecomposition of `−A`: ascending eigenvalues, `H`-orthonormal
/// divergence-free eigenfields and their boundary normal-derivative traces.
#[derive(Debug, Clone)]
pub struct StokesModes {
    domain: DomainSpec,
    pub eigenvalues: Vec<f64>,
    /// `ndof × M`, column `j` is `e_j`.
    pub fields: Mat<f64>,
    /// `n_boundary × M`, column `j` is `∂e_j/∂ν`.
    pub traces: Mat<f64>,
    pub boundary: BoundaryQuadrature,
}

impl StokesModes {
    pub fn from_parts(domain: DomainSpec, eigenvalues: Vec<f64>, fields: Mat<f64>) -> Result<Self> {
        if fields.nrows() != domain.ndof() || fields.ncols() != eigenvalues.len() {
            return Err(Error::ShapeMismatch {
                expected: domain.ndof() * eigenvalues.len(),
                got: fields.nrows() * fields.ncols(),
            });
        }
        let boundary = boundary_layout(&domain);
        let m = eigenvalues.len();
        let mut traces = Mat::<f64>::zeros(boundary.len(), m);
        for j in 0..m {
            let f = VelocityField {
                values: (0..domain.ndof()).map(|r| fields[(r, j)]).collect(),
            };
            let t = boundary_trace(&domain, &f);
            for (r, v) in t.into_iter().enumerate() {
                traces[(r, j)] = v;
            }
        }
        Ok(Self {
            domain,
            eigenvalues,
            fields,
            traces,
            boundary,
        })
    }

    pub fn domain(&self) -> &DomainSpec {
        &self.domain
    }

    pub fn count(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn frequencies(&self) -> Vec<f64> {
        self.eigenvalues.iter().map(|l| l.sqrt()).collect()
    }

    pub fn mode(&self, j: usize) -> VelocityField {
        VelocityField {
            values: (0..self.domain.ndof()).map(|r| self.fields[(r, j)]).collect(),
        }
    }

    /// `H` inner products `(f, e_j)` for all retained modes.
    pub fn project(&self, f: &VelocityField) -> Result<Vec<f64>> {
        self.domain.check_velocity(f)?;
        let w = self.domain.cell_area();
        Ok((0..self.count())
            .map(|j| {
                let col = self.fields.col(j);
                w * (0..f.values.len()).map(|r| col.read(r) * f.values[r]).sum::<f64>()
            })
            .collect())
    }

    /// `Σ c_j e_j` over the first `c.len()` modes.
    pub fn synthesize(&self, c: &[f64]) -> VelocityField {
        let n = self.domain.ndof();
        let mut out = vec![0.0; n];
        for (j, &cj) in c.iter().enumerate() {
            if cj == 0.0 {
                continue;
            }
            let col = self.fields.col(j);
            for (r, o) in out.iter_mut().enumerate() {
                *o += cj * col.read(r);
            }
        }
        VelocityField { values: out }
    }

    /// `‖f‖_{V′}` over the retained modes.
    pub fn vprime_norm(&self, f: &VelocityField) -> Result<f64> {
        let c = self.project(f)?;
        Ok(c.iter()
            .zip(&self.eigenvalues)
            .map(|(ci, l)| ci * ci / l)
            .sum::<f64>()
            .sqrt())
    }

    /// `Q_jk = (1_ω e_j, e_k)_H` for the first `m_f` modes.
    pub fn masked_gram(&self, mask: &ControlMask, m_f: usize) -> Mat<f64> {
        let w = self.domain.cell_area();
        let n = self.domain.ndof();
        let weighted = Mat::from_fn(n, m_f, |r, c| mask.faces[r] * self.fields[(r, c)] * w);
        let head = self.fields.as_ref().subcols(0, m_f);
        let mut q = head.transpose() * &weighted;
        for i in 0..m_f {
            for j in 0..i {
                let avg = 0.5 * (q[(i, j)] + q[(j, i)]);
                q[(i, j)] = avg;
                q[(j, i)] = avg;
            }
        }
        q
    }

    /// `B_jk = ∫_{∂Ω} ∂_ν e_j · ∂_ν e_k dΣ` for the first `m_f` modes.
    pub fn boundary_gram(&self, m_f: usize) -> Mat<f64> {
        let nb = self.boundary.len();
        let head = self.traces.as_ref().subcols(0, m_f);
        let weighted = Mat::from_fn(nb, m_f, |r, c| self.boundary.weights[r] * self.traces[(r, c)]);
        head.transpose() * &weighted
    }

    /// Modal amplitudes of the boundary trace: `∂_ν(Σ c_j e_j)` at the boundary samples.
    pub fn trace_of(&self, c: &[f64]) -> Vec<f64> {
        let nb = self.boundary.len();
        let mut out = vec![0.0; nb];
        for (j, &cj) in c.iter().enumerate() {
            for (r, o) in out.iter_mut().enumerate() {
                *o += cj * self.traces[(r, j)];
            }
        }
        out
    }
}

/// `‖f‖²_{V′}` by solving `−A ψ = f` with conjugate gradients on the
/// divergence-free subspace (no eigenvectors involved).
pub fn vprime_norm_iterative(op: &StokesOperator, f: &VelocityField, tol: f64) -> Result<f64> {
    let w = op.domain().cell_area();
    let apply = |x: &[f64], out: &mut [f64]| {
        let v = VelocityField { values: x.to_vec() };
        let a = op.apply_a(&v).expect("shape checked");
        for (o, ai) in out.iter_mut().zip(&a.values) {
            *o = -ai;
        }
    };
    let rep = linalg::conjugate_gradient(apply, &f.values, tol, 20 * f.values.len())?;
    Ok(linalg::dot(&f.values, &rep.solution) * w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling;

    fn setup(n: usize) -> (DomainSpec, StokesOperator) {
        let collar = if n < 16 { 0.3 } else { 0.15 };
        let d = DomainSpec::unit_square(collar, n).unwrap();
        let op = StokesOperator::new(&d);
        (d, op)
    }

    fn random_field(d: &DomainSpec, seed: u64) -> VelocityField {
        let mut rng = sampling::rng(seed);
        VelocityField {
            values: sampling::normal_vec(&mut rng, d.ndof()),
        }
    }

    #[test]
    fn gradient_is_minus_divergence_transpose() {
        let (d, op) = setup(10);
        let u = random_field(&d, 1);
        let mut rng = sampling::rng(2);
        let p = CellField {
            values: sampling::normal_vec(&mut rng, d.n_cells()),
        };
        let lhs = linalg::dot(&op.divergence(&u).unwrap().values, &p.values);
        let rhs = -linalg::dot(&u.values, &op.gradient(&p).unwrap().values);
        assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0));
    }

    #[test]
    fn projection_is_divergence_free_and_idempotent() {
        let (d, op) = setup(16);
        let raw = random_field(&d, 3);
        let p1 = op.leray_project(&raw).unwrap();
        let div = op.divergence(&p1).unwrap();
        assert!(linalg::max_abs(&div.values) <= 1e-10 * raw.max_abs() / d.dx);
        let p2 = op.leray_project(&p1).unwrap();
        assert!(p2.sub(&p1).max_abs() <= 1e-10 * p1.max_abs());
    }

    #[test]
    fn projection_annihilates_gradients() {
        let (d, op) = setup(16);
        let q = CellField::from_fn(&d, |x, y| (3.0 * x).sin() * y + x * x);
        let g = op.gradient(&q).unwrap();
        let pg = op.leray_project(&g).unwrap();
        assert!(pg.max_abs() <= 1e-10 * g.max_abs());
    }

    #[test]
    fn projection_is_h_orthogonal() {
        let (d, op) = setup(16);
        let raw = random_field(&d, 4);
        let pr = op.leray_project(&raw).unwrap();
        let w = op.leray_project(&random_field(&d, 5)).unwrap();
        let defect = d.norms().h_inner(&raw.sub(&pr), &w).unwrap();
        assert!(defect.abs() < 1e-10 * d.norms().h_norm(&raw).unwrap() * d.norms().h_norm(&w).unwrap());
    }

    #[test]
    fn inconsistent_poisson_rhs_is_rejected() {
        let (d, op) = setup(8);
        let rhs = CellField::from_fn(&d, |_, _| 1.0);
        assert!(op.pressure_poisson(&rhs).is_err());
    }

    #[test]
    fn curl_is_divergence_free() {
        let (d, op) = setup(12);
        let mut rng = sampling::rng(6);
        let psi = sampling::normal_vec(&mut rng, d.n_stream());
        let f = op.curl(&psi);
        let div = op.divergence(&f).unwrap();
        assert!(linalg::max_abs(&div.values) < 1e-10 * f.max_abs() / d.dx);
        let g = random_field(&d, 7);
        let lhs = linalg::dot(&f.values, &g.values);
        let rhs = linalg::dot(&psi, &op.curl_transpose(&g.values));
        assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0));
    }

    #[test]
    fn a_is_symmetric_negative_definite() {
        let (d, op) = setup(16);
        let u = op.leray_project(&random_field(&d, 8)).unwrap();
        let w = op.leray_project(&random_field(&d, 9)).unwrap();
        let n = d.norms();
        let au = op.apply_a(&u).unwrap();
        let aw = op.apply_a(&w).unwrap();
        let lhs = n.h_inner(&au, &w).unwrap();
        let rhs = n.h_inner(&u, &aw).unwrap();
        assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1.0));
        assert!(n.h_inner(&au, &u).unwrap() < 0.0);
    }

    #[test]
    fn modes_are_orthonormal_eigenfields() {
        let (d, op) = setup(16);
        let modes = op.eig_modes(60).unwrap();
        let n = d.norms();
        for w in modes.eigenvalues.windows(2) {
            assert!(w[0] > 0.0 && w[0] <= w[1]);
        }
        let gram = modes.masked_gram(&d.control_mask(crate::domain::MaskKind::Full), 60);
        for i in 0..60 {
            for j in 0..60 {
                let target = if i == j { 1.0 } else { 0.0 };
                assert!((gram[(i, j)] - target).abs() < 1e-10, "({i},{j})");
            }
        }
        for j in [0, 7, 59] {
            let e = modes.mode(j);
            let lam = modes.eigenvalues[j];
            let res = op.apply_a(&e).unwrap().add(&e.scaled(lam));
            assert!(n.h_norm(&res).unwrap() <= 1e-8 * lam);
            let rq = n.v_norm(&e).unwrap().powi(2);
            assert!((rq - lam).abs() <= 1e-8 * lam);
            let div = op.divergence(&e).unwrap();
            assert!(linalg::max_abs(&div.values) <= 1e-10 * e.max_abs() / d.dx);
            // eigenfield is a fixed point of P
            let pe = op.leray_project(&e).unwrap();
            assert!(pe.sub(&e).max_abs() <= 1e-10 * e.max_abs());
        }
    }

    #[test]
    fn too_many_modes_is_an_error() {
        let (d, op) = setup(8);
        let err = op.eig_modes(d.n_stream() + 1).unwrap_err();
        assert!(matches!(err, Error::TooManyModes { .. }));
    }

    #[test]
    fn vprime_of_eigenfield() {
        let (_, op) = setup(12);
        let modes = op.eig_modes(20).unwrap();
        for j in [0, 5, 19] {
            let v = modes.vprime_norm(&modes.mode(j)).unwrap();
            assert!((v * v - 1.0 / modes.eigenvalues[j]).abs() < 1e-12);
        }
        let z = VelocityField::zeros(op.domain());
        assert_eq!(modes.vprime_norm(&z).unwrap(), 0.0);
    }

    #[test]
    fn vprime_modal_matches_iterative_route() {
        let (_, op) = setup(12);
        let modes = op.eig_modes(30).unwrap();
        let mut rng = sampling::rng(10);
        let c = sampling::normal_vec(&mut rng, 30);
        let f = modes.synthesize(&c);
        let modal = modes.vprime_norm(&f).unwrap().powi(2);
        let iterative = vprime_norm_iterative(&op, &f, 1e-13).unwrap();
        assert!((modal - iterative).abs() <= 1e-8 * modal, "{modal} vs {iterative}");
    }

    #[test]
    fn lowest_eigenvalue_by_inverse_iteration_matches_dense() {
        let (_, op) = setup(16);
        let dense = op.eig_modes(1).unwrap().eigenvalues[0];
        let inv = op.lowest_eigenvalue(1e-13).unwrap();
        assert!((dense - inv).abs() < 1e-9 * dense);
    }

    #[test]
    fn boundary_trace_of_smooth_field() {
        // u = (a(x) a'(y), −a'(x) a(y)) with a = cos²(πx) vanishes on ∂Ω
        use std::f64::consts::PI;
        let a = |s: f64| (PI * s).cos().powi(2);
        let da = |s: f64| -PI * (2.0 * PI * s).sin();
        let dda = |s: f64| -2.0 * PI * PI * (2.0 * PI * s).cos();
        let mut prev = f64::INFINITY;
        for n in [16, 32, 64] {
            let d = DomainSpec::unit_square(0.15, n).unwrap();
            let f = VelocityField::from_fn(&d, |x, y| [a(x) * da(y), -da(x) * a(y)]);
            let tr = boundary_trace(&d, &f);
            let lay = boundary_layout(&d);
            let mut err = 0.0_f64;
            for (k, (&(x, y), &(nx, ny))) in lay.positions.iter().zip(&lay.normals).enumerate() {
                // the normal component has zero normal derivative here
                let du = if nx != 0.0 { 0.0 } else { ny * a(x) * dda(y) };
                let dv = if nx != 0.0 { -nx * dda(x) * a(y) } else { 0.0 };
                let on_node = |s: f64, h: f64| {
                    let r = ((s + 0.5) / h).round();
                    ((s + 0.5) - r * h).abs() < 1e-9
                };
                let exact = if nx != 0.0 {
                    if on_node(y, d.dy) { dv } else { 0.0 }
                } else if on_node(x, d.dx) {
                    du
                } else {
                    0.0
                };
                err = err.max((tr[k] - exact).abs());
            }
            assert!(err < prev);
            prev = err;
        }
        assert!(prev < 0.05 * 2.0 * PI * PI);
    }
}
