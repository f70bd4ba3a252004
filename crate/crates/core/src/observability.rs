//! Numerical checks of the observability machinery for the hyperbolic
//! Stokes system `φ_tt − Δφ + ∇p = f`, `div φ = 0`, `φ|_∂Ω = 0`:
//! the multiplier identity, the pressure identity, boundary observability,
//! the hidden-regularity (direct) inequality, internal observability
//! constants and an empirical control time.
//!
//! Space integrals are evaluated on cell centers: `∂_x u` and `∂_y v` by the
//! compact MAC differences, cross derivatives by centered differences with
//! Dirichlet ghost values, `∇p` by centered differences with one-sided
//! second-order closures. Normal derivatives on `∂Ω` come from the one-sided
//! boundary traces of [`crate::stokesop::boundary_trace`].

use std::fmt;
use std::sync::Arc;

use faer::Mat;
use rayon::prelude::*;
use serde::Serialize;

use crate::domain::{smoothstep, CellField, ControlMask, DomainSpec, VelocityField};
use crate::hum::{self, assemble_wave_gramian, ObservedSystem};
use crate::linalg;
use crate::quadrature::{CompositeRule, GaussLegendre};
use crate::sampling;
use crate::stokesop::{boundary_layout, boundary_trace, StokesModes, StokesOperator};
use crate::{Error, Result};

fn smoothstep_prime(z: f64) -> f64 {
    30.0 * z * z * (z - 1.0) * (z - 1.0)
}

/// `C²` time cutoff: 0 at `t ∈ {0, T}`, 1 on `[ε, T − ε]`. Returns `(η, η')`.
pub fn time_cutoff(t: f64, horizon: f64, eps: f64) -> (f64, f64) {
    if t <= 0.0 || t >= horizon {
        return (0.0, 0.0);
    }
    if t < eps {
        let z = t / eps;
        (smoothstep(z), smoothstep_prime(z) / eps)
    } else if t > horizon - eps {
        let z = (horizon - t) / eps;
        (smoothstep(z), -smoothstep_prime(z) / eps)
    } else {
        (1.0, 0.0)
    }
}

type CustomField = Arc<dyn Fn(f64, f64) -> ([f64; 2], [[f64; 2]; 2]) + Send + Sync>;

/// Vector multiplier `q(x, t)`; `jacobian[k][j] = ∂_j q_k`.
#[derive(Clone)]
pub enum MultiplierField {
    /// `m(x) = x − x₀`.
    Radial { center: (f64, f64) },
    Constant([f64; 2]),
    /// `q = b + A x`.
    Affine { b: [f64; 2], a: [[f64; 2]; 2] },
    /// `θ(x, t) = η(t) h(x)`: `h = (s(x), s(y))` with `s` rising from 0 at
    /// distance `collar` from the wall to `±1` on it, `η` = [`time_cutoff`].
    Collar {
        half_width: f64,
        collar: f64,
        horizon: f64,
        eps: f64,
    },
    Custom(CustomField),
}

impl fmt::Debug for MultiplierField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Radial { center } => write!(f, "Radial({center:?})"),
            Self::Constant(c) => write!(f, "Constant({c:?})"),
            Self::Affine { b, a } => write!(f, "Affine({b:?}, {a:?})"),
            Self::Collar { collar, eps, .. } => write!(f, "Collar(width {collar}, ε {eps})"),
            Self::Custom(_) => write!(f, "Custom"),
        }
    }
}

impl MultiplierField {
    pub fn radial() -> Self {
        Self::Radial { center: (0.0, 0.0) }
    }

    fn collar_profile(half_width: f64, collar: f64, x: f64) -> (f64, f64) {
        let z = (x.abs() - (half_width - collar)) / collar;
        if z <= 0.0 {
            return (0.0, 0.0);
        }
        let z = z.min(1.0);
        (x.signum() * smoothstep(z), smoothstep_prime(z) / collar)
    }

    /// `(q, ∂q, ∂_t q)` at `(x, y, t)`.
    pub fn eval(&self, x: f64, y: f64, t: f64) -> ([f64; 2], [[f64; 2]; 2], [f64; 2]) {
        match self {
            Self::Radial { center } => ([x - center.0, y - center.1], [[1.0, 0.0], [0.0, 1.0]], [0.0; 2]),
            Self::Constant(c) => (*c, [[0.0; 2]; 2], [0.0; 2]),
            Self::Affine { b, a } => (
                [b[0] + a[0][0] * x + a[0][1] * y, b[1] + a[1][0] * x + a[1][1] * y],
                *a,
                [0.0; 2],
            ),
            Self::Collar {
                half_width,
                collar,
                horizon,
                eps,
            } => {
                let (hx, dhx) = Self::collar_profile(*half_width, *collar, x);
                let (hy, dhy) = Self::collar_profile(*half_width, *collar, y);
                let (eta, deta) = time_cutoff(t, *horizon, *eps);
                (
                    [eta * hx, eta * hy],
                    [[eta * dhx, 0.0], [0.0, eta * dhy]],
                    [deta * hx, deta * hy],
                )
            }
            Self::Custom(f) => {
                let (v, j) = f(x, y);
                (v, j, [0.0; 2])
            }
        }
    }
}

/// Scalar cutoff `ρ`: 1 within `inner` of `∂Ω`, 0 beyond `outer`, a squared
/// smoothstep in between so that `|∇ρ|²/ρ` stays bounded.
#[derive(Debug, Clone, Copy)]
pub struct ScalarCutoff {
    pub half_width: f64,
    pub inner: f64,
    pub outer: f64,
}

impl ScalarCutoff {
    /// `(ρ, |∇ρ|)`.
    pub fn eval(&self, x: f64, y: f64) -> (f64, f64) {
        let d = self.half_width - x.abs().max(y.abs());
        let z = ((self.outer - d) / (self.outer - self.inner)).clamp(0.0, 1.0);
        let s = smoothstep(z);
        let ds = if z > 0.0 && z < 1.0 {
            smoothstep_prime(z) / (self.outer - self.inner)
        } else {
            0.0
        };
        (s * s, 2.0 * s * ds)
    }
}

/// Cell-center values and gradients of a MAC velocity; `grad[i][k] = ∂_k u^i`.
#[derive(Debug, Clone)]
pub struct CellJet {
    pub value: [Vec<f64>; 2],
    pub grad: [[Vec<f64>; 2]; 2],
}

pub fn cell_jet(d: &DomainSpec, f: &VelocityField) -> CellJet {
    let (nx, ny) = (d.nx, d.ny);
    let n = nx * ny;
    let uf = |i: usize, j: usize| if i == 0 || i == nx { 0.0 } else { f.values[d.u_idx(i, j)] };
    let vf = |i: usize, j: usize| if j == 0 || j == ny { 0.0 } else { f.values[d.v_idx(i, j)] };
    let mut uc = vec![0.0; n];
    let mut vc = vec![0.0; n];
    let mut ux = vec![0.0; n];
    let mut vy = vec![0.0; n];
    for j in 0..ny {
        for i in 0..nx {
            let c = d.c_idx(i, j);
            uc[c] = 0.5 * (uf(i, j) + uf(i + 1, j));
            vc[c] = 0.5 * (vf(i, j) + vf(i, j + 1));
            ux[c] = (uf(i + 1, j) - uf(i, j)) / d.dx;
            vy[c] = (vf(i, j + 1) - vf(i, j)) / d.dy;
        }
    }
    // centered differences; the wall sits half a cell out, ghost = −interior
    let cross = |g: &[f64], along_x: bool| -> Vec<f64> {
        let mut out = vec![0.0; n];
        for j in 0..ny {
            for i in 0..nx {
                let c = d.c_idx(i, j);
                let (lo, hi, h) = if along_x {
                    let lo = if i == 0 { -g[c] } else { g[d.c_idx(i - 1, j)] };
                    let hi = if i + 1 == nx { -g[c] } else { g[d.c_idx(i + 1, j)] };
                    (lo, hi, d.dx)
                } else {
                    let lo = if j == 0 { -g[c] } else { g[d.c_idx(i, j - 1)] };
                    let hi = if j + 1 == ny { -g[c] } else { g[d.c_idx(i, j + 1)] };
                    (lo, hi, d.dy)
                };
                out[c] = (hi - lo) / (2.0 * h);
            }
        }
        out
    };
    let uy = cross(&uc, false);
    let vx = cross(&vc, true);
    CellJet {
        value: [uc, vc],
        grad: [[ux, uy], [vx, vy]],
    }
}

/// `∇p` at cell centers.
pub fn cell_pressure_gradient(d: &DomainSpec, p: &CellField) -> [Vec<f64>; 2] {
    let (nx, ny) = (d.nx, d.ny);
    let pv = |i: usize, j: usize| p.values[d.c_idx(i, j)];
    let diff = |a: f64, b: f64, c: f64, at: usize, len: usize, h: f64| -> f64 {
        // a, b, c are the values at at−1, at, at+1 (or one-sided triples)
        match at {
            0 => (-3.0 * a + 4.0 * b - c) / (2.0 * h),
            _ if at + 1 == len => (3.0 * c - 4.0 * b + a) / (2.0 * h),
            _ => (c - a) / (2.0 * h),
        }
    };
    let mut px = vec![0.0; nx * ny];
    let mut py = vec![0.0; nx * ny];
    for j in 0..ny {
        for i in 0..nx {
            let c = d.c_idx(i, j);
            let (i0, i1, i2) = if i == 0 {
                (0, 1, 2)
            } else if i + 1 == nx {
                (nx - 3, nx - 2, nx - 1)
            } else {
                (i - 1, i, i + 1)
            };
            px[c] = diff(pv(i0, j), pv(i1, j), pv(i2, j), i, nx, d.dx);
            let (j0, j1, j2) = if j == 0 {
                (0, 1, 2)
            } else if j + 1 == ny {
                (ny - 3, ny - 2, ny - 1)
            } else {
                (j - 1, j, j + 1)
            };
            py[c] = diff(pv(i, j0), pv(i, j1), pv(i, j2), j, ny, d.dy);
        }
    }
    [px, py]
}

/// One time slice of a hyperbolic solution.
#[derive(Debug, Clone)]
pub struct SolutionSample {
    pub u: VelocityField,
    pub ut: VelocityField,
    pub pressure: Option<CellField>,
    /// Forcing at cell centers.
    pub forcing: Option<[Vec<f64>; 2]>,
}

/// A solution of `u_tt − Δu + ∇p = f` that can be sampled at any time.
pub trait SpaceTimeSolution: Sync {
    fn domain(&self) -> &DomainSpec;
    fn sample(&self, t: f64) -> Result<SolutionSample>;
    /// Largest angular frequency present, for the time quadrature.
    fn max_frequency(&self) -> f64;
}

/// Free modal wave `φ = Σ (a_j cos ω_j t + b_j sin(ω_j t)/ω_j) e_j` with its
/// discrete pressure.
pub struct ModalWave<'a> {
    modes: &'a StokesModes,
    a: Vec<f64>,
    b: Vec<f64>,
    pressures: Vec<CellField>,
}

impl<'a> ModalWave<'a> {
    pub fn new(modes: &'a StokesModes, op: &StokesOperator, a: &[f64], b: &[f64]) -> Result<Self> {
        if a.len() != b.len() || a.len() > modes.count() {
            return Err(Error::ShapeMismatch {
                expected: a.len().min(modes.count()),
                got: b.len(),
            });
        }
        let pressures = (0..a.len())
            .map(|j| op.stokes_pressure(&modes.mode(j)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            modes,
            a: a.to_vec(),
            b: b.to_vec(),
            pressures,
        })
    }

    fn coefficients(&self, t: f64) -> (Vec<f64>, Vec<f64>) {
        let mut c = Vec::with_capacity(self.a.len());
        let mut ct = Vec::with_capacity(self.a.len());
        for (j, (a, b)) in self.a.iter().zip(&self.b).enumerate() {
            let w = self.modes.eigenvalues[j].sqrt();
            let (s, co) = (w * t).sin_cos();
            c.push(a * co + b * s / w);
            ct.push(-a * w * s + b * co);
        }
        (c, ct)
    }
}

impl SpaceTimeSolution for ModalWave<'_> {
    fn domain(&self) -> &DomainSpec {
        self.modes.domain()
    }

    fn sample(&self, t: f64) -> Result<SolutionSample> {
        let (c, ct) = self.coefficients(t);
        let d = self.modes.domain();
        let mut p = vec![0.0; d.n_cells()];
        for (cj, pj) in c.iter().zip(&self.pressures) {
            linalg::axpy(*cj, &pj.values, &mut p);
        }
        Ok(SolutionSample {
            u: self.modes.synthesize(&c),
            ut: self.modes.synthesize(&ct),
            pressure: Some(CellField { values: p }),
            forcing: None,
        })
    }

    fn max_frequency(&self) -> f64 {
        self.modes.eigenvalues[..self.a.len()]
            .last()
            .map(|l| l.sqrt())
            .unwrap_or(0.0)
    }
}

/// Manufactured solution `u = cos(ωt) curl ψ` with `ψ = a(x)a(y)`,
/// `a = cos²(πx)` on `(−½, ½)²`, pressure `cos(ωt) sin(πx) sin(πy)` and the
/// forcing that makes it exact.
pub struct Manufactured {
    pub domain: DomainSpec,
    pub omega: f64,
}

impl Manufactured {
    pub fn new(n: usize, omega: f64) -> Result<Self> {
        Ok(Self {
            domain: DomainSpec::unit_square(0.15, n)?,
            omega,
        })
    }

    fn a(x: f64) -> [f64; 4] {
        use std::f64::consts::PI;
        let (s2, c2) = (2.0 * PI * x).sin_cos();
        [
            (PI * x).cos().powi(2),
            -PI * s2,
            -2.0 * PI * PI * c2,
            4.0 * PI.powi(3) * s2,
        ]
    }

    /// Spatial velocity `curl ψ` and its Laplacian.
    pub fn velocity(x: f64, y: f64) -> ([f64; 2], [f64; 2]) {
        let (ax, ay) = (Self::a(x), Self::a(y));
        (
            [ax[0] * ay[1], -ax[1] * ay[0]],
            [ax[2] * ay[1] + ax[0] * ay[3], -ax[3] * ay[0] - ax[1] * ay[2]],
        )
    }

    pub fn stream(x: f64, y: f64) -> f64 {
        Self::a(x)[0] * Self::a(y)[0]
    }

    /// Spatial pressure and its gradient.
    pub fn pressure(x: f64, y: f64) -> (f64, [f64; 2]) {
        use std::f64::consts::PI;
        let (sx, cx) = (PI * x).sin_cos();
        let (sy, cy) = (PI * y).sin_cos();
        (sx * sy, [PI * cx * sy, PI * sx * cy])
    }

    fn faces(&self, scale: f64) -> VelocityField {
        let d = &self.domain;
        let mut values = vec![0.0; d.ndof()];
        for j in 0..d.ny {
            for i in 1..d.nx {
                let (x, y) = d.u_face(i, j);
                values[d.u_idx(i, j)] = scale * Self::velocity(x, y).0[0];
            }
        }
        for j in 1..d.ny {
            for i in 0..d.nx {
                let (x, y) = d.v_face(i, j);
                values[d.v_idx(i, j)] = scale * Self::velocity(x, y).0[1];
            }
        }
        VelocityField { values }
    }
}

impl SpaceTimeSolution for Manufactured {
    fn domain(&self) -> &DomainSpec {
        &self.domain
    }

    fn sample(&self, t: f64) -> Result<SolutionSample> {
        let d = &self.domain;
        let w = self.omega;
        let (s, c) = (w * t).sin_cos();
        let mut p = vec![0.0; d.n_cells()];
        let mut fx = vec![0.0; d.n_cells()];
        let mut fy = vec![0.0; d.n_cells()];
        for j in 0..d.ny {
            for i in 0..d.nx {
                let (x, y) = d.cell_center(i, j);
                let k = d.c_idx(i, j);
                let (u, lap) = Self::velocity(x, y);
                let (pp, gp) = Self::pressure(x, y);
                p[k] = c * pp;
                fx[k] = c * (-w * w * u[0] - lap[0] + gp[0]);
                fy[k] = c * (-w * w * u[1] - lap[1] + gp[1]);
            }
        }
        Ok(SolutionSample {
            u: self.faces(c),
            ut: self.faces(-w * s),
            pressure: Some(CellField { values: p }),
            forcing: Some([fx, fy]),
        })
    }

    fn max_frequency(&self) -> f64 {
        self.omega
    }
}

/// Both sides of the multiplier identity
///
/// ```text
/// ½∫∫_Σ (q·ν)|∂_ν u|² = [(u_t, q·∇u)]₀ᵀ − ∫∫ u_t·(∂_t q·∇)u + ∫∫ ∂_j q_k ∂_k u^i ∂_j u^i
///                      + ½∫∫ div q (|u_t|² − |∇u|²) + ∫∫ ∂_i p q_k ∂_k u^i − ∫∫ f^i q_k ∂_k u^i
/// ```
#[derive(Debug, Clone, Serialize)]
pub struct MultiplierReport {
    pub boundary: f64,
    pub endpoint: f64,
    pub time_derivative: f64,
    pub jacobian: f64,
    pub divergence: f64,
    pub pressure: f64,
    pub forcing: f64,
    pub energy0: f64,
    /// `|LHS − RHS| / E(0)`.
    pub residual: f64,
    /// The same with the forcing term entering with a plus sign.
    pub residual_forcing_plus: f64,
}

#[derive(Debug, Default, Clone, Copy)]
struct Slice {
    boundary: f64,
    endpoint: f64,
    time_derivative: f64,
    jacobian: f64,
    divergence: f64,
    pressure: f64,
    forcing: f64,
    energy: f64,
}

fn multiplier_slice(sol: &dyn SpaceTimeSolution, q: &MultiplierField, t: f64) -> Result<Slice> {
    let d = sol.domain();
    let s = sol.sample(t)?;
    let p = s
        .pressure
        .as_ref()
        .ok_or_else(|| Error::Config("multiplier identity needs the pressure".into()))?;
    let jet = cell_jet(d, &s.u);
    let jt = cell_jet(d, &s.ut);
    let gp = cell_pressure_gradient(d, p);
    let area = d.cell_area();
    let mut out = Slice::default();
    for j in 0..d.ny {
        for i in 0..d.nx {
            let c = d.c_idx(i, j);
            let (x, y) = d.cell_center(i, j);
            let (qv, jac, qt) = q.eval(x, y, t);
            let g = |a: usize, k: usize| jet.grad[a][k][c];
            let ut = [jt.value[0][c], jt.value[1][c]];
            let q_grad = |a: usize| qv[0] * g(a, 0) + qv[1] * g(a, 1);
            let qt_grad = |a: usize| qt[0] * g(a, 0) + qt[1] * g(a, 1);
            let grad_sq: f64 = (0..2).flat_map(|a| (0..2).map(move |k| (a, k))).map(|(a, k)| g(a, k).powi(2)).sum();
            let ut_sq = ut[0] * ut[0] + ut[1] * ut[1];
            let mut jac_term = 0.0;
            for a in 0..2 {
                for k in 0..2 {
                    for l in 0..2 {
                        jac_term += jac[k][l] * g(a, k) * g(a, l);
                    }
                }
            }
            out.endpoint += area * (ut[0] * q_grad(0) + ut[1] * q_grad(1));
            out.time_derivative -= area * (ut[0] * qt_grad(0) + ut[1] * qt_grad(1));
            out.jacobian += area * jac_term;
            out.divergence += area * 0.5 * (jac[0][0] + jac[1][1]) * (ut_sq - grad_sq);
            out.pressure += area * (gp[0][c] * q_grad(0) + gp[1][c] * q_grad(1));
            if let Some(f) = &s.forcing {
                out.forcing -= area * (f[0][c] * q_grad(0) + f[1][c] * q_grad(1));
            }
            out.energy += area * (ut_sq + grad_sq);
        }
    }
    let layout = boundary_layout(d);
    let trace = boundary_trace(d, &s.u);
    for r in 0..layout.len() {
        let (x, y) = layout.positions[r];
        let (qv, _, _) = q.eval(x, y, t);
        let qn = qv[0] * layout.normals[r].0 + qv[1] * layout.normals[r].1;
        out.boundary += 0.5 * layout.weights[r] * qn * trace[r] * trace[r];
    }
    Ok(out)
}

/// Evaluates the multiplier identity on `[0, T]` with composite
/// Gauss–Legendre in time (`panels_per_period` panels per shortest period).
pub fn multiplier_identity_residual(
    sol: &dyn SpaceTimeSolution,
    q: &MultiplierField,
    horizon: f64,
    panels_per_period: usize,
) -> Result<MultiplierReport> {
    let w = sol.max_frequency().max(1.0);
    let panels = ((horizon * w / (2.0 * std::f64::consts::PI)) * panels_per_period as f64).ceil() as usize;
    let rule = CompositeRule::uniform(0.0, horizon, panels.max(4), &GaussLegendre::new(8));
    let slices = rule
        .points
        .par_iter()
        .map(|&t| multiplier_slice(sol, q, t))
        .collect::<Result<Vec<_>>>()?;
    let mut acc = Slice::default();
    for (s, &wt) in slices.iter().zip(&rule.weights) {
        acc.boundary += wt * s.boundary;
        acc.time_derivative += wt * s.time_derivative;
        acc.jacobian += wt * s.jacobian;
        acc.divergence += wt * s.divergence;
        acc.pressure += wt * s.pressure;
        acc.forcing += wt * s.forcing;
    }
    let start = multiplier_slice(sol, q, 0.0)?;
    let end = multiplier_slice(sol, q, horizon)?;
    let endpoint = end.endpoint - start.endpoint;
    let rhs = endpoint + acc.time_derivative + acc.jacobian + acc.divergence + acc.pressure;
    let energy0 = start.energy;
    let norm = if energy0 > 0.0 { energy0 } else { 1.0 };
    Ok(MultiplierReport {
        boundary: acc.boundary,
        endpoint,
        time_derivative: acc.time_derivative,
        jacobian: acc.jacobian,
        divergence: acc.divergence,
        pressure: acc.pressure,
        forcing: acc.forcing,
        energy0,
        residual: (acc.boundary - rhs - acc.forcing).abs() / norm,
        residual_forcing_plus: (acc.boundary - rhs + acc.forcing).abs() / norm,
    })
}

/// The three pairings of `⟨∇p, m·∇φ⟩ = ⟨∇p, (φ·∇)m⟩ − ⟨∇p, φ div m⟩`.
#[derive(Debug, Clone, Serialize)]
pub struct PressureIdentityReport {
    pub lhs: f64,
    pub transport: f64,
    pub dilation: f64,
    /// `|lhs − (transport − dilation)|` over the sum of absolute pairings.
    pub residual: f64,
    /// The same for the sign-flipped form `lhs = −transport + dilation`.
    pub residual_flipped: f64,
}

pub fn pressure_identity_residual(
    domain: &DomainSpec,
    p: &CellField,
    phi: &VelocityField,
    m: &MultiplierField,
) -> PressureIdentityReport {
    let d = domain;
    let jet = cell_jet(d, phi);
    let gp = cell_pressure_gradient(d, p);
    let area = d.cell_area();
    let (mut lhs, mut transport, mut dilation) = (0.0, 0.0, 0.0);
    for j in 0..d.ny {
        for i in 0..d.nx {
            let c = d.c_idx(i, j);
            let (x, y) = d.cell_center(i, j);
            let (mv, jac, _) = m.eval(x, y, 0.0);
            let v = [jet.value[0][c], jet.value[1][c]];
            for a in 0..2 {
                let m_grad = mv[0] * jet.grad[a][0][c] + mv[1] * jet.grad[a][1][c];
                lhs += area * gp[a][c] * m_grad;
                // (φ·∇)m_a = φ^i ∂_i m_a
                transport += area * gp[a][c] * (v[0] * jac[a][0] + v[1] * jac[a][1]);
                dilation += area * gp[a][c] * v[a] * (jac[0][0] + jac[1][1]);
            }
        }
    }
    let scale = lhs.abs() + transport.abs() + dilation.abs();
    let rel = |r: f64| if scale > 0.0 { r.abs() / scale } else { 0.0 };
    PressureIdentityReport {
        lhs,
        transport,
        dilation,
        residual: rel(lhs - (transport - dilation)),
        residual_flipped: rel(lhs - (dilation - transport)),
    }
}

/// Flux Gramian `∫₀ᵀ ∫_∂Ω ∂_ν φ_j ∂_ν φ_k` for free adjoint data `(a, b)`.
fn flux_gramian(modes: &StokesModes, horizon: f64, m_f: usize) -> Result<Mat<f64>> {
    if m_f == 0 || m_f > modes.count() {
        return Err(Error::TooManyModes {
            requested: m_f,
            available: modes.count(),
        });
    }
    let b = modes.boundary_gram(m_f);
    let system = ObservedSystem {
        lambdas: modes.eigenvalues[..m_f].to_vec(),
        q: b.clone(),
        q_cost: b,
    };
    Ok(hum::assemble_wave_gramian_for(system, horizon)?.matrix)
}

/// Extreme eigenvalues of `G` relative to the SPD energy matrix `E`.
pub fn generalized_extremes(g: &Mat<f64>, e: &Mat<f64>) -> Result<(f64, f64)> {
    let n = g.nrows();
    let chol = e
        .cholesky(faer::Side::Lower)
        .map_err(|err| Error::NotPositiveDefinite(format!("energy matrix: {err:?}")))?;
    let l = chol.compute_l();
    let mut linv = Mat::<f64>::identity(n, n);
    faer::linalg::triangular_solve::solve_lower_triangular_in_place(l.as_ref(), linv.as_mut(), faer::Parallelism::None);
    let s = &linv * g * linv.transpose();
    let s = Mat::from_fn(n, n, |r, c| 0.5 * (s[(r, c)] + s[(c, r)]));
    let ev = linalg::sym_eigenvalues(&s);
    Ok((ev[0], ev[n - 1]))
}

fn diag(v: &[f64]) -> Mat<f64> {
    Mat::from_fn(v.len(), v.len(), |r, c| if r == c { v[r] } else { 0.0 })
}

/// `V × H` energy `‖φ⁰‖²_V + |φ¹|²_H` as a diagonal on `(a, b)`.
fn vh_energy(lambdas: &[f64]) -> Vec<f64> {
    lambdas.iter().cloned().chain(lambdas.iter().map(|_| 1.0)).collect()
}

fn quad(a: &Mat<f64>, x: &[f64]) -> f64 {
    let mut ax = vec![0.0; x.len()];
    linalg::mat_vec(a, x, &mut ax);
    linalg::dot(x, &ax)
}

#[derive(Debug, Clone, Serialize)]
pub struct ObservabilityReport {
    pub horizon: f64,
    pub m_f: usize,
    pub samples: usize,
    /// Largest `E(0) / flux` over the samples.
    pub max_ratio: f64,
    pub mean_ratio: f64,
    /// `sup E(0)/flux` over the whole filtered space.
    pub subspace_constant: f64,
    /// `R₀ / (2(T − 2R₀))`.
    pub multiplier_constant: f64,
    pub slack: f64,
    pub violations: usize,
    /// The constant is finite but larger than any measured ratio by > 10×.
    pub vacuous: bool,
    pub pass: bool,
}

/// Samples filtered data normalized in `V × H` and compares `E(0)/flux`
/// with `R₀/(2(T − 2R₀))·(1 + slack)`.
pub fn boundary_observability_check(
    modes: &StokesModes,
    horizon: f64,
    m_f: usize,
    samples: usize,
    seed: u64,
    slack: f64,
) -> Result<ObservabilityReport> {
    let r0 = modes.domain().r0();
    if horizon <= 2.0 * r0 {
        return Err(Error::InadmissibleHorizon(format!(
            "boundary observability needs T > 2R₀ = {:.4}, got {horizon}",
            2.0 * r0
        )));
    }
    let g = flux_gramian(modes, horizon, m_f)?;
    let energy = vh_energy(&modes.eigenvalues[..m_f]);
    let mut rng = sampling::rng(seed);
    let draws: Vec<Vec<f64>> = (0..samples)
        .map(|_| sampling::normalized_coefficients(&mut rng, &energy))
        .collect();
    let ratios: Vec<f64> = draws.par_iter().map(|x| 1.0 / quad(&g, x)).collect();
    let (lmin, _) = generalized_extremes(&g, &diag(&energy))?;
    let multiplier_constant = r0 / (2.0 * (horizon - 2.0 * r0));
    let bound = multiplier_constant * (1.0 + slack);
    let max_ratio = ratios.iter().cloned().fold(0.0, f64::max);
    let violations = ratios.iter().filter(|r| **r > bound).count();
    Ok(ObservabilityReport {
        horizon,
        m_f,
        samples,
        max_ratio,
        mean_ratio: ratios.iter().sum::<f64>() / samples.max(1) as f64,
        subspace_constant: 1.0 / lmin,
        multiplier_constant,
        slack,
        violations,
        vacuous: multiplier_constant > 10.0 * max_ratio,
        pass: violations == 0,
    })
}

/// `E(0)/flux` for the single datum `φ⁰ = e_1`, `φ¹ = 0`.
pub fn lowest_mode_observability_ratio(modes: &StokesModes, horizon: f64) -> Result<f64> {
    let g = flux_gramian(modes, horizon, 1)?;
    Ok(modes.eigenvalues[0] / g[(0, 0)])
}

#[derive(Debug, Clone, Serialize)]
pub struct DirectInequalityReport {
    pub horizon: f64,
    pub m_f: usize,
    /// Largest `flux / E(0)` over the nonzero samples.
    pub sample_constant: f64,
    /// `sup flux / E(0)` over the filtered space.
    pub subspace_constant: f64,
}

/// Empirical hidden-regularity constant `∫∫_Σ|∂_ν u|² ≤ C E(0)` (no forcing).
pub fn direct_inequality_ratio(
    modes: &StokesModes,
    horizon: f64,
    m_f: usize,
    samples: &[Vec<f64>],
) -> Result<DirectInequalityReport> {
    let g = flux_gramian(modes, horizon, m_f)?;
    let energy = vh_energy(&modes.eigenvalues[..m_f]);
    let mut sample_constant = 0.0_f64;
    for x in samples {
        if x.len() != 2 * m_f {
            return Err(Error::ShapeMismatch {
                expected: 2 * m_f,
                got: x.len(),
            });
        }
        let e: f64 = x.iter().zip(&energy).map(|(v, w)| w * v * v).sum();
        if e == 0.0 {
            continue;
        }
        sample_constant = sample_constant.max(quad(&g, x) / e);
    }
    let (_, lmax) = generalized_extremes(&g, &diag(&energy))?;
    Ok(DirectInequalityReport {
        horizon,
        m_f,
        sample_constant,
        subspace_constant: lmax,
    })
}

/// Which trace is observed on `ω × (0, T)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ObservationKind {
    /// `∫∫_ω |φ_t|²` against `‖φ⁰‖²_V + |φ¹|²_H`.
    Velocity,
    /// `∫∫_ω |φ|²` against `|φ⁰|²_H + ‖φ¹‖²_{V′}`.
    Position,
    /// `∫∫_ω (|φ_t|² + |φ|²)` against `‖φ⁰‖²_V + |φ¹|²_H`, equal weights.
    Combined,
}

/// `∫₀ᵀ Y_j Y_k dt` for `Y = (−ω sin ωt, cos ωt)`, the time derivative of
/// the free trajectories, by composite Gauss–Legendre.
pub fn velocity_products(lambdas: &[f64], horizon: f64) -> Mat<f64> {
    let m = lambdas.len();
    let w: Vec<f64> = lambdas.iter().map(|l| l.sqrt()).collect();
    let wmax = w.iter().cloned().fold(0.0, f64::max);
    let panels = (horizon * wmax / std::f64::consts::PI * 4.0).ceil().max(4.0) as usize;
    let rule = CompositeRule::uniform(0.0, horizon, panels, &GaussLegendre::new(10));
    let mut out = Mat::<f64>::zeros(2 * m, 2 * m);
    let mut y = vec![0.0; 2 * m];
    for (&t, &wt) in rule.points.iter().zip(&rule.weights) {
        for j in 0..m {
            let (s, c) = (w[j] * t).sin_cos();
            y[j] = -w[j] * s;
            y[m + j] = c;
        }
        for r in 0..2 * m {
            for c in 0..2 * m {
                out[(r, c)] += wt * y[r] * y[c];
            }
        }
    }
    out
}

/// Observability constant `C = 1/λ_min` of the observed Gramian relative to
/// the left-hand norm; `∞` when the Gramian is numerically singular.
pub fn internal_observability_constant(
    modes: &StokesModes,
    mask: &ControlMask,
    horizon: f64,
    m_f: usize,
    kind: ObservationKind,
) -> Result<f64> {
    let system = ObservedSystem::from_modes(modes, mask, m_f)?;
    observability_constant_for(&system, horizon, kind)
}

pub fn observability_constant_for(system: &ObservedSystem, horizon: f64, kind: ObservationKind) -> Result<f64> {
    let lambdas = &system.lambdas;
    let position = || -> Result<Mat<f64>> { Ok(hum::assemble_wave_gramian_for(system.clone(), horizon)?.matrix) };
    let velocity = || hum::hadamard_blocks(&system.q, &velocity_products(lambdas, horizon));
    let (g, energy) = match kind {
        ObservationKind::Position => {
            let e: Vec<f64> = lambdas.iter().map(|_| 1.0).chain(lambdas.iter().map(|l| 1.0 / l)).collect();
            (position()?, e)
        }
        ObservationKind::Velocity => (velocity(), vh_energy(lambdas)),
        ObservationKind::Combined => (&velocity() + &position()?, vh_energy(lambdas)),
    };
    let (lmin, lmax) = generalized_extremes(&g, &diag(&energy))?;
    Ok(if lmin <= hum::SINGULAR_RATIO * lmax {
        f64::INFINITY
    } else {
        1.0 / lmin
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ControlTimeRow {
    pub horizon: f64,
    /// `λ_min/λ_max` of the scaled wave Gramian at `M_f`.
    pub ratio: f64,
    /// The same at `M_f + M_f/4`.
    pub ratio_refined: f64,
    pub qualifies: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ControlTimeReport {
    pub m_f: usize,
    pub threshold: f64,
    pub rows: Vec<ControlTimeRow>,
    /// Smallest qualifying horizon; `None` when it lies beyond the grid.
    pub control_time: Option<f64>,
}

/// Smallest `T` in the ascending grid whose scaled wave Gramian has
/// `λ_min > threshold·λ_max` both at `M_f` and at `M_f + M_f/4`.
pub fn empirical_control_time(
    modes: &StokesModes,
    mask: &ControlMask,
    m_f: usize,
    t_grid: &[f64],
    threshold: f64,
) -> Result<ControlTimeReport> {
    if t_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Config("control-time grid must be strictly ascending".into()));
    }
    let refined = m_f + (m_f / 4).max(1);
    if refined > modes.count() {
        return Err(Error::TooManyModes {
            requested: refined,
            available: modes.count(),
        });
    }
    let rows = t_grid
        .par_iter()
        .map(|&t| -> Result<ControlTimeRow> {
            let ratio_of = |m: usize| -> Result<f64> {
                let (lo, hi) = assemble_wave_gramian(modes, mask, t, m)?.extreme_eigenvalues();
                Ok(lo / hi)
            };
            let (ratio, ratio_refined) = (ratio_of(m_f)?, ratio_of(refined)?);
            Ok(ControlTimeRow {
                horizon: t,
                ratio,
                ratio_refined,
                qualifies: ratio > threshold && ratio_refined > threshold,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let control_time = rows.iter().find(|r| r.qualifies).map(|r| r.horizon);
    Ok(ControlTimeReport {
        m_f,
        threshold,
        rows,
        control_time,
    })
}
