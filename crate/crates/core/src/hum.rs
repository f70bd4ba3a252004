//! Hilbert Uniqueness Method: observability Gramians and minimal-norm null
//! controls for the wave-with-pressure and Stokes systems on the filtered
//! modal subspace.
//!
//! Wave case. The adjoint `φ_tt = Aφ` with data `(a, b) = (φ̂(0), φ̂_t(0))`
//! has modal trajectory `φ̂_k(t) = a_k cos ω_k t + b_k sin(ω_k t)/ω_k`. With
//! control `h = 1_ω φ`, the state is at rest at `T` exactly when
//!
//! ```text
//! ∫₀ᵀ ĥ_j cos ω_j t dt = −u1_j,   ∫₀ᵀ ĥ_j sin(ω_j t)/ω_j dt = u0_j,
//! ```
//!
//! i.e. `Λ (a; b) = (−u1; u0)` with `Λ` the Gram matrix of the observed
//! adjoint trajectories. Parabolic case: penalized HUM with adjoint
//! `ψ̂(t) = e^{−λ(T−t)} ψ̂_T`.

use faer::Mat;
use serde::Serialize;

use crate::domain::{ControlMask, VelocityField};
use crate::evolve::{self, ModalForcing, WaveState};
use crate::linalg::{self, CgReport};
use crate::quadrature::{CompositeRule, GaussLegendre};
use crate::stokesop::StokesModes;
use crate::{Error, Result};

/// Panels per shortest modal period in the Gramian time quadrature (8 nodes each).
const PANELS_PER_PERIOD: f64 = 4.0;
/// Relative entry change under doubling above which the quadrature is flagged.
const DOUBLING_TOLERANCE: f64 = 1e-8;
/// `λ_min/λ_max` of the scaled Gramian below which the horizon is declared too short.
pub const SINGULAR_RATIO: f64 = 1e-8;

/// Masked Gram matrices of the filtered modes: `q` for the Gramian and
/// `q_cost` (with the squared mask) for the control cost. They coincide for a
/// sharp mask.
#[derive(Debug, Clone)]
pub struct ObservedSystem {
    pub lambdas: Vec<f64>,
    pub q: Mat<f64>,
    pub q_cost: Mat<f64>,
}

impl ObservedSystem {
    pub fn from_modes(modes: &StokesModes, mask: &ControlMask, m_f: usize) -> Result<Self> {
        if m_f == 0 || m_f > modes.count() {
            return Err(Error::TooManyModes {
                requested: m_f,
                available: modes.count(),
            });
        }
        let q = modes.masked_gram(mask, m_f);
        let q_cost = if mask.is_binary() {
            q.clone()
        } else {
            let squared = ControlMask {
                kind: mask.kind,
                cells: mask.cells.iter().map(|w| w * w).collect(),
                faces: mask.faces.iter().map(|w| w * w).collect(),
            };
            modes.masked_gram(&squared, m_f)
        };
        Ok(Self {
            lambdas: modes.eigenvalues[..m_f].to_vec(),
            q,
            q_cost,
        })
    }

    /// Interior control of the 1D heat equation on `(−½, ½)` from a boundary
    /// collar of width `collar`, in the Dirichlet sine basis.
    pub fn heat_1d(m_f: usize, collar: f64) -> Self {
        use std::f64::consts::PI;
        let f = |m: i64| -> f64 {
            if m == 0 {
                2.0 * collar
            } else {
                let sign = if m % 2 == 0 { 2.0 } else { 0.0 };
                sign * (m as f64 * PI * collar).sin() / (m as f64 * PI)
            }
        };
        let q = Mat::from_fn(m_f, m_f, |j, k| {
            let (j, k) = (j as i64 + 1, k as i64 + 1);
            f(j - k) - f(j + k)
        });
        Self {
            lambdas: (1..=m_f).map(|n| (n as f64 * PI).powi(2)).collect(),
            q_cost: q.clone(),
            q,
        }
    }

    pub fn dim(&self) -> usize {
        self.lambdas.len()
    }
}

/// Time integrals `∫₀ᵀ X_j X_k dt` of the free adjoint modal trajectories
/// `X = (cos ω t, sin(ω t)/ω)`, as the `2m × 2m` matrix `[[cc, cs], [sc, ss]]`.
pub fn trajectory_products(lambdas: &[f64], horizon: f64, panels: usize) -> Mat<f64> {
    let m = lambdas.len();
    let rule = CompositeRule::uniform(0.0, horizon, panels, &GaussLegendre::new(8));
    let omegas: Vec<f64> = lambdas.iter().map(|l| l.sqrt()).collect();
    let nq = rule.len();
    let f = Mat::from_fn(2 * m, nq, |r, q| {
        let t = rule.points[q];
        let sw = rule.weights[q].sqrt();
        if r < m {
            sw * (omegas[r] * t).cos()
        } else {
            let om = omegas[r - m];
            sw * (om * t).sin() / om
        }
    });
    &f * f.transpose()
}

/// Observability Gramian of the wave adjoint in `(φ̂(0), φ̂_t(0))` coordinates.
#[derive(Debug, Clone)]
pub struct WaveGramian {
    pub horizon: f64,
    pub system: ObservedSystem,
    /// `2m_f × 2m_f`, unscaled.
    pub matrix: Mat<f64>,
    pub panels: usize,
    /// Largest relative entry change observed when doubling the panel count.
    pub doubling_change: f64,
}

pub(crate) fn hadamard_blocks(q: &Mat<f64>, traj: &Mat<f64>) -> Mat<f64> {
    let m = q.nrows();
    Mat::from_fn(2 * m, 2 * m, |r, c| q[(r % m, c % m)] * traj[(r, c)])
}

pub(crate) fn default_panels(lambdas: &[f64], horizon: f64) -> usize {
    let wmax = lambdas.iter().cloned().fold(0.0, f64::max).sqrt();
    let period = 2.0 * std::f64::consts::PI / wmax;
    ((horizon / period) * PANELS_PER_PERIOD).ceil().max(1.0) as usize
}

/// Assembles the wave Gramian by composite Gauss–Legendre in time and checks
/// the quadrature by doubling the panel count.
pub fn assemble_wave_gramian_for(system: ObservedSystem, horizon: f64) -> Result<WaveGramian> {
    if horizon <= 0.0 {
        return Err(Error::NegativeTime(horizon));
    }
    let panels = default_panels(&system.lambdas, horizon);
    let coarse = hadamard_blocks(&system.q, &trajectory_products(&system.lambdas, horizon, panels));
    let fine = hadamard_blocks(&system.q, &trajectory_products(&system.lambdas, horizon, 2 * panels));
    let scale = fine.norm_max();
    let change = (&fine - &coarse).norm_max() / scale.max(1e-300);
    if change > DOUBLING_TOLERANCE {
        return Err(Error::QuadratureUnderResolved {
            relative_change: change,
        });
    }
    let mut matrix = fine;
    let n = matrix.nrows();
    for i in 0..n {
        for j in 0..i {
            let avg = 0.5 * (matrix[(i, j)] + matrix[(j, i)]);
            matrix[(i, j)] = avg;
            matrix[(j, i)] = avg;
        }
    }
    Ok(WaveGramian {
        horizon,
        system,
        matrix,
        panels: 2 * panels,
        doubling_change: change,
    })
}

pub fn assemble_wave_gramian(
    modes: &StokesModes,
    mask: &ControlMask,
    horizon: f64,
    m_f: usize,
) -> Result<WaveGramian> {
    assemble_wave_gramian_for(ObservedSystem::from_modes(modes, mask, m_f)?, horizon)
}

impl WaveGramian {
    pub fn dim(&self) -> usize {
        self.system.dim()
    }

    /// Diagonal `D = diag(1, √λ)` mapping `H × V′`-normalized coordinates to
    /// raw adjoint data: `(a, b) = D x` with `|x|² = |a|²_H + ‖b‖²_{V′}`.
    pub fn hv_prime_scaling(&self) -> Vec<f64> {
        let m = self.dim();
        (0..2 * m)
            .map(|r| if r < m { 1.0 } else { self.system.lambdas[r - m].sqrt() })
            .collect()
    }

    /// `D Λ D` in `H × V′`-normalized coordinates.
    pub fn scaled(&self) -> Mat<f64> {
        let d = self.hv_prime_scaling();
        Mat::from_fn(d.len(), d.len(), |r, c| d[r] * self.matrix[(r, c)] * d[c])
    }

    /// Extreme eigenvalues of the `H × V′`-scaled Gramian.
    pub fn extreme_eigenvalues(&self) -> (f64, f64) {
        let ev = linalg::sym_eigenvalues(&self.scaled());
        (ev[0], ev[ev.len() - 1])
    }
}

/// Minimizer of the HUM functional for an SPD Gramian.
#[derive(Debug, Clone, Serialize)]
pub struct AdjointDatum {
    pub coeffs: Vec<f64>,
    pub iterations: usize,
    pub relative_residual: f64,
    pub lambda_min_estimate: f64,
}

/// Conjugate gradients on a dense SPD Gramian.
pub fn cg_solve(gramian: &Mat<f64>, rhs: &[f64], tol: f64) -> Result<AdjointDatum> {
    let n = gramian.nrows();
    if rhs.len() != n {
        return Err(Error::ShapeMismatch {
            expected: n,
            got: rhs.len(),
        });
    }
    let CgReport {
        solution,
        iterations,
        relative_residual,
        lambda_min_estimate,
        ..
    } = linalg::conjugate_gradient(|x, out| linalg::mat_vec(gramian, x, out), rhs, tol, 50 * n.max(10))?;
    Ok(AdjointDatum {
        coeffs: solution,
        iterations,
        relative_residual,
        lambda_min_estimate,
    })
}

/// Modal adjoint trajectory whose masked restriction is the control.
#[derive(Debug, Clone)]
pub enum AdjointProfile {
    /// `φ̂(t) = a cos ωt + b sin(ωt)/ω`.
    Wave { a: Vec<f64>, b: Vec<f64>, lambdas: Vec<f64> },
    /// `φ̂(t) = e^{−λ(T−t)} ψ`.
    Heat { psi: Vec<f64>, lambdas: Vec<f64> },
}

/// A control `1_ω φ(t)` on `[0, T]` (zero outside), with its diagnostics.
#[derive(Debug, Clone)]
pub struct ControlSignal {
    pub horizon: f64,
    pub q: Mat<f64>,
    pub adjoint: AdjointProfile,
    /// `∫₀ᵀ ∫_ω |h|² dx dt`.
    pub cost: f64,
    /// Terminal norm of the re-simulated state (`V × H` for the wave, `H` for Stokes).
    pub terminal_norm: f64,
    pub initial_norm: f64,
    pub iterations: usize,
    /// Final penalty parameter of the parabolic schedule.
    pub penalty: Option<f64>,
    pub lambda_min: f64,
}

impl ControlSignal {
    pub fn dim(&self) -> usize {
        self.q.nrows()
    }

    /// Adjoint modal coefficients `φ̂(t)`.
    pub fn adjoint_at(&self, t: f64) -> Vec<f64> {
        if !(0.0..=self.horizon).contains(&t) {
            return vec![0.0; self.dim()];
        }
        match &self.adjoint {
            AdjointProfile::Wave { a, b, lambdas } => a
                .iter()
                .zip(b)
                .zip(lambdas)
                .map(|((a, b), l)| {
                    let om = l.sqrt();
                    a * (om * t).cos() + b * (om * t).sin() / om
                })
                .collect(),
            AdjointProfile::Heat { psi, lambdas } => psi
                .iter()
                .zip(lambdas)
                .map(|(p, l)| p * (-l * (self.horizon - t)).exp())
                .collect(),
        }
    }

    /// Modal components `ĥ(t) = (1_ω φ(t), e_j)_H` on the filtered modes.
    pub fn modal(&self, t: f64) -> Vec<f64> {
        let phi = self.adjoint_at(t);
        let mut out = vec![0.0; self.dim()];
        linalg::mat_vec(&self.q, &phi, &mut out);
        out
    }

    /// The control field `1_ω φ(t)`.
    pub fn field(&self, modes: &StokesModes, mask: &ControlMask, t: f64) -> VelocityField {
        mask.apply(&modes.synthesize(&self.adjoint_at(t)))
    }

    /// Control fields on a uniform grid of `n + 1` nodes.
    pub fn sampled(&self, modes: &StokesModes, mask: &ControlMask, n: usize) -> (Vec<f64>, Vec<VelocityField>) {
        let times: Vec<f64> = (0..=n).map(|k| self.horizon * k as f64 / n as f64).collect();
        let fields = times.iter().map(|&t| self.field(modes, mask, t)).collect();
        (times, fields)
    }
}

impl ModalForcing for ControlSignal {
    fn dim(&self) -> usize {
        self.q.nrows()
    }

    fn sample(&self, t: f64, out: &mut [f64]) {
        out.copy_from_slice(&self.modal(t));
    }

    fn breakpoints(&self) -> Vec<f64> {
        vec![0.0, self.horizon]
    }

    fn heat_duhamel(&self, lambdas: &[f64], t: f64) -> Vec<f64> {
        match &self.adjoint {
            AdjointProfile::Heat { psi, lambdas: lk } => {
                // ∫₀ᵗ e^{−λ_j(t−s)} e^{−λ_k(T−s)} ds in closed form
                if t > self.horizon {
                    let at_end = self.heat_duhamel(lambdas, self.horizon);
                    return at_end
                        .iter()
                        .zip(lambdas)
                        .map(|(v, l)| v * (-l * (t - self.horizon)).exp())
                        .collect();
                }
                let m = self.dim();
                let mut out = vec![0.0; m];
                for (j, o) in out.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    for k in 0..m {
                        let sum = lambdas[j] + lk[k];
                        let g = (-lk[k] * (self.horizon - t)).exp() * -(-sum * t).exp_m1() / sum;
                        acc += self.q[(j, k)] * psi[k] * g;
                    }
                    *o = acc;
                }
                out
            }
            AdjointProfile::Wave { .. } => self.default_heat_duhamel(lambdas, t),
        }
    }
}

impl ControlSignal {
    fn default_heat_duhamel(&self, lambdas: &[f64], t: f64) -> Vec<f64> {
        let f = evolve::FnForcing {
            dim: self.dim(),
            breakpoints: vec![0.0, self.horizon],
            f: |s: f64, out: &mut [f64]| out.copy_from_slice(&self.modal(s)),
        };
        f.heat_duhamel(lambdas, t)
    }
}

fn quad_form(a: &Mat<f64>, x: &[f64]) -> f64 {
    let mut ax = vec![0.0; x.len()];
    linalg::mat_vec(a, x, &mut ax);
    linalg::dot(x, &ax)
}

/// Minimal-norm null control of `u_tt = Au + h 1_ω` from `(u0, u1)` (modal,
/// filtered) to rest at the Gramian's horizon.
pub fn wave_null_control_with(gramian: &WaveGramian, u0: &[f64], u1: &[f64], tol: f64) -> Result<ControlSignal> {
    let m = gramian.dim();
    if u0.len() != m || u1.len() != m {
        return Err(Error::ShapeMismatch {
            expected: m,
            got: u0.len().min(u1.len()),
        });
    }
    let lambdas = &gramian.system.lambdas;
    let (lmin, lmax) = gramian.extreme_eigenvalues();
    if lmin <= SINGULAR_RATIO * lmax {
        return Err(Error::HorizonBelowControlTime {
            horizon: gramian.horizon,
            lambda_min: lmin,
        });
    }
    let d = gramian.hv_prime_scaling();
    let rhs: Vec<f64> = (0..2 * m)
        .map(|r| d[r] * if r < m { -u1[r] } else { u0[r - m] })
        .collect();
    let scaled = gramian.scaled();
    let datum = cg_solve(&scaled, &rhs, tol * 1e-3)?;
    let coeffs: Vec<f64> = datum.coeffs.iter().zip(&d).map(|(x, d)| x * d).collect();
    let a = coeffs[..m].to_vec();
    let b = coeffs[m..].to_vec();
    let initial_norm = wave_vh_norm(lambdas, u0, u1);
    let mut signal = ControlSignal {
        horizon: gramian.horizon,
        q: gramian.system.q.clone(),
        adjoint: AdjointProfile::Wave {
            a,
            b,
            lambdas: lambdas.clone(),
        },
        cost: 0.0,
        terminal_norm: 0.0,
        initial_norm,
        iterations: datum.iterations,
        penalty: None,
        lambda_min: lmin,
    };
    signal.cost = if gramian.system.q_cost.as_ref() == gramian.system.q.as_ref() {
        quad_form(&gramian.matrix, &coeffs)
    } else {
        let traj = trajectory_products(lambdas, gramian.horizon, gramian.panels);
        quad_form(&hadamard_blocks(&gramian.system.q_cost, &traj), &coeffs)
    };
    // closed loop: re-simulate with the synthesized control
    let s0 = WaveState {
        t: 0.0,
        u: u0.to_vec(),
        ut: u1.to_vec(),
    };
    let end = evolve::wave_evolve(lambdas, &s0, &signal, gramian.horizon)?;
    signal.terminal_norm = wave_vh_norm(lambdas, &end.u, &end.ut);
    Ok(signal)
}

pub fn wave_null_control(
    modes: &StokesModes,
    mask: &ControlMask,
    u0: &[f64],
    u1: &[f64],
    horizon: f64,
    m_f: usize,
    tol: f64,
) -> Result<ControlSignal> {
    let g = assemble_wave_gramian(modes, mask, horizon, m_f)?;
    wave_null_control_with(&g, u0, u1, tol)
}

/// `(‖u‖²_V + |v|²_H)^{1/2}` in modal coordinates.
pub fn wave_vh_norm(lambdas: &[f64], u: &[f64], v: &[f64]) -> f64 {
    u.iter()
        .zip(v)
        .zip(lambdas)
        .map(|((u, v), l)| l * u * u + v * v)
        .sum::<f64>()
        .sqrt()
}

/// Parabolic Gramian `Λ_jk = Q_jk (1 − e^{−(λ_j+λ_k)T})/(λ_j+λ_k)`.
pub fn parabolic_gramian(system: &ObservedSystem, horizon: f64) -> Mat<f64> {
    let l = &system.lambdas;
    let m = l.len();
    Mat::from_fn(m, m, |j, k| {
        let s = l[j] + l[k];
        system.q[(j, k)] * -(-s * horizon).exp_m1() / s
    })
}

/// Penalized HUM for `y' = −λy + Q ψ̂`: returns the adjoint terminal datum `ψ`
/// and the penalty `η` of the first schedule step `η_k = 10^{−2k}` meeting
/// `|y(T)| ≤ tol |y0|`.
pub fn penalized_hum(system: &ObservedSystem, y0: &[f64], horizon: f64, tol: f64) -> Result<(Vec<f64>, f64, f64)> {
    let m = system.dim();
    if y0.len() != m {
        return Err(Error::ShapeMismatch {
            expected: m,
            got: y0.len(),
        });
    }
    if horizon <= 0.0 {
        return Err(Error::NegativeTime(horizon));
    }
    let y0n = linalg::norm2(y0);
    if y0n == 0.0 {
        return Ok((vec![0.0; m], 1.0, 0.0));
    }
    let lam = parabolic_gramian(system, horizon);
    let (vals, vecs) = linalg::sym_eigen(&lam)?;
    let free: Vec<f64> = y0
        .iter()
        .zip(&system.lambdas)
        .map(|(y, l)| -y * (-l * horizon).exp())
        .collect();
    let mut proj = vec![0.0; m];
    for (c, p) in proj.iter_mut().enumerate() {
        *p = (0..m).map(|r| vecs[(r, c)] * free[r]).sum();
    }
    let mut best = f64::INFINITY;
    for k in 0..=12 {
        let eta = 10f64.powi(-2 * k);
        let mut psi = vec![0.0; m];
        for c in 0..m {
            // clip roundoff-negative eigenvalues of the PSD Gramian
            let coef = proj[c] / (vals[c].max(0.0) + eta);
            for (r, p) in psi.iter_mut().enumerate() {
                *p += vecs[(r, c)] * coef;
            }
        }
        let terminal = eta * linalg::norm2(&psi);
        best = best.min(terminal / y0n);
        if terminal <= tol * y0n {
            return Ok((psi, eta, vals[0]));
        }
    }
    Err(Error::ToleranceNotMet {
        achieved: best,
        requested: tol,
    })
}

fn heat_signal(system: &ObservedSystem, y0: &[f64], horizon: f64, tol: f64) -> Result<ControlSignal> {
    let (psi, eta, lmin) = penalized_hum(system, y0, horizon, tol)?;
    let cost_gram = ObservedSystem {
        lambdas: system.lambdas.clone(),
        q: system.q_cost.clone(),
        q_cost: system.q_cost.clone(),
    };
    let cost = quad_form(&parabolic_gramian(&cost_gram, horizon), &psi);
    let mut signal = ControlSignal {
        horizon,
        q: system.q.clone(),
        adjoint: AdjointProfile::Heat {
            psi,
            lambdas: system.lambdas.clone(),
        },
        cost,
        terminal_norm: 0.0,
        initial_norm: linalg::norm2(y0),
        iterations: 0,
        penalty: Some(eta),
        lambda_min: lmin,
    };
    let end = evolve::stokes_evolve(&system.lambdas, y0, &signal, horizon)?;
    signal.terminal_norm = end.h_norm();
    Ok(signal)
}

/// Penalized-HUM null control of the Stokes system on the filtered modes.
pub fn stokes_null_control_direct(
    modes: &StokesModes,
    mask: &ControlMask,
    y0: &[f64],
    horizon: f64,
    m_f: usize,
    tol: f64,
) -> Result<ControlSignal> {
    let system = ObservedSystem::from_modes(modes, mask, m_f)?;
    heat_signal(&system, &y0[..m_f.min(y0.len())], horizon, tol)
}

/// Same machinery for an arbitrary diagonal system, e.g. [`ObservedSystem::heat_1d`].
pub fn parabolic_null_control(system: &ObservedSystem, y0: &[f64], horizon: f64, tol: f64) -> Result<ControlSignal> {
    heat_signal(system, y0, horizon, tol)
}
