//! Time evolution of the Stokes and wave-with-pressure systems in modal
//! coordinates, plus an implicit MAC time stepper used only as a cross-check.
//!
//! In the eigenbasis `{e_j}` of `−A` both systems decouple:
//!
//! ```text
//! ŷ_j' = −λ_j ŷ_j + ĝ_j           (parabolic)
//! û_j'' = −λ_j û_j + ĥ_j          (hyperbolic)
//! ```
//!
//! where `ĝ_j = (P(g 1_ω), e_j)_H = (g 1_ω, e_j)_H` because `e_j` is
//! divergence-free. Duhamel integrals are delegated to the forcing through
//! [`ModalForcing`], so forcings with closed forms are integrated exactly.

use crate::domain::{ControlMask, VelocityField};
use crate::linalg;
use crate::quadrature::{refine_panels, CompositeRule, GaussLegendre};
use crate::stokesop::{PressureField, StokesModes, StokesOperator};
use crate::{Error, Result};

/// A forcing expressed in modal coordinates over its first `dim()` modes.
pub trait ModalForcing: Sync {
    fn dim(&self) -> usize;

    /// Writes `f̂_j(t)` into `out` (`out.len() == dim()`).
    fn sample(&self, t: f64, out: &mut [f64]);

    /// Points in time where the forcing is not smooth, including its support ends.
    fn breakpoints(&self) -> Vec<f64>;

    /// `∫₀ᵗ e^{−λ_j(t−s)} f̂_j(s) ds`.
    fn heat_duhamel(&self, lambdas: &[f64], t: f64) -> Vec<f64> {
        let lmax = lambdas[..self.dim()].iter().cloned().fold(0.0, f64::max);
        let rule = self.panel_rule(t, 2.0 / lmax.max(1e-300));
        let mut acc = vec![0.0; self.dim()];
        let mut f = vec![0.0; self.dim()];
        for (&s, &w) in rule.points.iter().zip(&rule.weights) {
            self.sample(s, &mut f);
            for j in 0..self.dim() {
                acc[j] += w * (-lambdas[j] * (t - s)).exp() * f[j];
            }
        }
        acc
    }

    /// `(∫₀ᵗ sin(ω_j(t−s))/ω_j f̂_j ds, ∫₀ᵗ cos(ω_j(t−s)) f̂_j ds)`.
    fn wave_duhamel(&self, lambdas: &[f64], t: f64) -> (Vec<f64>, Vec<f64>) {
        let wmax = lambdas[..self.dim()].iter().cloned().fold(0.0, f64::max).sqrt();
        let rule = self.panel_rule(t, 0.5 / wmax.max(1e-300));
        let n = self.dim();
        let (mut disp, mut vel) = (vec![0.0; n], vec![0.0; n]);
        let mut f = vec![0.0; n];
        for (&s, &w) in rule.points.iter().zip(&rule.weights) {
            self.sample(s, &mut f);
            for j in 0..n {
                let om = lambdas[j].sqrt();
                let (sn, cs) = (om * (t - s)).sin_cos();
                disp[j] += w * sn / om * f[j];
                vel[j] += w * cs * f[j];
            }
        }
        (disp, vel)
    }

    /// Composite 8-point Gauss–Legendre rule on `[0, t]` respecting breakpoints.
    fn panel_rule(&self, t: f64, max_len: f64) -> CompositeRule {
        let mut bp: Vec<f64> = self
            .breakpoints()
            .into_iter()
            .filter(|&b| b > 0.0 && b < t)
            .collect();
        bp.push(0.0);
        bp.push(t);
        bp.sort_by(|a, b| a.total_cmp(b));
        bp.dedup();
        CompositeRule::new(&refine_panels(&bp, max_len), &GaussLegendre::new(8))
    }
}

/// The zero forcing.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoForcing;

impl ModalForcing for NoForcing {
    fn dim(&self) -> usize {
        0
    }
    fn sample(&self, _t: f64, _out: &mut [f64]) {}
    fn breakpoints(&self) -> Vec<f64> {
        Vec::new()
    }
    fn heat_duhamel(&self, _lambdas: &[f64], _t: f64) -> Vec<f64> {
        Vec::new()
    }
    fn wave_duhamel(&self, _lambdas: &[f64], _t: f64) -> (Vec<f64>, Vec<f64>) {
        (Vec::new(), Vec::new())
    }
}

/// Modal forcing that is linear between nodes `t_0 < … < t_N` and zero
/// outside `[t_0, t_N]`. Duhamel integrals are evaluated in closed form.
#[derive(Debug, Clone)]
pub struct PiecewiseLinear {
    pub times: Vec<f64>,
    /// `values[n][j]` is `f̂_j(t_n)`.
    pub values: Vec<Vec<f64>>,
}

/// `(1 − e^{−z})/z` and `(1 − e^{−z}(1+z))/z²`.
pub(crate) fn heat_phis(z: f64) -> (f64, f64) {
    if z.abs() < 0.5 {
        let (mut p1, mut p2) = (0.0, 0.0);
        let mut term = 1.0; // (−z)^n / n!
        for n in 0..30 {
            p1 += term / (n + 1) as f64;
            p2 += term / (n + 2) as f64;
            term *= -z / (n + 1) as f64;
        }
        (p1, p2)
    } else {
        let e = (-z).exp();
        ((1.0 - e) / z, (1.0 - e * (1.0 + z)) / (z * z))
    }
}

/// `∫₀¹ cos(zu) du`, `∫₀¹ sin(zu) du`, `∫₀¹ u cos(zu) du`, `∫₀¹ u sin(zu) du`.
fn trig_moments(z: f64) -> [f64; 4] {
    if z.abs() < 0.5 {
        // s1 = sin z/z, c1 = (1 − cos z)/z², c3 = (sin z − z cos z)/z³
        let z2 = z * z;
        let (mut s1, mut c1, mut c3) = (0.0, 0.0, 0.0);
        let mut pow = 1.0; // (−z²)^n
        let mut fact = 1.0; // (2n+1)!
        for n in 0..15 {
            let f2 = fact * (2 * n + 2) as f64; // (2n+2)!
            let f3 = f2 * (2 * n + 3) as f64; // (2n+3)!
            s1 += pow / fact;
            c1 += pow / f2;
            c3 += pow * (2 * n + 2) as f64 / f3;
            pow *= -z2;
            fact = f3;
        }
        [s1, z * c1, s1 - c1, z * c3]
    } else {
        let (s, c) = z.sin_cos();
        [s / z, (1.0 - c) / z, (z * s + c - 1.0) / (z * z), (s - z * c) / (z * z)]
    }
}

impl PiecewiseLinear {
    pub fn new(times: Vec<f64>, values: Vec<Vec<f64>>) -> Result<Self> {
        if times.len() != values.len() || times.len() < 2 {
            return Err(Error::ShapeMismatch {
                expected: times.len().max(2),
                got: values.len(),
            });
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("forcing time grid must be increasing".into()));
        }
        let dim = values[0].len();
        if values.iter().any(|v| v.len() != dim) {
            return Err(Error::ShapeMismatch {
                expected: dim,
                got: values.iter().map(|v| v.len()).find(|&l| l != dim).unwrap_or(0),
            });
        }
        Ok(Self { times, values })
    }

    /// Uniform grid of `n + 1` nodes on `[0, T]` sampled from `f`.
    pub fn from_fn(horizon: f64, n: usize, dim: usize, f: impl Fn(f64, &mut [f64])) -> Self {
        let times: Vec<f64> = (0..=n).map(|k| horizon * k as f64 / n as f64).collect();
        let values = times
            .iter()
            .map(|&t| {
                let mut v = vec![0.0; dim];
                f(t, &mut v);
                v
            })
            .collect();
        Self { times, values }
    }

    /// Linear segments of the forcing clipped to `[t_0, min(t, t_N)]`, as
    /// `(start, length, f_start, f_end)`.
    fn segments(&self, t: f64) -> Vec<(f64, f64, Vec<f64>, Vec<f64>)> {
        let mut out = Vec::new();
        for n in 0..self.times.len() - 1 {
            let (a, b) = (self.times[n], self.times[n + 1]);
            if a >= t {
                break;
            }
            if b <= t {
                out.push((a, b - a, self.values[n].clone(), self.values[n + 1].clone()));
            } else {
                let theta = (t - a) / (b - a);
                let end: Vec<f64> = self.values[n]
                    .iter()
                    .zip(&self.values[n + 1])
                    .map(|(x, y)| x + theta * (y - x))
                    .collect();
                out.push((a, t - a, self.values[n].clone(), end));
            }
        }
        out
    }
}

impl ModalForcing for PiecewiseLinear {
    fn dim(&self) -> usize {
        self.values[0].len()
    }

    fn sample(&self, t: f64, out: &mut [f64]) {
        let n = self.times.len();
        if t < self.times[0] || t > self.times[n - 1] {
            out.iter_mut().for_each(|o| *o = 0.0);
            return;
        }
        let k = match self.times.binary_search_by(|x| x.total_cmp(&t)) {
            Ok(k) => {
                out.copy_from_slice(&self.values[k]);
                return;
            }
            Err(k) => k - 1,
        };
        let theta = (t - self.times[k]) / (self.times[k + 1] - self.times[k]);
        for (j, o) in out.iter_mut().enumerate() {
            *o = self.values[k][j] + theta * (self.values[k + 1][j] - self.values[k][j]);
        }
    }

    fn breakpoints(&self) -> Vec<f64> {
        self.times.clone()
    }

    fn heat_duhamel(&self, lambdas: &[f64], t: f64) -> Vec<f64> {
        let dim = self.dim();
        let mut acc = vec![0.0; dim];
        for (a, h, f0, f1) in self.segments(t) {
            let tail = t - (a + h);
            for j in 0..dim {
                let (p1, p2) = heat_phis(lambdas[j] * h);
                let seg = h * (f0[j] * p2 + f1[j] * (p1 - p2));
                acc[j] += (-lambdas[j] * tail).exp() * seg;
            }
        }
        acc
    }

    fn wave_duhamel(&self, lambdas: &[f64], t: f64) -> (Vec<f64>, Vec<f64>) {
        let dim = self.dim();
        let (mut disp, mut vel) = (vec![0.0; dim], vec![0.0; dim]);
        for (a, h, f0, f1) in self.segments(t) {
            for j in 0..dim {
                let om = lambdas[j].sqrt();
                let [c0, s0, c1, s1] = trig_moments(om * h);
                let df = f1[j] - f0[j];
                let ic = h * (f0[j] * c0 + df * c1);
                let is = h * (f0[j] * s0 + df * s1);
                let (sn, cs) = (om * (t - a)).sin_cos();
                disp[j] += (sn * ic - cs * is) / om;
                vel[j] += cs * ic + sn * is;
            }
        }
        (disp, vel)
    }
}

/// Forcing given by a closure, integrated by composite Gauss–Legendre.
pub struct FnForcing<F: Fn(f64, &mut [f64]) + Sync> {
    pub dim: usize,
    pub breakpoints: Vec<f64>,
    pub f: F,
}

impl<F: Fn(f64, &mut [f64]) + Sync> ModalForcing for FnForcing<F> {
    fn dim(&self) -> usize {
        self.dim
    }
    fn sample(&self, t: f64, out: &mut [f64]) {
        (self.f)(t, out)
    }
    fn breakpoints(&self) -> Vec<f64> {
        self.breakpoints.clone()
    }
}

/// Projects masked velocity snapshots `g(t_n) 1_ω` onto the first `dim` modes.
pub fn modal_forcing_from_fields(
    modes: &StokesModes,
    mask: &ControlMask,
    times: Vec<f64>,
    fields: &[VelocityField],
    dim: usize,
) -> Result<PiecewiseLinear> {
    let values = fields
        .iter()
        .map(|g| Ok(modes.project(&mask.apply(g))?[..dim].to_vec()))
        .collect::<Result<Vec<_>>>()?;
    PiecewiseLinear::new(times, values)
}

/// Parabolic state in modal coordinates.
#[derive(Debug, Clone)]
pub struct StokesState {
    pub t: f64,
    pub coeffs: Vec<f64>,
    pub pressure: Option<PressureField>,
}

impl StokesState {
    pub fn velocity(&self, modes: &StokesModes) -> VelocityField {
        modes.synthesize(&self.coeffs)
    }

    /// `|y|_H`, exact in the orthonormal basis.
    pub fn h_norm(&self) -> f64 {
        linalg::norm2(&self.coeffs)
    }

    pub fn v_norm(&self, lambdas: &[f64]) -> f64 {
        self.coeffs
            .iter()
            .zip(lambdas)
            .map(|(c, l)| l * c * c)
            .sum::<f64>()
            .sqrt()
    }
}

/// Hyperbolic state `(u, u_t)` in modal coordinates.
#[derive(Debug, Clone)]
pub struct WaveState {
    pub t: f64,
    pub u: Vec<f64>,
    pub ut: Vec<f64>,
}

impl WaveState {
    pub fn at_rest(t: f64, m: usize) -> Self {
        Self {
            t,
            u: vec![0.0; m],
            ut: vec![0.0; m],
        }
    }

    /// `E = |u_t|²_H + ‖u‖²_V`.
    pub fn energy(&self, lambdas: &[f64]) -> f64 {
        self.u
            .iter()
            .zip(&self.ut)
            .zip(lambdas)
            .map(|((u, v), l)| v * v + l * u * u)
            .sum()
    }

    pub fn displacement(&self, modes: &StokesModes) -> VelocityField {
        modes.synthesize(&self.u)
    }

    pub fn velocity(&self, modes: &StokesModes) -> VelocityField {
        modes.synthesize(&self.ut)
    }
}

fn check_forcing(forcing: &dyn ModalForcing, m: usize) -> Result<()> {
    if forcing.dim() > m {
        return Err(Error::ShapeMismatch {
            expected: m,
            got: forcing.dim(),
        });
    }
    Ok(())
}

/// Modal solution of `y_t = A y + P(g 1_ω)` at time `t` from `y(0) = y0`.
pub fn stokes_evolve(
    lambdas: &[f64],
    y0: &[f64],
    forcing: &dyn ModalForcing,
    t: f64,
) -> Result<StokesState> {
    if t < 0.0 {
        return Err(Error::NegativeTime(t));
    }
    if y0.len() > lambdas.len() {
        return Err(Error::ShapeMismatch {
            expected: lambdas.len(),
            got: y0.len(),
        });
    }
    check_forcing(forcing, lambdas.len())?;
    let m = y0.len().max(forcing.dim());
    let mut coeffs = vec![0.0; m];
    for (j, c) in y0.iter().enumerate() {
        coeffs[j] = (-lambdas[j] * t).exp() * c;
    }
    if forcing.dim() > 0 && t > 0.0 {
        for (j, d) in forcing.heat_duhamel(lambdas, t).into_iter().enumerate() {
            coeffs[j] += d;
        }
    }
    Ok(StokesState {
        t,
        coeffs,
        pressure: None,
    })
}

/// Field-level wrapper: projects `y0` onto the retained modes, evolves, and
/// optionally reconstructs the pressure for residual reporting.
pub fn stokes_evolve_field(
    modes: &StokesModes,
    y0: &VelocityField,
    forcing: &dyn ModalForcing,
    t: f64,
    pressure: Option<(&StokesOperator, &VelocityField)>,
) -> Result<StokesState> {
    let c = modes.project(y0)?;
    let mut state = stokes_evolve(&modes.eigenvalues, &c, forcing, t)?;
    if let Some((op, g_masked)) = pressure {
        state.pressure = Some(reconstruct_pressure(op, &state.velocity(modes), g_masked)?);
    }
    Ok(state)
}

/// Pressure `p` with `∇p = (I − P)(Δ_h y + g 1_ω)`, zero mean.
pub fn reconstruct_pressure(
    op: &StokesOperator,
    y: &VelocityField,
    g_masked: &VelocityField,
) -> Result<PressureField> {
    let raw = op.laplacian(y)?.add(g_masked);
    Ok(op.leray_project_with_pressure(&raw)?.1)
}

/// Modal solution of `u_tt = A u + h 1_ω` at time `t`.
pub fn wave_evolve(
    lambdas: &[f64],
    state0: &WaveState,
    forcing: &dyn ModalForcing,
    t: f64,
) -> Result<WaveState> {
    if state0.u.len() != state0.ut.len() || state0.u.len() > lambdas.len() {
        return Err(Error::ShapeMismatch {
            expected: state0.u.len(),
            got: state0.ut.len(),
        });
    }
    check_forcing(forcing, lambdas.len())?;
    let tau = t - state0.t;
    if forcing.dim() > 0 && tau < 0.0 {
        return Err(Error::NegativeTime(tau));
    }
    let m = state0.u.len().max(forcing.dim());
    let mut out = WaveState::at_rest(t, m);
    for j in 0..state0.u.len() {
        let om = lambdas[j].sqrt();
        let (s, c) = (om * tau).sin_cos();
        out.u[j] = c * state0.u[j] + s / om * state0.ut[j];
        out.ut[j] = -om * s * state0.u[j] + c * state0.ut[j];
    }
    if forcing.dim() > 0 && tau > 0.0 {
        // forcing time is measured from the initial time of the state
        let (d, v) = forcing.wave_duhamel(lambdas, tau);
        for j in 0..forcing.dim() {
            out.u[j] += d[j];
            out.ut[j] += v[j];
        }
    }
    Ok(out)
}

/// Free adjoint solution `φ_tt = Aφ` from `(φ0, φ1)` at time `t` (any sign).
pub fn adjoint_wave_evolve(lambdas: &[f64], phi0: &[f64], phi1: &[f64], t: f64) -> Result<WaveState> {
    let s0 = WaveState {
        t: 0.0,
        u: phi0.to_vec(),
        ut: phi1.to_vec(),
    };
    wave_evolve(lambdas, &s0, &NoForcing, t)
}

/// Same solution through the primitive `ψ` with `φ = ψ_t`, where
/// `ψ(0) = A⁻¹φ1`, `ψ_t(0) = φ0`.
pub fn adjoint_wave_via_primitive(
    lambdas: &[f64],
    phi0: &[f64],
    phi1: &[f64],
    t: f64,
) -> Result<WaveState> {
    let psi0: Vec<f64> = phi1.iter().zip(lambdas).map(|(p, l)| -p / l).collect();
    let psi = adjoint_wave_evolve(lambdas, &psi0, phi0, t)?;
    // φ = ψ_t, φ_t = ψ_tt = Aψ
    let phi_t: Vec<f64> = psi.u.iter().zip(lambdas).map(|(p, l)| -l * p).collect();
    Ok(WaveState {
        t,
        u: psi.ut,
        ut: phi_t,
    })
}

/// Observation trace `χ_ω φ(t)` of the free adjoint at the given times.
pub fn adjoint_trace(
    modes: &StokesModes,
    mask: &ControlMask,
    phi0: &[f64],
    phi1: &[f64],
    times: &[f64],
) -> Result<Vec<VelocityField>> {
    times
        .iter()
        .map(|&t| {
            let s = adjoint_wave_evolve(&modes.eigenvalues, phi0, phi1, t)?;
            Ok(mask.apply(&s.displacement(modes)))
        })
        .collect()
}

/// Which system [`mac_step_reference`] advances.
#[derive(Debug, Clone)]
pub enum ReferenceState {
    /// Implicit Euler for `y_t = A y`.
    Parabolic(VelocityField),
    /// Implicit midpoint for `u_tt = A u`.
    Hyperbolic { u: VelocityField, ut: VelocityField },
}

/// Solves `(I − c A) x = b` on divergence-free fields by conjugate gradients.
fn shifted_solve(op: &StokesOperator, c: f64, b: &VelocityField) -> Result<VelocityField> {
    let apply = |x: &[f64], out: &mut [f64]| {
        let v = VelocityField { values: x.to_vec() };
        let a = op.apply_a(&v).expect("shape checked");
        for ((o, xi), ai) in out.iter_mut().zip(x).zip(&a.values) {
            *o = xi - c * ai;
        }
    };
    let rep = linalg::conjugate_gradient(apply, &b.values, 1e-13, 10 * b.values.len())?;
    Ok(VelocityField {
        values: rep.solution,
    })
}

/// One step of an implicit MAC scheme with projection, independent of the
/// modal engine.
pub fn mac_step_reference(
    op: &StokesOperator,
    state: &ReferenceState,
    dt: f64,
) -> Result<ReferenceState> {
    match state {
        ReferenceState::Parabolic(y) => {
            let b = op.leray_project(y)?;
            Ok(ReferenceState::Parabolic(shifted_solve(op, dt, &b)?))
        }
        ReferenceState::Hyperbolic { u, ut } => {
            // w = (u0 + u1)/2 solves (I − dt²/4 A) w = u0 + dt/2 u_t0
            let b = op.leray_project(&u.add(&ut.scaled(0.5 * dt)))?;
            let w = shifted_solve(op, 0.25 * dt * dt, &b)?;
            let u1 = w.scaled(2.0).sub(u);
            let ut1 = ut.add(&op.apply_a(&w)?.scaled(dt));
            Ok(ReferenceState::Hyperbolic { u: u1, ut: ut1 })
        }
    }
}
