//! Parabolic null controls assembled from hyperbolic ones through the
//! controlled fundamental solution:
//!
//! ```text
//! y(t) = ∫ k(t, s) û(s) ds,    g(t) = ∫ k(t, s) ĥ(s) ds,
//! ```
//!
//! where `û` solves `u_ℓℓ = Au + h 1_ω` in the pseudo-time `ℓ ∈ [0, L]`, is
//! driven to rest at `ℓ = L` and is extended evenly to `[−L, L]`.
//!
//! The pseudo-time wave is discretized by leapfrog on the kernel's own `s`
//! grid and controlled by discrete HUM. The three-point second difference
//! then moves from `k` to `û` by exact summation by parts, so the transmuted
//! pair solves the semi-discrete Stokes system exactly; only the differencing
//! used to check it carries an error.

use std::sync::Arc;

use faer::Mat;
use serde::Serialize;

use crate::domain::VelocityField;
use crate::hum::{ObservedSystem, SINGULAR_RATIO};
use crate::kernel::{build_kernel, KernelSpec, TransmutationKernel};
use crate::linalg;
use crate::stokesop::{StokesModes, StokesOperator};
use crate::{Error, Result};

/// Largest admissible `Δs √λ`; keeps `cos θ ≥ ½` in the leapfrog recursion.
pub const LEAPFROG_CFL: f64 = 1.0;

/// Even extension of samples on `ℓ_m = mΔs`, `m = 0…N`, to `m = −N…N`,
/// after checking the null conditions at `m = N − 1, N`.
pub fn reflect_extend(samples: &[Vec<f64>], tol: f64) -> Result<Vec<Vec<f64>>> {
    let n = samples.len();
    if n < 2 {
        return Ok(samples.to_vec());
    }
    let scale = samples.iter().map(|v| linalg::norm2(v)).fold(0.0, f64::max);
    let tail = linalg::norm2(&samples[n - 1]).max(linalg::norm2(&samples[n - 2]));
    if tail > tol * scale.max(f64::MIN_POSITIVE) {
        return Err(Error::NotNullControlled(tail / scale));
    }
    let mut out: Vec<Vec<f64>> = samples[1..].iter().rev().cloned().collect();
    out.extend(samples.iter().cloned());
    Ok(out)
}

/// Leapfrog pseudo-time wave driven to rest by discrete HUM.
#[derive(Debug, Clone, Serialize)]
pub struct LeapfrogControl {
    pub ds: f64,
    pub steps: usize,
    /// `û_m` for `m = 0…N`.
    pub states: Vec<Vec<f64>>,
    /// Adjoint `φ̂_m`; the control is `h_m = 1_ω Σ_j φ̂_{m,j} e_j`.
    pub adjoint: Vec<Vec<f64>>,
    /// `Σ_m w_m ‖h_m‖²` with trapezoid weights on `[0, L]`.
    pub cost: f64,
    /// Discrete `V × H` norm of `(u_N, (u_N − u_{N−1})/Δs)` over that of the data.
    pub terminal_ratio: f64,
    pub lambda_min: f64,
}

fn impulse(ds: f64, theta: f64, k: usize) -> f64 {
    if k == 0 {
        0.0
    } else {
        ds * ds * (k as f64 * theta).sin() / theta.sin()
    }
}

/// Discrete HUM for `û_{m+1} − 2û_m + û_{m−1} = Δs²(−Λû_m + Qφ̂_m)` with
/// `û_0 = y0`, even start, and `û_{N−1} = û_N = 0`.
pub fn leapfrog_null_control(system: &ObservedSystem, y0: &[f64], ds: f64, steps: usize) -> Result<LeapfrogControl> {
    let m = system.dim();
    if y0.len() != m {
        return Err(Error::ShapeMismatch {
            expected: m,
            got: y0.len(),
        });
    }
    if steps < 3 {
        return Err(Error::Config(format!("{steps} pseudo-time steps; need at least 3")));
    }
    let lmax = system.lambdas.iter().cloned().fold(0.0, f64::max);
    if ds * lmax.sqrt() > LEAPFROG_CFL {
        return Err(Error::GridTooCoarse(format!(
            "pseudo-time step {ds:.4} with √λ_max = {:.3} exceeds the leapfrog limit {LEAPFROG_CFL}",
            lmax.sqrt()
        )));
    }
    let theta: Vec<f64> = system.lambdas.iter().map(|l| (1.0 - 0.5 * ds * ds * l).acos()).collect();
    let n = steps;
    let recursion_weight = |step: usize| if step == 0 { 0.5 } else { 1.0 };
    let cost_weight = |step: usize| ds * if step == 0 { 0.5 } else { 1.0 };

    // Terminal map in (u_N, (u_N − u_{N−1})/Δs) coordinates: α_m(j) is the
    // response of mode j to a unit impulse at step m.
    let alpha = |step: usize, j: usize| -> (f64, f64) {
        let c = recursion_weight(step);
        let a = c * impulse(ds, theta[j], n - 1 - step);
        let b = c * impulse(ds, theta[j], n - step);
        (b, (b - a) / ds)
    };
    let mut outer = Mat::<f64>::zeros(2 * m, 2 * m);
    let mut col = vec![0.0; 2 * m];
    for step in 0..n {
        let w = cost_weight(step);
        for j in 0..m {
            let (p, v) = alpha(step, j);
            col[j] = p;
            col[m + j] = v;
        }
        for r in 0..2 * m {
            for c in 0..2 * m {
                outer[(r, c)] += col[r] * col[c] / w;
            }
        }
    }
    let lam = Mat::from_fn(2 * m, 2 * m, |r, c| system.q[(r % m, c % m)] * outer[(r, c)]);
    let free: Vec<f64> = (0..2 * m)
        .map(|r| {
            let j = r % m;
            let (cn, cp) = ((n as f64 * theta[j]).cos(), ((n - 1) as f64 * theta[j]).cos());
            y0[j] * if r < m { cn } else { (cn - cp) / ds }
        })
        .collect();

    let scale: Vec<f64> = (0..2 * m).map(|r| 1.0 / lam[(r, r)].max(f64::MIN_POSITIVE).sqrt()).collect();
    let scaled = Mat::from_fn(2 * m, 2 * m, |r, c| scale[r] * lam[(r, c)] * scale[c]);
    let (vals, vecs) = linalg::sym_eigen(&scaled)?;
    let (lmin, lmax) = (vals[0], vals[2 * m - 1]);
    if lmin <= SINGULAR_RATIO * lmax {
        return Err(Error::HorizonBelowControlTime {
            horizon: n as f64 * ds,
            lambda_min: lmin,
        });
    }
    let rhs: Vec<f64> = free.iter().zip(&scale).map(|(f, s)| -f * s).collect();
    let mut mu = vec![0.0; 2 * m];
    for k in 0..2 * m {
        let coef = (0..2 * m).map(|r| vecs[(r, k)] * rhs[r]).sum::<f64>() / vals[k];
        for (r, x) in mu.iter_mut().enumerate() {
            *x += vecs[(r, k)] * coef * scale[r];
        }
    }

    let mut adjoint = vec![vec![0.0; m]; n + 1];
    for (step, phi) in adjoint.iter_mut().enumerate().take(n) {
        let w = cost_weight(step);
        for (j, p) in phi.iter_mut().enumerate() {
            let (a, b) = alpha(step, j);
            *p = (a * mu[j] + b * mu[m + j]) / w;
        }
    }
    let forcing: Vec<Vec<f64>> = adjoint
        .iter()
        .map(|phi| {
            let mut f = vec![0.0; m];
            linalg::mat_vec(&system.q, phi, &mut f);
            f
        })
        .collect();
    let mut states = Vec::with_capacity(n + 1);
    states.push(y0.to_vec());
    states.push(
        (0..m)
            .map(|j| y0[j] + 0.5 * ds * ds * (-system.lambdas[j] * y0[j] + forcing[0][j]))
            .collect(),
    );
    for step in 1..n {
        let next: Vec<f64> = (0..m)
            .map(|j| {
                let (u, up) = (states[step][j], states[step - 1][j]);
                2.0 * u - up + ds * ds * (-system.lambdas[j] * u + forcing[step][j])
            })
            .collect();
        states.push(next);
    }
    let cost: f64 = adjoint
        .iter()
        .enumerate()
        .map(|(step, phi)| cost_weight(step) * quad(&system.q_cost, phi))
        .sum();
    let energy = |u: &[f64], v: &[f64]| -> f64 {
        u.iter()
            .zip(v)
            .zip(&system.lambdas)
            .map(|((u, v), l)| l * u * u + v * v)
            .sum::<f64>()
            .sqrt()
    };
    let vel: Vec<f64> = states[n].iter().zip(&states[n - 1]).map(|(a, b)| (a - b) / ds).collect();
    let initial = energy(y0, &vec![0.0; m]);
    let terminal_ratio = energy(&states[n], &vel) / initial.max(f64::MIN_POSITIVE);
    Ok(LeapfrogControl {
        ds,
        steps: n,
        states,
        adjoint,
        cost,
        terminal_ratio,
        lambda_min: lmin,
    })
}

fn quad(a: &Mat<f64>, x: &[f64]) -> f64 {
    let mut ax = vec![0.0; x.len()];
    linalg::mat_vec(a, x, &mut ax);
    linalg::dot(x, &ax)
}

/// Parameters for [`transmute`] and [`regularize_then_control`].
#[derive(Debug, Clone, Copy, Serialize)]
pub struct TransmuteConfig {
    pub half_length: f64,
    pub horizon: f64,
    pub n_t: usize,
    pub kernel_tol: f64,
    pub activation: f64,
}

impl TransmuteConfig {
    pub fn new(half_length: f64, horizon: f64) -> Self {
        Self {
            half_length,
            horizon,
            n_t: 256,
            kernel_tol: 1e-6,
            activation: 0.2,
        }
    }

    /// Kernel grid resolving both `√T` and the leapfrog limit for `λ_max`.
    pub fn kernel_spec(&self, lambda_max: f64) -> KernelSpec {
        let mut spec = KernelSpec::recommended(self.half_length, self.horizon);
        let ds = (self.horizon.sqrt() / 8.0).min(0.98 * LEAPFROG_CFL / lambda_max.sqrt());
        spec.n_s = (2.0 * self.half_length / ds).ceil() as usize + 1;
        if spec.n_s % 2 == 0 {
            spec.n_s += 1;
        }
        spec.n_t = self.n_t;
        spec.tol = self.kernel_tol;
        spec.activation = self.activation;
        spec
    }
}

/// Free smoothing on `[0, ε]` in front of the transmuted control.
#[derive(Debug, Clone, Serialize)]
pub struct Regularization {
    pub epsilon: f64,
    /// `‖y(ε)‖²_V`.
    pub v_norm_sq: f64,
    /// `|y0|²_H`.
    pub h_norm_sq: f64,
    /// `ε e^{2/ε} |y0|²_H` (infinite when it overflows).
    pub smoothing_bound: f64,
    pub smoothing_holds: bool,
}

/// Controlled Stokes trajectory on `[offset, T]` in modal coordinates.
#[derive(Debug, Clone, Serialize)]
pub struct TransmutedSolution {
    pub horizon: f64,
    /// Start of the controlled phase; zero unless regularized.
    pub offset: f64,
    pub half_length: f64,
    /// Absolute times of the stored nodes.
    pub times: Vec<f64>,
    /// `y(t_i)` in the first `M_f` modes.
    pub y: Vec<Vec<f64>>,
    /// Adjoint weights `c(t_i)`: the control field is `1_ω Σ_j c_j e_j`.
    pub g: Vec<Vec<f64>>,
    pub lambdas: Vec<f64>,
    #[serde(skip)]
    pub q: Mat<f64>,
    /// `|y(0)|_H` of the original data.
    pub initial_norm: f64,
    /// `|y(T)|_H`.
    pub terminal_norm: f64,
    /// `|y(offset) − data at offset|_∞`.
    pub sifting_error: f64,
    /// `∫∫_{ω×(0,T)} |g|²`.
    pub cost: f64,
    /// Pseudo-time control cost `Σ w_m ‖h_m‖²` on `[0, L]`.
    pub wave_cost: f64,
    pub wave_terminal_ratio: f64,
    pub kernel_norm_sq: f64,
    /// `2 ‖k‖² · wave_cost`, the discrete Cauchy–Schwarz bound on `cost`.
    pub chain_bound: f64,
    pub regularization: Option<Regularization>,
    #[serde(skip)]
    kernel: Arc<TransmutationKernel>,
    /// Sine-mode projections `Σ_p Δs S_n(p) û` and `Σ_p Δs S_n(p) φ̂`.
    #[serde(skip)]
    y_modes: Vec<Vec<f64>>,
    #[serde(skip)]
    g_modes: Vec<Vec<f64>>,
}

impl TransmutedSolution {
    pub fn dim(&self) -> usize {
        self.lambdas.len()
    }

    pub fn kernel(&self) -> &TransmutationKernel {
        &self.kernel
    }

    fn combine(&self, t: f64, parts: &[Vec<f64>]) -> Vec<f64> {
        let kappa = self.kernel.modal_at(t - self.offset);
        let mut out = vec![0.0; self.dim()];
        for (k, v) in kappa.iter().zip(parts) {
            linalg::axpy(*k, v, &mut out);
        }
        out
    }

    /// Exact `y(t)` for `t ∈ [offset, T]`.
    pub fn y_at(&self, t: f64) -> Vec<f64> {
        self.combine(t, &self.y_modes)
    }

    /// Exact adjoint weights `c(t)` for `t ∈ [offset, T]`.
    pub fn g_at(&self, t: f64) -> Vec<f64> {
        self.combine(t, &self.g_modes)
    }

    /// Modal control forcing `Q c(t_i)`.
    pub fn forcing(&self, i: usize) -> Vec<f64> {
        let mut f = vec![0.0; self.dim()];
        linalg::mat_vec(&self.q, &self.g[i], &mut f);
        f
    }

    /// Velocity field at node `i`.
    pub fn velocity(&self, modes: &StokesModes, i: usize) -> VelocityField {
        modes.synthesize(&self.y[i])
    }
}

/// Runs the pipeline with a kernel sized from `config`.
pub fn transmute(system: &ObservedSystem, y0: &[f64], config: &TransmuteConfig) -> Result<TransmutedSolution> {
    let lmax = system.lambdas.iter().cloned().fold(0.0, f64::max);
    let kernel = build_kernel(config.kernel_spec(lmax))?;
    transmute_with(system, y0, Arc::new(kernel))
}

/// Transmutes the discrete wave null control from `(y0, 0)` through a given
/// kernel; the pseudo-time grid is the kernel's `s` grid on `[0, L]`.
pub fn transmute_with(system: &ObservedSystem, y0: &[f64], kernel: Arc<TransmutationKernel>) -> Result<TransmutedSolution> {
    let m = system.dim();
    let steps = kernel.n_s() / 2;
    let ds = kernel.ds;
    let wave = leapfrog_null_control(system, y0, ds, steps)?;

    // sums over interior s nodes p = 1 … 2N − 1, pseudo-time index |p − N|
    let pair = |row: &[f64], samples: &[Vec<f64>]| -> Vec<f64> {
        let mut out = vec![0.0; m];
        for p in 1..2 * steps {
            let w = ds * row[p];
            if w == 0.0 {
                continue;
            }
            linalg::axpy(w, &samples[p.abs_diff(steps)], &mut out);
        }
        out
    };
    let n_t = kernel.spec.n_t;
    let mut y = Vec::with_capacity(n_t + 1);
    let mut g = Vec::with_capacity(n_t + 1);
    for i in 0..=n_t {
        let row = kernel.node_row(i);
        y.push(pair(row, &wave.states));
        g.push(pair(row, &wave.adjoint));
    }
    let sifting_error = y[0]
        .iter()
        .zip(y0)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);

    // exact time integral of |g|² through the kernel's sine modes
    let project = |samples: &[Vec<f64>]| -> Vec<Vec<f64>> {
        kernel
            .shapes()
            .iter()
            .map(|shape| {
                let mut acc = vec![0.0; m];
                for p in 1..2 * steps {
                    linalg::axpy(ds * shape[p - 1], &samples[p.abs_diff(steps)], &mut acc);
                }
                acc
            })
            .collect()
    };
    let phi = project(&wave.adjoint);
    let y_modes = project(&wave.states);
    let qphi: Vec<Vec<f64>> = phi
        .iter()
        .map(|v| {
            let mut out = vec![0.0; m];
            linalg::mat_vec(&system.q_cost, v, &mut out);
            out
        })
        .collect();
    let kt = kernel.modal_time_gram();
    let mut cost = 0.0;
    for a in 0..phi.len() {
        for b in 0..phi.len() {
            cost += kt[(a, b)] * linalg::dot(&phi[a], &qphi[b]);
        }
    }

    let initial_norm = linalg::norm2(y0);
    let terminal_norm = linalg::norm2(&y[n_t]);
    Ok(TransmutedSolution {
        horizon: kernel.spec.horizon,
        offset: 0.0,
        half_length: kernel.spec.half_length,
        times: kernel.times.clone(),
        y,
        g,
        lambdas: system.lambdas.clone(),
        q: system.q.clone(),
        initial_norm,
        terminal_norm,
        sifting_error,
        cost,
        wave_cost: wave.cost,
        wave_terminal_ratio: wave.terminal_ratio,
        kernel_norm_sq: kernel.norm_sq,
        chain_bound: 2.0 * kernel.norm_sq * wave.cost,
        regularization: None,
        kernel,
        y_modes,
        g_modes: phi,
    })
}

/// Lets `y0 ∈ H` decay freely on `[0, ε)` and transmutes the control from
/// `y(ε)` on `[ε, T]`. With `ε = 0` this is [`transmute`].
pub fn regularize_then_control(
    system: &ObservedSystem,
    y0: &[f64],
    epsilon: f64,
    config: &TransmuteConfig,
) -> Result<TransmutedSolution> {
    if !(0.0..config.horizon).contains(&epsilon) {
        return Err(Error::Config(format!(
            "ε = {epsilon} must lie in [0, T = {})",
            config.horizon
        )));
    }
    if y0.len() != system.dim() {
        return Err(Error::ShapeMismatch {
            expected: system.dim(),
            got: y0.len(),
        });
    }
    let y_eps: Vec<f64> = y0
        .iter()
        .zip(&system.lambdas)
        .map(|(c, l)| c * (-l * epsilon).exp())
        .collect();
    let inner = TransmuteConfig {
        horizon: config.horizon - epsilon,
        ..*config
    };
    let mut sol = transmute(system, &y_eps, &inner)?;
    if epsilon == 0.0 {
        return Ok(sol);
    }
    sol.times.iter_mut().for_each(|t| *t += epsilon);
    sol.horizon = config.horizon;
    sol.offset = epsilon;
    sol.initial_norm = linalg::norm2(y0);
    let v_norm_sq: f64 = y_eps.iter().zip(&system.lambdas).map(|(c, l)| l * c * c).sum();
    let h_norm_sq = linalg::dot(y0, y0);
    let smoothing_bound = epsilon * (2.0 / epsilon).exp() * h_norm_sq;
    sol.regularization = Some(Regularization {
        epsilon,
        v_norm_sq,
        h_norm_sq,
        smoothing_bound,
        smoothing_holds: v_norm_sq <= smoothing_bound,
    });
    Ok(sol)
}

/// Checks of the transmuted pair against the modal Stokes system.
#[derive(Debug, Clone, Serialize)]
pub struct TransmuteResidual {
    /// Sampling step `Δt` of the centered differences.
    pub step: f64,
    /// `max_t |(y(t+Δt) − y(t−Δt))/2Δt + Λ y(t) − Q c(t)|_∞` over interior samples.
    pub max_residual: f64,
    /// The same relative to `max_t |Λ y(t)|_∞`.
    pub relative: f64,
    /// `max |div y(t_i)|` over the stored nodes, when fields are available.
    pub divergence: Option<f64>,
}

/// Samples the exact trajectory with `intervals` uniform steps on
/// `[offset, T]` and checks it with centered differences.
pub fn verify_transmuted(
    sol: &TransmutedSolution,
    intervals: usize,
    fields: Option<(&StokesModes, &StokesOperator)>,
) -> Result<TransmuteResidual> {
    if intervals < 2 {
        return Err(Error::Config("need at least two sampling intervals".into()));
    }
    let m = sol.dim();
    let h = (sol.horizon - sol.offset) / intervals as f64;
    let ys: Vec<Vec<f64>> = (0..=intervals).map(|i| sol.y_at(sol.offset + h * i as f64)).collect();
    let (mut worst, mut scale) = (0.0_f64, 0.0_f64);
    let mut qc = vec![0.0; m];
    for i in 1..intervals {
        let c = sol.g_at(sol.offset + h * i as f64);
        linalg::mat_vec(&sol.q, &c, &mut qc);
        for j in 0..m {
            let ay = sol.lambdas[j] * ys[i][j];
            let r = (ys[i + 1][j] - ys[i - 1][j]) / (2.0 * h) + ay - qc[j];
            worst = worst.max(r.abs());
            scale = scale.max(ay.abs());
        }
    }
    let divergence = match fields {
        Some((modes, op)) => {
            let mut d = 0.0_f64;
            for i in 0..sol.times.len() {
                let div = op.divergence(&sol.velocity(modes, i))?;
                d = d.max(linalg::max_abs(&div.values));
            }
            Some(d)
        }
        None => None,
    };
    Ok(TransmuteResidual {
        step: h,
        max_residual: worst,
        relative: worst / scale.max(f64::MIN_POSITIVE),
        divergence,
    })
}

/// Observed order of the residual between sampling steps `Δt` and `Δt/2`,
/// with `Δt` small enough that `r Δt ≤ ¼` for the fastest rate `r` among the
/// Stokes eigenvalues and the kernel's sine modes.
pub fn residual_order(sol: &TransmutedSolution) -> Result<(f64, TransmuteResidual, TransmuteResidual)> {
    let lmax = sol
        .lambdas
        .iter()
        .chain(sol.kernel.mode_eigenvalues())
        .cloned()
        .fold(0.0, f64::max);
    let span = sol.horizon - sol.offset;
    let n = ((4.0 * lmax * span).ceil() as usize).max(256).next_power_of_two();
    let coarse = verify_transmuted(sol, n, None)?;
    let fine = verify_transmuted(sol, 2 * n, None)?;
    let order = (coarse.max_residual / fine.max_residual).log2();
    Ok((order, coarse, fine))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn heat_system() -> ObservedSystem {
        ObservedSystem::heat_1d(12, 0.15)
    }

    #[test]
    fn reflection_is_even_and_checks_null_tail() {
        let s = vec![vec![3.0], vec![2.0], vec![1.0], vec![0.0], vec![0.0]];
        let e = reflect_extend(&s, 1e-12).unwrap();
        assert_eq!(e.len(), 9);
        for k in 0..4 {
            assert_eq!(e[k], e[8 - k]);
        }
        let bad: Vec<Vec<f64>> = (0..5).map(|m| vec![m as f64]).collect();
        assert!(matches!(reflect_extend(&bad, 1e-6), Err(Error::NotNullControlled(_))));
        let zero = vec![vec![0.0; 3]; 4];
        assert!(reflect_extend(&zero, 1e-6).unwrap().iter().all(|v| v.iter().all(|x| *x == 0.0)));
    }

    #[test]
    fn leapfrog_control_reaches_rest() {
        let sys = heat_system();
        let ds = 0.02;
        let lc = leapfrog_null_control(&sys, &[1.0; 12], ds, 120).unwrap();
        assert!(lc.terminal_ratio < 1e-10, "{}", lc.terminal_ratio);
        assert!(lc.states[lc.steps].iter().all(|v| v.abs() < 1e-10));
        assert!(lc.states[lc.steps - 1].iter().all(|v| v.abs() < 1e-10));
        let z = vec![0.0; 12];
        let free = leapfrog_null_control(&sys, &z, ds, 120).unwrap();
        assert!(free.states.iter().all(|u| u.iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn transmuted_heat_control_sifts_and_vanishes() {
        let sys = heat_system();
        let mut y0 = vec![0.0; 12];
        y0[0] = 1.0;
        y0[3] = -0.5;
        let sol = transmute(&sys, &y0, &TransmuteConfig::new(1.5, 0.5)).unwrap();
        assert!(sol.sifting_error <= 1e-12, "{}", sol.sifting_error);
        assert!(sol.terminal_norm <= 1e-4 * sol.initial_norm, "{}", sol.terminal_norm);
        assert!(sol.cost > 0.0 && sol.cost <= sol.chain_bound);
        let r = verify_transmuted(&sol, 8192, None).unwrap();
        assert!(r.relative < 1e-3, "{r:?}");
        for i in [0, 10, 256] {
            let exact = sol.y_at(sol.times[i]);
            for j in 0..12 {
                assert!((exact[j] - sol.y[i][j]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn residual_is_second_order() {
        let sys = heat_system();
        let y0: Vec<f64> = (0..12).map(|j| 1.0 / (1 + j) as f64).collect();
        let sol = transmute(&sys, &y0, &TransmuteConfig::new(1.5, 0.5)).unwrap();
        let (order, coarse, fine) = residual_order(&sol).unwrap();
        assert!(order >= 1.9, "{order} {coarse:?} {fine:?}");
    }

    #[test]
    fn zero_data_gives_zero_everything() {
        let sys = heat_system();
        let sol = transmute(&sys, &[0.0; 12], &TransmuteConfig::new(1.5, 0.5)).unwrap();
        assert_eq!(sol.cost, 0.0);
        assert_eq!(verify_transmuted(&sol, 64, None).unwrap().max_residual, 0.0);
    }

    #[test]
    fn regularization_waits_then_controls() {
        let sys = heat_system();
        let y0: Vec<f64> = (0..12).map(|j| if j % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let cfg = TransmuteConfig::new(1.5, 0.6);
        for eps in [0.05, 0.1, 0.2] {
            let sol = regularize_then_control(&sys, &y0, eps, &cfg).unwrap();
            let reg = sol.regularization.as_ref().unwrap();
            assert!(reg.smoothing_holds);
            assert_eq!(sol.times[0], eps);
            assert!(sol.terminal_norm <= 1e-4 * sol.initial_norm);
        }
        let direct = transmute(&sys, &y0, &cfg).unwrap();
        let zero_eps = regularize_then_control(&sys, &y0, 0.0, &cfg).unwrap();
        assert_eq!(direct.cost, zero_eps.cost);
        assert!(zero_eps.regularization.is_none());
    }
}
