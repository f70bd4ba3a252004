//! Controlled fundamental solution `k(t, s)` of the 1D heat equation on
//! `[0, T] × [−L, L]`: it starts from a grid delta at `s = 0` and is driven to
//! zero at `t = T` by symmetric Dirichlet values `k(t, ±L) = v(t)`.
//!
//! The heat equation is semi-discrete in `s` (three-point second difference
//! on `n_s` nodes) and solved exactly in `t` in the interior sine basis. Even
//! sine modes never see the symmetric data, so only odd modes are carried.
//! The boundary value `v` is piecewise linear on a uniform `t`-grid, vanishes
//! on `[0, θT]` and at `T`, and is the minimal-`L²` choice on `[θT, T]` from
//! penalized HUM. Waiting until `θT` keeps `k` equal to the free evolution at
//! early times; the unrestricted minimal-norm control acts from `t = 0`.

use faer::Mat;
use serde::Serialize;

use crate::evolve::heat_phis;
use crate::fit::{linear_fit, LinearFit};
use crate::linalg;
use crate::quadrature::{CompositeRule, GaussLegendre};
use crate::{Error, Result};

/// Grid and tolerance choices for [`build_kernel`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KernelSpec {
    pub half_length: f64,
    pub horizon: f64,
    /// Number of `s` nodes including both ends; must be odd.
    pub n_s: usize,
    /// Number of `t` intervals.
    pub n_t: usize,
    /// Required `‖k(T)‖ / ‖k(0)‖`.
    pub tol: f64,
    /// Fraction `θ` of the horizon before the boundary control switches on.
    pub activation: f64,
}

impl KernelSpec {
    /// `Δs ≈ √T/8` (odd node count) and 256 time intervals.
    pub fn recommended(half_length: f64, horizon: f64) -> Self {
        let ds = horizon.sqrt() / 8.0;
        let mut n_s = (2.0 * half_length / ds).ceil() as usize + 1;
        if n_s % 2 == 0 {
            n_s += 1;
        }
        Self {
            half_length,
            horizon,
            n_s,
            n_t: 256,
            tol: 1e-6,
            activation: 0.2,
        }
    }

    pub fn ds(&self) -> f64 {
        2.0 * self.half_length / (self.n_s - 1) as f64
    }

    /// Largest admissible horizon `min(π/2, L)²`.
    pub fn max_horizon(half_length: f64) -> f64 {
        half_length.min(std::f64::consts::FRAC_PI_2).powi(2)
    }

    pub fn validate(&self) -> Result<()> {
        let tmax = Self::max_horizon(self.half_length);
        if !(self.horizon > 0.0 && self.horizon <= tmax) {
            return Err(Error::InadmissibleHorizon(format!(
                "T = {} must lie in (0, min(π/2, L)²] = (0, {tmax:.6}]",
                self.horizon
            )));
        }
        if self.n_s < 5 || self.n_s % 2 == 0 {
            return Err(Error::Config(format!("n_s = {} must be odd and at least 5", self.n_s)));
        }
        if self.n_t < 4 {
            return Err(Error::Config(format!("n_t = {} must be at least 4", self.n_t)));
        }
        if !(0.0..=0.75).contains(&self.activation) {
            return Err(Error::Config(format!(
                "activation = {} must lie in [0, 0.75]",
                self.activation
            )));
        }
        let ds = self.ds();
        if ds > self.horizon.sqrt() / 4.0 {
            return Err(Error::GridTooCoarse(format!(
                "Δs = {ds:.4} exceeds √T/4 = {:.4}; use n_s ≥ {}",
                self.horizon.sqrt() / 4.0,
                (8.0 * self.half_length / self.horizon.sqrt()).ceil() as usize + 1
            )));
        }
        Ok(())
    }
}

/// The controlled fundamental solution on its grids.
#[derive(Debug, Clone)]
pub struct TransmutationKernel {
    pub spec: KernelSpec,
    pub ds: f64,
    pub dt: f64,
    /// `s` nodes from `−L` to `L`.
    pub s: Vec<f64>,
    /// `t` nodes from 0 to `T`.
    pub times: Vec<f64>,
    /// Row-major `(n_t + 1) × n_s` samples `k(t_i, s_m)`.
    pub values: Vec<f64>,
    /// Boundary trace `v(t_i) = k(t_i, ±L)`.
    pub control: Vec<f64>,
    /// `‖k‖²_{L²((0,T)×(−L,L))}`.
    pub norm_sq: f64,
    /// `‖k(T)‖ / ‖k(0)‖` in the discrete `L²(−L, L)` norm.
    pub terminal_ratio: f64,
    pub penalty: f64,
    mu: Vec<f64>,
    beta: Vec<f64>,
    kappa0: Vec<f64>,
    /// `node_modal[i][n]` = odd-mode amplitude at `t_i`.
    node_modal: Vec<Vec<f64>>,
    /// `shapes[n][m']` = sine mode `n` at interior node `m'`.
    shapes: Vec<Vec<f64>>,
}

/// Contribution `∫_a^{a+h} e^{−μ(a+h−τ)} f(τ) dτ` of a linear segment.
fn segment(mu: f64, h: f64, f0: f64, f1: f64) -> f64 {
    let (p1, p2) = heat_phis(mu * h);
    h * (f0 * p2 + f1 * (p1 - p2))
}

/// Builds the kernel by penalized HUM with `η_k = 10^{−2k}`.
pub fn build_kernel(spec: KernelSpec) -> Result<TransmutationKernel> {
    use std::f64::consts::PI;
    spec.validate()?;
    let t_end = spec.horizon;
    let ds = spec.ds();
    let n_i = spec.n_s - 2;
    let n_odd = n_i.div_ceil(2);
    let norm = (2.0 / (n_i + 1) as f64).sqrt();
    let center = (n_i + 1) / 2;
    let mut mu = Vec::with_capacity(n_odd);
    let mut beta = Vec::with_capacity(n_odd);
    let mut kappa0 = Vec::with_capacity(n_odd);
    let mut shapes = Vec::with_capacity(n_odd);
    for q in 0..n_odd {
        let n = 2 * q + 1;
        let arg = n as f64 * PI / (n_i + 1) as f64;
        let shape: Vec<f64> = (1..=n_i).map(|m| norm * (arg * m as f64).sin()).collect();
        mu.push(4.0 / (ds * ds) * (0.5 * arg).sin().powi(2));
        beta.push((shape[0] + shape[n_i - 1]) / (ds * ds));
        kappa0.push(shape[center - 1] / ds);
        shapes.push(shape);
    }

    let n_t = spec.n_t;
    let dt = t_end / n_t as f64;
    let times: Vec<f64> = (0..=n_t).map(|i| dt * i as f64).collect();
    // unknowns v_first … v_{n_t−1}; hat functions on the uniform grid
    let first = (spec.activation * n_t as f64).round() as usize + 1;
    let nv = n_t - first;
    let mut g = Mat::<f64>::zeros(n_odd, nv);
    for q in 0..n_odd {
        let rising = segment(mu[q], dt, 0.0, 1.0);
        let falling = segment(mu[q], dt, 1.0, 0.0);
        for c in 0..nv {
            let i = first + c;
            // the hat at t_i rises on [t_{i−1}, t_i] and falls on [t_i, t_{i+1}]
            let decay_r = (-mu[q] * (t_end - times[i])).exp();
            let decay_f = (-mu[q] * (t_end - times[i + 1])).exp();
            g[(q, c)] = beta[q] * (rising * decay_r + falling * decay_f);
        }
    }
    // W = 2 M_t (two boundaries), tridiagonal P1 mass matrix
    let w = Mat::from_fn(nv, nv, |r, c| {
        if r == c {
            2.0 * 2.0 * dt / 3.0
        } else if r.abs_diff(c) == 1 {
            2.0 * dt / 6.0
        } else {
            0.0
        }
    });
    // whiten with W^{-1/2} and work with singular values of G W^{-1/2}, so the
    // Gramian G W⁻¹ Gᵀ = U Σ² Uᵀ is never formed
    let (wvals, wvecs) = linalg::sym_eigen(&w)?;
    let w_isqrt = Mat::from_fn(nv, nv, |r, c| {
        (0..nv).map(|k| wvecs[(r, k)] * wvecs[(c, k)] / wvals[k].sqrt()).sum()
    });
    let svd = (&g * &w_isqrt).thin_svd();
    let (u, sig, vt) = (svd.u(), svd.s_diagonal(), svd.v());
    let rank = sig.nrows();
    let free_t: Vec<f64> = (0..n_odd).map(|q| (-mu[q] * t_end).exp() * kappa0[q]).collect();
    let proj: Vec<f64> = (0..rank)
        .map(|c| (0..n_odd).map(|r| u[(r, c)] * free_t[r]).sum())
        .collect();
    let initial_norm = (1.0 / ds).sqrt();

    let mut best = f64::INFINITY;
    for k in 0..=16 {
        let eta = 10f64.powi(-2 * k);
        let mut white = vec![0.0; nv];
        for c in 0..rank {
            let coef = -proj[c] * sig[c] / (sig[c] * sig[c] + eta);
            for (r, x) in white.iter_mut().enumerate() {
                *x += vt[(r, c)] * coef;
            }
        }
        let mut v_inner = vec![0.0; nv];
        linalg::mat_vec(&w_isqrt, &white, &mut v_inner);
        let mut control = vec![0.0; n_t + 1];
        control[first..n_t].copy_from_slice(&v_inner);
        let mut kernel = assemble(spec, ds, dt, &times, control, &mu, &beta, &kappa0, &shapes, eta);
        kernel.terminal_ratio = kernel.terminal_norm() / initial_norm;
        best = best.min(kernel.terminal_ratio);
        if kernel.terminal_ratio <= spec.tol {
            kernel.norm_sq = kernel.compute_norm_sq();
            return Ok(kernel);
        }
    }
    Err(Error::ToleranceNotMet {
        achieved: best,
        requested: spec.tol,
    })
}

#[allow(clippy::too_many_arguments)]
fn assemble(
    spec: KernelSpec,
    ds: f64,
    dt: f64,
    times: &[f64],
    control: Vec<f64>,
    mu: &[f64],
    beta: &[f64],
    kappa0: &[f64],
    shapes: &[Vec<f64>],
    penalty: f64,
) -> TransmutationKernel {
    let n_odd = mu.len();
    let n_t = spec.n_t;
    let mut node_modal = Vec::with_capacity(n_t + 1);
    node_modal.push(kappa0.to_vec());
    for i in 1..=n_t {
        let prev = &node_modal[i - 1];
        let next: Vec<f64> = (0..n_odd)
            .map(|q| {
                (-mu[q] * dt).exp() * prev[q] + beta[q] * segment(mu[q], dt, control[i - 1], control[i])
            })
            .collect();
        node_modal.push(next);
    }
    let l = spec.half_length;
    let s: Vec<f64> = (0..spec.n_s).map(|m| -l + ds * m as f64).collect();
    let mut kernel = TransmutationKernel {
        spec,
        ds,
        dt,
        s,
        times: times.to_vec(),
        values: Vec::new(),
        control,
        norm_sq: f64::NAN,
        terminal_ratio: f64::NAN,
        penalty,
        mu: mu.to_vec(),
        beta: beta.to_vec(),
        kappa0: kappa0.to_vec(),
        node_modal,
        shapes: shapes.to_vec(),
    };
    let mut values = Vec::with_capacity((n_t + 1) * spec.n_s);
    for i in 0..=n_t {
        values.extend(kernel.synthesize(&kernel.node_modal[i], kernel.control[i]));
    }
    // the delta is placed exactly rather than through the sine sum
    let c = spec.n_s / 2;
    values[..spec.n_s].iter_mut().for_each(|v| *v = 0.0);
    values[c] = 1.0 / ds;
    kernel.values = values;
    kernel
}

impl TransmutationKernel {
    pub fn n_s(&self) -> usize {
        self.spec.n_s
    }

    pub fn n_odd(&self) -> usize {
        self.mu.len()
    }

    /// Interior sine-mode shapes (odd modes only), each of length `n_s − 2`.
    pub fn shapes(&self) -> &[Vec<f64>] {
        &self.shapes
    }

    /// Eigenvalues of `−∂²_s` for the carried odd modes.
    pub fn mode_eigenvalues(&self) -> &[f64] {
        &self.mu
    }

    fn synthesize(&self, kappa: &[f64], boundary: f64) -> Vec<f64> {
        let n_s = self.spec.n_s;
        let mut row = vec![0.0; n_s];
        row[0] = boundary;
        row[n_s - 1] = boundary;
        for (q, shape) in self.shapes.iter().enumerate() {
            for (m, &sv) in shape.iter().enumerate() {
                row[m + 1] += kappa[q] * sv;
            }
        }
        row
    }

    fn control_at(&self, t: f64) -> f64 {
        if !(0.0..=self.spec.horizon).contains(&t) {
            return 0.0;
        }
        let i = ((t / self.dt).floor() as usize).min(self.spec.n_t - 1);
        let theta = (t - self.times[i]) / self.dt;
        self.control[i] + theta * (self.control[i + 1] - self.control[i])
    }

    /// Exact odd-mode amplitudes at time `t ∈ [0, T]`.
    pub fn modal_at(&self, t: f64) -> Vec<f64> {
        if !(0.0..=self.spec.horizon).contains(&t) {
            return vec![0.0; self.n_odd()];
        }
        let i = ((t / self.dt).floor() as usize).min(self.spec.n_t - 1);
        let tau = t - self.times[i];
        let vt = self.control_at(t);
        (0..self.n_odd())
            .map(|q| {
                (-self.mu[q] * tau).exp() * self.node_modal[i][q]
                    + self.beta[q] * segment(self.mu[q], tau, self.control[i], vt)
            })
            .collect()
    }

    /// Exact `k(t, ·)` on the `s` grid; zero outside `[0, T]`, the grid delta at `t = 0`.
    pub fn eval(&self, t: f64) -> Vec<f64> {
        if t == 0.0 {
            return self.values[..self.spec.n_s].to_vec();
        }
        if !(0.0..=self.spec.horizon).contains(&t) {
            return vec![0.0; self.spec.n_s];
        }
        self.synthesize(&self.modal_at(t), self.control_at(t))
    }

    /// `k(t, ·)` by linear interpolation between stored rows, zero outside `[0, T]`.
    pub fn row(&self, t: f64) -> Vec<f64> {
        let n_s = self.spec.n_s;
        if !(0.0..=self.spec.horizon).contains(&t) {
            return vec![0.0; n_s];
        }
        let i = ((t / self.dt).floor() as usize).min(self.spec.n_t - 1);
        let theta = (t - self.times[i]) / self.dt;
        let a = &self.values[i * n_s..(i + 1) * n_s];
        let b = &self.values[(i + 1) * n_s..(i + 2) * n_s];
        a.iter().zip(b).map(|(x, y)| x + theta * (y - x)).collect()
    }

    /// Stored row at node `i`.
    pub fn node_row(&self, i: usize) -> &[f64] {
        let n_s = self.spec.n_s;
        &self.values[i * n_s..(i + 1) * n_s]
    }

    /// Trapezoid weights on the `s` grid.
    pub fn s_weights(&self) -> Vec<f64> {
        let mut w = vec![self.ds; self.spec.n_s];
        w[0] *= 0.5;
        *w.last_mut().unwrap() *= 0.5;
        w
    }

    /// Discrete `L²(−L, L)` norm of a row.
    pub fn row_norm(&self, row: &[f64]) -> f64 {
        row.iter()
            .zip(self.s_weights())
            .map(|(v, w)| w * v * v)
            .sum::<f64>()
            .sqrt()
    }

    /// `∫ k(t, s) ds` by the trapezoid rule.
    pub fn mass(&self, t: f64) -> f64 {
        self.eval(t).iter().zip(self.s_weights()).map(|(v, w)| v * w).sum()
    }

    pub fn terminal_norm(&self) -> f64 {
        self.row_norm(self.node_row(self.spec.n_t))
    }

    /// `∫₀ᵀ Σ_m w_m k(t, s_m)² dt`: the free part in closed form, the rest
    /// by composite Gauss–Legendre on the `t` grid.
    fn compute_norm_sq(&self) -> f64 {
        let ds = self.ds;
        let t_end = self.spec.horizon;
        let free: f64 = self
            .mu
            .iter()
            .zip(&self.kappa0)
            .map(|(m, k)| k * k * -(-2.0 * m * t_end).exp_m1() / (2.0 * m))
            .sum();
        let rule = CompositeRule::uniform(0.0, t_end, self.spec.n_t, &GaussLegendre::new(8));
        let rest = rule.integrate(|t| {
            let kap = self.modal_at(t);
            let v = self.control_at(t);
            let mut acc = v * v; // two boundary nodes of weight Δs/2 each, times 1/Δs
            for q in 0..self.n_odd() {
                let f = (-self.mu[q] * t).exp() * self.kappa0[q];
                acc += kap[q] * kap[q] - f * f;
            }
            acc
        });
        ds * (free + rest)
    }

    /// `K_{nn'} = ∫₀ᵀ κ_n κ_{n'} dt` over the odd modes: free part exact,
    /// controlled remainder by composite Gauss–Legendre on the `t` grid.
    pub fn modal_time_gram(&self) -> Mat<f64> {
        let n = self.n_odd();
        let t_end = self.spec.horizon;
        let mut k = Mat::from_fn(n, n, |a, b| {
            let rate = self.mu[a] + self.mu[b];
            self.kappa0[a] * self.kappa0[b] * -(-rate * t_end).exp_m1() / rate
        });
        let rule = CompositeRule::uniform(0.0, t_end, self.spec.n_t, &GaussLegendre::new(8));
        for (&t, &w) in rule.points.iter().zip(&rule.weights) {
            if t < self.first_active_time() {
                continue;
            }
            let kap = self.modal_at(t);
            let free: Vec<f64> = (0..n).map(|q| (-self.mu[q] * t).exp() * self.kappa0[q]).collect();
            for a in 0..n {
                for b in 0..n {
                    k[(a, b)] += w * (kap[a] * kap[b] - free[a] * free[b]);
                }
            }
        }
        k
    }

    /// Start of the panel in which the boundary value first becomes nonzero.
    fn first_active_time(&self) -> f64 {
        match self.control.iter().position(|v| *v != 0.0) {
            Some(i) => self.times[i.saturating_sub(1)],
            None => self.spec.horizon,
        }
    }

    /// Largest centered-difference heat residual `|k_t − D²_s k|` over the
    /// stored layers `2 … n_t − 2` and nodes at least `margin` nodes from the
    /// ends, relative to `max |D²_s k|` over the same set.
    ///
    /// The boundary value has a kink at every `t` node, so the two nodes next
    /// to `±L` only see first-order differences; `margin = 2` excludes them.
    pub fn heat_residual(&self, margin: usize) -> f64 {
        let n_s = self.spec.n_s;
        let (ds, dt) = (self.ds, self.dt);
        let (mut worst, mut scale) = (0.0_f64, 0.0_f64);
        for i in 2..self.spec.n_t - 1 {
            let (prev, cur, next) = (self.node_row(i - 1), self.node_row(i), self.node_row(i + 1));
            for m in margin.max(1)..n_s - margin.max(1) {
                let lap = (cur[m + 1] - 2.0 * cur[m] + cur[m - 1]) / (ds * ds);
                let kt = (next[m] - prev[m]) / (2.0 * dt);
                worst = worst.max((kt - lap).abs());
                scale = scale.max(lap.abs());
            }
        }
        worst / scale.max(1e-300)
    }

    /// `max_{i,m} |k(t_i, s_m) − k(t_i, −s_m)|` relative to the row maximum.
    pub fn evenness_defect(&self) -> f64 {
        let n_s = self.spec.n_s;
        let mut worst = 0.0_f64;
        for i in 0..=self.spec.n_t {
            let row = self.node_row(i);
            let scale = linalg::max_abs(row).max(1e-300);
            for m in 0..n_s / 2 {
                worst = worst.max((row[m] - row[n_s - 1 - m]).abs() / scale);
            }
        }
        worst
    }
}

/// `(4πt)^{−1/2} e^{−s²/4t}`.
pub fn gaussian(t: f64, s: f64) -> f64 {
    (4.0 * std::f64::consts::PI * t).powf(-0.5) * (-s * s / (4.0 * t)).exp()
}

/// Relative discrete `L²` distance between `k(t, ·)` and the free Gaussian.
pub fn gaussian_mismatch(kernel: &TransmutationKernel, t: f64) -> f64 {
    let row = kernel.eval(t);
    let exact: Vec<f64> = kernel.s.iter().map(|&s| gaussian(t, s)).collect();
    let diff: Vec<f64> = row.iter().zip(&exact).map(|(a, b)| a - b).collect();
    kernel.row_norm(&diff) / kernel.row_norm(&exact)
}

/// Fit of `log ‖k‖² ≈ a + b L²/T` over several horizons.
#[derive(Debug, Clone, Serialize)]
pub struct KernelScaling {
    pub half_length: f64,
    pub horizons: Vec<f64>,
    pub norms_sq: Vec<f64>,
    pub fit: LinearFit,
}

/// Builds one kernel per horizon (in parallel) and fits the norm growth.
pub fn kernel_norm_scaling(
    half_length: f64,
    horizons: &[f64],
    spec_for: impl Fn(f64) -> KernelSpec + Sync,
) -> Result<KernelScaling> {
    use rayon::prelude::*;
    if horizons.len() < 4 {
        return Err(Error::TooFewPoints {
            needed: 4,
            got: horizons.len(),
        });
    }
    let norms_sq = horizons
        .par_iter()
        .map(|&t| build_kernel(spec_for(t)).map(|k| k.norm_sq))
        .collect::<Result<Vec<_>>>()?;
    let norms_fit = norm_scaling_fit(half_length, horizons, &norms_sq)?;
    Ok(KernelScaling {
        half_length,
        horizons: horizons.to_vec(),
        norms_sq,
        fit: norms_fit,
    })
}

/// The regression of [`kernel_norm_scaling`] on given data.
pub fn norm_scaling_fit(half_length: f64, horizons: &[f64], norms_sq: &[f64]) -> Result<LinearFit> {
    let x: Vec<f64> = horizons.iter().map(|t| half_length * half_length / t).collect();
    let y: Vec<f64> = norms_sq.iter().map(|n| n.ln()).collect();
    linear_fit(&x, &y, 4)
}
