//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.
//!
//! Desk-scale setting throughout: unit square, collar 0.15, 32² grid.

use std::f64::consts::PI;
use std::time::Instant;

use faer::prelude::SpSolver;
use faer::Mat;
use stokes_ctm::domain::{ControlMask, DomainSpec, MaskKind, VelocityField};
use stokes_ctm::evolve::{self, mac_step_reference, PiecewiseLinear, ReferenceState, WaveState};
use stokes_ctm::expcli;
use stokes_ctm::hum::{self, ObservedSystem};
use stokes_ctm::kernel::{self, KernelSpec};
use stokes_ctm::linalg;
use stokes_ctm::observability as obs;
use stokes_ctm::sampling;
use stokes_ctm::stokesop::{StokesModes, StokesOperator};
use stokes_ctm::transmute::{self, TransmuteConfig};

mod common;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

struct Setting {
    op: StokesOperator,
    modes: StokesModes,
    mask: ControlMask,
}

fn setting() -> Setting {
    let d = DomainSpec::unit_square(0.15, 32).unwrap();
    let op = StokesOperator::new(&d);
    let modes = op.eig_modes(200).unwrap();
    let mask = d.control_mask(MaskKind::Sharp);
    Setting { op, modes, mask }
}

fn criterion_1(s: &Setting, start: Instant) -> Outcome {
    let d = s.modes.domain();
    let norms = d.norms();
    let mut rng = sampling::rng(1);
    let raw = VelocityField {
        values: sampling::normal_vec(&mut rng, d.ndof()),
    };
    let p1 = s.op.leray_project(&raw).unwrap();
    let idem = s.op.leray_project(&p1).unwrap().sub(&p1).max_abs() / p1.max_abs();

    let g = hum::assemble_wave_gramian(&s.modes, &s.mask, 2.0, 40).unwrap();
    let gmax = g.matrix.norm_max();
    let sym = linalg::symmetry_defect(&g.matrix) / gmax;

    // divergence of a forced modal trajectory, synthesized on the grid
    let c0 = sampling::normal_vec(&mut rng, 200);
    let f = PiecewiseLinear::from_fn(0.5, 20, 200, |t, out| {
        for (j, o) in out.iter_mut().enumerate() {
            *o = (1.0 + j as f64 * t).sin();
        }
    });
    let y = evolve::stokes_evolve(&s.modes.eigenvalues, &c0, &f, 0.5).unwrap();
    let field = s.modes.synthesize(&y.coeffs);
    let div = linalg::max_abs(&s.op.divergence(&field).unwrap().values) * d.dx / field.max_abs();

    let mut ortho = 0.0_f64;
    let fields: Vec<VelocityField> = (0..200).map(|j| s.modes.mode(j)).collect();
    for i in 0..200 {
        for j in 0..=i {
            let target = if i == j { 1.0 } else { 0.0 };
            ortho = ortho.max((norms.h_inner(&fields[i], &fields[j]).unwrap() - target).abs());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        idem <= 1e-10 && sym <= 1e-12 && div <= 1e-10 && ortho <= 1e-10 && secs < 300.0,
        format!(
            "P∘P − P {idem:.1e} (≤1e-10), Gramian asym {sym:.1e} (≤1e-12), div·h/|y| {div:.1e} (≤1e-10), \
             |⟨e_i,e_j⟩ − δ_ij| {ortho:.1e} (≤1e-10), 200 modes, {secs:.1}s (<300s)"
        ),
    )
}

fn criterion_2(s: &Setting) -> Outcome {
    let m = 40;
    let lam = &s.modes.eigenvalues[..m];
    let horizon = 2.5;
    let mut rng = sampling::rng(2);
    let nodes = 50;
    let times: Vec<f64> = (0..=nodes).map(|k| horizon * k as f64 / nodes as f64).collect();
    let values: Vec<Vec<f64>> = times.iter().map(|_| sampling::normal_vec(&mut rng, m)).collect();
    let f = PiecewiseLinear::new(times.clone(), values).unwrap();
    let s0 = WaveState {
        t: 0.0,
        u: sampling::normal_vec(&mut rng, m).iter().zip(lam).map(|(c, l)| c / l.sqrt()).collect(),
        ut: sampling::normal_vec(&mut rng, m),
    };
    let end = evolve::wave_evolve(lam, &s0, &f, horizon).unwrap();
    // work ∫(h, u_t) by Gauss–Legendre on panels aligned with the forcing kinks
    // and much shorter than the fastest period
    let wmax = lam[m - 1].sqrt();
    let per_node = ((horizon / nodes as f64) * wmax * 4.0).ceil() as usize;
    let panels = nodes * per_node;
    let work = common::gauss_legendre(0.0, horizon, panels, |t| {
        let mut h = vec![0.0; m];
        evolve::ModalForcing::sample(&f, t, &mut h);
        let u = evolve::wave_evolve(lam, &s0, &f, t).unwrap();
        linalg::dot(&h, &u.ut)
    });
    let e0 = s0.energy(lam);
    let residual = (0.5 * end.energy(lam) - 0.5 * e0 - work).abs() / e0;
    outcome(
        residual <= 1e-8,
        format!("|E(T)/2 − E(0)/2 − ∫(h,u_t)| / E(0) = {residual:.2e} (≤1e-8), T = 2.5, M = 40"),
    )
}

/// Largest cost/(‖u0‖²_V + |u1|²_H) over the 20 seeded samples, measured once
/// on this setting (seed 42) and frozen.
const FROZEN_WAVE_COST_RATIO: f64 = 3.4573;

fn criterion_3(s: &Setting) -> Outcome {
    let m_f = 40;
    let g = hum::assemble_wave_gramian(&s.modes, &s.mask, 2.0, m_f).unwrap();
    let weights: Vec<f64> = s.modes.eigenvalues[..m_f].iter().cloned().chain((0..m_f).map(|_| 1.0)).collect();
    let mut rng = sampling::rng(42);
    let mut worst_terminal = 0.0_f64;
    let mut max_ratio = 0.0_f64;
    for _ in 0..20 {
        let x = sampling::normalized_coefficients(&mut rng, &weights);
        let c = hum::wave_null_control_with(&g, &x[..m_f], &x[m_f..], 1e-8).unwrap();
        worst_terminal = worst_terminal.max(c.terminal_norm / c.initial_norm);
        max_ratio = max_ratio.max(c.cost / c.initial_norm.powi(2));
    }
    let (lo, _) = g.extreme_eigenvalues();
    let drift = (max_ratio / FROZEN_WAVE_COST_RATIO - 1.0).abs();
    outcome(
        worst_terminal <= 1e-4 && drift <= 0.1 && max_ratio <= 1.0 / lo,
        format!(
            "T = 2, M_f = 40: worst terminal ratio {worst_terminal:.1e} (≤1e-4), max cost ratio {max_ratio:.4} \
             vs frozen {FROZEN_WAVE_COST_RATIO} (drift {:.1}% ≤ 10%), HUM sup 1/λ_min = {:.4}",
            100.0 * drift,
            1.0 / lo
        ),
    )
}

fn criterion_4(s: &Setting) -> Outcome {
    let r = obs::boundary_observability_check(&s.modes, 2.0, 40, 100, 4, 0.15).unwrap();
    let r0 = std::f64::consts::FRAC_1_SQRT_2;
    let constant = r0 / (2.0 * (2.0 - 2.0 * r0));
    outcome(
        r.violations == 0 && (r.multiplier_constant - constant).abs() < 1e-12,
        format!(
            "T = 2, 100 samples: max E(0)/flux {:.4} ≤ {:.4}·1.15 = {:.4}, {} violations",
            r.max_ratio,
            constant,
            constant * 1.15,
            r.violations
        ),
    )
}

fn criterion_5() -> Outcome {
    let l = 2.5;
    let k = kernel::build_kernel(KernelSpec::recommended(l, 0.5)).unwrap();
    let row0 = k.eval(0.0);
    let centre = k.n_s() / 2;
    let delta_ok = row0
        .iter()
        .enumerate()
        .all(|(i, v)| *v == if i == centre { 1.0 / k.ds } else { 0.0 });
    // early-time match against the free-space heat kernel
    let t = 0.05;
    let row = k.eval(t);
    let (mut num, mut den) = (0.0, 0.0);
    for (s, v) in k.s.iter().zip(&row) {
        let g = (-s * s / (4.0 * t)).exp() / (4.0 * PI * t).sqrt();
        num += (v - g).powi(2);
        den += g * g;
    }
    let mismatch = (num / den).sqrt();
    let horizons = [0.2, 0.3, 0.5, 0.8, 1.2];
    let norms: Vec<f64> = horizons
        .iter()
        .map(|&t| kernel::build_kernel(KernelSpec::recommended(l, t)).unwrap().norm_sq)
        .collect();
    let x: Vec<f64> = horizons.iter().map(|t| l * l / t).collect();
    let y: Vec<f64> = norms.iter().map(|n| n.ln()).collect();
    let (slope, r2) = common::least_squares(&x, &y);
    outcome(
        delta_ok && k.terminal_ratio <= 1e-6 && mismatch <= 0.02 && r2 >= 0.95 && slope > 0.0,
        format!(
            "k(0) = grid delta: {delta_ok}; ‖k(T)‖/‖k(0)‖ {:.1e} (≤1e-6); Gaussian mismatch at t = {t} {:.2}% (≤2%); \
             log‖k‖² vs L²/T slope {slope:.4}, R² {r2:.5} (≥0.95), L = 2.5, T = 0.5",
            k.terminal_ratio,
            100.0 * mismatch
        ),
    )
}

fn criterion_6(s: &Setting) -> Outcome {
    let system = ObservedSystem::from_modes(&s.modes, &s.mask, 40).unwrap();
    let y0 = common::unit_datum(6, 40);
    let mut pass = true;
    let mut parts = Vec::new();
    for t in [0.3, 0.5, 0.8] {
        let sol = transmute::transmute(&system, &y0, &TransmuteConfig::new(2.5, t)).unwrap();
        let (order, _, _) = transmute::residual_order(&sol).unwrap();
        let ratio = sol.terminal_norm / sol.initial_norm;
        pass &= ratio <= 1e-4 && order >= 1.9;
        parts.push(format!("T = {t}: |y(T)|/|y0| {ratio:.1e}, order {order:.3}"));
    }
    outcome(pass, format!("{} (≤1e-4, ≥1.9), L = 2.5", parts.join("; ")))
}

fn criterion_7(s: &Setting) -> Outcome {
    let start = Instant::now();
    let system = ObservedSystem::from_modes(&s.modes, &s.mask, 40).unwrap();
    let y0 = common::unit_datum(7, 40);
    let horizons = [0.2, 0.3, 0.4, 0.5, 0.7, 1.0];
    let costs: Vec<f64> = horizons
        .iter()
        .map(|&t| transmute::transmute(&system, &y0, &TransmuteConfig::new(2.5, t)).unwrap().cost)
        .collect();
    let fit = expcli::fit_cost_models(&horizons, &costs).unwrap();
    // independent refit of the two models
    let y: Vec<f64> = costs.iter().map(|c| c.ln()).collect();
    let x1: Vec<f64> = horizons.iter().map(|t| 1.0 / t).collect();
    let x4: Vec<f64> = horizons.iter().map(|t| t.powi(-4)).collect();
    let (_, r2_1) = common::least_squares(&x1, &y);
    let ssr1 = common::residual_sum(&x1, &y);
    let ssr4 = common::residual_sum(&x4, &y);
    let agree = (r2_1 - fit.inverse_t.r2).abs() < 1e-9 && (ssr1 - fit.inverse_t.ssr).abs() < 1e-9 * ssr1.max(1.0);
    let secs = start.elapsed().as_secs_f64();
    outcome(
        r2_1 >= 0.9 && ssr1 < ssr4 && agree && secs < 1800.0,
        format!(
            "log cost = {:.3} + {:.3}/T, R² {r2_1:.5} (≥0.9); SSR 1/T {ssr1:.3e} < 1/T⁴ {ssr4:.3e}; {secs:.1}s (<1800s)",
            fit.inverse_t.intercept, fit.inverse_t.slope
        ),
    )
}

fn criterion_8(s: &Setting) -> Outcome {
    let system = ObservedSystem::from_modes(&s.modes, &s.mask, 40).unwrap();
    let lam = &system.lambdas;
    let config = TransmuteConfig::new(2.5, 0.5);
    let mut rng = sampling::rng(8);
    let mut violations = 0;
    let mut worst = 0.0_f64;
    for _ in 0..10 {
        let y0 = sampling::normalized_coefficients(&mut rng, &vec![1.0; 40]);
        for eps in [0.05, 0.1, 0.2] {
            let sol = transmute::regularize_then_control(&system, &y0, eps, &config).unwrap();
            // ‖y(ε)‖²_V by free modal decay, against ε e^{2/ε}|y0|²
            let v_sq: f64 = y0.iter().zip(lam).map(|(c, l)| l * (c * (-l * eps).exp()).powi(2)).sum();
            let bound = eps * (2.0 / eps).exp();
            let reported = sol.regularization.as_ref().is_some_and(|r| r.smoothing_holds && (r.v_norm_sq - v_sq).abs() <= 1e-12 * v_sq);
            violations += usize::from(v_sq > bound || !reported);
            worst = worst.max(sol.terminal_norm / sol.initial_norm);
        }
    }
    outcome(
        violations == 0 && worst <= 1e-4,
        format!("30 runs (10 data × ε ∈ {{0.05, 0.1, 0.2}}), T = 0.5: {violations} smoothing violations, worst |y(T)|/|y0| {worst:.1e} (≤1e-4)"),
    )
}

fn criterion_9() -> Outcome {
    let grids = [24usize, 32, 48];
    let res: Vec<[f64; 4]> = grids.iter().map(|&n| expcli::identity_residuals(n).unwrap()).collect();
    let log_h: Vec<f64> = grids.iter().map(|&n| (1.0 / n as f64).ln()).collect();
    let order = |k: usize| common::least_squares(&log_h, &res.iter().map(|r| r[k].ln()).collect::<Vec<_>>()).0;
    let (om, op) = (order(0), order(2));
    outcome(
        om >= 0.9 && op >= 0.9,
        format!(
            "multiplier identity order {om:.3}, pressure identity order {op:.3} (≥0.9) over 24², 32², 48²; \
             finest residuals {:.1e}, {:.1e}",
            res[2][0], res[2][2]
        ),
    )
}

fn criterion_10() -> Outcome {
    // Leray projection against the dense saddle-point solve
    let d = DomainSpec::unit_square(0.3, 16).unwrap();
    let op = StokesOperator::new(&d);
    let mut rng = sampling::rng(10);
    let raw = VelocityField {
        values: sampling::normal_vec(&mut rng, d.ndof()),
    };
    let kkt = common::leray_by_kkt(&op, &raw);
    let leray = op.leray_project(&raw).unwrap().sub(&kkt).max_abs() / raw.max_abs();

    // CG against a dense LU solve of the scaled Gramian
    let d32 = DomainSpec::unit_square(0.15, 24).unwrap();
    let modes = StokesOperator::new(&d32).eig_modes(60).unwrap();
    let g = hum::assemble_wave_gramian(&modes, &d32.control_mask(MaskKind::Sharp), 2.0, 60).unwrap();
    let a = g.scaled();
    let b = sampling::normal_vec(&mut rng, 120);
    let cg = hum::cg_solve(&a, &b, 1e-14).unwrap();
    let dense = a.partial_piv_lu().solve(&Mat::from_fn(120, 1, |r, _| b[r]));
    let diff = (0..120).map(|r| (cg.coeffs[r] - dense[(r, 0)]).abs()).fold(0.0, f64::max)
        / (0..120).map(|r| dense[(r, 0)].abs()).fold(0.0, f64::max);

    // modal evolution against the implicit MAC steppers
    let d10 = DomainSpec::unit_square(0.3, 10).unwrap();
    let op10 = StokesOperator::new(&d10);
    let m10 = op10.eig_modes(d10.n_stream()).unwrap();
    let n = d10.norms();
    let c = sampling::normal_vec(&mut rng, m10.count());
    let y0 = m10.synthesize(&c);
    let t = 0.05;
    let exact = m10.synthesize(&evolve::stokes_evolve(&m10.eigenvalues, &c, &evolve::NoForcing, t).unwrap().coeffs);
    let euler: Vec<f64> = [10, 20, 40]
        .iter()
        .map(|&steps| {
            let mut s = ReferenceState::Parabolic(y0.clone());
            for _ in 0..steps {
                s = mac_step_reference(&op10, &s, t / steps as f64).unwrap();
            }
            let ReferenceState::Parabolic(y) = s else { unreachable!() };
            n.h_norm(&y.sub(&exact)).unwrap()
        })
        .collect();
    let lam = &m10.eigenvalues;
    let cu: Vec<f64> = c.iter().zip(lam).map(|(c, l)| c / l).collect();
    let cv: Vec<f64> = sampling::normal_vec(&mut rng, m10.count()).iter().zip(lam).map(|(c, l)| c / l.sqrt()).collect();
    let tw = 0.2;
    let wexact = evolve::adjoint_wave_evolve(lam, &cu, &cv, tw).unwrap().displacement(&m10);
    let midpoint: Vec<f64> = [20, 40, 80]
        .iter()
        .map(|&steps| {
            let mut s = ReferenceState::Hyperbolic {
                u: m10.synthesize(&cu),
                ut: m10.synthesize(&cv),
            };
            for _ in 0..steps {
                s = mac_step_reference(&op10, &s, tw / steps as f64).unwrap();
            }
            let ReferenceState::Hyperbolic { u, .. } = s else { unreachable!() };
            n.h_norm(&u.sub(&wexact)).unwrap()
        })
        .collect();
    let p1 = (euler[1] / euler[2]).log2();
    let p2 = (midpoint[1] / midpoint[2]).log2();
    outcome(
        leray <= 1e-8 && diff <= 1e-8 && (p1 - 1.0).abs() < 0.15 && (p2 - 2.0).abs() < 0.15,
        format!(
            "Leray vs KKT {leray:.1e} (≤1e-8, 16²); CG vs dense LU {diff:.1e} (≤1e-8, M_f = 60); \
             implicit Euler order {p1:.3} (1), midpoint order {p2:.3} (2)"
        ),
    )
}

fn main() {
    let start = Instant::now();
    let s = setting();
    let checks: Vec<(usize, Box<dyn Fn() -> Outcome + '_>)> = vec![
        (1, Box::new(|| criterion_1(&s, start))),
        (2, Box::new(|| criterion_2(&s))),
        (3, Box::new(|| criterion_3(&s))),
        (4, Box::new(|| criterion_4(&s))),
        (5, Box::new(criterion_5)),
        (6, Box::new(|| criterion_6(&s))),
        (7, Box::new(|| criterion_7(&s))),
        (8, Box::new(|| criterion_8(&s))),
        (9, Box::new(criterion_9)),
        (10, Box::new(criterion_10)),
    ];
    let mut failed = 0;
    for (k, check) in checks {
        let o = check();
        failed += usize::from(!o.pass);
        println!("criterion {k:>2}: {} {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    println!("acceptance: {} of 10 passed in {:.1}s", 10 - failed, start.elapsed().as_secs_f64());
    if failed > 0 {
        std::process::exit(1);
    }
}
