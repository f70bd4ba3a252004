//! Grid-convergence and cross-method checks against independent references.

use std::f64::consts::PI;

use stokes_ctm::domain::{DomainSpec, MaskKind};
use stokes_ctm::kernel::{self, KernelSpec};
use stokes_ctm::observability as obs;
use stokes_ctm::sampling;
use stokes_ctm::stokesop::StokesOperator;

mod common;

#[test]
fn lowest_eigenvalue_is_grid_converged() {
    let coarse = StokesOperator::new(&DomainSpec::unit_square(0.15, 32).unwrap())
        .eig_modes(1)
        .unwrap()
        .eigenvalues[0];
    let fine = StokesOperator::new(&DomainSpec::unit_square(0.15, 64).unwrap())
        .lowest_eigenvalue(1e-10)
        .unwrap();
    // the continuum value for the unit square is about 52.34
    assert!((coarse / fine - 1.0).abs() < 0.02, "{coarse} vs {fine}");
    assert!((fine / 52.3447 - 1.0).abs() < 0.01, "{fine}");
    // Dirichlet scalar Laplacian gives a strict lower bound 2π²
    assert!(coarse > 2.0 * PI * PI);
}

#[test]
fn kernel_scaling_slope_stable_under_s_refinement() {
    let l = 2.5;
    let horizons = [0.3, 0.4, 0.5, 0.7, 1.0];
    let slope = |refine: usize| {
        let scaling = kernel::kernel_norm_scaling(l, &horizons, |t| {
            let mut spec = KernelSpec::recommended(l, t);
            spec.n_s = refine * (spec.n_s - 1) + 1;
            spec
        })
        .unwrap();
        let x: Vec<f64> = horizons.iter().map(|t| l * l / t).collect();
        let y: Vec<f64> = scaling.norms_sq.iter().map(|n| n.ln()).collect();
        let (b, _) = common::least_squares(&x, &y);
        assert!((b - scaling.fit.slope).abs() < 1e-9 * b.abs());
        b
    };
    let (b1, b2) = (slope(1), slope(2));
    assert!(b1 > 0.0 && ((b2 - b1) / b1).abs() <= 0.05, "{b1} vs {b2}");
}

#[test]
fn early_kernel_rows_track_the_heat_kernel() {
    // before the boundary control switches on at 0.2 T
    let horizon = 0.8;
    let k = kernel::build_kernel(KernelSpec::recommended(2.5, horizon)).unwrap();
    for t in [0.1 * horizon, 0.15 * horizon] {
        let row = k.eval(t);
        let (mut num, mut den) = (0.0, 0.0);
        for (s, v) in k.s.iter().zip(&row) {
            let g = (-s * s / (4.0 * t)).exp() / (4.0 * PI * t).sqrt();
            num += (v - g).powi(2);
            den += g * g;
        }
        assert!((num / den).sqrt() < 0.02, "t = {t}: {}", (num / den).sqrt());
    }
}

#[test]
fn lowest_mode_boundary_ratio_is_grid_stable() {
    let ratio = |n: usize| {
        let modes = StokesOperator::new(&DomainSpec::unit_square(0.15, n).unwrap())
            .eig_modes(1)
            .unwrap();
        obs::lowest_mode_observability_ratio(&modes, 2.0).unwrap()
    };
    let (a, b) = (ratio(24), ratio(32));
    assert!((a / b - 1.0).abs() < 0.02, "{a} vs {b}");
}

#[test]
fn direct_inequality_constant_is_grid_stable() {
    let m_f = 12;
    let mut rng = sampling::rng(31);
    let samples: Vec<Vec<f64>> = (0..20).map(|_| sampling::normal_vec(&mut rng, 2 * m_f)).collect();
    let constant = |n: usize| {
        let modes = StokesOperator::new(&DomainSpec::unit_square(0.15, n).unwrap())
            .eig_modes(m_f)
            .unwrap();
        obs::direct_inequality_ratio(&modes, 2.0, m_f, &samples).unwrap().subspace_constant
    };
    let (a, b) = (constant(24), constant(32));
    assert!((a / b - 1.0).abs() < 0.1, "{a} vs {b}");
}

#[test]
fn control_time_does_not_grow_with_collar() {
    let grid: Vec<f64> = (1..=20).map(|k| 0.05 * k as f64).collect();
    let time = |collar: f64| {
        let d = DomainSpec::unit_square(collar, 24).unwrap();
        let modes = StokesOperator::new(&d).eig_modes(15).unwrap();
        let mask = d.control_mask(MaskKind::Sharp);
        obs::empirical_control_time(&modes, &mask, 12, &grid, 1e-3)
            .unwrap()
            .control_time
            .unwrap_or(f64::INFINITY)
    };
    let times: Vec<f64> = [0.1, 0.15, 0.25].iter().map(|&c| time(c)).collect();
    assert!(times[0].is_finite() || times[1].is_finite() || times[2].is_finite(), "{times:?}");
    assert!(times.windows(2).all(|w| w[1] <= w[0]), "{times:?}");
}
