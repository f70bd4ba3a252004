//! Invariants checked on random inputs.

use proptest::prelude::*;
use stokes_ctm::domain::{DomainSpec, MaskKind, VelocityField};
use stokes_ctm::evolve::{self, NoForcing};
use stokes_ctm::expcli::{self, CostModel, Snapshot};
use stokes_ctm::stokesop::StokesOperator;

fn field(d: &DomainSpec, seed: u64) -> VelocityField {
    let mut rng = stokes_ctm::sampling::rng(seed);
    VelocityField {
        values: stokes_ctm::sampling::normal_vec(&mut rng, d.ndof()),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn mask_application_is_idempotent(n in 10usize..20, collar in 0.2f64..0.45, seed: u64) {
        let d = DomainSpec::unit_square(collar, n).unwrap();
        let mask = d.control_mask(MaskKind::Sharp);
        let once = mask.apply(&field(&d, seed));
        prop_assert_eq!(mask.apply(&once), once);
    }

    #[test]
    fn leray_projection_is_idempotent_and_linear(n in 10usize..16, seed: u64, alpha in -3.0f64..3.0) {
        let d = DomainSpec::unit_square(0.2, n).unwrap();
        let op = StokesOperator::new(&d);
        let f = field(&d, seed);
        let p = op.leray_project(&f).unwrap();
        let scale = p.max_abs().max(1e-300);
        prop_assert!(op.leray_project(&p).unwrap().sub(&p).max_abs() <= 1e-10 * scale);
        let pa = op.leray_project(&f.scaled(alpha)).unwrap();
        prop_assert!(pa.sub(&p.scaled(alpha)).max_abs() <= 1e-10 * scale.max(alpha.abs() * scale));
        // the removed part is H-orthogonal to the range
        let n = d.norms();
        let orth = n.h_inner(&f.sub(&p), &p).unwrap();
        prop_assert!(orth.abs() <= 1e-10 * n.h_norm(&f).unwrap().powi(2));
    }

    #[test]
    fn free_decay_is_monotone(
        lambdas in prop::collection::vec(1.0f64..500.0, 1..12),
        seed: u64,
        t1 in 0.0f64..0.5,
        dt in 0.0f64..0.5,
    ) {
        let mut rng = stokes_ctm::sampling::rng(seed);
        let y0 = stokes_ctm::sampling::normal_vec(&mut rng, lambdas.len());
        let a = evolve::stokes_evolve(&lambdas, &y0, &NoForcing, t1).unwrap().h_norm();
        let b = evolve::stokes_evolve(&lambdas, &y0, &NoForcing, t1 + dt).unwrap().h_norm();
        let lmin = lambdas.iter().cloned().fold(f64::INFINITY, f64::min);
        prop_assert!(b <= a * (1.0 + 1e-14));
        prop_assert!(b <= (-lmin * dt).exp() * a * (1.0 + 1e-12) + 1e-300);
    }

    #[test]
    fn smoothing_bound_holds(
        lambdas in prop::collection::vec(0.5f64..1e4, 1..30),
        seed: u64,
        eps in 0.01f64..0.3,
    ) {
        let mut rng = stokes_ctm::sampling::rng(seed);
        let y0 = stokes_ctm::sampling::normal_vec(&mut rng, lambdas.len());
        let y = evolve::stokes_evolve(&lambdas, &y0, &NoForcing, eps).unwrap();
        let h0: f64 = y0.iter().map(|c| c * c).sum();
        let v = y.v_norm(&lambdas).powi(2);
        prop_assert!(v <= h0 / (2.0 * std::f64::consts::E * eps) * (1.0 + 1e-12));
        prop_assert!(v <= eps * (2.0 / eps).exp() * h0);
    }

    #[test]
    fn snapshot_round_trips(rows in 1usize..6, cols in 1usize..6, seed: u64) {
        let mut rng = stokes_ctm::sampling::rng(seed);
        let data = stokes_ctm::sampling::normal_vec(&mut rng, rows * cols);
        let snap = Snapshot::new(vec![rows as u64, cols as u64], data).unwrap();
        let bytes = snap.to_bytes();
        prop_assert_eq!(&bytes[..12], b"STOKESCTMSNP");
        prop_assert_eq!(Snapshot::from_bytes(&bytes).unwrap(), snap);
    }

    #[test]
    fn cost_fit_recovers_exponential_law(a in -5.0f64..5.0, b in 0.1f64..5.0) {
        let horizons = [0.2, 0.3, 0.4, 0.5, 0.7, 1.0];
        let costs: Vec<f64> = horizons.iter().map(|t| (a + b / t).exp()).collect();
        let fit = expcli::fit_cost_models(&horizons, &costs).unwrap();
        prop_assert!((fit.inverse_t.slope - b).abs() <= 1e-8 * b);
        prop_assert!((fit.inverse_t.intercept - a).abs() <= 1e-8 * (1.0 + a.abs()));
        prop_assert!(fit.inverse_t.r2 > 1.0 - 1e-10);
        prop_assert_eq!(fit.preferred, CostModel::InverseT);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn eigenvalues_scale_inversely_with_area(n in 10usize..14, s in 0.5f64..2.0) {
        let base = DomainSpec::new(0.5, 0.25, n, n).unwrap();
        let scaled = DomainSpec::new(0.5 * s, 0.25 * s, n, n).unwrap();
        let l0 = StokesOperator::new(&base).eig_modes(4).unwrap().eigenvalues;
        let l1 = StokesOperator::new(&scaled).eig_modes(4).unwrap().eigenvalues;
        for (x, y) in l0.iter().zip(&l1) {
            prop_assert!((y * s * s / x - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn modes_map_to_modes_under_diagonal_reflection(n in 10usize..14) {
        // reflecting the square across its diagonal maps the operator to itself
        let d = DomainSpec::unit_square(0.25, n).unwrap();
        let op = StokesOperator::new(&d);
        let modes = op.eig_modes(6).unwrap();
        for j in 0..6 {
            let e = modes.mode(j);
            let mut r = VelocityField::zeros(&d);
            for i in 1..n {
                for k in 0..n {
                    // (u, v)(x, y) → (v, u)(y, x)
                    r.values[d.v_idx(k, i)] = e.values[d.u_idx(i, k)];
                    r.values[d.u_idx(i, k)] = e.values[d.v_idx(k, i)];
                }
            }
            let ar = op.apply_a(&r).unwrap();
            let lam = modes.eigenvalues[j];
            prop_assert!(ar.add(&r.scaled(lam)).max_abs() <= 1e-8 * lam * r.max_abs());
        }
    }
}
