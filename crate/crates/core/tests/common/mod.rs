//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use faer::prelude::SpSolver;
use faer::Mat;
use stokes_ctm::domain::{CellField, VelocityField};
use stokes_ctm::sampling;
use stokes_ctm::stokesop::StokesOperator;

/// Composite 3-point Gauss–Legendre on `panels` equal panels.
pub fn gauss_legendre(a: f64, b: f64, panels: usize, f: impl Fn(f64) -> f64) -> f64 {
    let r = (0.6_f64).sqrt();
    let (nodes, weights) = ([-r, 0.0, r], [5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0]);
    let h = (b - a) / panels as f64;
    let mut acc = 0.0;
    for p in 0..panels {
        let mid = a + h * (p as f64 + 0.5);
        for (x, w) in nodes.iter().zip(weights) {
            acc += 0.5 * h * w * f(mid + 0.5 * h * x);
        }
    }
    acc
}

fn line(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let slope = sxy / sxx;
    (my - slope * mx, slope)
}

/// Least-squares slope and `R²` of `y` against `x`.
pub fn least_squares(x: &[f64], y: &[f64]) -> (f64, f64) {
    let (_, b) = line(x, y);
    let my = y.iter().sum::<f64>() / y.len() as f64;
    let sst: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    (b, 1.0 - residual_sum(x, y) / sst)
}

pub fn residual_sum(x: &[f64], y: &[f64]) -> f64 {
    let (a, b) = line(x, y);
    x.iter().zip(y).map(|(xi, yi)| (yi - a - b * xi).powi(2)).sum()
}

/// Seeded datum with unit Euclidean norm.
pub fn unit_datum(seed: u64, m: usize) -> Vec<f64> {
    let mut rng = sampling::rng(seed);
    sampling::normalized_coefficients(&mut rng, &vec![1.0; m])
}

/// Leray projection by the dense saddle-point system
/// `[[I, G, 0], [D, 0, 1], [0, 1ᵀ, 0]] (w, p, c) = (raw, 0, 0)`.
pub fn leray_by_kkt(op: &StokesOperator, raw: &VelocityField) -> VelocityField {
    let d = op.domain();
    let nu = d.ndof();
    let nc = d.n_cells();
    let n = nu + nc + 1;
    let mut k = Mat::<f64>::zeros(n, n);
    for i in 0..nu {
        k[(i, i)] = 1.0;
    }
    for c in 0..nc {
        let mut e = CellField::zeros(d);
        e.values[c] = 1.0;
        let g = op.gradient(&e).unwrap();
        for i in 0..nu {
            k[(i, nu + c)] = g.values[i];
        }
        k[(nu + c, n - 1)] = 1.0;
        k[(n - 1, nu + c)] = 1.0;
    }
    for i in 0..nu {
        let mut e = VelocityField::zeros(d);
        e.values[i] = 1.0;
        let div = op.divergence(&e).unwrap();
        for c in 0..nc {
            k[(nu + c, i)] = div.values[c];
        }
    }
    let rhs = Mat::from_fn(n, 1, |r, _| if r < nu { raw.values[r] } else { 0.0 });
    let x = k.partial_piv_lu().solve(&rhs);
    VelocityField {
        values: (0..nu).map(|r| x[(r, 0)]).collect(),
    }
}
