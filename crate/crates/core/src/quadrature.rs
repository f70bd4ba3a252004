//! Gauss–Legendre rules and composite panel quadrature in time.

use std::f64::consts::PI;

/// An `n`-point Gauss–Legendre rule on `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "Gauss-Legendre rule needs at least one node");
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let m = n.div_ceil(2);
        for i in 0..m {
            // Tricomi initial guess, then Newton on P_n.
            let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre_with_derivative(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre_with_derivative(n, x);
            dp = if d != 0.0 { d } else { dp };
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
        Self { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Nodes and weights mapped to `[a, b]`.
    pub fn on_interval(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(move |(&x, &w)| (mid + half * x, half * w))
    }
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Composite Gauss–Legendre rule over a sequence of panel breakpoints.
#[derive(Debug, Clone)]
pub struct CompositeRule {
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
}

impl CompositeRule {
    pub fn new(breakpoints: &[f64], rule: &GaussLegendre) -> Self {
        let mut points = Vec::with_capacity(breakpoints.len().saturating_sub(1) * rule.len());
        let mut weights = Vec::with_capacity(points.capacity());
        for w in breakpoints.windows(2) {
            if w[1] <= w[0] {
                continue;
            }
            for (t, wt) in rule.on_interval(w[0], w[1]) {
                points.push(t);
                weights.push(wt);
            }
        }
        Self { points, weights }
    }

    /// Uniform panels on `[a, b]`.
    pub fn uniform(a: f64, b: f64, panels: usize, rule: &GaussLegendre) -> Self {
        let panels = panels.max(1);
        let h = (b - a) / panels as f64;
        let bp: Vec<f64> = (0..=panels).map(|i| a + h * i as f64).collect();
        Self::new(&bp, rule)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.points
            .iter()
            .zip(&self.weights)
            .map(|(&t, &w)| w * f(t))
            .sum()
    }
}

/// Refines `breakpoints` so that no panel is longer than `max_len`.
pub fn refine_panels(breakpoints: &[f64], max_len: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(breakpoints.len());
    if breakpoints.is_empty() {
        return out;
    }
    out.push(breakpoints[0]);
    for w in breakpoints.windows(2) {
        let len = w[1] - w[0];
        if len <= 0.0 {
            continue;
        }
        let pieces = if max_len > 0.0 {
            (len / max_len).ceil().max(1.0) as usize
        } else {
            1
        };
        let h = len / pieces as f64;
        for k in 1..pieces {
            out.push(w[0] + h * k as f64);
        }
        out.push(w[1]);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integrates_polynomials_exactly() {
        for n in 1..=12 {
            let gl = GaussLegendre::new(n);
            let wsum: f64 = gl.weights.iter().sum();
            assert!((wsum - 2.0).abs() < 1e-14, "n={n}");
            for deg in 0..(2 * n) {
                let exact = if deg % 2 == 1 {
                    0.0
                } else {
                    2.0 / (deg as f64 + 1.0)
                };
                let q: f64 = gl
                    .nodes
                    .iter()
                    .zip(&gl.weights)
                    .map(|(&x, &w)| w * x.powi(deg as i32))
                    .sum();
                assert!((q - exact).abs() < 1e-13, "n={n} deg={deg}: {q} vs {exact}");
            }
        }
    }

    #[test]
    fn composite_rule_on_oscillatory_integrand() {
        let gl = GaussLegendre::new(8);
        let rule = CompositeRule::uniform(0.0, 2.0, 16, &gl);
        let omega = 9.0_f64;
        let q = rule.integrate(|t| (omega * t).cos().powi(2));
        let exact = 1.0 + (2.0 * omega * 2.0).sin() / (4.0 * omega);
        assert!((q - exact).abs() < 1e-13);
    }

    #[test]
    fn refine_respects_max_length() {
        let bp = refine_panels(&[0.0, 1.0, 1.05, 3.0], 0.3);
        assert_eq!(bp.first(), Some(&0.0));
        assert_eq!(bp.last(), Some(&3.0));
        for w in bp.windows(2) {
            assert!(w[1] - w[0] <= 0.3 + 1e-12);
        }
        assert!(bp.contains(&1.05));
    }
}
