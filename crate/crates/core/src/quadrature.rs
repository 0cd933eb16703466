//! Gauss-Legendre rules and composite panel integration.

use std::f64::consts::PI;

/// Nodes and weights of the `order`-point Gauss-Legendre rule on `[-1, 1]`.
pub fn gauss_legendre(order: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(order >= 1);
    let mut nodes = vec![0.0; order];
    let mut weights = vec![0.0; order];
    let m = order.div_ceil(2);
    for i in 0..m {
        // Tricomi initial guess, then Newton on P_n.
        let mut z = (PI * (i as f64 + 0.75) / (order as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(order, z);
            dp = d;
            let dz = p / d;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(order, z);
        dp = if d != 0.0 { d } else { dp };
        let w = 2.0 / ((1.0 - z * z) * dp * dp);
        nodes[i] = -z;
        nodes[order - 1 - i] = z;
        weights[i] = w;
        weights[order - 1 - i] = w;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, z: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = z;
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    let p = if n == 0 { 1.0 } else { p1 };
    let dp = n as f64 * (z * p - p0) / (z * z - 1.0);
    (p, dp)
}

/// A Gauss-Legendre rule mapped onto `panels` equal sub-intervals of `[a, b]`.
#[derive(Debug, Clone)]
pub struct CompositeRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl CompositeRule {
    pub fn new(a: f64, b: f64, panels: usize, order: usize) -> Self {
        let (x, w) = gauss_legendre(order);
        let width = (b - a) / panels as f64;
        let mut nodes = Vec::with_capacity(panels * order);
        let mut weights = Vec::with_capacity(panels * order);
        for p in 0..panels {
            let lo = a + p as f64 * width;
            for k in 0..order {
                nodes.push(lo + 0.5 * width * (x[k] + 1.0));
                weights.push(0.5 * width * w[k]);
            }
        }
        CompositeRule { nodes, weights }
    }

    pub fn integrate(&self, mut f: impl FnMut(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&x, &w)| w * f(x)).sum()
    }
}

/// Composite integral with panel doubling until two successive estimates
/// agree to `rel_tol`. Returns the estimate and whether it converged.
pub fn adaptive_panels(
    a: f64,
    b: f64,
    order: usize,
    start_panels: usize,
    max_panels: usize,
    rel_tol: f64,
    mut f: impl FnMut(f64) -> f64,
) -> (f64, bool) {
    let mut panels = start_panels.max(1);
    let mut prev = CompositeRule::new(a, b, panels, order).integrate(&mut f);
    while panels < max_panels {
        panels *= 2;
        let cur = CompositeRule::new(a, b, panels, order).integrate(&mut f);
        if (cur - prev).abs() <= rel_tol * cur.abs() || (cur == 0.0 && prev == 0.0) {
            return (cur, true);
        }
        prev = cur;
    }
    (prev, false)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rule_integrates_polynomials_exactly() {
        for order in [1usize, 2, 5, 8, 16, 32] {
            let (x, w) = gauss_legendre(order);
            assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-14);
            for deg in 0..(2 * order) {
                let got: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(deg as i32)).sum();
                let want = if deg % 2 == 1 { 0.0 } else { 2.0 / (deg as f64 + 1.0) };
                assert!((got - want).abs() < 1e-13, "order {order} deg {deg}");
            }
        }
    }

    #[test]
    fn adaptive_converges_on_smooth_integrand() {
        let (v, ok) = adaptive_panels(0.0, PI, 8, 1, 64, 1e-12, f64::sin);
        assert!(ok && (v - 2.0).abs() < 1e-12);
    }
}
