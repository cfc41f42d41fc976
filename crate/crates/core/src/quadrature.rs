//! Gauss–Legendre rules and composite rules over panel partitions of [0, 1].

use std::f64::consts::PI;

/// Nodes per panel used throughout the crate.
pub const NODES_PER_PANEL: usize = 20;

/// Gauss–Legendre nodes and weights on [-1, 1].
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLegendre {
    /// Computes the `n`-point rule by Newton iteration on the Legendre
    /// polynomial, starting from the Tricomi approximation of each root.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "Gauss-Legendre rule needs at least one node");
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let nf = n as f64;
        for i in 0..n.div_ceil(2) {
            let mut x = (PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre_with_derivative(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() <= 1e-16 {
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

    /// Integrates `f` over `[a, b]`.
    pub fn integrate<F: FnMut(f64) -> f64>(&self, a: f64, b: f64, mut f: F) -> f64 {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&t, &w)| w * f(mid + half * t))
            .sum::<f64>()
            * half
    }
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    if n == 0 {
        return (1.0, 0.0);
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// A composite rule: one Gauss–Legendre rule per panel of a partition.
#[derive(Debug, Clone)]
pub struct CompositeRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    /// Panel index of every node.
    pub panel_of: Vec<usize>,
    pub edges: Vec<f64>,
}

impl CompositeRule {
    pub fn new(edges: &[f64], per_panel: usize) -> Self {
        let gl = GaussLegendre::new(per_panel);
        let mut nodes = Vec::with_capacity(edges.len().saturating_sub(1) * per_panel);
        let mut weights = Vec::with_capacity(nodes.capacity());
        let mut panel_of = Vec::with_capacity(nodes.capacity());
        for (k, pair) in edges.windows(2).enumerate() {
            let (a, b) = (pair[0], pair[1]);
            let half = 0.5 * (b - a);
            let mid = 0.5 * (a + b);
            for (&t, &w) in gl.nodes.iter().zip(&gl.weights) {
                nodes.push(mid + half * t);
                weights.push(w * half);
                panel_of.push(k);
            }
        }
        Self {
            nodes,
            weights,
            panel_of,
            edges: edges.to_vec(),
        }
    }

    pub fn integrate<F: FnMut(f64) -> f64>(&self, mut f: F) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Sorted union of several breakpoint lists, clipped to [0, 1]. Points
/// closer than `1e-13` are merged.
pub fn merge_breakpoints(lists: &[&[f64]]) -> Vec<f64> {
    let mut all: Vec<f64> = lists
        .iter()
        .flat_map(|l| l.iter().copied())
        .chain([0.0, 1.0])
        .filter(|x| (0.0..=1.0).contains(x))
        .collect();
    all.sort_by(f64::total_cmp);
    let mut out: Vec<f64> = Vec::with_capacity(all.len());
    for x in all {
        match out.last() {
            Some(&last) if x - last <= 1e-13 => {}
            _ => out.push(x),
        }
    }
    // The merge may have dropped 1.0 in favour of a point just below it.
    if let Some(last) = out.last_mut() {
        *last = 1.0;
    }
    out
}

/// Uniform partition of [0, 1] into `panels` pieces.
pub fn uniform_edges(panels: usize) -> Vec<f64> {
    (0..=panels).map(|k| k as f64 / panels as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn rule_is_exact_for_polynomials_up_to_degree_2n_minus_1() {
        let gl = GaussLegendre::new(5);
        for deg in 0..10 {
            let exact = if deg % 2 == 0 { 2.0 / (deg as f64 + 1.0) } else { 0.0 };
            assert_abs_diff_eq!(gl.integrate(-1.0, 1.0, |x| x.powi(deg)), exact, epsilon = 1e-14);
        }
    }

    #[test]
    fn twenty_point_weights_sum_to_two() {
        let gl = GaussLegendre::new(NODES_PER_PANEL);
        assert_abs_diff_eq!(gl.weights.iter().sum::<f64>(), 2.0, epsilon = 1e-14);
        assert!(gl.nodes.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn composite_rule_integrates_exp() {
        let rule = CompositeRule::new(&uniform_edges(7), NODES_PER_PANEL);
        assert_abs_diff_eq!(rule.integrate(f64::exp), std::f64::consts::E - 1.0, epsilon = 1e-14);
    }

    #[test]
    fn merge_deduplicates_and_sorts() {
        let a = [0.0, 0.5, 1.0];
        let b = [0.25, 0.5 + 1e-15, 0.75];
        assert_eq!(merge_breakpoints(&[&a, &b]), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
    }
}
