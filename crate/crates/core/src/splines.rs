//! Clamped B-spline bases on uniform partitions of [0, 1].
//!
//! A basis of order `q` (degree `q - 1`) on `K` equal intervals uses the knot
//! vector `[0; q], 1/K, ..., (K-1)/K, [1; q]` and has `J = q + K - 1`
//! functions. Values are computed with the Cox–de Boor triangular recursion,
//! which yields the `q` functions that are nonzero on the interval containing
//! `x`. The right endpoint `x = 1` is assigned to the last interval, so each
//! basis function is evaluated as its left limit there.

use crate::error::{invalid, Error, Result};
use crate::quadrature::{uniform_edges, CompositeRule, NODES_PER_PANEL};

#[derive(Debug, Clone)]
pub struct SplineBasis {
    order: usize,
    intervals: usize,
    knots: Vec<f64>,
    table: NodeTable,
}

/// Basis values at the nodes of the composite quadrature rule aligned with the
/// knot intervals. Shared by normalization, moments and sampling.
#[derive(Debug, Clone)]
pub struct NodeTable {
    pub rule: CompositeRule,
    /// Index of the first nonzero basis function at each node.
    pub first: Vec<usize>,
    /// `order` consecutive values per node.
    pub values: Vec<f64>,
}

impl SplineBasis {
    pub fn new(order: usize, intervals: usize) -> Result<Self> {
        if order == 0 {
            return Err(invalid("order", "spline order must be at least 1"));
        }
        if intervals == 0 {
            return Err(invalid("intervals", "need at least one knot interval"));
        }
        let mut knots = Vec::with_capacity(2 * order + intervals - 1);
        knots.extend(std::iter::repeat_n(0.0, order));
        knots.extend((1..intervals).map(|k| k as f64 / intervals as f64));
        knots.extend(std::iter::repeat_n(1.0, order));

        let mut basis = Self {
            order,
            intervals,
            knots,
            table: NodeTable {
                rule: CompositeRule::new(&[], 1),
                first: Vec::new(),
                values: Vec::new(),
            },
        };
        basis.table = basis.tabulate(&basis.breakpoints(), NODES_PER_PANEL);
        Ok(basis)
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn intervals(&self) -> usize {
        self.intervals
    }

    /// Number of basis functions, `order + intervals - 1`.
    pub fn dimension(&self) -> usize {
        self.order + self.intervals - 1
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// Distinct knots `0, 1/K, ..., 1`.
    pub fn breakpoints(&self) -> Vec<f64> {
        uniform_edges(self.intervals)
    }

    pub fn node_table(&self) -> &NodeTable {
        &self.table
    }

    /// Knot interval containing `x`, with `x = 1` mapped to the last one.
    pub fn interval_of(&self, x: f64) -> usize {
        ((x * self.intervals as f64).floor() as usize).min(self.intervals - 1)
    }

    /// All `J` basis values at `x`.
    pub fn eval(&self, x: f64) -> Result<Vec<f64>> {
        if !(0.0..=1.0).contains(&x) {
            return Err(Error::OutOfDomain(x));
        }
        let mut local = vec![0.0; self.order];
        let first = self.eval_nonzero(x, &mut local);
        let mut out = vec![0.0; self.dimension()];
        out[first..first + self.order].copy_from_slice(&local);
        Ok(out)
    }

    /// Writes the `order` possibly nonzero values at `x` into `out` and
    /// returns the index of the first one. `x` must lie in [0, 1].
    pub fn eval_nonzero(&self, x: f64, out: &mut [f64]) -> usize {
        let q = self.order;
        debug_assert!(out.len() >= q);
        let k = self.interval_of(x);
        let span = q - 1 + k;
        let u = &self.knots;
        out[0] = 1.0;
        // left/right differences; degree is small so fixed buffers suffice
        // for the orders used in practice, larger orders fall back to the heap.
        let mut left_buf = [0.0; 16];
        let mut right_buf = [0.0; 16];
        let mut left_heap;
        let mut right_heap;
        let (left, right): (&mut [f64], &mut [f64]) = if q <= 16 {
            (&mut left_buf[..q], &mut right_buf[..q])
        } else {
            left_heap = vec![0.0; q];
            right_heap = vec![0.0; q];
            (&mut left_heap[..], &mut right_heap[..])
        };
        for j in 1..q {
            left[j] = x - u[span + 1 - j];
            right[j] = u[span + j] - x;
            let mut saved = 0.0;
            for r in 0..j {
                let temp = out[r] / (right[r + 1] + left[j - r]);
                out[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            out[j] = saved;
        }
        k
    }

    /// Closed support interval `[lo, hi]` of basis function `j`.
    pub fn support(&self, j: usize) -> (f64, f64) {
        (self.knots[j], self.knots[j + self.order])
    }

    /// Basis values at the nodes of a composite rule on `edges`. Every panel
    /// must lie inside one knot interval for the rule to be exact on
    /// polynomial pieces.
    pub fn tabulate(&self, edges: &[f64], per_panel: usize) -> NodeTable {
        let rule = CompositeRule::new(edges, per_panel);
        let q = self.order;
        let mut first = Vec::with_capacity(rule.len());
        let mut values = vec![0.0; rule.len() * q];
        for (i, &x) in rule.nodes.iter().enumerate() {
            first.push(self.eval_nonzero(x, &mut values[i * q..(i + 1) * q]));
        }
        NodeTable {
            rule,
            first,
            values,
        }
    }
}

impl NodeTable {
    /// `Σ_j θ_j B_j(x_i)` at node `i`.
    #[inline]
    pub fn linear_form(&self, i: usize, order: usize, theta: &[f64]) -> f64 {
        let f = self.first[i];
        self.values[i * order..(i + 1) * order]
            .iter()
            .zip(&theta[f..f + order])
            .map(|(b, t)| b * t)
            .sum()
    }
}
