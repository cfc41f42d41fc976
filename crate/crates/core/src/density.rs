//! Densities on [0, 1] and the log-spline exponential family
//! `f_θ(x) = exp(Σ_j θ_j B_j(x) - c(θ))`.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::quadrature::{CompositeRule, NODES_PER_PANEL};
use crate::splines::SplineBasis;

/// Tolerance for membership in the sum-zero hyperplane.
pub const SUM_ZERO_TOL: f64 = 1e-12;

/// A probability density on [0, 1].
///
/// Implementations may assume `x ∈ [0, 1]`; callers validate. The
/// breakpoints partition [0, 1] into panels on which the density is smooth,
/// and every quadrature in the crate is aligned with them.
pub trait Density: Send + Sync {
    fn pdf(&self, x: f64) -> f64;

    fn ln_pdf(&self, x: f64) -> f64 {
        self.pdf(x).ln()
    }

    /// Sorted panel edges, starting at 0 and ending at 1.
    fn breakpoints(&self) -> Vec<f64>;
}

impl<D: Density + ?Sized> Density for Arc<D> {
    fn pdf(&self, x: f64) -> f64 {
        (**self).pdf(x)
    }
    fn ln_pdf(&self, x: f64) -> f64 {
        (**self).ln_pdf(x)
    }
    fn breakpoints(&self) -> Vec<f64> {
        (**self).breakpoints()
    }
}

/// `∫₀¹ f` by the composite 20-point rule on the density's own panels.
pub fn total_mass(d: &dyn Density) -> f64 {
    CompositeRule::new(&d.breakpoints(), NODES_PER_PANEL).integrate(|x| d.pdf(x))
}

/// Spline coefficients constrained to the hyperplane `Σ_j θ_j = 0`,
/// optionally also to the box `‖θ‖_∞ ≤ M`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theta {
    values: Vec<f64>,
    box_bound: Option<f64>,
}

impl Theta {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(invalid("theta", "the sum-zero space is trivial for J < 2"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(invalid("theta", "coefficients must be finite"));
        }
        let s: f64 = values.iter().sum();
        if s.abs() > SUM_ZERO_TOL {
            return Err(invalid("theta", format!("coefficients sum to {s:e}, not 0")));
        }
        Ok(Self {
            values,
            box_bound: None,
        })
    }

    /// Orthogonal projection `v - mean(v)` onto the sum-zero hyperplane.
    pub fn project(v: &[f64]) -> Result<Self> {
        if v.len() < 2 {
            return Err(invalid("theta", "the sum-zero space is trivial for J < 2"));
        }
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let mut values: Vec<f64> = v.iter().map(|x| x - mean).collect();
        // Push the rounding residue into the largest coordinate.
        let residue: f64 = values.iter().sum();
        if residue != 0.0 {
            let (imax, _) = values
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
                .expect("nonempty");
            values[imax] -= residue;
        }
        Self::new(values)
    }

    pub fn zeros(dim: usize) -> Result<Self> {
        Self::new(vec![0.0; dim])
    }

    /// Builds θ from free coordinates `θ_1..θ_{J-1}`, setting
    /// `θ_J = -Σ_{j<J} θ_j`.
    pub fn from_free(free: &[f64]) -> Self {
        let mut values = free.to_vec();
        values.push(-free.iter().sum::<f64>());
        Self {
            values,
            box_bound: None,
        }
    }

    /// Marks θ as a member of the box-constrained set `Θ_{0,M}`.
    pub fn with_box(mut self, bound: f64) -> Result<Self> {
        if !(bound >= 0.0) {
            return Err(invalid("bound", "box bound must be nonnegative"));
        }
        if self.sup_norm() > bound {
            return Err(invalid(
                "theta",
                format!("sup norm {} exceeds box bound {bound}", self.sup_norm()),
            ));
        }
        self.box_bound = Some(bound);
        Ok(self)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn box_bound(&self) -> Option<f64> {
        self.box_bound
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn in_box(&self, bound: f64) -> bool {
        self.sup_norm() <= bound
    }
}

/// `c(θ)` together with the first two moments of the basis under `f_θ`.
#[derive(Debug, Clone)]
pub struct NormalizerMoments {
    pub log_norm: f64,
    /// `E_θ[B_j(X)] = ∂c/∂θ_j`.
    pub mean: Vec<f64>,
    /// `Cov_θ[B(X)] = ∇²c`, present when requested.
    pub cov: Option<DMatrix<f64>>,
}

fn check_dim(basis: &SplineBasis, theta: &[f64]) -> Result<()> {
    if theta.len() != basis.dimension() {
        return Err(Error::DimensionMismatch {
            expected: basis.dimension(),
            actual: theta.len(),
        });
    }
    Ok(())
}

/// Log-sum-exp of the exponent `Σ θ_j B_j` over the knot-aligned rule. The
/// shift `max_j θ_j` bounds the exponent from above (partition of unity), so
/// no term overflows.
fn log_norm_unchecked(basis: &SplineBasis, theta: &[f64]) -> f64 {
    let table = basis.node_table();
    let q = basis.order();
    let shift = theta.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    // ∫ e^{s - shift} = 1 + ∫ (e^{s - shift} - 1); writing it this way makes
    // θ = 0 give c = 0 exactly instead of the log of the rounded weight sum.
    let excess: f64 = table
        .rule
        .weights
        .iter()
        .enumerate()
        .map(|(i, &w)| w * (table.linear_form(i, q, theta) - shift).exp_m1())
        .sum();
    shift + excess.ln_1p()
}

/// `c(θ) = log ∫₀¹ exp(Σ_j θ_j B_j(x)) dx`.
pub fn log_norm_const(basis: &SplineBasis, theta: &Theta) -> Result<f64> {
    check_dim(basis, theta.values())?;
    Ok(log_norm_unchecked(basis, theta.values()))
}

/// Raw-slice version used by samplers; θ need not be sum-zero.
pub fn log_norm_raw(basis: &SplineBasis, theta: &[f64]) -> Result<f64> {
    check_dim(basis, theta)?;
    Ok(log_norm_unchecked(basis, theta))
}

/// The mean map `∂c/∂θ_j = E_θ[B_j(X)]`.
pub fn grad_log_norm(basis: &SplineBasis, theta: &Theta) -> Result<Vec<f64>> {
    Ok(normalizer_moments(basis, theta.values(), false)?.mean)
}

pub fn normalizer_moments(
    basis: &SplineBasis,
    theta: &[f64],
    with_cov: bool,
) -> Result<NormalizerMoments> {
    check_dim(basis, theta)?;
    let table = basis.node_table();
    let q = basis.order();
    let j = basis.dimension();
    let n = table.rule.len();
    let s: Vec<f64> = (0..n).map(|i| table.linear_form(i, q, theta)).collect();
    let max = s.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let p: Vec<f64> = s
        .iter()
        .zip(&table.rule.weights)
        .map(|(&v, &w)| w * (v - max).exp())
        .collect();
    let total: f64 = p.iter().sum();
    let mut mean = vec![0.0; j];
    let mut second = if with_cov {
        Some(DMatrix::zeros(j, j))
    } else {
        None
    };
    for (i, &raw) in p.iter().enumerate().take(n) {
        let pi = raw / total;
        let f = table.first[i];
        let b = &table.values[i * q..(i + 1) * q];
        for (a, &ba) in b.iter().enumerate() {
            mean[f + a] += pi * ba;
        }
        if let Some(m) = second.as_mut() {
            for (a, &ba) in b.iter().enumerate() {
                for (c, &bc) in b.iter().enumerate() {
                    m[(f + a, f + c)] += pi * ba * bc;
                }
            }
        }
    }
    let cov = second.map(|mut m| {
        for a in 0..j {
            for c in 0..j {
                m[(a, c)] -= mean[a] * mean[c];
            }
        }
        m
    });
    Ok(NormalizerMoments {
        log_norm: max + total.ln(),
        mean,
        cov,
    })
}

/// A normalized member of the log-spline family.
#[derive(Clone)]
pub struct LogSplineDensity {
    basis: Arc<SplineBasis>,
    theta: Theta,
    log_norm: f64,
}

impl fmt::Debug for LogSplineDensity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LogSplineDensity")
            .field("order", &self.basis.order())
            .field("intervals", &self.basis.intervals())
            .field("theta", &self.theta.values())
            .field("log_norm", &self.log_norm)
            .finish()
    }
}

impl LogSplineDensity {
    pub fn new(basis: Arc<SplineBasis>, theta: Theta) -> Result<Self> {
        let log_norm = log_norm_const(&basis, &theta)?;
        Ok(Self {
            basis,
            theta,
            log_norm,
        })
    }

    pub fn basis(&self) -> &Arc<SplineBasis> {
        &self.basis
    }

    pub fn theta(&self) -> &Theta {
        &self.theta
    }

    pub fn log_norm(&self) -> f64 {
        self.log_norm
    }

    /// `Σ_j θ_j B_j(x) - c(θ)`.
    pub fn log_pdf(&self, x: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&x) {
            return Err(Error::OutOfDomain(x));
        }
        Ok(self.ln_pdf(x))
    }
}

impl Density for LogSplineDensity {
    fn pdf(&self, x: f64) -> f64 {
        self.ln_pdf(x).exp()
    }

    fn ln_pdf(&self, x: f64) -> f64 {
        let q = self.basis.order();
        let mut local = [0.0; 16];
        let mut heap;
        let buf: &mut [f64] = if q <= 16 {
            &mut local[..q]
        } else {
            heap = vec![0.0; q];
            &mut heap
        };
        let first = self.basis.eval_nonzero(x.clamp(0.0, 1.0), buf);
        let theta = &self.theta.values()[first..first + q];
        buf.iter().zip(theta).map(|(b, t)| b * t).sum::<f64>() - self.log_norm
    }

    fn breakpoints(&self) -> Vec<f64> {
        self.basis.breakpoints()
    }
}

/// Piecewise-constant density on `K` equal cells of [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct StepDensity {
    heights: Vec<f64>,
}

impl StepDensity {
    /// From cell probabilities (nonnegative, summing to 1).
    pub fn from_probabilities(probs: &[f64]) -> Result<Self> {
        if probs.is_empty() {
            return Err(invalid("probabilities", "need at least one cell"));
        }
        if probs.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
            return Err(invalid("probabilities", "cell probabilities must be nonnegative"));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::NotNormalized { integral: total });
        }
        let k = probs.len() as f64;
        Ok(Self {
            heights: probs.iter().map(|p| p * k).collect(),
        })
    }

    pub fn heights(&self) -> &[f64] {
        &self.heights
    }

    fn cell(&self, x: f64) -> usize {
        let k = self.heights.len();
        ((x * k as f64).floor() as usize).min(k - 1)
    }
}

impl Density for StepDensity {
    fn pdf(&self, x: f64) -> f64 {
        self.heights[self.cell(x.clamp(0.0, 1.0))]
    }

    fn breakpoints(&self) -> Vec<f64> {
        crate::quadrature::uniform_edges(self.heights.len())
    }
}

/// `exp(g(x) - log ∫ exp g)` for a user-supplied log-shape `g` that is smooth
/// on each panel of the given breakpoints.
pub struct ExpDensity {
    log_shape: Box<dyn Fn(f64) -> f64 + Send + Sync>,
    breakpoints: Vec<f64>,
    log_norm: f64,
}

impl ExpDensity {
    pub fn new<G>(log_shape: G, breakpoints: Vec<f64>) -> Result<Self>
    where
        G: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        check_breakpoints(&breakpoints)?;
        let rule = CompositeRule::new(&breakpoints, NODES_PER_PANEL);
        let g: Vec<f64> = rule.nodes.iter().map(|&x| log_shape(x)).collect();
        let max = g.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        if !max.is_finite() {
            return Err(invalid("log_shape", "log-shape must be finite on [0, 1]"));
        }
        let total: f64 = g
            .iter()
            .zip(&rule.weights)
            .map(|(&v, &w)| w * (v - max).exp())
            .sum();
        Ok(Self {
            log_shape: Box::new(log_shape),
            breakpoints,
            log_norm: max + total.ln(),
        })
    }

    pub fn log_norm(&self) -> f64 {
        self.log_norm
    }

    /// The unnormalized log-shape `g(x)`.
    pub fn log_shape(&self, x: f64) -> f64 {
        (self.log_shape)(x)
    }
}

impl fmt::Debug for ExpDensity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ExpDensity")
            .field("panels", &(self.breakpoints.len() - 1))
            .field("log_norm", &self.log_norm)
            .finish()
    }
}

impl Density for ExpDensity {
    fn pdf(&self, x: f64) -> f64 {
        self.ln_pdf(x).exp()
    }

    fn ln_pdf(&self, x: f64) -> f64 {
        (self.log_shape)(x) - self.log_norm
    }

    fn breakpoints(&self) -> Vec<f64> {
        self.breakpoints.clone()
    }
}

/// A density given directly by a closure, assumed normalized by the caller.
pub struct FnDensity {
    pdf: Box<dyn Fn(f64) -> f64 + Send + Sync>,
    breakpoints: Vec<f64>,
}

impl FnDensity {
    pub fn new<F>(pdf: F, breakpoints: Vec<f64>) -> Result<Self>
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        check_breakpoints(&breakpoints)?;
        Ok(Self {
            pdf: Box::new(pdf),
            breakpoints,
        })
    }
}

impl Density for FnDensity {
    fn pdf(&self, x: f64) -> f64 {
        (self.pdf)(x)
    }

    fn breakpoints(&self) -> Vec<f64> {
        self.breakpoints.clone()
    }
}

/// The uniform density on [0, 1].
#[derive(Debug, Clone, Copy, Default)]
pub struct Uniform;

impl Density for Uniform {
    fn pdf(&self, _x: f64) -> f64 {
        1.0
    }
    fn ln_pdf(&self, _x: f64) -> f64 {
        0.0
    }
    fn breakpoints(&self) -> Vec<f64> {
        vec![0.0, 1.0]
    }
}

fn check_breakpoints(b: &[f64]) -> Result<()> {
    let ok = b.len() >= 2
        && b[0] == 0.0
        && b[b.len() - 1] == 1.0
        && b.windows(2).all(|w| w[0] < w[1]);
    if ok {
        Ok(())
    } else {
        Err(invalid(
            "breakpoints",
            "must increase strictly from 0 to 1",
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn basis(q: usize, k: usize) -> Arc<SplineBasis> {
        Arc::new(SplineBasis::new(q, k).unwrap())
    }

    fn random_theta(rng: &mut ChaCha8Rng, j: usize, m: f64) -> Theta {
        let v: Vec<f64> = (0..j).map(|_| rng.random_range(-m..m)).collect();
        Theta::project(&v).unwrap()
    }

    #[test]
    fn projection_examples() {
        assert_eq!(Theta::project(&[1.0, -1.0]).unwrap().values(), &[1.0, -1.0]);
        assert_eq!(Theta::project(&[1.0, 1.0]).unwrap().values(), &[0.0, 0.0]);
        assert_eq!(
            Theta::project(&[3.0, 0.0, 0.0]).unwrap().values(),
            &[2.0, -1.0, -1.0]
        );
        assert!(Theta::project(&[1.0]).is_err());
    }

    #[test]
    fn projection_is_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let v: Vec<f64> = (0..7).map(|_| rng.random_range(-5.0..5.0)).collect();
            let once = Theta::project(&v).unwrap();
            let twice = Theta::project(once.values()).unwrap();
            assert!(once.values().iter().sum::<f64>().abs() <= SUM_ZERO_TOL);
            for (a, b) in once.values().iter().zip(twice.values()) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn zero_theta_gives_uniform() {
        let b = basis(4, 10);
        let t = Theta::zeros(13).unwrap();
        assert_abs_diff_eq!(log_norm_const(&b, &t).unwrap(), 0.0, epsilon = 1e-15);
        let d = LogSplineDensity::new(b, t).unwrap();
        assert_abs_diff_eq!(d.log_pdf(0.3).unwrap(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn step_family_normalizer_is_log_cosh() {
        let b = basis(1, 2);
        for &t in &[0.5, 1.0, 2.0] {
            let th = Theta::new(vec![t, -t]).unwrap();
            assert_abs_diff_eq!(
                log_norm_const(&b, &th).unwrap(),
                f64::cosh(t).ln(),
                epsilon = 1e-12
            );
        }
        let th = Theta::new(vec![1.0, -1.0]).unwrap();
        assert_abs_diff_eq!(log_norm_const(&b, &th).unwrap(), 0.4337808304830271, epsilon = 1e-12);
        let d = LogSplineDensity::new(b, th).unwrap();
        assert_abs_diff_eq!(d.log_pdf(0.25).unwrap(), 0.5662191695169729, epsilon = 1e-12);
        assert!(matches!(d.log_pdf(1.01), Err(Error::OutOfDomain(_))));
    }

    #[test]
    fn mean_map_examples() {
        let b = basis(1, 2);
        let g = grad_log_norm(&b, &Theta::zeros(2).unwrap()).unwrap();
        assert_abs_diff_eq!(g[0], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(g[1], 0.5, epsilon = 1e-15);
        let g = grad_log_norm(&b, &Theta::new(vec![1.0, -1.0]).unwrap()).unwrap();
        assert_abs_diff_eq!(g[0], 0.8807970779778823, epsilon = 1e-12);
        assert_abs_diff_eq!(g[1], 0.11920292202211755, epsilon = 1e-12);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let b = basis(4, 10);
        let t = Theta::zeros(5).unwrap();
        assert!(matches!(
            log_norm_const(&b, &t),
            Err(Error::DimensionMismatch { expected: 13, actual: 5 })
        ));
    }

    #[test]
    fn mean_map_sums_to_one_and_matches_finite_differences() {
        let b = basis(4, 10);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10 {
            let t = random_theta(&mut rng, 13, 2.0);
            let g = grad_log_norm(&b, &t).unwrap();
            assert_abs_diff_eq!(g.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
            assert!(g.iter().all(|&v| v > 0.0));
            let h = 1e-5;
            for j in 0..13 {
                let mut plus = t.values().to_vec();
                let mut minus = t.values().to_vec();
                plus[j] += h;
                minus[j] -= h;
                let fd = (log_norm_raw(&b, &plus).unwrap() - log_norm_raw(&b, &minus).unwrap())
                    / (2.0 * h);
                assert!((fd - g[j]).abs() <= 1e-6 * g[j].abs().max(1e-3));
            }
        }
    }

    #[test]
    fn hessian_is_covariance_with_constant_direction_in_kernel() {
        let b = basis(3, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = random_theta(&mut rng, 7, 1.5);
        let m = normalizer_moments(&b, t.values(), true).unwrap();
        let cov = m.cov.unwrap();
        for a in 0..7 {
            let row: f64 = (0..7).map(|c| cov[(a, c)]).sum();
            assert_abs_diff_eq!(row, 0.0, epsilon = 1e-13);
        }
        // central differences of the gradient
        let h = 1e-5;
        for a in 0..7 {
            let mut plus = t.values().to_vec();
            let mut minus = t.values().to_vec();
            plus[a] += h;
            minus[a] -= h;
            let gp = normalizer_moments(&b, &plus, false).unwrap().mean;
            let gm = normalizer_moments(&b, &minus, false).unwrap().mean;
            for c in 0..7 {
                assert_abs_diff_eq!((gp[c] - gm[c]) / (2.0 * h), cov[(a, c)], epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn normalizer_is_convex_along_segments() {
        let b = basis(4, 10);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let t1 = random_theta(&mut rng, 13, 3.0);
            let t2 = random_theta(&mut rng, 13, 3.0);
            let lam: f64 = rng.random();
            let mix: Vec<f64> = t1
                .values()
                .iter()
                .zip(t2.values())
                .map(|(a, b)| lam * a + (1.0 - lam) * b)
                .collect();
            let c_mix = log_norm_raw(&b, &mix).unwrap();
            let c1 = log_norm_const(&b, &t1).unwrap();
            let c2 = log_norm_const(&b, &t2).unwrap();
            assert!(c_mix <= lam * c1 + (1.0 - lam) * c2 + 1e-9);
        }
    }

    #[test]
    fn step_density_validates_and_evaluates() {
        let d = StepDensity::from_probabilities(&[0.8, 0.2]).unwrap();
        assert_eq!(d.pdf(0.1), 1.6);
        assert_eq!(d.pdf(1.0), 0.4);
        assert_abs_diff_eq!(total_mass(&d), 1.0, epsilon = 1e-14);
        assert!(StepDensity::from_probabilities(&[0.5, 0.4]).is_err());
        assert!(StepDensity::from_probabilities(&[1.5, -0.5]).is_err());
    }

    #[test]
    fn exp_density_normalizes() {
        let d = ExpDensity::new(|x| (2.0 * std::f64::consts::PI * x).cos(), crate::quadrature::uniform_edges(8))
            .unwrap();
        assert_abs_diff_eq!(total_mass(&d), 1.0, epsilon = 1e-13);
        // ∫ exp(cos 2πx) dx = I0(1)
        assert_abs_diff_eq!(d.log_norm(), 1.2660658777520084_f64.ln(), epsilon = 1e-13);
    }
}
