//! Hellinger, modified Hellinger and L² distances between densities on
//! [0, 1], by composite Gauss–Legendre quadrature on the union of both
//! densities' breakpoints.

use std::sync::Arc;

use crate::density::Density;
use crate::error::{Error, Result};
use crate::quadrature::{merge_breakpoints, CompositeRule, NODES_PER_PANEL};
use crate::splines::{NodeTable, SplineBasis};

/// Inputs whose integral is further than this from 1 are rejected.
pub const NORMALIZATION_TOL: f64 = 1e-6;

fn union_rule(f: &dyn Density, g: &dyn Density) -> CompositeRule {
    let bf = f.breakpoints();
    let bg = g.breakpoints();
    CompositeRule::new(&merge_breakpoints(&[&bf, &bg]), NODES_PER_PANEL)
}

fn tabulate(rule: &CompositeRule, d: &dyn Density) -> Result<Vec<f64>> {
    let values: Vec<f64> = rule.nodes.iter().map(|&x| d.pdf(x)).collect();
    let mass: f64 = values.iter().zip(&rule.weights).map(|(v, w)| v * w).sum();
    if !((mass - 1.0).abs() <= NORMALIZATION_TOL) {
        return Err(Error::NotNormalized { integral: mass });
    }
    Ok(values)
}

/// `H(f, g) = ‖√f - √g‖₂`.
pub fn hellinger(f: &dyn Density, g: &dyn Density) -> Result<f64> {
    let rule = union_rule(f, g);
    let fv = tabulate(&rule, f)?;
    let gv = tabulate(&rule, g)?;
    let h2: f64 = fv
        .iter()
        .zip(&gv)
        .zip(&rule.weights)
        .map(|((a, b), w)| w * (a.sqrt() - b.sqrt()).powi(2))
        .sum();
    Ok(h2.max(0.0).sqrt())
}

#[inline]
fn star_term(f0: f64, f: f64) -> Result<f64> {
    if f0 <= 0.0 {
        return Ok(f / 3.0);
    }
    if f <= 0.0 {
        return Err(Error::RatioSingularity);
    }
    let d = f0.sqrt() - f.sqrt();
    Ok(d * d * ((2.0 / 3.0) * (f0 / f).sqrt() + 1.0 / 3.0))
}

/// `H_*(f0, f) = ‖(√f0 - √f)((2/3)√(f0/f) + 1/3)^{1/2}‖₂`. Not symmetric.
pub fn hellinger_star(f0: &dyn Density, f: &dyn Density) -> Result<f64> {
    let rule = union_rule(f0, f);
    let av = tabulate(&rule, f0)?;
    let bv = tabulate(&rule, f)?;
    let mut total = 0.0;
    for ((&a, &b), &w) in av.iter().zip(&bv).zip(&rule.weights) {
        total += w * star_term(a, b)?;
    }
    Ok(total.max(0.0).sqrt())
}

/// `‖f - g‖₂`.
pub fn l2_distance(f: &dyn Density, g: &dyn Density) -> Result<f64> {
    let rule = union_rule(f, g);
    let fv = tabulate(&rule, f)?;
    let gv = tabulate(&rule, g)?;
    let d2: f64 = fv
        .iter()
        .zip(&gv)
        .zip(&rule.weights)
        .map(|((a, b), w)| w * (a - b).powi(2))
        .sum();
    Ok(d2.sqrt())
}

/// Distances from members of one log-spline family to a fixed reference
/// density.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Distances {
    pub hellinger: f64,
    /// `H_*(reference, f_θ)`.
    pub hellinger_star: f64,
    pub l2: f64,
}

/// Precomputed quadrature for repeated distance evaluations between `f_θ`
/// (θ varying, basis fixed) and one reference density. The panels are the
/// union of the knot grid and the reference's breakpoints, so every
/// integrand is smooth per panel.
#[derive(Debug, Clone)]
pub struct ReferenceGrid {
    basis: Arc<SplineBasis>,
    table: NodeTable,
    reference: Vec<f64>,
}

impl ReferenceGrid {
    pub fn new(basis: Arc<SplineBasis>, reference: &dyn Density) -> Result<Self> {
        let edges = merge_breakpoints(&[&basis.breakpoints(), &reference.breakpoints()]);
        let table = basis.tabulate(&edges, NODES_PER_PANEL);
        let reference = tabulate(&table.rule, reference)?;
        Ok(Self {
            basis,
            table,
            reference,
        })
    }

    pub fn basis(&self) -> &Arc<SplineBasis> {
        &self.basis
    }

    /// Distances between `f_θ` and the reference, given `c(θ)`.
    pub fn distances(&self, theta: &[f64], log_norm: f64) -> Result<Distances> {
        if theta.len() != self.basis.dimension() {
            return Err(Error::DimensionMismatch {
                expected: self.basis.dimension(),
                actual: theta.len(),
            });
        }
        let q = self.basis.order();
        let (mut h2, mut s2, mut l2) = (0.0, 0.0, 0.0);
        for (i, (&w, &r)) in self.table.rule.weights.iter().zip(&self.reference).enumerate() {
            let f = (self.table.linear_form(i, q, theta) - log_norm).exp();
            let d = r.sqrt() - f.sqrt();
            h2 += w * d * d;
            s2 += w * star_term(r, f)?;
            l2 += w * (r - f) * (r - f);
        }
        Ok(Distances {
            hellinger: h2.max(0.0).sqrt(),
            hellinger_star: s2.max(0.0).sqrt(),
            l2: l2.sqrt(),
        })
    }

    /// Hellinger distance only.
    pub fn hellinger(&self, theta: &[f64], log_norm: f64) -> f64 {
        let q = self.basis.order();
        let h2: f64 = self
            .table
            .rule
            .weights
            .iter()
            .zip(&self.reference)
            .enumerate()
            .map(|(i, (&w, &r))| {
                let f = (self.table.linear_form(i, q, theta) - log_norm).exp();
                let d = r.sqrt() - f.sqrt();
                w * d * d
            })
            .sum();
        h2.max(0.0).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::{log_norm_const, FnDensity, LogSplineDensity, StepDensity, Theta, Uniform};
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn linear() -> FnDensity {
        // 2x, with panels refined towards the zero at the origin
        FnDensity::new(|x| 2.0 * x, vec![0.0, 1e-8, 1e-6, 1e-4, 1e-2, 0.1, 1.0]).unwrap()
    }

    fn random_member(rng: &mut ChaCha8Rng, basis: &Arc<SplineBasis>, m: f64) -> LogSplineDensity {
        let v: Vec<f64> = (0..basis.dimension()).map(|_| rng.random_range(-m..m)).collect();
        LogSplineDensity::new(basis.clone(), Theta::project(&v).unwrap()).unwrap()
    }

    #[test]
    fn identical_arguments_give_zero() {
        let d = linear();
        assert_eq!(hellinger(&d, &d).unwrap(), 0.0);
        assert_eq!(l2_distance(&d, &d).unwrap(), 0.0);
        assert_eq!(hellinger_star(&Uniform, &Uniform).unwrap(), 0.0);
    }

    #[test]
    fn uniform_versus_linear_closed_forms() {
        // √x is singular at 0, which limits Gauss–Legendre accuracy
        let d = linear();
        let h = (2.0 - 4.0 * 2f64.sqrt() / 3.0).sqrt();
        assert_abs_diff_eq!(hellinger(&Uniform, &d).unwrap(), h, epsilon = 1e-9);
        assert_abs_diff_eq!(hellinger(&d, &Uniform).unwrap(), h, epsilon = 1e-9);
        assert_abs_diff_eq!(l2_distance(&Uniform, &d).unwrap(), 1.0 / 3f64.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn modified_hellinger_is_asymmetric() {
        // Closed forms after substituting u = √(2x):
        //   H_*(1, 2x)² = ∫_0^√2 (2/3 - u + u³/3) du
        //   H_*(2x, 1)² = ∫_0^√2 ((2/3)u⁴ - u³ + u/3) du
        let s = 2f64.sqrt();
        let forward = ((2.0 / 3.0) * s - s * s / 2.0 + s.powi(4) / 12.0).sqrt();
        let backward = ((2.0 / 15.0) * s.powi(5) - s.powi(4) / 4.0 + s * s / 6.0).sqrt();
        let d = linear();
        let a = hellinger_star(&Uniform, &d).unwrap();
        let b = hellinger_star(&d, &Uniform).unwrap();
        // the forward integrand has an integrable x^{-1/2} singularity at 0
        assert_abs_diff_eq!(a, forward, epsilon = 1e-4);
        assert_abs_diff_eq!(b, backward, epsilon = 1e-10);
        assert!((a - b).abs() > 0.1);
    }

    #[test]
    fn modified_hellinger_rejects_vanishing_denominator() {
        let f0 = StepDensity::from_probabilities(&[0.5, 0.5]).unwrap();
        let f = StepDensity::from_probabilities(&[1.0, 0.0]).unwrap();
        assert_eq!(hellinger_star(&f0, &f), Err(Error::RatioSingularity));
        assert!(hellinger_star(&f, &f0).is_ok());
    }

    #[test]
    fn unnormalized_input_is_rejected() {
        let bad = FnDensity::new(|_| 1.1, vec![0.0, 1.0]).unwrap();
        assert!(matches!(hellinger(&bad, &Uniform), Err(Error::NotNormalized { .. })));
    }

    #[test]
    fn modified_and_plain_hellinger_agree_near_the_reference() {
        let b = Arc::new(SplineBasis::new(4, 6).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let v: Vec<f64> = (0..9).map(|_| rng.random_range(-1.0..1.0)).collect();
        let base = Theta::project(&v).unwrap();
        let f0 = LogSplineDensity::new(b.clone(), base.clone()).unwrap();
        let dir: Vec<f64> = (0..9).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut prev_gap = f64::INFINITY;
        for &t in &[1e-1, 1e-2, 1e-3] {
            let moved: Vec<f64> = base.values().iter().zip(&dir).map(|(a, d)| a + t * d).collect();
            let f = LogSplineDensity::new(b.clone(), Theta::project(&moved).unwrap()).unwrap();
            let h = hellinger(&f0, &f).unwrap();
            let hs = hellinger_star(&f0, &f).unwrap();
            let gap = (hs / h - 1.0).abs();
            assert!(gap < prev_gap);
            prev_gap = gap;
        }
        assert!(prev_gap < 1e-3);
    }

    #[test]
    fn triangle_inequalities_and_l2_hellinger_bound() {
        let b = Arc::new(SplineBasis::new(4, 10).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let m = 2.0;
        for _ in 0..30 {
            let f = random_member(&mut rng, &b, m);
            let g = random_member(&mut rng, &b, m);
            let h = random_member(&mut rng, &b, m);
            let (fg, gh, fh) = (
                hellinger(&f, &g).unwrap(),
                hellinger(&g, &h).unwrap(),
                hellinger(&f, &h).unwrap(),
            );
            assert!(fh <= fg + gh + 1e-9);
            assert!(fg <= 2f64.sqrt());
            let (lfg, lgh, lfh) = (
                l2_distance(&f, &g).unwrap(),
                l2_distance(&g, &h).unwrap(),
                l2_distance(&f, &h).unwrap(),
            );
            assert!(lfh <= lfg + lgh + 1e-9);
            // |Σθ_j B_j - c| ≤ 2‖θ‖∞, so √f + √g ≤ 2 e^{M}
            assert!(lfg <= 2.0 * m.exp() * fg + 1e-12);
        }
    }

    #[test]
    fn reference_grid_matches_generic_routines() {
        let b = Arc::new(SplineBasis::new(3, 7).unwrap());
        let f0 = linear();
        let grid = ReferenceGrid::new(b.clone(), &f0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..5 {
            let f = random_member(&mut rng, &b, 1.0);
            let c = log_norm_const(&b, f.theta()).unwrap();
            let d = grid.distances(f.theta().values(), c).unwrap();
            assert_abs_diff_eq!(d.hellinger, hellinger(&f, &f0).unwrap(), epsilon = 1e-12);
            assert_abs_diff_eq!(d.l2, l2_distance(&f, &f0).unwrap(), epsilon = 1e-12);
            assert_abs_diff_eq!(d.hellinger_star, hellinger_star(&f0, &f).unwrap(), epsilon = 1e-12);
            assert_abs_diff_eq!(grid.hellinger(f.theta().values(), c), d.hellinger, epsilon = 1e-15);
        }
    }
}
