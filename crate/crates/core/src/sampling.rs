//! Exact i.i.d. sampling by inversion of the distribution function.

use rand::Rng;

use crate::density::Density;
use crate::error::{invalid, Result};
use crate::quadrature::{GaussLegendre, NODES_PER_PANEL};

/// Root-finding tolerance on `x`.
pub const INVERSION_TOL: f64 = 1e-12;

/// Inverse-CDF sampler. Panel masses are tabulated once; each draw locates
/// its panel by binary search and solves `∫_a^x f = u` inside it with a
/// safeguarded Newton iteration.
pub struct InverseCdfSampler<'a> {
    density: &'a dyn Density,
    edges: Vec<f64>,
    /// Unnormalized cumulative mass at each edge.
    cum: Vec<f64>,
    gl: GaussLegendre,
}

impl<'a> InverseCdfSampler<'a> {
    pub fn new(density: &'a dyn Density) -> Result<Self> {
        let edges = density.breakpoints();
        let gl = GaussLegendre::new(NODES_PER_PANEL);
        let mut cum = Vec::with_capacity(edges.len());
        cum.push(0.0);
        for w in edges.windows(2) {
            let m = gl.integrate(w[0], w[1], |x| density.pdf(x));
            cum.push(cum.last().unwrap() + m);
        }
        let total = *cum.last().unwrap();
        if !(total > 0.0 && total.is_finite()) {
            return Err(invalid("density", "total mass must be positive and finite"));
        }
        Ok(Self {
            density,
            edges,
            cum,
            gl,
        })
    }

    /// Probability of each panel under the tabulated distribution.
    pub fn panel_probabilities(&self) -> Vec<f64> {
        let total = *self.cum.last().unwrap();
        self.cum.windows(2).map(|w| (w[1] - w[0]) / total).collect()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        self.quantile(u)
    }

    pub fn sample_n<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Vec<f64> {
        (0..count).map(|_| self.sample(rng)).collect()
    }

    /// The `u`-quantile, `u ∈ [0, 1)`.
    pub fn quantile(&self, u: f64) -> f64 {
        let total = *self.cum.last().unwrap();
        let target = u * total;
        let panels = self.edges.len() - 1;
        // first panel whose upper cumulative mass exceeds the target
        let k = self.cum[1..]
            .partition_point(|&c| c <= target)
            .min(panels - 1);
        let (a, b) = (self.edges[k], self.edges[k + 1]);
        let mass = self.cum[k + 1] - self.cum[k];
        let local = (target - self.cum[k]).clamp(0.0, mass);
        if mass <= 0.0 {
            return a;
        }
        let (mut lo, mut hi) = (a, b);
        let mut x = a + (b - a) * (local / mass);
        for _ in 0..200 {
            let r = self.gl.integrate(a, x, |t| self.density.pdf(t)) - local;
            if r > 0.0 {
                hi = x;
            } else {
                lo = x;
            }
            let fx = self.density.pdf(x);
            let newton = x - r / fx;
            let next = if fx > 0.0 && newton > lo && newton < hi {
                newton
            } else {
                0.5 * (lo + hi)
            };
            if (next - x).abs() <= INVERSION_TOL || hi - lo <= INVERSION_TOL {
                return next.clamp(a, b);
            }
            x = next;
        }
        x
    }
}

/// `count` i.i.d. draws from `density`.
pub fn sample_iid<R: Rng + ?Sized>(
    density: &dyn Density,
    count: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if count == 0 {
        return Ok(Vec::new());
    }
    Ok(InverseCdfSampler::new(density)?.sample_n(count, rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::{LogSplineDensity, StepDensity, Theta, Uniform};
    use crate::splines::SplineBasis;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    #[test]
    fn zero_count_is_empty() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(sample_iid(&Uniform, 0, &mut rng).unwrap().is_empty());
    }

    #[test]
    fn uniform_draws_pass_kolmogorov_smirnov() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let b = Arc::new(SplineBasis::new(4, 10).unwrap());
        let d = LogSplineDensity::new(b, Theta::zeros(13).unwrap()).unwrap();
        let mut x = sample_iid(&d, 100_000, &mut rng).unwrap();
        x.sort_by(f64::total_cmp);
        let n = x.len() as f64;
        let ks = x
            .iter()
            .enumerate()
            .map(|(i, &v)| (v - i as f64 / n).abs().max(((i + 1) as f64 / n - v).abs()))
            .fold(0.0, f64::max);
        // 99% critical value of the one-sample KS statistic
        assert!(ks < 1.628 / n.sqrt(), "KS statistic {ks}");
    }

    #[test]
    fn step_family_cell_probability() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let b = Arc::new(SplineBasis::new(1, 2).unwrap());
        let d = LogSplineDensity::new(b, Theta::new(vec![1.0, -1.0]).unwrap()).unwrap();
        let x = sample_iid(&d, 100_000, &mut rng).unwrap();
        let frac = x.iter().filter(|&&v| v < 0.5).count() as f64 / x.len() as f64;
        let p = 0.8807970779778823;
        let se = (p * (1.0 - p) / x.len() as f64).sqrt();
        assert!((frac - p).abs() < 3.0 * se, "fraction {frac}");
    }

    #[test]
    fn quantile_inverts_distribution_function() {
        let d = StepDensity::from_probabilities(&[0.1, 0.6, 0.3]).unwrap();
        let s = InverseCdfSampler::new(&d).unwrap();
        for &(u, x) in &[(0.05, 1.0 / 6.0), (0.4, 0.5), (0.85, 5.0 / 6.0)] {
            assert!((s.quantile(u) - x).abs() < 1e-12, "u={u}");
        }
    }

    #[test]
    fn reproducible_given_seed() {
        let d = StepDensity::from_probabilities(&[0.3, 0.7]).unwrap();
        let a = sample_iid(&d, 50, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = sample_iid(&d, 50, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }
}
