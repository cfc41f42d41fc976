//! Per-model priors on the coefficient slab, the prior over model indices
//! and Monte-Carlo prior masses of distance balls.

use num_bigint::{BigInt, BigUint, Sign};
use num_traits::{One, Zero};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::density::{log_norm_raw, Density, Theta};
use crate::error::{invalid, Error, Result};
use crate::metrics::ReferenceGrid;
use crate::splines::SplineBasis;

use std::sync::Arc;

/// Prior over the coefficients of one spline model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelPrior {
    /// Uniform on `S = {θ ∈ [-M, M]^J : Σθ_j = 0}`; a point mass at 0 when
    /// `M = 0`.
    Slab,
    /// Point mass at the given coefficients.
    Atom(Vec<f64>),
}

/// One smoothness level of the sieve at sample size `n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub gamma: f64,
    pub n: usize,
    pub order: usize,
    pub bound: f64,
    pub scale: f64,
    pub intervals: usize,
    pub dim: usize,
    /// Target rate `n^{-γ/(2γ+1)}`, times `√log n` with `log_factor`.
    pub eps: f64,
    pub log_factor: bool,
    pub prior: ModelPrior,
}

/// `n^{-γ/(2γ+1)}`, optionally times `√log n`.
pub fn target_rate(gamma: f64, n: usize, log_factor: bool) -> f64 {
    let nf = n as f64;
    let base = nf.powf(-gamma / (2.0 * gamma + 1.0));
    if log_factor {
        base * nf.ln().sqrt()
    } else {
        base
    }
}

/// Builds the model with `K_n = max(1, round(scale · n^{1/(2γ+1)}))`
/// intervals (half away from zero) and `J = q + K_n - 1` coefficients.
pub fn make_model_spec(
    gamma: f64,
    n: usize,
    order: usize,
    bound: f64,
    scale: f64,
    log_factor: bool,
) -> Result<ModelSpec> {
    if !(gamma > 0.5) || !gamma.is_finite() {
        return Err(invalid("gamma", format!("smoothness {gamma} must exceed 1/2")));
    }
    if (order as f64) < gamma {
        return Err(invalid("q", format!("spline order {order} is below smoothness {gamma}")));
    }
    if n < 2 {
        return Err(invalid("n", "sample size must be at least 2"));
    }
    if !(bound >= 0.0) || !bound.is_finite() {
        return Err(invalid("M", "box bound must be finite and nonnegative"));
    }
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(invalid("scale", "interval scale must be positive"));
    }
    let growth = (n as f64).powf(1.0 / (2.0 * gamma + 1.0));
    let intervals = ((scale * growth).round() as usize).max(1);
    let ratio = intervals as f64 / growth;
    if ratio < scale / 2.0 || ratio > 2.0 * scale {
        return Err(invalid(
            "scale",
            format!("K_n = {intervals} is not within a factor 2 of {scale}·n^(1/(2γ+1)) = {}", scale * growth),
        ));
    }
    Ok(ModelSpec {
        gamma,
        n,
        order,
        bound,
        scale,
        intervals,
        dim: order + intervals - 1,
        eps: target_rate(gamma, n, log_factor),
        log_factor,
        prior: ModelPrior::Slab,
    })
}

impl ModelSpec {
    /// A model on an explicit basis, outside the `K_n` schedule. Rate
    /// fields (`n`, `scale`, `eps`) are zero.
    pub fn with_basis(gamma: f64, order: usize, intervals: usize, bound: f64) -> Result<Self> {
        if order == 0 || intervals == 0 {
            return Err(invalid("basis", "order and intervals must be positive"));
        }
        if !(bound >= 0.0) || !bound.is_finite() {
            return Err(invalid("M", "box bound must be finite and nonnegative"));
        }
        Ok(Self {
            gamma,
            n: 0,
            order,
            bound,
            scale: 0.0,
            intervals,
            dim: order + intervals - 1,
            eps: 0.0,
            log_factor: false,
            prior: ModelPrior::Slab,
        })
    }

    /// Replaces the slab prior by a point mass at `theta`.
    pub fn with_atom(mut self, theta: &Theta) -> Result<Self> {
        if theta.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: theta.dim(),
            });
        }
        self.prior = ModelPrior::Atom(theta.values().to_vec());
        Ok(self)
    }

    pub fn basis(&self) -> Result<SplineBasis> {
        SplineBasis::new(self.order, self.intervals)
    }

    /// The support point when the prior is degenerate.
    pub fn atom(&self) -> Option<Theta> {
        match &self.prior {
            ModelPrior::Atom(v) => Some(Theta::from_free(&v[..v.len() - 1])),
            ModelPrior::Slab if self.bound == 0.0 => Some(Theta::from_free(&vec![0.0; self.dim - 1])),
            ModelPrior::Slab => None,
        }
    }
}

/// Prior weights `λ_γ` over a finite, increasing list of smoothness indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexPrior {
    indices: Vec<f64>,
    weights: Vec<f64>,
}

impl IndexPrior {
    pub fn new(indices: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if indices.is_empty() || indices.len() != weights.len() {
            return Err(invalid("weights", "need one positive weight per index"));
        }
        if !indices.windows(2).all(|w| w[0] < w[1]) {
            return Err(invalid("indices", "indices must be strictly increasing"));
        }
        if indices.iter().any(|&g| !(g > 0.5)) {
            return Err(invalid("indices", "indices must exceed 1/2"));
        }
        if weights.iter().any(|&w| !(w > 0.0)) {
            return Err(invalid("weights", "weights must be positive"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(invalid("weights", format!("weights sum to {total}, not 1")));
        }
        Ok(Self { indices, weights })
    }

    pub fn uniform(indices: Vec<f64>) -> Result<Self> {
        let w = vec![1.0 / indices.len() as f64; indices.len()];
        Self::new(indices, w)
    }

    pub fn indices(&self) -> &[f64] {
        &self.indices
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Uniform draw from the slab `S`: the first `J - 1` coordinates are uniform
/// on `[-M, M]`, the last is minus their sum, and draws with `|θ_J| > M` are
/// rejected.
pub fn sample_prior_theta<R: Rng + ?Sized>(spec: &ModelSpec, rng: &mut R) -> Result<Theta> {
    if spec.dim < 2 {
        return Err(invalid("J", "need at least two coefficients"));
    }
    if let Some(atom) = spec.atom() {
        return Ok(atom);
    }
    let m = spec.bound;
    let mut free = vec![0.0; spec.dim - 1];
    loop {
        for v in free.iter_mut() {
            *v = rng.random_range(-m..=m);
        }
        let last = -free.iter().sum::<f64>();
        if last.abs() <= m {
            return Theta::from_free(&free).with_box(m);
        }
    }
}

/// `ln` of a positive big integer, accurate to double precision.
fn ln_big(x: &BigUint) -> f64 {
    let shift = x.bits().saturating_sub(64);
    let top: BigUint = x >> shift;
    let mantissa = top.iter_u64_digits().next().unwrap_or(0) as f64;
    mantissa.ln() + shift as f64 * std::f64::consts::LN_2
}

/// `ln P(|Σ_{i≤d} (U_i - 1/2)| ≤ 1/2)` for i.i.d. uniforms on (0, 1), from the
/// Irwin–Hall distribution function evaluated in exact integer arithmetic.
pub fn ln_central_irwin_hall(d: usize) -> f64 {
    if d <= 1 {
        return 0.0;
    }
    // 2^d d! F(x) = Σ_{k ≤ x} (-1)^k C(d,k) (2x - 2k)^d with 2x an integer.
    let scaled_cdf = |two_x: i64| -> BigInt {
        let mut total = BigInt::zero();
        let mut binom = BigInt::one();
        let mut k: i64 = 0;
        while 2 * k <= two_x && k as usize <= d {
            let base = BigInt::from(two_x - 2 * k);
            let term = &binom * num_traits::pow(base, d);
            if k % 2 == 0 {
                total += term;
            } else {
                total -= term;
            }
            binom = binom * BigInt::from(d as i64 - k) / BigInt::from(k + 1);
            k += 1;
        }
        total
    };
    let di = d as i64;
    let num = scaled_cdf(di + 1) - scaled_cdf(di - 1);
    let mut den = BigUint::one() << d;
    for i in 2..=d {
        den *= BigUint::from(i);
    }
    let (sign, mag) = num.into_parts();
    debug_assert_eq!(sign, Sign::Plus);
    ln_big(&mag) - ln_big(&den)
}

/// `ln vol(S)` for the slab in `J` dimensions, measured on the hyperplane.
pub fn ln_slab_volume(dim: usize, bound: f64) -> f64 {
    let d = dim - 1;
    0.5 * (dim as f64).ln() + d as f64 * (2.0 * bound).ln() + ln_central_irwin_hall(d)
}

/// `ln vol` of the slab in the free coordinates `θ_1..θ_{J-1}`.
pub fn ln_free_slab_volume(dim: usize, bound: f64) -> f64 {
    let d = dim - 1;
    d as f64 * (2.0 * bound).ln() + ln_central_irwin_hall(d)
}

/// Log density of the slab prior with respect to `(J-1)`-dimensional
/// Lebesgue measure on the hyperplane: `-ln vol(S)` inside, `-∞` outside.
pub fn prior_log_density(spec: &ModelSpec, theta: &Theta) -> Result<f64> {
    if theta.dim() != spec.dim {
        return Err(Error::DimensionMismatch {
            expected: spec.dim,
            actual: theta.dim(),
        });
    }
    if let ModelPrior::Atom(_) = spec.prior {
        return Err(invalid("prior", "a point mass has no Lebesgue density"));
    }
    if spec.bound == 0.0 {
        return Err(invalid("prior", "a point mass has no Lebesgue density"));
    }
    if !theta.in_box(spec.bound) {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(-ln_slab_volume(spec.dim, spec.bound))
}

/// Which distance ball around `f0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ball {
    /// `{f : H(f0, f) ≤ ε}`.
    AHellinger,
    /// `{f : H_*(f0, f) ≤ ε}`.
    WStar,
}

/// A Monte-Carlo probability with its binomial standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MassEstimate {
    pub estimate: f64,
    pub std_error: f64,
    pub draws: usize,
}

impl MassEstimate {
    fn from_hits(hits: usize, draws: usize) -> Self {
        let p = hits as f64 / draws as f64;
        Self {
            estimate: p,
            std_error: (p * (1.0 - p) / draws as f64).sqrt(),
            draws,
        }
    }
}

/// Prior mass of a distance ball around `f0`, estimated from `draws`
/// prior samples.
pub fn prior_ball_mass<R: Rng + ?Sized>(
    spec: &ModelSpec,
    f0: &dyn Density,
    eps: f64,
    ball: Ball,
    draws: usize,
    rng: &mut R,
) -> Result<MassEstimate> {
    Ok(prior_ball_masses(spec, f0, &[eps], ball, draws, rng)?[0])
}

/// Ball masses for several radii from one shared set of prior draws.
pub fn prior_ball_masses<R: Rng + ?Sized>(
    spec: &ModelSpec,
    f0: &dyn Density,
    radii: &[f64],
    ball: Ball,
    draws: usize,
    rng: &mut R,
) -> Result<Vec<MassEstimate>> {
    if draws == 0 {
        return Err(invalid("draws", "need at least one draw"));
    }
    let basis = Arc::new(spec.basis()?);
    let grid = ReferenceGrid::new(basis.clone(), f0)?;
    let mut hits = vec![0usize; radii.len()];
    for _ in 0..draws {
        let theta = sample_prior_theta(spec, rng)?;
        let c = log_norm_raw(&basis, theta.values())?;
        let d = grid.distances(theta.values(), c)?;
        let dist = match ball {
            Ball::AHellinger => d.hellinger,
            Ball::WStar => d.hellinger_star,
        };
        for (h, &r) in hits.iter_mut().zip(radii) {
            if dist <= r {
                *h += 1;
            }
        }
    }
    Ok(hits
        .into_iter()
        .map(|h| MassEstimate::from_hits(h, draws))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::{LogSplineDensity, StepDensity, Uniform};
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn spec_arithmetic() {
        let s = make_model_spec(1.0, 1000, 4, 2.0, 1.0, false).unwrap();
        assert_eq!((s.intervals, s.dim), (10, 13));
        assert_abs_diff_eq!(s.eps, 0.1, epsilon = 1e-12);

        let s = make_model_spec(2.0, 1000, 4, 2.0, 1.0, false).unwrap();
        assert_eq!((s.intervals, s.dim), (4, 7));
        assert_abs_diff_eq!(s.eps, 1000f64.powf(-0.4), epsilon = 1e-15);
        assert_abs_diff_eq!(s.eps, 0.0631, epsilon = 1e-4);

        let s = make_model_spec(1.0, 1000, 4, 2.0, 1.0, true).unwrap();
        assert_abs_diff_eq!(s.eps, 0.1 * 1000f64.ln().sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(s.eps, 0.2628, epsilon = 1e-4);
    }

    #[test]
    fn spec_validation() {
        assert!(make_model_spec(0.5, 100, 4, 2.0, 1.0, false).is_err());
        assert!(make_model_spec(2.5, 100, 2, 2.0, 1.0, false).is_err());
        assert!(make_model_spec(1.0, 1, 4, 2.0, 1.0, false).is_err());
        assert!(make_model_spec(1.0, 100, 4, 2.0, 0.0, false).is_err());
        assert!(make_model_spec(1.0, 100, 4, 2.0, 0.05, false).is_err());
    }

    #[test]
    fn interval_count_tracks_growth_rate() {
        for &gamma in &[0.75, 1.0, 1.5, 2.0, 3.0] {
            for n in [2usize, 10, 100, 1000, 16384, 100_000] {
                let s = make_model_spec(gamma, n, 4, 1.0, 1.0, false).unwrap();
                let ratio = s.intervals as f64 / (n as f64).powf(1.0 / (2.0 * gamma + 1.0));
                assert!((0.5..=2.0).contains(&ratio));
                assert_eq!(s.dim, 4 + s.intervals - 1);
            }
        }
    }

    #[test]
    fn index_prior_validation() {
        assert!(IndexPrior::new(vec![1.0, 2.0], vec![0.5, 0.5]).is_ok());
        assert!(IndexPrior::new(vec![2.0, 1.0], vec![0.5, 0.5]).is_err());
        assert!(IndexPrior::new(vec![0.5, 1.0], vec![0.5, 0.5]).is_err());
        assert!(IndexPrior::new(vec![1.0, 2.0], vec![0.5, 0.6]).is_err());
        assert!(IndexPrior::new(vec![1.0, 2.0], vec![1.0, 0.0]).is_err());
    }

    #[test]
    fn two_dimensional_slab_is_a_segment() {
        let spec = ModelSpec::with_basis(1.0, 1, 2, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let t = sample_prior_theta(&spec, &mut rng).unwrap();
            assert_eq!(t.values()[0], -t.values()[1]);
            assert!(t.values()[0].abs() <= 1.0);
        }
        let t = Theta::new(vec![0.3, -0.3]).unwrap();
        assert_abs_diff_eq!(
            prior_log_density(&spec, &t).unwrap(),
            -(2.0 * 2f64.sqrt()).ln(),
            epsilon = 1e-14
        );
        let outside = Theta::new(vec![1.5, -1.5]).unwrap();
        assert_eq!(prior_log_density(&spec, &outside).unwrap(), f64::NEG_INFINITY);
    }

    #[test]
    fn prior_density_is_constant_on_the_slab() {
        let spec = ModelSpec::with_basis(1.0, 4, 6, 2.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = sample_prior_theta(&spec, &mut rng).unwrap();
        let b = sample_prior_theta(&spec, &mut rng).unwrap();
        assert_eq!(
            prior_log_density(&spec, &a).unwrap(),
            prior_log_density(&spec, &b).unwrap()
        );
    }

    #[test]
    fn prior_draws_are_centred_and_feasible() {
        let spec = ModelSpec::with_basis(1.0, 4, 3, 2.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 100_000;
        let mut sum = vec![0.0; spec.dim];
        let mut sq = vec![0.0; spec.dim];
        for _ in 0..n {
            let t = sample_prior_theta(&spec, &mut rng).unwrap();
            assert!(t.sup_norm() <= 2.0);
            assert!(t.values().iter().sum::<f64>().abs() <= 1e-12);
            for (j, v) in t.values().iter().enumerate() {
                sum[j] += v;
                sq[j] += v * v;
            }
        }
        for j in 0..spec.dim {
            let mean = sum[j] / n as f64;
            let sd = (sq[j] / n as f64 - mean * mean).sqrt();
            assert!(mean.abs() < 3.0 * sd / (n as f64).sqrt(), "coordinate {j}");
        }
    }

    /// Brute-force volume of the free-coordinate slab by Monte Carlo.
    #[test]
    fn irwin_hall_probability_matches_simulation() {
        assert_eq!(ln_central_irwin_hall(1), 0.0);
        // d = 2: P(|U1 + U2 - 1| ≤ 1/2) = 3/4
        assert_abs_diff_eq!(ln_central_irwin_hall(2).exp(), 0.75, epsilon = 1e-15);
        // d = 3: F(2) - F(1) = 5/6 - 1/6
        assert_abs_diff_eq!(ln_central_irwin_hall(3).exp(), 2.0 / 3.0, epsilon = 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for d in [5usize, 12, 27] {
            let n = 200_000;
            let hits = (0..n)
                .filter(|_| {
                    let s: f64 = (0..d).map(|_| rng.random::<f64>() - 0.5).sum();
                    s.abs() <= 0.5
                })
                .count();
            let p = hits as f64 / n as f64;
            let exact = ln_central_irwin_hall(d).exp();
            assert!((p - exact).abs() < 4.0 * (exact * (1.0 - exact) / n as f64).sqrt());
        }
        // large d approaches the normal approximation 2Φ(√(3/d)) - 1
        let d = 200;
        let approx = 0.5 * (3.0 / d as f64).sqrt() * 2.0 / (2.0 * std::f64::consts::PI).sqrt() * 2.0;
        assert!((ln_central_irwin_hall(d).exp() / approx - 1.0).abs() < 0.02);
    }

    #[test]
    fn ball_mass_edge_cases() {
        let spec = ModelSpec::with_basis(1.0, 2, 3, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = prior_ball_mass(&spec, &Uniform, 1.5, Ball::AHellinger, 200, &mut rng).unwrap();
        assert_eq!(m.estimate, 1.0);
        let outside = StepDensity::from_probabilities(&[0.05, 0.9, 0.05]).unwrap();
        let m = prior_ball_mass(&spec, &outside, 0.0, Ball::WStar, 200, &mut rng).unwrap();
        assert_eq!(m.estimate, 0.0);
    }

    #[test]
    fn ball_mass_matches_one_dimensional_grid() {
        // J = 2, M = 1: θ = (t, -t), t uniform on [-1, 1]; H to the uniform
        // density is available in closed form for the step family.
        let spec = ModelSpec::with_basis(1.0, 1, 2, 1.0).unwrap();
        let eps = 0.1;
        let grid_points = 200_001;
        let inside = (0..grid_points)
            .filter(|&i| {
                let t = -1.0 + 2.0 * i as f64 / (grid_points - 1) as f64;
                let c = t.cosh().ln();
                let (a, b) = ((t - c).exp(), (-t - c).exp());
                let h2 = 0.5 * ((a.sqrt() - 1.0).powi(2) + (b.sqrt() - 1.0).powi(2));
                h2.sqrt() <= eps
            })
            .count();
        let oracle = inside as f64 / grid_points as f64;
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let m = prior_ball_mass(&spec, &Uniform, eps, Ball::AHellinger, 20_000, &mut rng).unwrap();
        assert!((m.estimate - oracle).abs() <= 3.0 * m.std_error, "{} vs {oracle}", m.estimate);
    }

    #[test]
    fn ball_masses_are_monotone_and_sandwiched() {
        let spec = ModelSpec::with_basis(1.0, 3, 4, 1.0).unwrap();
        let basis = Arc::new(spec.basis().unwrap());
        let f0 = LogSplineDensity::new(basis.clone(), Theta::project(&[0.3, -0.2, 0.1, 0.0, -0.4, 0.2]).unwrap())
            .unwrap();
        let radii: Vec<f64> = (1..=20).map(|k| 0.02 * k as f64).collect();
        let seed = 7;
        let a = prior_ball_masses(&spec, &f0, &radii, Ball::AHellinger, 3000, &mut ChaCha8Rng::seed_from_u64(seed))
            .unwrap();
        assert!(a.windows(2).all(|w| w[0].estimate <= w[1].estimate));

        // Per-draw sandwich W(ε/B) ⊂ C(ε) ⊂ W(Bε): f0/f_θ lies in
        // [e^{-4M}, e^{4M}], so the weight in H_* lies in [1/3, (2/3)e^{2M} + 1/3].
        let m = spec.bound;
        let b = ((2.0 / 3.0) * (2.0 * m).exp() + 1.0 / 3.0).max(3.0).sqrt();
        let grid = ReferenceGrid::new(basis.clone(), &f0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..500 {
            let t = sample_prior_theta(&spec, &mut rng).unwrap();
            let c = log_norm_raw(&basis, t.values()).unwrap();
            let d = grid.distances(t.values(), c).unwrap();
            for &eps in &radii {
                if d.hellinger_star <= eps / b {
                    assert!(d.hellinger <= eps);
                }
                if d.hellinger <= eps {
                    assert!(d.hellinger_star <= b * eps);
                }
            }
        }
    }
}
