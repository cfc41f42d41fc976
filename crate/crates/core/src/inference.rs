//! Posterior computation for one spline model and for the hierarchical
//! mixture over smoothness indices.
//!
//! All computations use the plain likelihood `∏ f_θ(X_i)`; posterior
//! ratios do not depend on the `∏ f_0(X_i)` factor of the likelihood ratio.
//! The log likelihood of a log-spline model depends on the data only through
//! `n` and `S_j = Σ_i B_j(X_i)`: `ℓ(θ) = ⟨S, θ⟩ - n c(θ)`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::density::{log_norm_raw, normalizer_moments, Density, Theta};
use crate::error::{invalid, Error, Result};
use crate::metrics::ReferenceGrid;
use crate::priors::{ln_free_slab_volume, IndexPrior, ModelSpec};
use crate::splines::SplineBasis;

/// Sample size and basis sums `S_j = Σ_i B_j(X_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SufficientStats {
    pub n: usize,
    pub sums: Vec<f64>,
}

/// Accumulates basis sums over the data in sorted order, so the result is
/// bitwise invariant under permutations of the data.
pub fn sufficient_stats(basis: &SplineBasis, data: &[f64]) -> Result<SufficientStats> {
    if let Some(&x) = data.iter().find(|x| !(0.0..=1.0).contains(*x)) {
        return Err(Error::OutOfDomain(x));
    }
    let mut sorted = data.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q = basis.order();
    let mut sums = vec![0.0; basis.dimension()];
    let mut local = vec![0.0; q];
    for &x in &sorted {
        let first = basis.eval_nonzero(x, &mut local);
        for (s, b) in sums[first..first + q].iter_mut().zip(&local) {
            *s += b;
        }
    }
    Ok(SufficientStats {
        n: data.len(),
        sums,
    })
}

/// Log likelihood `⟨S, θ⟩ - n c(θ)` of one model.
#[derive(Debug, Clone)]
pub struct LogLikelihood {
    basis: Arc<SplineBasis>,
    stats: SufficientStats,
}

impl LogLikelihood {
    pub fn new(basis: Arc<SplineBasis>, data: &[f64]) -> Result<Self> {
        let stats = sufficient_stats(&basis, data)?;
        Ok(Self { basis, stats })
    }

    pub fn basis(&self) -> &Arc<SplineBasis> {
        &self.basis
    }

    pub fn stats(&self) -> &SufficientStats {
        &self.stats
    }

    pub fn value(&self, theta: &[f64]) -> f64 {
        let linear: f64 = self.stats.sums.iter().zip(theta).map(|(s, t)| s * t).sum();
        let c = log_norm_raw(&self.basis, theta).expect("dimension checked at construction");
        linear - self.stats.n as f64 * c
    }

    /// Gradient `S - n E_θ[B]` and the covariance `Cov_θ[B]` (so the Hessian
    /// is `-n` times it).
    fn derivatives(&self, theta: &[f64]) -> (Vec<f64>, DMatrix<f64>) {
        let m = normalizer_moments(&self.basis, theta, true).expect("dimension checked");
        let n = self.stats.n as f64;
        let grad = self
            .stats
            .sums
            .iter()
            .zip(&m.mean)
            .map(|(s, e)| s - n * e)
            .collect();
        (grad, m.cov.expect("requested"))
    }

    /// Negative Hessian in the free coordinates `θ_1..θ_{J-1}` (with
    /// `θ_J = -Σ θ_j`).
    fn free_precision(&self, theta: &[f64]) -> DMatrix<f64> {
        let (_, cov) = self.derivatives(theta);
        let j = theta.len();
        let n = self.stats.n as f64;
        reduce(&cov, &(0..j).collect::<Vec<_>>()) * n
    }
}

/// `Zᵀ A Z` for `Z = [I; -1ᵀ]` acting on the coordinates `idx`, the last of
/// which is eliminated.
fn reduce(a: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    let d = idx.len() - 1;
    let l = idx[d];
    DMatrix::from_fn(d, d, |r, c| {
        let (i, k) = (idx[r], idx[c]);
        a[(i, k)] - a[(i, l)] - a[(l, k)] + a[(l, l)]
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapOptions {
    pub max_iter: usize,
    /// Bound on the KKT residual of the returned point.
    pub tol: f64,
}

impl Default for MapOptions {
    fn default() -> Self {
        Self {
            max_iter: 200,
            tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapResult {
    pub theta: Theta,
    pub iterations: usize,
    pub kkt_residual: f64,
    pub log_likelihood: f64,
}

/// Maximizer of the log likelihood over `Θ_{0,M}`.
pub fn map_estimate(spec: &ModelSpec, data: &[f64]) -> Result<Theta> {
    Ok(map_estimate_from(spec, data, None, MapOptions::default())?.theta)
}

/// Active-set projected Newton ascent on the sum-zero hyperplane with box
/// constraints, started from `start` (default 0).
///
/// Each iteration computes the multiplier `ν` of the sum constraint as the
/// mean gradient over the free coordinates. When the free coordinates are
/// stationary, the bound constraint with the largest multiplier of the wrong
/// sign is released; otherwise a Newton step is taken in the null space of
/// the constraint restricted to the free coordinates, truncated at the first
/// bound it meets and backtracked until the Armijo condition holds.
pub fn map_estimate_from(
    spec: &ModelSpec,
    data: &[f64],
    start: Option<&Theta>,
    opts: MapOptions,
) -> Result<MapResult> {
    if data.is_empty() {
        return Err(invalid("data", "MAP estimation needs at least one observation"));
    }
    let basis = Arc::new(spec.basis()?);
    let ll = LogLikelihood::new(basis, data)?;
    if let Some(atom) = spec.atom() {
        let log_likelihood = ll.value(atom.values());
        return Ok(MapResult {
            theta: atom,
            iterations: 0,
            kkt_residual: 0.0,
            log_likelihood,
        });
    }
    map_with_likelihood(&ll, spec.bound, start, opts)
}

fn map_with_likelihood(
    ll: &LogLikelihood,
    bound: f64,
    start: Option<&Theta>,
    opts: MapOptions,
) -> Result<MapResult> {
    let j = ll.basis.dimension();
    let mut theta = match start {
        Some(t) => {
            if t.dim() != j {
                return Err(Error::DimensionMismatch {
                    expected: j,
                    actual: t.dim(),
                });
            }
            if !t.in_box(bound) {
                return Err(invalid("start", "starting point lies outside the box"));
            }
            t.values().to_vec()
        }
        None => vec![0.0; j],
    };
    // 0 free, +1 at upper bound, -1 at lower bound
    let mut state: Vec<i8> = theta
        .iter()
        .map(|&t| {
            if t >= bound {
                1
            } else if t <= -bound {
                -1
            } else {
                0
            }
        })
        .collect();

    let mut value = ll.value(&theta);
    let mut best = (theta.clone(), f64::INFINITY);
    for iter in 0..opts.max_iter {
        let (grad, cov) = ll.derivatives(&theta);
        let free: Vec<usize> = (0..j).filter(|&i| state[i] == 0).collect();
        let nu = if free.is_empty() {
            // any ν between the largest lower-bound and smallest upper-bound
            // gradient satisfies stationarity
            let lo = (0..j)
                .filter(|&i| state[i] < 0)
                .map(|i| grad[i])
                .fold(f64::NEG_INFINITY, f64::max);
            let hi = (0..j)
                .filter(|&i| state[i] > 0)
                .map(|i| grad[i])
                .fold(f64::INFINITY, f64::min);
            match (lo.is_finite(), hi.is_finite()) {
                (true, true) => 0.5 * (lo + hi),
                (true, false) => lo,
                (false, true) => hi,
                (false, false) => 0.0,
            }
        } else {
            free.iter().map(|&i| grad[i]).sum::<f64>() / free.len() as f64
        };
        let free_residual = free
            .iter()
            .map(|&i| (grad[i] - nu).abs())
            .fold(0.0, f64::max);
        let (worst, violation) = (0..j)
            .filter(|&i| state[i] != 0)
            .map(|i| {
                let v = if state[i] > 0 { nu - grad[i] } else { grad[i] - nu };
                (i, v.max(0.0))
            })
            .fold((usize::MAX, 0.0), |acc, x| if x.1 > acc.1 { x } else { acc });
        let kkt = free_residual.max(violation);
        if kkt < best.1 {
            best = (theta.clone(), kkt);
        }
        if kkt <= opts.tol {
            return Ok(MapResult {
                theta: finish_theta(theta, bound)?,
                iterations: iter,
                kkt_residual: kkt,
                log_likelihood: value,
            });
        }
        if (free_residual <= opts.tol || free.len() <= 1) && violation > 0.0 {
            state[worst] = 0;
            continue;
        }
        if free.len() <= 1 {
            break;
        }

        // Newton direction in the null space of Σ_{free} δ = 0.
        let h = reduce(&cov, &free) * ll.stats.n as f64;
        let last = free[free.len() - 1];
        let g = DVector::from_iterator(
            free.len() - 1,
            free[..free.len() - 1].iter().map(|&i| grad[i] - grad[last]),
        );
        let z = solve_spd(&h, &g)?;
        let mut delta = vec![0.0; j];
        for (a, &i) in free[..free.len() - 1].iter().enumerate() {
            delta[i] = z[a];
        }
        delta[last] = -z.sum();

        let mut t_max = f64::INFINITY;
        let mut blocking = usize::MAX;
        for &i in &free {
            let step = if delta[i] > 0.0 {
                (bound - theta[i]) / delta[i]
            } else if delta[i] < 0.0 {
                (-bound - theta[i]) / delta[i]
            } else {
                f64::INFINITY
            };
            if step < t_max {
                t_max = step;
                blocking = i;
            }
        }
        let slope: f64 = grad.iter().zip(&delta).map(|(g, d)| g * d).sum();
        let mut t = t_max.min(1.0);
        let hits_bound = t_max <= 1.0;
        let mut trial = vec![0.0; j];
        let mut accepted = false;
        let mut trial_value = value;
        for _ in 0..60 {
            for i in 0..j {
                trial[i] = theta[i] + t * delta[i];
            }
            trial_value = ll.value(&trial);
            // near the optimum the predicted gain drops below the rounding
            // level of the objective; accept steps that do not lose more
            let noise = 1e-13 * (1.0 + value.abs());
            if trial_value >= value + 1e-4 * t * slope
                || (slope <= noise && trial_value >= value - noise)
            {
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
        if hits_bound && t == t_max {
            state[blocking] = if delta[blocking] > 0.0 { 1 } else { -1 };
        }
        for i in 0..j {
            if state[i] != 0 {
                trial[i] = state[i] as f64 * bound;
            } else if trial[i].abs() >= bound {
                trial[i] = trial[i].signum() * bound;
                state[i] = trial[i].signum() as i8;
            }
        }
        rezero(&mut trial, &state);
        theta = trial;
        value = trial_value;
    }
    Err(Error::NoConvergence {
        iterations: opts.max_iter,
        residual: best.1,
        best: best.0,
    })
}

/// Spreads the rounding residue of `Σθ` over the free coordinates.
fn rezero(theta: &mut [f64], state: &[i8]) {
    let free: Vec<usize> = (0..theta.len()).filter(|&i| state[i] == 0).collect();
    if free.is_empty() {
        return;
    }
    let r: f64 = theta.iter().sum::<f64>() / free.len() as f64;
    for i in free {
        theta[i] -= r;
    }
}

fn finish_theta(theta: Vec<f64>, bound: f64) -> Result<Theta> {
    let clipped: Vec<f64> = theta.iter().map(|t| t.clamp(-bound, bound)).collect();
    Theta::new(clipped)?.with_box(bound)
}

fn solve_spd(h: &DMatrix<f64>, g: &DVector<f64>) -> Result<DVector<f64>> {
    if let Some(ch) = h.clone().cholesky() {
        return Ok(ch.solve(g));
    }
    let ridge = 1e-10 * h.diagonal().amax().max(1.0);
    let regular = h + DMatrix::identity(h.nrows(), h.ncols()) * ridge;
    regular
        .cholesky()
        .map(|ch| ch.solve(g))
        .ok_or_else(|| Error::Numerical("reduced Hessian is not positive definite".into()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McmcOptions {
    /// Fraction of iterations discarded as burn-in.
    pub burn_in_fraction: f64,
    pub target_acceptance: f64,
    /// Iterations between covariance updates during burn-in.
    pub adapt_interval: usize,
}

impl Default for McmcOptions {
    fn default() -> Self {
        Self {
            burn_in_fraction: 0.5,
            target_acceptance: 0.234,
            adapt_interval: 100,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarginalEstimate {
    pub log_value: f64,
    /// Delta-method standard error of `log_value`.
    pub std_error: f64,
    pub ess: f64,
    pub samples: usize,
}

/// Draws from one model's posterior together with its summaries.
#[derive(Debug, Clone)]
pub struct PosteriorRun {
    pub spec: ModelSpec,
    pub draws: Vec<Theta>,
    pub log_marginal: Option<MarginalEstimate>,
    pub map: Theta,
    pub acceptance_rate: f64,
    pub seed: u64,
}

/// Free coordinates of θ.
fn free_part(theta: &[f64]) -> Vec<f64> {
    theta[..theta.len() - 1].to_vec()
}

fn full_from_free(free: &[f64], out: &mut [f64]) {
    let d = free.len();
    out[..d].copy_from_slice(free);
    out[d] = -free.iter().sum::<f64>();
}

fn lower_cholesky(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    m.clone()
        .cholesky()
        .map(|c| c.l())
        .ok_or_else(|| Error::Numerical("covariance is not positive definite".into()))
}

/// Covariance of the Laplace approximation in free coordinates.
fn laplace_covariance(ll: &LogLikelihood, theta: &[f64]) -> Result<DMatrix<f64>> {
    let p = ll.free_precision(theta);
    let d = p.nrows();
    let ch = p
        .cholesky()
        .ok_or_else(|| Error::Numerical("posterior precision is not positive definite".into()))?;
    Ok(ch.solve(&DMatrix::identity(d, d)))
}

/// Adaptive random-walk Metropolis on the free coordinates, started at the
/// MAP with the Laplace covariance. During burn-in the proposal scale is
/// tuned towards the target acceptance rate and the covariance is refreshed
/// from the chain history; both are frozen afterwards. Moves leaving the box
/// have zero prior density and are rejected.
pub fn posterior_sample(
    spec: &ModelSpec,
    data: &[f64],
    draws: usize,
    seed: u64,
    opts: McmcOptions,
) -> Result<PosteriorRun> {
    if draws == 0 {
        return Err(invalid("draws", "need at least one retained draw"));
    }
    if !(0.0..1.0).contains(&opts.burn_in_fraction) {
        return Err(invalid("burn_in_fraction", "must lie in [0, 1)"));
    }
    let map = map_estimate_from(spec, data, None, MapOptions::default())?.theta;
    if spec.atom().is_some() {
        return Ok(PosteriorRun {
            spec: spec.clone(),
            draws: vec![map.clone(); draws],
            log_marginal: None,
            map,
            acceptance_rate: 1.0,
            seed,
        });
    }
    let basis = Arc::new(spec.basis()?);
    let ll = LogLikelihood::new(basis, data)?;
    let bound = spec.bound;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let d = spec.dim - 1;
    let total = ((draws as f64) / (1.0 - opts.burn_in_fraction)).ceil() as usize;
    let burn = total - draws;

    let laplace = laplace_covariance(&ll, map.values())?;
    let mut chol = lower_cholesky(&laplace)?;
    let mut log_scale = (2.38 / (d as f64).sqrt()).ln();

    let mut full = vec![0.0; spec.dim];
    let target = |free: &[f64], full: &mut [f64]| -> f64 {
        full_from_free(free, full);
        if full.iter().any(|t| t.abs() > bound) {
            f64::NEG_INFINITY
        } else {
            ll.value(full)
        }
    };

    let mut current = free_part(map.values());
    let mut current_lp = target(&current, &mut full);
    let mut proposal = vec![0.0; d];
    let mut z = vec![0.0; d];

    // running moments of the burn-in history
    let collect_from = burn / 4;
    let mut count = 0.0;
    let mut mean = DVector::<f64>::zeros(d);
    let mut scatter = DMatrix::<f64>::zeros(d, d);
    let prior_weight = (10 * d).max(50) as f64;

    let mut kept = Vec::with_capacity(draws);
    let mut accepted_after_burn = 0usize;
    let scale_factor = |ls: f64| ls.exp();
    for iter in 0..total {
        for v in z.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        let s = scale_factor(log_scale);
        for r in 0..d {
            let mut step = 0.0;
            for c in 0..=r {
                step += chol[(r, c)] * z[c];
            }
            proposal[r] = current[r] + s * step;
        }
        let lp = target(&proposal, &mut full);
        let log_ratio = lp - current_lp;
        let accept_prob = if log_ratio >= 0.0 { 1.0 } else { log_ratio.exp() };
        let u: f64 = rng.random();
        let accept = u < accept_prob;
        if accept {
            current.copy_from_slice(&proposal);
            current_lp = lp;
        }
        if iter < burn {
            let rate = ((iter as f64 / 10.0) + 1.0).powf(-0.6);
            log_scale += rate * (accept_prob - opts.target_acceptance);
            if iter >= collect_from {
                count += 1.0;
                let x = DVector::from_column_slice(&current);
                let delta = &x - &mean;
                mean += &delta / count;
                let delta2 = &x - &mean;
                scatter += &delta * delta2.transpose();
                if (iter + 1 - collect_from).is_multiple_of(opts.adapt_interval) && count >= (2 * d) as f64 {
                    let blended = (&scatter + &laplace * prior_weight) / (count + prior_weight);
                    if let Ok(l) = lower_cholesky(&blended) {
                        chol = l;
                    }
                }
            }
        } else {
            if accept {
                accepted_after_burn += 1;
            }
            let mut theta = vec![0.0; spec.dim];
            full_from_free(&current, &mut theta);
            kept.push(Theta::from_free(&theta[..d]));
        }
    }
    let acceptance_rate = accepted_after_burn as f64 / draws as f64;
    if accepted_after_burn == 0 {
        return Err(Error::ChainStuck);
    }
    Ok(PosteriorRun {
        spec: spec.clone(),
        draws: kept,
        log_marginal: None,
        map,
        acceptance_rate,
        seed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarginalOptions {
    pub samples: usize,
    /// Estimates with a smaller effective sample size are rejected.
    pub min_ess: f64,
    /// Log of a constant multiplying the prior, 0 for a probability measure.
    pub log_prior_mass: f64,
}

impl Default for MarginalOptions {
    fn default() -> Self {
        Self {
            samples: 2000,
            min_ess: 10.0,
            log_prior_mass: 0.0,
        }
    }
}

/// `log ∫ ∏_i f_θ(X_i) Π(dθ)` by importance sampling.
pub fn log_marginal<R: Rng + ?Sized>(
    spec: &ModelSpec,
    data: &[f64],
    samples: usize,
    rng: &mut R,
) -> Result<MarginalEstimate> {
    log_marginal_with(
        spec,
        data,
        rng,
        MarginalOptions {
            samples,
            ..MarginalOptions::default()
        },
    )
}

/// Importance sampling with the Laplace approximation as proposal: a
/// Gaussian in the free coordinates centred at the MAP with covariance equal
/// to the inverse negative Hessian. Proposals outside the slab carry zero
/// prior density, which makes the effective proposal the box-truncated
/// Gaussian. Weights are aggregated with log-sum-exp.
pub fn log_marginal_with<R: Rng + ?Sized>(
    spec: &ModelSpec,
    data: &[f64],
    rng: &mut R,
    opts: MarginalOptions,
) -> Result<MarginalEstimate> {
    if opts.samples < 100 {
        return Err(invalid("samples", "importance sampling needs at least 100 samples"));
    }
    let basis = Arc::new(spec.basis()?);
    let ll = LogLikelihood::new(basis, data)?;
    if let Some(atom) = spec.atom() {
        return Ok(MarginalEstimate {
            log_value: ll.value(atom.values()) + opts.log_prior_mass,
            std_error: 0.0,
            ess: opts.samples as f64,
            samples: opts.samples,
        });
    }
    let map = if data.is_empty() {
        vec![0.0; spec.dim]
    } else {
        map_with_likelihood(&ll, spec.bound, None, MapOptions::default())?
            .theta
            .into_values()
    };
    let d = spec.dim - 1;
    let cov = if data.is_empty() {
        DMatrix::identity(d, d) * spec.bound.powi(2)
    } else {
        laplace_covariance(&ll, &map)?
    };
    let chol = lower_cholesky(&cov)?;
    let log_det: f64 = (0..d).map(|i| chol[(i, i)].ln()).sum();
    let log_prior = -ln_free_slab_volume(spec.dim, spec.bound) + opts.log_prior_mass;
    let centre = free_part(&map);
    let norm_const = -0.5 * d as f64 * (2.0 * std::f64::consts::PI).ln() - log_det;

    let mut log_w = Vec::with_capacity(opts.samples);
    let mut z = vec![0.0; d];
    let mut free = vec![0.0; d];
    let mut full = vec![0.0; spec.dim];
    for _ in 0..opts.samples {
        for v in z.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        for r in 0..d {
            let mut step = 0.0;
            for c in 0..=r {
                step += chol[(r, c)] * z[c];
            }
            free[r] = centre[r] + step;
        }
        full_from_free(&free, &mut full);
        if full.iter().any(|t| t.abs() > spec.bound) {
            log_w.push(f64::NEG_INFINITY);
            continue;
        }
        let log_q = norm_const - 0.5 * z.iter().map(|v| v * v).sum::<f64>();
        log_w.push(ll.value(&full) + log_prior - log_q);
    }
    summarize_weights(&log_w, opts.min_ess)
}

fn summarize_weights(log_w: &[f64], min_ess: f64) -> Result<MarginalEstimate> {
    let n = log_w.len() as f64;
    let max = log_w.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    if !max.is_finite() {
        return Err(Error::LowEffectiveSampleSize { ess: 0.0, min: min_ess });
    }
    let w: Vec<f64> = log_w.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = w.iter().sum();
    let sum_sq: f64 = w.iter().map(|v| v * v).sum();
    let ess = sum * sum / sum_sq;
    if ess < min_ess {
        return Err(Error::LowEffectiveSampleSize { ess, min: min_ess });
    }
    let mean = sum / n;
    let var = w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(MarginalEstimate {
        log_value: max + mean.ln(),
        std_error: (var / n).sqrt() / mean,
        ess,
        samples: log_w.len(),
    })
}

/// MAP, posterior draws and marginal likelihood of one model. The chain
/// uses `seed`; the importance sampler uses a stream derived from it.
pub fn fit_model(
    spec: &ModelSpec,
    data: &[f64],
    draws: usize,
    is_samples: usize,
    seed: u64,
    opts: McmcOptions,
) -> Result<PosteriorRun> {
    let mut run = posterior_sample(spec, data, draws, seed, opts)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    run.log_marginal = Some(log_marginal(spec, data, is_samples, &mut rng)?);
    Ok(run)
}

/// Posterior probabilities of the model indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexPosterior {
    pub indices: Vec<f64>,
    /// `ln λ_γ + ln m_γ`.
    pub log_weights: Vec<f64>,
    pub probabilities: Vec<f64>,
}

impl IndexPosterior {
    /// Normalizes `λ_γ m_γ` given log marginal likelihoods aligned with the
    /// prior's indices.
    pub fn from_log_marginals(prior: &IndexPrior, log_marginals: &[f64]) -> Result<Self> {
        if log_marginals.len() != prior.len() {
            return Err(Error::DimensionMismatch {
                expected: prior.len(),
                actual: log_marginals.len(),
            });
        }
        let log_weights: Vec<f64> = prior
            .weights()
            .iter()
            .zip(log_marginals)
            .map(|(w, m)| w.ln() + m)
            .collect();
        let max = log_weights.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        if !max.is_finite() {
            return Err(Error::ZeroEvidence);
        }
        let raw: Vec<f64> = log_weights.iter().map(|v| (v - max).exp()).collect();
        let total: f64 = raw.iter().sum();
        Ok(Self {
            indices: prior.indices().to_vec(),
            log_weights,
            probabilities: raw.iter().map(|r| r / total).collect(),
        })
    }

    /// Position of the most probable index; ties go to the smallest γ.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.probabilities.iter().enumerate() {
            if p > self.probabilities[best] {
                best = i;
            }
        }
        best
    }

    /// Posterior mass of the indices in `set`.
    pub fn mass_of(&self, set: &[f64]) -> f64 {
        self.indices
            .iter()
            .zip(&self.probabilities)
            .filter(|(g, _)| set.contains(g))
            .map(|(_, p)| p)
            .sum()
    }

    /// `ln BF = ln(λ₂ m₂) - ln(λ₁ m₁)` for a two-index posterior.
    pub fn log_bayes_factor(&self) -> Result<f64> {
        if self.indices.len() != 2 {
            return Err(invalid("models", "a Bayes factor compares exactly two models"));
        }
        if self.log_weights[0] == f64::NEG_INFINITY {
            return Err(Error::ZeroEvidence);
        }
        Ok(self.log_weights[1] - self.log_weights[0])
    }
}

fn check_alignment(models: &[ModelSpec], prior: &IndexPrior) -> Result<()> {
    if models.len() != prior.len() {
        return Err(Error::DimensionMismatch {
            expected: prior.len(),
            actual: models.len(),
        });
    }
    if models.iter().zip(prior.indices()).any(|(m, &g)| m.gamma != g) {
        return Err(invalid("models", "models must be listed in the order of the prior's indices"));
    }
    Ok(())
}

/// Posterior over the model indices. Marginal likelihoods are estimated in
/// model order from `rng`.
pub fn index_posterior<R: Rng + ?Sized>(
    models: &[ModelSpec],
    prior: &IndexPrior,
    data: &[f64],
    samples: usize,
    rng: &mut R,
) -> Result<IndexPosterior> {
    check_alignment(models, prior)?;
    let marginals = models
        .iter()
        .map(|m| match log_marginal(m, data, samples, rng) {
            Ok(e) => Ok(e.log_value),
            Err(Error::OutOfDomain(_)) => Ok(f64::NEG_INFINITY),
            Err(e) => Err(e),
        })
        .collect::<Result<Vec<_>>>()?;
    IndexPosterior::from_log_marginals(prior, &marginals)
}

/// `BF = λ₂ m₂ / (λ₁ m₁)` with its logarithm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BayesFactor {
    pub log_value: f64,
    pub value: f64,
}

/// Bayes factor of model 2 against model 1. Both marginals are estimated
/// from the same random stream state, so identical models give `λ₂/λ₁`
/// exactly.
pub fn bayes_factor(
    model1: &ModelSpec,
    model2: &ModelSpec,
    prior: &IndexPrior,
    data: &[f64],
    samples: usize,
    seed: u64,
) -> Result<BayesFactor> {
    check_alignment(&[model1.clone(), model2.clone()], prior)?;
    let m1 = log_marginal(model1, data, samples, &mut ChaCha8Rng::seed_from_u64(seed))?;
    let m2 = log_marginal(model2, data, samples, &mut ChaCha8Rng::seed_from_u64(seed))?;
    let post = IndexPosterior::from_log_marginals(prior, &[m1.log_value, m2.log_value])?;
    let log_value = post.log_bayes_factor()?;
    Ok(BayesFactor {
        log_value,
        value: log_value.exp(),
    })
}

/// Hierarchical posterior mass outside the Hellinger ball of `radius`
/// around `f0`: `Σ_γ Π(γ | X) · #{draws of γ with H(f_θ, f0) ≥ radius} / #draws`.
pub fn posterior_ball_mass(
    runs: &[PosteriorRun],
    index_post: &IndexPosterior,
    f0: &dyn Density,
    radius: f64,
) -> Result<f64> {
    if runs.len() != index_post.indices.len() {
        return Err(Error::DimensionMismatch {
            expected: index_post.indices.len(),
            actual: runs.len(),
        });
    }
    let mut total = 0.0;
    for (run, &p) in runs.iter().zip(&index_post.probabilities) {
        if run.draws.is_empty() {
            return Err(invalid("runs", "posterior run has no draws"));
        }
        let basis = Arc::new(run.spec.basis()?);
        let grid = ReferenceGrid::new(basis.clone(), f0)?;
        let mut outside = 0usize;
        for t in &run.draws {
            let c = log_norm_raw(&basis, t.values())?;
            if grid.hellinger(t.values(), c) >= radius {
                outside += 1;
            }
        }
        total += p * outside as f64 / run.draws.len() as f64;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::{LogSplineDensity, Uniform};
    use crate::sampling::sample_iid;
    use crate::quadrature::GaussLegendre;
    use approx::assert_abs_diff_eq;

    fn counts(left: usize, right: usize) -> Vec<f64> {
        let mut data: Vec<f64> = (0..left).map(|i| 0.1 + 0.3 * i as f64 / left as f64).collect();
        data.extend((0..right).map(|i| 0.6 + 0.3 * i as f64 / right.max(1) as f64));
        data
    }

    fn halves(bound: f64) -> ModelSpec {
        ModelSpec::with_basis(1.0, 1, 2, bound).unwrap()
    }

    /// Log posterior kernel of the free coordinate for the two-cell model.
    fn two_cell_loglik(n1: usize, n2: usize, t: f64) -> f64 {
        (n1 as f64 - n2 as f64) * t - (n1 + n2) as f64 * t.cosh().ln()
    }

    #[test]
    fn map_symmetric_counts() {
        let theta = map_estimate(&halves(5.0), &counts(4, 4)).unwrap();
        assert_abs_diff_eq!(theta.values()[0], 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(theta.values()[1], 0.0, epsilon = 1e-9);
    }

    #[test]
    fn map_closed_form_interior() {
        let theta = map_estimate(&halves(5.0), &counts(3, 1)).unwrap();
        assert_abs_diff_eq!(theta.values()[0], 0.5f64.atanh(), epsilon = 1e-8);
        assert_abs_diff_eq!(theta.values()[0], 0.5493061, epsilon = 1e-7);
        assert_abs_diff_eq!(theta.values()[1], -0.5493061, epsilon = 1e-7);
    }

    #[test]
    fn map_box_clipped() {
        let theta = map_estimate(&halves(0.25), &counts(3, 1)).unwrap();
        assert_eq!(theta.values(), &[0.25, -0.25]);
    }

    #[test]
    fn map_rejects_bad_data() {
        assert!(map_estimate(&halves(1.0), &[]).is_err());
        assert!(matches!(
            map_estimate(&halves(1.0), &[0.5, 1.5]),
            Err(Error::OutOfDomain(_))
        ));
    }

    #[test]
    fn map_kkt_and_restarts() {
        let spec = ModelSpec::with_basis(2.0, 4, 6, 1.5).unwrap();
        let truth = LogSplineDensity::new(
            Arc::new(spec.basis().unwrap()),
            Theta::project(&[2.5, -1.0, 0.5, 1.0, -2.0, 0.3, 1.2, -0.5, 0.0]).unwrap(),
        )
        .unwrap();
        let data = sample_iid(&truth, 400, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let a = map_estimate_from(&spec, &data, None, MapOptions::default()).unwrap();
        assert!(a.kkt_residual <= 1e-8);
        assert!(a.theta.in_box(1.5));
        // at least one coordinate sits on the boundary for this truth
        assert!(a.theta.sup_norm() >= 1.5 - 1e-12);

        let start = Theta::project(&[1.0, -1.0, 1.0, -1.0, 1.0, -1.0, 1.0, -1.0, 0.0]).unwrap();
        let b = map_estimate_from(&spec, &data, Some(&start), MapOptions::default()).unwrap();
        for (x, y) in a.theta.values().iter().zip(b.theta.values()) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-6);
        }
    }

    #[test]
    fn map_is_permutation_invariant() {
        let spec = ModelSpec::with_basis(1.0, 3, 5, 2.0).unwrap();
        let data = sample_iid(&Uniform, 200, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        let mut reversed = data.clone();
        reversed.reverse();
        let a = map_estimate(&spec, &data).unwrap();
        let b = map_estimate(&spec, &reversed).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn atom_chain_is_degenerate() {
        let spec = halves(0.0);
        let run = posterior_sample(&spec, &counts(3, 1), 50, 1, McmcOptions::default()).unwrap();
        assert_eq!(run.draws.len(), 50);
        assert!(run.draws.iter().all(|t| t.values() == [0.0, 0.0]));
        assert_eq!(run.acceptance_rate, 1.0);
    }

    #[test]
    fn chain_matches_grid_posterior() {
        let (n1, n2, m) = (7, 3, 3.0);
        let spec = halves(m);
        let run = posterior_sample(&spec, &counts(n1, n2), 100_000, 42, McmcOptions::default()).unwrap();
        assert!(run.acceptance_rate > 0.1 && run.acceptance_rate < 0.9);

        let points: usize = 2001;
        let grid: Vec<f64> = (0..points).map(|i| -m + 2.0 * m * i as f64 / (points - 1) as f64).collect();
        let logs: Vec<f64> = grid.iter().map(|&t| two_cell_loglik(n1, n2, t)).collect();
        let top = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = logs.iter().map(|l| (l - top).exp()).collect();
        let total: f64 = w.iter().sum();

        // bin both on cells centred at the grid points
        let width = 2.0 * m / (points - 1) as f64;
        let bins = 40;
        let per_bin = points.div_ceil(bins);
        let mut exact = vec![0.0; bins];
        for (i, wi) in w.iter().enumerate() {
            exact[i / per_bin] += wi / total;
        }
        let mut empirical = vec![0.0; bins];
        for t in &run.draws {
            let i = (((t.values()[0] + m) / width).round() as usize).min(points - 1);
            empirical[i / per_bin] += 1.0 / run.draws.len() as f64;
        }
        let tv: f64 = 0.5 * exact.iter().zip(&empirical).map(|(a, b)| (a - b).abs()).sum::<f64>();
        assert!(tv <= 0.05, "total variation {tv}");
    }

    #[test]
    fn chain_is_reproducible() {
        let spec = ModelSpec::with_basis(1.0, 2, 3, 2.0).unwrap();
        let data = sample_iid(&Uniform, 50, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let a = posterior_sample(&spec, &data, 500, 9, McmcOptions::default()).unwrap();
        let b = posterior_sample(&spec, &data, 500, 9, McmcOptions::default()).unwrap();
        assert_eq!(a.draws, b.draws);
        assert!(a.draws.iter().all(|t| t.in_box(2.0) && t.values().iter().sum::<f64>().abs() < 1e-12));
    }

    #[test]
    fn replicate_standard_error_scales() {
        let spec = halves(3.0);
        let data = counts(6, 4);
        let means: Vec<f64> = (0..200u64)
            .map(|s| {
                let run = posterior_sample(&spec, &data, 400, 1000 + s, McmcOptions::default()).unwrap();
                run.draws.iter().map(|t| t.values()[0]).sum::<f64>() / run.draws.len() as f64
            })
            .collect();
        let se = |xs: &[f64]| {
            let k = xs.len() as f64;
            let mu = xs.iter().sum::<f64>() / k;
            (xs.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (k - 1.0) / k).sqrt()
        };
        let ratio = se(&means[..100]) / se(&means);
        let expected = 2f64.sqrt();
        assert!((ratio / expected - 1.0).abs() <= 0.3, "ratio {ratio}");
    }

    #[test]
    fn atom_marginal_is_exact() {
        let data = sample_iid(&Uniform, 30, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let est = log_marginal(&halves(0.0), &data, 100, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(est.log_value, 0.0);
        assert_eq!(est.std_error, 0.0);
    }

    #[test]
    fn marginal_matches_quadrature() {
        let (n1, n2, m) = (13, 7, 2.0);
        let gl = GaussLegendre::new(200);
        let kernel = gl.integrate(-m, m, |t| two_cell_loglik(n1, n2, t).exp());
        let exact = kernel.ln() - (2.0 * m).ln();
        let est = log_marginal(&halves(m), &counts(n1, n2), 10_000, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
        assert!((est.log_value - exact).abs() <= 0.01, "{} vs {exact}", est.log_value);
        assert!(est.std_error < 0.01);
    }

    #[test]
    fn marginal_shifts_with_prior_mass() {
        let spec = ModelSpec::with_basis(1.0, 2, 3, 1.0).unwrap();
        let data = sample_iid(&Uniform, 40, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let opts = MarginalOptions { samples: 500, ..Default::default() };
        let a = log_marginal_with(&spec, &data, &mut ChaCha8Rng::seed_from_u64(4), opts).unwrap();
        let shifted = MarginalOptions { log_prior_mass: 3.0f64.ln(), ..opts };
        let b = log_marginal_with(&spec, &data, &mut ChaCha8Rng::seed_from_u64(4), shifted).unwrap();
        assert_abs_diff_eq!(b.log_value - a.log_value, 3.0f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn marginal_is_permutation_invariant() {
        let spec = ModelSpec::with_basis(1.0, 2, 4, 2.0).unwrap();
        let data = sample_iid(&Uniform, 60, &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
        let mut shuffled = data.clone();
        shuffled.rotate_left(17);
        let a = log_marginal(&spec, &data, 400, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = log_marginal(&spec, &shuffled, 400, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn marginal_increments_are_bounded() {
        // every f_θ on the box satisfies e^{-2M} ≤ f_θ ≤ e^{2M}
        let m = 1.0;
        let spec = ModelSpec::with_basis(1.0, 2, 3, m).unwrap();
        let data = sample_iid(&Uniform, 41, &mut ChaCha8Rng::seed_from_u64(12)).unwrap();
        let a = log_marginal(&spec, &data[..40], 4000, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = log_marginal(&spec, &data, 4000, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let step = b.log_value - a.log_value;
        assert!(step.abs() <= 2.0 * m, "increment {step}");
    }

    #[test]
    fn index_posterior_passes_prior_through() {
        let prior = IndexPrior::new(vec![1.0, 2.0], vec![1.0 / 3.0, 2.0 / 3.0]).unwrap();
        let post = IndexPosterior::from_log_marginals(&prior, &[-4.0, -4.0]).unwrap();
        assert_abs_diff_eq!(post.probabilities[0], 1.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(post.probabilities[1], 2.0 / 3.0, epsilon = 1e-12);

        let even = IndexPrior::uniform(vec![1.0, 2.0]).unwrap();
        let post = IndexPosterior::from_log_marginals(&even, &[-7.5, -7.5]).unwrap();
        assert_eq!(post.probabilities, vec![0.5, 0.5]);
        assert_eq!(post.argmax(), 0);
        assert!(matches!(
            IndexPosterior::from_log_marginals(&even, &[f64::NEG_INFINITY; 2]),
            Err(Error::ZeroEvidence)
        ));
    }

    #[test]
    fn atoms_give_likelihood_ratio_odds() {
        let basis = Arc::new(SplineBasis::new(1, 2).unwrap());
        let t1 = Theta::new(vec![0.3, -0.3]).unwrap();
        let t2 = Theta::new(vec![-0.2, 0.2]).unwrap();
        let m1 = ModelSpec::with_basis(1.0, 1, 2, 1.0).unwrap().with_atom(&t1).unwrap();
        let m2 = ModelSpec::with_basis(2.0, 1, 2, 1.0).unwrap().with_atom(&t2).unwrap();
        let f1 = LogSplineDensity::new(basis.clone(), t1).unwrap();
        let f2 = LogSplineDensity::new(basis, t2).unwrap();
        let data = [0.1, 0.2, 0.7, 0.3, 0.9];
        let llr: f64 = data.iter().map(|&x| f2.ln_pdf(x) - f1.ln_pdf(x)).sum();

        let even = IndexPrior::uniform(vec![1.0, 2.0]).unwrap();
        let bf = bayes_factor(&m1, &m2, &even, &data, 100, 0).unwrap();
        assert_abs_diff_eq!(bf.log_value, llr, epsilon = 1e-12);

        let prior = IndexPrior::new(vec![1.0, 2.0], vec![0.25, 0.75]).unwrap();
        let post = index_posterior(&[m1, m2], &prior, &data, 100, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let odds = post.probabilities[1] / post.probabilities[0];
        assert_abs_diff_eq!(odds.ln(), 3f64.ln() + llr, epsilon = 1e-12);
        assert_abs_diff_eq!(post.log_bayes_factor().unwrap(), 3f64.ln() + llr, epsilon = 1e-12);
    }

    #[test]
    fn identical_models_have_unit_bayes_factor() {
        let m1 = ModelSpec::with_basis(1.0, 2, 3, 1.0).unwrap();
        let m2 = ModelSpec { gamma: 2.0, ..m1.clone() };
        let data = sample_iid(&Uniform, 50, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let even = IndexPrior::uniform(vec![1.0, 2.0]).unwrap();
        let bf = bayes_factor(&m1, &m2, &even, &data, 300, 77).unwrap();
        assert_eq!(bf.value, 1.0);
        assert!(bayes_factor(&m1, &m2, &IndexPrior::uniform(vec![1.0, 3.0]).unwrap(), &data, 300, 0).is_err());
    }

    #[test]
    fn ball_mass_edge_cases() {
        let spec = ModelSpec::with_basis(1.0, 2, 3, 1.0).unwrap();
        let data = sample_iid(&Uniform, 40, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let run = posterior_sample(&spec, &data, 300, 5, McmcOptions::default()).unwrap();
        let single = IndexPrior::uniform(vec![1.0]).unwrap();
        let post = IndexPosterior::from_log_marginals(&single, &[0.0]).unwrap();
        let runs = [run.clone()];
        assert_eq!(posterior_ball_mass(&runs, &post, &Uniform, 0.0).unwrap(), 1.0);
        assert_eq!(posterior_ball_mass(&runs, &post, &Uniform, 1.5).unwrap(), 0.0);

        // single model: the mixture is the plain fraction of draws
        let basis = Arc::new(spec.basis().unwrap());
        let radius = 0.05;
        let plain = run
            .draws
            .iter()
            .filter(|t| {
                let f = LogSplineDensity::new(basis.clone(), (*t).clone()).unwrap();
                crate::metrics::hellinger(&f, &Uniform).unwrap() >= radius
            })
            .count() as f64
            / run.draws.len() as f64;
        assert_abs_diff_eq!(posterior_ball_mass(&runs, &post, &Uniform, radius).unwrap(), plain, epsilon = 1e-12);

        // draws all at the truth
        let atom = posterior_sample(&ModelSpec { bound: 0.0, ..spec }, &data, 20, 0, McmcOptions::default()).unwrap();
        assert_eq!(posterior_ball_mass(&[atom], &post, &Uniform, 1e-6).unwrap(), 0.0);
    }
}
