//! Deterministic property checks over the numerical core: basis
//! invariants, normalization, closed-form oracles, posterior equivalence on
//! a one-parameter model, entropy inequalities, the α-moment bound on
//! integrated likelihood ratios, the predictive telescoping identity and the
//! radius-constant calculator.

use std::sync::Arc;
use std::time::Instant;

use logspline_core::density::{
    grad_log_norm, log_norm_const, log_norm_raw, Density, LogSplineDensity, Theta, Uniform,
};
use logspline_core::entropy::{
    covering_number, hausdorff_alpha_entropy, ball_complement_bound_check, renyi_integral, walker_predictive,
    CoverMode, DiscreteFamily,
};
use logspline_core::inference::{log_marginal, map_estimate, posterior_sample, McmcOptions};
use logspline_core::metrics::hellinger;
use logspline_core::priors::{sample_prior_theta, ModelSpec};
use logspline_core::quadrature::{uniform_edges, CompositeRule};
use logspline_core::sampling::sample_iid;
use logspline_core::SplineBasis;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::constants::{r_min_constant, standing_condition, BoundVariant, RadiusConstants};
use crate::seeds::{derive_seed, TAG_VERIFY};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub id: u32,
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
    pub seconds: f64,
}

fn rng_for(seed: u64, id: u32) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, TAG_VERIFY, id as u64, 0))
}

fn timed(id: u32, name: &'static str, body: impl FnOnce() -> (bool, String)) -> CheckOutcome {
    let start = Instant::now();
    let (pass, detail) = body();
    CheckOutcome {
        id,
        name,
        pass,
        detail,
        seconds: start.elapsed().as_secs_f64(),
    }
}

/// Partition of unity, nonnegativity, support windows and dimension for
/// `q ∈ 1..=4`, `K ∈ 1..=50` on a 10⁴-point grid.
pub fn check_spline_invariants() -> CheckOutcome {
    timed(1, "spline partition of unity and support", || {
        let mut worst_sum = 0.0f64;
        let mut worst_neg = 0.0f64;
        let mut failures = Vec::new();
        let mut values = [0.0; 4];
        for q in 1..=4 {
            for k in 1..=50 {
                let basis = SplineBasis::new(q, k).expect("valid basis");
                if basis.dimension() != q + k - 1 {
                    failures.push(format!("dimension q={q} K={k}"));
                }
                for j in 0..basis.dimension() {
                    let (a, b) = basis.support(j);
                    if b - a > q as f64 / k as f64 + 1e-12 {
                        failures.push(format!("support width q={q} K={k} j={j}"));
                    }
                }
                for i in 0..=9999 {
                    let x = i as f64 / 9999.0;
                    let first = basis.eval_nonzero(x, &mut values[..q]);
                    let full = basis.eval(x).expect("x in [0, 1]");
                    let sum: f64 = full.iter().sum();
                    worst_sum = worst_sum.max((sum - 1.0).abs());
                    worst_neg = worst_neg.max(-full.iter().cloned().fold(0.0, f64::min)).abs();
                    for (j, &v) in full.iter().enumerate() {
                        let (a, b) = basis.support(j);
                        let inside = x >= a && (x < b || (x == 1.0 && b == 1.0));
                        if !inside && v != 0.0 {
                            failures.push(format!("nonzero outside support q={q} K={k} j={j} x={x}"));
                        }
                        let local = j >= first && j < first + q;
                        if !local && v != 0.0 {
                            failures.push(format!("more than q nonzero q={q} K={k} x={x}"));
                        }
                    }
                }
            }
        }
        let pass = worst_sum <= 1e-10 && worst_neg <= 1e-14 && failures.is_empty();
        let detail = format!(
            "max |sum - 1| = {worst_sum:.2e}, max negative part = {worst_neg:.2e}, {} structural failures{}",
            failures.len(),
            failures.first().map(|f| format!(" (first: {f})")).unwrap_or_default()
        );
        (pass, detail)
    })
}

/// Unit mass on 100 random coefficient vectors and mean map against central
/// differences on 50, for `q = 4`, `K = 10`, `M = 2`.
pub fn check_normalization_and_gradient(seed: u64) -> CheckOutcome {
    timed(2, "normalization and gradient", || {
        let mut rng = rng_for(seed, 2);
        let spec = ModelSpec::with_basis(2.0, 4, 10, 2.0).expect("valid model");
        let basis = Arc::new(spec.basis().expect("valid basis"));
        // an independent, much finer rule than the one used to normalize
        let fine = CompositeRule::new(&uniform_edges(400), 12);
        let mut worst_mass = 0.0f64;
        for _ in 0..100 {
            let theta = sample_prior_theta(&spec, &mut rng).expect("slab draw");
            let f = LogSplineDensity::new(basis.clone(), theta).expect("valid density");
            worst_mass = worst_mass.max((fine.integrate(|x| f.pdf(x)) - 1.0).abs());
        }
        let h = 1e-5;
        let mut worst_grad = 0.0f64;
        for _ in 0..50 {
            let theta = sample_prior_theta(&spec, &mut rng).expect("slab draw");
            let g = grad_log_norm(&basis, &theta).expect("dimensions match");
            let mut diff = 0.0f64;
            for j in 0..g.len() {
                let mut up = theta.values().to_vec();
                let mut down = up.clone();
                up[j] += h;
                down[j] -= h;
                let fd = (log_norm_raw(&basis, &up).unwrap() - log_norm_raw(&basis, &down).unwrap()) / (2.0 * h);
                diff = diff.max((fd - g[j]).abs());
            }
            let scale = g.iter().cloned().fold(0.0, f64::max);
            worst_grad = worst_grad.max(diff / scale);
        }
        (
            worst_mass <= 1e-9 && worst_grad <= 1e-6,
            format!("max |∫f - 1| = {worst_mass:.2e}, max relative gradient error = {worst_grad:.2e}"),
        )
    })
}

/// Data with `n1` points in `[0, 1/2)` and `n2` in `[1/2, 1]`.
fn two_cell_data(n1: usize, n2: usize) -> Vec<f64> {
    let mut data: Vec<f64> = (0..n1).map(|i| 0.05 + 0.4 * i as f64 / n1 as f64).collect();
    data.extend((0..n2).map(|i| 0.55 + 0.4 * i as f64 / n2.max(1) as f64));
    data
}

/// Log likelihood of the two-cell model at free coordinate `t`.
fn two_cell_loglik(n1: usize, n2: usize, t: f64) -> f64 {
    (n1 as f64 - n2 as f64) * t - (n1 + n2) as f64 * t.cosh().ln()
}

/// Normalizer, MAP and box-clipped MAP against closed forms.
pub fn check_closed_forms() -> CheckOutcome {
    timed(3, "closed-form oracles", || {
        let basis = SplineBasis::new(1, 2).expect("valid basis");
        let mut worst_c = 0.0f64;
        for t in [0.5, 1.0, 2.0] {
            let theta = Theta::new(vec![t, -t]).expect("sum zero");
            let c = log_norm_const(&basis, &theta).expect("dimensions match");
            worst_c = worst_c.max((c - f64::cosh(t).ln()).abs());
        }
        let spec = ModelSpec::with_basis(1.0, 1, 2, 5.0).expect("valid model");
        let mut worst_map = 0.0f64;
        for (n1, n2) in [(3, 1), (10, 4), (2, 7), (5, 5)] {
            let theta = map_estimate(&spec, &two_cell_data(n1, n2)).expect("MAP converges");
            let n = (n1 + n2) as f64;
            let t = ((n1 as f64 - n2 as f64) / n).atanh();
            worst_map = worst_map.max((theta.values()[0] - t).abs());
        }
        let clipped = ModelSpec::with_basis(1.0, 1, 2, 0.25).expect("valid model");
        let theta = map_estimate(&clipped, &two_cell_data(3, 1)).expect("MAP converges");
        let exact_clip = theta.values() == [0.25, -0.25];
        (
            worst_c <= 1e-10 && worst_map <= 1e-8 && exact_clip,
            format!(
                "max |c - log cosh| = {worst_c:.2e}, max |MAP - atanh| = {worst_map:.2e}, clipped MAP = {:?}",
                theta.values()
            ),
        )
    })
}

/// Adaptive Simpson quadrature.
fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    #[allow(clippy::too_many_arguments)]
    fn step<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        step(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + step(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
    }
    let (fa, fm, fb) = (f(a), f(0.5 * (a + b)), f(b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    step(f, a, b, fa, fm, fb, whole, tol, 50)
}

/// Two-cell model with 20 observations: Metropolis draws against a
/// 2001-point grid posterior, and the importance-sampled marginal likelihood
/// against adaptive quadrature.
pub fn check_posterior_oracles(seed: u64) -> CheckOutcome {
    timed(4, "posterior oracle equivalence", || {
        let (n1, n2, m) = (13, 7, 3.0);
        let data = two_cell_data(n1, n2);
        let spec = ModelSpec::with_basis(1.0, 1, 2, m).expect("valid model");
        let run = match posterior_sample(&spec, &data, 100_000, derive_seed(seed, TAG_VERIFY, 4, 1), McmcOptions::default()) {
            Ok(r) => r,
            Err(e) => return (false, format!("sampler failed: {e}")),
        };
        let points: usize = 2001;
        let width = 2.0 * m / (points - 1) as f64;
        let logs: Vec<f64> = (0..points).map(|i| two_cell_loglik(n1, n2, -m + i as f64 * width)).collect();
        let top = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = logs.iter().map(|l| (l - top).exp()).collect();
        let total: f64 = w.iter().sum();
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
        let tv = 0.5 * exact.iter().zip(&empirical).map(|(a, b)| (a - b).abs()).sum::<f64>();

        let kernel = adaptive_simpson(&|t: f64| (two_cell_loglik(n1, n2, t) - top).exp(), -m, m, 1e-13);
        let reference = top + kernel.ln() - (2.0 * m).ln();
        let mut rng = rng_for(seed, 4);
        let est = match log_marginal(&spec, &data, 10_000, &mut rng) {
            Ok(e) => e,
            Err(e) => return (false, format!("importance sampler failed: {e}")),
        };
        let gap = (est.log_value - reference).abs();
        (
            tv <= 0.05 && gap <= 0.01,
            format!("TV = {tv:.4} (≤ 0.05), |log m̂ - log m| = {gap:.2e} nats (≤ 0.01)"),
        )
    })
}

/// A family of `size` log-spline densities on a small basis with random
/// spread, random masses summing to 0.9 and uniform truth.
fn random_family<R: Rng>(rng: &mut R, size: usize) -> DiscreteFamily {
    let basis = Arc::new(SplineBasis::new(2, 3).expect("valid basis"));
    let spread = rng.random_range(0.3..2.5);
    let members: Vec<Arc<dyn Density>> = (0..size)
        .map(|_| {
            let v: Vec<f64> = (0..4).map(|_| rng.random_range(-spread..spread)).collect();
            Arc::new(LogSplineDensity::new(basis.clone(), Theta::project(&v).expect("J = 4")).expect("valid"))
                as Arc<dyn Density>
        })
        .collect();
    let raw: Vec<f64> = (0..size).map(|_| rng.random_range(0.1..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let masses = raw.iter().map(|m| 0.9 * m / total).collect();
    DiscreteFamily::new(members, masses, Arc::new(Uniform)).expect("valid family")
}

/// Sandwich inequality, monotonicity in δ and the α = 0 endpoint on 50
/// random families.
pub fn check_entropy_suite(seed: u64) -> CheckOutcome {
    timed(5, "entropy sandwich, monotonicity, alpha = 0", || {
        let mut rng = rng_for(seed, 5);
        let deltas: Vec<f64> = (1..=20).map(|i| 0.05 * i as f64).collect();
        let alphas = [0.0, 0.25, 0.5, 0.75, 1.0];
        let mut failures = Vec::new();
        let mut evaluations = 0;
        for fam_id in 0..50 {
            let size = rng.random_range(1..=8);
            let fam = random_family(&mut rng, size);
            let total: f64 = fam.masses().iter().sum();
            for &alpha in &alphas {
                let mut prev: Option<(f64, usize)> = None;
                for &delta in &deltas {
                    let n = covering_number(&fam, delta, CoverMode::Exact).expect("small family");
                    let j = hausdorff_alpha_entropy(&fam, delta, alpha).expect("small family");
                    evaluations += 1;
                    let middle = total.powf(alpha) * (n as f64).powf(1.0 - alpha);
                    // one ulp of slack for the last rounding of exp and powf
                    if j.exp() > middle * (1.0 + 1e-12) || middle > n as f64 * (1.0 + 1e-12) {
                        failures.push(format!("sandwich family {fam_id} δ={delta} α={alpha}"));
                    }
                    if let Some((pj, pn)) = prev {
                        if j > pj + 1e-12 || n > pn {
                            failures.push(format!("monotonicity family {fam_id} δ={delta} α={alpha}"));
                        }
                    }
                    if alpha == 0.0 && (j.exp() - n as f64).abs() > 1e-9 {
                        failures.push(format!("α = 0 endpoint family {fam_id} δ={delta}"));
                    }
                    prev = Some((j, n));
                }
            }
        }
        (
            failures.is_empty(),
            format!(
                "{evaluations} (family, δ, α) evaluations, {} failures{}",
                failures.len(),
                failures.first().map(|f| format!(" (first: {f})")).unwrap_or_default()
            ),
        )
    })
}

/// The α-moment bound on 20 random families, with closed-form and exact
/// α = 1 comparisons.
pub fn check_likelihood_ratio_bound(seed: u64) -> CheckOutcome {
    timed(6, "alpha-moment bound on integrated likelihood ratios", || {
        let mut rng = rng_for(seed, 6);
        let mut failures = Vec::new();
        let mut singletons = 0;
        let mut worst_ratio = 0.0f64;
        for case in 0..20 {
            let size = rng.random_range(2..=6);
            let fam = random_family(&mut rng, size);
            let r = if case % 2 == 0 { 3.0 } else { 5.0 };
            let alpha = if case % 4 < 2 { 0.25 } else { 0.5 };
            let n = rng.random_range(5..=50);
            let mut dist: Vec<f64> = fam
                .members()
                .iter()
                .map(|f| hellinger(f, fam.truth()).expect("normalized"))
                .collect();
            dist.sort_by(|a, b| b.total_cmp(a));
            // alternate between a singleton outer set and a larger one
            let eps = if case % 3 == 0 {
                0.5 * (dist[0] + dist[1]) / r
            } else {
                dist[dist.len() / 2] / r
            };
            let report = ball_complement_bound_check(&fam, r, eps, alpha, n, 1000, &mut rng).expect("valid inputs");
            if !report.pass {
                failures.push(format!("bound case {case}: {report:?}"));
            }
            if report.rhs_bound > 0.0 {
                worst_ratio = worst_ratio.max((report.lhs_estimate - 3.0 * report.lhs_se) / report.rhs_bound);
            }
            if report.outer.len() == 1 {
                singletons += 1;
                let j = report.outer[0];
                let rho = renyi_integral(&fam.members()[j], fam.truth(), alpha).expect("normalized");
                let exact = fam.masses()[j].powf(alpha) * rho.powi(n as i32);
                // R^α is heavy tailed, so the sample SE understates the spread;
                // the singleton second moment is available in closed form
                let rho2 = if alpha == 0.5 {
                    1.0
                } else {
                    renyi_integral(&fam.members()[j], fam.truth(), 2.0 * alpha).expect("normalized")
                };
                let second = fam.masses()[j].powf(2.0 * alpha) * rho2.powi(n as i32);
                let exact_se = ((second - exact * exact).max(0.0) / 1000.0).sqrt();
                if (report.lhs_estimate - exact).abs() > 3.0 * exact_se {
                    failures.push(format!("closed form case {case}: {} vs {exact}", report.lhs_estimate));
                }
            }
        }
        for case in 0..5 {
            let size = rng.random_range(2..=6);
            let fam = random_family(&mut rng, size);
            let n = rng.random_range(3..=10);
            let eps = 1e-3;
            let report = ball_complement_bound_check(&fam, 3.0, eps, 1.0, n, 1000, &mut rng).expect("valid inputs");
            let mass = fam.mass_of(&report.outer);
            if (report.lhs_estimate - mass).abs() > 3.0 * report.lhs_se || !report.pass {
                failures.push(format!("α = 1 case {case}: {} vs Π(D) = {mass}", report.lhs_estimate));
            }
        }
        (
            failures.is_empty(),
            format!(
                "25 cases ({singletons} singleton outer sets), max (LHS - 3SE)/RHS = {worst_ratio:.3}, {} failures{}",
                failures.len(),
                failures.first().map(|f| format!(" (first: {f})")).unwrap_or_default()
            ),
        )
    })
}

/// `∫_B ∏ f(X_i) Π(df) = Π(B) ∏_k f_{kB}(X_{k+1})` on 20 random cases.
pub fn check_predictive_telescoping(seed: u64) -> CheckOutcome {
    timed(7, "predictive density telescoping", || {
        let mut rng = rng_for(seed, 7);
        let mut worst = 0.0f64;
        for _ in 0..20 {
            let size = rng.random_range(1..=6);
            let fam = random_family(&mut rng, size);
            let mut subset: Vec<usize> = (0..size).filter(|_| rng.random_bool(0.6)).collect();
            if subset.is_empty() {
                subset.push(0);
            }
            let n = rng.random_range(1..=40);
            let data = sample_iid(fam.truth().as_ref(), n, &mut rng).expect("valid truth");
            let direct: Vec<f64> = subset
                .iter()
                .map(|&j| fam.masses()[j].ln() + data.iter().map(|&x| fam.members()[j].ln_pdf(x)).sum::<f64>())
                .collect();
            let top = direct.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lhs = top + direct.iter().map(|d| (d - top).exp()).sum::<f64>().ln();
            let mut rhs = fam.mass_of(&subset).ln();
            for k in 0..n {
                rhs += walker_predictive(&fam, &subset, &data[..k]).expect("valid subset").pdf(data[k]).ln();
            }
            worst = worst.max((lhs - rhs).abs());
        }
        (worst <= 1e-9, format!("max log-domain discrepancy = {worst:.2e}"))
    })
}

/// Worked value 1460, `K = 1` agreement on 100 random tuples, and the
/// standing condition at `α = 1/38`, `L = 2`.
pub fn check_constants(seed: u64) -> CheckOutcome {
    timed(8, "radius constant calculator", || {
        let worked = RadiusConstants {
            c: 1.0,
            j: 1.0,
            g: 0.0,
            l: 2.0,
            alpha: 1.0 / 38.0,
            h: 1.0,
            k_factor: 1.0,
            f: 1.0,
        };
        let value = r_min_constant(&worked, BoundVariant::Base).unwrap_or(f64::NAN);
        let worked_ok = (value - 1460.0).abs() <= 1e-9;
        let mut rng = rng_for(seed, 8);
        let mut agree = 0;
        for _ in 0..100 {
            let l = rng.random_range(0.1..5.0);
            let c = RadiusConstants {
                c: rng.random_range(0.1..5.0),
                j: rng.random_range(0.1..5.0),
                g: rng.random_range(0.0..5.0),
                l,
                alpha: rng.random_range(0.01..0.99) / (1.0 + 18.0 * l),
                h: rng.random_range(1.0..10.0),
                k_factor: 1.0,
                f: rng.random_range(0.1..5.0),
            };
            if r_min_constant(&c, BoundVariant::Base).ok() == r_min_constant(&c, BoundVariant::Scaled).ok()
                && r_min_constant(&c, BoundVariant::Base).is_ok()
            {
                agree += 1;
            }
        }
        let standing = standing_condition(1.0 / 38.0, 2.0);
        (
            worked_ok && agree == 100 && standing,
            format!("r_min = {value}, K = 1 agreement {agree}/100, standing condition {standing}"),
        )
    })
}

/// Every check, in order.
pub fn run_all(seed: u64) -> Vec<CheckOutcome> {
    vec![
        check_spline_invariants(),
        check_normalization_and_gradient(seed),
        check_closed_forms(),
        check_posterior_oracles(seed),
        check_entropy_suite(seed),
        check_likelihood_ratio_bound(seed),
        check_predictive_telescoping(seed),
        check_constants(seed),
    ]
}
