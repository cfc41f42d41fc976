//! Covering numbers and Hausdorff α-entropy of finite families of densities,
//! the predictive density of a posterior restricted to a subset, Rényi
//! affinities, and a Monte-Carlo check of the α-moment bound on integrated
//! likelihood ratios over the complement of a Hellinger ball.
//!
//! Ball centres are restricted to members of the family, so covering numbers
//! and entropies are upper bounds for the versions with arbitrary centres;
//! both are computed under the same rule. Balls are open: member `g` lies in
//! the ball around `c` when `H(c, g) < δ`.

use std::sync::Arc;

use rand::Rng;

use crate::density::Density;
use crate::error::{invalid, Error, Result};
use crate::metrics::hellinger;
use crate::quadrature::{merge_breakpoints, CompositeRule, NODES_PER_PANEL};
use crate::sampling::sample_iid;

/// Largest family handled by the exhaustive searches.
pub const EXACT_LIMIT: usize = 12;

/// A finite prior: densities with point masses, together with the truth.
#[derive(Clone)]
pub struct DiscreteFamily {
    members: Vec<Arc<dyn Density>>,
    masses: Vec<f64>,
    truth: Arc<dyn Density>,
    /// Row-major pairwise Hellinger distances.
    distances: Vec<f64>,
}

impl std::fmt::Debug for DiscreteFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DiscreteFamily")
            .field("members", &self.members.len())
            .field("masses", &self.masses)
            .finish()
    }
}

impl DiscreteFamily {
    pub fn new(
        members: Vec<Arc<dyn Density>>,
        masses: Vec<f64>,
        truth: Arc<dyn Density>,
    ) -> Result<Self> {
        if members.is_empty() {
            return Err(invalid("members", "family must be nonempty"));
        }
        if members.len() != masses.len() {
            return Err(Error::DimensionMismatch {
                expected: members.len(),
                actual: masses.len(),
            });
        }
        if masses.iter().any(|&m| !(m > 0.0) || !m.is_finite()) {
            return Err(invalid("masses", "prior masses must be positive"));
        }
        if masses.iter().sum::<f64>() > 1.0 + 1e-12 {
            return Err(invalid("masses", "prior masses must sum to at most 1"));
        }
        let k = members.len();
        let mut distances = vec![0.0; k * k];
        for i in 0..k {
            for j in i + 1..k {
                let d = hellinger(&members[i], &members[j])?;
                distances[i * k + j] = d;
                distances[j * k + i] = d;
            }
        }
        Ok(Self {
            members,
            masses,
            truth,
            distances,
        })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn members(&self) -> &[Arc<dyn Density>] {
        &self.members
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn truth(&self) -> &Arc<dyn Density> {
        &self.truth
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        self.distances[i * self.len() + j]
    }

    /// Total prior mass of the members in `subset`.
    pub fn mass_of(&self, subset: &[usize]) -> f64 {
        subset.iter().map(|&i| self.masses[i]).sum()
    }

    fn check_subset(&self, subset: &[usize]) -> Result<()> {
        if subset.is_empty() {
            return Err(invalid("subset", "subset must be nonempty"));
        }
        if let Some(&i) = subset.iter().find(|&&i| i >= self.len()) {
            return Err(invalid("subset", format!("member {i} does not exist")));
        }
        let mut sorted = subset.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != subset.len() {
            return Err(invalid("subset", "members must be distinct"));
        }
        Ok(())
    }

    /// For each member as centre, the bitmask of the positions in `subset`
    /// that lie within distance `delta` of it.
    fn coverage(&self, subset: &[usize], delta: f64) -> Vec<u32> {
        (0..self.len())
            .map(|c| {
                subset
                    .iter()
                    .enumerate()
                    .filter(|(_, &g)| self.distance(c, g) < delta)
                    .fold(0u32, |mask, (pos, _)| mask | (1 << pos))
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoverMode {
    /// Minimum over all sets of centres.
    Exact,
    /// Greedy set cover: an upper bound within a factor `1 + ln |G|`.
    Greedy,
}

/// `N(δ, G, H)` for the whole family.
pub fn covering_number(family: &DiscreteFamily, delta: f64, mode: CoverMode) -> Result<usize> {
    let all: Vec<usize> = (0..family.len()).collect();
    covering_number_of(family, &all, delta, mode)
}

/// `N(δ, G, H)` for the members `subset` of the family, with centres ranging
/// over the whole family.
pub fn covering_number_of(
    family: &DiscreteFamily,
    subset: &[usize],
    delta: f64,
    mode: CoverMode,
) -> Result<usize> {
    family.check_subset(subset)?;
    if !(delta > 0.0) {
        return Err(invalid("delta", "radius must be positive"));
    }
    if mode == CoverMode::Exact && family.len() > EXACT_LIMIT {
        return Err(Error::FamilyTooLarge {
            size: family.len(),
            limit: EXACT_LIMIT,
        });
    }
    if subset.len() > 32 {
        return Err(Error::FamilyTooLarge {
            size: subset.len(),
            limit: 32,
        });
    }
    let cover = family.coverage(subset, delta);
    let full: u32 = if subset.len() == 32 {
        u32::MAX
    } else {
        (1u32 << subset.len()) - 1
    };
    match mode {
        CoverMode::Exact => {
            let centres = cover.len();
            let mut best = usize::MAX;
            for choice in 1u32..(1 << centres) {
                let size = choice.count_ones() as usize;
                if size >= best {
                    continue;
                }
                let union = (0..centres)
                    .filter(|&c| choice & (1 << c) != 0)
                    .fold(0, |u, c| u | cover[c]);
                if union == full {
                    best = size;
                }
            }
            Ok(best)
        }
        CoverMode::Greedy => {
            let mut covered = 0u32;
            let mut count = 0;
            while covered != full {
                let (c, gain) = cover
                    .iter()
                    .enumerate()
                    .map(|(c, &m)| (c, (m & !covered).count_ones()))
                    .fold((0, 0), |acc, x| if x.1 > acc.1 { x } else { acc });
                debug_assert!(gain > 0, "every member covers itself");
                covered |= cover[c];
                count += 1;
            }
            Ok(count)
        }
    }
}

/// `J(δ, G, α, Π, H) = log inf Σ_j Π(B_j)^α` over coverings of the whole
/// family by disjoint sets each contained in a δ-ball around a member.
pub fn hausdorff_alpha_entropy(family: &DiscreteFamily, delta: f64, alpha: f64) -> Result<f64> {
    let all: Vec<usize> = (0..family.len()).collect();
    hausdorff_alpha_entropy_of(family, &all, delta, alpha)
}

/// α-entropy of the members `subset`.
///
/// Exact by dynamic programming over subsets: the block containing the
/// lowest uncovered member is chosen among all coverable subsets of the
/// remaining members. With `α = 0` every nonempty block costs 1, so the
/// result is the log of the covering number.
pub fn hausdorff_alpha_entropy_of(
    family: &DiscreteFamily,
    subset: &[usize],
    delta: f64,
    alpha: f64,
) -> Result<f64> {
    family.check_subset(subset)?;
    if !(delta > 0.0) {
        return Err(invalid("delta", "radius must be positive"));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(invalid("alpha", "alpha must lie in [0, 1]"));
    }
    if family.len() > EXACT_LIMIT {
        return Err(Error::FamilyTooLarge {
            size: family.len(),
            limit: EXACT_LIMIT,
        });
    }
    let k = subset.len();
    let size = 1usize << k;
    let cover = family.coverage(subset, delta);
    let mut coverable = vec![false; size];
    for &m in &cover {
        // every subset of a ball is coverable
        let m = m as usize;
        let mut t = m;
        loop {
            coverable[t] = true;
            if t == 0 {
                break;
            }
            t = (t - 1) & m;
        }
    }
    let mut mass = vec![0.0; size];
    for t in 1..size {
        let low = t.trailing_zeros() as usize;
        mass[t] = mass[t & (t - 1)] + family.masses[subset[low]];
    }
    let cost = |t: usize| if alpha == 0.0 { 1.0 } else { mass[t].powf(alpha) };

    let mut best = vec![f64::INFINITY; size];
    best[0] = 0.0;
    for s in 1..size {
        let low = s & s.wrapping_neg();
        let rest = s ^ low;
        // blocks are `low | r` for submasks r of the rest
        let mut r = rest;
        loop {
            let t = low | r;
            if coverable[t] {
                let v = cost(t) + best[s ^ t];
                if v < best[s] {
                    best[s] = v;
                }
            }
            if r == 0 {
                break;
            }
            r = (r - 1) & rest;
        }
    }
    Ok(best[size - 1].ln())
}

/// A finite mixture `Σ_j w_j f_j` with weights summing to 1.
#[derive(Clone)]
pub struct MixtureDensity {
    components: Vec<Arc<dyn Density>>,
    weights: Vec<f64>,
    breakpoints: Vec<f64>,
}

impl std::fmt::Debug for MixtureDensity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MixtureDensity")
            .field("weights", &self.weights)
            .finish()
    }
}

impl MixtureDensity {
    /// From component log weights, normalized by log-sum-exp.
    pub fn from_log_weights(components: Vec<Arc<dyn Density>>, log_weights: &[f64]) -> Result<Self> {
        if components.is_empty() || components.len() != log_weights.len() {
            return Err(Error::DimensionMismatch {
                expected: components.len(),
                actual: log_weights.len(),
            });
        }
        let max = log_weights.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        if !max.is_finite() {
            return Err(Error::ZeroEvidence);
        }
        let raw: Vec<f64> = log_weights.iter().map(|w| (w - max).exp()).collect();
        let total: f64 = raw.iter().sum();
        let lists: Vec<Vec<f64>> = components.iter().map(|c| c.breakpoints()).collect();
        let refs: Vec<&[f64]> = lists.iter().map(|l| l.as_slice()).collect();
        Ok(Self {
            components,
            weights: raw.iter().map(|r| r / total).collect(),
            breakpoints: merge_breakpoints(&refs),
        })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

impl Density for MixtureDensity {
    fn pdf(&self, x: f64) -> f64 {
        self.components
            .iter()
            .zip(&self.weights)
            .map(|(c, w)| w * c.pdf(x))
            .sum()
    }

    fn breakpoints(&self) -> Vec<f64> {
        self.breakpoints.clone()
    }
}

/// Predictive density of the prior restricted to `subset` after observing
/// `data_prefix`: `Σ_{j∈B} w_j f_j` with `w_j ∝ Π({f_j}) ∏_i f_j(X_i)`.
pub fn walker_predictive(
    family: &DiscreteFamily,
    subset: &[usize],
    data_prefix: &[f64],
) -> Result<MixtureDensity> {
    family.check_subset(subset)?;
    if let Some(&x) = data_prefix.iter().find(|x| !(0.0..=1.0).contains(*x)) {
        return Err(Error::OutOfDomain(x));
    }
    let components: Vec<Arc<dyn Density>> =
        subset.iter().map(|&j| family.members[j].clone()).collect();
    let log_weights: Vec<f64> = subset
        .iter()
        .map(|&j| {
            let f = &family.members[j];
            family.masses[j].ln() + data_prefix.iter().map(|&x| f.ln_pdf(x)).sum::<f64>()
        })
        .collect();
    MixtureDensity::from_log_weights(components, &log_weights)
}

/// Rényi affinity `ρ_α(f, f0) = ∫ f^α f0^{1-α}`.
pub fn renyi_integral(f: &dyn Density, f0: &dyn Density, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(invalid("alpha", "alpha must lie in (0, 1)"));
    }
    let bf = f.breakpoints();
    let b0 = f0.breakpoints();
    let rule = CompositeRule::new(&merge_breakpoints(&[&bf, &b0]), NODES_PER_PANEL);
    Ok(rule.integrate(|x| f.pdf(x).powf(alpha) * f0.pdf(x).powf(1.0 - alpha)))
}

/// Outcome of one Monte-Carlo check of
/// `E(∫_D R_n dΠ)^α ≤ exp(J(ε, D, α, Π, H) + ((α-1)/2)(r-2)² n ε²)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport {
    /// Members at Hellinger distance at least `r ε` from the truth.
    pub outer: Vec<usize>,
    pub lhs_estimate: f64,
    pub lhs_se: f64,
    /// `J(ε, D, α, Π, H)`, or `-∞` when `D` is empty.
    pub entropy: f64,
    pub rhs_bound: f64,
    pub pass: bool,
}

/// Estimates the left side by averaging `(Σ_{j∈D} Π({f_j}) ∏_i f_j(X_i)/f0(X_i))^α`
/// over `replications` samples of size `n` from the truth. The check passes
/// when the estimate minus three standard errors does not exceed the bound.
pub fn ball_complement_bound_check<R: Rng + ?Sized>(
    family: &DiscreteFamily,
    r: f64,
    eps: f64,
    alpha: f64,
    n: usize,
    replications: usize,
    rng: &mut R,
) -> Result<BoundReport> {
    if !(r > 2.0) {
        return Err(invalid("r", "r must exceed 2"));
    }
    if !(eps > 0.0) {
        return Err(invalid("eps", "eps must be positive"));
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(invalid("alpha", "alpha must lie in (0, 1]"));
    }
    if replications < 100 {
        return Err(invalid("replications", "need at least 100 replications"));
    }
    let truth = family.truth.clone();
    let mut outer = Vec::new();
    for (j, f) in family.members.iter().enumerate() {
        if hellinger(f, &truth)? >= r * eps {
            outer.push(j);
        }
    }
    if outer.is_empty() {
        return Ok(BoundReport {
            outer,
            lhs_estimate: 0.0,
            lhs_se: 0.0,
            entropy: f64::NEG_INFINITY,
            rhs_bound: 0.0,
            pass: true,
        });
    }
    let entropy = hausdorff_alpha_entropy_of(family, &outer, eps, alpha)?;
    let exponent = entropy + 0.5 * (alpha - 1.0) * (r - 2.0).powi(2) * n as f64 * eps * eps;
    let rhs_bound = exponent.exp();

    let mut values = Vec::with_capacity(replications);
    let mut logs = vec![0.0; outer.len()];
    for _ in 0..replications {
        let data = sample_iid(&truth, n, rng)?;
        for (l, &j) in logs.iter_mut().zip(&outer) {
            let f = &family.members[j];
            *l = family.masses[j].ln()
                + data.iter().map(|&x| f.ln_pdf(x) - truth.ln_pdf(x)).sum::<f64>();
        }
        let max = logs.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let log_integral = max + logs.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        values.push((alpha * log_integral).exp());
    }
    let count = values.len() as f64;
    let mean = values.iter().sum::<f64>() / count;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (count - 1.0);
    let lhs_se = (var / count).sqrt();
    Ok(BoundReport {
        outer,
        lhs_estimate: mean,
        lhs_se,
        entropy,
        rhs_bound,
        pass: mean - 3.0 * lhs_se <= rhs_bound,
    })
}
