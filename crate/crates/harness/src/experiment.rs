//! The (n, replication) grid shared by the rate and selection experiments.
//!
//! Each cell draws one data set from the truth, fits every model (MAP,
//! adaptive Metropolis, importance-sampled marginal likelihood), forms the
//! index posterior and records posterior distances to the truth. Cells run
//! in parallel; each one seeds its own generators from
//! [`derive_seed`](crate::seeds::derive_seed), and results are collected in
//! grid order, so output does not depend on the number of threads.

use std::sync::Arc;

use logspline_core::density::{log_norm_raw, Density};
use logspline_core::inference::{fit_model, IndexPosterior, McmcOptions, PosteriorRun};
use logspline_core::metrics::ReferenceGrid;
use logspline_core::priors::{make_model_spec, IndexPrior, ModelSpec};
use logspline_core::sampling::InverseCdfSampler;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classify::classify_indices;
use crate::error::{config_error, HarnessError, Result};
use crate::seeds::{derive_seed, TAG_CHAIN, TAG_DATA};
use crate::slope::{fit_log_slope, LineFit};
use crate::table::{Table, Value};
use crate::truth::{make_truth, TruthSpec};

/// The sieve: which smoothness indices, with which prior weights, and how
/// each model is built from `n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSettings {
    pub indices: Vec<f64>,
    /// Prior weights `λ_γ`; uniform when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    /// Spline order `q`.
    pub order: usize,
    /// Coefficient box `M`.
    pub bound: f64,
    /// `K_n = round(scale · n^{1/(2γ+1)})`.
    pub scale: f64,
    /// Use the `√log n` target rates.
    #[serde(default)]
    pub log_factor: bool,
}

impl Default for ModelSettings {
    fn default() -> Self {
        Self {
            indices: vec![1.0, 2.0],
            weights: None,
            order: 4,
            bound: 4.0,
            scale: 1.0,
            log_factor: false,
        }
    }
}

impl ModelSettings {
    pub fn prior(&self) -> Result<IndexPrior> {
        Ok(match &self.weights {
            Some(w) => IndexPrior::new(self.indices.clone(), w.clone())?,
            None => IndexPrior::uniform(self.indices.clone())?,
        })
    }

    pub fn specs(&self, n: usize) -> Result<Vec<ModelSpec>> {
        self.indices
            .iter()
            .map(|&g| {
                make_model_spec(g, n, self.order, self.bound, self.scale, self.log_factor)
                    .map_err(HarnessError::from)
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.indices.is_empty() {
            return Err(config_error("models.indices", "must be nonempty"));
        }
        self.prior()?;
        // a small sample size exercises every per-model check
        self.specs(16)?;
        Ok(())
    }
}

/// Monte-Carlo effort per model fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerSettings {
    /// Retained Metropolis draws per model.
    pub draws: usize,
    /// Importance samples for each marginal likelihood.
    pub is_samples: usize,
    /// Evenly thinned draws used for posterior distance summaries.
    pub distance_draws: usize,
    pub burn_in_fraction: f64,
}

impl Default for SamplerSettings {
    fn default() -> Self {
        Self {
            draws: 2000,
            is_samples: 2000,
            distance_draws: 200,
            burn_in_fraction: 0.5,
        }
    }
}

impl SamplerSettings {
    pub fn validate(&self) -> Result<()> {
        if self.draws == 0 {
            return Err(config_error("sampler.draws", "must be positive"));
        }
        if self.is_samples < 100 {
            return Err(config_error("sampler.is_samples", "must be at least 100"));
        }
        if self.distance_draws == 0 {
            return Err(config_error("sampler.distance_draws", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.burn_in_fraction) {
            return Err(config_error("sampler.burn_in_fraction", "must lie in [0, 1)"));
        }
        Ok(())
    }

    pub fn mcmc(&self) -> McmcOptions {
        McmcOptions {
            burn_in_fraction: self.burn_in_fraction,
            ..McmcOptions::default()
        }
    }
}

pub(crate) fn validate_n_grid(n_grid: &[usize], key: &'static str) -> Result<()> {
    if n_grid.len() < 3 {
        return Err(config_error(key, "a slope needs at least 3 sample sizes"));
    }
    if n_grid[0] < 2 {
        return Err(config_error(key, "sample sizes must be at least 2"));
    }
    if n_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(config_error(key, "must be strictly increasing"));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub truth: TruthSpec,
    pub models: ModelSettings,
    pub sampler: SamplerSettings,
    pub n_grid: Vec<usize>,
    pub replications: usize,
    pub master_seed: u64,
    /// Width `H ≥ 1` of the correct-rate band.
    pub band_h: f64,
}

impl GridConfig {
    pub fn validate(&self) -> Result<()> {
        self.truth.validate()?;
        self.models.validate()?;
        self.sampler.validate()?;
        validate_n_grid(&self.n_grid, "n_grid")?;
        if self.replications == 0 {
            return Err(config_error("replications", "must be positive"));
        }
        if !self.models.indices.contains(&self.truth.beta) {
            return Err(config_error("truth.beta", "must be one of the model indices"));
        }
        if !(self.band_h >= 1.0) {
            return Err(config_error("thresholds.band_h", "must be at least 1"));
        }
        Ok(())
    }
}

/// Per-model results within one cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelOutcome {
    pub gamma: f64,
    pub intervals: usize,
    pub dim: usize,
    pub chain_seed: u64,
    pub log_marginal: f64,
    pub log_marginal_se: f64,
    pub probability: f64,
    pub acceptance_rate: f64,
    pub hellinger_median: f64,
    pub l2_median: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellOutcome {
    pub n: usize,
    pub replication: usize,
    pub cell_seed: u64,
    pub models: Vec<ModelOutcome>,
    /// Weighted medians over the draws of all models, each model's draws
    /// weighted by its posterior probability.
    pub mixture_hellinger_median: f64,
    pub mixture_l2_median: f64,
    pub band: Vec<f64>,
    pub band_mass: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridResult {
    pub config: GridConfig,
    /// Cells in `(n, replication)` order.
    pub cells: Vec<CellOutcome>,
}

/// Evenly spaced subset of at most `count` draws.
fn thin(draws: &[logspline_core::Theta], count: usize) -> impl Iterator<Item = &logspline_core::Theta> {
    let len = draws.len();
    let take = count.min(len);
    (0..take).map(move |i| &draws[i * len / take])
}

/// Smallest value at which the cumulative weight reaches half the total.
pub fn weighted_median(mut pairs: Vec<(f64, f64)>) -> f64 {
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total: f64 = pairs.iter().map(|p| p.1).sum();
    let mut acc = 0.0;
    for &(v, w) in &pairs {
        acc += w;
        if acc >= 0.5 * total {
            return v;
        }
    }
    pairs.last().map_or(f64::NAN, |p| p.0)
}

fn median(values: &[f64]) -> f64 {
    weighted_median(values.iter().map(|&v| (v, 1.0)).collect())
}

struct Distances {
    hellinger: Vec<f64>,
    l2: Vec<f64>,
}

fn posterior_distances(run: &PosteriorRun, f0: &dyn Density, count: usize) -> logspline_core::Result<Distances> {
    let basis = Arc::new(run.spec.basis()?);
    let grid = ReferenceGrid::new(basis.clone(), f0)?;
    let mut out = Distances {
        hellinger: Vec::new(),
        l2: Vec::new(),
    };
    for theta in thin(&run.draws, count) {
        let c = log_norm_raw(&basis, theta.values())?;
        let d = grid.distances(theta.values(), c)?;
        out.hellinger.push(d.hellinger);
        out.l2.push(d.l2);
    }
    Ok(out)
}

fn run_cell(
    cfg: &GridConfig,
    f0: &dyn Density,
    sampler: &InverseCdfSampler<'_>,
    prior: &IndexPrior,
    n_index: usize,
    replication: usize,
) -> Result<CellOutcome> {
    let n = cfg.n_grid[n_index];
    let cell_seed = derive_seed(cfg.master_seed, TAG_DATA, n_index as u64, replication as u64);
    let data = sampler.sample_n(n, &mut ChaCha8Rng::seed_from_u64(cell_seed));
    let specs = cfg.models.specs(n)?;
    let wrap = |gamma: f64| {
        move |source| HarnessError::Cell {
            n,
            replication,
            gamma,
            source,
        }
    };

    let mut runs = Vec::with_capacity(specs.len());
    let mut seeds = Vec::with_capacity(specs.len());
    for (gi, spec) in specs.iter().enumerate() {
        let chain_seed = derive_seed(cell_seed, TAG_CHAIN, gi as u64, 0);
        let run = fit_model(
            spec,
            &data,
            cfg.sampler.draws,
            cfg.sampler.is_samples,
            chain_seed,
            cfg.sampler.mcmc(),
        )
        .map_err(wrap(spec.gamma))?;
        runs.push(run);
        seeds.push(chain_seed);
    }
    let marginals: Vec<_> = runs
        .iter()
        .map(|r| r.log_marginal.expect("fit_model estimates the marginal"))
        .collect();
    let post = IndexPosterior::from_log_marginals(
        prior,
        &marginals.iter().map(|m| m.log_value).collect::<Vec<_>>(),
    )?;

    let mut models = Vec::with_capacity(runs.len());
    let mut mix_h = Vec::new();
    let mut mix_l2 = Vec::new();
    for (gi, run) in runs.iter().enumerate() {
        let d = posterior_distances(run, f0, cfg.sampler.distance_draws).map_err(wrap(run.spec.gamma))?;
        let p = post.probabilities[gi];
        let w = p / d.hellinger.len() as f64;
        mix_h.extend(d.hellinger.iter().map(|&v| (v, w)));
        mix_l2.extend(d.l2.iter().map(|&v| (v, w)));
        models.push(ModelOutcome {
            gamma: run.spec.gamma,
            intervals: run.spec.intervals,
            dim: run.spec.dim,
            chain_seed: seeds[gi],
            log_marginal: marginals[gi].log_value,
            log_marginal_se: marginals[gi].std_error,
            probability: p,
            acceptance_rate: run.acceptance_rate,
            hellinger_median: median(&d.hellinger),
            l2_median: median(&d.l2),
        });
    }
    let partition = classify_indices(&specs, cfg.truth.beta, cfg.band_h)?;
    let band_mass = post.mass_of(&partition.band);
    Ok(CellOutcome {
        n,
        replication,
        cell_seed,
        models,
        mixture_hellinger_median: weighted_median(mix_h),
        mixture_l2_median: weighted_median(mix_l2),
        band: partition.band,
        band_mass,
    })
}

/// Runs every `(n, replication)` cell of the grid.
pub fn run_grid(cfg: &GridConfig) -> Result<GridResult> {
    cfg.validate()?;
    let f0 = make_truth(&cfg.truth)?;
    let sampler = InverseCdfSampler::new(f0.as_ref())?;
    let prior = cfg.models.prior()?;
    let coords: Vec<(usize, usize)> = (0..cfg.n_grid.len())
        .flat_map(|i| (0..cfg.replications).map(move |r| (i, r)))
        .collect();
    let cells = coords
        .par_iter()
        .map(|&(i, r)| run_cell(cfg, f0.as_ref(), &sampler, &prior, i, r))
        .collect::<Result<Vec<_>>>()?;
    Ok(GridResult {
        config: cfg.clone(),
        cells,
    })
}

/// Fitted contraction rates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateSummary {
    /// `-β/(2β+1)` for the truth's nominal β.
    pub target_slope: f64,
    pub tolerance: f64,
    pub hellinger: LineFit,
    pub l2: LineFit,
    pub within_tolerance: bool,
    /// Fraction of adjacent sample sizes at which the across-replication
    /// median of the mixture Hellinger median does not increase.
    pub monotone_fraction: f64,
}

pub fn rate_summary(grid: &GridResult, tolerance: f64) -> Result<RateSummary> {
    let beta = grid.config.truth.beta;
    let target_slope = -beta / (2.0 * beta + 1.0);
    let h: Vec<(f64, f64)> = grid
        .cells
        .iter()
        .map(|c| (c.n as f64, c.mixture_hellinger_median))
        .collect();
    let l2: Vec<(f64, f64)> = grid
        .cells
        .iter()
        .map(|c| (c.n as f64, c.mixture_l2_median))
        .collect();
    let hellinger = fit_log_slope(&h)?;
    let l2 = fit_log_slope(&l2)?;
    let per_n: Vec<f64> = grid
        .config
        .n_grid
        .iter()
        .map(|&n| {
            let v: Vec<f64> = grid
                .cells
                .iter()
                .filter(|c| c.n == n)
                .map(|c| c.mixture_hellinger_median)
                .collect();
            median(&v)
        })
        .collect();
    let steps = per_n.len() - 1;
    let down = per_n.windows(2).filter(|w| w[1] <= w[0]).count();
    Ok(RateSummary {
        target_slope,
        tolerance,
        within_tolerance: (hellinger.slope - target_slope).abs() <= tolerance,
        hellinger,
        l2,
        monotone_fraction: down as f64 / steps as f64,
    })
}

/// Concentration of the index posterior on the correct-rate band.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectionSummary {
    pub threshold: f64,
    pub largest_n: usize,
    /// Replications whose band mass at the largest `n` exceeds the threshold.
    pub above_threshold: usize,
    pub replications: usize,
    /// `(n, median band mass across replications)`.
    pub median_trajectory: Vec<(usize, f64)>,
}

pub fn selection_summary(grid: &GridResult, threshold: f64) -> SelectionSummary {
    let largest_n = *grid.config.n_grid.last().expect("validated grid");
    let median_trajectory = grid
        .config
        .n_grid
        .iter()
        .map(|&n| {
            let v: Vec<f64> = grid
                .cells
                .iter()
                .filter(|c| c.n == n)
                .map(|c| c.band_mass)
                .collect();
            (n, median(&v))
        })
        .collect();
    SelectionSummary {
        threshold,
        largest_n,
        above_threshold: grid
            .cells
            .iter()
            .filter(|c| c.n == largest_n && c.band_mass > threshold)
            .count(),
        replications: grid.config.replications,
        median_trajectory,
    }
}

fn gamma_label(g: f64) -> Value {
    Value::Float(g)
}

/// One row per (n, replication, model) plus one `mixture` row per cell.
pub fn rate_table(grid: &GridResult) -> Table {
    let mut t = Table::new([
        "experiment",
        "master_seed",
        "n",
        "replication",
        "gamma",
        "cell_seed",
        "index_posterior_mass",
        "hellinger_median",
        "l2_median",
    ]);
    let seed = grid.config.master_seed;
    for c in &grid.cells {
        for m in &c.models {
            t.push(vec![
                "rate".into(),
                seed.into(),
                c.n.into(),
                c.replication.into(),
                gamma_label(m.gamma),
                c.cell_seed.into(),
                m.probability.into(),
                m.hellinger_median.into(),
                m.l2_median.into(),
            ]);
        }
        t.push(vec![
            "rate".into(),
            seed.into(),
            c.n.into(),
            c.replication.into(),
            "mixture".into(),
            c.cell_seed.into(),
            1.0.into(),
            c.mixture_hellinger_median.into(),
            c.mixture_l2_median.into(),
        ]);
    }
    t
}

/// Per-model sampler diagnostics.
pub fn diagnostics_table(grid: &GridResult) -> Table {
    let mut t = Table::new([
        "master_seed",
        "n",
        "replication",
        "gamma",
        "cell_seed",
        "chain_seed",
        "intervals",
        "dim",
        "log_marginal",
        "log_marginal_se",
        "acceptance_rate",
    ]);
    for c in &grid.cells {
        for m in &c.models {
            t.push(vec![
                grid.config.master_seed.into(),
                c.n.into(),
                c.replication.into(),
                gamma_label(m.gamma),
                c.cell_seed.into(),
                m.chain_seed.into(),
                m.intervals.into(),
                m.dim.into(),
                m.log_marginal.into(),
                m.log_marginal_se.into(),
                m.acceptance_rate.into(),
            ]);
        }
    }
    t
}

pub fn selection_table(grid: &GridResult) -> Table {
    let mut t = Table::new([
        "experiment",
        "master_seed",
        "n",
        "replication",
        "cell_seed",
        "band",
        "band_mass",
    ]);
    for c in &grid.cells {
        let band = c
            .band
            .iter()
            .map(|g| g.to_string())
            .collect::<Vec<_>>()
            .join(" ");
        t.push(vec![
            "select".into(),
            grid.config.master_seed.into(),
            c.n.into(),
            c.replication.into(),
            c.cell_seed.into(),
            band.into(),
            c.band_mass.into(),
        ]);
    }
    t
}

/// Aggregates over all cells, so `cell_seed` is left empty.
pub fn rate_summary_table(s: &RateSummary, master_seed: u64) -> Table {
    let mut t = Table::new(["master_seed", "cell_seed", "metric", "value"]);
    let rows: [(&str, Value); 10] = [
        ("target_slope", s.target_slope.into()),
        ("tolerance", s.tolerance.into()),
        ("hellinger_slope", s.hellinger.slope.into()),
        ("hellinger_slope_se", s.hellinger.std_error.into()),
        ("hellinger_intercept", s.hellinger.intercept.into()),
        ("l2_slope", s.l2.slope.into()),
        ("l2_slope_se", s.l2.std_error.into()),
        ("l2_intercept", s.l2.intercept.into()),
        ("monotone_fraction", s.monotone_fraction.into()),
        ("within_tolerance", s.within_tolerance.into()),
    ];
    for (k, v) in rows {
        t.push(vec![master_seed.into(), "".into(), k.into(), v]);
    }
    t
}

/// Aggregates over replications, so `cell_seed` is left empty.
pub fn selection_summary_table(s: &SelectionSummary, master_seed: u64) -> Table {
    let mut t = Table::new([
        "master_seed",
        "cell_seed",
        "n",
        "median_band_mass",
        "above_threshold",
        "replications",
        "threshold",
    ]);
    for &(n, m) in &s.median_trajectory {
        let above = if n == s.largest_n {
            Value::from(s.above_threshold)
        } else {
            Value::Text(String::new())
        };
        t.push(vec![
            master_seed.into(),
            "".into(),
            n.into(),
            m.into(),
            above,
            s.replications.into(),
            s.threshold.into(),
        ]);
    }
    t
}
