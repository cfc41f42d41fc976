//! Drift of the log Bayes factor between two models as data accumulate.
//!
//! Each replication draws one data stream of the largest sample size; the
//! Bayes factor at each `n` uses its first `n` observations. The sign of the
//! least-squares slope of `log BF_n` against `n` is compared with the
//! direction predicted by the configuration.

use logspline_core::inference::bayes_factor;
use logspline_core::sampling::InverseCdfSampler;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{config_error, HarnessError, Result};
use crate::experiment::{validate_n_grid, ModelSettings};
use crate::seeds::{derive_seed, TAG_BAYES_FACTOR, TAG_DATA};
use crate::slope::{fit_line, LineFit};
use crate::table::Table;
use crate::truth::{make_truth, TruthSpec};

/// Predicted direction of `log BF_n = log(λ₂m₂/λ₁m₁)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Drift {
    /// Evidence accumulates for the second model.
    Increasing,
    /// Evidence accumulates for the first model.
    Decreasing,
}

impl Drift {
    fn matches(self, slope: f64) -> bool {
        match self {
            Drift::Increasing => slope > 0.0,
            Drift::Decreasing => slope < 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BfConfig {
    pub truth: TruthSpec,
    /// Exactly two indices.
    pub models: ModelSettings,
    pub is_samples: usize,
    pub n_grid: Vec<usize>,
    pub replications: usize,
    pub master_seed: u64,
    pub expected: Drift,
}

impl BfConfig {
    pub fn validate(&self) -> Result<()> {
        self.truth.validate()?;
        self.models.validate()?;
        if self.models.indices.len() != 2 {
            return Err(config_error("models.indices", "a Bayes factor compares exactly two models"));
        }
        validate_n_grid(&self.n_grid, "n_grid")?;
        if self.replications == 0 {
            return Err(config_error("replications", "must be positive"));
        }
        if self.is_samples < 100 {
            return Err(config_error("sampler.is_samples", "must be at least 100"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BfPoint {
    pub replication: usize,
    pub n: usize,
    pub data_seed: u64,
    pub is_seed: u64,
    pub log_bf: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BfReplication {
    pub replication: usize,
    pub data_seed: u64,
    /// Slope of `log BF_n` against `n`.
    pub drift: LineFit,
    pub direction_correct: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BfResult {
    pub config: BfConfig,
    /// In `(replication, n)` order.
    pub points: Vec<BfPoint>,
    pub replications: Vec<BfReplication>,
    pub correct: usize,
}

pub fn bf_experiment(cfg: &BfConfig) -> Result<BfResult> {
    cfg.validate()?;
    let f0 = make_truth(&cfg.truth)?;
    let sampler = InverseCdfSampler::new(f0.as_ref())?;
    let prior = cfg.models.prior()?;
    let largest = *cfg.n_grid.last().expect("validated grid");
    let coords: Vec<(usize, usize)> = (0..cfg.replications)
        .flat_map(|r| (0..cfg.n_grid.len()).map(move |i| (r, i)))
        .collect();
    let points = coords
        .par_iter()
        .map(|&(r, i)| {
            let n = cfg.n_grid[i];
            let data_seed = derive_seed(cfg.master_seed, TAG_DATA, r as u64, u64::MAX);
            // the stream is regenerated per cell so cells stay independent
            let data = sampler.sample_n(largest, &mut ChaCha8Rng::seed_from_u64(data_seed));
            let is_seed = derive_seed(data_seed, TAG_BAYES_FACTOR, i as u64, 0);
            let specs = cfg.models.specs(n)?;
            let bf = bayes_factor(&specs[0], &specs[1], &prior, &data[..n], cfg.is_samples, is_seed)
                .map_err(|source| HarnessError::Cell {
                    n,
                    replication: r,
                    gamma: specs[1].gamma,
                    source,
                })?;
            Ok(BfPoint {
                replication: r,
                n,
                data_seed,
                is_seed,
                log_bf: bf.log_value,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut replications = Vec::with_capacity(cfg.replications);
    for r in 0..cfg.replications {
        let pts: Vec<(f64, f64)> = points
            .iter()
            .filter(|p| p.replication == r)
            .map(|p| (p.n as f64, p.log_bf))
            .collect();
        let drift = fit_line(&pts)?;
        replications.push(BfReplication {
            replication: r,
            data_seed: points.iter().find(|p| p.replication == r).expect("complete grid").data_seed,
            direction_correct: cfg.expected.matches(drift.slope),
            drift,
        });
    }
    let correct = replications.iter().filter(|r| r.direction_correct).count();
    Ok(BfResult {
        config: cfg.clone(),
        points,
        replications,
        correct,
    })
}

pub fn bf_table(result: &BfResult) -> Table {
    let mut t = Table::new(["experiment", "master_seed", "replication", "n", "cell_seed", "is_seed", "log_bf"]);
    for p in &result.points {
        t.push(vec![
            "bf".into(),
            result.config.master_seed.into(),
            p.replication.into(),
            p.n.into(),
            p.data_seed.into(),
            p.is_seed.into(),
            p.log_bf.into(),
        ]);
    }
    t
}

pub fn bf_summary_table(result: &BfResult) -> Table {
    let mut t = Table::new([
        "master_seed",
        "replication",
        "cell_seed",
        "drift_slope",
        "drift_slope_se",
        "direction_correct",
    ]);
    for r in &result.replications {
        t.push(vec![
            result.config.master_seed.into(),
            r.replication.into(),
            r.data_seed.into(),
            r.drift.slope.into(),
            r.drift.std_error.into(),
            r.direction_correct.into(),
        ]);
    }
    t
}
