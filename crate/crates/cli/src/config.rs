//! The JSON experiment configuration.
//!
//! One document describes a run completely. Every section rejects unknown
//! keys, and all ranges are checked before any work starts.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use logspline_core::density::{Density, LogSplineDensity, StepDensity, Theta, Uniform};
use logspline_core::entropy::{CoverMode, DiscreteFamily, EXACT_LIMIT};
use logspline_core::SplineBasis;
use logspline_harness::{BfConfig, Drift, GridConfig, ModelSettings, SamplerSettings, TruthSpec};
use serde::{Deserialize, Serialize};

use crate::error::{config_error, CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommandKind {
    Fit,
    Rate,
    Select,
    Bf,
    Entropy,
    Verify,
}

impl CommandKind {
    pub fn name(self) -> &'static str {
        match self {
            CommandKind::Fit => "fit",
            CommandKind::Rate => "rate",
            CommandKind::Select => "select",
            CommandKind::Bf => "bf",
            CommandKind::Entropy => "entropy",
            CommandKind::Verify => "verify",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    /// Allowed distance between the fitted and nominal rate slopes.
    pub rate_tolerance: f64,
    /// Band mass a replication must exceed at the largest `n`.
    pub selection_mass: f64,
    /// Width `H` of the correct-rate band.
    pub band_h: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            rate_tolerance: 0.1,
            selection_mass: 0.9,
            band_h: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitSection {
    /// Observations in `[0, 1]`, whitespace or comma separated; `#` starts a comment.
    pub data: PathBuf,
    pub gamma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BfSection {
    pub expected: Drift,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum MemberSpec {
    #[default]
    Uniform,
    /// Piecewise constant on equal cells with the given cell probabilities.
    Step { probabilities: Vec<f64> },
    LogSpline {
        order: usize,
        intervals: usize,
        theta: Vec<f64>,
    },
}

impl MemberSpec {
    pub fn build(&self) -> logspline_core::Result<Arc<dyn Density>> {
        Ok(match self {
            MemberSpec::Uniform => Arc::new(Uniform),
            MemberSpec::Step { probabilities } => Arc::new(StepDensity::from_probabilities(probabilities)?),
            MemberSpec::LogSpline {
                order,
                intervals,
                theta,
            } => {
                let basis = Arc::new(SplineBasis::new(*order, *intervals)?);
                Arc::new(LogSplineDensity::new(basis, Theta::new(theta.clone())?)?)
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoverChoice {
    #[default]
    Exact,
    Greedy,
}

impl From<CoverChoice> for CoverMode {
    fn from(c: CoverChoice) -> Self {
        match c {
            CoverChoice::Exact => CoverMode::Exact,
            CoverChoice::Greedy => CoverMode::Greedy,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundCheckSpec {
    pub r: f64,
    pub eps: f64,
    pub alpha: f64,
    pub n: usize,
    #[serde(default = "default_bound_replications")]
    pub replications: usize,
}

fn default_bound_replications() -> usize {
    1000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntropySection {
    pub members: Vec<MemberSpec>,
    pub masses: Vec<f64>,
    #[serde(default)]
    pub truth: MemberSpec,
    pub deltas: Vec<f64>,
    pub alphas: Vec<f64>,
    #[serde(default)]
    pub cover: CoverChoice,
    #[serde(default)]
    pub bound_checks: Vec<BoundCheckSpec>,
}

impl EntropySection {
    pub fn family(&self) -> Result<DiscreteFamily> {
        let members = self
            .members
            .iter()
            .map(MemberSpec::build)
            .collect::<logspline_core::Result<Vec<_>>>()?;
        Ok(DiscreteFamily::new(members, self.masses.clone(), self.truth.build()?)?)
    }

    fn validate(&self) -> Result<()> {
        if self.members.is_empty() {
            return Err(config_error("entropy.members", "must be nonempty"));
        }
        if self.cover == CoverChoice::Exact && self.members.len() > EXACT_LIMIT {
            return Err(config_error(
                "entropy.members",
                format!("exact covering supports at most {EXACT_LIMIT} members; use \"cover\": \"greedy\""),
            ));
        }
        if self.masses.len() != self.members.len() {
            return Err(config_error("entropy.masses", "needs one mass per member"));
        }
        if self.deltas.is_empty() || self.deltas.iter().any(|d| !(*d > 0.0 && d.is_finite())) {
            return Err(config_error("entropy.deltas", "must be a nonempty list of positive radii"));
        }
        if self.alphas.is_empty() || self.alphas.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(config_error("entropy.alphas", "must be a nonempty list of values in [0, 1]"));
        }
        for b in &self.bound_checks {
            if !(b.r > 2.0) {
                return Err(config_error("entropy.bound_checks.r", "must exceed 2"));
            }
            if !(b.eps > 0.0) {
                return Err(config_error("entropy.bound_checks.eps", "must be positive"));
            }
            if !(b.alpha > 0.0 && b.alpha <= 1.0) {
                return Err(config_error("entropy.bound_checks.alpha", "must lie in (0, 1]"));
            }
            if b.n == 0 {
                return Err(config_error("entropy.bound_checks.n", "must be positive"));
            }
            if b.replications < 100 {
                return Err(config_error("entropy.bound_checks.replications", "must be at least 100"));
            }
        }
        self.family().map_err(|e| config_error("entropy", e.to_string()))?;
        Ok(())
    }
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_true() -> bool {
    true
}

fn default_n_grid() -> Vec<usize> {
    vec![256, 512, 1024, 2048, 4096, 8192, 16384]
}

fn default_replications() -> usize {
    20
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// When present, must name the subcommand being run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subcommand: Option<CommandKind>,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Emit SVG plots next to the CSV files.
    #[serde(default = "default_true")]
    pub plots: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<TruthSpec>,
    #[serde(default)]
    pub models: ModelSettings,
    #[serde(default)]
    pub sampler: SamplerSettings,
    #[serde(default = "default_n_grid")]
    pub n_grid: Vec<usize>,
    #[serde(default = "default_replications")]
    pub replications: usize,
    #[serde(default)]
    pub thresholds: Thresholds,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit: Option<FitSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bf: Option<BfSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entropy: Option<EntropySection>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("every field has a default")
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str, path: &Path) -> Result<Self> {
        serde_json::from_str(text).map_err(|source| CliError::Json {
            path: path.to_owned(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Read {
            path: path.to_owned(),
            source,
        })?;
        Self::from_json(&text, path)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config is always serializable")
    }

    fn truth(&self) -> Result<TruthSpec> {
        self.truth
            .clone()
            .ok_or_else(|| config_error("truth", "is required for this subcommand"))
    }

    pub fn grid_config(&self) -> Result<GridConfig> {
        let cfg = GridConfig {
            truth: self.truth()?,
            models: self.models.clone(),
            sampler: self.sampler,
            n_grid: self.n_grid.clone(),
            replications: self.replications,
            master_seed: self.master_seed,
            band_h: self.thresholds.band_h,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn bf_config(&self) -> Result<BfConfig> {
        let section = self
            .bf
            .as_ref()
            .ok_or_else(|| config_error("bf", "section is required for the bf subcommand"))?;
        let cfg = BfConfig {
            truth: self.truth()?,
            models: self.models.clone(),
            is_samples: self.sampler.is_samples,
            n_grid: self.n_grid.clone(),
            replications: self.replications,
            master_seed: self.master_seed,
            expected: section.expected,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks everything `command` will use.
    pub fn validate_for(&self, command: CommandKind) -> Result<()> {
        if let Some(declared) = self.subcommand {
            if declared != command {
                return Err(config_error(
                    "subcommand",
                    format!("is `{}` but `{}` was requested", declared.name(), command.name()),
                ));
            }
        }
        let t = &self.thresholds;
        if !(t.rate_tolerance > 0.0) {
            return Err(config_error("thresholds.rate_tolerance", "must be positive"));
        }
        if !(t.selection_mass > 0.0 && t.selection_mass < 1.0) {
            return Err(config_error("thresholds.selection_mass", "must lie in (0, 1)"));
        }
        match command {
            CommandKind::Rate | CommandKind::Select => {
                self.grid_config()?;
            }
            CommandKind::Bf => {
                self.bf_config()?;
            }
            CommandKind::Fit => {
                let fit = self
                    .fit
                    .as_ref()
                    .ok_or_else(|| config_error("fit", "section is required for the fit subcommand"))?;
                if !(fit.gamma > 0.0 && fit.gamma.is_finite()) {
                    return Err(config_error("fit.gamma", "must be positive"));
                }
                self.models.validate()?;
                self.sampler.validate()?;
            }
            CommandKind::Entropy => {
                self.entropy
                    .as_ref()
                    .ok_or_else(|| config_error("entropy", "section is required for the entropy subcommand"))?
                    .validate()?;
            }
            CommandKind::Verify => {}
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<ExperimentConfig> {
        ExperimentConfig::from_json(text, Path::new("test.json"))
    }

    #[test]
    fn empty_document_takes_defaults() {
        let cfg = parse("{}").unwrap();
        assert_eq!(cfg.replications, 20);
        assert_eq!(cfg.n_grid.len(), 7);
        assert_eq!(cfg.models, ModelSettings::default());
        cfg.validate_for(CommandKind::Verify).unwrap();
    }

    #[test]
    fn unknown_keys_are_named() {
        let err = parse(r#"{"replicatons": 3}"#).unwrap_err().to_string();
        assert!(err.contains("replicatons"), "{err}");
        let err = parse(r#"{"models": {"order": 4, "bogus": 1}}"#).unwrap_err().to_string();
        assert!(err.contains("bogus"), "{err}");
    }

    #[test]
    fn one_point_grid_is_rejected() {
        let cfg = parse(r#"{"truth": {"kind": {"type": "smooth_analytic", "a": 0.5}, "beta": 2}, "n_grid": [100]}"#)
            .unwrap();
        let err = cfg.validate_for(CommandKind::Rate).unwrap_err().to_string();
        assert!(err.contains("n_grid"), "{err}");
    }

    #[test]
    fn mismatched_subcommand_is_rejected() {
        let cfg = parse(r#"{"subcommand": "bf"}"#).unwrap();
        let err = cfg.validate_for(CommandKind::Verify).unwrap_err().to_string();
        assert!(err.contains("subcommand"), "{err}");
    }

    #[test]
    fn round_trip_is_identity() {
        let text = r#"{
            "subcommand": "entropy",
            "master_seed": 7,
            "truth": {"kind": {"type": "holder", "b": 3, "construction": "lacunary"}, "beta": 1},
            "models": {"indices": [1, 2], "weights": [0.3, 0.7], "log_factor": true},
            "sampler": {"draws": 500},
            "thresholds": {"band_h": 0.5},
            "fit": {"data": "x.txt", "gamma": 2},
            "bf": {"expected": "decreasing"},
            "entropy": {
                "members": [{"type": "step", "probabilities": [0.9, 0.1]}, {"type": "uniform"}],
                "masses": [0.5, 0.5],
                "deltas": [0.3],
                "alphas": [0.5],
                "bound_checks": [{"r": 3, "eps": 0.1, "alpha": 0.5, "n": 10}]
            }
        }"#;
        let cfg = parse(text).unwrap();
        let again = parse(&cfg.to_json()).unwrap();
        assert_eq!(cfg, again);
        assert_eq!(again.to_json(), cfg.to_json());
    }
}
