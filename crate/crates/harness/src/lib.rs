//! Experiment orchestration on top of `logspline-core`: truths, seeded
//! replication grids, Bayes-factor drift, index classification and the
//! property-check suite.

// Validation uses negated comparisons on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bayes_factor;
pub mod classify;
pub mod constants;
pub mod error;
pub mod experiment;
pub mod seeds;
pub mod slope;
pub mod table;
pub mod truth;
pub mod verify;

pub use bayes_factor::{bf_experiment, BfConfig, BfResult, Drift};
pub use classify::{classify_indices, IndexPartition};
pub use constants::{r_min_constant, BoundVariant, RadiusConstants};
pub use error::{HarnessError, Result};
pub use experiment::{run_grid, GridConfig, GridResult, ModelSettings, SamplerSettings};
pub use seeds::derive_seed;
pub use table::{Table, Value};
pub use truth::{make_truth, HolderConstruction, TruthKind, TruthSpec};
pub use verify::{run_all, CheckOutcome};
