//! Log-spline density families on `[0, 1]` with hierarchical priors over
//! smoothness levels: basis construction, normalization and sampling,
//! distances, priors, posterior computation and entropy tools for discrete
//! priors.

// Validation uses negated comparisons on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod density;
pub mod entropy;
pub mod error;
pub mod inference;
pub mod metrics;
pub mod priors;
pub mod quadrature;
pub mod sampling;
pub mod splines;

pub use density::{Density, LogSplineDensity, Theta};
pub use error::{Error, Result};
pub use splines::SplineBasis;
