//! True densities for the simulation experiments. All are of the form
//! `exp(g) / ∫ exp(g)` with bounded `g`, so they are bounded away from zero
//! and infinity.

use std::f64::consts::PI;
use std::sync::Arc;

use logspline_core::density::{Density, ExpDensity, LogSplineDensity, Theta};
use logspline_core::quadrature::uniform_edges;
use logspline_core::SplineBasis;
use serde::{Deserialize, Serialize};

use crate::error::{config_error, Result};

/// Truths whose log density varies by more than this are rejected.
pub const MAX_LOG_RATIO: f64 = 20.0;

/// Terms in the lacunary cosine series.
pub const LACUNARY_TERMS: u32 = 10;

/// How a Hölder-β log density is built.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HolderConstruction {
    /// `b |x - 1/2|^β`: one singular point; β must not be an integer.
    #[default]
    Kink,
    /// `b Σ_{k=1}^{10} 2^{-kβ} cos(2^k π x)`: roughness spread over all
    /// scales, so spline approximation error decays like `K^{-β}` in L².
    Lacunary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum TruthKind {
    /// A log-spline density `f_θ*`.
    InModel {
        order: usize,
        intervals: usize,
        theta: Vec<f64>,
    },
    /// `∝ exp(a cos 2πx)`.
    SmoothAnalytic { a: f64 },
    /// `∝ exp(g_β)` with `g_β` from the given construction; β is the
    /// truth's nominal smoothness.
    Holder {
        b: f64,
        #[serde(default)]
        construction: HolderConstruction,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthSpec {
    pub kind: TruthKind,
    /// Smoothness the experiment targets.
    pub beta: f64,
}

impl TruthSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0) || !self.beta.is_finite() {
            return Err(config_error("truth.beta", "must be positive"));
        }
        match &self.kind {
            TruthKind::InModel { order, intervals, theta } => {
                if *order == 0 || *intervals == 0 {
                    return Err(config_error("truth.kind", "order and intervals must be positive"));
                }
                if theta.len() != order + intervals - 1 {
                    return Err(config_error(
                        "truth.kind.theta",
                        format!("needs {} coefficients", order + intervals - 1),
                    ));
                }
            }
            TruthKind::SmoothAnalytic { a } => {
                if !a.is_finite() {
                    return Err(config_error("truth.kind.a", "must be finite"));
                }
            }
            TruthKind::Holder { b, construction } => {
                if !b.is_finite() {
                    return Err(config_error("truth.kind.b", "must be finite"));
                }
                if *construction == HolderConstruction::Kink && self.beta.fract() == 0.0 {
                    return Err(config_error(
                        "truth.beta",
                        "the kink construction needs a non-integer smoothness",
                    ));
                }
            }
        }
        Ok(())
    }
}

fn lacunary(b: f64, beta: f64, x: f64) -> f64 {
    (1..=LACUNARY_TERMS)
        .map(|k| {
            let f = 2f64.powi(k as i32);
            f.powf(-beta) * (f * PI * x).cos()
        })
        .sum::<f64>()
        * b
}

pub fn make_truth(spec: &TruthSpec) -> Result<Arc<dyn Density>> {
    spec.validate()?;
    let beta = spec.beta;
    let density: Arc<dyn Density> = match &spec.kind {
        TruthKind::InModel { order, intervals, theta } => {
            let basis = Arc::new(SplineBasis::new(*order, *intervals)?);
            let theta = Theta::new(theta.clone())?;
            Arc::new(LogSplineDensity::new(basis, theta)?)
        }
        TruthKind::SmoothAnalytic { a } => {
            let a = *a;
            Arc::new(ExpDensity::new(move |x| a * (2.0 * PI * x).cos(), uniform_edges(16))?)
        }
        TruthKind::Holder { b, construction } => {
            let b = *b;
            match construction {
                HolderConstruction::Kink => Arc::new(ExpDensity::new(
                    move |x| b * (x - 0.5).abs().powf(beta),
                    uniform_edges(64),
                )?),
                HolderConstruction::Lacunary => Arc::new(ExpDensity::new(
                    move |x| lacunary(b, beta, x),
                    uniform_edges(256),
                )?),
            }
        }
    };
    let probe: Vec<f64> = (0..=4096).map(|i| density.ln_pdf(i as f64 / 4096.0)).collect();
    let hi = probe.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lo = probe.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(hi - lo <= MAX_LOG_RATIO) {
        return Err(config_error(
            "truth",
            format!("log density varies by {:.3}, more than {MAX_LOG_RATIO}", hi - lo),
        ));
    }
    Ok(density)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use logspline_core::density::total_mass;

    fn spec(kind: TruthKind, beta: f64) -> TruthSpec {
        TruthSpec { kind, beta }
    }

    #[test]
    fn degenerate_truths_are_uniform() {
        let a = make_truth(&spec(
            TruthKind::InModel { order: 3, intervals: 4, theta: vec![0.0; 6] },
            2.0,
        ))
        .unwrap();
        let b = make_truth(&spec(TruthKind::SmoothAnalytic { a: 0.0 }, 2.0)).unwrap();
        for x in [0.0, 0.17, 0.5, 0.93, 1.0] {
            assert_abs_diff_eq!(a.pdf(x), 1.0, epsilon = 1e-12);
            assert_abs_diff_eq!(b.pdf(x), 1.0, epsilon = 1e-12);
        }
    }

    /// Composite Simpson on a fine grid, independent of the Gauss–Legendre
    /// panels used to normalize.
    fn simpson<F: Fn(f64) -> f64>(f: F, n: usize) -> f64 {
        let h = 1.0 / n as f64;
        let mut s = f(0.0) + f(1.0);
        for i in 1..n {
            s += f(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * h / 3.0
    }

    #[test]
    fn kink_normalizer_matches_fine_quadrature() {
        let truth = make_truth(&spec(
            TruthKind::Holder { b: 1.0, construction: HolderConstruction::Kink },
            1.5,
        ))
        .unwrap();
        // f(x) exp(-g(x)) is the constant 1/∫e^g
        let norm = simpson(|x| (x - 0.5f64).abs().powf(1.5).exp(), 2_000_000);
        assert_abs_diff_eq!(truth.pdf(0.5), 1.0 / norm, epsilon = 1e-10);
        assert_abs_diff_eq!(total_mass(truth.as_ref()), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn lacunary_truth_is_normalized() {
        let truth = make_truth(&spec(
            TruthKind::Holder { b: 2.0, construction: HolderConstruction::Lacunary },
            1.0,
        ))
        .unwrap();
        let norm = simpson(|x| lacunary(2.0, 1.0, x).exp(), 2_000_000);
        assert_abs_diff_eq!(truth.pdf(0.0) / lacunary(2.0, 1.0, 0.0).exp(), 1.0 / norm, epsilon = 1e-10);
    }

    #[test]
    fn invalid_truths_are_rejected() {
        assert!(make_truth(&spec(
            TruthKind::Holder { b: 1.0, construction: HolderConstruction::Kink },
            2.0
        ))
        .is_err());
        assert!(make_truth(&spec(TruthKind::SmoothAnalytic { a: 15.0 }, 2.0)).is_err());
        assert!(make_truth(&spec(
            TruthKind::InModel { order: 2, intervals: 2, theta: vec![0.0; 2] },
            1.0
        ))
        .is_err());
    }
}
