//! Partition of the model indices by target rate relative to the truth's.

use logspline_core::priors::ModelSpec;
use serde::{Deserialize, Serialize};

use crate::error::{config_error, Result};

/// `I1 = {γ : ε_γ ≤ √H ε_β}`, `I2` its complement, `I3 = {γ : √H ε_γ < ε_β}`
/// and the correct-rate band `I1 \ I3 = {γ : ε_β/√H ≤ ε_γ ≤ √H ε_β}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexPartition {
    pub i1: Vec<f64>,
    pub i2: Vec<f64>,
    pub i3: Vec<f64>,
    pub band: Vec<f64>,
}

pub fn classify_indices(models: &[ModelSpec], beta: f64, h: f64) -> Result<IndexPartition> {
    if !(h >= 1.0) {
        return Err(config_error("H", "must be at least 1"));
    }
    let reference = models
        .iter()
        .find(|m| m.gamma == beta)
        .ok_or_else(|| config_error("beta", format!("{beta} is not among the model indices")))?;
    let eps_beta = reference.eps;
    let root = h.sqrt();
    let mut part = IndexPartition {
        i1: Vec::new(),
        i2: Vec::new(),
        i3: Vec::new(),
        band: Vec::new(),
    };
    for m in models {
        if m.eps <= root * eps_beta {
            part.i1.push(m.gamma);
            if root * m.eps < eps_beta {
                part.i3.push(m.gamma);
            } else {
                part.band.push(m.gamma);
            }
        } else {
            part.i2.push(m.gamma);
        }
    }
    Ok(part)
}

#[cfg(test)]
mod tests {
    use super::*;
    use logspline_core::priors::make_model_spec;
    use proptest::prelude::*;

    fn models(indices: &[f64], n: usize) -> Vec<ModelSpec> {
        indices
            .iter()
            .map(|&g| make_model_spec(g, n, 4, 2.0, 1.0, false).unwrap())
            .collect()
    }

    #[test]
    fn worked_examples() {
        let ms = models(&[1.0, 2.0], 1000);
        let p = classify_indices(&ms, 1.0, 4.0).unwrap();
        assert_eq!(p.i1, vec![1.0, 2.0]);
        assert!(p.i3.is_empty());
        assert_eq!(p.band, vec![1.0, 2.0]);

        let p = classify_indices(&ms, 2.0, 1.0).unwrap();
        assert_eq!(p.i2, vec![1.0]);
        assert_eq!(p.band, vec![2.0]);

        let p = classify_indices(&ms, 1.0, 1.0).unwrap();
        assert_eq!(p.i1, vec![1.0, 2.0]);
        assert_eq!(p.i3, vec![2.0]);
        assert_eq!(p.band, vec![1.0]);

        assert!(classify_indices(&ms, 3.0, 1.0).is_err());
        assert!(classify_indices(&ms, 1.0, 0.5).is_err());
    }

    proptest! {
        #[test]
        fn partition_properties(n in 10usize..100_000, h in 1.0f64..50.0, pick in 0usize..4) {
            let indices = [1.0, 1.5, 2.0, 3.0];
            let ms = models(&indices, n);
            let beta = indices[pick];
            let p = classify_indices(&ms, beta, h).unwrap();
            prop_assert_eq!(p.i1.len() + p.i2.len(), indices.len());
            prop_assert!(p.i1.iter().all(|g| !p.i2.contains(g)));
            prop_assert!(p.i3.iter().all(|g| p.i1.contains(g)));
            prop_assert!(p.band.contains(&beta));
            prop_assert!(!p.i3.contains(&beta));
        }
    }
}
