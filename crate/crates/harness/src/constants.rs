//! Lower bound on the radius multiplier `r` for posterior contraction.

use serde::{Deserialize, Serialize};

use crate::error::{config_error, Result};

/// Constants of the prior-mass and entropy conditions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RadiusConstants {
    pub c: f64,
    pub j: f64,
    pub g: f64,
    pub l: f64,
    pub alpha: f64,
    /// Band width, `H ≥ 1`.
    pub h: f64,
    /// Multiplier on the α-terms in the variant with unequal rate ratios,
    /// `K ≥ 1`.
    pub k_factor: f64,
    pub f: f64,
}

/// Which form of the bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundVariant {
    /// `r ≥ 18(C + J + G + 3α + 2αC)/(1 - α - 18αL) + √H + 1`.
    Base,
    /// The same with `3α` and `2αC` multiplied by `K`.
    Scaled,
}

/// The standing assumption `1 - α > 18αL`.
pub fn standing_condition(alpha: f64, l: f64) -> bool {
    1.0 - alpha > 18.0 * alpha * l
}

impl RadiusConstants {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.c, self.j, self.g, self.l, self.alpha, self.h, self.k_factor, self.f]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(config_error("constants", "must be finite"));
        }
        if self.c <= 0.0 || self.j <= 0.0 || self.l <= 0.0 || self.f <= 0.0 || self.g < 0.0 {
            return Err(config_error("constants", "C, J, L, F must be positive and G nonnegative"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(config_error("alpha", "must lie in (0, 1)"));
        }
        if self.h < 1.0 {
            return Err(config_error("H", "must be at least 1"));
        }
        if self.k_factor < 1.0 {
            return Err(config_error("K", "must be at least 1"));
        }
        if !standing_condition(self.alpha, self.l) {
            return Err(config_error("alpha", "violates 1 - alpha > 18 alpha L"));
        }
        Ok(())
    }
}

pub fn r_min_constant(c: &RadiusConstants, variant: BoundVariant) -> Result<f64> {
    c.validate()?;
    let k = match variant {
        BoundVariant::Base => 1.0,
        BoundVariant::Scaled => c.k_factor,
    };
    let numerator = c.c + c.j + c.g + 3.0 * c.alpha * k + 2.0 * c.alpha * c.c * k;
    let denominator = 1.0 - c.alpha - 18.0 * c.alpha * c.l;
    Ok(18.0 * numerator / denominator + c.h.sqrt() + 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    pub(crate) fn consistency_constants() -> RadiusConstants {
        RadiusConstants {
            c: 1.0,
            j: 1.0,
            g: 0.0,
            l: 2.0,
            alpha: 1.0 / 38.0,
            h: 1.0,
            k_factor: 1.0,
            f: 1.0,
        }
    }

    #[test]
    fn worked_value() {
        let c = consistency_constants();
        assert!(standing_condition(c.alpha, c.l));
        assert_relative_eq!(r_min_constant(&c, BoundVariant::Base).unwrap(), 1460.0, max_relative = 1e-12);
        assert_relative_eq!(r_min_constant(&c, BoundVariant::Scaled).unwrap(), 1460.0, max_relative = 1e-12);
    }

    #[test]
    fn pole_is_rejected() {
        // 1 - α = 18αL at α = 1/(1 + 18L)
        let c = RadiusConstants {
            alpha: 1.0 / 37.0,
            ..consistency_constants()
        };
        assert!(r_min_constant(&c, BoundVariant::Base).is_err());
    }

    proptest! {
        #[test]
        fn unit_k_matches_base(c in 0.1f64..5.0, j in 0.1f64..5.0, g in 0.0f64..5.0, l in 0.1f64..5.0,
                               t in 0.01f64..0.99, h in 1.0f64..10.0) {
            let alpha = t / (1.0 + 18.0 * l);
            let k = RadiusConstants { c, j, g, l, alpha, h, k_factor: 1.0, f: 1.0 };
            prop_assert_eq!(r_min_constant(&k, BoundVariant::Base).unwrap(),
                            r_min_constant(&k, BoundVariant::Scaled).unwrap());
        }
    }
}
