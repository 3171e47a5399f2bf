//! Training objectives on depth maps, each returning its value together
//! with the analytic gradient with respect to the prediction.
//!
//! - [`robust_mae`]: mean absolute error after dropping the largest errors.
//! - [`ssi_mage`]: multi-scale Scharr gradient L1 error between
//!   median/MAD-normalized maps.
//! - [`teacher_loss`]: both of the above on inverse depth.
//! - [`student_loss`]: distance-balanced log-space error plus `ssi_mage`
//!   on the log-space maps.
//!
//! [`gradcheck`] compares every analytic gradient against central finite
//! differences.

mod gradcheck;
mod objectives;
mod robust;
mod ssi;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use gradcheck::{gradcheck, gradcheck_with, GradcheckReport, LossKind, FD_STEP, GRAD_SCALE_FLOOR};
pub use objectives::{dlog_transform, student_loss, teacher_loss, to_inverse_depth};
pub use robust::{drop_count, robust_mae};
pub use ssi::{mad_normalize, ssi_mage};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    /// Weight of the robust MAE term in the teacher objective.
    pub alpha: f64,
    /// Weight of the SSI-MAGE term in the teacher objective.
    pub beta: f64,
    /// Weight of the distance-balanced term in the student objective.
    pub gamma: f64,
    /// Weight of the log-space SSI-MAGE term in the student objective.
    pub delta: f64,
    /// Fraction of largest per-pixel errors excluded by the robust MAE.
    pub drop_fraction: f64,
    /// Pyramid levels, full resolution included.
    pub scale_count: usize,
    /// Distance-balance constant; depth `balance_c` maps to 0 in log space.
    pub balance_c: f64,
    /// Floor on the MAD denominator.
    pub mad_epsilon: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            alpha: 15.0,
            beta: 5.0,
            gamma: 10.0,
            delta: 2.0,
            drop_fraction: 0.20,
            scale_count: 6,
            balance_c: 400.0,
            mad_epsilon: 1e-6,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if [self.alpha, self.beta, self.gamma, self.delta]
            .iter()
            .any(|w| !(w.is_finite() && *w >= 0.0))
        {
            return bad("loss weights must be finite and non-negative");
        }
        if !(0.0..1.0).contains(&self.drop_fraction) {
            return bad("drop_fraction must lie in [0, 1)");
        }
        if self.scale_count < 1 {
            return bad("scale_count must be at least 1");
        }
        if !(self.balance_c.is_finite() && self.balance_c > 1.0) {
            return bad("balance_c must exceed 1");
        }
        if !(self.mad_epsilon.is_finite() && self.mad_epsilon > 0.0) {
            return bad("mad_epsilon must be positive");
        }
        Ok(())
    }
}

/// Loss value plus per-pixel gradient of that value with respect to the
/// prediction map (row-major, zero where the pixel does not contribute).
#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub value: f64,
    pub gradient: Vec<f64>,
    pub active_mask: Vec<bool>,
}

impl LossReport {
    pub fn active_count(&self) -> usize {
        self.active_mask.iter().filter(|&&m| m).count()
    }
}

/// Discrete choices made while evaluating a loss (drop set, median and
/// MAD pixels, signs inside absolute values). Within a region where the
/// branch record does not change the loss is smooth.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub(crate) struct Branches(Vec<i64>);

impl Branches {
    fn push(&mut self, v: i64) {
        self.0.push(v);
    }

    fn sign(&mut self, x: f64) {
        self.0.push(if x > 0.0 {
            1
        } else if x < 0.0 {
            -1
        } else {
            0
        });
    }

    fn extend(&mut self, other: Branches) {
        self.0.push(i64::MIN);
        self.0.extend(other.0);
    }
}

#[inline]
fn signum0(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let c = LossConfig::default();
        c.validate().unwrap();
        assert_eq!((c.alpha, c.beta, c.gamma, c.delta), (15.0, 5.0, 10.0, 2.0));
        assert_eq!((c.drop_fraction, c.scale_count, c.balance_c), (0.2, 6, 400.0));
    }

    #[test]
    fn invalid_configs() {
        let d = LossConfig::default();
        for c in [
            LossConfig { alpha: -1.0, ..d },
            LossConfig {
                drop_fraction: 1.0,
                ..d
            },
            LossConfig { scale_count: 0, ..d },
            LossConfig { balance_c: 1.0, ..d },
            LossConfig { mad_epsilon: 0.0, ..d },
        ] {
            assert!(matches!(c.validate(), Err(Error::InvalidConfig(_))));
        }
    }
}
