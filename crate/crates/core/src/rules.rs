//! Closed-form infinite sequences used as weights and coefficients.
//!
//! A [`SequenceRule`] describes a real sequence `n -> r(n)` for `n >= 1` in
//! closed form, so validity conditions (positivity, strict decrease, decay
//! to zero) can be checked symbolically instead of by sampling.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A closed-form rule for an infinite real sequence, indexed from 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SequenceRule {
    /// `r(n) = value` for all `n`.
    Constant { value: f64 },
    /// `r(n) = coeff * ratio^(n-1)`.
    Geometric { coeff: f64, ratio: f64 },
    /// `r(n) = coeff * n^exponent`.
    Power { coeff: f64, exponent: f64 },
}

impl SequenceRule {
    /// The sequence value at index `n >= 1`.
    pub fn eval(&self, n: usize) -> f64 {
        debug_assert!(n >= 1, "sequence rules are indexed from 1");
        match self {
            SequenceRule::Constant { value } => *value,
            SequenceRule::Geometric { coeff, ratio } => coeff * ratio.powi(n as i32 - 1),
            SequenceRule::Power { coeff, exponent } => coeff * (n as f64).powf(*exponent),
        }
    }

    /// Checks that every value is finite and strictly positive.
    pub fn require_positive(&self, role: &str) -> Result<()> {
        let ok = match self {
            SequenceRule::Constant { value } => value.is_finite() && *value > 0.0,
            SequenceRule::Geometric { coeff, ratio } => {
                coeff.is_finite() && ratio.is_finite() && *coeff > 0.0 && *ratio > 0.0
            }
            SequenceRule::Power { coeff, exponent } => {
                coeff.is_finite() && exponent.is_finite() && *coeff > 0.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidRule(format!("{role} must be strictly positive")))
        }
    }

    /// Checks that the sequence is positive, strictly decreasing, and tends
    /// to zero; this is the contract for metric decay weights.
    pub fn require_decay(&self) -> Result<()> {
        self.require_positive("decay weights")?;
        match self {
            SequenceRule::Constant { .. } => Err(Error::InvalidRule(
                "decay weights must be strictly decreasing; constant rule is not".into(),
            )),
            SequenceRule::Geometric { ratio, .. } => {
                if *ratio < 1.0 {
                    Ok(())
                } else {
                    Err(Error::InvalidRule(format!(
                        "geometric decay weights need ratio < 1, got {ratio}"
                    )))
                }
            }
            SequenceRule::Power { exponent, .. } => {
                if *exponent < 0.0 {
                    Ok(())
                } else {
                    Err(Error::InvalidRule(format!(
                        "power decay weights need a negative exponent, got {exponent}"
                    )))
                }
            }
        }
    }

    /// Checks that every value is finite (diagonal operator entries).
    pub fn require_finite(&self) -> Result<()> {
        let ok = match self {
            SequenceRule::Constant { value } => value.is_finite(),
            SequenceRule::Geometric { coeff, ratio } => coeff.is_finite() && ratio.is_finite(),
            SequenceRule::Power { coeff, exponent } => coeff.is_finite() && exponent.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidRule("rule parameters must be finite".into()))
        }
    }
}
