//! Graded sequence spaces with bounded translation-invariant metrics.
//!
//! A [`GradedVector`] is a finitely supported real sequence; its degree is
//! the index of its last nonzero coordinate. A [`FrechetSpace`] equips such
//! vectors with a monotone family of seminorms `rho_n` and strictly
//! decreasing positive weights `alpha_n -> 0`, and measures distance by
//!
//! ```text
//! d(e, f) = sup_n  alpha_n * rho_n(e - f) / (1 + rho_n(e - f))
//! ```
//!
//! Because `rho_n` stabilizes once `n` reaches the degree of `e - f` and the
//! weights decrease strictly, the supremum is attained at some
//! `n <= deg(e - f)`, so [`FrechetSpace::distance`] evaluates it exactly with
//! finitely many terms. The metric is translation invariant and bounded by
//! `alpha_1`; metric balls of radius `>= alpha_1` are the whole space.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rules::SequenceRule;
use crate::sampling;

/// Identifier of a graded sequence space.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SpaceId(String);

impl SpaceId {
    pub fn new(name: impl Into<String>) -> Self {
        SpaceId(name.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for SpaceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for SpaceId {
    fn from(s: &str) -> Self {
        SpaceId(s.to_owned())
    }
}

/// A finitely supported sequence of reals tagged with its space.
///
/// Coordinates are 1-indexed to match the naming `x1, x2, ...` used by
/// coordinate expressions. Trailing zeros are trimmed on construction, so
/// `deg` is always the index of the last nonzero coordinate (0 for the zero
/// vector) and equality of representations coincides with equality of
/// sequences.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradedVector {
    space: SpaceId,
    coords: Vec<f64>,
}

impl GradedVector {
    /// Builds a vector from raw coordinates, trimming trailing zeros.
    pub fn new(space: SpaceId, mut coords: Vec<f64>) -> Self {
        while coords.last() == Some(&0.0) {
            coords.pop();
        }
        GradedVector { space, coords }
    }

    /// The zero vector of a space.
    pub fn zero(space: SpaceId) -> Self {
        GradedVector { space, coords: Vec::new() }
    }

    /// `scale * e_n` for the 1-indexed basis sequence `e_n`.
    pub fn basis(space: SpaceId, n: usize, scale: f64) -> Self {
        assert!(n >= 1, "basis index is 1-based");
        let mut coords = vec![0.0; n];
        coords[n - 1] = scale;
        GradedVector::new(space, coords)
    }

    pub fn space(&self) -> &SpaceId {
        &self.space
    }

    /// Index of the last nonzero coordinate; 0 for the zero vector.
    pub fn deg(&self) -> usize {
        self.coords.len()
    }

    pub fn is_zero(&self) -> bool {
        self.coords.is_empty()
    }

    /// The 1-indexed coordinate `v_n`; zero beyond the degree.
    pub fn coord(&self, n: usize) -> f64 {
        assert!(n >= 1, "coordinates are 1-based");
        self.coords.get(n - 1).copied().unwrap_or(0.0)
    }

    /// The stored coordinates `v_1 ..= v_deg`.
    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    /// Copies the first `n` coordinates, padding with zeros.
    pub fn coords_padded(&self, n: usize) -> Vec<f64> {
        (1..=n).map(|i| self.coord(i)).collect()
    }

    /// Returns a copy tagged as living in `space` (coordinate-preserving
    /// identification; used when a map's codomain differs only by name).
    pub fn retagged(&self, space: SpaceId) -> Self {
        GradedVector { space, coords: self.coords.clone() }
    }

    fn assert_same_space(&self, other: &Self) {
        assert_eq!(
            self.space, other.space,
            "vector arithmetic across different spaces is a bug"
        );
    }

    pub fn add(&self, other: &Self) -> Self {
        self.assert_same_space(other);
        let n = self.coords.len().max(other.coords.len());
        let coords = (1..=n).map(|i| self.coord(i) + other.coord(i)).collect();
        GradedVector::new(self.space.clone(), coords)
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.assert_same_space(other);
        let n = self.coords.len().max(other.coords.len());
        let coords = (1..=n).map(|i| self.coord(i) - other.coord(i)).collect();
        GradedVector::new(self.space.clone(), coords)
    }

    pub fn scale(&self, c: f64) -> Self {
        let coords = self.coords.iter().map(|x| c * x).collect();
        GradedVector::new(self.space.clone(), coords)
    }

    /// Largest coordinate magnitude (the stabilized unweighted seminorm).
    pub fn sup_coord(&self) -> f64 {
        self.coords.iter().fold(0.0, |m, x| m.max(x.abs()))
    }
}

/// A monotone family of seminorms `rho_n`, non-decreasing in `n` and
/// stabilizing at the degree of the argument.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SeminormFamily {
    /// `rho_n(v) = max_{i <= n} |v_i|`.
    PrefixSup,
    /// `rho_n(v) = max_{i <= n} w_i * |v_i|` with strictly positive weights.
    WeightedPrefixSup { weights: SequenceRule },
}

impl SeminormFamily {
    fn validate(&self) -> Result<()> {
        match self {
            SeminormFamily::PrefixSup => Ok(()),
            SeminormFamily::WeightedPrefixSup { weights } => {
                weights.require_positive("seminorm weights")
            }
        }
    }

    /// Evaluates `rho_n(v)`. Stabilization means only the first
    /// `min(n, deg v)` coordinates can contribute.
    pub fn eval(&self, n: usize, v: &GradedVector) -> f64 {
        let m = n.min(v.deg());
        match self {
            SeminormFamily::PrefixSup => {
                (1..=m).fold(0.0f64, |acc, i| acc.max(v.coord(i).abs()))
            }
            SeminormFamily::WeightedPrefixSup { weights } => {
                (1..=m).fold(0.0f64, |acc, i| acc.max(weights.eval(i) * v.coord(i).abs()))
            }
        }
    }
}

/// Strictly decreasing positive weights `alpha_n -> 0`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AlphaSequence {
    rule: SequenceRule,
}

impl AlphaSequence {
    /// Validates the decay contract: positive, strictly decreasing, limit 0.
    pub fn new(rule: SequenceRule) -> Result<Self> {
        rule.require_decay()?;
        Ok(AlphaSequence { rule })
    }

    /// The default weights `alpha_n = 2^-n`.
    pub fn halving() -> Self {
        AlphaSequence {
            rule: SequenceRule::Geometric { coeff: 0.5, ratio: 0.5 },
        }
    }

    pub fn value(&self, n: usize) -> f64 {
        self.rule.eval(n)
    }

    /// `alpha_1`, the global bound of the induced metric.
    pub fn first(&self) -> f64 {
        self.rule.eval(1)
    }

    pub fn rule(&self) -> &SequenceRule {
        &self.rule
    }
}

/// A graded sequence space together with its metric data.
#[derive(Clone, Debug, Serialize)]
pub struct FrechetSpace {
    id: SpaceId,
    seminorms: SeminormFamily,
    alphas: AlphaSequence,
    /// Working truncation degree for probes and matrix assembly.
    truncation: usize,
}

/// Default working truncation degree.
pub const DEFAULT_TRUNCATION: usize = 8;

impl FrechetSpace {
    pub fn new(
        id: SpaceId,
        seminorms: SeminormFamily,
        alphas: AlphaSequence,
        truncation: usize,
    ) -> Result<Self> {
        seminorms.validate()?;
        if truncation == 0 {
            return Err(Error::InvalidInput(
                "working truncation degree must be at least 1".into(),
            ));
        }
        Ok(FrechetSpace { id, seminorms, alphas, truncation })
    }

    /// The standard space: prefix-sup seminorms, weights `2^-n`.
    pub fn standard(id: impl Into<SpaceId>) -> Self {
        FrechetSpace {
            id: id.into(),
            seminorms: SeminormFamily::PrefixSup,
            alphas: AlphaSequence::halving(),
            truncation: DEFAULT_TRUNCATION,
        }
    }

    pub fn id(&self) -> &SpaceId {
        &self.id
    }

    pub fn seminorms(&self) -> &SeminormFamily {
        &self.seminorms
    }

    pub fn alphas(&self) -> &AlphaSequence {
        &self.alphas
    }

    pub fn truncation(&self) -> usize {
        self.truncation
    }

    /// Same metric data under a different name.
    pub fn renamed(&self, id: impl Into<SpaceId>) -> Self {
        let mut out = self.clone();
        out.id = id.into();
        out
    }

    /// Upper bound of the metric: `d(e, f) <= alpha_1` always.
    pub fn metric_bound(&self) -> f64 {
        self.alphas.first()
    }

    pub fn zero(&self) -> GradedVector {
        GradedVector::zero(self.id.clone())
    }

    pub fn basis(&self, n: usize, scale: f64) -> GradedVector {
        GradedVector::basis(self.id.clone(), n, scale)
    }

    pub fn vector(&self, coords: Vec<f64>) -> GradedVector {
        GradedVector::new(self.id.clone(), coords)
    }

    /// Checks that `v` is tagged as a member of this space.
    pub fn check_member(&self, v: &GradedVector) -> Result<()> {
        if v.space() == &self.id {
            Ok(())
        } else {
            Err(Error::SpaceMismatch {
                expected: self.id.clone(),
                got: v.space().clone(),
            })
        }
    }

    /// `rho_n(v)` for `n >= 1`.
    pub fn seminorm(&self, n: usize, v: &GradedVector) -> Result<f64> {
        if n == 0 {
            return Err(Error::InvalidInput("seminorm index is 1-based".into()));
        }
        self.check_member(v)?;
        Ok(self.seminorms.eval(n, v))
    }

    /// One term `alpha_n * r / (1 + r)` of the metric supremum.
    fn term(&self, n: usize, rho: f64) -> f64 {
        self.alphas.value(n) * rho / (1.0 + rho)
    }

    /// The metric value `d(v, 0)` without membership checks.
    pub(crate) fn norm_raw(&self, v: &GradedVector) -> f64 {
        // rho_n stabilizes at n = deg(v) and alpha_n decreases strictly, so
        // terms beyond deg(v) cannot exceed the term at deg(v): the finite
        // scan evaluates the full supremum exactly.
        let top = v.deg().max(1);
        let mut best = 0.0f64;
        for n in 1..=top {
            let term = self.term(n, self.seminorms.eval(n, v));
            if term > best {
                best = term;
            }
        }
        best
    }

    /// Distance `d(e, f)`; exact supremum, bounded by `alpha_1`.
    pub fn distance(&self, e: &GradedVector, f: &GradedVector) -> Result<f64> {
        self.check_member(e)?;
        self.check_member(f)?;
        Ok(self.norm_raw(&e.sub(f)))
    }

    /// Norm-like quantity `d(f, 0)`.
    pub fn norm(&self, f: &GradedVector) -> Result<f64> {
        self.check_member(f)?;
        Ok(self.norm_raw(f))
    }

    /// Probes absolute convexity of the closed metric ball of `radius`
    /// around the origin: for sampled `e, f` in the ball and coefficients
    /// with `|lambda| + |mu| <= 1`, checks `d(lambda e + mu f, 0) <= radius`.
    pub fn check_absolutely_convex(
        &self,
        radius: f64,
        samples: u64,
        seed: u64,
    ) -> Result<ConvexityReport> {
        if !radius.is_finite() || radius <= 0.0 {
            return Err(Error::InvalidInput("ball radius must be positive".into()));
        }
        let mut rng = sampling::rng_for(seed, 0x636f6e76);
        let mut report = ConvexityReport {
            radius,
            samples,
            violations: 0,
            worst_margin: f64::INFINITY,
            witness: None,
        };
        for _ in 0..samples {
            let e = sampling::vector_in_ball(self, &self.zero(), radius, self.truncation, &mut rng);
            let f = sampling::vector_in_ball(self, &self.zero(), radius, self.truncation, &mut rng);
            let (lambda, mu) = sampling::convex_pair(&mut rng);
            let combo = e.scale(lambda).add(&f.scale(mu));
            let margin = radius - self.norm_raw(&combo);
            if margin < report.worst_margin {
                report.worst_margin = margin;
            }
            if margin < -CONVEXITY_TOLERANCE {
                report.violations += 1;
                if report.witness.is_none() {
                    report.witness = Some(ConvexityWitness { e, f, lambda, mu, margin });
                }
            }
        }
        Ok(report)
    }
}

/// Slack allowed before a convexity probe counts as a violation.
pub const CONVEXITY_TOLERANCE: f64 = 1e-12;

/// Outcome of an absolute-convexity probe.
#[derive(Clone, Debug, Serialize)]
pub struct ConvexityReport {
    pub radius: f64,
    pub samples: u64,
    pub violations: u64,
    /// Smallest observed `radius - d(combination, 0)`; negative means a
    /// combination left the ball.
    pub worst_margin: f64,
    pub witness: Option<ConvexityWitness>,
}

/// A sampled combination that violated convexity.
#[derive(Clone, Debug, Serialize)]
pub struct ConvexityWitness {
    pub e: GradedVector,
    pub f: GradedVector,
    pub lambda: f64,
    pub mu: f64,
    pub margin: f64,
}
