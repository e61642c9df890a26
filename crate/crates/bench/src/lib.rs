//! Shared fixtures for the benchmark targets.

use frechet_core::rules::SequenceRule;
use frechet_core::space::{AlphaSequence, SeminormFamily};
use frechet_core::{FrechetSpace, SpaceId};

/// The space every benchmark runs on: truncation 8, prefix-sup seminorms,
/// weights `alpha_n = 2^-n`.
pub fn bench_space() -> FrechetSpace {
    FrechetSpace::new(
        SpaceId::new("B"),
        SeminormFamily::PrefixSup,
        AlphaSequence::new(SequenceRule::Geometric { coeff: 0.5, ratio: 0.5 }).unwrap(),
        8,
    )
    .unwrap()
}
