//! Computable geometry on truncated graded sequence spaces.
//!
//! The crate models spaces of finitely supported real sequences graded by
//! truncation degree, equips them with bounded translation-invariant metrics
//! built from weighted seminorm families, and layers calculus on top:
//!
//! * [`space`] - graded vectors, seminorm families, metric evaluation,
//!   absolute-convexity probes;
//! * [`operators`] - structured linear and multilinear map representations
//!   with certified operator-norm lower bounds;
//! * [`calculus`] - maps with attached derivative data, finite-difference
//!   extrapolation, and a registry of checked examples;
//! * [`expr`] - a small expression language used to describe coordinate maps
//!   in configuration files, with symbolic differentiation;
//! * [`charts`] - charts, atlases, transition maps, and first/second-order
//!   jets with their transformation rules;
//! * [`connection`] - Christoffel data, connection maps, the splitting of
//!   second-order jets, and the correspondence with linear ODE systems;
//! * [`picard`] - a Picard iteration integrator with a-priori error
//!   certificates and two-chart consistency checks.
//!
//! Everything is deterministic: randomized probes draw from a seeded
//! counter-mode generator and identical inputs produce identical outputs.

pub mod calculus;
pub mod charts;
pub mod connection;
pub mod error;
pub mod expr;
pub mod matrix;
pub mod operators;
pub mod picard;
pub mod rules;
pub mod sampling;
pub mod space;

pub use error::{Error, Result};
pub use space::{FrechetSpace, GradedVector, SpaceId};
