//! Discretized additive combinatorics on dyadic lattices: uniform sets and
//! their branching structure, measures and their convolutions, sumsets and
//! additive energy, flat fitting and projections, and checkers for the
//! conclusions of the multi-scale inverse theorems.

pub mod analysis;
pub mod error;
pub mod fft;
pub mod generators;
pub mod geometry;
pub mod grid;
pub mod measures;
pub mod sumsets;
pub mod uniformize;

pub use analysis::{FupResult, Ledger, StructureReport};
pub use error::{Error, Result};
pub use generators::{CorpusSpec, WeightRule};
pub use geometry::{AffineFlat, FlatFit};
pub use grid::{DyadicCube, GridSet, Norm, Point, UniformProfile, Uniformity, Violation};
pub use measures::{GridMeasure, Rational};
pub use sumsets::EnergyResult;
pub use uniformize::UniformizationResult;

/// Crate version, embedded in output manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
