use thiserror::Error;

use crate::grid::Violation;

/// Errors raised by the lattice, measure and analysis routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("empty set")]
    EmptySet,

    #[error("level {level} out of range 0..={max}")]
    LevelOutOfRange { level: u32, max: u32 },

    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),

    #[error("scale mismatch: 2^-{0} vs 2^-{1}")]
    ScaleMismatch(u32, u32),

    #[error("block length {block} does not divide scale exponent {scale_exp}")]
    NotDivisible { block: u32, scale_exp: u32 },

    #[error("invalid point {point:?}: {reason}")]
    InvalidPoint { point: Vec<i64>, reason: String },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("set does not meet the cube")]
    EmptyIntersection,

    #[error("measure is not normalized")]
    NotNormalized,

    #[error("cube carries zero mass")]
    ZeroMass,

    #[error("set is not uniform: {0}")]
    NotUniform(Violation),

    #[error("value function `{name}` returned code {code} >= bound {bound}")]
    ValueOutOfRange { name: String, code: u32, bound: u32 },

    #[error("point {0:?} lies outside [1/3, 2/3)^d")]
    OutsideMiddleThird(Vec<i64>),

    #[error(
        "centering infeasible for L = {block}, S = {scales}: a point in the middle third of a \
         dyadic cube lies in an outer third of each of its dyadic children"
    )]
    CenteringInfeasible { block: u32, scales: u32 },

    #[error("arithmetic overflow: {0}")]
    Overflow(String),

    #[error("size cap exceeded: {0}")]
    SizeCap(String),

    #[error("Plünnecke–Ruzsa bound violated: |{k}A| = {iterated} > K^{k}|A| (|A| = {base}, |A+A| = {doubling})")]
    PlunneckeViolation {
        k: u32,
        base: usize,
        doubling: usize,
        iterated: usize,
    },

    #[error("support violation: {0}")]
    SupportViolation(String),
}

pub type Result<T> = std::result::Result<T, Error>;
