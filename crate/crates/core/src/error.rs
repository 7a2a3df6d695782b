use thiserror::Error;

use crate::blocking::Violation;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("emission density is zero at site {site} (1-based {}) for state {state}", site + 1)]
    ZeroEmission { site: usize, state: usize },

    #[error("mixing condition not verifiable: {0}")]
    Mixing(String),

    #[error("invalid cover: {0}")]
    InvalidCover(String),

    #[error("cover violates {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    CoverViolations(Vec<Violation>),

    #[error("lumped system undefined: {0}")]
    LumpUndefined(String),

    #[error("block index {index} out of range for a cover with {count} blocks")]
    BlockIndex { index: usize, count: usize },

    #[error("table of {size} configurations exceeds cap {cap}; use sampling mode (forward filter, backward sample)")]
    TableTooLarge { size: f64, cap: usize },

    #[error("enumeration of {size} outcomes exceeds cap {cap}")]
    EnumerationCap { size: f64, cap: f64 },

    #[error("particle Gibbs needs at least 2 particles, got {0}")]
    TooFewParticles(usize),

    #[error("all particle weights are zero at site {site} (1-based {}); model violates positivity", site + 1)]
    AllWeightsZero { site: usize },

    #[error("{0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("parse error: {0}")]
    Parse(#[from] toml::de::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
