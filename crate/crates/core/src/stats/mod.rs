//! Neighborhood aggregation and local indicators of spatial association.

mod aggregate;
mod lisa;
mod weights;

use thiserror::Error;

pub use aggregate::{aggregate, ZonalMeans};
pub use lisa::{
    classify, global_morans_i, lisa, local_morans_i, permutation_p, LisaConfig, LisaObservation, LocalMoran,
    Normalization, Quadrant,
};
pub use weights::{build_weights, SpatialWeights, WeightScheme, SNAP_TOLERANCE_M};

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("{values} values but weights cover {weights} observations")]
    LengthMismatch { values: usize, weights: usize },
    #[error("need at least {needed} observations, got {got}")]
    TooFewObservations { needed: usize, got: usize },
    #[error("at least 99 permutations required, got {0}")]
    TooFewPermutations(usize),
    #[error("significance level must lie in (0, 1), got {0}")]
    InvalidAlpha(f64),
    #[error("invalid weights: {0}")]
    InvalidWeights(String),
    #[error("non-finite value")]
    NonFinite,
}
