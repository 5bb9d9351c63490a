use thiserror::Error;

/// Errors raised anywhere in the transfer pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    Input(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("rank deficient: requested dimension {requested}, achievable rank {achievable}")]
    RankDeficient { requested: usize, achievable: usize },

    #[error(
        "unsupported subspace dimension {d} for ambient dimension {ambient}: \
         the flow kernel needs d <= D/2"
    )]
    UnsupportedDimension { d: usize, ambient: usize },

    #[error("feature {index} has zero variance in the healthy reference set")]
    DegenerateFeature { index: usize },

    #[error("no mixing weight reached the stability threshold (best mean cosine {best_cosine:.6})")]
    MixSelection { best_cosine: f64 },

    #[error("training set contains a single class ({0})")]
    DegenerateTraining(String),

    #[error("mass matrix is not positive definite")]
    IndefiniteMass,

    #[error("covariance is not symmetric positive semidefinite: {0}")]
    Covariance(String),

    #[error("alpha = {alpha} lies below the admissible floor {floor}")]
    ExcludedConfiguration { alpha: f64, floor: f64 },

    #[error("damage patch centred at {centre} with extent {extent} contains no element centroid")]
    EmptyPatch { centre: f64, extent: f64 },

    #[error("band upper edge {f_hi} Hz needs modes up to {needed} Hz but the model stops at {available} Hz")]
    Coverage { f_hi: f64, needed: f64, available: f64 },

    #[error("inconsistent class sets: {0}")]
    ClassSet(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),
}

pub type Result<T> = std::result::Result<T, Error>;
