//! Error type shared across the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// The design matrix is rank deficient on the positively weighted rows.
    #[error("singular design: columns {columns:?} are linearly dependent within tolerance")]
    SingularDesign { columns: Vec<usize> },

    /// Every observation weight is zero (or the weighted row count is below
    /// the number of coefficients).
    #[error("degenerate weights: {0}")]
    DegenerateWeights(String),

    /// A multinomial category has no positively weighted observations.
    #[error("category {category} has no positively weighted observations")]
    MissingCategory { category: usize },

    /// An ordinal response takes fewer than two distinct levels.
    #[error("degenerate response: fewer than two distinct observed levels")]
    DegenerateResponse,

    /// An observed value lies outside the family support.
    #[error("value {value} outside the support of the {family} family")]
    OutsideSupport { family: &'static str, value: f64 },

    /// Transition probabilities are undefined at the first time point,
    /// where the initial probabilities govern the state.
    #[error("no transition matrix at the first time point; initial probabilities apply")]
    UseInitialProbabilities,

    /// Exposure or internal covariates are missing, which the model does not
    /// support at fit time.
    #[error("missing exposure/covariate value at t={t}; only the outcome may be missing (pre-impute covariates first)")]
    UnsupportedMissingness { t: usize },

    /// All emission densities vanished at some time point despite scaling.
    #[error("all emission densities vanished at t={t}")]
    DegenerateEmission { t: usize },

    /// Rubin pooling needs at least two imputations.
    #[error("insufficient imputations: got {got}, need at least 2")]
    InsufficientImputations { got: usize },

    /// A GLM sub-model update inside the M-step failed.
    #[error("{submodel} update failed: {source}")]
    SubModel {
        submodel: String,
        #[source]
        source: Box<Error>,
    },

    /// Model fitting failed after exhausting restarts.
    #[error("fit failed: {0}")]
    FitFailure(String),

    /// A lag is too large for the series length.
    #[error("lag k={k} too large for a series of length {len}")]
    LagTooLarge { k: usize, len: usize },

    /// Label alignment enumerates permutations and refuses large state counts.
    #[error("label alignment supports at most 8 states (got {0}); use greedy matching for larger models")]
    TooManyStates(usize),

    /// A spec, parameter set, or query is internally inconsistent.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// Malformed input file.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// The day index column has gaps.
    #[error("non-contiguous day index; missing t values: {missing:?}")]
    DayGaps { missing: Vec<i64> },

    /// A persisted model file has an incompatible schema version.
    #[error("incompatible model file: schema version {found}, expected {expected}")]
    SchemaVersion { found: u32, expected: u32 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Wraps an error with the name of the M-step sub-model that produced it.
    pub fn in_submodel(self, submodel: impl Into<String>) -> Self {
        Error::SubModel {
            submodel: submodel.into(),
            source: Box::new(self),
        }
    }
}
