use thiserror::Error;

/// Errors produced by the low-rank DPP library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("point {0:?} lies outside the unit cube")]
    OutOfDomain(Vec<f64>),

    #[error("matrix is numerically singular ({0})")]
    SingularMatrix(&'static str),

    #[error("K is not strictly below the identity on the embedding subspace")]
    NotStrictlyValid,

    #[error("degenerate parameter: {0}")]
    DegenerateParameter(&'static str),

    /// The restricted kernel L_X has a non-positive pivot: the observation has zero
    /// probability under the model.
    #[error("observation has zero likelihood (non-positive pivot at row {pivot})")]
    SingularObservation { pivot: usize },

    #[error("ground set has {size} items, above the enumeration cap of {cap}")]
    GroundSetTooLarge { size: f64, cap: usize },

    #[error("cannot select {requested} elements out of {available}")]
    InfeasibleSize { requested: usize, available: usize },

    #[error("selected minor became rank deficient after {selected} elements")]
    RankDeficientSelection { selected: usize },

    #[error("vocabulary is empty after stopword filtering")]
    EmptyAfterFiltering,

    #[error("word {0} has a zero embedding row")]
    UnembeddedWord(usize),

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("malformed input: {0}")]
    Parse(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    /// True for failures that come from the numbers rather than the inputs' shape.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::SingularMatrix(_)
                | Error::NotStrictlyValid
                | Error::DegenerateParameter(_)
                | Error::SingularObservation { .. }
                | Error::RankDeficientSelection { .. }
        )
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
