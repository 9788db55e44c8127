use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("recipe has no ingredients")]
    EmptyRecipe,
    #[error("ingredient index {0} appears more than once in a recipe")]
    DuplicateIngredient(usize),
    #[error("ingredient {index} has non-positive or non-finite mass {grams}")]
    InvalidMass { index: usize, grams: f64 },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("malformed binary data: {0}")]
    Format(String),
    #[error("ingredient index {index} out of range for vocabulary of size {size}")]
    VocabularyMismatch { index: usize, size: usize },
    #[error("unknown ingredient name {0:?}")]
    UnknownIngredient(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("embedding row {0} has zero norm")]
    ZeroNormEmbedding(usize),
    #[error("centroid of group {0} has zero norm")]
    ZeroNormCentroid(usize),
    #[error("invalid verdict: {0}")]
    InvalidVerdict(String),
    #[error("distribution has no mass")]
    EmptyDistribution,
    #[error("numerical blow-up: {0}")]
    NumericalBlowup(String),
    #[error("batch of size {0} is too small, need at least 2")]
    BatchTooSmall(usize),
    #[error("top-k with k={k} invalid for {size} scores")]
    InvalidK { k: usize, size: usize },
    #[error("dataset split is empty")]
    EmptyDataset,
    #[error("metric undefined: {0}")]
    UndefinedMetric(&'static str),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// True for errors caused by numerics rather than malformed input.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::ZeroNormEmbedding(_)
                | Error::ZeroNormCentroid(_)
                | Error::NumericalBlowup(_)
                | Error::EmptyDistribution
        )
    }
}
