use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("invalid schema: {0}")]
    Schema(String),

    #[error("column `{column}`: unknown category value `{value}`")]
    UnknownCategory { column: String, value: String },

    #[error("row {row}: column `{column}` holds non-numeric value `{value}`")]
    NotNumeric {
        row: usize,
        column: String,
        value: String,
    },

    #[error(
        "column `{0}` is constant; remove it or enable constant passthrough for numerical columns"
    )]
    ConstantColumn(String),

    #[error("width mismatch: expected {expected}, got {got}")]
    WidthMismatch { expected: usize, got: usize },

    #[error("timestep {t} outside 1..={max}")]
    Timestep { t: usize, max: usize },

    #[error("vector is not on the probability simplex (sum = {0})")]
    NotSimplex(f64),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("training diverged at epoch {epoch}: non-finite loss")]
    Diverged { epoch: usize },

    #[error("model has not been trained")]
    Untrained,

    #[error("condition out of range: {0}")]
    Condition(String),

    #[error("classifier needs both classes in its training data")]
    SingleClass,

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("artifact mismatch: {0}")]
    Mismatch(String),

    #[error("level {level}: {source}")]
    AtLevel {
        level: u8,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short stable tag used by the command-line error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::MissingColumn(_) | Error::Schema(_) => "schema",
            Error::UnknownCategory { .. } | Error::NotNumeric { .. } => "data",
            Error::ConstantColumn(_) => "data",
            Error::WidthMismatch { .. } => "shape",
            Error::Timestep { .. } | Error::NotSimplex(_) => "domain",
            Error::Empty(_) => "empty",
            Error::Diverged { .. } => "diverged",
            Error::Untrained => "untrained",
            Error::Condition(_) => "condition",
            Error::SingleClass => "single_class",
            Error::Invalid(_) => "invalid",
            Error::Config(_) => "config",
            Error::Mismatch(_) => "mismatch",
            Error::AtLevel { source, .. } => source.kind(),
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
        }
    }
}
