use thiserror::Error;

/// Errors raised across the toolkit. Each variant maps to a stable,
/// machine-readable code (see [`Error::code`]).
#[derive(Debug, Error)]
pub enum Error {
    #[error("negative probability {value} at flat index {index}")]
    NegativeProbability { index: usize, value: f64 },

    #[error("probability row not normalized at sample {sample}, pixel {pixel}: sum = {sum}")]
    RowNotNormalized { sample: usize, pixel: usize, sum: f64 },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("measure requires at least two samples, got {0}")]
    NeedsSampling(usize),

    #[error("expected exactly one sample, got {0}")]
    WrongSampleCount(usize),

    #[error("internal consistency violated: {0}")]
    InternalConsistency(String),

    #[error("validation set is empty")]
    EmptyValidation,

    #[error("labels contain a single class only")]
    SingleClass,

    #[error("empty input")]
    EmptyInput,

    #[error("optimizer did not converge after {0} iterations")]
    NoConvergence(usize),

    #[error("at least {needed} raters required, got {got}")]
    NeedsRaters { needed: usize, got: usize },

    #[error("empty mask set: {0}")]
    EmptySet(&'static str),

    #[error("baseline Dice must be positive")]
    ZeroBaseline,

    #[error("object out of bounds: {0}")]
    ObjectOutOfBounds(String),

    #[error("unknown class {class} (classes: {classes})")]
    UnknownClass { class: usize, classes: usize },

    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),

    #[error("missing scenario {0}")]
    MissingScenario(String),

    #[error("missing split: {0}")]
    MissingSplit(String),

    #[error("active-learning pool is empty")]
    EmptyPool,

    #[error("incomplete grid: {0}")]
    IncompleteGrid(String),

    #[error("not an NPY file (bad magic)")]
    MagicMismatch,

    #[error("unsupported array layout or dtype: {0}")]
    DtypeUnsupported(String),

    #[error("truncated file: {0}")]
    TruncatedFile(String),

    #[error("malformed input: {0}")]
    Parse(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn code(&self) -> &'static str {
        match self {
            Error::NegativeProbability { .. } => "NEGATIVE_PROBABILITY",
            Error::RowNotNormalized { .. } => "ROW_NOT_NORMALIZED",
            Error::ShapeMismatch(_) => "SHAPE_MISMATCH",
            Error::InvalidDistribution(_) => "INVALID_DISTRIBUTION",
            Error::NeedsSampling(_) => "NEEDS_SAMPLING",
            Error::WrongSampleCount(_) => "WRONG_SAMPLE_COUNT",
            Error::InternalConsistency(_) => "INTERNAL_CONSISTENCY",
            Error::EmptyValidation => "EMPTY_VALIDATION",
            Error::SingleClass => "SINGLE_CLASS",
            Error::EmptyInput => "EMPTY_INPUT",
            Error::NoConvergence(_) => "NO_CONVERGENCE",
            Error::NeedsRaters { .. } => "NEEDS_RATERS",
            Error::EmptySet(_) => "EMPTY_SET",
            Error::ZeroBaseline => "ZERO_BASELINE",
            Error::ObjectOutOfBounds(_) => "OBJECT_OUT_OF_BOUNDS",
            Error::UnknownClass { .. } => "UNKNOWN_CLASS",
            Error::ConfigInvalid(_) => "CONFIG_INVALID",
            Error::MissingScenario(_) => "MISSING_SCENARIO",
            Error::MissingSplit(_) => "MISSING_SPLIT",
            Error::EmptyPool => "EMPTY_POOL",
            Error::IncompleteGrid(_) => "INCOMPLETE_GRID",
            Error::MagicMismatch => "MAGIC_MISMATCH",
            Error::DtypeUnsupported(_) => "DTYPE_UNSUPPORTED",
            Error::TruncatedFile(_) => "TRUNCATED_FILE",
            Error::Parse(_) => "PARSE_ERROR",
            Error::Io { .. } => "IO_ERROR",
        }
    }

    /// True for errors caused by unreadable or unwritable files rather than
    /// by invalid content.
    pub fn is_io(&self) -> bool {
        matches!(
            self,
            Error::Io { .. } | Error::MagicMismatch | Error::TruncatedFile(_) | Error::DtypeUnsupported(_)
        )
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
