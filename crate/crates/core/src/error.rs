use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate heading: reference points coincide")]
    DegenerateHeading,
    #[error("polygon needs at least 3 vertices, got {0}")]
    InvalidPolygon(usize),
    #[error("invalid polyline: {0}")]
    InvalidPolyline(String),
    #[error("polyline is empty")]
    EmptyPolyline,

    #[error("lane graph is empty")]
    EmptyGraph,
    #[error("no lane found after {0} radius expansions")]
    EmptyResult(usize),
    #[error("unknown lane segment `{0}`")]
    UnknownSeed(String),
    #[error("invalid lane graph: {0}")]
    InvalidGraph(String),

    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("invalid tensor: {0}")]
    InvalidTensor(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("scenario has no focal actor `{0}`")]
    MissingFocalActor(String),
    #[error("no conditioning polyline for actor `{0}`")]
    MissingPolyline(String),

    #[error("M' must lie in [1, {max}], got {got}")]
    InvalidMPrime { got: usize, max: usize },
    #[error("dataset is empty")]
    EmptyDataset,

    #[error("trajectory lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("empty input")]
    EmptyInput,
    #[error("scenario actor has no future trajectory")]
    MissingFuture,

    #[error("schema violation at {pointer}: {detail}")]
    SchemaViolation { pointer: String, detail: String },
    #[error("invalid scenario mix: {0}")]
    InvalidMix(String),

    #[error("unknown actor `{0}`")]
    UnknownActor(String),
    #[error("injected actor id `{0}` already exists")]
    DuplicateInjectedId(String),
    #[error("focal actor `{0}` cannot be removed")]
    FocalRemoval(String),
    #[error("invalid edit: {0}")]
    InvalidEdit(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn schema(pointer: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::SchemaViolation {
            pointer: pointer.into(),
            detail: detail.into(),
        }
    }

    /// Stable machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::DegenerateHeading => "DegenerateHeading",
            Error::InvalidPolygon(_) => "InvalidPolygon",
            Error::InvalidPolyline(_) => "InvalidPolyline",
            Error::EmptyPolyline => "EmptyPolyline",
            Error::EmptyGraph => "EmptyGraph",
            Error::EmptyResult(_) => "EmptyResult",
            Error::UnknownSeed(_) => "UnknownSeed",
            Error::InvalidGraph(_) => "InvalidGraph",
            Error::ShapeMismatch { .. } => "ShapeMismatch",
            Error::NonScalarLoss(_) => "NonScalarLoss",
            Error::InvalidTensor(_) => "InvalidTensor",
            Error::Checkpoint(_) => "Checkpoint",
            Error::InvalidConfig(_) => "InvalidConfig",
            Error::MissingFocalActor(_) => "MissingFocalActor",
            Error::MissingPolyline(_) => "MissingPolyline",
            Error::InvalidMPrime { .. } => "InvalidMPrime",
            Error::EmptyDataset => "EmptyDataset",
            Error::LengthMismatch(..) => "LengthMismatch",
            Error::EmptyInput => "EmptyInput",
            Error::MissingFuture => "MissingFuture",
            Error::SchemaViolation { .. } => "SchemaViolation",
            Error::InvalidMix(_) => "InvalidMix",
            Error::UnknownActor(_) => "UnknownActor",
            Error::DuplicateInjectedId(_) => "DuplicateInjectedId",
            Error::FocalRemoval(_) => "FocalRemoval",
            Error::InvalidEdit(_) => "InvalidEdit",
            Error::Io(_) => "Io",
            Error::Json(_) => "Json",
        }
    }

    /// True for errors caused by an invalid scene edit.
    pub fn is_edit_error(&self) -> bool {
        matches!(
            self,
            Error::UnknownActor(_) | Error::DuplicateInjectedId(_) | Error::FocalRemoval(_) | Error::InvalidEdit(_)
        )
    }
}
