use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("event {index} at ({x}, {y}) lies outside the {width}x{height} grid")]
    EventOutOfBounds { index: usize, x: u16, y: u16, width: usize, height: usize },

    #[error("event timestamps must be non-decreasing (event {index})")]
    UnsortedEvents { index: usize },

    #[error("invalid polarity {value} in record {index} (expected +1 or -1)")]
    InvalidPolarity { index: u64, value: i8 },

    #[error("bad magic: expected {expected:?}")]
    BadMagic { expected: &'static str },

    #[error("truncated input at byte offset {offset}: {what}")]
    Truncated { offset: u64, what: &'static str },

    #[error("{count} unexpected trailing bytes at offset {offset}")]
    TrailingData { offset: u64, count: u64 },

    #[error("malformed header: {0}")]
    MalformedHeader(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("input {height}x{width} is not divisible by {divisor}; pad to {padded_height}x{padded_width}")]
    IndivisibleInput { height: usize, width: usize, divisor: usize, padded_height: usize, padded_width: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("degenerate transform: {0}")]
    DegenerateTransform(String),

    #[error("frame index out of range: {0}")]
    FrameRange(String),

    #[error("training diverged at step {step}: {detail}")]
    Diverged { step: usize, detail: String },

    #[error("cycle networks must be frozen before adversarial training")]
    CycleNetsNotFrozen,

    #[error("unsupported checkpoint version {found} (expected {expected})")]
    CheckpointVersion { found: u32, expected: u32 },

    #[error("checkpoint does not match network: {0}")]
    ConfigMismatch(String),

    #[error("malformed box: {0}")]
    MalformedBox(String),

    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    #[error("{path}: {source}")]
    File { path: String, source: std::io::Error },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable short identifier, used for machine-readable error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::EventOutOfBounds { .. } => "event_out_of_bounds",
            Error::UnsortedEvents { .. } => "unsorted_events",
            Error::InvalidPolarity { .. } => "invalid_polarity",
            Error::BadMagic { .. } => "bad_magic",
            Error::Truncated { .. } => "truncated",
            Error::TrailingData { .. } => "trailing_data",
            Error::MalformedHeader(_) => "malformed_header",
            Error::ShapeMismatch(_) => "shape_mismatch",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::IndivisibleInput { .. } => "indivisible_input",
            Error::NonFinite(_) => "non_finite",
            Error::DegenerateTransform(_) => "degenerate_transform",
            Error::FrameRange(_) => "frame_range",
            Error::Diverged { .. } => "diverged",
            Error::CycleNetsNotFrozen => "cycle_nets_not_frozen",
            Error::CheckpointVersion { .. } => "checkpoint_version",
            Error::ConfigMismatch(_) => "config_mismatch",
            Error::MalformedBox(_) => "malformed_box",
            Error::Parse { .. } => "parse",
            Error::File { .. } => "file",
            Error::Io(_) => "io",
            Error::Image(_) => "image",
            Error::Json(_) => "json",
        }
    }

    pub(crate) fn file(path: &std::path::Path, source: std::io::Error) -> Self {
        Error::File { path: path.display().to_string(), source }
    }
}
