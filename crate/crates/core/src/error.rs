use thiserror::Error;

/// Crate-wide error type. The CLI maps these onto stable exit codes:
/// config errors -> 2, numeric aborts -> 3, missing artifacts -> 4.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: left {left:?}, right {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("{op}: expected {expected}, got shape {shape:?}")]
    BadShape {
        op: &'static str,
        expected: String,
        shape: Vec<usize>,
    },

    #[error("backward root must be scalar, got shape {shape:?}")]
    NonScalarRoot { shape: Vec<usize> },

    #[error("node id {id} is not in this graph (len {len})")]
    UnknownNode { id: usize, len: usize },

    #[error("non-finite value detected in {context}")]
    NonFinite { context: String },

    #[error("non-finite loss at iteration {iteration}, class {class}")]
    NumericAbort { iteration: usize, class: usize },

    #[error("iteration {iteration} out of range (total {total})")]
    IterationOutOfRange { iteration: usize, total: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("config parse error at line {line}: {message}")]
    ConfigParse { line: usize, message: String },

    #[error("unknown class id {0}")]
    UnknownClass(usize),

    #[error("requested batch of {requested} from class {class} with only {available} videos")]
    OversizedBatch {
        class: usize,
        requested: usize,
        available: usize,
    },

    #[error("sprite of radius {radius:.2} cannot fit geometry {height}x{width} under program '{program}'")]
    SpriteDoesNotFit {
        program: String,
        radius: f64,
        height: usize,
        width: usize,
    },

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported format version {0}")]
    BadVersion(u32),

    #[error("truncated payload: needed {needed} bytes, had {had}")]
    Truncated { needed: usize, had: usize },

    #[error("container has {0} trailing bytes past the declared payload")]
    TrailingBytes(usize),

    #[error("geometry mismatch: file has {file:?}, expected {expected:?}")]
    GeometryMismatch {
        file: (usize, usize, usize, usize),
        expected: (usize, usize, usize, usize),
    },

    #[error("missing artifact: {0}")]
    MissingArtifact(String),

    #[error("blockage check precondition violated: inner products must both be negative (got {gi:.3e}, {gi1:.3e})")]
    BlockagePrecondition { gi: f64, gi1: f64 },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
