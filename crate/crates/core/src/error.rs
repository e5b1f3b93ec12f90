use thiserror::Error;

pub type Result<T> = std::result::Result<T, GmError>;

#[derive(Debug, Error)]
pub enum GmError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("cosine distance is undefined for a zero vector")]
    ZeroVector,

    #[error("cost matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },

    #[error("{0} must not be empty")]
    Empty(&'static str),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(
        "only {found} novel sample(s) detected; the growing phase needs at least 2 \
         (review the novelty threshold epsilon)"
    )]
    TooFewNovel { found: usize },

    #[error(
        "could not place {classes} class means {separation} apart after {tries} tries; \
         use a larger input dimension or a smaller separation"
    )]
    Rejection { classes: usize, separation: f64, tries: usize },

    #[error("line {line}: {msg}")]
    Csv { line: usize, msg: String },

    #[error("scenario: {0}")]
    Scenario(String),

    #[error("initial training sample {id} is unlabeled")]
    UnlabeledInitial { id: u64 },

    #[error("exemplar store holds no prototypes")]
    EmptyStore,

    #[error("k_total = {k_total} is smaller than the {labels} anchored labels")]
    AnchorOverflow { k_total: usize, labels: usize },

    #[error("ledger has no t=0 record")]
    MissingInitialRecord,

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("timestep {t}: {source}")]
    AtTimestep {
        t: usize,
        #[source]
        source: Box<GmError>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl GmError {
    pub(crate) fn at(self, t: usize) -> Self {
        GmError::AtTimestep { t, source: Box::new(self) }
    }
}
