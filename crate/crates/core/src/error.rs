use thiserror::Error;

/// Errors raised by graph construction, assembly, factorization and inference.
#[derive(Error, Debug)]
pub enum Error {
    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("point (edge {edge}, offset {offset}) is not on the graph")]
    InvalidPoint { edge: usize, offset: f64 },

    #[error("no path between the requested points (graph is disconnected)")]
    Unreachable,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unsupported smoothness alpha = {0}; exact operations need alpha in {{1, 2}}")]
    UnsupportedAlpha(u32),

    #[error("edge {edge} is a loop; split loops with `split_loops_and_subdivide` first")]
    LoopEdge { edge: usize },

    #[error("edge precision is numerically singular (kappa * length = {0:e} below 1e-8)")]
    NearSingularEdge(f64),

    #[error("matrix is not positive definite (pivot {index} = {pivot:e})")]
    NotPositiveDefinite { index: usize, pivot: f64 },

    #[error("constraint block is rank deficient (rank {rank} < {rows} rows)")]
    RankDeficient { rows: usize, rank: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("conflicting exact observations at the same site ({0} vs {1})")]
    ConflictingObservations(f64, f64),

    #[error("{0}")]
    Unsupported(String),

    #[error("optimizer failed: {0}")]
    Optimizer(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Stable machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidGraph(_) => "invalid_graph",
            Error::InvalidPoint { .. } => "invalid_point",
            Error::Unreachable => "unreachable",
            Error::InvalidParameter(_) => "invalid_parameter",
            Error::UnsupportedAlpha(_) => "unsupported_alpha",
            Error::LoopEdge { .. } => "loop_edge",
            Error::NearSingularEdge(_) => "near_singular_edge",
            Error::NotPositiveDefinite { .. } => "not_positive_definite",
            Error::RankDeficient { .. } => "rank_deficient",
            Error::Dimension(_) => "dimension",
            Error::ConflictingObservations(..) => "conflicting_observations",
            Error::Unsupported(_) => "unsupported",
            Error::Optimizer(_) => "optimizer",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }
}
