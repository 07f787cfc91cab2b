use thiserror::Error;

/// Errors raised by the numerical routines in this crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("operator is not self-adjoint (relative asymmetry {asymmetry:.3e})")]
    NotSelfAdjoint { asymmetry: f64 },

    #[error("eigenvalue {index} ({value:.3e}) is below the numerical floor")]
    EigenFloor { index: usize, value: f64 },

    #[error("requested rank {requested} exceeds numerical rank {rank}")]
    RankExceeded { requested: usize, rank: usize },

    #[error("no stationary eigenvalue exceeds the threshold {threshold:.6e}; K_S = 0 leaves the stationary slope undefined (lower a1 or a2_exp)")]
    EmptyStationaryBlock { threshold: f64 },

    #[error("degenerate sample: {0}")]
    DegenerateSample(String),

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("data error at {location}: {message}")]
    Data { location: String, message: String },

    #[error("simulation cell {cell}: {source}")]
    InCell { cell: String, source: Box<Error> },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn data(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Data {
            location: location.into(),
            message: message.into(),
        }
    }

    /// `true` for failures of the numerical kind (floors, rank, singular pencils).
    pub fn is_numerical(&self) -> bool {
        if let Error::InCell { source, .. } = self {
            return source.is_numerical();
        }
        matches!(
            self,
            Error::NotSelfAdjoint { .. }
                | Error::EigenFloor { .. }
                | Error::RankExceeded { .. }
                | Error::EmptyStationaryBlock { .. }
                | Error::Singular(_)
        )
    }

    /// `true` for malformed or inconsistent input data.
    pub fn is_data(&self) -> bool {
        if let Error::InCell { source, .. } = self {
            return source.is_data();
        }
        matches!(
            self,
            Error::Data { .. }
                | Error::Csv(_)
                | Error::Io(_)
                | Error::GridMismatch(_)
                | Error::DegenerateSample(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
