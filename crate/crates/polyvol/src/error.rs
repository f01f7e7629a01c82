use std::path::PathBuf;

/// Errors surfaced by polytope construction, file I/O, diagnostics and the
/// volume estimator. Dimension mismatches in hot-path calls are programming
/// errors and panic instead.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("constraint row {row} is identically zero")]
    ZeroRow { row: usize },

    #[error("origin is not strictly interior: row {row} has offset {offset} <= 0")]
    OriginNotInterior { row: usize, offset: f64 },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("series has zero variance; effective sample size is undefined")]
    ZeroVariance,

    #[error("could not bracket the starting scale after {expansions} expansions (target mass {c_min}..{c_max})")]
    SigmaBracket {
        expansions: usize,
        c_min: f64,
        c_max: f64,
    },

    #[error("no accepted point while estimating the starting-scale mass; polytope may be degenerate")]
    MassEstimateZero,

    #[error("polytope is unbounded along coordinate axis {axis}; volume is undefined")]
    Unbounded { axis: usize },

    #[error("sample budget {budget} is below the number of phases {phases}")]
    BudgetTooSmall { budget: u64, phases: usize },

    #[error("{0}")]
    InvalidConfig(String),
}

pub type Result<T> = std::result::Result<T, Error>;
