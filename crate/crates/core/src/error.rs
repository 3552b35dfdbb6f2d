use std::path::PathBuf;

/// Error type shared across the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("mesh invariant violated: {0}")]
    MeshInvariant(String),

    #[error("parse error at {path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("iteration limit reached after {iters} iterations, residual {residual:.3e}")]
    IterationLimit { iters: usize, residual: f64 },

    #[error("singular factorization: {0}")]
    SingularFactorization(String),

    #[error("singular reduced system at sample {sample}: condition estimate {cond:.3e}")]
    SingularReduced { sample: usize, cond: f64 },

    #[error("solver failed at sample {sample}: {source}")]
    SampleSolve {
        sample: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("rank deficiency: requested {requested} modes, numerical rank is {rank}")]
    Rank { requested: usize, rank: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
