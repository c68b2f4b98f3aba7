use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("timestamp {t} lies outside the scan window [{t_b}, {t_e}]")]
    OutsideWindow { t: f64, t_b: f64, t_e: f64 },

    #[error("map initialization needs at least one scan with in-range points")]
    InsufficientData,

    #[error("linear system has only {constraints} constraints for 12 unknowns")]
    DegenerateSystem { constraints: usize },

    #[error("only {:.1}% of points found a correspondence", 100.0 * ratio)]
    InsufficientCorrespondences { ratio: f64 },

    #[error("normal equations stayed singular after damping up to {damping:e}")]
    SingularSystem { damping: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}: scan starting at {current} follows a scan starting at {previous}")]
    OutOfOrder {
        path: PathBuf,
        previous: f64,
        current: f64,
    },

    #[error("trajectories share no timestamps")]
    NoOverlap,
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }
}
