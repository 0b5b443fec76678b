use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Core(#[from] splat_oed_core::Error),

    #[error("need {needed} {what} views, dataset has {available}")]
    InsufficientViews {
        what: &'static str,
        needed: usize,
        available: usize,
    },

    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    #[error("unknown method {0:?}; expected uniform or {{t|a|d|e|fisherrf}}-{{simple|block}}")]
    UnknownMethod(String),

    #[error("unknown schedule {0:?}; expected single10, single20 or batch4")]
    UnknownSchedule(String),

    #[error("unknown mask {0:?}; expected sh, alpha, geom or none")]
    UnknownMask(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;
