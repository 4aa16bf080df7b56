//! Configuration files, hull persistence, reports and the batch drivers
//! behind the command-line tool.

mod config;
mod hullfile;
mod report;
mod run;

use std::path::PathBuf;

use thiserror::Error;

pub use config::{
    load_config, parse_config, FrequencyConfig, GevreyConfig, ModelConfig, OutputConfig, RunConfig,
    ScheduleConfig, SweepConfig, SweepParameter, TruncationConfig, VerifyConfig, Violation,
};
pub use hullfile::{load_hull, parse_hull, save_hull, write_hull, HULL_VERSION};
pub use report::{fmt_f64, to_json, HistoryRow, SolveReport, SweepRow};
pub use run::{
    output_dir, run_certify, run_residual, run_solve, run_sweep, solve_config, RunOutcome, OUT_DIR_ENV,
};

use crate::error::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("invalid configuration:\n{}", format_violations(.0))]
    Validation(Vec<Violation>),

    #[error("hull file format error: {0}")]
    Format(String),

    #[error("hull file version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error(transparent)]
    Numerics(#[from] Error),
}

fn format_violations(v: &[Violation]) -> String {
    v.iter()
        .map(|x| format!("  {}: {}", x.path, x.message))
        .collect::<Vec<_>>()
        .join("\n")
}

impl IoError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        IoError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type IoResult<T> = std::result::Result<T, IoError>;
