use std::path::PathBuf;

use thiserror::Error;

use crate::conic::SolveStatus;

/// Problems found while validating a feeder description.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum NetworkError {
    #[error("feeder has no buses")]
    Empty,
    #[error("bus at position {position} has id {id}; ids must equal list positions")]
    NonContiguousId { position: usize, id: usize },
    #[error("root bus 0 must be a substation without a parent")]
    InvalidRoot,
    #[error("bus {bus} references missing parent {parent}")]
    MissingParent { bus: usize, parent: usize },
    #[error("bus {bus} has no parent and is disconnected from the root")]
    Disconnected { bus: usize },
    #[error("cycle detected through bus {bus}")]
    Cycle { bus: usize },
    #[error("duplicate line feeding bus {child}")]
    DuplicateLine { child: usize },
    #[error("no line feeds bus {child}")]
    MissingLine { child: usize },
    #[error("line feeding bus {child} references a bus outside the feeder")]
    UnknownLine { child: usize },
    #[error("line feeding bus {child} has nonpositive resistance {r}")]
    NonpositiveResistance { child: usize, r: f64 },
    #[error("bus {bus}: {reason}")]
    InvalidBus { bus: usize, reason: String },
    #[error("bus {bus}: voltage limits must satisfy 0 < v_min < v_max (got {v_min}, {v_max})")]
    InvalidVoltageLimits { bus: usize, v_min: f64, v_max: f64 },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid network: {0}")]
    Network(#[from] NetworkError),
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("power flow did not converge after {iterations} iterations (last change {last_change:.3e})")]
    PowerFlowDiverged { iterations: usize, last_change: f64 },
    #[error("power flow collapsed: nonpositive voltage at bus {bus}")]
    VoltageCollapse { bus: usize },
    #[error("problem is primal infeasible (voltage limits unattainable)")]
    Infeasible,
    #[error("conic solver failed with status {0:?}")]
    Solver(SolveStatus),
    #[error("trace error: {0}")]
    Trace(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::Dimension {
            what,
            expected,
            got,
        });
    }
    Ok(())
}
