//! Mapping from failures to process exit codes.

use sto_core::agents::{ScriptedError, TrainError};
use sto_core::config::ConfigError;
use sto_core::dynamics::ParamsError;
use sto_core::env::EnvError;
use sto_core::line::LineError;
use sto_core::metrics::MetricsError;
use sto_core::neural::CheckpointError;

pub const IO: u8 = 1;
pub const VALIDATION: u8 = 2;
pub const INFEASIBLE: u8 = 3;
pub const DIVERGENCE: u8 = 4;

/// Marks an error with an explicit exit code.
#[derive(Debug)]
pub struct Coded(pub u8, pub String);

impl std::fmt::Display for Coded {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.1)
    }
}

impl std::error::Error for Coded {}

pub fn code_for(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(c) = cause.downcast_ref::<Coded>() {
            return c.0;
        }
        if let Some(e) = cause.downcast_ref::<LineError>() {
            return match e {
                LineError::Io { .. } => IO,
                _ => VALIDATION,
            };
        }
        if let Some(e) = cause.downcast_ref::<ParamsError>() {
            return match e {
                ParamsError::Io { .. } => IO,
                _ => VALIDATION,
            };
        }
        if let Some(e) = cause.downcast_ref::<ConfigError>() {
            match e {
                ConfigError::Io { .. } => return IO,
                ConfigError::Line(_) | ConfigError::Params(_) => continue,
                _ => return VALIDATION,
            }
        }
        if let Some(e) = cause.downcast_ref::<CheckpointError>() {
            return match e {
                CheckpointError::Io { .. } => IO,
                _ => VALIDATION,
            };
        }
        if let Some(e) = cause.downcast_ref::<ScriptedError>() {
            return match e {
                ScriptedError::Env(EnvError::Divergence { .. }) => DIVERGENCE,
                ScriptedError::Env(_) => VALIDATION,
                _ => INFEASIBLE,
            };
        }
        if let Some(e) = cause.downcast_ref::<TrainError>() {
            match e {
                TrainError::Divergence { .. } | TrainError::Env(EnvError::Divergence { .. }) => return DIVERGENCE,
                TrainError::Io(_) => return IO,
                TrainError::Checkpoint(_) | TrainError::Metrics(_) => continue,
                _ => return VALIDATION,
            }
        }
        if let Some(e) = cause.downcast_ref::<EnvError>() {
            return match e {
                EnvError::Divergence { .. } => DIVERGENCE,
                _ => VALIDATION,
            };
        }
        if let Some(e) = cause.downcast_ref::<MetricsError>() {
            return match e {
                MetricsError::Io(_) => IO,
                MetricsError::DestinationNotReached { .. } => INFEASIBLE,
                _ => VALIDATION,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return IO;
        }
    }
    VALIDATION
}
