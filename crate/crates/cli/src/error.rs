use std::path::Path;

use ncs_core::netsim::SimError;
use ncs_core::synthesis::SynthesisError;
use ncs_core::ModelError;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("synthesis infeasible: {0}")]
    Infeasible(String),
    #[error("simulation assumption violated: {0}")]
    Assumption(String),
    #[error("{stage} failed: {message}")]
    Stage { stage: &'static str, message: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// What gets printed to stderr and written as `error.json`.
#[derive(Debug, Serialize)]
pub struct ErrorRecord {
    pub stage: String,
    pub kind: &'static str,
    pub exit_code: i32,
    pub message: String,
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Infeasible(_) => 3,
            CliError::Assumption(_) => 4,
            CliError::Stage { .. } | CliError::Io { .. } => 1,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Infeasible(_) => "infeasible",
            CliError::Assumption(_) => "assumption_violation",
            CliError::Stage { .. } => "stage",
            CliError::Io { .. } => "io",
        }
    }

    pub fn record(&self, stage: &str) -> ErrorRecord {
        let stage = match self {
            CliError::Stage { stage, .. } => stage.to_string(),
            _ => stage.to_string(),
        };
        ErrorRecord {
            stage,
            kind: self.kind(),
            exit_code: self.exit_code(),
            message: self.to_string(),
        }
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub fn model(stage: &'static str, e: ModelError) -> Self {
        CliError::Stage {
            stage,
            message: e.to_string(),
        }
    }

    pub fn synthesis(e: SynthesisError) -> Self {
        match e {
            SynthesisError::Gamma(m) => CliError::Config(m),
            SynthesisError::NoStabilizingSolution => CliError::Infeasible(e.to_string()),
            other => CliError::Stage {
                stage: "synthesize",
                message: other.to_string(),
            },
        }
    }

    pub fn simulation(e: SimError) -> Self {
        if e.is_assumption_violation() {
            CliError::Assumption(e.to_string())
        } else {
            match e {
                SimError::Config(m) => CliError::Config(m),
                other => CliError::Stage {
                    stage: "simulate",
                    message: other.to_string(),
                },
            }
        }
    }
}
