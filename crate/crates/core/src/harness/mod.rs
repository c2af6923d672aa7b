//! Configuration, persistence and the end-to-end experiment pipelines.

mod config;
mod io;
mod pipeline;

pub use config::{ConfigError, ExperimentConfig, MbtConfig, Method, TutorKind};
pub use io::{
    read_dataset, read_matrix, read_params, write_dataset, write_matrix, write_params, DatasetHeader, DatasetRecord,
    MatrixRecord, ParamsRecord, DATASET_FORMAT, FORMAT_VERSION, MATRIX_FORMAT, PARAMS_FORMAT,
};
pub use pipeline::{
    dataset_stem, discover, eval_ks, eval_tutor, generate, ks_report, ks_rows, repro, tutor_report, DiscoveryArtifact,
    GeneratedDataset, InformedSeed, KsRow, ReproOutcome, RunManifest, TutorInputs, TutorOutputs, TutorRow,
    KS_REPORT_HEADER, TUTOR_REPORT_HEADER,
};

use std::path::PathBuf;

use thiserror::Error;

use crate::graph::GraphError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Divergence(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

impl HarnessError {
    /// Process exit status for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) | HarnessError::Usage(_) | HarnessError::Shape(_) | HarnessError::Graph(_) => 2,
            HarnessError::Divergence(_) => 3,
            HarnessError::Io { .. } | HarnessError::Format { .. } => 4,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        HarnessError::Format {
            path: path.into(),
            message: message.into(),
        }
    }
}
