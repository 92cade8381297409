use dptomo_core::config::ConfigError;
use dptomo_core::container::ContainerError;
use dptomo_core::forward::ForwardError;
use dptomo_core::geometry::GeometryError;
use dptomo_core::objective::ObjectiveError;
use dptomo_core::optim::OptimError;
use dptomo_core::simkit::SimkitError;
use std::path::PathBuf;
use thiserror::Error;

/// Exit code 2: bad configuration or data. Exit code 3: numerical failure.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Container(#[from] ContainerError),
    #[error("{0}")]
    Geometry(#[from] GeometryError),
    #[error("{0}")]
    Forward(#[from] ForwardError),
    #[error("{0}")]
    Simkit(#[from] SimkitError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Numerical(_) => 3,
            _ => 2,
        }
    }
}

impl From<OptimError> for CliError {
    fn from(e: OptimError) -> Self {
        match e {
            OptimError::Diverged { .. }
            | OptimError::NonFiniteGradient { .. }
            | OptimError::InsufficientCoverage { .. } => CliError::Numerical(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<ObjectiveError> for CliError {
    fn from(e: ObjectiveError) -> Self {
        CliError::Data(e.to_string())
    }
}
