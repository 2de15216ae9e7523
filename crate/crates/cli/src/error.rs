use std::path::Path;
use std::process::ExitCode;

use occlusynth::compositor::CompositorError;
use occlusynth::dataset::DatasetError;
use occlusynth::ingest::IngestError;
use occlusynth::metrics::MetricsError;
use occlusynth::planner::PlannerError;

/// Command failure, split by the exit code it maps to.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad input content: config, schema, annotations, arguments.
    #[error("{0}")]
    Validation(String),
    /// The filesystem got in the way.
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Validation(_) => ExitCode::from(1),
            CliError::Io(_) => ExitCode::from(2),
        }
    }

    pub fn io(path: &Path, err: impl std::fmt::Display) -> Self {
        CliError::Io(format!("{}: {err}", path.display()))
    }
}

fn image_is_io(err: &image::ImageError) -> bool {
    matches!(err, image::ImageError::IoError(_))
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        let io = match &e {
            DatasetError::Image { source, .. } => image_is_io(source),
            DatasetError::Compositor(CompositorError::Backdrop { source, .. }) => image_is_io(source),
            other => !other.is_validation(),
        };
        if io {
            CliError::Io(e.to_string())
        } else {
            CliError::Validation(e.to_string())
        }
    }
}

impl From<CompositorError> for CliError {
    fn from(e: CompositorError) -> Self {
        DatasetError::from(e).into()
    }
}

impl From<IngestError> for CliError {
    fn from(e: IngestError) -> Self {
        match &e {
            IngestError::Io { .. } => CliError::Io(e.to_string()),
            IngestError::Image { source, .. } if image_is_io(source) => CliError::Io(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<PlannerError> for CliError {
    fn from(e: PlannerError) -> Self {
        CliError::Validation(e.to_string())
    }
}

/// Labels a validation failure with the file it came from.
pub fn in_file(path: &Path, err: impl std::fmt::Display) -> CliError {
    CliError::Validation(format!("{}: {err}", path.display()))
}
