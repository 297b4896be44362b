use std::fmt;

use qct_core::calibration::CalibrationError;
use qct_core::metrics::MetricsError;
use qct_core::segmentation::SegmentationError;
use qct_core::synth::SynthError;
use qct_core::volume::VolumeError;

/// Failure of a subcommand, carrying its exit code class.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Io(String),
    Segmentation(String),
    Calibration(String),
    Grid(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::Segmentation(_) => 4,
            CliError::Calibration(_) => 5,
            CliError::Grid(_) => 6,
        }
    }

    pub fn io(path: &std::path::Path, e: std::io::Error) -> Self {
        CliError::Io(format!("{}: {e}", path.display()))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Io(m) => write!(f, "I/O error: {m}"),
            CliError::Segmentation(m) => write!(f, "segmentation failed: {m}"),
            CliError::Calibration(m) => write!(f, "calibration failed: {m}"),
            CliError::Grid(m) => write!(f, "grid mismatch: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<VolumeError> for CliError {
    fn from(e: VolumeError) -> Self {
        match e {
            VolumeError::GridMismatch(_) => CliError::Grid(e.to_string()),
            VolumeError::InvalidGrid(_) | VolumeError::InvalidRegionCode(_) => CliError::Config(e.to_string()),
            _ => CliError::Io(e.to_string()),
        }
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::Volume(v) => v.into(),
            SynthError::Manifest { .. } => CliError::Io(e.to_string()),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<SegmentationError> for CliError {
    fn from(e: SegmentationError) -> Self {
        match e {
            SegmentationError::Volume(v) => v.into(),
            SegmentationError::Params(m) => CliError::Config(m),
            other => CliError::Segmentation(other.to_string()),
        }
    }
}

impl From<CalibrationError> for CliError {
    fn from(e: CalibrationError) -> Self {
        match e {
            CalibrationError::Volume(v) => v.into(),
            CalibrationError::InvalidRange { .. } | CalibrationError::EmptySite(_) => CliError::Config(e.to_string()),
            CalibrationError::Record(_) => CliError::Io(e.to_string()),
            other => CliError::Calibration(other.to_string()),
        }
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        match e {
            MetricsError::Volume(v) => v.into(),
            MetricsError::TooFewFolds(_) | MetricsError::Indivisible { .. } | MetricsError::DuplicateCase(_) => {
                CliError::Config(e.to_string())
            }
            MetricsError::FoldPlan(_) => CliError::Io(e.to_string()),
            other => CliError::Segmentation(other.to_string()),
        }
    }
}
