use std::path::PathBuf;

use noisex_core::audio::{AudioError, WavError};
use noisex_core::classifier::ClassifierError;
use noisex_core::dataset::DatasetError;
use noisex_core::features::FeatureError;
use noisex_core::synth::SynthError;
use noisex_core::techniques::TechniqueError;
use noisex_core::trainer::TrainError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: file not found")]
    Missing { path: PathBuf },
    #[error("{path}: {source}")]
    Wav { path: PathBuf, source: WavError },
    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },
    #[error("config: {0}")]
    Config(String),
    #[error("invalid experiment: {0}")]
    Spec(String),
    #[error("incomplete table: {0}")]
    IncompleteTable(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Technique(#[from] TechniqueError),
    #[error(transparent)]
    Train(#[from] TrainError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Failure category, reported through the process exit code. Code 2 is
/// left to command-line usage errors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Category {
    Io = 3,
    Format = 4,
    Config = 5,
    Data = 6,
    Training = 7,
}

impl Error {
    pub fn category(&self) -> Category {
        match self {
            Error::Io { .. } | Error::Missing { .. } => Category::Io,
            Error::Wav { .. } | Error::Format { .. } | Error::Csv(_) => Category::Format,
            Error::Config(_) | Error::Spec(_) | Error::IncompleteTable(_) => Category::Config,
            Error::Audio(_) | Error::Synth(_) | Error::Dataset(_) | Error::Feature(_) => Category::Data,
            Error::Classifier(_) | Error::Technique(_) | Error::Train(_) => Category::Training,
        }
    }

    pub fn exit_code(&self) -> i32 {
        self.category() as i32
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::Missing { path }
        } else {
            Error::Io { path, source }
        }
    }

    pub fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format { path: path.into(), msg: msg.into() }
    }
}
