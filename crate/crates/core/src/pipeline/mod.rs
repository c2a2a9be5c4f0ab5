//! End-to-end training, scoring, cross-validation and run configuration.

mod crossval;
mod model;
mod predict;
mod source;
mod train;

use std::path::Path;

use thiserror::Error;

pub use crossval::{cross_validate, CvConfig, CvReport, CvRun, MeanSd, MethodResult, MethodSummary};
pub use model::{
    load_model, save_model, FeatureKind, IntensityScaling, ModelConfig, Preprocessing, ResizeMethod, TrainedModel,
    FORMAT_VERSION,
};
pub use predict::{
    evaluate, model_features, predict_source, roc_for, test_pipeline, write_predictions, write_roc, Confusion,
    EvalReport, PatientPrediction,
};
pub use source::{ManifestSource, MemorySource, StackSource, Subset, SynthSource};
pub use train::{
    mask_stats, quantile_mean, run_selection, train_pipeline, MaskStatsRow, SelectionRun, TrainConfig, TrainOutcome,
    DEFAULT_BLOCK_SIZE,
};

use crate::classifier::ClassifierError;
use crate::dataset::DatasetError;
use crate::screening::ScreeningError;
use crate::selection::SelectionError;
use crate::spectral::SpectralError;

/// Environment variable overriding the worker count.
pub const THREADS_ENV: &str = "SML_THREADS";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("loading {patient}: {source}")]
    Load {
        patient: String,
        #[source]
        source: DatasetError,
    },
    #[error("spectral stage, {patient}: {source}")]
    Spectral {
        patient: String,
        #[source]
        source: SpectralError,
    },
    #[error("dataset: {0}")]
    Dataset(#[from] DatasetError),
    #[error("selection stage: {0}")]
    Selection(#[from] SelectionError),
    #[error("screening stage: {0}")]
    Screening(#[from] ScreeningError),
    #[error("classifier stage: {0}")]
    Classifier(#[from] ClassifierError),
    #[error("screening kept no pixels; nothing to train on")]
    EmptyMask,
    #[error("model file: {0}")]
    Model(String),
    #[error("unsupported model format_version {0:?}")]
    Version(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}: {1}")]
    Csv(String, #[source] csv::Error),
    #[error("configuration: {0}")]
    Config(String),
}

impl PipelineError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        PipelineError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

/// Worker count: explicit request, else `SML_THREADS`, else all cores.
pub fn resolve_threads(requested: Option<usize>) -> Result<usize, PipelineError> {
    if let Some(n) = requested {
        return if n == 0 {
            Err(PipelineError::Config("thread count must be positive".into()))
        } else {
            Ok(n)
        };
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(PipelineError::Config(format!("{THREADS_ENV}={v:?} is not a positive integer"))),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

/// Run `f` on a dedicated pool of `threads` workers.
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T, PipelineError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| PipelineError::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}
