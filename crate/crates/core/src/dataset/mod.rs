//! Loading, normalizing, resizing and synthesizing labelled image stacks.

mod cohort;
mod image;
mod resize;
mod stack;
mod synth;

use std::path::Path;

use thiserror::Error;

pub use cohort::{
    read_manifest, split_indices, split_train_test, write_manifest, Cohort, Label, ManifestEntry,
    Patient,
};
pub(crate) use cohort::check_trainable;
pub use image::{column_major_to_row_major, Image};
pub use resize::resize_bilinear;
pub use stack::{normalize_intensity, read_stack, write_stack, ImageStack, HEADER_LEN, MAGIC};
pub use synth::{synth_cohort, synth_patient, write_synth_cohort, SynthLayout, SynthParams, LESION_PROFILE_MIN};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("not an SPS1 stack file (bad magic)")]
    BadMagic,
    #[error("bad header: {0}")]
    BadHeader(String),
    #[error("truncated payload: expected {expected} values, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("{0} unexpected trailing bytes after payload")]
    TrailingData(usize),
    #[error("stack has {0} slices, at least 2 are required")]
    TooFewSlices(usize),
    #[error("stack has no pixels")]
    EmptyStack,
    #[error("slices are not all square with the same side")]
    RaggedSlices,
    #[error("non-finite intensity")]
    NonFinite,
    #[error("stack is flagged normalized but has intensities outside [0, 1]")]
    OutOfRange,
    #[error("duplicate patient id {0:?}")]
    DuplicateId(String),
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("invalid synthetic parameters: {0}")]
    InvalidParams(String),
    #[error("requested {requested} {label} training patients, only {available} available")]
    InsufficientPatients {
        label: Label,
        requested: usize,
        available: usize,
    },
    #[error("split would leave the test cohort empty")]
    EmptyTestSplit,
    #[error("training needs at least 2 patients per label (normal {normal}, abnormal {abnormal})")]
    NotTrainable { normal: usize, abnormal: usize },
}

impl DatasetError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        DatasetError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}
