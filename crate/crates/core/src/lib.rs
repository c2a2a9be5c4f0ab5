//! Spectral machine learning for image-stack classification.
//!
//! Each scan is summarized by the spike eigenvectors of its slice Gram
//! matrix; quantiles of those eigenvectors pick comparable slices across
//! patients. Pixels that are constant or carry no group difference are
//! screened out, and the mean of the selected slices feeds a boosted tree
//! ensemble.

pub mod classifier;
pub mod dataset;
pub mod pipeline;
pub mod rng;
pub mod screening;
pub mod selection;
pub mod spectral;
