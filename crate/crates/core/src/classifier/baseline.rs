//! Whole-scan features for the comparison classifiers: one randomly drawn
//! slice, or the mean of all slices.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Image, ImageStack};
use crate::rng::{hash_str, rng_for, stream};
use crate::spectral::mean_image;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    RandomImage,
    MeanImage,
}

/// The draw for `random_image` depends on `seed` and the patient id, so a
/// patient gets the same slice wherever it sits in a cohort.
pub fn baseline_features(stack: &ImageStack, kind: BaselineKind, seed: u64) -> Image {
    match kind {
        BaselineKind::RandomImage => {
            let mut rng = rng_for(seed, stream::BASELINE, hash_str(stack.patient_id()));
            stack.slice_image(rng.random_range(0..stack.m()))
        }
        BaselineKind::MeanImage => {
            let slices: Vec<Image> = (0..stack.m()).map(|j| stack.slice_image(j)).collect();
            mean_image(&slices).expect("stacks have at least one slice")
        }
    }
}
