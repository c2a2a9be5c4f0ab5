//! Synthetic cohorts with a two-cluster slice structure.
//!
//! Every scan is a block of cluster-A slices followed by a block of
//! cluster-B slices. Cluster A sits at `base_level`, cluster B at
//! `base_level + mean_shift`, both with i.i.d. Gaussian pixel noise.
//!
//! A fixed planted pixel subset carries the label inside cluster-A slices.
//! Half of it is lesion: abnormal scans brighten it by `label_signal · b`.
//! The other half is tissue, bright by `label_signal · b` in every scan, which
//! abnormal scans lose. The per-pixel profile `b` lies in
//! `[LESION_PROFILE_MIN, 1]`. Intensities are clamped to `[0, 1]`.
//!
//! The two halves make the class means point in different directions over
//! the planted pixels, which an uncentered patient Gram matrix needs to
//! separate the classes in its top two eigenvectors.

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use std::path::{Path, PathBuf};

use super::cohort::{write_manifest, Cohort, Label, ManifestEntry, Patient};
use super::stack::{write_stack, ImageStack};
use super::DatasetError;
use crate::rng::{rng_for, stream};

/// Lower bound of the per-pixel lesion profile.
pub const LESION_PROFILE_MIN: f64 = 0.85;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub n_normal: usize,
    pub n_abnormal: usize,
    /// Inclusive range of slices per scan.
    pub m_range: (usize, usize),
    pub p: usize,
    /// Fraction of each scan's slices in cluster A.
    pub cluster_fraction: f64,
    pub base_level: f64,
    pub mean_shift: f64,
    pub label_signal: f64,
    pub noise_sd: f64,
    pub signal_pixel_fraction: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            n_normal: 82,
            n_abnormal: 281,
            m_range: (20, 40),
            p: 16,
            cluster_fraction: 0.3,
            base_level: 0.05,
            mean_shift: 0.4,
            label_signal: 0.9,
            noise_sd: 0.05,
            signal_pixel_fraction: 0.15,
        }
    }
}

impl SynthParams {
    pub fn validate(&self) -> Result<(), DatasetError> {
        let bad = |msg: &str| Err(DatasetError::InvalidParams(msg.to_owned()));
        let open_unit = |v: f64| v > 0.0 && v < 1.0;
        if self.m_range.0 < 4 || self.m_range.0 > self.m_range.1 {
            return bad("m_range must satisfy 4 <= min <= max");
        }
        if self.p == 0 {
            return bad("p must be positive");
        }
        if !open_unit(self.cluster_fraction) || !open_unit(self.signal_pixel_fraction) {
            return bad("fractions must lie in (0, 1)");
        }
        if !(self.noise_sd > 0.0 && self.noise_sd.is_finite()) {
            return bad("noise_sd must be positive");
        }
        for v in [self.base_level, self.mean_shift, self.label_signal] {
            if !(0.0..=1.0).contains(&v) {
                return bad("levels must lie in [0, 1]");
            }
        }
        if self.n_normal + self.n_abnormal == 0 {
            return bad("cohort must contain at least one patient");
        }
        Ok(())
    }

    pub fn n_patients(&self) -> usize {
        self.n_normal + self.n_abnormal
    }

    /// Patients `0..n_normal` are normal, the rest abnormal.
    pub fn label_of(&self, index: usize) -> Label {
        Label::from_positive(index >= self.n_normal)
    }
}

/// Cohort-wide plant: which pixels carry the label signal and how strongly.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthLayout {
    /// Row-major pixel offsets, ascending.
    pub signal_pixels: Vec<usize>,
    /// Signed per-pixel profile: positive for lesion pixels, negative for
    /// tissue pixels that abnormal scans lose.
    pub profile: Vec<f64>,
}

impl SynthLayout {
    pub fn new(params: &SynthParams, seed: u64) -> Self {
        let mut rng = rng_for(seed, stream::SYNTH_LAYOUT, 0);
        let p2 = params.p * params.p;
        let count = ((params.signal_pixel_fraction * p2 as f64).round() as usize).clamp(1, p2);
        let drawn = sample(&mut rng, p2, count).into_vec();
        let mut planted: Vec<(usize, f64)> = drawn
            .into_iter()
            .enumerate()
            .map(|(k, px)| {
                let b = rng.random_range(LESION_PROFILE_MIN..=1.0);
                (px, if k % 2 == 0 { b } else { -b })
            })
            .collect();
        planted.sort_unstable_by_key(|&(px, _)| px);
        Self {
            signal_pixels: planted.iter().map(|&(px, _)| px).collect(),
            profile: planted.iter().map(|&(_, b)| b).collect(),
        }
    }
}

/// Generate patient `index` of the cohort defined by `(params, seed)`.
pub fn synth_patient(params: &SynthParams, layout: &SynthLayout, seed: u64, index: usize) -> Patient {
    let mut rng = rng_for(seed, stream::SYNTH_PATIENT, index as u64);
    let label = params.label_of(index);
    let (lo, hi) = params.m_range;
    let m = rng.random_range(lo..=hi);
    let m_a = ((params.cluster_fraction * m as f64).round() as usize).clamp(1, m - 1);
    let p2 = params.p * params.p;
    let noise = Normal::new(0.0, params.noise_sd).expect("validated noise_sd");

    let mut data = Vec::with_capacity(m * p2);
    let mut slice = vec![0.0f64; p2];
    for j in 0..m {
        let in_a = j < m_a;
        let level = params.base_level + if in_a { 0.0 } else { params.mean_shift };
        slice.fill(level);
        if in_a {
            let abnormal = label == Label::Abnormal;
            for (&px, &b) in layout.signal_pixels.iter().zip(&layout.profile) {
                let bright = if b > 0.0 { abnormal } else { !abnormal };
                if bright {
                    slice[px] += params.label_signal * b.abs();
                }
            }
        }
        data.extend(
            slice
                .iter()
                .map(|&v| (v + noise.sample(&mut rng)).clamp(0.0, 1.0) as f32),
        );
    }
    let stack = ImageStack::from_flat(format!("case{index:04}"), m, params.p, data)
        .expect("synthetic stack is well formed");
    Patient { stack, label }
}

/// Deterministic synthetic cohort: a pure function of `(params, seed)`.
pub fn synth_cohort(params: &SynthParams, seed: u64) -> Result<Cohort, DatasetError> {
    params.validate()?;
    let layout = SynthLayout::new(params, seed);
    let patients = (0..params.n_patients())
        .into_par_iter()
        .map(|k| synth_patient(params, &layout, seed, k))
        .collect();
    Cohort::new(patients)
}

/// Write the cohort as `<id>.sps` files plus `manifest.csv` under `dir`,
/// generating patients in parallel. Manifest paths are relative to `dir`.
pub fn write_synth_cohort(params: &SynthParams, seed: u64, dir: &Path) -> Result<Vec<ManifestEntry>, DatasetError> {
    params.validate()?;
    std::fs::create_dir_all(dir).map_err(|e| DatasetError::io(dir, e))?;
    let layout = SynthLayout::new(params, seed);
    let entries = (0..params.n_patients())
        .into_par_iter()
        .map(|k| {
            let patient = synth_patient(params, &layout, seed, k);
            let file = format!("{}.sps", patient.stack.patient_id());
            write_stack(&patient.stack, &dir.join(&file))?;
            Ok(ManifestEntry {
                patient_id: patient.stack.patient_id().to_owned(),
                label: Some(patient.label),
                path: PathBuf::from(file),
            })
        })
        .collect::<Result<Vec<_>, DatasetError>>()?;
    write_manifest(&dir.join("manifest.csv"), &entries)?;
    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthParams {
        SynthParams {
            n_normal: 3,
            n_abnormal: 3,
            m_range: (6, 10),
            p: 6,
            ..SynthParams::default()
        }
    }

    #[test]
    fn same_seed_same_cohort() {
        let a = synth_cohort(&small(), 9).unwrap();
        let b = synth_cohort(&small(), 9).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, synth_cohort(&small(), 10).unwrap());
    }

    #[test]
    fn noiseless_scan_has_two_levels_off_signal() {
        let params = SynthParams {
            noise_sd: 1e-12,
            mean_shift: 0.4,
            ..small()
        };
        let layout = SynthLayout::new(&params, 1);
        let cohort = synth_cohort(&params, 1).unwrap();
        for patient in cohort.patients() {
            let s = &patient.stack;
            for px in (0..36).filter(|px| !layout.signal_pixels.contains(px)) {
                let mut levels: Vec<f32> = (0..s.m()).map(|j| s.slice(j)[px]).collect();
                levels.sort_by(f32::total_cmp);
                levels.dedup();
                assert_eq!(levels.len(), 2, "pixel {px} levels {levels:?}");
            }
        }
    }

    #[test]
    fn invalid_params_rejected() {
        let mut p = small();
        p.m_range = (3, 8);
        assert!(synth_cohort(&p, 0).is_err());
        let mut p = small();
        p.cluster_fraction = 1.0;
        assert!(synth_cohort(&p, 0).is_err());
        let mut p = small();
        p.noise_sd = 0.0;
        assert!(synth_cohort(&p, 0).is_err());
    }

    #[test]
    fn slice_counts_respect_range() {
        let cohort = synth_cohort(&small(), 4).unwrap();
        assert!(cohort.patients().iter().all(|p| (6..=10).contains(&p.stack.m())));
        assert_eq!(cohort.count(Label::Normal), 3);
    }

    #[test]
    fn lesion_and_tissue_pixels_swap_between_labels() {
        let params = SynthParams {
            noise_sd: 1e-12,
            ..small()
        };
        let layout = SynthLayout::new(&params, 3);
        assert!(layout.profile.iter().any(|&b| b > 0.0) && layout.profile.iter().any(|&b| b < 0.0));
        let cohort = synth_cohort(&params, 3).unwrap();
        for patient in cohort.patients() {
            let first = patient.stack.slice(0);
            let last = patient.stack.slice(patient.stack.m() - 1);
            for (&px, &b) in layout.signal_pixels.iter().zip(&layout.profile) {
                let bright = (b > 0.0) == patient.label.is_positive();
                let want = params.base_level + if bright { params.label_signal * b.abs() } else { 0.0 };
                assert!((f64::from(first[px]) - want).abs() < 1e-6);
                // cluster B never carries the plant
                let b_level = params.base_level + params.mean_shift;
                assert!((f64::from(last[px]) - b_level).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn zero_signal_makes_labels_indistinguishable() {
        let params = SynthParams {
            noise_sd: 1e-12,
            label_signal: 0.0,
            ..small()
        };
        let cohort = synth_cohort(&params, 5).unwrap();
        let levels = |label: Label| {
            let mut v: Vec<f32> = cohort
                .patients()
                .iter()
                .filter(|p| p.label == label)
                .flat_map(|p| p.stack.data().iter().map(|x| (x * 1e4).round() / 1e4))
                .collect();
            v.sort_by(f32::total_cmp);
            v.dedup();
            v
        };
        assert_eq!(levels(Label::Normal), levels(Label::Abnormal));
    }

    #[test]
    fn written_cohort_reads_back_identically() {
        let dir = tempfile::tempdir().unwrap();
        let entries = write_synth_cohort(&small(), 4, dir.path()).unwrap();
        let cohort = synth_cohort(&small(), 4).unwrap();
        let manifest = crate::dataset::read_manifest(&dir.path().join("manifest.csv")).unwrap();
        assert_eq!(manifest.len(), entries.len());
        for (entry, patient) in manifest.iter().zip(cohort.patients()) {
            assert_eq!(entry.label, Some(patient.label));
            let mut stack = crate::dataset::read_stack(&entry.path).unwrap();
            stack.set_patient_id(entry.patient_id.clone());
            assert_eq!(&stack, &patient.stack);
        }
    }
}
