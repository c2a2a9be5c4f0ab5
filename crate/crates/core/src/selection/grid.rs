//! Streaming evaluation of the `(ell, alpha)` grid.
//!
//! Patients arrive in blocks. Each grid point owns a screening accumulator
//! (first pass) and then a buffer of kept pixels per patient (second pass),
//! so no more than one block of stacks is ever resident. Work is split over
//! grid points and each point consumes its patients in order, which keeps
//! every result independent of the thread count.

use log::{debug, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::kmeans::kmeans2;
use super::{misclustering_error, SelectionError};
use crate::dataset::{column_major_to_row_major, ImageStack, Label};
use crate::rng::{derive_seed, stream};
use crate::screening::{PixelMask, PixelSet, ScreeningAccumulator};
use crate::spectral::{gram_of_rows, quantile_index, top_eigenpairs, SpikeBasis};

/// Misclustering score of a grid point that cannot cluster.
pub const UNINFORMATIVE_ERROR: f64 = 0.5;

/// Which screened set the patient Gram matrix is built on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum GramPixels {
    /// Coordinates surviving screening.
    #[default]
    A3,
    /// The mean-indistinguishable set, a literal reading of the algorithm.
    A2,
}

impl GramPixels {
    pub fn set(self) -> PixelSet {
        match self {
            GramPixels::A3 => PixelSet::A3,
            GramPixels::A2 => PixelSet::A2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub ell: usize,
    pub alpha: f64,
}

/// All `(ell, alpha)` pairs, ell-major.
pub fn grid_points(grid: &[f64]) -> Vec<GridPoint> {
    [1, 2]
        .iter()
        .flat_map(|&ell| grid.iter().map(move |&alpha| GridPoint { ell, alpha }))
        .collect()
}

/// One patient as seen by the grid passes.
pub struct GridInput<'a> {
    pub stack: &'a ImageStack,
    pub basis: &'a SpikeBasis,
}

fn check_side(p: usize, inputs: &[GridInput<'_>]) -> Result<(), SelectionError> {
    match inputs.iter().find(|x| x.stack.p() != p) {
        Some(x) => Err(SelectionError::SideMismatch {
            patient: x.stack.patient_id().to_owned(),
            expected: p,
            found: x.stack.p(),
        }),
        None => Ok(()),
    }
}

/// First pass: per-point screening statistics.
pub struct GridScreening {
    p: usize,
    points: Vec<GridPoint>,
    accs: Vec<ScreeningAccumulator>,
}

impl GridScreening {
    pub fn new(points: Vec<GridPoint>, p: usize) -> Self {
        let accs = points.iter().map(|_| ScreeningAccumulator::new(p * p)).collect();
        Self { p, points, accs }
    }

    pub fn push_block(&mut self, inputs: &[GridInput<'_>], labels: &[Label]) -> Result<(), SelectionError> {
        assert_eq!(inputs.len(), labels.len());
        check_side(self.p, inputs)?;
        let p = self.p;
        self.accs
            .par_iter_mut()
            .zip(&self.points)
            .for_each(|(acc, pt)| {
                for (x, &label) in inputs.iter().zip(labels) {
                    let j = quantile_index(x.basis, pt.ell, pt.alpha);
                    acc.push_row_major_f32(x.stack.slice(j), p, label);
                }
            });
        Ok(())
    }

    pub fn masks(&self) -> Result<Vec<PixelMask>, SelectionError> {
        self.accs
            .iter()
            .map(|a| a.mask(self.p).map_err(SelectionError::from))
            .collect()
    }

    pub fn points(&self) -> &[GridPoint] {
        &self.points
    }
}

/// Second pass: kept pixels of every patient at every point.
pub struct GridFeatures {
    p: usize,
    points: Vec<GridPoint>,
    /// Row-major offsets of the kept coordinates, in column-major order.
    keep: Vec<Vec<usize>>,
    rows: Vec<Vec<f32>>,
    n: usize,
}

impl GridFeatures {
    pub fn new(points: Vec<GridPoint>, masks: &[PixelMask], gram_pixels: GramPixels) -> Self {
        assert_eq!(points.len(), masks.len());
        let p = masks.first().map_or(0, |m| m.p);
        let keep = masks
            .iter()
            .map(|m| {
                m.coordinates(gram_pixels.set())
                    .into_iter()
                    .map(|i| column_major_to_row_major(i, p))
                    .collect()
            })
            .collect();
        let rows = points.iter().map(|_| Vec::new()).collect();
        Self { p, points, keep, rows, n: 0 }
    }

    pub fn push_block(&mut self, inputs: &[GridInput<'_>]) -> Result<(), SelectionError> {
        check_side(self.p, inputs)?;
        self.rows
            .par_iter_mut()
            .zip(&self.points)
            .zip(&self.keep)
            .for_each(|((rows, pt), keep)| {
                for x in inputs {
                    let slice = x.stack.slice(quantile_index(x.basis, pt.ell, pt.alpha));
                    rows.extend(keep.iter().map(|&o| slice[o]));
                }
            });
        self.n += inputs.len();
        Ok(())
    }

    /// Misclustering error of every grid point against `labels`.
    pub fn score(&self, labels: &[Label], seed: u64, restarts: usize) -> Result<Vec<f64>, SelectionError> {
        if labels.len() != self.n {
            return Err(SelectionError::LabelCount {
                patients: self.n,
                labels: labels.len(),
            });
        }
        Ok((0..self.points.len())
            .into_par_iter()
            .map(|g| {
                let pt = self.points[g];
                let q = self.keep[g].len();
                if q == 0 {
                    debug!("ell={} alpha={}: no kept pixels", pt.ell, pt.alpha);
                    return UNINFORMATIVE_ERROR;
                }
                let rows: Vec<&[f32]> = self.rows[g].chunks_exact(q).collect();
                match embed(&rows) {
                    Some(points) => {
                        let clusters = kmeans2(&points, derive_seed(seed, stream::KMEANS, g as u64), restarts);
                        misclustering_error(&clusters, labels).expect("lengths checked")
                    }
                    None => {
                        warn!("ell={} alpha={}: patient Gram eigensolve failed", pt.ell, pt.alpha);
                        UNINFORMATIVE_ERROR
                    }
                }
            })
            .collect())
    }
}

/// Patients as rows of the top two eigenvectors of their Gram matrix.
fn embed(rows: &[&[f32]]) -> Option<Vec<[f64; 2]>> {
    if rows.len() < 2 {
        return None;
    }
    let gram = gram_of_rows(rows);
    let pairs = top_eigenpairs(&gram, 2).ok()?;
    let (v1, v2) = (&pairs.vectors[0], &pairs.vectors[1]);
    Some(v1.iter().zip(v2).map(|(&a, &b)| [a, b]).collect())
}
