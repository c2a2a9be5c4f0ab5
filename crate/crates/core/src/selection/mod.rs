//! Choice of the eigenvector index and quantile levels.
//!
//! Every `(ell, alpha)` grid point turns each training scan into one quantile
//! image, screens the pixels, and clusters the patients in two by K-means on
//! the top two eigenvectors of their Gram matrix. The point whose clusters
//! agree best with the known labels anchors the final quantile levels.

mod grid;
mod kmeans;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use grid::{grid_points, GramPixels, GridFeatures, GridInput, GridPoint, GridScreening, UNINFORMATIVE_ERROR};
pub use kmeans::{kmeans2, DEFAULT_RESTARTS, MAX_ITERATIONS, MOVEMENT_TOL};

use crate::dataset::{Cohort, Label};
use crate::screening::ScreeningError;
use crate::spectral::{gram_of_rows, Matrix, SpikeBasis};

pub const DEFAULT_GRID_STEP: f64 = 0.02;

#[derive(Debug, Error)]
pub enum SelectionError {
    #[error("kept pixel set is empty")]
    EmptyFeatures,
    #[error("length mismatch: {0} predictions vs {1} labels")]
    LengthMismatch(usize, usize),
    #[error("more than two distinct labels")]
    NotBinary,
    #[error("grid step {0} must divide 1 into equal parts")]
    BadGridStep(f64),
    #[error("grid must be non-empty with values in [0, 1]")]
    BadGrid,
    #[error("quantile count must be 5 or 9, got {0}")]
    BadQuantileCount(usize),
    #[error("{patients} patients but {labels} labels")]
    LabelCount { patients: usize, labels: usize },
    #[error("{bases} spike bases for {patients} patients")]
    BasisCount { patients: usize, bases: usize },
    #[error("patient {patient}: side {found} differs from {expected}")]
    SideMismatch {
        patient: String,
        expected: usize,
        found: usize,
    },
    #[error(transparent)]
    Screening(#[from] ScreeningError),
}

/// Uncentered inner products between patients' kept-pixel vectors.
pub fn patient_gram<R: AsRef<[f64]>>(features: &[R]) -> Result<Matrix, SelectionError> {
    let rows: Vec<&[f64]> = features.iter().map(AsRef::as_ref).collect();
    if rows.first().is_none_or(|r| r.is_empty()) {
        return Err(SelectionError::EmptyFeatures);
    }
    Ok(gram_of_rows(&rows))
}

/// Smaller of the two mismatch rates over the two ways of matching binary
/// label sets.
pub fn misclustering_error<A: PartialEq, B: PartialEq>(pred: &[A], truth: &[B]) -> Result<f64, SelectionError> {
    if pred.len() != truth.len() {
        return Err(SelectionError::LengthMismatch(pred.len(), truth.len()));
    }
    if pred.is_empty() {
        return Ok(0.0);
    }
    if !is_binary(pred) || !is_binary(truth) {
        return Err(SelectionError::NotBinary);
    }
    let mismatched = pred
        .iter()
        .zip(truth)
        .filter(|(p, t)| (**p == pred[0]) != (**t == truth[0]))
        .count();
    let e = mismatched as f64 / pred.len() as f64;
    Ok(e.min(1.0 - e))
}

fn is_binary<T: PartialEq>(xs: &[T]) -> bool {
    let other = xs.iter().find(|x| *x != &xs[0]);
    other.is_none_or(|o| xs.iter().all(|x| x == &xs[0] || x == o))
}

/// `{0, step, 2 step, …, 1}` computed as `i / k` with `k = 1 / step`.
pub fn alpha_grid(step: f64) -> Result<Vec<f64>, SelectionError> {
    if !(step > 0.0 && step <= 1.0) {
        return Err(SelectionError::BadGridStep(step));
    }
    let k = (1.0 / step).round();
    if (k * step - 1.0).abs() > 1e-9 {
        return Err(SelectionError::BadGridStep(step));
    }
    let k = k as usize;
    Ok((0..=k).map(|i| i as f64 / k as f64).collect())
}

/// `count` levels starting at `alpha_star`, 0.005 apart for 5 levels and
/// 0.0025 apart for 9, clipped to `[0, 1]`.
pub fn quantile_levels(alpha_star: f64, count: usize) -> Result<Vec<f64>, SelectionError> {
    let denom = match count {
        5 => 200.0,
        9 => 400.0,
        other => return Err(SelectionError::BadQuantileCount(other)),
    };
    Ok((0..count)
        .map(|j| (alpha_star + j as f64 / denom).clamp(0.0, 1.0))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridScore {
    pub ell: usize,
    pub alpha: f64,
    pub misclustering_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaSelection {
    pub ell: usize,
    pub alpha_star: f64,
    pub alphas: Vec<f64>,
    pub min_error: f64,
    pub grid: Vec<f64>,
    /// One entry per `(ell, alpha)`, ell-major.
    pub errors: Vec<GridScore>,
}

/// Pick `ell` by the smaller minimum error (ties to 1), then `alpha_star` as
/// the first grid level attaining that minimum.
pub fn select_from_scores(
    grid: &[f64],
    errors: &[f64],
    quantile_count: usize,
) -> Result<AlphaSelection, SelectionError> {
    let points = grid_points(grid);
    assert_eq!(points.len(), errors.len());
    let best = |ell: usize| {
        points
            .iter()
            .zip(errors)
            .filter(|(pt, _)| pt.ell == ell)
            .fold(None, |best: Option<(f64, f64)>, (pt, &e)| match best {
                Some((_, be)) if be <= e => best,
                _ => Some((pt.alpha, e)),
            })
            .expect("grid is non-empty")
    };
    let (a1, e1) = best(1);
    let (a2, e2) = best(2);
    let (ell, alpha_star, min_error) = if e2 < e1 { (2, a2, e2) } else { (1, a1, e1) };
    Ok(AlphaSelection {
        ell,
        alpha_star,
        alphas: quantile_levels(alpha_star, quantile_count)?,
        min_error,
        grid: grid.to_vec(),
        errors: points
            .iter()
            .zip(errors)
            .map(|(pt, &e)| GridScore {
                ell: pt.ell,
                alpha: pt.alpha,
                misclustering_error: e,
            })
            .collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig {
    pub grid: Vec<f64>,
    pub quantile_count: usize,
    pub restarts: usize,
    pub gram_pixels: GramPixels,
    pub seed: u64,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            grid: alpha_grid(DEFAULT_GRID_STEP).expect("valid default step"),
            quantile_count: 9,
            restarts: DEFAULT_RESTARTS,
            gram_pixels: GramPixels::A3,
            seed: 0,
        }
    }
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<(), SelectionError> {
        if self.grid.is_empty() || self.grid.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(SelectionError::BadGrid);
        }
        quantile_levels(0.0, self.quantile_count)?;
        Ok(())
    }
}

/// Grid search over an in-memory training cohort.
pub fn select_alphas(
    train: &Cohort,
    bases: &[SpikeBasis],
    config: &SelectionConfig,
) -> Result<AlphaSelection, SelectionError> {
    config.validate()?;
    if bases.len() != train.len() {
        return Err(SelectionError::BasisCount {
            patients: train.len(),
            bases: bases.len(),
        });
    }
    let labels: Vec<Label> = train.labels();
    let p = train.patients().first().map_or(0, |x| x.stack.p());
    let inputs: Vec<GridInput<'_>> = train
        .patients()
        .iter()
        .zip(bases)
        .map(|(x, basis)| GridInput { stack: &x.stack, basis })
        .collect();
    let points = grid_points(&config.grid);
    let mut screening = GridScreening::new(points.clone(), p);
    screening.push_block(&inputs, &labels)?;
    let masks = screening.masks()?;
    let mut features = GridFeatures::new(points, &masks, config.gram_pixels);
    features.push_block(&inputs)?;
    let errors = features.score(&labels, config.seed, config.restarts)?;
    select_from_scores(&config.grid, &errors, config.quantile_count)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{synth_cohort, SynthParams};
    use crate::spectral::spike_basis;

    #[test]
    fn patient_gram_cases() {
        let g = patient_gram(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert_eq!(g, Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]));
        let rows = [vec![0.5, 1.0, -2.0, 0.25], vec![3.0, 0.0, 1.0, 1.0], vec![0.5, 1.0, -2.0, 0.25]];
        let g = patient_gram(&rows).unwrap();
        assert_eq!(g.row(0), g.row(2));
        // 0.5*3 + 0 - 2 + 0.25 = -0.25
        assert_eq!(g.get(0, 1), -0.25);
        assert_eq!(g.get(0, 0), 0.25 + 1.0 + 4.0 + 0.0625);
        assert!(matches!(patient_gram(&[Vec::<f64>::new()]), Err(SelectionError::EmptyFeatures)));
    }

    #[test]
    fn misclustering_cases() {
        let truth = [1, 1, 2, 2];
        assert_eq!(misclustering_error(&truth, &truth).unwrap(), 0.0);
        assert_eq!(misclustering_error(&[2, 2, 1, 1], &truth).unwrap(), 0.0);
        assert_eq!(misclustering_error(&[1, 2, 1, 2], &truth).unwrap(), 0.5);
        assert_eq!(misclustering_error(&[0usize, 0, 0, 1, 0], &[0, 0, 0, 0, 0]).unwrap(), 0.2);
        assert!(misclustering_error(&[1, 2], &truth).is_err());
        assert!(misclustering_error(&[1, 2, 3, 1], &truth).is_err());
    }

    #[test]
    fn grid_and_levels() {
        let g = alpha_grid(0.02).unwrap();
        assert_eq!(g.len(), 51);
        assert_eq!((g[0], g[25], g[50]), (0.0, 0.5, 1.0));
        assert!(alpha_grid(0.03).is_err());
        assert_eq!(quantile_levels(0.0, 5).unwrap(), vec![0.0, 0.005, 0.01, 0.015, 0.02]);
        let nine = quantile_levels(0.5, 9).unwrap();
        assert_eq!(nine.len(), 9);
        assert!((nine[8] - 0.52).abs() < 1e-15);
        assert_eq!(quantile_levels(1.0, 5).unwrap(), vec![1.0; 5]);
        assert!(quantile_levels(0.0, 7).is_err());
    }

    #[test]
    fn argmin_ties_prefer_first_ell_and_smallest_alpha() {
        let grid = [0.0, 0.5, 1.0];
        let sel = select_from_scores(&grid, &[0.3, 0.1, 0.1, 0.2, 0.1, 0.4], 5).unwrap();
        assert_eq!((sel.ell, sel.alpha_star, sel.min_error), (1, 0.5, 0.1));
        let sel = select_from_scores(&grid, &[0.3, 0.2, 0.2, 0.4, 0.1, 0.1], 5).unwrap();
        assert_eq!((sel.ell, sel.alpha_star), (2, 0.5));
        assert_eq!(sel.errors.len(), 6);
        assert_eq!(sel.errors[3].ell, 2);
    }

    #[test]
    fn planted_cohort_selects_low_alpha() {
        let params = SynthParams {
            n_normal: 20,
            n_abnormal: 40,
            m_range: (10, 16),
            p: 8,
            ..SynthParams::default()
        };
        let cohort = synth_cohort(&params, 11).unwrap();
        let bases: Vec<SpikeBasis> = cohort.patients().iter().map(|x| spike_basis(&x.stack).unwrap()).collect();
        let config = SelectionConfig {
            grid: alpha_grid(0.1).unwrap(),
            quantile_count: 5,
            ..SelectionConfig::default()
        };
        let sel = select_alphas(&cohort, &bases, &config).unwrap();
        assert!(sel.alpha_star <= 0.1, "{sel:?}");
        assert!(sel.min_error <= 0.05);
        assert!(sel.errors.iter().all(|s| (0.0..=0.5).contains(&s.misclustering_error)));
        assert_eq!(sel, select_alphas(&cohort, &bases, &config).unwrap());
    }
}
