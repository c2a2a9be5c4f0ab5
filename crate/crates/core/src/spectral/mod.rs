//! Per-scan spectral decomposition and quantile-slice selection.
//!
//! A scan's slices are compared through the top two eigenvectors of their
//! Gram matrix. Each eigenvector's sign is fixed by the area under its
//! min-max rescaled profile, and sorting an eigenvector orders the slices;
//! the slice at a given quantile of that order is the scan's quantile image.

mod eigen;
mod matrix;

use log::warn;
use thiserror::Error;

use crate::dataset::{Image, ImageStack};

pub use eigen::{jacobi_eigen, top_eigenpairs, EigenPairs, ITERATION_FACTOR, RESIDUAL_TOL};
pub(crate) use matrix::gram_of_rows;
pub use matrix::{gram_matrix, Matrix};

/// Number of spike eigenvectors kept per scan.
pub const SPIKE_COUNT: usize = 2;
/// `λ₂ ≤ RANK_DEFICIENCY_RATIO · λ₁` marks the second eigenvector as noise.
pub const RANK_DEFICIENCY_RATIO: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum SpectralError {
    #[error("eigensolver did not converge in {iterations} iterations (residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("requested {wanted} eigenpairs of a {size}x{size} matrix")]
    TooManyPairs { wanted: usize, size: usize },
    #[error("eigenvector is constant; its sign cannot be normalized")]
    DegenerateVector,
    #[error("stack has {0} slices, at least 2 are required")]
    TooFewSlices(usize),
    #[error("cannot average an empty list of images")]
    EmptyImageList,
    #[error("images have mismatched sides ({0} vs {1})")]
    SideMismatch(usize, usize),
}

/// Trapezoidal area under the polyline through `(x_j, y_j)` where both the
/// index axis and the values are min-max rescaled to `[0, 1]`.
pub fn rescaled_auc(v: &[f64]) -> Result<f64, SpectralError> {
    let m = v.len();
    if m < 2 {
        return Err(SpectralError::DegenerateVector);
    }
    let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return Err(SpectralError::DegenerateVector);
    }
    let range = hi - lo;
    let dx = 1.0 / (m - 1) as f64;
    let area: f64 = v
        .windows(2)
        .map(|w| ((w[0] - lo) / range + (w[1] - lo) / range) * 0.5 * dx)
        .sum();
    Ok(area)
}

/// Resolve the `±v` ambiguity of an eigenvector: keep the orientation whose
/// rescaled area exceeds one half, flip otherwise (an area of exactly 0.5
/// flips). Returns the oriented vector and the sign applied to the input.
///
/// The area is always evaluated on a fixed representative of `{v, −v}` (the
/// one whose first non-zero entry is positive), so `v` and `−v` produce
/// bit-identical outputs.
pub fn normalize_sign(v: &[f64]) -> Result<(Vec<f64>, i8), SpectralError> {
    let first = v.iter().find(|x| **x != 0.0).copied().unwrap_or(0.0);
    let flip_to_canonical = first < 0.0;
    let canonical: Vec<f64> = if flip_to_canonical {
        v.iter().map(|x| -x).collect()
    } else {
        v.to_vec()
    };
    let keep = rescaled_auc(&canonical)? > 0.5;
    let sign: i8 = if keep != flip_to_canonical { 1 } else { -1 };
    let out = if keep {
        canonical
    } else {
        canonical.iter().map(|x| -x).collect()
    };
    Ok((out, sign))
}

/// Leading eigenvalues and sign-normalized spike eigenvectors of one scan.
#[derive(Debug, Clone, PartialEq)]
pub struct SpikeBasis {
    /// Descending.
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: Vec<Vec<f64>>,
    /// Sign applied to the solver's raw eigenvector.
    pub signs: Vec<i8>,
    /// `sort_orders[l]` lists slice indices by ascending entry of
    /// eigenvector `l` (ties by slice index).
    pub sort_orders: Vec<Vec<usize>>,
}

impl SpikeBasis {
    /// Build from raw eigenpairs (descending).
    pub fn from_pairs(pairs: &EigenPairs) -> Self {
        let mut eigenvectors = Vec::with_capacity(pairs.vectors.len());
        let mut signs = Vec::with_capacity(pairs.vectors.len());
        for raw in &pairs.vectors {
            let (v, s) = match normalize_sign(raw) {
                Ok(ok) => ok,
                // A constant eigenvector orders nothing; keep it as is.
                Err(_) => (raw.clone(), 1),
            };
            eigenvectors.push(v);
            signs.push(s);
        }
        let sort_orders = eigenvectors.iter().map(|v| ascending_order(v)).collect();
        Self {
            eigenvalues: pairs.values.clone(),
            eigenvectors,
            signs,
            sort_orders,
        }
    }

    pub fn m(&self) -> usize {
        self.eigenvectors.first().map_or(0, Vec::len)
    }

    /// True when the second eigenvalue is numerically zero relative to the
    /// first, so the second eigenvector carries no structure.
    pub fn second_is_degenerate(&self) -> bool {
        let l1 = self.eigenvalues[0];
        l1 <= 0.0 || self.eigenvalues.get(1).is_none_or(|&l2| l2 <= RANK_DEFICIENCY_RATIO * l1)
    }

    /// The eigenvector index actually used for a requested `ell`.
    pub fn effective_ell(&self, ell: usize) -> usize {
        if ell == 2 && self.second_is_degenerate() {
            1
        } else {
            ell
        }
    }

    /// Eigenvector `ell` (1-based) sorted ascending.
    pub fn sorted(&self, ell: usize) -> Vec<f64> {
        let v = &self.eigenvectors[ell - 1];
        self.sort_orders[ell - 1].iter().map(|&i| v[i]).collect()
    }
}

fn ascending_order(v: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]).then(a.cmp(&b)));
    order
}

/// Gram matrix, top two eigenpairs, sign normalization and sort orders.
pub fn spike_basis(stack: &ImageStack) -> Result<SpikeBasis, SpectralError> {
    if stack.m() < 2 {
        return Err(SpectralError::TooFewSlices(stack.m()));
    }
    let pairs = top_eigenpairs(&gram_matrix(stack), SPIKE_COUNT)?;
    let basis = SpikeBasis::from_pairs(&pairs);
    if basis.second_is_degenerate() {
        warn!(
            "{}: second eigenvalue {:e} is negligible against {:e}; selections on the second eigenvector use the first",
            stack.patient_id(),
            basis.eigenvalues[1],
            basis.eigenvalues[0]
        );
    }
    Ok(basis)
}

/// Zero-based position in the ascending order of the `alpha`-quantile
/// (nearest rank: `round(alpha · (m − 1))`).
pub fn quantile_position(m: usize, alpha: f64) -> usize {
    (alpha * (m - 1) as f64).round() as usize
}

/// Slice index whose eigenvector entry is closest to the `alpha`-quantile of
/// the sorted eigenvector; ties go to the smallest slice index.
///
/// # Panics
///
/// If `ell` is not 1 or 2, or `alpha` lies outside `[0, 1]`.
pub fn quantile_index(basis: &SpikeBasis, ell: usize, alpha: f64) -> usize {
    assert!(ell == 1 || ell == 2, "ell must be 1 or 2, got {ell}");
    assert!((0.0..=1.0).contains(&alpha), "alpha must lie in [0, 1], got {alpha}");
    let l = basis.effective_ell(ell) - 1;
    let v = &basis.eigenvectors[l];
    let target = v[basis.sort_orders[l][quantile_position(v.len(), alpha)]];
    let mut best = 0;
    let mut best_dist = f64::INFINITY;
    for (i, &x) in v.iter().enumerate() {
        let d = (x - target).abs();
        if d < best_dist {
            best = i;
            best_dist = d;
        }
    }
    best
}

/// The quantile images of one scan, one per level, duplicates kept.
pub fn select_quantile_images(
    stack: &ImageStack,
    basis: &SpikeBasis,
    ell: usize,
    alphas: &[f64],
) -> Vec<Image> {
    alphas
        .iter()
        .map(|&a| stack.slice_image(quantile_index(basis, ell, a)))
        .collect()
}

/// Element-wise arithmetic mean.
pub fn mean_image(images: &[Image]) -> Result<Image, SpectralError> {
    let first = images.first().ok_or(SpectralError::EmptyImageList)?;
    let p = first.side();
    // Offsets from the first image keep the mean of identical images exact.
    let base = first.as_slice();
    let mut acc = vec![0.0f64; p * p];
    for img in &images[1..] {
        if img.side() != p {
            return Err(SpectralError::SideMismatch(p, img.side()));
        }
        for ((a, v), b) in acc.iter_mut().zip(img.as_slice()).zip(base) {
            *a += v - b;
        }
    }
    let k = images.len() as f64;
    Ok(Image::new(p, acc.iter().zip(base).map(|(a, b)| b + a / k).collect()))
}
