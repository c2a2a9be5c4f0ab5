//! Pixel screening.
//!
//! Coordinates of the vectorized quantile images are split into three sets:
//!
//! * `A1`: population variance (divide by `n`) below `t₁ = 1 / (2 ln n)`,
//!   so effectively constant across patients;
//! * `A2`: not in `A1`, and `d_i = (mean₁ − mean₂)² / s < t₂ = 1 / ln n`
//!   where `s` is the pooled within-group sample variance. These vary, but
//!   without a group difference;
//! * `A3`: everything else; the only coordinates used downstream.
//!
//! `d_i` has no `(1/n₁ + 1/n₂)` factor, unlike a textbook two-sample `t²`.
//! Zero pooled variance gives `d = 0` when the group means agree and
//! `d = +∞` when they differ. Coordinates are column-major.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{column_major_to_row_major, Image, Label};

#[derive(Debug, Error)]
pub enum ScreeningError {
    #[error("screening needs at least 2 patients per label (got {normal} normal, {abnormal} abnormal)")]
    GroupTooSmall { normal: usize, abnormal: usize },
    #[error("screening needs at least 2 rows, got {0}")]
    TooFewRows(usize),
    #[error("row length {found} does not match {expected} coordinates")]
    LengthMismatch { expected: usize, found: usize },
    #[error("image side {found} does not match mask side {expected}")]
    SideMismatch { expected: usize, found: usize },
    #[error("{labels} labels for {rows} rows")]
    LabelCount { rows: usize, labels: usize },
    #[error("malformed mask: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum PixelSet {
    A1,
    A2,
    A3,
}

impl From<PixelSet> for u8 {
    fn from(s: PixelSet) -> u8 {
        match s {
            PixelSet::A1 => 1,
            PixelSet::A2 => 2,
            PixelSet::A3 => 3,
        }
    }
}

impl TryFrom<u8> for PixelSet {
    type Error = String;

    fn try_from(v: u8) -> Result<Self, Self::Error> {
        match v {
            1 => Ok(PixelSet::A1),
            2 => Ok(PixelSet::A2),
            3 => Ok(PixelSet::A3),
            other => Err(format!("pixel set must be 1, 2 or 3, got {other}")),
        }
    }
}

/// `t₁ = 1 / (2 ln n)`.
pub fn variance_threshold(n: usize) -> f64 {
    1.0 / (2.0 * (n as f64).ln())
}

/// `t₂ = 1 / ln n`.
pub fn difference_threshold(n: usize) -> f64 {
    1.0 / (n as f64).ln()
}

/// Partition of the `p²` column-major pixel coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PixelMask {
    pub p: usize,
    pub n: usize,
    pub t1: f64,
    pub t2: f64,
    pub assignment: Vec<PixelSet>,
}

impl PixelMask {
    /// A mask keeping every coordinate in `A3`.
    pub fn keep_all(p: usize) -> Self {
        Self {
            p,
            n: 0,
            t1: 0.0,
            t2: 0.0,
            assignment: vec![PixelSet::A3; p * p],
        }
    }

    pub fn count(&self, set: PixelSet) -> usize {
        self.assignment.iter().filter(|&&s| s == set).count()
    }

    /// Coordinates assigned to `set`, ascending.
    pub fn coordinates(&self, set: PixelSet) -> Vec<usize> {
        (0..self.assignment.len())
            .filter(|&i| self.assignment[i] == set)
            .collect()
    }

    /// Percentages of coordinates in `A1`, `A2`, `A3`.
    pub fn percentages(&self) -> [f64; 3] {
        let total = self.assignment.len() as f64;
        [PixelSet::A1, PixelSet::A2, PixelSet::A3].map(|s| 100.0 * self.count(s) as f64 / total)
    }

    pub fn validate(&self) -> Result<(), ScreeningError> {
        if self.assignment.len() != self.p * self.p {
            return Err(ScreeningError::Malformed(format!(
                "{} assignments for side {}",
                self.assignment.len(),
                self.p
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    mean: f64,
    m2: f64,
}

impl Moments {
    #[inline]
    fn push(&mut self, x: f64, count: f64) {
        let delta = x - self.mean;
        self.mean += delta / count;
        self.m2 += delta * (x - self.mean);
    }
}

/// Per-coordinate statistics behind a mask.
#[derive(Debug, Clone, PartialEq)]
pub struct ScreeningStats {
    pub n_normal: usize,
    pub n_abnormal: usize,
    /// Divide-by-`n` variance over all rows.
    pub variance: Vec<f64>,
    pub mean_normal: Vec<f64>,
    pub mean_abnormal: Vec<f64>,
    pub pooled_variance: Vec<f64>,
    pub d: Vec<f64>,
}

/// Streaming per-coordinate moments, one row (patient) at a time.
///
/// Rows must be pushed in a fixed order for bit-reproducible results.
#[derive(Debug, Clone)]
pub struct ScreeningAccumulator {
    len: usize,
    counts: [usize; 2],
    all: Vec<Moments>,
    groups: [Vec<Moments>; 2],
}

fn group(label: Label) -> usize {
    usize::from(label.is_positive())
}

impl ScreeningAccumulator {
    pub fn new(len: usize) -> Self {
        Self {
            len,
            counts: [0, 0],
            all: vec![Moments::default(); len],
            groups: [vec![Moments::default(); len], vec![Moments::default(); len]],
        }
    }

    pub fn rows(&self) -> usize {
        self.counts[0] + self.counts[1]
    }

    /// Push a row via a coordinate accessor.
    pub fn push_with(&mut self, label: Label, value: impl Fn(usize) -> f64) {
        let g = group(label);
        self.counts[g] += 1;
        let n_all = self.rows() as f64;
        let n_g = self.counts[g] as f64;
        for i in 0..self.len {
            let x = value(i);
            self.all[i].push(x, n_all);
            self.groups[g][i].push(x, n_g);
        }
    }

    pub fn push(&mut self, row: &[f64], label: Label) -> Result<(), ScreeningError> {
        if row.len() != self.len {
            return Err(ScreeningError::LengthMismatch {
                expected: self.len,
                found: row.len(),
            });
        }
        self.push_with(label, |i| row[i]);
        Ok(())
    }

    /// Push a square row-major `f32` image in column-major coordinate order.
    pub(crate) fn push_row_major_f32(&mut self, pixels: &[f32], p: usize, label: Label) {
        debug_assert_eq!(pixels.len(), self.len);
        self.push_with(label, |i| f64::from(pixels[column_major_to_row_major(i, p)]));
    }

    /// Variances `(1/n) Σ (z − z̄)²`; needs at least 2 rows.
    pub fn variances(&self) -> Result<Vec<f64>, ScreeningError> {
        let n = self.rows();
        if n < 2 {
            return Err(ScreeningError::TooFewRows(n));
        }
        Ok(self.all.iter().map(|m| m.m2 / n as f64).collect())
    }

    pub fn stats(&self) -> Result<ScreeningStats, ScreeningError> {
        let [n1, n2] = self.counts;
        if n1 < 2 || n2 < 2 {
            return Err(ScreeningError::GroupTooSmall {
                normal: n1,
                abnormal: n2,
            });
        }
        let variance = self.variances()?;
        let n = (n1 + n2) as f64;
        let mut pooled = Vec::with_capacity(self.len);
        let mut d = Vec::with_capacity(self.len);
        for (a, b) in self.groups[0].iter().zip(&self.groups[1]) {
            // (n1-1)s1 + (n2-1)s2 = M2_1 + M2_2
            let s = (a.m2 + b.m2) / (n - 2.0);
            let diff2 = (a.mean - b.mean).powi(2);
            pooled.push(s);
            d.push(if s > 0.0 {
                diff2 / s
            } else if diff2 == 0.0 {
                0.0
            } else {
                f64::INFINITY
            });
        }
        Ok(ScreeningStats {
            n_normal: n1,
            n_abnormal: n2,
            variance,
            mean_normal: self.groups[0].iter().map(|m| m.mean).collect(),
            mean_abnormal: self.groups[1].iter().map(|m| m.mean).collect(),
            pooled_variance: pooled,
            d,
        })
    }

    /// Fit the three-way partition for images of side `p`.
    pub fn mask(&self, p: usize) -> Result<PixelMask, ScreeningError> {
        if p * p != self.len {
            return Err(ScreeningError::LengthMismatch {
                expected: self.len,
                found: p * p,
            });
        }
        let stats = self.stats()?;
        let n = self.rows();
        let (t1, t2) = (variance_threshold(n), difference_threshold(n));
        let assignment = stats
            .variance
            .iter()
            .zip(&stats.d)
            .map(|(&var, &d)| {
                if var < t1 {
                    PixelSet::A1
                } else if d < t2 {
                    PixelSet::A2
                } else {
                    PixelSet::A3
                }
            })
            .collect();
        Ok(PixelMask {
            p,
            n,
            t1,
            t2,
            assignment,
        })
    }
}

fn accumulate<R: AsRef<[f64]>>(
    z: &[R],
    labels: Option<&[Label]>,
) -> Result<ScreeningAccumulator, ScreeningError> {
    let len = z.first().map_or(0, |r| r.as_ref().len());
    if let Some(l) = labels {
        if l.len() != z.len() {
            return Err(ScreeningError::LabelCount {
                rows: z.len(),
                labels: l.len(),
            });
        }
    }
    let mut acc = ScreeningAccumulator::new(len);
    for (k, row) in z.iter().enumerate() {
        let label = labels.map_or(Label::Normal, |l| l[k]);
        acc.push(row.as_ref(), label)?;
    }
    Ok(acc)
}

/// Coordinates whose divide-by-`n` variance is below `1 / (2 ln n)`.
pub fn estimate_a1<R: AsRef<[f64]>>(z: &[R]) -> Result<Vec<usize>, ScreeningError> {
    let acc = accumulate(z, None)?;
    let t1 = variance_threshold(acc.rows());
    Ok(acc
        .variances()?
        .iter()
        .enumerate()
        .filter(|(_, &v)| v < t1)
        .map(|(i, _)| i)
        .collect())
}

/// Per-coordinate `d_i = (mean_normal − mean_abnormal)² / s`.
pub fn mean_diff_stat<R: AsRef<[f64]>>(z: &[R], labels: &[Label]) -> Result<Vec<f64>, ScreeningError> {
    Ok(accumulate(z, Some(labels))?.stats()?.d)
}

/// Fit a mask from rows of vectorized (column-major) `p`×`p` images.
pub fn estimate_mask<R: AsRef<[f64]>>(
    z: &[R],
    labels: &[Label],
    p: usize,
) -> Result<PixelMask, ScreeningError> {
    accumulate(z, Some(labels))?.mask(p)
}

/// Intensities of the coordinates in `keep`, in ascending coordinate order.
pub fn apply_mask(image: &Image, mask: &PixelMask, keep: PixelSet) -> Result<Vec<f64>, ScreeningError> {
    if image.side() != mask.p {
        return Err(ScreeningError::SideMismatch {
            expected: mask.p,
            found: image.side(),
        });
    }
    let p = mask.p;
    Ok(mask
        .assignment
        .iter()
        .enumerate()
        .filter(|(_, &s)| s == keep)
        .map(|(i, _)| image.as_slice()[column_major_to_row_major(i, p)])
        .collect())
}
