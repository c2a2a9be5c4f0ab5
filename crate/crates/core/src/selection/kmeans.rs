//! Two-cluster K-means on planar points.

use rand::Rng;

use crate::rng::{rng_for, stream};

/// Lloyd iterations stop once no centroid moves farther than this.
pub const MOVEMENT_TOL: f64 = 1e-9;
pub const MAX_ITERATIONS: usize = 300;
pub const DEFAULT_RESTARTS: usize = 10;

#[inline]
fn dist2(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

fn plus_plus_init(points: &[[f64; 2]], rng: &mut impl Rng) -> [[f64; 2]; 2] {
    let first = points[rng.random_range(0..points.len())];
    let weights: Vec<f64> = points.iter().map(|&x| dist2(x, first)).collect();
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return [first, first];
    }
    let mut target = rng.random_range(0.0..total);
    for (x, w) in points.iter().zip(&weights) {
        if target < *w {
            return [first, *x];
        }
        target -= w;
    }
    // Rounding left `target` past the last positive weight.
    let last = weights.iter().rposition(|&w| w > 0.0).expect("total > 0");
    [first, points[last]]
}

fn assign(points: &[[f64; 2]], centers: &[[f64; 2]; 2], labels: &mut [usize]) {
    for (l, &x) in labels.iter_mut().zip(points) {
        *l = usize::from(dist2(x, centers[1]) < dist2(x, centers[0]));
    }
}

fn lloyd(points: &[[f64; 2]], mut centers: [[f64; 2]; 2]) -> (Vec<usize>, f64) {
    let mut labels = vec![0usize; points.len()];
    for _ in 0..MAX_ITERATIONS {
        assign(points, &centers, &mut labels);
        let mut sums = [[0.0f64; 2]; 2];
        let mut counts = [0usize; 2];
        for (&l, x) in labels.iter().zip(points) {
            sums[l][0] += x[0];
            sums[l][1] += x[1];
            counts[l] += 1;
        }
        if let Some(empty) = counts.iter().position(|&c| c == 0) {
            // Re-seed from the point farthest from the surviving centroid.
            let other = 1 - empty;
            let c = [sums[other][0] / counts[other] as f64, sums[other][1] / counts[other] as f64];
            let (far, d) = points
                .iter()
                .enumerate()
                .map(|(i, &x)| (i, dist2(x, c)))
                .fold((0, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
            if d > 0.0 {
                labels[far] = empty;
                sums[other][0] -= points[far][0];
                sums[other][1] -= points[far][1];
                counts[other] -= 1;
                sums[empty] = points[far];
                counts[empty] = 1;
            }
        }
        let mut next = centers;
        for k in 0..2 {
            if counts[k] > 0 {
                next[k] = [sums[k][0] / counts[k] as f64, sums[k][1] / counts[k] as f64];
            }
        }
        let moved = dist2(next[0], centers[0]).max(dist2(next[1], centers[1])).sqrt();
        centers = next;
        if moved < MOVEMENT_TOL {
            break;
        }
    }
    assign(points, &centers, &mut labels);
    let wcss = labels
        .iter()
        .zip(points)
        .map(|(&l, &x)| dist2(x, centers[l]))
        .sum();
    (labels, wcss)
}

/// Best of `restarts` k-means++ seeded Lloyd runs by within-cluster sum of
/// squares. Labels are 0 or 1. Coincident points may all share one label.
///
/// # Panics
///
/// If `points` is empty or `restarts` is zero.
pub fn kmeans2(points: &[[f64; 2]], seed: u64, restarts: usize) -> Vec<usize> {
    assert!(!points.is_empty(), "kmeans2 needs at least one point");
    assert!(restarts > 0, "kmeans2 needs at least one restart");
    let mut best: Option<(Vec<usize>, f64)> = None;
    for r in 0..restarts {
        let mut rng = rng_for(seed, stream::KMEANS, r as u64);
        let run = lloyd(points, plus_plus_init(points, &mut rng));
        if best.as_ref().is_none_or(|b| run.1 < b.1) {
            best = Some(run);
        }
    }
    best.expect("restarts > 0").0
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn separated_blobs() {
        let mut pts = vec![[0.0, 0.0]; 10];
        pts.extend(vec![[10.0, 10.0]; 10]);
        let labels = kmeans2(&pts, 1, DEFAULT_RESTARTS);
        assert!(labels[..10].iter().all(|&l| l == labels[0]));
        assert!(labels[10..].iter().all(|&l| l == labels[10]));
        assert_ne!(labels[0], labels[10]);
    }

    #[test]
    fn identical_points_share_a_label() {
        let pts = vec![[0.3, -0.2]; 7];
        let labels = kmeans2(&pts, 4, 3);
        assert!(labels.iter().all(|&l| l == labels[0]));
    }

    #[test]
    fn planted_mixture_is_recovered() {
        let noise = Normal::new(0.0, 1.0).unwrap();
        let mut recovered = 0;
        for seed in 0..50u64 {
            let mut rng = rng_for(seed, 99, 0);
            let truth: Vec<usize> = (0..60).map(|i| usize::from(i % 3 == 0)).collect();
            // centres 6 sigma apart in each coordinate
            let pts: Vec<[f64; 2]> = truth
                .iter()
                .map(|&t| {
                    let c = 6.0 * t as f64;
                    [c + noise.sample(&mut rng), c + noise.sample(&mut rng)]
                })
                .collect();
            let labels = kmeans2(&pts, seed, DEFAULT_RESTARTS);
            let agree = labels.iter().zip(&truth).filter(|(a, b)| a == b).count();
            if agree == 60 || agree == 0 {
                recovered += 1;
            }
        }
        assert!(recovered >= 49, "recovered {recovered}/50");
    }

    #[test]
    fn reflection_gives_identical_labels() {
        let mut rng = rng_for(5, 99, 1);
        let pts: Vec<[f64; 2]> = (0..40)
            .map(|i| [rng.random_range(-1.0..1.0) + (i % 2) as f64, rng.random_range(-1.0..1.0)])
            .collect();
        let flipped: Vec<[f64; 2]> = pts.iter().map(|&[a, b]| [-a, b]).collect();
        assert_eq!(kmeans2(&pts, 8, 4), kmeans2(&flipped, 8, 4));
    }
}
