//! Receiver operating characteristic.

use serde::Serialize;

use super::ClassifierError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RocPoint {
    /// Scores `>= threshold` are called positive. The first point uses
    /// `+inf`, so nothing is called positive there.
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

/// Sweep thresholds over the distinct scores, highest first. Tied scores
/// move together, and the trapezoid between two points counts each tied
/// positive-negative pair as half concordant.
pub fn roc_curve(scores: &[f64], labels: &[bool]) -> Result<RocCurve, ClassifierError> {
    if scores.len() != labels.len() || scores.is_empty() || scores.iter().any(|s| s.is_nan()) {
        return Err(ClassifierError::BadRocInput);
    }
    let pos = labels.iter().filter(|&&l| l).count() as u64;
    let neg = labels.len() as u64 - pos;
    if pos == 0 || neg == 0 {
        return Err(ClassifierError::RocSingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    let (mut tp, mut fp) = (0u64, 0u64);
    // Twice the area in units of one positive-negative pair.
    let mut area2 = 0u128;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        let (tp0, fp0) = (tp, fp);
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        area2 += u128::from(fp - fp0) * u128::from(tp + tp0);
        points.push(RocPoint {
            threshold: s,
            fpr: fp as f64 / neg as f64,
            tpr: tp as f64 / pos as f64,
        });
    }
    let auc = area2 as f64 / (2.0 * pos as f64 * neg as f64);
    Ok(RocCurve { points, auc })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_for;
    use rand::Rng;

    fn pair_oracle(scores: &[f64], labels: &[bool]) -> f64 {
        let mut concordant = 0.0;
        let mut pairs = 0.0;
        for (i, &li) in labels.iter().enumerate() {
            for (j, &lj) in labels.iter().enumerate() {
                if li && !lj {
                    pairs += 1.0;
                    if scores[i] > scores[j] {
                        concordant += 1.0;
                    } else if scores[i] == scores[j] {
                        concordant += 0.5;
                    }
                }
            }
        }
        concordant / pairs
    }

    #[test]
    fn hand_examples() {
        let labels = [false, false, true, true];
        assert_eq!(roc_curve(&[0.1, 0.4, 0.35, 0.8], &labels).unwrap().auc, 0.75);
        assert_eq!(roc_curve(&[0.1, 0.2, 0.7, 0.8], &labels).unwrap().auc, 1.0);
        let flat = roc_curve(&[0.3; 4], &labels).unwrap();
        assert_eq!(flat.auc, 0.5);
        assert_eq!(flat.points.len(), 2);
        assert!(roc_curve(&[0.1, 0.2], &[true, true]).is_err());
        assert!(roc_curve(&[0.1], &[true, false]).is_err());
    }

    #[test]
    fn staircase_shape_and_pair_oracle() {
        for seed in 0..30u64 {
            let mut rng = rng_for(seed, 81, 0);
            let n = rng.random_range(2..=200);
            let mut labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.3)).collect();
            labels[0] = true;
            labels[1] = false;
            // coarse scores force ties
            let scores: Vec<f64> = (0..n).map(|_| f64::from(rng.random_range(0..20u8)) / 20.0).collect();
            let roc = roc_curve(&scores, &labels).unwrap();
            assert!((roc.auc - pair_oracle(&scores, &labels)).abs() <= 1e-12);
            let first = roc.points[0];
            let last = *roc.points.last().unwrap();
            assert_eq!((first.fpr, first.tpr), (0.0, 0.0));
            assert_eq!((last.fpr, last.tpr), (1.0, 1.0));
            assert!(roc.points.windows(2).all(|w| w[1].fpr >= w[0].fpr && w[1].tpr >= w[0].tpr));
            let flipped: Vec<bool> = labels.iter().map(|l| !l).collect();
            assert!((roc_curve(&scores, &flipped).unwrap().auc - (1.0 - roc.auc)).abs() <= 1e-12);
        }
    }
}
