//! Leading eigenpairs of symmetric matrices.
//!
//! Small problems are solved outright with cyclic Jacobi rotations. Larger
//! ones use block subspace iteration with Rayleigh-Ritz extraction: a block
//! a few columns wider than the number of wanted pairs is repeatedly
//! multiplied by the matrix and re-orthonormalized, and the Ritz pairs of the
//! projected matrix are accepted once their residuals `‖S v − λ v‖` fall
//! below `RESIDUAL_TOL · ‖S‖_F`.

use rand::Rng;

use super::matrix::{dot, Matrix};
use super::SpectralError;
use crate::rng::rng_for;

pub const RESIDUAL_TOL: f64 = 1e-10;
/// Iteration cap is `ITERATION_FACTOR * n`.
pub const ITERATION_FACTOR: usize = 10;
/// Extra block columns beyond the wanted pairs.
const GUARD_COLUMNS: usize = 6;
const INIT_STREAM: u64 = 0x5eed_e16e;

#[derive(Debug, Clone, PartialEq)]
pub struct EigenPairs {
    /// Descending.
    pub values: Vec<f64>,
    /// Unit-norm, one per value.
    pub vectors: Vec<Vec<f64>>,
}

/// Full eigendecomposition by cyclic Jacobi. Returns `(values, vectors)`
/// sorted by descending value; `vectors[k]` pairs with `values[k]`.
pub fn jacobi_eigen(a: &Matrix) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.n();
    let mut a = a.clone();
    let mut v = Matrix::identity(n);
    let scale = a.frobenius_norm();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|p| (p + 1..n).map(move |q| (p, q)))
            .map(|(p, q)| a.get(p, q).powi(2))
            .sum();
        if off <= (f64::EPSILON * scale).powi(2) * 1e-4 || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a.get(p, q);
                if apq == 0.0 {
                    continue;
                }
                let theta = (a.get(q, q) - a.get(p, p)) / (2.0 * apq);
                let t = if theta.abs() > 1e150 {
                    0.5 / theta
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a.get(k, p), a.get(k, q));
                    a.set(k, p, c * akp - s * akq);
                    a.set(k, q, s * akp + c * akq);
                }
                for k in 0..n {
                    let (apk, aqk) = (a.get(p, k), a.get(q, k));
                    a.set(p, k, c * apk - s * aqk);
                    a.set(q, k, s * apk + c * aqk);
                }
                for k in 0..n {
                    let (vkp, vkq) = (v.get(k, p), v.get(k, q));
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a.get(j, j).total_cmp(&a.get(i, i)).then(i.cmp(&j)));
    let values = order.iter().map(|&k| a.get(k, k)).collect();
    let vectors = order
        .iter()
        .map(|&k| (0..n).map(|r| v.get(r, k)).collect())
        .collect();
    (values, vectors)
}

fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

fn residual(s: &Matrix, value: f64, vector: &[f64]) -> f64 {
    let sv = s.mul_vec(vector);
    sv.iter()
        .zip(vector)
        .map(|(a, b)| (a - value * b).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Orthonormalize columns in place (two passes of modified Gram-Schmidt).
/// Columns that collapse are replaced by coordinate vectors outside the span.
fn orthonormalize(cols: &mut [Vec<f64>]) {
    let n = cols.first().map_or(0, Vec::len);
    let mut next_unit = 0;
    for k in 0..cols.len() {
        let original = norm(&cols[k]);
        let mut attempts = 0;
        loop {
            for _pass in 0..2 {
                for j in 0..k {
                    let (done, rest) = cols.split_at_mut(k);
                    let proj = dot(&done[j], &rest[0]);
                    for (x, y) in rest[0].iter_mut().zip(&done[j]) {
                        *x -= proj * y;
                    }
                }
            }
            let nk = norm(&cols[k]);
            if nk > 1e-10 * original.max(f64::MIN_POSITIVE) && nk > 0.0 {
                cols[k].iter_mut().for_each(|x| *x /= nk);
                break;
            }
            attempts += 1;
            assert!(attempts <= n + 1, "cannot extend an orthonormal basis of dimension {n}");
            cols[k] = vec![0.0; n];
            cols[k][next_unit % n] = 1.0;
            next_unit += 1;
        }
    }
}

/// The `k` largest eigenpairs of symmetric `s`, descending.
pub fn top_eigenpairs(s: &Matrix, k: usize) -> Result<EigenPairs, SpectralError> {
    let n = s.n();
    if k == 0 || k > n {
        return Err(SpectralError::TooManyPairs { wanted: k, size: n });
    }
    let block = (k + GUARD_COLUMNS).min(n);
    if block == n {
        let (values, vectors) = jacobi_eigen(s);
        return Ok(EigenPairs {
            values: values[..k].to_vec(),
            vectors: vectors[..k].to_vec(),
        });
    }

    let tol = RESIDUAL_TOL * s.frobenius_norm();
    let mut rng = rng_for(0, INIT_STREAM, n as u64);
    let mut q: Vec<Vec<f64>> = (0..block)
        .map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let cap = ITERATION_FACTOR * n;
    let mut worst = f64::INFINITY;
    for _iter in 0..cap {
        orthonormalize(&mut q);
        let z: Vec<Vec<f64>> = q.iter().map(|c| s.mul_vec(c)).collect();
        let mut h = Matrix::zeros(block);
        for i in 0..block {
            for j in 0..=i {
                let v = 0.5 * (dot(&q[i], &z[j]) + dot(&q[j], &z[i]));
                h.set(i, j, v);
                h.set(j, i, v);
            }
        }
        let (theta, u) = jacobi_eigen(&h);
        let combine = |basis: &[Vec<f64>], coeffs: &[f64]| -> Vec<f64> {
            let mut out = vec![0.0; n];
            for (b, &c) in basis.iter().zip(coeffs) {
                for (o, x) in out.iter_mut().zip(b) {
                    *o += c * x;
                }
            }
            out
        };
        let ritz: Vec<Vec<f64>> = u.iter().map(|c| combine(&q, c)).collect();
        let image: Vec<Vec<f64>> = u.iter().map(|c| combine(&z, c)).collect();
        worst = (0..k)
            .map(|j| {
                image[j]
                    .iter()
                    .zip(&ritz[j])
                    .map(|(a, b)| (a - theta[j] * b).powi(2))
                    .sum::<f64>()
                    .sqrt()
            })
            .fold(0.0, f64::max);
        if worst <= tol {
            let vectors: Vec<Vec<f64>> = ritz[..k]
                .iter()
                .map(|v| {
                    let nv = norm(v);
                    v.iter().map(|x| x / nv).collect()
                })
                .collect();
            let values = (0..k).map(|j| theta[j]).collect();
            debug_assert!(vectors
                .iter()
                .zip(&theta)
                .all(|(v, &t)| residual(s, t, v) <= 10.0 * tol.max(f64::MIN_POSITIVE)));
            return Ok(EigenPairs { values, vectors });
        }
        q = image;
    }
    Err(SpectralError::NotConverged {
        iterations: cap,
        residual: worst,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn check_pairs(s: &Matrix, pairs: &EigenPairs) {
        let scale = s.frobenius_norm();
        for (v, &l) in pairs.vectors.iter().zip(&pairs.values) {
            assert!((norm(v) - 1.0).abs() < 1e-9);
            assert!(residual(s, l, v) <= 1e-8 * scale.max(1e-300));
        }
        for w in pairs.values.windows(2) {
            assert!(w[0] >= w[1]);
        }
    }

    #[test]
    fn two_by_two_hand_spectrum() {
        let s = Matrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]);
        let pairs = top_eigenpairs(&s, 2).unwrap();
        assert!((pairs.values[0] - 3.0).abs() < 1e-12);
        assert!((pairs.values[1] - 1.0).abs() < 1e-12);
        let v = &pairs.vectors[0];
        let r = std::f64::consts::FRAC_1_SQRT_2;
        assert!((v[0].abs() - r).abs() < 1e-12 && (v[1].abs() - r).abs() < 1e-12);
        assert!(v[0] * v[1] > 0.0);
    }

    #[test]
    fn identity_satisfies_residual_contract() {
        for n in [3, 20] {
            let s = Matrix::identity(n);
            let pairs = top_eigenpairs(&s, 2).unwrap();
            check_pairs(&s, &pairs);
            assert!(dot(&pairs.vectors[0], &pairs.vectors[1]).abs() < 1e-8);
        }
    }

    #[test]
    fn rank_one_large_matrix() {
        let n = 40;
        let u: Vec<f64> = (0..n).map(|i| 1.0 + i as f64 / n as f64).collect();
        let rows: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| u[i] * u[j]).collect()).collect();
        let s = Matrix::from_rows(&rows);
        let pairs = top_eigenpairs(&s, 2).unwrap();
        check_pairs(&s, &pairs);
        assert!(pairs.values[1].abs() < 1e-9 * pairs.values[0]);
    }

    #[test]
    fn subspace_iteration_matches_jacobi() {
        let n = 30;
        let mut rng = rng_for(3, 3, 3);
        let x: Vec<Vec<f64>> = (0..n).map(|_| (0..50).map(|_| rng.random::<f64>()).collect()).collect();
        let rows: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| dot(&x[i], &x[j])).collect()).collect();
        let s = Matrix::from_rows(&rows);
        let pairs = top_eigenpairs(&s, 2).unwrap();
        check_pairs(&s, &pairs);
        let (full, _) = jacobi_eigen(&s);
        assert!((pairs.values[0] - full[0]).abs() <= 1e-10 * full[0]);
        assert!((pairs.values[1] - full[1]).abs() <= 1e-10 * full[0]);
    }

    #[test]
    fn rejects_too_many_pairs() {
        assert!(top_eigenpairs(&Matrix::identity(1), 2).is_err());
    }
}
