use crate::dataset::ImageStack;

/// Dense square matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    n: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(n: usize) -> Self {
        Self { n, data: vec![0.0; n * n] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let n = rows.len();
        let mut data = Vec::with_capacity(n * n);
        for r in rows {
            assert_eq!(r.len(), n, "matrix must be square");
            data.extend_from_slice(r);
        }
        Self { n, data }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.n).all(|i| (0..i).all(|j| self.get(i, j) == self.get(j, i)))
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        (0..self.n).map(|i| dot(self.row(i), v)).collect()
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

const GRAM_CHUNK: usize = 512;

/// Uncentered inner products of equal-length rows: `G[i][j] = <r_i, r_j>`.
///
/// The coordinate axis is processed in fixed-size chunks so each chunk of all
/// rows stays cache resident; the summation order is fixed, so the result is
/// deterministic.
pub(crate) fn gram_of_rows<T: Copy + Into<f64>>(rows: &[&[T]]) -> Matrix {
    let n = rows.len();
    let len = rows.first().map_or(0, |r| r.len());
    debug_assert!(rows.iter().all(|r| r.len() == len));
    let mut g = Matrix::zeros(n);
    let mut buf = vec![0.0f64; n * GRAM_CHUNK];
    let mut start = 0;
    while start < len {
        let width = GRAM_CHUNK.min(len - start);
        for (i, r) in rows.iter().enumerate() {
            for (dst, &src) in buf[i * width..(i + 1) * width]
                .iter_mut()
                .zip(&r[start..start + width])
            {
                *dst = src.into();
            }
        }
        for i in 0..n {
            let ri = &buf[i * width..(i + 1) * width];
            for j in 0..=i {
                let rj = &buf[j * width..(j + 1) * width];
                g.data[i * n + j] += dot(ri, rj);
            }
        }
        start += width;
    }
    for i in 0..n {
        for j in 0..i {
            g.data[j * n + i] = g.data[i * n + j];
        }
    }
    g
}

/// `S[i][j] = vec(X_i)ᵀ vec(X_j)` over the slices of a stack.
///
/// This is the uncentered inner-product matrix; no mean is subtracted even
/// though the quantity is often called a sample covariance.
pub fn gram_matrix(stack: &ImageStack) -> Matrix {
    let slices: Vec<&[f32]> = (0..stack.m()).map(|j| stack.slice(j)).collect();
    gram_of_rows(&slices)
}
