use serde::{Deserialize, Serialize};

/// A square single-channel image, row-major, `f64` intensities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Image {
    p: usize,
    data: Vec<f64>,
}

impl Image {
    /// Panics if `data.len() != p * p`.
    pub fn new(p: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), p * p, "image data must hold p*p values");
        Self { p, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let p = rows.len();
        let mut data = Vec::with_capacity(p * p);
        for row in rows {
            assert_eq!(row.len(), p, "image must be square");
            data.extend_from_slice(row);
        }
        Self { p, data }
    }

    pub fn constant(p: usize, value: f64) -> Self {
        Self { p, data: vec![value; p * p] }
    }

    pub fn side(&self) -> usize {
        self.p
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.p + col]
    }

    /// Row-major pixel values.
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// `vec(X)`: the columns of the image stacked into one vector.
    pub fn vectorize(&self) -> Vec<f64> {
        (0..self.p * self.p)
            .map(|i| self.data[column_major_to_row_major(i, self.p)])
            .collect()
    }
}

/// Offset in row-major storage of the `i`-th coordinate of the column-major
/// vectorization of a `p`×`p` image.
#[inline]
pub fn column_major_to_row_major(i: usize, p: usize) -> usize {
    let (col, row) = (i / p, i % p);
    row * p + col
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vectorize_stacks_columns() {
        let img = Image::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]);
        assert_eq!(img.vectorize(), vec![1.0, 3.0, 2.0, 4.0]);
    }
}
