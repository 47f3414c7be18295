//! Row-compressed design matrices: each row holds a contiguous run of
//! column values starting at a column offset. B-spline rows have `q`
//! entries; Gaussian-process interpolation rows are dense.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, PartialEq)]
pub struct BandedRows {
    pub ncols: usize,
    starts: Vec<usize>,
    offsets: Vec<usize>,
    values: Vec<f64>,
}

impl BandedRows {
    pub fn new(ncols: usize) -> Self {
        Self {
            ncols,
            starts: Vec::new(),
            offsets: vec![0],
            values: Vec::new(),
        }
    }

    pub fn push_row(&mut self, start: usize, vals: &[f64]) {
        debug_assert!(start + vals.len() <= self.ncols);
        self.starts.push(start);
        self.values.extend_from_slice(vals);
        self.offsets.push(self.values.len());
    }

    pub fn from_dense(m: &DMatrix<f64>) -> Self {
        let mut rows = Self::new(m.ncols());
        let mut buf = vec![0.0; m.ncols()];
        for i in 0..m.nrows() {
            for (j, b) in buf.iter_mut().enumerate() {
                *b = m[(i, j)];
            }
            rows.push_row(0, &buf);
        }
        rows
    }

    pub fn nrows(&self) -> usize {
        self.starts.len()
    }

    pub fn row(&self, i: usize) -> (usize, &[f64]) {
        (self.starts[i], &self.values[self.offsets[i]..self.offsets[i + 1]])
    }

    pub fn dot_row(&self, i: usize, coeffs: &[f64]) -> f64 {
        let (s, v) = self.row(i);
        v.iter().zip(&coeffs[s..s + v.len()]).map(|(a, b)| a * b).sum()
    }

    /// `out[i] = row_i · coeffs`.
    pub fn mul_into(&self, coeffs: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.dot_row(i, coeffs);
        }
    }

    pub fn mul(&self, coeffs: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.nrows()];
        self.mul_into(coeffs, &mut out);
        out
    }

    /// `Σ_i w_i r_i r_iᵀ`.
    pub fn weighted_gram(&self, weights: &[f64]) -> DMatrix<f64> {
        let mut g = DMatrix::zeros(self.ncols, self.ncols);
        for (i, &w) in weights.iter().enumerate().take(self.nrows()) {
            let (s, v) = self.row(i);
            for (a, va) in v.iter().enumerate() {
                for (b, vb) in v.iter().enumerate() {
                    g[(s + a, s + b)] += w * va * vb;
                }
            }
        }
        g
    }

    /// `Σ_i w_i t_i r_i`.
    pub fn weighted_rhs(&self, weights: &[f64], target: &[f64]) -> DVector<f64> {
        let mut b = DVector::zeros(self.ncols);
        for i in 0..self.nrows() {
            let (s, v) = self.row(i);
            let wt = weights[i] * target[i];
            for (a, va) in v.iter().enumerate() {
                b[s + a] += wt * va;
            }
        }
        b
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dense_roundtrip_products() {
        let m = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 0.0, 0.0, 1.0, 3.0]);
        let r = BandedRows::from_dense(&m);
        assert_eq!(r.mul(&[1.0, 1.0, 1.0]), vec![3.0, 4.0]);
        let g = r.weighted_gram(&[1.0, 1.0]);
        assert_eq!(g, m.transpose() * &m);
    }

    #[test]
    fn banded_offsets() {
        let mut r = BandedRows::new(4);
        r.push_row(2, &[0.5, 0.5]);
        r.push_row(0, &[1.0]);
        assert_eq!(r.mul(&[1.0, 2.0, 3.0, 5.0]), vec![4.0, 1.0]);
        let b = r.weighted_rhs(&[1.0, 2.0], &[2.0, 1.0]);
        assert_eq!(b.as_slice(), &[2.0, 0.0, 1.0, 1.0]);
    }
}
