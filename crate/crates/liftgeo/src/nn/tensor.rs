//! Dense row-major matrices of `f64` — the only array type the networks need.

use rayon::prelude::*;

use crate::nn::NnError;

/// Minimum work (rows * cols * inner) before a matmul is split across threads.
/// Below this the rayon dispatch overhead dominates.
const PAR_FLOP_THRESHOLD: usize = 1 << 20;

/// A row-major `(rows, cols)` matrix of `f64`.
///
/// Training batches are laid out one sample per row; parameters are `(in, out)`
/// weight matrices or `(1, out)` row vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor2 {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor2 {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor2 {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, NnError> {
        if data.len() != rows * cols {
            return Err(NnError::ShapeMismatch {
                context: "Tensor2::from_vec",
                expected: (rows, cols),
                got: (data.len(), 1),
            });
        }
        Ok(Tensor2 { rows, cols, data })
    }

    /// Panicking constructor for literals in tests and fixed-size internals.
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let r = rows.len();
        let c = if r == 0 { 0 } else { rows[0].len() };
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Tensor2 { rows: r, cols: c, data }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Tensor2 {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    /// Identity matrix, used by tests and the occasional frozen layer.
    pub fn eye(n: usize) -> Self {
        let mut t = Tensor2::zeros(n, n);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        let c = self.cols;
        &mut self.data[r * c..(r + 1) * c]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.data.iter()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor2 {
        Tensor2 {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Elementwise combine with another tensor of identical shape.
    pub fn zip_map(&self, other: &Tensor2, f: impl Fn(f64, f64) -> f64) -> Tensor2 {
        assert_eq!(self.shape(), other.shape(), "zip_map shape mismatch");
        Tensor2 {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn transpose(&self) -> Tensor2 {
        let mut out = Tensor2::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    pub fn add_assign(&mut self, other: &Tensor2) {
        assert_eq!(self.shape(), other.shape(), "add_assign shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale_assign(&mut self, s: f64) {
        for a in self.data.iter_mut() {
            *a *= s;
        }
    }

    /// Column sums as a `(1, cols)` row vector.
    pub fn col_sums(&self) -> Tensor2 {
        let mut out = Tensor2::zeros(1, self.cols);
        for r in 0..self.rows {
            let row = self.row(r);
            for (o, v) in out.data.iter_mut().zip(row) {
                *o += v;
            }
        }
        out
    }

    /// Row sums as a `(rows, 1)` column vector.
    pub fn row_sums(&self) -> Tensor2 {
        let mut out = Tensor2::zeros(self.rows, 1);
        for r in 0..self.rows {
            out.data[r] = self.row(r).iter().sum();
        }
        out
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `self @ other`: `(m, k) x (k, n) -> (m, n)`.
    ///
    /// Accumulation over `k` is sequential per output element, so results are
    /// bitwise identical regardless of how many threads rayon uses.
    pub fn matmul(&self, other: &Tensor2) -> Tensor2 {
        assert_eq!(
            self.cols, other.rows,
            "matmul inner dimension mismatch: {:?} x {:?}",
            self.shape(),
            other.shape()
        );
        let (m, k, n) = (self.rows, self.cols, other.cols);
        let mut out = Tensor2::zeros(m, n);
        if m * k * n >= PAR_FLOP_THRESHOLD {
            out.data
                .par_chunks_mut(n)
                .enumerate()
                .for_each(|(i, out_row)| {
                    matmul_row(self.row(i), &other.data, n, out_row);
                });
        } else {
            for (i, out_row) in out.data.chunks_mut(n).enumerate() {
                matmul_row(self.row(i), &other.data, n, out_row);
            }
        }
        out
    }
}

#[inline]
fn matmul_row(a_row: &[f64], b: &[f64], n: usize, out_row: &mut [f64]) {
    for (kk, &aik) in a_row.iter().enumerate() {
        let b_row = &b[kk * n..kk * n + n];
        for (o, &bv) in out_row.iter_mut().zip(b_row) {
            *o += aik * bv;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent triple-loop matmul used as the oracle for the fast kernel.
    fn matmul_naive(a: &Tensor2, b: &Tensor2) -> Tensor2 {
        let mut out = Tensor2::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut acc = 0.0;
                for k in 0..a.cols() {
                    acc += a.get(i, k) * b.get(k, j);
                }
                out.set(i, j, acc);
            }
        }
        out
    }

    #[test]
    fn matmul_matches_naive_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for &(m, k, n) in &[(2, 3, 4), (5, 5, 5), (17, 31, 13), (64, 128, 96)] {
            let a = Tensor2::from_vec(m, k, (0..m * k).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .unwrap();
            let b = Tensor2::from_vec(k, n, (0..k * n).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .unwrap();
            let fast = a.matmul(&b);
            let slow = matmul_naive(&a, &b);
            for (x, y) in fast.iter().zip(slow.iter()) {
                assert!((x - y).abs() <= 1e-12, "{x} vs {y}");
            }
        }
    }

    #[test]
    fn transpose_roundtrip() {
        let t = Tensor2::from_rows(&[&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]]);
        assert_eq!(t.transpose().transpose(), t);
        assert_eq!(t.transpose().get(2, 1), 6.0);
    }

    #[test]
    fn reductions() {
        let t = Tensor2::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]);
        assert_eq!(t.col_sums().as_slice(), &[4.0, 6.0]);
        assert_eq!(t.row_sums().as_slice(), &[3.0, 7.0]);
        assert_eq!(t.sum(), 10.0);
    }
}
