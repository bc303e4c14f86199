use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::scalar::Scalar;

/// Compressed sparse row matrix used for graph propagation.
#[derive(Debug, Clone, PartialEq)]
pub struct Csr<S> {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<S>,
}

impl<S: Scalar> Csr<S> {
    /// Builds from per-row `(col, value)` lists. Column order inside a row
    /// is preserved, so results are reproducible.
    pub fn from_rows(cols: usize, rows: &[Vec<(usize, S)>]) -> Result<Self> {
        let mut indptr = Vec::with_capacity(rows.len() + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for row in rows {
            for &(c, v) in row {
                if c >= cols {
                    return Err(Error::Shape(format!("column {c} out of range {cols}")));
                }
                indices.push(c);
                values.push(v);
            }
            indptr.push(indices.len());
        }
        Ok(Self { rows: rows.len(), cols, indptr, indices, values })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, S)> + '_ {
        let (a, b) = (self.indptr[r], self.indptr[r + 1]);
        self.indices[a..b].iter().copied().zip(self.values[a..b].iter().copied())
    }

    pub fn row_len(&self, r: usize) -> usize {
        self.indptr[r + 1] - self.indptr[r]
    }

    pub fn transpose(&self) -> Self {
        let mut rows: Vec<Vec<(usize, S)>> = vec![Vec::new(); self.cols];
        for r in 0..self.rows {
            for (c, v) in self.row(r) {
                rows[c].push((r, v));
            }
        }
        Self::from_rows(self.rows, &rows).expect("transpose indices in range")
    }

    /// `self · x` for a dense `x` with `self.cols()` rows.
    pub fn matmul_dense(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        if x.rows() != self.cols {
            return Err(Error::Shape(format!(
                "spmm {}x{} by {:?}",
                self.rows,
                self.cols,
                x.shape()
            )));
        }
        let n = x.cols();
        let mut out = vec![S::zero(); self.rows * n];
        for r in 0..self.rows {
            let orow = &mut out[r * n..(r + 1) * n];
            for (c, v) in self.row(r) {
                for (o, &xv) in orow.iter_mut().zip(x.row(c)) {
                    *o += v * xv;
                }
            }
        }
        Tensor::matrix(self.rows, n, out)
    }

    /// `selfᵀ · g` without materializing the transpose.
    pub fn transpose_matmul_dense(&self, g: &Tensor<S>) -> Tensor<S> {
        let n = g.cols();
        let mut out = vec![S::zero(); self.cols * n];
        for r in 0..self.rows {
            let grow = g.row(r);
            for (c, v) in self.row(r) {
                let orow = &mut out[c * n..(c + 1) * n];
                for (o, &gv) in orow.iter_mut().zip(grow) {
                    *o += v * gv;
                }
            }
        }
        Tensor::matrix(self.cols, n, out).expect("consistent shape")
    }

    pub fn to_dense(&self) -> Tensor<S> {
        let mut t = Tensor::zeros(&[self.rows, self.cols]);
        for r in 0..self.rows {
            for (c, v) in self.row(r) {
                let cur = t.get(r, c);
                t.set(r, c, cur + v);
            }
        }
        t
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spmm_matches_dense() {
        let a = Csr::<f64>::from_rows(3, &[vec![(0, 1.0), (2, 2.0)], vec![], vec![(1, -1.0)]]).unwrap();
        let x = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]);
        let sparse = a.matmul_dense(&x).unwrap();
        let dense = a.to_dense().matmul(&x).unwrap();
        assert_eq!(sparse, dense);
        let g = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]]);
        assert_eq!(a.transpose_matmul_dense(&g), a.transpose().matmul_dense(&g).unwrap());
    }
}
