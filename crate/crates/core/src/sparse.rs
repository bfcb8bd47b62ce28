//! Compressed sparse row matrices.
//!
//! The product kernels here accumulate each output entry by sorting the
//! partial products before summing. Floating-point addition is not
//! associative, so without a fixed summation order two graphs that differ
//! only by vertex relabeling could produce results differing in the last
//! bit. Sorting makes the sum independent of the order the nonzeros are
//! stored in, which the permutation-equivariance guarantees elsewhere in the
//! crate rely on.

use crate::dense::DenseMatrix;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SparseError {
    #[error("row offsets must start at 0 and end at nnz={nnz}, got first={first}, last={last}")]
    BadOffsets {
        first: usize,
        last: usize,
        nnz: usize,
    },
    #[error("row offsets must be non-decreasing (row {row})")]
    NonMonotoneOffsets { row: usize },
    #[error("column index {col} out of range for {cols} columns (entry {entry})")]
    ColumnOutOfRange {
        col: usize,
        cols: usize,
        entry: usize,
    },
    #[error("column indices within row {row} must be strictly increasing")]
    UnsortedRow { row: usize },
    #[error("non-finite value {value} at entry {entry}")]
    NonFinite { entry: usize, value: f64 },
    #[error("dimension mismatch: {rows}x{cols} sparse times {other_rows}x{other_cols} dense")]
    DimensionMismatch {
        rows: usize,
        cols: usize,
        other_rows: usize,
        other_cols: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    rows: usize,
    cols: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds a CSR matrix from raw parts, validating the structural
    /// invariants (monotone offsets, sorted unique columns per row, finite
    /// values).
    pub fn new(
        rows: usize,
        cols: usize,
        row_offsets: Vec<usize>,
        col_indices: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self, SparseError> {
        let nnz = values.len();
        if row_offsets.len() != rows + 1
            || row_offsets.first() != Some(&0)
            || row_offsets.last() != Some(&nnz)
            || col_indices.len() != nnz
        {
            return Err(SparseError::BadOffsets {
                first: row_offsets.first().copied().unwrap_or(usize::MAX),
                last: row_offsets.last().copied().unwrap_or(usize::MAX),
                nnz,
            });
        }
        for r in 0..rows {
            if row_offsets[r] > row_offsets[r + 1] {
                return Err(SparseError::NonMonotoneOffsets { row: r });
            }
            let mut prev: Option<usize> = None;
            for (k, &c) in col_indices
                .iter()
                .enumerate()
                .take(row_offsets[r + 1])
                .skip(row_offsets[r])
            {
                if c >= cols {
                    return Err(SparseError::ColumnOutOfRange {
                        col: c,
                        cols,
                        entry: k,
                    });
                }
                if let Some(p) = prev {
                    if c <= p {
                        return Err(SparseError::UnsortedRow { row: r });
                    }
                }
                prev = Some(c);
            }
        }
        for (k, &v) in values.iter().enumerate() {
            if !v.is_finite() {
                return Err(SparseError::NonFinite { entry: k, value: v });
            }
        }
        Ok(CsrMatrix {
            rows,
            cols,
            row_offsets,
            col_indices,
            values,
        })
    }

    /// Builds from (row, col, value) triplets; duplicates are summed.
    pub fn from_triplets(
        rows: usize,
        cols: usize,
        triplets: &[(usize, usize, f64)],
    ) -> Result<Self, SparseError> {
        let mut sorted: Vec<(usize, usize, f64)> = triplets.to_vec();
        sorted.sort_by_key(|&(r, c, _)| (r, c));
        let mut dedup: Vec<(usize, usize, f64)> = Vec::with_capacity(sorted.len());
        for &(r, c, v) in &sorted {
            match dedup.last_mut() {
                Some(last) if last.0 == r && last.1 == c => last.2 += v,
                _ => dedup.push((r, c, v)),
            }
        }
        let mut row_offsets = vec![0usize; rows + 1];
        for &(r, _, _) in &dedup {
            if r >= rows {
                return Err(SparseError::ColumnOutOfRange {
                    col: r,
                    cols: rows,
                    entry: 0,
                });
            }
            row_offsets[r + 1] += 1;
        }
        for r in 0..rows {
            row_offsets[r + 1] += row_offsets[r];
        }
        let col_indices = dedup.iter().map(|&(_, c, _)| c).collect();
        let values = dedup.iter().map(|&(_, _, v)| v).collect();
        Self::new(rows, cols, row_offsets, col_indices, values)
    }

    /// Converts a dense matrix, keeping exact nonzero entries.
    pub fn from_dense(m: &DenseMatrix) -> Self {
        let mut row_offsets = Vec::with_capacity(m.rows() + 1);
        let mut col_indices = Vec::new();
        let mut values = Vec::new();
        row_offsets.push(0);
        for r in 0..m.rows() {
            for c in 0..m.cols() {
                let v = m.get(r, c);
                if v != 0.0 {
                    col_indices.push(c);
                    values.push(v);
                }
            }
            row_offsets.push(col_indices.len());
        }
        CsrMatrix {
            rows: m.rows(),
            cols: m.cols(),
            row_offsets,
            col_indices,
            values,
        }
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(self.rows, self.cols);
        for r in 0..self.rows {
            for k in self.row_offsets[r]..self.row_offsets[r + 1] {
                out.set(r, self.col_indices[k], self.values[k]);
            }
        }
        out
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

    /// (column, value) pairs of one row, sorted by column.
    pub fn row_entries(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let lo = self.row_offsets[r];
        let hi = self.row_offsets[r + 1];
        self.col_indices[lo..hi]
            .iter()
            .copied()
            .zip(self.values[lo..hi].iter().copied())
    }

    pub fn transpose(&self) -> CsrMatrix {
        let mut triplets = Vec::with_capacity(self.nnz());
        for r in 0..self.rows {
            for (c, v) in self.row_entries(r) {
                triplets.push((c, r, v));
            }
        }
        CsrMatrix::from_triplets(self.cols, self.rows, &triplets)
            .expect("transpose of a valid matrix is valid")
    }

    /// Sparse x dense product. Each output entry sums its partial products
    /// in value order so the result is invariant to nonzero storage order.
    pub fn matmul_dense(&self, b: &DenseMatrix) -> Result<DenseMatrix, SparseError> {
        if self.cols != b.rows() {
            return Err(SparseError::DimensionMismatch {
                rows: self.rows,
                cols: self.cols,
                other_rows: b.rows(),
                other_cols: b.cols(),
            });
        }
        let bc = b.cols();
        let mut out = DenseMatrix::zeros(self.rows, bc);
        let bdata = b.data();
        let mut buf: Vec<f64> = Vec::new();
        for r in 0..self.rows {
            let lo = self.row_offsets[r];
            let hi = self.row_offsets[r + 1];
            for c in 0..bc {
                buf.clear();
                for k in lo..hi {
                    let prod = self.values[k] * bdata[self.col_indices[k] * bc + c];
                    if prod != 0.0 {
                        buf.push(prod);
                    }
                }
                out.data_mut()[r * bc + c] = sorted_sum(&mut buf);
            }
        }
        Ok(out)
    }

    /// Raw-slice variant of [`matmul_dense`](Self::matmul_dense) used by the
    /// autodiff tape; `out` must be zeroed, `b` is `self.cols x bc`.
    pub fn matmul_slice(&self, b: &[f64], bc: usize, out: &mut [f64]) {
        debug_assert_eq!(b.len(), self.cols * bc);
        debug_assert_eq!(out.len(), self.rows * bc);
        let mut buf: Vec<f64> = Vec::new();
        for r in 0..self.rows {
            let lo = self.row_offsets[r];
            let hi = self.row_offsets[r + 1];
            for c in 0..bc {
                buf.clear();
                for k in lo..hi {
                    let prod = self.values[k] * b[self.col_indices[k] * bc + c];
                    if prod != 0.0 {
                        buf.push(prod);
                    }
                }
                out[r * bc + c] += sorted_sum(&mut buf);
            }
        }
    }

    /// `out += self^T * g` where `g` is `self.rows x gc`; used for the
    /// backward pass of sparse-dense products.
    pub fn matmul_transpose_slice(&self, g: &[f64], gc: usize, out: &mut [f64]) {
        debug_assert_eq!(g.len(), self.rows * gc);
        debug_assert_eq!(out.len(), self.cols * gc);
        for r in 0..self.rows {
            let lo = self.row_offsets[r];
            let hi = self.row_offsets[r + 1];
            let grow = &g[r * gc..(r + 1) * gc];
            for k in lo..hi {
                let v = self.values[k];
                let orow = &mut out[self.col_indices[k] * gc..(self.col_indices[k] + 1) * gc];
                for (o, &gv) in orow.iter_mut().zip(grow) {
                    *o += v * gv;
                }
            }
        }
    }
}

/// Sums values in ascending order by total order on f64; empty slice sums
/// to zero.
pub fn sorted_sum(buf: &mut [f64]) -> f64 {
    buf.sort_by(|a, b| a.total_cmp(b));
    buf.iter().sum()
}
