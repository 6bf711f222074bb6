use std::io::Write;

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

/// Compressed-row sparse matrix with unique, in-range, finite entries.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        SparseMatrix {
            rows,
            cols,
            row_ptr: vec![0; rows + 1],
            col_idx: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Builds from `(row, col, weight)` triplets in any order. Duplicate
    /// coordinates, out-of-range indices and non-finite weights are errors.
    pub fn from_triplets(
        rows: usize,
        cols: usize,
        mut entries: Vec<(usize, usize, f64)>,
    ) -> Result<Self> {
        for &(r, c, w) in &entries {
            if r >= rows || c >= cols {
                return Err(Error::invalid(format!(
                    "entry ({r}, {c}) outside {rows}x{cols} matrix"
                )));
            }
            if !w.is_finite() {
                return Err(Error::invalid(format!("non-finite weight at ({r}, {c})")));
            }
        }
        entries.sort_by_key(|&(r, c, _)| (r, c));
        if let Some(dup) = entries.windows(2).find(|p| (p[0].0, p[0].1) == (p[1].0, p[1].1)) {
            return Err(Error::invalid(format!(
                "duplicate entry ({}, {})",
                dup[0].0, dup[0].1
            )));
        }
        Ok(Self::from_sorted(rows, cols, entries))
    }

    fn from_sorted(rows: usize, cols: usize, entries: Vec<(usize, usize, f64)>) -> Self {
        let mut row_ptr = vec![0; rows + 1];
        let mut col_idx = Vec::with_capacity(entries.len());
        let mut values = Vec::with_capacity(entries.len());
        for (r, c, w) in entries {
            row_ptr[r + 1] += 1;
            col_idx.push(c);
            values.push(w);
        }
        for r in 0..rows {
            row_ptr[r + 1] += row_ptr[r];
        }
        SparseMatrix {
            rows,
            cols,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn from_dense(dense: ArrayView2<'_, f64>) -> Result<Self> {
        let entries = dense
            .indexed_iter()
            .filter(|(_, &w)| w != 0.0)
            .map(|((r, c), &w)| (r, c, w))
            .collect();
        Self::from_triplets(dense.nrows(), dense.ncols(), entries)
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

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.rows).flat_map(move |r| {
            (self.row_ptr[r]..self.row_ptr[r + 1]).map(move |k| (r, self.col_idx[k], self.values[k]))
        })
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (self.row_ptr[r]..self.row_ptr[r + 1]).map(move |k| (self.col_idx[k], self.values[k]))
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let span = &self.col_idx[self.row_ptr[r]..self.row_ptr[r + 1]];
        match span.binary_search(&c) {
            Ok(k) => self.values[self.row_ptr[r] + k],
            Err(_) => 0.0,
        }
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.rows).map(|r| self.row(r).map(|(_, w)| w).sum()).collect()
    }

    pub fn transpose(&self) -> SparseMatrix {
        let mut entries: Vec<_> = self.iter().map(|(r, c, w)| (c, r, w)).collect();
        entries.sort_by_key(|&(r, c, _)| (r, c));
        Self::from_sorted(self.cols, self.rows, entries)
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.rows, self.cols));
        for (r, c, w) in self.iter() {
            out[[r, c]] = w;
        }
        out
    }

    pub fn is_symmetric(&self) -> bool {
        self.rows == self.cols && self.iter().all(|(r, c, w)| self.get(c, r) == w)
    }

    /// Keeps entries for which `f` returns `Some(new_weight)`; zero weights
    /// are dropped from storage.
    pub fn filter_map(&self, mut f: impl FnMut(usize, usize, f64) -> Option<f64>) -> SparseMatrix {
        let entries = self
            .iter()
            .filter_map(|(r, c, w)| f(r, c, w).filter(|&v| v != 0.0).map(|v| (r, c, v)))
            .collect();
        Self::from_sorted(self.rows, self.cols, entries)
    }

    /// Sparse-times-dense product `self * dense`.
    pub fn mul_dense(&self, dense: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if dense.nrows() != self.cols {
            return Err(Error::shape(
                "spmm",
                format!("{}x{} * {}x{}", self.rows, self.cols, dense.nrows(), dense.ncols()),
            ));
        }
        let mut out = Array2::zeros((self.rows, dense.ncols()));
        for r in 0..self.rows {
            let mut acc = out.row_mut(r);
            for (c, w) in self.row(r) {
                acc.scaled_add(w, &dense.row(c));
            }
        }
        Ok(out)
    }

    /// Transposed product `selfᵀ * dense` without materializing the transpose.
    pub fn t_mul_dense(&self, dense: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if dense.nrows() != self.rows {
            return Err(Error::shape(
                "spmm_t",
                format!("({}x{})ᵀ * {}x{}", self.rows, self.cols, dense.nrows(), dense.ncols()),
            ));
        }
        let mut out = Array2::zeros((self.cols, dense.ncols()));
        for r in 0..self.rows {
            let src = dense.row(r);
            for (c, w) in self.row(r) {
                out.row_mut(c).scaled_add(w, &src);
            }
        }
        Ok(out)
    }

    /// Coordinate-format dump, one `row col weight` line per stored entry.
    pub fn write_coo<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "% {} {} {}", self.rows, self.cols, self.nnz())?;
        for (r, c, v) in self.iter() {
            writeln!(w, "{r} {c} {v:e}")?;
        }
        Ok(())
    }
}
