//! Minimal sparse matrix storage for the solver stack.
//!
//! The design matrix is swept column-by-column by the coordinate-descent
//! solvers, so the primary layout is column-oriented. Penalty matrices
//! (pairwise-difference rows) are row-oriented.

use crate::error::{Error, Result};

/// Column-oriented sparse matrix with entries sorted by row within a column.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseColMatrix {
    nrows: usize,
    cols: Vec<Vec<(u32, f64)>>,
}

impl SparseColMatrix {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        SparseColMatrix {
            nrows,
            cols: vec![Vec::new(); ncols],
        }
    }

    pub fn from_dense(rows: &[Vec<f64>]) -> Self {
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, |r| r.len());
        let mut m = SparseColMatrix::new(nrows, ncols);
        for (i, row) in rows.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if v != 0.0 {
                    m.push(i, j, v);
                }
            }
        }
        m
    }

    /// Append an entry; rows must be pushed in increasing order per column.
    pub fn push(&mut self, row: usize, col: usize, value: f64) {
        debug_assert!(row < self.nrows);
        debug_assert!(
            self.cols[col].last().is_none_or(|&(r, _)| (r as usize) < row),
            "entries must be pushed in row order"
        );
        self.cols[col].push((row as u32, value));
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.cols.len()
    }

    pub fn nnz(&self) -> usize {
        self.cols.iter().map(Vec::len).sum()
    }

    pub fn col(&self, j: usize) -> &[(u32, f64)] {
        &self.cols[j]
    }

    pub fn col_sum(&self, j: usize) -> f64 {
        self.cols[j].iter().map(|&(_, v)| v).sum()
    }

    pub fn col_sq_norm(&self, j: usize) -> f64 {
        self.cols[j].iter().map(|&(_, v)| v * v).sum()
    }

    /// out = X · beta (out has length nrows, caller-provided and zeroed here).
    pub fn mul_vec(&self, beta: &[f64], out: &mut [f64]) {
        assert_eq!(beta.len(), self.ncols());
        assert_eq!(out.len(), self.nrows);
        out.fill(0.0);
        for (j, col) in self.cols.iter().enumerate() {
            let b = beta[j];
            if b != 0.0 {
                for &(r, v) in col {
                    out[r as usize] += v * b;
                }
            }
        }
    }

    /// out = Xᵀ · v, scaled by `scale`.
    pub fn tr_mul_vec(&self, v: &[f64], scale: f64, out: &mut [f64]) {
        assert_eq!(v.len(), self.nrows);
        assert_eq!(out.len(), self.ncols());
        for (j, col) in self.cols.iter().enumerate() {
            let mut acc = 0.0;
            for &(r, val) in col {
                acc += val * v[r as usize];
            }
            out[j] = acc * scale;
        }
    }

    /// Dot product of column j with a dense vector over rows.
    pub fn col_dot(&self, j: usize, v: &[f64]) -> f64 {
        self.cols[j]
            .iter()
            .map(|&(r, val)| val * v[r as usize])
            .sum()
    }

    /// eta += delta · column j.
    pub fn add_col_scaled(&self, j: usize, delta: f64, eta: &mut [f64]) {
        for &(r, v) in &self.cols[j] {
            eta[r as usize] += v * delta;
        }
    }

    /// Weighted squared norm of column j: Σ_i w_i x_ij².
    pub fn col_weighted_sq_norm(&self, j: usize, w: &[f64]) -> f64 {
        self.cols[j]
            .iter()
            .map(|&(r, v)| w[r as usize] * v * v)
            .sum()
    }

    /// Upper bound on the largest singular value via power iteration on XᵀX.
    pub fn spectral_norm_bound(&self, iterations: usize) -> f64 {
        let n = self.ncols();
        if n == 0 || self.nrows == 0 || self.nnz() == 0 {
            return 0.0;
        }
        let mut v = vec![1.0 / (n as f64).sqrt(); n];
        let mut xv = vec![0.0; self.nrows];
        let mut xtxv = vec![0.0; n];
        let mut sigma2 = 0.0;
        for _ in 0..iterations {
            self.mul_vec(&v, &mut xv);
            self.tr_mul_vec(&xv, 1.0, &mut xtxv);
            sigma2 = xtxv.iter().map(|x| x * x).sum::<f64>().sqrt();
            if sigma2 == 0.0 {
                return 0.0;
            }
            for (vi, xi) in v.iter_mut().zip(&xtxv) {
                *vi = xi / sigma2;
            }
        }
        // 1.02 head-room keeps the bound valid against power-iteration slack
        (sigma2.sqrt()) * 1.02
    }

    /// Restrict to rows where keep[i] is true, compacting row indices.
    pub fn subset_rows(&self, keep: &[bool]) -> SparseColMatrix {
        assert_eq!(keep.len(), self.nrows);
        let mut remap = vec![u32::MAX; self.nrows];
        let mut next = 0u32;
        for (i, &k) in keep.iter().enumerate() {
            if k {
                remap[i] = next;
                next += 1;
            }
        }
        let cols = self
            .cols
            .iter()
            .map(|col| {
                col.iter()
                    .filter(|&&(r, _)| keep[r as usize])
                    .map(|&(r, v)| (remap[r as usize], v))
                    .collect()
            })
            .collect();
        SparseColMatrix {
            nrows: next as usize,
            cols,
        }
    }

    /// Dense copy, row-major. Intended for small instances and tests.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; self.ncols()]; self.nrows];
        for (j, col) in self.cols.iter().enumerate() {
            for &(r, v) in col {
                out[r as usize][j] = v;
            }
        }
        out
    }

    /// Keep only the listed columns, in the given order.
    pub fn select_cols(&self, cols: &[usize]) -> SparseColMatrix {
        SparseColMatrix {
            nrows: self.nrows,
            cols: cols.iter().map(|&j| self.cols[j].clone()).collect(),
        }
    }
}

/// Row-oriented sparse matrix, used for penalty matrices D.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseRowMatrix {
    ncols: usize,
    rows: Vec<Vec<(u32, f64)>>,
}

impl SparseRowMatrix {
    pub fn new(ncols: usize) -> Self {
        SparseRowMatrix {
            ncols,
            rows: Vec::new(),
        }
    }

    pub fn push_row(&mut self, entries: Vec<(u32, f64)>) {
        debug_assert!(entries.iter().all(|&(c, _)| (c as usize) < self.ncols));
        self.rows.push(entries);
    }

    pub fn nrows(&self) -> usize {
        self.rows.len()
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn row(&self, i: usize) -> &[(u32, f64)] {
        &self.rows[i]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[(u32, f64)]> {
        self.rows.iter().map(Vec::as_slice)
    }

    /// out = D · beta.
    pub fn mul_vec(&self, beta: &[f64], out: &mut [f64]) {
        assert_eq!(beta.len(), self.ncols);
        assert_eq!(out.len(), self.rows.len());
        for (i, row) in self.rows.iter().enumerate() {
            out[i] = row.iter().map(|&(c, v)| v * beta[c as usize]).sum();
        }
    }

    /// out += scale · Dᵀ · u.
    pub fn tr_mul_vec_add(&self, u: &[f64], scale: f64, out: &mut [f64]) {
        assert_eq!(u.len(), self.rows.len());
        assert_eq!(out.len(), self.ncols);
        for (i, row) in self.rows.iter().enumerate() {
            let ui = u[i] * scale;
            if ui != 0.0 {
                for &(c, v) in row {
                    out[c as usize] += v * ui;
                }
            }
        }
    }

    /// Dense DᵀD, needed by the splitting solver's Newton system.
    pub fn gram(&self) -> Vec<Vec<f64>> {
        let mut g = vec![vec![0.0; self.ncols]; self.ncols];
        for row in &self.rows {
            for &(a, va) in row {
                for &(b, vb) in row {
                    g[a as usize][b as usize] += va * vb;
                }
            }
        }
        g
    }
}

/// Coordinate-triplet export (row, col, value), one per line, for cross-checks
/// against external tools.
pub fn write_triplets<W: std::io::Write>(m: &SparseColMatrix, mut w: W) -> Result<()> {
    for j in 0..m.ncols() {
        for &(r, v) in m.col(j) {
            writeln!(w, "{} {} {}", r, j, v).map_err(Error::Io)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> SparseColMatrix {
        // [1 0 2]
        // [0 3 0]
        // [4 0 5]
        SparseColMatrix::from_dense(&[
            vec![1.0, 0.0, 2.0],
            vec![0.0, 3.0, 0.0],
            vec![4.0, 0.0, 5.0],
        ])
    }

    #[test]
    fn mul_and_transpose_agree_with_dense() {
        let m = fixture();
        let beta = [1.0, -1.0, 2.0];
        let mut out = vec![0.0; 3];
        m.mul_vec(&beta, &mut out);
        assert_eq!(out, vec![5.0, -3.0, 14.0]);

        let v = [1.0, 2.0, 3.0];
        let mut t = vec![0.0; 3];
        m.tr_mul_vec(&v, 1.0, &mut t);
        assert_eq!(t, vec![13.0, 6.0, 17.0]);
    }

    #[test]
    fn subset_rows_compacts() {
        let m = fixture();
        let s = m.subset_rows(&[true, false, true]);
        assert_eq!(s.nrows(), 2);
        assert_eq!(s.to_dense(), vec![vec![1.0, 0.0, 2.0], vec![4.0, 0.0, 5.0]]);
    }

    #[test]
    fn spectral_bound_dominates_true_norm() {
        let m = fixture();
        // Largest singular value of the dense fixture, precomputed.
        let bound = m.spectral_norm_bound(60);
        let mut xv = vec![0.0; 3];
        let v = [0.6, 0.0, 0.8];
        m.mul_vec(&v, &mut xv);
        let rayleigh = xv.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(bound >= rayleigh);
    }

    #[test]
    fn row_matrix_ops() {
        let mut d = SparseRowMatrix::new(3);
        d.push_row(vec![(0, 1.0), (1, -1.0)]);
        d.push_row(vec![(1, 1.0), (2, -1.0)]);
        let mut out = vec![0.0; 2];
        d.mul_vec(&[3.0, 1.0, -2.0], &mut out);
        assert_eq!(out, vec![2.0, 3.0]);

        let mut back = vec![0.0; 3];
        d.tr_mul_vec_add(&[1.0, 2.0], 1.0, &mut back);
        assert_eq!(back, vec![1.0, 1.0, -2.0]);

        let g = d.gram();
        assert_eq!(g[1][1], 2.0);
        assert_eq!(g[0][1], -1.0);
    }
}
