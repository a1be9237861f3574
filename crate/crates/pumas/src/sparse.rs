//! Symmetric sparse matrices in compressed row form. Both triangles are
//! stored so PDAS row extraction and restriction stay simple.

use std::io::Write;

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    dim: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<u32>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Build from a per-row structure callback; columns must come back sorted.
    pub fn from_rows<F>(dim: usize, mut row: F) -> SparseMatrix
    where
        F: FnMut(usize, &mut Vec<(u32, f64)>),
    {
        let mut row_ptr = Vec::with_capacity(dim + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        let mut buf = Vec::new();
        row_ptr.push(0);
        for r in 0..dim {
            buf.clear();
            row(r, &mut buf);
            debug_assert!(buf.windows(2).all(|w| w[0].0 < w[1].0), "unsorted row {r}");
            for &(c, v) in &buf {
                col_idx.push(c);
                values.push(v);
            }
            row_ptr.push(col_idx.len());
        }
        SparseMatrix { dim, row_ptr, col_idx, values }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, r: usize) -> (&[u32], &[f64]) {
        let (a, b) = (self.row_ptr[r], self.row_ptr[r + 1]);
        (&self.col_idx[a..b], &self.values[a..b])
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let (cols, vals) = self.row(r);
        match cols.binary_search(&(c as u32)) {
            Ok(k) => vals[k],
            Err(_) => 0.0,
        }
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.dim);
        assert_eq!(y.len(), self.dim);
        for r in 0..self.dim {
            let (cols, vals) = self.row(r);
            let mut acc = 0.0;
            for (c, v) in cols.iter().zip(vals) {
                acc += v * x[*c as usize];
            }
            y[r] = acc;
        }
    }

    pub fn matvec_alloc(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.dim];
        self.matvec(x, &mut y);
        y
    }

    /// Largest |a_rc - a_cr|; exactly 0 for the assembled operators.
    pub fn symmetry_defect(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for r in 0..self.dim {
            let (cols, vals) = self.row(r);
            for (c, v) in cols.iter().zip(vals) {
                worst = worst.max((v - self.get(*c as usize, r)).abs());
            }
        }
        worst
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Principal submatrix on a sorted index list, reindexed to 0..keep.len().
    pub fn principal_submatrix(&self, keep: &[u32]) -> SparseMatrix {
        debug_assert!(keep.windows(2).all(|w| w[0] < w[1]), "unsorted index list");
        let mut map = vec![u32::MAX; self.dim];
        for (local, &g) in keep.iter().enumerate() {
            map[g as usize] = local as u32;
        }
        SparseMatrix::from_rows(keep.len(), |r, buf| {
            let (cols, vals) = self.row(keep[r] as usize);
            for (c, v) in cols.iter().zip(vals) {
                let local = map[*c as usize];
                if local != u32::MAX {
                    buf.push((local, *v));
                }
            }
        })
    }

    /// y[r] += Σ_{c in cols} a_rc · x[c] for rows in `rows`, with `x` indexed
    /// by position in `cols`. Used for the active-column correction of the
    /// reduced right-hand side.
    pub fn scatter_product(&self, rows: &[u32], cols_map: &[u32], x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(rows.len(), y.len());
        for (out, &r) in y.iter_mut().zip(rows) {
            let (cols, vals) = self.row(r as usize);
            let mut acc = 0.0;
            for (c, v) in cols.iter().zip(vals) {
                let k = cols_map[*c as usize];
                if k != u32::MAX {
                    acc += v * x[k as usize];
                }
            }
            *out += acc;
        }
    }

    /// MatrixMarket coordinate output for debugging.
    pub fn write_matrix_market<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "%%MatrixMarket matrix coordinate real general")?;
        writeln!(w, "{} {} {}", self.dim, self.dim, self.nnz())?;
        for r in 0..self.dim {
            let (cols, vals) = self.row(r);
            for (c, v) in cols.iter().zip(vals) {
                writeln!(w, "{} {} {v:e}", r + 1, c + 1)?;
            }
        }
        Ok(())
    }

    pub fn check_dim(&self, len: usize) -> Result<()> {
        if len != self.dim {
            return Err(Error::DimensionMismatch { got: len, expected: self.dim });
        }
        Ok(())
    }
}
