//! Envelope (skyline) Cholesky factorization.
//!
//! Subdomain matrices are principal submatrices of the stiffness operator on
//! index lists ordered lexicographically, so each row's nonzeros start a
//! bounded distance left of the diagonal and the factor fills only inside
//! that envelope. Generous-overlap subdomains reach ~20k unknowns at level 6;
//! the envelope keeps those factorizable in a few hundred MB where dense
//! storage would take several GB per subdomain.

use crate::sparse::SparseMatrix;
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct SkylineCholesky {
    n: usize,
    /// First stored (= first structurally nonzero) column of each row.
    first: Vec<u32>,
    /// Row i occupies data[row_start[i]..row_start[i+1]], columns first[i]..=i.
    row_start: Vec<usize>,
    data: Vec<f64>,
    /// Rows eliminated by the semidefinite factorization; empty in strict mode.
    dropped: Vec<u32>,
}

impl SkylineCholesky {
    /// Factor the principal submatrix of `a` on the index list `keep`
    /// (reindexed to 0..keep.len() in list order).
    pub fn factor_submatrix(
        a: &SparseMatrix,
        keep: &[u32],
        context: &'static str,
    ) -> Result<SkylineCholesky> {
        let mut fac = SkylineCholesky::build_envelope(a, keep);
        fac.factor_in_place(context, None)?;
        Ok(fac)
    }

    /// Factor a full matrix.
    pub fn factor(a: &SparseMatrix, context: &'static str) -> Result<SkylineCholesky> {
        let all: Vec<u32> = (0..a.dim() as u32).collect();
        SkylineCholesky::factor_submatrix(a, &all, context)
    }

    /// Factor a symmetric positive *semi*definite matrix, eliminating rows
    /// whose pivot falls below a relative tolerance. The solve then inverts
    /// the leading independent principal submatrix and returns zero on the
    /// eliminated coordinates. A pivot far below zero still errors: that is
    /// indefiniteness, not redundancy.
    pub fn factor_psd(a: &SparseMatrix, context: &'static str) -> Result<SkylineCholesky> {
        let all: Vec<u32> = (0..a.dim() as u32).collect();
        let n = all.len();
        let scale = (0..n).map(|i| a.get(i, i)).fold(0.0f64, f64::max);
        let mut fac = SkylineCholesky::build_envelope(a, &all);
        fac.factor_in_place(context, Some(scale))?;
        Ok(fac)
    }

    fn build_envelope(a: &SparseMatrix, keep: &[u32]) -> SkylineCholesky {
        let n = keep.len();
        let mut map = vec![u32::MAX; a.dim()];
        for (local, &g) in keep.iter().enumerate() {
            map[g as usize] = local as u32;
        }
        let mut first = vec![0u32; n];
        for (i, &g) in keep.iter().enumerate() {
            let (cols, _) = a.row(g as usize);
            let mut lo = i as u32;
            for &c in cols {
                let local = map[c as usize];
                if local != u32::MAX && local < lo {
                    lo = local;
                }
            }
            first[i] = lo;
        }
        let mut row_start = Vec::with_capacity(n + 1);
        row_start.push(0usize);
        for i in 0..n {
            row_start.push(row_start[i] + (i - first[i] as usize) + 1);
        }
        let mut data = vec![0.0; row_start[n]];
        for (i, &g) in keep.iter().enumerate() {
            let (cols, vals) = a.row(g as usize);
            let fi = first[i] as usize;
            for (c, v) in cols.iter().zip(vals) {
                let local = map[*c as usize];
                if local != u32::MAX && (local as usize) <= i {
                    data[row_start[i] + local as usize - fi] = *v;
                }
            }
        }
        SkylineCholesky { n, first, row_start, data, dropped: Vec::new() }
    }

    /// `psd_scale`: None for strict SPD factorization; Some(max diagonal)
    /// enables pivot elimination for redundant rows.
    fn factor_in_place(&mut self, context: &'static str, psd_scale: Option<f64>) -> Result<()> {
        let drop_below = psd_scale.map(|s| s * 1e-9);
        let hard_floor = psd_scale.map(|s| -s * 1e-5);
        let mut is_dropped = vec![false; if psd_scale.is_some() { self.n } else { 0 }];
        for i in 0..self.n {
            let fi = self.first[i] as usize;
            let (lower, upper) = self.data.split_at_mut(self.row_start[i]);
            let row_i = &mut upper[..(i - fi) + 1];

            for j in fi..i {
                if psd_scale.is_some() && is_dropped[j] {
                    row_i[j - fi] = 0.0;
                    continue;
                }
                let fj = self.first[j] as usize;
                let row_j = &lower[self.row_start[j]..self.row_start[j + 1]];
                let lo = fi.max(fj);
                let s: f64 = row_i[(lo - fi)..(j - fi)]
                    .iter()
                    .zip(&row_j[(lo - fj)..(j - fj)])
                    .map(|(a, b)| a * b)
                    .sum();
                row_i[j - fi] = (row_i[j - fi] - s) / row_j[j - fj];
            }

            let s: f64 = row_i[..i - fi].iter().map(|v| v * v).sum();
            let d = row_i[i - fi] - s;
            if let Some(tol) = drop_below {
                if !d.is_finite() || d < hard_floor.unwrap() {
                    return Err(Error::NotPositiveDefinite { context, pivot: d, row: i });
                }
                if d <= tol {
                    for v in row_i.iter_mut() {
                        *v = 0.0;
                    }
                    row_i[i - fi] = 1.0;
                    is_dropped[i] = true;
                    self.dropped.push(i as u32);
                    continue;
                }
            } else if d <= 0.0 || !d.is_finite() {
                return Err(Error::NotPositiveDefinite { context, pivot: d, row: i });
            }
            row_i[i - fi] = d.sqrt();
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Stored factor entries (envelope size).
    pub fn entries(&self) -> usize {
        self.data.len()
    }

    /// Rows the semidefinite factorization eliminated as redundant.
    pub fn dropped_rows(&self) -> &[u32] {
        &self.dropped
    }

    /// Solve L Lᵀ x = b in place. Eliminated coordinates come back zero.
    pub fn solve_in_place(&self, x: &mut [f64]) {
        assert_eq!(x.len(), self.n);
        for &r in &self.dropped {
            x[r as usize] = 0.0;
        }
        for i in 0..self.n {
            let fi = self.first[i] as usize;
            let row_i = &self.data[self.row_start[i]..self.row_start[i + 1]];
            let s: f64 = row_i[..i - fi].iter().zip(&x[fi..i]).map(|(l, v)| l * v).sum();
            x[i] = (x[i] - s) / row_i[i - fi];
        }
        for i in (0..self.n).rev() {
            let fi = self.first[i] as usize;
            let row_i = &self.data[self.row_start[i]..self.row_start[i + 1]];
            let xi = x[i] / row_i[i - fi];
            x[i] = xi;
            for (l, v) in row_i[..i - fi].iter().zip(&mut x[fi..i]) {
                *v -= l * xi;
            }
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}
