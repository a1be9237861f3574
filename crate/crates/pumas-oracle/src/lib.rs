//! Brute-force reference computations for the test suite: dense spectra of
//! preconditioned operators, an independent entrywise assembly path, and a
//! projected-gradient solver for the constrained minimization. Everything
//! here favors obviousness over speed and is compiled into tests only.

use nalgebra::{Cholesky, DMatrix, SymmetricEigen};

use pumas::assembly::{build_quadrature, ProblemData};
use pumas::krylov::LinearOperator;
use pumas::pdas::kkt_report;
use pumas::pum::PatchGrid;
use pumas::sparse::SparseMatrix;
use pumas::{Error, Result};

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    dim: usize,
    values: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(dim: usize) -> DenseMatrix {
        DenseMatrix { dim, values: vec![0.0; dim * dim] }
    }

    pub fn identity(dim: usize) -> DenseMatrix {
        let mut m = DenseMatrix::zeros(dim);
        for i in 0..dim {
            m.values[i * dim + i] = 1.0;
        }
        m
    }

    pub fn from_sparse(a: &SparseMatrix) -> DenseMatrix {
        let dim = a.dim();
        let mut m = DenseMatrix::zeros(dim);
        for r in 0..dim {
            let (cols, vals) = a.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                m.values[r * dim + c as usize] = v;
            }
        }
        m
    }

    /// Materialize any operator column by column.
    pub fn from_operator(op: &dyn LinearOperator) -> DenseMatrix {
        let dim = op.dim();
        let mut m = DenseMatrix::zeros(dim);
        let mut e = vec![0.0; dim];
        let mut col = vec![0.0; dim];
        for j in 0..dim {
            e[j] = 1.0;
            op.apply(&e, &mut col);
            e[j] = 0.0;
            for i in 0..dim {
                m.values[i * dim + j] = col[i];
            }
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.dim + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.values[r * self.dim + c] = v;
    }

    pub fn add(&mut self, r: usize, c: usize, v: f64) {
        self.values[r * self.dim + c] += v;
    }

    fn to_nalgebra(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.dim, self.dim, &self.values)
    }

    /// Extreme eigenvalues (min, max) of the symmetrized matrix.
    pub fn eigen_bounds(&self) -> (f64, f64) {
        let m = self.to_nalgebra();
        let sym = (&m + m.transpose()).scale(0.5);
        let eig = SymmetricEigen::new(sym);
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &v in eig.eigenvalues.iter() {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        (lo, hi)
    }
}

impl LinearOperator for DenseMatrix {
    fn dim(&self) -> usize {
        self.dim
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            let row = &self.values[i * self.dim..(i + 1) * self.dim];
            *o = row.iter().zip(x).map(|(a, b)| a * b).sum();
        }
    }
}

const CONDITION_CAP: usize = 2500;

/// Exact condition number of the preconditioned operator BÃ.
///
/// With Ã = LLᵀ the operator BÃ is similar to the symmetric LᵀBL, whose
/// extreme eigenvalues a dense symmetric eigensolver delivers directly.
pub fn dense_condition(apply_b: &dyn LinearOperator, a: &SparseMatrix) -> Result<f64> {
    let n = a.dim();
    if n > CONDITION_CAP {
        return Err(Error::DimensionMismatch { got: n, expected: CONDITION_CAP });
    }
    a.check_dim(apply_b.dim())?;
    let ad = DenseMatrix::from_sparse(a).to_nalgebra();
    let chol = Cholesky::new(ad).ok_or(Error::NotPositiveDefinite {
        context: "dense condition",
        pivot: 0.0,
        row: 0,
    })?;
    let l = chol.l();
    let bd = DenseMatrix::from_operator(apply_b).to_nalgebra();
    let c = l.transpose() * bd * &l;
    let sym = (&c + c.transpose()).scale(0.5);
    let eig = SymmetricEigen::new(sym);
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in eig.eigenvalues.iter() {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if lo <= 0.0 {
        return Err(Error::Indefinite { iteration: 0, quantity: "eigenvalue of LᵀBL", value: lo });
    }
    Ok(hi / lo)
}

/// Entrywise dense assembly of β∫Δb_pΔb_q + ∫b_p b_q by direct quadrature,
/// sharing nothing with the banded tensor-product path.
pub fn dense_assemble(grid: &PatchGrid, data: &ProblemData, order: usize) -> DenseMatrix {
    let quad = build_quadrature(grid, order);
    let dim = grid.node_count();
    let mut a = DenseMatrix::zeros(dim);
    let mut vals = vec![0.0; dim];
    let mut laps = vec![0.0; dim];
    for cy in 0..quad.axis_cell_count(1) {
        for (y, wy) in quad.points(1, cy) {
            for cx in 0..quad.axis_cell_count(0) {
                for (x, wx) in quad.points(0, cx) {
                    let w = wx * wy;
                    for p in 0..dim {
                        let e = grid.evaluate_basis(p, [x, y]).expect("node in range");
                        vals[p] = e.value;
                        laps[p] = e.laplacian;
                    }
                    for p in 0..dim {
                        if vals[p] == 0.0 && laps[p] == 0.0 {
                            continue;
                        }
                        for q in 0..dim {
                            a.add(
                                p,
                                q,
                                w * (data.beta * laps[p] * laps[q] + vals[p] * vals[q]),
                            );
                        }
                    }
                }
            }
        }
    }
    a
}

const VI_CAP: usize = 400;
const VI_BUDGET: usize = 1_000_000;

fn largest_eigenvalue(a: &DenseMatrix) -> f64 {
    let n = a.dim();
    let mut v = vec![1.0 / (n as f64).sqrt(); n];
    let mut av = vec![0.0; n];
    let mut lambda = 1.0;
    for _ in 0..300 {
        a.apply(&v, &mut av);
        let norm = av.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 1.0;
        }
        lambda = norm;
        for (vi, &ai) in v.iter_mut().zip(&av) {
            *vi = ai / norm;
        }
    }
    lambda
}

/// Equality-constrained polish: pin y = ψ on `active`, solve the rest dense,
/// recover λ, and report the KKT defects.
fn polish(
    a: &DenseMatrix,
    b: &[f64],
    psi: &[f64],
    active: &[bool],
) -> Option<(Vec<f64>, Vec<f64>)> {
    let n = a.dim();
    let inactive: Vec<usize> = (0..n).filter(|&i| !active[i]).collect();
    let m = inactive.len();
    let mut y = psi.to_vec();
    if m > 0 {
        let mut sub = DMatrix::zeros(m, m);
        let mut rhs = nalgebra::DVector::zeros(m);
        for (i, &gi) in inactive.iter().enumerate() {
            let mut r = b[gi];
            for (j, &gj) in inactive.iter().enumerate() {
                sub[(i, j)] = a.get(gi, gj);
            }
            for gj in 0..n {
                if active[gj] {
                    r -= a.get(gi, gj) * psi[gj];
                }
            }
            rhs[i] = r;
        }
        let sol = Cholesky::new(sub)?.solve(&rhs);
        for (i, &gi) in inactive.iter().enumerate() {
            y[gi] = sol[i];
        }
    }
    let mut ay = vec![0.0; n];
    a.apply(&y, &mut ay);
    let mut lambda = vec![0.0; n];
    for i in 0..n {
        if active[i] {
            lambda[i] = b[i] - ay[i];
        }
    }
    Some((y, lambda))
}

/// Reference solver for min ½vᵀAv − bᵀv subject to v ≤ ψ.
///
/// Projected gradient with a slowly diminishing step carries the iterate to
/// the solution's neighborhood; periodically the touching set is polished by
/// an equality-constrained dense solve and accepted once the first-order
/// conditions hold to 1e−10.
pub fn reference_vi_solve(a: &DenseMatrix, b: &[f64], psi: &[f64]) -> Result<Vec<f64>> {
    let n = a.dim();
    if n > VI_CAP {
        return Err(Error::DimensionMismatch { got: n, expected: VI_CAP });
    }
    assert_eq!(b.len(), n);
    assert_eq!(psi.len(), n);

    let step0 = 1.0 / largest_eigenvalue(a);
    let rhs_norm = b.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    let tol = 1e-10;

    let mut x: Vec<f64> = psi.iter().map(|&p| p.min(0.0)).collect();
    let mut g = vec![0.0; n];
    let mut last_defect = f64::INFINITY;
    for k in 0..VI_BUDGET {
        a.apply(&x, &mut g);
        for (gi, &bi) in g.iter_mut().zip(b) {
            *gi -= bi;
        }
        let step = step0 / (1.0 + 1e-7 * k as f64);
        for i in 0..n {
            x[i] = (x[i] - step * g[i]).min(psi[i]);
        }
        if k % 1000 == 999 || k + 1 == VI_BUDGET {
            let scale = (rhs_norm.max(1.0)) * 1e-9;
            let active: Vec<bool> =
                (0..n).map(|i| x[i] >= psi[i] - scale.min(1e-9)).collect();
            if let Some((y, lambda)) = polish(a, b, psi, &active) {
                let kkt = kkt_report(a, b, psi, &y, &lambda);
                if kkt.satisfied(rhs_norm, tol) {
                    return Ok(y);
                }
                last_defect = kkt.residual_inf.max(kkt.complementarity);
            }
        }
    }
    Err(Error::InnerSolveDiverged { iterations: VI_BUDGET, residual: last_defect })
}
