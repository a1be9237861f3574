//! Primal-dual active set iteration for the nodally constrained system.
//!
//! The discrete problem is Ay + λ = b, y ≤ ψ, λ ≥ 0, λᵗ(y - ψ) = 0 with the
//! constraint enforced at the interior nodes. Each outer iteration guesses
//! the active set from λ + c(y - ψ) > 0, pins y = ψ there, solves the
//! remaining symmetric positive definite system by preconditioned conjugate
//! gradients, and recovers λ = b - Ay on the active set. The iteration stops
//! when the guessed set reproduces itself.

use crate::krylov::{pcg, LinearOperator, SolveReport};
use crate::pum::PatchGrid;
use crate::schwarz::{self, FactorCache, PrecondSpec, SchwarzPreconditioner};
use crate::sparse::SparseMatrix;
use crate::{Error, Result};

/// Outer iteration cap; the exact-set stopping test is a finite-termination
/// criterion, so hitting this means the iteration is cycling.
pub const OUTER_CAP: usize = 100;

/// Primal and dual iterate with its active node set.
#[derive(Debug, Clone)]
pub struct ActiveState {
    /// State coefficients over all interior nodes.
    pub y: Vec<f64>,
    /// Multiplier over all interior nodes; zero off the active set.
    pub lambda: Vec<f64>,
    /// Active node indices, sorted.
    pub active: Vec<u32>,
}

impl ActiveState {
    /// Zero state with empty active set.
    pub fn cold(dim: usize) -> ActiveState {
        ActiveState { y: vec![0.0; dim], lambda: vec![0.0; dim], active: Vec::new() }
    }
}

/// Active set predicted from an iterate: nodes with λ + c(y - ψ) strictly
/// positive.
pub fn predict_active(y: &[f64], lambda: &[f64], psi: &[f64], c: f64) -> Vec<u32> {
    let mut active = Vec::new();
    for p in 0..y.len() {
        if lambda[p] + c * (y[p] - psi[p]) > 0.0 {
            active.push(p as u32);
        }
    }
    active
}

/// The inactive-block system: Ã y_I = b_I - A[I×𝔄] ψ_𝔄.
pub struct ReducedSystem {
    /// Inactive node indices, sorted; the reduced unknowns in order.
    pub inactive: Vec<u32>,
    pub matrix: SparseMatrix,
    pub rhs: Vec<f64>,
}

pub fn reduced_system(
    a: &SparseMatrix,
    b: &[f64],
    psi: &[f64],
    active: &[u32],
) -> ReducedSystem {
    let dim = a.dim();
    let mut is_active = vec![false; dim];
    for &p in active {
        is_active[p as usize] = true;
    }
    let inactive: Vec<u32> = (0..dim as u32).filter(|&p| !is_active[p as usize]).collect();

    let matrix = a.principal_submatrix(&inactive);
    let mut rhs = schwarz::truncate(b, &inactive);
    // Subtract the active columns: position map and negated obstacle values.
    let mut active_pos = vec![u32::MAX; dim];
    let mut neg_psi = Vec::with_capacity(active.len());
    for (k, &p) in active.iter().enumerate() {
        active_pos[p as usize] = k as u32;
        neg_psi.push(-psi[p as usize]);
    }
    a.scatter_product(&inactive, &active_pos, &neg_psi, &mut rhs);
    ReducedSystem { inactive, matrix, rhs }
}

/// λ = b - Ay on the active set, zero elsewhere.
pub fn multiplier_update(a: &SparseMatrix, b: &[f64], y: &[f64], active: &[u32]) -> Vec<f64> {
    let ay = a.matvec_alloc(y);
    let mut lambda = vec![0.0; y.len()];
    for &p in active {
        let p = p as usize;
        lambda[p] = b[p] - ay[p];
    }
    lambda
}

/// Worst-case defects of the first-order conditions at (y, λ).
#[derive(Debug, Clone, Copy)]
pub struct KktReport {
    /// max_p |b - Ay - λ|.
    pub residual_inf: f64,
    /// max_p (y - ψ), clamped at zero.
    pub violation: f64,
    /// min_p λ; negative values break dual feasibility.
    pub min_multiplier: f64,
    /// max_p |λ (y - ψ)|.
    pub complementarity: f64,
}

impl KktReport {
    /// All four conditions within tol, the equation and complementarity
    /// defects measured relative to the data scale.
    pub fn satisfied(&self, rhs_norm: f64, tol: f64) -> bool {
        let scale = rhs_norm.max(1.0);
        self.residual_inf <= tol * scale
            && self.violation <= tol
            && self.min_multiplier >= -tol * scale
            && self.complementarity <= tol * scale
    }
}

pub fn kkt_report(
    a: &dyn LinearOperator,
    b: &[f64],
    psi: &[f64],
    y: &[f64],
    lambda: &[f64],
) -> KktReport {
    let mut ay = vec![0.0; y.len()];
    a.apply(y, &mut ay);
    let mut residual_inf = 0.0f64;
    let mut violation = 0.0f64;
    let mut min_multiplier = f64::INFINITY;
    let mut complementarity = 0.0f64;
    for p in 0..y.len() {
        residual_inf = residual_inf.max((b[p] - ay[p] - lambda[p]).abs());
        violation = violation.max(y[p] - psi[p]);
        min_multiplier = min_multiplier.min(lambda[p]);
        complementarity = complementarity.max((lambda[p] * (y[p] - psi[p])).abs());
    }
    KktReport { residual_inf, violation: violation.max(0.0), min_multiplier, complementarity }
}

/// Inner-solver configuration shared across the outer iterations.
pub struct InnerConfig<'a> {
    pub grid: &'a PatchGrid,
    pub precond: PrecondSpec,
    /// Relative tolerance on ‖B r‖₂ against ‖rhs‖₂.
    pub tol: f64,
    /// Conjugate gradient cap; defaults to 20 × the reduced dimension.
    pub max_iter: Option<usize>,
    pub parallel: bool,
    pub cache: &'a mut FactorCache,
}

/// One outer iteration: the size of the active set it solved with and the
/// inner solve outcome.
#[derive(Debug, Clone)]
pub struct IterationRecord {
    pub active_count: usize,
    pub report: SolveReport,
}

fn build_preconditioner(
    a: &SparseMatrix,
    sys: &ReducedSystem,
    coarse: Option<&PatchGrid>,
    inner: &mut InnerConfig<'_>,
) -> Result<Option<SchwarzPreconditioner>> {
    match inner.precond {
        PrecondSpec::None => Ok(None),
        PrecondSpec::OneLevel { j, overlap } => {
            let decomp = schwarz::partition_subdomains(inner.grid, &sys.inactive, j, overlap)?;
            Ok(Some(schwarz::build_one_level(a, &decomp, inner.cache, inner.parallel)?))
        }
        PrecondSpec::TwoLevel { j, overlap } => {
            let decomp = schwarz::partition_subdomains(inner.grid, &sys.inactive, j, overlap)?;
            let r0 = schwarz::build_coarse_restriction(
                inner.grid,
                coarse.expect("coarse grid prepared for two-level solves"),
                &sys.inactive,
            )?;
            Ok(Some(schwarz::build_two_level(
                a,
                &sys.matrix,
                &decomp,
                r0,
                inner.cache,
                inner.parallel,
            )?))
        }
    }
}

/// Run the active-set iteration to its fixed point.
///
/// `initial` supplies the warm start: the active set is predicted from it
/// and its state restricts to the conjugate gradient starting guess.
pub fn pdas_solve(
    a: &SparseMatrix,
    b: &[f64],
    psi: &[f64],
    c: f64,
    initial: &ActiveState,
    inner: &mut InnerConfig<'_>,
) -> Result<(ActiveState, Vec<IterationRecord>)> {
    a.check_dim(b.len())?;
    a.check_dim(psi.len())?;
    a.check_dim(initial.y.len())?;
    assert!(c > 0.0, "active-set weight must be positive");

    let coarse_grid = match inner.precond {
        PrecondSpec::TwoLevel { j, .. } => {
            let level = schwarz::coarse_level(j)?;
            if level >= inner.grid.level {
                return Err(Error::CoarseNotCoarser { coarse: level, fine: inner.grid.level });
            }
            Some(PatchGrid::build(level, inner.grid.domain)?)
        }
        _ => None,
    };

    let mut active = predict_active(&initial.y, &initial.lambda, psi, c);
    let mut y = initial.y.clone();
    let mut records = Vec::new();
    let mut prev_count = active.len();

    for _ in 0..OUTER_CAP {
        let sys = reduced_system(a, b, psi, &active);
        if sys.inactive.is_empty() {
            // Fully active: the constrained solution is the obstacle itself
            // and no auxiliary system is solved, so nothing is recorded.
        } else {
            let precond = build_preconditioner(a, &sys, coarse_grid.as_ref(), inner)?;
            let precond_ref = precond.as_ref().map(|p| p as &dyn LinearOperator);
            let x0 = schwarz::truncate(&y, &sys.inactive);
            let max_iter = inner.max_iter.unwrap_or(20 * sys.inactive.len());
            let (sol, rep) = pcg(&sys.matrix, &sys.rhs, precond_ref, &x0, inner.tol, max_iter)?;
            if !rep.converged {
                return Err(Error::InnerSolveDiverged {
                    iterations: rep.iterations,
                    residual: rep.residual_norm,
                });
            }
            for (&p, &v) in sys.inactive.iter().zip(&sol) {
                y[p as usize] = v;
            }
            records.push(IterationRecord { active_count: active.len(), report: rep });
        }
        for &p in &active {
            y[p as usize] = psi[p as usize];
        }

        let lambda = multiplier_update(a, b, &y, &active);
        let next = predict_active(&y, &lambda, psi, c);
        if next == active {
            return Ok((ActiveState { y, lambda, active }, records));
        }
        prev_count = active.len();
        active = next;
    }

    Err(Error::OuterIterationCap { cap: OUTER_CAP, prev: prev_count, last: active.len() })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn diag(values: &[f64]) -> SparseMatrix {
        SparseMatrix::from_rows(values.len(), |r, buf| buf.push((r as u32, values[r])))
    }

    #[test]
    fn prediction_is_strict() {
        let y = [0.0, 1.0, 2.0];
        let lambda = [0.0, 0.0, 0.0];
        let psi = [1.0, 1.0, 1.0];
        assert_eq!(predict_active(&y, &lambda, &psi, 1.0), vec![2]);
    }

    #[test]
    fn reduced_rhs_subtracts_active_columns() {
        // [2 1; 1 3] y = [5, 7], node 1 active at ψ = 1 → reduced: 2 y0 = 5 - 1.
        let a = SparseMatrix::from_rows(2, |r, buf| {
            if r == 0 {
                buf.push((0, 2.0));
                buf.push((1, 1.0));
            } else {
                buf.push((0, 1.0));
                buf.push((1, 3.0));
            }
        });
        let sys = reduced_system(&a, &[5.0, 7.0], &[10.0, 1.0], &[1]);
        assert_eq!(sys.inactive, vec![0]);
        assert_eq!(sys.rhs, vec![4.0]);
        assert_eq!(sys.matrix.get(0, 0), 2.0);
    }

    #[test]
    fn fully_active_start_is_valid() {
        let a = diag(&[1.0, 1.0]);
        let b = [5.0, 5.0];
        let psi = [1.0, 1.0];
        let mut cache = FactorCache::new();
        let grid = PatchGrid::build(1, crate::pum::Domain::unit_centered()).unwrap();
        let mut inner = InnerConfig {
            grid: &grid,
            precond: PrecondSpec::None,
            tol: 1e-15,
            max_iter: None,
            parallel: false,
            cache: &mut cache,
        };
        // λ = b - Aψ = 4 > 0 keeps both nodes active from the first guess on.
        let start = ActiveState {
            y: psi.to_vec(),
            lambda: vec![4.0, 4.0],
            active: vec![0, 1],
        };
        let (state, records) = pdas_solve(&a, &b, &psi, 100.0, &start, &mut inner).unwrap();
        assert_eq!(state.y, psi.to_vec());
        assert_eq!(state.active, vec![0, 1]);
        // No auxiliary system was solved, so the trace is empty.
        assert!(records.is_empty());
        let kkt = kkt_report(&a, &b, &psi, &state.y, &state.lambda);
        assert!(kkt.satisfied(5.0, 1e-12));
    }

    #[test]
    fn unconstrained_problem_solves_in_one_pass() {
        let a = diag(&[2.0, 4.0]);
        let b = [2.0, 4.0];
        let psi = [10.0, 10.0];
        let mut cache = FactorCache::new();
        let grid = PatchGrid::build(1, crate::pum::Domain::unit_centered()).unwrap();
        let mut inner = InnerConfig {
            grid: &grid,
            precond: PrecondSpec::None,
            tol: 1e-15,
            max_iter: None,
            parallel: false,
            cache: &mut cache,
        };
        let (state, records) =
            pdas_solve(&a, &b, &psi, 100.0, &ActiveState::cold(2), &mut inner).unwrap();
        assert_eq!(records.len(), 1);
        assert!(state.active.is_empty());
        assert!((state.y[0] - 1.0).abs() < 1e-14);
        assert!((state.y[1] - 1.0).abs() < 1e-14);
        assert_eq!(state.lambda, vec![0.0, 0.0]);
    }
}
