//! Additive Schwarz preconditioners on the inactive node set.
//!
//! The grid is split into √J×√J blocks of patches; each block is extended by
//! an overlap margin (one patch, or one block width) and its nodes form one
//! subdomain. The one-level preconditioner sums exact subdomain solves,
//! B = Σ_j I_j A_j⁻¹ I_jᵗ; the two-level variant adds an exact solve on a
//! coarse partition of unity space injected by nodal interpolation,
//! R₀ᵀ(R₀ÃR₀ᵀ)⁻¹R₀.
//!
//! Subdomain matrices are principal submatrices of the full stiffness
//! operator, so their factors are keyed by global node lists and stay valid
//! while the constrained set changes; identical subdomains share one factor
//! with a multiplicity weight.

use std::collections::HashMap;
use std::sync::Arc;

use rayon::prelude::*;

use crate::krylov::LinearOperator;
use crate::pum::PatchGrid;
use crate::skyline::SkylineCholesky;
use crate::sparse::SparseMatrix;
use crate::{Error, Result};

/// Overlap width between neighboring subdomains, in patch layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Overlap {
    /// One patch layer: δ shrinks with h at fixed J.
    Small,
    /// One block width: δ stays proportional to the subdomain size H.
    Generous,
}

/// Preconditioner selection carried through the solver layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrecondSpec {
    None,
    OneLevel { j: u32, overlap: Overlap },
    TwoLevel { j: u32, overlap: Overlap },
}

/// One extended block: its patch ranges and the inactive nodes inside.
#[derive(Debug, Clone)]
pub struct Subdomain {
    /// Extended patch range per axis, half-open.
    pub patch_range: [(usize, usize); 2],
    /// Global node indices, ordered so the shorter axis varies fastest.
    pub global_nodes: Vec<u32>,
    /// Positions of those nodes in the inactive list.
    pub reduced_nodes: Vec<u32>,
}

/// Block decomposition of the inactive nodes for a fixed level and J.
#[derive(Debug, Clone)]
pub struct SubdomainDecomposition {
    pub j: u32,
    pub sqrt_j: usize,
    pub overlap: Overlap,
    /// Number of inactive nodes; the dimension the preconditioner acts on.
    pub reduced_dim: usize,
    /// Subdomain side length H per axis, before extension.
    pub subdomain_side: [f64; 2],
    /// Overlap width δ per axis (extension in patch widths).
    pub overlap_width: [f64; 2],
    pub subdomains: Vec<Subdomain>,
}

/// Restrict a full nodal vector to the inactive node list.
pub fn truncate(values: &[f64], inactive: &[u32]) -> Vec<f64> {
    inactive.iter().map(|&g| values[g as usize]).collect()
}

/// Coarse level L with 2^L = √J; the coarse space exists only for J ≥ 4.
pub fn coarse_level(j: u32) -> Result<u32> {
    let sqrt_j = integer_sqrt(j)?;
    if sqrt_j < 2 || !sqrt_j.is_power_of_two() {
        return Err(Error::NoCoarseLevel(j));
    }
    Ok(sqrt_j.trailing_zeros())
}

fn integer_sqrt(j: u32) -> Result<usize> {
    let s = (j as f64).sqrt().round() as usize;
    if s * s != j as usize || j == 0 {
        return Err(Error::NotPerfectSquare(j));
    }
    Ok(s)
}

/// Interior axis node range [lo, hi] covered by the half-open patch range.
fn axis_node_range(patches: (usize, usize), m: usize) -> (usize, usize) {
    ((3 * patches.0).max(1), (3 * patches.1 - 1).min(m))
}

/// Split the level's patches into √J×√J blocks, extend each by the overlap
/// margin, and collect the inactive nodes of every extended block.
pub fn partition_subdomains(
    grid: &PatchGrid,
    inactive: &[u32],
    j: u32,
    overlap: Overlap,
) -> Result<SubdomainDecomposition> {
    let sqrt_j = integer_sqrt(j)?;
    let n = grid.n;
    if sqrt_j > n {
        return Err(Error::TooManySubdomains { sqrt_j, n });
    }
    debug_assert!(inactive.windows(2).all(|w| w[0] < w[1]), "inactive list must be sorted");

    let ext = match overlap {
        Overlap::Small => 1,
        Overlap::Generous => (n / sqrt_j).max(1),
    };
    let m = grid.nodes_per_axis();
    let block = |b: usize| (b * n / sqrt_j, (b + 1) * n / sqrt_j);
    let extend = |r: (usize, usize)| (r.0.saturating_sub(ext), (r.1 + ext).min(n));

    let mut subdomains = Vec::with_capacity(sqrt_j * sqrt_j);
    for by in 0..sqrt_j {
        for bx in 0..sqrt_j {
            let px = extend(block(bx));
            let py = extend(block(by));
            let (xlo, xhi) = axis_node_range(px, m);
            let (ylo, yhi) = axis_node_range(py, m);
            // Order local nodes with the shorter axis fastest; the skyline
            // envelope of the subdomain factor then spans the smaller width.
            let x_fast = xhi - xlo <= yhi - ylo;
            let mut global_nodes = Vec::new();
            let mut reduced_nodes = Vec::new();
            let (outer, inner) = if x_fast { ((ylo, yhi), (xlo, xhi)) } else { ((xlo, xhi), (ylo, yhi)) };
            for a in outer.0..=outer.1 {
                for b in inner.0..=inner.1 {
                    let (kx, ky) = if x_fast { (b, a) } else { (a, b) };
                    let g = grid.node_index(kx, ky) as u32;
                    if let Ok(pos) = inactive.binary_search(&g) {
                        global_nodes.push(g);
                        reduced_nodes.push(pos as u32);
                    }
                }
            }
            subdomains.push(Subdomain {
                patch_range: [px, py],
                global_nodes,
                reduced_nodes,
            });
        }
    }

    let patch_w = [grid.domain.side(0) / n as f64, grid.domain.side(1) / n as f64];
    Ok(SubdomainDecomposition {
        j,
        sqrt_j,
        overlap,
        reduced_dim: inactive.len(),
        subdomain_side: [
            grid.domain.side(0) / sqrt_j as f64,
            grid.domain.side(1) / sqrt_j as f64,
        ],
        overlap_width: [ext as f64 * patch_w[0], ext as f64 * patch_w[1]],
        subdomains,
    })
}

/// Cache of subdomain factors keyed by global node lists. Entries are tied
/// to one assembled operator; callers scope a cache to a single matrix.
#[derive(Default)]
pub struct FactorCache {
    factors: HashMap<Box<[u32]>, Arc<SkylineCholesky>>,
}

impl FactorCache {
    pub fn new() -> FactorCache {
        FactorCache::default()
    }

    pub fn len(&self) -> usize {
        self.factors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.factors.is_empty()
    }

    fn get_or_factor(
        &mut self,
        a: &SparseMatrix,
        keep: &[u32],
        context: &'static str,
    ) -> Result<Arc<SkylineCholesky>> {
        if let Some(f) = self.factors.get(keep) {
            return Ok(f.clone());
        }
        let factor = Arc::new(SkylineCholesky::factor_submatrix(a, keep, context)?);
        self.factors.insert(keep.into(), factor.clone());
        Ok(factor)
    }

    /// Evict factors for node lists outside the upcoming build. Freeing the
    /// stale generation before new factorizations keeps the peak footprint
    /// at one build's worth; generous-overlap subdomains run to hundreds of
    /// MB per factor.
    fn retain<'a>(&mut self, keys: impl Iterator<Item = &'a [u32]>) {
        let next: std::collections::HashSet<&[u32]> = keys.collect();
        self.factors.retain(|k, _| next.contains(k.as_ref()));
    }
}

struct SubdomainTerm {
    factor: Arc<SkylineCholesky>,
    reduced: Vec<u32>,
    /// Multiplicity: number of identical subdomains sharing this factor.
    weight: f64,
}

struct CoarseTerm {
    restriction: CoarseRestriction,
    factor: SkylineCholesky,
}

/// Additive Schwarz operator over the inactive nodes.
pub struct SchwarzPreconditioner {
    dim: usize,
    terms: Vec<SubdomainTerm>,
    coarse: Option<CoarseTerm>,
    parallel: bool,
}

/// Nodal interpolation from a coarse level into the inactive fine nodes.
///
/// Row q holds the coarse basis function of coarse node q evaluated at the
/// inactive fine node coordinates; coarse nodes whose row is empty are
/// dropped.
pub struct CoarseRestriction {
    fine_dim: usize,
    /// Kept coarse node indices, ascending.
    pub coarse_nodes: Vec<u32>,
    rows: Vec<Vec<(u32, f64)>>,
    pub dropped: usize,
}

impl CoarseRestriction {
    /// A restriction with no coarse space at all; two-level construction
    /// degrades to one-level with it.
    pub fn empty(fine_dim: usize) -> CoarseRestriction {
        CoarseRestriction { fine_dim, coarse_nodes: Vec::new(), rows: Vec::new(), dropped: 0 }
    }

    pub fn rows(&self) -> usize {
        self.rows.len()
    }

    pub fn fine_dim(&self) -> usize {
        self.fine_dim
    }

    pub fn row(&self, i: usize) -> &[(u32, f64)] {
        &self.rows[i]
    }

    /// R₀ r.
    pub fn apply(&self, r: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|row| row.iter().map(|&(c, v)| v * r[c as usize]).sum())
            .collect()
    }

    /// out += R₀ᵀ y.
    pub fn apply_transpose_add(&self, y: &[f64], out: &mut [f64]) {
        for (row, &yi) in self.rows.iter().zip(y) {
            for &(c, v) in row {
                out[c as usize] += v * yi;
            }
        }
    }
}

/// Build R₀ for a coarse level ≤ the fine level (equal levels give the
/// identity on the inactive set).
pub fn build_coarse_restriction(
    fine: &PatchGrid,
    coarse: &PatchGrid,
    inactive: &[u32],
) -> Result<CoarseRestriction> {
    if coarse.level > fine.level {
        return Err(Error::CoarseNotCoarser { coarse: coarse.level, fine: fine.level });
    }
    let mc = coarse.nodes_per_axis();
    // Transposed transfer tables: per coarse interior axis index (0-based),
    // the fine interior axis indices where its factor is nonzero.
    let mut rx: Vec<Vec<(u32, f64)>> = vec![Vec::new(); mc];
    let mut ry: Vec<Vec<(u32, f64)>> = vec![Vec::new(); mc];
    for (axis, rev) in [(0, &mut rx), (1, &mut ry)] {
        let table = fine.axis_transfer(coarse, axis);
        for (kf0, row) in table.iter().enumerate() {
            for &(q, v) in row {
                rev[q as usize - 1].push((kf0 as u32 + 1, v));
            }
        }
    }

    let mut reduced_of = vec![u32::MAX; fine.node_count()];
    for (pos, &g) in inactive.iter().enumerate() {
        reduced_of[g as usize] = pos as u32;
    }

    let mut coarse_nodes = Vec::new();
    let mut rows = Vec::new();
    let mut dropped = 0usize;
    for qy in 1..=mc {
        for qx in 1..=mc {
            let mut row = Vec::new();
            for &(kfy, vy) in &ry[qy - 1] {
                for &(kfx, vx) in &rx[qx - 1] {
                    let g = fine.node_index(kfx as usize, kfy as usize);
                    let pos = reduced_of[g];
                    if pos != u32::MAX {
                        row.push((pos, vx * vy));
                    }
                }
            }
            if row.is_empty() {
                dropped += 1;
            } else {
                coarse_nodes.push(coarse.node_index(qx, qy) as u32);
                rows.push(row);
            }
        }
    }
    if dropped > 0 {
        log::warn!("coarse restriction: dropped {dropped} coarse nodes with no inactive support");
    }
    Ok(CoarseRestriction { fine_dim: inactive.len(), coarse_nodes, rows, dropped })
}

fn build_terms(
    a_full: &SparseMatrix,
    decomp: &SubdomainDecomposition,
    cache: &mut FactorCache,
) -> Result<Vec<SubdomainTerm>> {
    cache.retain(decomp.subdomains.iter().map(|s| s.global_nodes.as_slice()));
    let mut terms: Vec<SubdomainTerm> = Vec::new();
    let mut seen: HashMap<&[u32], usize> = HashMap::new();
    for sub in &decomp.subdomains {
        if sub.global_nodes.is_empty() {
            continue;
        }
        if let Some(&t) = seen.get(sub.global_nodes.as_slice()) {
            terms[t].weight += 1.0;
            continue;
        }
        let factor = cache.get_or_factor(a_full, &sub.global_nodes, "subdomain solve")?;
        seen.insert(sub.global_nodes.as_slice(), terms.len());
        terms.push(SubdomainTerm { factor, reduced: sub.reduced_nodes.clone(), weight: 1.0 });
    }
    Ok(terms)
}

/// One-level preconditioner B = Σ_j I_j A_j⁻¹ I_jᵗ.
pub fn build_one_level(
    a_full: &SparseMatrix,
    decomp: &SubdomainDecomposition,
    cache: &mut FactorCache,
    parallel: bool,
) -> Result<SchwarzPreconditioner> {
    let terms = build_terms(a_full, decomp, cache)?;
    Ok(SchwarzPreconditioner { dim: decomp.reduced_dim, terms, coarse: None, parallel })
}

/// Two-level preconditioner: the one-level sum plus R₀ᵀ(R₀ÃR₀ᵀ)⁻¹R₀.
///
/// An empty restriction (every coarse node dropped) degenerates to the
/// one-level operator. Truncation can leave the surviving rows linearly
/// dependent (several coarse functions alive on the same few inactive
/// nodes), so A₀ is factored semidefinitely: redundant rows are eliminated,
/// which leaves the span of the coarse space and hence the preconditioner
/// unchanged.
pub fn build_two_level(
    a_full: &SparseMatrix,
    a_reduced: &SparseMatrix,
    decomp: &SubdomainDecomposition,
    r0: CoarseRestriction,
    cache: &mut FactorCache,
    parallel: bool,
) -> Result<SchwarzPreconditioner> {
    let terms = build_terms(a_full, decomp, cache)?;
    let coarse = if r0.rows() == 0 {
        log::warn!("coarse restriction is empty; two-level operator equals one-level");
        None
    } else {
        let a0 = coarse_operator(a_reduced, &r0);
        let factor = SkylineCholesky::factor_psd(&a0, "coarse solve")?;
        if !factor.dropped_rows().is_empty() {
            log::debug!(
                "coarse operator: eliminated {} redundant rows of {}",
                factor.dropped_rows().len(),
                factor.dim()
            );
        }
        Some(CoarseTerm { restriction: r0, factor })
    };
    Ok(SchwarzPreconditioner { dim: decomp.reduced_dim, terms, coarse, parallel })
}

/// Assemble A₀ = R₀ Ã R₀ᵀ. Row i is formed by pushing Ã through the sparse
/// row t_i and dotting against every restriction row that meets its support.
fn coarse_operator(a_reduced: &SparseMatrix, r0: &CoarseRestriction) -> SparseMatrix {
    let kept = r0.rows();
    let rdim = a_reduced.dim();
    // Reverse index: inactive node -> restriction rows touching it.
    let mut rev: Vec<Vec<u32>> = vec![Vec::new(); rdim];
    for i in 0..kept {
        for &(c, _) in r0.row(i) {
            rev[c as usize].push(i as u32);
        }
    }

    let mut z = vec![0.0; rdim];
    let mut touch_mark = vec![false; rdim];
    let mut touched: Vec<u32> = Vec::new();
    let mut cand_mark = vec![false; kept];
    let mut cands: Vec<u32> = Vec::new();
    let mut rows: Vec<Vec<(u32, f64)>> = Vec::with_capacity(kept);

    for i in 0..kept {
        for &(c, v) in r0.row(i) {
            let (cols, vals) = a_reduced.row(c as usize);
            for (&d, &a) in cols.iter().zip(vals) {
                let d = d as usize;
                if !touch_mark[d] {
                    touch_mark[d] = true;
                    touched.push(d as u32);
                }
                z[d] += v * a;
            }
        }
        for &d in &touched {
            for &jrow in &rev[d as usize] {
                if !cand_mark[jrow as usize] {
                    cand_mark[jrow as usize] = true;
                    cands.push(jrow);
                }
            }
        }
        cands.sort_unstable();
        let row: Vec<(u32, f64)> = cands
            .iter()
            .map(|&jrow| {
                let val: f64 =
                    r0.row(jrow as usize).iter().map(|&(c, v)| v * z[c as usize]).sum();
                (jrow, val)
            })
            .collect();
        rows.push(row);
        for &d in &touched {
            z[d as usize] = 0.0;
            touch_mark[d as usize] = false;
        }
        touched.clear();
        for &jrow in &cands {
            cand_mark[jrow as usize] = false;
        }
        cands.clear();
    }

    SparseMatrix::from_rows(kept, |r, buf| {
        buf.append(&mut rows[r]);
    })
}

impl SchwarzPreconditioner {
    pub fn term_count(&self) -> usize {
        self.terms.len()
    }

    pub fn coarse_rows(&self) -> Option<usize> {
        self.coarse.as_ref().map(|c| c.restriction.rows())
    }
}

impl LinearOperator for SchwarzPreconditioner {
    fn dim(&self) -> usize {
        self.dim
    }

    fn apply(&self, r: &[f64], out: &mut [f64]) {
        let solve = |t: &SubdomainTerm| {
            let mut local: Vec<f64> =
                t.reduced.iter().map(|&i| r[i as usize]).collect();
            t.factor.solve_in_place(&mut local);
            local
        };
        // Local solves are independent; accumulation stays sequential in term
        // order so the result is identical under any thread count.
        let locals: Vec<Vec<f64>> = if self.parallel && self.terms.len() > 1 {
            self.terms.par_iter().map(solve).collect()
        } else {
            self.terms.iter().map(solve).collect()
        };
        out.fill(0.0);
        for (t, local) in self.terms.iter().zip(&locals) {
            if t.weight == 1.0 {
                for (&i, &v) in t.reduced.iter().zip(local) {
                    out[i as usize] += v;
                }
            } else {
                for (&i, &v) in t.reduced.iter().zip(local) {
                    out[i as usize] += t.weight * v;
                }
            }
        }
        if let Some(c) = &self.coarse {
            let mut yc = c.restriction.apply(r);
            c.factor.solve_in_place(&mut yc);
            c.restriction.apply_transpose_add(&yc, out);
        }
    }
}
