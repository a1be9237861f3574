//! Quadrature and assembly for a(w,v) = β∫ΔwΔv + ∫wv.
//!
//! The basis is separable, so the stiffness entries factor into
//! one-dimensional integrals per axis: with M(k,l) = ∫g_k g_l,
//! S(k,l) = ∫g_k″g_l″ and C(k,l) = ∫g_k″g_l,
//!
//!   A[p][q] = β(S_x M_y + C_x(px,qx)C_y(qy,py) + C_x(qx,px)C_y(py,qy)
//!             + M_x S_y) + M_x M_y.
//!
//! The one-dimensional integrals are computed by Gauss quadrature on cells
//! aligned with every flat-top/ramp breakpoint, where the integrands are
//! polynomials (1-D degree ≤ 10 on ramp cells, hence the order-6 default).
//! Load vector and objective use the full tensor quadrature mesh since f is
//! an arbitrary pointwise function.

use crate::pum::{Domain, PatchGrid};
use crate::sparse::SparseMatrix;
use crate::{Error, Result};

/// Problem coefficients: regularization weight, source, obstacle.
pub struct ProblemData {
    pub beta: f64,
    pub domain: Domain,
    f: Box<dyn Fn(f64, f64) -> f64 + Send + Sync>,
    psi: Box<dyn Fn(f64, f64) -> f64 + Send + Sync>,
}

impl ProblemData {
    /// The obstacle must be positive on the domain boundary (checked by
    /// sampling each edge) or the constrained problem is inconsistent with
    /// the homogeneous Dirichlet condition.
    pub fn new(
        beta: f64,
        domain: Domain,
        f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        psi: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Result<ProblemData> {
        assert!(beta > 0.0, "regularization weight must be positive");
        let samples = 257;
        for s in 0..samples {
            let t = s as f64 / (samples - 1) as f64;
            let x = domain.lower[0] + t * domain.side(0);
            let y = domain.lower[1] + t * domain.side(1);
            for (px, py) in [
                (x, domain.lower[1]),
                (x, domain.upper[1]),
                (domain.lower[0], y),
                (domain.upper[0], y),
            ] {
                let v = psi(px, py);
                if v <= 0.0 {
                    return Err(Error::ObstacleNotPositiveOnBoundary { value: v, x: px, y: py });
                }
            }
        }
        Ok(ProblemData { beta, domain, f: Box::new(f), psi: Box::new(psi) })
    }

    /// The model configuration used throughout the experiments: β = 0.1,
    /// ψ = 0.01, f = 10(sin(2π(x₁+0.5)) + (x₂+0.5)) on (-0.5, 0.5)².
    pub fn model_problem() -> ProblemData {
        ProblemData::new(
            0.1,
            Domain::unit_centered(),
            |x, y| 10.0 * ((2.0 * std::f64::consts::PI * (x + 0.5)).sin() + (y + 0.5)),
            |_, _| 0.01,
        )
        .expect("constant positive obstacle")
    }

    pub fn f(&self, x: f64, y: f64) -> f64 {
        (self.f)(x, y)
    }

    pub fn psi(&self, x: f64, y: f64) -> f64 {
        (self.psi)(x, y)
    }
}

/// Tensor quadrature mesh whose axis cells are the flat-top and ramp
/// intervals, so every assembled integrand is a per-cell polynomial.
pub struct QuadratureMesh {
    pub order: usize,
    /// Per axis: (lo, hi, first_patch, patch_count) for each cell.
    cells: [Vec<(f64, f64, u32, u32)>; 2],
    /// Gauss nodes and weights on [-1, 1].
    gauss: (Vec<f64>, Vec<f64>),
}

/// Default Gauss order; exact for every stiffness/mass integrand (max 1-D
/// polynomial degree 10 on ramp cells, and 6 points integrate degree 11).
pub const DEFAULT_QUADRATURE_ORDER: usize = 6;

/// Build the breakpoint-aligned quadrature mesh. `order` must be at least 5.
pub fn build_quadrature(grid: &PatchGrid, order: usize) -> QuadratureMesh {
    assert!(order >= 5, "quadrature order must be at least 5, got {order}");
    let cells = [axis_cells(grid, 0), axis_cells(grid, 1)];
    QuadratureMesh { order, cells, gauss: gauss_legendre(order) }
}

fn axis_cells(grid: &PatchGrid, axis: usize) -> Vec<(f64, f64, u32, u32)> {
    let ax = grid.axis(axis);
    let mut cells = Vec::with_capacity(2 * ax.n - 1);
    for i in 0..ax.n {
        cells.push((ax.nodes[3 * i], ax.nodes[3 * i + 2], i as u32, 1));
        if i + 1 < ax.n {
            cells.push((ax.nodes[3 * i + 2], ax.nodes[3 * i + 3], i as u32, 2));
        }
    }
    cells
}

impl QuadratureMesh {
    pub fn axis_cell_count(&self, axis: usize) -> usize {
        self.cells[axis].len()
    }

    pub fn cell_bounds(&self, axis: usize, cell: usize) -> (f64, f64) {
        let c = self.cells[axis][cell];
        (c.0, c.1)
    }

    /// Patches whose PU factor is nonzero on the open cell.
    pub fn cell_patches(&self, axis: usize, cell: usize) -> (usize, usize) {
        let c = self.cells[axis][cell];
        (c.2 as usize, c.3 as usize)
    }

    /// Mapped Gauss points and weights on one axis cell.
    pub fn points(&self, axis: usize, cell: usize) -> Vec<(f64, f64)> {
        let (lo, hi) = self.cell_bounds(axis, cell);
        let mid = 0.5 * (lo + hi);
        let half = 0.5 * (hi - lo);
        self.gauss
            .0
            .iter()
            .zip(&self.gauss.1)
            .map(|(xi, wi)| (mid + half * xi, half * wi))
            .collect()
    }

    /// Tensor quadrature of a pointwise function over the whole domain.
    pub fn integrate<F: Fn(f64, f64) -> f64>(&self, f: F) -> f64 {
        let mut total = 0.0;
        for cy in 0..self.axis_cell_count(1) {
            for (y, wy) in self.points(1, cy) {
                for cx in 0..self.axis_cell_count(0) {
                    for (x, wx) in self.points(0, cx) {
                        total += wx * wy * f(x, y);
                    }
                }
            }
        }
        total
    }

    fn check(&self, grid: &PatchGrid) -> Result<()> {
        let expected = 2 * grid.n - 1;
        for axis in 0..2 {
            if self.cells[axis].len() != expected {
                return Err(Error::InconsistentQuadrature {
                    quad: self.cells[axis].len(),
                    grid: expected,
                });
            }
        }
        Ok(())
    }
}

/// Gauss-Legendre nodes and weights on [-1, 1] by Newton iteration on the
/// Legendre polynomial.
fn gauss_legendre(order: usize) -> (Vec<f64>, Vec<f64>) {
    let n = order;
    let mut xs = vec![0.0; n];
    let mut ws = vec![0.0; n];
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-15 {
                let (p2, d2) = legendre(n, x);
                dp = d2;
                x -= p2 / d2;
                break;
            }
        }
        xs[i] = x;
        ws[i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    // Newton seeds run from +1 toward -1; store ascending.
    xs.reverse();
    ws.reverse();
    (xs, ws)
}

fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Banded storage for the one-dimensional integral tables; couplings reach
/// at most 5 indices to either side (one patch).
struct Band {
    data: Vec<f64>,
}

const HALF: usize = 5;
const WIDTH: usize = 2 * HALF + 1;

impl Band {
    fn new(size: usize) -> Band {
        Band { data: vec![0.0; size * WIDTH] }
    }

    #[inline]
    fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * WIDTH + (c + HALF - r)]
    }

    #[inline]
    fn add(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * WIDTH + (c + HALF - r)] += v;
    }
}

struct AxisTables {
    mass: Band,
    second: Band,
    mixed: Band,
}

impl AxisTables {
    /// Integral tables over the interior axis indices, shifted to 0-based.
    fn build(grid: &PatchGrid, quad: &QuadratureMesh, axis: usize) -> AxisTables {
        let ax = grid.axis(axis);
        let m = grid.nodes_per_axis();
        let mut mass = Band::new(m);
        let mut second = Band::new(m);
        let mut mixed = Band::new(m);
        let mut active: Vec<(usize, (f64, f64, f64))> = Vec::with_capacity(6);
        for cell in 0..quad.axis_cell_count(axis) {
            let (first, count) = quad.cell_patches(axis, cell);
            for (x, w) in quad.points(axis, cell) {
                active.clear();
                for k in 3 * first..3 * (first + count) {
                    if (1..=m).contains(&k) {
                        active.push((k - 1, ax.basis(k, x)));
                    }
                }
                for &(r, (vr, _, dr)) in &active {
                    for &(c, (vc, _, dc)) in &active {
                        // Grouped so the (r,c) and (c,r) slots accumulate
                        // bitwise identical terms.
                        mass.add(r, c, w * (vr * vc));
                        second.add(r, c, w * (dr * dc));
                        mixed.add(r, c, w * (dr * vc));
                    }
                }
            }
        }
        AxisTables { mass, second, mixed }
    }
}

/// Interior axis indices coupled to k: the nodes of patches adjacent to k's.
#[inline]
fn coupled_range(k: usize, m: usize) -> std::ops::RangeInclusive<usize> {
    let patch = k / 3;
    let lo = (3 * patch).saturating_sub(3).max(1);
    let hi = (3 * patch + 5).min(m);
    lo..=hi
}

/// Assemble β·(biharmonic part) + (mass part) with explicit weights.
///
/// The cross terms are grouped so the computed value is bitwise identical
/// under (p, q) exchange; the matrix is exactly symmetric.
pub fn assemble_weighted(
    grid: &PatchGrid,
    quad: &QuadratureMesh,
    biharm_weight: f64,
    mass_weight: f64,
) -> Result<SparseMatrix> {
    quad.check(grid)?;
    let m = grid.nodes_per_axis();
    let tx = AxisTables::build(grid, quad, 0);
    let ty = AxisTables::build(grid, quad, 1);
    Ok(SparseMatrix::from_rows(m * m, |p, buf| {
        let kx = p % m + 1;
        let ky = p / m + 1;
        for qy in coupled_range(ky, m) {
            let my = ty.mass.get(ky - 1, qy - 1);
            let sy = ty.second.get(ky - 1, qy - 1);
            let cy_pq = ty.mixed.get(ky - 1, qy - 1);
            let cy_qp = ty.mixed.get(qy - 1, ky - 1);
            let row_base = ((qy - 1) * m) as u32;
            for qx in coupled_range(kx, m) {
                let mx = tx.mass.get(kx - 1, qx - 1);
                let sx = tx.second.get(kx - 1, qx - 1);
                let cross = tx.mixed.get(kx - 1, qx - 1) * cy_qp
                    + tx.mixed.get(qx - 1, kx - 1) * cy_pq;
                let v = biharm_weight * ((sx * my + cross) + mx * sy) + mass_weight * (mx * my);
                buf.push((row_base + (qx - 1) as u32, v));
            }
        }
    }))
}

/// Stiffness operator of a(w,v) = β∫ΔwΔv + ∫wv over the interior nodes.
pub fn assemble_stiffness(
    grid: &PatchGrid,
    data: &ProblemData,
    quad: &QuadratureMesh,
) -> Result<SparseMatrix> {
    assemble_weighted(grid, quad, data.beta, 1.0)
}

/// Per-axis basis factor values at every quadrature point: [cell][point] →
/// list of (interior axis index, value).
fn axis_point_values(
    grid: &PatchGrid,
    quad: &QuadratureMesh,
    axis: usize,
) -> Vec<Vec<Vec<(u32, f64)>>> {
    let ax = grid.axis(axis);
    let m = grid.nodes_per_axis();
    (0..quad.axis_cell_count(axis))
        .map(|cell| {
            let (first, count) = quad.cell_patches(axis, cell);
            quad.points(axis, cell)
                .into_iter()
                .map(|(x, _)| {
                    let mut row = Vec::with_capacity(6);
                    for k in 3 * first..3 * (first + count) {
                        if (1..=m).contains(&k) {
                            row.push((k as u32, ax.basis(k, x).0));
                        }
                    }
                    row
                })
                .collect()
        })
        .collect()
}

/// Load vector b[p] = ∫ f b_p.
pub fn assemble_load(grid: &PatchGrid, data: &ProblemData, quad: &QuadratureMesh) -> Vec<f64> {
    let m = grid.nodes_per_axis();
    let fx = axis_point_values(grid, quad, 0);
    let fy = axis_point_values(grid, quad, 1);
    let mut b = vec![0.0; m * m];
    for cy in 0..quad.axis_cell_count(1) {
        let ypts = quad.points(1, cy);
        for (pj, &(y, wy)) in ypts.iter().enumerate() {
            for cx in 0..quad.axis_cell_count(0) {
                let xpts = quad.points(0, cx);
                for (pi, &(x, wx)) in xpts.iter().enumerate() {
                    let fv = wx * wy * data.f(x, y);
                    for &(ky, vy) in &fy[cy][pj] {
                        let row = (ky - 1) as usize * m;
                        let fv_y = fv * vy;
                        for &(kx, vx) in &fx[cx][pi] {
                            b[row + (kx - 1) as usize] += fv_y * vx;
                        }
                    }
                }
            }
        }
    }
    b
}

/// Obstacle values at the interior nodes; the constraint set compares nodal
/// values only, so the obstacle never passes through quadrature.
pub fn obstacle_vector(grid: &PatchGrid, data: &ProblemData) -> Vec<f64> {
    grid.interpolate(|x, y| data.psi(x, y))
}

/// Control value u(x) = -Δy_h(x) recovered from the state coefficients.
pub fn recover_control(grid: &PatchGrid, y: &[f64], x: [f64; 2]) -> f64 {
    -grid.evaluate_combination(y, x).laplacian
}

/// Objective J(y, -Δy) = ½∫(y-f)² + (β/2)∫(Δy)².
pub fn objective(grid: &PatchGrid, data: &ProblemData, quad: &QuadratureMesh, y: &[f64]) -> f64 {
    let mut tracking = 0.0;
    let mut control = 0.0;
    for cy in 0..quad.axis_cell_count(1) {
        for (py, wy) in quad.points(1, cy) {
            for cx in 0..quad.axis_cell_count(0) {
                for (px, wx) in quad.points(0, cx) {
                    let e = grid.evaluate_combination(y, [px, py]);
                    let w = wx * wy;
                    let d = e.value - data.f(px, py);
                    tracking += w * d * d;
                    control += w * e.laplacian * e.laplacian;
                }
            }
        }
    }
    0.5 * tracking + 0.5 * data.beta * control
}
