//! Flat-top partition of unity space on a rectangle.
//!
//! Per axis, level ℓ places n = 2^ℓ patches over the domain side using 3n
//! uniformly spaced nodes (endpoints included, spacing Δ = side/(3n-1)).
//! Patch i owns nodes 3i, 3i+1, 3i+2; its flat-top is [x_{3i}, x_{3i+2}] and
//! the gap to the next patch, of width Δ, carries a single cubic ramp
//! s(t) = 3t² - 2t³. The PU factor of a patch is exactly 1 on its flat-top,
//! exactly 0 outside its support [x_{3i-1}, x_{3i+3}], and C¹ everywhere;
//! boundary patches are not ramped at the domain boundary. Global basis
//! functions are tensor products of (PU factor × quadratic Lagrange), so they
//! are separable, C¹, and satisfy the Kronecker delta property at the
//! interior nodes. Interior nodes per axis: k = 1..3n-2; the two-dimensional
//! interior node set has (3n-2)² members ordered row-major by (y, x).

use crate::{Error, Result};

/// Axis-aligned rectangle with positive side lengths.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Domain {
    pub lower: [f64; 2],
    pub upper: [f64; 2],
}

impl Domain {
    pub fn new(lower: [f64; 2], upper: [f64; 2]) -> Self {
        assert!(
            lower[0] < upper[0] && lower[1] < upper[1],
            "domain corners must be ordered with positive side lengths"
        );
        Domain { lower, upper }
    }

    /// The square (-0.5, 0.5)².
    pub fn unit_centered() -> Self {
        Domain::new([-0.5, -0.5], [0.5, 0.5])
    }

    pub fn side(&self, axis: usize) -> f64 {
        self.upper[axis] - self.lower[axis]
    }

    pub fn area(&self) -> f64 {
        self.side(0) * self.side(1)
    }

    pub fn contains(&self, x: [f64; 2]) -> bool {
        (0..2).all(|a| x[a] >= self.lower[a] && x[a] <= self.upper[a])
    }
}

/// One-dimensional patch layout along a single axis.
#[derive(Debug, Clone)]
pub(crate) struct Axis {
    pub lo: f64,
    pub hi: f64,
    /// Patches along this axis.
    pub n: usize,
    /// Node spacing side/(3n-1).
    pub delta: f64,
    /// 3n node coordinates, endpoints exact.
    pub nodes: Vec<f64>,
    /// Gap g between patches g and g+1 starts at nodes[3g+2]; both neighbors
    /// evaluate the shared ramp parameter from the same stored values so the
    /// partition of unity sums to 1 up to a final rounding.
    gap_start: Vec<f64>,
    gap_inv: Vec<f64>,
}

/// Value and first/second derivative of a one-dimensional factor.
type Triple = (f64, f64, f64);

impl Axis {
    fn build(n: usize, lo: f64, hi: f64) -> Axis {
        let last = (3 * n - 1) as f64;
        let side = hi - lo;
        let nodes: Vec<f64> = (0..3 * n).map(|k| lo + (k as f64 / last) * side).collect();
        let delta = side / last;
        let gap_start: Vec<f64> = (0..n - 1).map(|g| nodes[3 * g + 2]).collect();
        let gap_inv: Vec<f64> = (0..n - 1)
            .map(|g| 1.0 / (nodes[3 * g + 3] - nodes[3 * g + 2]))
            .collect();
        Axis { lo, hi, n, delta, nodes, gap_start, gap_inv }
    }

    /// PU factor of patch i: (value, d/dx, d²/dx²).
    ///
    /// Branch boundaries are chosen so nodal values are exact: the flat-top is
    /// closed, the supports of the neighbors end openly at flat-top edges.
    pub fn pu(&self, i: usize, x: f64) -> Triple {
        let flat_lo = self.nodes[3 * i];
        let flat_hi = self.nodes[3 * i + 2];
        if i > 0 && x < flat_lo {
            if x < self.nodes[3 * i - 1] {
                return (0.0, 0.0, 0.0);
            }
            let g = i - 1;
            let inv = self.gap_inv[g];
            let t = (x - self.gap_start[g]) * inv;
            let (s, s1, s2) = ramp(t);
            (s, s1 * inv, s2 * inv * inv)
        } else if x <= flat_hi || i == self.n - 1 {
            (1.0, 0.0, 0.0)
        } else if x < self.nodes[3 * i + 3] {
            let inv = self.gap_inv[i];
            let t = (x - self.gap_start[i]) * inv;
            let (s, s1, s2) = ramp(t);
            (1.0 - s, -s1 * inv, -s2 * inv * inv)
        } else {
            (0.0, 0.0, 0.0)
        }
    }

    /// Quadratic Lagrange factor of node k over its patch's node triple.
    fn lagrange(&self, k: usize, x: f64) -> Triple {
        let i = k / 3;
        let (a, b, c) = (self.nodes[3 * i], self.nodes[3 * i + 1], self.nodes[3 * i + 2]);
        // Denominators built from the same differences as the numerators, so
        // the value at the node's own coordinate divides to exactly 1.
        match k % 3 {
            0 => {
                let den = (a - b) * (a - c);
                ((x - b) * (x - c) / den, (2.0 * x - b - c) / den, 2.0 / den)
            }
            1 => {
                let den = (b - a) * (b - c);
                ((x - a) * (x - c) / den, (2.0 * x - a - c) / den, 2.0 / den)
            }
            _ => {
                let den = (c - a) * (c - b);
                ((x - a) * (x - b) / den, (2.0 * x - a - b) / den, 2.0 / den)
            }
        }
    }

    /// One-dimensional basis factor g_k = φ_{k/3} · L_k: (value, d1, d2).
    pub fn basis(&self, k: usize, x: f64) -> Triple {
        let (w, w1, w2) = self.pu(k / 3, x);
        if w == 0.0 && w1 == 0.0 && w2 == 0.0 {
            return (0.0, 0.0, 0.0);
        }
        let (l, l1, l2) = self.lagrange(k, x);
        (w * l, w1 * l + w * l1, w2 * l + 2.0 * w1 * l1 + w * l2)
    }

    /// Patches whose support contains x: (first patch, count ∈ {1, 2}).
    pub fn cover(&self, x: f64) -> (usize, usize) {
        let last = (3 * self.n - 2) as f64;
        let u = (x - self.lo) / (self.hi - self.lo) * ((3 * self.n - 1) as f64);
        let j = (u.floor().clamp(0.0, last - 1.0)) as usize;
        if j % 3 == 2 {
            (j / 3, 2)
        } else {
            (j / 3, 1)
        }
    }
}

/// Cubic ramp s(t) = 3t² - 2t³ with s(0)=0, s(1)=1, s'(0)=s'(1)=0.
fn ramp(t: f64) -> Triple {
    (t * t * (3.0 - 2.0 * t), 6.0 * t * (1.0 - t), 6.0 - 12.0 * t)
}

/// Tensor-product patch layout for one refinement level.
#[derive(Debug, Clone)]
pub struct PatchGrid {
    pub level: u32,
    /// Patches per direction, 2^level.
    pub n: usize,
    pub domain: Domain,
    axes: [Axis; 2],
}

/// Evaluation of a partition of unity function at a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PuEval {
    pub value: f64,
    pub gradient: [f64; 2],
    /// Second derivatives (∂xx, ∂xy, ∂yy).
    pub second: [f64; 3],
}

/// Evaluation of a global basis function at a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BasisEval {
    pub value: f64,
    pub gradient: [f64; 2],
    pub laplacian: f64,
}

impl PatchGrid {
    /// Build the layout for refinement level 1 ≤ ℓ ≤ 30; above 30 the node
    /// count overflows the index arithmetic.
    pub fn build(level: u32, domain: Domain) -> Result<PatchGrid> {
        if !(1..=30).contains(&level) {
            return Err(Error::InvalidLevel(level as i64));
        }
        let n = 1usize << level;
        let axes = [
            Axis::build(n, domain.lower[0], domain.upper[0]),
            Axis::build(n, domain.lower[1], domain.upper[1]),
        ];
        Ok(PatchGrid { level, n, domain, axes })
    }

    /// Interior nodes per axis, 3n - 2.
    pub fn nodes_per_axis(&self) -> usize {
        3 * self.n - 2
    }

    /// Total interior nodes (3·2^ℓ - 2)².
    pub fn node_count(&self) -> usize {
        let m = self.nodes_per_axis();
        m * m
    }

    pub fn patch_count(&self) -> usize {
        self.n * self.n
    }

    /// Node spacing along an axis.
    pub fn spacing(&self, axis: usize) -> f64 {
        self.axes[axis].delta
    }

    pub(crate) fn axis(&self, axis: usize) -> &Axis {
        &self.axes[axis]
    }

    /// Interior axis indices (kx, ky) of node p, both in 1..=3n-2.
    pub fn node_axis_indices(&self, p: usize) -> (usize, usize) {
        let m = self.nodes_per_axis();
        (p % m + 1, p / m + 1)
    }

    /// Node index from interior axis indices.
    pub fn node_index(&self, kx: usize, ky: usize) -> usize {
        let m = self.nodes_per_axis();
        (ky - 1) * m + (kx - 1)
    }

    pub fn node_coords(&self, p: usize) -> [f64; 2] {
        let (kx, ky) = self.node_axis_indices(p);
        [self.axes[0].nodes[kx], self.axes[1].nodes[ky]]
    }

    /// Patch that owns node p.
    pub fn owning_patch(&self, p: usize) -> (usize, usize) {
        let (kx, ky) = self.node_axis_indices(p);
        (kx / 3, ky / 3)
    }

    pub fn nodes(&self) -> NodeSet<'_> {
        NodeSet { grid: self }
    }

    pub fn pu_function(&self, patch: (usize, usize)) -> PUFunction<'_> {
        assert!(patch.0 < self.n && patch.1 < self.n, "patch index out of range");
        PUFunction { grid: self, patch }
    }

    pub fn basis_function(&self, p: usize) -> Result<BasisFunction<'_>> {
        if p >= self.node_count() {
            return Err(Error::UnknownNode { index: p, count: self.node_count() });
        }
        Ok(BasisFunction { grid: self, node: p })
    }

    /// Evaluate the PU function of a patch; points outside the patch give zeros.
    pub fn evaluate_pu(&self, patch: (usize, usize), x: [f64; 2]) -> PuEval {
        let (wx, wx1, wx2) = self.axes[0].pu(patch.0, x[0]);
        let (wy, wy1, wy2) = self.axes[1].pu(patch.1, x[1]);
        PuEval {
            value: wx * wy,
            gradient: [wx1 * wy, wx * wy1],
            second: [wx2 * wy, wx1 * wy1, wx * wy2],
        }
    }

    /// Evaluate the basis function of interior node p.
    pub fn evaluate_basis(&self, p: usize, x: [f64; 2]) -> Result<BasisEval> {
        if p >= self.node_count() {
            return Err(Error::UnknownNode { index: p, count: self.node_count() });
        }
        let (kx, ky) = self.node_axis_indices(p);
        let (gx, gx1, gx2) = self.axes[0].basis(kx, x[0]);
        let (gy, gy1, gy2) = self.axes[1].basis(ky, x[1]);
        Ok(BasisEval {
            value: gx * gy,
            gradient: [gx1 * gy, gx * gy1],
            laplacian: gx2 * gy + gx * gy2,
        })
    }

    /// Interior nodes whose basis functions are nonzero at x, with the
    /// per-axis factor triples; used by point evaluation and quadrature.
    pub(crate) fn nonzero_axis_factors(&self, axis: usize, x: f64) -> Vec<(usize, Triple)> {
        let ax = &self.axes[axis];
        let (first, count) = ax.cover(x);
        let mut out = Vec::with_capacity(6);
        for patch in first..first + count {
            for m in 0..3 {
                let k = 3 * patch + m;
                if (1..=3 * self.n - 2).contains(&k) {
                    out.push((k, ax.basis(k, x)));
                }
            }
        }
        out
    }

    /// Evaluate Σ_p coeffs[p]·b_p at a point.
    pub fn evaluate_combination(&self, coeffs: &[f64], x: [f64; 2]) -> BasisEval {
        assert_eq!(coeffs.len(), self.node_count(), "coefficient length mismatch");
        let fx = self.nonzero_axis_factors(0, x[0]);
        let fy = self.nonzero_axis_factors(1, x[1]);
        let mut value = 0.0;
        let mut gx = 0.0;
        let mut gy = 0.0;
        let mut lap = 0.0;
        for &(ky, (vy, dy, dyy)) in &fy {
            for &(kx, (vx, dx, dxx)) in &fx {
                let c = coeffs[self.node_index(kx, ky)];
                value += c * vx * vy;
                gx += c * dx * vy;
                gy += c * vx * dy;
                lap += c * (dxx * vy + vx * dyy);
            }
        }
        BasisEval { value, gradient: [gx, gy], laplacian: lap }
    }

    /// Nodal interpolation of a pointwise-evaluable source: the coefficient
    /// vector is exactly the vector of nodal values.
    pub fn interpolate<F: Fn(f64, f64) -> f64>(&self, source: F) -> Vec<f64> {
        (0..self.node_count())
            .map(|p| {
                let [x, y] = self.node_coords(p);
                source(x, y)
            })
            .collect()
    }

    /// Nodal interpolation of a coarse-grid function given by its coefficients.
    pub fn interpolate_coarse(&self, coarse: &PatchGrid, coeffs: &[f64]) -> Result<Vec<f64>> {
        if coarse.level > self.level {
            return Err(Error::CoarseNotCoarser { coarse: coarse.level, fine: self.level });
        }
        if coeffs.len() != coarse.node_count() {
            return Err(Error::DimensionMismatch {
                got: coeffs.len(),
                expected: coarse.node_count(),
            });
        }
        let tx = self.axis_transfer(coarse, 0);
        let ty = self.axis_transfer(coarse, 1);
        let m = self.nodes_per_axis();
        let mut out = vec![0.0; self.node_count()];
        for ky in 1..=m {
            for kx in 1..=m {
                let mut v = 0.0;
                for &(qy, vy) in &ty[ky - 1] {
                    for &(qx, vx) in &tx[kx - 1] {
                        v += coeffs[coarse.node_index(qx as usize, qy as usize)] * vx * vy;
                    }
                }
                out[self.node_index(kx, ky)] = v;
            }
        }
        Ok(out)
    }

    /// Per fine interior axis index (shifted to 0-based), the coarse interior
    /// axis indices with nonzero basis factor at that fine coordinate.
    pub(crate) fn axis_transfer(&self, coarse: &PatchGrid, axis: usize) -> Vec<Vec<(u32, f64)>> {
        let fine_ax = &self.axes[axis];
        let coarse_ax = &coarse.axes[axis];
        let mc = coarse.nodes_per_axis();
        (1..=self.nodes_per_axis())
            .map(|kf| {
                let x = fine_ax.nodes[kf];
                let (first, count) = coarse_ax.cover(x);
                let mut row = Vec::with_capacity(6);
                for patch in first..first + count {
                    for m in 0..3 {
                        let q = 3 * patch + m;
                        if (1..=mc).contains(&q) {
                            let (v, _, _) = coarse_ax.basis(q, x);
                            if v != 0.0 {
                                row.push((q as u32, v));
                            }
                        }
                    }
                }
                row
            })
            .collect()
    }
}

/// Ordered list of interior nodes; ordering is row-major by (y, x).
#[derive(Debug, Clone, Copy)]
pub struct NodeSet<'a> {
    grid: &'a PatchGrid,
}

impl<'a> NodeSet<'a> {
    pub fn len(&self) -> usize {
        self.grid.node_count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn coord(&self, p: usize) -> [f64; 2] {
        self.grid.node_coords(p)
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, [f64; 2])> + 'a {
        let grid = self.grid;
        (0..grid.node_count()).map(move |p| (p, grid.node_coords(p)))
    }
}

/// View of one partition of unity function.
#[derive(Debug, Clone, Copy)]
pub struct PUFunction<'a> {
    grid: &'a PatchGrid,
    pub patch: (usize, usize),
}

impl<'a> PUFunction<'a> {
    pub fn eval(&self, x: [f64; 2]) -> PuEval {
        self.grid.evaluate_pu(self.patch, x)
    }

    /// Closed interval where the axis factor is exactly 1.
    pub fn flat(&self, axis: usize) -> (f64, f64) {
        let ax = self.grid.axis(axis);
        let i = if axis == 0 { self.patch.0 } else { self.patch.1 };
        (ax.nodes[3 * i], ax.nodes[3 * i + 2])
    }

    /// Support interval; the function is exactly 0 outside.
    pub fn support(&self, axis: usize) -> (f64, f64) {
        let ax = self.grid.axis(axis);
        let i = if axis == 0 { self.patch.0 } else { self.patch.1 };
        let lo = if i > 0 { ax.nodes[3 * i - 1] } else { ax.lo };
        let hi = if i + 1 < ax.n { ax.nodes[3 * i + 3] } else { ax.hi };
        (lo, hi)
    }
}

/// View of one global basis function.
#[derive(Debug, Clone, Copy)]
pub struct BasisFunction<'a> {
    grid: &'a PatchGrid,
    pub node: usize,
}

impl<'a> BasisFunction<'a> {
    pub fn eval(&self, x: [f64; 2]) -> BasisEval {
        self.grid.evaluate_basis(self.node, x).expect("node checked at construction")
    }

    pub fn owning_patch(&self) -> (usize, usize) {
        self.grid.owning_patch(self.node)
    }

    /// Coordinates of the node where this function equals 1.
    pub fn node_coords(&self) -> [f64; 2] {
        self.grid.node_coords(self.node)
    }
}
