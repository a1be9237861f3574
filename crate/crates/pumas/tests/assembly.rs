//! Galerkin assembly checked against slow dense references.

use pumas::assembly::{
    self, assemble_load, assemble_stiffness, build_quadrature, objective, recover_control,
    ProblemData, QuadratureMesh, DEFAULT_QUADRATURE_ORDER,
};
use pumas::pum::{Domain, PatchGrid};
use pumas_oracle::{dense_assemble, DenseMatrix};
use rand::Rng;
use rand::SeedableRng;

fn grid(level: u32) -> PatchGrid {
    PatchGrid::build(level, Domain::unit_centered()).unwrap()
}

fn quad(grid: &PatchGrid) -> QuadratureMesh {
    build_quadrature(grid, DEFAULT_QUADRATURE_ORDER)
}

/// Order-6 Gauss cells integrate constants and smooth monomials over the
/// domain to rounding accuracy.
#[test]
fn quadrature_reproduces_reference_integrals() {
    let g = grid(2);
    let q = quad(&g);
    let area = q.integrate(|_, _| 1.0);
    assert!((area - g.domain.area()).abs() <= 1e-13);
    // ∫ x² over the centered unit square.
    let moment = q.integrate(|x, _| x * x);
    assert!((moment - 1.0 / 12.0).abs() <= 1e-12);
    let mixed = q.integrate(|x, y| x * y * y);
    assert!(mixed.abs() <= 1e-13);
}

/// Integrals of single basis functions agree with a doubled-order rule.
#[test]
fn basis_integrals_survive_order_doubling() {
    let g = grid(2);
    let q6 = quad(&g);
    let q12 = build_quadrature(&g, 12);
    for p in [0, 7, 33, g.node_count() - 1] {
        let basis = g.basis_function(p).unwrap();
        let a = q6.integrate(|x, y| basis.eval([x, y]).value);
        let b = q12.integrate(|x, y| basis.eval([x, y]).value);
        assert!((a - b).abs() <= 1e-10, "basis {p}: {a} vs {b}");
    }
}

/// The assembled operator is bitwise symmetric, not merely close.
#[test]
fn stiffness_symmetry_is_exact() {
    for level in 1..=3u32 {
        let g = grid(level);
        let data = ProblemData::model_problem();
        let a = assemble_stiffness(&g, &data, &quad(&g)).unwrap();
        assert_eq!(a.symmetry_defect(), 0.0, "level {level}");
    }
}

/// Dense eigenvalues of the small operator are strictly positive.
#[test]
fn stiffness_is_positive_definite() {
    let g = grid(1);
    let data = ProblemData::model_problem();
    let a = assemble_stiffness(&g, &data, &quad(&g)).unwrap();
    let dense = DenseMatrix::from_sparse(&a);
    let (min, _) = dense.eigen_bounds();
    assert!(min > 0.0, "smallest eigenvalue {min}");
    // The mass part alone bounds the spectrum from below by λmin(M) > 0.
    assert!(min > 1e-6);
}

/// The banded tensor assembly agrees with the dense entry-by-entry
/// quadrature at doubled order.
#[test]
fn assembly_matches_dense_reference() {
    let g = grid(2);
    let data = ProblemData::model_problem();
    let a = assemble_stiffness(&g, &data, &quad(&g)).unwrap();
    let reference = dense_assemble(&g, &data, 12);
    let mut worst = 0.0f64;
    for r in 0..a.dim() {
        for c in 0..a.dim() {
            worst = worst.max((a.get(r, c) - reference.get(r, c)).abs());
        }
    }
    let scale = a.max_abs();
    assert!(worst <= 1e-10 * scale, "defect {worst} against scale {scale}");
}

/// The operator is affine in the fourth-order weight: A(2β) - 2A(β) + M = 0
/// with M = A(β=0 weight, mass weight 1).
#[test]
fn weight_scaling_is_affine() {
    let g = grid(2);
    let q = quad(&g);
    let beta = 0.1;
    let a1 = assembly::assemble_weighted(&g, &q, beta, 1.0).unwrap();
    let a2 = assembly::assemble_weighted(&g, &q, 2.0 * beta, 1.0).unwrap();
    let mass = assembly::assemble_weighted(&g, &q, 0.0, 1.0).unwrap();
    let scale = a2.max_abs();
    for r in 0..a1.dim() {
        for c in 0..a1.dim() {
            let defect = a2.get(r, c) - 2.0 * a1.get(r, c) + mass.get(r, c);
            assert!(defect.abs() <= 1e-12 * scale, "({r},{c})");
        }
    }
}

/// Nonzeros occur exactly where basis supports overlap: axis distance at
/// most five node steps in both directions.
#[test]
fn sparsity_pattern_matches_support_overlap() {
    let g = grid(2);
    let data = ProblemData::model_problem();
    let a = assemble_stiffness(&g, &data, &quad(&g)).unwrap();
    let m = g.nodes_per_axis();
    for p in 0..a.dim() {
        let (px, py) = (p % m, p / m);
        let (cols, vals) = a.row(p);
        for (&c, &v) in cols.iter().zip(vals) {
            let (cx, cy) = (c as usize % m, c as usize / m);
            let dx = px.abs_diff(cx);
            let dy = py.abs_diff(cy);
            assert!(dx <= 5 && dy <= 5, "entry ({p},{c}) = {v} outside the band");
        }
        // The row always reaches its own diagonal.
        assert!(cols.contains(&(p as u32)));
    }
}

/// Load assembly: zero source gives the zero vector, unit source integrates
/// each basis function, the model source survives order doubling.
#[test]
fn load_vector_reference_cases() {
    let g = grid(2);
    let q = quad(&g);
    let zero = ProblemData::new(0.1, g.domain, |_, _| 0.0, |_, _| 0.01).unwrap();
    let b0 = assemble_load(&g, &zero, &q);
    assert!(b0.iter().all(|&v| v == 0.0));

    let unit = ProblemData::new(0.1, g.domain, |_, _| 1.0, |_, _| 0.01).unwrap();
    let b1 = assemble_load(&g, &unit, &q);
    for p in [0usize, 11, 57, g.node_count() - 1] {
        let basis = g.basis_function(p).unwrap();
        let direct = q.integrate(|x, y| basis.eval([x, y]).value);
        assert!((b1[p] - direct).abs() <= 1e-12, "node {p}");
    }

    let model = ProblemData::model_problem();
    let bm = assemble_load(&g, &model, &q);
    let q12 = build_quadrature(&g, 12);
    let bm12 = assemble_load(&g, &model, &q12);
    let scale = bm.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for p in 0..bm.len() {
        assert!((bm[p] - bm12[p]).abs() <= 1e-9 * scale, "node {p}");
    }
}

/// Minimizing property of the discrete solution: any coefficient
/// perturbation increases ½yᵀAy - bᵀy.
#[test]
fn unconstrained_minimizer_beats_perturbations() {
    let g = grid(2);
    let data = ProblemData::model_problem();
    let q = quad(&g);
    let a = assemble_stiffness(&g, &data, &q).unwrap();
    let b = assemble_load(&g, &data, &q);
    let chol = pumas::skyline::SkylineCholesky::factor(&a, "test solve").unwrap();
    let y = chol.solve(&b);
    let energy = |v: &[f64]| {
        let av = a.matvec_alloc(v);
        0.5 * v.iter().zip(&av).map(|(x, y)| x * y).sum::<f64>()
            - b.iter().zip(v).map(|(x, y)| x * y).sum::<f64>()
    };
    let base = energy(&y);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let mut z = y.clone();
        for v in z.iter_mut() {
            *v += rng.gen_range(-0.01..0.01);
        }
        assert!(energy(&z) > base);
    }
}

/// The quadratic objective evaluated on the discrete minimizer is smaller
/// than on nearby combinations, and vanishes when the target is met exactly.
#[test]
fn objective_behaves_like_a_quadratic_functional() {
    let g = grid(1);
    let q = quad(&g);
    // A state equal to the target with zero curvature costs nothing.
    let flat = ProblemData::new(0.5, g.domain, |_, _| 0.0, |_, _| 1.0).unwrap();
    let zero_state = vec![0.0; g.node_count()];
    assert!(objective(&g, &flat, &q, &zero_state).abs() <= 1e-15);

    let data = ProblemData::model_problem();
    let a = assemble_stiffness(&g, &data, &q).unwrap();
    let b = assemble_load(&g, &data, &q);
    let chol = pumas::skyline::SkylineCholesky::factor(&a, "test solve").unwrap();
    let y = chol.solve(&b);
    let best = objective(&g, &data, &q, &y);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
    for _ in 0..10 {
        let mut z = y.clone();
        for v in z.iter_mut() {
            *v += rng.gen_range(-0.05..0.05);
        }
        assert!(objective(&g, &data, &q, &z) > best);
    }
}

/// The recovered control is the negative Laplacian of the state combination.
#[test]
fn control_recovery_matches_second_derivatives() {
    let g = grid(2);
    let coeffs = g.interpolate(|x, y| x * x + 0.5 * y * y);
    // Probe inside a flat-top cell where the combination is locally the
    // quadratic interpolant with Laplacian close to 2 + 1.
    let x = [0.01, 0.02];
    let u = recover_control(&g, &coeffs, x);
    let e = g.evaluate_combination(&coeffs, x);
    assert_eq!(u, -e.laplacian);
    assert!((u + 3.0).abs() < 0.2, "recovered control {u}");
}

/// Quadrature meshes are tied to the grid they were built for.
#[test]
fn mismatched_quadrature_is_rejected() {
    let g2 = grid(2);
    let g3 = grid(3);
    let q2 = quad(&g2);
    let data = ProblemData::model_problem();
    assert!(assemble_stiffness(&g3, &data, &q2).is_err());
}

/// Obstacles must stay strictly positive somewhere on the boundary band;
/// the model obstacle is a positive constant and passes.
#[test]
fn model_problem_shape() {
    let data = ProblemData::model_problem();
    assert_eq!(data.beta, 0.1);
    assert_eq!(data.psi(0.3, -0.2), 0.01);
    // Source at the domain center: 10(sin(2π·0.5) + 0.5) = 5.
    assert!((data.f(0.0, 0.0) - 5.0).abs() <= 1e-12);
    // Source at the lower-left corner: 10(sin 0 + 0) = 0.
    assert!((data.f(-0.5, -0.5)).abs() <= 1e-12);
}

/// Matrix-market export writes a parseable symmetric header and one line
/// per stored entry.
#[test]
fn matrix_market_export_smoke() {
    let g = grid(1);
    let data = ProblemData::model_problem();
    let a = assemble_stiffness(&g, &data, &quad(&g)).unwrap();
    let mut buf = Vec::new();
    a.write_matrix_market(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("%%MatrixMarket"));
    let body: Vec<&str> = text.lines().filter(|l| !l.starts_with('%')).collect();
    let header: Vec<usize> = body[0].split_whitespace().map(|t| t.parse().unwrap()).collect();
    assert_eq!(header[0], a.dim());
    assert_eq!(header[1], a.dim());
    assert_eq!(body.len() - 1, header[2]);
}
