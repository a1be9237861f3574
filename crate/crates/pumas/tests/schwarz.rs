//! Additive Schwarz operators against dense references and spectral bounds.

use pumas::assembly::{
    assemble_load, assemble_stiffness, build_quadrature, obstacle_vector, ProblemData,
    DEFAULT_QUADRATURE_ORDER,
};
use pumas::krylov::LinearOperator;
use pumas::pdas::{pdas_solve, predict_active, reduced_system, ActiveState, InnerConfig};
use pumas::pum::{Domain, PatchGrid};
use pumas::schwarz::{
    build_coarse_restriction, build_one_level, build_two_level, coarse_level,
    partition_subdomains, truncate, CoarseRestriction, FactorCache, Overlap, PrecondSpec,
};
use pumas::skyline::SkylineCholesky;
use pumas::sparse::SparseMatrix;
use pumas_oracle::{dense_condition, DenseMatrix};
use rand::Rng;
use rand::SeedableRng;

const ACTIVE_WEIGHT: f64 = 1e8;

struct Reduced {
    grid: PatchGrid,
    a_full: SparseMatrix,
    inactive: Vec<u32>,
    a_red: SparseMatrix,
}

/// Reduced operator at the active-set fixed point of the model problem.
fn fixed_point_system(level: u32) -> Reduced {
    let grid = PatchGrid::build(level, Domain::unit_centered()).unwrap();
    let data = ProblemData::model_problem();
    let quad = build_quadrature(&grid, DEFAULT_QUADRATURE_ORDER);
    let a = assemble_stiffness(&grid, &data, &quad).unwrap();
    let b = assemble_load(&grid, &data, &quad);
    let psi = obstacle_vector(&grid, &data);
    let mut cache = FactorCache::new();
    // Exact subdomain solves keep the fixed-point search cheap; the fixed
    // point itself is solver-independent.
    let mut inner = InnerConfig {
        grid: &grid,
        precond: PrecondSpec::OneLevel { j: 4, overlap: Overlap::Generous },
        tol: 1e-15,
        max_iter: None,
        parallel: false,
        cache: &mut cache,
    };
    let initial = ActiveState::cold(a.dim());
    let (state, _) = pdas_solve(&a, &b, &psi, ACTIVE_WEIGHT, &initial, &mut inner).unwrap();
    let active = predict_active(&state.y, &state.lambda, &psi, ACTIVE_WEIGHT);
    let sys = reduced_system(&a, &b, &psi, &active);
    Reduced { grid, a_full: a, inactive: sys.inactive, a_red: sys.matrix }
}

fn random_vec(n: usize, rng: &mut rand_chacha::ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

#[test]
fn truncate_selects_inactive_coordinates() {
    let values = [10.0, 11.0, 12.0, 13.0, 14.0];
    assert_eq!(truncate(&values, &[0, 2, 4]), vec![10.0, 12.0, 14.0]);
    assert!(truncate(&values, &[]).is_empty());
}

#[test]
fn coarse_level_is_half_the_subdomain_exponent() {
    assert_eq!(coarse_level(4).unwrap(), 1);
    assert_eq!(coarse_level(16).unwrap(), 2);
    assert_eq!(coarse_level(256).unwrap(), 4);
    // Non-square or non-power-of-four counts are rejected.
    assert!(coarse_level(8).is_err());
    assert!(coarse_level(0).is_err());
}

/// Subdomains jointly cover every inactive node in both overlap regimes.
#[test]
fn partition_covers_the_inactive_set() {
    let r = fixed_point_system(2);
    for overlap in [Overlap::Small, Overlap::Generous] {
        let decomp = partition_subdomains(&r.grid, &r.inactive, 4, overlap).unwrap();
        assert_eq!(decomp.reduced_dim, r.inactive.len());
        let mut hit = vec![false; r.inactive.len()];
        for sub in &decomp.subdomains {
            for &p in &sub.reduced_nodes {
                hit[p as usize] = true;
            }
        }
        assert!(hit.iter().all(|&h| h), "{overlap:?} leaves nodes uncovered");
    }
    // The model constraint binds few nodes at this level: with small
    // overlap the four subdomains still reach all 100 interior nodes.
    assert_eq!(r.grid.node_count(), 100);
}

/// A single subdomain is an exact solve: B = Ã⁻¹ and κ(BÃ) = 1.
#[test]
fn single_subdomain_is_a_direct_solve() {
    let r = fixed_point_system(2);
    let decomp = partition_subdomains(&r.grid, &r.inactive, 1, Overlap::Small).unwrap();
    let mut cache = FactorCache::new();
    let b = build_one_level(&r.a_full, &decomp, &mut cache, false).unwrap();
    let chol = SkylineCholesky::factor(&r.a_red, "reference factor").unwrap();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
    for _ in 0..5 {
        let x = random_vec(r.inactive.len(), &mut rng);
        let mut z = vec![0.0; x.len()];
        b.apply(&x, &mut z);
        let direct = chol.solve(&x);
        let worst =
            z.iter().zip(&direct).map(|(a, b)| (a - b).abs()).fold(0.0f64, f64::max);
        assert!(worst <= 1e-12, "gap {worst}");
    }
    let kappa = dense_condition(&b, &r.a_red).unwrap();
    assert!((kappa - 1.0).abs() <= 1e-10, "kappa {kappa}");
}

/// The fast application agrees with the dense formula Σ I_j A_j⁻¹ I_jᵗ r
/// assembled by brute force from the factor solves.
#[test]
fn application_matches_dense_subdomain_sum() {
    let r = fixed_point_system(2);
    for overlap in [Overlap::Small, Overlap::Generous] {
        let decomp = partition_subdomains(&r.grid, &r.inactive, 4, overlap).unwrap();
        let mut cache = FactorCache::new();
        let b = build_one_level(&r.a_full, &decomp, &mut cache, false).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let x = random_vec(r.inactive.len(), &mut rng);
        let mut fast = vec![0.0; x.len()];
        b.apply(&x, &mut fast);

        let mut slow = vec![0.0; x.len()];
        for sub in &decomp.subdomains {
            if sub.global_nodes.is_empty() {
                continue;
            }
            let local = r.a_full.principal_submatrix(&sub.global_nodes);
            let chol = SkylineCholesky::factor(&local, "oracle factor").unwrap();
            let rhs: Vec<f64> =
                sub.reduced_nodes.iter().map(|&p| x[p as usize]).collect();
            let sol = chol.solve(&rhs);
            for (&p, &v) in sub.reduced_nodes.iter().zip(&sol) {
                slow[p as usize] += v;
            }
        }
        let scale = x.iter().map(|v| v.abs()).fold(0.0f64, f64::max);
        let worst =
            fast.iter().zip(&slow).map(|(a, b)| (a - b).abs()).fold(0.0f64, f64::max);
        assert!(worst <= 1e-12 * scale.max(1.0), "{overlap:?}: gap {worst}");
    }
}

/// Generous overlap at J = 4 extends each block by half a subdomain side,
/// which reaches the whole domain: every subdomain solve is exact.
#[test]
fn generous_quadrants_cover_everything() {
    let r = fixed_point_system(2);
    let decomp = partition_subdomains(&r.grid, &r.inactive, 4, Overlap::Generous).unwrap();
    for sub in &decomp.subdomains {
        assert_eq!(sub.reduced_nodes.len(), r.inactive.len());
    }
    let mut cache = FactorCache::new();
    let b = build_one_level(&r.a_full, &decomp, &mut cache, false).unwrap();
    // Four identical exact solves summed: BÃ = 4I exactly, κ = 1.
    assert_eq!(b.term_count(), 1, "identical subdomains deduplicate");
    let kappa = dense_condition(&b, &r.a_red).unwrap();
    assert!((kappa - 1.0).abs() <= 1e-10, "kappa {kappa}");
}

/// The preconditioner is symmetric and positive definite as an operator.
#[test]
fn operator_is_symmetric_positive_definite() {
    for level in [2u32, 3] {
        let r = fixed_point_system(level);
        for (j, overlap) in [(4u32, Overlap::Small), (4, Overlap::Generous), (16, Overlap::Small)]
        {
            if (j as f64).sqrt() as usize > (1 << level) {
                continue;
            }
            let decomp = partition_subdomains(&r.grid, &r.inactive, j, overlap).unwrap();
            let mut cache = FactorCache::new();
            let b = build_one_level(&r.a_full, &decomp, &mut cache, false).unwrap();
            let n = r.inactive.len();
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17 + j as u64);
            for _ in 0..10 {
                let x = random_vec(n, &mut rng);
                let s = random_vec(n, &mut rng);
                let mut bx = vec![0.0; n];
                let mut bs = vec![0.0; n];
                b.apply(&x, &mut bx);
                b.apply(&s, &mut bs);
                let xbs: f64 = x.iter().zip(&bs).map(|(a, c)| a * c).sum();
                let sbx: f64 = s.iter().zip(&bx).map(|(a, c)| a * c).sum();
                let nx = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                let ns = s.iter().map(|v| v * v).sum::<f64>().sqrt();
                assert!((xbs - sbx).abs() <= 1e-12 * nx * ns, "level {level} J {j}");
            }
            for _ in 0..100 {
                let x = random_vec(n, &mut rng);
                let mut bx = vec![0.0; n];
                b.apply(&x, &mut bx);
                let quad: f64 = x.iter().zip(&bx).map(|(a, c)| a * c).sum();
                assert!(quad > 0.0, "level {level} J {j}: xᵀBx = {quad}");
            }
        }
    }
}

/// Zero input maps to zero output through every term.
#[test]
fn zero_maps_to_zero() {
    let r = fixed_point_system(2);
    let decomp = partition_subdomains(&r.grid, &r.inactive, 4, Overlap::Small).unwrap();
    let mut cache = FactorCache::new();
    let r0 = {
        let coarse = PatchGrid::build(1, r.grid.domain).unwrap();
        build_coarse_restriction(&r.grid, &coarse, &r.inactive).unwrap()
    };
    let b = build_two_level(&r.a_full, &r.a_red, &decomp, r0, &mut cache, false).unwrap();
    let x = vec![0.0; r.inactive.len()];
    let mut z = vec![1.0; x.len()];
    b.apply(&x, &mut z);
    assert!(z.iter().all(|&v| v == 0.0));
}

/// Equal coarse and fine grids give the identity restriction when nothing
/// is active.
#[test]
fn restriction_of_equal_grids_is_identity() {
    let grid = PatchGrid::build(2, Domain::unit_centered()).unwrap();
    let all: Vec<u32> = (0..grid.node_count() as u32).collect();
    let r0 = build_coarse_restriction(&grid, &grid, &all).unwrap();
    assert_eq!(r0.rows(), grid.node_count());
    assert_eq!(r0.dropped, 0);
    for i in 0..r0.rows() {
        let row = r0.row(i);
        assert_eq!(row.len(), 1, "row {i}: {row:?}");
        assert_eq!(row[0].0 as usize, i);
        assert_eq!(row[0].1, 1.0);
    }
}

/// Restriction entries are pointwise coarse basis evaluations at fine nodes.
#[test]
fn restriction_matches_pointwise_evaluation() {
    let fine = PatchGrid::build(3, Domain::unit_centered()).unwrap();
    let coarse = PatchGrid::build(1, fine.domain).unwrap();
    let all: Vec<u32> = (0..fine.node_count() as u32).collect();
    let r0 = build_coarse_restriction(&fine, &coarse, &all).unwrap();
    assert_eq!(r0.rows(), coarse.node_count());
    for i in 0..r0.rows() {
        let q = r0.coarse_nodes[i] as usize;
        let mut dense = vec![0.0; fine.node_count()];
        for &(c, v) in r0.row(i) {
            dense[c as usize] = v;
        }
        for (p, x) in fine.nodes().iter() {
            let want = coarse.evaluate_basis(q, x).unwrap().value;
            assert!((dense[p] - want).abs() <= 1e-13, "coarse {q} fine {p}");
        }
    }
}

/// Coarse functions with no inactive support are dropped and counted.
#[test]
fn unsupported_coarse_rows_are_dropped() {
    let fine = PatchGrid::build(3, Domain::unit_centered()).unwrap();
    let coarse = PatchGrid::build(1, fine.domain).unwrap();
    // Keep only fine nodes in the left half: coarse functions supported
    // entirely on the right lose every column.
    let inactive: Vec<u32> = fine
        .nodes()
        .iter()
        .filter(|&(_, x)| x[0] < -0.1)
        .map(|(p, _)| p as u32)
        .collect();
    let r0 = build_coarse_restriction(&fine, &coarse, &inactive).unwrap();
    assert!(r0.dropped > 0);
    assert_eq!(r0.rows() + r0.dropped, coarse.node_count());
    for i in 0..r0.rows() {
        assert!(!r0.row(i).is_empty());
    }
}

/// An explicitly empty coarse space reproduces the one-level operator
/// exactly.
#[test]
fn empty_coarse_space_degrades_to_one_level() {
    let r = fixed_point_system(2);
    let decomp = partition_subdomains(&r.grid, &r.inactive, 4, Overlap::Small).unwrap();
    let mut cache = FactorCache::new();
    let one = build_one_level(&r.a_full, &decomp, &mut cache, false).unwrap();
    let r0 = CoarseRestriction::empty(r.inactive.len());
    let two =
        build_two_level(&r.a_full, &r.a_red, &decomp, r0, &mut cache, false).unwrap();
    assert!(two.coarse_rows().is_none());
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(23);
    for _ in 0..10 {
        let x = random_vec(r.inactive.len(), &mut rng);
        let mut za = vec![0.0; x.len()];
        let mut zb = vec![0.0; x.len()];
        one.apply(&x, &mut za);
        two.apply(&x, &mut zb);
        let worst =
            za.iter().zip(&zb).map(|(a, b)| (a - b).abs()).fold(0.0f64, f64::max);
        assert!(worst <= 1e-14, "gap {worst}");
    }
}

/// Adding the coarse subspace can raise the condition slightly on a grid
/// too coarse to profit (ℓ = 2), and must lower it once the fine grid
/// outruns the subdomains (ℓ = 3).
#[test]
fn coarse_space_improves_conditioning() {
    let r2 = fixed_point_system(2);
    let decomp = partition_subdomains(&r2.grid, &r2.inactive, 4, Overlap::Small).unwrap();
    let mut cache = FactorCache::new();
    let one = build_one_level(&r2.a_full, &decomp, &mut cache, false).unwrap();
    let coarse = PatchGrid::build(coarse_level(4).unwrap(), r2.grid.domain).unwrap();
    let r0 = build_coarse_restriction(&r2.grid, &coarse, &r2.inactive).unwrap();
    let two =
        build_two_level(&r2.a_full, &r2.a_red, &decomp, r0, &mut cache, false).unwrap();
    let k_one = dense_condition(&one, &r2.a_red).unwrap();
    let k_two = dense_condition(&two, &r2.a_red).unwrap();
    assert!(k_two <= k_one * 1.25, "two-level {k_two} vs one-level {k_one}");

    let r3 = fixed_point_system(3);
    let decomp = partition_subdomains(&r3.grid, &r3.inactive, 4, Overlap::Small).unwrap();
    let mut cache = FactorCache::new();
    let one = build_one_level(&r3.a_full, &decomp, &mut cache, false).unwrap();
    let coarse = PatchGrid::build(coarse_level(4).unwrap(), r3.grid.domain).unwrap();
    let r0 = build_coarse_restriction(&r3.grid, &coarse, &r3.inactive).unwrap();
    let two =
        build_two_level(&r3.a_full, &r3.a_red, &decomp, r0, &mut cache, false).unwrap();
    let k_one = dense_condition(&one, &r3.a_red).unwrap();
    let k_two = dense_condition(&two, &r3.a_red).unwrap();
    assert!(k_two < k_one, "two-level {k_two} vs one-level {k_one}");
}

/// Deduplicated identical subdomains carry multiplicity through the sum.
#[test]
fn duplicate_subdomains_are_weighted_not_lost() {
    let r = fixed_point_system(2);
    let decomp = partition_subdomains(&r.grid, &r.inactive, 4, Overlap::Generous).unwrap();
    let mut cache = FactorCache::new();
    let b = build_one_level(&r.a_full, &decomp, &mut cache, false).unwrap();
    assert_eq!(b.term_count(), 1);
    // B r = 4 Ã⁻¹ r: the single kept term must apply the weight.
    let chol = SkylineCholesky::factor(&r.a_red, "reference factor").unwrap();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(31);
    let x = random_vec(r.inactive.len(), &mut rng);
    let mut z = vec![0.0; x.len()];
    b.apply(&x, &mut z);
    let direct = chol.solve(&x);
    for (a, d) in z.iter().zip(&direct) {
        assert!((a - 4.0 * d).abs() <= 1e-11, "{a} vs 4·{d}");
    }
}

/// Semidefinite factorization of a rank-deficient Gram matrix solves the
/// system on the span: A A⁺ b = b for b in the column space.
#[test]
fn semidefinite_factorization_projects_onto_the_span() {
    // G = Vᵀ V for 5 vectors spanning a 3-dimensional space.
    let v: [[f64; 3]; 5] = [
        [1.0, 0.0, 0.0],
        [0.0, 2.0, 0.0],
        [1.0, 2.0, 0.0],
        [0.0, 0.0, 3.0],
        [1.0, 0.0, 3.0],
    ];
    let g = SparseMatrix::from_rows(5, |r, buf| {
        for c in 0..5 {
            let dot: f64 = (0..3).map(|k| v[r][k] * v[c][k]).sum();
            if dot != 0.0 {
                buf.push((c as u32, dot));
            }
        }
    });
    let chol = SkylineCholesky::factor_psd(&g, "gram factor").unwrap();
    assert_eq!(chol.dropped_rows().len(), 2, "rank 3 of 5");
    // Right-hand sides in the column space: G e_k.
    for k in 0..5 {
        let e: Vec<f64> = (0..5).map(|i| if i == k { 1.0 } else { 0.0 }).collect();
        let b = g.matvec_alloc(&e);
        let x = chol.solve(&b);
        let back = g.matvec_alloc(&x);
        for (bi, gi) in b.iter().zip(&back) {
            assert!((bi - gi).abs() <= 1e-9, "column {k}");
        }
    }
    // Strict factorization must keep rejecting the deficiency.
    assert!(SkylineCholesky::factor(&g, "strict factor").is_err());
}

/// Generous overlap keeps the one-level condition level-independent once
/// the subdomains are coarser than the grid: κ barely moves from ℓ = 3
/// to ℓ = 4 at J = 4.
#[test]
fn generous_overlap_condition_is_level_robust() {
    let mut kappas = Vec::new();
    for level in [3u32, 4] {
        let r = fixed_point_system(level);
        let decomp =
            partition_subdomains(&r.grid, &r.inactive, 4, Overlap::Generous).unwrap();
        let mut cache = FactorCache::new();
        let b = build_one_level(&r.a_full, &decomp, &mut cache, false).unwrap();
        // Lanczos estimate through an actual solve; dense is too big at ℓ4.
        let rhs: Vec<f64> = (0..r.inactive.len()).map(|p| ((p * 7) % 13) as f64 - 6.0).collect();
        let x0 = vec![0.0; r.inactive.len()];
        let (_, rep) =
            pumas::krylov::pcg(&r.a_red, &rhs, Some(&b), &x0, 1e-13, 4 * r.inactive.len())
                .unwrap();
        kappas.push(rep.kappa);
    }
    assert!(
        kappas[1] / kappas[0] <= 1.25,
        "κ grew from {} to {}",
        kappas[0],
        kappas[1]
    );
}
