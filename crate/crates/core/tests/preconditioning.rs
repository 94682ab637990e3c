mod common;

use fcm_core::assembly::{AssemblySettings, ModelProblem};
use fcm_core::blocks::{Block, BlockKind, BlockSet, TruncationRule};
use fcm_core::geometry::{BoxNd, CutClassification, DirichletCondition, FieldData, ImplicitDomain, Shape, SurfacePatch};
use fcm_core::krylov::{pcg, reference_solve, Termination};
use fcm_core::mesh::build_base_mesh;
use fcm_core::partition::{leaf_adjacency, make_partition, simulate, Strategy};
use fcm_core::precond::{build, InverseMode};
use fcm_core::problem::{PrecondSettings, PreconditionerKind, Problem};
use fcm_core::sparse::CsrMatrix;

fn to_dense(m: &CsrMatrix) -> common::Dense {
    (0..m.n()).map(|i| (0..m.n()).map(|j| m.get(i, j)).collect()).collect()
}

fn block_set(n: usize, blocks: &[Vec<usize>]) -> BlockSet {
    let list = blocks.iter().enumerate().map(|(l, b)| Block { indices: b.clone(), leaf: l, kind: BlockKind::Full }).collect();
    BlockSet::new(n, list).unwrap()
}

fn stabilized() -> InverseMode {
    InverseMode::stabilized(1e-13).unwrap()
}

/// Poisson on a square with a circular hole, refined `k` times toward the hole.
fn holed_square(k: u32) -> Problem {
    holed_square_with(k, 0.0)
}

fn holed_square_with(k: u32, alpha: f64) -> Problem {
    let mut mesh = build_base_mesh(&[0.0, 0.0], &[1.0, 1.0], &[4, 4]).unwrap();
    let hole = Shape::Ball { center: [0.52, 0.47, 0.0], radius: 0.21 };
    let surface = hole.clone();
    mesh.refine_toward(&move |b: &BoxNd| surface.box_state(b) == CutClassification::Cut, k);
    let bounds = mesh.domain_box();
    let domain = ImplicitDomain::new(Shape::Complement(Box::new(hole)), alpha).unwrap().with_dirichlet(DirichletCondition {
        patch: SurfacePatch::box_face(&bounds, 1, false),
        beta: 1e4,
        value: FieldData::Constant(vec![0.0]),
        components: None,
    });
    let model = ModelProblem::poisson(1.0).unwrap().with_body_load(FieldData::Constant(vec![1.0]));
    Problem::build(mesh, domain, model, 2, AssemblySettings::default()).unwrap()
}

#[test]
fn oracle_identity_blocks_give_identity() {
    let a = common::identity(5);
    let s = common::dense_schwarz(&a, &[vec![0, 1], vec![2, 3, 4]], 1e-13);
    assert_eq!(s, common::identity(5));
}

#[test]
fn one_block_over_everything_is_the_inverse() {
    let a = vec![vec![4.0, 1.0, 0.0], vec![1.0, 3.0, 1.0], vec![0.0, 1.0, 2.0]];
    let csr = CsrMatrix::from_dense(&nalgebra::DMatrix::from_fn(3, 3, |i, j| a[i][j]));
    let s = build(&csr, &block_set(3, &[vec![0, 1, 2]]), stabilized()).unwrap().s;
    let inv = common::inverse(&a).unwrap();
    for i in 0..3 {
        for j in 0..3 {
            assert!((s.get(i, j) - inv[i][j]).abs() < 1e-14);
        }
    }
}

#[test]
fn tiny_eigenvalue_is_discarded_then_diagonally_scaled() {
    let csr = CsrMatrix::from_diagonal(&[1.0, 1e-20]);
    let pre = build(&csr, &block_set(2, &[vec![0, 1]]), stabilized()).unwrap();
    assert_eq!(pre.stats.discarded_eigenvalues, 1);
    assert_eq!(pre.stats.diagonal_fallbacks, 1);
    assert_eq!(to_dense(&pre.s), vec![vec![1.0, 0.0], vec![0.0, 1e20]]);
}

#[test]
fn uncovered_dofs_get_diagonal_scaling() {
    let a = vec![vec![2.0, 0.5, 0.0], vec![0.5, 4.0, 0.0], vec![0.0, 0.0, 8.0]];
    let csr = CsrMatrix::from_dense(&nalgebra::DMatrix::from_fn(3, 3, |i, j| a[i][j]));
    let pre = build(&csr, &block_set(3, &[vec![0, 1]]), stabilized()).unwrap();
    assert_eq!(pre.stats.diagonal_fallbacks, 1);
    assert_eq!(pre.s.get(2, 2), 0.125);
    let oracle = common::dense_schwarz(&a, &[vec![0, 1]], 1e-13);
    for i in 0..3 {
        for j in 0..3 {
            assert!((pre.s.get(i, j) - oracle[i][j]).abs() < 1e-15);
        }
    }
}

#[test]
fn fcm_preconditioner_matches_oracle() {
    let problem = holed_square(1);
    assert!(problem.n_dofs() <= 500, "{} dofs", problem.n_dofs());
    let a = to_dense(problem.a());
    for kind in [PreconditionerKind::FullBlocks, PreconditionerKind::TruncatedBlocks] {
        let settings = PrecondSettings::default().with_kind(kind);
        let set = problem.filtered_blocks(&settings).unwrap();
        let blocks: Vec<Vec<usize>> = set.blocks.iter().map(|b| b.indices.clone()).collect();
        let s = problem.preconditioner(&settings).unwrap().s;
        let oracle = common::dense_schwarz(&a, &blocks, 1e-13);
        let scale = oracle.iter().flatten().fold(0.0f64, |m, x| m.max(x.abs()));
        for i in 0..a.len() {
            for j in 0..a.len() {
                assert!((s.get(i, j) - oracle[i][j]).abs() <= 1e-11 * scale, "{kind:?} entry ({i},{j})");
            }
        }
    }
}

#[test]
fn truncated_overlap_is_bounded() {
    for k in 0..=3 {
        let problem = holed_square(k);
        let truncated = problem.blocks(PreconditionerKind::TruncatedBlocks, TruncationRule::Exact).unwrap();
        let full = problem.blocks(PreconditionerKind::FullBlocks, TruncationRule::Exact).unwrap();
        assert!(truncated.max_overlap() <= 4, "k={k}: {}", truncated.max_overlap());
        assert!(full.max_overlap() >= truncated.max_overlap());
        for b in &truncated.blocks {
            let f = &full.blocks.iter().find(|x| x.leaf == b.leaf).unwrap().indices;
            assert!(b.indices.iter().all(|i| f.binary_search(i).is_ok()));
        }
    }
}

#[test]
fn threshold_filter_drops_interior_blocks() {
    let problem = holed_square(0);
    let all = problem.filtered_blocks(&PrecondSettings::default()).unwrap();
    let cut_only = problem.filtered_blocks(&PrecondSettings { eta_bar: 0.99, ..PrecondSettings::default() }).unwrap();
    assert!(cut_only.blocks.len() < all.blocks.len());
    for b in &cut_only.blocks {
        assert!(problem.eta()[b.leaf] < 0.99);
    }
}

#[test]
fn pcg_matches_dense_solution_on_refined_cut_problem() {
    let problem = holed_square_with(2, 1e-8);
    let x_ref = reference_solve(problem.a(), problem.b()).unwrap();
    let pre = problem.preconditioner(&PrecondSettings::default()).unwrap();
    let (x, rep) = pcg(problem.a(), problem.b(), &pre, 1e-12, 5000, Some(&x_ref)).unwrap();
    assert_eq!(rep.reason, Termination::Tolerance, "{:?}", rep.diagnostics);
    assert!(rep.energy_errors.last().copied().unwrap() < 1e-8);
    let scale = x_ref.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    assert!(x.iter().zip(&x_ref).all(|(a, b)| (a - b).abs() < 1e-7 * scale));
}

/// With α = 0 a corner sliver leaves `A` singular; PCG still reaches the tolerance.
#[test]
fn pcg_converges_on_singular_system() {
    let problem = holed_square(2);
    let pre = problem.preconditioner(&PrecondSettings::default()).unwrap();
    assert!(pre.stats.discarded_eigenvalues > 0);
    let (_, rep) = pcg(problem.a(), problem.b(), &pre, 1e-10, 5000, None).unwrap();
    assert_eq!(rep.reason, Termination::Tolerance, "{:?}", rep.diagnostics);
}

#[test]
fn partitions_own_each_active_leaf_once() {
    let problem = holed_square(2);
    for strategy in [Strategy::Slab, Strategy::Sfc] {
        for ranks in [1, 3, 4] {
            let part = make_partition(&problem.mesh, &problem.dofs, &problem.supports, ranks, strategy).unwrap();
            let mut count = vec![0; problem.mesh.n_leaves()];
            for r in &part.ranks {
                for &l in &r.owned {
                    count[l] += 1;
                }
                assert!(r.l1.iter().chain(&r.l2).all(|l| !r.owned.contains(l)));
                assert!(r.l2.iter().all(|l| !r.l1.contains(l)));
            }
            for l in 0..problem.mesh.n_leaves() {
                assert_eq!(count[l], usize::from(problem.mesh.is_leaf_active(l)));
            }
            let owned_dofs: usize = (0..ranks).map(|r| part.owned_dofs(r, &problem.dofs).iter().filter(|&&o| o).count()).sum();
            assert_eq!(owned_dofs, problem.n_dofs());
        }
    }
}

#[test]
fn first_ghost_layer_is_the_neighborhood_of_owned_leaves() {
    let problem = holed_square(1);
    let adj = leaf_adjacency(&problem.mesh, &problem.dofs, &problem.supports);
    let part = make_partition(&problem.mesh, &problem.dofs, &problem.supports, 3, Strategy::Slab).unwrap();
    for r in &part.ranks {
        let mut expected: Vec<usize> = r.owned.iter().flat_map(|&l| adj[l].iter().copied()).filter(|l| !r.owned.contains(l)).collect();
        expected.sort_unstable();
        expected.dedup();
        let mut l1 = r.l1.clone();
        l1.sort_unstable();
        assert_eq!(l1, expected);
    }
}

#[test]
fn stitched_operators_equal_serial() {
    let problem = holed_square(2);
    let settings = PrecondSettings::default();
    let serial = problem.preconditioner(&settings).unwrap();
    let blocks = problem.filtered_blocks(&settings).unwrap();
    for strategy in [Strategy::Slab, Strategy::Sfc] {
        for ranks in [2, 5] {
            let part = make_partition(&problem.mesh, &problem.dofs, &problem.supports, ranks, strategy).unwrap();
            let (a, s, reports) = simulate(&problem, &part, &blocks, settings.mode().unwrap()).unwrap();
            assert!(a == *problem.a(), "{strategy:?}/{ranks}: A differs");
            assert!(s == serial.s, "{strategy:?}/{ranks}: S differs");
            assert_eq!(reports.len(), ranks);
        }
    }
}
