mod common;

use std::collections::HashMap;

use fcm_core::assembly::{AssemblySettings, ModelProblem};
use fcm_core::basis::{eval_derivatives, eval_modes};
use fcm_core::dofs::{enumerate_dofs, eval_support, leaf_supports};
use fcm_core::geometry::{
    quadrature_cells, volume_fraction, BoxNd, CutClassification, DirichletCondition, FieldData, ImplicitDomain, Shape,
    SurfacePatch,
};
use fcm_core::krylov::reference_solve;
use fcm_core::mesh::{build_base_mesh, MlhpMesh};
use fcm_core::problem::Problem;

fn refined_square() -> MlhpMesh {
    let mut mesh = build_base_mesh(&[0.0, 0.0], &[1.0, 1.0], &[3, 3]).unwrap();
    let disc = Shape::Ball { center: [0.4, 0.45, 0.0], radius: 0.3 };
    mesh.refine_toward(&move |b: &BoxNd| disc.box_state(b) == CutClassification::Cut, 2);
    mesh
}

#[test]
fn mode_derivatives_match_finite_differences() {
    for p in 1..=6 {
        for &xi in &[-0.93, -0.4, 0.0, 0.27, 0.81] {
            let exact = eval_derivatives(p, xi);
            for (m, &d) in exact.iter().enumerate() {
                let f = |x: &[f64; 3]| eval_modes(p, x[0])[m];
                let g = common::fd_gradient(&f, &[xi, 0.0, 0.0], 1, 1e-6);
                assert!((g[0] - d).abs() < 1e-7, "p={p} mode={m} xi={xi}: {} vs {d}", g[0]);
            }
        }
    }
}

#[test]
fn internal_modes_vanish_at_endpoints() {
    for p in 2..=8 {
        for xi in [-1.0, 1.0] {
            for v in &eval_modes(p, xi)[2..] {
                assert!(v.abs() < 1e-14);
            }
        }
    }
}

#[test]
fn leaf_gradients_match_finite_differences() {
    let mesh = refined_square();
    let dofs = enumerate_dofs(&mesh, 3, 1).unwrap();
    let supports = leaf_supports(&mesh, &dofs);
    for leaf in (0..mesh.n_leaves()).step_by(5) {
        let b = &mesh.leaf(leaf).bounds;
        let x = [b.lo[0] + 0.37 * b.width(0), b.lo[1] + 0.61 * b.width(1), 0.0];
        let h = 1e-6 * b.width(0);
        let exact = eval_support(&mesh, &dofs, leaf, &supports[leaf], &x);
        for (k, (_, grad)) in exact.iter().enumerate() {
            let f = |y: &[f64; 3]| eval_support(&mesh, &dofs, leaf, &supports[leaf], y)[k].0;
            let g = common::fd_gradient(&f, &x, 2, h);
            let scale = grad[0].abs().max(grad[1].abs()).max(1.0);
            assert!((g[0] - grad[0]).abs() < 1e-5 * scale && (g[1] - grad[1]).abs() < 1e-5 * scale);
        }
    }
}

fn values_at(mesh: &MlhpMesh, leaf: usize, x: &[f64; 3], p: usize) -> HashMap<usize, f64> {
    let dofs = enumerate_dofs(mesh, p, 1).unwrap();
    let supports = leaf_supports(mesh, &dofs);
    let vals = eval_support(mesh, &dofs, leaf, &supports[leaf], x);
    supports[leaf].functions.iter().zip(vals).map(|(&f, (v, _))| (f, v)).collect()
}

#[test]
fn basis_is_continuous_across_leaf_faces() {
    let mesh = refined_square();
    let p = 3;
    let mut checked = 0;
    for a in 0..mesh.n_leaves() {
        for b in a + 1..mesh.n_leaves() {
            let (ba, bb) = (&mesh.leaf(a).bounds, &mesh.leaf(b).bounds);
            let Some((lo, hi)) = shared_face(ba, bb) else { continue };
            for t in [0.23, 0.5, 0.88] {
                let x = [lo[0] + t * (hi[0] - lo[0]), lo[1] + t * (hi[1] - lo[1]), 0.0];
                let va = values_at(&mesh, a, &x, p);
                let vb = values_at(&mesh, b, &x, p);
                for f in va.keys().chain(vb.keys()) {
                    let (u, v) = (va.get(f).copied().unwrap_or(0.0), vb.get(f).copied().unwrap_or(0.0));
                    assert!((u - v).abs() < 1e-12, "function {f} jumps across leaves {a}/{b}: {u} vs {v}");
                }
            }
            checked += 1;
        }
    }
    assert!(checked > 20);
}

/// Common face of two boxes of positive length, if any.
fn shared_face(a: &BoxNd, b: &BoxNd) -> Option<([f64; 2], [f64; 2])> {
    let mut lo = [0.0; 2];
    let mut hi = [0.0; 2];
    let mut degenerate = 0;
    for k in 0..2 {
        lo[k] = a.lo[k].max(b.lo[k]);
        hi[k] = a.hi[k].min(b.hi[k]);
        if hi[k] < lo[k] - 1e-12 {
            return None;
        }
        if hi[k] - lo[k] < 1e-12 {
            degenerate += 1;
        }
    }
    if degenerate != 1 {
        return None;
    }
    Some((lo, hi))
}

#[test]
fn refined_leaves_tile_the_domain() {
    let mesh = refined_square();
    let total: f64 = (0..mesh.n_leaves()).map(|l| mesh.leaf(l).bounds.volume()).sum();
    assert!((total - 1.0).abs() < 1e-12);
    for i in 0..mesh.n_leaves() {
        for j in i + 1..mesh.n_leaves() {
            if let Some(o) = mesh.leaf(i).bounds.intersect(&mesh.leaf(j).bounds) {
                assert!(o.volume() < 1e-14, "leaves {i} and {j} overlap");
            }
        }
    }
    assert_eq!(mesh.max_level(), 2);
}

#[test]
fn leaf_centers_locate_their_leaf() {
    let mesh = refined_square();
    for l in 0..mesh.n_leaves() {
        assert_eq!(mesh.locate(&mesh.leaf(l).bounds.center()), Some(l));
    }
}

#[test]
fn disc_volume_fraction_matches_pixel_count() {
    let disc = Shape::Ball { center: [0.5, 0.5, 0.0], radius: 0.5 };
    let domain = ImplicitDomain::new(disc.clone(), 0.0).unwrap();
    let unit = BoxNd::new(&[0.0, 0.0], &[1.0, 1.0]).unwrap();
    let eta = volume_fraction(&domain, &unit, 8);
    assert!((eta - std::f64::consts::FRAC_PI_4).abs() < 2e-3, "eta {eta}");
    let pixels = common::sampled_fraction(&|x| disc.inside(x), [0.0; 3], [1.0, 1.0, 0.0], 2, 2000);
    assert!((eta - pixels).abs() < 2e-3, "eta {eta}, pixels {pixels}");
}

#[test]
fn partial_cell_fractions_match_pixel_count() {
    let shape = Shape::Ball { center: [0.1, -0.2, 0.0], radius: 0.7 };
    let domain = ImplicitDomain::new(shape.clone(), 0.0).unwrap();
    for (lo, hi) in [([0.0, 0.0], [0.5, 0.5]), ([0.25, 0.25], [0.75, 0.75]), ([0.5, 0.0], [1.0, 0.5])] {
        let b = BoxNd::new(&lo, &hi).unwrap();
        let eta = volume_fraction(&domain, &b, 7);
        let pixels = common::sampled_fraction(&|x| shape.inside(x), [lo[0], lo[1], 0.0], [hi[0], hi[1], 0.0], 2, 1000);
        assert!((eta - pixels).abs() < 5e-3, "box {lo:?}: eta {eta}, pixels {pixels}");
    }
}

#[test]
fn quadrature_weights_sum_to_cell_volume() {
    let domain = ImplicitDomain::new(Shape::Ball { center: [0.3, 0.3, 0.3], radius: 0.4 }, 0.0).unwrap();
    let b = BoxNd::new(&[0.0; 3], &[0.5; 3]).unwrap();
    let q = quadrature_cells(&domain, &b, 3, 3);
    assert!((q.total_volume() - b.volume()).abs() < 1e-14);
}

fn refined_poisson() -> Problem {
    let mut mesh = build_base_mesh(&[0.0, 0.0], &[1.0, 1.0], &[2, 2]).unwrap();
    mesh.refine_toward(&|b: &BoxNd| b.lo[0] < 0.3 && b.lo[1] < 0.3, 2);
    let bounds = mesh.domain_box();
    let domain = ImplicitDomain::new(Shape::All, 0.0).unwrap().with_dirichlet(DirichletCondition {
        patch: SurfacePatch::box_face(&bounds, 0, false),
        beta: 10.0,
        value: FieldData::Constant(vec![0.0]),
        components: None,
    });
    let model = ModelProblem::poisson(1.0).unwrap().with_body_load(FieldData::Constant(vec![1.0]));
    Problem::build(mesh, domain, model, 3, AssemblySettings::default()).unwrap()
}

#[test]
fn boundary_fitted_refined_system_is_spd() {
    let problem = refined_poisson();
    let a = problem.a().to_dense();
    let dense: common::Dense = (0..a.nrows()).map(|i| (0..a.ncols()).map(|j| a[(i, j)]).collect()).collect();
    let (vals, _) = common::jacobi_eigen(&dense);
    assert!(vals[0] > 1e-10 * vals[vals.len() - 1], "smallest eigenvalue {}", vals[0]);
    assert!(problem.a().asymmetry() <= 1e-13 * problem.a().max_abs());
}

/// `u = 1 + 2x - x²` solves `-u'' = 2` with `u(0) = 1`, `u'(1) = 0`, and lies in the p = 2 space.
#[test]
fn quadratic_solution_is_reproduced() {
    let mut mesh = build_base_mesh(&[0.0], &[1.0], &[3]).unwrap();
    mesh.refine_toward(&|b: &BoxNd| b.lo[0] < 0.4, 2);
    let bounds = mesh.domain_box();
    let domain = ImplicitDomain::new(Shape::All, 0.0).unwrap().with_dirichlet(DirichletCondition {
        patch: SurfacePatch::box_face(&bounds, 0, false),
        beta: 1e12,
        value: FieldData::Constant(vec![1.0]),
        components: None,
    });
    let model = ModelProblem::poisson(1.0).unwrap().with_body_load(FieldData::Constant(vec![2.0]));
    let problem = Problem::build(mesh, domain, model, 2, AssemblySettings::default()).unwrap();
    let x = reference_solve(problem.a(), problem.b()).unwrap();
    let supports = leaf_supports(&problem.mesh, &problem.dofs);
    for leaf in 0..problem.mesh.n_leaves() {
        let b = &problem.mesh.leaf(leaf).bounds;
        for t in [0.0, 0.3, 0.9] {
            let pt = [b.lo[0] + t * b.width(0), 0.0, 0.0];
            let vals = eval_support(&problem.mesh, &problem.dofs, leaf, &supports[leaf], &pt);
            let u: f64 = supports[leaf].functions.iter().zip(&vals).map(|(&f, (v, _))| x[f] * v).sum();
            let exact = 1.0 + 2.0 * pt[0] - pt[0] * pt[0];
            assert!((u - exact).abs() < 1e-9, "x={} u={u} exact={exact}", pt[0]);
        }
    }
}

#[test]
fn fully_outside_leaves_carry_no_functions() {
    let mesh = build_base_mesh(&[0.0, 0.0], &[1.0, 1.0], &[4, 4]).unwrap();
    let domain = ImplicitDomain::new(Shape::below(0, 0.6), 0.0).unwrap();
    let model = ModelProblem::poisson(1.0).unwrap();
    let problem = Problem::build(mesh, domain, model, 2, AssemblySettings::default()).unwrap();
    for l in 0..problem.mesh.n_leaves() {
        let outside = problem.mesh.leaf(l).bounds.lo[0] >= 0.75;
        assert_eq!(problem.mesh.is_leaf_active(l), !outside);
    }
    for sl in &problem.dofs.support_leaves {
        assert!(sl.iter().any(|&l| problem.mesh.is_leaf_active(l)));
    }
    let diag = problem.a().diagonal();
    assert!(diag.iter().all(|&d| d > 0.0));
}
