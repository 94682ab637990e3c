//! Invariant checks on small built-in cases, run by `fcm verify`.

use crate::assembly::{AssemblySettings, ModelProblem};
use crate::config::parse_config;
use crate::error::Result;
use crate::geometry::{BoxNd, DirichletCondition, FieldData, ImplicitDomain, Shape, SurfacePatch};
use crate::krylov::{pcg, reference_solve, Termination};
use crate::mesh::build_base_mesh;
use crate::partition::{make_partition, simulate, Strategy};
use crate::problem::{PrecondSettings, Problem};
use crate::sparse::{dot, LinearOperator};

#[derive(Debug, Clone)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, passed: bool, detail: String) -> Check {
    Check { name, passed, detail }
}

fn cut_disc_problem() -> Result<Problem> {
    let mut mesh = build_base_mesh(&[0.0, 0.0], &[1.0, 1.0], &[4, 4])?;
    let hole = Shape::Ball { center: [0.5, 0.5, 0.0], radius: 0.23 };
    let surface = hole.clone();
    mesh.refine_toward(
        &move |b: &BoxNd| surface.box_state(b) == crate::geometry::CutClassification::Cut,
        1,
    );
    let bounds = mesh.domain_box();
    let domain = ImplicitDomain::new(Shape::Complement(Box::new(hole)), 0.0)?.with_dirichlet(DirichletCondition {
        patch: SurfacePatch::box_face(&bounds, 0, false),
        beta: 1e4,
        value: FieldData::Constant(vec![0.0]),
        components: None,
    });
    let model = ModelProblem::poisson(1.0)?.with_body_load(FieldData::Constant(vec![1.0]));
    Problem::build(mesh, domain, model, 2, AssemblySettings::default())
}

/// Runs every check; the returned list is in a fixed order.
pub fn run_checks() -> Result<Vec<Check>> {
    let mut out = Vec::new();

    let mesh = build_base_mesh(&[0.0], &[1.0], &[4])?;
    let bounds = mesh.domain_box();
    let mut domain = ImplicitDomain::new(Shape::All, 0.0)?;
    for upper in [false, true] {
        domain = domain.with_dirichlet(DirichletCondition {
            patch: SurfacePatch::box_face(&bounds, 0, upper),
            beta: 1e12,
            value: FieldData::Constant(vec![0.0]),
            components: None,
        });
    }
    let pi = std::f64::consts::PI;
    let model = ModelProblem::poisson(1.0)?
        .with_body_load(FieldData::Function(std::sync::Arc::new(move |x: &[f64; 3]| vec![pi * pi * (pi * x[0]).sin()])));
    let p1 = Problem::build(mesh, domain, model, 4, AssemblySettings::default())?;
    let pre = p1.preconditioner(&PrecondSettings::default())?;
    let xr = reference_solve(p1.a(), p1.b())?;
    let (x, rep) = pcg(p1.a(), p1.b(), &pre, 1e-12, 1000, Some(&xr))?;
    let err = rep.energy_errors.last().copied().unwrap_or(0.0);
    out.push(check(
        "pcg_matches_reference_1d",
        rep.reason == Termination::Tolerance && err < 1e-8,
        format!("{} iterations, energy error {err:e}", rep.iterations),
    ));
    let mid = x.iter().zip(&xr).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    out.push(check("pcg_solution_close_1d", mid < 1e-8, format!("max coefficient difference {mid:e}")));

    let p2 = cut_disc_problem()?;
    let total: f64 = (0..p2.mesh.n_leaves()).map(|l| p2.mesh.leaf(l).bounds.volume()).sum();
    out.push(check("leaves_tile_domain", (total - 1.0).abs() < 1e-12, format!("leaf volume sum {total}")));
    let asym = p2.a().asymmetry() / p2.a().max_abs();
    out.push(check("system_symmetric", asym < 1e-12, format!("relative asymmetry {asym:e}")));
    let pre = p2.preconditioner(&PrecondSettings::default())?;
    let sasym = pre.s.asymmetry() / pre.s.max_abs();
    out.push(check("preconditioner_symmetric", sasym < 1e-12, format!("relative asymmetry {sasym:e}")));
    let v: Vec<f64> = (0..p2.n_dofs()).map(|i| ((i * 7919) % 101) as f64 / 50.0 - 1.0).collect();
    let quad = dot(&v, &pre.s.apply(&v));
    out.push(check("preconditioner_nonnegative", quad >= 0.0, format!("vᵀSv = {quad:e}")));

    let blocks = p2.filtered_blocks(&PrecondSettings::default())?;
    let mode = PrecondSettings::default().mode()?;
    let mut iterations = Vec::new();
    let mut identical = true;
    for ranks in [1, 2, 4] {
        let part = make_partition(&p2.mesh, &p2.dofs, &p2.supports, ranks, Strategy::Slab)?;
        let (a, s, _) = simulate(&p2, &part, &blocks, mode)?;
        identical &= a == *p2.a() && s == pre.s;
        iterations.push(pcg(&a, p2.b(), &s, 1e-10, 10_000, None)?.1.iterations);
    }
    out.push(check(
        "partition_reproduces_serial",
        identical && iterations.windows(2).all(|w| w[0] == w[1]),
        format!("iterations per rank count {iterations:?}"),
    ));

    let text = "[problem]\nkind = elasticity\n[mesh]\nlower = 0 0\nupper = 1 1\ncounts = 2 2\n[dirichlet]\nface = x0\n";
    let c = parse_config(text)?;
    let again = parse_config(&c.to_text())?;
    out.push(check("config_round_trip", again == c, String::new()));
    Ok(out)
}
