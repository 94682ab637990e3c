//! Run configuration: `[section]` headers, `key = value` lines and `#` comments.
//!
//! `[dirichlet]` and `[neumann]` may repeat, one section per boundary patch.
//! Shapes are written as expressions, e.g. `and(all, not(ball(0.5, 0.5, 0.5, 0.05)))`.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use crate::assembly::{AssemblySettings, ModelKind, ModelProblem};
use crate::blocks::TruncationRule;
use crate::error::{FcmError, Result};
use crate::geometry::{
    BoxNd, DirichletCondition, FieldData, ImplicitDomain, NeumannCondition, Shape, SurfacePatch, Traction, VoxelGrid,
};
use crate::mesh::{build_base_mesh, MlhpMesh};
use crate::partition::Strategy;
use crate::problem::{PrecondSettings, PreconditionerKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProblemKind {
    Poisson,
    Elasticity,
}

#[derive(Debug, Clone, PartialEq)]
pub enum BodyLoad {
    Constant(Vec<f64>),
    /// Source of the manufactured solution `u = Π sin(π x_a)` of the Poisson problem.
    Sine,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSection {
    pub kind: ProblemKind,
    pub conductivity: f64,
    pub youngs_modulus: f64,
    pub poisson_ratio: f64,
    pub body_load: Option<BodyLoad>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeometrySection {
    pub shape: String,
    pub alpha_fict: f64,
    pub voxel_file: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeshSection {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub counts: Vec<usize>,
    /// `none`, `boundary` (leaves cut by the geometry) or a shape expression.
    pub refine: String,
    pub depth: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscretizationSection {
    pub p: usize,
    pub tree_depth: usize,
    pub quadrature_order: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverSection {
    pub tol: f64,
    pub max_iter: usize,
    pub reference: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartitionSection {
    pub ranks: Vec<usize>,
    pub strategies: Vec<Strategy>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PatchSpec {
    /// Domain face: axis and upper/lower side.
    Face { axis: usize, upper: bool },
    Sphere { center: Vec<f64>, radius: f64, inward: bool },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DirichletSection {
    pub patch: PatchSpec,
    pub beta: f64,
    pub value: Vec<f64>,
    pub components: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TractionSpec {
    Vector(Vec<f64>),
    Pressure(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeumannSection {
    pub patch: PatchSpec,
    pub traction: TractionSpec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudySection {
    pub eta_values: Vec<f64>,
    pub cut_axis: usize,
    pub cut_cell: usize,
    pub eta_bars: Vec<f64>,
    pub depths: Vec<u32>,
    pub kinds: Vec<PreconditionerKind>,
    pub spectrum: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputSection {
    pub vtk: bool,
    pub matrices: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub problem: ProblemSection,
    pub geometry: GeometrySection,
    pub mesh: MeshSection,
    pub discretization: DiscretizationSection,
    pub preconditioner: PrecondSettings,
    pub solver: SolverSection,
    pub partition: PartitionSection,
    pub dirichlet: Vec<DirichletSection>,
    pub neumann: Vec<NeumannSection>,
    pub study: StudySection,
    pub output: OutputSection,
}

struct Entry {
    key: String,
    value: String,
    line: usize,
    used: bool,
}

struct Section {
    name: String,
    line: usize,
    entries: Vec<Entry>,
}

impl Section {
    fn take(&mut self, key: &str) -> Option<(String, usize)> {
        self.entries.iter_mut().find(|e| e.key == key).map(|e| {
            e.used = true;
            (e.value.clone(), e.line)
        })
    }

    fn finish(&self) -> Result<()> {
        match self.entries.iter().find(|e| !e.used) {
            Some(e) => Err(FcmError::config_at(e.line, format!("unknown key '{}' in [{}]", e.key, self.name))),
            None => Ok(()),
        }
    }

    fn parse<T: std::str::FromStr>(&mut self, key: &str) -> Result<Option<(T, usize)>>
    where
        T::Err: std::fmt::Display,
    {
        match self.take(key) {
            None => Ok(None),
            Some((v, line)) => v
                .parse::<T>()
                .map(|x| Some((x, line)))
                .map_err(|e| FcmError::config_at(line, format!("{key}: cannot parse '{v}': {e}"))),
        }
    }

    fn list<T: std::str::FromStr>(&mut self, key: &str) -> Result<Option<(Vec<T>, usize)>>
    where
        T::Err: std::fmt::Display,
    {
        match self.take(key) {
            None => Ok(None),
            Some((v, line)) => v
                .split_whitespace()
                .map(|t| t.parse::<T>().map_err(|e| FcmError::config_at(line, format!("{key}: cannot parse '{t}': {e}"))))
                .collect::<Result<Vec<T>>>()
                .map(|x| Some((x, line))),
        }
    }

    fn boolean(&mut self, key: &str) -> Result<Option<bool>> {
        match self.take(key) {
            None => Ok(None),
            Some((v, line)) => match v.as_str() {
                "true" | "yes" | "1" => Ok(Some(true)),
                "false" | "no" | "0" => Ok(Some(false)),
                _ => Err(FcmError::config_at(line, format!("{key}: expected true or false, got '{v}'"))),
            },
        }
    }
}

fn split_sections(text: &str) -> Result<Vec<Section>> {
    let mut sections: Vec<Section> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some(rest) = content.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| FcmError::config_at(line, "section header must end with ']'"))?
                .trim()
                .to_string();
            sections.push(Section { name, line, entries: Vec::new() });
            continue;
        }
        let (k, v) = content
            .split_once('=')
            .ok_or_else(|| FcmError::config_at(line, format!("expected 'key = value', got '{content}'")))?;
        let section = sections
            .last_mut()
            .ok_or_else(|| FcmError::config_at(line, "key outside of any section"))?;
        let key = k.trim().to_string();
        if section.entries.iter().any(|e| e.key == key) {
            return Err(FcmError::config_at(line, format!("duplicate key '{key}'")));
        }
        section.entries.push(Entry { key, value: v.trim().to_string(), line, used: false });
    }
    Ok(sections)
}

fn range_check(ok: bool, line: usize, msg: impl Into<String>) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(FcmError::config_at(line, msg))
    }
}

fn parse_patch(sec: &mut Section, dim: usize) -> Result<PatchSpec> {
    if let Some((face, line)) = sec.take("face") {
        let mut chars = face.chars();
        let axis = match chars.next() {
            Some('x') => 0,
            Some('y') => 1,
            Some('z') => 2,
            _ => return Err(FcmError::config_at(line, format!("face must be one of x0, x1, y0, y1, z0, z1, got '{face}'"))),
        };
        let upper = match chars.as_str() {
            "0" => false,
            "1" => true,
            _ => return Err(FcmError::config_at(line, format!("face must be one of x0, x1, y0, y1, z0, z1, got '{face}'"))),
        };
        range_check(axis < dim, line, format!("face '{face}' does not exist in {dim}D"))?;
        if sec.take("sphere_center").is_some() {
            return Err(FcmError::config_at(line, "give either face or sphere_center, not both"));
        }
        return Ok(PatchSpec::Face { axis, upper });
    }
    let (center, line) = sec
        .list::<f64>("sphere_center")?
        .ok_or_else(|| FcmError::config_at(sec.line, format!("[{}] needs 'face' or 'sphere_center'", sec.name)))?;
    range_check(center.len() == dim, line, format!("sphere_center needs {dim} coordinates"))?;
    let (radius, rl) = sec
        .parse::<f64>("sphere_radius")?
        .ok_or_else(|| FcmError::config_at(line, "sphere_center requires sphere_radius"))?;
    range_check(radius > 0.0, rl, "sphere_radius must be positive")?;
    let inward = sec.boolean("inward")?.unwrap_or(true);
    Ok(PatchSpec::Sphere { center, radius, inward })
}

/// Parses and validates a configuration, filling defaults.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let mut sections = split_sections(text)?;
    let known = [
        "problem", "geometry", "mesh", "discretization", "preconditioner", "solver", "partition", "dirichlet", "neumann",
        "study", "output",
    ];
    for s in &sections {
        if !known.contains(&s.name.as_str()) {
            return Err(FcmError::config_at(s.line, format!("unknown section [{}]", s.name)));
        }
        if s.name != "dirichlet" && s.name != "neumann" && sections.iter().filter(|t| t.name == s.name).count() > 1 {
            return Err(FcmError::config_at(s.line, format!("section [{}] appears more than once", s.name)));
        }
    }
    let mut take_section = |name: &str| -> Option<Section> {
        sections.iter().position(|s| s.name == name).map(|i| sections.remove(i))
    };
    let empty = |name: &str| Section { name: name.to_string(), line: 0, entries: Vec::new() };

    let mut mesh_sec = take_section("mesh").ok_or_else(|| FcmError::config("missing required section [mesh]"))?;
    let (lower, ll) = mesh_sec.list::<f64>("lower")?.ok_or_else(|| FcmError::config_at(mesh_sec.line, "[mesh] needs 'lower'"))?;
    let dim = lower.len();
    range_check((1..=3).contains(&dim), ll, "lower must have 1 to 3 coordinates")?;
    let (upper, ul) = mesh_sec.list::<f64>("upper")?.ok_or_else(|| FcmError::config_at(mesh_sec.line, "[mesh] needs 'upper'"))?;
    range_check(upper.len() == dim, ul, format!("upper needs {dim} coordinates"))?;
    range_check(lower.iter().zip(&upper).all(|(a, b)| b > a), ul, "upper must exceed lower on every axis")?;
    let (counts, cl) = mesh_sec.list::<usize>("counts")?.ok_or_else(|| FcmError::config_at(mesh_sec.line, "[mesh] needs 'counts'"))?;
    range_check(counts.len() == dim && counts.iter().all(|&c| c >= 1), cl, format!("counts needs {dim} positive integers"))?;
    let refine = mesh_sec.take("refine").map(|v| v.0).unwrap_or_else(|| "none".into());
    let depth = mesh_sec.parse::<u32>("depth")?.map(|v| v.0).unwrap_or(0);
    range_check(depth <= 12, mesh_sec.line, "refinement depth must be at most 12")?;
    if refine != "none" && refine != "boundary" {
        parse_shape_expr(&refine).map_err(|e| FcmError::config(format!("[mesh] refine: {e}")))?;
    }
    mesh_sec.finish()?;
    let mesh = MeshSection { lower, upper, counts, refine, depth };

    let mut pr = take_section("problem").ok_or_else(|| FcmError::config("missing required section [problem]"))?;
    let (kind_s, kl) = pr.take("kind").ok_or_else(|| FcmError::config_at(pr.line, "[problem] needs 'kind'"))?;
    let kind = match kind_s.as_str() {
        "poisson" => ProblemKind::Poisson,
        "elasticity" => ProblemKind::Elasticity,
        _ => return Err(FcmError::config_at(kl, format!("kind must be poisson or elasticity, got '{kind_s}'"))),
    };
    let conductivity = pr.parse::<f64>("conductivity")?.map(|v| v.0).unwrap_or(1.0);
    let youngs_modulus = pr.parse::<f64>("youngs_modulus")?.map(|v| v.0).unwrap_or(1.0);
    let poisson_ratio = pr.parse::<f64>("poisson_ratio")?.map(|v| v.0).unwrap_or(0.3);
    let n_fields = if kind == ProblemKind::Poisson { 1 } else { dim };
    let body_load = match pr.take("body_load") {
        None => None,
        Some((v, line)) if v == "sine" => {
            range_check(kind == ProblemKind::Poisson, line, "body_load = sine is only defined for poisson")?;
            Some(BodyLoad::Sine)
        }
        Some((v, line)) => {
            let vals: Vec<f64> = v
                .split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|e| FcmError::config_at(line, format!("body_load: {e}"))))
                .collect::<Result<_>>()?;
            range_check(vals.len() == n_fields, line, format!("body_load needs {n_fields} components"))?;
            Some(BodyLoad::Constant(vals))
        }
    };
    pr.finish()?;
    let problem = ProblemSection { kind, conductivity, youngs_modulus, poisson_ratio, body_load };
    problem.model_kind().validate_line(pr.line)?;

    let mut ge = take_section("geometry").unwrap_or_else(|| empty("geometry"));
    let shape = ge.take("shape").map(|v| v.0).unwrap_or_else(|| "all".into());
    parse_shape_expr(&shape).map_err(|e| FcmError::config(format!("[geometry] shape: {e}")))?;
    let alpha_fict = match ge.parse::<f64>("alpha_fict")? {
        Some((a, line)) => {
            range_check((0.0..1.0).contains(&a), line, "alpha_fict must lie in [0, 1)")?;
            a
        }
        None => 0.0,
    };
    let voxel_file = ge.take("voxel_file").map(|v| v.0);
    ge.finish()?;
    let geometry = GeometrySection { shape, alpha_fict, voxel_file };

    let mut di = take_section("discretization").unwrap_or_else(|| empty("discretization"));
    let p = match di.parse::<usize>("p")? {
        Some((p, line)) => {
            range_check((1..=10).contains(&p), line, "p must lie in 1..=10")?;
            p
        }
        None => 2,
    };
    let tree_depth = match di.parse::<usize>("tree_depth")? {
        Some((t, line)) => {
            range_check(t <= 10, line, "tree_depth must be at most 10")?;
            t
        }
        None => 3,
    };
    let quadrature_order = match di.parse::<usize>("quadrature_order")? {
        Some((q, line)) => {
            range_check((1..=30).contains(&q), line, "quadrature_order must lie in 1..=30")?;
            Some(q)
        }
        None => None,
    };
    di.finish()?;
    let discretization = DiscretizationSection { p, tree_depth, quadrature_order };

    let mut pc = take_section("preconditioner").unwrap_or_else(|| empty("preconditioner"));
    let mut preconditioner = PrecondSettings::default();
    if let Some((k, line)) = pc.take("kind") {
        preconditioner.kind = PreconditionerKind::parse(&k).ok_or_else(|| {
            FcmError::config_at(line, format!("kind must be none, jacobi, full_blocks or truncated_blocks, got '{k}'"))
        })?;
    }
    if let Some((e, line)) = pc.parse::<f64>("eta_bar")? {
        range_check((0.0..=1.0).contains(&e), line, format!("eta_bar must lie in [0, 1], got {e}"))?;
        preconditioner.eta_bar = e;
    }
    if let Some((e, line)) = pc.parse::<f64>("epsilon")? {
        range_check(e > 0.0 && e < 1.0, line, format!("epsilon must lie in (0, 1), got {e}"))?;
        preconditioner.epsilon = e;
    }
    if let Some(s) = pc.boolean("stabilized")? {
        preconditioner.stabilized = s;
    }
    if let Some(s) = pc.boolean("include_interior")? {
        preconditioner.include_interior = s;
    }
    if let Some((t, line)) = pc.take("truncation") {
        preconditioner.rule = match t.as_str() {
            "exact" => TruncationRule::Exact,
            "spanning" => TruncationRule::Spanning,
            _ => return Err(FcmError::config_at(line, format!("truncation must be exact or spanning, got '{t}'"))),
        };
    }
    pc.finish()?;

    let mut so = take_section("solver").unwrap_or_else(|| empty("solver"));
    let tol = match so.parse::<f64>("tol")? {
        Some((t, line)) => {
            range_check(t > 0.0 && t < 1.0, line, "tol must lie in (0, 1)")?;
            t
        }
        None => 1e-10,
    };
    let max_iter = match so.parse::<usize>("max_iter")? {
        Some((m, line)) => {
            range_check(m >= 1, line, "max_iter must be at least 1")?;
            m
        }
        None => 300_000,
    };
    let reference = so.boolean("reference")?.unwrap_or(false);
    so.finish()?;
    let solver = SolverSection { tol, max_iter, reference };

    let mut pa = take_section("partition").unwrap_or_else(|| empty("partition"));
    let ranks = match pa.list::<usize>("ranks")? {
        Some((r, line)) => {
            range_check(!r.is_empty() && r.iter().all(|&x| x >= 1), line, "ranks must be positive integers")?;
            r
        }
        None => vec![1, 2, 4, 8],
    };
    let strategies = match pa.take("strategy") {
        Some((s, line)) => s
            .split_whitespace()
            .map(|t| Strategy::parse(t).ok_or_else(|| FcmError::config_at(line, format!("strategy must be slab or sfc, got '{t}'"))))
            .collect::<Result<Vec<_>>>()?,
        None => vec![Strategy::Slab],
    };
    pa.finish()?;
    let partition = PartitionSection { ranks, strategies };

    let mut dirichlet = Vec::new();
    while let Some(mut s) = take_section("dirichlet") {
        let patch = parse_patch(&mut s, dim)?;
        let beta = match s.parse::<f64>("beta")? {
            Some((b, line)) => {
                range_check(b >= 0.0 && b.is_finite(), line, "beta must be non-negative")?;
                b
            }
            None => 1e10,
        };
        let value = match s.list::<f64>("value")? {
            Some((v, line)) => {
                range_check(v.len() == n_fields, line, format!("value needs {n_fields} components"))?;
                v
            }
            None => vec![0.0; n_fields],
        };
        let components = match s.list::<usize>("components")? {
            Some((c, line)) => {
                range_check(!c.is_empty() && c.iter().all(|&x| x < n_fields), line, format!("components must lie in 0..{n_fields}"))?;
                Some(c)
            }
            None => None,
        };
        s.finish()?;
        dirichlet.push(DirichletSection { patch, beta, value, components });
    }
    let mut neumann = Vec::new();
    while let Some(mut s) = take_section("neumann") {
        let patch = parse_patch(&mut s, dim)?;
        let traction = match (s.list::<f64>("traction")?, s.parse::<f64>("pressure")?) {
            (Some((t, line)), None) => {
                range_check(t.len() == n_fields, line, format!("traction needs {n_fields} components"))?;
                TractionSpec::Vector(t)
            }
            (None, Some((p, _))) => TractionSpec::Pressure(p),
            _ => return Err(FcmError::config_at(s.line, "[neumann] needs exactly one of traction or pressure")),
        };
        s.finish()?;
        neumann.push(NeumannSection { patch, traction });
    }

    let mut st = take_section("study").unwrap_or_else(|| empty("study"));
    let eta_values = match st.list::<f64>("eta_values")? {
        Some((v, line)) => {
            range_check(v.iter().all(|&e| e > 0.0 && e <= 1.0), line, "eta_values must lie in (0, 1]")?;
            v
        }
        None => vec![1e-2, 1e-3, 1e-4, 1e-5, 1e-6],
    };
    let cut_axis = match st.parse::<usize>("cut_axis")? {
        Some((a, line)) => {
            range_check(a < dim, line, "cut_axis out of range")?;
            a
        }
        None => 0,
    };
    let cut_cell = match st.parse::<usize>("cut_cell")? {
        Some((c, line)) => {
            range_check(c < mesh.counts[cut_axis], line, "cut_cell out of range")?;
            c
        }
        None => mesh.counts[cut_axis] - 1,
    };
    let eta_bars = match st.list::<f64>("eta_bars")? {
        Some((v, line)) => {
            range_check(v.iter().all(|e| (0.0..=1.0).contains(e)), line, "eta_bars must lie in [0, 1]")?;
            v
        }
        None => vec![0.0, 0.2, 0.4, 0.6, 0.8, 1.0],
    };
    let depths = st.list::<u32>("depths")?.map(|v| v.0).unwrap_or_else(|| vec![0, 1, 2, 3]);
    let kinds = match st.take("kinds") {
        Some((k, line)) => k
            .split_whitespace()
            .map(|t| PreconditionerKind::parse(t).ok_or_else(|| FcmError::config_at(line, format!("unknown preconditioner kind '{t}'"))))
            .collect::<Result<Vec<_>>>()?,
        None => vec![PreconditionerKind::FullBlocks, PreconditionerKind::TruncatedBlocks],
    };
    let spectrum = st.boolean("spectrum")?.unwrap_or(false);
    st.finish()?;
    let study = StudySection { eta_values, cut_axis, cut_cell, eta_bars, depths, kinds, spectrum };

    let mut ou = take_section("output").unwrap_or_else(|| empty("output"));
    let output = OutputSection { vtk: ou.boolean("vtk")?.unwrap_or(true), matrices: ou.boolean("matrices")?.unwrap_or(false) };
    ou.finish()?;

    Ok(RunConfig {
        problem,
        geometry,
        mesh,
        discretization,
        preconditioner,
        solver,
        partition,
        dirichlet,
        neumann,
        study,
        output,
    })
}

impl ProblemSection {
    fn model_kind(&self) -> ModelKind {
        match self.kind {
            ProblemKind::Poisson => ModelKind::Poisson { conductivity: self.conductivity },
            ProblemKind::Elasticity => {
                ModelKind::Elasticity { youngs_modulus: self.youngs_modulus, poisson_ratio: self.poisson_ratio }
            }
        }
    }
}

impl ModelKind {
    fn validate_line(self, line: usize) -> Result<()> {
        ModelProblem { kind: self, body_load: None }.validate().map_err(|e| match e {
            FcmError::Config { message, .. } => FcmError::config_at(line, message),
            other => other,
        })
    }
}

fn join<T: std::fmt::Display>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

fn fmt_f(x: f64) -> String {
    format!("{x:?}")
}

fn join_f(v: &[f64]) -> String {
    v.iter().map(|&x| fmt_f(x)).collect::<Vec<_>>().join(" ")
}

fn write_patch(out: &mut String, p: &PatchSpec) {
    match p {
        PatchSpec::Face { axis, upper } => {
            let _ = writeln!(out, "face = {}{}", ["x", "y", "z"][*axis], if *upper { 1 } else { 0 });
        }
        PatchSpec::Sphere { center, radius, inward } => {
            let _ = writeln!(out, "sphere_center = {}", join_f(center));
            let _ = writeln!(out, "sphere_radius = {}", fmt_f(*radius));
            let _ = writeln!(out, "inward = {inward}");
        }
    }
}

impl RunConfig {
    /// Serializes every setting explicitly; parsing the result yields an equal config.
    pub fn to_text(&self) -> String {
        let mut o = String::new();
        let pr = &self.problem;
        let _ = writeln!(o, "[problem]");
        let _ = writeln!(o, "kind = {}", if pr.kind == ProblemKind::Poisson { "poisson" } else { "elasticity" });
        let _ = writeln!(o, "conductivity = {}", fmt_f(pr.conductivity));
        let _ = writeln!(o, "youngs_modulus = {}", fmt_f(pr.youngs_modulus));
        let _ = writeln!(o, "poisson_ratio = {}", fmt_f(pr.poisson_ratio));
        match &pr.body_load {
            Some(BodyLoad::Sine) => {
                let _ = writeln!(o, "body_load = sine");
            }
            Some(BodyLoad::Constant(v)) => {
                let _ = writeln!(o, "body_load = {}", join_f(v));
            }
            None => {}
        }
        let _ = writeln!(o, "\n[geometry]\nshape = {}\nalpha_fict = {}", self.geometry.shape, fmt_f(self.geometry.alpha_fict));
        if let Some(v) = &self.geometry.voxel_file {
            let _ = writeln!(o, "voxel_file = {v}");
        }
        let m = &self.mesh;
        let _ = writeln!(
            o,
            "\n[mesh]\nlower = {}\nupper = {}\ncounts = {}\nrefine = {}\ndepth = {}",
            join_f(&m.lower),
            join_f(&m.upper),
            join(&m.counts),
            m.refine,
            m.depth
        );
        let d = &self.discretization;
        let _ = writeln!(o, "\n[discretization]\np = {}\ntree_depth = {}", d.p, d.tree_depth);
        if let Some(q) = d.quadrature_order {
            let _ = writeln!(o, "quadrature_order = {q}");
        }
        let pc = &self.preconditioner;
        let _ = writeln!(
            o,
            "\n[preconditioner]\nkind = {}\neta_bar = {}\nepsilon = {}\nstabilized = {}\ninclude_interior = {}\ntruncation = {}",
            pc.kind.name(),
            fmt_f(pc.eta_bar),
            fmt_f(pc.epsilon),
            pc.stabilized,
            pc.include_interior,
            if pc.rule == TruncationRule::Exact { "exact" } else { "spanning" }
        );
        let s = &self.solver;
        let _ = writeln!(o, "\n[solver]\ntol = {}\nmax_iter = {}\nreference = {}", fmt_f(s.tol), s.max_iter, s.reference);
        let pa = &self.partition;
        let _ = writeln!(
            o,
            "\n[partition]\nranks = {}\nstrategy = {}",
            join(&pa.ranks),
            pa.strategies.iter().map(|s| s.name()).collect::<Vec<_>>().join(" ")
        );
        for dsec in &self.dirichlet {
            let _ = writeln!(o, "\n[dirichlet]");
            write_patch(&mut o, &dsec.patch);
            let _ = writeln!(o, "beta = {}\nvalue = {}", fmt_f(dsec.beta), join_f(&dsec.value));
            if let Some(c) = &dsec.components {
                let _ = writeln!(o, "components = {}", join(c));
            }
        }
        for n in &self.neumann {
            let _ = writeln!(o, "\n[neumann]");
            write_patch(&mut o, &n.patch);
            match &n.traction {
                TractionSpec::Vector(t) => {
                    let _ = writeln!(o, "traction = {}", join_f(t));
                }
                TractionSpec::Pressure(p) => {
                    let _ = writeln!(o, "pressure = {}", fmt_f(*p));
                }
            }
        }
        let st = &self.study;
        let _ = writeln!(
            o,
            "\n[study]\neta_values = {}\ncut_axis = {}\ncut_cell = {}\neta_bars = {}\ndepths = {}\nkinds = {}\nspectrum = {}",
            join_f(&st.eta_values),
            st.cut_axis,
            st.cut_cell,
            join_f(&st.eta_bars),
            join(&st.depths),
            st.kinds.iter().map(|k| k.name()).collect::<Vec<_>>().join(" "),
            st.spectrum
        );
        let _ = writeln!(o, "\n[output]\nvtk = {}\nmatrices = {}", self.output.vtk, self.output.matrices);
        o
    }

    pub fn dim(&self) -> usize {
        self.mesh.lower.len()
    }

    pub fn n_fields(&self) -> usize {
        match self.problem.kind {
            ProblemKind::Poisson => 1,
            ProblemKind::Elasticity => self.dim(),
        }
    }

    pub fn model(&self) -> Result<ModelProblem> {
        let mut m = ModelProblem { kind: self.problem.model_kind(), body_load: None };
        m.validate()?;
        let dim = self.dim();
        m.body_load = match &self.problem.body_load {
            None => None,
            Some(BodyLoad::Constant(v)) => Some(FieldData::Constant(v.clone())),
            Some(BodyLoad::Sine) => {
                let k = self.problem.conductivity;
                Some(FieldData::Function(Arc::new(move |x: &[f64; 3]| {
                    let pi = std::f64::consts::PI;
                    let prod: f64 = (0..dim).map(|a| (pi * x[a]).sin()).product();
                    vec![k * dim as f64 * pi * pi * prod]
                })))
            }
        };
        Ok(m)
    }

    pub fn domain_box(&self) -> Result<BoxNd> {
        BoxNd::new(&self.mesh.lower, &self.mesh.upper)
    }

    /// Geometry with `voxel_file` resolved relative to `base`.
    pub fn shape(&self, base: &Path) -> Result<Shape> {
        let voxels = match &self.geometry.voxel_file {
            Some(f) => {
                let path = base.join(f);
                let mut lo = [0.0; 3];
                let mut hi = [0.0; 3];
                lo[..self.dim()].copy_from_slice(&self.mesh.lower);
                hi[..self.dim()].copy_from_slice(&self.mesh.upper);
                Some(Arc::new(VoxelGrid::read(&path, lo, hi)?))
            }
            None => None,
        };
        parse_shape_expr(&self.geometry.shape)?.to_shape(self.dim(), voxels.as_ref())
    }

    pub fn domain(&self, shape: Shape) -> Result<ImplicitDomain> {
        let bounds = self.domain_box()?;
        let dim = self.dim();
        let patch = |p: &PatchSpec| match p {
            PatchSpec::Face { axis, upper } => SurfacePatch::box_face(&bounds, *axis, *upper),
            PatchSpec::Sphere { center, radius, inward } => {
                let mut c = [0.0; 3];
                c[..dim].copy_from_slice(center);
                SurfacePatch::Sphere { dim, center: c, radius: *radius, inward: *inward }
            }
        };
        let mut d = ImplicitDomain::new(shape, self.geometry.alpha_fict)?;
        for s in &self.dirichlet {
            d = d.with_dirichlet(DirichletCondition {
                patch: patch(&s.patch),
                beta: s.beta,
                value: FieldData::Constant(s.value.clone()),
                components: s.components.clone(),
            });
        }
        for s in &self.neumann {
            let traction = match &s.traction {
                TractionSpec::Vector(t) => Traction::Vector(FieldData::Constant(t.clone())),
                TractionSpec::Pressure(p) => Traction::Pressure(*p),
            };
            d = d.with_neumann(NeumannCondition { patch: patch(&s.patch), traction });
        }
        Ok(d)
    }

    /// Base mesh refined toward the configured region up to `depth`.
    pub fn mesh_with_depth(&self, shape: &Shape, depth: u32) -> Result<MlhpMesh> {
        let mut mesh = build_base_mesh(&self.mesh.lower, &self.mesh.upper, &self.mesh.counts)?;
        if depth == 0 {
            return Ok(mesh);
        }
        match self.mesh.refine.as_str() {
            "none" => {}
            "boundary" => {
                let s = shape.clone();
                let depth_probe = self.discretization.tree_depth;
                mesh.refine_toward(
                    &move |b: &BoxNd| {
                        let d = ImplicitDomain { shape: s.clone(), alpha_fict: 0.0, dirichlet: Vec::new(), neumann: Vec::new() };
                        crate::geometry::classify_element(&d, b, depth_probe) == crate::geometry::CutClassification::Cut
                    },
                    depth,
                );
            }
            expr => {
                let region = parse_shape_expr(expr)?.to_shape(self.dim(), None)?;
                mesh.refine_toward(&move |b: &BoxNd| region.box_state(b) != crate::geometry::CutClassification::Outside, depth);
            }
        }
        Ok(mesh)
    }

    pub fn assembly_settings(&self) -> AssemblySettings {
        AssemblySettings {
            tree_depth: self.discretization.tree_depth,
            order: self.discretization.quadrature_order,
            surface_order: self.discretization.quadrature_order,
        }
    }
}

/// Parsed shape expression.
#[derive(Debug, Clone, PartialEq)]
pub enum ShapeExpr {
    Call(String, Vec<ShapeExpr>),
    Number(f64),
}

pub fn parse_shape_expr(text: &str) -> Result<ShapeExpr> {
    let tokens = tokenize(text)?;
    let mut pos = 0;
    let e = parse_expr(&tokens, &mut pos)?;
    if pos != tokens.len() {
        return Err(FcmError::config(format!("trailing input in shape expression '{text}'")));
    }
    Ok(e)
}

fn tokenize(text: &str) -> Result<Vec<String>> {
    let mut tokens = Vec::new();
    let mut cur = String::new();
    for ch in text.chars() {
        match ch {
            '(' | ')' | ',' => {
                if !cur.is_empty() {
                    tokens.push(std::mem::take(&mut cur));
                }
                tokens.push(ch.to_string());
            }
            c if c.is_whitespace() => {
                if !cur.is_empty() {
                    tokens.push(std::mem::take(&mut cur));
                }
            }
            c if c.is_ascii_alphanumeric() || "._-+".contains(c) => cur.push(c),
            c => return Err(FcmError::config(format!("unexpected character '{c}' in shape expression"))),
        }
    }
    if !cur.is_empty() {
        tokens.push(cur);
    }
    Ok(tokens)
}

fn parse_expr(tokens: &[String], pos: &mut usize) -> Result<ShapeExpr> {
    let tok = tokens.get(*pos).ok_or_else(|| FcmError::config("unexpected end of shape expression"))?;
    *pos += 1;
    if let Ok(x) = tok.parse::<f64>() {
        return Ok(ShapeExpr::Number(x));
    }
    if !tok.chars().next().is_some_and(|c| c.is_ascii_alphabetic()) {
        return Err(FcmError::config(format!("unexpected token '{tok}' in shape expression")));
    }
    let name = tok.clone();
    let mut args = Vec::new();
    if tokens.get(*pos).map(String::as_str) == Some("(") {
        *pos += 1;
        loop {
            args.push(parse_expr(tokens, pos)?);
            match tokens.get(*pos).map(String::as_str) {
                Some(",") => *pos += 1,
                Some(")") => {
                    *pos += 1;
                    break;
                }
                _ => return Err(FcmError::config(format!("expected ',' or ')' in arguments of {name}"))),
            }
        }
    }
    Ok(ShapeExpr::Call(name, args))
}

impl ShapeExpr {
    fn numbers(args: &[ShapeExpr], name: &str) -> Result<Vec<f64>> {
        args.iter()
            .map(|a| match a {
                ShapeExpr::Number(x) => Ok(*x),
                _ => Err(FcmError::config(format!("{name} expects numeric arguments"))),
            })
            .collect()
    }

    pub fn to_shape(&self, dim: usize, voxels: Option<&Arc<VoxelGrid>>) -> Result<Shape> {
        let (name, args) = match self {
            ShapeExpr::Number(x) => return Err(FcmError::config(format!("expected a shape, found number {x}"))),
            ShapeExpr::Call(n, a) => (n.as_str(), a.as_slice()),
        };
        let arity = |n: usize| -> Result<Vec<f64>> {
            let v = Self::numbers(args, name)?;
            if v.len() != n {
                return Err(FcmError::config(format!("{name} takes {n} numbers in {dim}D, got {}", v.len())));
            }
            Ok(v)
        };
        let pad = |v: &[f64]| {
            let mut a = [0.0; 3];
            a[..v.len()].copy_from_slice(v);
            a
        };
        Ok(match name {
            "all" if args.is_empty() => Shape::All,
            "empty" if args.is_empty() => Shape::Empty,
            "halfspace" => {
                let v = arity(dim + 1)?;
                Shape::HalfSpace { normal: pad(&v[..dim]), offset: v[dim] }
            }
            "below" | "above" => {
                let v = arity(2)?;
                let axis = v[0] as usize;
                if v[0] != axis as f64 || axis >= dim {
                    return Err(FcmError::config(format!("{name}: invalid axis {}", v[0])));
                }
                if name == "below" {
                    Shape::below(axis, v[1])
                } else {
                    Shape::above(axis, v[1])
                }
            }
            "ball" => {
                let v = arity(dim + 1)?;
                if v[dim] <= 0.0 {
                    return Err(FcmError::config("ball radius must be positive"));
                }
                Shape::Ball { center: pad(&v[..dim]), radius: v[dim] }
            }
            "box" => {
                let v = arity(2 * dim)?;
                Shape::AxisBox { lo: pad(&v[..dim]), hi: pad(&v[dim..]) }
            }
            "not" if args.len() == 1 => Shape::Complement(Box::new(args[0].to_shape(dim, voxels)?)),
            "and" | "or" if !args.is_empty() => {
                let parts = args.iter().map(|a| a.to_shape(dim, voxels)).collect::<Result<Vec<_>>>()?;
                if name == "and" {
                    Shape::Intersection(parts)
                } else {
                    Shape::Union(parts)
                }
            }
            "voxels" if args.is_empty() => match voxels {
                Some(g) => Shape::Voxels(g.clone()),
                None => Shape::All,
            },
            _ => return Err(FcmError::config(format!("unknown shape '{name}' with {} arguments", args.len()))),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "[problem]\nkind = poisson\n\n[mesh]\nlower = 0\nupper = 1\ncounts = 4\n";

    #[test]
    fn minimal_config_gets_defaults() {
        let c = parse_config(MINIMAL).unwrap();
        assert_eq!(c.solver.tol, 1e-10);
        assert_eq!(c.solver.max_iter, 300_000);
        assert_eq!(c.preconditioner.epsilon, 1e-13);
        assert_eq!(c.preconditioner.eta_bar, 1.0);
        assert_eq!(c.discretization.tree_depth, 3);
    }

    #[test]
    fn epsilon_round_trips() {
        let c = parse_config(&format!("{MINIMAL}[preconditioner]\nepsilon = 1e-13\n")).unwrap();
        assert_eq!(c.preconditioner.epsilon, 1e-13);
        let again = parse_config(&c.to_text()).unwrap();
        assert_eq!(again, c);
    }

    #[test]
    fn range_errors_carry_lines() {
        let err = parse_config(&format!("{MINIMAL}[preconditioner]\neta_bar = 1.5\n")).unwrap_err();
        match err {
            FcmError::Config { line: Some(9), .. } => {}
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            parse_config(&format!("{MINIMAL}[solver]\ncolour = red\n")),
            Err(FcmError::Config { line: Some(9), .. })
        ));
        assert!(parse_config("[problem]\nkind = poisson\n").is_err());
    }

    #[test]
    fn shape_expressions() {
        let e = parse_shape_expr("and(all, not(ball(0.5, 0.5, 0.5, 0.05)))").unwrap();
        let s = e.to_shape(3, None).unwrap();
        assert!(s.inside(&[0.1, 0.1, 0.1]));
        assert!(!s.inside(&[0.5, 0.5, 0.5]));
        assert!(parse_shape_expr("ball(1, 2").is_err());
        assert!(parse_shape_expr("ball(0.5, 0.5, 0.1)").unwrap().to_shape(3, None).is_err());
        let b = parse_shape_expr("below(0, 0.25)").unwrap().to_shape(2, None).unwrap();
        assert_eq!(b, Shape::below(0, 0.25));
    }
}
