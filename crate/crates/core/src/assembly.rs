//! Assembly of the stiffness matrix and load vector for Poisson and linear elasticity
//! with penalty Dirichlet conditions, Neumann tractions and body loads.
//!
//! Every contribution is computed per leaf (volume terms and the boundary points
//! falling on that leaf) and scattered in ascending leaf order, so any subset of
//! leaves reproduces the serial rows it fully covers bit for bit.

use rayon::prelude::*;

use crate::dofs::{DofMap, LeafEvaluator, LeafSupport};
use crate::error::{FcmError, Result};
use crate::geometry::{
    classify_element, quadrature_cells, surface_quadrature, CutClassification, FieldData, ImplicitDomain,
    QuadraturePartition, SurfacePatch, SurfacePoint, Traction,
};
use crate::mesh::MlhpMesh;
use crate::sparse::CsrMatrix;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ModelKind {
    Poisson { conductivity: f64 },
    Elasticity { youngs_modulus: f64, poisson_ratio: f64 },
}

#[derive(Debug, Clone)]
pub struct ModelProblem {
    pub kind: ModelKind,
    /// Volume source per field component; `None` means zero.
    pub body_load: Option<FieldData>,
}

impl ModelProblem {
    pub fn poisson(conductivity: f64) -> Result<Self> {
        let m = ModelProblem { kind: ModelKind::Poisson { conductivity }, body_load: None };
        m.validate()?;
        Ok(m)
    }

    pub fn elasticity(youngs_modulus: f64, poisson_ratio: f64) -> Result<Self> {
        let m = ModelProblem { kind: ModelKind::Elasticity { youngs_modulus, poisson_ratio }, body_load: None };
        m.validate()?;
        Ok(m)
    }

    pub fn with_body_load(mut self, load: FieldData) -> Self {
        self.body_load = Some(load);
        self
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            ModelKind::Poisson { conductivity } if !(conductivity > 0.0 && conductivity.is_finite()) => {
                Err(FcmError::config(format!("conductivity must be positive, got {conductivity}")))
            }
            ModelKind::Elasticity { youngs_modulus, poisson_ratio } => {
                if !(youngs_modulus > 0.0 && youngs_modulus.is_finite()) {
                    Err(FcmError::config(format!("Young's modulus must be positive, got {youngs_modulus}")))
                } else if !(poisson_ratio > -1.0 && poisson_ratio < 0.5) {
                    Err(FcmError::config(format!("Poisson ratio must lie in (-1, 0.5), got {poisson_ratio}")))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }

    pub fn n_fields(&self, dim: usize) -> usize {
        match self.kind {
            ModelKind::Poisson { .. } => 1,
            ModelKind::Elasticity { .. } => dim,
        }
    }

    /// Lamé parameters `(λ, μ)`. In one dimension elasticity reduces to `E u' v'`.
    pub fn lame(&self, dim: usize) -> (f64, f64) {
        match self.kind {
            ModelKind::Poisson { .. } => (0.0, 0.0),
            ModelKind::Elasticity { youngs_modulus: e, poisson_ratio: nu } => {
                if dim == 1 {
                    (0.0, 0.5 * e)
                } else {
                    (e * nu / ((1.0 + nu) * (1.0 - 2.0 * nu)), e / (2.0 * (1.0 + nu)))
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AssemblySettings {
    pub tree_depth: usize,
    /// Gauss points per direction in volume sub-cells; `None` means `p + 1`.
    pub order: Option<usize>,
    /// Gauss points per direction on boundary patches; `None` means `p + 1`.
    pub surface_order: Option<usize>,
}

impl Default for AssemblySettings {
    fn default() -> Self {
        AssemblySettings { tree_depth: 3, order: None, surface_order: None }
    }
}

impl AssemblySettings {
    pub fn volume_order(&self, p: usize) -> usize {
        self.order.unwrap_or(p + 1)
    }

    pub fn boundary_order(&self, p: usize) -> usize {
        self.surface_order.unwrap_or(p + 1)
    }
}

/// Classification, volume fraction and integration cells of one leaf.
#[derive(Debug, Clone)]
pub struct LeafGeometry {
    pub state: CutClassification,
    pub eta: f64,
    pub cells: QuadraturePartition,
    /// At least one quadrature point lies in the physical domain.
    pub physical: bool,
}

pub fn analyze_leaves(mesh: &MlhpMesh, domain: &ImplicitDomain, tree_depth: usize, order: usize) -> Vec<LeafGeometry> {
    (0..mesh.n_leaves())
        .into_par_iter()
        .map(|l| {
            let bounds = mesh.leaf(l).bounds;
            let state = classify_element(domain, &bounds, tree_depth);
            let cells = quadrature_cells(domain, &bounds, tree_depth, order);
            let eta = cells.physical_volume(&domain.shape) / bounds.volume();
            let physical = state != CutClassification::Outside && cells.has_physical_points(&domain.shape);
            LeafGeometry { state, eta, cells, physical }
        })
        .collect()
}

/// Volume fraction per leaf.
pub fn eta_table(mesh: &MlhpMesh, domain: &ImplicitDomain, depth: usize) -> Vec<f64> {
    (0..mesh.n_leaves())
        .into_par_iter()
        .map(|l| crate::geometry::volume_fraction(domain, &mesh.leaf(l).bounds, depth))
        .collect()
}

/// Leaves outside the physical domain (or, with `α = 0`, without any physical quadrature point)
/// are deactivated.
pub fn leaf_activity(geometry: &[LeafGeometry], domain: &ImplicitDomain) -> Vec<bool> {
    geometry
        .iter()
        .map(|g| g.state != CutClassification::Outside && (domain.alpha_fict > 0.0 || g.physical))
        .collect()
}

/// Boundary quadrature points assigned to one leaf; the index refers to the condition list.
#[derive(Debug, Clone, Default)]
pub struct LeafSurface {
    pub dirichlet: Vec<(usize, SurfacePoint)>,
    pub neumann: Vec<(usize, SurfacePoint)>,
}

fn rect_touches_leaf(patch: &SurfacePatch, leaf: &crate::geometry::BoxNd) -> bool {
    match *patch {
        SurfacePatch::Rect { axis, position, outward, .. } => {
            let (lo, hi) = (leaf.lo[axis], leaf.hi[axis]);
            (lo < position && position < hi)
                || (outward > 0.0 && hi == position)
                || (outward < 0.0 && lo == position)
        }
        SurfacePatch::Sphere { .. } => false,
    }
}

fn patch_points(mesh: &MlhpMesh, domain: &ImplicitDomain, patch: &SurfacePatch, order: usize) -> Result<Vec<(usize, SurfacePoint)>> {
    if patch.dim() != mesh.dim() {
        return Err(FcmError::config(format!(
            "boundary patch of dimension {} on a {}-dimensional mesh",
            patch.dim(),
            mesh.dim()
        )));
    }
    let physical = |pt: &SurfacePoint, scale: f64| {
        let delta = 1e-9 * scale;
        let probe = [pt.x[0] - delta * pt.normal[0], pt.x[1] - delta * pt.normal[1], pt.x[2] - delta * pt.normal[2]];
        domain.shape.inside(&probe)
    };
    let mut out = Vec::new();
    match patch {
        SurfacePatch::Rect { .. } => {
            for l in 0..mesh.n_leaves() {
                if !mesh.is_leaf_active(l) {
                    continue;
                }
                let bounds = mesh.leaf(l).bounds;
                if !rect_touches_leaf(patch, &bounds) {
                    continue;
                }
                if let Some(local) = patch.rect_within(&bounds) {
                    let scale = (0..mesh.dim()).map(|a| bounds.width(a)).fold(f64::INFINITY, f64::min);
                    for pt in surface_quadrature(&local, order)? {
                        if physical(&pt, scale) {
                            out.push((l, pt));
                        }
                    }
                }
            }
        }
        SurfacePatch::Sphere { radius, .. } => {
            for pt in surface_quadrature(patch, order)? {
                if let Some(l) = mesh.locate(&pt.x) {
                    if mesh.is_leaf_active(l) && physical(&pt, *radius) {
                        out.push((l, pt));
                    }
                }
            }
        }
    }
    Ok(out)
}

pub fn surface_points(mesh: &MlhpMesh, domain: &ImplicitDomain, order: usize) -> Result<Vec<LeafSurface>> {
    let mut out = vec![LeafSurface::default(); mesh.n_leaves()];
    for (c, cond) in domain.dirichlet.iter().enumerate() {
        if !(cond.beta >= 0.0 && cond.beta.is_finite()) {
            return Err(FcmError::config(format!("penalty factor must be non-negative, got {}", cond.beta)));
        }
        for (l, pt) in patch_points(mesh, domain, &cond.patch, order)? {
            out[l].dirichlet.push((c, pt));
        }
    }
    for (c, cond) in domain.neumann.iter().enumerate() {
        for (l, pt) in patch_points(mesh, domain, &cond.patch, order)? {
            out[l].neumann.push((c, pt));
        }
    }
    Ok(out)
}

/// Dense leaf matrix over the leaf's support DOFs (ascending) and the matching load entries.
#[derive(Debug, Clone)]
pub struct LeafContribution {
    pub dofs: Vec<usize>,
    pub matrix: Vec<f64>,
    pub load: Vec<f64>,
}

/// Everything needed to integrate any leaf; built once per discretization.
pub struct Assembler<'a> {
    pub mesh: &'a MlhpMesh,
    pub dofs: &'a DofMap,
    pub supports: &'a [LeafSupport],
    pub domain: &'a ImplicitDomain,
    pub model: &'a ModelProblem,
    pub geometry: &'a [LeafGeometry],
    pub surface: Vec<LeafSurface>,
}

impl<'a> Assembler<'a> {
    pub fn new(
        mesh: &'a MlhpMesh,
        dofs: &'a DofMap,
        supports: &'a [LeafSupport],
        domain: &'a ImplicitDomain,
        model: &'a ModelProblem,
        geometry: &'a [LeafGeometry],
        settings: &AssemblySettings,
    ) -> Result<Self> {
        model.validate()?;
        if dofs.n_fields != model.n_fields(mesh.dim()) {
            return Err(FcmError::Invalid(format!(
                "DOF map has {} fields but the model needs {}",
                dofs.n_fields,
                model.n_fields(mesh.dim())
            )));
        }
        let surface = surface_points(mesh, domain, settings.boundary_order(dofs.p))?;
        Ok(Assembler { mesh, dofs, supports, domain, model, geometry, surface })
    }

    pub fn leaf_contribution(&self, leaf: usize) -> LeafContribution {
        let dim = self.mesh.dim();
        let nf = self.dofs.n_fields;
        let support = &self.supports[leaf];
        let ns = support.functions.len();
        let n = ns * nf;
        let mut matrix = vec![0.0; n * n];
        let mut load = vec![0.0; n];
        let dofs = support.dofs(nf);
        if ns == 0 {
            return LeafContribution { dofs, matrix, load };
        }
        let mut ev = LeafEvaluator::new(self.mesh, leaf, self.dofs.p);
        let local: Vec<(u32, [usize; 3])> = support
            .functions
            .iter()
            .map(|&s| {
                let key = &self.dofs.functions[s];
                (key.level, ev.local_modes(key).expect("support function vanishes on its leaf"))
            })
            .collect();
        let mut vals = vec![0.0; ns];
        let mut grads = vec![[0.0; 3]; ns];
        let eval_at = |ev: &mut LeafEvaluator, x: &[f64; 3], vals: &mut [f64], grads: &mut [[f64; 3]]| {
            ev.set_point(x);
            for (i, (lvl, modes)) in local.iter().enumerate() {
                let (v, g) = ev.eval(*lvl, modes);
                vals[i] = v;
                grads[i] = g;
            }
        };

        // Gradient products M[a][b][i][j] = Σ w ∂_a N_i ∂_b N_j, for a <= b.
        let mut m = vec![vec![0.0; ns * ns]; dim * dim];
        for q in self.geometry[leaf].cells.weighted_points(self.domain) {
            eval_at(&mut ev, &q.x, &mut vals, &mut grads);
            for a in 0..dim {
                for b in a..dim {
                    let mab = &mut m[a * dim + b];
                    for i in 0..ns {
                        let gi = q.weight * grads[i][a];
                        if gi == 0.0 {
                            continue;
                        }
                        let row = &mut mab[i * ns..(i + 1) * ns];
                        for (j, r) in row.iter_mut().enumerate() {
                            *r += gi * grads[j][b];
                        }
                    }
                }
            }
            if let Some(f) = &self.model.body_load {
                let fx = f.eval(&q.x);
                for i in 0..ns {
                    for c in 0..nf {
                        load[i * nf + c] += q.weight * vals[i] * fx[c];
                    }
                }
            }
        }
        let get = |a: usize, b: usize, i: usize, j: usize| {
            if a <= b {
                m[a * dim + b][i * ns + j]
            } else {
                m[b * dim + a][j * ns + i]
            }
        };
        match self.model.kind {
            ModelKind::Poisson { conductivity } => {
                for i in 0..ns {
                    for j in 0..ns {
                        let s: f64 = (0..dim).map(|a| get(a, a, i, j)).sum();
                        matrix[i * n + j] = conductivity * s;
                    }
                }
            }
            ModelKind::Elasticity { .. } => {
                let (lambda, mu) = self.model.lame(dim);
                for i in 0..ns {
                    for j in 0..ns {
                        let trace: f64 = (0..dim).map(|c| get(c, c, i, j)).sum();
                        for a in 0..dim {
                            for b in 0..dim {
                                let mut v = lambda * get(a, b, i, j) + mu * get(b, a, i, j);
                                if a == b {
                                    v += mu * trace;
                                }
                                matrix[(i * nf + a) * n + j * nf + b] = v;
                            }
                        }
                    }
                }
            }
        }

        let surface = &self.surface[leaf];
        for (c, pt) in &surface.dirichlet {
            let cond = &self.domain.dirichlet[*c];
            eval_at(&mut ev, &pt.x, &mut vals, &mut grads);
            let g = cond.value.eval(&pt.x);
            let comps: Vec<usize> = cond.components.clone().unwrap_or_else(|| (0..nf).collect());
            let w = cond.beta * pt.weight;
            for i in 0..ns {
                for j in 0..ns {
                    let v = w * vals[i] * vals[j];
                    for &a in &comps {
                        matrix[(i * nf + a) * n + j * nf + a] += v;
                    }
                }
                for &a in &comps {
                    load[i * nf + a] += w * vals[i] * g[a];
                }
            }
        }
        for (c, pt) in &surface.neumann {
            let cond = &self.domain.neumann[*c];
            eval_at(&mut ev, &pt.x, &mut vals, &mut grads);
            let t: Vec<f64> = match &cond.traction {
                Traction::Vector(f) => f.eval(&pt.x),
                Traction::Pressure(p) => (0..nf).map(|a| -p * pt.normal[a]).collect(),
            };
            for i in 0..ns {
                for a in 0..nf {
                    load[i * nf + a] += pt.weight * vals[i] * t[a];
                }
            }
        }
        // Mirror the upper triangle so the local matrix is symmetric to the last bit.
        for r in 0..n {
            for c in 0..r {
                matrix[r * n + c] = matrix[c * n + r];
            }
        }
        LeafContribution { dofs, matrix, load }
    }

    /// Assembles the given leaves (must be ascending) into a global-size matrix and load.
    pub fn assemble_leaves(&self, leaves: &[usize]) -> (CsrMatrix, Vec<f64>) {
        let n = self.dofs.n_dofs();
        let nf = self.dofs.n_fields;
        let mut scalar_rows: Vec<Vec<usize>> = vec![Vec::new(); self.dofs.n_functions()];
        for &l in leaves {
            let f = &self.supports[l].functions;
            for &s in f {
                scalar_rows[s].extend_from_slice(f);
            }
        }
        let mut rows = Vec::with_capacity(n);
        for r in scalar_rows.iter_mut() {
            r.sort_unstable();
            r.dedup();
            let cols: Vec<usize> = r.iter().flat_map(|&t| (0..nf).map(move |c| t * nf + c)).collect();
            for _ in 0..nf {
                rows.push(cols.clone());
            }
        }
        let mut a = CsrMatrix::from_pattern(n, rows);
        let mut b = vec![0.0; n];
        for chunk in leaves.chunks(64) {
            let parts: Vec<LeafContribution> = chunk.par_iter().map(|&l| self.leaf_contribution(l)).collect();
            for part in parts {
                scatter(&mut a, &mut b, &part);
            }
        }
        (a, b)
    }
}

fn scatter(a: &mut CsrMatrix, b: &mut [f64], part: &LeafContribution) {
    let n = part.dofs.len();
    for (r, &gi) in part.dofs.iter().enumerate() {
        b[gi] += part.load[r];
        let start = a.row_ptr[gi];
        let end = a.row_ptr[gi + 1];
        let mut k = start;
        for (c, &gj) in part.dofs.iter().enumerate() {
            while a.col_idx[k] < gj {
                k += 1;
            }
            debug_assert!(k < end && a.col_idx[k] == gj);
            a.values[k] += part.matrix[r * n + c];
        }
    }
}

/// Assembled system with per-leaf metadata.
#[derive(Debug, Clone)]
pub struct LinearSystem {
    pub a: CsrMatrix,
    pub b: Vec<f64>,
    pub eta: Vec<f64>,
    pub alpha_fict: f64,
    pub betas: Vec<f64>,
}

pub fn assemble(
    mesh: &MlhpMesh,
    dofs: &DofMap,
    supports: &[LeafSupport],
    domain: &ImplicitDomain,
    model: &ModelProblem,
    geometry: &[LeafGeometry],
    settings: &AssemblySettings,
) -> Result<LinearSystem> {
    let assembler = Assembler::new(mesh, dofs, supports, domain, model, geometry, settings)?;
    let leaves: Vec<usize> = (0..mesh.n_leaves()).filter(|&l| mesh.is_leaf_active(l)).collect();
    let (a, b) = assembler.assemble_leaves(&leaves);
    if b.iter().any(|v| !v.is_finite()) || a.values.iter().any(|v| !v.is_finite()) {
        return Err(FcmError::Numerical("assembled system has non-finite entries".into()));
    }
    Ok(LinearSystem {
        a,
        b,
        eta: geometry.iter().map(|g| g.eta).collect(),
        alpha_fict: domain.alpha_fict,
        betas: domain.dirichlet.iter().map(|d| d.beta).collect(),
    })
}
