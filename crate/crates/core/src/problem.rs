//! A discretized problem: mesh, geometry analysis, basis, supports and assembled system.

use crate::assembly::{analyze_leaves, assemble, leaf_activity, Assembler, AssemblySettings, LeafGeometry, LinearSystem, ModelProblem};
use crate::blocks::{filter_blocks, full_blocks, truncated_blocks, BlockSet, TruncationRule};
use crate::dofs::{enumerate_dofs, leaf_supports, DofMap, LeafSupport};
use crate::error::{FcmError, Result};
use crate::geometry::ImplicitDomain;
use crate::mesh::MlhpMesh;
use crate::precond::{build, InverseMode, Preconditioner};
use crate::sparse::CsrMatrix;

pub struct Problem {
    pub mesh: MlhpMesh,
    pub domain: ImplicitDomain,
    pub model: ModelProblem,
    pub p: usize,
    pub settings: AssemblySettings,
    pub geometry: Vec<LeafGeometry>,
    pub dofs: DofMap,
    pub supports: Vec<LeafSupport>,
    pub system: LinearSystem,
}

impl Problem {
    /// Classifies leaves, deactivates empty ones, enumerates the basis and assembles.
    pub fn build(mut mesh: MlhpMesh, domain: ImplicitDomain, model: ModelProblem, p: usize, settings: AssemblySettings) -> Result<Self> {
        model.validate()?;
        let geometry = analyze_leaves(&mesh, &domain, settings.tree_depth, settings.volume_order(p));
        mesh.set_leaf_activity(leaf_activity(&geometry, &domain))?;
        let dofs = enumerate_dofs(&mesh, p, model.n_fields(mesh.dim()))?;
        if dofs.n_dofs() == 0 {
            return Err(FcmError::config("the physical domain does not intersect the mesh"));
        }
        let supports = leaf_supports(&mesh, &dofs);
        let system = assemble(&mesh, &dofs, &supports, &domain, &model, &geometry, &settings)?;
        Ok(Problem { mesh, domain, model, p, settings, geometry, dofs, supports, system })
    }

    pub fn assembler(&self) -> Result<Assembler<'_>> {
        Assembler::new(&self.mesh, &self.dofs, &self.supports, &self.domain, &self.model, &self.geometry, &self.settings)
    }

    pub fn n_dofs(&self) -> usize {
        self.dofs.n_dofs()
    }

    pub fn a(&self) -> &CsrMatrix {
        &self.system.a
    }

    pub fn b(&self) -> &[f64] {
        &self.system.b
    }

    pub fn eta(&self) -> &[f64] {
        &self.system.eta
    }

    /// Smallest volume fraction over active leaves.
    pub fn min_eta(&self) -> f64 {
        (0..self.mesh.n_leaves())
            .filter(|&l| self.mesh.is_leaf_active(l))
            .map(|l| self.system.eta[l])
            .fold(1.0, f64::min)
    }

    pub fn blocks(&self, kind: PreconditionerKind, rule: TruncationRule) -> Result<BlockSet> {
        match kind {
            PreconditionerKind::None | PreconditionerKind::Jacobi => BlockSet::new(self.n_dofs(), Vec::new()),
            PreconditionerKind::FullBlocks => full_blocks(&self.supports, &self.dofs),
            PreconditionerKind::TruncatedBlocks => truncated_blocks(&self.mesh, &self.dofs, &self.supports, rule),
        }
    }

    /// Block set after volume-fraction filtering.
    pub fn filtered_blocks(&self, cfg: &PrecondSettings) -> Result<BlockSet> {
        let all = self.blocks(cfg.kind, cfg.rule)?;
        filter_blocks(&all, self.eta(), cfg.eta_bar, cfg.include_interior)
    }

    pub fn preconditioner(&self, cfg: &PrecondSettings) -> Result<Preconditioner> {
        if cfg.kind == PreconditionerKind::None {
            let s = CsrMatrix::identity(self.n_dofs());
            let stats = crate::precond::BuildStats { nonzeros: s.nnz(), min_block_ratio: 1.0, ..Default::default() };
            return Ok(Preconditioner { s, stats });
        }
        build(self.a(), &self.filtered_blocks(cfg)?, cfg.mode()?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PreconditionerKind {
    None,
    Jacobi,
    FullBlocks,
    TruncatedBlocks,
}

impl PreconditionerKind {
    pub fn name(self) -> &'static str {
        match self {
            PreconditionerKind::None => "none",
            PreconditionerKind::Jacobi => "jacobi",
            PreconditionerKind::FullBlocks => "full_blocks",
            PreconditionerKind::TruncatedBlocks => "truncated_blocks",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "none" => PreconditionerKind::None,
            "jacobi" => PreconditionerKind::Jacobi,
            "full_blocks" => PreconditionerKind::FullBlocks,
            "truncated_blocks" => PreconditionerKind::TruncatedBlocks,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrecondSettings {
    pub kind: PreconditionerKind,
    pub eta_bar: f64,
    pub epsilon: f64,
    pub stabilized: bool,
    pub include_interior: bool,
    pub rule: TruncationRule,
}

impl Default for PrecondSettings {
    fn default() -> Self {
        PrecondSettings {
            kind: PreconditionerKind::TruncatedBlocks,
            eta_bar: 1.0,
            epsilon: 1e-13,
            stabilized: true,
            include_interior: true,
            rule: TruncationRule::Exact,
        }
    }
}

impl PrecondSettings {
    pub fn with_kind(mut self, kind: PreconditionerKind) -> Self {
        self.kind = kind;
        self
    }

    pub fn mode(&self) -> Result<InverseMode> {
        if self.stabilized {
            InverseMode::stabilized(self.epsilon)
        } else {
            Ok(InverseMode::Plain)
        }
    }
}
