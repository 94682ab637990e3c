//! In-process simulation of distributed assembly with two ghost-element layers.
//!
//! Ranks own contiguous runs of active leaves in slab or Morton order. Two leaves
//! are neighbors if their closures touch or a basis function is supported on both;
//! the second condition matters when coarse overlay hats reach across refined regions.

use std::collections::BTreeSet;

use crate::blocks::BlockSet;
use crate::dofs::{DofMap, LeafSupport};
use crate::error::{FcmError, Result};
use crate::geometry::BoxNd;
use crate::mesh::MlhpMesh;
use crate::precond::{build_rows, InverseMode};
use crate::problem::Problem;
use crate::sparse::CsrMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    /// Lexicographic order of leaf centers, first axis slowest.
    Slab,
    /// Morton (Z-order) curve of leaf centers.
    Sfc,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::Slab => "slab",
            Strategy::Sfc => "sfc",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "slab" => Some(Strategy::Slab),
            "sfc" => Some(Strategy::Sfc),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankSets {
    pub owned: Vec<usize>,
    pub l1: Vec<usize>,
    pub l2: Vec<usize>,
}

impl RankSets {
    /// Owned and ghost leaves, ascending.
    pub fn all_leaves(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.owned.iter().chain(&self.l1).chain(&self.l2).copied().collect();
        v.sort_unstable();
        v
    }
}

#[derive(Debug, Clone)]
pub struct Partition {
    pub n_ranks: usize,
    pub strategy: Strategy,
    /// Owning rank of each leaf; `None` for inactive leaves.
    pub owner: Vec<Option<usize>>,
    pub ranks: Vec<RankSets>,
}

fn touches(a: &BoxNd, b: &BoxNd) -> bool {
    let tol = 1e-12 * (0..a.dim()).map(|k| a.width(k).max(b.width(k))).fold(0.0, f64::max);
    (0..a.dim()).all(|k| a.lo[k] <= b.hi[k] + tol && b.lo[k] <= a.hi[k] + tol)
}

/// Neighbor lists of active leaves.
pub fn leaf_adjacency(mesh: &MlhpMesh, dofs: &DofMap, supports: &[LeafSupport]) -> Vec<Vec<usize>> {
    let active: Vec<usize> = (0..mesh.n_leaves()).filter(|&l| mesh.is_leaf_active(l)).collect();
    let mut adj: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); mesh.n_leaves()];
    for (i, &a) in active.iter().enumerate() {
        let ba = mesh.leaf(a).bounds;
        for &b in &active[i + 1..] {
            if touches(&ba, &mesh.leaf(b).bounds) {
                adj[a].insert(b);
                adj[b].insert(a);
            }
        }
    }
    for (l, s) in supports.iter().enumerate() {
        for &f in &s.functions {
            for &m in &dofs.support_leaves[f] {
                if m != l {
                    adj[l].insert(m);
                }
            }
        }
    }
    adj.into_iter().map(|s| s.into_iter().collect()).collect()
}

fn morton(cell: [u64; 3], dim: usize) -> u128 {
    let mut code = 0u128;
    for bit in 0..40 {
        for (a, &c) in cell.iter().enumerate().take(dim) {
            code |= (((c >> bit) & 1) as u128) << (bit * dim + a);
        }
    }
    code
}

pub fn make_partition(mesh: &MlhpMesh, dofs: &DofMap, supports: &[LeafSupport], n_ranks: usize, strategy: Strategy) -> Result<Partition> {
    let mut active: Vec<usize> = (0..mesh.n_leaves()).filter(|&l| mesh.is_leaf_active(l)).collect();
    if n_ranks == 0 {
        return Err(FcmError::config("number of ranks must be at least 1"));
    }
    if n_ranks > active.len() {
        return Err(FcmError::config(format!("{n_ranks} ranks exceed the {} active leaves", active.len())));
    }
    let dim = mesh.dim();
    let max_level = mesh.max_level();
    let fine_center = |l: usize| -> [u64; 3] {
        let e = mesh.leaf(l);
        let shift = max_level + 1 - e.level;
        let mut c = [0u64; 3];
        for a in 0..dim {
            c[a] = ((2 * e.cell[a] + 1) as u64) << (shift - 1);
        }
        c
    };
    match strategy {
        Strategy::Slab => active.sort_by_key(|&l| {
            let c = fine_center(l);
            (c[0], c[1], c[2], l)
        }),
        Strategy::Sfc => active.sort_by_key(|&l| (morton(fine_center(l), dim), l)),
    }
    let mut owner = vec![None; mesh.n_leaves()];
    let total = active.len();
    for (k, &l) in active.iter().enumerate() {
        owner[l] = Some(k * n_ranks / total);
    }
    let adj = leaf_adjacency(mesh, dofs, supports);
    let mut ranks = Vec::with_capacity(n_ranks);
    for r in 0..n_ranks {
        let owned: Vec<usize> = (0..mesh.n_leaves()).filter(|&l| owner[l] == Some(r)).collect();
        let mut seen: BTreeSet<usize> = owned.iter().copied().collect();
        let layer = |from: &[usize], seen: &mut BTreeSet<usize>| -> Vec<usize> {
            let mut next = BTreeSet::new();
            for &l in from {
                for &m in &adj[l] {
                    if !seen.contains(&m) {
                        next.insert(m);
                    }
                }
            }
            seen.extend(next.iter().copied());
            next.into_iter().collect()
        };
        let l1 = layer(&owned, &mut seen);
        let l2 = layer(&l1, &mut seen);
        ranks.push(RankSets { owned, l1, l2 });
    }
    Ok(Partition { n_ranks, strategy, owner, ranks })
}

impl Partition {
    /// DOFs owned by `rank`: those whose smallest support leaf the rank owns.
    pub fn owned_dofs(&self, rank: usize, dofs: &DofMap) -> Vec<bool> {
        (0..dofs.n_dofs()).map(|d| self.owner[dofs.owner_leaf(d)] == Some(rank)).collect()
    }
}

/// Matrix integrated over the rank's owned and ghost leaves only.
pub fn local_system(partition: &Partition, rank: usize, problem: &Problem) -> Result<(CsrMatrix, Vec<f64>)> {
    let sets = partition.ranks.get(rank).ok_or_else(|| FcmError::Invalid(format!("rank {rank} out of range")))?;
    Ok(problem.assembler()?.assemble_leaves(&sets.all_leaves()))
}

/// Rows of `S` for the rank's owned DOFs, built from blocks of owned and first-layer leaves.
pub fn local_preconditioner(
    partition: &Partition,
    rank: usize,
    problem: &Problem,
    local_a: &CsrMatrix,
    blocks: &BlockSet,
    mode: InverseMode,
) -> Result<CsrMatrix> {
    let sets = &partition.ranks[rank];
    let mut near = vec![false; partition.owner.len()];
    for &l in sets.owned.iter().chain(&sets.l1) {
        near[l] = true;
    }
    let local_blocks = blocks.blocks.iter().filter(|b| near[b.leaf]).cloned().collect();
    let local_set = BlockSet::new(blocks.n, local_blocks)?;
    let owned = partition.owned_dofs(rank, &problem.dofs);
    Ok(build_rows(local_a, &local_set, mode, Some(&owned))?.s.restrict_rows(&owned))
}

/// Concatenates owned rows of per-rank matrices into one global matrix.
pub fn stitch(parts: &[(Vec<bool>, CsrMatrix)]) -> Result<CsrMatrix> {
    let n = parts.first().map_or(0, |p| p.1.n());
    let mut out = CsrMatrix::zeros(n);
    let mut claimed = vec![false; n];
    for i in 0..n {
        let mut found = false;
        for (owned, m) in parts {
            if owned[i] {
                if claimed[i] {
                    return Err(FcmError::Structural(format!("row {i} owned by two ranks")));
                }
                claimed[i] = true;
                found = true;
                let (c, v) = m.row(i);
                out.col_idx.extend_from_slice(c);
                out.values.extend_from_slice(v);
            }
        }
        if !found {
            return Err(FcmError::Structural(format!("row {i} has no owner")));
        }
        out.row_ptr[i + 1] = out.col_idx.len();
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankReport {
    pub rank: usize,
    pub owned: usize,
    pub l1: usize,
    pub l2: usize,
    pub checksum: f64,
}

/// Runs every rank and returns the stitched `A` and `S` rows plus per-rank statistics.
pub fn simulate(problem: &Problem, partition: &Partition, blocks: &BlockSet, mode: InverseMode) -> Result<(CsrMatrix, CsrMatrix, Vec<RankReport>)> {
    let mut a_parts = Vec::new();
    let mut s_parts = Vec::new();
    let mut reports = Vec::new();
    for r in 0..partition.n_ranks {
        let (a_local, _) = local_system(partition, r, problem)?;
        let s_local = local_preconditioner(partition, r, problem, &a_local, blocks, mode)?;
        let owned = partition.owned_dofs(r, &problem.dofs);
        let rows: Vec<usize> = (0..owned.len()).filter(|&i| owned[i]).collect();
        let sets = &partition.ranks[r];
        reports.push(RankReport {
            rank: r,
            owned: sets.owned.len(),
            l1: sets.l1.len(),
            l2: sets.l2.len(),
            checksum: s_local.row_checksum(&rows),
        });
        a_parts.push((owned.clone(), a_local.restrict_rows(&owned)));
        s_parts.push((owned, s_local));
    }
    Ok((stitch(&a_parts)?, stitch(&s_parts)?, reports))
}
