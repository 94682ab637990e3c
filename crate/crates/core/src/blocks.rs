//! Additive-Schwarz index blocks: full element blocks, truncated blocks and
//! volume-fraction filtering.

use crate::dofs::{DofMap, FunctionKey, LeafEvaluator, LeafSupport, Mode1};
use crate::error::{FcmError, Result};
use crate::mesh::MlhpMesh;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKind {
    Full,
    Truncated,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    /// Sorted, duplicate-free global DOF indices.
    pub indices: Vec<usize>,
    pub leaf: usize,
    pub kind: BlockKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockSet {
    pub n: usize,
    pub blocks: Vec<Block>,
    /// Number of blocks containing each DOF.
    pub overlap: Vec<u32>,
    /// DOFs contained in no block; they receive diagonal scaling.
    pub uncovered: Vec<usize>,
}

impl BlockSet {
    pub fn new(n: usize, blocks: Vec<Block>) -> Result<Self> {
        let mut overlap = vec![0u32; n];
        for b in &blocks {
            if b.indices.is_empty() {
                return Err(FcmError::Structural(format!("empty block for leaf {}", b.leaf)));
            }
            if b.indices.windows(2).any(|w| w[0] >= w[1]) {
                return Err(FcmError::Structural(format!("block for leaf {} is not strictly sorted", b.leaf)));
            }
            if *b.indices.last().unwrap() >= n {
                return Err(FcmError::Structural(format!("block for leaf {} indexes past {n}", b.leaf)));
            }
            for &i in &b.indices {
                overlap[i] += 1;
            }
        }
        let uncovered = (0..n).filter(|&i| overlap[i] == 0).collect();
        Ok(BlockSet { n, blocks, overlap, uncovered })
    }

    pub fn max_overlap(&self) -> u32 {
        self.overlap.iter().copied().max().unwrap_or(0)
    }
}

/// One block per active leaf holding every DOF supported on it.
pub fn full_blocks(supports: &[LeafSupport], dofs: &DofMap) -> Result<BlockSet> {
    let blocks = supports
        .iter()
        .enumerate()
        .filter(|(_, s)| !s.functions.is_empty())
        .map(|(leaf, s)| Block { indices: s.dofs(dofs.n_fields), leaf, kind: BlockKind::Full })
        .collect();
    BlockSet::new(dofs.n_dofs(), blocks)
}

/// How truncated blocks pick functions for each leaf-local tensor slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TruncationRule {
    /// Corner slots take the finest active hat sitting exactly on the corner; other slots take
    /// the leaf-level function when it is active. Per-DOF overlap is at most `2^d`.
    #[default]
    Exact,
    /// As `Exact`, then completes the leaf-local tensor space with supported functions from
    /// the finest levels first until it is spanned.
    Spanning,
}

fn exact_selection(mesh: &MlhpMesh, dofs: &DofMap, leaf: usize) -> Result<Vec<usize>> {
    let dim = mesh.dim();
    let p = dofs.p;
    let e = mesh.leaf(leaf);
    let slots = (p + 1).pow(dim as u32);
    let mut selected = Vec::with_capacity(slots);
    for flat in 0..slots {
        let mut s = [0usize; 3];
        let mut rest = flat;
        for slot in s.iter_mut().take(dim) {
            *slot = rest % (p + 1);
            rest /= p + 1;
        }
        let all_vertex = (0..dim).all(|a| s[a] < 2);
        let found = if all_vertex {
            let v: Vec<i64> = (0..dim).map(|a| e.cell[a] + s[a] as i64).collect();
            (0..=e.level).rev().find_map(|l| {
                let shift = e.level - l;
                if v.iter().any(|&x| x & ((1i64 << shift) - 1) != 0) {
                    return None;
                }
                let mut modes = [Mode1::Node(0); 3];
                for a in 0..dim {
                    modes[a] = Mode1::Node(v[a] >> shift);
                }
                dofs.scalar_index(&FunctionKey { level: l, modes })
            })
        } else {
            let mut modes = [Mode1::Node(0); 3];
            for a in 0..dim {
                modes[a] = if s[a] < 2 {
                    Mode1::Node(e.cell[a] + s[a] as i64)
                } else {
                    Mode1::Internal(e.cell[a], s[a] as u8)
                };
            }
            dofs.scalar_index(&FunctionKey { level: e.level, modes })
        };
        match found {
            Some(idx) => selected.push(idx),
            None if dim == 1 => {
                return Err(FcmError::Structural(format!(
                    "leaf {leaf}: no active function for local slot {} along any level",
                    s[0]
                )))
            }
            None => {}
        }
    }
    selected.sort_unstable();
    selected.dedup();
    Ok(selected)
}

/// Values of the given functions at a `(p+1)^d` tensor Gauss grid of the leaf.
fn leaf_samples(mesh: &MlhpMesh, dofs: &DofMap, leaf: usize, functions: &[usize]) -> Vec<Vec<f64>> {
    let p = dofs.p;
    let bounds = mesh.leaf(leaf).bounds;
    let points = crate::quadrature::tensor_gauss(&bounds, p + 1);
    let mut ev = LeafEvaluator::new(mesh, leaf, p);
    let modes: Vec<(u32, [usize; 3])> = functions
        .iter()
        .map(|&s| {
            let k = &dofs.functions[s];
            (k.level, ev.local_modes(k).expect("function not supported on leaf"))
        })
        .collect();
    let mut out = vec![vec![0.0; points.len()]; functions.len()];
    for (q, pt) in points.iter().enumerate() {
        ev.set_point(&pt.x);
        for (i, (l, m)) in modes.iter().enumerate() {
            out[i][q] = ev.eval(*l, m).0;
        }
    }
    out
}

fn spanning_selection(mesh: &MlhpMesh, dofs: &DofMap, support: &LeafSupport, leaf: usize) -> Result<Vec<usize>> {
    let dim = mesh.dim();
    let target = (dofs.p + 1).pow(dim as u32);
    let mut selected = exact_selection(mesh, dofs, leaf)?;
    if selected.len() >= target {
        return Ok(selected);
    }
    let mut candidates: Vec<usize> = support.functions.iter().copied().filter(|s| !selected.contains(s)).collect();
    candidates.sort_by(|&a, &b| dofs.functions[b].level.cmp(&dofs.functions[a].level).then(a.cmp(&b)));
    let mut all = selected.clone();
    all.extend_from_slice(&candidates);
    let samples = leaf_samples(mesh, dofs, leaf, &all);
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let add = |v: &[f64], basis: &mut Vec<Vec<f64>>| -> bool {
        let norm0 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let mut w = v.to_vec();
        for _ in 0..2 {
            for b in basis.iter() {
                let c: f64 = w.iter().zip(b).map(|(x, y)| x * y).sum();
                for (wi, bi) in w.iter_mut().zip(b) {
                    *wi -= c * bi;
                }
            }
        }
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-10 * norm0 && norm0 > 0.0 {
            basis.push(w.into_iter().map(|x| x / norm).collect());
            true
        } else {
            false
        }
    };
    for v in samples.iter().take(selected.len()) {
        add(v, &mut basis);
    }
    for (k, &c) in candidates.iter().enumerate() {
        if basis.len() == target {
            break;
        }
        if add(&samples[selected.len() + k], &mut basis) {
            selected.push(c);
        }
    }
    if basis.len() < target {
        return Err(FcmError::Structural(format!(
            "leaf {leaf}: supported functions span only {} of {target} local modes",
            basis.len()
        )));
    }
    selected.sort_unstable();
    Ok(selected)
}

/// One truncated block per active leaf.
pub fn truncated_blocks(mesh: &MlhpMesh, dofs: &DofMap, supports: &[LeafSupport], rule: TruncationRule) -> Result<BlockSet> {
    use rayon::prelude::*;
    let nf = dofs.n_fields;
    let blocks: Result<Vec<Option<Block>>> = (0..mesh.n_leaves())
        .into_par_iter()
        .map(|leaf| {
            if supports[leaf].functions.is_empty() {
                return Ok(None);
            }
            let scalars = match rule {
                TruncationRule::Exact => exact_selection(mesh, dofs, leaf)?,
                TruncationRule::Spanning => spanning_selection(mesh, dofs, &supports[leaf], leaf)?,
            };
            let indices = scalars.iter().flat_map(|&s| (0..nf).map(move |c| s * nf + c)).collect();
            Ok(Some(Block { indices, leaf, kind: BlockKind::Truncated }))
        })
        .collect();
    BlockSet::new(dofs.n_dofs(), blocks?.into_iter().flatten().collect())
}

/// Keeps blocks whose leaf has `η_T <= η̄`; fully physical leaves additionally need
/// `η̄ >= 1` and `include_interior`.
pub fn filter_blocks(set: &BlockSet, eta: &[f64], eta_bar: f64, include_interior: bool) -> Result<BlockSet> {
    if !(0.0..=1.0).contains(&eta_bar) {
        return Err(FcmError::config(format!("eta_bar must lie in [0, 1], got {eta_bar}")));
    }
    let kept = set
        .blocks
        .iter()
        .filter(|b| {
            let e = eta[b.leaf];
            e <= eta_bar && (e < 1.0 || (eta_bar >= 1.0 && include_interior))
        })
        .cloned()
        .collect();
    BlockSet::new(set.n, kept)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dofs::{enumerate_dofs, leaf_supports};
    use crate::mesh::build_base_mesh;

    #[test]
    fn unrefined_truncated_equals_full() {
        let m = build_base_mesh(&[0.0, 0.0], &[1.0, 1.0], &[3, 2]).unwrap();
        let d = enumerate_dofs(&m, 2, 2).unwrap();
        let s = leaf_supports(&m, &d);
        let full = full_blocks(&s, &d).unwrap();
        for rule in [TruncationRule::Exact, TruncationRule::Spanning] {
            let t = truncated_blocks(&m, &d, &s, rule).unwrap();
            assert_eq!(t.blocks.len(), full.blocks.len());
            for (a, b) in t.blocks.iter().zip(&full.blocks) {
                assert_eq!(a.indices, b.indices);
            }
        }
        assert!(full.blocks.iter().all(|b| b.indices.len() == 2 * 9));
    }

    #[test]
    fn one_dimensional_truncation_descends_levels() {
        let mut m = build_base_mesh(&[0.0], &[3.0], &[3]).unwrap();
        m.refine_toward(&|b| b.lo[0] < 1.2 && b.hi[0] > 1.0, 2);
        let d = enumerate_dofs(&m, 3, 1).unwrap();
        let s = leaf_supports(&m, &d);
        let t = truncated_blocks(&m, &d, &s, TruncationRule::Exact).unwrap();
        for b in &t.blocks {
            assert_eq!(b.indices.len(), 4);
        }
        // Leaf [1, 1.25]: hat at 1 from level 0, hat at 1.25 from level 2.
        let levels: Vec<u32> = t.blocks[1]
            .indices
            .iter()
            .filter(|&&i| d.functions[i].modes[0].is_node())
            .map(|&i| d.functions[i].level)
            .collect();
        assert_eq!(levels, vec![0, 2]);
    }

    #[test]
    fn threshold_filtering() {
        let m = build_base_mesh(&[0.0, 0.0], &[1.0, 1.0], &[2, 2]).unwrap();
        let d = enumerate_dofs(&m, 1, 1).unwrap();
        let s = leaf_supports(&m, &d);
        let full = full_blocks(&s, &d).unwrap();
        let eta = [1.0, 1e-3, 0.5, 1.0];
        let none = filter_blocks(&full, &eta, 0.0, true).unwrap();
        assert!(none.blocks.is_empty());
        assert_eq!(none.uncovered.len(), d.n_dofs());
        let one = filter_blocks(&full, &eta, 0.01, true).unwrap();
        assert_eq!(one.blocks.iter().map(|b| b.leaf).collect::<Vec<_>>(), vec![1]);
        assert_eq!(filter_blocks(&full, &eta, 1.0, true).unwrap().blocks.len(), 4);
        assert_eq!(filter_blocks(&full, &eta, 1.0, false).unwrap().blocks.len(), 2);
        assert!(filter_blocks(&full, &eta, 1.5, true).is_err());
    }
}
