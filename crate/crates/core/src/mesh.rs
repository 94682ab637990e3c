//! Base grid and multi-level overlay refinement tree.
//!
//! Elements are addressed by `(level, cell)` where `cell[a]` counts cells of
//! width `h_a / 2^level` from the lower corner of the base grid along axis `a`.

use std::collections::HashMap;

use crate::error::{FcmError, Result};
use crate::geometry::BoxNd;

#[derive(Debug, Clone)]
pub struct Element {
    pub level: u32,
    pub cell: [i64; 3],
    pub bounds: BoxNd,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
}

impl Element {
    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct MlhpMesh {
    dim: usize,
    pub lower: [f64; 3],
    pub upper: [f64; 3],
    pub counts: [usize; 3],
    pub elements: Vec<Element>,
    lookup: HashMap<(u32, [i64; 3]), usize>,
    leaves: Vec<usize>,
    leaf_of: Vec<Option<usize>>,
    leaf_active: Vec<bool>,
}

/// Uniform grid with all elements level-0 leaves.
pub fn build_base_mesh(lower: &[f64], upper: &[f64], counts: &[usize]) -> Result<MlhpMesh> {
    let domain = BoxNd::new(lower, upper)?;
    if counts.len() != domain.dim() {
        return Err(FcmError::config(format!(
            "element counts have {} entries for a {}-dimensional domain",
            counts.len(),
            domain.dim()
        )));
    }
    if counts.contains(&0) {
        return Err(FcmError::config("element counts must be at least 1 per axis"));
    }
    let dim = domain.dim();
    let mut cnt = [1usize; 3];
    cnt[..dim].copy_from_slice(counts);
    let mut mesh = MlhpMesh {
        dim,
        lower: domain.lo,
        upper: domain.hi,
        counts: cnt,
        elements: Vec::new(),
        lookup: HashMap::new(),
        leaves: Vec::new(),
        leaf_of: Vec::new(),
        leaf_active: Vec::new(),
    };
    for k in 0..cnt[2] as i64 {
        for j in 0..cnt[1] as i64 {
            for i in 0..cnt[0] as i64 {
                let cell = [i, j, k];
                let bounds = mesh.cell_bounds(0, cell);
                mesh.push(Element { level: 0, cell, bounds, parent: None, children: Vec::new() });
            }
        }
    }
    mesh.rebuild_leaves();
    Ok(mesh)
}

impl MlhpMesh {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn domain_box(&self) -> BoxNd {
        BoxNd::from_arrays(self.dim, self.lower, self.upper)
    }

    /// Number of cells along `axis` at `level`.
    pub fn cells_at(&self, axis: usize, level: u32) -> i64 {
        (self.counts[axis] as i64) << level
    }

    pub fn cell_width(&self, axis: usize, level: u32) -> f64 {
        (self.upper[axis] - self.lower[axis]) / self.cells_at(axis, level) as f64
    }

    pub fn cell_bounds(&self, level: u32, cell: [i64; 3]) -> BoxNd {
        let mut lo = [0.0; 3];
        let mut hi = [0.0; 3];
        for a in 0..self.dim {
            let n = self.cells_at(a, level) as f64;
            let span = self.upper[a] - self.lower[a];
            lo[a] = self.lower[a] + span * cell[a] as f64 / n;
            hi[a] = self.lower[a] + span * (cell[a] + 1) as f64 / n;
        }
        BoxNd::from_arrays(self.dim, lo, hi)
    }

    pub fn find(&self, level: u32, cell: [i64; 3]) -> Option<usize> {
        self.lookup.get(&(level, cell)).copied()
    }

    fn push(&mut self, e: Element) -> usize {
        let id = self.elements.len();
        self.lookup.insert((e.level, e.cell), id);
        self.elements.push(e);
        id
    }

    /// Bisects element `id` into `2^d` children. No-op for non-leaves.
    pub fn refine_element(&mut self, id: usize) {
        if !self.elements[id].is_leaf() {
            return;
        }
        let (level, cell) = (self.elements[id].level, self.elements[id].cell);
        let mut children = Vec::with_capacity(1 << self.dim);
        for mask in 0..1usize << self.dim {
            let mut c = [0i64; 3];
            for a in 0..self.dim {
                c[a] = 2 * cell[a] + (mask >> a & 1) as i64;
            }
            let bounds = self.cell_bounds(level + 1, c);
            children.push(self.push(Element { level: level + 1, cell: c, bounds, parent: Some(id), children: Vec::new() }));
        }
        self.elements[id].children = children;
    }

    /// Recursively bisects every element intersecting the region until it reaches level `k`.
    pub fn refine_toward(&mut self, region: &dyn Fn(&BoxNd) -> bool, k: u32) {
        let mut stack: Vec<usize> = self.leaves.clone();
        stack.reverse();
        while let Some(id) = stack.pop() {
            let e = &self.elements[id];
            if e.level >= k || !region(&e.bounds) {
                continue;
            }
            if e.is_leaf() {
                self.refine_element(id);
            }
            for &c in self.elements[id].children.iter().rev() {
                stack.push(c);
            }
        }
        self.rebuild_leaves();
    }

    fn rebuild_leaves(&mut self) {
        let mut leaves = Vec::new();
        let roots: Vec<usize> = (0..self.elements.len()).filter(|&i| self.elements[i].level == 0).collect();
        let mut stack: Vec<usize> = roots.into_iter().rev().collect();
        while let Some(id) = stack.pop() {
            let e = &self.elements[id];
            if e.is_leaf() {
                leaves.push(id);
            } else {
                stack.extend(e.children.iter().rev());
            }
        }
        self.leaf_of = vec![None; self.elements.len()];
        for (l, &e) in leaves.iter().enumerate() {
            self.leaf_of[e] = Some(l);
        }
        self.leaf_active = vec![true; leaves.len()];
        self.leaves = leaves;
    }

    /// Element ids of the leaves in depth-first order; the position is the leaf id.
    pub fn leaves(&self) -> &[usize] {
        &self.leaves
    }

    pub fn n_leaves(&self) -> usize {
        self.leaves.len()
    }

    pub fn leaf(&self, leaf_id: usize) -> &Element {
        &self.elements[self.leaves[leaf_id]]
    }

    pub fn leaf_active(&self) -> &[bool] {
        &self.leaf_active
    }

    pub fn is_leaf_active(&self, leaf_id: usize) -> bool {
        self.leaf_active[leaf_id]
    }

    /// Marks leaves that carry no physical material; they receive no DOFs and are not integrated.
    pub fn set_leaf_activity(&mut self, active: Vec<bool>) -> Result<()> {
        if active.len() != self.leaves.len() {
            return Err(FcmError::Invalid(format!(
                "leaf activity has {} entries for {} leaves",
                active.len(),
                self.leaves.len()
            )));
        }
        self.leaf_active = active;
        Ok(())
    }

    pub fn max_level(&self) -> u32 {
        self.elements.iter().map(|e| e.level).max().unwrap_or(0)
    }

    /// Leaf id of the element containing `x`, if inside the domain.
    pub fn locate(&self, x: &[f64; 3]) -> Option<usize> {
        let mut cell = [0i64; 3];
        for a in 0..self.dim {
            if x[a] < self.lower[a] || x[a] > self.upper[a] {
                return None;
            }
            let t = ((x[a] - self.lower[a]) / self.cell_width(a, 0)).floor() as i64;
            cell[a] = t.clamp(0, self.counts[a] as i64 - 1);
        }
        let mut id = self.find(0, cell)?;
        while !self.elements[id].is_leaf() {
            let c = self.elements[id].bounds.center();
            let mask = (0..self.dim).fold(0usize, |m, a| m | (((x[a] >= c[a]) as usize) << a));
            id = self.elements[id].children[mask];
        }
        self.leaf_index(id)
    }

    /// Leaf id of an element id, if it is a leaf.
    pub fn leaf_index(&self, element: usize) -> Option<usize> {
        if !self.elements[element].is_leaf() {
            return None;
        }
        self.leaf_of[element]
    }

    /// Leaf ids of all leaves below (or equal to) element `id`.
    pub fn leaves_below(&self, id: usize, out: &mut Vec<usize>) {
        match self.leaf_of[id] {
            Some(l) => out.push(l),
            None => {
                for &c in &self.elements[id].children {
                    self.leaves_below(c, out);
                }
            }
        }
    }

    /// Leaf and DOF-free statistics: leaf count per level.
    pub fn leaves_per_level(&self) -> Vec<usize> {
        let mut counts = vec![0; self.max_level() as usize + 1];
        for &e in &self.leaves {
            counts[self.elements[e].level as usize] += 1;
        }
        counts
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn base_meshes() {
        let m = build_base_mesh(&[0.0], &[1.0], &[4]).unwrap();
        assert_eq!(m.n_leaves(), 4);
        for &e in m.leaves() {
            assert!((m.elements[e].bounds.width(0) - 0.25).abs() < 1e-15);
        }
        assert_eq!(build_base_mesh(&[0.0, 0.0], &[1.0, 1.0], &[2, 3]).unwrap().n_leaves(), 6);
        assert_eq!(build_base_mesh(&[0.0; 3], &[1.0; 3], &[8, 8, 8]).unwrap().n_leaves(), 512);
        assert!(build_base_mesh(&[0.0, 0.0], &[1.0, 1.0], &[2, 0]).is_err());
    }

    #[test]
    fn refinement_toward_endpoint() {
        let mut m = build_base_mesh(&[0.0], &[1.0], &[2]).unwrap();
        m.refine_toward(&|b| b.hi[0] >= 1.0, 0);
        assert_eq!(m.n_leaves(), 2);
        m.refine_toward(&|_| false, 3);
        assert_eq!(m.n_leaves(), 2);
        m.refine_toward(&|b| b.hi[0] >= 1.0, 2);
        let widths: Vec<f64> = m.leaves().iter().map(|&e| m.elements[e].bounds.width(0)).collect();
        assert_eq!(widths, vec![0.5, 0.25, 0.125, 0.125]);
        assert_eq!(m.max_level(), 2);
    }

    #[test]
    fn leaves_tile_domain_and_locate() {
        let mut m = build_base_mesh(&[0.0, 0.0, 0.0], &[1.0, 2.0, 1.0], &[2, 2, 2]).unwrap();
        m.refine_toward(&|b| b.contains(&[0.3, 0.3, 0.3]), 3);
        let vol: f64 = m.leaves().iter().map(|&e| m.elements[e].bounds.volume()).sum();
        assert!((vol - 2.0).abs() < 1e-14);
        let l = m.locate(&[0.3, 0.3, 0.3]).unwrap();
        assert_eq!(m.leaf(l).level, 3);
        assert!(m.leaf(l).bounds.contains(&[0.3, 0.3, 0.3]));
        assert!(m.locate(&[1.5, 0.0, 0.0]).is_none());
    }
}
