//! Multi-level hp basis: active function enumeration, global numbering and leaf supports.
//!
//! Every scalar function lives on one overlay level and is a tensor product of
//! one-dimensional components: a linear hat at a grid vertex or an internal
//! mode of some degree on a grid cell. Its *component cells* are the cells of
//! that level the component touches. A function is active iff all of its
//! in-domain component cells exist in the refinement tree and at least one of
//! them is an active leaf. This keeps the overlay boundaries homogeneous (C0) and
//! never duplicates a hat that an overlay level already represents.

use std::collections::HashMap;

use crate::basis::eval_modes_into;
use crate::error::{FcmError, Result};
use crate::mesh::MlhpMesh;

/// One-dimensional component of a scalar function at its level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Mode1 {
    /// Linear hat centered at a grid vertex.
    Node(i64),
    /// Integrated Legendre mode of the given degree on a cell.
    Internal(i64, u8),
}

impl Mode1 {
    /// Component cells along one axis with `n` cells at this level.
    fn cells(self, n: i64) -> impl Iterator<Item = i64> {
        let (a, b) = match self {
            Mode1::Node(v) => (v - 1, v),
            Mode1::Internal(c, _) => (c, c),
        };
        (a..=b).filter(move |&c| c >= 0 && c < n)
    }

    /// Local mode index on cell `c`, or `None` if the component vanishes there.
    pub fn local_index(self, c: i64) -> Option<usize> {
        match self {
            Mode1::Node(v) if v == c => Some(0),
            Mode1::Node(v) if v == c + 1 => Some(1),
            Mode1::Internal(cell, q) if cell == c => Some(q as usize),
            _ => None,
        }
    }

    pub fn is_node(self) -> bool {
        matches!(self, Mode1::Node(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FunctionKey {
    pub level: u32,
    /// Unused trailing axes hold `Node(0)`.
    pub modes: [Mode1; 3],
}

impl FunctionKey {
    pub fn polynomial_degree(&self, dim: usize) -> usize {
        (0..dim)
            .map(|a| match self.modes[a] {
                Mode1::Node(_) => 1,
                Mode1::Internal(_, q) => q as usize,
            })
            .max()
            .unwrap_or(1)
    }
}

/// Active basis and its global numbering. DOF `s * n_fields + c` is component `c` of scalar function `s`.
#[derive(Debug, Clone)]
pub struct DofMap {
    pub dim: usize,
    pub p: usize,
    pub n_fields: usize,
    pub functions: Vec<FunctionKey>,
    index: HashMap<FunctionKey, usize>,
    /// Leaf ids in the support of each scalar function, ascending.
    pub support_leaves: Vec<Vec<usize>>,
}

impl DofMap {
    pub fn n_functions(&self) -> usize {
        self.functions.len()
    }

    pub fn n_dofs(&self) -> usize {
        self.functions.len() * self.n_fields
    }

    pub fn scalar_index(&self, key: &FunctionKey) -> Option<usize> {
        self.index.get(key).copied()
    }

    pub fn dof(&self, scalar: usize, component: usize) -> usize {
        scalar * self.n_fields + component
    }

    /// Scalar function counts per level.
    pub fn functions_per_level(&self) -> Vec<usize> {
        let levels = self.functions.iter().map(|f| f.level).max().map_or(0, |l| l as usize + 1);
        let mut counts = vec![0; levels];
        for f in &self.functions {
            counts[f.level as usize] += 1;
        }
        counts
    }

    /// Owner leaf of a DOF: the smallest leaf id in the support of its scalar function.
    pub fn owner_leaf(&self, dof: usize) -> usize {
        self.support_leaves[dof / self.n_fields][0]
    }
}

/// Scalar functions supported on one leaf, sorted by scalar index.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LeafSupport {
    pub functions: Vec<usize>,
}

impl LeafSupport {
    /// Global DOF indices of all field components, ascending.
    pub fn dofs(&self, n_fields: usize) -> Vec<usize> {
        self.functions.iter().flat_map(|&s| (0..n_fields).map(move |c| s * n_fields + c)).collect()
    }
}

fn key_cells(mesh: &MlhpMesh, key: &FunctionKey) -> Vec<[i64; 3]> {
    let dim = mesh.dim();
    let per_axis: Vec<Vec<i64>> = (0..3)
        .map(|a| if a < dim { key.modes[a].cells(mesh.cells_at(a, key.level)).collect() } else { vec![0] })
        .collect();
    let mut out = Vec::new();
    for &k in &per_axis[2] {
        for &j in &per_axis[1] {
            for &i in &per_axis[0] {
                out.push([i, j, k]);
            }
        }
    }
    out
}

/// Activity test for a function key; returns its component elements when active.
///
/// Inactive leaves behave as if refined without bound: cells below them exist but are never
/// leaves, so no function is active only because of a fictitious element.
fn active_cells(mesh: &MlhpMesh, key: &FunctionKey) -> Option<Vec<usize>> {
    let mut elements = Vec::new();
    let mut has_leaf = false;
    for cell in key_cells(mesh, key) {
        match mesh.find(key.level, cell) {
            Some(id) => {
                let leaf = mesh.leaf_index(id);
                has_leaf |= leaf.is_some_and(|l| mesh.is_leaf_active(l));
                elements.push(id);
            }
            None => {
                let ancestor = (0..key.level).rev().find_map(|l| {
                    let shift = key.level - l;
                    mesh.find(l, [cell[0] >> shift, cell[1] >> shift, cell[2] >> shift])
                })?;
                if mesh.leaf_index(ancestor).is_none_or(|l| mesh.is_leaf_active(l)) {
                    return None;
                }
            }
        }
    }
    has_leaf.then_some(elements)
}

/// Enumerates the active basis of order `p` and numbers it by sorted function key.
///
/// Functions whose support contains no active leaf are dropped.
pub fn enumerate_dofs(mesh: &MlhpMesh, p: usize, n_fields: usize) -> Result<DofMap> {
    if p == 0 || p > 20 {
        return Err(FcmError::config(format!("polynomial order must be in 1..=20, got {p}")));
    }
    if n_fields == 0 {
        return Err(FcmError::config("number of fields must be positive"));
    }
    let dim = mesh.dim();
    let mut found: HashMap<FunctionKey, Vec<usize>> = HashMap::new();
    for e in &mesh.elements {
        let mut choices: Vec<Vec<Mode1>> = Vec::with_capacity(3);
        for a in 0..3 {
            if a < dim {
                let c = e.cell[a];
                let mut v = vec![Mode1::Node(c), Mode1::Node(c + 1)];
                v.extend((2..=p).map(|q| Mode1::Internal(c, q as u8)));
                choices.push(v);
            } else {
                choices.push(vec![Mode1::Node(0)]);
            }
        }
        for &m2 in &choices[2] {
            for &m1 in &choices[1] {
                for &m0 in &choices[0] {
                    let key = FunctionKey { level: e.level, modes: [m0, m1, m2] };
                    if found.contains_key(&key) {
                        continue;
                    }
                    if let Some(cells) = active_cells(mesh, &key) {
                        let mut support = Vec::new();
                        for &c in &cells {
                            mesh.leaves_below(c, &mut support);
                        }
                        support.retain(|&l| mesh.is_leaf_active(l));
                        support.sort_unstable();
                        support.dedup();
                        found.insert(key, support);
                    }
                }
            }
        }
    }
    let mut entries: Vec<(FunctionKey, Vec<usize>)> = found.into_iter().filter(|(_, s)| !s.is_empty()).collect();
    entries.sort_by_key(|a| a.0);
    let functions: Vec<FunctionKey> = entries.iter().map(|e| e.0).collect();
    let index = functions.iter().enumerate().map(|(i, k)| (*k, i)).collect();
    let support_leaves = entries.into_iter().map(|e| e.1).collect();
    Ok(DofMap { dim, p, n_fields, functions, index, support_leaves })
}

/// Supports of every leaf; inactive leaves get an empty support.
pub fn leaf_supports(mesh: &MlhpMesh, dofs: &DofMap) -> Vec<LeafSupport> {
    let mut out = vec![LeafSupport::default(); mesh.n_leaves()];
    for (s, leaves) in dofs.support_leaves.iter().enumerate() {
        for &l in leaves {
            out[l].functions.push(s);
        }
    }
    out
}

/// Per-axis, per-level 1D mode values and derivatives at one point of a leaf.
///
/// `values[a][l][i]` is mode `i` of the level-`l` ancestor cell along axis `a`;
/// derivatives are with respect to the global coordinate.
pub struct LeafEvaluator {
    dim: usize,
    p: usize,
    level: u32,
    cell: [i64; 3],
    lo: Vec<[f64; 3]>,
    width: Vec<[f64; 3]>,
    values: Vec<Vec<f64>>,
    derivs: Vec<Vec<f64>>,
}

impl LeafEvaluator {
    pub fn new(mesh: &MlhpMesh, leaf_id: usize, p: usize) -> Self {
        let e = mesh.leaf(leaf_id);
        let dim = mesh.dim();
        let nl = e.level as usize + 1;
        let mut lo = vec![[0.0; 3]; nl];
        let mut width = vec![[1.0; 3]; nl];
        for l in 0..nl {
            let shift = e.level - l as u32;
            let mut anc = [0i64; 3];
            for a in 0..dim {
                anc[a] = e.cell[a] >> shift;
            }
            let b = mesh.cell_bounds(l as u32, anc);
            for a in 0..dim {
                lo[l][a] = b.lo[a];
                width[l][a] = b.width(a);
            }
        }
        LeafEvaluator {
            dim,
            p,
            level: e.level,
            cell: e.cell,
            lo,
            width,
            values: vec![vec![0.0; p + 1]; 3 * nl],
            derivs: vec![vec![0.0; p + 1]; 3 * nl],
        }
    }

    pub fn set_point(&mut self, x: &[f64; 3]) {
        let nl = self.level as usize + 1;
        for a in 0..self.dim {
            for l in 0..nl {
                let xi = 2.0 * (x[a] - self.lo[l][a]) / self.width[l][a] - 1.0;
                let slot = a * nl + l;
                eval_modes_into(self.p, xi, &mut self.values[slot], Some(&mut self.derivs[slot]));
                let scale = 2.0 / self.width[l][a];
                for d in self.derivs[slot].iter_mut() {
                    *d *= scale;
                }
            }
        }
    }

    /// Local mode indices of a function on this leaf.
    pub fn local_modes(&self, key: &FunctionKey) -> Option<[usize; 3]> {
        let shift = self.level.checked_sub(key.level)?;
        let mut idx = [0usize; 3];
        for a in 0..self.dim {
            idx[a] = key.modes[a].local_index(self.cell[a] >> shift)?;
        }
        Some(idx)
    }

    /// Value and gradient of a function with precomputed local modes at the current point.
    pub fn eval(&self, level: u32, modes: &[usize; 3]) -> (f64, [f64; 3]) {
        let nl = self.level as usize + 1;
        let l = level as usize;
        let mut v = [1.0; 3];
        let mut d = [0.0; 3];
        for a in 0..self.dim {
            v[a] = self.values[a * nl + l][modes[a]];
            d[a] = self.derivs[a * nl + l][modes[a]];
        }
        let value = v[0] * v[1] * v[2];
        let mut grad = [0.0; 3];
        for a in 0..self.dim {
            let mut g = d[a];
            for b in 0..self.dim {
                if b != a {
                    g *= v[b];
                }
            }
            grad[a] = g;
        }
        (value, grad)
    }
}

/// Evaluates every scalar function of `support` on leaf `leaf_id` at `x`.
pub fn eval_support(mesh: &MlhpMesh, dofs: &DofMap, leaf_id: usize, support: &LeafSupport, x: &[f64; 3]) -> Vec<(f64, [f64; 3])> {
    let mut ev = LeafEvaluator::new(mesh, leaf_id, dofs.p);
    ev.set_point(x);
    support
        .functions
        .iter()
        .map(|&s| {
            let key = &dofs.functions[s];
            let modes = ev.local_modes(key).expect("support function vanishes on leaf");
            ev.eval(key.level, &modes)
        })
        .collect()
}
