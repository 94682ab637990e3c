//! Implicit geometry: shape catalog, element classification, volume
//! fractions and cut-cell quadrature.
//!
//! Shapes answer three questions: is a point inside, what is the state of an
//! axis-aligned box (inside, outside or possibly cut), and, for axis-aligned
//! shapes only, what is the exact inside part of a box. The last one lets
//! straight cuts be integrated exactly at any depth.

use std::fmt;
use std::path::Path;
use std::sync::Arc;

use crate::error::{FcmError, Result};
use crate::quadrature::{gauss_legendre, tensor_gauss, QuadPoint};

/// Axis-aligned box in 1, 2 or 3 dimensions. Unused trailing axes are zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxNd {
    dim: usize,
    pub lo: [f64; 3],
    pub hi: [f64; 3],
}

impl BoxNd {
    pub fn new(lo: &[f64], hi: &[f64]) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() || lo.len() > 3 {
            return Err(FcmError::Invalid(format!(
                "box corners must have matching length 1..=3, got {} and {}",
                lo.len(),
                hi.len()
            )));
        }
        let mut b = BoxNd { dim: lo.len(), lo: [0.0; 3], hi: [0.0; 3] };
        for a in 0..lo.len() {
            if !(hi[a] > lo[a]) || !lo[a].is_finite() || !hi[a].is_finite() {
                return Err(FcmError::Invalid(format!("degenerate box along axis {a}: [{}, {}]", lo[a], hi[a])));
            }
            b.lo[a] = lo[a];
            b.hi[a] = hi[a];
        }
        Ok(b)
    }

    /// Builds a box without validation; callers guarantee `lo < hi`.
    pub(crate) fn from_arrays(dim: usize, lo: [f64; 3], hi: [f64; 3]) -> Self {
        BoxNd { dim, lo, hi }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn volume(&self) -> f64 {
        (0..self.dim).map(|a| self.hi[a] - self.lo[a]).product()
    }

    pub fn center(&self) -> [f64; 3] {
        let mut c = [0.0; 3];
        for a in 0..self.dim {
            c[a] = 0.5 * (self.lo[a] + self.hi[a]);
        }
        c
    }

    pub fn width(&self, axis: usize) -> f64 {
        self.hi[axis] - self.lo[axis]
    }

    pub fn corners(&self) -> Vec<[f64; 3]> {
        (0..1usize << self.dim)
            .map(|mask| {
                let mut x = [0.0; 3];
                for a in 0..self.dim {
                    x[a] = if mask >> a & 1 == 1 { self.hi[a] } else { self.lo[a] };
                }
                x
            })
            .collect()
    }

    /// The `2^d` congruent children, child `i` taking the upper half along axis `a` iff bit `a` of `i` is set.
    pub fn bisect(&self) -> Vec<BoxNd> {
        let c = self.center();
        (0..1usize << self.dim)
            .map(|mask| {
                let mut b = *self;
                for a in 0..self.dim {
                    if mask >> a & 1 == 1 {
                        b.lo[a] = c[a];
                    } else {
                        b.hi[a] = c[a];
                    }
                }
                b
            })
            .collect()
    }

    pub fn contains(&self, x: &[f64; 3]) -> bool {
        (0..self.dim).all(|a| x[a] >= self.lo[a] && x[a] <= self.hi[a])
    }

    /// Intersection with another box, `None` when the interiors do not overlap.
    pub fn intersect(&self, other: &BoxNd) -> Option<BoxNd> {
        let mut b = *self;
        for a in 0..self.dim {
            b.lo[a] = self.lo[a].max(other.lo[a]);
            b.hi[a] = self.hi[a].min(other.hi[a]);
            if b.hi[a] <= b.lo[a] {
                return None;
            }
        }
        Some(b)
    }

    /// Decomposes `self \ inner` into at most `2d` disjoint boxes. `inner` must lie inside `self`.
    pub fn subtract(&self, inner: &BoxNd) -> Vec<BoxNd> {
        let mut pieces = Vec::new();
        let mut rest = *self;
        for a in 0..self.dim {
            if inner.lo[a] > rest.lo[a] {
                let mut below = rest;
                below.hi[a] = inner.lo[a];
                pieces.push(below);
            }
            if inner.hi[a] < rest.hi[a] {
                let mut above = rest;
                above.lo[a] = inner.hi[a];
                pieces.push(above);
            }
            rest.lo[a] = inner.lo[a];
            rest.hi[a] = inner.hi[a];
        }
        pieces
    }
}

/// State of a box with respect to a shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CutClassification {
    Inside,
    Outside,
    Cut,
}

/// Exact inside part of a box for axis-aligned shapes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Clip {
    Empty,
    Full,
    Part(BoxNd),
}

/// Occupancy raster covering an axis-aligned region; voxel `(i, j, k)` is at
/// `data[i + nx * (j + ny * k)]`, nonzero meaning physical.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    pub dims: [usize; 3],
    /// Voxels per finite cell along each axis.
    pub grouping: [usize; 3],
    pub lower: [f64; 3],
    pub upper: [f64; 3],
    pub data: Vec<u8>,
}

impl VoxelGrid {
    fn spacing(&self, a: usize) -> f64 {
        (self.upper[a] - self.lower[a]) / self.dims[a] as f64
    }

    fn occupied(&self, i: usize, j: usize, k: usize) -> bool {
        self.data[i + self.dims[0] * (j + self.dims[1] * k)] != 0
    }

    fn inside(&self, x: &[f64; 3]) -> bool {
        let mut idx = [0usize; 3];
        for a in 0..3 {
            if self.dims[a] == 1 && self.upper[a] == self.lower[a] {
                continue;
            }
            let t = (x[a] - self.lower[a]) / self.spacing(a);
            if t < 0.0 || t >= self.dims[a] as f64 {
                return false;
            }
            idx[a] = t as usize;
        }
        self.occupied(idx[0], idx[1], idx[2])
    }

    fn box_state(&self, b: &BoxNd) -> CutClassification {
        let mut range = [(0usize, 1usize); 3];
        for a in 0..b.dim() {
            let h = self.spacing(a);
            let lo = ((b.lo[a] - self.lower[a]) / h).floor().max(0.0) as usize;
            let hi = (((b.hi[a] - self.lower[a]) / h).ceil().max(0.0) as usize).min(self.dims[a]);
            if b.hi[a] <= self.lower[a] || b.lo[a] >= self.upper[a] || hi <= lo {
                return CutClassification::Outside;
            }
            range[a] = (lo, hi);
        }
        let fully_covered = (0..b.dim()).all(|a| b.lo[a] >= self.lower[a] && b.hi[a] <= self.upper[a]);
        let (mut any, mut all) = (false, fully_covered);
        for k in range[2].0..range[2].1 {
            for j in range[1].0..range[1].1 {
                for i in range[0].0..range[0].1 {
                    if self.occupied(i, j, k) {
                        any = true;
                    } else {
                        all = false;
                    }
                }
            }
        }
        match (any, all) {
            (_, true) => CutClassification::Inside,
            (false, _) => CutClassification::Outside,
            _ => CutClassification::Cut,
        }
    }

    /// Reads the raster format: one text line `nx ny nz gx gy gz`, then `nx*ny*nz` occupancy bytes.
    pub fn read(path: &Path, lower: [f64; 3], upper: [f64; 3]) -> Result<VoxelGrid> {
        let bytes = std::fs::read(path).map_err(|e| FcmError::io(path, e))?;
        let newline = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| FcmError::config(format!("{}: missing voxel header line", path.display())))?;
        let header = std::str::from_utf8(&bytes[..newline])
            .map_err(|_| FcmError::config(format!("{}: voxel header is not text", path.display())))?;
        let ints: Vec<usize> = header
            .split_whitespace()
            .map(|t| t.parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| FcmError::config(format!("{}: bad voxel header: {e}", path.display())))?;
        if ints.len() != 6 || ints.contains(&0) {
            return Err(FcmError::config(format!(
                "{}: voxel header needs six positive integers (dims, grouping)",
                path.display()
            )));
        }
        let dims = [ints[0], ints[1], ints[2]];
        let payload = &bytes[newline + 1..];
        if payload.len() != dims.iter().product::<usize>() {
            return Err(FcmError::config(format!(
                "{}: expected {} voxel bytes, found {}",
                path.display(),
                dims.iter().product::<usize>(),
                payload.len()
            )));
        }
        Ok(VoxelGrid { dims, grouping: [ints[3], ints[4], ints[5]], lower, upper, data: payload.to_vec() })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut out = format!(
            "{} {} {} {} {} {}\n",
            self.dims[0], self.dims[1], self.dims[2], self.grouping[0], self.grouping[1], self.grouping[2]
        )
        .into_bytes();
        out.extend_from_slice(&self.data);
        std::fs::write(path, out).map_err(|e| FcmError::io(path, e))
    }

    /// Solid block pierced by random spherical pores, a stand-in for scanned porous material.
    pub fn synthetic_pores(dims: [usize; 3], grouping: [usize; 3], n_pores: usize, max_radius: f64, seed: u64) -> VoxelGrid {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let pores: Vec<([f64; 3], f64)> = (0..n_pores)
            .map(|_| {
                let c = [rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()];
                (c, max_radius * (0.3 + 0.7 * rng.gen::<f64>()))
            })
            .collect();
        let mut data = vec![1u8; dims.iter().product()];
        for k in 0..dims[2] {
            for j in 0..dims[1] {
                for i in 0..dims[0] {
                    let x = [
                        (i as f64 + 0.5) / dims[0] as f64,
                        (j as f64 + 0.5) / dims[1] as f64,
                        (k as f64 + 0.5) / dims[2] as f64,
                    ];
                    let in_pore = pores.iter().any(|(c, r)| {
                        let d2: f64 = (0..3).filter(|&a| dims[a] > 1).map(|a| (x[a] - c[a]).powi(2)).sum();
                        d2 < r * r
                    });
                    if in_pore {
                        data[i + dims[0] * (j + dims[1] * k)] = 0;
                    }
                }
            }
        }
        VoxelGrid { dims, grouping, lower: [0.0; 3], upper: [1.0; 3], data }
    }
}

/// Closed catalog of implicit shapes. A point is physical iff `inside` holds.
#[derive(Debug, Clone, PartialEq)]
pub enum Shape {
    All,
    Empty,
    /// `normal · x < offset`.
    HalfSpace { normal: [f64; 3], offset: f64 },
    /// Open ball `|x - center| < radius`.
    Ball { center: [f64; 3], radius: f64 },
    AxisBox { lo: [f64; 3], hi: [f64; 3] },
    Complement(Box<Shape>),
    Intersection(Vec<Shape>),
    Union(Vec<Shape>),
    Voxels(Arc<VoxelGrid>),
}

impl Shape {
    /// Axis-aligned half-space `x[axis] < offset`.
    pub fn below(axis: usize, offset: f64) -> Shape {
        let mut normal = [0.0; 3];
        normal[axis] = 1.0;
        Shape::HalfSpace { normal, offset }
    }

    /// Axis-aligned half-space `x[axis] > offset`.
    pub fn above(axis: usize, offset: f64) -> Shape {
        let mut normal = [0.0; 3];
        normal[axis] = -1.0;
        Shape::HalfSpace { normal, offset: -offset }
    }

    pub fn inside(&self, x: &[f64; 3]) -> bool {
        match self {
            Shape::All => true,
            Shape::Empty => false,
            Shape::HalfSpace { normal, offset } => dot(normal, x) < *offset,
            Shape::Ball { center, radius } => dist2(center, x) < radius * radius,
            Shape::AxisBox { lo, hi } => (0..3).all(|a| x[a] >= lo[a] && x[a] <= hi[a]),
            Shape::Complement(s) => !s.inside(x),
            Shape::Intersection(v) => v.iter().all(|s| s.inside(x)),
            Shape::Union(v) => v.iter().any(|s| s.inside(x)),
            Shape::Voxels(g) => g.inside(x),
        }
    }

    /// Inside/Outside are exact up to measure zero; Cut may be conservative for boolean combinations.
    pub fn box_state(&self, b: &BoxNd) -> CutClassification {
        use CutClassification::*;
        match self {
            Shape::All => Inside,
            Shape::Empty => Outside,
            Shape::HalfSpace { normal, offset } => {
                let (mut min, mut max) = (0.0, 0.0);
                for a in 0..b.dim() {
                    let (u, v) = (normal[a] * b.lo[a], normal[a] * b.hi[a]);
                    min += u.min(v);
                    max += u.max(v);
                }
                if max <= *offset {
                    Inside
                } else if min >= *offset {
                    Outside
                } else {
                    Cut
                }
            }
            Shape::Ball { center, radius } => {
                let (mut near, mut far) = (0.0, 0.0);
                for a in 0..b.dim() {
                    let c = center[a];
                    let gap = if c < b.lo[a] {
                        b.lo[a] - c
                    } else if c > b.hi[a] {
                        c - b.hi[a]
                    } else {
                        0.0
                    };
                    near += gap * gap;
                    let reach = (c - b.lo[a]).abs().max((b.hi[a] - c).abs());
                    far += reach * reach;
                }
                if far <= radius * radius {
                    Inside
                } else if near >= radius * radius {
                    Outside
                } else {
                    Cut
                }
            }
            Shape::AxisBox { lo, hi } => {
                let inside = (0..b.dim()).all(|a| b.lo[a] >= lo[a] && b.hi[a] <= hi[a]);
                let disjoint = (0..b.dim()).any(|a| b.hi[a] <= lo[a] || b.lo[a] >= hi[a]);
                if inside {
                    Inside
                } else if disjoint {
                    Outside
                } else {
                    Cut
                }
            }
            Shape::Complement(s) => match s.box_state(b) {
                Inside => Outside,
                Outside => Inside,
                Cut => Cut,
            },
            Shape::Intersection(v) => {
                let states: Vec<_> = v.iter().map(|s| s.box_state(b)).collect();
                if states.contains(&Outside) {
                    Outside
                } else if states.iter().all(|&s| s == Inside) {
                    Inside
                } else {
                    Cut
                }
            }
            Shape::Union(v) => {
                let states: Vec<_> = v.iter().map(|s| s.box_state(b)).collect();
                if states.contains(&Inside) {
                    Inside
                } else if states.iter().all(|&s| s == Outside) {
                    Outside
                } else {
                    Cut
                }
            }
            Shape::Voxels(g) => g.box_state(b),
        }
    }

    /// Exact inside part of `b`, available only for axis-aligned shapes.
    pub fn clip(&self, b: &BoxNd) -> Option<Clip> {
        match self {
            Shape::All => Some(Clip::Full),
            Shape::Empty => Some(Clip::Empty),
            Shape::HalfSpace { normal, offset } => {
                let nonzero: Vec<usize> = (0..b.dim()).filter(|&a| normal[a] != 0.0).collect();
                match nonzero.as_slice() {
                    [] => Some(if 0.0 < *offset { Clip::Full } else { Clip::Empty }),
                    [axis] => {
                        let a = *axis;
                        let t = offset / normal[a];
                        let mut part = *b;
                        if normal[a] > 0.0 {
                            part.hi[a] = part.hi[a].min(t);
                        } else {
                            part.lo[a] = part.lo[a].max(t);
                        }
                        Some(clip_from(b, part))
                    }
                    _ => None,
                }
            }
            Shape::AxisBox { lo, hi } => {
                let other = BoxNd::from_arrays(b.dim(), *lo, *hi);
                Some(match b.intersect(&other) {
                    None => Clip::Empty,
                    Some(part) => clip_from(b, part),
                })
            }
            Shape::Intersection(v) => {
                let mut current = *b;
                for s in v {
                    match s.clip(&current)? {
                        Clip::Empty => return Some(Clip::Empty),
                        Clip::Full => {}
                        Clip::Part(p) => current = p,
                    }
                }
                Some(clip_from(b, current))
            }
            _ => None,
        }
    }
}

fn clip_from(b: &BoxNd, part: BoxNd) -> Clip {
    if (0..b.dim()).any(|a| part.hi[a] <= part.lo[a]) {
        Clip::Empty
    } else if part == *b {
        Clip::Full
    } else {
        Clip::Part(part)
    }
}

pub(crate) fn dot(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (0..3).map(|i| (a[i] - b[i]).powi(2)).sum()
}

/// Prescribed vector data on a boundary patch or in the volume.
#[derive(Clone)]
pub enum FieldData {
    Constant(Vec<f64>),
    Function(Arc<dyn Fn(&[f64; 3]) -> Vec<f64> + Send + Sync>),
}

impl FieldData {
    pub fn zero(n: usize) -> Self {
        FieldData::Constant(vec![0.0; n])
    }

    pub fn eval(&self, x: &[f64; 3]) -> Vec<f64> {
        match self {
            FieldData::Constant(v) => v.clone(),
            FieldData::Function(f) => f(x),
        }
    }
}

impl fmt::Debug for FieldData {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FieldData::Constant(v) => write!(f, "Constant({v:?})"),
            FieldData::Function(_) => write!(f, "Function(..)"),
        }
    }
}

/// Parametric boundary patch with a well-defined outward normal.
#[derive(Debug, Clone, PartialEq)]
pub enum SurfacePatch {
    /// Rectangle in the plane `x[axis] = position`, spanning `[lo, hi]` along the other axes.
    /// `outward` is +1 or -1 and orients the normal along `axis`.
    Rect { dim: usize, axis: usize, position: f64, lo: [f64; 3], hi: [f64; 3], outward: f64 },
    /// Full circle (2D) or sphere (3D); the normal points away from the center unless `inward`.
    Sphere { dim: usize, center: [f64; 3], radius: f64, inward: bool },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfacePoint {
    pub x: [f64; 3],
    pub weight: f64,
    pub normal: [f64; 3],
}

impl SurfacePatch {
    pub fn dim(&self) -> usize {
        match self {
            SurfacePatch::Rect { dim, .. } | SurfacePatch::Sphere { dim, .. } => *dim,
        }
    }

    /// Face of a box: `axis`, and `upper` selecting the `hi` side.
    pub fn box_face(bounds: &BoxNd, axis: usize, upper: bool) -> SurfacePatch {
        SurfacePatch::Rect {
            dim: bounds.dim(),
            axis,
            position: if upper { bounds.hi[axis] } else { bounds.lo[axis] },
            lo: bounds.lo,
            hi: bounds.hi,
            outward: if upper { 1.0 } else { -1.0 },
        }
    }

    pub fn measure(&self) -> f64 {
        match *self {
            SurfacePatch::Rect { dim, axis, lo, hi, .. } => {
                (0..dim).filter(|&a| a != axis).map(|a| hi[a] - lo[a]).product()
            }
            SurfacePatch::Sphere { dim, radius, .. } => match dim {
                2 => 2.0 * std::f64::consts::PI * radius,
                3 => 4.0 * std::f64::consts::PI * radius * radius,
                _ => 0.0,
            },
        }
    }

    /// Rectangle patch restricted to the in-plane extent of `bounds`; `None` if disjoint.
    pub(crate) fn rect_within(&self, bounds: &BoxNd) -> Option<SurfacePatch> {
        match *self {
            SurfacePatch::Rect { dim, axis, position, lo, hi, outward } => {
                let mut nlo = lo;
                let mut nhi = hi;
                for a in (0..dim).filter(|&a| a != axis) {
                    nlo[a] = lo[a].max(bounds.lo[a]);
                    nhi[a] = hi[a].min(bounds.hi[a]);
                    if nhi[a] <= nlo[a] {
                        return None;
                    }
                }
                Some(SurfacePatch::Rect { dim, axis, position, lo: nlo, hi: nhi, outward })
            }
            SurfacePatch::Sphere { .. } => None,
        }
    }
}

/// Gauss points, weights and unit normals on a patch. Spheres use a product rule in the angles.
pub fn surface_quadrature(patch: &SurfacePatch, order: usize) -> Result<Vec<SurfacePoint>> {
    if order == 0 {
        return Err(FcmError::config("surface quadrature order must be at least 1"));
    }
    match *patch {
        SurfacePatch::Rect { dim, axis, position, lo, hi, outward } => {
            if axis >= dim {
                return Err(FcmError::config(format!("plane axis {axis} out of range for dimension {dim}")));
            }
            let mut normal = [0.0; 3];
            normal[axis] = outward.signum();
            let in_plane: Vec<usize> = (0..dim).filter(|&a| a != axis).collect();
            let (xi, wi) = gauss_legendre(order);
            let n = order.pow(in_plane.len() as u32);
            let mut out = Vec::with_capacity(n);
            for flat in 0..n {
                let mut idx = flat;
                let mut x = [0.0; 3];
                x[axis] = position;
                let mut w = 1.0;
                for &a in &in_plane {
                    let k = idx % order;
                    idx /= order;
                    let half = 0.5 * (hi[a] - lo[a]);
                    x[a] = lo[a] + half * (xi[k] + 1.0);
                    w *= wi[k] * half;
                }
                out.push(SurfacePoint { x, weight: w, normal });
            }
            Ok(out)
        }
        SurfacePatch::Sphere { dim, center, radius, inward } => {
            let sign = if inward { -1.0 } else { 1.0 };
            let (xi, wi) = gauss_legendre(order);
            let pi = std::f64::consts::PI;
            match dim {
                2 => Ok(xi
                    .iter()
                    .zip(&wi)
                    .map(|(&t, &w)| {
                        let phi = pi * (t + 1.0);
                        let n = [phi.cos(), phi.sin(), 0.0];
                        SurfacePoint {
                            x: [center[0] + radius * n[0], center[1] + radius * n[1], 0.0],
                            weight: w * pi * radius,
                            normal: [sign * n[0], sign * n[1], 0.0],
                        }
                    })
                    .collect()),
                3 => {
                    let mut out = Vec::with_capacity(order * order);
                    for (&s, &ws) in xi.iter().zip(&wi) {
                        let theta = 0.5 * pi * (s + 1.0);
                        for (&t, &wt) in xi.iter().zip(&wi) {
                            let phi = pi * (t + 1.0);
                            let n = [theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos()];
                            out.push(SurfacePoint {
                                x: [center[0] + radius * n[0], center[1] + radius * n[1], center[2] + radius * n[2]],
                                weight: ws * 0.5 * pi * wt * pi * radius * radius * theta.sin(),
                                normal: [sign * n[0], sign * n[1], sign * n[2]],
                            });
                        }
                    }
                    Ok(out)
                }
                _ => Err(FcmError::config(format!("sphere patches are not supported in dimension {dim}"))),
            }
        }
    }
}

/// Penalty Dirichlet condition `β v·(u - g)` on a patch, optionally on selected components only.
#[derive(Debug, Clone)]
pub struct DirichletCondition {
    pub patch: SurfacePatch,
    pub beta: f64,
    pub value: FieldData,
    /// Constrained field components; `None` constrains all of them.
    pub components: Option<Vec<usize>>,
}

#[derive(Debug, Clone)]
pub enum Traction {
    Vector(FieldData),
    /// Normal pressure, `t = -P n`.
    Pressure(f64),
}

#[derive(Debug, Clone)]
pub struct NeumannCondition {
    pub patch: SurfacePatch,
    pub traction: Traction,
}

/// Physical domain as an indicator over the computational box plus boundary data.
#[derive(Debug, Clone)]
pub struct ImplicitDomain {
    pub shape: Shape,
    pub alpha_fict: f64,
    pub dirichlet: Vec<DirichletCondition>,
    pub neumann: Vec<NeumannCondition>,
}

impl ImplicitDomain {
    pub fn new(shape: Shape, alpha_fict: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&alpha_fict) {
            return Err(FcmError::config(format!("alpha_fict must lie in [0, 1), got {alpha_fict}")));
        }
        Ok(ImplicitDomain { shape, alpha_fict, dirichlet: Vec::new(), neumann: Vec::new() })
    }

    pub fn with_dirichlet(mut self, condition: DirichletCondition) -> Self {
        self.dirichlet.push(condition);
        self
    }

    pub fn with_neumann(mut self, condition: NeumannCondition) -> Self {
        self.neumann.push(condition);
        self
    }

    pub fn alpha(&self, x: &[f64; 3]) -> f64 {
        if self.shape.inside(x) {
            1.0
        } else {
            self.alpha_fict
        }
    }
}

/// Recursive bisection classification; Cut boxes are split up to `depth` times to resolve
/// conservative answers from boolean shapes.
pub fn classify_element(domain: &ImplicitDomain, bounds: &BoxNd, depth: usize) -> CutClassification {
    classify_shape(&domain.shape, bounds, depth)
}

fn classify_shape(shape: &Shape, bounds: &BoxNd, depth: usize) -> CutClassification {
    if let Some(clip) = shape.clip(bounds) {
        return match clip {
            Clip::Empty => CutClassification::Outside,
            Clip::Full => CutClassification::Inside,
            Clip::Part(_) => CutClassification::Cut,
        };
    }
    let state = shape.box_state(bounds);
    if state != CutClassification::Cut || depth == 0 {
        return state;
    }
    let states: Vec<_> = bounds.bisect().iter().map(|c| classify_shape(shape, c, depth - 1)).collect();
    if states.iter().all(|&s| s == CutClassification::Inside) {
        CutClassification::Inside
    } else if states.iter().all(|&s| s == CutClassification::Outside) {
        CutClassification::Outside
    } else {
        CutClassification::Cut
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellState {
    Inside,
    Outside,
    /// Unresolved at maximum depth; α is evaluated pointwise at the quadrature points.
    Mixed,
}

#[derive(Debug, Clone)]
pub struct SubCell {
    pub bounds: BoxNd,
    pub state: CellState,
    pub points: Vec<QuadPoint>,
}

impl SubCell {
    /// Physical volume attributed to this cell; mixed cells integrate the indicator with
    /// their own quadrature points, or their midpoint when they carry none.
    pub fn physical_volume(&self, shape: &Shape) -> f64 {
        match self.state {
            CellState::Inside => self.bounds.volume(),
            CellState::Outside => 0.0,
            CellState::Mixed if self.points.is_empty() => {
                if shape.inside(&self.bounds.center()) {
                    self.bounds.volume()
                } else {
                    0.0
                }
            }
            CellState::Mixed => self.points.iter().filter(|q| shape.inside(&q.x)).map(|q| q.weight).sum(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct QuadraturePartition {
    pub cells: Vec<SubCell>,
}

impl QuadraturePartition {
    pub fn total_volume(&self) -> f64 {
        self.cells.iter().map(|c| c.bounds.volume()).sum()
    }

    pub fn physical_volume(&self, shape: &Shape) -> f64 {
        self.cells.iter().map(|c| c.physical_volume(shape)).sum()
    }

    /// Quadrature points with the indicator folded into the weight.
    pub fn weighted_points<'a>(&'a self, domain: &'a ImplicitDomain) -> impl Iterator<Item = QuadPoint> + 'a {
        self.cells.iter().flat_map(move |cell| {
            let factor = match cell.state {
                CellState::Inside => Some(1.0),
                CellState::Outside => Some(domain.alpha_fict),
                CellState::Mixed => None,
            };
            cell.points.iter().filter_map(move |q| {
                let a = factor.unwrap_or_else(|| domain.alpha(&q.x));
                (a != 0.0).then_some(QuadPoint { x: q.x, weight: q.weight * a })
            })
        })
    }

    /// True if at least one quadrature point carries the physical indicator.
    pub fn has_physical_points(&self, shape: &Shape) -> bool {
        self.cells.iter().any(|c| match c.state {
            CellState::Inside => true,
            CellState::Outside => false,
            CellState::Mixed => c.points.iter().any(|q| shape.inside(&q.x)),
        })
    }
}

/// Space-tree partition of an element for integration.
///
/// Cut sub-cells are bisected until `tree_depth`; axis-aligned shapes are instead
/// split exactly into inside and outside boxes.
pub fn quadrature_cells(domain: &ImplicitDomain, bounds: &BoxNd, tree_depth: usize, order: usize) -> QuadraturePartition {
    assert!(order >= 1, "quadrature order must be at least 1");
    let mut cells = Vec::new();
    collect_cells(&domain.shape, bounds, tree_depth, &mut |b, state| {
        cells.push(SubCell { bounds: b, state, points: tensor_gauss(&b, order) });
    });
    QuadraturePartition { cells }
}

/// Physical volume fraction `|T ∩ Ω| / |T|` from the same space tree as [`quadrature_cells`].
pub fn volume_fraction(domain: &ImplicitDomain, bounds: &BoxNd, depth: usize) -> f64 {
    let mut physical = 0.0;
    collect_cells(&domain.shape, bounds, depth, &mut |b, state| {
        physical += match state {
            CellState::Inside => b.volume(),
            CellState::Outside => 0.0,
            CellState::Mixed => {
                if domain.shape.inside(&b.center()) {
                    b.volume()
                } else {
                    0.0
                }
            }
        };
    });
    physical / bounds.volume()
}

fn collect_cells(shape: &Shape, bounds: &BoxNd, depth: usize, emit: &mut dyn FnMut(BoxNd, CellState)) {
    if let Some(clip) = shape.clip(bounds) {
        match clip {
            Clip::Full => emit(*bounds, CellState::Inside),
            Clip::Empty => emit(*bounds, CellState::Outside),
            Clip::Part(inner) => {
                emit(inner, CellState::Inside);
                for piece in bounds.subtract(&inner) {
                    emit(piece, CellState::Outside);
                }
            }
        }
        return;
    }
    match shape.box_state(bounds) {
        CutClassification::Inside => emit(*bounds, CellState::Inside),
        CutClassification::Outside => emit(*bounds, CellState::Outside),
        CutClassification::Cut => {
            if depth == 0 {
                emit(*bounds, CellState::Mixed);
            } else {
                for child in bounds.bisect() {
                    collect_cells(shape, &child, depth - 1, emit);
                }
            }
        }
    }
}
