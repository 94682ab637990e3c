//! CSV, Matrix Market, block sidecar and legacy-VTK writers, plus readers for round trips.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::blocks::{Block, BlockKind, BlockSet};
use crate::dofs::eval_support;
use crate::error::{FcmError, Result};
use crate::problem::Problem;
use crate::sparse::CsrMatrix;
use crate::study::StudyResult;

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    fs::File::create(path).map(BufWriter::new).map_err(|e| FcmError::io(path, e))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).map_err(|e| csv_error(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> FcmError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => FcmError::io(path, io),
        other => FcmError::Invalid(format!("{}: {other:?}", path.display())),
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| format!("{v:e}")).unwrap_or_default()
}

/// One row per PCG iteration: `study,scenario,iter,residual,energy_error`.
pub fn write_convergence_csv(path: &Path, study: &str, results: &[StudyResult]) -> Result<()> {
    let mut w = csv_writer(path)?;
    let e = |err| csv_error(path, err);
    w.write_record(["study", "scenario", "iter", "residual", "energy_error"]).map_err(e)?;
    for r in results {
        for (i, res) in r.report.residuals.iter().enumerate() {
            let energy = opt(r.report.energy_errors.get(i).copied());
            w.write_record([study, &r.scenario, &(i + 1).to_string(), &format!("{res:e}"), &energy]).map_err(e)?;
        }
    }
    w.flush().map_err(|err| FcmError::io(path, err))
}

/// Per-scenario summary: sizes, preconditioner statistics, termination and spectra.
pub fn write_summary_csv(path: &Path, study: &str, results: &[StudyResult]) -> Result<()> {
    let mut w = csv_writer(path)?;
    let e = |err| csv_error(path, err);
    w.write_record([
        "study",
        "scenario",
        "parameter",
        "n_dofs",
        "min_eta",
        "blocks",
        "nonzeros",
        "discarded_eigenvalues",
        "diagonal_fallbacks",
        "iterations",
        "termination",
        "kappa",
        "kappa_preconditioned",
        "serial_deviation",
    ])
    .map_err(e)?;
    for r in results {
        w.write_record([
            study.to_string(),
            r.scenario.clone(),
            format!("{:e}", r.parameter),
            r.n_dofs.to_string(),
            format!("{:e}", r.min_eta),
            r.stats.blocks.to_string(),
            r.stats.nonzeros.to_string(),
            r.stats.discarded_eigenvalues.to_string(),
            r.stats.diagonal_fallbacks.to_string(),
            r.report.iterations.to_string(),
            format!("{:?}", r.report.reason).to_lowercase(),
            opt(r.spectral.map(|s| s.kappa)),
            opt(r.preconditioned.map(|s| s.kappa)),
            opt(r.serial_deviation),
        ])
        .map_err(e)?;
    }
    w.flush().map_err(|err| FcmError::io(path, err))
}

/// `scenario,rank,owned,l1,l2,checksum` for every partition-check scenario.
pub fn write_partition_csv(path: &Path, results: &[StudyResult]) -> Result<()> {
    let mut w = csv_writer(path)?;
    let e = |err| csv_error(path, err);
    w.write_record(["scenario", "rank", "owned", "l1", "l2", "checksum"]).map_err(e)?;
    for r in results {
        for p in &r.partition {
            w.write_record([
                r.scenario.clone(),
                p.rank.to_string(),
                p.owned.to_string(),
                p.l1.to_string(),
                p.l2.to_string(),
                format!("{:e}", p.checksum),
            ])
            .map_err(e)?;
        }
    }
    w.flush().map_err(|err| FcmError::io(path, err))
}

/// Leaf and function counts per refinement level.
pub fn write_mesh_summary(path: &Path, problem: &Problem) -> Result<()> {
    let leaves = problem.mesh.leaves_per_level();
    let mut active = vec![0usize; leaves.len()];
    for l in 0..problem.mesh.n_leaves() {
        if problem.mesh.is_leaf_active(l) {
            active[problem.mesh.leaf(l).level as usize] += 1;
        }
    }
    let functions = problem.dofs.functions_per_level();
    let nf = problem.dofs.n_fields;
    let mut w = csv_writer(path)?;
    let e = |err| csv_error(path, err);
    w.write_record(["level", "leaves", "active_leaves", "functions", "dofs"]).map_err(e)?;
    for lvl in 0..leaves.len().max(functions.len()) {
        let f = functions.get(lvl).copied().unwrap_or(0);
        w.write_record([
            lvl.to_string(),
            leaves.get(lvl).copied().unwrap_or(0).to_string(),
            active.get(lvl).copied().unwrap_or(0).to_string(),
            f.to_string(),
            (f * nf).to_string(),
        ])
        .map_err(e)?;
    }
    w.flush().map_err(|err| FcmError::io(path, err))
}

/// Symmetric coordinate Matrix Market file holding the lower triangle, 1-based.
pub fn write_matrix_market(path: &Path, a: &CsrMatrix) -> Result<()> {
    let mut w = create(path)?;
    let mut entries = Vec::new();
    for i in 0..a.n() {
        let (c, v) = a.row(i);
        for (&j, &x) in c.iter().zip(v) {
            if j <= i {
                entries.push((i, j, x));
            }
        }
    }
    let io = |e| FcmError::io(path, e);
    writeln!(w, "%%MatrixMarket matrix coordinate real symmetric").map_err(io)?;
    writeln!(w, "{} {} {}", a.n(), a.n(), entries.len()).map_err(io)?;
    for (i, j, x) in entries {
        writeln!(w, "{} {} {x:e}", i + 1, j + 1).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Dense column vector in Matrix Market array format.
pub fn write_vector_market(path: &Path, b: &[f64]) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| FcmError::io(path, e);
    writeln!(w, "%%MatrixMarket matrix array real general").map_err(io)?;
    writeln!(w, "{} 1", b.len()).map_err(io)?;
    for x in b {
        writeln!(w, "{x:e}").map_err(io)?;
    }
    w.flush().map_err(io)
}

fn data_lines(path: &Path) -> Result<(String, Vec<(usize, String)>)> {
    let f = fs::File::open(path).map_err(|e| FcmError::io(path, e))?;
    let mut header = None;
    let mut lines = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| FcmError::io(path, e))?;
        if i == 0 {
            header = Some(line.to_lowercase());
            continue;
        }
        let t = line.trim();
        if !t.is_empty() && !t.starts_with('%') {
            lines.push((i + 1, t.to_string()));
        }
    }
    let header = header.filter(|h| h.starts_with("%%matrixmarket matrix")).ok_or_else(|| {
        FcmError::Invalid(format!("{}: missing Matrix Market banner", path.display()))
    })?;
    Ok((header, lines))
}

fn bad(path: &Path, line: usize, what: &str) -> FcmError {
    FcmError::Invalid(format!("{}:{line}: {what}", path.display()))
}

fn fields<T: std::str::FromStr>(path: &Path, line: usize, text: &str, n: usize) -> Result<Vec<T>> {
    let v: Vec<T> = text
        .split_whitespace()
        .map(|t| t.parse::<T>().map_err(|_| bad(path, line, &format!("cannot parse '{t}'"))))
        .collect::<Result<_>>()?;
    if v.len() != n {
        return Err(bad(path, line, &format!("expected {n} fields")));
    }
    Ok(v)
}

/// Reads a square real coordinate matrix, general or symmetric.
pub fn read_matrix_market(path: &Path) -> Result<CsrMatrix> {
    let (header, lines) = data_lines(path)?;
    let words: Vec<&str> = header.split_whitespace().collect();
    if words.len() < 5 || words[2] != "coordinate" || words[3] != "real" {
        return Err(FcmError::Invalid(format!("{}: only real coordinate matrices are supported", path.display())));
    }
    let symmetric = match words[4] {
        "symmetric" => true,
        "general" => false,
        s => return Err(FcmError::Invalid(format!("{}: unsupported symmetry '{s}'", path.display()))),
    };
    let (first, rest) = lines.split_first().ok_or_else(|| bad(path, 2, "missing size line"))?;
    let size: Vec<usize> = fields(path, first.0, &first.1, 3)?;
    if size[0] != size[1] {
        return Err(bad(path, first.0, "matrix must be square"));
    }
    if rest.len() != size[2] {
        return Err(bad(path, first.0, &format!("declared {} entries, found {}", size[2], rest.len())));
    }
    let n = size[0];
    let mut triplets = Vec::with_capacity(2 * rest.len());
    for (line, text) in rest {
        let t: Vec<&str> = text.split_whitespace().collect();
        if t.len() != 3 {
            return Err(bad(path, *line, "expected 'row col value'"));
        }
        let i: usize = t[0].parse().map_err(|_| bad(path, *line, "bad row index"))?;
        let j: usize = t[1].parse().map_err(|_| bad(path, *line, "bad column index"))?;
        let x: f64 = t[2].parse().map_err(|_| bad(path, *line, "bad value"))?;
        if i == 0 || j == 0 || i > n || j > n {
            return Err(bad(path, *line, "index out of range"));
        }
        triplets.push((i - 1, j - 1, x));
        if symmetric && i != j {
            triplets.push((j - 1, i - 1, x));
        }
    }
    CsrMatrix::from_triplets(n, &triplets)
}

pub fn read_vector_market(path: &Path) -> Result<Vec<f64>> {
    let (header, lines) = data_lines(path)?;
    if !header.contains("array") {
        return Err(FcmError::Invalid(format!("{}: expected array format", path.display())));
    }
    let (first, rest) = lines.split_first().ok_or_else(|| bad(path, 2, "missing size line"))?;
    let size: Vec<usize> = fields(path, first.0, &first.1, 2)?;
    if size[1] != 1 || rest.len() != size[0] {
        return Err(bad(path, first.0, "expected a single column with the declared length"));
    }
    rest.iter().map(|(line, t)| t.parse::<f64>().map_err(|_| bad(path, *line, "bad value"))).collect()
}

/// One line per block: leaf id, then the sorted global indices.
pub fn write_blocks(path: &Path, set: &BlockSet) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| FcmError::io(path, e);
    for b in &set.blocks {
        write!(w, "{}", b.leaf).map_err(io)?;
        for i in &b.indices {
            write!(w, " {i}").map_err(io)?;
        }
        writeln!(w).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Reads a block sidecar for a system with `n` DOFs.
pub fn read_blocks(path: &Path, n: usize) -> Result<BlockSet> {
    let text = fs::read_to_string(path).map_err(|e| FcmError::io(path, e))?;
    let mut blocks = Vec::new();
    for (k, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let v: Vec<usize> = line
            .split_whitespace()
            .map(|t| t.parse::<usize>().map_err(|_| bad(path, k + 1, &format!("cannot parse '{t}'"))))
            .collect::<Result<_>>()?;
        blocks.push(Block { leaf: v[0], indices: v[1..].to_vec(), kind: BlockKind::Full });
    }
    BlockSet::new(n, blocks)
}

/// Solution value and gradient of every field component at `x` on leaf `l`.
fn evaluate(problem: &Problem, x: &[f64], l: usize, at: &[f64; 3]) -> (Vec<f64>, Vec<[f64; 3]>) {
    let nf = problem.dofs.n_fields;
    let support = &problem.supports[l];
    let shapes = eval_support(&problem.mesh, &problem.dofs, l, support, at);
    let mut u = vec![0.0; nf];
    let mut g = vec![[0.0; 3]; nf];
    for (&s, (v, d)) in support.functions.iter().zip(shapes) {
        for c in 0..nf {
            let coef = x[problem.dofs.dof(s, c)];
            u[c] += coef * v;
            for a in 0..3 {
                g[c][a] += coef * d[a];
            }
        }
    }
    (u, g)
}

/// Von Mises stress from a displacement gradient; plane strain in 2D.
pub fn von_mises(grad: &[[f64; 3]], lambda: f64, mu: f64) -> f64 {
    let mut eps = [[0.0; 3]; 3];
    for (i, gi) in grad.iter().enumerate() {
        for j in 0..grad.len() {
            eps[i][j] += 0.5 * gi[j];
            eps[j][i] += 0.5 * gi[j];
        }
    }
    let tr = eps[0][0] + eps[1][1] + eps[2][2];
    let mut sigma = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            sigma[i][j] = 2.0 * mu * eps[i][j] + if i == j { lambda * tr } else { 0.0 };
        }
    }
    let mean = (sigma[0][0] + sigma[1][1] + sigma[2][2]) / 3.0;
    let mut s2 = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            let s = sigma[i][j] - if i == j { mean } else { 0.0 };
            s2 += s * s;
        }
    }
    (1.5 * s2).sqrt()
}

/// Legacy-VTK unstructured grid of active leaves with per-point solution magnitude and
/// per-cell volume fraction and von Mises stress (gradient magnitude for Poisson).
pub fn write_vtk(path: &Path, problem: &Problem, x: &[f64]) -> Result<()> {
    let mesh = &problem.mesh;
    let dim = mesh.dim();
    let (lambda, mu) = problem.model.lame(dim);
    let elastic = problem.dofs.n_fields > 1 || mu > 0.0;
    let active: Vec<usize> = (0..mesh.n_leaves()).filter(|&l| mesh.is_leaf_active(l)).collect();
    let corners = 1usize << dim;
    let mut points = Vec::new();
    let mut magnitude = Vec::new();
    let mut stress = Vec::new();
    for &l in &active {
        let b = mesh.leaf(l).bounds;
        for c in b.corners() {
            let (u, _) = evaluate(problem, x, l, &c);
            magnitude.push(u.iter().map(|v| v * v).sum::<f64>().sqrt());
            points.push(c);
        }
        let (_, g) = evaluate(problem, x, l, &b.center());
        stress.push(if elastic {
            von_mises(&g, lambda, mu)
        } else {
            g[0].iter().map(|v| v * v).sum::<f64>().sqrt()
        });
    }
    let cell_type = match dim {
        1 => 3,
        2 => 8,
        _ => 11,
    };
    let mut w = create(path)?;
    let io = |e| FcmError::io(path, e);
    writeln!(w, "# vtk DataFile Version 3.0\nfinite cell solution\nASCII\nDATASET UNSTRUCTURED_GRID").map_err(io)?;
    writeln!(w, "POINTS {} double", points.len()).map_err(io)?;
    for p in &points {
        writeln!(w, "{:e} {:e} {:e}", p[0], p[1], p[2]).map_err(io)?;
    }
    writeln!(w, "CELLS {} {}", active.len(), active.len() * (corners + 1)).map_err(io)?;
    for k in 0..active.len() {
        let ids: Vec<String> = (0..corners).map(|c| (k * corners + c).to_string()).collect();
        writeln!(w, "{corners} {}", ids.join(" ")).map_err(io)?;
    }
    writeln!(w, "CELL_TYPES {}", active.len()).map_err(io)?;
    for _ in &active {
        writeln!(w, "{cell_type}").map_err(io)?;
    }
    writeln!(w, "POINT_DATA {}\nSCALARS solution_magnitude double 1\nLOOKUP_TABLE default", points.len()).map_err(io)?;
    for v in &magnitude {
        writeln!(w, "{v:e}").map_err(io)?;
    }
    writeln!(w, "CELL_DATA {}\nSCALARS eta double 1\nLOOKUP_TABLE default", active.len()).map_err(io)?;
    for &l in &active {
        writeln!(w, "{:e}", problem.eta()[l]).map_err(io)?;
    }
    let name = if elastic { "von_mises" } else { "gradient_magnitude" };
    writeln!(w, "SCALARS {name} double 1\nLOOKUP_TABLE default").map_err(io)?;
    for v in &stress {
        writeln!(w, "{v:e}").map_err(io)?;
    }
    w.flush().map_err(io)
}
