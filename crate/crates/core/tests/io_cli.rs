use std::path::Path;
use std::process::Command;

use fcm_core::config::parse_config;
use fcm_core::output::{
    read_blocks, read_matrix_market, read_vector_market, write_blocks, write_convergence_csv, write_matrix_market,
    write_summary_csv, write_vector_market,
};
use fcm_core::problem::PrecondSettings;
use fcm_core::study::{build_problem, run_study, StudyKind};
use proptest::prelude::*;

const SMALL: &str = "\
[problem]
kind = poisson
body_load = 1

[geometry]
shape = not(ball(0.5, 0.5, 0.23))

[mesh]
lower = 0 0
upper = 1 1
counts = 4 4
refine = boundary
depth = 1

[discretization]
p = 2
tree_depth = 5

[solver]
reference = true

[dirichlet]
face = y0
beta = 1e4

[study]
eta_values = 0.5 0.1 0.01
eta_bars = 0 0.5 1
";

fn fcm() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fcm"))
}

fn write_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("small.cfg");
    std::fs::write(&path, SMALL).unwrap();
    path
}

#[test]
fn matrix_market_round_trips_system() {
    let config = parse_config(SMALL).unwrap();
    let problem = build_problem(&config, config.shape(Path::new(".")).unwrap(), 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (ap, bp, sp) = (dir.path().join("A.mtx"), dir.path().join("b.mtx"), dir.path().join("blocks.txt"));
    write_matrix_market(&ap, problem.a()).unwrap();
    write_vector_market(&bp, problem.b()).unwrap();
    let blocks = problem.filtered_blocks(&PrecondSettings::default()).unwrap();
    write_blocks(&sp, &blocks).unwrap();
    let back = read_matrix_market(&ap).unwrap();
    let a = problem.a();
    assert_eq!(back.n(), a.n());
    for i in 0..a.n() {
        let (cols, vals) = a.row(i);
        for (&j, &v) in cols.iter().zip(vals) {
            assert_eq!(back.get(i, j), v, "entry ({i},{j})");
        }
        let (cols, vals) = back.row(i);
        for (&j, &v) in cols.iter().zip(vals) {
            assert_eq!(a.get(i, j), v, "entry ({i},{j})");
        }
    }
    assert_eq!(read_vector_market(&bp).unwrap(), problem.b());
    let back_blocks = read_blocks(&sp, problem.n_dofs()).unwrap();
    assert_eq!(back_blocks.blocks.len(), blocks.blocks.len());
    for (x, y) in back_blocks.blocks.iter().zip(&blocks.blocks) {
        assert_eq!((x.leaf, &x.indices), (y.leaf, &y.indices));
    }
    let header = std::fs::read_to_string(&ap).unwrap();
    assert!(header.starts_with("%%MatrixMarket matrix coordinate real symmetric"));
}

#[test]
fn csv_writers_emit_header_and_one_row_per_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.csv");
    write_summary_csv(&empty, "eta_sweep", &[]).unwrap();
    let text = std::fs::read_to_string(&empty).unwrap();
    assert_eq!(text.lines().count(), 1);
    assert!(text.starts_with("study,scenario,parameter,n_dofs"));

    let config = parse_config(SMALL).unwrap();
    let out = run_study(&config, Path::new("."), StudyKind::EtaSweep).unwrap();
    let summary = dir.path().join("summary.csv");
    write_summary_csv(&summary, "eta_sweep", &out.results).unwrap();
    let mut reader = csv::Reader::from_path(&summary).unwrap();
    let rows: Vec<csv::StringRecord> = reader.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 3);
    for row in &rows {
        assert_eq!(&row[10], "tolerance");
    }

    let conv = dir.path().join("convergence.csv");
    write_convergence_csv(&conv, "eta_sweep", &out.results).unwrap();
    let total: usize = out.results.iter().map(|r| r.report.residuals.len()).sum();
    let mut reader = csv::Reader::from_path(&conv).unwrap();
    assert_eq!(reader.headers().unwrap(), vec!["study", "scenario", "iter", "residual", "energy_error"]);
    assert_eq!(reader.records().count(), total);
}

#[test]
fn threshold_sweep_sparsity_grows_with_eta_bar() {
    let config = parse_config(SMALL).unwrap();
    let out = run_study(&config, Path::new("."), StudyKind::ThresholdSweep).unwrap();
    let nnz: Vec<usize> = out.results.iter().map(|r| r.stats.nonzeros).collect();
    assert_eq!(nnz.len(), 3);
    assert!(nnz.windows(2).all(|w| w[0] <= w[1]), "{nnz:?}");
    assert_eq!(out.results[0].stats.blocks, 0);
}

#[test]
fn config_errors_name_the_line() {
    let text = SMALL.replace("p = 2", "p = 0");
    let msg = parse_config(&text).unwrap_err().to_string();
    assert!(msg.contains("line 16"), "{msg}");
    assert!(parse_config(&SMALL.replace("[study]", "[stduy]")).is_err());
}

fn config_text(p: usize, eta_bar: f64, epsilon: f64, alpha: f64, tol: f64, counts: (usize, usize), kind: &str, ranks: &str) -> String {
    format!(
        "[problem]\nkind = elasticity\nyoungs_modulus = 70\npoisson_ratio = 0.34\nbody_load = 0 -1\n\
         [geometry]\nshape = and(all, not(ball(0.5, 0.5, 0.2)))\nalpha_fict = {alpha}\n\
         [mesh]\nlower = 0 0\nupper = 2 1\ncounts = {} {}\nrefine = boundary\ndepth = 2\n\
         [discretization]\np = {p}\n\
         [preconditioner]\nkind = {kind}\neta_bar = {eta_bar}\nepsilon = {epsilon}\n\
         [solver]\ntol = {tol}\n\
         [partition]\nranks = {ranks}\nstrategy = slab sfc\n\
         [dirichlet]\nface = x0\nbeta = 1e6\ncomponents = 0 1\n\
         [neumann]\nsphere_center = 0.5 0.5\nsphere_radius = 0.2\npressure = 1.5\n",
        counts.0, counts.1
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn config_round_trips(
        p in 1usize..=8,
        eta_bar in 0.0f64..=1.0,
        epsilon in 1e-16f64..1e-2,
        alpha in 0.0f64..0.5,
        tol in 1e-14f64..1e-4,
        counts in (1usize..20, 1usize..20),
        kind in prop::sample::select(vec!["none", "jacobi", "full_blocks", "truncated_blocks"]),
        ranks in prop::sample::select(vec!["1", "1 2 4", "3 8"]),
    ) {
        let c = parse_config(&config_text(p, eta_bar, epsilon, alpha, tol, counts, kind, ranks)).unwrap();
        prop_assert_eq!(c.discretization.p, p);
        prop_assert_eq!(c.preconditioner.eta_bar, eta_bar);
        prop_assert_eq!(c.preconditioner.epsilon, epsilon);
        let text = c.to_text();
        let again = parse_config(&text).unwrap();
        prop_assert_eq!(&again, &c);
        prop_assert_eq!(again.to_text(), text);
    }
}

#[test]
fn cli_verify_passes() {
    let out = fcm().arg("verify").output().unwrap();
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success(), "{stdout}");
    assert!(stdout.lines().count() >= 5);
    assert!(stdout.lines().all(|l| l.starts_with("PASS ")));
}

#[test]
fn cli_run_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let mut outputs = Vec::new();
    for (name, workers) in [("a", "1"), ("b", "3")] {
        let out_dir = dir.path().join(name);
        let status = fcm()
            .env("FCM_WORKERS", workers)
            .args(["run", cfg.to_str().unwrap(), "--study", "eta_sweep", "--out", out_dir.to_str().unwrap()])
            .status()
            .unwrap();
        assert!(status.success());
        outputs.push((
            std::fs::read(out_dir.join("convergence.csv")).unwrap(),
            std::fs::read(out_dir.join("summary.csv")).unwrap(),
        ));
    }
    assert!(outputs[0] == outputs[1]);
}

#[test]
fn cli_single_solve_writes_fields() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out_dir = dir.path().join("single");
    let text = SMALL.replace("[study]", "[output]\nvtk = true\nmatrices = true\n\n[study]");
    std::fs::write(&cfg, text).unwrap();
    let out = fcm()
        .args(["run", cfg.to_str().unwrap(), "--study", "single_solve", "--out", out_dir.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["convergence.csv", "summary.csv", "mesh.csv", "solution.vtk", "A.mtx", "b.mtx"] {
        assert!(out_dir.join(f).exists(), "missing {f}");
    }
    let vtk = std::fs::read_to_string(out_dir.join("solution.vtk")).unwrap();
    assert!(vtk.starts_with("# vtk DataFile Version"));
    assert!(vtk.contains("POINT_DATA") && vtk.contains("CELL_DATA"));
}

#[test]
fn cli_export_matrix_writes_system() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out_dir = dir.path().join("export");
    let status = fcm().args(["export-matrix", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]).status().unwrap();
    assert!(status.success());
    let a = read_matrix_market(&out_dir.join("A.mtx")).unwrap();
    let s = read_matrix_market(&out_dir.join("S.mtx")).unwrap();
    assert_eq!(a.n(), s.n());
    assert_eq!(read_vector_market(&out_dir.join("b.mtx")).unwrap().len(), a.n());
    assert!(read_blocks(&out_dir.join("blocks.txt"), a.n()).is_ok());
}

#[test]
fn cli_rejects_bad_input() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out = fcm().args(["run", cfg.to_str().unwrap(), "--study", "nope", "--out", "unused"]).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown study"));
    let bad = dir.path().join("bad.cfg");
    std::fs::write(&bad, SMALL.replace("counts = 4 4", "counts = 4 x")).unwrap();
    let out = fcm().args(["export-matrix", bad.to_str().unwrap(), "--out", "unused"]).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 11"));
    let out = fcm().env("FCM_WORKERS", "0").arg("verify").output().unwrap();
    assert!(!out.status.success());
}

#[test]
fn cli_make_voxels_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let mut files = Vec::new();
    for name in ["v1.txt", "v2.txt"] {
        let path = dir.path().join(name);
        let status = fcm()
            .args(["make-voxels", "--out", path.to_str().unwrap(), "--dims", "8", "8", "8", "--grouping", "2", "2", "2", "--pores", "3", "--seed", "7"])
            .status()
            .unwrap();
        assert!(status.success());
        files.push(std::fs::read(&path).unwrap());
    }
    assert_eq!(files[0], files[1]);
}
