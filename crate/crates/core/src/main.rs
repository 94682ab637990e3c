use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fcm_core::config::{parse_config, RunConfig};
use fcm_core::error::{FcmError, Result};
use fcm_core::geometry::VoxelGrid;
use fcm_core::output::{
    write_blocks, write_convergence_csv, write_matrix_market, write_mesh_summary, write_partition_csv, write_summary_csv,
    write_vector_market, write_vtk,
};
use fcm_core::study::{build_problem, conditioning_slope, run_study, StudyKind};
use fcm_core::verify::run_checks;

/// Worker count for parallel assembly and block inversion.
const WORKERS_ENV: &str = "FCM_WORKERS";

#[derive(Parser)]
#[command(name = "fcm", version, about = "Immersed finite cell solver with block Additive-Schwarz preconditioning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a named study and write CSV, Matrix Market and VTK artifacts.
    Run {
        config: PathBuf,
        #[arg(long)]
        study: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Assemble the configured system and export A, b, S and the block sidecar.
    ExportMatrix {
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run invariant checks on small built-in cases.
    Verify,
    /// Write a synthetic porous voxel raster.
    MakeVoxels {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, num_args = 3, default_values_t = [32, 32, 32])]
        dims: Vec<usize>,
        #[arg(long, num_args = 3, default_values_t = [4, 4, 4])]
        grouping: Vec<usize>,
        #[arg(long, default_value_t = 20)]
        pores: usize,
        #[arg(long, default_value_t = 0.1)]
        max_radius: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

fn load(path: &Path) -> Result<(RunConfig, PathBuf)> {
    let text = std::fs::read_to_string(path).map_err(|e| FcmError::io(path, e))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((parse_config(&text)?, base))
}

fn make_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| FcmError::io(dir, e))
}

fn run(config_path: &Path, study: &str, out: &Path) -> Result<()> {
    let kind = StudyKind::parse(study).ok_or_else(|| {
        let names: Vec<&str> = StudyKind::ALL.iter().map(|k| k.name()).collect();
        FcmError::config(format!("unknown study '{study}', expected one of {}", names.join(", ")))
    })?;
    let (config, base) = load(config_path)?;
    make_dir(out)?;
    let output = run_study(&config, &base, kind)?;
    let name = kind.name();
    write_convergence_csv(&out.join("convergence.csv"), name, &output.results)?;
    write_summary_csv(&out.join("summary.csv"), name, &output.results)?;
    if kind == StudyKind::PartitionCheck {
        write_partition_csv(&out.join("partition.csv"), &output.results)?;
    }
    for r in &output.results {
        println!(
            "{}: {} dofs, {} iterations ({:?}), final residual {:e}",
            r.scenario,
            r.n_dofs,
            r.report.iterations,
            r.report.reason,
            r.report.final_residual().unwrap_or(0.0)
        );
    }
    if kind == StudyKind::ConditioningSweep {
        if let Some(s) = conditioning_slope(&output.results) {
            println!("log-log slope of condition number against eta: {s:.3}");
        }
    }
    if let Some((problem, x)) = &output.solved {
        write_mesh_summary(&out.join("mesh.csv"), problem)?;
        if config.output.vtk {
            write_vtk(&out.join("solution.vtk"), problem, x)?;
        }
        if config.output.matrices {
            write_matrix_market(&out.join("A.mtx"), problem.a())?;
            write_vector_market(&out.join("b.mtx"), problem.b())?;
        }
    }
    Ok(())
}

fn export(config_path: &Path, out: &Path) -> Result<()> {
    let (config, base) = load(config_path)?;
    make_dir(out)?;
    let problem = build_problem(&config, config.shape(&base)?, config.mesh.depth)?;
    let blocks = problem.filtered_blocks(&config.preconditioner)?;
    let pre = problem.preconditioner(&config.preconditioner)?;
    write_matrix_market(&out.join("A.mtx"), problem.a())?;
    write_vector_market(&out.join("b.mtx"), problem.b())?;
    write_matrix_market(&out.join("S.mtx"), &pre.s)?;
    write_blocks(&out.join("blocks.txt"), &blocks)?;
    write_mesh_summary(&out.join("mesh.csv"), &problem)?;
    println!("{} dofs, {} nonzeros in A, {} blocks, {} nonzeros in S", problem.n_dofs(), problem.a().nnz(), pre.stats.blocks, pre.stats.nonzeros);
    Ok(())
}

fn verify() -> Result<bool> {
    let checks = run_checks()?;
    for c in &checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    Ok(checks.iter().all(|c| c.passed))
}

fn init_workers() -> Result<()> {
    if let Ok(v) = std::env::var(WORKERS_ENV) {
        let n: usize = v
            .parse()
            .ok()
            .filter(|&n| n >= 1)
            .ok_or_else(|| FcmError::config(format!("{WORKERS_ENV} must be a positive integer, got '{v}'")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| FcmError::Invalid(e.to_string()))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = init_workers().and_then(|_| match cli.command {
        Command::Run { config, study, out } => run(&config, &study, &out).map(|_| true),
        Command::ExportMatrix { config, out } => export(&config, &out).map(|_| true),
        Command::Verify => verify(),
        Command::MakeVoxels { out, dims, grouping, pores, max_radius, seed } => {
            let grid = VoxelGrid::synthetic_pores([dims[0], dims[1], dims[2]], [grouping[0], grouping[1], grouping[2]], pores, max_radius, seed);
            grid.write(&out).map(|_| true)
        }
    });
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
