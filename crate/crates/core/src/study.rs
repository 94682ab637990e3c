//! Named studies: sequences of solves driven by one configuration.

use std::path::Path;

use crate::config::RunConfig;
use crate::error::{FcmError, Result};
use crate::geometry::Shape;
use crate::krylov::{pcg, preconditioned_spectrum, reference_solve, spectrum, SolveReport, SpectralReport, MAX_DENSE};
use crate::partition::{make_partition, simulate, RankReport};
use crate::precond::BuildStats;
use crate::problem::{PrecondSettings, Problem};

/// Largest system for which spectra are computed.
pub const MAX_SPECTRUM: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StudyKind {
    SingleSolve,
    EtaSweep,
    ThresholdSweep,
    RefinementSweep,
    PartitionCheck,
    ConditioningSweep,
}

impl StudyKind {
    pub const ALL: [StudyKind; 6] = [
        StudyKind::SingleSolve,
        StudyKind::EtaSweep,
        StudyKind::ThresholdSweep,
        StudyKind::RefinementSweep,
        StudyKind::PartitionCheck,
        StudyKind::ConditioningSweep,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StudyKind::SingleSolve => "single_solve",
            StudyKind::EtaSweep => "eta_sweep",
            StudyKind::ThresholdSweep => "threshold_sweep",
            StudyKind::RefinementSweep => "refinement_sweep",
            StudyKind::PartitionCheck => "partition_check",
            StudyKind::ConditioningSweep => "conditioning_sweep",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }
}

#[derive(Debug, Clone)]
pub struct StudyResult {
    pub scenario: String,
    /// Swept value: η, η̄, refinement depth or rank count.
    pub parameter: f64,
    pub report: SolveReport,
    pub stats: BuildStats,
    pub n_dofs: usize,
    pub min_eta: f64,
    pub spectral: Option<SpectralReport>,
    pub preconditioned: Option<SpectralReport>,
    pub partition: Vec<RankReport>,
    /// Largest entry of `|S_stitched - S_serial|` in partition checks.
    pub serial_deviation: Option<f64>,
}

pub struct StudyOutput {
    pub study: StudyKind,
    pub results: Vec<StudyResult>,
    /// Problem and solution of a single solve, kept for field output.
    pub solved: Option<(Problem, Vec<f64>)>,
}

/// Builds the configured problem for a given shape and refinement depth.
pub fn build_problem(config: &RunConfig, shape: Shape, depth: u32) -> Result<Problem> {
    let mesh = config.mesh_with_depth(&shape, depth)?;
    let domain = config.domain(shape)?;
    Problem::build(mesh, domain, config.model()?, config.discretization.p, config.assembly_settings())
}

fn solve(config: &RunConfig, problem: &Problem, settings: &PrecondSettings, scenario: String, parameter: f64, with_spectrum: bool) -> Result<(StudyResult, Vec<f64>)> {
    let pre = problem.preconditioner(settings)?;
    let n = problem.n_dofs();
    let x_ref = if config.solver.reference && n <= MAX_DENSE { Some(reference_solve(problem.a(), problem.b())?) } else { None };
    let (x, report) = pcg(problem.a(), problem.b(), &pre, config.solver.tol, config.solver.max_iter, x_ref.as_deref())?;
    let (spectral, preconditioned) = if with_spectrum && n <= MAX_SPECTRUM {
        let a = problem.a().to_dense();
        (Some(spectrum(&a)?), Some(preconditioned_spectrum(&a, &pre.s.to_dense())?))
    } else {
        (None, None)
    };
    let result = StudyResult {
        scenario,
        parameter,
        report,
        stats: pre.stats,
        n_dofs: n,
        min_eta: problem.min_eta(),
        spectral,
        preconditioned,
        partition: Vec::new(),
        serial_deviation: None,
    };
    Ok((result, x))
}

/// Configured shape intersected with `x_axis < lower + (cell + η) h`.
pub fn cut_shape(config: &RunConfig, base: &Shape, eta: f64) -> Shape {
    let a = config.study.cut_axis;
    let h = (config.mesh.upper[a] - config.mesh.lower[a]) / config.mesh.counts[a] as f64;
    let cut = Shape::below(a, config.mesh.lower[a] + (config.study.cut_cell as f64 + eta) * h);
    match base {
        Shape::All => cut,
        other => Shape::Intersection(vec![other.clone(), cut]),
    }
}

/// Runs `kind`; voxel files are resolved relative to `base_dir`.
pub fn run_study(config: &RunConfig, base_dir: &Path, kind: StudyKind) -> Result<StudyOutput> {
    let shape = config.shape(base_dir)?;
    let depth = config.mesh.depth;
    let pc = config.preconditioner;
    let mut results = Vec::new();
    let mut solved = None;
    match kind {
        StudyKind::SingleSolve => {
            let label = "single".to_string();
            let problem = build_problem(config, shape, depth).map_err(|e| e.in_scenario(&label))?;
            let (r, x) = solve(config, &problem, &pc, label.clone(), 0.0, config.study.spectrum).map_err(|e| e.in_scenario(&label))?;
            results.push(r);
            solved = Some((problem, x));
        }
        StudyKind::EtaSweep | StudyKind::ConditioningSweep => {
            let with_spectrum = kind == StudyKind::ConditioningSweep || config.study.spectrum;
            for &eta in &config.study.eta_values {
                let label = format!("eta={eta:e}");
                let run = || -> Result<StudyResult> {
                    let problem = build_problem(config, cut_shape(config, &shape, eta), depth)?;
                    Ok(solve(config, &problem, &pc, label.clone(), eta, with_spectrum)?.0)
                };
                results.push(run().map_err(|e| e.in_scenario(&label))?);
            }
        }
        StudyKind::ThresholdSweep => {
            let problem = build_problem(config, shape, depth)?;
            for &eta_bar in &config.study.eta_bars {
                let label = format!("eta_bar={eta_bar}");
                let settings = PrecondSettings { eta_bar, ..pc };
                let (r, _) = solve(config, &problem, &settings, label.clone(), eta_bar, config.study.spectrum)
                    .map_err(|e| e.in_scenario(&label))?;
                results.push(r);
            }
        }
        StudyKind::RefinementSweep => {
            for &k in &config.study.depths {
                let problem = build_problem(config, shape.clone(), k).map_err(|e| e.in_scenario(format!("k={k}")))?;
                for &pk in &config.study.kinds {
                    let label = format!("k={k}/{}", pk.name());
                    let settings = pc.with_kind(pk);
                    let (r, _) = solve(config, &problem, &settings, label.clone(), k as f64, config.study.spectrum)
                        .map_err(|e| e.in_scenario(&label))?;
                    results.push(r);
                }
            }
        }
        StudyKind::PartitionCheck => {
            let problem = build_problem(config, shape, depth)?;
            let serial = problem.preconditioner(&pc)?;
            let blocks = problem.filtered_blocks(&pc)?;
            let mode = pc.mode()?;
            for &strategy in &config.partition.strategies {
                for &ranks in &config.partition.ranks {
                    let label = format!("{}/ranks={ranks}", strategy.name());
                    let run = || -> Result<StudyResult> {
                        let part = make_partition(&problem.mesh, &problem.dofs, &problem.supports, ranks, strategy)?;
                        let (a, s, reports) = simulate(&problem, &part, &blocks, mode)?;
                        let mut dev = 0.0f64;
                        for i in 0..s.n() {
                            let (c, v) = s.row(i);
                            for (&j, &x) in c.iter().zip(v) {
                                dev = dev.max((x - serial.s.get(i, j)).abs());
                            }
                        }
                        let (_, report) = pcg(&a, problem.b(), &s, config.solver.tol, config.solver.max_iter, None)?;
                        Ok(StudyResult {
                            scenario: label.clone(),
                            parameter: ranks as f64,
                            report,
                            stats: BuildStats { nonzeros: s.nnz(), ..serial.stats.clone() },
                            n_dofs: problem.n_dofs(),
                            min_eta: problem.min_eta(),
                            spectral: None,
                            preconditioned: None,
                            partition: reports,
                            serial_deviation: Some(dev),
                        })
                    };
                    results.push(run().map_err(|e| e.in_scenario(&label))?);
                }
            }
        }
    }
    let mut labels: Vec<&str> = results.iter().map(|r| r.scenario.as_str()).collect();
    labels.sort_unstable();
    if labels.windows(2).any(|w| w[0] == w[1]) {
        return Err(FcmError::config(format!("{}: duplicate scenario labels; sweep values must be distinct", kind.name())));
    }
    Ok(StudyOutput { study: kind, results, solved })
}

/// Least-squares slope of `log κ` against `log η` over conditioning results.
pub fn conditioning_slope(results: &[StudyResult]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = results
        .iter()
        .filter_map(|r| r.spectral.map(|s| (r.parameter.ln(), s.kappa.ln())))
        .filter(|(x, y)| x.is_finite() && y.is_finite())
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}
