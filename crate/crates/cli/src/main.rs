//! Command line driver for the nilgeo engine.
//!
//! Exit codes: 0 success (and all asserted signatures passed), 1 validation
//! error (malformed input, with a pointer to the failing invariant), 2
//! solver infeasibility within the given budget.

use clap::{Args, Parser, Subcommand};
use nilgeo_core::algebra::{load_bundled, load_structure_path, SubRiemannianStructure};
use nilgeo_core::controls::{
    control_from_json, endpoint_product, endpoint_step2, fourier_to_sampled, sampled_to_json,
    ControlJson, ControlRepr, SampledControl,
};
use nilgeo_core::experiments::{run_experiment, VolumeConfig};
use nilgeo_core::metrics::{distance_bracket, distance_lower};
use nilgeo_core::perturbation::{build_perturbation, verify_perturbation};
use nilgeo_core::{NilgeoError, SolverBudget};
use serde_json::{json, Value};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "nilgeo", version, about = "Numerics for left-invariant metrics on nilpotent groups")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonOpts {
    /// Algebra spec: a JSON file path or a bundled name.
    #[arg(long)]
    algebra: String,
    /// Root seed for all derived randomness.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Sampling grid for controls and witnesses.
    #[arg(long)]
    grid: Option<usize>,
    /// Trig modes for the distance optimizer.
    #[arg(long)]
    modes: Option<usize>,
    /// Multistart count for the distance optimizer.
    #[arg(long)]
    starts: Option<usize>,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Checks an algebra spec: bracket antisymmetry, Jacobi, grading, metric.
    ValidateAlgebra {
        /// JSON file path or bundled name.
        algebra: String,
    },
    /// Evaluates the endpoint map of a control.
    Endpoint {
        #[command(flatten)]
        common: CommonOpts,
        /// Control JSON file ({"grid": ..., "values": ...} or {"fourier": ...}).
        #[arg(long)]
        control: PathBuf,
    },
    /// Distance bracket from the identity to a target point.
    Distance {
        #[command(flatten)]
        common: CommonOpts,
        /// Comma-separated target coordinates.
        #[arg(long)]
        target: String,
        /// Query the canonical asymptotic structure instead.
        #[arg(long, default_value_t = false)]
        asymptotic: bool,
    },
    /// Builds and verifies a vertical perturbation certificate.
    Perturb {
        #[command(flatten)]
        common: CommonOpts,
        /// Control JSON file for the base control.
        #[arg(long)]
        control: PathBuf,
        /// Comma-separated vertical displacement in derived coordinates.
        #[arg(long)]
        zeta: String,
    },
    /// Runs a named experiment and writes its report.
    Experiment {
        /// One of: gap_scan, ballbox_check, heisenberg_volume,
        /// mc_ball_volume, finsler_linf_volume, engel_gap,
        /// rough_isometry_scan.
        name: String,
        #[command(flatten)]
        common: CommonOpts,
        /// JSON config file for the experiment (defaults when omitted).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Monte Carlo sample count override.
        #[arg(long)]
        samples: Option<usize>,
        /// Also write the rows as CSV here.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Riemannian Heisenberg ball volumes by exact quadrature.
    Volume {
        #[command(flatten)]
        common: CommonOpts,
        /// Comma-separated radii (defaults when omitted).
        #[arg(long)]
        r_grid: Option<String>,
    },
}

fn load_algebra(name: &str) -> Result<(String, SubRiemannianStructure), NilgeoError> {
    let path = Path::new(name);
    if path.exists() {
        let label = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| name.to_string());
        Ok((label, load_structure_path(path)?))
    } else {
        Ok((name.to_string(), load_bundled(name)?))
    }
}

fn parse_vector(text: &str) -> Result<nilgeo_core::GroupPoint, NilgeoError> {
    let vals: Result<Vec<f64>, _> = text.split(',').map(|t| t.trim().parse::<f64>()).collect();
    vals.map(nilgeo_core::GroupPoint::from_vec)
        .map_err(|e| NilgeoError::InvalidSpec(format!("bad coordinate list {text:?}: {e}")))
}

fn budget_from(common: &CommonOpts) -> SolverBudget {
    let mut b = SolverBudget::default();
    if let Some(grid) = common.grid {
        b.grid = grid;
    }
    if let Some(modes) = common.modes {
        b.modes = modes;
        b.refine_modes = b.refine_modes.max(modes);
    }
    if let Some(starts) = common.starts {
        b.starts = starts;
    }
    b
}

fn load_control(
    s: &SubRiemannianStructure,
    path: &Path,
    grid: usize,
) -> Result<SampledControl, NilgeoError> {
    let text = std::fs::read_to_string(path)?;
    let j: ControlJson = serde_json::from_str(&text)?;
    match control_from_json(&j)? {
        ControlRepr::Sampled(u) => Ok(u),
        ControlRepr::Fourier(v) => fourier_to_sampled(&v, s.k(), grid),
    }
}

fn emit(report: &Value, out: Option<&PathBuf>) -> Result<(), NilgeoError> {
    let text = serde_json::to_string_pretty(report)?;
    match out {
        Some(p) => std::fs::write(p, text + "\n")?,
        None => println!("{text}"),
    }
    Ok(())
}

fn run() -> Result<bool, NilgeoError> {
    if let Ok(threads) = std::env::var("NILGEO_THREADS") {
        if let Ok(n) = threads.parse::<usize>() {
            // Ignore failure: the global pool may already be initialized.
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build_global();
        }
    }
    let cli = Cli::parse();
    match cli.command {
        Command::ValidateAlgebra { algebra } => {
            let (label, s) = load_algebra(&algebra)?;
            let report = json!({
                "version": nilgeo_core::VERSION,
                "algebra": label,
                "algebra_hash": format!("{:016x}", s.algebra.hash()),
                "dim": s.algebra.dim,
                "step": s.algebra.step,
                "horizontal_rank": s.k(),
                "homogeneous_dimension": s.q_hom,
                "valid": true,
            });
            emit(&report, None)?;
            Ok(true)
        }
        Command::Endpoint { common, control } => {
            let (label, s) = load_algebra(&common.algebra)?;
            let grid = common.grid.unwrap_or(2049);
            let u = load_control(&s, &control, grid)?;
            let endpoint = if s.algebra.step == 2 {
                endpoint_step2(&s, &u)?
            } else {
                endpoint_product(&s, &u)
            };
            let report = json!({
                "version": nilgeo_core::VERSION,
                "algebra": label,
                "algebra_hash": format!("{:016x}", s.algebra.hash()),
                "config": { "grid": u.n(), "seed": common.seed },
                "endpoint": endpoint.iter().cloned().collect::<Vec<f64>>(),
                "energy": nilgeo_core::controls::energy(&s, &u),
            });
            emit(&report, common.out.as_ref())?;
            Ok(true)
        }
        Command::Distance {
            common,
            target,
            asymptotic,
        } => {
            let (label, s) = load_algebra(&common.algebra)?;
            let target = parse_vector(&target)?;
            let budget = budget_from(&common);
            let est = if asymptotic {
                nilgeo_core::metrics::asymptotic_distance(&s, &target, &budget, common.seed)?
            } else {
                distance_bracket(&s, &target, &budget, common.seed)?
            };
            let report = json!({
                "version": nilgeo_core::VERSION,
                "algebra": label,
                "algebra_hash": format!("{:016x}", s.algebra.hash()),
                "config": { "budget": budget, "seed": common.seed, "asymptotic": asymptotic },
                "abelianized_lower": distance_lower(&s, &target)?,
                "estimate": est,
            });
            emit(&report, common.out.as_ref())?;
            Ok(true)
        }
        Command::Perturb {
            common,
            control,
            zeta,
        } => {
            let (label, s) = load_algebra(&common.algebra)?;
            let grid = common.grid.unwrap_or(2049);
            let u = load_control(&s, &control, grid)?;
            let zeta = parse_vector(&zeta)?;
            let result = build_perturbation(&s, &u, &zeta)?;
            let check = verify_perturbation(&s, &u, &result, &zeta)?;
            let report = json!({
                "version": nilgeo_core::VERSION,
                "algebra": label,
                "algebra_hash": format!("{:016x}", s.algebra.hash()),
                "config": { "grid": grid, "seed": common.seed },
                "certificate": check.certificate,
                "endpoint_ok": check.endpoint_ok,
                "orthogonality_ok": check.orthogonality_ok,
                "energy_ok": check.energy_ok,
                "perturbation": sampled_to_json(&result.v),
            });
            emit(&report, common.out.as_ref())?;
            Ok(check.pass())
        }
        Command::Experiment {
            name,
            common,
            config,
            samples,
            csv,
        } => {
            let (label, s) = load_algebra(&common.algebra)?;
            let mut cfg: Value = match config {
                Some(p) => serde_json::from_str(&std::fs::read_to_string(p)?)?,
                None => Value::Null,
            };
            if let Some(n) = samples {
                if cfg.is_null() {
                    cfg = json!({});
                }
                cfg["samples"] = json!(n);
            }
            let budget = budget_from(&common);
            let report = run_experiment(&name, &label, &s, &cfg, &budget, common.seed)?;
            if let Some(csv_path) = csv {
                std::fs::write(csv_path, report.to_csv())?;
            }
            emit(&serde_json::to_value(&report)?, common.out.as_ref())?;
            Ok(report.passed())
        }
        Command::Volume { common, r_grid } => {
            let (label, s) = load_algebra(&common.algebra)?;
            let mut cfg = VolumeConfig::default();
            if let Some(text) = r_grid {
                cfg.r_grid = parse_vector(&text)?.iter().cloned().collect();
            }
            let report =
                nilgeo_core::experiments::heisenberg_volume(&label, &s, &cfg, common.seed)?;
            emit(&serde_json::to_value(&report)?, common.out.as_ref())?;
            Ok(report.passed())
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("asserted signature failed");
            ExitCode::from(1)
        }
        Err(NilgeoError::Infeasible { residual }) => {
            eprintln!("solver infeasible: best endpoint residual {residual:.3e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
