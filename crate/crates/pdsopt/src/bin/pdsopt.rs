//! Command-line entry point.
//!
//! Exit codes: 0 success, 2 configuration or input-file error, 3 numerical
//! failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use pdsopt::config::{CaseConfig, CaseKind};
use pdsopt::devmap::DevObjectiveConfig;
use pdsopt::fem::{AreaLoad, FemModel, ShellMaterial};
use pdsopt::pipeline::{self, PipelineError};

const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

#[derive(Parser)]
#[command(
    name = "pdsopt",
    version,
    about = "Two-level shape optimization of piecewise developable grid shells"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the full pipeline: initial analysis, developability solve, anneal.
    Run(RunArgs),
    /// Shell FEM analysis of a grid file (compliance and moments only).
    Analyze(AnalyzeArgs),
    /// Gauss-map developability report of a grid file.
    Devcheck(DevcheckArgs),
    /// Continue an interrupted run from its checkpoint file.
    Resume(ResumeArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Case preset: case1, case2, or custom (requires --config with grid_file).
    #[arg(long)]
    case: Option<String>,
    /// TOML configuration file; command-line flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Random seed (required unless the config file provides one).
    #[arg(long)]
    seed: Option<u64>,
    /// tanh filter sharpness.
    #[arg(long)]
    c: Option<f64>,
    /// Grid resolution as NUxNV, for example 13x13.
    #[arg(long, value_name = "NUxNV")]
    grid: Option<String>,
    /// Stop after the lower-level solve; skip the annealing stage.
    #[arg(long)]
    skip_anneal: bool,
    /// Worker threads (results are identical for any value).
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Grid file to analyze.
    grid_file: PathBuf,
    /// Area load magnitude, kN/m^2 (acts in -z).
    #[arg(long, default_value_t = 1.0)]
    q: f64,
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Directory for the moment VTK/CSV exports (optional).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DevcheckArgs {
    /// Grid file to check.
    grid_file: PathBuf,
    /// tanh filter sharpness.
    #[arg(long, default_value_t = 100.0)]
    c: f64,
    /// Directory for the Gauss-map CSV/VTK exports (optional).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ResumeArgs {
    /// checkpoint.json from the interrupted run.
    checkpoint: PathBuf,
}

fn parse_grid_dims(text: &str) -> Result<(usize, usize), String> {
    let (a, b) = text
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("--grid expects NUxNV, got `{text}`"))?;
    let nu = a.parse().map_err(|_| format!("bad grid dimension `{a}`"))?;
    let nv = b.parse().map_err(|_| format!("bad grid dimension `{b}`"))?;
    Ok((nu, nv))
}

fn build_config(args: &RunArgs) -> Result<CaseConfig, String> {
    let mut cfg = match &args.config {
        Some(path) => CaseConfig::load(path).map_err(|e| e.to_string())?,
        None => {
            let seed = args
                .seed
                .ok_or("--seed is required when no config file is given")?;
            match args.case.as_deref().unwrap_or("case1") {
                "case1" => CaseConfig::case1(seed),
                "case2" => CaseConfig::case2(seed),
                other => return Err(format!("unknown case `{other}` (use --config for custom)")),
            }
        }
    };
    if let Some(case) = &args.case {
        cfg.case = match case.as_str() {
            "case1" => CaseKind::Case1,
            "case2" => CaseKind::Case2,
            "custom" => CaseKind::Custom,
            other => return Err(format!("unknown case `{other}`")),
        };
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
        cfg.anneal.seed = seed;
    }
    if let Some(c) = args.c {
        cfg.filter.c = c;
    }
    if let Some(grid) = &args.grid {
        let (nu, nv) = parse_grid_dims(grid)?;
        cfg.grid.nu = nu;
        cfg.grid.nv = nv;
    }
    if let Some(out) = &args.out {
        cfg.out_dir = out.clone();
    }
    if args.threads == 0 {
        return Err("--threads must be at least 1".into());
    }
    cfg.validate().map_err(|e| e.to_string())?;
    Ok(cfg)
}

fn pipeline_exit(e: &PipelineError) -> ExitCode {
    if e.is_config_error() {
        eprintln!("error: {e}");
        ExitCode::from(EXIT_CONFIG)
    } else {
        eprintln!("numerical failure: {e}");
        ExitCode::from(EXIT_NUMERICAL)
    }
}

fn cmd_run(args: &RunArgs) -> ExitCode {
    let cfg = match build_config(args) {
        Ok(c) => c,
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    match pipeline::run_pipeline(&cfg, args.skip_anneal) {
        Ok(summary) => {
            print!("{}", pipeline::report_summary(&summary));
            println!("artifacts written to {}", cfg.out_dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => pipeline_exit(&e),
    }
}

fn cmd_analyze(args: &AnalyzeArgs) -> ExitCode {
    if args.threads == 0 {
        eprintln!("error: --threads must be at least 1");
        return ExitCode::from(EXIT_CONFIG);
    }
    let grid = match pdsopt::io::read_grid(&args.grid_file) {
        Ok(g) => g,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let model = FemModel::from_grid(
        &grid,
        ShellMaterial::reference_default(),
        AreaLoad::vertical(args.q),
        pipeline::support_preset(&grid),
    );
    match model.analyze() {
        Ok(result) => {
            println!("compliance W = {} kNm", result.compliance);
            let mmax = result
                .moments
                .iter()
                .map(|m| m.m_max())
                .fold(0.0f64, f64::max);
            println!("max element bending moment = {mmax} kNm/m");
            if let Some(out) = &args.out {
                if let Err(e) = std::fs::create_dir_all(out)
                    .map_err(|err| err.to_string())
                    .and_then(|_| {
                        pdsopt::io::write_vtk_moments(&out.join("analyze_moments.vtk"), &grid, &result)
                            .map_err(|err| err.to_string())
                    })
                    .and_then(|_| {
                        pdsopt::io::write_moments_csv(&out.join("analyze_moments.csv"), &result)
                            .map_err(|err| err.to_string())
                    })
                {
                    eprintln!("error: {e}");
                    return ExitCode::from(EXIT_CONFIG);
                }
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("numerical failure: {e}");
            ExitCode::from(EXIT_NUMERICAL)
        }
    }
}

fn cmd_devcheck(args: &DevcheckArgs) -> ExitCode {
    let grid = match pdsopt::io::read_grid(&args.grid_file) {
        Ok(g) => g,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    if args.c <= 0.0 {
        eprintln!("error: --c must be positive");
        return ExitCode::from(EXIT_CONFIG);
    }
    let cfg = DevObjectiveConfig::for_grid(&grid, args.c, 1e-6);
    let stats = match pipeline::dev_stats(&grid, &cfg) {
        Ok(s) => s,
        Err(e) => return pipeline_exit(&e),
    };
    println!("points evaluated: {}", cfg.eval_set.len());
    println!("F = {}", stats.objective);
    println!(
        "developable fraction (sqrt_Ai < {:.0e}): {:.1}%",
        pipeline::DEV_THRESHOLD,
        100.0 * stats.dev_fraction
    );
    println!("max sqrt_Ai = {:.6e}", stats.max_sqrt_a);
    println!("median sqrt_Ai = {:.6e}", stats.median_sqrt_a);
    if let Some(out) = &args.out {
        let reports = match pdsopt::devmap::reports(&grid, &cfg) {
            Ok(r) => r,
            Err(e) => {
                eprintln!("numerical failure: {e}");
                return ExitCode::from(EXIT_NUMERICAL);
            }
        };
        if let Err(e) = std::fs::create_dir_all(out)
            .map_err(|err| err.to_string())
            .and_then(|_| {
                pdsopt::io::write_gauss_csv(&out.join("devcheck_gauss.csv"), &grid, &cfg, &reports)
                    .map_err(|err| err.to_string())
            })
            .and_then(|_| {
                pdsopt::io::write_vtk_gauss(&out.join("devcheck_gauss.vtk"), &grid, &reports)
                    .map_err(|err| err.to_string())
            })
        {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    }
    ExitCode::SUCCESS
}

fn cmd_resume(args: &ResumeArgs) -> ExitCode {
    match pipeline::resume_pipeline(&args.checkpoint) {
        Ok(summary) => {
            print!("{}", pipeline::report_summary(&summary));
            ExitCode::SUCCESS
        }
        Err(e) => pipeline_exit(&e),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match &cli.cmd {
        Cmd::Run(args) => cmd_run(args),
        Cmd::Analyze(args) => cmd_analyze(args),
        Cmd::Devcheck(args) => cmd_devcheck(args),
        Cmd::Resume(args) => cmd_resume(args),
    }
}
