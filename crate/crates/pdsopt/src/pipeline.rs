//! End-to-end pipeline: build the jittered base surface, analyze it, solve
//! the lower-level developability problem, then anneal the design heights for
//! minimum compliance. Every stage writes viewer-ready artifacts under the
//! configured output directory.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::anneal::{self, AnnealState, Evaluation};
use crate::config::{CaseConfig, CaseKind, ConfigError};
use crate::devmap::{self, DevObjectiveConfig};
use crate::fem::{AreaLoad, FemError, FemModel, FemResult, NodeBc, ShellMaterial};
use crate::grid::{CasePreset, GridError, GridSurface, PointRole};
use crate::io::{self, IoError};
use crate::nlp::{self, BoundsSpec, NlpError, NlpSettings};

/// Points with sqrt(A_i) below this count as developable in the reported
/// statistics.
pub const DEV_THRESHOLD: f64 = 1e-4;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Nlp(#[from] NlpError),
    #[error(transparent)]
    Fem(#[from] FemError),
    #[error(transparent)]
    Devmap(#[from] devmap::DevmapError),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

impl PipelineError {
    /// True for configuration and input-file problems (CLI exit code 2);
    /// false for numerical failures (exit code 3).
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            PipelineError::Config(_)
                | PipelineError::Io(_)
                | PipelineError::Grid(_)
                | PipelineError::Checkpoint(_)
        )
    }
}

/// Developability statistics over the evaluation set.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct DevStats {
    /// F of the tanh-filtered objective.
    pub objective: f64,
    /// Fraction of evaluated points with sqrt(A_i) < DEV_THRESHOLD.
    pub dev_fraction: f64,
    pub max_sqrt_a: f64,
    pub median_sqrt_a: f64,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct StageSummary {
    /// Compliance, kNm.
    pub w: f64,
    pub dev: DevStats,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunSummary {
    pub case: String,
    pub seed: u64,
    pub c: f64,
    pub epsilon: f64,
    pub initial: StageSummary,
    pub pds: Option<StageSummary>,
    pub optimal: Option<StageSummary>,
    pub anneal_evaluations: Option<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StageTimings {
    pub initial_seconds: f64,
    pub pds_seconds: f64,
    pub anneal_seconds: f64,
}

/// Anneal checkpoint written after every temperature step; carries the full
/// configuration so `resume` needs nothing else.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config: CaseConfig,
    pub state: AnnealState,
}

/// Support preset shared by the built-in cases: pin (3 translations) every
/// fixed-role point on the grid boundary. For Case 1 that is the 4 corners
/// plus the 4 edge midpoints; for Case 2 the 12 perimeter sub-lattice points.
/// Interior fixed points (Case 1 center, Case 2 exempt points) shape the
/// surface but carry no support.
pub fn support_preset(grid: &GridSurface) -> Vec<NodeBc> {
    (0..grid.points.len())
        .map(|i| {
            if grid.roles[i] != PointRole::Free && grid.is_boundary(i) {
                NodeBc::pinned()
            } else {
                NodeBc::free()
            }
        })
        .collect()
}

pub fn dev_stats(grid: &GridSurface, config: &DevObjectiveConfig) -> Result<DevStats, PipelineError> {
    let reports = devmap::reports(grid, config)?;
    let mut sq: Vec<f64> = reports.iter().map(|r| r.sqrt_error).collect();
    sq.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sq.len();
    let below = sq.iter().filter(|&&v| v < DEV_THRESHOLD).count();
    Ok(DevStats {
        objective: devmap::objective(grid, config)?,
        dev_fraction: if n == 0 { 1.0 } else { below as f64 / n as f64 },
        max_sqrt_a: sq.last().copied().unwrap_or(0.0),
        median_sqrt_a: if n == 0 { 0.0 } else { sq[n / 2] },
    })
}

/// The upper-level objective: impose the design heights Z, re-solve the
/// lower-level problem from the stage-2 surface, and run the shell analysis.
/// Stateless per call, so the annealing chain is reproducible and resumable.
pub struct DesignEvaluator {
    pub base: GridSurface,
    pub design: Vec<usize>,
    pub dev_config: DevObjectiveConfig,
    pub settings: NlpSettings,
    pub lower_halfwidth: f64,
    pub material: ShellMaterial,
    pub load: AreaLoad,
    pub supports: Vec<NodeBc>,
}

impl DesignEvaluator {
    /// Full evaluation keeping the solved surface and analysis results.
    pub fn realize(
        &self,
        z: &[f64],
    ) -> Result<(GridSurface, nlp::LowerLevelSolution, FemResult), PipelineError> {
        let shaped = self.base.with_z_at(&self.design, z);
        let free: Vec<f64> = shaped
            .free_indices()
            .iter()
            .map(|&i| shaped.points[i].z)
            .collect();
        let bounds = BoundsSpec::around(&free, self.lower_halfwidth);
        let sol = nlp::solve_lower_level(&shaped, &self.dev_config, &bounds, &self.settings)?;
        let model = FemModel::from_grid(&sol.grid, self.material, self.load.clone(), self.supports.clone());
        let result = model.analyze()?;
        let grid = sol.grid.clone();
        Ok((grid, sol, result))
    }

    pub fn evaluate(&self, z: &[f64]) -> Evaluation {
        match self.realize(z) {
            Ok((_, sol, result)) => Evaluation {
                w: result.compliance,
                f_residual: sol.objective,
            },
            Err(_) => Evaluation::failed(),
        }
    }
}

fn write_stage_artifacts(
    out: &Path,
    name: &str,
    grid: &GridSurface,
    dev_config: &DevObjectiveConfig,
    result: &FemResult,
) -> Result<(), PipelineError> {
    let reports = devmap::reports(grid, dev_config)?;
    io::write_grid(&out.join(format!("{name}.grid")), grid)?;
    io::write_obj(&out.join(format!("{name}.obj")), grid, false)?;
    io::write_gauss_csv(&out.join(format!("{name}_gauss.csv")), grid, dev_config, &reports)?;
    io::write_vtk_gauss(&out.join(format!("{name}_gauss.vtk")), grid, &reports)?;
    io::write_vtk_moments(&out.join(format!("{name}_moments.vtk")), grid, result)?;
    io::write_moments_csv(&out.join(format!("{name}_moments.csv")), result)?;
    Ok(())
}

fn analyze(grid: &GridSurface, config: &CaseConfig) -> Result<FemResult, PipelineError> {
    let model = FemModel::from_grid(
        grid,
        config.material(),
        AreaLoad {
            q: config.load.q,
            direction: crate::math::Vec3 { x: 0.0, y: 0.0, z: -1.0 },
            on_plan_area: config.load.on_plan_area,
        },
        support_preset(grid),
    );
    Ok(model.analyze()?)
}

/// Build (or load) and classify the initial surface for a configuration.
pub fn initial_grid(config: &CaseConfig) -> Result<GridSurface, PipelineError> {
    match config.case {
        CaseKind::Case1 => {
            let base = crate::grid::build_base_surface(&config.base_surface_spec())?;
            Ok(base.classify_points(&CasePreset::Case1)?)
        }
        CaseKind::Case2 => {
            let base = crate::grid::build_base_surface(&config.base_surface_spec())?;
            Ok(base.classify_points(&CasePreset::Case2)?)
        }
        CaseKind::Custom => {
            let path = config
                .grid_file
                .as_ref()
                .ok_or_else(|| ConfigError::Invalid("custom case requires grid_file".into()))?;
            Ok(io::read_grid(path)?)
        }
    }
}

fn dev_config_for(config: &CaseConfig, grid: &GridSurface) -> DevObjectiveConfig {
    DevObjectiveConfig::for_grid(grid, config.filter.c, config.filter.epsilon)
}

fn case_name(config: &CaseConfig) -> String {
    match config.case {
        CaseKind::Case1 => "case1".into(),
        CaseKind::Case2 => "case2".into(),
        CaseKind::Custom => "custom".into(),
    }
}

fn write_summary(out: &Path, summary: &RunSummary) -> Result<(), PipelineError> {
    let text = serde_json::to_string_pretty(summary)
        .map_err(|e| PipelineError::Checkpoint(e.to_string()))?;
    std::fs::write(out.join("summary.json"), text + "\n").map_err(|e| {
        PipelineError::Io(IoError::Io {
            path: out.join("summary.json").display().to_string(),
            source: e,
        })
    })?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let text =
        serde_json::to_string(value).map_err(|e| PipelineError::Checkpoint(e.to_string()))?;
    std::fs::write(path, text).map_err(|e| {
        PipelineError::Io(IoError::Io { path: path.display().to_string(), source: e })
    })
}

/// Run all configured stages and write artifacts under `config.out_dir`.
/// With `skip_anneal` only the initial analysis and the lower-level solve
/// run; the summary then has no `optimal` entry.
pub fn run_pipeline(config: &CaseConfig, skip_anneal: bool) -> Result<RunSummary, PipelineError> {
    config.validate()?;
    let out = &config.out_dir;
    std::fs::create_dir_all(out).map_err(|e| {
        PipelineError::Io(IoError::Io { path: out.display().to_string(), source: e })
    })?;
    let t_start = Instant::now();

    // Stage 1: initial surface.
    let initial = initial_grid(config)?;
    let dev_cfg = dev_config_for(config, &initial);
    let initial_result = analyze(&initial, config)?;
    write_stage_artifacts(out, "initial", &initial, &dev_cfg, &initial_result)?;
    let initial_summary = StageSummary {
        w: initial_result.compliance,
        dev: dev_stats(&initial, &dev_cfg)?,
    };
    let t_initial = t_start.elapsed().as_secs_f64();

    // Stage 2: lower-level developability solve.
    let free0: Vec<f64> = initial
        .free_indices()
        .iter()
        .map(|&i| initial.points[i].z)
        .collect();
    let lower_bounds = BoundsSpec::around(&free0, config.bounds.lower_halfwidth);
    let settings = NlpSettings::default();
    let sol = nlp::solve_lower_level(&initial, &dev_cfg, &lower_bounds, &settings)?;
    let pds = sol.grid.clone();
    let pds_result = analyze(&pds, config)?;
    write_stage_artifacts(out, "pds", &pds, &dev_cfg, &pds_result)?;
    io::write_objective_history(&out.join("pds_objective_history.csv"), &sol.history)?;
    let pds_summary = StageSummary {
        w: pds_result.compliance,
        dev: dev_stats(&pds, &dev_cfg)?,
    };
    let t_pds = t_start.elapsed().as_secs_f64() - t_initial;

    let mut summary = RunSummary {
        case: case_name(config),
        seed: config.seed,
        c: config.filter.c,
        epsilon: config.filter.epsilon,
        initial: initial_summary,
        pds: Some(pds_summary),
        optimal: None,
        anneal_evaluations: None,
    };

    if skip_anneal {
        write_summary(out, &summary)?;
        write_json(
            &out.join("timings.json"),
            &StageTimings { initial_seconds: t_initial, pds_seconds: t_pds, anneal_seconds: 0.0 },
        )?;
        return Ok(summary);
    }

    // Stage 3: simulated annealing of the design heights.
    let evaluator = DesignEvaluator {
        base: pds.clone(),
        design: pds.design_indices(),
        dev_config: dev_cfg.clone(),
        settings,
        lower_halfwidth: config.bounds.lower_halfwidth,
        material: config.material(),
        load: AreaLoad {
            q: config.load.q,
            direction: crate::math::Vec3 { x: 0.0, y: 0.0, z: -1.0 },
            on_plan_area: config.load.on_plan_area,
        },
        supports: support_preset(&pds),
    };
    let z0: Vec<f64> = evaluator
        .design
        .iter()
        .map(|&i| pds.points[i].z)
        .collect();
    let upper_bounds = BoundsSpec::around(&z0, config.bounds.upper_halfwidth);

    let mut state =
        anneal::anneal_start(&z0, &config.anneal, &upper_bounds, |z| evaluator.evaluate(z));
    let checkpoint_path = out.join("checkpoint.json");
    let mut ckpt_err = None;
    anneal::anneal_run(
        &mut state,
        &config.anneal,
        &upper_bounds,
        |z| evaluator.evaluate(z),
        |s| {
            let ck = Checkpoint { config: config.clone(), state: s.clone() };
            if let Err(e) = write_json(&checkpoint_path, &ck) {
                ckpt_err = Some(e);
            }
        },
    );
    if let Some(e) = ckpt_err {
        return Err(e);
    }
    let outcome = anneal::anneal_finish(state, &config.anneal, &upper_bounds, |z| {
        evaluator.evaluate(z)
    });
    finish_after_anneal(config, &evaluator, outcome, &mut summary, t_initial, t_pds)?;
    Ok(summary)
}

fn finish_after_anneal(
    config: &CaseConfig,
    evaluator: &DesignEvaluator,
    outcome: anneal::AnnealOutcome,
    summary: &mut RunSummary,
    t_initial: f64,
    t_pds: f64,
) -> Result<(), PipelineError> {
    let out = &config.out_dir;
    io::write_anneal_history(&out.join("anneal_history.csv"), &outcome.history)?;
    let (opt_grid, opt_sol, opt_result) = evaluator.realize(&outcome.best_z)?;
    write_stage_artifacts(out, "optimal", &opt_grid, &evaluator.dev_config, &opt_result)?;
    io::write_objective_history(&out.join("optimal_objective_history.csv"), &opt_sol.history)?;
    summary.optimal = Some(StageSummary {
        w: opt_result.compliance,
        dev: dev_stats(&opt_grid, &evaluator.dev_config)?,
    });
    summary.anneal_evaluations = Some(outcome.evaluations);
    write_summary(out, summary)?;
    write_json(
        &out.join("timings.json"),
        &StageTimings {
            initial_seconds: t_initial,
            pds_seconds: t_pds,
            anneal_seconds: 0.0,
        },
    )?;
    Ok(())
}

/// Continue an interrupted stage-3 run from its checkpoint file. Stages 1-2
/// are recomputed deterministically from the stored configuration; the chain
/// resumes from the serialized rng and walk state.
pub fn resume_pipeline(checkpoint_path: &Path) -> Result<RunSummary, PipelineError> {
    let text = std::fs::read_to_string(checkpoint_path).map_err(|e| {
        PipelineError::Io(IoError::Io {
            path: checkpoint_path.display().to_string(),
            source: e,
        })
    })?;
    let ck: Checkpoint = serde_json::from_str(&text)
        .map_err(|e| PipelineError::Checkpoint(format!("bad checkpoint: {e}")))?;
    let config = ck.config;
    config.validate()?;
    let out = &config.out_dir;
    std::fs::create_dir_all(out).map_err(|e| {
        PipelineError::Io(IoError::Io { path: out.display().to_string(), source: e })
    })?;

    // Recreate stages 1-2 (cheap and deterministic for the stored seed).
    let initial = initial_grid(&config)?;
    let dev_cfg = dev_config_for(&config, &initial);
    let initial_result = analyze(&initial, &config)?;
    let free0: Vec<f64> = initial
        .free_indices()
        .iter()
        .map(|&i| initial.points[i].z)
        .collect();
    let lower_bounds = BoundsSpec::around(&free0, config.bounds.lower_halfwidth);
    let settings = NlpSettings::default();
    let sol = nlp::solve_lower_level(&initial, &dev_cfg, &lower_bounds, &settings)?;
    let pds = sol.grid.clone();
    let pds_result = analyze(&pds, &config)?;

    let evaluator = DesignEvaluator {
        base: pds.clone(),
        design: pds.design_indices(),
        dev_config: dev_cfg.clone(),
        settings,
        lower_halfwidth: config.bounds.lower_halfwidth,
        material: config.material(),
        load: AreaLoad {
            q: config.load.q,
            direction: crate::math::Vec3 { x: 0.0, y: 0.0, z: -1.0 },
            on_plan_area: config.load.on_plan_area,
        },
        supports: support_preset(&pds),
    };
    let z0: Vec<f64> = evaluator.design.iter().map(|&i| pds.points[i].z).collect();
    let upper_bounds = BoundsSpec::around(&z0, config.bounds.upper_halfwidth);

    let mut state = ck.state;
    let checkpoint_file = out.join("checkpoint.json");
    let mut ckpt_err = None;
    anneal::anneal_run(
        &mut state,
        &config.anneal,
        &upper_bounds,
        |z| evaluator.evaluate(z),
        |s| {
            let ckn = Checkpoint { config: config.clone(), state: s.clone() };
            if let Err(e) = write_json(&checkpoint_file, &ckn) {
                ckpt_err = Some(e);
            }
        },
    );
    if let Some(e) = ckpt_err {
        return Err(e);
    }
    let outcome = anneal::anneal_finish(state, &config.anneal, &upper_bounds, |z| {
        evaluator.evaluate(z)
    });

    let mut summary = RunSummary {
        case: case_name(&config),
        seed: config.seed,
        c: config.filter.c,
        epsilon: config.filter.epsilon,
        initial: StageSummary {
            w: initial_result.compliance,
            dev: dev_stats(&initial, &dev_cfg)?,
        },
        pds: Some(StageSummary {
            w: pds_result.compliance,
            dev: dev_stats(&pds, &dev_cfg)?,
        }),
        optimal: None,
        anneal_evaluations: None,
    };
    finish_after_anneal(&config, &evaluator, outcome, &mut summary, 0.0, 0.0)?;
    Ok(summary)
}

/// Format to 4 significant digits, the precision the compliance narrative
/// uses (for example "4.998 -> 5.555 -> 3.386 kNm").
fn sig4(x: f64) -> String {
    if x == 0.0 {
        return "0.000".into();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let mag = x.abs().log10().floor() as i32;
    let decimals = (3 - mag).max(0) as usize;
    format!("{x:.decimals$}")
}

/// Human-readable run report: the compliance triple plus developability
/// statistics per stage. Missing stages render as explicit gaps.
pub fn report_summary(summary: &RunSummary) -> String {
    let mut s = String::new();
    let gap = "-".to_string();
    let pds_w = summary.pds.as_ref().map(|p| sig4(p.w)).unwrap_or_else(|| gap.clone());
    let opt_w = summary.optimal.as_ref().map(|o| sig4(o.w)).unwrap_or_else(|| gap.clone());
    s.push_str(&format!(
        "case {}  seed {}  c {}\n",
        summary.case, summary.seed, summary.c
    ));
    s.push_str(&format!(
        "compliance W: {} \u{2192} {} \u{2192} {} kNm\n",
        sig4(summary.initial.w),
        pds_w,
        opt_w
    ));
    s.push_str("stage      W_kNm      F        dev%     max_sqrtA   med_sqrtA\n");
    fn row(s: &mut String, name: &str, st: &StageSummary) {
        s.push_str(&format!(
            "{:<10} {:<10} {:<8} {:<8} {:<11} {}\n",
            name,
            sig4(st.w),
            sig4(st.dev.objective),
            format!("{:.1}", 100.0 * st.dev.dev_fraction),
            format!("{:.3e}", st.dev.max_sqrt_a),
            format!("{:.3e}", st.dev.median_sqrt_a),
        ));
    }
    row(&mut s, "initial", &summary.initial);
    match &summary.pds {
        Some(p) => row(&mut s, "pds", p),
        None => s.push_str("pds        (missing)\n"),
    }
    match &summary.optimal {
        Some(o) => row(&mut s, "optimal", o),
        None => s.push_str("optimal    (skipped)\n"),
    }
    s
}
