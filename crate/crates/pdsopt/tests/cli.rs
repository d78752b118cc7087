//! Integration tests for the command-line interface and the on-disk
//! artifacts: exit codes, stage gating, determinism, and round-trip
//! consistency of the exported files.

use std::path::Path;
use std::process::Command;

use pdsopt::config::CaseConfig;
use pdsopt::devmap::{self, DevObjectiveConfig};
use pdsopt::fem::{AreaLoad, FemModel};
use pdsopt::pipeline::{self, RunSummary};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_pdsopt"))
}

fn small_config(out: &Path, seed: u64) -> String {
    format!(
        r#"
case = "case1"
seed = {seed}
out_dir = "{}"

[grid]
nu = 9
nv = 9

[anneal]
steps = 2
moves_per_step = 2
t0 = 1.0e-3
local_search_budget = 4
"#,
        out.display()
    )
}

fn read_summary(dir: &Path) -> RunSummary {
    let text = std::fs::read_to_string(dir.join("summary.json")).unwrap();
    serde_json::from_str(&text).unwrap()
}

#[test]
fn run_requires_a_seed() {
    let out = bin().args(["run", "--case", "case1"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--seed"));
}

#[test]
fn unknown_case_is_a_config_error() {
    let out = bin()
        .args(["run", "--case", "case9", "--seed", "1"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bad_grid_flag_is_a_config_error() {
    let out = bin()
        .args(["run", "--case", "case1", "--seed", "1", "--grid", "13"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_grid_file_is_a_config_error() {
    for verb in ["analyze", "devcheck"] {
        let out = bin().args([verb, "/nonexistent/surface.grid"]).output().unwrap();
        assert_eq!(out.status.code(), Some(2), "verb {verb}");
    }
}

#[test]
fn unsupported_model_is_a_numerical_failure() {
    // A grid whose points are all free has no supports; the stiffness matrix
    // is singular and `analyze` must exit 3.
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("loose.grid");
    let mut text = String::from("3 3\n");
    for iv in 0..3 {
        for iu in 0..3 {
            text.push_str(&format!("{} {} 0 free\n", iu as f64, iv as f64));
        }
    }
    std::fs::write(&path, text).unwrap();
    let out = bin().arg("analyze").arg(&path).output().unwrap();
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn skip_anneal_produces_first_two_stages_only() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("run");
    let cfg_path = dir.path().join("run.toml");
    std::fs::write(&cfg_path, small_config(&out_dir, 5)).unwrap();
    let out = bin()
        .args(["run", "--skip-anneal", "--config"])
        .arg(&cfg_path)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    for name in ["initial.grid", "pds.grid", "summary.json"] {
        assert!(out_dir.join(name).exists(), "{name} missing");
    }
    assert!(!out_dir.join("optimal.grid").exists());
    assert!(!out_dir.join("anneal_history.csv").exists());
    let summary = read_summary(&out_dir);
    assert!(summary.pds.is_some());
    assert!(summary.optimal.is_none());
}

#[test]
fn skip_anneal_stages_are_byte_identical_to_full_run() {
    let dir = tempfile::tempdir().unwrap();
    let (skip_dir, full_dir) = (dir.path().join("skip"), dir.path().join("full"));
    for (out_dir, flag) in [(&skip_dir, true), (&full_dir, false)] {
        let cfg_path = dir.path().join(format!("cfg_{flag}.toml"));
        std::fs::write(&cfg_path, small_config(out_dir, 5)).unwrap();
        let mut cmd = bin();
        cmd.arg("run");
        if flag {
            cmd.arg("--skip-anneal");
        }
        let out = cmd.arg("--config").arg(&cfg_path).output().unwrap();
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    }
    for name in [
        "initial.grid",
        "initial.obj",
        "initial_gauss.csv",
        "initial_gauss.vtk",
        "initial_moments.csv",
        "initial_moments.vtk",
        "pds.grid",
        "pds.obj",
        "pds_gauss.csv",
        "pds_gauss.vtk",
        "pds_moments.csv",
        "pds_moments.vtk",
        "pds_objective_history.csv",
    ] {
        let a = std::fs::read(skip_dir.join(name)).unwrap();
        let b = std::fs::read(full_dir.join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between skip and full run");
    }
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let mut summaries = Vec::new();
    for run in 0..2 {
        let out_dir = dir.path().join(format!("r{run}"));
        let cfg_path = dir.path().join(format!("r{run}.toml"));
        std::fs::write(&cfg_path, small_config(&out_dir, 9)).unwrap();
        let out = bin().args(["run", "--config"]).arg(&cfg_path).output().unwrap();
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        summaries.push(std::fs::read(out_dir.join("summary.json")).unwrap());
    }
    assert_eq!(summaries[0], summaries[1]);
}

#[test]
fn exported_grids_reproduce_summary_values() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("run");
    let cfg_path = dir.path().join("run.toml");
    std::fs::write(&cfg_path, small_config(&out_dir, 3)).unwrap();
    let out = bin().args(["run", "--config"]).arg(&cfg_path).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = read_summary(&out_dir);

    for (name, stage) in [
        ("initial.grid", summary.initial),
        ("pds.grid", summary.pds.unwrap()),
        ("optimal.grid", summary.optimal.unwrap()),
    ] {
        let grid = pdsopt::io::read_grid(&out_dir.join(name)).unwrap();
        let dev_cfg = DevObjectiveConfig::for_grid(&grid, summary.c, summary.epsilon);
        let f = devmap::objective(&grid, &dev_cfg).unwrap();
        assert!(
            (f - stage.dev.objective).abs() <= 1e-8 * stage.dev.objective.abs().max(1.0),
            "{name}: F {f} vs {}",
            stage.dev.objective
        );
        let model = FemModel::from_grid(
            &grid,
            pdsopt::fem::ShellMaterial::reference_default(),
            AreaLoad::vertical(1.0),
            pipeline::support_preset(&grid),
        );
        let w = model.analyze().unwrap().compliance;
        assert!(
            ((w - stage.w) / stage.w).abs() <= 1e-8,
            "{name}: W {w} vs {}",
            stage.w
        );
    }
}

#[test]
fn resume_completes_from_a_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("run");
    let cfg_path = dir.path().join("run.toml");
    std::fs::write(&cfg_path, small_config(&out_dir, 7)).unwrap();
    let out = bin().args(["run", "--config"]).arg(&cfg_path).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let original = read_summary(&out_dir);

    let out = bin()
        .arg("resume")
        .arg(out_dir.join("checkpoint.json"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let resumed = read_summary(&out_dir);
    // Stages 1-2 are recomputed deterministically.
    assert_eq!(resumed.initial.w, original.initial.w);
    assert_eq!(resumed.pds.unwrap().w, original.pds.unwrap().w);
    assert!(resumed.optimal.is_some());
}

#[test]
fn resume_with_bad_checkpoint_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("checkpoint.json");
    std::fs::write(&path, "{not json").unwrap();
    let out = bin().arg("resume").arg(&path).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn devcheck_reports_flat_grid_as_developable() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("flat.grid");
    let mut text = String::from("5 5\n");
    for iv in 0..5 {
        for iu in 0..5 {
            text.push_str(&format!("{} {} 0 free\n", iu as f64, iv as f64));
        }
    }
    std::fs::write(&path, text).unwrap();
    let out = bin().arg("devcheck").arg(&path).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("100.0%"), "{stdout}");
}

#[test]
fn analyze_writes_requested_exports() {
    // Export a case-1 initial grid through the library, then analyze it.
    let dir = tempfile::tempdir().unwrap();
    let cfg = {
        let mut c = CaseConfig::case1(2);
        c.grid.nu = 9;
        c.grid.nv = 9;
        c
    };
    let grid = pipeline::initial_grid(&cfg).unwrap();
    let grid_path = dir.path().join("surface.grid");
    pdsopt::io::write_grid(&grid_path, &grid).unwrap();
    let export_dir = dir.path().join("exports");
    let out = bin()
        .arg("analyze")
        .arg(&grid_path)
        .arg("--out")
        .arg(&export_dir)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("compliance W ="));
    assert!(export_dir.join("analyze_moments.vtk").exists());
    assert!(export_dir.join("analyze_moments.csv").exists());
}
