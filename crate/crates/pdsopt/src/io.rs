//! File formats: plain-text point grids, OBJ meshes, legacy VTK fields, and
//! the CSV reports. All floats are written with Rust's shortest round-trip
//! formatting so exported grids reload bit-identically.

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::devmap::{DevObjectiveConfig, GaussMapReport};
use crate::fem::FemResult;
use crate::grid::{GridSurface, PointRole};
use crate::nlp::IterRecord;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
}

fn io_err(path: &Path, source: std::io::Error) -> IoError {
    IoError::Io { path: path.display().to_string(), source }
}

fn parse_err(line: usize, message: impl Into<String>) -> IoError {
    IoError::Parse { line, message: message.into() }
}

pub fn role_token(role: PointRole) -> &'static str {
    match role {
        PointRole::Free => "free",
        PointRole::GeometryFixed => "geometry_fixed",
        PointRole::DesignVariable => "design_variable",
        PointRole::DevelopabilityExemptFixed => "exempt",
    }
}

pub fn parse_role(token: &str) -> Option<PointRole> {
    match token {
        "free" => Some(PointRole::Free),
        "geometry_fixed" => Some(PointRole::GeometryFixed),
        "design_variable" => Some(PointRole::DesignVariable),
        "exempt" => Some(PointRole::DevelopabilityExemptFixed),
        _ => None,
    }
}

/// Plain-text grid: a `nu nv` header line, then nu*nv lines of `x y z role`
/// in row-major order (u fastest).
pub fn grid_to_string(grid: &GridSurface) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{} {}", grid.nu, grid.nv);
    for (p, &r) in grid.points.iter().zip(&grid.roles) {
        let _ = writeln!(s, "{} {} {} {}", p.x, p.y, p.z, role_token(r));
    }
    s
}

pub fn grid_from_string(text: &str) -> Result<GridSurface, IoError> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (ln, header) = lines.next().ok_or_else(|| parse_err(1, "empty grid file"))?;
    let mut it = header.split_whitespace();
    let nu: usize = it
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| parse_err(ln + 1, "header must be `nu nv`"))?;
    let nv: usize = it
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| parse_err(ln + 1, "header must be `nu nv`"))?;
    if nu < 3 || nv < 3 {
        return Err(parse_err(ln + 1, format!("grid too small: {nu}x{nv}")));
    }
    let mut points = Vec::with_capacity(nu * nv);
    let mut roles = Vec::with_capacity(nu * nv);
    for (ln, line) in lines {
        let t: Vec<&str> = line.split_whitespace().collect();
        if t.len() != 4 {
            return Err(parse_err(ln + 1, "expected `x y z role`"));
        }
        let coord = |s: &str| -> Result<f64, IoError> {
            s.parse().map_err(|_| parse_err(ln + 1, format!("bad number `{s}`")))
        };
        points.push(crate::math::Vec3 {
            x: coord(t[0])?,
            y: coord(t[1])?,
            z: coord(t[2])?,
        });
        roles.push(
            parse_role(t[3]).ok_or_else(|| parse_err(ln + 1, format!("unknown role `{}`", t[3])))?,
        );
    }
    if points.len() != nu * nv {
        return Err(parse_err(
            0,
            format!("expected {} points, found {}", nu * nv, points.len()),
        ));
    }
    let (mut xmin, mut xmax, mut ymin, mut ymax) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for p in &points {
        xmin = xmin.min(p.x);
        xmax = xmax.max(p.x);
        ymin = ymin.min(p.y);
        ymax = ymax.max(p.y);
    }
    Ok(GridSurface {
        nu,
        nv,
        points,
        roles,
        lx: xmax - xmin,
        ly: ymax - ymin,
    })
}

pub fn write_grid(path: &Path, grid: &GridSurface) -> Result<(), IoError> {
    std::fs::write(path, grid_to_string(grid)).map_err(|e| io_err(path, e))
}

pub fn read_grid(path: &Path) -> Result<GridSurface, IoError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    grid_from_string(&text)
}

/// OBJ export of the quad mesh. Quads are kept as 4-gon faces by default so
/// viewers show the grid; `triangulate` splits each into two triangles.
pub fn obj_to_string(grid: &GridSurface, triangulate: bool) -> String {
    let mut s = String::new();
    for p in &grid.points {
        let _ = writeln!(s, "v {} {} {}", p.x, p.y, p.z);
    }
    for iv in 0..grid.nv - 1 {
        for iu in 0..grid.nu - 1 {
            let a = grid.idx(iu, iv) + 1;
            let b = grid.idx(iu + 1, iv) + 1;
            let c = grid.idx(iu + 1, iv + 1) + 1;
            let d = grid.idx(iu, iv + 1) + 1;
            if triangulate {
                let _ = writeln!(s, "f {a} {b} {c}");
                let _ = writeln!(s, "f {a} {c} {d}");
            } else {
                let _ = writeln!(s, "f {a} {b} {c} {d}");
            }
        }
    }
    s
}

pub fn write_obj(path: &Path, grid: &GridSurface, triangulate: bool) -> Result<(), IoError> {
    std::fs::write(path, obj_to_string(grid, triangulate)).map_err(|e| io_err(path, e))
}

fn vtk_mesh_header(title: &str, grid: &GridSurface) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# vtk DataFile Version 3.0");
    let _ = writeln!(s, "{title}");
    let _ = writeln!(s, "ASCII");
    let _ = writeln!(s, "DATASET UNSTRUCTURED_GRID");
    let _ = writeln!(s, "POINTS {} double", grid.points.len());
    for p in &grid.points {
        let _ = writeln!(s, "{} {} {}", p.x, p.y, p.z);
    }
    let ncell = (grid.nu - 1) * (grid.nv - 1);
    let _ = writeln!(s, "CELLS {} {}", ncell, 5 * ncell);
    for iv in 0..grid.nv - 1 {
        for iu in 0..grid.nu - 1 {
            let _ = writeln!(
                s,
                "4 {} {} {} {}",
                grid.idx(iu, iv),
                grid.idx(iu + 1, iv),
                grid.idx(iu + 1, iv + 1),
                grid.idx(iu, iv + 1)
            );
        }
    }
    let _ = writeln!(s, "CELL_TYPES {ncell}");
    for _ in 0..ncell {
        let _ = writeln!(s, "9");
    }
    s
}

/// Legacy-VTK point field of sqrt(A_i); points outside the evaluation set
/// carry 0 so contour panels show the interior only.
pub fn vtk_gauss_to_string(grid: &GridSurface, reports: &[GaussMapReport]) -> String {
    let mut s = vtk_mesh_header("developability error sqrt(A_i)", grid);
    let mut values = vec![0.0; grid.points.len()];
    for r in reports {
        values[r.point] = r.sqrt_error;
    }
    let _ = writeln!(s, "POINT_DATA {}", values.len());
    let _ = writeln!(s, "SCALARS sqrt_Ai double 1");
    let _ = writeln!(s, "LOOKUP_TABLE default");
    for v in values {
        let _ = writeln!(s, "{v}");
    }
    s
}

pub fn write_vtk_gauss(
    path: &Path,
    grid: &GridSurface,
    reports: &[GaussMapReport],
) -> Result<(), IoError> {
    std::fs::write(path, vtk_gauss_to_string(grid, reports)).map_err(|e| io_err(path, e))
}

/// Legacy-VTK export of the FE solution: nodal displacement vectors plus the
/// per-element maximum principal bending moment.
pub fn vtk_moments_to_string(grid: &GridSurface, result: &FemResult) -> String {
    let mut s = vtk_mesh_header("shell analysis", grid);
    let _ = writeln!(s, "POINT_DATA {}", result.displacements.len());
    let _ = writeln!(s, "VECTORS displacement double");
    for d in &result.displacements {
        let _ = writeln!(s, "{} {} {}", d[0], d[1], d[2]);
    }
    let _ = writeln!(s, "CELL_DATA {}", result.moments.len());
    let _ = writeln!(s, "SCALARS Mmax double 1");
    let _ = writeln!(s, "LOOKUP_TABLE default");
    for m in &result.moments {
        let _ = writeln!(s, "{}", m.m_max());
    }
    s
}

pub fn write_vtk_moments(
    path: &Path,
    grid: &GridSurface,
    result: &FemResult,
) -> Result<(), IoError> {
    std::fs::write(path, vtk_moments_to_string(grid, result)).map_err(|e| io_err(path, e))
}

/// Per-point Gauss-map report CSV.
pub fn gauss_csv_to_string(
    grid: &GridSurface,
    config: &DevObjectiveConfig,
    reports: &[GaussMapReport],
) -> String {
    let mut s = String::from("i,u_index,v_index,sqrt_Ai,Ai,filtered_term\n");
    for r in reports {
        let (iu, iv) = grid.coords(r.point);
        let filtered = (config.c * (r.sqrt_error + config.epsilon)).tanh();
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            r.point, iu, iv, r.sqrt_error, r.error, filtered
        );
    }
    s
}

pub fn write_gauss_csv(
    path: &Path,
    grid: &GridSurface,
    config: &DevObjectiveConfig,
    reports: &[GaussMapReport],
) -> Result<(), IoError> {
    std::fs::write(path, gauss_csv_to_string(grid, config, reports)).map_err(|e| io_err(path, e))
}

/// Lower-level convergence history CSV.
pub fn objective_history_to_string(history: &[IterRecord]) -> String {
    let mut s = String::from("iter,F,projected_grad_norm\n");
    for r in history {
        let _ = writeln!(s, "{},{},{}", r.iter, r.f, r.projected_grad_norm);
    }
    s
}

pub fn write_objective_history(path: &Path, history: &[IterRecord]) -> Result<(), IoError> {
    std::fs::write(path, objective_history_to_string(history)).map_err(|e| io_err(path, e))
}

/// Annealing history CSV with one Z column per design height.
pub fn anneal_history_to_string(history: &[crate::anneal::EvalRecord]) -> String {
    let nz = history.first().map_or(0, |r| r.z.len());
    let mut s = String::from("eval,temperature,W,F_residual,accepted");
    for i in 0..nz {
        let _ = write!(s, ",Z{i}");
    }
    s.push('\n');
    for r in history {
        let _ = write!(
            s,
            "{},{},{},{},{}",
            r.eval, r.temperature, r.w, r.f_residual, r.accepted as u8
        );
        for z in &r.z {
            let _ = write!(s, ",{z}");
        }
        s.push('\n');
    }
    s
}

pub fn write_anneal_history(
    path: &Path,
    history: &[crate::anneal::EvalRecord],
) -> Result<(), IoError> {
    std::fs::write(path, anneal_history_to_string(history)).map_err(|e| io_err(path, e))
}

/// Per-element moment summary CSV; the compliance total repeats on each row
/// for self-contained spreadsheets.
pub fn moments_csv_to_string(result: &FemResult) -> String {
    let mut s = String::from("element,M1,M2,Mmax,W_total\n");
    for (e, m) in result.moments.iter().enumerate() {
        let _ = writeln!(s, "{},{},{},{},{}", e, m.m1, m.m2, m.m_max(), result.compliance);
    }
    s
}

pub fn write_moments_csv(path: &Path, result: &FemResult) -> Result<(), IoError> {
    std::fs::write(path, moments_csv_to_string(result)).map_err(|e| io_err(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_base_surface, BaseSurfaceSpec, CasePreset};

    fn sample_grid() -> GridSurface {
        let spec = BaseSurfaceSpec {
            nu: 5,
            nv: 5,
            lx: 10.0,
            ly: 10.0,
            rise: 2.0,
            jitter: 0.1,
            seed: 3,
        };
        build_base_surface(&spec)
            .unwrap()
            .classify_points(&CasePreset::Case1)
            .unwrap()
    }

    #[test]
    fn grid_round_trip_is_exact() {
        let g = sample_grid();
        let text = grid_to_string(&g);
        let h = grid_from_string(&text).unwrap();
        assert_eq!(g.nu, h.nu);
        assert_eq!(g.nv, h.nv);
        assert_eq!(g.points, h.points);
        assert_eq!(g.roles, h.roles);
        // A second serialization is byte-identical.
        assert_eq!(text, grid_to_string(&h));
    }

    #[test]
    fn grid_parse_errors_are_reported() {
        assert!(grid_from_string("").is_err());
        assert!(grid_from_string("3").is_err());
        assert!(grid_from_string("2 2\n").is_err());
        let short = "3 3\n0 0 0 free\n";
        assert!(grid_from_string(short).is_err());
        let bad_role = "3 3\n".to_string() + &"0 0 0 pinned\n".repeat(9);
        assert!(matches!(
            grid_from_string(&bad_role),
            Err(IoError::Parse { line: 2, .. })
        ));
        let bad_num = "3 3\n".to_string() + &"0 zero 0 free\n".repeat(9);
        assert!(grid_from_string(&bad_num).is_err());
    }

    #[test]
    fn obj_counts_match_mesh() {
        let g = sample_grid();
        let obj = obj_to_string(&g, false);
        let verts = obj.lines().filter(|l| l.starts_with("v ")).count();
        let quads = obj.lines().filter(|l| l.starts_with("f ")).count();
        assert_eq!(verts, 25);
        assert_eq!(quads, 16);
        assert!(obj
            .lines()
            .filter(|l| l.starts_with("f "))
            .all(|l| l.split_whitespace().count() == 5));

        let tri = obj_to_string(&g, true);
        let faces = tri.lines().filter(|l| l.starts_with("f ")).count();
        assert_eq!(faces, 32);
        assert!(tri
            .lines()
            .filter(|l| l.starts_with("f "))
            .all(|l| l.split_whitespace().count() == 4));
    }

    #[test]
    fn obj_indices_are_one_based_and_in_range() {
        let g = sample_grid();
        for line in obj_to_string(&g, false).lines().filter(|l| l.starts_with("f ")) {
            for tok in line.split_whitespace().skip(1) {
                let i: usize = tok.parse().unwrap();
                assert!((1..=25).contains(&i));
            }
        }
    }

    #[test]
    fn vtk_gauss_structure() {
        let g = sample_grid();
        let cfg = DevObjectiveConfig::for_grid(&g, 100.0, 1e-5);
        let reports = crate::devmap::reports(&g, &cfg).unwrap();
        let vtk = vtk_gauss_to_string(&g, &reports);
        assert!(vtk.starts_with("# vtk DataFile Version 3.0"));
        assert!(vtk.contains("POINTS 25 double"));
        assert!(vtk.contains("CELLS 16 80"));
        assert!(vtk.contains("SCALARS sqrt_Ai double 1"));
        let data: Vec<&str> = vtk.split("LOOKUP_TABLE default\n").collect();
        assert_eq!(data[1].lines().count(), 25);
    }

    #[test]
    fn vtk_moments_structure() {
        let g = sample_grid();
        let model = crate::fem::FemModel::from_grid(
            &g,
            crate::fem::ShellMaterial::reference_default(),
            crate::fem::AreaLoad::vertical(1.0),
            {
                let mut s = vec![crate::fem::NodeBc::free(); 25];
                for i in 0..25 {
                    if g.is_boundary(i) {
                        s[i] = crate::fem::NodeBc::pinned();
                    }
                }
                s
            },
        );
        let result = model.analyze().unwrap();
        let vtk = vtk_moments_to_string(&g, &result);
        assert!(vtk.contains("VECTORS displacement double"));
        assert!(vtk.contains("CELL_DATA 16"));
        assert!(vtk.contains("SCALARS Mmax double 1"));
    }

    #[test]
    fn csv_headers_and_row_counts() {
        let g = sample_grid();
        let cfg = DevObjectiveConfig::for_grid(&g, 100.0, 1e-5);
        let reports = crate::devmap::reports(&g, &cfg).unwrap();
        let csv = gauss_csv_to_string(&g, &cfg, &reports);
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "i,u_index,v_index,sqrt_Ai,Ai,filtered_term");
        assert_eq!(lines.count(), reports.len());

        let hist = vec![
            IterRecord { iter: 0, f: 2.0, projected_grad_norm: 0.5 },
            IterRecord { iter: 1, f: 1.5, projected_grad_norm: 0.1 },
        ];
        let csv = objective_history_to_string(&hist);
        assert_eq!(csv, "iter,F,projected_grad_norm\n0,2,0.5\n1,1.5,0.1\n");

        let arec = vec![crate::anneal::EvalRecord {
            eval: 0,
            temperature: 1.0,
            w: 4.5,
            f_residual: 0.01,
            accepted: true,
            z: vec![0.1, -0.2],
        }];
        let csv = anneal_history_to_string(&arec);
        assert_eq!(
            csv,
            "eval,temperature,W,F_residual,accepted,Z0,Z1\n0,1,4.5,0.01,1,0.1,-0.2\n"
        );
    }

    #[test]
    fn moments_csv_rows_match_elements() {
        let g = sample_grid();
        let mut supports = vec![crate::fem::NodeBc::free(); 25];
        for i in 0..25 {
            if g.is_boundary(i) {
                supports[i] = crate::fem::NodeBc::pinned();
            }
        }
        let model = crate::fem::FemModel::from_grid(
            &g,
            crate::fem::ShellMaterial::reference_default(),
            crate::fem::AreaLoad::vertical(1.0),
            supports,
        );
        let result = model.analyze().unwrap();
        let csv = moments_csv_to_string(&result);
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "element,M1,M2,Mmax,W_total");
        assert_eq!(lines.count(), 16);
    }

    #[test]
    fn file_round_trip_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("surface.grid");
        let g = sample_grid();
        write_grid(&path, &g).unwrap();
        let h = read_grid(&path).unwrap();
        assert_eq!(g.points, h.points);
        assert_eq!(g.roles, h.roles);
    }
}
