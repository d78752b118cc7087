//! Discrete local Gauss map, per-point developability error A_i, and the
//! tanh-filtered objective F with its exact gradient.
//!
//! For each interior point the 8 fan-face normals and the vertex normal are
//! translated to a common origin; the Gauss-map triangle areas a_ij measure
//! local non-developability. a_ij is the component of the chordal triangle's
//! vector area along the vertex normal, which vanishes exactly for planar and
//! single-curved (cylinder/cone-like) one-rings.

use std::collections::HashMap;

use thiserror::Error;

use crate::grid::{AuxiliaryFan, GridSurface};
use crate::math::{Dual9, Real, V3, Vec3};

/// Plan-projected triangle areas below this are treated as degenerate.
pub const DEGENERACY_FLOOR: f64 = 1e-14;

/// Smoothing half-width for sqrt(A_i): sqrt(A + d^2) - d keeps the gradient
/// Lipschitz at A = 0 while changing the value by less than d.
pub const SQRT_SMOOTHING: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum DevmapError {
    #[error("fan triangle {triangle} at point {point} is degenerate (plan area {area:.3e})")]
    DegenerateTriangle { point: usize, triangle: usize, area: f64 },
    #[error("face normals at point {point} sum to (near) zero; surface is folded")]
    ZeroNormalSum { point: usize },
    #[error(transparent)]
    Grid(#[from] crate::grid::GridError),
}

/// Filter sharpness, offset, and evaluation set of the lower-level objective.
#[derive(Clone, Debug)]
pub struct DevObjectiveConfig {
    /// tanh sharpness c; useful values run from 10 (soft) to 200 (sharp).
    pub c: f64,
    /// Small positive offset inside the filter: tanh(c (sqrt(A_i) + eps)).
    pub epsilon: f64,
    /// Index set I of interior points where developability is evaluated.
    pub eval_set: Vec<usize>,
}

impl DevObjectiveConfig {
    /// Default configuration for a classified grid: I is every interior point
    /// that is not developability-exempt.
    pub fn for_grid(grid: &GridSurface, c: f64, epsilon: f64) -> Self {
        DevObjectiveConfig { c, epsilon, eval_set: grid.evaluation_set() }
    }

    /// Objective value at perfect developability: |I| * tanh(c * eps).
    pub fn floor(&self) -> f64 {
        self.eval_set.len() as f64 * (self.c * self.epsilon).tanh()
    }
}

/// Per-point Gauss map data.
#[derive(Clone, Debug)]
pub struct GaussMapReport {
    pub point: usize,
    pub face_normals: [Vec3; 8],
    pub vertex_normal: Vec3,
    /// Gauss-map triangle areas a_ij >= 0.
    pub areas: [f64; 8],
    /// A_i = sum of a_ij^2.
    pub error: f64,
    /// Smoothed sqrt(A_i).
    pub sqrt_error: f64,
}

#[inline]
fn smoothed_sqrt<T: Real>(a: T) -> T {
    let d = T::constant(SQRT_SMOOTHING);
    (a + d * d).sqrt() - d
}

/// Unit normals of the 8 fan triangles, oriented toward +z (CCW fan order).
pub fn face_normals(grid: &GridSurface, fan: &AuxiliaryFan) -> Result<[Vec3; 8], DevmapError> {
    let mut pts = [Vec3::ZERO; 9];
    pts[0] = grid.points[fan.center];
    for j in 0..8 {
        pts[j + 1] = grid.points[fan.neighbors[j]];
    }
    fan_face_normals(&pts).map_err(|(triangle, area)| DevmapError::DegenerateTriangle {
        point: fan.center,
        triangle,
        area,
    })
}

/// Generic kernel: stencil points [center, 8 CCW neighbors] -> face normals.
/// Error carries (triangle index, plan area) of the degenerate triangle.
fn fan_face_normals<T: Real>(pts: &[V3<T>; 9]) -> Result<[V3<T>; 8], (usize, f64)> {
    let p = pts[0];
    let mut normals = [V3::new(T::constant(0.0), T::constant(0.0), T::constant(0.0)); 8];
    for j in 0..8 {
        let a = pts[1 + j] - p;
        let b = pts[1 + (j + 1) % 8] - p;
        let cross = a.cross(b);
        // Plan-projected area does not depend on z, so check it in f64.
        let plan_area = 0.5 * cross.z.value().abs();
        if plan_area < DEGENERACY_FLOOR {
            return Err((j, plan_area));
        }
        normals[j] = cross.normalized();
    }
    Ok(normals)
}

/// Unweighted mean of the 8 face normals, renormalized.
pub fn vertex_normal(normals: &[Vec3; 8]) -> Result<Vec3, DevmapError> {
    vertex_normal_generic(normals).ok_or(DevmapError::ZeroNormalSum { point: usize::MAX })
}

fn vertex_normal_generic<T: Real>(normals: &[V3<T>; 8]) -> Option<V3<T>> {
    let mut sum = V3::new(T::constant(0.0), T::constant(0.0), T::constant(0.0));
    for n in normals {
        sum = sum + *n;
    }
    if sum.norm().value() < 1e-8 {
        return None;
    }
    Some(sum.scale(T::constant(0.125)).normalized())
}

/// Gauss-map triangle areas a_ij = 1/2 |n_i . (n_j x n_{j+1})|, cyclic j.
pub fn gauss_triangle_areas(vertex_normal: Vec3, face_normals: &[Vec3; 8]) -> [f64; 8] {
    let mut areas = [0.0; 8];
    for j in 0..8 {
        let t = vertex_normal.dot(face_normals[j].cross(face_normals[(j + 1) % 8]));
        areas[j] = 0.5 * t.abs();
    }
    areas
}

/// A_i and intermediate quantities, generic over the scalar. A_i is assembled
/// from the *signed* triangle areas squared, so it is smooth in the points.
fn point_error_generic<T: Real>(pts: &[V3<T>; 9]) -> Result<T, (usize, f64)> {
    let normals = fan_face_normals(pts)?;
    let ni = vertex_normal_generic(&normals).ok_or((usize::MAX, 0.0))?;
    let mut acc = T::constant(0.0);
    for j in 0..8 {
        let t = ni.dot(normals[j].cross(normals[(j + 1) % 8]));
        let a = T::constant(0.5) * t;
        acc = acc + a * a;
    }
    Ok(acc)
}

fn stencil<T: Real>(grid: &GridSurface, fan: &AuxiliaryFan) -> [V3<T>; 9] {
    let mut pts = [Vec3::ZERO.lift::<T>(); 9];
    pts[0] = grid.points[fan.center].lift::<T>();
    for j in 0..8 {
        pts[j + 1] = grid.points[fan.neighbors[j]].lift::<T>();
    }
    pts
}

/// A_i = sum_j a_ij^2 at interior point `index`.
pub fn developability_error(grid: &GridSurface, index: usize) -> Result<f64, DevmapError> {
    let fan = grid.neighbor_fan(index)?;
    let pts = stencil::<f64>(grid, &fan);
    point_error_generic(&pts).map_err(|e| lift_err(index, e))
}

fn lift_err(point: usize, (triangle, area): (usize, f64)) -> DevmapError {
    if triangle == usize::MAX {
        DevmapError::ZeroNormalSum { point }
    } else {
        DevmapError::DegenerateTriangle { point, triangle, area }
    }
}

/// Full per-point report (normals, areas, A_i, smoothed sqrt).
pub fn report(grid: &GridSurface, index: usize) -> Result<GaussMapReport, DevmapError> {
    let fan = grid.neighbor_fan(index)?;
    let normals = face_normals(grid, &fan)?;
    let ni = vertex_normal(&normals).map_err(|_| DevmapError::ZeroNormalSum { point: index })?;
    let areas = gauss_triangle_areas(ni, &normals);
    let error: f64 = areas.iter().map(|a| a * a).sum();
    Ok(GaussMapReport {
        point: index,
        face_normals: normals,
        vertex_normal: ni,
        areas,
        error,
        sqrt_error: smoothed_sqrt(error),
    })
}

/// Reports for every point of the evaluation set, in index order.
pub fn reports(
    grid: &GridSurface,
    config: &DevObjectiveConfig,
) -> Result<Vec<GaussMapReport>, DevmapError> {
    config.eval_set.iter().map(|&i| report(grid, i)).collect()
}

/// Filtered objective F = sum_{i in I} tanh(c (sqrt(A_i) + eps)).
pub fn objective(grid: &GridSurface, config: &DevObjectiveConfig) -> Result<f64, DevmapError> {
    let mut f = 0.0;
    for &i in &config.eval_set {
        let fan = grid.neighbor_fan(i)?;
        let pts = stencil::<f64>(grid, &fan);
        let a = point_error_generic(&pts).map_err(|e| lift_err(i, e))?;
        f += (config.c * (smoothed_sqrt(a) + config.epsilon)).tanh();
    }
    Ok(f)
}

/// Exact gradient of F w.r.t. the z-coordinates of `movable` (point indices;
/// the returned vector is ordered like `movable`). Accumulation follows the
/// fixed eval-set order, so results are bit-identical run to run.
pub fn objective_gradient(
    grid: &GridSurface,
    config: &DevObjectiveConfig,
    movable: &[usize],
) -> Result<Vec<f64>, DevmapError> {
    let slot: HashMap<usize, usize> =
        movable.iter().enumerate().map(|(k, &i)| (i, k)).collect();
    let mut grad = vec![0.0; movable.len()];
    let c = Dual9::constant(config.c);
    let eps = Dual9::constant(config.epsilon);
    for &i in &config.eval_set {
        let fan = grid.neighbor_fan(i)?;
        let mut pts = stencil::<Dual9>(grid, &fan);
        // Seed the 9 stencil z-coordinates as the dual directions.
        pts[0].z = Dual9::seeded(pts[0].z.v, 0);
        for j in 0..8 {
            pts[j + 1].z = Dual9::seeded(pts[j + 1].z.v, j + 1);
        }
        let a = point_error_generic(&pts).map_err(|e| lift_err(i, e))?;
        let term = (c * (smoothed_sqrt(a) + eps)).tanh();
        if let Some(&k) = slot.get(&fan.center) {
            grad[k] += term.d[0];
        }
        for j in 0..8 {
            if let Some(&k) = slot.get(&fan.neighbors[j]) {
                grad[k] += term.d[j + 1];
            }
        }
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_base_surface, BaseSurfaceSpec, PointRole};

    fn dome(nu: usize, nv: usize, rise: f64, jitter: f64, seed: u64) -> GridSurface {
        build_base_surface(&BaseSurfaceSpec {
            nu,
            nv,
            lx: 10.0,
            ly: 10.0,
            rise,
            jitter,
            seed,
        })
        .unwrap()
    }

    /// Unjittered grid with z = f(x): a single-curved (developable) surface.
    fn cylinder(nu: usize, nv: usize, f: impl Fn(f64) -> f64) -> GridSurface {
        let mut g = dome(nu, nv, 0.0, 0.0, 0);
        for p in &mut g.points {
            p.z = f(p.x);
        }
        g
    }

    #[test]
    fn flat_grid_normals_are_plus_z() {
        let g = dome(5, 5, 0.0, 0.01, 2);
        for &i in &g.interior_indices() {
            let fan = g.neighbor_fan(i).unwrap();
            for n in face_normals(&g, &fan).unwrap() {
                assert!((n.x).abs() < 1e-14 && (n.y).abs() < 1e-14);
                assert!((n.z - 1.0).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn tilted_plane_normals() {
        let mut g = dome(5, 5, 0.0, 0.0, 0);
        for p in &mut g.points {
            p.z = p.x;
        }
        let expect = 1.0 / 2.0f64.sqrt();
        for &i in &g.interior_indices() {
            let fan = g.neighbor_fan(i).unwrap();
            for n in face_normals(&g, &fan).unwrap() {
                assert!((n.x + expect).abs() < 1e-12);
                assert!((n.y).abs() < 1e-12);
                assert!((n.z - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn normals_orthogonal_to_triangle_edges() {
        let g = dome(3, 3, 2.0, 0.01, 11);
        let fan = g.neighbor_fan(4).unwrap();
        let normals = face_normals(&g, &fan).unwrap();
        for (j, (a, b, c)) in fan.triangles().iter().enumerate() {
            let e1 = g.points[*b] - g.points[*a];
            let e2 = g.points[*c] - g.points[*a];
            assert!(normals[j].dot(e1).abs() < 1e-12);
            assert!(normals[j].dot(e2).abs() < 1e-12);
            assert!((normals[j].norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn vertex_normal_of_identical_inputs() {
        let n = [Vec3::new(0.0, 0.0, 1.0); 8];
        let v = vertex_normal(&n).unwrap();
        assert!((v.z - 1.0).abs() < 1e-15 && v.x == 0.0 && v.y == 0.0);
    }

    #[test]
    fn vertex_normal_symmetric_tilts_cancel() {
        let th = 0.3f64;
        let up = Vec3::new(0.0, th.sin(), th.cos());
        let dn = Vec3::new(0.0, -th.sin(), th.cos());
        let n = [up, up, up, up, dn, dn, dn, dn];
        let v = vertex_normal(&n).unwrap();
        assert!(v.x.abs() < 1e-15 && v.y.abs() < 1e-15);
        assert!((v.z - 1.0).abs() < 1e-15);
    }

    #[test]
    fn vertex_normal_matches_brute_force() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let mut n = [Vec3::ZERO; 8];
        for v in &mut n {
            *v = Vec3::new(rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5), 1.0).normalized();
        }
        let got = vertex_normal(&n).unwrap();
        let mut s = Vec3::ZERO;
        for v in &n {
            s = s + *v;
        }
        let want = s.scale(1.0 / 8.0).normalized();
        assert!((got - want).norm() < 1e-14);
    }

    #[test]
    fn gauss_areas_zero_for_equal_normals() {
        let n = [Vec3::new(0.1, 0.0, 1.0).normalized(); 8];
        let ni = vertex_normal(&n).unwrap();
        assert!(gauss_triangle_areas(ni, &n).iter().all(|a| *a == 0.0));
    }

    #[test]
    fn gauss_area_small_angle_oracle() {
        // n_i=(0,0,1), n_j=(s,0,sqrt(1-s^2)), n_{j+1}=(0,s,sqrt(1-s^2)), s=0.1:
        // a ~ s^2/2 = 0.005 to first order; oracle is the direct cross product.
        let s = 0.1f64;
        let c = (1.0 - s * s).sqrt();
        let ni = Vec3::new(0.0, 0.0, 1.0);
        let nj = Vec3::new(s, 0.0, c);
        let nk = Vec3::new(0.0, s, c);
        let a = 0.5 * ni.dot(nj.cross(nk)).abs();
        assert!((a - 0.005).abs() < 1e-4);
        let chordal = 0.5 * ((nj - ni).cross(nk - ni)).dot(ni).abs();
        assert!((a - chordal).abs() < 1e-15);
    }

    #[test]
    fn flat_grid_error_is_exactly_zero() {
        let g = dome(11, 11, 0.0, 0.01, 3);
        for &i in &g.interior_indices() {
            assert_eq!(developability_error(&g, i).unwrap(), 0.0);
        }
    }

    #[test]
    fn cylinder_error_is_machine_zero() {
        let g = cylinder(21, 21, |x| 2.0 * (std::f64::consts::PI * x / 10.0).sin());
        for &i in &g.interior_indices() {
            assert!(developability_error(&g, i).unwrap() <= 1e-20);
        }
    }

    #[test]
    fn dome_error_positive_everywhere() {
        let g = dome(21, 21, 2.0, 0.015, 42);
        for &i in &g.interior_indices() {
            assert!(developability_error(&g, i).unwrap() > 0.0);
        }
    }

    #[test]
    fn flat_objective_is_analytic() {
        let g = dome(11, 11, 0.0, 0.01, 1);
        let cfg = DevObjectiveConfig::for_grid(&g, 100.0, 1e-6);
        assert_eq!(cfg.eval_set.len(), 81);
        let f = objective(&g, &cfg).unwrap();
        assert!((f - 81.0 * 1e-4f64.tanh()).abs() < 1e-10);
    }

    #[test]
    fn objective_bounded_by_set_size() {
        let g = dome(15, 15, 2.0, 0.01, 4);
        let cfg = DevObjectiveConfig::for_grid(&g, 100.0, 1e-6);
        let f = objective(&g, &cfg).unwrap();
        assert!(f > 0.0 && f < cfg.eval_set.len() as f64);
    }

    #[test]
    fn one_bad_point_saturates_to_one() {
        // Flat grid with one interior point pushed far out of plane: its term
        // saturates to ~1 while the rest stay at tanh(c eps).
        let mut g = dome(11, 11, 0.0, 0.0, 0);
        let bump = g.idx(5, 5);
        g.points[bump].z = 3.0;
        let cfg = DevObjectiveConfig::for_grid(&g, 100.0, 1e-6);
        let f = objective(&g, &cfg).unwrap();
        // The bump raises A_i at its 3x3 stencil's interior points (9 points).
        let base = cfg.eval_set.len() as f64 * (100.0 * 1e-6f64).tanh();
        assert!(f > base + 0.99);
        assert!(f < base + 9.01);
    }

    #[test]
    fn exempt_points_leave_eval_set_but_feed_neighbors() {
        let g = dome(7, 7, 2.0, 0.01, 8);
        let exempt = g.idx(3, 3);
        let g2 = g
            .classify_points(&crate::grid::CasePreset::Custom(vec![(
                exempt,
                PointRole::DevelopabilityExemptFixed,
            )]))
            .unwrap();
        let cfg = DevObjectiveConfig::for_grid(&g2, 100.0, 1e-6);
        assert!(!cfg.eval_set.contains(&exempt));
        assert_eq!(cfg.eval_set.len(), 24);
        // Neighbors still see the exempt point's coordinates.
        let n = g2.idx(3, 2);
        assert!(developability_error(&g2, n).unwrap() > 0.0);
    }

    fn fd_gradient(g: &GridSurface, cfg: &DevObjectiveConfig, movable: &[usize], h: f64) -> Vec<f64> {
        let mut out = Vec::with_capacity(movable.len());
        for &i in movable {
            let mut gp = g.clone();
            gp.points[i].z += h;
            let fp = objective(&gp, cfg).unwrap();
            let mut gm = g.clone();
            gm.points[i].z -= h;
            let fm = objective(&gm, cfg).unwrap();
            out.push((fp - fm) / (2.0 * h));
        }
        out
    }

    #[test]
    fn gradient_matches_central_differences() {
        for &c in &[10.0, 100.0] {
            let g = dome(7, 7, 2.0, 0.01, 17);
            let cfg = DevObjectiveConfig::for_grid(&g, c, 1e-6);
            let movable = g.interior_indices();
            let ana = objective_gradient(&g, &cfg, &movable).unwrap();
            let num = fd_gradient(&g, &cfg, &movable, 1e-6);
            for (a, n) in ana.iter().zip(&num) {
                if n.abs() > 1e-10 {
                    assert!(
                        ((a - n) / n).abs() <= 1e-5,
                        "c={c}: analytic {a} vs fd {n}"
                    );
                }
            }
        }
    }

    #[test]
    fn flat_gradient_is_zero() {
        let g = dome(9, 9, 0.0, 0.01, 2);
        let cfg = DevObjectiveConfig::for_grid(&g, 100.0, 1e-6);
        let movable = g.interior_indices();
        let grad = objective_gradient(&g, &cfg, &movable).unwrap();
        assert!(grad.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn gradient_scales_linearly_in_c_in_linear_regime() {
        // Nearly-flat shape keeps all c (sqrt(A)+eps) << 1 for both c values.
        let g = dome(7, 7, 0.001, 0.01, 6);
        let movable = g.interior_indices();
        let g1 = objective_gradient(
            &g,
            &DevObjectiveConfig::for_grid(&g, 0.5, 1e-6),
            &movable,
        )
        .unwrap();
        let g2 = objective_gradient(
            &g,
            &DevObjectiveConfig::for_grid(&g, 1.0, 1e-6),
            &movable,
        )
        .unwrap();
        for (a, b) in g1.iter().zip(&g2) {
            if b.abs() > 1e-12 {
                assert!((2.0 * a / b - 1.0).abs() < 1e-2);
            }
        }
    }

    #[test]
    fn objective_monotone_in_c_and_eps() {
        let g = dome(9, 9, 2.0, 0.01, 5);
        let f = |c: f64, e: f64| objective(&g, &DevObjectiveConfig::for_grid(&g, c, e)).unwrap();
        assert!(f(10.0, 1e-6) < f(100.0, 1e-6));
        assert!(f(100.0, 1e-6) < f(200.0, 1e-6));
        assert!(f(100.0, 1e-6) < f(100.0, 1e-3));
    }

    #[test]
    fn saturation_caps_large_errors() {
        // Replacing sqrt(A_i) with min(sqrt(A_i), K), K = 3/c, changes F by
        // less than |I| * 1e-3: large errors are underestimated by the filter.
        let g = dome(11, 11, 2.0, 0.015, 21);
        let cfg = DevObjectiveConfig::for_grid(&g, 100.0, 1e-6);
        let f = objective(&g, &cfg).unwrap();
        let k = 3.0 / cfg.c;
        let mut f_capped = 0.0;
        for &i in &cfg.eval_set {
            let r = report(&g, i).unwrap();
            f_capped += (cfg.c * (r.sqrt_error.min(k) + cfg.epsilon)).tanh();
        }
        assert!((f - f_capped).abs() < cfg.eval_set.len() as f64 * 1e-3);
    }

    fn rotate(g: &GridSurface, axis: Vec3, angle: f64, shift: Vec3) -> GridSurface {
        let k = axis.normalized();
        let (s, c) = angle.sin_cos();
        let mut out = g.clone();
        for p in &mut out.points {
            let v = *p;
            let rotated = v.scale(c) + k.cross(v).scale(s) + k.scale(k.dot(v) * (1.0 - c));
            *p = rotated + shift;
        }
        out
    }

    #[test]
    fn rigid_motion_and_scale_invariance() {
        let g = dome(9, 9, 2.0, 0.015, 33);
        let cfg = DevObjectiveConfig::for_grid(&g, 100.0, 1e-6);
        let f0 = objective(&g, &cfg).unwrap();

        let moved = rotate(&g, Vec3::new(0.3, -0.2, 1.0), 0.37, Vec3::new(4.0, -2.0, 7.0));
        let f1 = objective(&moved, &cfg).unwrap();
        assert!((f0 - f1).abs() <= 1e-10, "rigid drift {}", (f0 - f1).abs());

        let mut scaled = g.clone();
        for p in &mut scaled.points {
            *p = p.scale(3.7);
        }
        let f2 = objective(&scaled, &cfg).unwrap();
        assert!((f0 - f2).abs() <= 1e-10, "scale drift {}", (f0 - f2).abs());
    }

    #[test]
    fn degenerate_triangle_reports_index() {
        let mut g = dome(5, 5, 0.0, 0.0, 0);
        // Collapse a neighbor onto the center point (in plan).
        let c = g.idx(2, 2);
        let n = g.idx(3, 2);
        g.points[n].x = g.points[c].x;
        g.points[n].y = g.points[c].y;
        match developability_error(&g, c) {
            Err(DevmapError::DegenerateTriangle { point, .. }) => assert_eq!(point, c),
            other => panic!("expected degenerate triangle error, got {other:?}"),
        }
    }
}
