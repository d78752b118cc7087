//! Rectangular grid of surface points shared by both optimization levels.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math::Vec3;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("grid needs at least 3x3 points, got {nu}x{nv}")]
    TooSmall { nu: usize, nv: usize },
    #[error("jitter half-width {delta} would let points cross half the parameter spacing {max}")]
    JitterTooLarge { delta: f64, max: f64 },
    #[error("point {index} is on the boundary and has no 8-neighbor fan")]
    NoFan { index: usize },
    #[error("layout references point index {index}, but the grid has {len} points")]
    LayoutOutOfRange { index: usize, len: usize },
    #[error("invalid base surface spec: {0}")]
    BadSpec(String),
}

/// Role of one grid point in the two-level problem.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PointRole {
    /// Lower-level variable (its z moves during the developability solve).
    Free,
    /// Fixed in both levels (corners of the case presets).
    GeometryFixed,
    /// Fixed in the lower level; its height is an upper-level variable.
    DesignVariable,
    /// Fixed in the lower level and excluded from the developability set I.
    DevelopabilityExemptFixed,
}

impl PointRole {
    /// True when the point's z is held constant during a lower-level solve.
    pub fn fixed_in_lower_level(self) -> bool {
        !matches!(self, PointRole::Free)
    }
}

/// The design state: an nu x nv grid of 3D points with per-point roles.
///
/// Immutable by convention: operations that change the shape return a new
/// surface (or are applied through explicit `with_*` constructors), so a
/// surface can be shared freely across threads.
#[derive(Clone, Debug, PartialEq)]
pub struct GridSurface {
    pub nu: usize,
    pub nv: usize,
    /// Row-major: index = iv * nu + iu.
    pub points: Vec<Vec3>,
    pub roles: Vec<PointRole>,
    pub lx: f64,
    pub ly: f64,
}

/// Ordered one-ring of an interior point: 8 neighbors in CCW order (seen from
/// +z) and the 8 fan triangles (point, neighbor j, neighbor j+1).
#[derive(Clone, Debug)]
pub struct AuxiliaryFan {
    pub center: usize,
    pub neighbors: [usize; 8],
}

impl AuxiliaryFan {
    pub fn triangles(&self) -> [(usize, usize, usize); 8] {
        let mut tris = [(0, 0, 0); 8];
        for j in 0..8 {
            tris[j] = (self.center, self.neighbors[j], self.neighbors[(j + 1) % 8]);
        }
        tris
    }
}

/// Analytic dome base surface with parameter-space jitter.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BaseSurfaceSpec {
    pub nu: usize,
    pub nv: usize,
    /// Plan dimensions in meters.
    pub lx: f64,
    pub ly: f64,
    /// Apex rise h of z(u,v) = h sin(pi u) sin(pi v), meters.
    pub rise: f64,
    /// Jitter half-width in normalized (u,v) parameter space.
    pub jitter: f64,
    pub seed: u64,
}

/// Built-in fixed-point layouts from the two numerical cases, or a custom one.
#[derive(Clone, Debug)]
pub enum CasePreset {
    /// Square plan: corners fixed, 4 edge midpoints + center are design heights.
    Case1,
    /// Rectangular plan: 5x3 sub-lattice fixed (11 design heights) plus 4
    /// developability-exempt points near the short edges.
    Case2,
    /// Explicit (index, role) assignments; unlisted points stay free.
    Custom(Vec<(usize, PointRole)>),
}

/// CCW one-ring offsets starting at +u, seen from +z.
const FAN_OFFSETS: [(isize, isize); 8] = [
    (1, 0),
    (1, 1),
    (0, 1),
    (-1, 1),
    (-1, 0),
    (-1, -1),
    (0, -1),
    (1, -1),
];

impl GridSurface {
    #[inline]
    pub fn idx(&self, iu: usize, iv: usize) -> usize {
        iv * self.nu + iu
    }

    #[inline]
    pub fn coords(&self, index: usize) -> (usize, usize) {
        (index % self.nu, index / self.nu)
    }

    #[inline]
    pub fn is_boundary(&self, index: usize) -> bool {
        let (iu, iv) = self.coords(index);
        iu == 0 || iv == 0 || iu == self.nu - 1 || iv == self.nv - 1
    }

    pub fn interior_indices(&self) -> Vec<usize> {
        (0..self.points.len())
            .filter(|&i| !self.is_boundary(i))
            .collect()
    }

    /// Evaluation set I of the developability objective: interior points minus exempt ones.
    pub fn evaluation_set(&self) -> Vec<usize> {
        (0..self.points.len())
            .filter(|&i| {
                !self.is_boundary(i) && self.roles[i] != PointRole::DevelopabilityExemptFixed
            })
            .collect()
    }

    /// Points whose z is a lower-level variable.
    pub fn free_indices(&self) -> Vec<usize> {
        (0..self.points.len())
            .filter(|&i| self.roles[i] == PointRole::Free)
            .collect()
    }

    /// Points whose height is an upper-level design variable, in index order.
    pub fn design_indices(&self) -> Vec<usize> {
        (0..self.points.len())
            .filter(|&i| self.roles[i] == PointRole::DesignVariable)
            .collect()
    }

    pub fn with_z_at(&self, indices: &[usize], z: &[f64]) -> GridSurface {
        assert_eq!(indices.len(), z.len());
        let mut out = self.clone();
        for (&i, &zi) in indices.iter().zip(z) {
            out.points[i].z = zi;
        }
        out
    }

    /// 8 CCW neighbors and fan triangles of an interior point.
    pub fn neighbor_fan(&self, index: usize) -> Result<AuxiliaryFan, GridError> {
        if self.is_boundary(index) {
            return Err(GridError::NoFan { index });
        }
        let (iu, iv) = self.coords(index);
        let mut neighbors = [0usize; 8];
        for (j, (du, dv)) in FAN_OFFSETS.iter().enumerate() {
            let nu = (iu as isize + du) as usize;
            let nv = (iv as isize + dv) as usize;
            neighbors[j] = self.idx(nu, nv);
        }
        Ok(AuxiliaryFan { center: index, neighbors })
    }

    /// Assign roles from a case preset. Returns a new surface.
    pub fn classify_points(&self, case: &CasePreset) -> Result<GridSurface, GridError> {
        let mut out = self.clone();
        out.roles = vec![PointRole::Free; self.points.len()];
        let sub = |frac: f64, n: usize| ((n - 1) as f64 * frac).round() as usize;
        match case {
            CasePreset::Case1 => {
                for &(fu, fv) in &[(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (1.0, 1.0)] {
                    let i = self.idx(sub(fu, self.nu), sub(fv, self.nv));
                    out.roles[i] = PointRole::GeometryFixed;
                }
                // Edge midpoints and the center carry the design heights.
                for &(fu, fv) in &[(0.5, 0.0), (0.5, 1.0), (0.0, 0.5), (1.0, 0.5), (0.5, 0.5)] {
                    let i = self.idx(sub(fu, self.nu), sub(fv, self.nv));
                    out.roles[i] = PointRole::DesignVariable;
                }
            }
            CasePreset::Case2 => {
                for ku in 0..5 {
                    for kv in 0..3 {
                        let fu = ku as f64 / 4.0;
                        let fv = kv as f64 / 2.0;
                        let i = self.idx(sub(fu, self.nu), sub(fv, self.nv));
                        let corner = (ku == 0 || ku == 4) && (kv == 0 || kv == 2);
                        out.roles[i] = if corner {
                            PointRole::GeometryFixed
                        } else {
                            PointRole::DesignVariable
                        };
                    }
                }
                // Approximation of Fig-8's four red points: interior points in
                // the side regions near the short edges.
                for &(fu, fv) in &[(0.25, 0.25), (0.25, 0.75), (0.75, 0.25), (0.75, 0.75)] {
                    let i = self.idx(sub(fu, self.nu), sub(fv, self.nv));
                    out.roles[i] = PointRole::DevelopabilityExemptFixed;
                }
            }
            CasePreset::Custom(layout) => {
                for &(i, role) in layout {
                    if i >= self.points.len() {
                        return Err(GridError::LayoutOutOfRange {
                            index: i,
                            len: self.points.len(),
                        });
                    }
                    out.roles[i] = role;
                }
            }
        }
        Ok(out)
    }
}

/// Build the jittered analytic dome z(u,v) = h sin(pi u) sin(pi v).
///
/// Boundary points keep exact parameters so the plan spans [0,Lx]x[0,Ly];
/// interior (u,v) get uniform jitter in [-delta, +delta]. Deterministic for a
/// fixed seed.
pub fn build_base_surface(spec: &BaseSurfaceSpec) -> Result<GridSurface, GridError> {
    if spec.nu < 3 || spec.nv < 3 {
        return Err(GridError::TooSmall { nu: spec.nu, nv: spec.nv });
    }
    if spec.lx <= 0.0 || spec.ly <= 0.0 {
        return Err(GridError::BadSpec(format!(
            "plan dimensions must be positive, got {} x {}",
            spec.lx, spec.ly
        )));
    }
    if spec.jitter < 0.0 {
        return Err(GridError::BadSpec(format!("jitter {} < 0", spec.jitter)));
    }
    let du = 1.0 / (spec.nu - 1) as f64;
    let dv = 1.0 / (spec.nv - 1) as f64;
    let max_jitter = 0.5 * du.min(dv);
    if spec.jitter >= max_jitter {
        return Err(GridError::JitterTooLarge { delta: spec.jitter, max: max_jitter });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut points = Vec::with_capacity(spec.nu * spec.nv);
    for iv in 0..spec.nv {
        for iu in 0..spec.nu {
            let mut u = iu as f64 * du;
            let mut v = iv as f64 * dv;
            let interior = iu > 0 && iv > 0 && iu < spec.nu - 1 && iv < spec.nv - 1;
            if interior && spec.jitter > 0.0 {
                u += rng.gen_range(-spec.jitter..=spec.jitter);
                v += rng.gen_range(-spec.jitter..=spec.jitter);
            }
            let z = spec.rise
                * (std::f64::consts::PI * u).sin()
                * (std::f64::consts::PI * v).sin();
            points.push(Vec3::new(u * spec.lx, v * spec.ly, z));
        }
    }
    Ok(GridSurface {
        nu: spec.nu,
        nv: spec.nv,
        roles: vec![PointRole::Free; points.len()],
        points,
        lx: spec.lx,
        ly: spec.ly,
    })
}
