//! Linear-elastic shell finite-element analysis of the quad grid.
//!
//! Element: flat 4-node shell on the local best-fit plane of the (possibly
//! warped) quad: bilinear membrane + Mindlin plate bending with
//! Dvorkin/Bathe assumed transverse shear tying (MITC4) to avoid shear
//! locking, a small drilling-rotation penalty, and a rigid-link projection
//! for warped quads. Units: m, kN, kN/m^2; compliance in kN*m.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::grid::GridSurface;
use crate::math::Vec3;

#[derive(Debug, Error)]
pub enum FemError {
    #[error("invalid material: {0}")]
    BadMaterial(String),
    #[error("element {element} is degenerate (Jacobian determinant {det:.3e})")]
    DegenerateElement { element: usize, det: f64 },
    #[error(
        "stiffness matrix is singular at node {node}, dof {dof} (near-null direction; \
         check supports for rigid-body modes)"
    )]
    Singular { node: usize, dof: usize },
    #[error("model has no elements")]
    Empty,
}

/// Isotropic shell material.
#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize)]
pub struct ShellMaterial {
    /// Young's modulus, kN/m^2.
    pub youngs: f64,
    pub poisson: f64,
    /// Shell thickness, m.
    pub thickness: f64,
}

impl ShellMaterial {
    /// Paper values: E = 20 GPa, nu = 0.2, t = 0.1 m.
    pub fn reference_default() -> Self {
        ShellMaterial { youngs: 2.0e7, poisson: 0.2, thickness: 0.1 }
    }

    pub fn validate(&self) -> Result<(), FemError> {
        if self.youngs <= 0.0 {
            return Err(FemError::BadMaterial(format!("E = {} must be > 0", self.youngs)));
        }
        if !(0.0..0.5).contains(&self.poisson) {
            return Err(FemError::BadMaterial(format!(
                "Poisson ratio {} outside [0, 0.5)",
                self.poisson
            )));
        }
        if self.thickness <= 0.0 {
            return Err(FemError::BadMaterial(format!(
                "thickness {} must be > 0",
                self.thickness
            )));
        }
        Ok(())
    }
}

/// Distributed area load.
#[derive(Clone, Copy, Debug)]
pub struct AreaLoad {
    /// Magnitude, kN/m^2.
    pub q: f64,
    /// Load direction (unit-normalized at use); vertical by default.
    pub direction: Vec3,
    /// If true, q acts per unit plan area instead of per unit surface area.
    pub on_plan_area: bool,
}

impl AreaLoad {
    pub fn vertical(q: f64) -> Self {
        AreaLoad { q, direction: Vec3::new(0.0, 0.0, -1.0), on_plan_area: false }
    }
}

/// Per-node boundary condition: fixed flags and prescribed values for the six
/// DOFs (ux, uy, uz, rx, ry, rz) in the global frame.
#[derive(Clone, Copy, Debug, Default)]
pub struct NodeBc {
    pub fixed: [bool; 6],
    pub value: [f64; 6],
}

impl NodeBc {
    pub fn free() -> Self {
        NodeBc::default()
    }

    /// Pin: all three translations fixed at zero.
    pub fn pinned() -> Self {
        NodeBc { fixed: [true, true, true, false, false, false], value: [0.0; 6] }
    }

    pub fn clamped() -> Self {
        NodeBc { fixed: [true; 6], value: [0.0; 6] }
    }
}

/// Shell FE model: nodes, quad elements, supports, load.
#[derive(Clone, Debug)]
pub struct FemModel {
    pub nodes: Vec<Vec3>,
    pub quads: Vec<[usize; 4]>,
    pub supports: Vec<NodeBc>,
    pub material: ShellMaterial,
    pub load: AreaLoad,
}

/// Principal bending moments at an element center, kN*m/m.
#[derive(Clone, Copy, Debug)]
pub struct ElementMoments {
    pub mxx: f64,
    pub myy: f64,
    pub mxy: f64,
    /// Principal values, m1 >= m2.
    pub m1: f64,
    pub m2: f64,
}

impl ElementMoments {
    pub fn m_max(&self) -> f64 {
        self.m1
    }
}

/// Solved state: displacements, compliance, element moments.
#[derive(Clone, Debug)]
pub struct FemResult {
    /// Per node: ux, uy, uz, rx, ry, rz.
    pub displacements: Vec<[f64; 6]>,
    /// External work f^T u, kN*m.
    pub compliance: f64,
    /// u^T K u, for the work-balance check.
    pub strain_energy_twice: f64,
    pub moments: Vec<ElementMoments>,
}

/// Principal values of the 2x2 moment tensor, m1 >= m2.
pub fn principal_moments(mxx: f64, myy: f64, mxy: f64) -> (f64, f64) {
    let mean = 0.5 * (mxx + myy);
    let r = (0.25 * (mxx - myy).powi(2) + mxy * mxy).sqrt();
    (mean + r, mean - r)
}

const GAUSS2: [f64; 2] = [-0.577_350_269_189_625_8, 0.577_350_269_189_625_8];
/// Corner (xi, eta) of the bilinear quad.
const CORNERS: [(f64, f64); 4] = [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)];

fn shape(xi: f64, eta: f64) -> [f64; 4] {
    let mut n = [0.0; 4];
    for (k, (xk, ek)) in CORNERS.iter().enumerate() {
        n[k] = 0.25 * (1.0 + xi * xk) * (1.0 + eta * ek);
    }
    n
}

fn shape_deriv(xi: f64, eta: f64) -> ([f64; 4], [f64; 4]) {
    let mut dxi = [0.0; 4];
    let mut deta = [0.0; 4];
    for (k, (xk, ek)) in CORNERS.iter().enumerate() {
        dxi[k] = 0.25 * xk * (1.0 + eta * ek);
        deta[k] = 0.25 * ek * (1.0 + xi * xk);
    }
    (dxi, deta)
}

/// Geometry of one element in its local frame.
pub struct ShellElement {
    pub e1: Vec3,
    pub e2: Vec3,
    pub normal: Vec3,
    pub centroid: Vec3,
    /// In-plane node coordinates.
    pub x: [f64; 4],
    pub y: [f64; 4],
    /// Out-of-plane warp offsets.
    pub warp: [f64; 4],
}

impl ShellElement {
    pub fn new(p: &[Vec3; 4], element: usize) -> Result<Self, FemError> {
        let d1 = p[2] - p[0];
        let d2 = p[3] - p[1];
        let nraw = d1.cross(d2);
        if nraw.norm() < 1e-12 {
            return Err(FemError::DegenerateElement { element, det: 0.0 });
        }
        let normal = nraw.normalized();
        let centroid = (p[0] + p[1] + p[2] + p[3]).scale(0.25);
        let a = (p[1] + p[2]).scale(0.5) - (p[0] + p[3]).scale(0.5);
        let a = a - normal.scale(a.dot(normal));
        let e1 = a.normalized();
        let e2 = normal.cross(e1);
        let mut x = [0.0; 4];
        let mut y = [0.0; 4];
        let mut warp = [0.0; 4];
        for k in 0..4 {
            let r = p[k] - centroid;
            x[k] = e1.dot(r);
            y[k] = e2.dot(r);
            warp[k] = normal.dot(r);
        }
        // Positive Jacobian everywhere (checked at Gauss points and corners).
        for &(xi, eta) in CORNERS.iter() {
            let (det, _) = jacobian(&x, &y, xi, eta);
            if det <= 1e-12 {
                return Err(FemError::DegenerateElement { element, det });
            }
        }
        for &xi in &GAUSS2 {
            for &eta in &GAUSS2 {
                let (det, _) = jacobian(&x, &y, xi, eta);
                if det <= 1e-12 {
                    return Err(FemError::DegenerateElement { element, det });
                }
            }
        }
        Ok(ShellElement { e1, e2, normal, centroid, x, y, warp })
    }

    /// In-plane element area.
    pub fn area(&self) -> f64 {
        let mut a = 0.0;
        for &xi in &GAUSS2 {
            for &eta in &GAUSS2 {
                a += jacobian(&self.x, &self.y, xi, eta).0;
            }
        }
        a
    }

    /// 24x24 local stiffness (plane-point DOFs: u, v, w, tx, ty, tz per node).
    pub fn local_stiffness(&self, mat: &ShellMaterial, drilling_scale: f64) -> DMatrix<f64> {
        let e = mat.youngs;
        let nu = mat.poisson;
        let t = mat.thickness;
        let f_m = e * t / (1.0 - nu * nu);
        let f_b = e * t * t * t / (12.0 * (1.0 - nu * nu));
        let g = e / (2.0 * (1.0 + nu));
        let f_s = 5.0 / 6.0 * g * t;
        let cmat = |f: f64| {
            [
                [f, f * nu, 0.0],
                [f * nu, f, 0.0],
                [0.0, 0.0, f * (1.0 - nu) / 2.0],
            ]
        };
        let cm = cmat(f_m);
        let cb = cmat(f_b);

        let mut k = DMatrix::<f64>::zeros(24, 24);

        // Assumed-shear tying data at the four midside points.
        // gamma_xi rows tied at (0, +-1); gamma_eta rows tied at (+-1, 0).
        let tie = |xi: f64, eta: f64, along_xi: bool| -> [f64; 12] {
            let n = shape(xi, eta);
            let (dxi, deta) = shape_deriv(xi, eta);
            // Covariant row over (w, tx, ty) per node.
            let (mut xj, mut yj) = (0.0, 0.0);
            for kx in 0..4 {
                let d = if along_xi { dxi[kx] } else { deta[kx] };
                xj += d * self.x[kx];
                yj += d * self.y[kx];
            }
            let mut row = [0.0; 12];
            for kx in 0..4 {
                let d = if along_xi { dxi[kx] } else { deta[kx] };
                row[3 * kx] = d; // w
                row[3 * kx + 1] = -yj * n[kx]; // tx (beta_y = -tx)
                row[3 * kx + 2] = xj * n[kx]; // ty (beta_x = +ty)
            }
            row
        };
        let g_xi_top = tie(0.0, 1.0, true);
        let g_xi_bot = tie(0.0, -1.0, true);
        let g_eta_right = tie(1.0, 0.0, false);
        let g_eta_left = tie(-1.0, 0.0, false);

        for &xi in &GAUSS2 {
            for &eta in &GAUSS2 {
                let (det, jinv) = jacobian(&self.x, &self.y, xi, eta);
                let (dxi, deta) = shape_deriv(xi, eta);
                let mut dnx = [0.0; 4];
                let mut dny = [0.0; 4];
                for kx in 0..4 {
                    dnx[kx] = jinv[0][0] * dxi[kx] + jinv[0][1] * deta[kx];
                    dny[kx] = jinv[1][0] * dxi[kx] + jinv[1][1] * deta[kx];
                }
                let w = det; // unit Gauss weights for 2x2

                // Membrane: dofs (u, v) -> local 6k, 6k+1.
                let mut bm = [[0.0; 8]; 3];
                for kx in 0..4 {
                    bm[0][2 * kx] = dnx[kx];
                    bm[1][2 * kx + 1] = dny[kx];
                    bm[2][2 * kx] = dny[kx];
                    bm[2][2 * kx + 1] = dnx[kx];
                }
                accumulate_membrane(&mut k, &bm, &cm, w);

                // Bending: dofs (w, tx, ty) -> local 6k+2..6k+4.
                let mut bb = [[0.0; 12]; 3];
                for kx in 0..4 {
                    bb[0][3 * kx + 2] = dnx[kx]; // k_xx = d(beta_x)/dx, beta_x = ty
                    bb[1][3 * kx + 1] = -dny[kx]; // k_yy = d(beta_y)/dy, beta_y = -tx
                    bb[2][3 * kx + 2] = dny[kx];
                    bb[2][3 * kx + 1] = -dnx[kx];
                }
                accumulate3(&mut k, &bb, &cb, w);

                // Assumed shear: interpolate tied covariant strains, then
                // convert to cartesian with the inverse Jacobian here.
                let mut gxi = [0.0; 12];
                let mut geta = [0.0; 12];
                for c in 0..12 {
                    gxi[c] = 0.5 * (1.0 + eta) * g_xi_top[c] + 0.5 * (1.0 - eta) * g_xi_bot[c];
                    geta[c] =
                        0.5 * (1.0 + xi) * g_eta_right[c] + 0.5 * (1.0 - xi) * g_eta_left[c];
                }
                let mut bs = [[0.0; 12]; 2];
                for c in 0..12 {
                    bs[0][c] = jinv[0][0] * gxi[c] + jinv[0][1] * geta[c];
                    bs[1][c] = jinv[1][0] * gxi[c] + jinv[1][1] * geta[c];
                }
                for a in 0..12 {
                    let ia = 6 * (a / 3) + 2 + (a % 3);
                    for b in 0..12 {
                        let ib = 6 * (b / 3) + 2 + (b % 3);
                        k[(ia, ib)] += f_s * (bs[0][a] * bs[0][b] + bs[1][a] * bs[1][b]) * w;
                    }
                }
            }
        }

        // Drilling penalty keeps the local tz DOFs nonsingular on flat meshes.
        if drilling_scale > 0.0 {
            let mut max_rot_diag: f64 = 0.0;
            for kx in 0..4 {
                max_rot_diag = max_rot_diag.max(k[(6 * kx + 3, 6 * kx + 3)]);
                max_rot_diag = max_rot_diag.max(k[(6 * kx + 4, 6 * kx + 4)]);
            }
            let kd = drilling_scale * max_rot_diag;
            for kx in 0..4 {
                k[(6 * kx + 5, 6 * kx + 5)] += kd;
            }
        }
        k
    }

    /// 24x24 transformation from global nodal DOFs to local plane-point DOFs.
    pub fn transformation(&self) -> DMatrix<f64> {
        let mut t = DMatrix::<f64>::zeros(24, 24);
        let r = [
            [self.e1.x, self.e1.y, self.e1.z],
            [self.e2.x, self.e2.y, self.e2.z],
            [self.normal.x, self.normal.y, self.normal.z],
        ];
        let n = self.normal;
        for k in 0..4 {
            let z = self.warp[k];
            // skew(n): (n x w)_i = S w
            let s = [
                [0.0, -n.z, n.y],
                [n.z, 0.0, -n.x],
                [-n.y, n.x, 0.0],
            ];
            for i in 0..3 {
                for j in 0..3 {
                    t[(6 * k + i, 6 * k + j)] = r[i][j];
                    t[(6 * k + 3 + i, 6 * k + 3 + j)] = r[i][j];
                    // u_plane = u + z * (n x omega)
                    let mut rs = 0.0;
                    for m in 0..3 {
                        rs += r[i][m] * s[m][j];
                    }
                    t[(6 * k + i, 6 * k + 3 + j)] = z * rs;
                }
            }
        }
        t
    }

    /// Global 24x24 element stiffness.
    pub fn stiffness(&self, mat: &ShellMaterial, drilling_scale: f64) -> DMatrix<f64> {
        let kl = self.local_stiffness(mat, drilling_scale);
        let t = self.transformation();
        t.transpose() * kl * t
    }

    /// Consistent nodal forces (global frame) for the area load.
    pub fn consistent_load(&self, load: &AreaLoad) -> [Vec3; 4] {
        let dir = load.direction.normalized();
        let scale = if load.on_plan_area {
            self.normal.dot(Vec3::new(0.0, 0.0, 1.0)).abs()
        } else {
            1.0
        };
        let mut out = [Vec3::ZERO; 4];
        for &xi in &GAUSS2 {
            for &eta in &GAUSS2 {
                let (det, _) = jacobian(&self.x, &self.y, xi, eta);
                let n = shape(xi, eta);
                for k in 0..4 {
                    out[k] = out[k] + dir.scale(load.q * scale * n[k] * det);
                }
            }
        }
        out
    }

    /// Membrane strain (exx, eyy, gxy) at the element center.
    pub fn center_membrane_strain(&self, local_u: &DVector<f64>) -> [f64; 3] {
        let (_, jinv) = jacobian(&self.x, &self.y, 0.0, 0.0);
        let (dxi, deta) = shape_deriv(0.0, 0.0);
        let mut s = [0.0; 3];
        for k in 0..4 {
            let dnx = jinv[0][0] * dxi[k] + jinv[0][1] * deta[k];
            let dny = jinv[1][0] * dxi[k] + jinv[1][1] * deta[k];
            let u = local_u[6 * k];
            let v = local_u[6 * k + 1];
            s[0] += dnx * u;
            s[1] += dny * v;
            s[2] += dny * u + dnx * v;
        }
        s
    }

    /// Bending-moment tensor at the element center from local displacements.
    pub fn center_moments(&self, mat: &ShellMaterial, local_u: &DVector<f64>) -> ElementMoments {
        let e = mat.youngs;
        let nu = mat.poisson;
        let t = mat.thickness;
        let f_b = e * t * t * t / (12.0 * (1.0 - nu * nu));
        let (_, jinv) = jacobian(&self.x, &self.y, 0.0, 0.0);
        let (dxi, deta) = shape_deriv(0.0, 0.0);
        let (mut kxx, mut kyy, mut kxy) = (0.0, 0.0, 0.0);
        for k in 0..4 {
            let dnx = jinv[0][0] * dxi[k] + jinv[0][1] * deta[k];
            let dny = jinv[1][0] * dxi[k] + jinv[1][1] * deta[k];
            let tx = local_u[6 * k + 3];
            let ty = local_u[6 * k + 4];
            kxx += dnx * ty;
            kyy += -dny * tx;
            kxy += dny * ty - dnx * tx;
        }
        let mxx = f_b * (kxx + nu * kyy);
        let myy = f_b * (kyy + nu * kxx);
        let mxy = f_b * (1.0 - nu) / 2.0 * kxy;
        let (m1, m2) = principal_moments(mxx, myy, mxy);
        ElementMoments { mxx, myy, mxy, m1, m2 }
    }
}

fn accumulate_membrane(k: &mut DMatrix<f64>, b: &[[f64; 8]; 3], c: &[[f64; 3]; 3], w: f64) {
    // Membrane dofs: column c of b maps to local dof 6*(c/2) + c%2.
    for a in 0..8 {
        let ia = 6 * (a / 2) + (a % 2);
        for bcol in 0..8 {
            let ib = 6 * (bcol / 2) + (bcol % 2);
            let mut acc = 0.0;
            for i in 0..3 {
                for j in 0..3 {
                    acc += b[i][a] * c[i][j] * b[j][bcol];
                }
            }
            k[(ia, ib)] += acc * w;
        }
    }
}

fn accumulate3(k: &mut DMatrix<f64>, b: &[[f64; 12]; 3], c: &[[f64; 3]; 3], w: f64) {
    for a in 0..12 {
        let ia = 6 * (a / 3) + 2 + (a % 3);
        for bcol in 0..12 {
            let ib = 6 * (bcol / 3) + 2 + (bcol % 3);
            let mut acc = 0.0;
            for i in 0..3 {
                for j in 0..3 {
                    acc += b[i][a] * c[i][j] * b[j][bcol];
                }
            }
            k[(ia, ib)] += acc * w;
        }
    }
}

fn jacobian(x: &[f64; 4], y: &[f64; 4], xi: f64, eta: f64) -> (f64, [[f64; 2]; 2]) {
    let (dxi, deta) = shape_deriv(xi, eta);
    let (mut j00, mut j01, mut j10, mut j11) = (0.0, 0.0, 0.0, 0.0);
    for k in 0..4 {
        j00 += dxi[k] * x[k];
        j01 += dxi[k] * y[k];
        j10 += deta[k] * x[k];
        j11 += deta[k] * y[k];
    }
    let det = j00 * j11 - j01 * j10;
    let inv = [
        [j11 / det, -j01 / det],
        [-j10 / det, j00 / det],
    ];
    (det, inv)
}

/// Default drilling penalty scale (times the max rotational diagonal).
pub const DRILLING_SCALE: f64 = 1e-6;

/// Symmetric banded SPD matrix, lower band storage.
struct Banded {
    n: usize,
    bw: usize,
    /// data[i * (bw+1) + (bw - (i - j))] holds entry (i, j), j in [i-bw, i].
    data: Vec<f64>,
}

impl Banded {
    fn new(n: usize, bw: usize) -> Self {
        Banded { n, bw, data: vec![0.0; n * (bw + 1)] }
    }

    #[inline]
    fn at(&mut self, i: usize, j: usize) -> &mut f64 {
        debug_assert!(j <= i && i - j <= self.bw);
        &mut self.data[i * (self.bw + 1) + (self.bw - (i - j))]
    }

    #[inline]
    fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * (self.bw + 1) + (self.bw - (i - j))]
    }

    /// In-place Cholesky; returns the row of the first non-positive pivot.
    fn cholesky(&mut self) -> Result<(), usize> {
        for i in 0..self.n {
            let lo = i.saturating_sub(self.bw);
            for j in lo..=i {
                let mut sum = self.get(i, j);
                let kstart = lo.max(j.saturating_sub(self.bw));
                for k in kstart..j {
                    sum -= self.get(i, k) * self.get(j, k);
                }
                if i == j {
                    if sum <= 0.0 || !sum.is_finite() {
                        return Err(i);
                    }
                    *self.at(i, j) = sum.sqrt();
                } else {
                    *self.at(i, j) = sum / self.get(j, j);
                }
            }
        }
        Ok(())
    }

    fn solve(&self, b: &mut [f64]) {
        // Ly = b
        for i in 0..self.n {
            let lo = i.saturating_sub(self.bw);
            let mut sum = b[i];
            for j in lo..i {
                sum -= self.get(i, j) * b[j];
            }
            b[i] = sum / self.get(i, i);
        }
        // L^T x = y
        for i in (0..self.n).rev() {
            let hi = (i + self.bw).min(self.n - 1);
            let mut sum = b[i];
            for j in (i + 1)..=hi {
                sum -= self.get(j, i) * b[j];
            }
            b[i] = sum / self.get(i, i);
        }
    }
}

impl FemModel {
    /// Shell model over a grid surface: one quad per grid cell.
    pub fn from_grid(
        grid: &GridSurface,
        material: ShellMaterial,
        load: AreaLoad,
        supports: Vec<NodeBc>,
    ) -> Self {
        let mut quads = Vec::with_capacity((grid.nu - 1) * (grid.nv - 1));
        for iv in 0..grid.nv - 1 {
            for iu in 0..grid.nu - 1 {
                quads.push([
                    grid.idx(iu, iv),
                    grid.idx(iu + 1, iv),
                    grid.idx(iu + 1, iv + 1),
                    grid.idx(iu, iv + 1),
                ]);
            }
        }
        FemModel { nodes: grid.points.clone(), quads, supports, material, load }
    }

    /// Assemble, apply supports, factorize, solve; returns displacements,
    /// compliance, and per-element center moments.
    pub fn analyze(&self) -> Result<FemResult, FemError> {
        self.material.validate()?;
        if self.quads.is_empty() {
            return Err(FemError::Empty);
        }
        let nn = self.nodes.len();
        let ndof = 6 * nn;
        debug_assert_eq!(self.supports.len(), nn);

        // Element geometry + stiffness (deterministic element order).
        let mut elements = Vec::with_capacity(self.quads.len());
        let mut stiffs = Vec::with_capacity(self.quads.len());
        for (eid, q) in self.quads.iter().enumerate() {
            let p = [self.nodes[q[0]], self.nodes[q[1]], self.nodes[q[2]], self.nodes[q[3]]];
            let elem = ShellElement::new(&p, eid)?;
            stiffs.push(elem.stiffness(&self.material, DRILLING_SCALE));
            elements.push(elem);
        }

        // External load vector.
        let mut f = vec![0.0; ndof];
        for (elem, q) in elements.iter().zip(&self.quads) {
            let fe = elem.consistent_load(&self.load);
            for k in 0..4 {
                f[6 * q[k]] += fe[k].x;
                f[6 * q[k] + 1] += fe[k].y;
                f[6 * q[k] + 2] += fe[k].z;
            }
        }

        // Free-DOF numbering (natural order keeps the band small).
        let mut dof_map = vec![usize::MAX; ndof];
        let mut prescribed = vec![0.0; ndof];
        let mut nfree = 0;
        for n in 0..nn {
            for c in 0..6 {
                let d = 6 * n + c;
                if self.supports[n].fixed[c] {
                    prescribed[d] = self.supports[n].value[c];
                } else {
                    dof_map[d] = nfree;
                    nfree += 1;
                }
            }
        }

        // Bandwidth over free dofs.
        let mut bw = 0usize;
        for q in &self.quads {
            let mut dofs = Vec::with_capacity(24);
            for &n in q {
                for c in 0..6 {
                    let d = dof_map[6 * n + c];
                    if d != usize::MAX {
                        dofs.push(d);
                    }
                }
            }
            for &a in &dofs {
                for &b in &dofs {
                    bw = bw.max(a.abs_diff(b));
                }
            }
        }

        let mut k_red = Banded::new(nfree, bw);
        let mut rhs = vec![0.0; nfree];
        for (i, &fi) in f.iter().enumerate() {
            if dof_map[i] != usize::MAX {
                rhs[dof_map[i]] = fi;
            }
        }
        for (ke, q) in stiffs.iter().zip(&self.quads) {
            let gdof: Vec<usize> = q
                .iter()
                .flat_map(|&n| (0..6).map(move |c| 6 * n + c))
                .collect();
            for a in 0..24 {
                let ga = gdof[a];
                let ra = dof_map[ga];
                for b in 0..24 {
                    let gb = gdof[b];
                    let rb = dof_map[gb];
                    if ra != usize::MAX && rb != usize::MAX {
                        if rb <= ra {
                            *k_red.at(ra, rb) += ke[(a, b)];
                        }
                    } else if ra != usize::MAX && rb == usize::MAX {
                        rhs[ra] -= ke[(a, b)] * prescribed[gb];
                    }
                }
            }
        }

        k_red.cholesky().map_err(|row| {
            // Map the failing reduced row back to (node, dof).
            let gdof = dof_map.iter().position(|&d| d == row).unwrap_or(0);
            FemError::Singular { node: gdof / 6, dof: gdof % 6 }
        })?;
        k_red.solve(&mut rhs);

        let mut u = prescribed;
        for (i, &d) in dof_map.iter().enumerate() {
            if d != usize::MAX {
                u[i] = rhs[d];
            }
        }

        let compliance: f64 = f.iter().zip(&u).map(|(a, b)| a * b).sum();
        let mut strain2 = 0.0;
        let mut moments = Vec::with_capacity(self.quads.len());
        for ((elem, ke), q) in elements.iter().zip(&stiffs).zip(&self.quads) {
            let mut ue = DVector::<f64>::zeros(24);
            for k in 0..4 {
                for c in 0..6 {
                    ue[6 * k + c] = u[6 * q[k] + c];
                }
            }
            strain2 += (ke * &ue).dot(&ue);
            let local_u = elem.transformation() * ue;
            moments.push(elem.center_moments(&self.material, &local_u));
        }

        let displacements = (0..nn)
            .map(|n| {
                let mut d = [0.0; 6];
                d.copy_from_slice(&u[6 * n..6 * n + 6]);
                d
            })
            .collect();

        Ok(FemResult {
            displacements,
            compliance,
            strain_energy_twice: strain2,
            moments,
        })
    }
}
