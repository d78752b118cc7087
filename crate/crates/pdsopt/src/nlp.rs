//! Bound-constrained gradient-based local minimizer (projected L-BFGS with a
//! monotone backtracking line search along the projected path), and the
//! lower-level solve that drives a grid toward piecewise developability.

use thiserror::Error;

use crate::devmap::{self, DevObjectiveConfig};
use crate::grid::GridSurface;

#[derive(Debug, Error)]
pub enum NlpError {
    #[error("bounds invalid at component {index}: lower {lower} > upper {upper}")]
    BadBounds { index: usize, lower: f64, upper: f64 },
    #[error("initial point infeasible at component {index}: {value} not in [{lower}, {upper}]")]
    InfeasibleStart { index: usize, value: f64, lower: f64, upper: f64 },
    #[error("callback failed at iterate {iterate:?}: {message}")]
    Callback { message: String, iterate: Vec<f64> },
}

/// Per-variable box bounds.
#[derive(Clone, Debug)]
pub struct BoundsSpec {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl BoundsSpec {
    /// Symmetric box `x0 +- halfwidth` around a reference point.
    pub fn around(x0: &[f64], halfwidth: f64) -> Self {
        BoundsSpec {
            lower: x0.iter().map(|v| v - halfwidth).collect(),
            upper: x0.iter().map(|v| v + halfwidth).collect(),
        }
    }

    pub fn validate(&self, x0: &[f64]) -> Result<(), NlpError> {
        for i in 0..self.lower.len() {
            if self.lower[i] > self.upper[i] {
                return Err(NlpError::BadBounds {
                    index: i,
                    lower: self.lower[i],
                    upper: self.upper[i],
                });
            }
            if x0[i] < self.lower[i] || x0[i] > self.upper[i] {
                return Err(NlpError::InfeasibleStart {
                    index: i,
                    value: x0[i],
                    lower: self.lower[i],
                    upper: self.upper[i],
                });
            }
        }
        Ok(())
    }

    #[inline]
    pub fn project(&self, x: &mut [f64]) {
        for i in 0..x.len() {
            x[i] = x[i].clamp(self.lower[i], self.upper[i]);
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .enumerate()
            .all(|(i, &v)| v >= self.lower[i] && v <= self.upper[i])
    }
}

#[derive(Clone, Debug)]
pub struct NlpSettings {
    /// Stop when the projected-gradient 2-norm falls below this.
    pub grad_tol: f64,
    /// Stop when the objective decrease stalls below this (absolute).
    pub f_tol: f64,
    pub max_iter: usize,
    /// Armijo sufficient-decrease constant.
    pub armijo_c1: f64,
    /// Backtracking shrink factor.
    pub backtrack: f64,
    pub max_backtracks: usize,
    /// L-BFGS memory.
    pub memory: usize,
}

impl Default for NlpSettings {
    fn default() -> Self {
        NlpSettings {
            grad_tol: 1e-6,
            f_tol: 1e-10,
            max_iter: 2000,
            armijo_c1: 1e-4,
            backtrack: 0.5,
            max_backtracks: 40,
            memory: 10,
        }
    }
}

/// Which stopping rule fired.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    ProjectedGradient,
    Stagnation,
    MaxIterations,
}

#[derive(Clone, Copy, Debug)]
pub struct IterRecord {
    pub iter: usize,
    pub f: f64,
    pub projected_grad_norm: f64,
}

#[derive(Clone, Debug)]
pub struct MinimizeResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub stop: StopReason,
    pub history: Vec<IterRecord>,
}

fn pg_norm(x: &[f64], g: &[f64], bounds: &BoundsSpec) -> f64 {
    let mut acc = 0.0;
    for i in 0..x.len() {
        let step = (x[i] - g[i]).clamp(bounds.lower[i], bounds.upper[i]) - x[i];
        acc += step * step;
    }
    acc.sqrt()
}

/// Minimize `f` over a box, using `g` for gradients. Accepted iterates have
/// non-increasing objective values; every iterate stays inside the box.
pub fn minimize_bounded<F, G>(
    mut f: F,
    mut g: G,
    x0: &[f64],
    bounds: &BoundsSpec,
    settings: &NlpSettings,
) -> Result<MinimizeResult, NlpError>
where
    F: FnMut(&[f64]) -> Result<f64, String>,
    G: FnMut(&[f64]) -> Result<Vec<f64>, String>,
{
    bounds.validate(x0)?;
    let n = x0.len();
    let call_f = |f: &mut F, x: &[f64]| -> Result<f64, NlpError> {
        f(x).map_err(|message| NlpError::Callback { message, iterate: x.to_vec() })
    };
    let call_g = |g: &mut G, x: &[f64]| -> Result<Vec<f64>, NlpError> {
        g(x).map_err(|message| NlpError::Callback { message, iterate: x.to_vec() })
    };

    let mut x = x0.to_vec();
    let mut fx = call_f(&mut f, &x)?;
    let mut gx = call_g(&mut g, &x)?;
    let mut history = Vec::new();

    // L-BFGS memory.
    let mut s_mem: Vec<Vec<f64>> = Vec::new();
    let mut y_mem: Vec<Vec<f64>> = Vec::new();
    let mut rho: Vec<f64> = Vec::new();

    let mut stop = StopReason::MaxIterations;
    for iter in 0..=settings.max_iter {
        let pg = pg_norm(&x, &gx, bounds);
        history.push(IterRecord { iter, f: fx, projected_grad_norm: pg });
        if pg <= settings.grad_tol {
            stop = StopReason::ProjectedGradient;
            break;
        }
        if iter == settings.max_iter {
            break;
        }

        // Active set: variables pinned at a bound with the gradient pushing
        // further out are frozen this iteration.
        let active: Vec<bool> = (0..n)
            .map(|i| {
                (x[i] <= bounds.lower[i] && gx[i] > 0.0)
                    || (x[i] >= bounds.upper[i] && gx[i] < 0.0)
            })
            .collect();

        // Two-loop recursion on the free subspace.
        let mut d: Vec<f64> = gx
            .iter()
            .enumerate()
            .map(|(i, &v)| if active[i] { 0.0 } else { -v })
            .collect();
        let m = s_mem.len();
        let mut alpha = vec![0.0; m];
        for k in (0..m).rev() {
            let a = rho[k] * dotp(&s_mem[k], &d);
            alpha[k] = a;
            for i in 0..n {
                d[i] -= a * y_mem[k][i];
            }
        }
        if m > 0 {
            let sy = 1.0 / rho[m - 1];
            let yy = dotp(&y_mem[m - 1], &y_mem[m - 1]);
            let scale = sy / yy;
            for v in &mut d {
                *v *= scale;
            }
        }
        for k in 0..m {
            let b = rho[k] * dotp(&y_mem[k], &d);
            for i in 0..n {
                d[i] += (alpha[k] - b) * s_mem[k][i];
            }
        }
        for i in 0..n {
            if active[i] {
                d[i] = 0.0;
            }
        }
        // Fall back to steepest descent if the quasi-Newton direction is not
        // a descent direction.
        if dotp(&d, &gx) >= 0.0 {
            for i in 0..n {
                d[i] = if active[i] { 0.0 } else { -gx[i] };
            }
            s_mem.clear();
            y_mem.clear();
            rho.clear();
        }

        // Backtracking Armijo search along the projected path.
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..settings.max_backtracks {
            let mut xt: Vec<f64> = (0..n).map(|i| x[i] + step * d[i]).collect();
            bounds.project(&mut xt);
            let dx: Vec<f64> = (0..n).map(|i| xt[i] - x[i]).collect();
            let gdx = dotp(&gx, &dx);
            if dx.iter().all(|v| *v == 0.0) {
                break;
            }
            let ft = call_f(&mut f, &xt)?;
            if ft <= fx + settings.armijo_c1 * gdx.min(0.0) && ft <= fx {
                accepted = Some((xt, ft));
                break;
            }
            step *= settings.backtrack;
        }
        let Some((x_new, f_new)) = accepted else {
            stop = StopReason::Stagnation;
            break;
        };

        let g_new = call_g(&mut g, &x_new)?;
        let s: Vec<f64> = (0..n).map(|i| x_new[i] - x[i]).collect();
        let y: Vec<f64> = (0..n).map(|i| g_new[i] - gx[i]).collect();
        let sy = dotp(&s, &y);
        if sy > 1e-12 * norm(&s) * norm(&y) {
            s_mem.push(s);
            y_mem.push(y);
            rho.push(1.0 / sy);
            if s_mem.len() > settings.memory {
                s_mem.remove(0);
                y_mem.remove(0);
                rho.remove(0);
            }
        }

        let decrease = fx - f_new;
        x = x_new;
        fx = f_new;
        gx = g_new;
        if decrease.abs() <= settings.f_tol {
            let pg = pg_norm(&x, &gx, bounds);
            history.push(IterRecord { iter: iter + 1, f: fx, projected_grad_norm: pg });
            stop = StopReason::Stagnation;
            break;
        }
    }

    Ok(MinimizeResult { x, f: fx, stop, history })
}

fn dotp(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dotp(a, a).sqrt()
}

/// Result of a lower-level developability solve.
#[derive(Clone, Debug)]
pub struct LowerLevelSolution {
    pub grid: GridSurface,
    pub objective: f64,
    pub stop: StopReason,
    /// Objective history: (iter, F, projected gradient norm).
    pub history: Vec<IterRecord>,
}

/// Lower level: minimize F over the z-coordinates of free points with
/// box bounds. Plan coordinates and all fixed/design/exempt heights are left
/// untouched.
pub fn solve_lower_level(
    grid: &GridSurface,
    config: &DevObjectiveConfig,
    bounds: &BoundsSpec,
    settings: &NlpSettings,
) -> Result<LowerLevelSolution, NlpError> {
    let movable = grid.free_indices();
    let x0: Vec<f64> = movable.iter().map(|&i| grid.points[i].z).collect();
    let base = grid.clone();
    let mv = movable.clone();
    let f = move |x: &[f64]| -> Result<f64, String> {
        let g = base.with_z_at(&mv, x);
        devmap::objective(&g, config).map_err(|e| e.to_string())
    };
    let base2 = grid.clone();
    let mv2 = movable.clone();
    let gf = move |x: &[f64]| -> Result<Vec<f64>, String> {
        let g = base2.with_z_at(&mv2, x);
        devmap::objective_gradient(&g, config, &mv2).map_err(|e| e.to_string())
    };
    let res = minimize_bounded(f, gf, &x0, bounds, settings)?;
    Ok(LowerLevelSolution {
        grid: grid.with_z_at(&movable, &res.x),
        objective: res.f,
        stop: res.stop,
        history: res.history,
    })
}
