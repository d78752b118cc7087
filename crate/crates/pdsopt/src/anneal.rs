//! Upper-level global search: Metropolis simulated annealing over the design
//! heights Z with geometric cooling, bounded Gaussian moves, and an optional
//! derivative-free pattern-search polish of the best design.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::nlp::BoundsSpec;

/// One evaluation of the nested pipeline: compliance plus the lower-level
/// residual (for diagnostics). A failed evaluation carries W = +inf.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Evaluation {
    pub w: f64,
    pub f_residual: f64,
}

impl Evaluation {
    pub fn failed() -> Self {
        Evaluation { w: f64::INFINITY, f_residual: f64::NAN }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct AnnealConfig {
    /// Temperature reduction steps (default 100).
    pub steps: usize,
    /// Neighborhood searches per temperature level (default 10).
    pub moves_per_step: usize,
    /// Initial temperature; None calibrates from a 20-sample warm-up so the
    /// median uphill move is accepted with ~80% probability (20 extra
    /// evaluator calls).
    pub t0: Option<f64>,
    /// Geometric cooling ratio.
    pub cooling: f64,
    /// Gaussian move half-width at T = T0, meters; shrinks with T/T0.
    pub sigma0: f64,
    pub seed: u64,
    /// Pattern-search polish of the best Z after the chain.
    pub local_search: bool,
    pub local_search_budget: usize,
}

impl Default for AnnealConfig {
    fn default() -> Self {
        AnnealConfig {
            steps: 100,
            moves_per_step: 10,
            t0: None,
            cooling: 0.95,
            sigma0: 0.3,
            seed: 0,
            local_search: true,
            local_search_budget: 50,
        }
    }
}

/// One row of the annealing history.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalRecord {
    pub eval: usize,
    pub temperature: f64,
    pub w: f64,
    pub f_residual: f64,
    pub accepted: bool,
    pub z: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AnnealOutcome {
    pub best_z: Vec<f64>,
    pub best_w: f64,
    pub best_f_residual: f64,
    pub history: Vec<EvalRecord>,
    /// Total evaluator calls (chain + warm-up + polish).
    pub evaluations: usize,
}

/// Gaussian move with reflection at the bounds; reproducible from the rng.
pub fn propose_move(
    z: &[f64],
    sigma: f64,
    bounds: &BoundsSpec,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    z.iter()
        .enumerate()
        .map(|(i, &v)| {
            let step: f64 = rng.sample::<f64, _>(StandardNormal) * sigma;
            reflect(v + step, bounds.lower[i], bounds.upper[i])
        })
        .collect()
}

fn reflect(mut v: f64, lo: f64, hi: f64) -> f64 {
    if lo == hi {
        return lo;
    }
    if v >= lo && v <= hi {
        return v;
    }
    let span = hi - lo;
    // Fold into [lo, lo + 2 span) then mirror.
    let mut t = (v - lo) % (2.0 * span);
    if t < 0.0 {
        t += 2.0 * span;
    }
    v = if t <= span { lo + t } else { lo + 2.0 * span - t };
    v.clamp(lo, hi)
}

/// Serializable mid-run chain state: everything needed to continue the walk
/// (rng included), written to the checkpoint after each temperature step.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AnnealState {
    pub t0: f64,
    /// Next temperature step to run.
    pub next_step: usize,
    pub rng: ChaCha8Rng,
    pub current_z: Vec<f64>,
    pub current: Evaluation,
    pub best_z: Vec<f64>,
    pub best: Evaluation,
    pub history: Vec<EvalRecord>,
    /// Evaluations consumed by the chain (initial design included).
    pub chain_evals: usize,
    /// Total evaluator calls including warm-up.
    pub evaluations: usize,
}

/// Evaluate the initial design and calibrate T0 (warm-up) when it is not
/// given; returns the state positioned before step 0.
pub fn anneal_start<E>(
    initial_z: &[f64],
    config: &AnnealConfig,
    bounds: &BoundsSpec,
    mut evaluate: E,
) -> AnnealState
where
    E: FnMut(&[f64]) -> Evaluation,
{
    assert!(config.steps >= 1 && config.moves_per_step >= 1);
    assert!(config.cooling > 0.0 && config.cooling < 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut evaluations = 0usize;

    let current_z = initial_z.to_vec();
    let e0 = evaluate(&current_z);
    evaluations += 1;

    // Warm-up temperature calibration: median uphill |dW| accepted at ~80%.
    let t0 = match config.t0 {
        Some(t) => t,
        None => {
            let mut deltas = Vec::new();
            for _ in 0..20 {
                let zt = propose_move(&current_z, config.sigma0, bounds, &mut rng);
                let et = evaluate(&zt);
                evaluations += 1;
                if et.w.is_finite() && e0.w.is_finite() {
                    deltas.push((et.w - e0.w).abs());
                }
            }
            deltas.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let median = deltas.get(deltas.len() / 2).copied().unwrap_or(1.0);
            let med = if median > 0.0 { median } else { 1.0 };
            -med / 0.8f64.ln()
        }
    };

    let history = vec![EvalRecord {
        eval: 0,
        temperature: t0,
        w: e0.w,
        f_residual: e0.f_residual,
        accepted: true,
        z: current_z.clone(),
    }];

    AnnealState {
        t0,
        next_step: 0,
        rng,
        current_z: current_z.clone(),
        current: e0,
        best_z: current_z,
        best: e0,
        history,
        chain_evals: 1,
        evaluations,
    }
}

/// Run the remaining temperature steps; `on_step` fires after each completed
/// step with the up-to-date state (checkpoint hook).
pub fn anneal_run<E, S>(
    state: &mut AnnealState,
    config: &AnnealConfig,
    bounds: &BoundsSpec,
    mut evaluate: E,
    mut on_step: S,
) where
    E: FnMut(&[f64]) -> Evaluation,
    S: FnMut(&AnnealState),
{
    let budget = config.steps * config.moves_per_step;
    while state.next_step < config.steps && state.chain_evals < budget {
        let step = state.next_step;
        let temperature = state.t0 * config.cooling.powi(step as i32);
        let sigma = config.sigma0 * temperature / state.t0;
        for _ in 0..config.moves_per_step {
            if state.chain_evals >= budget {
                break;
            }
            let zt = propose_move(&state.current_z, sigma, bounds, &mut state.rng);
            let et = evaluate(&zt);
            state.evaluations += 1;
            state.chain_evals += 1;
            let accepted = if !et.w.is_finite() {
                false
            } else if !state.current.w.is_finite() || et.w <= state.current.w {
                true
            } else {
                let p = (-(et.w - state.current.w) / temperature).exp();
                state.rng.gen::<f64>() < p
            };
            state.history.push(EvalRecord {
                eval: state.history.len(),
                temperature,
                w: et.w,
                f_residual: et.f_residual,
                accepted,
                z: zt.clone(),
            });
            if accepted {
                state.current_z = zt.clone();
                state.current = et;
            }
            if et.w.is_finite() && et.w < state.best.w {
                state.best_z = zt;
                state.best = et;
            }
        }
        state.next_step = step + 1;
        on_step(state);
    }
}

/// Optional local polish of the chain's best design; consumes the state.
pub fn anneal_finish<E>(
    mut state: AnnealState,
    config: &AnnealConfig,
    bounds: &BoundsSpec,
    mut evaluate: E,
) -> AnnealOutcome
where
    E: FnMut(&[f64]) -> Evaluation,
{
    if config.local_search && config.local_search_budget > 0 {
        let (z, e, used) = pattern_search(
            &state.best_z,
            state.best,
            bounds,
            config.sigma0,
            config.local_search_budget,
            &mut evaluate,
            &mut state.history,
        );
        state.evaluations += used;
        if e.w < state.best.w {
            state.best_z = z;
            state.best = e;
        }
    }
    AnnealOutcome {
        best_z: state.best_z,
        best_w: state.best.w,
        best_f_residual: state.best.f_residual,
        history: state.history,
        evaluations: state.evaluations,
    }
}

/// Metropolis SA over the box `bounds`. The first evaluator call is the
/// initial design, so the chain makes exactly `steps * moves_per_step` calls
/// (plus warm-up when t0 is auto, plus the local-search budget).
pub fn anneal<E>(
    initial_z: &[f64],
    config: &AnnealConfig,
    bounds: &BoundsSpec,
    mut evaluate: E,
) -> AnnealOutcome
where
    E: FnMut(&[f64]) -> Evaluation,
{
    let mut state = anneal_start(initial_z, config, bounds, &mut evaluate);
    anneal_run(&mut state, config, bounds, &mut evaluate, |_| {});
    anneal_finish(state, config, bounds, evaluate)
}

/// Greedy coordinate-probe polish with shrinking step; returns the improved
/// point and the number of evaluator calls used.
fn pattern_search<E>(
    z0: &[f64],
    e0: Evaluation,
    bounds: &BoundsSpec,
    step0: f64,
    budget: usize,
    evaluate: &mut E,
    history: &mut Vec<EvalRecord>,
) -> (Vec<f64>, Evaluation, usize)
where
    E: FnMut(&[f64]) -> Evaluation,
{
    let mut z = z0.to_vec();
    let mut e = e0;
    let mut step = step0;
    let mut used = 0usize;
    while used < budget && step > 1e-9 {
        let mut improved = false;
        'sweep: for i in 0..z.len() {
            for &dir in &[1.0, -1.0] {
                if used >= budget {
                    break 'sweep;
                }
                let mut zt = z.clone();
                zt[i] = (zt[i] + dir * step).clamp(bounds.lower[i], bounds.upper[i]);
                if zt[i] == z[i] {
                    continue;
                }
                let et = evaluate(&zt);
                used += 1;
                let better = et.w.is_finite() && et.w < e.w;
                history.push(EvalRecord {
                    eval: history.len(),
                    temperature: 0.0,
                    w: et.w,
                    f_residual: et.f_residual,
                    accepted: better,
                    z: zt.clone(),
                });
                if better {
                    z = zt;
                    e = et;
                    improved = true;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    (z, e, used)
}
