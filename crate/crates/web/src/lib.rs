//! Browser bindings for three small interactive views: stochastic bridge
//! paths against their marginal band, and deterministic trajectories of the
//! bridge and straight-line conditional flows.

use sbfm::bridge_math::{
    cfm_conditional_flow, marginal_variance, mean_path, sb_conditional_flow, BridgeSchedule, EndpointPair,
    LatentState, TimePoint,
};
use sbfm::rng::{streams, RandomStream};
use sbfm::simulate::{euler_maruyama_sde, euler_ode, IntegrationPlan};
use sbfm::Result;
use wasm_bindgen::prelude::*;

fn js_err(e: sbfm::SbfmError) -> JsError {
    JsError::new(&e.to_string())
}

/// The 1-D view is a 2-D state with both coordinates identical; only the
/// first is reported.
fn line_pair(x0: f64, x1: f64) -> Result<EndpointPair> {
    EndpointPair::new(
        LatentState::from_concat(vec![x0, x0], 1)?,
        LatentState::from_concat(vec![x1, x1], 1)?,
    )
}

fn plane_pair(x0: [f64; 2], x1: [f64; 2]) -> Result<EndpointPair> {
    EndpointPair::new(
        LatentState::from_concat(x0.to_vec(), 1)?,
        LatentState::from_concat(x1.to_vec(), 1)?,
    )
}

/// Euler–Maruyama bridge paths in 1-D on `[0, 1 − ε]`, row-major
/// `n_paths × (n_steps + 1)`.
pub fn sde_paths_native(x0: f64, x1: f64, sigma: f64, n_paths: usize, n_steps: usize, seed: u64) -> Result<Vec<f64>> {
    let schedule = BridgeSchedule::new(sigma, BridgeSchedule::default().eps_clamp)?;
    let pair = line_pair(x0, x1)?;
    let plan = IntegrationPlan::new(n_steps, 0.0, 1.0 - schedule.eps_clamp, true)?;
    let mut out = Vec::with_capacity(n_paths * (n_steps + 1));
    for p in 0..n_paths {
        let mut rng = RandomStream::derive(seed, streams::SDE, p as u64);
        let traj = euler_maruyama_sde(&pair, &schedule, &pair.x0, &plan, &mut rng)?;
        out.extend(traj.states.iter().map(|s| s.as_slice()[0]));
    }
    Ok(out)
}

/// Mean and ±2 standard deviation band of the bridge marginal on `n + 1`
/// evenly spaced times in `[0, 1]`: rows `t`, `mean`, `lower`, `upper`.
pub fn marginal_band_native(x0: f64, x1: f64, sigma: f64, n: usize) -> Result<Vec<f64>> {
    let schedule = BridgeSchedule::new(sigma, BridgeSchedule::default().eps_clamp)?;
    let pair = line_pair(x0, x1)?;
    let n = n.max(1);
    let mut rows: Vec<Vec<f64>> = (0..4).map(|_| Vec::with_capacity(n + 1)).collect();
    for k in 0..=n {
        let t = TimePoint::new(k as f64 / n as f64)?;
        let m = mean_path(&pair, t)?.as_slice()[0];
        let sd = marginal_variance(&schedule, t).sqrt();
        rows[0].push(t.get());
        rows[1].push(m);
        rows[2].push(m - 2.0 * sd);
        rows[3].push(m + 2.0 * sd);
    }
    Ok(rows.concat())
}

/// 2-D ODE trajectories of one pair's conditional flow from starts scattered
/// around `x0` with scale `spread`, on `[ε, 1 − ε]`. `kind` is `"sb"` or
/// `"cfm"`. Row-major `n_paths × (n_steps + 1) × 2`.
#[allow(clippy::too_many_arguments)]
pub fn flow_paths_native(
    kind: &str,
    x0: [f64; 2],
    x1: [f64; 2],
    sigma: f64,
    spread: f64,
    n_paths: usize,
    n_steps: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let schedule = BridgeSchedule::new(sigma, BridgeSchedule::default().eps_clamp)?;
    let pair = plane_pair(x0, x1)?;
    let plan = IntegrationPlan::clamped(&schedule, n_steps, true)?;
    let mut rng = RandomStream::derive(seed, "web/flow-starts", 0);
    let cfm = cfm_conditional_flow(&pair)?;
    let mut out = Vec::with_capacity(n_paths * (n_steps + 1) * 2);
    for _ in 0..n_paths {
        let start = LatentState::from_concat(vec![x0[0] + spread * rng.normal(), x0[1] + spread * rng.normal()], 1)?;
        let traj = match kind {
            "cfm" => euler_ode(|_, _| Ok(cfm.clone()), &start, &plan)?,
            _ => euler_ode(|x, t| sb_conditional_flow(&pair, x, t, &schedule), &start, &plan)?,
        };
        for s in &traj.states {
            out.extend_from_slice(s.as_slice());
        }
    }
    Ok(out)
}

#[wasm_bindgen]
pub fn sde_paths(x0: f64, x1: f64, sigma: f64, n_paths: usize, n_steps: usize, seed: u32) -> Result<Vec<f64>, JsError> {
    sde_paths_native(x0, x1, sigma, n_paths, n_steps, seed as u64).map_err(js_err)
}

#[wasm_bindgen]
pub fn marginal_band(x0: f64, x1: f64, sigma: f64, n: usize) -> Result<Vec<f64>, JsError> {
    marginal_band_native(x0, x1, sigma, n).map_err(js_err)
}

#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn flow_paths(
    kind: &str,
    x0x: f64,
    x0y: f64,
    x1x: f64,
    x1y: f64,
    sigma: f64,
    spread: f64,
    n_paths: usize,
    n_steps: usize,
    seed: u32,
) -> Result<Vec<f64>, JsError> {
    flow_paths_native(kind, [x0x, x0y], [x1x, x1y], sigma, spread, n_paths, n_steps, seed as u64).map_err(js_err)
}
