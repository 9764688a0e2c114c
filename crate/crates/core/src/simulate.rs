//! Fixed-step integrators: Euler for velocity-field ODEs, Euler–Maruyama for
//! the bridge SDE, and a lockstep two-head Euler sampler.

use std::io::Write;

use crate::bridge_math::{bridge_sde_drift, BridgeSchedule, EndpointPair, LatentState, TimePoint};
use crate::error::{Result, SbfmError};
use crate::rng::RandomStream;

/// Default number of Euler steps used for sampling.
pub const DEFAULT_SAMPLING_STEPS: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegrationPlan {
    pub n_steps: usize,
    pub t_start: f64,
    pub t_end: f64,
    pub record_path: bool,
}

impl IntegrationPlan {
    pub fn new(n_steps: usize, t_start: f64, t_end: f64, record_path: bool) -> Result<Self> {
        if n_steps == 0 {
            return Err(SbfmError::Config("n_steps must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&t_start) || !(0.0..=1.0).contains(&t_end) || t_start >= t_end {
            return Err(SbfmError::Config(format!(
                "integration interval [{t_start}, {t_end}] must satisfy 0 <= t_start < t_end <= 1"
            )));
        }
        Ok(Self {
            n_steps,
            t_start,
            t_end,
            record_path,
        })
    }

    /// Sampling plan on the clamped interval `[ε, 1 − ε]`.
    pub fn clamped(schedule: &BridgeSchedule, n_steps: usize, record_path: bool) -> Result<Self> {
        let (lo, hi) = schedule.clamped_interval();
        Self::new(n_steps, lo, hi, record_path)
    }

    pub fn step_size(&self) -> f64 {
        (self.t_end - self.t_start) / self.n_steps as f64
    }

    /// Grid time `t_k`; the last node is pinned to `t_end`.
    pub fn time(&self, k: usize) -> f64 {
        if k == self.n_steps {
            self.t_end
        } else {
            self.t_start + k as f64 * self.step_size()
        }
    }

    pub fn with_steps(&self, n_steps: usize) -> Self {
        Self { n_steps, ..*self }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<LatentState>,
}

impl Trajectory {
    pub fn starting_at(plan: &IntegrationPlan, x: &LatentState) -> Self {
        let cap = if plan.record_path { plan.n_steps + 1 } else { 2 };
        let mut times = Vec::with_capacity(cap);
        let mut states = Vec::with_capacity(cap);
        times.push(plan.t_start);
        states.push(x.clone());
        Self { times, states }
    }

    /// Appends state `k` if the plan records paths (the last state is always kept).
    pub fn record(&mut self, plan: &IntegrationPlan, k: usize, x: &LatentState) {
        if plan.record_path || k == plan.n_steps {
            self.times.push(plan.time(k));
            self.states.push(x.clone());
        }
    }

    pub fn initial(&self) -> &LatentState {
        &self.states[0]
    }

    pub fn last(&self) -> &LatentState {
        self.states.last().expect("trajectory always holds the initial state")
    }

    pub fn into_last(mut self) -> LatentState {
        self.states.pop().expect("trajectory always holds the initial state")
    }
}

fn ensure_finite(x: &LatentState, step: usize) -> Result<()> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(SbfmError::Divergence { step })
    }
}

/// Explicit Euler: `x_{k+1} = x_k + h · field(x_k, t_k)`.
pub fn euler_ode<F>(mut field: F, x_init: &LatentState, plan: &IntegrationPlan) -> Result<Trajectory>
where
    F: FnMut(&LatentState, TimePoint) -> Result<LatentState>,
{
    let h = plan.step_size();
    let mut traj = Trajectory::starting_at(plan, x_init);
    let mut x = x_init.clone();
    for k in 0..plan.n_steps {
        let v = field(&x, TimePoint::saturating(plan.time(k)))?;
        x.check_partition(&v)?;
        for (xi, vi) in x.as_mut_slice().iter_mut().zip(v.as_slice()) {
            *xi += h * vi;
        }
        ensure_finite(&x, k)?;
        traj.record(plan, k + 1, &x);
    }
    Ok(traj)
}

/// Euler–Maruyama on `dX = (x1 − X)/(1 − t) dt + σ dW`.
pub fn euler_maruyama_sde(
    pair: &EndpointPair,
    schedule: &BridgeSchedule,
    x_init: &LatentState,
    plan: &IntegrationPlan,
    rng: &mut RandomStream,
) -> Result<Trajectory> {
    let hi = 1.0 - schedule.eps_clamp;
    if plan.t_end > hi + 1e-12 {
        return Err(SbfmError::TimeDomain {
            t: plan.t_end,
            lo: 0.0,
            hi,
        });
    }
    pair.x0.check_partition(x_init)?;
    let h = plan.step_size();
    let noise_scale = schedule.sigma * h.sqrt();
    let mut traj = Trajectory::starting_at(plan, x_init);
    let mut x = x_init.clone();
    for k in 0..plan.n_steps {
        let drift = bridge_sde_drift(pair, &x, TimePoint::saturating(plan.time(k)), schedule)?;
        for (xi, di) in x.as_mut_slice().iter_mut().zip(drift.as_slice()) {
            *xi += h * di;
            if noise_scale > 0.0 {
                *xi += noise_scale * rng.normal();
            }
        }
        ensure_finite(&x, k)?;
        traj.record(plan, k + 1, &x);
    }
    Ok(traj)
}

/// Lockstep Euler on the shared time grid where the audio block follows
/// `field_a` and the video block follows `field_v`. Both fields read the full
/// joint state at `t_k` before either block is advanced.
pub fn per_modality_trajectory<FA, FV>(
    mut field_a: FA,
    mut field_v: FV,
    x_init: &LatentState,
    plan: &IntegrationPlan,
) -> Result<Trajectory>
where
    FA: FnMut(&LatentState, TimePoint) -> Result<Vec<f64>>,
    FV: FnMut(&LatentState, TimePoint) -> Result<Vec<f64>>,
{
    let h = plan.step_size();
    let mut traj = Trajectory::starting_at(plan, x_init);
    let mut x = x_init.clone();
    for k in 0..plan.n_steps {
        let t = TimePoint::saturating(plan.time(k));
        let va = field_a(&x, t)?;
        let vv = field_v(&x, t)?;
        if va.len() != x.d_a() || vv.len() != x.d_v() {
            return Err(SbfmError::Dimension(format!(
                "head outputs ({}, {}) do not match blocks ({}, {})",
                va.len(),
                vv.len(),
                x.d_a(),
                x.d_v()
            )));
        }
        for (xi, vi) in x.audio_mut().iter_mut().zip(&va) {
            *xi += h * vi;
        }
        for (xi, vi) in x.video_mut().iter_mut().zip(&vv) {
            *xi += h * vi;
        }
        ensure_finite(&x, k)?;
        traj.record(plan, k + 1, &x);
    }
    Ok(traj)
}

pub fn per_modality_sample<FA, FV>(
    field_a: FA,
    field_v: FV,
    x_init: &LatentState,
    plan: &IntegrationPlan,
) -> Result<LatentState>
where
    FA: FnMut(&LatentState, TimePoint) -> Result<Vec<f64>>,
    FV: FnMut(&LatentState, TimePoint) -> Result<Vec<f64>>,
{
    let plan = IntegrationPlan {
        record_path: false,
        ..*plan
    };
    per_modality_trajectory(field_a, field_v, x_init, &plan).map(Trajectory::into_last)
}

/// Endpoint error at `base_steps · 2^i` for `i in 0..levels`.
pub fn step_refinement<F>(mut endpoint_error: F, base_steps: usize, levels: usize) -> Result<Vec<(usize, f64)>>
where
    F: FnMut(usize) -> Result<f64>,
{
    (0..levels)
        .map(|i| {
            let n = base_steps << i;
            endpoint_error(n).map(|e| (n, e))
        })
        .collect()
}

/// Tidy trajectory dump: `path_id, step, t, coord_0..coord_{d-1}`.
pub fn write_trajectories_csv<W: Write>(mut out: W, paths: &[Trajectory]) -> std::io::Result<()> {
    let d = paths.first().map_or(0, |p| p.initial().dim());
    let mut header = String::from("path_id,step,t");
    for i in 0..d {
        header.push_str(&format!(",coord_{i}"));
    }
    writeln!(out, "{header}")?;
    for (id, path) in paths.iter().enumerate() {
        for (step, (t, x)) in path.times.iter().zip(&path.states).enumerate() {
            write!(out, "{id},{step},{t}")?;
            for v in x.as_slice() {
                write!(out, ",{v}")?;
            }
            writeln!(out)?;
        }
    }
    Ok(())
}
