//! Closed-form quantities of the pinned Brownian bridge between paired
//! endpoints `x0` and `x1`.
//!
//! Conditioned on both endpoints the bridge `dX = (x1 - X)/(1 - t) dt + σ dW`
//! has Gaussian marginals `N(μ_t, σ² t (1 - t) I)` with `μ_t = t x1 + (1 - t) x0`.
//! Its probability flow is the Schrödinger-bridge conditional flow
//!
//! ```text
//! u_t(x | x0, x1) = (x1 - x0) + (1 - 2t) / (2 t (1 - t)) · (x - μ_t)
//! ```
//!
//! which reduces to the plain flow-matching target `x1 - x0` on the mean path
//! and for `σ = 0`. The correction coefficient is singular at `t ∈ {0, 1}`, so
//! every function that evaluates it enforces `t ∈ [ε, 1 - ε]`.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SbfmError};
use crate::rng::RandomStream;

/// Slack allowed on domain checks so that grid times computed as
/// `t_start + k·h` are not rejected for a last-ulp overshoot.
const TIME_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct TimePoint(f64);

impl TimePoint {
    pub fn new(t: f64) -> Result<Self> {
        if (0.0..=1.0).contains(&t) {
            Ok(Self(t))
        } else {
            Err(SbfmError::TimeDomain { t, lo: 0.0, hi: 1.0 })
        }
    }

    /// Clamp an arbitrary real into `[0, 1]`.
    pub fn saturating(t: f64) -> Self {
        Self(t.clamp(0.0, 1.0))
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BridgeSchedule {
    pub sigma: f64,
    pub eps_clamp: f64,
}

impl Default for BridgeSchedule {
    fn default() -> Self {
        Self {
            sigma: 0.1,
            eps_clamp: 1e-3,
        }
    }
}

impl BridgeSchedule {
    pub fn new(sigma: f64, eps_clamp: f64) -> Result<Self> {
        let s = Self { sigma, eps_clamp };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(SbfmError::Config(format!("sigma must be >= 0, got {}", self.sigma)));
        }
        if !(self.eps_clamp > 0.0 && self.eps_clamp < 0.5) {
            return Err(SbfmError::Config(format!(
                "eps_clamp must lie in (0, 0.5), got {}",
                self.eps_clamp
            )));
        }
        Ok(())
    }

    /// Lower and upper end of the clamped time interval.
    pub fn clamped_interval(&self) -> (f64, f64) {
        (self.eps_clamp, 1.0 - self.eps_clamp)
    }

    fn check_clamped(&self, t: TimePoint) -> Result<f64> {
        let (lo, hi) = self.clamped_interval();
        let t = t.get();
        if t < lo - TIME_SLACK || t > hi + TIME_SLACK {
            return Err(SbfmError::TimeDomain { t, lo, hi });
        }
        Ok(t)
    }
}

/// Real vector split into an audio block followed by a video block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentState {
    data: Vec<f64>,
    d_a: usize,
}

impl LatentState {
    pub fn from_blocks(audio: &[f64], video: &[f64]) -> Result<Self> {
        if audio.is_empty() || video.is_empty() {
            return Err(SbfmError::Dimension(
                "audio and video blocks must both be non-empty".into(),
            ));
        }
        let mut data = Vec::with_capacity(audio.len() + video.len());
        data.extend_from_slice(audio);
        data.extend_from_slice(video);
        Ok(Self {
            data,
            d_a: audio.len(),
        })
    }

    /// Wrap a concatenated `[audio, video]` vector.
    pub fn from_concat(data: Vec<f64>, d_a: usize) -> Result<Self> {
        if d_a == 0 || d_a >= data.len() {
            return Err(SbfmError::Dimension(format!(
                "audio length {d_a} does not split a vector of length {}",
                data.len()
            )));
        }
        Ok(Self { data, d_a })
    }

    pub fn zeros(d_a: usize, d_v: usize) -> Result<Self> {
        Self::from_concat(vec![0.0; d_a + d_v], d_a)
    }

    pub fn audio(&self) -> &[f64] {
        &self.data[..self.d_a]
    }

    pub fn video(&self) -> &[f64] {
        &self.data[self.d_a..]
    }

    pub fn audio_mut(&mut self) -> &mut [f64] {
        &mut self.data[..self.d_a]
    }

    pub fn video_mut(&mut self) -> &mut [f64] {
        let d_a = self.d_a;
        &mut self.data[d_a..]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn d_a(&self) -> usize {
        self.d_a
    }

    pub fn d_v(&self) -> usize {
        self.data.len() - self.d_a
    }

    pub fn dim(&self) -> usize {
        self.data.len()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn same_partition(&self, other: &Self) -> bool {
        self.d_a == other.d_a && self.data.len() == other.data.len()
    }

    pub fn check_partition(&self, other: &Self) -> Result<()> {
        if self.same_partition(other) {
            Ok(())
        } else {
            Err(SbfmError::Dimension(format!(
                "partition ({}, {}) vs ({}, {})",
                self.d_a,
                self.d_v(),
                other.d_a,
                other.d_v()
            )))
        }
    }

    fn map_with(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            data: self.data.iter().map(|&v| f(v)).collect(),
            d_a: self.d_a,
        }
    }

    pub fn squared_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EndpointPair {
    pub x0: LatentState,
    pub x1: LatentState,
}

impl EndpointPair {
    pub fn new(x0: LatentState, x1: LatentState) -> Result<Self> {
        x0.check_partition(&x1)?;
        Ok(Self { x0, x1 })
    }

    /// The same bridge run backwards in time.
    pub fn reversed(&self) -> Self {
        Self {
            x0: self.x1.clone(),
            x1: self.x0.clone(),
        }
    }

    fn zip_with(&self, f: impl Fn(f64, f64) -> f64) -> LatentState {
        LatentState {
            data: self
                .x0
                .data
                .iter()
                .zip(&self.x1.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
            d_a: self.x0.d_a,
        }
    }
}

/// `μ_t = t·x1 + (1 − t)·x0`.
pub fn mean_path(pair: &EndpointPair, t: TimePoint) -> Result<LatentState> {
    pair.x0.check_partition(&pair.x1)?;
    let t = t.get();
    Ok(pair.zip_with(|a, b| t * b + (1.0 - t) * a))
}

/// `σ² t (1 − t)`.
pub fn marginal_variance(schedule: &BridgeSchedule, t: TimePoint) -> f64 {
    let t = t.get();
    schedule.sigma * schedule.sigma * t * (1.0 - t)
}

/// One draw from the bridge marginal at time `t`. With `σ = 0` (or at either
/// endpoint) no noise is consumed and `μ_t` is returned exactly.
pub fn sample_bridge_point(
    pair: &EndpointPair,
    schedule: &BridgeSchedule,
    t: TimePoint,
    rng: &mut RandomStream,
) -> Result<LatentState> {
    if t.get() == 0.0 {
        return Ok(pair.x0.clone());
    }
    if t.get() == 1.0 {
        return Ok(pair.x1.clone());
    }
    let mut x = mean_path(pair, t)?;
    let std = marginal_variance(schedule, t).sqrt();
    if std > 0.0 {
        for v in x.as_mut_slice() {
            *v += std * rng.normal();
        }
    }
    Ok(x)
}

/// Flow-matching target `x1 − x0`.
pub fn cfm_conditional_flow(pair: &EndpointPair) -> Result<LatentState> {
    pair.x0.check_partition(&pair.x1)?;
    Ok(pair.zip_with(|a, b| b - a))
}

/// Coefficient `(1 − 2t) / (2t(1 − t))` of the bridge correction term.
pub fn correction_coefficient(t: f64) -> f64 {
    (1.0 - 2.0 * t) / (2.0 * t * (1.0 - t))
}

/// Schrödinger-bridge conditional flow
/// `(x1 − x0) + (1 − 2t)/(2t(1 − t)) · (x − μ_t)`.
pub fn sb_conditional_flow(
    pair: &EndpointPair,
    x: &LatentState,
    t: TimePoint,
    schedule: &BridgeSchedule,
) -> Result<LatentState> {
    pair.x0.check_partition(&pair.x1)?;
    pair.x0.check_partition(x)?;
    let tv = schedule.check_clamped(t)?;
    let c = correction_coefficient(tv);
    let data = pair
        .x0
        .data
        .iter()
        .zip(&pair.x1.data)
        .zip(&x.data)
        .map(|((&a, &b), &xv)| {
            let mu = tv * b + (1.0 - tv) * a;
            (b - a) + c * (xv - mu)
        })
        .collect();
    Ok(LatentState { data, d_a: x.d_a })
}

/// Score `∇ log p_t(x | x0, x1) = −(x − μ_t) / (σ² t (1 − t))`.
pub fn conditional_score(
    pair: &EndpointPair,
    x: &LatentState,
    t: TimePoint,
    schedule: &BridgeSchedule,
) -> Result<LatentState> {
    if schedule.sigma == 0.0 {
        return Err(SbfmError::DegenerateScore);
    }
    pair.x0.check_partition(x)?;
    schedule.check_clamped(t)?;
    let var = marginal_variance(schedule, t);
    let mu = mean_path(pair, t)?;
    Ok(LatentState {
        data: x
            .data
            .iter()
            .zip(&mu.data)
            .map(|(&xv, &m)| -(xv - m) / var)
            .collect(),
        d_a: x.d_a,
    })
}

/// Drift `(x1 − x)/(1 − t)` of the bridge SDE, defined for `t ∈ [0, 1 − ε]`.
pub fn bridge_sde_drift(
    pair: &EndpointPair,
    x: &LatentState,
    t: TimePoint,
    schedule: &BridgeSchedule,
) -> Result<LatentState> {
    pair.x1.check_partition(x)?;
    let hi = 1.0 - schedule.eps_clamp;
    let tv = t.get();
    if tv > hi + TIME_SLACK {
        return Err(SbfmError::TimeDomain { t: tv, lo: 0.0, hi });
    }
    let inv = 1.0 / (1.0 - tv);
    Ok(LatentState {
        data: pair
            .x1
            .data
            .iter()
            .zip(&x.data)
            .map(|(&b, &xv)| (b - xv) * inv)
            .collect(),
        d_a: x.d_a,
    })
}

/// Log-density of the bridge marginal, used by finite-difference oracles.
pub fn marginal_log_density(
    pair: &EndpointPair,
    x: &LatentState,
    t: TimePoint,
    schedule: &BridgeSchedule,
) -> Result<f64> {
    if schedule.sigma == 0.0 {
        return Err(SbfmError::DegenerateScore);
    }
    let mu = mean_path(pair, t)?;
    pair.x0.check_partition(x)?;
    let var = marginal_variance(schedule, t);
    let d = x.dim() as f64;
    let sq: f64 = x
        .data
        .iter()
        .zip(&mu.data)
        .map(|(&a, &b)| (a - b) * (a - b))
        .sum();
    Ok(-0.5 * sq / var - 0.5 * d * (2.0 * std::f64::consts::PI * var).ln())
}

impl LatentState {
    /// `self + alpha * other`.
    pub fn axpy(&self, alpha: f64, other: &LatentState) -> Result<LatentState> {
        self.check_partition(other)?;
        Ok(LatentState {
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| a + alpha * b)
                .collect(),
            d_a: self.d_a,
        })
    }

    pub fn scaled(&self, alpha: f64) -> LatentState {
        self.map_with(|v| alpha * v)
    }

    pub fn max_abs_diff(&self, other: &LatentState) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn distance(&self, other: &LatentState) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn scalar_pair(x0: f64, x1: f64) -> EndpointPair {
        // d_a = 1, d_v = 1; the video coordinate mirrors the audio one.
        EndpointPair::new(
            LatentState::from_blocks(&[x0], &[x0]).unwrap(),
            LatentState::from_blocks(&[x1], &[x1]).unwrap(),
        )
        .unwrap()
    }

    fn point(v: f64) -> LatentState {
        LatentState::from_blocks(&[v], &[v]).unwrap()
    }

    fn t(v: f64) -> TimePoint {
        TimePoint::new(v).unwrap()
    }

    #[test]
    fn mean_path_examples() {
        let p = scalar_pair(0.0, 4.0);
        assert_eq!(mean_path(&p, t(0.25)).unwrap().audio(), &[1.0]);
        let p = EndpointPair::new(
            LatentState::from_blocks(&[1.0], &[-1.0]).unwrap(),
            LatentState::from_blocks(&[3.0], &[1.0]).unwrap(),
        )
        .unwrap();
        assert_eq!(mean_path(&p, t(0.5)).unwrap().as_slice(), &[2.0, 0.0]);
        assert_eq!(mean_path(&p, t(0.0)).unwrap(), p.x0);
        assert_eq!(mean_path(&p, t(1.0)).unwrap(), p.x1);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let a = LatentState::from_blocks(&[0.0], &[0.0, 1.0]).unwrap();
        let b = LatentState::from_blocks(&[0.0, 1.0], &[0.0]).unwrap();
        assert!(matches!(EndpointPair::new(a, b), Err(SbfmError::Dimension(_))));
        assert!(TimePoint::new(1.5).is_err());
    }

    #[test]
    fn marginal_variance_examples() {
        let s2 = BridgeSchedule::new(2.0, 1e-3).unwrap();
        assert_eq!(marginal_variance(&s2, t(0.5)), 1.0);
        let s1 = BridgeSchedule::new(1.0, 1e-3).unwrap();
        assert_eq!(marginal_variance(&s1, t(0.0)), 0.0);
        assert_eq!(marginal_variance(&s1, t(1.0)), 0.0);
        assert_eq!(marginal_variance(&s1, t(0.25)), 0.1875);
    }

    #[test]
    fn sample_bridge_point_degenerate_cases() {
        let p = scalar_pair(-1.0, 5.0);
        let s = BridgeSchedule::new(0.0, 1e-3).unwrap();
        let mut rng = RandomStream::from_seed(3);
        for &tv in &[0.1, 0.5, 0.9] {
            let x = sample_bridge_point(&p, &s, t(tv), &mut rng).unwrap();
            assert_eq!(x, mean_path(&p, t(tv)).unwrap());
        }
        let s = BridgeSchedule::new(3.0, 1e-3).unwrap();
        assert_eq!(sample_bridge_point(&p, &s, t(0.0), &mut rng).unwrap(), p.x0);
        assert_eq!(sample_bridge_point(&p, &s, t(1.0), &mut rng).unwrap(), p.x1);
    }

    #[test]
    fn sample_bridge_point_mean_matches() {
        let p = scalar_pair(0.0, 2.0);
        let s = BridgeSchedule::new(1.0, 1e-3).unwrap();
        let mut rng = RandomStream::from_seed(11);
        let n = 20_000;
        let mut sum = [0.0; 2];
        for _ in 0..n {
            let x = sample_bridge_point(&p, &s, t(0.5), &mut rng).unwrap();
            sum[0] += x.as_slice()[0];
            sum[1] += x.as_slice()[1];
        }
        let tol = 3.0 * s.sigma / (2.0 * n as f64).sqrt();
        for v in sum {
            assert!((v / n as f64 - 1.0).abs() < tol);
        }
    }

    #[test]
    fn cfm_flow_examples() {
        assert_eq!(cfm_conditional_flow(&scalar_pair(0.0, 2.0)).unwrap().audio(), &[2.0]);
        let same = scalar_pair(1.5, 1.5);
        assert_eq!(cfm_conditional_flow(&same).unwrap().squared_norm(), 0.0);
        let p = EndpointPair::new(
            LatentState::from_blocks(&[1.0], &[0.0]).unwrap(),
            LatentState::from_blocks(&[0.0], &[1.0]).unwrap(),
        )
        .unwrap();
        assert_eq!(cfm_conditional_flow(&p).unwrap().as_slice(), &[-1.0, 1.0]);
    }

    #[test]
    fn worked_scalar_example() {
        // x0 = 0, x1 = 2, σ = 1, t = 1/4, x = 1: μ = 1/2, coefficient 4/3.
        let p = scalar_pair(0.0, 2.0);
        let s = BridgeSchedule::new(1.0, 1e-3).unwrap();
        let x = point(1.0);
        let flow = sb_conditional_flow(&p, &x, t(0.25), &s).unwrap();
        let score = conditional_score(&p, &x, t(0.25), &s).unwrap();
        let drift = bridge_sde_drift(&p, &x, t(0.25), &s).unwrap();
        assert!((flow.audio()[0] - 8.0 / 3.0).abs() < 1e-14);
        assert!((score.audio()[0] + 8.0 / 3.0).abs() < 1e-14);
        assert!((drift.audio()[0] - 4.0 / 3.0).abs() < 1e-14);
        let pf = drift.axpy(-0.5 * s.sigma * s.sigma, &score).unwrap();
        assert!(pf.max_abs_diff(&flow) < 1e-14);
    }

    #[test]
    fn sb_flow_special_points() {
        let p = scalar_pair(-0.3, 1.7);
        let s = BridgeSchedule::default();
        let cfm = cfm_conditional_flow(&p).unwrap();
        let f = sb_conditional_flow(&p, &point(42.0), t(0.5), &s).unwrap();
        assert_eq!(f, cfm);
        let mu = mean_path(&p, t(0.8)).unwrap();
        let f = sb_conditional_flow(&p, &mu, t(0.8), &s).unwrap();
        assert!(f.max_abs_diff(&cfm) < 1e-12);
    }

    #[test]
    fn clamp_is_enforced() {
        let p = scalar_pair(0.0, 1.0);
        let s = BridgeSchedule::new(1.0, 1e-3).unwrap();
        for &tv in &[0.0, 5e-4, 1.0 - 5e-4, 1.0] {
            assert!(matches!(
                sb_conditional_flow(&p, &point(0.0), t(tv), &s),
                Err(SbfmError::TimeDomain { .. })
            ));
        }
        assert!(sb_conditional_flow(&p, &point(0.0), t(1e-3), &s).is_ok());
        assert!(bridge_sde_drift(&p, &point(0.0), t(0.0), &s).is_ok());
        assert!(bridge_sde_drift(&p, &point(0.0), t(0.9995), &s).is_err());
    }

    #[test]
    fn score_errors_and_edge_cases() {
        let p = scalar_pair(0.0, 2.0);
        let s0 = BridgeSchedule::new(0.0, 1e-3).unwrap();
        assert!(matches!(
            conditional_score(&p, &point(1.0), t(0.5), &s0),
            Err(SbfmError::DegenerateScore)
        ));
        let s = BridgeSchedule::new(0.7, 1e-3).unwrap();
        let mu = mean_path(&p, t(0.3)).unwrap();
        assert_eq!(conditional_score(&p, &mu, t(0.3), &s).unwrap().squared_norm(), 0.0);
        // Linearity in x − μ_t.
        let off = point(0.4);
        let x1 = mu.axpy(1.0, &off).unwrap();
        let x3 = mu.axpy(3.0, &off).unwrap();
        let s1 = conditional_score(&p, &x1, t(0.3), &s).unwrap();
        let s3 = conditional_score(&p, &x3, t(0.3), &s).unwrap();
        assert!(s3.max_abs_diff(&s1.scaled(3.0)) < 1e-12);
    }

    #[test]
    fn drift_absorbs_at_target() {
        let p = scalar_pair(0.0, 2.0);
        let s = BridgeSchedule::default();
        let d = bridge_sde_drift(&p, &p.x1, t(0.6), &s).unwrap();
        assert_eq!(d.squared_norm(), 0.0);
    }

    fn arb_pair_point(d_a: usize, d_v: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<f64>)> {
        let n = d_a + d_v;
        (
            prop::collection::vec(-5.0..5.0f64, n),
            prop::collection::vec(-5.0..5.0f64, n),
            prop::collection::vec(-5.0..5.0f64, n),
        )
    }

    proptest! {
        #[test]
        fn score_flow_consistency((a, b, x) in arb_pair_point(2, 3), tv in 0.001..0.999f64, sigma in 0.01..3.0f64) {
            let pair = EndpointPair::new(
                LatentState::from_concat(a, 2).unwrap(),
                LatentState::from_concat(b, 2).unwrap(),
            ).unwrap();
            let x = LatentState::from_concat(x, 2).unwrap();
            let s = BridgeSchedule::new(sigma, 1e-3).unwrap();
            let tp = t(tv);
            let flow = sb_conditional_flow(&pair, &x, tp, &s).unwrap();
            let pf = bridge_sde_drift(&pair, &x, tp, &s).unwrap()
                .axpy(-0.5 * sigma * sigma, &conditional_score(&pair, &x, tp, &s).unwrap()).unwrap();
            let scale = 1.0 + flow.as_slice().iter().fold(0.0f64, |m, v| m.max(v.abs()));
            prop_assert!(pf.max_abs_diff(&flow) <= 1e-12 * scale);
        }

        #[test]
        fn time_reversal_antisymmetry((a, b, x) in arb_pair_point(1, 2), tv in 0.001..0.999f64) {
            let pair = EndpointPair::new(
                LatentState::from_concat(a, 1).unwrap(),
                LatentState::from_concat(b, 1).unwrap(),
            ).unwrap();
            let x = LatentState::from_concat(x, 1).unwrap();
            let s = BridgeSchedule::default();
            let fwd = sb_conditional_flow(&pair, &x, t(tv), &s).unwrap();
            let bwd = sb_conditional_flow(&pair.reversed(), &x, t(1.0 - tv), &s).unwrap();
            let scale = 1.0 + fwd.as_slice().iter().fold(0.0f64, |m, v| m.max(v.abs()));
            prop_assert!(bwd.axpy(1.0, &fwd).unwrap().as_slice().iter().all(|v| v.abs() <= 1e-12 * scale));
        }

        #[test]
        fn flow_is_affine_in_x((a, b, x) in arb_pair_point(1, 1), tv in 0.01..0.99f64) {
            let pair = EndpointPair::new(
                LatentState::from_concat(a, 1).unwrap(),
                LatentState::from_concat(b, 1).unwrap(),
            ).unwrap();
            let x = LatentState::from_concat(x, 1).unwrap();
            let s = BridgeSchedule::default();
            let h = 1e-3;
            let expected = correction_coefficient(tv);
            for k in 0..x.dim() {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp.as_mut_slice()[k] += h;
                xm.as_mut_slice()[k] -= h;
                let fp = sb_conditional_flow(&pair, &xp, t(tv), &s).unwrap();
                let fm = sb_conditional_flow(&pair, &xm, t(tv), &s).unwrap();
                for j in 0..x.dim() {
                    let jac = (fp.as_slice()[j] - fm.as_slice()[j]) / (2.0 * h);
                    let want = if j == k { expected } else { 0.0 };
                    prop_assert!((jac - want).abs() <= 1e-7 * (1.0 + expected.abs()));
                }
            }
        }

        #[test]
        fn endpoints_are_pinned((a, b, _x) in arb_pair_point(2, 2), sigma in 0.0..5.0f64, seed in any::<u64>()) {
            let pair = EndpointPair::new(
                LatentState::from_concat(a, 2).unwrap(),
                LatentState::from_concat(b, 2).unwrap(),
            ).unwrap();
            let s = BridgeSchedule::new(sigma, 1e-3).unwrap();
            let mut rng = RandomStream::from_seed(seed);
            prop_assert_eq!(sample_bridge_point(&pair, &s, t(0.0), &mut rng).unwrap(), pair.x0.clone());
            prop_assert_eq!(sample_bridge_point(&pair, &s, t(1.0), &mut rng).unwrap(), pair.x1.clone());
        }
    }
}
