//! Training targets and the λ-weighted two-block regression loss
//! `‖v_a − u_a‖² + λ ‖v_v − u_v‖²`, averaged over the batch.

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::bridge_math::{
    cfm_conditional_flow, sample_bridge_point, sb_conditional_flow, BridgeSchedule, EndpointPair, LatentState,
    TimePoint,
};
use crate::error::{Result, SbfmError};
use crate::rng::RandomStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObjectiveKind {
    Sbfm,
    Cfm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TimeDistribution {
    UniformClamped,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub lambda: f64,
    pub objective_kind: ObjectiveKind,
    pub schedule: BridgeSchedule,
    pub time_distribution: TimeDistribution,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda: 3.0,
            objective_kind: ObjectiveKind::Sbfm,
            schedule: BridgeSchedule::default(),
            time_distribution: TimeDistribution::UniformClamped,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(SbfmError::Config(format!("lambda must be > 0, got {}", self.lambda)));
        }
        self.schedule.validate()
    }
}

/// Per-block squared errors are summed over coordinates and averaged over the
/// batch; `audio_part`/`video_part` are stored unweighted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub total: f64,
    pub audio_part: f64,
    pub video_part: f64,
    pub batch_size: usize,
}

impl LossReport {
    pub fn from_parts(audio_part: f64, video_part: f64, lambda: f64, batch_size: usize) -> Self {
        Self {
            total: audio_part + lambda * video_part,
            audio_part,
            video_part,
            batch_size,
        }
    }

    /// Batch-size weighted mean of several reports.
    pub fn merge(reports: &[LossReport], lambda: f64) -> Option<Self> {
        let n: usize = reports.iter().map(|r| r.batch_size).sum();
        if n == 0 {
            return None;
        }
        let w = |f: fn(&LossReport) -> f64| reports.iter().map(|r| f(r) * r.batch_size as f64).sum::<f64>() / n as f64;
        Some(Self::from_parts(w(|r| r.audio_part), w(|r| r.video_part), lambda, n))
    }

    /// Contribution of the video residual to `total`.
    pub fn weighted_video(&self, lambda: f64) -> f64 {
        lambda * self.video_part
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPoint {
    pub t: TimePoint,
    pub x_t: LatentState,
    pub target: LatentState,
}

impl TrainingPoint {
    pub fn target_a(&self) -> &[f64] {
        self.target.audio()
    }

    pub fn target_v(&self) -> &[f64] {
        self.target.video()
    }
}

/// Separate streams for time draws and bridge noise, so either can be varied
/// without disturbing the other.
#[derive(Debug, Clone)]
pub struct DrawStreams {
    pub time: RandomStream,
    pub noise: RandomStream,
}

/// `t ~ U[ε, 1 − ε]`, `x_t` from the bridge marginal, target from the
/// configured conditional flow.
pub fn draw_training_point(
    pair: &EndpointPair,
    config: &LossConfig,
    streams: &mut DrawStreams,
) -> Result<TrainingPoint> {
    let (lo, hi) = config.schedule.clamped_interval();
    let t = TimePoint::new(match config.time_distribution {
        TimeDistribution::UniformClamped => streams.time.uniform(lo, hi),
    })?;
    let x_t = sample_bridge_point(pair, &config.schedule, t, &mut streams.noise)?;
    let target = match config.objective_kind {
        ObjectiveKind::Cfm => cfm_conditional_flow(pair)?,
        ObjectiveKind::Sbfm => sb_conditional_flow(pair, &x_t, t, &config.schedule)?,
    };
    Ok(TrainingPoint { t, x_t, target })
}

/// λ-weighted loss over a batch whose rows are samples.
pub fn weighted_loss(
    pred_a: ArrayView2<'_, f64>,
    pred_v: ArrayView2<'_, f64>,
    target_a: ArrayView2<'_, f64>,
    target_v: ArrayView2<'_, f64>,
    lambda: f64,
) -> Result<LossReport> {
    if pred_a.dim() != target_a.dim() || pred_v.dim() != target_v.dim() || pred_a.nrows() != pred_v.nrows() {
        return Err(SbfmError::Dimension(format!(
            "prediction {:?}/{:?} vs target {:?}/{:?}",
            pred_a.dim(),
            pred_v.dim(),
            target_a.dim(),
            target_v.dim()
        )));
    }
    let b = pred_a.nrows();
    if b == 0 {
        return Ok(LossReport::from_parts(0.0, 0.0, lambda, 0));
    }
    let sq = |p: ArrayView2<'_, f64>, t: ArrayView2<'_, f64>| {
        p.iter().zip(t.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / b as f64
    };
    Ok(LossReport::from_parts(sq(pred_a, target_a), sq(pred_v, target_v), lambda, b))
}

/// `E_t[(1 − 2t)² / (4t(1 − t))]` for `t ~ U[ε, 1 − ε]`: the mean squared
/// correction coefficient times the bridge variance per unit `σ²`.
pub fn correction_energy_factor(eps: f64) -> f64 {
    (0.5 * ((1.0 - eps) / eps).ln() - (1.0 - 2.0 * eps)) / (1.0 - 2.0 * eps)
}

/// Loss of the zero field, `E‖u‖²` per block, evaluated in closed form over
/// the given pairs: `‖x1 − x0‖²` plus `σ² · factor(ε) · d` for the bridge
/// correction (the cross term has zero mean).
pub fn zero_field_baseline(pairs: &[EndpointPair], config: &LossConfig) -> Result<LossReport> {
    if pairs.is_empty() {
        return Err(SbfmError::Dimension("no pairs".into()));
    }
    let n = pairs.len() as f64;
    let mut audio = 0.0;
    let mut video = 0.0;
    for p in pairs {
        let u = cfm_conditional_flow(p)?;
        audio += u.audio().iter().map(|v| v * v).sum::<f64>();
        video += u.video().iter().map(|v| v * v).sum::<f64>();
    }
    audio /= n;
    video /= n;
    if config.objective_kind == ObjectiveKind::Sbfm {
        let s = &config.schedule;
        let k = s.sigma * s.sigma * correction_energy_factor(s.eps_clamp);
        audio += k * pairs[0].x0.d_a() as f64;
        video += k * pairs[0].x0.d_v() as f64;
    }
    Ok(LossReport::from_parts(audio, video, config.lambda, pairs.len()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bridge_math::mean_path;
    use ndarray::{array, Array2};

    fn streams(seed: u64) -> DrawStreams {
        DrawStreams {
            time: RandomStream::derive(seed, "time", 0),
            noise: RandomStream::derive(seed, "noise", 0),
        }
    }

    fn pair() -> EndpointPair {
        EndpointPair::new(
            LatentState::from_blocks(&[0.0, 1.0], &[2.0]).unwrap(),
            LatentState::from_blocks(&[1.0, -1.0], &[0.5]).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn cfm_targets_ignore_x_t() {
        let p = pair();
        let cfg = LossConfig {
            objective_kind: ObjectiveKind::Cfm,
            schedule: BridgeSchedule::new(1.0, 1e-3).unwrap(),
            ..LossConfig::default()
        };
        let mut s = streams(1);
        let u = cfm_conditional_flow(&p).unwrap();
        for _ in 0..50 {
            let tp = draw_training_point(&p, &cfg, &mut s).unwrap();
            assert_eq!(tp.target, u);
        }
    }

    #[test]
    fn zero_sigma_sbfm_targets_equal_cfm_bitwise() {
        let p = pair();
        let sb = LossConfig {
            schedule: BridgeSchedule::new(0.0, 1e-3).unwrap(),
            ..LossConfig::default()
        };
        let cfm = LossConfig {
            objective_kind: ObjectiveKind::Cfm,
            ..sb
        };
        let (mut s1, mut s2) = (streams(4), streams(4));
        for _ in 0..1000 {
            let a = draw_training_point(&p, &sb, &mut s1).unwrap();
            let b = draw_training_point(&p, &cfm, &mut s2).unwrap();
            assert_eq!(a.t, b.t);
            assert_eq!(a.x_t, mean_path(&p, a.t).unwrap());
            assert_eq!(a.target, b.target);
        }
    }

    #[test]
    fn drawn_times_are_uniform_on_clamp() {
        // One-sample Kolmogorov–Smirnov against U[ε, 1 − ε]; the 1 % critical
        // value is 1.628 / sqrt(n) asymptotically.
        let p = pair();
        let cfg = LossConfig::default();
        let (lo, hi) = cfg.schedule.clamped_interval();
        let mut s = streams(9);
        let n = 100_000;
        let mut ts: Vec<f64> = (0..n)
            .map(|_| draw_training_point(&p, &cfg, &mut s).unwrap().t.get())
            .collect();
        ts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!(ts[0] >= lo && ts[n - 1] <= hi);
        let mut ks = 0.0f64;
        for (i, &t) in ts.iter().enumerate() {
            let f = (t - lo) / (hi - lo);
            ks = ks.max((f - i as f64 / n as f64).abs()).max(((i + 1) as f64 / n as f64 - f).abs());
        }
        assert!(ks < 1.628 / (n as f64).sqrt(), "KS = {ks}");
    }

    #[test]
    fn weighted_loss_examples() {
        let pa = array![[1.0, 1.0]];
        let pv = array![[1.0]];
        let ta = array![[0.0, 0.0]];
        let tv = array![[0.0]];
        let r = weighted_loss(pa.view(), pv.view(), ta.view(), tv.view(), 3.0).unwrap();
        assert_eq!(r.audio_part, 2.0);
        assert_eq!(r.video_part, 1.0);
        assert_eq!(r.total, 5.0);
        let z = weighted_loss(pa.view(), pv.view(), pa.view(), pv.view(), 3.0).unwrap();
        assert_eq!(z.total, 0.0);
        let one = weighted_loss(pa.view(), pv.view(), ta.view(), tv.view(), 1.0).unwrap();
        assert_eq!(one.total, 3.0);
        assert!(weighted_loss(pa.view(), pv.view(), tv.view(), tv.view(), 1.0).is_err());
    }

    #[test]
    fn loss_increases_with_lambda_and_decomposes() {
        let mut rng = RandomStream::from_seed(3);
        let mk = |r: &mut RandomStream, n, m| Array2::from_shape_fn((n, m), |_| r.normal());
        let (pa, pv, ta, tv) = (mk(&mut rng, 5, 3), mk(&mut rng, 5, 4), mk(&mut rng, 5, 3), mk(&mut rng, 5, 4));
        let mut prev = f64::NEG_INFINITY;
        for lambda in [0.5, 1.0, 3.0, 5.0, 10.0] {
            let r = weighted_loss(pa.view(), pv.view(), ta.view(), tv.view(), lambda).unwrap();
            assert!(r.total > prev);
            assert!((r.total - (r.audio_part + lambda * r.video_part)).abs() < 1e-12);
            assert!(r.audio_part >= 0.0 && r.video_part >= 0.0);
            prev = r.total;
        }
    }

    #[test]
    fn merge_weights_by_batch_size() {
        let a = LossReport::from_parts(1.0, 2.0, 3.0, 1);
        let b = LossReport::from_parts(4.0, 5.0, 3.0, 3);
        let m = LossReport::merge(&[a, b], 3.0).unwrap();
        assert_eq!(m.batch_size, 4);
        assert_eq!(m.audio_part, 3.25);
        assert_eq!(m.video_part, 4.25);
        assert!(LossReport::merge(&[], 3.0).is_none());
    }

    #[test]
    fn correction_factor_matches_quadrature() {
        for eps in [1e-3, 1e-2, 0.1] {
            let n = 2_000_000;
            let h = (1.0 - 2.0 * eps) / n as f64;
            let mut acc = 0.0;
            for i in 0..n {
                let t = eps + (i as f64 + 0.5) * h;
                acc += (1.0 - 2.0 * t).powi(2) / (4.0 * t * (1.0 - t)) * h;
            }
            let want = acc / (1.0 - 2.0 * eps);
            assert!((correction_energy_factor(eps) / want - 1.0).abs() < 1e-6, "{eps}");
        }
    }

    #[test]
    fn zero_field_baseline_matches_monte_carlo() {
        let p = pair();
        let cfg = LossConfig {
            schedule: BridgeSchedule::new(0.5, 1e-2).unwrap(),
            ..LossConfig::default()
        };
        let analytic = zero_field_baseline(std::slice::from_ref(&p), &cfg).unwrap();
        let mut s = streams(12);
        let n = 400_000;
        let (mut a, mut v) = (0.0, 0.0);
        for _ in 0..n {
            let tp = draw_training_point(&p, &cfg, &mut s).unwrap();
            a += tp.target_a().iter().map(|x| x * x).sum::<f64>();
            v += tp.target_v().iter().map(|x| x * x).sum::<f64>();
        }
        assert!((a / n as f64 / analytic.audio_part - 1.0).abs() < 0.02);
        assert!((v / n as f64 / analytic.video_part - 1.0).abs() < 0.02);
    }
}
