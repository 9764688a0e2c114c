//! Verification oracles and evaluation metrics.
//!
//! The identity checks compare closed forms against each other; the
//! transport checks integrate exact fields; the metrics compare generated
//! endpoints against held-out targets.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::bridge_math::{
    bridge_sde_drift, cfm_conditional_flow, conditional_score, correction_coefficient, marginal_log_density, mean_path,
    sample_bridge_point, sb_conditional_flow, BridgeSchedule, EndpointPair, LatentState, TimePoint,
};
use crate::error::{Result, SbfmError};
use crate::field_model::{Activation, BackwardItem, ConditionEmbedding, FieldConfig, FieldInput, FieldParams, HeadKind};
use crate::rng::RandomStream;
use crate::simulate::{euler_ode, IntegrationPlan, Trajectory};
use crate::toy_data::RemovalPair;

pub mod suite;

/// Permutations used to calibrate energy-distance significance.
pub const PERMUTATIONS: usize = 200;
pub const SIGNIFICANCE_LEVEL: f64 = 0.05;

/// Printed alongside every metric report.
pub const METRIC_NOTE: &str = "paired_mse, baseline_mse and energy_distance stand in for perceptual \
audio/video metrics, which need pretrained networks; baseline_mse is the error of returning x0 unchanged";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreCheck {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
}

/// Analytic score against central differences of the closed-form log-density.
pub fn fd_score_check(pair: &EndpointPair, schedule: &BridgeSchedule, x: &LatentState, t: TimePoint) -> Result<ScoreCheck> {
    let analytic = conditional_score(pair, x, t, schedule)?;
    let mut probe = x.clone();
    let mut out = ScoreCheck {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
    };
    for i in 0..x.dim() {
        let xi = x.as_slice()[i];
        let h = 1e-5 * xi.abs().max(1.0);
        probe.as_mut_slice()[i] = xi + h;
        let up = marginal_log_density(pair, &probe, t, schedule)?;
        probe.as_mut_slice()[i] = xi - h;
        let down = marginal_log_density(pair, &probe, t, schedule)?;
        probe.as_mut_slice()[i] = xi;
        let fd = (up - down) / (2.0 * h);
        let a = analytic.as_slice()[i];
        let abs = (a - fd).abs();
        out.max_abs_error = out.max_abs_error.max(abs);
        out.max_rel_error = out.max_rel_error.max(abs / a.abs().max(fd.abs()).max(1e-300));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChainCheck {
    /// `max |drift − (σ²/2)·score − sb_flow|`.
    pub pf_deviation: f64,
    /// `max |sb_flow − cfm_flow − correction|`.
    pub decomposition_deviation: f64,
    pub n_points: usize,
}

impl ChainCheck {
    pub fn max_deviation(&self) -> f64 {
        self.pf_deviation.max(self.decomposition_deviation)
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.max_deviation() < tol
    }
}

fn chain_point(pair: &EndpointPair, schedule: &BridgeSchedule, x: &LatentState, t: TimePoint, acc: &mut ChainCheck) -> Result<()> {
    let sb = sb_conditional_flow(pair, x, t, schedule)?;
    let cfm = cfm_conditional_flow(pair)?;
    let mu = mean_path(pair, t)?;
    let c = correction_coefficient(t.get());
    for i in 0..x.dim() {
        let corr = c * (x.as_slice()[i] - mu.as_slice()[i]);
        let dev = (sb.as_slice()[i] - cfm.as_slice()[i] - corr).abs();
        acc.decomposition_deviation = acc.decomposition_deviation.max(dev);
    }
    if schedule.sigma > 0.0 {
        let drift = bridge_sde_drift(pair, x, t, schedule)?;
        let score = conditional_score(pair, x, t, schedule)?;
        let half = 0.5 * schedule.sigma * schedule.sigma;
        for i in 0..x.dim() {
            let pf = drift.as_slice()[i] - half * score.as_slice()[i];
            acc.pf_deviation = acc.pf_deviation.max((pf - sb.as_slice()[i]).abs());
        }
    }
    acc.n_points += 1;
    Ok(())
}

/// Both identities at `n_points` bridge-marginal draws of one pair.
pub fn derivation_chain_check(pair: &EndpointPair, schedule: &BridgeSchedule, n_points: usize, rng: &mut RandomStream) -> Result<ChainCheck> {
    let (lo, hi) = schedule.clamped_interval();
    let mut acc = ChainCheck {
        pf_deviation: 0.0,
        decomposition_deviation: 0.0,
        n_points: 0,
    };
    for _ in 0..n_points {
        let t = TimePoint::new(rng.uniform(lo, hi))?;
        let x = sample_bridge_point(pair, schedule, t, rng)?;
        chain_point(pair, schedule, &x, t, &mut acc)?;
    }
    Ok(acc)
}

/// Randomized sweep over pairs, points, times and `σ ∈ [0.05, 2]`.
pub fn derivation_chain_suite(n_draws: usize, dim: usize, eps_clamp: f64, rng: &mut RandomStream) -> Result<ChainCheck> {
    let mut acc = ChainCheck {
        pf_deviation: 0.0,
        decomposition_deviation: 0.0,
        n_points: 0,
    };
    let d_a = dim / 2;
    for _ in 0..n_draws {
        let schedule = BridgeSchedule::new(rng.uniform(0.05, 2.0), eps_clamp)?;
        let mut draw = || {
            let mut v = vec![0.0; dim];
            rng.fill_normal(&mut v);
            LatentState::from_concat(v, d_a)
        };
        let pair = EndpointPair::new(draw()?, draw()?)?;
        let (lo, hi) = schedule.clamped_interval();
        let t = TimePoint::new(rng.uniform(lo, hi))?;
        let x = sample_bridge_point(&pair, &schedule, t, rng)?;
        chain_point(&pair, &schedule, &x, t, &mut acc)?;
    }
    Ok(acc)
}

/// A small random architecture for gradient checks.
pub fn random_small_config(seed: u64) -> FieldConfig {
    let mut rng = RandomStream::derive(seed, "oracle/small-config", 0);
    let mut pick = |lo: usize, hi: usize| lo + rng.index(hi - lo + 1);
    FieldConfig {
        d_a: pick(1, 3),
        d_v: pick(1, 3),
        trunk_width: pick(3, 8),
        trunk_depth: pick(1, 2),
        head_width: pick(2, 5),
        head_depth: pick(0, 2),
        heads: if pick(0, 1) == 0 { HeadKind::Mlp } else { HeadKind::Linear },
        cond_dim: pick(1, 3),
        visual_cond_dim: pick(1, 3),
        time_embed_dim: 2 * pick(1, 3),
        activation: if pick(0, 1) == 0 { Activation::Tanh } else { Activation::GeluApprox },
    }
}

type GradItem = (LatentState, ConditionEmbedding, TimePoint, Vec<f64>, Vec<f64>);

fn direct_loss(p: &FieldParams, items: &[GradItem], lambda: f64) -> Result<f64> {
    let mut total = 0.0;
    for (x, c, t, ua, uv) in items {
        let (a, v) = p.forward(x, *t, c)?;
        let ra: f64 = a.iter().zip(ua).map(|(p, u)| (p - u) * (p - u)).sum();
        let rv: f64 = v.iter().zip(uv).map(|(p, u)| (p - u) * (p - u)).sum();
        total += ra + lambda * rv;
    }
    Ok(total / items.len() as f64)
}

/// Largest relative difference between the analytic gradient and central
/// differences of the loss, over every parameter. Parameters are drawn at
/// scale 0.5 so no layer is trivially zero.
#[allow(clippy::needless_range_loop)]
pub fn gradient_fd_check(cfg: &FieldConfig, seed: u64) -> Result<f64> {
    let mut rng = RandomStream::derive(seed, "oracle/gradient", 0);
    let n = crate::field_model::ParamLayout::new(cfg)?.total;
    let p = FieldParams::from_values(cfg.clone(), (0..n).map(|_| 0.5 * rng.normal()).collect())?;
    let lambda = 3.0;
    let mut draw = |k: usize| {
        let mut v = vec![0.0; k];
        rng.fill_normal(&mut v);
        v
    };
    let items: Vec<GradItem> = (0..3)
        .map(|_| {
            let x = LatentState::from_concat(draw(cfg.d_a + cfg.d_v), cfg.d_a)?;
            let cond = ConditionEmbedding {
                phi_a: draw(cfg.cond_dim),
                phi_v: draw(cfg.visual_cond_dim),
            };
            let t = TimePoint::new(draw(1)[0].abs().fract())?;
            Ok((x, cond, t, draw(cfg.d_a), draw(cfg.d_v)))
        })
        .collect::<Result<_>>()?;
    let residuals = items
        .iter()
        .map(|(x, c, t, ua, uv)| {
            let (a, v) = p.forward(x, *t, c)?;
            Ok((
                a.iter().zip(ua).map(|(p, u)| p - u).collect::<Vec<f64>>(),
                v.iter().zip(uv).map(|(p, u)| p - u).collect::<Vec<f64>>(),
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let batch: Vec<BackwardItem<'_>> = items
        .iter()
        .zip(&residuals)
        .map(|((x, c, t, _, _), (ra, rv))| BackwardItem {
            input: FieldInput { x, t: *t, cond: c },
            residual_a: ra,
            residual_v: rv,
            lambda,
        })
        .collect();
    let grad = p.backward(&batch)?;
    let h = 1e-5;
    let mut worst = 0.0f64;
    let mut q = p.clone();
    for k in 0..p.len() {
        let orig = q.values()[k];
        q.values_mut()[k] = orig + h;
        let lp = direct_loss(&q, &items, lambda)?;
        q.values_mut()[k] = orig - h;
        let lm = direct_loss(&q, &items, lambda)?;
        q.values_mut()[k] = orig;
        let fd = (lp - lm) / (2.0 * h);
        worst = worst.max((grad[k] - fd).abs() / grad[k].abs().max(fd.abs()).max(1e-7));
    }
    Ok(worst)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransportCheck {
    pub mean_error: f64,
    pub max_error: f64,
    /// Mean of `‖x1 − x0‖`, for scale.
    pub mean_displacement: f64,
    /// Largest `error / (2ε‖x1 − x0‖)`; at most 1 (up to rounding) when `σ = 0`.
    pub max_clamp_ratio: f64,
    pub n_pairs: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianPairs {
    pub n_pairs: usize,
    pub dim: usize,
    /// Use `x1 = x0` for every pair.
    pub identical: bool,
    pub seed: u64,
}

impl Default for GaussianPairs {
    fn default() -> Self {
        Self {
            n_pairs: 1000,
            dim: 4,
            identical: false,
            seed: 0,
        }
    }
}

/// Pairs with `x0 ~ N(0, 0.5² I)` and `x1 ~ N(1, 0.5² I)`.
pub fn gaussian_pairs(spec: &GaussianPairs) -> Result<Vec<EndpointPair>> {
    let mut rng = RandomStream::derive(spec.seed, "oracle/gaussian-pairs", 0);
    let d_a = spec.dim / 2;
    (0..spec.n_pairs)
        .map(|_| {
            let x0: Vec<f64> = (0..spec.dim).map(|_| 0.5 * rng.normal()).collect();
            let x1: Vec<f64> = if spec.identical {
                x0.clone()
            } else {
                (0..spec.dim).map(|_| 1.0 + 0.5 * rng.normal()).collect()
            };
            EndpointPair::new(LatentState::from_concat(x0, d_a)?, LatentState::from_concat(x1, d_a)?)
        })
        .collect()
}

/// Integrates the exact conditional flow of each pair from `x0` over the plan
/// and measures `‖x(end) − x1‖`. With `σ = 0` the flow is the straight-line
/// field, so the only residual is the clamped segment.
pub fn gaussian_bridge_transport_check(schedule: &BridgeSchedule, plan: &IntegrationPlan, pairs: &[EndpointPair]) -> Result<TransportCheck> {
    let mut out = TransportCheck {
        mean_error: 0.0,
        max_error: 0.0,
        mean_displacement: 0.0,
        max_clamp_ratio: 0.0,
        n_pairs: pairs.len(),
    };
    for pair in pairs {
        let end = if schedule.sigma == 0.0 {
            let u = cfm_conditional_flow(pair)?;
            euler_ode(|_, _| Ok(u.clone()), &pair.x0, plan)?
        } else {
            euler_ode(|x, t| sb_conditional_flow(pair, x, t, schedule), &pair.x0, plan)?
        }
        .into_last();
        let err = end.distance(&pair.x1);
        let disp = pair.x0.distance(&pair.x1);
        out.mean_error += err;
        out.mean_displacement += disp;
        out.max_error = out.max_error.max(err);
        if disp > 0.0 {
            out.max_clamp_ratio = out.max_clamp_ratio.max(err / (2.0 * schedule.eps_clamp * disp));
        }
    }
    if !pairs.is_empty() {
        out.mean_error /= pairs.len() as f64;
        out.mean_displacement /= pairs.len() as f64;
    }
    Ok(out)
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn check_sets(a: &[&[f64]], b: &[&[f64]]) -> Result<usize> {
    if a.is_empty() || b.is_empty() {
        return Err(SbfmError::Dimension("energy distance needs non-empty sets".into()));
    }
    let d = a[0].len();
    if a.iter().chain(b).any(|v| v.len() != d) {
        return Err(SbfmError::Dimension("energy distance needs equal dimensions".into()));
    }
    Ok(d)
}

fn within_mean(s: &[&[f64]]) -> f64 {
    let n = s.len();
    if n < 2 {
        return 0.0;
    }
    let mut sum = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            sum += euclid(s[i], s[j]);
        }
    }
    2.0 * sum / (n * (n - 1)) as f64
}

/// `2E‖A − B‖ − E‖A − A'‖ − E‖B − B'‖` with U-statistic within-set terms.
pub fn energy_distance(a: &[&[f64]], b: &[&[f64]]) -> Result<f64> {
    check_sets(a, b)?;
    // Fixed iteration order so that swapping the arguments is bit-exact.
    let key = |s: &[&[f64]]| (s.len(), s[0].iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    let (p, q) = if key(a) <= key(b) { (a, b) } else { (b, a) };
    let mut cross = 0.0;
    for x in p {
        for y in q {
            cross += euclid(x, y);
        }
    }
    cross /= (a.len() * b.len()) as f64;
    Ok(2.0 * cross - (within_mean(a) + within_mean(b)))
}

/// Energy distance from a pooled distance matrix and a label vector.
fn labelled_energy(dist: &[f64], n: usize, in_a: &[bool]) -> f64 {
    let (mut aa, mut bb, mut ab) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let row = &dist[i * n..(i + 1) * n];
        for j in i + 1..n {
            match (in_a[i], in_a[j]) {
                (true, true) => aa += row[j],
                (false, false) => bb += row[j],
                _ => ab += row[j],
            }
        }
    }
    let na = in_a.iter().filter(|&&x| x).count();
    let nb = n - na;
    let pairs = |k: usize| (k * k.saturating_sub(1) / 2).max(1) as f64;
    2.0 * ab / (na * nb) as f64 - aa / pairs(na) - bb / pairs(nb)
}

fn pooled_distances(sets: &[&[f64]]) -> Vec<f64> {
    let n = sets.len();
    let mut dist = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let d = euclid(sets[i], sets[j]);
            dist[i * n + j] = d;
            dist[j * n + i] = d;
        }
    }
    dist
}

fn upper_quantile(mut values: Vec<f64>, level: f64) -> f64 {
    values.sort_by(f64::total_cmp);
    let k = (((1.0 - level) * values.len() as f64).ceil() as usize).clamp(1, values.len());
    values[k - 1]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PermutationResult {
    pub statistic: f64,
    /// `(1 − level)` quantile of the permutation null.
    pub threshold: f64,
    pub p_value: f64,
}

/// Two-sample permutation test on pooled labels.
pub fn permutation_test(a: &[&[f64]], b: &[&[f64]], n_perm: usize, rng: &mut RandomStream) -> Result<PermutationResult> {
    check_sets(a, b)?;
    let pooled: Vec<&[f64]> = a.iter().chain(b).copied().collect();
    let n = pooled.len();
    let dist = pooled_distances(&pooled);
    let mut labels: Vec<bool> = (0..n).map(|i| i < a.len()).collect();
    let statistic = labelled_energy(&dist, n, &labels);
    let mut null = Vec::with_capacity(n_perm);
    for _ in 0..n_perm {
        rng.shuffle(&mut labels);
        null.push(labelled_energy(&dist, n, &labels));
    }
    let exceed = null.iter().filter(|&&v| v >= statistic).count();
    Ok(PermutationResult {
        statistic,
        threshold: upper_quantile(null, SIGNIFICANCE_LEVEL),
        p_value: (exceed + 1) as f64 / (n_perm + 1) as f64,
    })
}

/// Null threshold from random halves of a single (true) sample set: the
/// `(1 − level)` quantile of energy distances between the two halves.
pub fn split_null_threshold(set: &[&[f64]], n_perm: usize, rng: &mut RandomStream) -> Result<f64> {
    if set.len() < 4 {
        return Err(SbfmError::Dimension("split threshold needs at least 4 samples".into()));
    }
    check_sets(set, set)?;
    let n = set.len();
    let dist = pooled_distances(set);
    let mut labels: Vec<bool> = (0..n).map(|i| i < n / 2).collect();
    let null = (0..n_perm)
        .map(|_| {
            rng.shuffle(&mut labels);
            labelled_energy(&dist, n, &labels)
        })
        .collect();
    Ok(upper_quantile(null, SIGNIFICANCE_LEVEL))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockMetrics {
    pub paired_mse: f64,
    pub baseline_mse: f64,
    pub energy_distance: f64,
    pub energy_threshold: f64,
}

impl BlockMetrics {
    pub fn mse_ratio(&self) -> f64 {
        self.paired_mse / self.baseline_mse
    }

    pub fn energy_within_null(&self) -> bool {
        self.energy_distance < self.energy_threshold
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub audio: BlockMetrics,
    pub video: BlockMetrics,
    pub joint: BlockMetrics,
    pub n_evaluated: usize,
    pub divergent: Vec<usize>,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairOutcome {
    pub index: usize,
    /// `None` when the trajectory diverged.
    pub generated: Option<LatentState>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalSettings {
    pub n_perm: usize,
    pub seed: u64,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            n_perm: PERMUTATIONS,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy)]
enum Block {
    Audio,
    Video,
    Joint,
}

fn block(x: &LatentState, b: Block) -> &[f64] {
    match b {
        Block::Audio => x.audio(),
        Block::Video => x.video(),
        Block::Joint => x.as_slice(),
    }
}

fn mse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len().max(1) as f64
}

fn block_metrics(pairs: &[EndpointPair], generated: &[&LatentState], b: Block, settings: &EvalSettings, salt: u64) -> Result<BlockMetrics> {
    let n = pairs.len() as f64;
    let paired_mse = pairs.iter().zip(generated).map(|(p, g)| mse(block(g, b), block(&p.x1, b))).sum::<f64>() / n;
    let baseline_mse = pairs.iter().map(|p| mse(block(&p.x0, b), block(&p.x1, b))).sum::<f64>() / n;
    let gen: Vec<&[f64]> = generated.iter().map(|g| block(g, b)).collect();
    let truth: Vec<&[f64]> = pairs.iter().map(|p| block(&p.x1, b)).collect();
    let energy_distance = energy_distance(&gen, &truth)?;
    let mut rng = RandomStream::derive(settings.seed, crate::rng::streams::EVAL, salt);
    let energy_threshold = split_null_threshold(&truth, settings.n_perm, &mut rng)?;
    Ok(BlockMetrics {
        paired_mse,
        baseline_mse,
        energy_distance,
        energy_threshold,
    })
}

/// Metrics over the non-divergent outcomes. Baseline and energy terms use the
/// same surviving pairs as the paired error.
pub fn metric_report(pairs: &[EndpointPair], outcomes: &[PairOutcome], settings: &EvalSettings) -> Result<MetricReport> {
    let divergent: Vec<usize> = outcomes.iter().filter(|o| o.generated.is_none()).map(|o| o.index).collect();
    let kept: Vec<(EndpointPair, &LatentState)> = outcomes
        .iter()
        .filter_map(|o| o.generated.as_ref().map(|g| (pairs[o.index].clone(), g)))
        .collect();
    if kept.len() < 4 {
        return Err(SbfmError::Dimension(format!("only {} non-divergent pairs to evaluate", kept.len())));
    }
    let (kp, kg): (Vec<EndpointPair>, Vec<&LatentState>) = kept.into_iter().unzip();
    Ok(MetricReport {
        audio: block_metrics(&kp, &kg, Block::Audio, settings, 0)?,
        video: block_metrics(&kp, &kg, Block::Video, settings, 1)?,
        joint: block_metrics(&kp, &kg, Block::Joint, settings, 2)?,
        n_evaluated: kp.len(),
        divergent,
        note: METRIC_NOTE.into(),
    })
}

/// Runs `sampler` from every `x0`; errors from the sampler count as divergence.
pub fn evaluate_transport<F>(pairs: &[EndpointPair], mut sampler: F, settings: &EvalSettings) -> Result<(MetricReport, Vec<PairOutcome>)>
where
    F: FnMut(usize, &LatentState) -> Result<LatentState>,
{
    let outcomes: Vec<PairOutcome> = pairs
        .iter()
        .enumerate()
        .map(|(index, p)| PairOutcome {
            index,
            generated: sampler(index, &p.x0).ok().filter(LatentState::is_finite),
        })
        .collect();
    Ok((metric_report(pairs, &outcomes, settings)?, outcomes))
}

/// Euler integration of the learned field for every test pair at once, one
/// batched forward per step. Paths that turn non-finite are dropped from
/// later steps and returned as `None`.
pub fn sample_model(params: &FieldParams, pairs: &[RemovalPair], plan: &IntegrationPlan) -> Result<Vec<Option<Trajectory>>> {
    let h = plan.step_size();
    let mut states: Vec<Option<LatentState>> = pairs.iter().map(|p| Some(p.x0.clone())).collect();
    let mut paths: Vec<Option<Trajectory>> = states
        .iter()
        .map(|x| x.as_ref().map(|x| Trajectory::starting_at(plan, x)))
        .collect();
    for k in 0..plan.n_steps {
        let t = TimePoint::saturating(plan.time(k));
        let live: Vec<usize> = (0..pairs.len()).filter(|&i| states[i].is_some()).collect();
        if live.is_empty() {
            break;
        }
        for chunk in live.chunks(256) {
            let inputs: Vec<FieldInput<'_>> = chunk
                .iter()
                .map(|&i| FieldInput {
                    x: states[i].as_ref().expect("live path"),
                    t,
                    cond: &pairs[i].cond,
                })
                .collect();
            let (va, vv) = params.forward_batch(&inputs)?;
            for (row, &i) in chunk.iter().enumerate() {
                let x = states[i].as_mut().expect("live path");
                for (xi, vi) in x.audio_mut().iter_mut().zip(va.row(row)) {
                    *xi += h * vi;
                }
                for (xi, vi) in x.video_mut().iter_mut().zip(vv.row(row)) {
                    *xi += h * vi;
                }
            }
        }
        for &i in &live {
            if states[i].as_ref().is_some_and(|x| !x.is_finite()) {
                states[i] = None;
                paths[i] = None;
            } else if let (Some(path), Some(x)) = (paths[i].as_mut(), states[i].as_ref()) {
                path.record(plan, k + 1, x);
            }
        }
    }
    Ok(paths)
}

pub fn evaluate_model(params: &FieldParams, pairs: &[RemovalPair], plan: &IntegrationPlan, settings: &EvalSettings) -> Result<(MetricReport, Vec<PairOutcome>)> {
    let plan = IntegrationPlan {
        record_path: false,
        ..*plan
    };
    let paths = sample_model(params, pairs, &plan)?;
    let outcomes: Vec<PairOutcome> = paths
        .into_iter()
        .enumerate()
        .map(|(index, p)| PairOutcome {
            index,
            generated: p.map(Trajectory::into_last),
        })
        .collect();
    let endpoints: Vec<EndpointPair> = pairs.iter().map(RemovalPair::endpoints).collect();
    Ok((metric_report(&endpoints, &outcomes, settings)?, outcomes))
}

/// One row per pair: `pair,status,audio_se,video_se,baseline_audio_se,baseline_video_se`.
pub fn write_pair_errors_csv<W: Write>(mut out: W, pairs: &[EndpointPair], outcomes: &[PairOutcome]) -> std::io::Result<()> {
    writeln!(out, "pair,status,audio_se,video_se,baseline_audio_se,baseline_video_se")?;
    for o in outcomes {
        let p = &pairs[o.index];
        let base_a = mse(p.x0.audio(), p.x1.audio()) * p.x0.d_a() as f64;
        let base_v = mse(p.x0.video(), p.x1.video()) * p.x0.d_v() as f64;
        match &o.generated {
            Some(g) => {
                let ea = mse(g.audio(), p.x1.audio()) * g.d_a() as f64;
                let ev = mse(g.video(), p.x1.video()) * g.d_v() as f64;
                writeln!(out, "{},ok,{ea},{ev},{base_a},{base_v}", o.index)?;
            }
            None => writeln!(out, "{},divergent,,,{base_a},{base_v}", o.index)?,
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field_model::{FieldArch, HeadKind};
    use crate::toy_data::{generate_dataset, DataConfig};

    /// The 1-D case repeated in both blocks.
    fn one_d(x0: f64, x1: f64) -> EndpointPair {
        EndpointPair::new(
            LatentState::from_concat(vec![x0, x0], 1).unwrap(),
            LatentState::from_concat(vec![x1, x1], 1).unwrap(),
        )
        .unwrap()
    }

    fn point(x: f64) -> LatentState {
        LatentState::from_concat(vec![x, x], 1).unwrap()
    }

    #[test]
    fn score_fd_worked_example() {
        let pair = one_d(0.0, 2.0);
        let s = BridgeSchedule::new(1.0, 1e-3).unwrap();
        let x = point(1.0);
        let t = TimePoint::new(0.25).unwrap();
        let score = conditional_score(&pair, &x, t, &s).unwrap();
        assert!((score.as_slice()[0] + 8.0 / 3.0).abs() < 1e-14);
        assert!(fd_score_check(&pair, &s, &x, t).unwrap().max_rel_error < 1e-6);
    }

    #[test]
    fn score_fd_at_mean_is_near_zero() {
        let pair = one_d(0.0, 2.0);
        let s = BridgeSchedule::new(1.0, 1e-3).unwrap();
        let t = TimePoint::new(0.25).unwrap();
        let mu = mean_path(&pair, t).unwrap();
        assert!(fd_score_check(&pair, &s, &mu, t).unwrap().max_abs_error < 1e-8);
    }

    #[test]
    fn score_fd_random_batch() {
        let mut rng = RandomStream::from_seed(11);
        let s = BridgeSchedule::new(0.3, 1e-3).unwrap();
        for _ in 0..100 {
            let mut a = vec![0.0; 6];
            let mut b = vec![0.0; 6];
            rng.fill_normal(&mut a);
            rng.fill_normal(&mut b);
            let pair = EndpointPair::new(LatentState::from_concat(a, 3).unwrap(), LatentState::from_concat(b, 3).unwrap()).unwrap();
            let t = TimePoint::new(rng.uniform(0.05, 0.95)).unwrap();
            let x = sample_bridge_point(&pair, &s, t, &mut rng).unwrap();
            let check = fd_score_check(&pair, &s, &x, t).unwrap();
            assert!(check.max_rel_error < 1e-6, "{check:?}");
        }
    }

    #[test]
    fn chain_single_point_and_suite() {
        let mut rng = RandomStream::from_seed(1);
        let pair = one_d(-0.4, 1.3);
        let s = BridgeSchedule::new(0.7, 1e-3).unwrap();
        assert!(derivation_chain_check(&pair, &s, 1, &mut rng).unwrap().passes(1e-12));
        let suite = derivation_chain_suite(10_000, 4, 1e-3, &mut rng).unwrap();
        assert_eq!(suite.n_points, 10_000);
        assert!(suite.passes(1e-10), "{suite:?}");
    }

    #[test]
    fn chain_zero_sigma_path_points_are_exact() {
        let mut rng = RandomStream::from_seed(2);
        let s = BridgeSchedule::new(0.0, 1e-3).unwrap();
        let pair = one_d(0.3, -2.0);
        let c = derivation_chain_check(&pair, &s, 500, &mut rng).unwrap();
        assert_eq!(c.decomposition_deviation, 0.0);
        for _ in 0..500 {
            let t = TimePoint::new(rng.uniform(1e-3, 1.0 - 1e-3)).unwrap();
            let x = sample_bridge_point(&pair, &s, t, &mut rng).unwrap();
            assert_eq!(sb_conditional_flow(&pair, &x, t, &s).unwrap(), cfm_conditional_flow(&pair).unwrap());
        }
    }

    #[test]
    fn transport_error_small_and_first_order() {
        let s = BridgeSchedule::new(0.1, 1e-3).unwrap();
        let pairs = gaussian_pairs(&GaussianPairs::default()).unwrap();
        let plan = IntegrationPlan::clamped(&s, 30, false).unwrap();
        let e30 = gaussian_bridge_transport_check(&s, &plan, &pairs).unwrap();
        let e60 = gaussian_bridge_transport_check(&s, &plan.with_steps(60), &pairs).unwrap();
        let e120 = gaussian_bridge_transport_check(&s, &plan.with_steps(120), &pairs).unwrap();
        assert!(e30.mean_error < 5e-2, "{e30:?}");
        let ratio = e30.mean_error / e60.mean_error;
        assert!((1.7..=2.3).contains(&ratio), "ratio {ratio}");
        assert!(e120.mean_error <= e60.mean_error && e60.mean_error <= e30.mean_error);
    }

    #[test]
    fn transport_zero_sigma_limited_by_clamp() {
        let s = BridgeSchedule::new(0.0, 1e-3).unwrap();
        let pairs = gaussian_pairs(&GaussianPairs::default()).unwrap();
        let plan = IntegrationPlan::clamped(&s, 30, false).unwrap();
        let c = gaussian_bridge_transport_check(&s, &plan, &pairs).unwrap();
        assert!(c.max_clamp_ratio <= 1.0 + 1e-9, "{c:?}");
    }

    #[test]
    fn transport_identical_endpoints() {
        let s = BridgeSchedule::new(0.1, 1e-3).unwrap();
        let pairs = gaussian_pairs(&GaussianPairs {
            identical: true,
            ..GaussianPairs::default()
        })
        .unwrap();
        let plan = IntegrationPlan::clamped(&s, 30, false).unwrap();
        assert!(gaussian_bridge_transport_check(&s, &plan, &pairs).unwrap().max_error < 1e-12);
    }

    fn gaussian_set(n: usize, mean: f64, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = RandomStream::from_seed(seed);
        (0..n).map(|_| vec![mean + rng.normal(), rng.normal()]).collect()
    }

    fn refs(v: &[Vec<f64>]) -> Vec<&[f64]> {
        v.iter().map(Vec::as_slice).collect()
    }

    #[test]
    fn energy_symmetric_and_identical_sets() {
        let a = gaussian_set(300, 0.0, 1);
        let b = gaussian_set(200, 0.5, 2);
        let ab = energy_distance(&refs(&a), &refs(&b)).unwrap();
        let ba = energy_distance(&refs(&b), &refs(&a)).unwrap();
        assert_eq!(ab, ba);
        // Identical sets: the U-statistic sits slightly below zero.
        let same = energy_distance(&refs(&a), &refs(&a)).unwrap();
        assert!(same <= 1e-12 && same > -0.05, "{same}");
        assert!(energy_distance(&[], &refs(&a)).is_err());
    }

    #[test]
    fn energy_matches_pooled_matrix_form() {
        let a = gaussian_set(40, 0.0, 3);
        let b = gaussian_set(25, 1.0, 4);
        let direct = energy_distance(&refs(&a), &refs(&b)).unwrap();
        let pooled: Vec<&[f64]> = refs(&a).into_iter().chain(refs(&b)).collect();
        let labels: Vec<bool> = (0..65).map(|i| i < 40).collect();
        let via = labelled_energy(&pooled_distances(&pooled), 65, &labels);
        assert!((direct - via).abs() < 1e-12);
    }

    #[test]
    fn permutation_separates_shifted_gaussians() {
        let mut rng = RandomStream::from_seed(9);
        let a = gaussian_set(300, 0.0, 5);
        let b = gaussian_set(300, 3.0, 6);
        let r = permutation_test(&refs(&a), &refs(&b), PERMUTATIONS, &mut rng).unwrap();
        assert!(r.statistic > r.threshold && r.statistic > 0.0, "{r:?}");
        assert!(r.p_value < 0.01);
    }

    #[test]
    fn permutation_accepts_same_distribution() {
        let mut rng = RandomStream::from_seed(10);
        let a = gaussian_set(2000, 0.0, 7);
        let b = gaussian_set(2000, 0.0, 8);
        let r = permutation_test(&refs(&a), &refs(&b), PERMUTATIONS, &mut rng).unwrap();
        assert!(r.statistic < r.threshold, "{r:?}");
    }

    fn removal_pairs() -> Vec<RemovalPair> {
        let ds = generate_dataset(&DataConfig {
            n_pairs: 120,
            t_a: 8,
            t_v: 4,
            c_v: 2,
            ..DataConfig::default()
        })
        .unwrap();
        ds.pairs
    }

    #[test]
    fn zero_field_is_identity_transport() {
        let pairs = removal_pairs();
        let data = DataConfig {
            t_a: 8,
            t_v: 4,
            c_v: 2,
            ..DataConfig::default()
        };
        let cfg = crate::trainer::field_config_for(
            &FieldArch {
                trunk_width: 8,
                trunk_depth: 1,
                head_width: 4,
                head_depth: 1,
                heads: HeadKind::Mlp,
                ..FieldArch::default()
            },
            &data,
        );
        let params = FieldParams::zeros(cfg).unwrap();
        let plan = IntegrationPlan::clamped(&BridgeSchedule::default(), 30, false).unwrap();
        let (r, outcomes) = evaluate_model(&params, &pairs, &plan, &EvalSettings::default()).unwrap();
        assert!(r.divergent.is_empty());
        assert_eq!(outcomes.len(), pairs.len());
        for b in [r.audio, r.video, r.joint] {
            assert_eq!(b.paired_mse, b.baseline_mse);
        }
    }

    #[test]
    fn oracle_field_error_matches_euler_endpoint_error() {
        let pairs: Vec<EndpointPair> = removal_pairs().iter().map(RemovalPair::endpoints).collect();
        let s = BridgeSchedule::default();
        let plan = IntegrationPlan::clamped(&s, 30, false).unwrap();
        let (r, _) = evaluate_transport(
            &pairs,
            |i, x0| Ok(euler_ode(|x, t| sb_conditional_flow(&pairs[i], x, t, &s), x0, &plan)?.into_last()),
            &EvalSettings::default(),
        )
        .unwrap();
        let check = gaussian_bridge_transport_check(&s, &plan, &pairs).unwrap();
        // Exact field: the endpoint error is a fixed multiple of x1 − x0.
        let dim = pairs[0].x0.dim() as f64;
        let from_check = pairs
            .iter()
            .map(|p| {
                let e = check.mean_error / check.mean_displacement * p.x0.distance(&p.x1);
                e * e
            })
            .sum::<f64>()
            / pairs.len() as f64
            / dim;
        assert!((r.joint.paired_mse / from_check - 1.0).abs() < 1e-6, "{} vs {from_check}", r.joint.paired_mse);
        assert!(r.joint.mse_ratio() < 1e-3);
        assert!(r.joint.energy_within_null());
    }

    #[test]
    fn divergent_paths_are_reported() {
        let pairs: Vec<EndpointPair> = removal_pairs().iter().map(RemovalPair::endpoints).collect();
        let (r, outcomes) = evaluate_transport(
            &pairs,
            |i, x0| {
                if i % 10 == 3 {
                    Err(SbfmError::Divergence { step: 4 })
                } else {
                    Ok(x0.clone())
                }
            },
            &EvalSettings::default(),
        )
        .unwrap();
        assert_eq!(r.divergent, (0..pairs.len()).filter(|i| i % 10 == 3).collect::<Vec<_>>());
        assert_eq!(r.n_evaluated + r.divergent.len(), pairs.len());
        let mut csv = Vec::new();
        write_pair_errors_csv(&mut csv, &pairs, &outcomes).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert_eq!(text.lines().filter(|l| l.contains("divergent")).count(), r.divergent.len());
    }
}
