//! AdamW with linear warmup, the epoch loop, checkpoint retention and the
//! run manifest.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SbfmError};
use crate::field_model::{save_checkpoint, FieldArch, FieldConfig, FieldInput, FieldParams};
use crate::objective::{draw_training_point, weighted_loss, zero_field_baseline, DrawStreams, LossConfig, LossReport, TrainingPoint};
use crate::rng::{streams, RandomStream};
use crate::toy_data::{DataConfig, Dataset, RemovalPair};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub lr_init: f64,
    pub lr_peak: f64,
    pub warmup_steps: u64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub seed: u64,
    /// Global gradient-norm clip; `0` disables clipping.
    pub max_grad_norm: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
            lr_init: 1e-5,
            lr_peak: 1e-4,
            warmup_steps: 5000,
            batch_size: 64,
            max_epochs: 150,
            seed: 0,
            max_grad_norm: 0.0,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(SbfmError::Config(msg));
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad(format!("betas must lie in [0, 1): {} {}", self.beta1, self.beta2));
        }
        if self.lr_init > self.lr_peak || self.lr_init < 0.0 {
            return bad(format!("need 0 <= lr_init <= lr_peak, got {} / {}", self.lr_init, self.lr_peak));
        }
        if self.warmup_steps == 0 {
            return bad("warmup_steps must be >= 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if self.eps <= 0.0 || self.weight_decay < 0.0 || self.max_grad_norm < 0.0 {
            return bad("eps must be > 0; weight_decay and max_grad_norm must be >= 0".into());
        }
        Ok(())
    }
}

/// Linear ramp from `lr_init` at step 0 to `lr_peak` at `warmup_steps`, flat after.
pub fn lr_at(step: u64, config: &OptimConfig) -> f64 {
    if step >= config.warmup_steps {
        return config.lr_peak;
    }
    let frac = step as f64 / config.warmup_steps as f64;
    config.lr_init + frac * (config.lr_peak - config.lr_init)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    /// Completed updates.
    pub step: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }
}

/// One AdamW update at learning rate `lr_at(state.step)`. Decay is applied to
/// the parameters first, then the bias-corrected adaptive step.
pub fn optimizer_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, config: &OptimConfig) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(SbfmError::Dimension(format!(
            "params {} / grads {} / moments {}",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(SbfmError::NonFiniteGradient { step: state.step as usize });
    }
    let lr = lr_at(state.step, config);
    state.step += 1;
    let bc1 = 1.0 - config.beta1.powi(state.step as i32);
    let bc2 = 1.0 - config.beta2.powi(state.step as i32);
    let decay = lr * config.weight_decay;
    for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        *p -= decay * *p;
        *m = config.beta1 * *m + (1.0 - config.beta1) * g;
        *v = config.beta2 * *v + (1.0 - config.beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= lr * m_hat / (v_hat.sqrt() + config.eps);
    }
    Ok(())
}

fn clip_gradient(grads: &mut [f64], max_norm: f64) {
    if max_norm <= 0.0 {
        return;
    }
    let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        grads.iter_mut().for_each(|g| *g *= s);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestConfig {
    pub field: FieldConfig,
    pub loss: LossConfig,
    pub optim: OptimConfig,
    pub data: DataConfig,
    pub threads: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub optimizer_steps: u64,
    pub train: LossReport,
    pub validation: LossReport,
    pub wall_clock_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: ManifestConfig,
    pub dataset_digest: String,
    pub seed: u64,
    pub status: String,
    /// Closed-form validation loss of the zero field.
    pub zero_field_baseline: LossReport,
    pub epochs: Vec<EpochRecord>,
    pub selected_checkpoint: Option<String>,
    pub selected_epoch: Option<usize>,
    pub selected_validation_total: Option<f64>,
}

impl RunManifest {
    /// Copy with wall-clock fields zeroed, for reproducibility comparisons.
    pub fn without_wall_clock(&self) -> Self {
        let mut m = self.clone();
        for e in &mut m.epochs {
            e.wall_clock_secs = 0.0;
        }
        m
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

pub struct TrainSpec<'a> {
    pub dataset: &'a Dataset,
    pub dataset_digest: String,
    pub arch: FieldArch,
    pub loss: LossConfig,
    pub optim: OptimConfig,
    /// `0` is the single-threaded deterministic mode; `n > 0` splits each
    /// batch into `n` shards evaluated concurrently and summed in shard order.
    pub threads: usize,
    pub run_dir: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub manifest: RunManifest,
    pub best: Option<FieldParams>,
    pub last: FieldParams,
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const BEST_CHECKPOINT: &str = "best.sbfm";
pub const LAST_CHECKPOINT: &str = "last.sbfm";

pub fn field_config_for(arch: &FieldArch, data: &DataConfig) -> FieldConfig {
    arch.config_for(data.d_a(), data.d_v(), data.phi_a_dim(), data.phi_v_dim())
}

struct Batch<'a> {
    points: Vec<TrainingPoint>,
    pairs: Vec<&'a RemovalPair>,
}

fn draw_batch<'a>(pairs: Vec<&'a RemovalPair>, loss: &LossConfig, s: &mut DrawStreams) -> Result<Batch<'a>> {
    let points = pairs
        .iter()
        .map(|p| draw_training_point(&p.endpoints(), loss, s))
        .collect::<Result<Vec<_>>>()?;
    Ok(Batch { points, pairs })
}

/// Loss (unnormalised sums, so shards can be added) and gradient for a slice
/// of a batch, scaled as part of a batch of `total` samples.
fn shard_grad(params: &FieldParams, batch: &Batch<'_>, range: std::ops::Range<usize>, total: usize, lambda: f64) -> Result<(Vec<f64>, f64, f64)> {
    let pts = &batch.points[range.clone()];
    let inputs: Vec<FieldInput<'_>> = pts
        .iter()
        .zip(&batch.pairs[range])
        .map(|(tp, pair)| FieldInput {
            x: &tp.x_t,
            t: tp.t,
            cond: &pair.cond,
        })
        .collect();
    let (tape, va, vv) = params.forward_tape(&inputs)?;
    let (ta, tv) = target_matrices(pts);
    let ra = &va - &ta;
    let rv = &vv - &tv;
    let scale = 2.0 / total as f64;
    let grad = params.backward_tape(&tape, &(&ra * scale), &(&rv * (scale * lambda)))?;
    let sa = ra.iter().map(|r| r * r).sum::<f64>();
    let sv = rv.iter().map(|r| r * r).sum::<f64>();
    Ok((grad, sa, sv))
}

fn target_matrices(pts: &[TrainingPoint]) -> (Array2<f64>, Array2<f64>) {
    let d_a = pts.first().map_or(0, |p| p.target.d_a());
    let d_v = pts.first().map_or(0, |p| p.target.d_v());
    let ta = Array2::from_shape_fn((pts.len(), d_a), |(i, k)| pts[i].target_a()[k]);
    let tv = Array2::from_shape_fn((pts.len(), d_v), |(i, k)| pts[i].target_v()[k]);
    (ta, tv)
}

fn batch_grad(params: &FieldParams, batch: &Batch<'_>, lambda: f64, threads: usize) -> Result<(Vec<f64>, LossReport)> {
    let n = batch.points.len();
    let shards = threads.max(1).min(n);
    let results: Vec<Result<(Vec<f64>, f64, f64)>> = if shards <= 1 {
        vec![shard_grad(params, batch, 0..n, n, lambda)]
    } else {
        let bounds: Vec<_> = (0..shards).map(|s| (s * n / shards)..((s + 1) * n / shards)).collect();
        std::thread::scope(|scope| {
            let handles: Vec<_> = bounds
                .into_iter()
                .map(|r| scope.spawn(move || shard_grad(params, batch, r, n, lambda)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("gradient shard panicked"))
                .collect()
        })
    };
    let mut grad = vec![0.0; params.len()];
    let (mut sa, mut sv) = (0.0, 0.0);
    for r in results {
        let (g, a, v) = r?;
        grad.iter_mut().zip(&g).for_each(|(acc, x)| *acc += x);
        sa += a;
        sv += v;
    }
    Ok((grad, LossReport::from_parts(sa / n as f64, sv / n as f64, lambda, n)))
}

/// Loss of `params` on pre-drawn points, evaluated in chunks.
pub fn evaluate_loss(params: &FieldParams, points: &[TrainingPoint], pairs: &[RemovalPair], lambda: f64) -> Result<LossReport> {
    let mut reports = Vec::new();
    for (pts, prs) in points.chunks(256).zip(pairs.chunks(256)) {
        let inputs: Vec<FieldInput<'_>> = pts
            .iter()
            .zip(prs)
            .map(|(tp, p)| FieldInput {
                x: &tp.x_t,
                t: tp.t,
                cond: &p.cond,
            })
            .collect();
        let (va, vv) = params.forward_batch(&inputs)?;
        let (ta, tv) = target_matrices(pts);
        reports.push(weighted_loss(va.view(), vv.view(), ta.view(), tv.view(), lambda)?);
    }
    Ok(LossReport::merge(&reports, lambda).unwrap_or(LossReport::from_parts(0.0, 0.0, lambda, 0)))
}

/// Fixed validation draws, identical for every epoch.
pub fn validation_points(pairs: &[RemovalPair], loss: &LossConfig, seed: u64) -> Result<Vec<TrainingPoint>> {
    let mut s = DrawStreams {
        time: RandomStream::derive(seed, streams::VALIDATION, 0),
        noise: RandomStream::derive(seed, streams::VALIDATION, 1),
    };
    pairs
        .iter()
        .map(|p| draw_training_point(&p.endpoints(), loss, &mut s))
        .collect()
}

pub fn train(spec: &TrainSpec<'_>) -> Result<TrainOutcome> {
    spec.loss.validate()?;
    spec.optim.validate()?;
    let data = spec.dataset;
    let field_cfg = field_config_for(&spec.arch, &data.config);
    let seed = spec.optim.seed;
    let lambda = spec.loss.lambda;
    let train_set = data.train();
    let val_set = data.validation();
    if train_set.is_empty() || val_set.is_empty() {
        return Err(SbfmError::Config("dataset too small for a train/validation split".into()));
    }
    let val_pairs: Vec<_> = val_set.iter().map(RemovalPair::endpoints).collect();
    let mut manifest = RunManifest {
        config: ManifestConfig {
            field: field_cfg.clone(),
            loss: spec.loss,
            optim: spec.optim.clone(),
            data: data.config.clone(),
            threads: spec.threads,
        },
        dataset_digest: spec.dataset_digest.clone(),
        seed,
        status: "running".into(),
        zero_field_baseline: zero_field_baseline(&val_pairs, &spec.loss)?,
        epochs: Vec::new(),
        selected_checkpoint: None,
        selected_epoch: None,
        selected_validation_total: None,
    };
    if let Some(dir) = &spec.run_dir {
        fs::create_dir_all(dir)?;
    }

    let mut params = FieldParams::init(field_cfg, &mut RandomStream::derive(seed, streams::INIT, 0))?;
    let mut state = AdamState::new(params.len());
    let val_points = validation_points(val_set, &spec.loss, seed)?;
    let mut best: Option<FieldParams> = None;

    let result = (|| -> Result<()> {
        for epoch in 0..spec.optim.max_epochs {
            let started = Instant::now();
            let mut order: Vec<usize> = (0..train_set.len()).collect();
            RandomStream::derive(seed, streams::SHUFFLE, epoch as u64).shuffle(&mut order);
            let mut draws = DrawStreams {
                time: RandomStream::derive(seed, streams::TIME_DRAWS, epoch as u64),
                noise: RandomStream::derive(seed, streams::BRIDGE_NOISE, epoch as u64),
            };
            let mut reports = Vec::new();
            for chunk in order.chunks(spec.optim.batch_size) {
                let batch = draw_batch(chunk.iter().map(|&i| &train_set[i]).collect(), &spec.loss, &mut draws)?;
                let (mut grad, report) = batch_grad(&params, &batch, lambda, spec.threads)?;
                clip_gradient(&mut grad, spec.optim.max_grad_norm);
                optimizer_step(params.values_mut(), &grad, &mut state, &spec.optim)?;
                reports.push(report);
            }
            let train_report = LossReport::merge(&reports, lambda).expect("non-empty training split");
            let val_report = evaluate_loss(&params, &val_points, val_set, lambda)?;
            manifest.epochs.push(EpochRecord {
                epoch,
                optimizer_steps: state.step,
                train: train_report,
                validation: val_report,
                wall_clock_secs: started.elapsed().as_secs_f64(),
            });
            if !val_report.total.is_finite() {
                return Err(SbfmError::TrainingDiverged { epoch });
            }
            let improved = manifest.selected_validation_total.is_none_or(|b| val_report.total < b);
            if improved {
                manifest.selected_epoch = Some(epoch);
                manifest.selected_checkpoint = Some(format!("epoch-{epoch:04}"));
                manifest.selected_validation_total = Some(val_report.total);
                best = Some(params.clone());
            }
            if let Some(dir) = &spec.run_dir {
                save_checkpoint(&dir.join(LAST_CHECKPOINT), &params)?;
                if improved {
                    save_checkpoint(&dir.join(BEST_CHECKPOINT), &params)?;
                }
                manifest.write(&dir.join(MANIFEST_FILE))?;
            }
        }
        Ok(())
    })();

    manifest.status = match &result {
        Ok(()) => "completed".into(),
        Err(e) => format!("aborted: {e}"),
    };
    if let Some(dir) = &spec.run_dir {
        manifest.write(&dir.join(MANIFEST_FILE))?;
    }
    result?;
    Ok(TrainOutcome {
        manifest,
        best,
        last: params,
    })
}
