//! Trainable velocity field `v_θ(x, t, y) = [v_a, v_v]`.
//!
//! A dense trunk reads `[x, time_embedding(t) + P·φ_a, φ_v]`; two heads map the
//! trunk features to the audio and video velocity blocks. Parameters live in
//! one flat `f64` vector addressed through a [`ParamLayout`], and gradients
//! are computed by explicit reverse-mode passes over cached activations.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use ndarray::{s, Array2, ArrayView2, ArrayViewMut2, Axis};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bridge_math::{LatentState, TimePoint};
use crate::error::{Result, SbfmError};
use crate::rng::RandomStream;

/// Largest angular frequency of the sinusoidal time features.
pub const MAX_TIME_FREQUENCY: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Tanh,
    GeluApprox,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HeadKind {
    /// Hidden dense stack per head.
    Mlp,
    /// A single linear layer split into the two blocks.
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldConfig {
    pub d_a: usize,
    pub d_v: usize,
    pub trunk_width: usize,
    pub trunk_depth: usize,
    pub head_width: usize,
    /// Hidden layers per head; ignored for [`HeadKind::Linear`].
    pub head_depth: usize,
    pub heads: HeadKind,
    /// Length of `φ_a`.
    pub cond_dim: usize,
    /// Length of `φ_v`.
    pub visual_cond_dim: usize,
    pub time_embed_dim: usize,
    pub activation: Activation,
}

impl FieldConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("d_a", self.d_a),
            ("d_v", self.d_v),
            ("trunk_width", self.trunk_width),
            ("trunk_depth", self.trunk_depth),
            ("head_width", self.head_width),
            ("head_depth", self.head_depth),
            ("cond_dim", self.cond_dim),
            ("visual_cond_dim", self.visual_cond_dim),
            ("time_embed_dim", self.time_embed_dim),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(SbfmError::Config(format!("{name} must be >= 1")));
            }
        }
        if !self.time_embed_dim.is_multiple_of(2) {
            return Err(SbfmError::Config(format!(
                "time_embed_dim must be even, got {}",
                self.time_embed_dim
            )));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.d_a + self.d_v + self.time_embed_dim + self.visual_cond_dim
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn digest(&self) -> [u8; 32] {
        let bytes = serde_json::to_vec(self).expect("config serialises");
        Sha256::digest(&bytes).into()
    }
}

/// Architecture choices independent of the data dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FieldArch {
    pub trunk_width: usize,
    pub trunk_depth: usize,
    pub head_width: usize,
    pub head_depth: usize,
    pub heads: HeadKind,
    pub time_embed_dim: usize,
    pub activation: Activation,
}

impl Default for FieldArch {
    fn default() -> Self {
        Self {
            trunk_width: 128,
            trunk_depth: 3,
            head_width: 64,
            head_depth: 2,
            heads: HeadKind::Mlp,
            time_embed_dim: 16,
            activation: Activation::Tanh,
        }
    }
}

impl FieldArch {
    pub fn config_for(&self, d_a: usize, d_v: usize, cond_dim: usize, visual_cond_dim: usize) -> FieldConfig {
        FieldConfig {
            d_a,
            d_v,
            trunk_width: self.trunk_width,
            trunk_depth: self.trunk_depth,
            head_width: self.head_width,
            head_depth: self.head_depth,
            heads: self.heads,
            cond_dim,
            visual_cond_dim,
            time_embed_dim: self.time_embed_dim,
            activation: self.activation,
        }
    }
}

/// Sinusoidal features `[sin(ω_k t)…, cos(ω_k t)…]`, `ω_k` geometric on
/// `[1, MAX_TIME_FREQUENCY]`.
pub fn time_embedding(t: TimePoint, dim: usize) -> Result<Vec<f64>> {
    if dim == 0 || !dim.is_multiple_of(2) {
        return Err(SbfmError::Config(format!(
            "time embedding dimension must be even and positive, got {dim}"
        )));
    }
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for k in 0..half {
        let w = time_frequency(k, half);
        out[k] = (w * t.get()).sin();
        out[half + k] = (w * t.get()).cos();
    }
    Ok(out)
}

fn time_frequency(k: usize, half: usize) -> f64 {
    if half == 1 {
        1.0
    } else {
        MAX_TIME_FREQUENCY.powf(k as f64 / (half - 1) as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionEmbedding {
    pub phi_a: Vec<f64>,
    pub phi_v: Vec<f64>,
}

impl ConditionEmbedding {
    pub fn zeros(cfg: &FieldConfig) -> Self {
        Self {
            phi_a: vec![0.0; cfg.cond_dim],
            phi_v: vec![0.0; cfg.visual_cond_dim],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TensorSlot {
    pub name: String,
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl TensorSlot {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DenseSlot {
    /// `out × in`, row-major.
    pub weight: TensorSlot,
    pub bias: TensorSlot,
    pub activated: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamLayout {
    pub cond_proj: TensorSlot,
    pub trunk: Vec<DenseSlot>,
    pub head_a: Vec<DenseSlot>,
    pub head_v: Vec<DenseSlot>,
    pub total: usize,
}

impl ParamLayout {
    pub fn new(cfg: &FieldConfig) -> Result<Self> {
        cfg.validate()?;
        let mut offset = 0;
        let mut slot = |name: String, rows: usize, cols: usize| {
            let s = TensorSlot {
                name,
                offset,
                rows,
                cols,
            };
            offset += rows * cols;
            s
        };
        let cond_proj = slot("cond_proj.weight".into(), cfg.time_embed_dim, cfg.cond_dim);
        let mut dense = |prefix: &str, idx: String, out: usize, inp: usize, activated: bool| DenseSlot {
            weight: slot(format!("{prefix}.{idx}.weight"), out, inp),
            bias: slot(format!("{prefix}.{idx}.bias"), 1, out),
            activated,
        };
        let mut trunk = Vec::with_capacity(cfg.trunk_depth);
        let mut width_in = cfg.input_dim();
        for i in 0..cfg.trunk_depth {
            trunk.push(dense("trunk", i.to_string(), cfg.trunk_width, width_in, true));
            width_in = cfg.trunk_width;
        }
        let hidden = match cfg.heads {
            HeadKind::Mlp => cfg.head_depth,
            HeadKind::Linear => 0,
        };
        let mut head = |prefix: &str, out_dim: usize| {
            let mut layers = Vec::with_capacity(hidden + 1);
            let mut w_in = cfg.trunk_width;
            for i in 0..hidden {
                layers.push(dense(prefix, i.to_string(), cfg.head_width, w_in, true));
                w_in = cfg.head_width;
            }
            layers.push(dense(prefix, "out".into(), out_dim, w_in, false));
            layers
        };
        let head_a = head("head_a", cfg.d_a);
        let head_v = head("head_v", cfg.d_v);
        Ok(Self {
            cond_proj,
            trunk,
            head_a,
            head_v,
            total: offset,
        })
    }

    /// Every tensor in storage order.
    pub fn tensors(&self) -> Vec<&TensorSlot> {
        let mut out = vec![&self.cond_proj];
        for layer in self.trunk.iter().chain(&self.head_a).chain(&self.head_v) {
            out.push(&layer.weight);
            out.push(&layer.bias);
        }
        out
    }

    /// Parameter ranges belonging to the audio head, then the video head.
    pub fn head_ranges(&self) -> (Vec<std::ops::Range<usize>>, Vec<std::ops::Range<usize>>) {
        let ranges = |layers: &[DenseSlot]| {
            layers
                .iter()
                .flat_map(|l| [l.weight.range(), l.bias.range()])
                .collect::<Vec<_>>()
        };
        (ranges(&self.head_a), ranges(&self.head_v))
    }
}

/// One field evaluation request.
#[derive(Debug, Clone, Copy)]
pub struct FieldInput<'a> {
    pub x: &'a LatentState,
    pub t: TimePoint,
    pub cond: &'a ConditionEmbedding,
}

/// Activations cached by [`FieldParams::forward_tape`] for the backward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    phi_a: Array2<f64>,
    trunk: Vec<LayerCache>,
    head_a: Vec<LayerCache>,
    head_v: Vec<LayerCache>,
}

#[derive(Debug, Clone)]
struct LayerCache {
    input: Array2<f64>,
    pre: Array2<f64>,
}

impl Tape {
    pub fn batch_size(&self) -> usize {
        self.phi_a.nrows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldParams {
    config: FieldConfig,
    layout: ParamLayout,
    values: Vec<f64>,
}

impl FieldParams {
    pub fn zeros(config: FieldConfig) -> Result<Self> {
        let layout = ParamLayout::new(&config)?;
        let values = vec![0.0; layout.total];
        Ok(Self {
            config,
            layout,
            values,
        })
    }

    /// Truncated-normal weights scaled by `1/sqrt(fan_in)`, zero biases, and
    /// zero output layers on both heads, so the initial field is identically 0.
    pub fn init(config: FieldConfig, rng: &mut RandomStream) -> Result<Self> {
        let mut p = Self::zeros(config)?;
        let layout = p.layout.clone();
        fill_truncated(&mut p.values[layout.cond_proj.range()], layout.cond_proj.cols, rng);
        for layer in layout.trunk.iter().chain(&layout.head_a).chain(&layout.head_v) {
            if layer.activated {
                fill_truncated(&mut p.values[layer.weight.range()], layer.weight.cols, rng);
            }
        }
        Ok(p)
    }

    pub fn from_values(config: FieldConfig, values: Vec<f64>) -> Result<Self> {
        let layout = ParamLayout::new(&config)?;
        if values.len() != layout.total {
            return Err(SbfmError::Dimension(format!(
                "parameter vector has {} entries, layout needs {}",
                values.len(),
                layout.total
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(SbfmError::Format("non-finite parameter".into()));
        }
        Ok(Self {
            config,
            layout,
            values,
        })
    }

    pub fn config(&self) -> &FieldConfig {
        &self.config
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn matrix(&self, slot: &TensorSlot) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape((slot.rows, slot.cols), &self.values[slot.range()])
            .expect("layout slot matches storage")
    }

    fn check_input(&self, inp: &FieldInput<'_>) -> Result<()> {
        let c = &self.config;
        if inp.x.d_a() != c.d_a || inp.x.d_v() != c.d_v {
            return Err(SbfmError::Dimension(format!(
                "state blocks ({}, {}) vs config ({}, {})",
                inp.x.d_a(),
                inp.x.d_v(),
                c.d_a,
                c.d_v
            )));
        }
        if inp.cond.phi_a.len() != c.cond_dim || inp.cond.phi_v.len() != c.visual_cond_dim {
            return Err(SbfmError::Dimension(format!(
                "condition lengths ({}, {}) vs config ({}, {})",
                inp.cond.phi_a.len(),
                inp.cond.phi_v.len(),
                c.cond_dim,
                c.visual_cond_dim
            )));
        }
        Ok(())
    }

    /// Single evaluation returning `(v_a, v_v)`.
    pub fn forward(
        &self,
        x: &LatentState,
        t: TimePoint,
        cond: &ConditionEmbedding,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let (_, va, vv) = self.forward_tape(&[FieldInput { x, t, cond }])?;
        Ok((va.row(0).to_vec(), vv.row(0).to_vec()))
    }

    /// Batched evaluation; rows of the returned matrices follow `inputs`.
    pub fn forward_batch(&self, inputs: &[FieldInput<'_>]) -> Result<(Array2<f64>, Array2<f64>)> {
        self.forward_tape(inputs).map(|(_, a, v)| (a, v))
    }

    pub fn forward_tape(&self, inputs: &[FieldInput<'_>]) -> Result<(Tape, Array2<f64>, Array2<f64>)> {
        let c = &self.config;
        let b = inputs.len();
        let d = c.d_a + c.d_v;
        let e = c.time_embed_dim;
        let mut h0 = Array2::<f64>::zeros((b, c.input_dim()));
        let mut phi_a = Array2::<f64>::zeros((b, c.cond_dim));
        for (i, inp) in inputs.iter().enumerate() {
            self.check_input(inp)?;
            let mut row = h0.row_mut(i);
            for (dst, src) in row.iter_mut().zip(inp.x.as_slice()) {
                *dst = *src;
            }
            let temb = time_embedding(inp.t, e)?;
            for (k, v) in temb.into_iter().enumerate() {
                row[d + k] = v;
            }
            for (k, v) in inp.cond.phi_v.iter().enumerate() {
                row[d + e + k] = *v;
            }
            for (k, v) in inp.cond.phi_a.iter().enumerate() {
                phi_a[[i, k]] = *v;
            }
        }
        // time slot += φ_a · Pᵀ
        let proj = phi_a.dot(&self.matrix(&self.layout.cond_proj).t());
        h0.slice_mut(s![.., d..d + e]).zip_mut_with(&proj, |a, b| *a += b);

        let mut trunk = Vec::with_capacity(self.layout.trunk.len());
        let mut h = h0;
        for layer in &self.layout.trunk {
            let (cache, out) = self.dense_forward(layer, h)?;
            trunk.push(cache);
            h = out;
        }
        let (head_a, va) = self.head_forward(&self.layout.head_a, h.clone())?;
        let (head_v, vv) = self.head_forward(&self.layout.head_v, h)?;
        Ok((
            Tape {
                phi_a,
                trunk,
                head_a,
                head_v,
            },
            va,
            vv,
        ))
    }

    fn head_forward(&self, layers: &[DenseSlot], mut h: Array2<f64>) -> Result<(Vec<LayerCache>, Array2<f64>)> {
        let mut caches = Vec::with_capacity(layers.len());
        for layer in layers {
            let (cache, out) = self.dense_forward(layer, h)?;
            caches.push(cache);
            h = out;
        }
        Ok((caches, h))
    }

    fn dense_forward(&self, layer: &DenseSlot, input: Array2<f64>) -> Result<(LayerCache, Array2<f64>)> {
        let w = self.matrix(&layer.weight);
        let bias = &self.values[layer.bias.range()];
        let mut pre = input.dot(&w.t());
        for mut row in pre.rows_mut() {
            for (z, bv) in row.iter_mut().zip(bias) {
                *z += bv;
            }
        }
        if pre.iter().any(|v| !v.is_finite()) {
            return Err(SbfmError::NonFiniteActivation {
                layer: layer.weight.name.trim_end_matches(".weight").to_string(),
            });
        }
        let out = if layer.activated {
            let act = self.config.activation;
            pre.mapv(|z| activate(act, z))
        } else {
            pre.clone()
        };
        Ok((LayerCache { input, pre }, out))
    }

    /// Reverse pass. `grad_a`/`grad_v` are `∂L/∂v_a` and `∂L/∂v_v` per row.
    pub fn backward_tape(&self, tape: &Tape, grad_a: &Array2<f64>, grad_v: &Array2<f64>) -> Result<Vec<f64>> {
        let b = tape.batch_size();
        if grad_a.dim() != (b, self.config.d_a) || grad_v.dim() != (b, self.config.d_v) {
            return Err(SbfmError::Dimension(format!(
                "upstream gradients {:?}/{:?} for batch {b}",
                grad_a.dim(),
                grad_v.dim()
            )));
        }
        let mut grad = vec![0.0; self.layout.total];
        let ga = self.head_backward(&self.layout.head_a, &tape.head_a, grad_a.clone(), &mut grad);
        let gv = self.head_backward(&self.layout.head_v, &tape.head_v, grad_v.clone(), &mut grad);
        let mut g = ga + &gv;
        for (layer, cache) in self.layout.trunk.iter().zip(&tape.trunk).rev() {
            g = self.dense_backward(layer, cache, g, &mut grad);
        }
        // g is ∂L/∂h0; the time slot carries the φ_a projection.
        let d = self.config.d_a + self.config.d_v;
        let e = self.config.time_embed_dim;
        let g_time = g.slice(s![.., d..d + e]);
        let slot = &self.layout.cond_proj;
        let mut dp = ArrayViewMut2::from_shape((slot.rows, slot.cols), &mut grad[slot.range()])
            .expect("layout slot matches storage");
        ndarray::linalg::general_mat_mul(1.0, &g_time.t(), &tape.phi_a, 1.0, &mut dp);
        Ok(grad)
    }

    fn head_backward(
        &self,
        layers: &[DenseSlot],
        caches: &[LayerCache],
        upstream: Array2<f64>,
        grad: &mut [f64],
    ) -> Array2<f64> {
        let mut g = upstream;
        for (layer, cache) in layers.iter().zip(caches).rev() {
            g = self.dense_backward(layer, cache, g, grad);
        }
        g
    }

    /// Takes `∂L/∂out` of one layer and returns `∂L/∂input`.
    fn dense_backward(&self, layer: &DenseSlot, cache: &LayerCache, g_out: Array2<f64>, grad: &mut [f64]) -> Array2<f64> {
        let g_pre = if layer.activated {
            let act = self.config.activation;
            let mut g = g_out;
            g.zip_mut_with(&cache.pre, |gv, &z| *gv *= activate_grad(act, z));
            g
        } else {
            g_out
        };
        {
            let slot = &layer.weight;
            let mut dw = ArrayViewMut2::from_shape((slot.rows, slot.cols), &mut grad[slot.range()])
                .expect("layout slot matches storage");
            ndarray::linalg::general_mat_mul(1.0, &g_pre.t(), &cache.input, 1.0, &mut dw);
        }
        let db = g_pre.sum_axis(Axis(0));
        for (dst, v) in grad[layer.bias.range()].iter_mut().zip(db.iter()) {
            *dst += v;
        }
        g_pre.dot(&self.matrix(&layer.weight))
    }

    /// Gradient of `mean_i (‖r_a,i‖² + λ_i ‖r_v,i‖²)` with residuals `r = v − u`
    /// already computed for each item.
    pub fn backward(&self, batch: &[BackwardItem<'_>]) -> Result<Vec<f64>> {
        if batch.is_empty() {
            return Ok(vec![0.0; self.layout.total]);
        }
        let inputs: Vec<FieldInput<'_>> = batch.iter().map(|b| b.input).collect();
        let (tape, _, _) = self.forward_tape(&inputs)?;
        let n = batch.len();
        let mut ga = Array2::zeros((n, self.config.d_a));
        let mut gv = Array2::zeros((n, self.config.d_v));
        let scale = 2.0 / n as f64;
        for (i, item) in batch.iter().enumerate() {
            if item.residual_a.len() != self.config.d_a || item.residual_v.len() != self.config.d_v {
                return Err(SbfmError::Dimension("residual block lengths".into()));
            }
            for (k, r) in item.residual_a.iter().enumerate() {
                ga[[i, k]] = scale * r;
            }
            for (k, r) in item.residual_v.iter().enumerate() {
                gv[[i, k]] = scale * item.lambda * r;
            }
        }
        self.backward_tape(&tape, &ga, &gv)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BackwardItem<'a> {
    pub input: FieldInput<'a>,
    pub residual_a: &'a [f64],
    pub residual_v: &'a [f64],
    pub lambda: f64,
}

fn fill_truncated(out: &mut [f64], fan_in: usize, rng: &mut RandomStream) {
    let scale = 1.0 / (fan_in as f64).sqrt();
    for v in out {
        let z = loop {
            let z = rng.normal();
            if z.abs() <= 2.0 {
                break z;
            }
        };
        *v = scale * z;
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/π)
const GELU_A: f64 = 0.044_715;

fn activate(act: Activation, z: f64) -> f64 {
    match act {
        Activation::Tanh => z.tanh(),
        Activation::GeluApprox => 0.5 * z * (1.0 + (GELU_C * (z + GELU_A * z * z * z)).tanh()),
    }
}

fn activate_grad(act: Activation, z: f64) -> f64 {
    match act {
        Activation::Tanh => {
            let th = z.tanh();
            1.0 - th * th
        }
        Activation::GeluApprox => {
            let u = GELU_C * (z + GELU_A * z * z * z);
            let th = u.tanh();
            let du = GELU_C * (1.0 + 3.0 * GELU_A * z * z);
            0.5 * (1.0 + th) + 0.5 * z * (1.0 - th * th) * du
        }
    }
}

// ---------------------------------------------------------------------------
// Checkpoint files

const CHECKPOINT_MAGIC: &[u8; 4] = b"SBFM";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CheckpointSidecar {
    format: String,
    version: u32,
    config_digest: String,
    param_count: u64,
    config: FieldConfig,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".json");
    PathBuf::from(p)
}

/// Writes `path` (binary) and `path.json` (config manifest).
pub fn save_checkpoint(path: &Path, params: &FieldParams) -> Result<()> {
    let digest = params.config.digest();
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&digest)?;
    w.write_all(&(params.values.len() as u64).to_le_bytes())?;
    for v in &params.values {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    let sidecar = CheckpointSidecar {
        format: "SBFM".into(),
        version: CHECKPOINT_VERSION,
        config_digest: hex::encode(digest),
        param_count: params.values.len() as u64,
        config: params.config.clone(),
    };
    std::fs::write(sidecar_path(path), serde_json::to_string_pretty(&sidecar)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<FieldParams> {
    let sidecar: CheckpointSidecar = serde_json::from_str(&std::fs::read_to_string(sidecar_path(path))?)?;
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(SbfmError::Format("checkpoint magic mismatch".into()));
    }
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf)?;
    let version = u32::from_le_bytes(u32buf);
    if version != CHECKPOINT_VERSION {
        return Err(SbfmError::Format(format!("unsupported checkpoint version {version}")));
    }
    let mut digest = [0u8; 32];
    r.read_exact(&mut digest)?;
    if digest != sidecar.config.digest() {
        return Err(SbfmError::Format("config digest does not match sidecar".into()));
    }
    let mut u64buf = [0u8; 8];
    r.read_exact(&mut u64buf)?;
    let count = u64::from_le_bytes(u64buf) as usize;
    let mut values = Vec::with_capacity(count);
    for _ in 0..count {
        r.read_exact(&mut u64buf)?;
        values.push(f64::from_le_bytes(u64buf));
    }
    if r.read(&mut u64buf)? != 0 {
        return Err(SbfmError::Format("trailing bytes after parameters".into()));
    }
    FieldParams::from_values(sidecar.config, values)
}
