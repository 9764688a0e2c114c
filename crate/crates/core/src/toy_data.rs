//! Synthetic paired object-removal data.
//!
//! Each of `K` objects owns a fixed audio track and a short video clip. A
//! scene mixes `N` distinct objects by summation; the paired target is the
//! same mixture with one object taken out. All signal values sit on a dyadic
//! grid (multiples of 2⁻²⁰) so that mixing and removal are exact in `f64` and
//! `x0 − x1` reproduces the removed object's embedding bit for bit.

use std::fs;
use std::ops::Range;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bridge_math::{EndpointPair, LatentState};
use crate::error::{Result, SbfmError};
use crate::field_model::ConditionEmbedding;
use crate::rng::{streams, RandomStream};

const QUANTUM: f64 = 1.0 / (1u64 << 20) as f64;
const DATASET_MAGIC: &[u8; 4] = b"SBDS";
const DATASET_VERSION: u32 = 1;
/// Bytes before the first record.
pub const HEADER_LEN: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub seed: u64,
    pub n_pairs: usize,
    /// Number of distinct objects `K`.
    pub objects: usize,
    /// Objects mixed into each scene `N`.
    pub objects_per_scene: usize,
    pub t_a: usize,
    pub c_a: usize,
    pub t_v: usize,
    pub c_v: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            n_pairs: 4096,
            objects: 8,
            objects_per_scene: 2,
            t_a: 32,
            c_a: 1,
            t_v: 8,
            c_v: 4,
        }
    }
}

impl DataConfig {
    pub fn validate(&self) -> Result<()> {
        if self.objects_per_scene < 2 {
            return Err(SbfmError::Config(format!(
                "objects_per_scene must be >= 2, got {}",
                self.objects_per_scene
            )));
        }
        if self.objects_per_scene > self.objects {
            return Err(SbfmError::Config(format!(
                "objects_per_scene ({}) exceeds objects ({})",
                self.objects_per_scene, self.objects
            )));
        }
        for (name, v) in [
            ("n_pairs", self.n_pairs),
            ("t_a", self.t_a),
            ("c_a", self.c_a),
            ("t_v", self.t_v),
            ("c_v", self.c_v),
        ] {
            if v == 0 {
                return Err(SbfmError::Config(format!("{name} must be >= 1")));
            }
        }
        if self.objects > u32::MAX as usize {
            return Err(SbfmError::Config("too many objects".into()));
        }
        Ok(())
    }

    pub fn d_a(&self) -> usize {
        self.t_a * self.c_a
    }

    /// Video block length after projection onto the audio grid.
    pub fn d_v(&self) -> usize {
        self.t_a * self.c_v
    }

    pub fn raw_video_len(&self) -> usize {
        self.t_v * self.c_v
    }

    pub fn phi_a_dim(&self) -> usize {
        self.objects
    }

    pub fn phi_v_dim(&self) -> usize {
        self.c_v
    }

    pub fn projector(&self) -> ProjectorSpec {
        ProjectorSpec {
            t_v: self.t_v,
            t_a: self.t_a,
            channels: self.c_v,
        }
    }

    /// Bytes per stored pair.
    pub fn record_len(&self) -> usize {
        let d = self.d_a() + self.d_v();
        2 * 8 * d + 4 + 8 * (self.phi_a_dim() + self.phi_v_dim())
    }

    pub fn file_len(&self) -> usize {
        HEADER_LEN + self.n_pairs * self.record_len()
    }
}

/// Per-channel linear resampling from `t_v` to `t_a` frames with both
/// endpoints aligned. Blocks are time-major: `index = frame · channels + c`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProjectorSpec {
    pub t_v: usize,
    pub t_a: usize,
    pub channels: usize,
}

pub fn temporal_project(video: &[f64], spec: &ProjectorSpec) -> Result<Vec<f64>> {
    let c = spec.channels;
    if video.len() != spec.t_v * c {
        return Err(SbfmError::Dimension(format!(
            "video block has length {}, expected {}·{}",
            video.len(),
            spec.t_v,
            c
        )));
    }
    if spec.t_v == spec.t_a {
        return Ok(video.to_vec());
    }
    let mut out = vec![0.0; spec.t_a * c];
    let ratio = if spec.t_a > 1 {
        (spec.t_v - 1) as f64 / (spec.t_a - 1) as f64
    } else {
        0.0
    };
    for j in 0..spec.t_a {
        let s = j as f64 * ratio;
        let i0 = (s.floor() as usize).min(spec.t_v - 1);
        let frac = s - i0 as f64;
        let i1 = (i0 + 1).min(spec.t_v - 1);
        for ch in 0..c {
            let a = video[i0 * c + ch];
            let b = video[i1 * c + ch];
            out[j * c + ch] = if frac == 0.0 { a } else { a + frac * (b - a) };
        }
    }
    Ok(out)
}

fn quantize(v: f64) -> f64 {
    (v / QUANTUM).round() * QUANTUM
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectSignature {
    pub object_id: usize,
    /// `t_a · c_a`, time-major.
    pub audio_sig: Vec<f64>,
    /// Raw clip, `t_v · c_v`, time-major.
    pub video_sig: Vec<f64>,
    pub support_mask: Vec<bool>,
    /// `[audio_sig, P(video_sig)]` as stored in the latent space.
    pub embedded: LatentState,
}

/// Deterministic signature of one object: three sinusoids per audio channel
/// and a Gaussian bump in time per video channel, cut at 10 % of its peak.
pub fn object_signature(cfg: &DataConfig, object_id: usize) -> Result<ObjectSignature> {
    let mut rng = RandomStream::derive(cfg.seed, streams::DATA_SIGNATURE, object_id as u64);
    let mut audio_sig = vec![0.0; cfg.d_a()];
    for ch in 0..cfg.c_a {
        for _ in 0..3 {
            let amp = rng.uniform(1.0, 2.0);
            let cycles = rng.uniform(0.5, 3.0);
            let phase = rng.uniform(0.0, std::f64::consts::TAU);
            for tau in 0..cfg.t_a {
                let arg = std::f64::consts::TAU * cycles * tau as f64 / cfg.t_a as f64 + phase;
                audio_sig[tau * cfg.c_a + ch] += amp * arg.sin();
            }
        }
    }
    for v in &mut audio_sig {
        *v = quantize(*v);
    }

    let center = rng.uniform(0.0, (cfg.t_v - 1) as f64);
    let width = rng.uniform(0.6, 1.5);
    let mut video_sig = vec![0.0; cfg.raw_video_len()];
    let mut support_mask = vec![false; cfg.raw_video_len()];
    for ch in 0..cfg.c_v {
        let sign = if rng.uniform(0.0, 1.0) < 0.5 { -1.0 } else { 1.0 };
        let amp = sign * rng.uniform(1.0, 2.0);
        for tau in 0..cfg.t_v {
            let envelope = (-(tau as f64 - center).powi(2) / (2.0 * width * width)).exp();
            if envelope >= 0.1 {
                let idx = tau * cfg.c_v + ch;
                video_sig[idx] = quantize(amp * envelope);
                support_mask[idx] = true;
            }
        }
    }
    let projected: Vec<f64> = temporal_project(&video_sig, &cfg.projector())?
        .into_iter()
        .map(quantize)
        .collect();
    let embedded = LatentState::from_blocks(&audio_sig, &projected)?;
    Ok(ObjectSignature {
        object_id,
        audio_sig,
        video_sig,
        support_mask,
        embedded,
    })
}

/// `φ_v`: per-channel mean of the source clip over the removed object's
/// support (zero for channels with empty support). `φ_a`: one-hot code of the
/// removed object.
pub fn encode_condition(
    source_video: &[f64],
    mask: &[bool],
    channels: usize,
    removed_id: usize,
    n_objects: usize,
) -> Result<ConditionEmbedding> {
    if source_video.len() != mask.len() || channels == 0 || !source_video.len().is_multiple_of(channels) {
        return Err(SbfmError::Dimension(format!(
            "video {} / mask {} / channels {channels}",
            source_video.len(),
            mask.len()
        )));
    }
    if removed_id >= n_objects {
        return Err(SbfmError::Dimension(format!(
            "object id {removed_id} outside 0..{n_objects}"
        )));
    }
    let mut sums = vec![0.0; channels];
    let mut counts = vec![0usize; channels];
    for (i, (&v, &m)) in source_video.iter().zip(mask).enumerate() {
        if m {
            sums[i % channels] += v;
            counts[i % channels] += 1;
        }
    }
    let phi_v = sums
        .into_iter()
        .zip(counts)
        .map(|(s, n)| if n == 0 { 0.0 } else { s / n as f64 })
        .collect();
    let mut phi_a = vec![0.0; n_objects];
    phi_a[removed_id] = 1.0;
    Ok(ConditionEmbedding { phi_a, phi_v })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RemovalPair {
    pub x0: LatentState,
    pub x1: LatentState,
    pub removed_id: u32,
    pub cond: ConditionEmbedding,
}

impl RemovalPair {
    pub fn endpoints(&self) -> EndpointPair {
        EndpointPair {
            x0: self.x0.clone(),
            x1: self.x1.clone(),
        }
    }
}

fn add_into(acc: &mut [f64], v: &[f64]) {
    for (a, b) in acc.iter_mut().zip(v) {
        *a += b;
    }
}

fn generate_pair(cfg: &DataConfig, sigs: &[ObjectSignature], index: u64) -> Result<RemovalPair> {
    let mut rng = RandomStream::derive(cfg.seed, streams::DATA_PAIR, index);
    let ids = rng.choose_distinct(cfg.objects, cfg.objects_per_scene);
    let removed = ids[rng.index(ids.len())];
    let d = cfg.d_a() + cfg.d_v();
    let mut x0 = vec![0.0; d];
    let mut x1 = vec![0.0; d];
    let mut raw_video = vec![0.0; cfg.raw_video_len()];
    for &id in &ids {
        add_into(&mut x0, sigs[id].embedded.as_slice());
        add_into(&mut raw_video, &sigs[id].video_sig);
        if id != removed {
            add_into(&mut x1, sigs[id].embedded.as_slice());
        }
    }
    let cond = encode_condition(
        &raw_video,
        &sigs[removed].support_mask,
        cfg.c_v,
        removed,
        cfg.objects,
    )?;
    Ok(RemovalPair {
        x0: LatentState::from_concat(x0, cfg.d_a())?,
        x1: LatentState::from_concat(x1, cfg.d_a())?,
        removed_id: removed as u32,
        cond,
    })
}

/// Index ranges of the 90 / 5 / 5 train / validation / test split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DataSplits {
    pub train: Range<usize>,
    pub validation: Range<usize>,
    pub test: Range<usize>,
}

impl DataSplits {
    pub fn for_len(n: usize) -> Self {
        let n_train = n * 90 / 100;
        let n_val = n * 5 / 100;
        Self {
            train: 0..n_train,
            validation: n_train..n_train + n_val,
            test: n_train + n_val..n,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub config: DataConfig,
    pub pairs: Vec<RemovalPair>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format: String,
    pub version: u32,
    pub config: DataConfig,
    pub file_len: usize,
    pub sha256: String,
}

pub fn generate_signatures(cfg: &DataConfig) -> Result<Vec<ObjectSignature>> {
    (0..cfg.objects).map(|k| object_signature(cfg, k)).collect()
}

pub fn generate_dataset(cfg: &DataConfig) -> Result<Dataset> {
    cfg.validate()?;
    let sigs = generate_signatures(cfg)?;
    let pairs = (0..cfg.n_pairs as u64)
        .map(|i| generate_pair(cfg, &sigs, i))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        config: cfg.clone(),
        pairs,
    })
}

fn push_u32(buf: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| SbfmError::Config(format!("{v} does not fit in u32")))?;
    buf.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(SbfmError::Format("dataset file is truncated".into()));
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(8 * n)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

impl Dataset {
    pub fn splits(&self) -> DataSplits {
        DataSplits::for_len(self.pairs.len())
    }

    pub fn train(&self) -> &[RemovalPair] {
        &self.pairs[self.splits().train]
    }

    pub fn validation(&self) -> &[RemovalPair] {
        &self.pairs[self.splits().validation]
    }

    pub fn test(&self) -> &[RemovalPair] {
        &self.pairs[self.splits().test]
    }

    /// Little-endian file image: 64-byte header followed by fixed-size records.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let c = &self.config;
        let mut buf = Vec::with_capacity(c.file_len());
        buf.extend_from_slice(DATASET_MAGIC);
        buf.extend_from_slice(&DATASET_VERSION.to_le_bytes());
        buf.extend_from_slice(&c.seed.to_le_bytes());
        for v in [c.objects, c.objects_per_scene, c.t_a, c.c_a, c.t_v, c.c_v] {
            push_u32(&mut buf, v)?;
        }
        buf.extend_from_slice(&(self.pairs.len() as u64).to_le_bytes());
        for v in [c.d_a(), c.d_v(), c.phi_a_dim(), c.phi_v_dim()] {
            push_u32(&mut buf, v)?;
        }
        debug_assert_eq!(buf.len(), HEADER_LEN);
        for p in &self.pairs {
            for v in p.x0.as_slice().iter().chain(p.x1.as_slice()) {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            buf.extend_from_slice(&p.removed_id.to_le_bytes());
            for v in p.cond.phi_a.iter().chain(&p.cond.phi_v) {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        if cur.take(4)? != DATASET_MAGIC {
            return Err(SbfmError::Format("dataset magic mismatch".into()));
        }
        let version = cur.u32()?;
        if version as u32 != DATASET_VERSION {
            return Err(SbfmError::Format(format!("unsupported dataset version {version}")));
        }
        let seed = cur.u64()?;
        let mut fields = [0usize; 6];
        for f in &mut fields {
            *f = cur.u32()?;
        }
        let [objects, objects_per_scene, t_a, c_a, t_v, c_v] = fields;
        let n_pairs = cur.u64()? as usize;
        let config = DataConfig {
            seed,
            n_pairs,
            objects,
            objects_per_scene,
            t_a,
            c_a,
            t_v,
            c_v,
        };
        config.validate()?;
        let dims = [cur.u32()?, cur.u32()?, cur.u32()?, cur.u32()?];
        if dims != [config.d_a(), config.d_v(), config.phi_a_dim(), config.phi_v_dim()] {
            return Err(SbfmError::Format(format!("dimension block {dims:?} disagrees with config")));
        }
        if bytes.len() != config.file_len() {
            return Err(SbfmError::Format(format!(
                "file has {} bytes, header implies {}",
                bytes.len(),
                config.file_len()
            )));
        }
        let d = config.d_a() + config.d_v();
        let mut pairs = Vec::with_capacity(n_pairs);
        for _ in 0..n_pairs {
            let x0 = LatentState::from_concat(cur.f64s(d)?, config.d_a())?;
            let x1 = LatentState::from_concat(cur.f64s(d)?, config.d_a())?;
            let removed_id = cur.u32()? as u32;
            let phi_a = cur.f64s(config.phi_a_dim())?;
            let phi_v = cur.f64s(config.phi_v_dim())?;
            pairs.push(RemovalPair {
                x0,
                x1,
                removed_id,
                cond: ConditionEmbedding { phi_a, phi_v },
            });
        }
        Ok(Self { config, pairs })
    }

    pub fn digest(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_bytes()?)))
    }

    /// Writes the dataset and its `.json` sidecar; returns the manifest.
    pub fn write(&self, path: &Path) -> Result<DatasetManifest> {
        let bytes = self.to_bytes()?;
        let manifest = DatasetManifest {
            format: "SBDS".into(),
            version: DATASET_VERSION,
            config: self.config.clone(),
            file_len: bytes.len(),
            sha256: hex::encode(Sha256::digest(&bytes)),
        };
        fs::write(path, &bytes)?;
        fs::write(manifest_path(path), serde_json::to_string_pretty(&manifest)?)?;
        Ok(manifest)
    }

    /// Reads a dataset file, checking it against its sidecar when present.
    pub fn read(path: &Path) -> Result<(Self, String)> {
        let bytes = fs::read(path)?;
        let digest = hex::encode(Sha256::digest(&bytes));
        let side = manifest_path(path);
        if side.exists() {
            let manifest: DatasetManifest = serde_json::from_str(&fs::read_to_string(side)?)?;
            if manifest.sha256 != digest {
                return Err(SbfmError::Format(format!(
                    "dataset digest {digest} does not match manifest {}",
                    manifest.sha256
                )));
            }
        }
        Ok((Self::from_bytes(&bytes)?, digest))
    }
}

pub fn manifest_path(path: &Path) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".json");
    PathBuf::from(p)
}
