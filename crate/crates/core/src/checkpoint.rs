//! Checkpoint files and stores.
//!
//! File layout: the 8-byte magic `SUMSRCK1`, a little-endian `u32` header
//! length, a UTF-8 JSON header, then every tensor as little-endian `f32`
//! values in row-major order, in header order.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Mat;
use crate::error::{Error, Result};
use crate::networks::{MaskVector, Parameters, Reconstructor, Selector};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SUMSRCK1";

/// Training stage a checkpoint belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageKind {
    Mask,
    Reconstructor,
    Selector,
    Joint,
}

impl StageKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Mask => "mask",
            Self::Reconstructor => "reconstructor",
            Self::Selector => "selector",
            Self::Joint => "joint",
        }
    }
}

impl fmt::Display for StageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Identifies a checkpoint within a run; iterations and epochs are 1-based.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CheckpointKey {
    pub iteration: usize,
    pub stage: StageKind,
    pub epoch: usize,
}

impl CheckpointKey {
    pub fn new(iteration: usize, stage: StageKind, epoch: usize) -> Self {
        Self {
            iteration,
            stage,
            epoch,
        }
    }

    pub fn relative_path(&self) -> PathBuf {
        PathBuf::from(format!("iter{}", self.iteration))
            .join(self.stage.as_str())
            .join(format!("{}.bin", self.epoch))
    }
}

/// Networks and mask vector captured together.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelState {
    pub selector: Option<Selector>,
    pub reconstructor: Option<Reconstructor>,
    pub mask: MaskVector,
}

impl ModelState {
    /// Copy with every tensor rounded to `f32`, as a save/load round trip would give.
    pub fn quantized(&self) -> Self {
        let mut out = self.clone();
        if let Some(s) = out.selector.as_mut() {
            s.params_mut().into_iter().for_each(round_f32);
        }
        if let Some(r) = out.reconstructor.as_mut() {
            r.params_mut().into_iter().for_each(round_f32);
        }
        round_f32(&mut out.mask.m);
        out
    }
}

fn round_f32(m: &mut Mat) {
    m.mapv_inplace(|v| v as f32 as f64);
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: [usize; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub variant: String,
    pub iteration: usize,
    pub stage: String,
    pub epoch: usize,
    pub d: usize,
    pub d_h: usize,
    pub tau: Option<f64>,
    pub has_selector: bool,
    pub has_reconstructor: bool,
    pub mask_trainable: bool,
    tensors: Vec<TensorEntry>,
}

fn collect_tensors(state: &ModelState) -> Vec<(String, &Mat)> {
    let mut out = Vec::new();
    if let Some(s) = &state.selector {
        out.extend(s.named_params().into_iter().map(|(n, t)| (format!("selector.{n}"), t)));
    }
    if let Some(r) = &state.reconstructor {
        out.extend(
            r.named_params()
                .into_iter()
                .map(|(n, t)| (format!("reconstructor.{n}"), t)),
        );
    }
    out.push(("mask.m".to_string(), &state.mask.m));
    out
}

pub fn encode_checkpoint(variant: &str, key: &CheckpointKey, state: &ModelState) -> Vec<u8> {
    let d = state.mask.dim();
    let d_h = state
        .selector
        .as_ref()
        .map(|s| s.hidden_dim())
        .or_else(|| state.reconstructor.as_ref().map(|r| r.hidden_dim()))
        .unwrap_or(0);
    let tensors = collect_tensors(state);
    let header = CheckpointHeader {
        variant: variant.to_string(),
        iteration: key.iteration,
        stage: key.stage.as_str().to_string(),
        epoch: key.epoch,
        d,
        d_h,
        tau: state.selector.as_ref().map(|s| s.tau),
        has_selector: state.selector.is_some(),
        has_reconstructor: state.reconstructor.is_some(),
        mask_trainable: state.mask.trainable,
        tensors: tensors
            .iter()
            .map(|(name, t)| TensorEntry {
                name: name.clone(),
                shape: [t.nrows(), t.ncols()],
            })
            .collect(),
    };
    let header_bytes = serde_json::to_vec(&header).expect("header serializes");
    let payload: usize = tensors.iter().map(|(_, t)| t.len() * 4).sum();
    let mut out = Vec::with_capacity(12 + header_bytes.len() + payload);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(header_bytes.len() as u32).to_le_bytes());
    out.extend_from_slice(&header_bytes);
    for (_, t) in &tensors {
        for v in t.iter() {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(CheckpointHeader, ModelState)> {
    if bytes.len() < 12 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(Error::Schema("checkpoint has a bad header".into()));
    }
    let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let body = bytes
        .get(12..12 + hlen)
        .ok_or_else(|| Error::Schema("truncated checkpoint header".into()))?;
    let header: CheckpointHeader =
        serde_json::from_slice(body).map_err(|e| Error::Schema(format!("checkpoint header: {e}")))?;

    // build skeletons of the right shape, then overwrite every tensor
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut selector = if header.has_selector {
        Some(Selector::new(
            &mut rng,
            header.d,
            header.d_h,
            header.tau.unwrap_or(1.0),
        )?)
    } else {
        None
    };
    let mut reconstructor = if header.has_reconstructor {
        Some(Reconstructor::new(&mut rng, header.d, header.d_h)?)
    } else {
        None
    };
    let mut mask = MaskVector::zeros(header.d, header.mask_trainable);

    let mut targets: Vec<&mut Mat> = Vec::new();
    if let Some(s) = selector.as_mut() {
        targets.extend(s.params_mut());
    }
    if let Some(r) = reconstructor.as_mut() {
        targets.extend(r.params_mut());
    }
    targets.push(&mut mask.m);
    if targets.len() != header.tensors.len() {
        return Err(Error::Schema(format!(
            "checkpoint lists {} tensors, expected {}",
            header.tensors.len(),
            targets.len()
        )));
    }
    let mut offset = 12 + hlen;
    for (entry, target) in header.tensors.iter().zip(targets) {
        if [target.nrows(), target.ncols()] != entry.shape {
            return Err(Error::Schema(format!(
                "tensor {} has shape {:?}, expected {:?}",
                entry.name,
                entry.shape,
                target.dim()
            )));
        }
        let len = entry.shape[0] * entry.shape[1] * 4;
        let chunk = bytes
            .get(offset..offset + len)
            .ok_or_else(|| Error::Schema(format!("truncated payload for {}", entry.name)))?;
        for (v, c) in target.iter_mut().zip(chunk.chunks_exact(4)) {
            *v = f32::from_le_bytes(c.try_into().unwrap()) as f64;
        }
        offset += len;
    }
    if offset != bytes.len() {
        return Err(Error::Schema("trailing bytes after checkpoint payload".into()));
    }
    Ok((
        header,
        ModelState {
            selector,
            reconstructor,
            mask,
        },
    ))
}

pub fn write_checkpoint(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<(CheckpointHeader, ModelState)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

/// Where per-epoch checkpoints go during training.
pub trait CheckpointStore {
    fn put(&mut self, key: CheckpointKey, bytes: Vec<u8>) -> Result<()>;
    fn get(&self, key: CheckpointKey) -> Result<Vec<u8>>;
    fn keys(&self) -> Vec<CheckpointKey>;
}

#[derive(Clone, Debug, Default)]
pub struct MemoryStore {
    entries: BTreeMap<CheckpointKey, Vec<u8>>,
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::default()
    }
}

impl CheckpointStore for MemoryStore {
    fn put(&mut self, key: CheckpointKey, bytes: Vec<u8>) -> Result<()> {
        self.entries.insert(key, bytes);
        Ok(())
    }

    fn get(&self, key: CheckpointKey) -> Result<Vec<u8>> {
        self.entries
            .get(&key)
            .cloned()
            .ok_or_else(|| Error::Lookup(format!("no checkpoint for {key:?}")))
    }

    fn keys(&self) -> Vec<CheckpointKey> {
        self.entries.keys().copied().collect()
    }
}

/// Writes `<root>/iter<k>/<stage>/<epoch>.bin`.
#[derive(Clone, Debug)]
pub struct DirStore {
    root: PathBuf,
    keys: Vec<CheckpointKey>,
}

impl DirStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self {
            root: root.into(),
            keys: Vec::new(),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }
}

impl CheckpointStore for DirStore {
    fn put(&mut self, key: CheckpointKey, bytes: Vec<u8>) -> Result<()> {
        write_checkpoint(&self.root.join(key.relative_path()), &bytes)?;
        self.keys.push(key);
        Ok(())
    }

    fn get(&self, key: CheckpointKey) -> Result<Vec<u8>> {
        let path = self.root.join(key.relative_path());
        fs::read(&path).map_err(|e| Error::io(&path, e))
    }

    fn keys(&self) -> Vec<CheckpointKey> {
        let mut k = self.keys.clone();
        k.sort();
        k
    }
}
