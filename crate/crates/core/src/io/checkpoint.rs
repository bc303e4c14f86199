//! Single-file training checkpoints.
//!
//! Layout, all integers little-endian:
//! magic `MDCK`, `u32` version, `u32` scalar width in bytes, `u64` length
//! of a JSON metadata block, the block itself, then tensor sections
//! (parameters, Adam first and second moments, completed features, best
//! snapshot) and a trailing SHA-256 of every preceding byte.
//!
//! Random draws are keyed by seed, stage, epoch and refinement round, all
//! of which live in the metadata, so no generator state is stored.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::DatasetBundle;
use crate::error::{Error, Result};
use crate::numerics::{AdamConfig, ParamId, Tensor};
use crate::scalar::Scalar;
use crate::training::{History, ModelState, Snapshot, Stage, TrainConfig};

pub const MAGIC: &[u8; 4] = b"MDCK";
pub const VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct BestMeta {
    epoch: usize,
    score: f64,
    gamma: f64,
}

/// JSON block of a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config: TrainConfig,
    pub config_hash: String,
    pub n_users: usize,
    pub n_items: usize,
    pub dims: Vec<usize>,
    pub stage: Stage,
    pub epoch: usize,
    pub round: u64,
    pub imputed: bool,
    pub gamma: f64,
    pub history: History,
    pub adam: AdamConfig,
    pub adam_step: u64,
    pub params: Vec<String>,
    best: Option<BestMeta>,
}

struct Writer<S> {
    out: Vec<u8>,
    _s: std::marker::PhantomData<S>,
}

impl<S: Scalar> Writer<S> {
    fn u64(&mut self, x: u64) {
        self.out.extend_from_slice(&x.to_le_bytes());
    }

    fn tensor(&mut self, t: &Tensor<S>) {
        self.u64(t.shape().len() as u64);
        for &d in t.shape() {
            self.u64(d as u64);
        }
        for &x in t.data() {
            x.write_le(&mut self.out);
        }
    }

    fn tensors(&mut self, ts: &[Tensor<S>]) {
        self.u64(ts.len() as u64);
        for t in ts {
            self.tensor(t);
        }
    }

    fn optional(&mut self, ts: &[Option<Tensor<S>>], n: usize) {
        self.u64(n as u64);
        for k in 0..n {
            match ts.get(k).and_then(Option::as_ref) {
                Some(t) => {
                    self.out.push(1);
                    self.tensor(t);
                }
                None => self.out.push(0),
            }
        }
    }
}

struct Reader<'a, S> {
    bytes: &'a [u8],
    at: usize,
    _s: std::marker::PhantomData<S>,
}

impl<'a, S: Scalar> Reader<'a, S> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.at)))?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn count(&mut self) -> Result<usize> {
        let n = self.u64()?;
        usize::try_from(n)
            .ok()
            .filter(|&n| n <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint(format!("implausible count {n}")))
    }

    fn tensor(&mut self) -> Result<Tensor<S>> {
        let rank = self.count()?;
        let shape: Vec<usize> = (0..rank).map(|_| self.count()).collect::<Result<_>>()?;
        let len = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let len = len.filter(|&l| l <= self.bytes.len()).ok_or_else(|| Error::Checkpoint(format!("bad shape {shape:?}")))?;
        let raw = self.take(len * S::BYTES)?;
        let data = raw.chunks_exact(S::BYTES).map(S::read_le).collect();
        Tensor::from_vec(&shape, data)
    }

    fn tensors(&mut self) -> Result<Vec<Tensor<S>>> {
        let n = self.count()?;
        (0..n).map(|_| self.tensor()).collect()
    }

    fn optional(&mut self) -> Result<Vec<Option<Tensor<S>>>> {
        let n = self.count()?;
        (0..n)
            .map(|_| match self.take(1)?[0] {
                0 => Ok(None),
                1 => self.tensor().map(Some),
                f => Err(Error::Checkpoint(format!("bad presence flag {f}"))),
            })
            .collect()
    }
}

/// Serializes the complete state.
pub fn encode<S: Scalar>(state: &ModelState<S>, bundle: &DatasetBundle<S>) -> Result<Vec<u8>> {
    let entries = state.store.entries();
    let meta = CheckpointMeta {
        config: state.config.clone(),
        config_hash: state.config.hash(),
        n_users: bundle.n_users(),
        n_items: bundle.n_items(),
        dims: bundle.dims(),
        stage: state.stage,
        epoch: state.epoch,
        round: state.round,
        imputed: state.imputed,
        gamma: state.gamma,
        history: state.history.clone(),
        adam: state.adam.config,
        adam_step: state.adam.step,
        params: entries.iter().map(|e| e.name.clone()).collect(),
        best: state.best.as_ref().map(|b| BestMeta { epoch: b.epoch, score: b.score, gamma: b.gamma }),
    };
    let json = serde_json::to_vec(&meta)?;
    let mut w = Writer::<S> { out: Vec::new(), _s: std::marker::PhantomData };
    w.out.extend_from_slice(MAGIC);
    w.out.extend_from_slice(&VERSION.to_le_bytes());
    w.out.extend_from_slice(&(S::BYTES as u32).to_le_bytes());
    w.u64(json.len() as u64);
    w.out.extend_from_slice(&json);
    let params: Vec<Tensor<S>> = entries.iter().map(|e| e.value.clone()).collect();
    w.tensors(&params);
    w.optional(&state.adam.first, entries.len());
    w.optional(&state.adam.second, entries.len());
    w.tensors(&state.features);
    if let Some(b) = &state.best {
        w.tensors(&b.params);
        w.tensors(&b.features);
    }
    let digest = Sha256::digest(&w.out);
    w.out.extend_from_slice(&digest);
    Ok(w.out)
}

/// Reads the metadata block without touching the tensor payload.
pub fn decode_meta(bytes: &[u8]) -> Result<(u32, CheckpointMeta, usize)> {
    if bytes.len() < 20 + DIGEST_LEN || &bytes[..4] != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file".into()));
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::Checkpoint("checksum mismatch".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let width = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    let len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes"));
    let end = usize::try_from(len)
        .ok()
        .and_then(|l| l.checked_add(20))
        .filter(|&e| e <= body.len())
        .ok_or_else(|| Error::Checkpoint("metadata length out of range".into()))?;
    let meta: CheckpointMeta = serde_json::from_slice(&bytes[20..end])?;
    Ok((width, meta, end))
}

/// Rebuilds a state for `bundle` and fills it from `bytes`.
pub fn decode<S: Scalar>(bytes: &[u8], bundle: &DatasetBundle<S>) -> Result<ModelState<S>> {
    let (width, meta, start) = decode_meta(bytes)?;
    if width as usize != S::BYTES {
        return Err(Error::Checkpoint(format!("checkpoint holds {width}-byte scalars, expected {}", S::BYTES)));
    }
    if meta.config.hash() != meta.config_hash {
        return Err(Error::Checkpoint("config hash does not match the stored config".into()));
    }
    if (meta.n_users, meta.n_items, &meta.dims) != (bundle.n_users(), bundle.n_items(), &bundle.dims()) {
        return Err(Error::Checkpoint(format!(
            "checkpoint is for {} users, {} items, dims {:?}; bundle has {}, {}, {:?}",
            meta.n_users,
            meta.n_items,
            meta.dims,
            bundle.n_users(),
            bundle.n_items(),
            bundle.dims()
        )));
    }
    let mut state = ModelState::new(bundle, meta.config.clone())?;
    let names: Vec<String> = state.store.entries().iter().map(|e| e.name.clone()).collect();
    if names != meta.params {
        return Err(Error::Checkpoint("parameter layout differs from the model".into()));
    }
    let body = &bytes[..bytes.len() - DIGEST_LEN];
    let mut r = Reader::<S> { bytes: body, at: start, _s: std::marker::PhantomData };
    let params = r.tensors()?;
    if params.len() != names.len() {
        return Err(Error::Checkpoint(format!("{} tensors for {} parameters", params.len(), names.len())));
    }
    for (k, t) in params.into_iter().enumerate() {
        state.store.set(ParamId(k), t).map_err(|e| Error::Checkpoint(format!("parameter {}: {e}", names[k])))?;
    }
    state.adam.config = meta.adam;
    state.adam.step = meta.adam_step;
    state.adam.first = r.optional()?;
    state.adam.second = r.optional()?;
    let features = r.tensors()?;
    if features.len() != bundle.n_modalities() {
        return Err(Error::Checkpoint(format!("{} feature tables for {} modalities", features.len(), bundle.n_modalities())));
    }
    for (m, f) in features.iter().enumerate() {
        if f.shape() != bundle.modality(m).data.shape() {
            return Err(Error::Checkpoint(format!("feature table {m} has shape {:?}", f.shape())));
        }
    }
    state.features = features;
    state.best = match meta.best {
        Some(b) => Some(Snapshot { epoch: b.epoch, score: b.score, gamma: b.gamma, params: r.tensors()?, features: r.tensors()? }),
        None => None,
    };
    if r.at != body.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", body.len() - r.at)));
    }
    state.stage = meta.stage;
    state.epoch = meta.epoch;
    state.round = meta.round;
    state.imputed = meta.imputed;
    state.gamma = meta.gamma;
    state.history = meta.history;
    Ok(state)
}

pub fn save<S: Scalar>(path: &Path, state: &ModelState<S>, bundle: &DatasetBundle<S>) -> Result<()> {
    fs::write(path, encode(state, bundle)?)?;
    Ok(())
}

pub fn load<S: Scalar>(path: &Path, bundle: &DatasetBundle<S>) -> Result<ModelState<S>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    decode(&fs::read(path)?, bundle)
}
