//! Versioned prior checkpoints: one file holding a JSON manifest followed by
//! little-endian float blocks.
//!
//! Layout: 8-byte magic `PPCKPT01`, u32 LE manifest length, manifest JSON,
//! then the blocks back to back in manifest order. Blocks are written in f64
//! (the manifest records the dtype; f32 is accepted on read) because mixture
//! covariances sit close to their positive-definiteness floor and do not
//! survive a trip through single precision. Every checkpoint embeds the
//! [`PatchConfig`] used at fit time so reconstruction can refuse mismatched
//! patch geometry instead of silently resizing.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::alr::Discriminator;
use crate::error::{Error, Result};
use crate::flow::{FlowModel, FlowSpec};
use crate::gmm::{GmmComponent, GmmModel};
use crate::image::PatchConfig;
use crate::measure::DiscreteMeasure;
use crate::tape::MlpSpec;

const MAGIC: &[u8; 8] = b"PPCKPT01";
const MAX_BLOCK_ELEMS: usize = 1 << 28;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct BlockDesc {
    name: String,
    len: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
enum BlockDtype {
    F32,
    #[default]
    F64,
}

impl BlockDtype {
    fn size(self) -> usize {
        match self {
            BlockDtype::F32 => 4,
            BlockDtype::F64 => 8,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    version: u32,
    kind: String,
    patch: PatchConfig,
    #[serde(default)]
    dtype: BlockDtype,
    #[serde(default)]
    meta: Value,
    blocks: Vec<BlockDesc>,
    /// Free-form run metadata (final loss, log-likelihood, ...).
    #[serde(default)]
    extra: Value,
}

/// A trained prior ready for storage.
pub enum CheckpointPayload {
    Gmm(GmmModel),
    Flow(FlowModel),
    Alr(Discriminator),
    Measure(DiscreteMeasure),
}

impl CheckpointPayload {
    pub fn kind(&self) -> &'static str {
        match self {
            CheckpointPayload::Gmm(_) => "gmm",
            CheckpointPayload::Flow(_) => "flow",
            CheckpointPayload::Alr(_) => "alr",
            CheckpointPayload::Measure(_) => "measure",
        }
    }

    pub fn patch_dim(&self) -> usize {
        match self {
            CheckpointPayload::Gmm(m) => m.dim(),
            CheckpointPayload::Flow(m) => m.dim(),
            CheckpointPayload::Alr(d) => d.dim(),
            CheckpointPayload::Measure(m) => m.dim(),
        }
    }
}

pub struct Checkpoint {
    pub payload: CheckpointPayload,
    pub patch: PatchConfig,
    pub extra: Value,
}

fn push_block(blocks: &mut Vec<BlockDesc>, data: &mut Vec<u8>, name: &str, values: &[f64]) {
    blocks.push(BlockDesc { name: name.to_string(), len: values.len() });
    for &v in values {
        data.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let mut blocks = Vec::new();
    let mut data = Vec::new();
    let meta = match &ckpt.payload {
        CheckpointPayload::Gmm(model) => {
            push_block(&mut blocks, &mut data, "weights", &model.weights());
            for (k, comp) in model.components().iter().enumerate() {
                push_block(&mut blocks, &mut data, &format!("mean{k}"), comp.mean.as_slice().unwrap());
                push_block(
                    &mut blocks,
                    &mut data,
                    &format!("cov{k}"),
                    comp.covariance.as_slice().unwrap(),
                );
            }
            serde_json::json!({ "k": model.k(), "dim": model.dim() })
        }
        CheckpointPayload::Flow(model) => {
            for (i, p) in model.params().iter().enumerate() {
                push_block(&mut blocks, &mut data, &format!("param{i}"), p);
            }
            serde_json::to_value(model.spec()).unwrap()
        }
        CheckpointPayload::Alr(disc) => {
            for (i, p) in disc.params().iter().enumerate() {
                push_block(&mut blocks, &mut data, &format!("param{i}"), p);
            }
            serde_json::to_value(disc.spec()).unwrap()
        }
        CheckpointPayload::Measure(measure) => {
            let flat: Vec<f64> = measure.points().iter().flatten().copied().collect();
            push_block(&mut blocks, &mut data, "points", &flat);
            push_block(&mut blocks, &mut data, "weights", measure.weights());
            serde_json::json!({ "len": measure.len(), "dim": measure.dim() })
        }
    };
    let manifest = Manifest {
        version: 1,
        kind: ckpt.payload.kind().to_string(),
        patch: ckpt.patch.clone(),
        dtype: BlockDtype::F64,
        meta,
        blocks,
        extra: ckpt.extra.clone(),
    };
    let manifest_bytes = serde_json::to_vec(&manifest).unwrap();
    let mut out = Vec::with_capacity(12 + manifest_bytes.len() + data.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(manifest_bytes.len() as u32).to_le_bytes());
    out.extend_from_slice(&manifest_bytes);
    out.extend_from_slice(&data);
    Ok(out)
}

struct BlockReader<'a> {
    manifest: &'a Manifest,
    data: &'a [u8],
    next: usize,
    offset: usize,
}

impl<'a> BlockReader<'a> {
    fn take(&mut self, expect_name: &str, expect_len: usize) -> Result<Vec<f64>> {
        let desc = self
            .manifest
            .blocks
            .get(self.next)
            .ok_or_else(|| Error::format("checkpoint: missing block"))?;
        if desc.name != expect_name {
            return Err(Error::format(format!(
                "checkpoint: expected block {expect_name:?}, found {:?}",
                desc.name
            )));
        }
        if desc.len != expect_len {
            return Err(Error::format(format!(
                "checkpoint: block {expect_name:?} has {} values, expected {expect_len}",
                desc.len
            )));
        }
        let elem = self.manifest.dtype.size();
        let bytes = self
            .data
            .get(self.offset..self.offset + elem * desc.len)
            .ok_or_else(|| Error::format("checkpoint: truncated block data"))?;
        self.next += 1;
        self.offset += elem * desc.len;
        let mut out = Vec::with_capacity(desc.len);
        match self.manifest.dtype {
            BlockDtype::F32 => {
                for c in bytes.chunks_exact(4) {
                    out.push(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64);
                }
            }
            BlockDtype::F64 => {
                for c in bytes.chunks_exact(8) {
                    out.push(f64::from_le_bytes([c[0], c[1], c[2], c[3], c[4], c[5], c[6], c[7]]));
                }
            }
        }
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::format("checkpoint: non-finite block value"));
        }
        Ok(out)
    }
}

pub fn parse_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 12 || &bytes[0..8] != MAGIC {
        return Err(Error::format("checkpoint: bad magic"));
    }
    let mlen = u32::from_le_bytes([bytes[8], bytes[9], bytes[10], bytes[11]]) as usize;
    let manifest_bytes = bytes
        .get(12..12 + mlen)
        .ok_or_else(|| Error::format("checkpoint: truncated manifest"))?;
    let manifest: Manifest = serde_json::from_slice(manifest_bytes)
        .map_err(|e| Error::format(format!("checkpoint manifest: {e}")))?;
    if manifest.version != 1 {
        return Err(Error::format(format!("checkpoint: unsupported version {}", manifest.version)));
    }
    if manifest.blocks.iter().any(|b| b.len > MAX_BLOCK_ELEMS) {
        return Err(Error::format("checkpoint: unreasonable block size"));
    }
    let data = &bytes[12 + mlen..];
    let mut reader = BlockReader { manifest: &manifest, data, next: 0, offset: 0 };

    let payload = match manifest.kind.as_str() {
        "gmm" => {
            let k = manifest.meta["k"]
                .as_u64()
                .ok_or_else(|| Error::format("checkpoint: gmm meta missing k"))?
                as usize;
            let dim = manifest.meta["dim"]
                .as_u64()
                .ok_or_else(|| Error::format("checkpoint: gmm meta missing dim"))?
                as usize;
            if k == 0 || dim == 0 || k > 100_000 || dim > 100_000 {
                return Err(Error::format("checkpoint: unreasonable gmm shape"));
            }
            let mut weights = reader.take("weights", k)?;
            let total: f64 = weights.iter().sum();
            if !(total > 0.0) {
                return Err(Error::format("checkpoint: gmm weights must have positive sum"));
            }
            for w in &mut weights {
                *w /= total;
            }
            let mut components = Vec::with_capacity(k);
            for i in 0..k {
                let mean = reader.take(&format!("mean{i}"), dim)?;
                let cov = reader.take(&format!("cov{i}"), dim * dim)?;
                let cov = Array2::from_shape_vec((dim, dim), cov)
                    .map_err(|e| Error::format(e.to_string()))?;
                components.push(
                    GmmComponent::new(Array1::from(mean), cov)
                        .map_err(|e| Error::format(format!("checkpoint component {i}: {e}")))?,
                );
            }
            CheckpointPayload::Gmm(
                GmmModel::new(weights, components).map_err(|e| Error::format(e.to_string()))?,
            )
        }
        "flow" => {
            let spec: FlowSpec = serde_json::from_value(manifest.meta.clone())
                .map_err(|e| Error::format(format!("checkpoint flow spec: {e}")))?;
            let spec = FlowSpec::new(spec.dim, spec.layers, spec.hidden.clone(), spec.clamp)
                .map_err(|e| Error::format(e.to_string()))?;
            if spec.dim > 10_000 || spec.layers > 1_000 || spec.hidden.iter().any(|&h| h > 100_000) {
                return Err(Error::format("checkpoint: unreasonable flow shape"));
            }
            let mut params = Vec::with_capacity(manifest.blocks.len());
            for (i, desc) in manifest.blocks.iter().enumerate() {
                params.push(reader.take(&format!("param{i}"), desc.len)?);
            }
            CheckpointPayload::Flow(
                FlowModel::from_params(spec, params).map_err(|e| Error::format(e.to_string()))?,
            )
        }
        "alr" => {
            let spec: MlpSpec = serde_json::from_value(manifest.meta.clone())
                .map_err(|e| Error::format(format!("checkpoint alr spec: {e}")))?;
            if spec.sizes.len() < 2 || spec.sizes.iter().any(|&s| s == 0 || s > 100_000) {
                return Err(Error::format("checkpoint: unreasonable alr shape"));
            }
            let mut params = Vec::with_capacity(manifest.blocks.len());
            for (i, desc) in manifest.blocks.iter().enumerate() {
                params.push(reader.take(&format!("param{i}"), desc.len)?);
            }
            CheckpointPayload::Alr(
                Discriminator::from_params(spec, params)
                    .map_err(|e| Error::format(e.to_string()))?,
            )
        }
        "measure" => {
            let len = manifest.meta["len"]
                .as_u64()
                .ok_or_else(|| Error::format("checkpoint: measure meta missing len"))?
                as usize;
            let dim = manifest.meta["dim"]
                .as_u64()
                .ok_or_else(|| Error::format("checkpoint: measure meta missing dim"))?
                as usize;
            if len == 0 || dim == 0 || len.saturating_mul(dim) > MAX_BLOCK_ELEMS {
                return Err(Error::format("checkpoint: unreasonable measure shape"));
            }
            let flat = reader.take("points", len * dim)?;
            let mut weights = reader.take("weights", len)?;
            let total: f64 = weights.iter().sum();
            if !(total > 0.0) {
                return Err(Error::format("checkpoint: measure weights must have positive sum"));
            }
            for w in &mut weights {
                *w /= total;
            }
            let sum: f64 = weights.iter().sum();
            let last = weights.len() - 1;
            weights[last] += 1.0 - sum;
            let points: Vec<Vec<f64>> = flat.chunks_exact(dim).map(|c| c.to_vec()).collect();
            CheckpointPayload::Measure(
                DiscreteMeasure::new(points, weights).map_err(|e| Error::format(e.to_string()))?,
            )
        }
        other => return Err(Error::format(format!("checkpoint: unknown kind {other:?}"))),
    };
    if payload.patch_dim() != manifest.patch.dim() {
        return Err(Error::format(format!(
            "checkpoint: payload dim {} does not match patch config dim {}",
            payload.patch_dim(),
            manifest.patch.dim()
        )));
    }
    Ok(Checkpoint { payload, patch: manifest.patch, extra: manifest.extra })
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_checkpoint(ckpt)?)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    parse_checkpoint(&fs::read(path)?)
}
