use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::plan::Phase;
use crate::error::{ensure, Error, Result};
use crate::eval::ProbeSet;
use crate::model::{is_prunable_name, ModelConfig, ParamStore};
use crate::numcore::Tensor;
use crate::packing::{OwnerId, OwnershipMask};

const MAGIC: &[u8; 8] = b"PRNPACK\n";
pub const FORMAT_VERSION: u32 = 1;

/// Outcome of one completed phase.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseRecord {
    pub phase: Phase,
    pub steps: u64,
    pub examples: u64,
    /// Mean loss over the last stretch of training steps.
    pub train_loss: Option<f64>,
    /// Dev cross-entropy per pair language when the phase started (after any
    /// pruning it performs).
    pub dev_loss_before: BTreeMap<String, f64>,
    pub dev_loss: BTreeMap<String, f64>,
}

/// Weights, ownership, and everything needed to reproduce or verify them.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub vocab: Vec<String>,
    /// Effective experiment configuration that produced this state.
    pub experiment: serde_json::Value,
    pub params: ParamStore<f32>,
    pub mask: Option<OwnershipMask>,
    /// Pair languages adapted so far; position `t` (from 1) owns id `t + 1`.
    pub order: Vec<String>,
    pub log: Vec<PhaseRecord>,
    pub probes: ProbeSet,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Segment {
    name: String,
    shape: Vec<usize>,
    dtype: String,
    offset: u64,
    bytes: u64,
    crc32: u32,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format_version: u32,
    model: ModelConfig,
    vocab: Vec<String>,
    experiment: serde_json::Value,
    pair_order: Vec<String>,
    phase_log: Vec<PhaseRecord>,
    probes: ProbeSet,
    tensors: Vec<Segment>,
    mask_pairs: Option<usize>,
    masks: Vec<Segment>,
    payload_bytes: u64,
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

impl Checkpoint {
    /// Serialized bytes: magic, version and manifest length (little-endian),
    /// the JSON manifest, then the payload of f32 weights and u8 owners.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        if let Some(m) = &self.mask {
            m.check_matches(&self.params)?;
        }
        let mut payload = Vec::new();
        let segment = |payload: &mut Vec<u8>, name: &str, shape: &[usize], dtype: &str, bytes: Vec<u8>| {
            let s = Segment {
                name: name.to_string(),
                shape: shape.to_vec(),
                dtype: dtype.to_string(),
                offset: payload.len() as u64,
                bytes: bytes.len() as u64,
                crc32: crc32fast::hash(&bytes),
            };
            payload.extend_from_slice(&bytes);
            s
        };
        let tensors = self
            .params
            .iter()
            .map(|e| {
                let bytes = e.tensor.data().iter().flat_map(|x| x.to_le_bytes()).collect();
                segment(&mut payload, &e.name, e.tensor.shape(), "f32", bytes)
            })
            .collect();
        let masks = match &self.mask {
            Some(m) => m
                .iter()
                .map(|(name, shape, owners)| segment(&mut payload, name, shape, "u8", owners.to_vec()))
                .collect(),
            None => Vec::new(),
        };
        let manifest = Manifest {
            format_version: FORMAT_VERSION,
            model: self.model.clone(),
            vocab: self.vocab.clone(),
            experiment: self.experiment.clone(),
            pair_order: self.order.clone(),
            phase_log: self.log.clone(),
            probes: self.probes.clone(),
            tensors,
            mask_pairs: self.mask.as_ref().map(OwnershipMask::num_pairs),
            masks,
            payload_bytes: payload.len() as u64,
        };
        let json = serde_json::to_vec(&manifest)?;
        let mut out = Vec::with_capacity(20 + json.len() + payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&payload);
        Ok(out)
    }

    /// Parses and fully validates a checkpoint; any inconsistency is an
    /// error and nothing partial is returned.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        ensure!(bytes.len() >= 20, Checkpoint, "file too short for a header ({} bytes)", bytes.len());
        ensure!(&bytes[..8] == MAGIC, Checkpoint, "bad magic; not a checkpoint");
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        ensure!(version == FORMAT_VERSION, Checkpoint, "unsupported format version {version}");
        let mlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes"));
        let rest = &bytes[20..];
        ensure!(mlen <= rest.len() as u64, Checkpoint, "manifest length {mlen} exceeds file");
        let (json, payload) = rest.split_at(mlen as usize);
        let m: Manifest = serde_json::from_slice(json).map_err(|e| corrupt(format!("manifest: {e}")))?;
        ensure!(m.format_version == version, Checkpoint, "manifest version disagrees with header");
        ensure!(
            payload.len() as u64 == m.payload_bytes,
            Checkpoint,
            "payload holds {} bytes, manifest expects {} (truncated or padded file)",
            payload.len(),
            m.payload_bytes
        );
        let mut cursor = 0u64;
        let mut take = |s: &Segment, dtype: &str, width: u64| -> Result<&[u8]> {
            ensure!(s.dtype == dtype, Checkpoint, "{}: element type {} where {dtype} expected", s.name, s.dtype);
            ensure!(s.offset == cursor, Checkpoint, "{}: segment offset {} out of sequence", s.name, s.offset);
            let numel: u64 = s.shape.iter().map(|&d| d as u64).product();
            ensure!(s.bytes == numel * width, Checkpoint, "{}: {} bytes for shape {:?}", s.name, s.bytes, s.shape);
            let end = s.offset.checked_add(s.bytes).filter(|&e| e <= payload.len() as u64);
            let end = end.ok_or_else(|| corrupt(format!("{}: segment runs past the payload", s.name)))?;
            let data = &payload[s.offset as usize..end as usize];
            ensure!(crc32fast::hash(data) == s.crc32, Checkpoint, "{}: checksum mismatch", s.name);
            cursor = end;
            Ok(data)
        };
        let mut params = ParamStore::new();
        for s in &m.tensors {
            let data = take(s, "f32", 4)?;
            let values = data
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            let t = Tensor::new(s.shape.clone(), values).map_err(|e| corrupt(format!("{}: {e}", s.name)))?;
            params.insert(s.name.clone(), t).map_err(|e| corrupt(e.to_string()))?;
        }
        let mask = match m.mask_pairs {
            Some(n) => {
                let mut parts = Vec::new();
                for s in &m.masks {
                    ensure!(is_prunable_name(&s.name), Checkpoint, "owner mask for non-prunable {}", s.name);
                    let owners: Vec<OwnerId> = take(s, "u8", 1)?.to_vec();
                    parts.push((s.name.clone(), s.shape.clone(), owners));
                }
                let mask = OwnershipMask::from_parts(parts, n).map_err(|e| corrupt(e.to_string()))?;
                mask.check_matches(&params).map_err(|e| corrupt(e.to_string()))?;
                Some(mask)
            }
            None => {
                ensure!(m.masks.is_empty(), Checkpoint, "owner segments without a mask header");
                None
            }
        };
        ensure!(cursor == m.payload_bytes, Checkpoint, "payload has unreferenced trailing bytes");
        Ok(Self {
            model: m.model,
            vocab: m.vocab,
            experiment: m.experiment,
            params,
            mask,
            order: m.pair_order,
            log: m.phase_log,
            probes: m.probes,
        })
    }

    /// Writes through a temporary sibling and renames, so readers never see
    /// a half-written file.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let tmp = path.with_extension("partial");
        fs::write(&tmp, &bytes).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Checkpoint(msg) => Error::Checkpoint(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Position (from 1) of `lang` in the adaptation order.
    pub fn position(&self, lang: &str) -> Option<usize> {
        self.order.iter().position(|l| l == lang).map(|i| i + 1)
    }
}
