//! Binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic    8 bytes  "CONURECK"
//! version  u32
//! records  repeated: kind u8, length u64, payload
//! hash     32 bytes SHA-256 of every preceding byte
//! ```
//!
//! Record kinds, in the order they are written:
//!
//! | kind | payload |
//! |------|---------|
//! | 1 | run configuration as TOML |
//! | 2 | task registry as JSON |
//! | 3 | model structure as JSON: item count, backbone count, heads |
//! | 4 | one tensor: name, rank `u32`, dims `u64`, values `f64` |
//! | 5 | ownership of one tensor: name, run count `u32`, runs of (label `u16`, length `u32`) |
//! | 6 | optimiser: step `u64`, then per tensor name, length `u64`, first and second moments |
//! | 7 | random stream: seed 32 bytes, stream `u64`, word position `u128` |
//!
//! Names are a `u32` byte length followed by UTF-8.

use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backbone::{BackboneParams, TaskHead};
use crate::continual::{decode_runs, encode_runs, OwnershipMap, TaskRegistry};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::numerics::Tensor;
use crate::task::TaskId;
use crate::training::{AdamState, Learner, Moments, RunConfig};

pub const MAGIC: &[u8; 8] = b"CONURECK";
pub const FORMAT_VERSION: u32 = 1;
const HASH_LEN: usize = 32;

const CONFIG: u8 = 1;
const REGISTRY: u8 = 2;
const STRUCTURE: u8 = 3;
const TENSOR: u8 = 4;
const OWNERSHIP: u8 = 5;
const OPTIMIZER: u8 = 6;
const RNG: u8 = 7;

#[derive(Serialize, Deserialize)]
struct Structure {
    num_items: usize,
    backbones: usize,
    /// `(task, labels, backbone)`
    heads: Vec<(TaskId, usize, usize)>,
    conure_ownership: bool,
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn record(&mut self, kind: u8, payload: &[u8]) {
        self.buf.push(kind);
        self.buf.extend_from_slice(&(payload.len() as u64).to_le_bytes());
        self.buf.extend_from_slice(payload);
    }
}

fn put_name(out: &mut Vec<u8>, name: &str) {
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
}

fn put_f64s(out: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.data.len()).ok_or_else(|| corrupt("truncated record"))?;
        let out = &self.data[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn u128(&mut self) -> Result<u128> {
        Ok(u128::from_le_bytes(self.take(16)?.try_into().expect("16 bytes")))
    }

    fn len(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| corrupt("length overflow"))
    }

    fn name(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| corrupt("name is not UTF-8"))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| corrupt("length overflow"))?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    fn done(&self) -> bool {
        self.pos == self.data.len()
    }
}

/// Serialises the whole learner state.
pub fn encode(learner: &Learner) -> Result<Vec<u8>> {
    let mut w = Writer { buf: Vec::new() };
    w.buf.extend_from_slice(MAGIC);
    w.buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    w.record(CONFIG, learner.config.to_toml()?.as_bytes());
    let registry = serde_json::to_vec(&learner.registry).map_err(|e| corrupt(e.to_string()))?;
    w.record(REGISTRY, &registry);
    let model = &learner.model;
    let structure = Structure {
        num_items: model.num_items(),
        backbones: model.backbones.len(),
        heads: model
            .heads
            .iter()
            .map(|(&t, h)| Ok((t, h.labels(), model.backbone_index(t)?)))
            .collect::<Result<_>>()?,
        conure_ownership: learner.ownership.is_some(),
    };
    w.record(STRUCTURE, &serde_json::to_vec(&structure).map_err(|e| corrupt(e.to_string()))?);
    let mut tensors = Vec::new();
    model.visit(&mut |name, _, t| {
        let mut p = Vec::with_capacity(16 + name.len() + t.len() * 8);
        put_name(&mut p, name);
        p.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            p.extend_from_slice(&(d as u64).to_le_bytes());
        }
        put_f64s(&mut p, t.data());
        tensors.push(p);
    });
    for p in tensors {
        w.record(TENSOR, &p);
    }
    if let Some(own) = &learner.ownership {
        for (name, labels) in own.iter() {
            let runs = encode_runs(labels);
            let mut p = Vec::new();
            put_name(&mut p, name);
            p.extend_from_slice(&(runs.len() as u32).to_le_bytes());
            for (l, n) in runs {
                p.extend_from_slice(&l.to_le_bytes());
                p.extend_from_slice(&n.to_le_bytes());
            }
            w.record(OWNERSHIP, &p);
        }
    }
    let mut p = Vec::new();
    p.extend_from_slice(&learner.optimizer.step.to_le_bytes());
    for (name, m) in &learner.optimizer.moments {
        put_name(&mut p, name);
        p.extend_from_slice(&(m.m.len() as u64).to_le_bytes());
        put_f64s(&mut p, &m.m);
        put_f64s(&mut p, &m.v);
    }
    w.record(OPTIMIZER, &p);
    let mut p = Vec::new();
    p.extend_from_slice(&learner.rng.get_seed());
    p.extend_from_slice(&learner.rng.get_stream().to_le_bytes());
    p.extend_from_slice(&learner.rng.get_word_pos().to_le_bytes());
    w.record(RNG, &p);
    let hash = Sha256::digest(&w.buf);
    w.buf.extend_from_slice(&hash);
    Ok(w.buf)
}

/// Restores a learner from [`encode`] output.
pub fn decode(bytes: &[u8]) -> Result<Learner> {
    if bytes.len() < MAGIC.len() + 4 + HASH_LEN {
        return Err(corrupt("file is too short to be a checkpoint"));
    }
    if &bytes[..MAGIC.len()] != MAGIC {
        return Err(corrupt("not a checkpoint file"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version > FORMAT_VERSION {
        return Err(corrupt(format!(
            "format version {version} is newer than supported version {FORMAT_VERSION}"
        )));
    }
    if version == 0 {
        return Err(corrupt("format version 0 is invalid"));
    }
    let (body, hash) = bytes.split_at(bytes.len() - HASH_LEN);
    if Sha256::digest(body).as_slice() != hash {
        return Err(corrupt("content hash mismatch"));
    }
    let mut r = Reader { data: body, pos: 12 };
    let mut config = None;
    let mut registry = None;
    let mut structure: Option<Structure> = None;
    let mut tensors: BTreeMap<String, Tensor> = BTreeMap::new();
    let mut ownership = OwnershipMap::new();
    let mut optimizer = AdamState::new();
    let mut rng = None;
    while !r.done() {
        let kind = r.u8()?;
        let len = r.len()?;
        let payload = r.take(len)?;
        let mut p = Reader { data: payload, pos: 0 };
        match kind {
            CONFIG => {
                let text = std::str::from_utf8(payload).map_err(|_| corrupt("config is not UTF-8"))?;
                config = Some(RunConfig::from_toml(text)?);
            }
            REGISTRY => {
                registry = Some(
                    serde_json::from_slice::<TaskRegistry>(payload).map_err(|e| corrupt(format!("registry: {e}")))?,
                );
            }
            STRUCTURE => {
                structure = Some(serde_json::from_slice(payload).map_err(|e| corrupt(format!("structure: {e}")))?);
            }
            TENSOR => {
                let name = p.name()?;
                let rank = p.u32()? as usize;
                let shape = (0..rank).map(|_| p.len()).collect::<Result<Vec<_>>>()?;
                let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| corrupt("shape overflow"))?;
                let data = p.f64s(n)?;
                tensors.insert(name, Tensor::new(shape, data)?);
            }
            OWNERSHIP => {
                let name = p.name()?;
                let count = p.u32()? as usize;
                let runs = (0..count).map(|_| Ok((p.u16()?, p.u32()?))).collect::<Result<Vec<_>>>()?;
                ownership.insert_labels(name, decode_runs(&runs));
            }
            OPTIMIZER => {
                optimizer.step = p.u64()?;
                while !p.done() {
                    let name = p.name()?;
                    let n = p.len()?;
                    let m = p.f64s(n)?;
                    let v = p.f64s(n)?;
                    optimizer.moments.insert(name, Moments { m, v });
                }
            }
            RNG => {
                let seed: [u8; 32] = p.take(32)?.try_into().expect("32 bytes");
                let mut g = ChaCha8Rng::from_seed(seed);
                g.set_stream(p.u64()?);
                g.set_word_pos(p.u128()?);
                rng = Some(g);
            }
            other => return Err(corrupt(format!("unknown record kind {other}"))),
        }
        if !p.done() && kind != CONFIG && kind != REGISTRY && kind != STRUCTURE {
            return Err(corrupt(format!("record kind {kind} has trailing bytes")));
        }
    }
    let config = config.ok_or_else(|| corrupt("missing config record"))?;
    let registry = registry.ok_or_else(|| corrupt("missing registry record"))?;
    let structure = structure.ok_or_else(|| corrupt("missing structure record"))?;
    let rng = rng.ok_or_else(|| corrupt("missing random stream record"))?;

    // Build a model of the right shape, then overwrite every tensor.
    let mut scratch = ChaCha8Rng::seed_from_u64(0);
    let mut model = Model::new(config.backbone.clone(), structure.num_items, &mut scratch)?;
    for _ in 1..structure.backbones {
        model
            .backbones
            .push(BackboneParams::init(&config.backbone, structure.num_items, &mut scratch)?);
    }
    for &(task, labels, bb) in &structure.heads {
        model.heads.insert(task, TaskHead::init(task, config.backbone.hidden, labels, &mut scratch));
        model.routing.insert(task, bb);
    }
    let mut missing = Vec::new();
    let mut seen = 0;
    model.visit_mut(&mut |name, _, t| match tensors.get(name) {
        Some(saved) if saved.shape() == t.shape() => {
            *t = saved.clone();
            seen += 1;
        }
        _ => missing.push(name.to_string()),
    });
    if !missing.is_empty() || seen != tensors.len() {
        return Err(corrupt(format!("tensor records do not match the model structure: {missing:?}")));
    }
    let ownership = structure.conure_ownership.then_some(ownership);
    Ok(Learner {
        config,
        model,
        registry,
        ownership,
        optimizer,
        rng,
    })
}

pub fn save(learner: &Learner, path: &Path) -> Result<()> {
    std::fs::write(path, encode(learner)?).map_err(Error::file(path))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Learner> {
    decode(&std::fs::read(path).map_err(Error::file(path))?)
}
