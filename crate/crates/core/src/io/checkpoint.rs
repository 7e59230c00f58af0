//! Binary training checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "MBGM" | version u32 | metadata length u64 | metadata JSON
//!        | tensor count u32 | tensors sorted by name
//! tensor: name length u32 | name | dtype u8 | rank u32 | dims u64 x rank | raw data
//! ```
//!
//! The metadata holds both configurations, the epoch, the Adam step count
//! and each chain's iteration and generator position. Tensors hold the
//! parameters (`param/`), batch-norm buffers (`buffer/`), Adam moments
//! (`adam.m/`, `adam.v/`), chain latents (`chain/NNNN/{c,s0,h,a}`) and the
//! training log (`log`, f64, one row per record).

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::inference::ChainState;
use crate::model::{LatentPath, ModelConfig, ModelParams};
use crate::rng::{Rng, RngState};
use crate::scalar::{DType, Scalar};
use crate::training::{AdamState, TrainConfig, TrainLog, TrainRecord, Trainer};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MBGM";
pub const CHECKPOINT_VERSION: u32 = 1;
const LOG_COLUMNS: usize = 7;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Meta {
    model: ModelConfig,
    train: TrainConfig,
    epoch: usize,
    adam_step: u64,
    chains: Vec<ChainMeta>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ChainMeta {
    iteration: u64,
    rng_seed: String,
    rng_stream: u64,
    rng_word_pos: String,
}

impl ChainMeta {
    fn new<S>(chain: &ChainState<S>) -> Self {
        let st = chain.rng.state();
        Self {
            iteration: chain.iteration,
            rng_seed: st.seed.iter().map(|b| format!("{b:02x}")).collect(),
            rng_stream: st.stream,
            rng_word_pos: st.word_pos.to_string(),
        }
    }

    fn rng(&self) -> Result<Rng> {
        let bad = || Error::Checkpoint("malformed generator state".into());
        if self.rng_seed.len() != 64 {
            return Err(bad());
        }
        let mut seed = [0u8; 32];
        for (i, b) in seed.iter_mut().enumerate() {
            *b = u8::from_str_radix(&self.rng_seed[2 * i..2 * i + 2], 16).map_err(|_| bad())?;
        }
        Ok(Rng::from_state(&RngState {
            seed,
            stream: self.rng_stream,
            word_pos: self.rng_word_pos.parse().map_err(|_| bad())?,
        }))
    }
}

#[derive(Debug, Clone, PartialEq)]
struct RawTensor {
    dtype: DType,
    shape: Vec<usize>,
    bytes: Vec<u8>,
}

impl RawTensor {
    fn from_tensor<S: Scalar>(t: &Tensor<S>) -> Self {
        let mut bytes = Vec::with_capacity(t.numel() * S::DTYPE.size_of());
        for &v in t.data() {
            match S::DTYPE {
                DType::F32 => bytes.extend_from_slice(&v.to_f32().expect("f32").to_le_bytes()),
                DType::F64 => bytes.extend_from_slice(&v.to_f64_lossy().to_le_bytes()),
            }
        }
        Self {
            dtype: S::DTYPE,
            shape: t.shape().to_vec(),
            bytes,
        }
    }

    fn to_tensor<S: Scalar>(&self, name: &str) -> Result<Tensor<S>> {
        if self.dtype != S::DTYPE {
            return Err(Error::Checkpoint(format!(
                "tensor `{name}` is {}, expected {}",
                self.dtype,
                S::DTYPE
            )));
        }
        let data = match S::DTYPE {
            DType::F32 => self
                .bytes
                .chunks_exact(4)
                .map(|c| S::from_f32(f32::from_le_bytes(c.try_into().expect("4 bytes"))).expect("f32"))
                .collect(),
            DType::F64 => self
                .bytes
                .chunks_exact(8)
                .map(|c| S::from_f64_lossy(f64::from_le_bytes(c.try_into().expect("8 bytes"))))
                .collect(),
        };
        Tensor::from_vec(&self.shape, data).map_err(|e| Error::Checkpoint(format!("tensor `{name}`: {e}")))
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint(format!("truncated file at byte {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Checkpoint("length overflows".into()))
    }
}

fn latent_names(i: usize) -> [String; 4] {
    ["c", "s0", "h", "a"].map(|k| format!("chain/{i:04}/{k}"))
}

/// Serializes the complete training state.
pub fn encode_checkpoint<S: Scalar>(trainer: &Trainer<S>) -> Result<Vec<u8>> {
    let meta = Meta {
        model: trainer.model.clone(),
        train: trainer.train.clone(),
        epoch: trainer.epoch,
        adam_step: trainer.adam.t,
        chains: trainer.chains.iter().map(ChainMeta::new).collect(),
    };
    let mut table: BTreeMap<String, RawTensor> = BTreeMap::new();
    for (prefix, map) in [
        ("param", trainer.params.trainable()),
        ("buffer", trainer.params.buffers()),
        ("adam.m", &trainer.adam.m),
        ("adam.v", &trainer.adam.v),
    ] {
        for (name, t) in map {
            table.insert(format!("{prefix}/{name}"), RawTensor::from_tensor(t));
        }
    }
    for (i, chain) in trainer.chains.iter().enumerate() {
        let [c, s0, h, a] = latent_names(i);
        let l = &chain.latents;
        table.insert(c, RawTensor::from_tensor(&l.c));
        table.insert(s0, RawTensor::from_tensor(&l.s0));
        table.insert(h, RawTensor::from_tensor(&l.h));
        if let Some(av) = &l.a {
            table.insert(a, RawTensor::from_tensor(av));
        }
    }
    if !trainer.log.records.is_empty() {
        let rows: Vec<f64> = trainer
            .log
            .records
            .iter()
            .flat_map(|r| {
                [r.epoch as f64, r.mse, r.penalty_r, r.penalty_smooth, r.objective, r.intrackability, r.seconds]
            })
            .collect();
        let log = Tensor::from_vec(&[trainer.log.records.len(), LOG_COLUMNS], rows)?;
        table.insert("log".into(), RawTensor::from_tensor(&log));
    }

    let json = serde_json::to_vec(&meta)?;
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&(table.len() as u32).to_le_bytes());
    for (name, t) in &table {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(t.dtype.tag());
        out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
        for &d in &t.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        out.extend_from_slice(&t.bytes);
    }
    Ok(out)
}

fn parse(bytes: &[u8]) -> Result<(Meta, BTreeMap<String, RawTensor>)> {
    if bytes.len() < 4 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("not a MBGM checkpoint".into()));
    }
    let mut r = Reader { bytes, pos: 4 };
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {version} (this build reads version {CHECKPOINT_VERSION})"
        )));
    }
    let n = r.len()?;
    let meta: Meta = serde_json::from_slice(r.take(n)?)
        .map_err(|e| Error::Checkpoint(format!("metadata: {e}")))?;
    let count = r.u32()?;
    let mut table = BTreeMap::new();
    for _ in 0..count {
        let n = r.u32()? as usize;
        let name = String::from_utf8(r.take(n)?.to_vec())
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
        let tag = r.u8()?;
        let dtype =
            DType::from_tag(tag).ok_or_else(|| Error::Checkpoint(format!("tensor `{name}`: unknown dtype {tag}")))?;
        let rank = r.u32()? as usize;
        let shape = (0..rank).map(|_| r.len()).collect::<Result<Vec<_>>>()?;
        let numel = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .and_then(|n| n.checked_mul(dtype.size_of()))
            .ok_or_else(|| Error::Checkpoint(format!("tensor `{name}`: size overflows")))?;
        let bytes = r.take(numel)?.to_vec();
        if table.insert(name.clone(), RawTensor { dtype, shape, bytes }).is_some() {
            return Err(Error::Checkpoint(format!("duplicate tensor `{name}`")));
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok((meta, table))
}

fn take_group<S: Scalar>(table: &mut BTreeMap<String, RawTensor>, prefix: &str) -> Result<BTreeMap<String, Tensor<S>>> {
    let keys: Vec<String> = table.keys().filter(|k| k.starts_with(prefix)).cloned().collect();
    keys.into_iter()
        .map(|k| {
            let raw = table.remove(&k).expect("listed");
            Ok((k[prefix.len()..].to_string(), raw.to_tensor(&k)?))
        })
        .collect()
}

/// Restores the training state, checking every tensor against the embedded
/// configuration.
pub fn decode_checkpoint<S: Scalar>(bytes: &[u8]) -> Result<Trainer<S>> {
    let (meta, mut table) = parse(bytes)?;
    meta.model.validate()?;
    let ckpt = |e: Error| Error::Checkpoint(e.to_string());
    let trainable = take_group(&mut table, "param/")?;
    let buffers = take_group(&mut table, "buffer/")?;
    let params = ModelParams::from_parts(&meta.model, trainable, buffers).map_err(ckpt)?;
    let adam = AdamState {
        m: take_group(&mut table, "adam.m/")?,
        v: take_group(&mut table, "adam.v/")?,
        t: meta.adam_step,
    };
    for (which, moments) in [("adam.m", &adam.m), ("adam.v", &adam.v)] {
        let names_match = moments.len() == params.trainable().len()
            && params
                .trainable()
                .iter()
                .all(|(k, p)| moments.get(k).is_some_and(|m| m.shape() == p.shape()));
        if !names_match {
            return Err(Error::Checkpoint(format!("{which} does not match the parameter table")));
        }
    }
    let mut chains = Vec::with_capacity(meta.chains.len());
    for (i, cm) in meta.chains.iter().enumerate() {
        let [c, s0, h, a] = latent_names(i);
        let mut get = |name: &str| -> Result<Option<Tensor<S>>> {
            table.remove(name).map(|raw| raw.to_tensor(name)).transpose()
        };
        let missing = |name: &str| Error::Checkpoint(format!("missing tensor `{name}`"));
        let latents = LatentPath {
            c: get(&c)?.ok_or_else(|| missing(&c))?,
            s0: get(&s0)?.ok_or_else(|| missing(&s0))?,
            h: get(&h)?.ok_or_else(|| missing(&h))?,
            a: get(&a)?,
        };
        latents.check(&meta.model).map_err(|e| Error::Checkpoint(format!("chain {i}: {e}")))?;
        chains.push(ChainState {
            latents,
            iteration: cm.iteration,
            rng: cm.rng()?,
        });
    }
    let mut log = TrainLog::default();
    if let Some(raw) = table.remove("log") {
        let t: Tensor<f64> = raw.to_tensor("log")?;
        if t.shape().len() != 2 || t.shape()[1] != LOG_COLUMNS {
            return Err(Error::Checkpoint(format!("log has shape {:?}", t.shape())));
        }
        log.records = t
            .data()
            .chunks_exact(LOG_COLUMNS)
            .map(|r| TrainRecord {
                epoch: r[0] as usize,
                mse: r[1],
                penalty_r: r[2],
                penalty_smooth: r[3],
                objective: r[4],
                intrackability: r[5],
                seconds: r[6],
            })
            .collect();
    }
    if let Some(name) = table.keys().next() {
        return Err(Error::Checkpoint(format!("unexpected tensor `{name}`")));
    }
    Ok(Trainer {
        model: meta.model,
        train: meta.train,
        params,
        adam,
        chains,
        epoch: meta.epoch,
        log,
    })
}

pub fn save_checkpoint<S: Scalar>(trainer: &Trainer<S>, path: &Path) -> Result<()> {
    fs::write(path, encode_checkpoint(trainer)?)?;
    Ok(())
}

pub fn load_checkpoint<S: Scalar>(path: &Path) -> Result<Trainer<S>> {
    decode_checkpoint(&fs::read(path)?)
}

/// Fails with the first field (in key order) where `requested` differs from
/// the configuration stored in a checkpoint.
pub fn verify_config(stored: &ModelConfig, requested: &ModelConfig) -> Result<()> {
    let (Value::Object(a), Value::Object(b)) = (serde_json::to_value(stored)?, serde_json::to_value(requested)?) else {
        unreachable!("configs serialize to objects");
    };
    match a.iter().find(|(k, v)| b.get(*k) != Some(v)) {
        None => Ok(()),
        Some((key, v)) => Err(Error::Config {
            key: key.clone(),
            message: format!(
                "checkpoint was trained with {v}, requested {}",
                b.get(key).map_or_else(|| "nothing".to_string(), Value::to_string)
            ),
        }),
    }
}
