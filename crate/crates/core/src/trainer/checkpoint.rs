//! Checkpoint layout, all integers little-endian:
//!
//! ```text
//! "VACACKPT"
//! u32 header length, JSON header
//! u32 record count
//! per record: u32 name length, name, u32 ndim, ndim x u64 dims, f64 data
//! ```
//!
//! Records hold the model parameters under their own names and the Adam
//! moments under `adam.m.<name>` and `adam.v.<name>`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Adam, TrainConfig, TrainError, TrainState};
use crate::diff::Tensor;
use crate::models::{Model, ModelConfig, Params};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"VACACKPT";

#[derive(Serialize, Deserialize)]
struct RngState {
    seed: [u8; 32],
    stream: u64,
    /// u128 as a decimal string.
    word_pos: String,
}

#[derive(Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    train: TrainConfig,
    epoch: usize,
    best_score: Option<f64>,
    bad_epochs: usize,
    stopped: bool,
    initial_risk: Option<f64>,
    initial_vi: Option<f64>,
    rng: RngState,
    adam_steps: BTreeMap<String, u64>,
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<(), TrainError> {
    let v = u32::try_from(v).map_err(|_| TrainError::Checkpoint(format!("length {v} exceeds u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_record(out: &mut Vec<u8>, name: &str, shape: &[usize], data: &[f64]) -> Result<(), TrainError> {
    put_u32(out, name.len())?;
    out.extend_from_slice(name.as_bytes());
    put_u32(out, shape.len())?;
    for &d in shape {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(())
}

/// Serializes the full training state; equal states give equal bytes.
pub fn encode_checkpoint(state: &TrainState) -> Result<Vec<u8>, TrainError> {
    let header = Header {
        model: state.model.config.clone(),
        train: state.config.clone(),
        epoch: state.epoch,
        best_score: state.best_score,
        bad_epochs: state.bad_epochs,
        stopped: state.stopped,
        initial_risk: state.initial_risk,
        initial_vi: state.initial_vi,
        rng: RngState {
            seed: state.rng.get_seed(),
            stream: state.rng.get_stream(),
            word_pos: state.rng.get_word_pos().to_string(),
        },
        adam_steps: state.adam.t.clone(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| TrainError::Checkpoint(e.to_string()))?;
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    put_u32(&mut out, json.len())?;
    out.extend_from_slice(&json);

    let params: Vec<(&String, &Tensor)> = state.model.params.iter().collect();
    let count = params.len() + state.adam.m.len() + state.adam.v.len();
    put_u32(&mut out, count)?;
    for (name, t) in &params {
        put_record(&mut out, name, t.shape(), t.data())?;
    }
    for (prefix, moments) in [("adam.m.", &state.adam.m), ("adam.v.", &state.adam.v)] {
        for (name, data) in moments {
            put_record(&mut out, &format!("{prefix}{name}"), &[data.len()], data)?;
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], TrainError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(TrainError::Checkpoint(format!("truncated at byte {}", self.pos))),
        }
    }

    fn u32(&mut self) -> Result<usize, TrainError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn u64(&mut self) -> Result<u64, TrainError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Inverse of [`encode_checkpoint`]; parameter shapes are validated against
/// the architecture in the header.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<TrainState, TrainError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != CHECKPOINT_MAGIC {
        return Err(TrainError::Checkpoint("not a checkpoint file".into()));
    }
    let len = r.u32()?;
    let header: Header =
        serde_json::from_slice(r.take(len)?).map_err(|e| TrainError::Checkpoint(format!("header: {e}")))?;
    let count = r.u32()?;
    let mut params = BTreeMap::new();
    let mut adam = Adam::new();
    for _ in 0..count {
        let n = r.u32()?;
        let name = String::from_utf8(r.take(n)?.to_vec()).map_err(|e| TrainError::Checkpoint(e.to_string()))?;
        let ndim = r.u32()?;
        let shape = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        let size = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .filter(|s| s.checked_mul(8).is_some())
            .ok_or_else(|| TrainError::Checkpoint(format!("record {name} too large")))?;
        let data: Vec<f64> = r
            .take(size * 8)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if let Some(p) = name.strip_prefix("adam.m.") {
            adam.m.insert(p.to_string(), data);
        } else if let Some(p) = name.strip_prefix("adam.v.") {
            adam.v.insert(p.to_string(), data);
        } else {
            params.insert(name, Tensor::new(shape, data)?);
        }
    }
    if r.pos != bytes.len() {
        return Err(TrainError::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    let params = Params::from_map(params);
    params.validate(&header.model)?;
    for (name, m) in adam.m.iter().chain(adam.v.iter()) {
        match params.get(name) {
            Some(t) if t.len() == m.len() => {}
            _ => return Err(TrainError::Checkpoint(format!("optimizer moments for unknown or reshaped {name}"))),
        }
    }
    adam.t = header.adam_steps;

    let mut rng = ChaCha8Rng::from_seed(header.rng.seed);
    rng.set_stream(header.rng.stream);
    let word_pos: u128 = header
        .rng
        .word_pos
        .parse()
        .map_err(|_| TrainError::Checkpoint(format!("bad rng position {:?}", header.rng.word_pos)))?;
    rng.set_word_pos(word_pos);

    Ok(TrainState {
        config: header.train,
        model: Model {
            config: header.model,
            params,
        },
        adam,
        epoch: header.epoch,
        rng,
        best_score: header.best_score,
        bad_epochs: header.bad_epochs,
        stopped: header.stopped,
        initial_risk: header.initial_risk,
        initial_vi: header.initial_vi,
    })
}

pub fn save_checkpoint(state: &TrainState, path: &Path) -> Result<(), TrainError> {
    let bytes = encode_checkpoint(state)?;
    let tmp = path.with_extension("ckpt.tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<TrainState, TrainError> {
    decode_checkpoint(&fs::read(path)?)
}
