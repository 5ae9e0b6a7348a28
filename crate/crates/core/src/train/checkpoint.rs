//! `GAECKPT1` checkpoint files.
//!
//! Layout (all integers little-endian u64):
//!
//! ```text
//! magic "GAECKPT1"
//! metadata length, metadata (UTF-8 JSON: dims, configs, epoch, loss history)
//! u, v, w as row-major little-endian f32
//! RNG state length, RNG state bytes
//! ```

use std::fs;
use std::path::Path;

use ndarray::Array2;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::TrainConfig;
use crate::error::{GaeError, Result};
use crate::model::{GaeConfig, GaeParams, LossBreakdown};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"GAECKPT1";
const FORMAT_VERSION: u32 = 1;
const RNG_BYTES: usize = 32 + 8 + 16;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub gae: GaeConfig,
    pub train: TrainConfig,
    pub params: GaeParams,
    pub epoch: usize,
    pub rng_state: Vec<u8>,
    pub loss_history: Vec<LossBreakdown>,
}

#[derive(Serialize, Deserialize)]
struct Metadata {
    format_version: u32,
    gae: GaeConfig,
    train: TrainConfig,
    epoch: usize,
    loss_history: Vec<LossBreakdown>,
}

fn push_rng(out: &mut Vec<u8>, rng: &ChaCha8Rng) {
    out.extend_from_slice(&rng.get_seed());
    out.extend_from_slice(&rng.get_stream().to_le_bytes());
    out.extend_from_slice(&rng.get_word_pos().to_le_bytes());
}

fn read_rng(bytes: &[u8]) -> ChaCha8Rng {
    use rand::SeedableRng;
    let seed: [u8; 32] = bytes[..32].try_into().unwrap();
    let stream = u64::from_le_bytes(bytes[32..40].try_into().unwrap());
    let word_pos = u128::from_le_bytes(bytes[40..56].try_into().unwrap());
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(stream);
    rng.set_word_pos(word_pos);
    rng
}

pub(crate) fn encode_rng_state(main: &ChaCha8Rng, partner: &ChaCha8Rng) -> Vec<u8> {
    let mut out = Vec::with_capacity(2 * RNG_BYTES);
    push_rng(&mut out, main);
    push_rng(&mut out, partner);
    out
}

pub(crate) fn decode_rng_state(bytes: &[u8]) -> Result<(ChaCha8Rng, ChaCha8Rng)> {
    if bytes.len() != 2 * RNG_BYTES {
        return Err(GaeError::Format(format!(
            "RNG state has {} bytes, expected {}",
            bytes.len(),
            2 * RNG_BYTES
        )));
    }
    Ok((read_rng(&bytes[..RNG_BYTES]), read_rng(&bytes[RNG_BYTES..])))
}

pub fn encode_checkpoint(checkpoint: &Checkpoint) -> Result<Vec<u8>> {
    let meta = Metadata {
        format_version: FORMAT_VERSION,
        gae: checkpoint.gae,
        train: checkpoint.train.clone(),
        epoch: checkpoint.epoch,
        loss_history: checkpoint.loss_history.clone(),
    };
    let meta = serde_json::to_vec_pretty(&meta)
        .map_err(|e| GaeError::Format(format!("cannot encode checkpoint metadata: {e}")))?;
    let params = &checkpoint.params;
    let floats = params.u.len() + params.v.len() + params.w.len();
    let mut out = Vec::with_capacity(32 + meta.len() + 4 * floats + checkpoint.rng_state.len());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
    out.extend_from_slice(&meta);
    for v in params.u.iter().chain(params.v.iter()).chain(params.w.iter()) {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out.extend_from_slice(&(checkpoint.rng_state.len() as u64).to_le_bytes());
    out.extend_from_slice(&checkpoint.rng_state);
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn need(&self, n: usize) -> Result<()> {
        if self.bytes.len() - self.pos < n {
            return Err(GaeError::Truncated {
                expected: (self.pos + n) as u64,
                actual: self.bytes.len() as u64,
            });
        }
        Ok(())
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        self.need(n)?;
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn matrix(&mut self, rows: usize, cols: usize) -> Result<Array2<f64>> {
        let raw = self.take(4 * rows * cols)?;
        Ok(Array2::from_shape_fn((rows, cols), |(r, c)| {
            let at = 4 * (r * cols + c);
            f64::from(f32::from_le_bytes(raw[at..at + 4].try_into().unwrap()))
        }))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut reader = Reader { bytes, pos: 0 };
    if reader.take(8)? != CHECKPOINT_MAGIC {
        return Err(GaeError::Format("not a GAECKPT1 checkpoint (bad magic)".into()));
    }
    let meta_len = usize::try_from(reader.u64()?)
        .map_err(|_| GaeError::Format("metadata length overflows".into()))?;
    let meta: Metadata = serde_json::from_slice(reader.take(meta_len)?)
        .map_err(|e| GaeError::Format(format!("bad checkpoint metadata: {e}")))?;
    if meta.format_version != FORMAT_VERSION {
        return Err(GaeError::Format(format!(
            "unsupported checkpoint version {}",
            meta.format_version
        )));
    }
    meta.gae.validate()?;
    let g = meta.gae;
    let floats = 2 * g.num_factors * g.input_dim + g.num_mappings * g.num_pooled();
    // the whole declared payload must be present before anything is decoded
    reader.need(4 * floats + 8)?;
    let u = reader.matrix(g.num_factors, g.input_dim)?;
    let v = reader.matrix(g.num_factors, g.input_dim)?;
    let w = reader.matrix(g.num_mappings, g.num_pooled())?;
    let rng_len = usize::try_from(reader.u64()?)
        .map_err(|_| GaeError::Format("RNG state length overflows".into()))?;
    let rng_state = reader.take(rng_len)?.to_vec();
    if reader.pos != bytes.len() {
        return Err(GaeError::Format(format!(
            "{} trailing bytes after checkpoint",
            bytes.len() - reader.pos
        )));
    }
    decode_rng_state(&rng_state)?;
    if meta.loss_history.len() != meta.epoch {
        return Err(GaeError::Format(format!(
            "loss history has {} entries for epoch {}",
            meta.loss_history.len(),
            meta.epoch
        )));
    }
    Ok(Checkpoint {
        gae: g,
        train: meta.train,
        params: GaeParams::from_parts(g, u, v, w)?,
        epoch: meta.epoch,
        rng_state,
        loss_history: meta.loss_history,
    })
}

pub fn save_checkpoint(checkpoint: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_checkpoint(checkpoint)?)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    decode_checkpoint(&fs::read(path)?)
}
