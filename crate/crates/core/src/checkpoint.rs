//! Binary model checkpoints.
//!
//! All integers are little-endian.
//!
//! ```text
//! offset  size        field
//! 0       4           magic "LCTM"
//! 4       2           format version (1)
//! 6       2           flags (reserved, must be 0)
//! 8       4           input_dim
//! 12      4           number of trunk hidden layers L
//! 16      4·L         trunk widths
//! ..      4           channels C
//! ..      4           film_hidden H
//! ..      4           lambda_dim
//! ..      8           parameter count P (must match the architecture)
//! ..      8·P         parameters, f64
//! ..      4           metadata length M
//! ..      M           metadata, UTF-8 JSON
//! ```
//!
//! The metadata holds the training config, training β, epoch history and,
//! for CSV-trained models, the label schema and standardizer. Nothing may
//! follow the metadata.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{CsvSchema, Standardizer};
use crate::error::{Error, Result};
use crate::film_net::{Architecture, FilmMlp};
use crate::trainer::{EpochLog, TrainConfig, TrainedModel};

pub const MAGIC: [u8; 4] = *b"LCTM";
pub const VERSION: u16 = 1;

const MAX_LAYERS: u32 = 64;
const MAX_WIDTH: u32 = 1 << 16;

#[derive(Serialize, Deserialize)]
struct Metadata {
    config: TrainConfig,
    train_beta: f64,
    history: Vec<EpochLog>,
    standardizer: Option<Standardizer>,
    schema: Option<CsvSchema>,
}

pub fn encode(model: &TrainedModel) -> Result<Vec<u8>> {
    let arch = model.net.arch();
    let meta = serde_json::to_vec(&Metadata {
        config: model.config.clone(),
        train_beta: model.train_beta,
        history: model.history.clone(),
        standardizer: model.standardizer.clone(),
        schema: model.schema.clone(),
    })?;
    let params = model.net.params();
    let mut out = Vec::with_capacity(64 + 8 * params.len() + meta.len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&0u16.to_le_bytes());
    let u32_of = |v: usize| {
        u32::try_from(v)
            .map_err(|_| Error::Checkpoint(format!("dimension {v} does not fit in u32")))
    };
    out.extend_from_slice(&u32_of(arch.input_dim)?.to_le_bytes());
    out.extend_from_slice(&u32_of(arch.hidden.len())?.to_le_bytes());
    for &h in &arch.hidden {
        out.extend_from_slice(&u32_of(h)?.to_le_bytes());
    }
    for v in [arch.channels, arch.film_hidden, arch.lambda_dim] {
        out.extend_from_slice(&u32_of(v)?.to_le_bytes());
    }
    out.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for p in params {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out.extend_from_slice(&u32_of(meta.len())?.to_le_bytes());
    out.extend_from_slice(&meta);
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated while reading {what}")))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(
            self.take(2, what)?.try_into().expect("2 bytes"),
        ))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4, what)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8, what)?.try_into().expect("8 bytes"),
        ))
    }

    fn width(&mut self, what: &str) -> Result<usize> {
        let v = self.u32(what)?;
        if v == 0 || v > MAX_WIDTH {
            return Err(Error::Checkpoint(format!(
                "{what} = {v} outside [1, {MAX_WIDTH}]"
            )));
        }
        Ok(v as usize)
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }
}

pub fn decode(bytes: &[u8]) -> Result<TrainedModel> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint (bad magic)".into()));
    }
    let version = r.u16("version")?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {version}"
        )));
    }
    let flags = r.u16("flags")?;
    if flags != 0 {
        return Err(Error::Checkpoint(format!("unknown flags {flags:#06x}")));
    }
    let input_dim = r.width("input_dim")?;
    let n_layers = r.u32("layer count")?;
    if n_layers > MAX_LAYERS {
        return Err(Error::Checkpoint(format!(
            "{n_layers} hidden layers exceeds {MAX_LAYERS}"
        )));
    }
    let hidden = (0..n_layers)
        .map(|_| r.width("hidden width"))
        .collect::<Result<Vec<_>>>()?;
    let arch = Architecture {
        input_dim,
        hidden,
        channels: r.width("channels")?,
        film_hidden: r.width("film_hidden")?,
        lambda_dim: r.width("lambda_dim")?,
    };
    let n_params = r.u64("parameter count")?;
    if n_params != arch.param_count() as u64 {
        return Err(Error::Checkpoint(format!(
            "parameter count {n_params} does not match architecture ({})",
            arch.param_count()
        )));
    }
    if n_params > (r.remaining() / 8) as u64 {
        return Err(Error::Checkpoint(
            "truncated while reading parameters".into(),
        ));
    }
    let params: Vec<f64> = r
        .take(8 * n_params as usize, "parameters")?
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    if params.iter().any(|p| !p.is_finite()) {
        return Err(Error::Checkpoint("non-finite parameter".into()));
    }
    let meta_len = r.u32("metadata length")? as usize;
    let meta_bytes = r.take(meta_len, "metadata")?;
    if r.remaining() != 0 {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes",
            r.remaining()
        )));
    }
    let meta: Metadata = serde_json::from_slice(meta_bytes)
        .map_err(|e| Error::Checkpoint(format!("metadata: {e}")))?;
    meta.config
        .validate()
        .map_err(|e| Error::Checkpoint(format!("metadata config: {e}")))?;
    let expected = meta
        .config
        .network
        .architecture(arch.input_dim, meta.config.lambda.dim());
    if expected != arch {
        return Err(Error::Checkpoint(
            "metadata config does not match stored architecture".into(),
        ));
    }
    Ok(TrainedModel {
        net: FilmMlp::from_params(arch, params)?,
        config: meta.config,
        train_beta: meta.train_beta,
        history: meta.history,
        standardizer: meta.standardizer,
        schema: meta.schema,
    })
}

pub fn save(model: &TrainedModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode(model)?).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<TrainedModel> {
    let path = path.as_ref();
    decode(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}
