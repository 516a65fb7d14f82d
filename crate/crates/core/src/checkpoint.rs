//! Versioned binary checkpoints: the model configuration plus every named
//! parameter tensor.
//!
//! Layout (little endian): magic `UMTCKPT\0`, `u32` version, `u32` length
//! and bytes of the JSON-encoded [`ModelConfig`], `u32` tensor count, then
//! per tensor `u32` name length, UTF-8 name, `u32` rank, `u32` dims and
//! `f64` values.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Result, UmtError};
use crate::model::{ModelConfig, Umt};
use crate::params::ParamStore;
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"UMTCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn encode(model: &Umt) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let cfg = serde_json::to_vec(model.config())?;
    put_u32(&mut out, cfg.len())?;
    out.extend_from_slice(&cfg);
    let params = model.params();
    put_u32(&mut out, params.len())?;
    for (_, name, t) in params.iter() {
        put_u32(&mut out, name.len())?;
        out.extend_from_slice(name.as_bytes());
        put_u32(&mut out, t.shape().len())?;
        for &d in t.shape() {
            put_u32(&mut out, d)?;
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

fn put_u32(out: &mut Vec<u8>, n: usize) -> Result<()> {
    let n = u32::try_from(n).map_err(|_| UmtError::Checkpoint(format!("length {n} does not fit in u32")))?;
    out.extend_from_slice(&n.to_le_bytes());
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| UmtError::Checkpoint("truncated checkpoint".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }
}

/// Parses a checkpoint into its configuration and parameter store.
pub fn decode(bytes: &[u8]) -> Result<(ModelConfig, ParamStore)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(UmtError::Checkpoint("not a checkpoint file (bad magic)".into()));
    }
    let version = r.u32()? as u32;
    if version != CHECKPOINT_VERSION {
        return Err(UmtError::Checkpoint(format!("unsupported checkpoint version {version}")));
    }
    let n = r.u32()?;
    let config: ModelConfig = serde_json::from_slice(r.take(n)?)?;
    let count = r.u32()?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let n = r.u32()?;
        let name = std::str::from_utf8(r.take(n)?)
            .map_err(|_| UmtError::Checkpoint("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = r.u32()?;
        let shape = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let numel: usize = shape.iter().product();
        let raw = r.take(numel.checked_mul(8).ok_or_else(|| UmtError::Checkpoint("tensor too large".into()))?)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        if store.find(&name).is_some() {
            return Err(UmtError::Checkpoint(format!("duplicate tensor {name}")));
        }
        store.add(name, Tensor::new(shape, data)?);
    }
    if r.pos != bytes.len() {
        return Err(UmtError::Checkpoint("trailing bytes after last tensor".into()));
    }
    Ok((config, store))
}

/// Writes atomically: a temporary sibling file is renamed into place.
pub fn save(model: &Umt, path: &Path) -> Result<()> {
    let bytes = encode(model)?;
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp).map_err(|e| UmtError::io(&tmp, e))?;
        f.write_all(&bytes).map_err(|e| UmtError::io(&tmp, e))?;
        f.sync_all().map_err(|e| UmtError::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| UmtError::io(path, e))
}

/// Rebuilds the model architecture from the stored configuration and loads
/// the stored tensors, validating names and shapes.
pub fn load(path: &Path) -> Result<Umt> {
    let bytes = fs::read(path).map_err(|e| UmtError::io(path, e))?;
    let (config, store) = decode(&bytes)?;
    let mut model = Umt::new(config, 0)?;
    model.load_params(&store)?;
    Ok(model)
}
