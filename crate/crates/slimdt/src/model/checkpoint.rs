//! Checkpoint format "SDTC": config echo plus named f64 parameter blobs.
//!
//! Byte layout (little-endian, documented in `docs/formats.md`):
//!
//! ```text
//! magic  b"SDTC"
//! u32    version (= 1)
//! u32    config JSON length, then that many bytes (the ModelConfig echo)
//! u32    state dim d_s
//! f64    state mean [d_s]
//! f64    state std  [d_s]
//! f64    rtg scale
//! u64    parameter count
//! per parameter:
//!   u32  name length, then that many UTF-8 bytes
//!   u32  rank, then u64 dims
//!   f64  data (product of dims)
//! ```
//!
//! Parameters are written in construction order, so identical models
//! serialize to identical bytes.

use std::fs;
use std::path::Path;

use super::{Model, ModelConfig};
use crate::data::DatasetStats;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SDTC";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn encode_checkpoint(model: &Model, stats: &DatasetStats) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let cfg_json = serde_json::to_vec(&model.cfg).expect("config serializes");
    out.extend_from_slice(&(cfg_json.len() as u32).to_le_bytes());
    out.extend_from_slice(&cfg_json);
    out.extend_from_slice(&(stats.state_mean.len() as u32).to_le_bytes());
    for &v in stats.state_mean.iter().chain(&stats.state_std) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&stats.rtg_scale.to_le_bytes());
    out.extend_from_slice(&(model.params.len() as u64).to_le_bytes());
    for p in model.params.iter() {
        out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.extend_from_slice(&(p.shape.len() as u32).to_le_bytes());
        for &d in &p.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in &p.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::format(
                self.pos,
                format!(
                    "truncated checkpoint: need {n} bytes for {what}, {} remain",
                    self.buf.len() - self.pos
                ),
            ));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f64_vec(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let bytes = self.take(n * 8, what)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub fn decode_checkpoint(buf: &[u8]) -> Result<(Model, DatasetStats)> {
    let mut r = Reader { buf, pos: 0 };
    let magic = r.take(4, "magic")?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::format(
            0,
            format!("bad magic {magic:?}, expected {CHECKPOINT_MAGIC:?}"),
        ));
    }
    let version_at = r.pos;
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::format(
            version_at,
            format!("unsupported version {version}, expected {CHECKPOINT_VERSION}"),
        ));
    }
    let cfg_at = r.pos;
    let cfg_len = r.u32("config length")? as usize;
    let cfg_bytes = r.take(cfg_len, "config json")?;
    let cfg: ModelConfig = serde_json::from_slice(cfg_bytes)
        .map_err(|e| Error::format(cfg_at, format!("invalid config echo: {e}")))?;
    cfg.validate()
        .map_err(|e| Error::format(cfg_at, format!("config fails validation: {e}")))?;

    let d_s = r.u32("state dim")? as usize;
    let state_mean = r.f64_vec(d_s, "state mean")?;
    let state_std = r.f64_vec(d_s, "state std")?;
    let rtg_scale = r.f64("rtg scale")?;
    let stats = DatasetStats {
        state_mean,
        state_std,
        rtg_scale,
    };

    // build the skeleton, then overwrite the blobs, verifying the layout
    let mut model = Model::new(cfg, 0);
    let n_params = r.u64("parameter count")? as usize;
    if n_params != model.params.len() {
        return Err(Error::format(
            r.pos,
            format!(
                "checkpoint has {n_params} parameters but the config builds {}",
                model.params.len()
            ),
        ));
    }
    for i in 0..n_params {
        let name_at = r.pos;
        let name_len = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "name")?)
            .map_err(|e| Error::format(name_at, format!("invalid parameter name: {e}")))?
            .to_string();
        let rank = r.u32("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u64("dim")? as usize);
        }
        let numel: usize = shape.iter().product();
        let data = r.f64_vec(numel, "data")?;
        let expect = model.params.by_index(i);
        if expect.name != name || expect.shape != shape {
            return Err(Error::format(
                name_at,
                format!(
                    "parameter {i} is {name} {shape:?}, expected {} {:?}",
                    expect.name, expect.shape
                ),
            ));
        }
        model.params.params[i].data = data;
    }
    if r.pos != buf.len() {
        return Err(Error::format(
            r.pos,
            format!("{} trailing bytes after last parameter", buf.len() - r.pos),
        ));
    }
    Ok((model, stats))
}

pub fn save_checkpoint(path: impl AsRef<Path>, model: &Model, stats: &DatasetStats) -> Result<()> {
    fs::write(path, encode_checkpoint(model, stats))?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(Model, DatasetStats)> {
    let buf = fs::read(path)?;
    decode_checkpoint(&buf)
}
