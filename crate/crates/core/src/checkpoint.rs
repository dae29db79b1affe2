//! Binary model checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "IEAC"  u32 version
//! u64 config length, config text (UTF-8 key=value lines)
//! u32 tensor count
//! per tensor: u32 name length, name, u32 rank, u64 dims…, f64 data…
//! ```

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::data::Normalization;
use crate::error::{Error, Result};
use crate::model::{build_model, Model, ModelConfig};
use crate::tensor::Tensor;

pub const MAGIC: [u8; 4] = *b"IEAC";
pub const VERSION: u32 = 1;

fn config_text(model: &Model) -> String {
    let mut text = model.config().to_text();
    if let Some(n) = model.normalization {
        // {:?} prints the shortest string that round-trips exactly
        text.push_str(&format!("norm_mean={:?}\nnorm_std={:?}\n", n.mean, n.std));
    }
    text
}

pub fn write_checkpoint(model: &Model, mut w: impl Write) -> std::io::Result<()> {
    let cfg = config_text(model);
    let tensors = model.named_tensors();
    let mut buf = Vec::new();
    buf.extend_from_slice(&MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(cfg.len() as u64).to_le_bytes());
    buf.extend_from_slice(cfg.as_bytes());
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    w.write_all(&buf)
}

pub fn save_checkpoint(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_checkpoint(model, std::io::BufWriter::new(file)).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::CheckpointTruncated(what.to_string()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn len(&mut self, wide: bool, what: &str) -> Result<usize> {
        let v = if wide {
            self.u64(what)?
        } else {
            u64::from(self.u32(what)?)
        };
        usize::try_from(v).map_err(|_| Error::CheckpointMalformed(format!("{what} {v} is too large")))
    }
}

fn parse_header(text: &str) -> Result<(ModelConfig, Option<Normalization>)> {
    let mut model_lines = String::new();
    let (mut mean, mut std) = (None, None);
    for line in text.lines() {
        let parse = |v: &str| {
            v.parse::<f64>()
                .map_err(|_| Error::CheckpointMalformed(format!("bad normalization value {v:?}")))
        };
        if let Some(v) = line.strip_prefix("norm_mean=") {
            mean = Some(parse(v)?);
        } else if let Some(v) = line.strip_prefix("norm_std=") {
            std = Some(parse(v)?);
        } else {
            model_lines.push_str(line);
            model_lines.push('\n');
        }
    }
    let cfg = ModelConfig::from_text(&model_lines)
        .map_err(|e| Error::CheckpointMalformed(format!("embedded config: {e}")))?;
    let norm = match (mean, std) {
        (Some(mean), Some(std)) => Some(Normalization { mean, std }),
        (None, None) => None,
        _ => return Err(Error::CheckpointMalformed("incomplete normalization".into())),
    };
    Ok((cfg, norm))
}

/// Parses checkpoint bytes into the model they describe.
pub fn read_checkpoint_bytes(bytes: &[u8]) -> Result<Model> {
    let mut r = Reader { bytes, pos: 0 };
    let magic: [u8; 4] = r.take(4, "magic")?.try_into().unwrap();
    if magic != MAGIC {
        return Err(Error::CheckpointMagic { found: magic });
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::CheckpointVersion {
            found: version,
            expected: VERSION,
        });
    }
    let cfg_len = r.len(true, "config length")?;
    let cfg_text = std::str::from_utf8(r.take(cfg_len, "config")?)
        .map_err(|_| Error::CheckpointMalformed("config is not UTF-8".into()))?;
    let (cfg, norm) = parse_header(cfg_text)?;
    let mut model = build_model(&cfg)?;
    model.normalization = norm;

    let count = r.len(false, "tensor count")?;
    let mut slots = model.named_tensors_mut();
    if count != slots.len() {
        return Err(Error::CheckpointMalformed(format!(
            "expected {} tensors, found {count}",
            slots.len()
        )));
    }
    for (expected_name, slot) in slots.iter_mut() {
        let name_len = r.len(false, "tensor name length")?;
        let name = std::str::from_utf8(r.take(name_len, "tensor name")?)
            .map_err(|_| Error::CheckpointMalformed("tensor name is not UTF-8".into()))?;
        if name != expected_name {
            return Err(Error::CheckpointMalformed(format!(
                "expected tensor {expected_name:?}, found {name:?}"
            )));
        }
        let rank = r.len(false, "tensor rank")?;
        let dims = (0..rank)
            .map(|_| r.len(true, "tensor dims"))
            .collect::<Result<Vec<_>>>()?;
        if dims != slot.shape() {
            return Err(Error::ShapeMismatch {
                name: name.to_string(),
                expected: slot.shape().to_vec(),
                found: dims,
            });
        }
        let raw = r.take(8 * slot.len(), name)?;
        for (v, b) in slot.data_mut().iter_mut().zip(raw.chunks_exact(8)) {
            *v = f64::from_le_bytes(b.try_into().unwrap());
        }
    }
    drop(slots);
    if r.pos != bytes.len() {
        return Err(Error::CheckpointMalformed(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    Ok(model)
}

pub fn read_checkpoint(mut r: impl Read) -> Result<Model> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)
        .map_err(|e| Error::io("<checkpoint stream>", e))?;
    read_checkpoint_bytes(&bytes)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Model> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint_bytes(&bytes)
}

/// Loads a checkpoint and checks it against an expected architecture.
pub fn load_checkpoint_into(cfg: &ModelConfig, path: impl AsRef<Path>) -> Result<Model> {
    let model = load_checkpoint(path)?;
    let expected = build_model(cfg)?;
    for ((name, want), (_, got)) in expected.named_tensors().iter().zip(model.named_tensors()) {
        if want.shape() != got.shape() {
            return Err(Error::ShapeMismatch {
                name: name.clone(),
                expected: want.shape().to_vec(),
                found: got.shape().to_vec(),
            });
        }
    }
    let (a, b) = (expected.named_tensors().len(), model.named_tensors().len());
    if a != b {
        return Err(Error::CheckpointMalformed(format!("expected {a} tensors, found {b}")));
    }
    Ok(model)
}

/// Exact equality of every persistent tensor.
pub fn same_state(a: &Model, b: &Model) -> bool {
    let ta: Vec<(String, &Tensor)> = a.named_tensors();
    let tb: Vec<(String, &Tensor)> = b.named_tensors();
    a.config() == b.config() && ta == tb
}
