//! Checkpoint container.
//!
//! ```text
//! magic "LOSC" | version u16
//! config length u32 | config text (TrainConfig and arch.* key=value lines)
//! tensor count u32
//! per tensor: name length u16 | name | rows u32 | cols u32 | f32[rows*cols]
//! ```
//!
//! All integers and floats are little-endian; payloads round-trip bit-exactly.

use std::fs;
use std::path::Path;

use super::config::{Arch, TrainConfig};
use super::params::ModelParams;
use crate::error::{Error, FormatError, Result};

pub const CKPT_MAGIC: [u8; 4] = *b"LOSC";
pub const CKPT_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub params: ModelParams<f32>,
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(&CKPT_MAGIC);
    buf.extend_from_slice(&CKPT_VERSION.to_le_bytes());
    let text = format!("{}{}", ckpt.config.to_kv_text(), ckpt.params.arch.to_kv_text());
    buf.extend_from_slice(&(text.len() as u32).to_le_bytes());
    buf.extend_from_slice(text.as_bytes());
    let tensors = ckpt.params.tensors();
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, m) in tensors {
        buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(m.rows as u32).to_le_bytes());
        buf.extend_from_slice(&(m.cols as u32).to_le_bytes());
        for x in &m.data {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    buf
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, len: usize) -> Result<&'a [u8], FormatError> {
        let remaining = self.buf.len() - self.pos;
        if len > remaining {
            return Err(FormatError::Truncated { offset: self.pos, needed: len - remaining });
        }
        let out = &self.buf[self.pos..self.pos + len];
        self.pos += len;
        Ok(out)
    }

    fn u16(&mut self) -> Result<u16, FormatError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<usize, FormatError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }
}

fn parse_arch(text: &str, cfg: &TrainConfig) -> Result<Arch> {
    let mut arch = Arch {
        kind: cfg.model_kind,
        rank_mode: cfg.rank_mode,
        k: 0,
        proj_dim: 0,
        rank_dim: 0,
        model_dim: 0,
        heads: cfg.heads,
        layers: cfg.num_layers,
        ff_dim: 0,
        n_max: cfg.n_max,
        rank_cap: cfg.rank_cap,
    };
    fn num(key: &str, v: &str) -> Result<usize> {
        v.parse().map_err(|_| Error::Config(format!("bad value {v:?} for {key}")))
    }
    for line in text.lines() {
        let Some((key, v)) = line.split_once('=') else { continue };
        match key {
            "arch.kind" => arch.kind = v.parse()?,
            "arch.rank_mode" => arch.rank_mode = v.parse()?,
            "arch.k" => arch.k = num(key, v)?,
            "arch.proj_dim" => arch.proj_dim = num(key, v)?,
            "arch.rank_dim" => arch.rank_dim = num(key, v)?,
            "arch.model_dim" => arch.model_dim = num(key, v)?,
            "arch.heads" => arch.heads = num(key, v)?,
            "arch.layers" => arch.layers = num(key, v)?,
            "arch.ff_dim" => arch.ff_dim = num(key, v)?,
            "arch.n_max" => arch.n_max = num(key, v)?,
            "arch.rank_cap" => arch.rank_cap = num(key, v)?,
            _ => {}
        }
    }
    if arch.model_dim != arch.proj_dim + arch.rank_dim {
        return Err(FormatError::InvalidValue("checkpoint widths are inconsistent".into()).into());
    }
    Ok(arch)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let magic: [u8; 4] = r.take(4)?.try_into().unwrap();
    if magic != CKPT_MAGIC {
        return Err(FormatError::BadMagic { expected: CKPT_MAGIC, found: magic }.into());
    }
    let version = r.u16()?;
    if version != CKPT_VERSION {
        return Err(FormatError::VersionMismatch { found: version, supported: CKPT_VERSION }.into());
    }
    let len = r.u32()?;
    let text = std::str::from_utf8(r.take(len)?).map_err(|e| FormatError::InvalidMeta(format!("config text: {e}")))?;
    let cfg_text: String = text.lines().filter(|l| !l.starts_with("arch.")).map(|l| format!("{l}\n")).collect();
    let config = TrainConfig::from_kv_text(&cfg_text)?;
    let arch = parse_arch(text, &config)?;
    let mut params = ModelParams::<f32>::zeros(arch);
    let count = r.u32()?;
    let expected = params.tensors().len();
    if count != expected {
        return Err(
            FormatError::LengthMismatch(format!("{count} tensors stored, architecture needs {expected}")).into()
        );
    }
    let mut slots: Vec<_> = params.named_mut().into_iter().filter(|(_, m)| !m.is_empty()).collect();
    for (want, slot) in &mut slots {
        let name_len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|e| FormatError::InvalidMeta(format!("tensor name: {e}")))?;
        if name != want {
            return Err(FormatError::InvalidMeta(format!("expected tensor {want}, found {name}")).into());
        }
        let (rows, cols) = (r.u32()?, r.u32()?);
        if (rows, cols) != (slot.rows, slot.cols) {
            return Err(FormatError::LengthMismatch(format!(
                "tensor {name} is {rows}x{cols}, expected {}x{}",
                slot.rows, slot.cols
            ))
            .into());
        }
        let raw = r.take(rows * cols * 4)?;
        for (dst, w) in slot.data.iter_mut().zip(raw.chunks_exact(4)) {
            *dst = f32::from_le_bytes(w.try_into().unwrap());
        }
    }
    drop(slots);
    if r.pos != bytes.len() {
        return Err(FormatError::LengthMismatch(format!("{} trailing bytes", bytes.len() - r.pos)).into());
    }
    if !params.all_finite() {
        return Err(Error::NonFinite { component: "checkpoint weights" });
    }
    Ok(Checkpoint { config, params })
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_checkpoint(ckpt))?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    decode_checkpoint(&fs::read(path)?)
}
