//! The LOS record file.
//!
//! Little-endian throughout:
//!
//! ```text
//! header   magic "LOS1" | version u16 | record count u32            (10 bytes)
//! record   N u32 | K u32 | flags u8 | label u8
//!          topk f32[N*K] (row-major) | atp f32[N]
//!          ranks u32[N]              if flags & 0b100
//!          mu f32[N] | sigma f32[N]  if flags & 0b010
//!          meta length u32 | meta bytes (UTF-8 "key=value\n" lines)
//! ```
//!
//! `flags & 0b001` marks the label byte as meaningful. The group id travels
//! as the `group_id` meta line.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, FormatError, Result};
use crate::signature::LosRecord;

pub const MAGIC: [u8; 4] = *b"LOS1";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 10;

const FLAG_LABEL: u8 = 0b001;
const FLAG_STATS: u8 = 0b010;
const FLAG_RANKS: u8 = 0b100;

const GROUP_KEY: &str = "group_id";

pub fn write_records(records: &[LosRecord], path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_records(records)?)?;
    Ok(())
}

pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<LosRecord>> {
    decode_records(&fs::read(path)?)
}

fn meta_bytes(rec: &LosRecord) -> Result<Vec<u8>> {
    let mut lines: BTreeMap<&str, &str> = BTreeMap::new();
    for (k, v) in &rec.meta {
        if k == GROUP_KEY {
            return Err(FormatError::InvalidMeta(format!("{GROUP_KEY:?} is reserved")).into());
        }
        lines.insert(k, v);
    }
    if let Some(g) = &rec.group_id {
        lines.insert(GROUP_KEY, g);
    }
    let mut out = String::new();
    for (k, v) in lines {
        if k.is_empty() || k.contains(['=', '\n', '\r']) || v.contains(['\n', '\r']) {
            return Err(FormatError::InvalidMeta(format!("cannot encode meta entry {k:?}={v:?}")).into());
        }
        out.push_str(k);
        out.push('=');
        out.push_str(v);
        out.push('\n');
    }
    Ok(out.into_bytes())
}

fn put_u32(buf: &mut Vec<u8>, v: usize, what: &str) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::domain(format!("{what} {v} exceeds u32")))?;
    buf.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_f32s(buf: &mut Vec<u8>, v: &[f32]) {
    for x in v {
        buf.extend_from_slice(&x.to_le_bytes());
    }
}

pub fn encode_records(records: &[LosRecord]) -> Result<Vec<u8>> {
    let mut buf = Vec::with_capacity(HEADER_LEN);
    buf.extend_from_slice(&MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    put_u32(&mut buf, records.len(), "record count")?;
    for (i, rec) in records.iter().enumerate() {
        let n = rec.seq_len();
        if rec.topk.len() != n * rec.k {
            return Err(Error::Shape(format!("record {i}: topk is not {n}x{}", rec.k)));
        }
        if rec.mu.is_some() != rec.sigma.is_some() {
            return Err(Error::domain(format!("record {i}: mu and sigma must be stored together")));
        }
        for (name, len) in [
            ("ranks", rec.ranks.as_ref().map(Vec::len)),
            ("mu", rec.mu.as_ref().map(Vec::len)),
            ("sigma", rec.sigma.as_ref().map(Vec::len)),
        ] {
            if len.is_some_and(|l| l != n) {
                return Err(Error::Shape(format!("record {i}: {name} length differs from {n}")));
            }
        }
        put_u32(&mut buf, n, "sequence length")?;
        put_u32(&mut buf, rec.k, "top-K width")?;
        let mut flags = 0u8;
        if rec.label.is_some() {
            flags |= FLAG_LABEL;
        }
        if rec.has_token_stats() {
            flags |= FLAG_STATS;
        }
        if rec.ranks.is_some() {
            flags |= FLAG_RANKS;
        }
        buf.push(flags);
        buf.push(u8::from(rec.label.unwrap_or(false)));
        put_f32s(&mut buf, &rec.topk);
        put_f32s(&mut buf, &rec.atp);
        if let Some(r) = &rec.ranks {
            for x in r {
                buf.extend_from_slice(&x.to_le_bytes());
            }
        }
        if let (Some(mu), Some(sigma)) = (&rec.mu, &rec.sigma) {
            put_f32s(&mut buf, mu);
            put_f32s(&mut buf, sigma);
        }
        let meta = meta_bytes(rec)?;
        put_u32(&mut buf, meta.len(), "meta length")?;
        buf.extend_from_slice(&meta);
    }
    Ok(buf)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, len: usize) -> Result<&'a [u8], FormatError> {
        let remaining = self.buf.len() - self.pos;
        if len > remaining {
            return Err(FormatError::Truncated { offset: self.pos, needed: len - remaining });
        }
        let out = &self.buf[self.pos..self.pos + len];
        self.pos += len;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8, FormatError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, FormatError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn words(&mut self, count: usize) -> Result<impl Iterator<Item = [u8; 4]> + 'a, FormatError> {
        let bytes =
            count.checked_mul(4).ok_or_else(|| FormatError::LengthMismatch(format!("{count} words overflow")))?;
        Ok(self.take(bytes)?.chunks_exact(4).map(|c| c.try_into().unwrap()))
    }

    fn f32s(&mut self, count: usize) -> Result<Vec<f32>, FormatError> {
        Ok(self.words(count)?.map(f32::from_le_bytes).collect())
    }

    fn u32s(&mut self, count: usize) -> Result<Vec<u32>, FormatError> {
        Ok(self.words(count)?.map(u32::from_le_bytes).collect())
    }
}

pub fn decode_records(bytes: &[u8]) -> Result<Vec<LosRecord>> {
    let mut cur = Cursor { buf: bytes, pos: 0 };
    let magic: [u8; 4] = cur.take(4)?.try_into().unwrap();
    if magic != MAGIC {
        return Err(FormatError::BadMagic { expected: MAGIC, found: magic }.into());
    }
    let version = cur.u16()?;
    if version != VERSION {
        return Err(FormatError::VersionMismatch { found: version, supported: VERSION }.into());
    }
    let count = cur.u32()? as usize;
    // Every record needs at least 14 bytes; reject absurd counts before allocating.
    if count > (bytes.len() - HEADER_LEN) / 14 {
        return Err(FormatError::LengthMismatch(format!(
            "header declares {count} records but only {} payload bytes follow",
            bytes.len() - HEADER_LEN
        ))
        .into());
    }
    let mut records = Vec::with_capacity(count);
    for i in 0..count {
        let n = cur.u32()? as usize;
        let k = cur.u32()? as usize;
        let flags = cur.u8()?;
        if flags & !(FLAG_LABEL | FLAG_STATS | FLAG_RANKS) != 0 {
            return Err(FormatError::InvalidValue(format!("record {i}: unknown flag bits {flags:#010b}")).into());
        }
        let label_byte = cur.u8()?;
        if label_byte > 1 {
            return Err(FormatError::InvalidValue(format!("record {i}: label byte {label_byte}")).into());
        }
        let cells =
            n.checked_mul(k).ok_or_else(|| FormatError::LengthMismatch(format!("record {i}: {n}x{k} overflows")))?;
        let topk = cur.f32s(cells)?;
        let atp = cur.f32s(n)?;
        let ranks = if flags & FLAG_RANKS != 0 { Some(cur.u32s(n)?) } else { None };
        let (mu, sigma) = if flags & FLAG_STATS != 0 { (Some(cur.f32s(n)?), Some(cur.f32s(n)?)) } else { (None, None) };
        let meta_len = cur.u32()? as usize;
        let text = std::str::from_utf8(cur.take(meta_len)?)
            .map_err(|e| FormatError::InvalidMeta(format!("record {i}: {e}")))?;
        let mut meta = BTreeMap::new();
        for line in text.lines() {
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| FormatError::InvalidMeta(format!("record {i}: line {line:?} has no '='")))?;
            meta.insert(key.to_string(), value.to_string());
        }
        let group_id = meta.remove(GROUP_KEY);
        records.push(LosRecord {
            k,
            topk,
            atp,
            ranks,
            mu,
            sigma,
            label: (flags & FLAG_LABEL != 0).then_some(label_byte == 1),
            group_id,
            meta,
        });
    }
    if cur.pos != bytes.len() {
        return Err(FormatError::LengthMismatch(format!(
            "{} trailing bytes after {count} records",
            bytes.len() - cur.pos
        ))
        .into());
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> LosRecord {
        let mut meta = BTreeMap::new();
        meta.insert("llm".to_string(), "tiny".to_string());
        LosRecord {
            k: 3,
            topk: vec![0.5, 0.3, 0.1, 0.9, 0.05, 0.01],
            atp: vec![0.3, 0.9],
            ranks: Some(vec![1, 0]),
            mu: Some(vec![-0.9, -0.2]),
            sigma: Some(vec![0.4, 0.6]),
            label: Some(true),
            group_id: Some("book-7".into()),
            meta,
        }
    }

    #[test]
    fn empty_file_is_header_only() {
        let bytes = encode_records(&[]).unwrap();
        assert_eq!(bytes.len(), HEADER_LEN);
        assert!(decode_records(&bytes).unwrap().is_empty());
    }

    #[test]
    fn single_record_round_trip() {
        let rec = sample();
        let bytes = encode_records(std::slice::from_ref(&rec)).unwrap();
        assert_eq!(decode_records(&bytes).unwrap(), vec![rec]);
    }

    #[test]
    fn header_errors_are_distinct() {
        let bytes = encode_records(&[sample()]).unwrap();

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_records(&bad), Err(Error::Format(FormatError::BadMagic { .. }))));

        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(decode_records(&bad), Err(Error::Format(FormatError::VersionMismatch { found: 9, .. }))));

        assert!(matches!(decode_records(&bytes[..bytes.len() - 3]), Err(Error::Format(FormatError::Truncated { .. }))));

        let mut bad = bytes.clone();
        bad.push(0);
        assert!(matches!(decode_records(&bad), Err(Error::Format(FormatError::LengthMismatch(_)))));

        let mut bad = bytes;
        bad[6] = 200;
        assert!(matches!(decode_records(&bad), Err(Error::Format(FormatError::LengthMismatch(_)))));
    }

    #[test]
    fn reserved_meta_key_rejected() {
        let mut rec = sample();
        rec.meta.insert("group_id".into(), "x".into());
        assert!(encode_records(&[rec]).is_err());
        let mut rec = sample();
        rec.meta.insert("bad\nkey".into(), "x".into());
        assert!(encode_records(&[rec]).is_err());
    }
}
