//! Binary weight container.
//!
//! Layout (all integers little-endian `u32`):
//!
//! ```text
//! "PCTW" | version | entry count
//! per entry: name length | UTF-8 name | rank | dims... | f32 LE values
//! ```

use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"PCTW";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct WeightEntry {
    pub name: String,
    pub dims: Vec<usize>,
    pub values: Vec<f32>,
}

pub fn encode(entries: &[WeightEntry]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    push_u32(&mut out, entries.len(), "entry count")?;
    for e in entries {
        let expected: usize = e.dims.iter().product();
        if expected != e.values.len() {
            return Err(Error::Format(format!(
                "entry '{}' has dims {:?} but {} values",
                e.name,
                e.dims,
                e.values.len()
            )));
        }
        push_u32(&mut out, e.name.len(), "name length")?;
        out.extend_from_slice(e.name.as_bytes());
        push_u32(&mut out, e.dims.len(), "rank")?;
        for &d in &e.dims {
            push_u32(&mut out, d, "dimension")?;
        }
        for v in &e.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

fn push_u32(out: &mut Vec<u8>, v: usize, what: &str) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Format(format!("{what} {v} exceeds u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(Error::Format(format!(
                "truncated file: needed {n} bytes for {what} at offset {}, {} available",
                self.pos,
                self.bytes.len() - self.pos
            )));
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }
}

pub fn decode(bytes: &[u8]) -> Result<Vec<WeightEntry>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::Format("bad magic: not a PCTW weight file".into()));
    }
    let version = r.u32("version")?;
    if version != VERSION as usize {
        return Err(Error::Format(format!(
            "unsupported weight file version {version} (expected {VERSION})"
        )));
    }
    let count = r.u32("entry count")?;
    let mut entries = Vec::with_capacity(count.min(4096));
    for i in 0..count {
        let name_len = r.u32("name length")?;
        let name = std::str::from_utf8(r.take(name_len, "name")?)
            .map_err(|_| Error::Format(format!("entry {i} name is not UTF-8")))?
            .to_owned();
        let rank = r.u32("rank")?;
        let mut dims = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            dims.push(r.u32("dimension")?);
        }
        let len = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Format(format!("entry '{name}' dims overflow")))?;
        let raw = r.take(len.saturating_mul(4), &format!("values of '{name}'"))?;
        let values = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        entries.push(WeightEntry { name, dims, values });
    }
    if r.pos != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after last entry",
            bytes.len() - r.pos
        )));
    }
    Ok(entries)
}

pub fn write_file(path: &Path, entries: &[WeightEntry]) -> Result<()> {
    let bytes = encode(entries)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_file(path: &Path) -> Result<Vec<WeightEntry>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
