//! Versioned single-file container for model state.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic     b"EGCK"
//! version   u32
//! kind      u32 length + UTF-8
//! step      u64
//! config    u32 length + UTF-8 JSON
//! count     u32
//! count × { name: u32 length + UTF-8, ndim: u32, dims: ndim × u64, data: f32 × prod(dims) }
//! ```

use std::fs;
use std::path::Path;

use crate::error::{ensure, Error, Result};
use crate::params::NamedArray;

pub const MAGIC: &[u8; 4] = b"EGCK";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    /// Which model the arrays belong to, e.g. `"translator"`.
    pub kind: String,
    pub step: u64,
    /// Serialized configuration record.
    pub config: String,
    pub arrays: Vec<NamedArray>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let payload: usize = self.arrays.iter().map(|a| a.data.len() * 4 + a.name.len() + 28).sum();
        let mut out = Vec::with_capacity(payload + self.config.len() + 64);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        put_str(&mut out, &self.kind);
        out.extend_from_slice(&self.step.to_le_bytes());
        put_str(&mut out, &self.config);
        out.extend_from_slice(&(self.arrays.len() as u32).to_le_bytes());
        for a in &self.arrays {
            put_str(&mut out, &a.name);
            out.extend_from_slice(&2u32.to_le_bytes());
            out.extend_from_slice(&(a.rows as u64).to_le_bytes());
            out.extend_from_slice(&(a.cols as u64).to_le_bytes());
            for x in &a.data {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        ensure!(r.take(4)? == MAGIC, Checkpoint, "not a checkpoint (bad magic)");
        let version = r.u32()?;
        ensure!(
            version == FORMAT_VERSION,
            Checkpoint,
            "unsupported checkpoint version {version} (expected {FORMAT_VERSION})"
        );
        let kind = r.string()?;
        let step = r.u64()?;
        let config = r.string()?;
        let count = r.u32()? as usize;
        let mut arrays = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let name = r.string()?;
            let ndim = r.u32()? as usize;
            ensure!(
                (1..=2).contains(&ndim),
                Checkpoint,
                "array {name}: unsupported rank {ndim}"
            );
            let dims: Vec<usize> = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<_>>()?;
            let (rows, cols) = if ndim == 1 { (1, dims[0]) } else { (dims[0], dims[1]) };
            let n = rows
                .checked_mul(cols)
                .ok_or_else(|| Error::Checkpoint(format!("array {name}: size overflow")))?;
            let raw = r.take(n.checked_mul(4).ok_or_else(|| Error::Checkpoint("size overflow".into()))?)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            arrays.push(NamedArray {
                name,
                rows,
                cols,
                data,
            });
        }
        ensure!(r.pos == bytes.len(), Checkpoint, "trailing bytes after last array");
        Ok(Self {
            kind,
            step,
            config,
            arrays,
        })
    }

    /// Writes to a sibling temp file, then renames over `path`.
    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Checkpoint(msg) => Error::Checkpoint(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Splits off arrays whose names start with `prefix`.
    pub fn take_prefixed(&mut self, prefix: &str) -> Vec<NamedArray> {
        let (taken, kept) = std::mem::take(&mut self.arrays)
            .into_iter()
            .partition(|a| a.name.starts_with(prefix));
        self.arrays = kept;
        taken
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint("truncated checkpoint".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u64(&mut self) -> Result<u64> {
        let b = self.take(8)?;
        let mut a = [0u8; 8];
        a.copy_from_slice(b);
        Ok(u64::from_le_bytes(a))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        let b = self.take(n)?;
        String::from_utf8(b.to_vec()).map_err(|_| Error::Checkpoint("invalid UTF-8 string".into()))
    }
}
