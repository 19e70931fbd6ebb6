//! Snapshot file layout, all integers little-endian:
//!
//! ```text
//! "RLLSNAP1"
//! u32 array count
//! per array: u16 name length, name (UTF-8), u8 rank, u32 dims[rank],
//!            f64 values[product(dims)]
//! u32 metadata length, metadata (UTF-8 JSON)
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::{NetworkSpec, ParamArray, SnapshotMeta, WeightSnapshot};

pub const SNAPSHOT_MAGIC: &[u8; 8] = b"RLLSNAP1";

pub fn write_snapshot(w: &WeightSnapshot, out: &mut impl Write) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(SNAPSHOT_MAGIC);
    let count = u32::try_from(w.arrays.len()).map_err(|_| Error::Precondition("too many arrays".into()))?;
    buf.extend_from_slice(&count.to_le_bytes());
    for a in &w.arrays {
        let name = a.name.as_bytes();
        let len = u16::try_from(name.len())
            .map_err(|_| Error::Precondition(format!("array name `{}` too long", a.name)))?;
        buf.extend_from_slice(&len.to_le_bytes());
        buf.extend_from_slice(name);
        let rank = u8::try_from(a.shape.len())
            .map_err(|_| Error::Precondition(format!("array `{}` has rank > 255", a.name)))?;
        buf.push(rank);
        for &d in &a.shape {
            let d = u32::try_from(d)
                .map_err(|_| Error::Precondition(format!("array `{}` dimension too large", a.name)))?;
            buf.extend_from_slice(&d.to_le_bytes());
        }
        for v in &a.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let meta = serde_json::to_vec(&w.meta)?;
    buf.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    buf.extend_from_slice(&meta);
    out.write_all(&buf).map_err(|e| Error::io("<snapshot stream>", e))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Parse {
                path: self.path.to_path_buf(),
                offset: self.pos as u64,
                detail: format!("truncated {what}: need {n} bytes, {} left", self.bytes.len() - self.pos),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn fail(&self, offset: usize, detail: String) -> Error {
        Error::Parse {
            path: self.path.to_path_buf(),
            offset: offset as u64,
            detail,
        }
    }
}

/// Parses a snapshot from bytes; `path` only labels errors.
pub fn read_snapshot(bytes: &[u8], path: &Path) -> Result<WeightSnapshot> {
    if bytes.len() < 8 || &bytes[..8] != SNAPSHOT_MAGIC {
        return Err(Error::BadMagic(path.to_path_buf()));
    }
    let mut c = Cursor { bytes, pos: 8, path };
    let count = c.u32("array count")?;
    let mut arrays = Vec::new();
    for _ in 0..count {
        let at = c.pos;
        let len = c.u16("name length")? as usize;
        let name = std::str::from_utf8(c.take(len, "array name")?)
            .map_err(|_| c.fail(at, "array name is not UTF-8".into()))?
            .to_string();
        let rank = c.u8("rank")?;
        let shape = (0..rank)
            .map(|_| c.u32("dimension").map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(|| c.fail(at, format!("array `{name}` size overflows")))?;
        let data = c
            .take(n, "array values")?
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect();
        arrays.push(ParamArray { name, shape, data });
    }
    let at = c.pos;
    let len = c.u32("metadata length")? as usize;
    let meta: SnapshotMeta = serde_json::from_slice(c.take(len, "metadata")?)
        .map_err(|e| c.fail(at + 4, format!("bad metadata JSON: {e}")))?;
    if c.pos != bytes.len() {
        return Err(c.fail(c.pos, format!("{} trailing bytes", bytes.len() - c.pos)));
    }
    Ok(WeightSnapshot { arrays, meta })
}

pub fn save_snapshot(w: &WeightSnapshot, path: &Path) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(f);
    write_snapshot(w, &mut out)?;
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn load_snapshot(path: &Path) -> Result<WeightSnapshot> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?)
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(path, e))?;
    read_snapshot(&bytes, path)
}

/// Loads a snapshot and checks it against `spec`.
pub fn load_snapshot_for(path: &Path, spec: &NetworkSpec) -> Result<WeightSnapshot> {
    let w = load_snapshot(path)?;
    w.check_against(spec)?;
    Ok(w)
}
