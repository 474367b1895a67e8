//! PCDS: the on-disk dataset container.
//!
//! Little-endian binary layout: magic `"PCDS"`, version `u32` = 1,
//! `num_classes: u32`, per class a `u16` byte length plus UTF-8 name,
//! `num_items: u32`, `points_per_cloud: u32`, then per item a `label: u32`
//! followed by `N×3` `f32` coordinates. Computation is 64-bit but storage is
//! 32-bit, so a write→read round trip is lossless at `f32` precision.

use super::{LabeledDataset, PointCloud};
use crate::{Error, Result};
use ndarray::Array2;
use std::path::{Path, PathBuf};

const MAGIC: &[u8; 4] = b"PCDS";
const VERSION: u32 = 1;

/// Serializes a dataset to PCDS bytes.
pub fn encode(ds: &LabeledDataset) -> Result<Vec<u8>> {
    let n = ds.points_per_cloud();
    let mut out = Vec::with_capacity(32 + ds.len() * (4 + n * 12));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&u32::try_from(ds.num_classes()).unwrap().to_le_bytes());
    for name in ds.class_names() {
        let bytes = name.as_bytes();
        let len = u16::try_from(bytes.len())
            .map_err(|_| Error::Invalid(format!("class name {name:?} exceeds 65535 bytes")))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(bytes);
    }
    out.extend_from_slice(&u32::try_from(ds.len()).unwrap().to_le_bytes());
    out.extend_from_slice(&u32::try_from(n).unwrap().to_le_bytes());
    for (cloud, label) in ds.items() {
        out.extend_from_slice(&u32::try_from(*label).unwrap().to_le_bytes());
        for &v in cloud.points().iter() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

/// Byte cursor with format-error reporting against a path label.
struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, k: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + k > self.buf.len() {
            return Err(Error::parse(
                self.path,
                0,
                format!(
                    "truncated file while reading {what}: expected at least {} bytes, found {}",
                    self.pos + k,
                    self.buf.len()
                ),
            ));
        }
        let s = &self.buf[self.pos..self.pos + k];
        self.pos += k;
        Ok(s)
    }

    fn u16_le(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32_le(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

/// Deserializes PCDS bytes; `path` labels any error messages.
pub fn decode(bytes: &[u8], path: impl Into<PathBuf>) -> Result<LabeledDataset> {
    let path = path.into();
    let mut cur = Cursor { buf: bytes, pos: 0, path: &path };

    let magic = cur.take(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::parse(&path, 0, format!("bad magic {magic:?}, expected \"PCDS\"")));
    }
    let version = cur.u32_le("version")?;
    if version != VERSION {
        return Err(Error::parse(&path, 0, format!("unsupported version {version}, expected {VERSION}")));
    }
    let num_classes = cur.u32_le("class count")? as usize;
    let mut class_names = Vec::with_capacity(num_classes.min(1 << 16));
    for i in 0..num_classes {
        let len = cur.u16_le("class-name length")? as usize;
        let raw = cur.take(len, "class name")?;
        let name = std::str::from_utf8(raw)
            .map_err(|_| Error::parse(&path, 0, format!("class name {i} is not valid UTF-8")))?;
        class_names.push(name.to_string());
    }
    let num_items = cur.u32_le("item count")? as usize;
    let n = cur.u32_le("points per cloud")? as usize;

    // Validate the payload length up front so truncation reports the full
    // expected size rather than failing mid-item.
    let expected = cur.pos + num_items * (4 + n * 12);
    if bytes.len() != expected {
        return Err(Error::parse(
            &path,
            0,
            format!("payload size mismatch: expected {expected} bytes, found {}", bytes.len()),
        ));
    }

    let mut items = Vec::with_capacity(num_items);
    for item in 0..num_items {
        let label = cur.u32_le("item label")? as usize;
        let mut points = Array2::zeros((n, 3));
        let raw = cur.take(n * 12, "item coordinates")?;
        for (k, chunk) in raw.chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes(chunk.try_into().unwrap()) as f64;
            points[[k / 3, k % 3]] = v;
        }
        let cloud = PointCloud::new(points)
            .map_err(|e| Error::parse(&path, 0, format!("item {item}: {e}")))?;
        items.push((cloud, label));
    }
    LabeledDataset::new(items, class_names).map_err(|e| Error::parse(&path, 0, e.to_string()))
}

/// Writes a dataset to `path` in PCDS format.
pub fn write_dataset(ds: &LabeledDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(ds)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Reads a PCDS dataset from `path`.
pub fn read_dataset(path: impl AsRef<Path>) -> Result<LabeledDataset> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}
