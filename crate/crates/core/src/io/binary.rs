//! Little-endian binary containers for feature maps and descriptor sets.
//!
//! ```text
//! FMAP: "FMAP" | version u16 | h u32 | w u32 | k u32 | h*w*k f32
//! DESC: "DESC" | count u32 | dim u32 | count*dim f32
//! ```
//!
//! Floats are stored as `f32`; wider scalars are narrowed on write.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::retrieval::DescriptorDb;
use crate::scalar::Real;
use crate::tensor::FeatureMap;

pub const FMAP_MAGIC: &[u8; 4] = b"FMAP";
pub const DESC_MAGIC: &[u8; 4] = b"DESC";
pub const FMAP_VERSION: u16 = 1;

const FMAP_HEADER: usize = 4 + 2 + 3 * 4;
const DESC_HEADER: usize = 4 + 2 * 4;

fn format_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Format { offset: offset as u64, message: message.into() }
}

fn to_u32(n: usize, what: &str) -> Result<u32> {
    u32::try_from(n).map_err(|_| crate::error::invalid(format!("{what} = {n} does not fit in 32 bits")))
}

/// Sequential little-endian reader that reports byte offsets.
struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            format_err(self.buf.len(), format!("truncated: {what} needs {n} bytes at offset {}", self.pos))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn magic(&mut self, expected: &[u8; 4]) -> Result<()> {
        let got = self.take(4, "magic")?;
        if got != expected {
            return Err(format_err(0, format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(got),
                String::from_utf8_lossy(expected)
            )));
        }
        Ok(())
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn f32s(&mut self, count: usize) -> Result<Vec<f32>> {
        let start = self.pos;
        let bytes = count
            .checked_mul(4)
            .ok_or_else(|| format_err(start, "payload size overflows"))?;
        let raw = self.take(bytes, "payload")?;
        raw.chunks_exact(4)
            .enumerate()
            .map(|(i, c)| {
                let v = f32::from_le_bytes(c.try_into().expect("4 bytes"));
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(format_err(start + 4 * i, format!("non-finite value {v}")))
                }
            })
            .collect()
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(format_err(self.pos, format!("{} trailing bytes", self.buf.len() - self.pos)));
        }
        Ok(())
    }
}

pub fn encode_fmap<T: Real>(x: &FeatureMap<T>) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(FMAP_HEADER + 4 * x.data().len());
    out.extend_from_slice(FMAP_MAGIC);
    out.extend_from_slice(&FMAP_VERSION.to_le_bytes());
    for (n, what) in [(x.h(), "h"), (x.w(), "w"), (x.k(), "k")] {
        out.extend_from_slice(&to_u32(n, what)?.to_le_bytes());
    }
    for v in x.data() {
        out.extend_from_slice(&v.to_f32().expect("finite").to_le_bytes());
    }
    Ok(out)
}

pub fn decode_fmap(bytes: &[u8]) -> Result<FeatureMap<f32>> {
    let mut c = Cursor { buf: bytes, pos: 0 };
    c.magic(FMAP_MAGIC)?;
    let version = c.u16("version")?;
    if version != FMAP_VERSION {
        return Err(format_err(4, format!("unsupported FMAP version {version}")));
    }
    let h = c.u32("h")? as usize;
    let w = c.u32("w")? as usize;
    let k = c.u32("k")? as usize;
    let n = h
        .checked_mul(w)
        .and_then(|v| v.checked_mul(k))
        .ok_or_else(|| format_err(6, "dimensions overflow"))?;
    let data = c.f32s(n)?;
    c.finish()?;
    FeatureMap::new(h, w, k, data)
}

/// Encodes `count = data.len() / dim` rows.
pub fn encode_desc<T: Real>(dim: usize, data: &[T]) -> Result<Vec<u8>> {
    if dim == 0 && !data.is_empty() || dim != 0 && !data.len().is_multiple_of(dim) {
        return Err(crate::error::invalid(format!("{} values do not form rows of width {dim}", data.len())));
    }
    let count = if dim == 0 { 0 } else { data.len() / dim };
    let mut out = Vec::with_capacity(DESC_HEADER + 4 * data.len());
    out.extend_from_slice(DESC_MAGIC);
    out.extend_from_slice(&to_u32(count, "count")?.to_le_bytes());
    out.extend_from_slice(&to_u32(dim, "dim")?.to_le_bytes());
    for v in data {
        out.extend_from_slice(&v.to_f32().expect("finite").to_le_bytes());
    }
    Ok(out)
}

/// Returns `(count, dim, row-major data)`.
pub fn decode_desc(bytes: &[u8]) -> Result<(usize, usize, Vec<f32>)> {
    let mut c = Cursor { buf: bytes, pos: 0 };
    c.magic(DESC_MAGIC)?;
    let count = c.u32("count")? as usize;
    let dim = c.u32("dim")? as usize;
    let n = count.checked_mul(dim).ok_or_else(|| format_err(4, "dimensions overflow"))?;
    let data = c.f32s(n)?;
    c.finish()?;
    Ok((count, dim, data))
}

pub fn write_fmap<T: Real>(path: impl AsRef<Path>, x: &FeatureMap<T>) -> Result<()> {
    fs::write(path, encode_fmap(x)?)?;
    Ok(())
}

pub fn read_fmap(path: impl AsRef<Path>) -> Result<FeatureMap<f32>> {
    decode_fmap(&fs::read(path)?)
}

/// Sidecar holding one sample id per line, in row order.
pub fn ids_path(desc: &Path) -> PathBuf {
    let mut s = desc.as_os_str().to_owned();
    s.push(".ids");
    PathBuf::from(s)
}

/// Writes the DESC file and its `.ids` sidecar.
pub fn write_desc_db<T: Real>(path: impl AsRef<Path>, db: &DescriptorDb<T>) -> Result<()> {
    let path = path.as_ref();
    let data: Vec<T> = (0..db.len()).flat_map(|i| db.row(i).iter().copied()).collect();
    fs::write(path, encode_desc(db.dim(), &data)?)?;
    let mut ids = db.ids().join("\n");
    if !ids.is_empty() {
        ids.push('\n');
    }
    fs::write(ids_path(path), ids)?;
    Ok(())
}

pub fn read_desc_db(path: impl AsRef<Path>) -> Result<DescriptorDb<f32>> {
    let path = path.as_ref();
    let (count, dim, data) = decode_desc(&fs::read(path)?)?;
    let sidecar = ids_path(path);
    let text = fs::read_to_string(&sidecar).map_err(|e| {
        Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", sidecar.display())))
    })?;
    let ids: Vec<String> = text.lines().map(str::to_owned).collect();
    if ids.len() != count {
        return Err(Error::Parse {
            line: ids.len() as u64,
            message: format!("{} lists {} ids for {count} descriptors", sidecar.display(), ids.len()),
        });
    }
    DescriptorDb::new(ids, dim, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> FeatureMap<f32> {
        FeatureMap::from_fn(2, 3, 2, |i, j, c| (i * 6 + j * 2 + c) as f32 * 0.5 - 1.0).unwrap()
    }

    #[test]
    fn fmap_header_layout() {
        let b = encode_fmap(&sample()).unwrap();
        assert_eq!(&b[..4], b"FMAP");
        assert_eq!(&b[4..6], &[1, 0]);
        assert_eq!(&b[6..10], &[2, 0, 0, 0]);
        assert_eq!(&b[14..18], &[2, 0, 0, 0]);
        assert_eq!(b.len(), 18 + 12 * 4);
        assert_eq!(&b[18..22], &(-1.0f32).to_le_bytes());
        assert_eq!(decode_fmap(&b).unwrap(), sample());
    }

    #[test]
    fn corrupt_fmap_reports_offsets() {
        let mut b = encode_fmap(&sample()).unwrap();
        let err = decode_fmap(&b[..30]).unwrap_err();
        assert!(matches!(err, Error::Format { offset: 30, .. }), "{err}");
        b[0] = b'X';
        assert!(matches!(decode_fmap(&b), Err(Error::Format { offset: 0, .. })));
        b[0] = b'F';
        b[4] = 2;
        assert!(matches!(decode_fmap(&b), Err(Error::Format { offset: 4, .. })));
        b[4] = 1;
        b.push(0);
        assert!(matches!(decode_fmap(&b), Err(Error::Format { offset: 66, .. })));
        b.pop();
        b[22..26].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(decode_fmap(&b), Err(Error::Format { offset: 22, .. })));
        assert!(matches!(decode_fmap(b"FM"), Err(Error::Format { offset: 2, .. })));
    }

    #[test]
    fn desc_round_trip_with_ids() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("db.desc");
        let db = DescriptorDb::new(vec!["a".into(), "b".into()], 3, vec![1.0f32, 2.0, 3.0, -4.0, 0.5, 6.0]).unwrap();
        write_desc_db(&path, &db).unwrap();
        assert_eq!(read_desc_db(&path).unwrap(), db);
        let raw = fs::read(&path).unwrap();
        assert_eq!(&raw[..12], b"DESC\x02\0\0\0\x03\0\0\0");
        fs::write(ids_path(&path), "a\n").unwrap();
        assert!(matches!(read_desc_db(&path), Err(Error::Parse { .. })));
    }

    #[test]
    fn empty_desc() {
        let b = encode_desc::<f32>(4, &[]).unwrap();
        assert_eq!(decode_desc(&b).unwrap(), (0, 4, vec![]));
        assert!(encode_desc(3, &[1.0f32; 4]).is_err());
    }
}
