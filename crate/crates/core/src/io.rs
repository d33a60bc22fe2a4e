//! File formats: DTF tensors, label/boundary maps and checkpoint directories.
//!
//! DTF layout: `b"DTF1"`, `u32` rank, `rank` x `u32` extents, then the
//! row-major `f64` payload, everything little-endian.
//!
//! Label and boundary maps: a 4-byte magic (`LBL1` / `BND1`), `u32` H,
//! `u32` W, then `H * W` bytes.
//!
//! A checkpoint is a directory holding one DTF file per parameter plus a
//! `manifest.txt` of `name = file` lines.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::supervision::{BoundaryMap, LabelMap};
use crate::tensor::Tensor;

pub const DTF_MAGIC: &[u8; 4] = b"DTF1";
pub const LABEL_MAGIC: &[u8; 4] = b"LBL1";
pub const BOUNDARY_MAGIC: &[u8; 4] = b"BND1";
pub const MANIFEST: &str = "manifest.txt";

/// Byte reader that reports truncation as a format error on `path`.
struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::format(
                self.path,
                format!("truncated: wanted {n} bytes at offset {}", self.pos),
            )),
        }
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn magic(&mut self, expected: &[u8; 4]) -> Result<()> {
        let got = self.take(4)?;
        if got != expected {
            return Err(Error::format(
                self.path,
                format!(
                    "bad magic {:?}, expected {:?}",
                    String::from_utf8_lossy(got),
                    String::from_utf8_lossy(expected)
                ),
            ));
        }
        Ok(())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::format(
                self.path,
                format!("{} trailing bytes", self.bytes.len() - self.pos),
            ));
        }
        Ok(())
    }
}

fn dim_u32(d: usize) -> u32 {
    u32::try_from(d).expect("tensor extent exceeds u32")
}

pub fn encode_tensor(t: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 4 * t.rank() + 8 * t.numel());
    out.extend_from_slice(DTF_MAGIC);
    out.extend_from_slice(&dim_u32(t.rank()).to_le_bytes());
    for &d in t.dims() {
        out.extend_from_slice(&dim_u32(d).to_le_bytes());
    }
    for &v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Decodes a DTF byte string; `path` is only used in error messages.
pub fn decode_tensor(bytes: &[u8], path: &Path) -> Result<Tensor> {
    let mut c = Cursor {
        bytes,
        pos: 0,
        path,
    };
    c.magic(DTF_MAGIC)?;
    let rank = c.u32()? as usize;
    let mut dims = Vec::with_capacity(rank.min(16));
    for _ in 0..rank {
        dims.push(c.u32()? as usize);
    }
    let numel = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::format(path, "element count overflows"))?;
    let payload = c.take(
        numel
            .checked_mul(8)
            .ok_or_else(|| Error::format(path, "payload too large"))?,
    )?;
    let data = payload
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
        .collect();
    c.finish()?;
    Tensor::new(&dims, data)
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    decode_tensor(&read_bytes(path)?, path)
}

pub fn write_tensor(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    write_bytes(path.as_ref(), &encode_tensor(t))
}

fn encode_map(magic: &[u8; 4], h: usize, w: usize, values: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + values.len());
    out.extend_from_slice(magic);
    out.extend_from_slice(&dim_u32(h).to_le_bytes());
    out.extend_from_slice(&dim_u32(w).to_le_bytes());
    out.extend_from_slice(values);
    out
}

fn decode_map(bytes: &[u8], magic: &[u8; 4], path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let mut c = Cursor {
        bytes,
        pos: 0,
        path,
    };
    c.magic(magic)?;
    let h = c.u32()? as usize;
    let w = c.u32()? as usize;
    let n = h
        .checked_mul(w)
        .ok_or_else(|| Error::format(path, "map extent overflows"))?;
    let values = c.take(n)?.to_vec();
    c.finish()?;
    Ok((h, w, values))
}

pub fn encode_label_map(m: &LabelMap) -> Vec<u8> {
    encode_map(LABEL_MAGIC, m.height(), m.width(), m.data())
}

pub fn read_label_map(path: impl AsRef<Path>) -> Result<LabelMap> {
    let path = path.as_ref();
    let (h, w, v) = decode_map(&read_bytes(path)?, LABEL_MAGIC, path)?;
    LabelMap::new(h, w, v)
}

pub fn write_label_map(path: impl AsRef<Path>, m: &LabelMap) -> Result<()> {
    write_bytes(path.as_ref(), &encode_label_map(m))
}

pub fn read_boundary_map(path: impl AsRef<Path>) -> Result<BoundaryMap> {
    let path = path.as_ref();
    let (h, w, v) = decode_map(&read_bytes(path)?, BOUNDARY_MAGIC, path)?;
    BoundaryMap::new(h, w, v).map_err(|e| Error::format(path, e.to_string()))
}

pub fn write_boundary_map(path: impl AsRef<Path>, m: &BoundaryMap) -> Result<()> {
    write_bytes(
        path.as_ref(),
        &encode_map(BOUNDARY_MAGIC, m.height(), m.width(), m.data()),
    )
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Writes every parameter to `{dir}/{name}.dtf` and the manifest. Extra
/// `key = value` text files can be stored next to it with [`write_text`].
pub fn save_checkpoint(dir: impl AsRef<Path>, params: &ParamStore) -> Result<()> {
    let dir = dir.as_ref();
    create_dir(dir)?;
    let mut manifest = String::new();
    for (name, value) in params.iter() {
        let file = format!("{name}.dtf");
        write_tensor(dir.join(&file), value)?;
        manifest.push_str(&format!("{name} = {file}\n"));
    }
    write_text(dir.join(MANIFEST), &manifest)
}

pub fn load_checkpoint(dir: impl AsRef<Path>) -> Result<ParamStore> {
    let dir = dir.as_ref();
    let manifest_path = dir.join(MANIFEST);
    let text = read_text(&manifest_path)?;
    let mut store = ParamStore::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (name, file) = line.split_once('=').ok_or_else(|| {
            Error::format(
                &manifest_path,
                format!("line {}: expected `name = file`", lineno + 1),
            )
        })?;
        let (name, file) = (name.trim(), file.trim());
        if name.is_empty() || file.is_empty() || file.contains("..") {
            return Err(Error::format(
                &manifest_path,
                format!("line {}: bad entry `{line}`", lineno + 1),
            ));
        }
        if store.contains(name) {
            return Err(Error::format(
                &manifest_path,
                format!("line {}: duplicate parameter `{name}`", lineno + 1),
            ));
        }
        store.insert(name, read_tensor(dir.join(file))?);
    }
    Ok(store)
}

pub fn read_text(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write_text(path: impl AsRef<Path>, text: &str) -> Result<()> {
    write_bytes(path.as_ref(), text.as_bytes())
}

/// Regular files in `dir` with the given extension, sorted by name.
pub fn list_files(dir: impl AsRef<Path>, extension: &str) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_file() && path.extension().is_some_and(|e| e == extension) {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dtf_layout_is_exact() {
        let t = Tensor::new(&[2, 1], vec![1.0, -2.5]).unwrap();
        let b = encode_tensor(&t);
        let mut expected = b"DTF1".to_vec();
        expected.extend_from_slice(&[2, 0, 0, 0, 2, 0, 0, 0, 1, 0, 0, 0]);
        expected.extend_from_slice(&1.0f64.to_le_bytes());
        expected.extend_from_slice(&(-2.5f64).to_le_bytes());
        assert_eq!(b, expected);
        assert_eq!(decode_tensor(&b, Path::new("x")).unwrap(), t);
    }

    #[test]
    fn dtf_scalar_and_empty() {
        for t in [Tensor::scalar(3.0), Tensor::zeros(&[0, 4])] {
            let back = decode_tensor(&encode_tensor(&t), Path::new("x")).unwrap();
            assert_eq!(back, t);
        }
    }

    #[test]
    fn dtf_rejects_corruption() {
        let t = Tensor::ones(&[3]);
        let mut b = encode_tensor(&t);
        b[0] = b'X';
        assert!(matches!(
            decode_tensor(&b, Path::new("x")),
            Err(Error::Format { .. })
        ));
        let b = encode_tensor(&t);
        assert!(matches!(
            decode_tensor(&b[..b.len() - 1], Path::new("x")),
            Err(Error::Format { .. })
        ));
        let mut b = encode_tensor(&t);
        b.push(0);
        assert!(matches!(
            decode_tensor(&b, Path::new("x")),
            Err(Error::Format { .. })
        ));
    }

    #[test]
    fn label_map_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let m = LabelMap::new(2, 3, vec![0, 1, 2, 2, 1, 0]).unwrap();
        let p = dir.path().join("a.lbl");
        write_label_map(&p, &m).unwrap();
        let raw = fs::read(&p).unwrap();
        assert_eq!(&raw[..12], b"LBL1\x02\x00\x00\x00\x03\x00\x00\x00");
        assert_eq!(read_label_map(&p).unwrap(), m);
        // a boundary file is not a label file
        let bm = BoundaryMap::new(1, 1, vec![1]).unwrap();
        write_boundary_map(&p, &bm).unwrap();
        assert!(read_label_map(&p).is_err());
        assert_eq!(read_boundary_map(&p).unwrap(), bm);
    }

    #[test]
    fn checkpoint_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = ParamStore::new();
        store.insert("a.weight", Tensor::from_fn(&[2, 3], |i| i as f64 / 7.0));
        store.insert("b", Tensor::scalar(1.0));
        save_checkpoint(dir.path(), &store).unwrap();
        let manifest = read_text(dir.path().join(MANIFEST)).unwrap();
        assert_eq!(manifest, "a.weight = a.weight.dtf\nb = b.dtf\n");
        assert_eq!(load_checkpoint(dir.path()).unwrap(), store);
    }

    #[test]
    fn checkpoint_manifest_errors() {
        let dir = tempfile::tempdir().unwrap();
        write_text(dir.path().join(MANIFEST), "no equals sign\n").unwrap();
        assert!(matches!(
            load_checkpoint(dir.path()),
            Err(Error::Format { .. })
        ));
        write_text(dir.path().join(MANIFEST), "a = missing.dtf\n").unwrap();
        assert!(matches!(load_checkpoint(dir.path()), Err(Error::Io { .. })));
        assert!(matches!(
            load_checkpoint(dir.path().join("nope")),
            Err(Error::Io { .. })
        ));
    }
}
