// SPDX-License-Identifier: MIT OR Apache-2.0

//! The `PPSC` weight container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "PPSC"            4 bytes magic
//! version           u32, currently 1
//! header_len        u64, byte length of the JSON header
//! header            UTF-8 JSON: { name: { dtype, shape, offset, nbytes } }
//! data              tensor payloads, f32 LE row-major
//! ```
//!
//! Offsets are relative to the first byte after the header. The writer
//! emits tensors in lexicographic name order, so identical inputs produce
//! identical files.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"PPSC";
pub const VERSION: u32 = 1;

/// Header entry for one tensor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub dtype: String,
    pub shape: Vec<usize>,
    pub offset: u64,
    pub nbytes: u64,
}

/// A named tensor payload.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorData {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl TensorData {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }
}

pub type TensorMap = BTreeMap<String, TensorData>;

fn build_header(tensors: &TensorMap) -> Result<(Vec<u8>, BTreeMap<String, TensorEntry>)> {
    let mut entries = BTreeMap::new();
    let mut offset = 0u64;
    for (name, t) in tensors {
        let numel: usize = t.shape.iter().product();
        if numel != t.data.len() {
            return Err(Error::ShapeMismatch {
                name: name.clone(),
                expected: t.shape.clone(),
                found: vec![t.data.len()],
            });
        }
        let nbytes = (numel * 4) as u64;
        entries.insert(
            name.clone(),
            TensorEntry {
                dtype: "f32".into(),
                shape: t.shape.clone(),
                offset,
                nbytes,
            },
        );
        offset += nbytes;
    }
    let header = serde_json::to_vec(&entries)?;
    Ok((header, entries))
}

/// Serializes `tensors` into `w`.
pub fn write_to<W: Write>(mut w: W, tensors: &TensorMap) -> Result<()> {
    let (header, _) = build_header(tensors)?;
    let io = |e| Error::io("<container>", e);
    w.write_all(&MAGIC).map_err(io)?;
    w.write_all(&VERSION.to_le_bytes()).map_err(io)?;
    w.write_all(&(header.len() as u64).to_le_bytes())
        .map_err(io)?;
    w.write_all(&header).map_err(io)?;
    let mut buf = Vec::new();
    for t in tensors.values() {
        buf.clear();
        buf.reserve(t.data.len() * 4);
        for v in &t.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn write_container(path: impl AsRef<Path>, tensors: &TensorMap) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_to(BufWriter::new(file), tensors).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

pub fn to_bytes(tensors: &TensorMap) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    write_to(&mut out, tensors)?;
    Ok(out)
}

/// Parses the fixed prefix and JSON header, leaving `r` at the data section.
fn read_header<R: Read>(r: &mut R) -> Result<BTreeMap<String, TensorEntry>> {
    let io = |e| Error::io("<container>", e);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(io)?;
    if magic != MAGIC {
        return Err(Error::BadMagic(magic));
    }
    let mut word = [0u8; 4];
    r.read_exact(&mut word).map_err(io)?;
    let version = u32::from_le_bytes(word);
    if version != VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: VERSION,
        });
    }
    let mut dword = [0u8; 8];
    r.read_exact(&mut dword).map_err(io)?;
    let header_len = u64::from_le_bytes(dword);
    if header_len > (1 << 32) {
        return Err(Error::MalformedHeader(format!(
            "implausible header length {header_len}"
        )));
    }
    let mut header = vec![0u8; header_len as usize];
    r.read_exact(&mut header).map_err(io)?;
    let text = std::str::from_utf8(&header)
        .map_err(|e| Error::MalformedHeader(format!("header is not UTF-8: {e}")))?;
    let entries: BTreeMap<String, TensorEntry> = serde_json::from_str(text)
        .map_err(|e| Error::MalformedHeader(format!("header JSON: {e}")))?;
    for (name, e) in &entries {
        if e.dtype != "f32" {
            return Err(Error::MalformedHeader(format!(
                "tensor `{name}` has dtype {:?}, only \"f32\" is supported",
                e.dtype
            )));
        }
        let numel: u64 = e.shape.iter().map(|&d| d as u64).product();
        if numel * 4 != e.nbytes {
            return Err(Error::MalformedHeader(format!(
                "tensor `{name}`: shape {:?} needs {} bytes, header says {}",
                e.shape,
                numel * 4,
                e.nbytes
            )));
        }
    }
    Ok(entries)
}

fn decode_f32(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect()
}

fn check_bounds(entries: &BTreeMap<String, TensorEntry>, data_len: u64) -> Result<()> {
    for (name, e) in entries {
        let end = e.offset.checked_add(e.nbytes);
        if end.is_none_or(|end| end > data_len) {
            return Err(Error::MalformedHeader(format!(
                "tensor `{name}` spans bytes {}..{} but the data section has {data_len}",
                e.offset,
                e.offset.saturating_add(e.nbytes)
            )));
        }
    }
    Ok(())
}

/// Reads every tensor from a container file.
pub fn read_container(path: impl AsRef<Path>) -> Result<TensorMap> {
    let path = path.as_ref();
    let wrap = |e: Error| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    };
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let file_len = file.metadata().map_err(|e| Error::io(path, e))?.len();
    let mut r = BufReader::new(file);
    let entries = read_header(&mut r).map_err(wrap)?;
    let data_start = r.stream_position().map_err(|e| Error::io(path, e))?;
    check_bounds(&entries, file_len.saturating_sub(data_start))?;

    let mut out = TensorMap::new();
    let mut buf = Vec::new();
    for (name, e) in entries {
        r.seek(SeekFrom::Start(data_start + e.offset))
            .map_err(|err| Error::io(path, err))?;
        buf.resize(e.nbytes as usize, 0);
        r.read_exact(&mut buf).map_err(|err| Error::io(path, err))?;
        out.insert(name, TensorData::new(e.shape, decode_f32(&buf)));
    }
    Ok(out)
}

/// Parses a container held in memory.
pub fn from_bytes(bytes: &[u8]) -> Result<TensorMap> {
    let mut cursor = std::io::Cursor::new(bytes);
    let entries = read_header(&mut cursor)?;
    let data = &bytes[cursor.position() as usize..];
    check_bounds(&entries, data.len() as u64)?;
    Ok(entries
        .into_iter()
        .map(|(name, e)| {
            let start = e.offset as usize;
            let slice = &data[start..start + e.nbytes as usize];
            (name, TensorData::new(e.shape, decode_f32(slice)))
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> TensorMap {
        let mut m = TensorMap::new();
        m.insert("b".into(), TensorData::new(vec![2], vec![1.5, -2.0]));
        m.insert(
            "a".into(),
            TensorData::new(vec![2, 3], vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]),
        );
        m
    }

    #[test]
    fn byte_layout_is_exact() {
        let mut m = TensorMap::new();
        m.insert("x".into(), TensorData::new(vec![1], vec![1.0]));
        let bytes = to_bytes(&m).unwrap();
        let header = br#"{"x":{"dtype":"f32","shape":[1],"offset":0,"nbytes":4}}"#;
        let mut want = Vec::new();
        want.extend_from_slice(b"PPSC");
        want.extend_from_slice(&1u32.to_le_bytes());
        want.extend_from_slice(&(header.len() as u64).to_le_bytes());
        want.extend_from_slice(header);
        want.extend_from_slice(&1.0f32.to_le_bytes());
        assert_eq!(bytes, want);
    }

    #[test]
    fn roundtrip_and_sorted_offsets() {
        let m = sample();
        let bytes = to_bytes(&m).unwrap();
        assert_eq!(from_bytes(&bytes).unwrap(), m);
        let mut c = std::io::Cursor::new(&bytes[..]);
        let entries = read_header(&mut c).unwrap();
        assert_eq!(entries["a"].offset, 0);
        assert_eq!(entries["b"].offset, 24);
    }

    #[test]
    fn file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("w.ppsc");
        write_container(&p, &sample()).unwrap();
        assert_eq!(read_container(&p).unwrap(), sample());
    }

    #[test]
    fn bad_magic_and_version() {
        let mut bytes = to_bytes(&sample()).unwrap();
        bytes[0] = b'X';
        assert!(matches!(from_bytes(&bytes), Err(Error::BadMagic(_))));
        let mut bytes = to_bytes(&sample()).unwrap();
        bytes[4..8].copy_from_slice(&2u32.to_le_bytes());
        assert!(matches!(
            from_bytes(&bytes),
            Err(Error::VersionMismatch { found: 2, .. })
        ));
    }

    #[test]
    fn truncated_data_rejected() {
        let bytes = to_bytes(&sample()).unwrap();
        let cut = &bytes[..bytes.len() - 4];
        assert!(matches!(from_bytes(cut), Err(Error::MalformedHeader(_))));
    }

    #[test]
    fn wrong_dtype_rejected() {
        let header = br#"{"x":{"dtype":"bf16","shape":[1],"offset":0,"nbytes":2}}"#;
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"PPSC");
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&(header.len() as u64).to_le_bytes());
        bytes.extend_from_slice(header);
        bytes.extend_from_slice(&[0, 0]);
        assert!(matches!(from_bytes(&bytes), Err(Error::MalformedHeader(_))));
    }
}
