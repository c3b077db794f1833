//! Bit-exact reading and writing of safetensors containers.
//!
//! Layout: an 8-byte little-endian header length `N`, `N` bytes of UTF-8
//! JSON mapping tensor name to `{"dtype", "shape", "data_offsets"}` (plus an
//! optional `"__metadata__"` string map), then the raw data region. Offsets
//! are relative to the start of the data region.
//!
//! The writer serializes tensors in lexicographic name order with densely
//! packed offsets, so identical inputs produce byte-identical files.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Deserialize;
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::tensor::Tensor32;

/// Supported element types. Model tensors are always `F32`; `U8` exists for
/// bit-packed mask payloads.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dtype {
    F32,
    U8,
}

impl Dtype {
    pub fn as_str(self) -> &'static str {
        match self {
            Dtype::F32 => "F32",
            Dtype::U8 => "U8",
        }
    }

    pub fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::U8 => 1,
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "F32" => Some(Dtype::F32),
            "U8" => Some(Dtype::U8),
            _ => None,
        }
    }
}

/// One named tensor as stored on disk: dtype, shape, and little-endian bytes.
#[derive(Clone, Debug, PartialEq)]
pub struct TensorRecord {
    pub dtype: Dtype,
    pub shape: Vec<usize>,
    pub data: Vec<u8>,
}

impl TensorRecord {
    pub fn from_f32(shape: Vec<usize>, values: &[f32]) -> Self {
        let mut data = Vec::with_capacity(values.len() * 4);
        for v in values {
            data.extend_from_slice(&v.to_le_bytes());
        }
        Self {
            dtype: Dtype::F32,
            shape,
            data,
        }
    }

    pub fn from_u8(shape: Vec<usize>, data: Vec<u8>) -> Self {
        Self {
            dtype: Dtype::U8,
            shape,
            data,
        }
    }

    pub fn element_count(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn to_f32_vec(&self) -> Result<Vec<f32>> {
        if self.dtype != Dtype::F32 {
            return Err(Error::InvalidArgument(format!(
                "expected an F32 tensor, found {}",
                self.dtype.as_str()
            )));
        }
        Ok(self
            .data
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }

    pub fn to_tensor(&self) -> Result<Tensor32> {
        Tensor32::new(self.shape.clone(), self.to_f32_vec()?)
    }

    fn check(&self, path: &Path, name: &str) -> Result<()> {
        let want = self.element_count() * self.dtype.size();
        if want != self.data.len() {
            return Err(Error::BadRecord {
                path: path.to_path_buf(),
                name: name.to_string(),
                detail: format!(
                    "shape {:?} implies {} bytes, buffer has {}",
                    self.shape,
                    want,
                    self.data.len()
                ),
            });
        }
        Ok(())
    }
}

pub type TensorMap = BTreeMap<String, TensorRecord>;
pub type Metadata = BTreeMap<String, String>;

#[derive(Deserialize)]
struct HeaderEntry {
    dtype: String,
    shape: Vec<usize>,
    data_offsets: [usize; 2],
}

/// Serialize `tensors` (lexicographic order, dense ascending offsets) plus
/// `metadata` to `path`. Deterministic: equal inputs yield equal bytes.
pub fn write_container(tensors: &TensorMap, metadata: &Metadata, path: &Path) -> Result<()> {
    let bytes = container_bytes(tensors, metadata, path)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// In-memory form of [`write_container`], exposed for tests.
pub fn container_bytes(tensors: &TensorMap, metadata: &Metadata, path: &Path) -> Result<Vec<u8>> {
    let mut header = serde_json::Map::new();
    if !metadata.is_empty() {
        header.insert("__metadata__".to_string(), json!(metadata));
    }

    let mut offset = 0usize;
    let mut payload = Vec::new();
    for (name, rec) in tensors {
        rec.check(path, name)?;
        let end = offset + rec.data.len();
        header.insert(
            name.clone(),
            json!({
                "dtype": rec.dtype.as_str(),
                "shape": rec.shape,
                "data_offsets": [offset, end],
            }),
        );
        payload.extend_from_slice(&rec.data);
        offset = end;
    }

    let header_json = serde_json::to_string(&Value::Object(header)).expect("header serializes");
    let mut out = Vec::with_capacity(8 + header_json.len() + payload.len());
    out.extend_from_slice(&(header_json.len() as u64).to_le_bytes());
    out.extend_from_slice(header_json.as_bytes());
    out.extend_from_slice(&payload);
    Ok(out)
}

/// Parse a container from `path`, materializing every tensor listed in the
/// header and the `__metadata__` map (empty if absent).
pub fn read_container(path: &Path) -> Result<(TensorMap, Metadata)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_container(&bytes, path)
}

fn parse_container(bytes: &[u8], path: &Path) -> Result<(TensorMap, Metadata)> {
    if bytes.len() < 8 {
        return Err(Error::MalformedHeaderLength {
            path: path.to_path_buf(),
            detail: format!("file is {} bytes, need at least 8", bytes.len()),
        });
    }
    let header_len = u64::from_le_bytes(bytes[..8].try_into().unwrap());
    let data_start = (header_len as u128 + 8) as usize;
    if header_len as u128 + 8 > bytes.len() as u128 {
        return Err(Error::MalformedHeaderLength {
            path: path.to_path_buf(),
            detail: format!(
                "declared header length {} exceeds file size {}",
                header_len,
                bytes.len()
            ),
        });
    }

    let header_str =
        std::str::from_utf8(&bytes[8..data_start]).map_err(|e| Error::HeaderJson {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })?;
    let header: Value = serde_json::from_str(header_str).map_err(|e| Error::HeaderJson {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })?;
    let obj = header.as_object().ok_or_else(|| Error::HeaderJson {
        path: path.to_path_buf(),
        detail: "header is not a JSON object".to_string(),
    })?;

    let data = &bytes[data_start..];
    let mut metadata = Metadata::new();
    let mut tensors = TensorMap::new();
    let mut prev_end = 0usize;

    // serde_json's map is sorted, so entries are visited in lexicographic
    // order; offsets must be ascending and non-overlapping in that order.
    for (name, value) in obj {
        if name == "__metadata__" {
            let map = value.as_object().ok_or_else(|| Error::HeaderJson {
                path: path.to_path_buf(),
                detail: "__metadata__ is not an object".to_string(),
            })?;
            for (k, v) in map {
                let s = v.as_str().ok_or_else(|| Error::HeaderJson {
                    path: path.to_path_buf(),
                    detail: format!("__metadata__[{k:?}] is not a string"),
                })?;
                metadata.insert(k.clone(), s.to_string());
            }
            continue;
        }

        let entry: HeaderEntry =
            serde_json::from_value(value.clone()).map_err(|e| Error::HeaderJson {
                path: path.to_path_buf(),
                detail: format!("tensor {name:?}: {e}"),
            })?;
        let dtype = Dtype::parse(&entry.dtype).ok_or_else(|| Error::UnsupportedDtype {
            path: path.to_path_buf(),
            name: name.clone(),
            dtype: entry.dtype.clone(),
        })?;

        let [begin, end] = entry.data_offsets;
        let bad = |detail: String| Error::BadRecord {
            path: path.to_path_buf(),
            name: name.clone(),
            detail,
        };
        if end < begin {
            return Err(bad(format!("data_offsets [{begin}, {end}] are reversed")));
        }
        if begin < prev_end {
            return Err(bad(format!(
                "data_offsets [{begin}, {end}] overlap or are out of order (previous end {prev_end})"
            )));
        }
        if end > data.len() {
            return Err(bad(format!(
                "data_offsets [{begin}, {end}] exceed data region size {}",
                data.len()
            )));
        }
        let elems: usize = entry.shape.iter().product();
        if elems * dtype.size() != end - begin {
            return Err(bad(format!(
                "shape {:?} implies {} bytes, data_offsets span {}",
                entry.shape,
                elems * dtype.size(),
                end - begin
            )));
        }
        prev_end = end;

        tensors.insert(
            name.clone(),
            TensorRecord {
                dtype,
                shape: entry.shape,
                data: data[begin..end].to_vec(),
            },
        );
    }

    Ok((tensors, metadata))
}

/// A model checkpoint: named F32 tensors.
pub type Checkpoint = BTreeMap<String, Tensor32>;

/// Read a container and decode every tensor as F32.
pub fn load_checkpoint(path: &Path) -> Result<(Checkpoint, Metadata)> {
    let (records, metadata) = read_container(path)?;
    let mut out = Checkpoint::new();
    for (name, rec) in records {
        if rec.dtype != Dtype::F32 {
            return Err(Error::UnsupportedDtype {
                path: path.to_path_buf(),
                name,
                dtype: rec.dtype.as_str().to_string(),
            });
        }
        let tensor = rec.to_tensor()?;
        out.insert(name, tensor);
    }
    Ok((out, metadata))
}

pub fn save_checkpoint(ckpt: &Checkpoint, metadata: &Metadata, path: &Path) -> Result<()> {
    let tensors: TensorMap = ckpt
        .iter()
        .map(|(name, t)| {
            (
                name.clone(),
                TensorRecord::from_f32(t.shape().to_vec(), t.data()),
            )
        })
        .collect();
    write_container(&tensors, metadata, path)
}
