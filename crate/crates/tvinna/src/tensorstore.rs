//! Checkpoint I/O: reading and writing named tensor maps in the safetensors
//! container layout, with dtype-safe access to the numeric payloads.
//!
//! The container is an 8-byte little-endian header length `N`, `N` bytes of
//! JSON mapping tensor names to `{dtype, shape, data_offsets}` (plus an
//! optional `__metadata__` string map), followed by the raw byte region.
//! Writes are canonical: tensors are laid out in lexicographic name order and
//! the header is padded with spaces so the byte region starts on an 8-byte
//! boundary, so the same map always serializes to the same bytes.

use std::collections::BTreeMap;
use std::fmt;
use std::io;
use std::path::{Path, PathBuf};

use half::{bf16, f16};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Storage dtypes supported by the checkpoint container.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Dtype {
    F32,
    F16,
    Bf16,
}

impl Dtype {
    /// Bytes per element.
    pub fn size_bytes(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F16 | Dtype::Bf16 => 2,
        }
    }

    /// Container name of the dtype.
    pub fn as_str(self) -> &'static str {
        match self {
            Dtype::F32 => "F32",
            Dtype::F16 => "F16",
            Dtype::Bf16 => "BF16",
        }
    }

    /// Parse a container dtype name; `None` for dtypes we do not handle.
    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "F32" => Some(Dtype::F32),
            "F16" => Some(Dtype::F16),
            "BF16" => Some(Dtype::Bf16),
            _ => None,
        }
    }
}

impl fmt::Display for Dtype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A dense tensor: row-major little-endian bytes plus shape and dtype.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    dtype: Dtype,
    data: Vec<u8>,
}

impl Tensor {
    /// Wrap raw little-endian bytes; the byte length must match the shape.
    pub fn new(shape: Vec<usize>, dtype: Dtype, data: Vec<u8>) -> Result<Self, TensorStoreError> {
        let count = element_count(&shape).ok_or_else(|| TensorStoreError::Format {
            offset: 0,
            reason: format!("shape {shape:?} overflows element count"),
        })?;
        let expected = count * dtype.size_bytes();
        if data.len() != expected {
            return Err(TensorStoreError::SizeMismatch {
                name: String::new(),
                shape,
                expected,
                actual: data.len(),
            });
        }
        Ok(Tensor { shape, dtype, data })
    }

    /// Encode float32 values into a tensor of the given storage dtype.
    /// Narrowing to F16/BF16 rounds to nearest even.
    pub fn from_f32(
        shape: Vec<usize>,
        dtype: Dtype,
        values: &[f32],
    ) -> Result<Self, TensorStoreError> {
        let mut data = Vec::with_capacity(values.len() * dtype.size_bytes());
        match dtype {
            Dtype::F32 => {
                for v in values {
                    data.extend_from_slice(&v.to_le_bytes());
                }
            }
            Dtype::F16 => {
                for v in values {
                    data.extend_from_slice(&f16::from_f32(*v).to_le_bytes());
                }
            }
            Dtype::Bf16 => {
                for v in values {
                    data.extend_from_slice(&bf16::from_f32(*v).to_le_bytes());
                }
            }
        }
        Tensor::new(shape, dtype, data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn dtype(&self) -> Dtype {
        self.dtype
    }

    /// Raw little-endian storage bytes.
    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn element_count(&self) -> usize {
        self.shape.iter().product()
    }

    /// Decode to float32. Widening from F16/BF16 is exact.
    pub fn to_f32(&self) -> Vec<f32> {
        match self.dtype {
            Dtype::F32 => self
                .data
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect(),
            Dtype::F16 => self
                .data
                .chunks_exact(2)
                .map(|b| f16::from_le_bytes([b[0], b[1]]).to_f32())
                .collect(),
            Dtype::Bf16 => self
                .data
                .chunks_exact(2)
                .map(|b| bf16::from_le_bytes([b[0], b[1]]).to_f32())
                .collect(),
        }
    }
}

/// Named tensors plus free-form string metadata, as stored in one checkpoint
/// file. Immutable after load; iteration order is lexicographic by name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TensorMap {
    entries: BTreeMap<String, Tensor>,
    metadata: BTreeMap<String, String>,
}

impl TensorMap {
    pub fn new() -> Self {
        Self::default()
    }

    /// Insert a tensor, replacing any previous entry under the same name.
    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.entries.insert(name.into(), tensor);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn metadata(&self) -> &BTreeMap<String, String> {
        &self.metadata
    }

    pub fn metadata_mut(&mut self) -> &mut BTreeMap<String, String> {
        &mut self.metadata
    }

    pub fn set_metadata(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.metadata.insert(key.into(), value.into());
    }
}

#[derive(Debug, Error)]
pub enum TensorStoreError {
    #[error("malformed header at byte {offset}: {reason}")]
    Format { offset: usize, reason: String },

    #[error(
        "truncated data region: tensor '{name}' needs bytes {start}..{end} \
         but the region holds {available}"
    )]
    Truncated {
        name: String,
        start: usize,
        end: usize,
        available: usize,
    },

    #[error("unsupported dtype '{dtype}' for tensor '{name}'")]
    UnsupportedDtype { name: String, dtype: String },

    #[error(
        "size mismatch for tensor '{name}': shape {shape:?} implies {expected} bytes, got {actual}"
    )]
    SizeMismatch {
        name: String,
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },

    #[error("incompatible tensor maps: {0}")]
    Incompatible(CompatReport),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

/// Every difference found by [`assert_compatible`], so the caller sees the
/// full extent of a mismatch instead of the first offender.
#[derive(Debug, Default, PartialEq, Eq)]
pub struct CompatReport {
    /// Names present in the left map only.
    pub missing_in_right: Vec<String>,
    /// Names present in the right map only.
    pub missing_in_left: Vec<String>,
    /// (name, left shape, right shape) for tensors whose shapes differ.
    pub shape_conflicts: Vec<(String, Vec<usize>, Vec<usize>)>,
}

impl CompatReport {
    pub fn is_empty(&self) -> bool {
        self.missing_in_right.is_empty()
            && self.missing_in_left.is_empty()
            && self.shape_conflicts.is_empty()
    }
}

impl fmt::Display for CompatReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts = Vec::new();
        if !self.missing_in_right.is_empty() {
            parts.push(format!("only in left: [{}]", self.missing_in_right.join(", ")));
        }
        if !self.missing_in_left.is_empty() {
            parts.push(format!("only in right: [{}]", self.missing_in_left.join(", ")));
        }
        for (name, l, r) in &self.shape_conflicts {
            parts.push(format!("shape conflict on '{name}': {l:?} vs {r:?}"));
        }
        f.write_str(&parts.join("; "))
    }
}

/// Succeeds iff both maps have identical name sets and per-name shapes.
/// Tensors absent on one side are a hard error, never skipped.
pub fn assert_compatible(a: &TensorMap, b: &TensorMap) -> Result<(), TensorStoreError> {
    let mut report = CompatReport::default();
    for (name, ta) in a.iter() {
        match b.get(name) {
            None => report.missing_in_right.push(name.to_string()),
            Some(tb) => {
                if ta.shape() != tb.shape() {
                    report.shape_conflicts.push((
                        name.to_string(),
                        ta.shape().to_vec(),
                        tb.shape().to_vec(),
                    ));
                }
            }
        }
    }
    for (name, _) in b.iter() {
        if a.get(name).is_none() {
            report.missing_in_left.push(name.to_string());
        }
    }
    if report.is_empty() {
        Ok(())
    } else {
        Err(TensorStoreError::Incompatible(report))
    }
}

#[derive(Serialize, Deserialize)]
struct HeaderEntry {
    dtype: String,
    shape: Vec<usize>,
    data_offsets: [usize; 2],
}

fn element_count(shape: &[usize]) -> Option<usize> {
    shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d))
}

/// Read a checkpoint file. See the module docs for the container layout.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<TensorMap, TensorStoreError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|source| TensorStoreError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    checkpoint_from_bytes(&bytes)
}

/// Parse a checkpoint from in-memory bytes.
pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<TensorMap, TensorStoreError> {
    if bytes.len() < 8 {
        return Err(TensorStoreError::Format {
            offset: 0,
            reason: format!("file is {} bytes, need an 8-byte length prefix", bytes.len()),
        });
    }
    let header_len = u64::from_le_bytes(bytes[0..8].try_into().unwrap()) as usize;
    let data_start = 8usize.checked_add(header_len).filter(|&e| e <= bytes.len());
    let Some(data_start) = data_start else {
        return Err(TensorStoreError::Format {
            offset: 8,
            reason: format!(
                "header length {header_len} exceeds file size {}",
                bytes.len()
            ),
        });
    };

    let header_bytes = &bytes[8..data_start];
    let region = &bytes[data_start..];

    let raw: BTreeMap<String, serde_json::Value> =
        serde_json::from_slice(header_bytes).map_err(|e| TensorStoreError::Format {
            // serde_json reports 1-based columns; headers are single-line JSON.
            offset: 8 + e.column().saturating_sub(1),
            reason: format!("header is not valid JSON: {e}"),
        })?;

    let mut map = TensorMap::new();
    for (name, value) in raw {
        if name == "__metadata__" {
            let meta: BTreeMap<String, String> =
                serde_json::from_value(value).map_err(|e| TensorStoreError::Format {
                    offset: 8,
                    reason: format!("__metadata__ must map strings to strings: {e}"),
                })?;
            map.metadata = meta;
            continue;
        }
        let entry: HeaderEntry =
            serde_json::from_value(value).map_err(|e| TensorStoreError::Format {
                offset: 8,
                reason: format!("bad header entry for tensor '{name}': {e}"),
            })?;
        let dtype = Dtype::parse(&entry.dtype).ok_or_else(|| TensorStoreError::UnsupportedDtype {
            name: name.clone(),
            dtype: entry.dtype.clone(),
        })?;
        let [start, end] = entry.data_offsets;
        if start > end {
            return Err(TensorStoreError::Format {
                offset: 8,
                reason: format!("tensor '{name}' has reversed data_offsets [{start}, {end}]"),
            });
        }
        if end > region.len() {
            return Err(TensorStoreError::Truncated {
                name,
                start,
                end,
                available: region.len(),
            });
        }
        let count = element_count(&entry.shape).ok_or_else(|| TensorStoreError::Format {
            offset: 8,
            reason: format!("tensor '{name}' shape {:?} overflows", entry.shape),
        })?;
        let expected = count * dtype.size_bytes();
        if end - start != expected {
            return Err(TensorStoreError::SizeMismatch {
                name,
                shape: entry.shape,
                expected,
                actual: end - start,
            });
        }
        let tensor = Tensor {
            shape: entry.shape,
            dtype,
            data: region[start..end].to_vec(),
        };
        map.entries.insert(name, tensor);
    }
    Ok(map)
}

/// Serialize to canonical container bytes: lexicographic tensor order,
/// space-padded header, contiguous offsets.
pub fn checkpoint_to_bytes(map: &TensorMap) -> Vec<u8> {
    let mut header: BTreeMap<String, serde_json::Value> = BTreeMap::new();
    if !map.metadata.is_empty() {
        header.insert(
            "__metadata__".to_string(),
            serde_json::to_value(&map.metadata).unwrap(),
        );
    }
    let mut offset = 0usize;
    for (name, tensor) in map.iter() {
        let end = offset + tensor.data().len();
        header.insert(
            name.to_string(),
            serde_json::to_value(HeaderEntry {
                dtype: tensor.dtype().as_str().to_string(),
                shape: tensor.shape().to_vec(),
                data_offsets: [offset, end],
            })
            .unwrap(),
        );
        offset = end;
    }
    let mut header_json = serde_json::to_vec(&header).unwrap();
    // Pad so the byte region starts on an 8-byte boundary.
    let padded = header_json.len().div_ceil(8) * 8;
    header_json.resize(padded, b' ');

    let mut out = Vec::with_capacity(8 + padded + offset);
    out.extend_from_slice(&(padded as u64).to_le_bytes());
    out.extend_from_slice(&header_json);
    for (_, tensor) in map.iter() {
        out.extend_from_slice(tensor.data());
    }
    out
}

/// Write a checkpoint file; the result always parses back to an equal map.
pub fn save_checkpoint(map: &TensorMap, path: impl AsRef<Path>) -> Result<(), TensorStoreError> {
    let path = path.as_ref();
    std::fs::write(path, checkpoint_to_bytes(map)).map_err(|source| TensorStoreError::Io {
        path: path.to_path_buf(),
        source,
    })
}
