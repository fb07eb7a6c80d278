//! `UNW1` parameter files.
//!
//! Layout: the magic `UNW1`, a little-endian `u32` format version, a
//! little-endian `u64` manifest length, the manifest as UTF-8 TOML, then the
//! parameter blob of little-endian `f32` values. The manifest holds a free
//! `[graph]` table describing the model and one `[[tensors]]` entry per
//! parameter with its name, shape and byte offset into the blob. Tensors are
//! stored back to back in manifest order and fill the blob exactly.

use serde::{Deserialize, Serialize};

use crate::error::{NnError, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"UNW1";
pub const VERSION: u32 = 1;
const HEADER: usize = 16;
/// Refuse manifests beyond this size before parsing them.
const MAX_MANIFEST: u64 = 16 << 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    graph: toml::Table,
    #[serde(default)]
    tensors: Vec<Entry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub graph: toml::Table,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

fn parse_err(offset: usize, message: impl Into<String>) -> NnError {
    NnError::Parse {
        offset,
        message: message.into(),
    }
}

impl Checkpoint {
    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut entries = Vec::with_capacity(self.tensors.len());
        let mut offset = 0u64;
        for (name, t) in &self.tensors {
            entries.push(Entry {
                name: name.clone(),
                shape: t.shape().to_vec(),
                offset,
            });
            offset += 4 * t.len() as u64;
        }
        let manifest = Manifest {
            graph: self.graph.clone(),
            tensors: entries,
        };
        let text = toml::to_string(&manifest).map_err(|e| NnError::Invalid(format!("manifest: {e}")))?;
        let mut out = Vec::with_capacity(HEADER + text.len() + offset as usize);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(text.len() as u64).to_le_bytes());
        out.extend_from_slice(text.as_bytes());
        for (_, t) in &self.tensors {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER {
            return Err(parse_err(bytes.len(), "file shorter than the 16-byte header"));
        }
        if &bytes[..4] != MAGIC {
            return Err(parse_err(0, "missing UNW1 magic"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(parse_err(4, format!("unsupported version {version}")));
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
        if len > MAX_MANIFEST || len > (bytes.len() - HEADER) as u64 {
            return Err(parse_err(8, format!("manifest length {len} exceeds the file")));
        }
        let end = HEADER + len as usize;
        let text = std::str::from_utf8(&bytes[HEADER..end])
            .map_err(|e| parse_err(HEADER + e.valid_up_to(), "manifest is not UTF-8"))?;
        let manifest: Manifest = toml::from_str(text).map_err(|e| {
            let at = e.span().map_or(0, |s| s.start);
            parse_err(HEADER + at, format!("manifest: {}", e.message()))
        })?;
        let blob = &bytes[end..];
        let mut expected = 0u64;
        let mut tensors = Vec::with_capacity(manifest.tensors.len());
        for entry in manifest.tensors {
            if entry.offset != expected {
                return Err(parse_err(
                    end,
                    format!(
                        "tensor `{}` at offset {} but {} expected",
                        entry.name, entry.offset, expected
                    ),
                ));
            }
            let count = entry
                .shape
                .iter()
                .try_fold(1u64, |acc, &d| acc.checked_mul(d as u64))
                .filter(|&n| n > 0)
                .ok_or_else(|| {
                    parse_err(
                        end,
                        format!("tensor `{}` has invalid shape {:?}", entry.name, entry.shape),
                    )
                })?;
            let size = count
                .checked_mul(4)
                .filter(|&s| expected.checked_add(s).is_some_and(|e| e <= blob.len() as u64))
                .ok_or_else(|| parse_err(end, format!("tensor `{}` runs past the blob", entry.name)))?;
            let start = expected as usize;
            let data = blob[start..start + size as usize]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            tensors.push((entry.name, Tensor::new(entry.shape, data)?));
            expected += size;
        }
        if expected != blob.len() as u64 {
            return Err(parse_err(
                end + expected as usize,
                format!("{} trailing bytes after the last tensor", blob.len() as u64 - expected),
            ));
        }
        Ok(Checkpoint {
            graph: manifest.graph,
            tensors,
        })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.encode()?)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::decode(&std::fs::read(path)?)
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor<f32>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }
}
