// SPDX-License-Identifier: Apache-2.0

//! Checkpoint container shared by models and adapters.
//!
//! Layout:
//!
//! ```text
//! LEXALIGN-CHECKPOINT\n
//! <header byte length, decimal>\n
//! <TOML header: format_version, kind, config table, [[tensors]] name + shape>
//! <payload: every tensor's f64 values, little-endian, in header order>
//! ```
//!
//! A file must end exactly where the last tensor ends.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::config::TransformerConfig;
use super::transformer::MicroTransformer;
use crate::error::{Error, Result};
use crate::numcore::Tensor;

pub const MAGIC: &str = "LEXALIGN-CHECKPOINT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header<C> {
    format_version: u32,
    kind: String,
    config: C,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

/// Serializes a container to bytes.
pub fn encode<C: Serialize>(
    kind: &str,
    config: &C,
    tensors: &[(String, &Tensor)],
) -> Result<Vec<u8>> {
    let header = Header {
        format_version: FORMAT_VERSION,
        kind: kind.to_string(),
        config,
        tensors: tensors
            .iter()
            .map(|(name, t)| TensorEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
            })
            .collect(),
    };
    let text = toml::to_string(&header).map_err(|e| Error::Checkpoint {
        field: "header".into(),
        reason: e.to_string(),
    })?;
    let payload_len: usize = tensors.iter().map(|(_, t)| t.len() * 8).sum();
    let mut out = Vec::with_capacity(MAGIC.len() + text.len() + payload_len + 32);
    out.extend_from_slice(MAGIC.as_bytes());
    out.push(b'\n');
    out.extend_from_slice(format!("{}\n", text.len()).as_bytes());
    out.extend_from_slice(text.as_bytes());
    for (_, t) in tensors {
        for x in t.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(out)
}

/// Parses a container, checking magic, version and kind.
pub fn decode<C: DeserializeOwned>(bytes: &[u8], kind: &str) -> Result<(C, Vec<(String, Tensor)>)> {
    let mut rest = bytes;
    let magic = take_line(&mut rest).ok_or_else(|| Error::Corrupt("missing magic line".into()))?;
    if magic != MAGIC.as_bytes() {
        return Err(Error::Checkpoint {
            field: "magic".into(),
            reason: "not a checkpoint file".into(),
        });
    }
    let len_line =
        take_line(&mut rest).ok_or_else(|| Error::Corrupt("missing header length".into()))?;
    let header_len: usize = std::str::from_utf8(len_line)
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Corrupt("unreadable header length".into()))?;
    if rest.len() < header_len {
        return Err(Error::Corrupt(format!(
            "header needs {header_len} bytes, {} available",
            rest.len()
        )));
    }
    let (head, mut payload) = rest.split_at(header_len);
    let text =
        std::str::from_utf8(head).map_err(|_| Error::Corrupt("header is not UTF-8".into()))?;

    #[derive(Deserialize)]
    struct Probe {
        format_version: u32,
        kind: String,
    }
    let probe: Probe = toml::from_str(text).map_err(|e| Error::Checkpoint {
        field: "header".into(),
        reason: e.to_string(),
    })?;
    if probe.format_version != FORMAT_VERSION {
        return Err(Error::Checkpoint {
            field: "format_version".into(),
            reason: format!("expected {FORMAT_VERSION}, found {}", probe.format_version),
        });
    }
    if probe.kind != kind {
        return Err(Error::Checkpoint {
            field: "kind".into(),
            reason: format!("expected {kind:?}, found {:?}", probe.kind),
        });
    }
    let header: Header<C> = toml::from_str(text).map_err(|e| Error::Checkpoint {
        field: "config".into(),
        reason: e.to_string(),
    })?;

    let mut tensors = Vec::with_capacity(header.tensors.len());
    for entry in header.tensors {
        let n: usize = entry.shape.iter().product();
        let need = n * 8;
        if payload.len() < need {
            return Err(Error::Corrupt(format!(
                "tensor {} needs {need} bytes, {} remain",
                entry.name,
                payload.len()
            )));
        }
        let (chunk, tail) = payload.split_at(need);
        payload = tail;
        let data = chunk
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        let t = Tensor::new(&entry.shape, data).map_err(|e| Error::Checkpoint {
            field: entry.name.clone(),
            reason: e.to_string(),
        })?;
        tensors.push((entry.name, t));
    }
    if !payload.is_empty() {
        return Err(Error::Corrupt(format!("{} trailing bytes", payload.len())));
    }
    Ok((header.config, tensors))
}

fn take_line<'a>(rest: &mut &'a [u8]) -> Option<&'a [u8]> {
    let pos = rest.iter().position(|&b| b == b'\n')?;
    let line = &rest[..pos];
    *rest = &rest[pos + 1..];
    Some(line)
}

pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub const MODEL_KIND: &str = "micro_transformer";

impl MicroTransformer {
    pub fn to_checkpoint_bytes(&self) -> Result<Vec<u8>> {
        encode(MODEL_KIND, &self.config, &self.named_tensors())
    }

    pub fn from_checkpoint_bytes(bytes: &[u8]) -> Result<Self> {
        let (config, tensors): (TransformerConfig, _) = decode(bytes, MODEL_KIND)?;
        config.validate()?;
        let layout = Self::expected_layout(&config);
        for ((name, _), (expected, _)) in tensors.iter().zip(&layout) {
            if name != expected {
                return Err(Error::Checkpoint {
                    field: expected.clone(),
                    reason: format!("found tensor {name:?} in its place"),
                });
            }
        }
        Self::from_tensors(config, tensors.into_iter().map(|(_, t)| t).collect())
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        write_bytes(path, &self.to_checkpoint_bytes()?)
    }

    pub fn load_checkpoint(path: &Path) -> Result<Self> {
        Self::from_checkpoint_bytes(&read_bytes(path)?)
    }
}
