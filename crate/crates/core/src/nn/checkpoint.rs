//! Checkpoint container: one JSON manifest line, then named little-endian
//! `f64` blobs concatenated in manifest order.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "chipheat-checkpoint-v1";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BlobEntry {
    name: String,
    len: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format: String,
    meta: serde_json::Value,
    blobs: Vec<BlobEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlobFile {
    pub meta: serde_json::Value,
    pub blobs: Vec<(String, Vec<f64>)>,
}

impl BlobFile {
    pub fn get(&self, name: &str) -> Result<&[f64]> {
        self.blobs
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.as_slice())
            .ok_or_else(|| Error::Format(format!("checkpoint lacks blob {name}")))
    }
}

pub fn write_blobs<W: Write>(
    mut w: W,
    meta: &serde_json::Value,
    blobs: &[(String, &[f64])],
) -> Result<()> {
    let manifest = Manifest {
        format: CHECKPOINT_FORMAT.into(),
        meta: meta.clone(),
        blobs: blobs
            .iter()
            .map(|(n, v)| BlobEntry {
                name: n.clone(),
                len: v.len(),
            })
            .collect(),
    };
    serde_json::to_writer(&mut w, &manifest)?;
    w.write_all(b"\n")?;
    let total: usize = blobs.iter().map(|(_, v)| v.len()).sum();
    let mut buf = Vec::with_capacity(total * 8);
    for (_, v) in blobs {
        for x in v.iter() {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_blobs<R: BufRead>(mut r: R) -> Result<BlobFile> {
    let mut line = String::new();
    r.read_line(&mut line)?;
    let manifest: Manifest = serde_json::from_str(line.trim_end())?;
    if manifest.format != CHECKPOINT_FORMAT {
        return Err(Error::Format(format!(
            "unknown checkpoint format {}",
            manifest.format
        )));
    }
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let total: usize = manifest.blobs.iter().map(|b| b.len).sum();
    if bytes.len() != total * 8 {
        return Err(Error::Format(format!(
            "checkpoint payload has {} bytes, manifest needs {}",
            bytes.len(),
            total * 8
        )));
    }
    let mut offset = 0;
    let blobs = manifest
        .blobs
        .into_iter()
        .map(|b| {
            let v = bytes[offset..offset + b.len * 8]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            offset += b.len * 8;
            (b.name, v)
        })
        .collect();
    Ok(BlobFile {
        meta: manifest.meta,
        blobs,
    })
}
