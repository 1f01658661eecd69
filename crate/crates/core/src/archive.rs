//! Binary container for feature data.
//!
//! Layout: the 8-byte magic `STADNET1`, a little-endian `u32` header length,
//! the UTF-8 JSON header, then `rows * dim` little-endian `f32` values.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::features::DYNAMIC_POSE_DIM;
use crate::sequence::{GestureSequence, SEQ_LEN};

pub const MAGIC: &[u8; 8] = b"STADNET1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ArchiveKind {
    /// One fixed-length gesture sequence.
    Seq,
    /// Variable-length per-video fused features.
    Feat,
    /// Per-frame hand embeddings keyed by (source, frame, side).
    Emb,
    /// Depth regression pairs; the last column is the target.
    Depth,
    /// Split, standardized gesture sequences.
    Dataset,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchiveHeader {
    pub version: u32,
    pub kind: ArchiveKind,
    pub dim: usize,
    pub rows: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stats_id: Option<String>,
    #[serde(default)]
    pub meta: Value,
}

impl ArchiveHeader {
    pub fn new(kind: ArchiveKind, dim: usize, rows: usize) -> Self {
        ArchiveHeader {
            version: FORMAT_VERSION,
            kind,
            dim,
            rows,
            stats_id: None,
            meta: Value::Null,
        }
    }
}

pub fn encode(header: &ArchiveHeader, payload: &[f32]) -> Result<Vec<u8>> {
    if payload.len() != header.rows * header.dim {
        return Err(Error::DimensionMismatch {
            expected: header.rows * header.dim,
            got: payload.len(),
        });
    }
    let head = serde_json::to_vec(header)?;
    let head_len = u32::try_from(head.len()).map_err(|_| Error::InvalidArgument("header too large".into()))?;
    let mut out = Vec::with_capacity(12 + head.len() + 4 * payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&head_len.to_le_bytes());
    out.extend_from_slice(&head);
    for v in payload {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<(ArchiveHeader, Vec<f32>)> {
    if bytes.len() < 12 {
        return Err(Error::Corrupt(format!("{} bytes is shorter than the preamble", bytes.len())));
    }
    if &bytes[..8] != MAGIC {
        return Err(Error::Corrupt("bad magic".into()));
    }
    let head_len = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let head_end = 12usize
        .checked_add(head_len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| Error::Corrupt("header extends past end of file".into()))?;
    let raw: Value = serde_json::from_slice(&bytes[12..head_end]).map_err(|e| Error::Corrupt(format!("header: {e}")))?;
    let version = raw
        .get("version")
        .and_then(Value::as_u64)
        .ok_or_else(|| Error::Corrupt("header lacks a version".into()))?;
    if version != FORMAT_VERSION as u64 {
        return Err(Error::UnsupportedVersion {
            found: version as u32,
            expected: FORMAT_VERSION,
        });
    }
    let header: ArchiveHeader = serde_json::from_value(raw).map_err(|e| Error::Corrupt(format!("header: {e}")))?;
    let count = header
        .rows
        .checked_mul(header.dim)
        .ok_or_else(|| Error::Corrupt("payload size overflows".into()))?;
    let body = &bytes[head_end..];
    if body.len() != count * 4 {
        return Err(Error::Corrupt(format!(
            "payload has {} bytes, header declares {} values",
            body.len(),
            count
        )));
    }
    let payload = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    Ok((header, payload))
}

/// Writes an archive, returning the number of bytes written.
pub fn write_archive(path: impl AsRef<Path>, header: &ArchiveHeader, payload: &[f32]) -> Result<u64> {
    let path = path.as_ref();
    let bytes = encode(header, payload)?;
    std::fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;
    Ok(bytes.len() as u64)
}

pub fn read_archive(path: impl AsRef<Path>) -> Result<(ArchiveHeader, Vec<f32>)> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

/// Feature dimension of a fused frame for hand embeddings of size `embed_dim`.
pub fn fused_dim(embed_dim: usize) -> usize {
    2 * embed_dim + DYNAMIC_POSE_DIM
}

pub(crate) fn check_fused(dim: usize, embed_dim: usize) -> Result<()> {
    if dim != fused_dim(embed_dim) {
        return Err(Error::DimensionMismatch {
            expected: fused_dim(embed_dim),
            got: dim,
        });
    }
    Ok(())
}

fn mask_to_string(mask: &[bool]) -> String {
    mask.iter().map(|&m| if m { '1' } else { '0' }).collect()
}

fn mask_from_str(s: &str) -> Result<Vec<bool>> {
    s.chars()
        .map(|c| match c {
            '0' => Ok(false),
            '1' => Ok(true),
            _ => Err(Error::Corrupt(format!("bad mask character {c:?}"))),
        })
        .collect()
}

pub(crate) fn sequence_meta(seq: &GestureSequence) -> Value {
    json!({
        "source_id": seq.source_id,
        "label": seq.label,
        "embed_dim": seq.embed_dim,
        "mask": mask_to_string(&seq.mask),
    })
}

pub(crate) fn sequence_from_meta(meta: &Value, data: Vec<f32>, dim: usize, stats_id: Option<String>) -> Result<GestureSequence> {
    let embed_dim = meta
        .get("embed_dim")
        .and_then(Value::as_u64)
        .ok_or_else(|| Error::Corrupt("sequence lacks embed_dim".into()))? as usize;
    check_fused(dim, embed_dim)?;
    let mask = mask_from_str(meta.get("mask").and_then(Value::as_str).unwrap_or(""))?;
    if mask.len() != SEQ_LEN {
        return Err(Error::Corrupt(format!("mask has {} frames, expected {SEQ_LEN}", mask.len())));
    }
    let label = match meta.get("label") {
        None | Some(Value::Null) => None,
        Some(v) => Some(
            v.as_u64()
                .and_then(|l| u32::try_from(l).ok())
                .ok_or_else(|| Error::Corrupt("label is not an integer".into()))?,
        ),
    };
    Ok(GestureSequence {
        source_id: meta.get("source_id").and_then(Value::as_str).unwrap_or_default().to_string(),
        label,
        embed_dim,
        dim,
        data,
        mask,
        stats_id,
    })
}

/// Writes one fixed-length gesture sequence; returns the byte count.
pub fn write_feature_archive(seq: &GestureSequence, path: impl AsRef<Path>) -> Result<u64> {
    seq.validate()?;
    let mut header = ArchiveHeader::new(ArchiveKind::Seq, seq.dim, SEQ_LEN);
    header.stats_id = seq.stats_id.clone();
    header.meta = sequence_meta(seq);
    write_archive(path, &header, &seq.data)
}

pub fn read_feature_archive(path: impl AsRef<Path>) -> Result<GestureSequence> {
    let (header, payload) = read_archive(path)?;
    sequence_from_header(header, payload)
}

pub fn sequence_from_header(header: ArchiveHeader, payload: Vec<f32>) -> Result<GestureSequence> {
    if header.kind != ArchiveKind::Seq {
        return Err(Error::Corrupt(format!("expected a SEQ archive, found {:?}", header.kind)));
    }
    if header.rows != SEQ_LEN {
        return Err(Error::Corrupt(format!("sequence has {} frames, expected {SEQ_LEN}", header.rows)));
    }
    sequence_from_meta(&header.meta, payload, header.dim, header.stats_id)
}
