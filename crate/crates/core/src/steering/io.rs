// SPDX-License-Identifier: MIT OR Apache-2.0

//! Vector JSON files and binary activation dumps.
//!
//! Activation dump layout:
//!
//! ```text
//! "LVAD1\n"
//! u32 LE header length, UTF-8 JSON {layer, dim, n, lang, pooling, model_id}
//! n x dim f32 LE, row-major
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{PooledStateSet, Pooling, SteeringVector, VectorMeta};
use crate::error::{Error, Result};
use crate::model::Reader;

pub const VECTOR_FORMAT_VERSION: u32 = 1;
pub const DUMP_MAGIC: &[u8; 6] = b"LVAD1\n";

#[derive(Serialize, Deserialize)]
struct VectorFile {
    format_version: u32,
    layer: usize,
    dim: usize,
    values: Vec<f32>,
    meta: VectorMeta,
}

pub fn save_vector(vector: &SteeringVector, path: &Path) -> Result<()> {
    let file = VectorFile {
        format_version: VECTOR_FORMAT_VERSION,
        layer: vector.layer,
        dim: vector.dim(),
        values: vector.values.clone(),
        meta: vector.meta.clone(),
    };
    let text = serde_json::to_string_pretty(&file)?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn load_vector(path: &Path) -> Result<SteeringVector> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_vector(&text)
}

pub(crate) fn parse_vector(text: &str) -> Result<SteeringVector> {
    let raw: serde_json::Value =
        serde_json::from_str(text).map_err(|e| Error::format(format!("vector file: {e}")))?;
    match raw.get("format_version").and_then(|v| v.as_u64()) {
        Some(v) if v == u64::from(VECTOR_FORMAT_VERSION) => {}
        other => {
            return Err(Error::format(format!(
                "unsupported vector format_version {}; supported versions: [{VECTOR_FORMAT_VERSION}]",
                other.map_or_else(|| "missing".to_string(), |v| v.to_string())
            )))
        }
    }
    let file: VectorFile =
        serde_json::from_value(raw).map_err(|e| Error::format(format!("vector file: {e}")))?;
    if file.values.len() != file.dim {
        return Err(Error::Integrity(format!(
            "vector declares dim {} but stores {} values",
            file.dim,
            file.values.len()
        )));
    }
    let v = SteeringVector {
        layer: file.layer,
        values: file.values,
        meta: file.meta,
    };
    v.validate()?;
    Ok(v)
}

#[derive(Serialize, Deserialize)]
struct DumpHeader {
    layer: usize,
    dim: usize,
    n: usize,
    lang: String,
    pooling: Pooling,
    model_id: String,
}

/// Write pooled states for external inspection.
pub fn export_activation_dump(set: &PooledStateSet, path: &Path) -> Result<()> {
    let n = set.n();
    if n == 0 {
        return Err(Error::arg("refusing to export an activation dump with zero rows"));
    }
    if set.rows.len() != n * set.dim {
        return Err(Error::arg("pooled rows are not a whole number of dim-sized rows"));
    }
    let header = serde_json::to_vec(&DumpHeader {
        layer: set.layer,
        dim: set.dim,
        n,
        lang: set.lang.clone(),
        pooling: set.pooling,
        model_id: set.model_id.clone(),
    })?;
    let mut out = Vec::with_capacity(DUMP_MAGIC.len() + 4 + header.len() + 4 * set.rows.len());
    out.extend_from_slice(DUMP_MAGIC);
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    for x in &set.rows {
        out.extend_from_slice(&x.to_le_bytes());
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Read a dump written by [`export_activation_dump`].
pub fn import_activation_dump(path: &Path) -> Result<PooledStateSet> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_dump(&bytes)
}

fn decode_dump(bytes: &[u8]) -> Result<PooledStateSet> {
    let mut r = Reader::new(bytes);
    if r.take(DUMP_MAGIC.len(), "magic").ok() != Some(&DUMP_MAGIC[..]) {
        return Err(Error::format("bad magic bytes: not an LVAD1 activation dump"));
    }
    let hlen = r.u32("header length")? as usize;
    let h: DumpHeader = serde_json::from_slice(r.take(hlen, "header")?)
        .map_err(|e| Error::format(format!("malformed dump header: {e}")))?;
    let count = h
        .n
        .checked_mul(h.dim)
        .ok_or_else(|| Error::format("dump size overflows"))?;
    let rows = r.f32s(count, "activation rows")?;
    if !r.at_end() {
        return Err(Error::Integrity("trailing bytes after activation rows".into()));
    }
    Ok(PooledStateSet {
        layer: h.layer,
        dim: h.dim,
        lang: h.lang,
        pooling: h.pooling,
        model_id: h.model_id,
        rows,
        text_hashes: Vec::new(),
    })
}
