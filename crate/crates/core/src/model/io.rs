// SPDX-License-Identifier: MIT OR Apache-2.0

//! Model file format.
//!
//! ```text
//! "LVTM1\n"
//! u32 LE header length, then UTF-8 JSON header (ModelConfig fields + "vocab")
//! repeated, in sorted name order:
//!   u32 LE name length, name bytes,
//!   u32 LE rank, rank x u64 LE dims,
//!   prod(dims) x f32 LE
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::shapes;
use super::{ModelConfig, Params, ToyModel, Vocab};
use crate::error::{Error, Result};
use crate::seed::sha256_hex;

pub const MODEL_MAGIC: &[u8; 6] = b"LVTM1\n";

#[derive(Serialize, Deserialize)]
struct Header {
    #[serde(flatten)]
    config: ModelConfig,
    vocab: Vocab,
}

fn encode(config: &ModelConfig, vocab: &Vocab, params: &Params) -> Vec<u8> {
    let header = serde_json::to_vec(&Header {
        config: config.clone(),
        vocab: vocab.clone(),
    })
    .expect("header serializes");
    let mut out = Vec::new();
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    for (name, shape, data) in params.tensors(config) {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for dim in &shape {
            out.extend_from_slice(&(*dim as u64).to_le_bytes());
        }
        for x in data {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

pub(crate) fn model_hash(config: &ModelConfig, vocab: &Vocab, params: &Params) -> String {
    sha256_hex(&encode(config, vocab, params))
}

/// Write `model` to `path`.
pub fn save_model(model: &ToyModel, path: &Path) -> Result<()> {
    let bytes = encode(model.config(), model.vocab(), model.params());
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Read a model written by [`save_model`].
pub fn load_model(path: &Path) -> Result<ToyModel> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            Error::format(format!("truncated file while reading {what} at byte {}", self.pos))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub(crate) fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    pub(crate) fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    pub(crate) fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| Error::format("size overflow"))?, what)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }

    pub(crate) fn at_end(&self) -> bool {
        self.pos == self.buf.len()
    }
}

fn decode(bytes: &[u8]) -> Result<ToyModel> {
    let mut r = Reader::new(bytes);
    if r.take(MODEL_MAGIC.len(), "magic").ok() != Some(&MODEL_MAGIC[..]) {
        return Err(Error::format("bad magic bytes: not an LVTM1 model file"));
    }
    let hlen = r.u32("header length")? as usize;
    let header: Header = serde_json::from_slice(r.take(hlen, "header")?)
        .map_err(|e| Error::format(format!("malformed model header: {e}")))?;
    let config = header.config;
    config
        .validate()
        .map_err(|e| Error::Integrity(format!("header config invalid: {e}")))?;

    let mut expected = shapes(&config);
    expected.sort_by(|a, b| a.0.cmp(&b.0));
    let mut params = Params::zeros(&config);
    let mut slots = params.tensors_mut(&config);
    for ((want_name, want_shape), slot) in expected.iter().zip(slots.iter_mut()) {
        if r.at_end() {
            return Err(Error::Integrity(format!("tensor {want_name} missing")));
        }
        let nlen = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(nlen, "tensor name")?)
            .map_err(|_| Error::format("tensor name is not UTF-8"))?
            .to_string();
        if &name != want_name {
            return Err(Error::Integrity(format!(
                "expected tensor {want_name}, found {name}"
            )));
        }
        let rank = r.u32("rank")? as usize;
        if rank > 8 {
            return Err(Error::format(format!("tensor {name} has implausible rank {rank}")));
        }
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(r.u64("dims")? as usize);
        }
        if &dims != want_shape {
            return Err(Error::Integrity(format!(
                "tensor {name} has shape {dims:?}, config implies {want_shape:?}"
            )));
        }
        let count = dims.iter().product();
        *slot.2 = r.f32s(count, &name)?;
    }
    drop(slots);
    if !r.at_end() {
        return Err(Error::Integrity("trailing bytes after last tensor".into()));
    }
    ToyModel::new(config, header.vocab, params)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> ToyModel {
        let cfg = ModelConfig {
            num_layers: 2,
            hidden_size: 8,
            num_heads: 2,
            vocab_size: 4,
            max_seq_len: 5,
            seed: 11,
        };
        let vocab = Vocab::new(vec!["a".into(), "b".into(), "c".into(), " ".into()]).unwrap();
        ToyModel::init(cfg, vocab).unwrap()
    }

    #[test]
    fn save_load_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.lvtm");
        let m = model();
        save_model(&m, &path).unwrap();
        let back = load_model(&path).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.id(), m.id());
        let again = dir.path().join("m2.lvtm");
        save_model(&back, &again).unwrap();
        assert_eq!(fs::read(&path).unwrap(), fs::read(&again).unwrap());
    }

    #[test]
    fn wrong_magic_is_format_error() {
        let mut bytes = encode(model().config(), model().vocab(), model().params());
        bytes[0] = b'X';
        assert!(matches!(decode(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn truncated_is_format_error() {
        let bytes = encode(model().config(), model().vocab(), model().params());
        assert!(matches!(decode(&bytes[..bytes.len() - 3]), Err(Error::Format(_))));
    }

    #[test]
    fn dimension_mismatch_is_integrity_error() {
        // declare hidden_size 8 in the header but write a 7-column embedding
        let m = model();
        let mut params = m.params().clone();
        params.tok_emb.truncate(4 * 7);
        let cfg = m.config().clone();
        let header = serde_json::to_vec(&Header {
            config: cfg.clone(),
            vocab: m.vocab().clone(),
        })
        .unwrap();
        let mut out = Vec::new();
        out.extend_from_slice(MODEL_MAGIC);
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for (name, shape, data) in params.tensors(&cfg) {
            let shape = if name == "tok_emb" { vec![4, 7] } else { shape };
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
            for d in &shape {
                out.extend_from_slice(&(*d as u64).to_le_bytes());
            }
            for x in data {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        assert!(matches!(decode(&out), Err(Error::Integrity(_))));
    }
}
