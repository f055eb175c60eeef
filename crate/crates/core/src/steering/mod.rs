// SPDX-License-Identifier: MIT OR Apache-2.0

//! Language steering vectors.
//!
//! A vector for layer `t` is the mean, over paired extraction texts, of the
//! target-language pooled state minus the source-language pooled state.
//! At inference it is added, scaled, to the residual stream after block `t`
//! on a chosen set of prompt positions.

mod io;
mod positions;

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::RenderedPrompt;
use crate::error::{Error, Result};
use crate::model::{ActivationTrace, InterventionSpec, TokenId, ToyModel};
use crate::seed::sha256_hex;

pub use io::{
    export_activation_dump, import_activation_dump, load_vector, save_vector, DUMP_MAGIC,
    VECTOR_FORMAT_VERSION,
};
pub use positions::{resolve_positions, PositionMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    Mean,
    Last,
}

impl std::fmt::Display for Pooling {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Pooling::Mean => "mean",
            Pooling::Last => "last",
        })
    }
}

impl std::str::FromStr for Pooling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Pooling::Mean),
            "last" => Ok(Pooling::Last),
            _ => Err(Error::arg(format!("unknown pooling {s:?} (mean|last)"))),
        }
    }
}

/// Provenance carried by every vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VectorMeta {
    pub model_id: String,
    pub source_lang: String,
    pub target_lang: String,
    pub task: String,
    pub pooling: Pooling,
    pub n_samples: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteeringVector {
    pub layer: usize,
    pub values: Vec<f32>,
    pub meta: VectorMeta,
}

impl SteeringVector {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn l2_norm(&self) -> f64 {
        self.values.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt()
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if self.layer == 0 {
            return Err(Error::arg("vector layer must be >= 1"));
        }
        if self.values.iter().any(|x| !x.is_finite()) {
            return Err(Error::arg("vector has non-finite values"));
        }
        Ok(())
    }
}

/// Inference-time recipe: add `scale * vector` after block `layer` on the
/// positions selected by `position_mode`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteeringPlan {
    pub layer: usize,
    pub scale: f32,
    pub position_mode: PositionMode,
    pub vector: SteeringVector,
}

impl SteeringPlan {
    pub fn new(vector: SteeringVector, scale: f32, position_mode: PositionMode) -> Result<Self> {
        vector.validate()?;
        if !scale.is_finite() {
            return Err(Error::arg("steering scale must be finite"));
        }
        Ok(Self {
            layer: vector.layer,
            scale,
            position_mode,
            vector,
        })
    }

    /// The concrete edit for one rendered prompt. An empty position set is
    /// legal and leaves the forward pass unchanged.
    pub fn intervention(&self, prompt: &RenderedPrompt) -> Result<InterventionSpec> {
        if self.layer != self.vector.layer {
            return Err(Error::arg(format!(
                "plan layer {} differs from vector layer {}",
                self.layer, self.vector.layer
            )));
        }
        let positions = resolve_positions(prompt, self.position_mode)?;
        if positions.is_empty() {
            log::debug!("{:?} selects no tokens; steering is a no-op", self.position_mode);
        }
        Ok(InterventionSpec {
            layer: self.layer,
            positions,
            delta: self.vector.values.clone(),
            scale: self.scale,
        })
    }

    /// Hex digest identifying layer, scale, mode and vector bits.
    pub fn digest(&self) -> String {
        let mut bytes = Vec::with_capacity(16 + 4 * self.vector.values.len());
        bytes.extend_from_slice(&(self.layer as u64).to_le_bytes());
        bytes.extend_from_slice(&self.scale.to_bits().to_le_bytes());
        bytes.push(self.position_mode as u8);
        for v in &self.vector.values {
            bytes.extend_from_slice(&v.to_bits().to_le_bytes());
        }
        sha256_hex(&bytes)
    }
}

/// Greedy continuation of a rendered prompt under an optional plan.
pub fn generate_steered(
    model: &ToyModel,
    prompt: &RenderedPrompt,
    plan: Option<&SteeringPlan>,
    max_new_tokens: usize,
    stop: &[TokenId],
) -> Result<Vec<TokenId>> {
    let edits = match plan {
        Some(p) => {
            if p.vector.dim() != model.hidden_size() {
                return Err(Error::arg(format!(
                    "vector dim {} does not match model hidden size {}",
                    p.vector.dim(),
                    model.hidden_size()
                )));
            }
            vec![p.intervention(prompt)?]
        }
        None => Vec::new(),
    };
    model.generate(&prompt.tokens, &edits, max_new_tokens, stop)
}

/// `N x dim` pooled states for one language at one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PooledStateSet {
    pub layer: usize,
    pub dim: usize,
    pub lang: String,
    pub pooling: Pooling,
    pub model_id: String,
    /// Row-major `n x dim`.
    pub rows: Vec<f32>,
    /// SHA-256 of each source text (empty when imported from a dump).
    #[serde(default)]
    pub text_hashes: Vec<String>,
}

impl PooledStateSet {
    pub fn n(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.rows.len() / self.dim
        }
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.rows[i * self.dim..(i + 1) * self.dim]
    }
}

/// Pool one trace. Mean pooling sums rows in order in `f64`.
pub fn pool_trace(trace: &ActivationTrace, pooling: Pooling) -> Result<Vec<f32>> {
    if trace.seq_len == 0 {
        return Err(Error::arg("cannot pool an empty trace"));
    }
    Ok(match pooling {
        Pooling::Last => trace.row(trace.seq_len - 1).to_vec(),
        Pooling::Mean => {
            let mut acc = vec![0.0f64; trace.dim];
            for j in 0..trace.seq_len {
                for (a, &x) in acc.iter_mut().zip(trace.row(j)) {
                    *a += f64::from(x);
                }
            }
            let len = trace.seq_len as f64;
            acc.into_iter().map(|a| (a / len) as f32).collect()
        }
    })
}

/// Pooled states of `texts` at one layer.
pub fn pooled_hidden_states(
    model: &ToyModel,
    texts: &[String],
    lang: &str,
    layer: usize,
    pooling: Pooling,
) -> Result<PooledStateSet> {
    let mut sets = pooled_hidden_states_multi(model, texts, lang, &BTreeSet::from([layer]), pooling)?;
    Ok(sets.remove(&layer).expect("requested layer present"))
}

/// Pooled states for several layers from one forward pass per text. Texts
/// are processed in parallel; rows keep input order.
pub fn pooled_hidden_states_multi(
    model: &ToyModel,
    texts: &[String],
    lang: &str,
    layers: &BTreeSet<usize>,
    pooling: Pooling,
) -> Result<BTreeMap<usize, PooledStateSet>> {
    if texts.is_empty() {
        return Err(Error::arg("no texts to pool"));
    }
    if let Some(&bad) = layers.iter().find(|&&l| l == 0 || l > model.num_layers()) {
        return Err(Error::arg(format!(
            "layer {bad} outside [1, {}]",
            model.num_layers()
        )));
    }
    let pooled: Vec<BTreeMap<usize, Vec<f32>>> = texts
        .par_iter()
        .enumerate()
        .map(|(i, text)| {
            let tokens = model.vocab().tokenize(text)?;
            if tokens.is_empty() {
                return Err(Error::arg(format!("text {i} tokenizes to zero tokens")));
            }
            let traces = model.capture(&tokens, layers)?;
            traces
                .iter()
                .map(|(&l, tr)| Ok((l, pool_trace(tr, pooling)?)))
                .collect()
        })
        .collect::<Result<_>>()?;
    let hashes: Vec<String> = texts.iter().map(|t| sha256_hex(t.as_bytes())).collect();
    let d = model.hidden_size();
    Ok(layers
        .iter()
        .map(|&l| {
            let mut rows = Vec::with_capacity(texts.len() * d);
            for p in &pooled {
                rows.extend_from_slice(&p[&l]);
            }
            (
                l,
                PooledStateSet {
                    layer: l,
                    dim: d,
                    lang: lang.to_string(),
                    pooling,
                    model_id: model.id().to_string(),
                    rows,
                    text_hashes: hashes.clone(),
                },
            )
        })
        .collect())
}

/// Running sum of target-minus-source differences, reduced in sample order.
#[derive(Debug, Clone)]
pub struct VectorAccumulator {
    sum: Vec<f64>,
    count: usize,
}

impl VectorAccumulator {
    pub fn new(dim: usize) -> Self {
        Self {
            sum: vec![0.0; dim],
            count: 0,
        }
    }

    pub fn push(&mut self, source: &[f32], target: &[f32]) -> Result<()> {
        if source.len() != self.sum.len() || target.len() != self.sum.len() {
            return Err(Error::arg("pooled row length differs from accumulator dim"));
        }
        for ((s, &a), &b) in self.sum.iter_mut().zip(source).zip(target) {
            *s += f64::from(b) - f64::from(a);
        }
        self.count += 1;
        Ok(())
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn mean(&self) -> Result<Vec<f32>> {
        if self.count == 0 {
            return Err(Error::arg("no samples accumulated"));
        }
        let n = self.count as f64;
        Ok(self.sum.iter().map(|&s| (s / n) as f32).collect())
    }
}

/// `v = (1/N) Σ_i (target_i − source_i)`. Task and seed metadata are left
/// empty for the caller to fill.
pub fn compute_language_vector(
    source: &PooledStateSet,
    target: &PooledStateSet,
) -> Result<SteeringVector> {
    if source.layer != target.layer {
        return Err(Error::arg(format!(
            "layer mismatch: source {} vs target {}",
            source.layer, target.layer
        )));
    }
    if source.dim != target.dim || source.n() != target.n() {
        return Err(Error::arg(format!(
            "shape mismatch: source {}x{} vs target {}x{}",
            source.n(),
            source.dim,
            target.n(),
            target.dim
        )));
    }
    if source.pooling != target.pooling {
        return Err(Error::arg("pooling mismatch between source and target"));
    }
    if source.n() == 0 {
        return Err(Error::arg("pooled state sets are empty"));
    }
    let mut acc = VectorAccumulator::new(source.dim);
    for i in 0..source.n() {
        acc.push(source.row(i), target.row(i))?;
    }
    Ok(SteeringVector {
        layer: source.layer,
        values: acc.mean()?,
        meta: VectorMeta {
            model_id: source.model_id.clone(),
            source_lang: source.lang.clone(),
            target_lang: target.lang.clone(),
            task: String::new(),
            pooling: source.pooling,
            n_samples: source.n(),
            seed: 0,
        },
    })
}
