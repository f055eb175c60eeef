// SPDX-License-Identifier: MIT OR Apache-2.0

//! Inference forward pass with residual-stream capture and injection.
//!
//! The same row-wise kernel serves full forwards and incremental decoding,
//! so a prompt processed in one chunk and then extended token by token
//! yields bit-identical values to one long forward.

use std::collections::{BTreeMap, BTreeSet};

use super::{TokenId, ToyModel};
use crate::error::{Error, Result};

pub(crate) const LN_EPS: f32 = 1e-5;

/// One residual-stream edit: `h_p(t) += scale * delta` for `p` in `positions`.
#[derive(Debug, Clone, PartialEq)]
pub struct InterventionSpec {
    /// 1-based block index whose output is edited.
    pub layer: usize,
    /// Sorted, de-duplicated absolute token positions.
    pub positions: Vec<usize>,
    pub delta: Vec<f32>,
    pub scale: f32,
}

/// Captured residual stream of one layer, `seq_len x dim` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationTrace {
    pub layer: usize,
    pub seq_len: usize,
    pub dim: usize,
    pub states: Vec<f32>,
}

impl ActivationTrace {
    pub fn row(&self, j: usize) -> &[f32] {
        &self.states[j * self.dim..(j + 1) * self.dim]
    }
}

/// Logits for every position plus any requested traces.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    pub logits: Vec<f32>,
    pub vocab_size: usize,
    pub traces: BTreeMap<usize, ActivationTrace>,
}

impl ForwardOutput {
    pub fn logits_at(&self, j: usize) -> &[f32] {
        &self.logits[j * self.vocab_size..(j + 1) * self.vocab_size]
    }
}

#[derive(Debug, Clone)]
struct LayerCache {
    k: Vec<f32>,
    v: Vec<f32>,
}

#[derive(Debug, Clone)]
struct KvCache {
    layers: Vec<LayerCache>,
    len: usize,
}

impl KvCache {
    fn new(num_layers: usize) -> Self {
        Self {
            layers: vec![
                LayerCache {
                    k: Vec::new(),
                    v: Vec::new()
                };
                num_layers
            ],
            len: 0,
        }
    }
}

/// Interventions after merging identical `(layer, positions, delta)` entries.
#[derive(Debug, Clone)]
struct Edit<'a> {
    layer: usize,
    positions: &'a [usize],
    delta: &'a [f32],
    scale: f32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum LogitRows {
    All,
    Last,
    None,
}

impl ToyModel {
    /// Full forward pass over `tokens` with residual edits applied after the
    /// named blocks. Traces for `capture_layers` are taken after the edit.
    pub fn forward_with_interventions(
        &self,
        tokens: &[TokenId],
        interventions: &[InterventionSpec],
        capture_layers: &BTreeSet<usize>,
    ) -> Result<ForwardOutput> {
        self.check_tokens(tokens)?;
        self.check_capture(capture_layers)?;
        let edits = self.coalesce(interventions, tokens.len())?;
        let mut cache = KvCache::new(self.num_layers());
        let mut traces = BTreeMap::new();
        let logits = self.run_chunk(
            tokens,
            &mut cache,
            &edits,
            Some((capture_layers, &mut traces)),
            LogitRows::All,
        );
        Ok(ForwardOutput {
            logits,
            vocab_size: self.config().vocab_size,
            traces,
        })
    }

    /// Residual traces only; skips the output head.
    pub fn capture(
        &self,
        tokens: &[TokenId],
        layers: &BTreeSet<usize>,
    ) -> Result<BTreeMap<usize, ActivationTrace>> {
        self.check_tokens(tokens)?;
        self.check_capture(layers)?;
        let mut cache = KvCache::new(self.num_layers());
        let mut traces = BTreeMap::new();
        self.run_chunk(tokens, &mut cache, &[], Some((layers, &mut traces)), LogitRows::None);
        Ok(traces)
    }

    /// Greedy decoding. Edits are validated against the prompt, so only
    /// prompt positions are ever steered; generated tokens see the edit
    /// through the cached keys and values. Stops early after emitting any
    /// token in `stop`.
    pub fn generate(
        &self,
        prompt: &[TokenId],
        interventions: &[InterventionSpec],
        max_new_tokens: usize,
        stop: &[TokenId],
    ) -> Result<Vec<TokenId>> {
        self.check_tokens(prompt)?;
        let cap = self.config().max_seq_len;
        if prompt.len() + max_new_tokens > cap {
            return Err(Error::Capacity(format!(
                "prompt of {} tokens plus {max_new_tokens} new tokens exceeds max_seq_len {cap}",
                prompt.len()
            )));
        }
        let edits = self.coalesce(interventions, prompt.len())?;
        let mut out = Vec::with_capacity(max_new_tokens);
        if max_new_tokens == 0 {
            return Ok(out);
        }
        let mut cache = KvCache::new(self.num_layers());
        let mut logits = self.run_chunk(prompt, &mut cache, &edits, None, LogitRows::Last);
        loop {
            let next = argmax(&logits);
            out.push(next);
            if out.len() == max_new_tokens || stop.contains(&next) {
                break;
            }
            logits = self.run_chunk(&[next], &mut cache, &[], None, LogitRows::Last);
        }
        Ok(out)
    }

    fn check_tokens(&self, tokens: &[TokenId]) -> Result<()> {
        if tokens.is_empty() {
            return Err(Error::arg("token sequence is empty"));
        }
        let cfg = self.config();
        if tokens.len() > cfg.max_seq_len {
            return Err(Error::Capacity(format!(
                "{} tokens exceed max_seq_len {}",
                tokens.len(),
                cfg.max_seq_len
            )));
        }
        if let Some(&bad) = tokens.iter().find(|&&t| t as usize >= cfg.vocab_size) {
            return Err(Error::arg(format!("token id {bad} outside vocab")));
        }
        Ok(())
    }

    fn check_capture(&self, layers: &BTreeSet<usize>) -> Result<()> {
        match layers.iter().find(|&&l| l == 0 || l > self.num_layers()) {
            Some(l) => Err(Error::arg(format!(
                "capture layer {l} outside [1, {}]",
                self.num_layers()
            ))),
            None => Ok(()),
        }
    }

    fn coalesce<'a>(&self, specs: &'a [InterventionSpec], len: usize) -> Result<Vec<Edit<'a>>> {
        let d = self.hidden_size();
        let mut edits: Vec<Edit<'a>> = Vec::new();
        for s in specs {
            if s.layer == 0 || s.layer > self.num_layers() {
                return Err(Error::arg(format!(
                    "intervention layer {} outside [1, {}]",
                    s.layer,
                    self.num_layers()
                )));
            }
            if s.delta.len() != d {
                return Err(Error::arg(format!(
                    "intervention delta has {} values, hidden size is {d}",
                    s.delta.len()
                )));
            }
            if s.delta.iter().any(|x| !x.is_finite()) || !s.scale.is_finite() {
                return Err(Error::arg("intervention delta or scale is not finite"));
            }
            if !s.positions.windows(2).all(|w| w[0] < w[1]) {
                return Err(Error::arg("intervention positions must be strictly increasing"));
            }
            if let Some(&p) = s.positions.last() {
                if p >= len {
                    return Err(Error::arg(format!(
                        "intervention position {p} outside prompt of length {len}"
                    )));
                }
            }
            let same = edits.iter_mut().find(|e| {
                e.layer == s.layer
                    && e.positions == s.positions.as_slice()
                    && e.delta.iter().zip(&s.delta).all(|(a, b)| a.to_bits() == b.to_bits())
            });
            match same {
                Some(e) => e.scale += s.scale,
                None => edits.push(Edit {
                    layer: s.layer,
                    positions: &s.positions,
                    delta: &s.delta,
                    scale: s.scale,
                }),
            }
        }
        edits.retain(|e| e.scale != 0.0 && !e.positions.is_empty() && e.delta.iter().any(|&x| x != 0.0));
        Ok(edits)
    }

    fn run_chunk(
        &self,
        tokens: &[TokenId],
        cache: &mut KvCache,
        edits: &[Edit<'_>],
        mut capture: Option<(&BTreeSet<usize>, &mut BTreeMap<usize, ActivationTrace>)>,
        rows: LogitRows,
    ) -> Vec<f32> {
        let cfg = self.config();
        let p = self.params();
        let d = cfg.hidden_size;
        let n = tokens.len();
        let start = cache.len;
        let m = cfg.mlp_size();

        let mut x = vec![0.0f32; n * d];
        for (i, &t) in tokens.iter().enumerate() {
            let te = &p.tok_emb[t as usize * d..(t as usize + 1) * d];
            let pe = &p.pos_emb[(start + i) * d..(start + i + 1) * d];
            for ((o, a), b) in x[i * d..(i + 1) * d].iter_mut().zip(te).zip(pe) {
                *o = a + b;
            }
        }

        let mut a = vec![0.0f32; n * d];
        let mut q = vec![0.0f32; n * d];
        let mut kv = vec![0.0f32; n * d];
        let mut att = vec![0.0f32; n * d];
        let mut proj = vec![0.0f32; n * d];
        let mut hid = vec![0.0f32; n * m];
        let mut scores = vec![0.0f32; start + n];

        for (l, blk) in p.blocks.iter().enumerate() {
            let layer = l + 1;
            layer_norm_rows(&x, &blk.ln1_g, &blk.ln1_b, d, &mut a);
            matmul(&a, n, d, &blk.wq, d, &mut q);
            let lc = &mut cache.layers[l];
            matmul(&a, n, d, &blk.wk, d, &mut kv);
            lc.k.extend_from_slice(&kv);
            matmul(&a, n, d, &blk.wv, d, &mut kv);
            lc.v.extend_from_slice(&kv);
            attend(&q, &lc.k, &lc.v, start, n, d, cfg.num_heads, &mut scores, &mut att);
            matmul(&att, n, d, &blk.wo, d, &mut proj);
            add_into(&mut x, &proj);

            layer_norm_rows(&x, &blk.ln2_g, &blk.ln2_b, d, &mut a);
            matmul(&a, n, d, &blk.w1, m, &mut hid);
            for row in hid.chunks_exact_mut(m) {
                for (h, b) in row.iter_mut().zip(&blk.b1) {
                    *h = gelu(*h + b);
                }
            }
            matmul(&hid, n, m, &blk.w2, d, &mut proj);
            for (row, prow) in x.chunks_exact_mut(d).zip(proj.chunks_exact(d)) {
                for ((o, v), b) in row.iter_mut().zip(prow).zip(&blk.b2) {
                    *o += v + b;
                }
            }

            for e in edits.iter().filter(|e| e.layer == layer) {
                for &pos in e.positions {
                    if pos < start || pos >= start + n {
                        continue;
                    }
                    let row = &mut x[(pos - start) * d..(pos - start + 1) * d];
                    for (o, v) in row.iter_mut().zip(e.delta) {
                        *o += e.scale * v;
                    }
                }
            }

            if let Some((layers, traces)) = capture.as_mut() {
                if layers.contains(&layer) {
                    let tr = traces.entry(layer).or_insert_with(|| ActivationTrace {
                        layer,
                        seq_len: 0,
                        dim: d,
                        states: Vec::new(),
                    });
                    tr.states.extend_from_slice(&x);
                    tr.seq_len += n;
                }
            }
        }
        cache.len += n;

        let (first, count) = match rows {
            LogitRows::All => (0, n),
            LogitRows::Last => (n - 1, 1),
            LogitRows::None => return Vec::new(),
        };
        let sub = &x[first * d..(first + count) * d];
        let mut normed = vec![0.0f32; count * d];
        layer_norm_rows(sub, &p.lnf_g, &p.lnf_b, d, &mut normed);
        let v = cfg.vocab_size;
        let mut logits = vec![0.0f32; count * v];
        matmul(&normed, count, d, &p.head, v, &mut logits);
        logits
    }
}

/// First index of the maximum; NaNs never win.
pub(crate) fn argmax(xs: &[f32]) -> TokenId {
    let mut best = 0usize;
    for (i, &v) in xs.iter().enumerate() {
        if v > xs[best] {
            best = i;
        }
    }
    best as TokenId
}

/// `out[n, dout] = x[n, din] * w[din, dout]`, accumulated in index order.
pub(crate) fn matmul(x: &[f32], n: usize, din: usize, w: &[f32], dout: usize, out: &mut [f32]) {
    debug_assert_eq!(x.len(), n * din);
    debug_assert_eq!(w.len(), din * dout);
    let out = &mut out[..n * dout];
    out.fill(0.0);
    for (xr, or) in x.chunks_exact(din).zip(out.chunks_exact_mut(dout)) {
        for (k, &xv) in xr.iter().enumerate() {
            let wr = &w[k * dout..(k + 1) * dout];
            for (o, &wv) in or.iter_mut().zip(wr) {
                *o += xv * wv;
            }
        }
    }
}

pub(crate) fn layer_norm_rows(x: &[f32], g: &[f32], b: &[f32], d: usize, out: &mut [f32]) {
    for (xr, or) in x.chunks_exact(d).zip(out.chunks_exact_mut(d)) {
        let (mean, rstd) = ln_stats(xr);
        for i in 0..d {
            or[i] = (xr[i] - mean) * rstd * g[i] + b[i];
        }
    }
}

pub(crate) fn ln_stats(xr: &[f32]) -> (f32, f32) {
    let d = xr.len() as f32;
    let mean = xr.iter().sum::<f32>() / d;
    let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / d;
    (mean, 1.0 / (var + LN_EPS).sqrt())
}

const GELU_C: f32 = 0.797_884_6; // sqrt(2 / pi)

pub(crate) fn gelu(x: f32) -> f32 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044_715 * x * x * x)).tanh())
}

pub(crate) fn gelu_grad(x: f32) -> f32 {
    let inner = GELU_C * (x + 0.044_715 * x * x * x);
    let t = inner.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044_715 * x * x)
}

fn add_into(x: &mut [f32], y: &[f32]) {
    for (a, b) in x.iter_mut().zip(y) {
        *a += b;
    }
}

/// Causal multi-head attention for rows `start..start+n` against the cached
/// keys/values `0..start+n`.
#[allow(clippy::too_many_arguments)]
fn attend(
    q: &[f32],
    k: &[f32],
    v: &[f32],
    start: usize,
    n: usize,
    d: usize,
    heads: usize,
    scores: &mut [f32],
    out: &mut [f32],
) {
    let hd = d / heads;
    let scale = 1.0 / (hd as f32).sqrt();
    for i in 0..n {
        let pos = start + i;
        let qr = &q[i * d..(i + 1) * d];
        let or = &mut out[i * d..(i + 1) * d];
        for h in 0..heads {
            let qh = &qr[h * hd..(h + 1) * hd];
            let mut max = f32::NEG_INFINITY;
            for j in 0..=pos {
                let kh = &k[j * d + h * hd..j * d + (h + 1) * hd];
                let s = qh.iter().zip(kh).map(|(a, b)| a * b).sum::<f32>() * scale;
                scores[j] = s;
                if s > max {
                    max = s;
                }
            }
            let mut sum = 0.0f32;
            for s in scores[..=pos].iter_mut() {
                *s = (*s - max).exp();
                sum += *s;
            }
            let oh = &mut or[h * hd..(h + 1) * hd];
            oh.fill(0.0);
            for j in 0..=pos {
                let p = scores[j] / sum;
                let vh = &v[j * d + h * hd..j * d + (h + 1) * hd];
                for (o, &vv) in oh.iter_mut().zip(vh) {
                    *o += p * vv;
                }
            }
        }
    }
}
