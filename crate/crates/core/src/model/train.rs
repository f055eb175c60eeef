// SPDX-License-Identifier: MIT OR Apache-2.0

//! Small Adam trainer for the toy model (next-token cross-entropy).

use std::collections::BTreeSet;

use rand::Rng;

use super::forward::{gelu, gelu_grad, ln_stats, matmul};
use super::{ModelConfig, Params, TokenId, ToyModel, Vocab};
use crate::error::{Error, Result};
use crate::seed;

/// Optimizer settings for [`train_toy`].
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainOptions {
    pub steps: usize,
    pub learn_rate: f32,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    pub seed: u64,
}

fn default_batch() -> usize {
    8
}

/// Trained model plus its loss history.
#[derive(Debug, Clone)]
pub struct TrainReport {
    pub model: ToyModel,
    pub initial_loss: f32,
    pub final_loss: f32,
    /// Mini-batch loss at every step.
    pub step_losses: Vec<f32>,
}

/// Mean next-token cross-entropy of `model` over `corpus`, computed with the
/// inference forward pass.
pub fn mean_loss(model: &ToyModel, corpus: &[Vec<TokenId>]) -> Result<f32> {
    let mut total = 0.0f64;
    let mut count = 0usize;
    for seq in corpus {
        if seq.len() < 2 {
            continue;
        }
        let out = model.forward_with_interventions(&seq[..seq.len() - 1], &[], &BTreeSet::new())?;
        for (j, &target) in seq[1..].iter().enumerate() {
            let row = out.logits_at(j);
            total += f64::from(cross_entropy(row, target));
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::arg("corpus has no sequence of length >= 2"));
    }
    Ok((total / count as f64) as f32)
}

fn cross_entropy(logits: &[f32], target: TokenId) -> f32 {
    let max = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let lse = logits.iter().map(|&l| (l - max).exp()).sum::<f32>().ln() + max;
    lse - logits[target as usize]
}

/// Train a fresh model on `corpus` with Adam. Deterministic for a fixed
/// `options.seed` and `config.seed`.
pub fn train_toy(
    config: ModelConfig,
    vocab: Vocab,
    corpus: &[Vec<TokenId>],
    options: &TrainOptions,
) -> Result<TrainReport> {
    config.validate()?;
    if corpus.is_empty() {
        return Err(Error::arg("training corpus is empty"));
    }
    if options.steps == 0 || options.batch_size == 0 {
        return Err(Error::arg("steps and batch_size must be >= 1"));
    }
    if !(options.learn_rate.is_finite() && options.learn_rate > 0.0) {
        return Err(Error::arg("learn_rate must be positive and finite"));
    }
    for (i, seq) in corpus.iter().enumerate() {
        if seq.len() < 2 || seq.len() > config.max_seq_len + 1 {
            return Err(Error::arg(format!(
                "training sequence {i} has length {}, need 2..={}",
                seq.len(),
                config.max_seq_len + 1
            )));
        }
        if seq.iter().any(|&t| t as usize >= config.vocab_size) {
            return Err(Error::arg(format!("training sequence {i} has out-of-vocab ids")));
        }
    }

    let initial = ToyModel::init(config.clone(), vocab.clone())?;
    let initial_loss = mean_loss(&initial, corpus)?;
    let mut params = initial.params().clone();
    let mut adam = Adam::new(&config);
    let mut grads = Params::zeros(&config);
    let mut ws = Workspace::default();
    let mut step_losses = Vec::with_capacity(options.steps);

    for step in 0..options.steps {
        let mut rng = seed::rng(options.seed, "train-batch", &[step as u64]);
        let batch: Vec<&Vec<TokenId>> = (0..options.batch_size)
            .map(|_| &corpus[rng.random_range(0..corpus.len())])
            .collect();
        let targets: usize = batch.iter().map(|s| s.len() - 1).sum();
        zero(&mut grads, &config);
        let mut loss = 0.0f32;
        for seq in batch {
            loss += ws.forward_backward(&config, &params, seq, 1.0 / targets as f32, &mut grads);
        }
        let loss = loss / targets as f32;
        if !loss.is_finite() {
            return Err(Error::Divergence { step, loss });
        }
        step_losses.push(loss);
        let lr = schedule(options.learn_rate, step, options.steps);
        adam.update(&config, &mut params, &mut grads, lr);
    }

    let model = ToyModel::new(config, vocab, params)?;
    let final_loss = mean_loss(&model, corpus)?;
    if !final_loss.is_finite() {
        return Err(Error::Divergence {
            step: options.steps,
            loss: final_loss,
        });
    }
    if final_loss >= initial_loss {
        return Err(Error::arg(format!(
            "training did not reduce loss ({initial_loss} -> {final_loss}); raise steps or learn_rate"
        )));
    }
    Ok(TrainReport {
        model,
        initial_loss,
        final_loss,
        step_losses,
    })
}

/// Linear warmup over the first 5% of steps, then cosine decay to 10%.
fn schedule(base: f32, step: usize, total: usize) -> f32 {
    let warm = (total / 20).max(1);
    if step < warm {
        return base * (step + 1) as f32 / warm as f32;
    }
    let t = (step - warm) as f32 / (total - warm).max(1) as f32;
    base * (0.1 + 0.9 * 0.5 * (1.0 + (std::f32::consts::PI * t).cos()))
}

fn zero(p: &mut Params, config: &ModelConfig) {
    for (_, _, data) in p.tensors_mut(config) {
        data.fill(0.0);
    }
}

struct Adam {
    m: Params,
    v: Params,
    t: i32,
}

impl Adam {
    const B1: f32 = 0.9;
    const B2: f32 = 0.999;
    const EPS: f32 = 1e-8;
    const CLIP: f32 = 1.0;

    fn new(config: &ModelConfig) -> Self {
        Self {
            m: Params::zeros(config),
            v: Params::zeros(config),
            t: 0,
        }
    }

    fn update(&mut self, config: &ModelConfig, params: &mut Params, grads: &mut Params, lr: f32) {
        self.t += 1;
        let mut sq = 0.0f64;
        for (_, _, g) in grads.tensors(config) {
            sq += g.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>();
        }
        let norm = sq.sqrt() as f32;
        let clip = if norm > Self::CLIP { Self::CLIP / norm } else { 1.0 };
        let bc1 = 1.0 - Self::B1.powi(self.t);
        let bc2 = 1.0 - Self::B2.powi(self.t);
        let ps = params.tensors_mut(config);
        let gs = grads.tensors(config);
        let ms = self.m.tensors_mut(config);
        let vs = self.v.tensors_mut(config);
        for (((p, g), m), v) in ps.into_iter().zip(gs).zip(ms).zip(vs) {
            for i in 0..p.2.len() {
                let gi = g.2[i] * clip;
                m.2[i] = Self::B1 * m.2[i] + (1.0 - Self::B1) * gi;
                v.2[i] = Self::B2 * v.2[i] + (1.0 - Self::B2) * gi * gi;
                let mh = m.2[i] / bc1;
                let vh = v.2[i] / bc2;
                p.2[i] -= lr * mh / (vh.sqrt() + Self::EPS);
            }
        }
    }
}

/// Saved activations of one block for the backward pass.
#[derive(Default)]
struct BlockAct {
    xin: Vec<f32>,
    a1: Vec<f32>,
    q: Vec<f32>,
    k: Vec<f32>,
    v: Vec<f32>,
    probs: Vec<f32>,
    att: Vec<f32>,
    xmid: Vec<f32>,
    a2: Vec<f32>,
    pre: Vec<f32>,
    act: Vec<f32>,
}

#[derive(Default)]
struct Workspace {
    blocks: Vec<BlockAct>,
}

impl Workspace {
    /// Forward + backward for one sequence. Gradients are accumulated into
    /// `grads` scaled by `weight`; returns the summed (unscaled) loss.
    fn forward_backward(
        &mut self,
        cfg: &ModelConfig,
        p: &Params,
        seq: &[TokenId],
        weight: f32,
        grads: &mut Params,
    ) -> f32 {
        let d = cfg.hidden_size;
        let m = cfg.mlp_size();
        let heads = cfg.num_heads;
        let hd = cfg.head_dim();
        let vsz = cfg.vocab_size;
        let inputs = &seq[..seq.len() - 1];
        let targets = &seq[1..];
        let n = inputs.len();
        let scale = 1.0 / (hd as f32).sqrt();
        self.blocks.resize_with(cfg.num_layers, BlockAct::default);

        let mut x = vec![0.0f32; n * d];
        for (i, &t) in inputs.iter().enumerate() {
            for c in 0..d {
                x[i * d + c] = p.tok_emb[t as usize * d + c] + p.pos_emb[i * d + c];
            }
        }

        for (blk, act) in p.blocks.iter().zip(self.blocks.iter_mut()) {
            act.xin = x.clone();
            act.a1 = vec![0.0; n * d];
            super::forward::layer_norm_rows(&x, &blk.ln1_g, &blk.ln1_b, d, &mut act.a1);
            act.q = vec![0.0; n * d];
            act.k = vec![0.0; n * d];
            act.v = vec![0.0; n * d];
            matmul(&act.a1, n, d, &blk.wq, d, &mut act.q);
            matmul(&act.a1, n, d, &blk.wk, d, &mut act.k);
            matmul(&act.a1, n, d, &blk.wv, d, &mut act.v);
            act.probs = vec![0.0; heads * n * n];
            act.att = vec![0.0; n * d];
            for h in 0..heads {
                for i in 0..n {
                    let prow = &mut act.probs[(h * n + i) * n..(h * n + i + 1) * n];
                    let qh = &act.q[i * d + h * hd..i * d + (h + 1) * hd];
                    let mut max = f32::NEG_INFINITY;
                    for j in 0..=i {
                        let kh = &act.k[j * d + h * hd..j * d + (h + 1) * hd];
                        let s = qh.iter().zip(kh).map(|(a, b)| a * b).sum::<f32>() * scale;
                        prow[j] = s;
                        max = max.max(s);
                    }
                    let mut sum = 0.0;
                    for pj in prow[..=i].iter_mut() {
                        *pj = (*pj - max).exp();
                        sum += *pj;
                    }
                    for pj in prow[..=i].iter_mut() {
                        *pj /= sum;
                    }
                    for j in 0..=i {
                        let pj = prow[j];
                        for e in 0..hd {
                            act.att[i * d + h * hd + e] += pj * act.v[j * d + h * hd + e];
                        }
                    }
                }
            }
            let mut proj = vec![0.0; n * d];
            matmul(&act.att, n, d, &blk.wo, d, &mut proj);
            for (a, b) in x.iter_mut().zip(&proj) {
                *a += b;
            }
            act.xmid = x.clone();
            act.a2 = vec![0.0; n * d];
            super::forward::layer_norm_rows(&x, &blk.ln2_g, &blk.ln2_b, d, &mut act.a2);
            act.pre = vec![0.0; n * m];
            matmul(&act.a2, n, d, &blk.w1, m, &mut act.pre);
            act.act = vec![0.0; n * m];
            for r in 0..n {
                for c in 0..m {
                    act.pre[r * m + c] += blk.b1[c];
                    act.act[r * m + c] = gelu(act.pre[r * m + c]);
                }
            }
            matmul(&act.act, n, m, &blk.w2, d, &mut proj);
            for r in 0..n {
                for c in 0..d {
                    x[r * d + c] += proj[r * d + c] + blk.b2[c];
                }
            }
        }

        let xf = x;
        let mut af = vec![0.0; n * d];
        super::forward::layer_norm_rows(&xf, &p.lnf_g, &p.lnf_b, d, &mut af);
        let mut logits = vec![0.0; n * vsz];
        matmul(&af, n, d, &p.head, vsz, &mut logits);

        let mut loss = 0.0f32;
        let mut dlogits = vec![0.0; n * vsz];
        for i in 0..n {
            let row = &logits[i * vsz..(i + 1) * vsz];
            let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
            let sum: f32 = row.iter().map(|&l| (l - max).exp()).sum();
            let t = targets[i] as usize;
            loss += sum.ln() + max - row[t];
            for c in 0..vsz {
                dlogits[i * vsz + c] = (row[c] - max).exp() / sum * weight;
            }
            dlogits[i * vsz + t] -= weight;
        }

        accum_at_b(&af, n, d, &dlogits, vsz, &mut grads.head);
        let mut daf = vec![0.0; n * d];
        matmul_bt(&dlogits, n, vsz, &p.head, d, &mut daf);
        let mut dx = vec![0.0; n * d];
        ln_backward(&xf, &daf, &p.lnf_g, d, &mut grads.lnf_g, &mut grads.lnf_b, &mut dx);

        for (l, blk) in p.blocks.iter().enumerate().rev() {
            let act = &self.blocks[l];
            let g = &mut grads.blocks[l];
            // mlp branch
            for r in 0..n {
                for c in 0..d {
                    g.b2[c] += dx[r * d + c];
                }
            }
            accum_at_b(&act.act, n, m, &dx, d, &mut g.w2);
            let mut dpre = vec![0.0; n * m];
            matmul_bt(&dx, n, d, &blk.w2, m, &mut dpre);
            for (dp, &pre) in dpre.iter_mut().zip(&act.pre) {
                *dp *= gelu_grad(pre);
            }
            for r in 0..n {
                for c in 0..m {
                    g.b1[c] += dpre[r * m + c];
                }
            }
            accum_at_b(&act.a2, n, d, &dpre, m, &mut g.w1);
            let mut da2 = vec![0.0; n * d];
            matmul_bt(&dpre, n, m, &blk.w1, d, &mut da2);
            let mut dmid = vec![0.0; n * d];
            ln_backward(&act.xmid, &da2, &blk.ln2_g, d, &mut g.ln2_g, &mut g.ln2_b, &mut dmid);
            for (a, b) in dmid.iter_mut().zip(&dx) {
                *a += b;
            }

            // attention branch
            accum_at_b(&act.att, n, d, &dmid, d, &mut g.wo);
            let mut datt = vec![0.0; n * d];
            matmul_bt(&dmid, n, d, &blk.wo, d, &mut datt);
            let mut dq = vec![0.0; n * d];
            let mut dk = vec![0.0; n * d];
            let mut dv = vec![0.0; n * d];
            let mut dp = vec![0.0; n];
            for h in 0..heads {
                for i in 0..n {
                    let prow = &act.probs[(h * n + i) * n..(h * n + i + 1) * n];
                    let dai = &datt[i * d + h * hd..i * d + (h + 1) * hd];
                    let mut dot = 0.0;
                    for j in 0..=i {
                        let vj = &act.v[j * d + h * hd..j * d + (h + 1) * hd];
                        dp[j] = dai.iter().zip(vj).map(|(a, b)| a * b).sum();
                        dot += prow[j] * dp[j];
                        for e in 0..hd {
                            dv[j * d + h * hd + e] += prow[j] * dai[e];
                        }
                    }
                    for j in 0..=i {
                        let ds = prow[j] * (dp[j] - dot) * scale;
                        for e in 0..hd {
                            dq[i * d + h * hd + e] += ds * act.k[j * d + h * hd + e];
                            dk[j * d + h * hd + e] += ds * act.q[i * d + h * hd + e];
                        }
                    }
                }
            }
            accum_at_b(&act.a1, n, d, &dq, d, &mut g.wq);
            accum_at_b(&act.a1, n, d, &dk, d, &mut g.wk);
            accum_at_b(&act.a1, n, d, &dv, d, &mut g.wv);
            let mut da1 = vec![0.0; n * d];
            let mut tmp = vec![0.0; n * d];
            matmul_bt(&dq, n, d, &blk.wq, d, &mut tmp);
            add(&mut da1, &tmp);
            matmul_bt(&dk, n, d, &blk.wk, d, &mut tmp);
            add(&mut da1, &tmp);
            matmul_bt(&dv, n, d, &blk.wv, d, &mut tmp);
            add(&mut da1, &tmp);
            let mut din = vec![0.0; n * d];
            ln_backward(&act.xin, &da1, &blk.ln1_g, d, &mut g.ln1_g, &mut g.ln1_b, &mut din);
            for (a, b) in din.iter_mut().zip(&dmid) {
                *a += b;
            }
            dx = din;
        }

        for (i, &t) in inputs.iter().enumerate() {
            for c in 0..d {
                grads.tok_emb[t as usize * d + c] += dx[i * d + c];
                grads.pos_emb[i * d + c] += dx[i * d + c];
            }
        }
        loss
    }
}

fn add(x: &mut [f32], y: &[f32]) {
    for (a, b) in x.iter_mut().zip(y) {
        *a += b;
    }
}

/// `grad[din, dout] += x[n, din]^T * dy[n, dout]`
fn accum_at_b(x: &[f32], n: usize, din: usize, dy: &[f32], dout: usize, grad: &mut [f32]) {
    for r in 0..n {
        let xr = &x[r * din..(r + 1) * din];
        let dr = &dy[r * dout..(r + 1) * dout];
        for (k, &xv) in xr.iter().enumerate() {
            if xv == 0.0 {
                continue;
            }
            let gr = &mut grad[k * dout..(k + 1) * dout];
            for (g, &dv) in gr.iter_mut().zip(dr) {
                *g += xv * dv;
            }
        }
    }
}

/// `out[n, din] = dy[n, dout] * w[din, dout]^T`
fn matmul_bt(dy: &[f32], n: usize, dout: usize, w: &[f32], din: usize, out: &mut [f32]) {
    for r in 0..n {
        let dr = &dy[r * dout..(r + 1) * dout];
        for k in 0..din {
            let wr = &w[k * dout..(k + 1) * dout];
            out[r * din + k] = dr.iter().zip(wr).map(|(a, b)| a * b).sum();
        }
    }
}

/// Layer-norm backward for rows of `x`; writes the input gradient to `dx`.
fn ln_backward(
    x: &[f32],
    dy: &[f32],
    g: &[f32],
    d: usize,
    dg: &mut [f32],
    db: &mut [f32],
    dx: &mut [f32],
) {
    let mut xhat = vec![0.0; d];
    let mut dxhat = vec![0.0; d];
    for r in 0..x.len() / d {
        let xr = &x[r * d..(r + 1) * d];
        let dr = &dy[r * d..(r + 1) * d];
        let (mean, rstd) = ln_stats(xr);
        let mut m1 = 0.0;
        let mut m2 = 0.0;
        for c in 0..d {
            xhat[c] = (xr[c] - mean) * rstd;
            dg[c] += dr[c] * xhat[c];
            db[c] += dr[c];
            dxhat[c] = dr[c] * g[c];
            m1 += dxhat[c];
            m2 += dxhat[c] * xhat[c];
        }
        m1 /= d as f32;
        m2 /= d as f32;
        for c in 0..d {
            dx[r * d + c] = rstd * (dxhat[c] - m1 - xhat[c] * m2);
        }
    }
}
