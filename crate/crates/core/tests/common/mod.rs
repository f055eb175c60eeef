// SPDX-License-Identifier: MIT OR Apache-2.0

#![allow(dead_code)]

use langvec::model::{ModelConfig, Params, ToyModel, Vocab};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const SYMBOLS: &str = "abcdefghijklmnopqrstuvwxyz0123456789";

pub fn vocab(n: usize) -> Vocab {
    Vocab::new(SYMBOLS.chars().take(n).map(String::from).collect()).unwrap()
}

/// Model with uniform weights in `[-scale, scale]` and layer-norm gains
/// near one, so every code path carries signal.
pub fn random_model(
    seed: u64,
    num_layers: usize,
    hidden_size: usize,
    num_heads: usize,
    vocab_size: usize,
    max_seq_len: usize,
    scale: f32,
) -> ToyModel {
    let config = ModelConfig {
        num_layers,
        hidden_size,
        num_heads,
        vocab_size,
        max_seq_len,
        seed,
    };
    let mut params = Params::zeros(&config);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (name, _, data) in params.tensors_mut(&config) {
        let gain = name.ends_with("_g");
        for x in data.iter_mut() {
            let u = rng.random_range(-scale..=scale);
            *x = if gain { 1.0 + 0.5 * u } else { u };
        }
    }
    ToyModel::new(config, vocab(vocab_size), params).unwrap()
}

pub fn random_tokens(rng: &mut impl Rng, len: usize, vocab_size: usize) -> Vec<u32> {
    (0..len).map(|_| rng.random_range(0..vocab_size as u32)).collect()
}

pub fn random_vec(rng: &mut impl Rng, n: usize, scale: f32) -> Vec<f32> {
    (0..n).map(|_| rng.random_range(-scale..=scale)).collect()
}

/// Straightforward f64 re-implementation of the pre-norm decoder: token +
/// position embeddings, then per block `x += Attn(LN1 x)`, `x += MLP(LN2 x)`,
/// then final LN and the output head. Returns `seq_len x vocab` logits.
pub fn reference_logits(model: &ToyModel, tokens: &[u32]) -> Vec<Vec<f64>> {
    let cfg = model.config();
    let p = model.params();
    let d = cfg.hidden_size;
    let h = cfg.num_heads;
    let hd = d / h;
    let m = 4 * d;
    let n = tokens.len();
    let w = |v: &Vec<f32>| v.iter().map(|&x| f64::from(x)).collect::<Vec<f64>>();
    let mut x: Vec<Vec<f64>> = tokens
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            (0..d)
                .map(|c| f64::from(p.tok_emb[t as usize * d + c]) + f64::from(p.pos_emb[i * d + c]))
                .collect()
        })
        .collect();
    let ln = |row: &[f64], g: &[f64], b: &[f64]| -> Vec<f64> {
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
        let r = 1.0 / (var + 1e-5).sqrt();
        (0..d).map(|c| (row[c] - mean) * r * g[c] + b[c]).collect()
    };
    let mat = |row: &[f64], wm: &[f64], dout: usize| -> Vec<f64> {
        (0..dout)
            .map(|o| row.iter().enumerate().map(|(k, &a)| a * wm[k * dout + o]).sum())
            .collect()
    };
    let gelu = |v: f64| 0.5 * v * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (v + 0.044715 * v.powi(3))).tanh());
    for blk in &p.blocks {
        let (g1, b1g) = (w(&blk.ln1_g), w(&blk.ln1_b));
        let (wq, wk, wv, wo) = (w(&blk.wq), w(&blk.wk), w(&blk.wv), w(&blk.wo));
        let a: Vec<Vec<f64>> = x.iter().map(|r| ln(r, &g1, &b1g)).collect();
        let q: Vec<Vec<f64>> = a.iter().map(|r| mat(r, &wq, d)).collect();
        let k: Vec<Vec<f64>> = a.iter().map(|r| mat(r, &wk, d)).collect();
        let v: Vec<Vec<f64>> = a.iter().map(|r| mat(r, &wv, d)).collect();
        for i in 0..n {
            let mut att = vec![0.0; d];
            for head in 0..h {
                let sl = head * hd..(head + 1) * hd;
                let scores: Vec<f64> = (0..=i)
                    .map(|j| {
                        q[i][sl.clone()].iter().zip(&k[j][sl.clone()]).map(|(a, b)| a * b).sum::<f64>()
                            / (hd as f64).sqrt()
                    })
                    .collect();
                let mx = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = scores.iter().map(|s| (s - mx).exp()).collect();
                let z: f64 = e.iter().sum();
                for (j, ej) in e.iter().enumerate() {
                    for c in sl.clone() {
                        att[c] += ej / z * v[j][c];
                    }
                }
            }
            let proj = mat(&att, &wo, d);
            for c in 0..d {
                x[i][c] += proj[c];
            }
        }
        let (g2, b2g) = (w(&blk.ln2_g), w(&blk.ln2_b));
        let (w1, bb1, w2, bb2) = (w(&blk.w1), w(&blk.b1), w(&blk.w2), w(&blk.b2));
        for row in x.iter_mut() {
            let a = ln(row, &g2, &b2g);
            let hid: Vec<f64> = mat(&a, &w1, m).iter().zip(&bb1).map(|(v, b)| gelu(v + b)).collect();
            let out = mat(&hid, &w2, d);
            for c in 0..d {
                row[c] += out[c] + bb2[c];
            }
        }
    }
    let (gf, bf, head) = (w(&p.lnf_g), w(&p.lnf_b), w(&p.head));
    x.iter().map(|r| mat(&ln(r, &gf, &bf), &head, cfg.vocab_size)).collect()
}

/// Average linkage from the definition: the distance between two clusters
/// is the mean of all original pairwise distances between their members.
/// Returns `(sorted member labels, distance)` per merge.
pub fn brute_force_average_linkage(labels: &[String], d: &[Vec<f64>]) -> Vec<(Vec<String>, f64)> {
    let mut clusters: Vec<Vec<usize>> = (0..labels.len()).map(|i| vec![i]).collect();
    let key = |c: &[usize]| {
        let mut k: Vec<String> = c.iter().map(|&i| labels[i].clone()).collect();
        k.sort();
        k
    };
    let mut out = Vec::new();
    while clusters.len() > 1 {
        let mut best: Option<(f64, Vec<String>, Vec<String>, usize, usize)> = None;
        for i in 0..clusters.len() {
            for j in 0..clusters.len() {
                if i == j {
                    continue;
                }
                let (ki, kj) = (key(&clusters[i]), key(&clusters[j]));
                if ki > kj {
                    continue;
                }
                let mut sum = 0.0;
                for &a in &clusters[i] {
                    for &b in &clusters[j] {
                        sum += d[a][b];
                    }
                }
                let dist = sum / (clusters[i].len() * clusters[j].len()) as f64;
                let better = match &best {
                    None => true,
                    Some((bd, bi, bj, _, _)) => {
                        dist < *bd - 1e-12 || ((dist - bd).abs() <= 1e-12 && (&ki, &kj) < (bi, bj))
                    }
                };
                if better {
                    best = Some((dist, ki, kj, i, j));
                }
            }
        }
        let (dist, _, _, i, j) = best.unwrap();
        let mut merged = clusters[i].clone();
        merged.extend(&clusters[j]);
        out.push((key(&merged), dist));
        let (hi, lo) = (i.max(j), i.min(j));
        clusters.remove(hi);
        clusters.remove(lo);
        clusters.push(merged);
    }
    out
}

/// Symmetric matrix with zero diagonal and distances drawn from `values`.
pub fn random_distances(rng: &mut impl Rng, n: usize, values: &[f64]) -> Vec<Vec<f64>> {
    let mut d = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let v = values[rng.random_range(0..values.len())];
            d[i][j] = v;
            d[j][i] = v;
        }
    }
    d
}
