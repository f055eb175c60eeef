// SPDX-License-Identifier: MIT OR Apache-2.0

use rand_distr::{Distribution, Normal};

use super::ModelConfig;
use crate::error::{Error, Result};
use crate::seed;

/// Weights of one pre-norm transformer block. Matrices are row-major
/// `[in, out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams {
    pub ln1_g: Vec<f32>,
    pub ln1_b: Vec<f32>,
    pub wq: Vec<f32>,
    pub wk: Vec<f32>,
    pub wv: Vec<f32>,
    pub wo: Vec<f32>,
    pub ln2_g: Vec<f32>,
    pub ln2_b: Vec<f32>,
    pub w1: Vec<f32>,
    pub b1: Vec<f32>,
    pub w2: Vec<f32>,
    pub b2: Vec<f32>,
}

/// All model weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub tok_emb: Vec<f32>,
    pub pos_emb: Vec<f32>,
    pub blocks: Vec<BlockParams>,
    pub lnf_g: Vec<f32>,
    pub lnf_b: Vec<f32>,
    pub head: Vec<f32>,
}

impl Params {
    /// Zero-filled parameters with the shapes implied by `config`.
    pub fn zeros(config: &ModelConfig) -> Self {
        let mut p = Self {
            tok_emb: Vec::new(),
            pos_emb: Vec::new(),
            blocks: vec![BlockParams::empty(); config.num_layers],
            lnf_g: Vec::new(),
            lnf_b: Vec::new(),
            head: Vec::new(),
        };
        for (name, shape, data) in p.tensors_mut(config) {
            let _ = name;
            *data = vec![0.0; shape.iter().product()];
        }
        p
    }

    /// Gaussian init; layer-norm gains start at one, biases at zero.
    pub fn init(config: &ModelConfig) -> Self {
        let mut p = Self::zeros(config);
        let std = 0.02f32;
        let resid_std = std / (2.0 * config.num_layers as f32).sqrt();
        for (name, _, data) in p.tensors_mut(config) {
            if name.ends_with("_g") {
                data.fill(1.0);
                continue;
            }
            if name.ends_with("_b") || name.ends_with(".b1") || name.ends_with(".b2") {
                continue;
            }
            let s = if name.ends_with(".wo") || name.ends_with(".w2") {
                resid_std
            } else {
                std
            };
            let normal = Normal::new(0.0f32, s).expect("finite std");
            let mut rng = seed::rng(config.seed, "init", &[name_key(&name)]);
            for x in data.iter_mut() {
                *x = normal.sample(&mut rng);
            }
        }
        p
    }

    /// `(name, shape, data)` for every tensor, sorted by name.
    pub fn tensors(&self, config: &ModelConfig) -> Vec<(String, Vec<usize>, &Vec<f32>)> {
        let mut out: Vec<_> = shapes(config)
            .into_iter()
            .map(|(name, shape)| {
                let data = self.get(&name).expect("known tensor name");
                (name, shape, data)
            })
            .collect();
        out.sort_by(|a, b| a.0.cmp(&b.0));
        out
    }

    /// Mutable `(name, shape, data)` for every tensor, sorted by name.
    pub fn tensors_mut(&mut self, config: &ModelConfig) -> Vec<(String, Vec<usize>, &mut Vec<f32>)> {
        let mut shapes = shapes(config);
        shapes.sort_by(|a, b| a.0.cmp(&b.0));
        let mut slots: Vec<(String, &mut Vec<f32>)> = Vec::new();
        slots.push(("head".into(), &mut self.head));
        slots.push(("lnf_b".into(), &mut self.lnf_b));
        slots.push(("lnf_g".into(), &mut self.lnf_g));
        slots.push(("pos_emb".into(), &mut self.pos_emb));
        slots.push(("tok_emb".into(), &mut self.tok_emb));
        for (i, b) in self.blocks.iter_mut().enumerate() {
            let pre = format!("blocks.{i:03}");
            slots.push((format!("{pre}.b1"), &mut b.b1));
            slots.push((format!("{pre}.b2"), &mut b.b2));
            slots.push((format!("{pre}.ln1_b"), &mut b.ln1_b));
            slots.push((format!("{pre}.ln1_g"), &mut b.ln1_g));
            slots.push((format!("{pre}.ln2_b"), &mut b.ln2_b));
            slots.push((format!("{pre}.ln2_g"), &mut b.ln2_g));
            slots.push((format!("{pre}.w1"), &mut b.w1));
            slots.push((format!("{pre}.w2"), &mut b.w2));
            slots.push((format!("{pre}.wk"), &mut b.wk));
            slots.push((format!("{pre}.wo"), &mut b.wo));
            slots.push((format!("{pre}.wq"), &mut b.wq));
            slots.push((format!("{pre}.wv"), &mut b.wv));
        }
        slots.sort_by(|a, b| a.0.cmp(&b.0));
        slots
            .into_iter()
            .zip(shapes)
            .map(|((name, data), (sname, shape))| {
                debug_assert_eq!(name, sname);
                (name, shape, data)
            })
            .collect()
    }

    fn get(&self, name: &str) -> Option<&Vec<f32>> {
        match name {
            "head" => Some(&self.head),
            "lnf_b" => Some(&self.lnf_b),
            "lnf_g" => Some(&self.lnf_g),
            "pos_emb" => Some(&self.pos_emb),
            "tok_emb" => Some(&self.tok_emb),
            _ => {
                let rest = name.strip_prefix("blocks.")?;
                let (idx, field) = rest.split_once('.')?;
                let b = self.blocks.get(idx.parse::<usize>().ok()?)?;
                Some(match field {
                    "b1" => &b.b1,
                    "b2" => &b.b2,
                    "ln1_b" => &b.ln1_b,
                    "ln1_g" => &b.ln1_g,
                    "ln2_b" => &b.ln2_b,
                    "ln2_g" => &b.ln2_g,
                    "w1" => &b.w1,
                    "w2" => &b.w2,
                    "wk" => &b.wk,
                    "wo" => &b.wo,
                    "wq" => &b.wq,
                    "wv" => &b.wv,
                    _ => return None,
                })
            }
        }
    }

    pub(crate) fn check_shapes(&self, config: &ModelConfig) -> Result<()> {
        if self.blocks.len() != config.num_layers {
            return Err(Error::Integrity(format!(
                "{} blocks present, config declares {}",
                self.blocks.len(),
                config.num_layers
            )));
        }
        for (name, shape, data) in self.tensors(config) {
            let want: usize = shape.iter().product();
            if data.len() != want {
                return Err(Error::Integrity(format!(
                    "tensor {name} has {} values, expected {want} for shape {shape:?}",
                    data.len()
                )));
            }
        }
        Ok(())
    }

    pub(crate) fn check_finite(&self) -> Result<()> {
        let all = [&self.tok_emb, &self.pos_emb, &self.lnf_g, &self.lnf_b, &self.head]
            .into_iter()
            .chain(self.blocks.iter().flat_map(|b| {
                [
                    &b.ln1_g, &b.ln1_b, &b.wq, &b.wk, &b.wv, &b.wo, &b.ln2_g, &b.ln2_b, &b.w1,
                    &b.b1, &b.w2, &b.b2,
                ]
            }));
        for t in all {
            if t.iter().any(|x| !x.is_finite()) {
                return Err(Error::Integrity("non-finite parameter value".into()));
            }
        }
        Ok(())
    }
}

impl BlockParams {
    fn empty() -> Self {
        Self {
            ln1_g: Vec::new(),
            ln1_b: Vec::new(),
            wq: Vec::new(),
            wk: Vec::new(),
            wv: Vec::new(),
            wo: Vec::new(),
            ln2_g: Vec::new(),
            ln2_b: Vec::new(),
            w1: Vec::new(),
            b1: Vec::new(),
            w2: Vec::new(),
            b2: Vec::new(),
        }
    }
}

/// Expected `(name, shape)` of every tensor.
pub(crate) fn shapes(config: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let d = config.hidden_size;
    let m = config.mlp_size();
    let v = config.vocab_size;
    let mut out = vec![
        ("tok_emb".to_string(), vec![v, d]),
        ("pos_emb".to_string(), vec![config.max_seq_len, d]),
        ("lnf_g".to_string(), vec![d]),
        ("lnf_b".to_string(), vec![d]),
        ("head".to_string(), vec![d, v]),
    ];
    for i in 0..config.num_layers {
        let pre = format!("blocks.{i:03}");
        for (field, shape) in [
            ("ln1_g", vec![d]),
            ("ln1_b", vec![d]),
            ("wq", vec![d, d]),
            ("wk", vec![d, d]),
            ("wv", vec![d, d]),
            ("wo", vec![d, d]),
            ("ln2_g", vec![d]),
            ("ln2_b", vec![d]),
            ("w1", vec![d, m]),
            ("b1", vec![m]),
            ("w2", vec![m, d]),
            ("b2", vec![d]),
        ] {
            out.push((format!("{pre}.{field}"), shape));
        }
    }
    out
}

fn name_key(name: &str) -> u64 {
    let digest = seed::sha256_hex(name.as_bytes());
    u64::from_str_radix(&digest[..16], 16).expect("hex digest")
}
