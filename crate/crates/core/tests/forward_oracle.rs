// SPDX-License-Identifier: MIT OR Apache-2.0

mod common;

use std::collections::BTreeSet;

use langvec::model::{ModelConfig, Params, ToyModel};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn hand_computed_single_layer() {
    // Zero block weights reduce the model to embeddings -> final LN -> head.
    let config = ModelConfig {
        num_layers: 1,
        hidden_size: 2,
        num_heads: 1,
        vocab_size: 2,
        max_seq_len: 4,
        seed: 0,
    };
    let mut p = Params::zeros(&config);
    p.tok_emb = vec![1.0, 3.0, 2.0, 0.0];
    p.pos_emb = vec![0.0; 8];
    p.lnf_g = vec![1.0, 1.0];
    p.head = vec![1.0, 0.0, 0.0, 1.0];
    let model = ToyModel::new(config, common::vocab(2), p).unwrap();
    let out = model.forward_with_interventions(&[0, 1], &[], &BTreeSet::new()).unwrap();
    // token 0: [1, 3] has mean 2, variance 1 -> [-1, 1] / sqrt(1 + 1e-5)
    // token 1: [2, 0] -> [1, -1] / sqrt(1 + 1e-5)
    let s = 1.0 / (1.0f64 + 1e-5).sqrt();
    let want = [[-s, s], [s, -s]];
    for (j, row) in want.iter().enumerate() {
        for (got, w) in out.logits_at(j).iter().zip(row) {
            assert!((f64::from(*got) - w).abs() < 1e-6, "pos {j}: {got} vs {w}");
        }
    }
}

#[test]
fn hand_computed_attention_average() {
    // One head, identity value/output projections and zero queries: the
    // attention output is the running mean of the LN1 outputs.
    let config = ModelConfig {
        num_layers: 1,
        hidden_size: 2,
        num_heads: 1,
        vocab_size: 2,
        max_seq_len: 4,
        seed: 0,
    };
    let mut p = Params::zeros(&config);
    p.tok_emb = vec![1.0, 3.0, 2.0, 0.0];
    p.blocks[0].ln1_g = vec![1.0, 1.0];
    p.blocks[0].wv = vec![1.0, 0.0, 0.0, 1.0];
    p.blocks[0].wo = vec![1.0, 0.0, 0.0, 1.0];
    p.lnf_g = vec![1.0, 1.0];
    p.head = vec![1.0, 0.0, 0.0, 1.0];
    let model = ToyModel::new(config, common::vocab(2), p).unwrap();
    let trace = model.capture(&[0, 1], &BTreeSet::from([1])).unwrap();
    let s = 1.0 / (1.0f64 + 1e-5).sqrt();
    // position 0 attends to itself: [1,3] + [-s, s]
    // position 1 averages [-s, s] and [s, -s] = 0: [2, 0]
    let want = [[1.0 - s, 3.0 + s], [2.0, 0.0]];
    let tr = &trace[&1];
    for (j, row) in want.iter().enumerate() {
        for (got, w) in tr.row(j).iter().zip(row) {
            assert!((f64::from(*got) - w).abs() < 1e-6, "pos {j}: {got} vs {w}");
        }
    }
}

#[test]
fn matches_f64_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for seed in 0..6 {
        let layers = 1 + seed as usize % 2;
        let model = common::random_model(seed, layers, 8, 2, 7, 12, 0.3);
        let tokens = common::random_tokens(&mut rng, 9, 7);
        let got = model.forward_with_interventions(&tokens, &[], &BTreeSet::new()).unwrap();
        let want = common::reference_logits(&model, &tokens);
        for (j, row) in want.iter().enumerate() {
            for (g, w) in got.logits_at(j).iter().zip(row) {
                assert!((f64::from(*g) - w).abs() < 1e-5, "seed {seed} pos {j}: {g} vs {w}");
            }
        }
    }
}
