// SPDX-License-Identifier: Apache-2.0

use lexalign_core::model::{MicroTransformer, TransformerConfig, Vocabulary, ROPE_BASE};
use lexalign_core::numcore::{l2_normalize, Rng, Tensor};
use lexalign_core::Error;
use proptest::prelude::*;

fn small_config() -> TransformerConfig {
    TransformerConfig {
        vocab_size: 24,
        d_model: 16,
        n_layers: 3,
        n_heads: 4,
        d_ff: 32,
        max_seq: 8,
        norm_eps: 1e-6,
    }
}

/// Randomizes every weight (norm gains included) at unit-ish scale so the
/// blocks do real work.
fn random_model(seed: u64) -> MicroTransformer {
    let mut rng = Rng::new(seed);
    let mut m = MicroTransformer::new(small_config(), &mut rng).unwrap();
    for (name, t) in m.named_tensors_mut() {
        let std = if name.ends_with("norm") { 0.3 } else { 0.25 };
        for x in t.data_mut() {
            *x = if name.ends_with("norm") {
                1.0 + std * rng.normal()
            } else {
                std * rng.normal()
            };
        }
    }
    m
}

// Straight-line reimplementation over plain vectors.
fn linear(x: &[Vec<f64>], w: &Tensor) -> Vec<Vec<f64>> {
    x.iter()
        .map(|row| {
            (0..w.rows())
                .map(|o| row.iter().zip(w.row(o)).map(|(a, b)| a * b).sum())
                .collect()
        })
        .collect()
}

fn rms(x: &[Vec<f64>], g: &Tensor, eps: f64) -> Vec<Vec<f64>> {
    x.iter()
        .map(|row| {
            let ms = row.iter().map(|v| v * v).sum::<f64>() / row.len() as f64;
            let inv = 1.0 / (ms + eps).sqrt();
            row.iter()
                .zip(g.data())
                .map(|(v, gg)| v * inv * gg)
                .collect()
        })
        .collect()
}

fn rope(x: &mut [Vec<f64>], heads: usize) {
    let dh = x[0].len() / heads;
    for (pos, row) in x.iter_mut().enumerate() {
        for h in 0..heads {
            for i in 0..dh / 2 {
                let theta = pos as f64 / ROPE_BASE.powf(2.0 * i as f64 / dh as f64);
                let (a, b) = (row[h * dh + 2 * i], row[h * dh + 2 * i + 1]);
                row[h * dh + 2 * i] = a * theta.cos() - b * theta.sin();
                row[h * dh + 2 * i + 1] = a * theta.sin() + b * theta.cos();
            }
        }
    }
}

fn reference_states(m: &MicroTransformer, ids: &[usize]) -> Vec<Vec<Vec<f64>>> {
    let cfg = &m.config;
    let (t, d, heads) = (ids.len(), cfg.d_model, cfg.n_heads);
    let dh = d / heads;
    let mut h: Vec<Vec<f64>> = ids
        .iter()
        .map(|&i| m.token_embedding.row(i).to_vec())
        .collect();
    let mut states = vec![h.clone()];
    for b in &m.blocks {
        let a = rms(&h, &b.attn_norm, cfg.norm_eps);
        let mut q = linear(&a, &b.q_proj);
        let mut k = linear(&a, &b.k_proj);
        let v = linear(&a, &b.v_proj);
        rope(&mut q, heads);
        rope(&mut k, heads);
        let mut att = vec![vec![0.0; d]; t];
        for hd in 0..heads {
            let r = hd * dh..(hd + 1) * dh;
            for i in 0..t {
                let scores: Vec<f64> = (0..=i)
                    .map(|j| {
                        q[i][r.clone()]
                            .iter()
                            .zip(&k[j][r.clone()])
                            .map(|(x, y)| x * y)
                            .sum::<f64>()
                            / (dh as f64).sqrt()
                    })
                    .collect();
                let mx = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let w: Vec<f64> = scores.iter().map(|s| (s - mx).exp()).collect();
                let z: f64 = w.iter().sum();
                for (j, wj) in w.iter().enumerate() {
                    for c in r.clone() {
                        att[i][c] += wj / z * v[j][c];
                    }
                }
            }
        }
        let o = linear(&att, &b.o_proj);
        for i in 0..t {
            for c in 0..d {
                h[i][c] += o[i][c];
            }
        }
        let mm = rms(&h, &b.ffn_norm, cfg.norm_eps);
        let gate = linear(&mm, &b.gate_proj);
        let up = linear(&mm, &b.up_proj);
        let act: Vec<Vec<f64>> = gate
            .iter()
            .zip(&up)
            .map(|(g, u)| {
                g.iter()
                    .zip(u)
                    .map(|(g, u)| g / (1.0 + (-g).exp()) * u)
                    .collect()
            })
            .collect();
        let down = linear(&act, &b.down_proj);
        for i in 0..t {
            for c in 0..d {
                h[i][c] += down[i][c];
            }
        }
        states.push(h.clone());
    }
    states.push(rms(&h, &m.final_norm, cfg.norm_eps));
    states
}

#[test]
fn forward_matches_straight_line_reference() {
    for seed in 0..5 {
        let m = random_model(seed);
        let ids: Vec<usize> = (0..7).map(|i| (i * 5 + seed as usize) % 24).collect();
        let hs = m.forward_with_hidden_states(&ids, &[true; 7]).unwrap();
        let reference = reference_states(&m, &ids);
        assert_eq!(hs.per_layer.len(), m.config.n_layers + 2);
        for (got, want) in hs.per_layer.iter().zip(&reference) {
            let flat: Vec<f64> = want.iter().flatten().copied().collect();
            let err = got
                .data()
                .iter()
                .zip(&flat)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(err < 1e-10, "seed {seed}: max diff {err}");
        }
    }
}

#[test]
fn layer_zero_is_embedding_lookup() {
    let m = random_model(3);
    let ids = [4, 4, 9];
    let hs = m.forward_with_hidden_states(&ids, &[true; 3]).unwrap();
    for (r, &id) in ids.iter().enumerate() {
        assert_eq!(hs.per_layer[0].row(r), m.token_embedding.row(id));
    }
}

#[test]
fn zero_blocks_pass_the_residual_through() {
    let mut m = random_model(4);
    for b in &mut m.blocks {
        for p in [
            &mut b.q_proj,
            &mut b.k_proj,
            &mut b.v_proj,
            &mut b.o_proj,
            &mut b.gate_proj,
            &mut b.up_proj,
            &mut b.down_proj,
        ] {
            p.data_mut().iter_mut().for_each(|x| *x = 0.0);
        }
    }
    let hs = m
        .forward_with_hidden_states(&[1, 2, 3], &[true; 3])
        .unwrap();
    for k in 1..=m.config.n_layers {
        assert_eq!(hs.per_layer[k], hs.per_layer[0]);
    }
}

#[test]
fn too_long_sequence_rejected() {
    let m = random_model(0);
    let ids = vec![1; 9];
    assert!(matches!(
        m.forward_with_hidden_states(&ids, &[true; 9]),
        Err(Error::SequenceTooLong { len: 9, max: 8 })
    ));
}

fn vocab() -> Vocabulary {
    Vocabulary::new((1..24).map(|i| format!("w{i}"))).unwrap()
}

#[test]
fn single_token_word_at_layer_zero_is_normalized_row() {
    let m = random_model(5);
    let v = vocab();
    let e = m.embed_word(&v, "w3", 0).unwrap();
    let id = v.tokenize("w3").unwrap().ids[0];
    let want = l2_normalize(&Tensor::vector(m.token_embedding.row(id).to_vec()).unwrap()).unwrap();
    assert_eq!(e, want);
}

#[test]
fn multi_word_expression_pools_its_token_states() {
    let m = random_model(6);
    let v = vocab();
    let ids = v.tokenize("w7 w11").unwrap().ids;
    let hs = m.forward_with_hidden_states(&ids, &[true, true]).unwrap();
    for layer in 0..m.config.n_states() {
        let s = &hs.per_layer[layer];
        let pooled: Vec<f64> = (0..s.cols())
            .map(|c| (s.at(0, c) + s.at(1, c)) / 2.0)
            .collect();
        let want = l2_normalize(&Tensor::vector(pooled).unwrap()).unwrap();
        let got = m.embed_word(&v, "w7 w11", layer).unwrap();
        let err = got
            .data()
            .iter()
            .zip(want.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-12, "layer {layer}: {err}");
    }
}

#[test]
fn same_ids_same_embedding() {
    let m = random_model(7);
    let v = vocab();
    let a = m.embed_word_layers(&v, "W5").unwrap();
    let b = m.embed_word_layers(&v, "w5").unwrap();
    assert_eq!(a, b);
}

#[test]
fn checkpoint_round_trip() {
    let m = random_model(8);
    let bytes = m.to_checkpoint_bytes().unwrap();
    let back = MicroTransformer::from_checkpoint_bytes(&bytes).unwrap();
    assert_eq!(back, m);
    assert_eq!(back.to_checkpoint_bytes().unwrap(), bytes);
    let ids = [3, 1, 4, 1, 5];
    assert_eq!(
        back.forward_with_hidden_states(&ids, &[true; 5]).unwrap(),
        m.forward_with_hidden_states(&ids, &[true; 5]).unwrap()
    );

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    m.save_checkpoint(&path).unwrap();
    assert_eq!(MicroTransformer::load_checkpoint(&path).unwrap(), m);
}

#[test]
fn truncated_checkpoint_is_corrupt() {
    let bytes = random_model(9).to_checkpoint_bytes().unwrap();
    let cut = &bytes[..bytes.len() - 5];
    assert!(matches!(
        MicroTransformer::from_checkpoint_bytes(cut),
        Err(Error::Corrupt(_))
    ));
}

#[test]
fn checkpoint_version_mismatch_names_field() {
    let bytes = random_model(9).to_checkpoint_bytes().unwrap();
    // Same-length substitution keeps the header length prefix valid.
    let at = bytes
        .windows(18)
        .position(|w| w == b"format_version = 1")
        .unwrap();
    let mut edited = bytes.clone();
    edited[at + 17] = b'7';
    match MicroTransformer::from_checkpoint_bytes(&edited) {
        Err(Error::Checkpoint { field, .. }) => assert_eq!(field, "format_version"),
        other => panic!("unexpected {other:?}"),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn causality(seed in 0u64..1000, j in 1usize..6, new_tok in 0usize..24) {
        let m = random_model(seed);
        let ids: Vec<usize> = (0..6).map(|i| (i * 7 + seed as usize) % 24).collect();
        let mut changed = ids.clone();
        changed[j] = new_tok;
        let a = m.forward_with_hidden_states(&ids, &[true; 6]).unwrap();
        let b = m.forward_with_hidden_states(&changed, &[true; 6]).unwrap();
        for (sa, sb) in a.per_layer.iter().zip(&b.per_layer) {
            for i in 0..j {
                prop_assert_eq!(sa.row(i), sb.row(i));
            }
        }
    }

    #[test]
    fn embeddings_are_unit_norm(seed in 0u64..1000, w in 1usize..24) {
        let m = random_model(seed);
        for e in m.embed_word_layers(&vocab(), &format!("w{w}")).unwrap() {
            let n = e.data().iter().map(|x| x * x).sum::<f64>().sqrt();
            prop_assert!((n - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn forward_is_pure(seed in 0u64..1000) {
        let m = random_model(seed);
        let ids = [1, 2, 3, 2];
        prop_assert_eq!(
            m.forward_with_hidden_states(&ids, &[true; 4]).unwrap(),
            m.forward_with_hidden_states(&ids, &[true; 4]).unwrap()
        );
    }
}
