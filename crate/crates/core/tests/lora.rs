// SPDX-License-Identifier: Apache-2.0

use lexalign_core::lora::{adapted_forward, inject, merge, LoraAdapter, LoraConfig, LoraModel};
use lexalign_core::model::{MicroTransformer, Projection, TransformerConfig};
use lexalign_core::numcore::{Rng, Tensor};
use proptest::prelude::*;

fn base(seed: u64) -> MicroTransformer {
    MicroTransformer::new(TransformerConfig::default(), &mut Rng::new(seed)).unwrap()
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Gives every adapter a nonzero `B` so merge and forward actually differ
/// from the base.
fn perturbed(m: &LoraModel, seed: u64) -> LoraModel {
    let mut m = m.clone();
    let mut rng = Rng::new(seed);
    for ad in &mut m.adapters {
        ad.b = Tensor::randn(ad.b.shape(), 0.05, &mut rng);
    }
    m
}

#[test]
fn default_injection_counts() {
    let m = inject(&base(1), &LoraConfig::default(), &mut Rng::new(2)).unwrap();
    assert_eq!(m.adapters.len(), 8);
    let (r, d) = (16, 64);
    assert_eq!(m.trainable_parameter_count(), 8 * (r * d + d * r));
    let names: Vec<String> = m.adapters.iter().map(LoraAdapter::name).collect();
    assert_eq!(
        names[..2],
        ["layers.0.q_proj".to_string(), "layers.0.v_proj".to_string()]
    );
    assert!(m
        .adapters
        .iter()
        .all(|a| a.b.data().iter().all(|&x| x == 0.0)));
    assert!((m.adapters[0].scaling - 2.0).abs() < 1e-15);
}

#[test]
fn fresh_adapters_are_a_no_op() {
    let b = base(3);
    let m = inject(&b, &LoraConfig::default(), &mut Rng::new(4)).unwrap();
    let ids = [5, 17, 200, 3, 99, 41];
    let plain = b.forward_with_hidden_states(&ids, &[true; 6]).unwrap();
    let adapted = m.forward_with_hidden_states(&ids, &[true; 6]).unwrap();
    for (x, y) in plain.per_layer.iter().zip(&adapted.per_layer) {
        assert!(max_diff(x.data(), y.data()) <= 1e-12);
    }
}

#[test]
fn merge_after_inject_is_identity_on_weights() {
    let b = base(5);
    let m = inject(&b, &LoraConfig::default(), &mut Rng::new(6)).unwrap();
    assert_eq!(merge(&m).unwrap(), b);
}

#[test]
fn adapted_forward_matches_two_step_multiply() {
    let mut rng = Rng::new(7);
    let w = Tensor::randn(&[5, 6], 1.0, &mut rng);
    let ad = LoraAdapter {
        a: Tensor::randn(&[3, 6], 1.0, &mut rng),
        b: Tensor::randn(&[5, 3], 1.0, &mut rng),
        scaling: 0.7,
        layer: 0,
        projection: Projection::Q,
    };
    let x = Tensor::randn(&[4, 6], 1.0, &mut rng);
    let y = adapted_forward(&w, &ad, &x, 0.05, false, &mut rng).unwrap();
    for i in 0..4 {
        // A·x first, then B·(A·x), each as explicit loops.
        let ax: Vec<f64> = (0..3)
            .map(|k| (0..6).map(|j| ad.a.at(k, j) * x.at(i, j)).sum())
            .collect();
        for o in 0..5 {
            let wx: f64 = (0..6).map(|j| w.at(o, j) * x.at(i, j)).sum();
            let bax: f64 = (0..3).map(|k| ad.b.at(o, k) * ax[k]).sum();
            assert!((y.at(i, o) - (wx + 0.7 * bax)).abs() < 1e-12);
        }
    }
}

#[test]
fn zero_b_leaves_projection_exact() {
    let mut rng = Rng::new(8);
    let w = Tensor::randn(&[4, 4], 1.0, &mut rng);
    let ad = LoraAdapter {
        a: Tensor::randn(&[2, 4], 1.0, &mut rng),
        b: Tensor::zeros(&[4, 2]),
        scaling: 2.0,
        layer: 0,
        projection: Projection::V,
    };
    let x = Tensor::randn(&[3, 4], 1.0, &mut rng);
    let y = adapted_forward(&w, &ad, &x, 0.0, false, &mut rng).unwrap();
    let plain = lexalign_core::numcore::matmul_nt(&x, &w).unwrap();
    assert_eq!(y.data(), plain.data());
}

#[test]
fn merged_model_matches_attached_adapters() {
    let b = base(9);
    let m = perturbed(
        &inject(&b, &LoraConfig::default(), &mut Rng::new(10)).unwrap(),
        11,
    );
    let merged = merge(&m).unwrap();
    assert_ne!(merged, b);
    let mut rng = Rng::new(12);
    for _ in 0..100 {
        let len = 1 + rng.below(8);
        let ids: Vec<usize> = (0..len).map(|_| rng.below(512)).collect();
        let mask = vec![true; len];
        let x = merged.forward_with_hidden_states(&ids, &mask).unwrap();
        let y = m.forward_with_hidden_states(&ids, &mask).unwrap();
        for (a, b) in x.per_layer.iter().zip(&y.per_layer) {
            assert!(max_diff(a.data(), b.data()) <= 1e-6);
        }
    }
}

#[test]
fn adapter_checkpoint_round_trip() {
    let b = base(13);
    let m = perturbed(
        &inject(&b, &LoraConfig::default(), &mut Rng::new(14)).unwrap(),
        15,
    );
    let bytes = m.adapter_bytes().unwrap();
    let back = LoraModel::from_adapter_bytes(&b, &bytes).unwrap();
    assert_eq!(back, m);
    assert_eq!(back.adapter_bytes().unwrap(), bytes);

    let other = MicroTransformer::new(
        TransformerConfig {
            d_model: 32,
            n_heads: 4,
            ..TransformerConfig::default()
        },
        &mut Rng::new(0),
    )
    .unwrap();
    assert!(LoraModel::from_adapter_bytes(&other, &bytes).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn eval_forward_is_linear(seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let w = Tensor::randn(&[6, 5], 1.0, &mut rng);
        let ad = LoraAdapter {
            a: Tensor::randn(&[2, 5], 1.0, &mut rng),
            b: Tensor::randn(&[6, 2], 1.0, &mut rng),
            scaling: 1.5,
            layer: 0,
            projection: Projection::Q,
        };
        let x = Tensor::randn(&[5], 1.0, &mut rng);
        let y = Tensor::randn(&[5], 1.0, &mut rng);
        let sum = Tensor::vector(x.data().iter().zip(y.data()).map(|(a, b)| a + b).collect()).unwrap();
        let fx = adapted_forward(&w, &ad, &x, 0.1, false, &mut rng).unwrap();
        let fy = adapted_forward(&w, &ad, &y, 0.1, false, &mut rng).unwrap();
        let fs = adapted_forward(&w, &ad, &sum, 0.1, false, &mut rng).unwrap();
        for i in 0..6 {
            prop_assert!((fs.data()[i] - fx.data()[i] - fy.data()[i]).abs() < 1e-9);
        }
    }
}
