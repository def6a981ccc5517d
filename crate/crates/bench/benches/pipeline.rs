// SPDX-License-Identifier: Apache-2.0

use criterion::{black_box, criterion_group, criterion_main, Criterion};
use lexalign_core::lora::{inject, LoraConfig};
use lexalign_core::model::{MicroTransformer, TransformerConfig, Vocabulary};
use lexalign_core::numcore::{l2_normalize, Rng, Tensor};
use lexalign_core::probe::paired_t_test;
use lexalign_core::synth::{Split, WordPair, WordPairSet};
use lexalign_core::trainer::{in_batch_contrastive_loss, tli_batch_loss, EmbeddingBatch};
use lexalign_core::viz::{pca_2d, tsne_2d, TsneConfig};

fn unit_rows(rng: &mut Rng, n: usize, d: usize) -> Tensor {
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            let v = Tensor::vector((0..d).map(|_| rng.normal()).collect()).unwrap();
            l2_normalize(&v).unwrap().into_data()
        })
        .collect();
    Tensor::from_rows(&rows).unwrap()
}

fn setup() -> (MicroTransformer, Vocabulary, WordPairSet) {
    let vocab = Vocabulary::new((0..64).map(|i| format!("w{i}"))).unwrap();
    let model = MicroTransformer::new(TransformerConfig::default(), &mut Rng::new(1)).unwrap();
    let pairs = WordPairSet::new(
        (0..8)
            .map(|i| WordPair::new(&format!("w{i}"), &format!("w{}", 32 + i), Split::Trained))
            .collect(),
    )
    .unwrap();
    (model, vocab, pairs)
}

fn forward(c: &mut Criterion) {
    let (model, _, _) = setup();
    let ids: Vec<usize> = (0..16).map(|i| i % 60).collect();
    let mask = vec![true; ids.len()];
    c.bench_function("forward_16_tokens", |b| {
        b.iter(|| {
            model
                .forward_with_hidden_states(black_box(&ids), &mask)
                .unwrap()
        })
    });
}

fn loss(c: &mut Criterion) {
    let mut rng = Rng::new(2);
    let batch =
        EmbeddingBatch::new(unit_rows(&mut rng, 32, 64), unit_rows(&mut rng, 32, 64)).unwrap();
    c.bench_function("contrastive_loss_b32", |b| {
        b.iter(|| in_batch_contrastive_loss(black_box(&batch), 0.4).unwrap())
    });
}

fn tli_step(c: &mut Criterion) {
    let (model, vocab, pairs) = setup();
    let lora = inject(&model, &LoraConfig::default(), &mut Rng::new(3)).unwrap();
    c.bench_function("tli_loss_and_grad_b8", |b| {
        b.iter(|| tli_batch_loss(black_box(&lora), &vocab, &pairs, 2, 0.4).unwrap())
    });
}

fn stats(c: &mut Criterion) {
    let mut rng = Rng::new(4);
    let pre: Vec<f64> = (0..1000).map(|_| rng.normal()).collect();
    let post: Vec<f64> = pre.iter().map(|x| x + 0.1 + 0.05 * rng.normal()).collect();
    c.bench_function("paired_t_test_1000", |b| {
        b.iter(|| paired_t_test(black_box(&pre), &post).unwrap())
    });
}

fn projection(c: &mut Criterion) {
    let mut rng = Rng::new(5);
    let x = unit_rows(&mut rng, 60, 64);
    c.bench_function("pca_60x64", |b| b.iter(|| pca_2d(black_box(&x)).unwrap()));
    let cfg = TsneConfig {
        iterations: 100,
        exaggeration_iters: 50,
        ..TsneConfig::default()
    };
    c.bench_function("tsne_60x64_100_iters", |b| {
        b.iter(|| tsne_2d(black_box(&x), &cfg).unwrap())
    });
}

criterion_group!(benches, forward, loss, tli_step, stats, projection);
criterion_main!(benches);
