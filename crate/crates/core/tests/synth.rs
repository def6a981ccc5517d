// SPDX-License-Identifier: Apache-2.0

use lexalign_core::model::{MicroTransformer, TransformerConfig};
use lexalign_core::numcore::Rng;
use lexalign_core::synth::{
    generate_world, pretrain_toy, zipf_probabilities, Language, PretrainConfig, WorldConfig,
};
use lexalign_core::Error;

/// Chi-square distance `Σ (f_obs − p)² / p` between observed concept
/// frequencies and the Zipf law.
fn chi2_distance(counts: &[usize], p: &[f64]) -> f64 {
    let total: usize = counts.iter().sum();
    counts
        .iter()
        .zip(p)
        .map(|(&c, &pi)| {
            let f = c as f64 / total as f64;
            (f - pi).powi(2) / pi
        })
        .sum()
}

#[test]
fn concept_frequencies_follow_zipf() {
    let cfg = WorldConfig {
        sentences: 50_000,
        ..WorldConfig::default()
    };
    let world = generate_world(&cfg).unwrap();
    let mut counts = vec![0usize; cfg.concepts];
    for s in &world.corpus {
        for &c in &s.concepts {
            counts[c] += 1;
        }
    }
    let zipf = zipf_probabilities(cfg.concepts, cfg.zipf_exponent);
    let d = chi2_distance(&counts, &zipf);
    // Sampling noise alone is about (K − 1) / tokens ≈ 3e-4; the topic chain
    // correlates draws and inflates it several-fold.
    assert!(d < 0.01, "chi-square distance {d}");
    let uniform = vec![1.0 / cfg.concepts as f64; cfg.concepts];
    assert!(chi2_distance(&counts, &uniform) > 100.0 * d);

    let share_a = world
        .corpus
        .iter()
        .filter(|s| s.language == Language::A)
        .count() as f64
        / 50_000.0;
    assert!((share_a - 0.5).abs() < 0.01, "language A share {share_a}");
}

#[test]
fn generation_is_deterministic() {
    let cfg = WorldConfig {
        concepts: 100,
        sentences: 500,
        ..WorldConfig::default()
    };
    let a = generate_world(&cfg).unwrap();
    assert_eq!(a, generate_world(&cfg).unwrap());
    assert_eq!(a.lexicon.len(), 100);
    let other = generate_world(&WorldConfig { seed: 43, ..cfg }).unwrap();
    assert_ne!(a.lexicon, other.lexicon);
}

#[test]
fn world_files() {
    let world = generate_world(&WorldConfig {
        concepts: 30,
        sentences: 40,
        ..WorldConfig::default()
    })
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    world.save(dir.path()).unwrap();
    let lexicon = std::fs::read_to_string(dir.path().join("lexicon.csv")).unwrap();
    assert_eq!(
        lexicon.lines().next().unwrap(),
        "concept,a_word,b_word,probability"
    );
    assert_eq!(lexicon.lines().count(), 31);
    let corpus = std::fs::read_to_string(dir.path().join("corpus.txt")).unwrap();
    let lines: Vec<&str> = corpus.lines().collect();
    assert_eq!(lines.len(), 40);
    assert_eq!(
        lines[0].split(' ').collect::<Vec<_>>(),
        world.render(&world.corpus[0])
    );
}

fn default_setup() -> (
    MicroTransformer,
    lexalign_core::model::Vocabulary,
    lexalign_core::synth::SyntheticWorld,
) {
    let world = generate_world(&WorldConfig::default()).unwrap();
    let vocab = world.vocabulary().unwrap();
    let model = MicroTransformer::new(TransformerConfig::default(), &mut Rng::new(42)).unwrap();
    (model, vocab, world)
}

#[test]
fn zero_steps_returns_the_model() {
    let (model, vocab, world) = default_setup();
    let cfg = PretrainConfig {
        steps: 0,
        ..PretrainConfig::default()
    };
    let (out, log) = pretrain_toy(&model, &vocab, &world, &cfg).unwrap();
    assert_eq!(out, model);
    assert!(log.losses.is_empty());
}

#[test]
fn non_finite_loss_aborts() {
    let (mut model, vocab, world) = default_setup();
    model.token_embedding.data_mut()[70] = f64::NAN;
    let cfg = PretrainConfig {
        steps: 5,
        warmup_steps: 1,
        ..PretrainConfig::default()
    };
    assert!(matches!(
        pretrain_toy(&model, &vocab, &world, &cfg),
        Err(Error::NonFinite(_))
    ));
}

#[test]
fn pretraining_reduces_loss() {
    let (model, vocab, world) = default_setup();
    let (trained, log) = pretrain_toy(&model, &vocab, &world, &PretrainConfig::default()).unwrap();
    assert_eq!(log.losses.len(), 2000);
    let window = |end: usize| log.losses[end - 20..end].iter().sum::<f64>() / 20.0;
    assert!(
        window(2000) < window(100),
        "{} vs {}",
        window(2000),
        window(100)
    );
    let back =
        MicroTransformer::from_checkpoint_bytes(&trained.to_checkpoint_bytes().unwrap()).unwrap();
    assert_eq!(back, trained);
}
