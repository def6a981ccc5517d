// SPDX-License-Identifier: Apache-2.0

//! Synthetic bilingual world.
//!
//! `K` concepts each have one word in language A and one in language B.
//! Concept frequencies follow Zipf(s). Sentences are monolingual walks on a
//! concept chain whose stationary distribution is exactly the Zipf
//! distribution:
//!
//! - with probability `1 − stickiness` the next concept is a fresh Zipf draw;
//! - otherwise one of `topic_partitions` random partitions of the concepts is
//!   picked uniformly and the next concept is drawn from Zipf restricted to
//!   the current concept's group in that partition.
//!
//! The joint law of consecutive concepts is symmetric with Zipf marginals,
//! so every position of every sentence is Zipf-distributed. Each concept's
//! successor distribution depends on its group memberships, which gives
//! translation equivalents identical context statistics in the two
//! languages without any shared surface token.

use std::collections::HashSet;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::pairs::{Split, WordPair, WordPairSet};
use crate::error::{Error, Result};
use crate::model::Vocabulary;
use crate::numcore::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldConfig {
    pub concepts: usize,
    pub sentences: usize,
    pub sentence_len: usize,
    pub seed: u64,
    pub zipf_exponent: f64,
    pub topic_partitions: usize,
    pub topic_groups: usize,
    pub stickiness: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            concepts: 200,
            sentences: 20_000,
            sentence_len: 12,
            seed: 42,
            zipf_exponent: 1.1,
            topic_partitions: 3,
            topic_groups: 8,
            stickiness: 0.8,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.concepts < 20 {
            return Err(Error::Config(format!(
                "need at least 20 concepts, got {}",
                self.concepts
            )));
        }
        if self.sentences == 0 || self.sentence_len < 2 {
            return Err(Error::Config(
                "need at least one sentence of two or more words".into(),
            ));
        }
        if !(self.zipf_exponent > 0.0 && self.zipf_exponent.is_finite()) {
            return Err(Error::Config("zipf_exponent must be positive".into()));
        }
        if self.topic_partitions == 0 || self.topic_groups == 0 {
            return Err(Error::Config(
                "topic_partitions and topic_groups must be positive".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.stickiness) {
            return Err(Error::Config("stickiness must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Language {
    A,
    B,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sentence {
    pub language: Language,
    pub concepts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticWorld {
    pub config: WorldConfig,
    /// `(language A word, language B word)` per concept; concept ids are
    /// Zipf ranks starting at 0.
    pub lexicon: Vec<(String, String)>,
    pub corpus: Vec<Sentence>,
}

/// Normalized Zipf probabilities `p_r ∝ r^{-s}` for ranks `1..=k`.
pub fn zipf_probabilities(k: usize, s: f64) -> Vec<f64> {
    let w: Vec<f64> = (1..=k).map(|r| (r as f64).powf(-s)).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|x| x / total).collect()
}

fn cumulative(weights: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut acc = 0.0;
    weights
        .map(|w| {
            acc += w;
            acc
        })
        .collect()
}

const A_ONSETS: &[&str] = &[
    "b", "d", "h", "j", "k", "l", "m", "n", "s", "t", "w", "z", "ch", "ng",
];
const A_VOWELS: &[&str] = &["a", "e", "i", "o", "u"];
const B_ONSETS: &[&str] = &["f", "g", "p", "r", "v", "br", "gr", "pl", "st", "tr"];
const B_VOWELS: &[&str] = &["a", "e", "i", "o", "u", "ea", "oo"];
const B_CODAS: &[&str] = &["d", "k", "l", "n", "p", "r", "s", "t", "x"];

fn word_a(rng: &mut Rng) -> String {
    let syllables = 2 + rng.below(2);
    (0..syllables)
        .map(|_| {
            format!(
                "{}{}",
                A_ONSETS[rng.below(A_ONSETS.len())],
                A_VOWELS[rng.below(A_VOWELS.len())]
            )
        })
        .collect()
}

fn word_b(rng: &mut Rng) -> String {
    let syllables = 1 + rng.below(2);
    (0..syllables)
        .map(|_| {
            format!(
                "{}{}{}",
                B_ONSETS[rng.below(B_ONSETS.len())],
                B_VOWELS[rng.below(B_VOWELS.len())],
                B_CODAS[rng.below(B_CODAS.len())]
            )
        })
        .collect()
}

fn unique_words(
    k: usize,
    rng: &mut Rng,
    make: fn(&mut Rng) -> String,
    taken: &mut HashSet<String>,
) -> Vec<String> {
    let mut out = Vec::with_capacity(k);
    while out.len() < k {
        let w = make(rng);
        if taken.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

/// Generates lexicon and corpus from the configuration.
pub fn generate_world(config: &WorldConfig) -> Result<SyntheticWorld> {
    config.validate()?;
    let k = config.concepts;
    let mut rng = Rng::derive(config.seed, 0x5EED_0001);

    // A words end in a vowel, B words in a consonant: the vocabularies are
    // disjoint by construction.
    let mut taken = HashSet::new();
    let a_words = unique_words(k, &mut rng, word_a, &mut taken);
    let b_words = unique_words(k, &mut rng, word_b, &mut taken);
    let lexicon: Vec<(String, String)> = a_words.into_iter().zip(b_words).collect();

    let zipf = zipf_probabilities(k, config.zipf_exponent);
    let global = cumulative(zipf.iter().copied());
    let mut topic_rng = Rng::derive(config.seed, 0x5EED_0002);
    // partitions[p][c] = group of concept c in partition p
    let partitions: Vec<Vec<usize>> = (0..config.topic_partitions)
        .map(|_| {
            (0..k)
                .map(|_| topic_rng.below(config.topic_groups))
                .collect()
        })
        .collect();
    // members[p][g] = (concept ids, cumulative Zipf weights) of that group
    let members: Vec<Vec<(Vec<usize>, Vec<f64>)>> = partitions
        .iter()
        .map(|part| {
            (0..config.topic_groups)
                .map(|g| {
                    let ids: Vec<usize> = (0..k).filter(|&c| part[c] == g).collect();
                    let cum = cumulative(ids.iter().map(|&c| zipf[c]));
                    (ids, cum)
                })
                .collect()
        })
        .collect();

    let mut walk = Rng::derive(config.seed, 0x5EED_0003);
    let corpus = (0..config.sentences)
        .map(|_| {
            let language = if walk.bernoulli(0.5) {
                Language::A
            } else {
                Language::B
            };
            let mut concepts = Vec::with_capacity(config.sentence_len);
            let mut cur = walk.sample_cumulative(&global);
            concepts.push(cur);
            while concepts.len() < config.sentence_len {
                cur = if walk.bernoulli(config.stickiness) {
                    let p = walk.below(config.topic_partitions);
                    let (ids, cum) = &members[p][partitions[p][cur]];
                    ids[walk.sample_cumulative(cum)]
                } else {
                    walk.sample_cumulative(&global)
                };
                concepts.push(cur);
            }
            Sentence { language, concepts }
        })
        .collect();

    Ok(SyntheticWorld {
        config: config.clone(),
        lexicon,
        corpus,
    })
}

impl SyntheticWorld {
    pub fn word(&self, concept: usize, language: Language) -> &str {
        let (a, b) = &self.lexicon[concept];
        match language {
            Language::A => a,
            Language::B => b,
        }
    }

    pub fn render(&self, sentence: &Sentence) -> Vec<&str> {
        sentence
            .concepts
            .iter()
            .map(|&c| self.word(c, sentence.language))
            .collect()
    }

    /// `<unk>`, then every A word, then every B word, in concept order.
    pub fn vocabulary(&self) -> Result<Vocabulary> {
        let tokens = self
            .lexicon
            .iter()
            .map(|(a, _)| a.as_str())
            .chain(self.lexicon.iter().map(|(_, b)| b.as_str()));
        Vocabulary::new(tokens)
    }

    /// Every lexicon entry as an A→B pair tagged `trained`.
    pub fn lexicon_pairs(&self) -> Result<WordPairSet> {
        WordPairSet::new(
            self.lexicon
                .iter()
                .map(|(a, b)| WordPair::new(a, b, Split::Trained))
                .collect(),
        )
    }

    /// Corpus as token-id rows.
    pub fn token_ids(&self, vocab: &Vocabulary) -> Result<Vec<Vec<usize>>> {
        self.corpus
            .iter()
            .map(|s| {
                self.render(s)
                    .into_iter()
                    .map(|w| {
                        vocab.id(w).ok_or_else(|| {
                            Error::Config(format!("vocabulary does not cover {w:?}"))
                        })
                    })
                    .collect()
            })
            .collect()
    }

    /// Writes `lexicon.csv` (`concept,a_word,b_word,probability`) and
    /// `corpus.txt` (one sentence per line) into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let lex_path = dir.join("lexicon.csv");
        let mut w = csv::Writer::from_path(&lex_path).map_err(|e| csv_err(&lex_path, e))?;
        w.write_record(["concept", "a_word", "b_word", "probability"])
            .map_err(|e| csv_err(&lex_path, e))?;
        let zipf = zipf_probabilities(self.lexicon.len(), self.config.zipf_exponent);
        for (c, (a, b)) in self.lexicon.iter().enumerate() {
            w.write_record([c.to_string(), a.clone(), b.clone(), zipf[c].to_string()])
                .map_err(|e| csv_err(&lex_path, e))?;
        }
        w.flush().map_err(|e| Error::io(&lex_path, e))?;

        let corpus_path = dir.join("corpus.txt");
        let file = std::fs::File::create(&corpus_path).map_err(|e| Error::io(&corpus_path, e))?;
        let mut out = std::io::BufWriter::new(file);
        for s in &self.corpus {
            writeln!(out, "{}", self.render(s).join(" "))
                .map_err(|e| Error::io(&corpus_path, e))?;
        }
        out.flush().map_err(|e| Error::io(&corpus_path, e))
    }
}

pub(crate) fn csv_err(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Parse {
            path: path.display().to_string(),
            line,
            reason: format!("{other:?}"),
        },
    }
}
