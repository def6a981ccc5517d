// SPDX-License-Identifier: Apache-2.0

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::world::csv_err;
use crate::error::{Error, Result};
use crate::numcore::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Trained,
    Control,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Trained => "trained",
            Split::Control => "control",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "trained" => Ok(Split::Trained),
            "control" => Ok(Split::Control),
            other => Err(format!(
                "unknown split {other:?} (expected trained or control)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct WordPair {
    pub source: String,
    pub target: String,
    pub split: Split,
}

impl WordPair {
    pub fn new(source: &str, target: &str, split: Split) -> Self {
        Self {
            source: source.to_string(),
            target: target.to_string(),
            split,
        }
    }

    /// Lowercased whitespace tokens of both sides.
    pub fn surface_words(&self) -> impl Iterator<Item = String> + '_ {
        self.source
            .split_whitespace()
            .chain(self.target.split_whitespace())
            .map(str::to_lowercase)
    }
}

/// Ordered word pairs. No `(source, target)` appears twice, and no control
/// pair shares a surface word with any trained pair.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct WordPairSet {
    pairs: Vec<WordPair>,
}

impl WordPairSet {
    pub fn new(pairs: Vec<WordPair>) -> Result<Self> {
        let mut seen = HashSet::new();
        for p in &pairs {
            if p.source.trim().is_empty() || p.target.trim().is_empty() {
                return Err(Error::Contract("word pair with an empty side".into()));
            }
            if !seen.insert((p.source.as_str(), p.target.as_str())) {
                return Err(Error::DuplicatePair {
                    source_word: p.source.clone(),
                    target_word: p.target.clone(),
                });
            }
        }
        let trained: HashSet<String> = pairs
            .iter()
            .filter(|p| p.split == Split::Trained)
            .flat_map(WordPair::surface_words)
            .collect();
        if let Some(p) = pairs
            .iter()
            .filter(|p| p.split == Split::Control)
            .find(|p| p.surface_words().any(|w| trained.contains(&w)))
        {
            return Err(Error::Contract(format!(
                "control pair ({}, {}) shares a word with the trained pairs",
                p.source, p.target
            )));
        }
        Ok(Self { pairs })
    }

    pub fn pairs(&self) -> &[WordPair] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn subset(&self, split: Split) -> WordPairSet {
        WordPairSet {
            pairs: self
                .pairs
                .iter()
                .filter(|p| p.split == split)
                .cloned()
                .collect(),
        }
    }

    /// Reads a `source,target,split` CSV file.
    pub fn load(path: &Path) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .flexible(true)
            .from_path(path)
            .map_err(|e| csv_err(path, e))?;
        let header = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
        if header.iter().collect::<Vec<_>>() != ["source", "target", "split"] {
            return Err(Error::Parse {
                path: path.display().to_string(),
                line: 1,
                reason: format!(
                    "expected header source,target,split, found {:?}",
                    header.iter().collect::<Vec<_>>()
                ),
            });
        }
        let mut pairs = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| csv_err(path, e))?;
            let line = rec.position().map_or(0, |p| p.line());
            let bad = |reason: String| Error::Parse {
                path: path.display().to_string(),
                line,
                reason,
            };
            if rec.len() != 3 {
                return Err(bad(format!("expected 3 fields, found {}", rec.len())));
            }
            let split = rec[2].parse::<Split>().map_err(bad)?;
            if rec[0].trim().is_empty() || rec[1].trim().is_empty() {
                return Err(bad("empty source or target".into()));
            }
            let pair = WordPair::new(&rec[0], &rec[1], split);
            if pairs
                .iter()
                .any(|p: &WordPair| p.source == pair.source && p.target == pair.target)
            {
                return Err(bad(format!(
                    "duplicate pair ({}, {})",
                    pair.source, pair.target
                )));
            }
            pairs.push(pair);
        }
        Self::new(pairs)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
        w.write_record(["source", "target", "split"])
            .map_err(|e| csv_err(path, e))?;
        for p in &self.pairs {
            w.write_record([p.source.as_str(), p.target.as_str(), p.split.as_str()])
                .map_err(|e| csv_err(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Re-tags pairs into trained and control sets.
///
/// `round(control_fraction · n)` pairs become control. Candidates are taken
/// in seeded-shuffle order; a candidate is skipped when one of its surface
/// words also occurs in a pair that is not (yet) control, so the final
/// control set shares no word with the trained set. Output keeps the input
/// order.
pub fn split_pairs(pairs: &WordPairSet, control_fraction: f64, seed: u64) -> Result<WordPairSet> {
    if !(control_fraction > 0.0 && control_fraction < 1.0) {
        return Err(Error::Config(format!(
            "control fraction must lie strictly between 0 and 1, got {control_fraction}"
        )));
    }
    let n = pairs.len();
    let want = (control_fraction * n as f64).round() as usize;
    if want == 0 || want >= n {
        return Err(Error::Config(format!(
            "control fraction {control_fraction} of {n} pairs yields {want} control pairs"
        )));
    }
    // word → indices of pairs using it
    let mut users: HashMap<String, Vec<usize>> = HashMap::new();
    for (i, p) in pairs.pairs.iter().enumerate() {
        for w in p.surface_words() {
            let list = users.entry(w).or_default();
            if list.last() != Some(&i) {
                list.push(i);
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    Rng::derive(seed, 0x5711_7000).shuffle(&mut order);

    let mut control = vec![false; n];
    let mut chosen = 0;
    for &i in &order {
        if chosen == want {
            break;
        }
        let shares = pairs.pairs[i]
            .surface_words()
            .any(|w| users[&w].iter().any(|&j| j != i && !control[j]));
        if !shares {
            control[i] = true;
            chosen += 1;
        }
    }
    if chosen < want {
        return Err(Error::Config(format!(
            "only {chosen} of {want} control pairs can be made word-disjoint from the trained set"
        )));
    }
    let tagged = pairs
        .pairs
        .iter()
        .zip(&control)
        .map(|(p, &c)| WordPair {
            split: if c { Split::Control } else { Split::Trained },
            ..p.clone()
        })
        .collect();
    WordPairSet::new(tagged)
}
