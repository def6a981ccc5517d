// SPDX-License-Identifier: Apache-2.0

use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};

pub const UNK_TOKEN: &str = "<unk>";

/// Word-level vocabulary. Ids are dense and equal to the token's position
/// in the vocabulary file (one token per line).
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    unk: usize,
}

/// Token ids for one text, with the attention mask and a per-token flag for
/// words that fell back to the unknown id.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoding {
    pub ids: Vec<usize>,
    pub mask: Vec<bool>,
    pub unknown: Vec<bool>,
}

impl Encoding {
    pub fn has_unknown(&self) -> bool {
        self.unknown.iter().any(|&u| u)
    }
}

impl Vocabulary {
    /// Builds a vocabulary; `<unk>` is prepended when absent. Tokens are
    /// lowercased, must be non-empty, contain no whitespace and be unique.
    pub fn new<I, S>(tokens: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut list: Vec<String> = tokens
            .into_iter()
            .map(|t| t.as_ref().to_lowercase())
            .collect();
        if !list.iter().any(|t| t == UNK_TOKEN) {
            list.insert(0, UNK_TOKEN.to_string());
        }
        let mut index = HashMap::with_capacity(list.len());
        for (id, tok) in list.iter().enumerate() {
            if tok.is_empty() || tok.chars().any(char::is_whitespace) {
                return Err(Error::Config(format!("invalid token {tok:?} at id {id}")));
            }
            if index.insert(tok.clone(), id).is_some() {
                return Err(Error::Config(format!("duplicate token {tok:?}")));
            }
        }
        let unk = index[UNK_TOKEN];
        Ok(Self {
            tokens: list,
            index,
            unk,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn unk_id(&self) -> usize {
        self.unk
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Whitespace split, lowercase, map to ids.
    pub fn tokenize(&self, text: &str) -> Result<Encoding> {
        let words: Vec<String> = text.split_whitespace().map(str::to_lowercase).collect();
        if words.is_empty() {
            return Err(Error::EmptyText);
        }
        let mut ids = Vec::with_capacity(words.len());
        let mut unknown = Vec::with_capacity(words.len());
        for w in &words {
            match self.index.get(w) {
                Some(&id) => {
                    ids.push(id);
                    unknown.push(false);
                }
                None => {
                    ids.push(self.unk);
                    unknown.push(true);
                }
            }
        }
        Ok(Encoding {
            mask: vec![true; ids.len()],
            ids,
            unknown,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = self.tokens.join("\n");
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let tokens: Vec<&str> = text.lines().collect();
        if let Some(line) = tokens.iter().position(|t| t.trim().is_empty()) {
            return Err(Error::Parse {
                path: path.display().to_string(),
                line: line as u64 + 1,
                reason: "empty token".into(),
            });
        }
        Self::new(tokens)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> Vocabulary {
        Vocabulary::new(["asante", "sana", "kamba"]).unwrap()
    }

    #[test]
    fn two_known_words() {
        let enc = vocab().tokenize("asante sana").unwrap();
        assert_eq!(enc.ids, vec![1, 2]);
        assert_eq!(enc.mask, vec![true, true]);
        assert!(!enc.has_unknown());
    }

    #[test]
    fn lowercases() {
        let enc = vocab().tokenize("Kamba").unwrap();
        assert_eq!(enc.ids, vec![3]);
    }

    #[test]
    fn unknown_word_flagged() {
        let v = vocab();
        let enc = v.tokenize("kamba rope").unwrap();
        assert_eq!(enc.ids, vec![3, v.unk_id()]);
        assert_eq!(enc.unknown, vec![false, true]);
    }

    #[test]
    fn empty_text_rejected() {
        assert!(matches!(vocab().tokenize("  \t "), Err(Error::EmptyText)));
    }

    #[test]
    fn ids_are_dense_and_bijective() {
        let v = vocab();
        for (id, tok) in v.tokens().iter().enumerate() {
            assert_eq!(v.id(tok), Some(id));
            assert_eq!(v.token(id), Some(tok.as_str()));
        }
        assert!(Vocabulary::new(["a", "A"]).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("vocab.txt");
        let v = vocab();
        v.save(&p).unwrap();
        assert_eq!(Vocabulary::load(&p).unwrap(), v);
        assert_eq!(
            std::fs::read_to_string(&p).unwrap(),
            "<unk>\nasante\nsana\nkamba\n"
        );
    }
}
