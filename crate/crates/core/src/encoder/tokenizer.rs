//! Closed word-level vocabulary and tokenizer.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const BOS: &str = "[bos]";
pub const EOS: &str = "[eos]";
pub const BOS_ID: u32 = 0;
pub const EOS_ID: u32 = 1;

/// Lower-cased words with sentence punctuation removed.
pub fn words(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|w| {
            w.trim_matches(|c: char| matches!(c, ',' | '.' | ';' | ':' | '?' | '!'))
                .to_lowercase()
        })
        .filter(|w| !w.is_empty())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    words: Vec<String>,
    index: HashMap<String, u32>,
}

impl From<Vec<String>> for Vocab {
    fn from(words: Vec<String>) -> Self {
        let index = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i as u32))
            .collect();
        Vocab { words, index }
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.words
    }
}

impl Vocab {
    /// BOS and EOS first, then the lexicon in sorted order.
    pub fn from_lexicon(lexicon: &BTreeSet<String>) -> Self {
        let mut words = vec![BOS.to_string(), EOS.to_string()];
        words.extend(lexicon.iter().cloned());
        Vocab::from(words)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn id(&self, word: &str) -> Option<u32> {
        self.index.get(word).copied()
    }

    pub fn word(&self, id: u32) -> Option<&str> {
        self.words.get(id as usize).map(|s| s.as_str())
    }

    pub fn tokenize(&self, caption: &str, max_len: usize) -> Result<TokenSequence> {
        let ws = words(caption);
        if ws.is_empty() {
            return Err(Error::EmptyCaption);
        }
        let mut ids = Vec::with_capacity(ws.len() + 2);
        ids.push(BOS_ID);
        for w in &ws {
            let id = self.id(w).ok_or_else(|| Error::UnknownWord {
                word: w.clone(),
                caption: caption.to_string(),
            })?;
            ids.push(id);
        }
        ids.push(EOS_ID);
        if ids.len() > max_len {
            return Err(Error::SequenceTooLong {
                len: ids.len(),
                max: max_len,
            });
        }
        Ok(TokenSequence { ids })
    }

    pub fn decode(&self, seq: &TokenSequence) -> Vec<&str> {
        seq.ids.iter().map(|&i| self.word(i).unwrap_or("?")).collect()
    }
}

/// Token ids framed by BOS and EOS.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenSequence {
    ids: Vec<u32>,
}

impl TokenSequence {
    /// Build from raw ids, checking the framing and id range.
    pub fn from_ids(ids: Vec<u32>, vocab_size: usize, max_len: usize) -> Result<Self> {
        if ids.len() < 2 {
            return Err(Error::Contract(format!("sequence of length {} is shorter than 2", ids.len())));
        }
        if ids.len() > max_len {
            return Err(Error::SequenceTooLong {
                len: ids.len(),
                max: max_len,
            });
        }
        if ids[0] != BOS_ID || ids[ids.len() - 1] != EOS_ID {
            return Err(Error::Contract("sequence must start with BOS and end with EOS".into()));
        }
        if let Some(bad) = ids.iter().find(|&&i| i as usize >= vocab_size) {
            return Err(Error::Index(format!("token id {bad} >= vocab size {vocab_size}")));
        }
        Ok(TokenSequence { ids })
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn bos_position(&self) -> usize {
        0
    }

    pub fn eos_position(&self) -> usize {
        self.ids.len() - 1
    }
}
