//! Word-level vocabulary: lowercase, whitespace-delimited, punctuation
//! stripped except apostrophes and hyphens. Id 0 is reserved for unknown words.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const UNK_ID: u32 = 0;
pub const UNK_TOKEN: &str = "<unk>";

/// Lowercase `text`, split on whitespace, and drop every character outside
/// `[a-z0-9'-]`. Words that end up empty are discarded.
pub fn normalize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|w| {
            w.chars()
                .flat_map(char::to_lowercase)
                .filter(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || *c == '\'' || *c == '-')
                .collect::<String>()
        })
        .filter(|w| !w.is_empty())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabEntry {
    pub token: String,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vocab {
    /// Index 0 is the UNK placeholder with count 0.
    id_to_token: Vec<String>,
    counts: Vec<u64>,
    token_to_id: HashMap<String, u32>,
    total_count: u64,
}

impl Vocab {
    /// Count normalized words over `documents` and assign ids by descending
    /// count, ties broken lexicographically.
    pub fn build<S: AsRef<str>>(documents: &[S]) -> Result<Self> {
        let mut counts: HashMap<String, u64> = HashMap::new();
        for doc in documents {
            for w in normalize(doc.as_ref()) {
                *counts.entry(w).or_default() += 1;
            }
        }
        if counts.is_empty() {
            return Err(Error::Empty("corpus after normalization"));
        }
        let mut entries: Vec<VocabEntry> = counts
            .into_iter()
            .map(|(token, count)| VocabEntry { token, count })
            .collect();
        entries.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.token.cmp(&b.token)));
        Self::from_entries(entries)
    }

    /// Entries in id order starting at id 1.
    pub fn from_entries(entries: Vec<VocabEntry>) -> Result<Self> {
        let mut id_to_token = Vec::with_capacity(entries.len() + 1);
        let mut counts = Vec::with_capacity(entries.len() + 1);
        let mut token_to_id = HashMap::with_capacity(entries.len());
        id_to_token.push(UNK_TOKEN.to_string());
        counts.push(0);
        let mut total_count = 0u64;
        for (idx, e) in entries.into_iter().enumerate() {
            if e.count == 0 {
                return Err(Error::InvalidParameter(format!(
                    "vocab token {:?} has count 0",
                    e.token
                )));
            }
            let id = (idx + 1) as u32;
            if token_to_id.insert(e.token.clone(), id).is_some() {
                return Err(Error::InvalidParameter(format!(
                    "duplicate vocab token {:?}",
                    e.token
                )));
            }
            total_count += e.count;
            id_to_token.push(e.token);
            counts.push(e.count);
        }
        if total_count == 0 {
            return Err(Error::Empty("vocabulary"));
        }
        Ok(Self {
            id_to_token,
            counts,
            token_to_id,
            total_count,
        })
    }

    /// Number of ids including UNK.
    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_token.len() <= 1
    }

    pub fn total_count(&self) -> u64 {
        self.total_count
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.token_to_id.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.id_to_token.get(id as usize).map(String::as_str)
    }

    pub fn count(&self, id: u32) -> u64 {
        self.counts.get(id as usize).copied().unwrap_or(0)
    }

    /// Unigram probability `count / total`; 0 for UNK.
    pub fn unigram_probability(&self, id: u32) -> f64 {
        self.count(id) as f64 / self.total_count as f64
    }

    pub fn encode(&self, text: &str) -> Vec<u32> {
        normalize(text)
            .iter()
            .map(|w| self.id(w).unwrap_or(UNK_ID))
            .collect()
    }

    /// Encode already-normalized words (e.g. a stimulus span).
    pub fn encode_words<S: AsRef<str>>(&self, words: &[S]) -> Vec<u32> {
        words
            .iter()
            .map(|w| self.id(w.as_ref()).unwrap_or(UNK_ID))
            .collect()
    }

    pub fn decode(&self, ids: &[u32]) -> Result<String> {
        Ok(self.decode_words(ids)?.join(" "))
    }

    pub fn decode_words(&self, ids: &[u32]) -> Result<Vec<String>> {
        ids.iter()
            .map(|&id| {
                self.token(id)
                    .map(str::to_string)
                    .ok_or(Error::TokenOutOfRange {
                        id,
                        vocab_size: self.len(),
                    })
            })
            .collect()
    }

    pub fn entries(&self) -> Vec<VocabEntry> {
        self.id_to_token
            .iter()
            .zip(&self.counts)
            .skip(1)
            .map(|(token, &count)| VocabEntry {
                token: token.clone(),
                count,
            })
            .collect()
    }

    /// Vocab file: JSON array of `{token, count}` in id order; UNK is implicit.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let entries: Vec<VocabEntry> = serde_json::from_slice(&fs::read(path)?)?;
        Self::from_entries(entries)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(&self.entries())?;
        bytes.push(b'\n');
        fs::write(path, bytes)?;
        Ok(())
    }
}
