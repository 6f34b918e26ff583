use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::{DataError, Result};

/// Index reserved for padding; never produced by a real token.
pub const PAD_INDEX: usize = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum UnknownPolicy {
    Reject,
    /// Unseen characters map to one extra index after the known tokens.
    MapToUnknown,
}

/// Character vocabulary with contiguous indices `1..=V`.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<char>,
    index: HashMap<char, usize>,
    policy: UnknownPolicy,
}

impl Vocabulary {
    /// Collects every character of `corpus`, in sorted order.
    pub fn build<'a>(corpus: impl IntoIterator<Item = &'a str>, policy: UnknownPolicy) -> Self {
        let set: BTreeSet<char> = corpus.into_iter().flat_map(str::chars).collect();
        Self::from_chars(set.into_iter().collect(), policy)
    }

    /// A fixed token list; each character of `tokens` is one token.
    pub fn from_tokens(tokens: &str, policy: UnknownPolicy) -> Result<Self> {
        let chars: Vec<char> = tokens.chars().collect();
        let unique: BTreeSet<char> = chars.iter().copied().collect();
        if unique.len() != chars.len() {
            return Err(DataError::Parameter(format!("duplicate characters in token list {tokens:?}")));
        }
        if chars.is_empty() {
            return Err(DataError::Parameter("empty token list".into()));
        }
        Ok(Self::from_chars(chars, policy))
    }

    fn from_chars(tokens: Vec<char>, policy: UnknownPolicy) -> Self {
        let index = tokens.iter().enumerate().map(|(i, &c)| (c, i + 1)).collect();
        Self { tokens, index, policy }
    }

    /// Number of real tokens.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Rows needed in an embedding table: padding, tokens, and the unknown slot.
    pub fn table_size(&self) -> usize {
        self.tokens.len() + 1 + usize::from(self.policy == UnknownPolicy::MapToUnknown)
    }

    pub fn policy(&self) -> UnknownPolicy {
        self.policy
    }

    pub fn unknown_index(&self) -> Option<usize> {
        (self.policy == UnknownPolicy::MapToUnknown).then_some(self.tokens.len() + 1)
    }

    pub fn index_of(&self, c: char) -> Option<usize> {
        self.index.get(&c).copied()
    }

    /// The token list as a string, in index order.
    pub fn tokens(&self) -> String {
        self.tokens.iter().collect()
    }

    /// Encodes `text` to exactly `max_len` indices.
    pub fn encode(&self, text: &str, max_len: usize) -> Result<Vec<usize>> {
        let mut out = Vec::with_capacity(max_len);
        for (position, c) in text.chars().take(max_len).enumerate() {
            let idx = match (self.index_of(c), self.unknown_index()) {
                (Some(i), _) => i,
                (None, Some(u)) => u,
                (None, None) => return Err(DataError::UnknownToken { token: c, position }),
            };
            out.push(idx);
        }
        out.resize(max_len, PAD_INDEX);
        Ok(out)
    }

    /// Inverse of [`Vocabulary::encode`]; padding is dropped, unknowns become `?`.
    pub fn decode(&self, indices: &[usize]) -> String {
        indices.iter().filter(|&&i| i != PAD_INDEX).map(|&i| self.tokens.get(i - 1).copied().unwrap_or('?')).collect()
    }
}
