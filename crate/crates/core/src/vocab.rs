//! Vocabulary and token sequences.

use std::collections::HashMap;
use std::ops::Deref;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub type TokenId = u32;

pub const PAD: TokenId = 0;
pub const BOS: TokenId = 1;
pub const EOS: TokenId = 2;
pub const UNK: TokenId = 3;

const RESERVED: [&str; 4] = ["<pad>", "<bos>", "<eos>", "<unk>"];

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum VocabError {
    #[error("duplicate symbol {0:?}")]
    Duplicate(String),
    #[error("symbol {0:?} collides with a reserved token")]
    Reserved(String),
    #[error("symbol {0:?} contains whitespace")]
    Whitespace(String),
    #[error("token id {id} out of range for vocabulary of size {size}")]
    OutOfRange { id: TokenId, size: usize },
}

/// Ordered list of distinct symbols. Ids 0..4 are PAD, BOS, EOS, UNK.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    symbols: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Vocabulary {
    /// Builds a vocabulary from the non-reserved symbols, in order.
    pub fn new<I, S>(words: I) -> Result<Self, VocabError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut symbols: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        let mut index: HashMap<String, TokenId> = symbols
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i as TokenId))
            .collect();
        for w in words {
            let w = w.into();
            if RESERVED.contains(&w.as_str()) {
                return Err(VocabError::Reserved(w));
            }
            if w.is_empty() || w.chars().any(char::is_whitespace) {
                return Err(VocabError::Whitespace(w));
            }
            if index.contains_key(&w) {
                return Err(VocabError::Duplicate(w));
            }
            index.insert(w.clone(), symbols.len() as TokenId);
            symbols.push(w);
        }
        Ok(Self { symbols, index })
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn id(&self, word: &str) -> Option<TokenId> {
        self.index.get(word).copied()
    }

    pub fn symbol(&self, id: TokenId) -> Option<&str> {
        self.symbols.get(id as usize).map(String::as_str)
    }

    /// Whitespace tokenization; unknown words map to [`UNK`].
    pub fn tokenize(&self, text: &str) -> TokenSequence {
        TokenSequence(
            text.split_whitespace()
                .map(|w| self.id(w).unwrap_or(UNK))
                .collect(),
        )
    }

    /// Joins symbols with single spaces, stopping at the first EOS.
    pub fn detokenize(&self, tokens: &[TokenId]) -> String {
        tokens
            .iter()
            .take_while(|&&t| t != EOS)
            .map(|&t| self.symbol(t).unwrap_or("<unk>"))
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn check(&self, tokens: &[TokenId]) -> Result<(), VocabError> {
        match tokens.iter().find(|&&t| t as usize >= self.len()) {
            Some(&id) => Err(VocabError::OutOfRange {
                id,
                size: self.len(),
            }),
            None => Ok(()),
        }
    }

    /// SHA-256 over the newline-joined symbol list, hex encoded.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        for s in &self.symbols {
            hasher.update(s.as_bytes());
            hasher.update(b"\n");
        }
        hex::encode(hasher.finalize())
    }
}

impl TryFrom<Vec<String>> for Vocabulary {
    type Error = VocabError;

    fn try_from(symbols: Vec<String>) -> Result<Self, Self::Error> {
        if symbols.len() < RESERVED.len()
            || symbols.iter().zip(RESERVED).any(|(a, b)| a != b)
        {
            return Err(VocabError::Reserved(symbols.join(" ")));
        }
        Self::new(symbols.into_iter().skip(RESERVED.len()))
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.symbols
    }
}

/// Ordered list of token ids.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenSequence(pub Vec<TokenId>);

impl TokenSequence {
    pub fn new(tokens: Vec<TokenId>) -> Self {
        Self(tokens)
    }

    pub fn into_inner(self) -> Vec<TokenId> {
        self.0
    }

    /// Tokens up to (excluding) the first EOS.
    pub fn strip_eos(&self) -> &[TokenId] {
        strip_eos(&self.0)
    }
}

impl Deref for TokenSequence {
    type Target = [TokenId];

    fn deref(&self) -> &[TokenId] {
        &self.0
    }
}

impl From<Vec<TokenId>> for TokenSequence {
    fn from(v: Vec<TokenId>) -> Self {
        Self(v)
    }
}

pub fn strip_eos(tokens: &[TokenId]) -> &[TokenId] {
    match tokens.iter().position(|&t| t == EOS) {
        Some(p) => &tokens[..p],
        None => tokens,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn abc() -> Vocabulary {
        Vocabulary::new(["a", "b", "c"]).unwrap()
    }

    #[test]
    fn tokenize_empty() {
        assert!(abc().tokenize("").is_empty());
        assert!(abc().tokenize("   ").is_empty());
    }

    #[test]
    fn tokenize_maps_through_vocab() {
        let v = abc();
        let a = v.id("a").unwrap();
        let b = v.id("b").unwrap();
        assert_eq!(v.tokenize("a b a").0, vec![a, b, a]);
    }

    #[test]
    fn unknown_maps_to_unk() {
        let v = abc();
        assert_eq!(v.tokenize("a zzz").0, vec![v.id("a").unwrap(), UNK]);
    }

    #[test]
    fn reserved_ids_are_distinct_and_fixed() {
        let v = abc();
        assert_eq!(v.len(), 7);
        assert_eq!(v.symbol(PAD), Some("<pad>"));
        assert_eq!(v.symbol(BOS), Some("<bos>"));
        assert_eq!(v.symbol(EOS), Some("<eos>"));
        assert_eq!(v.symbol(UNK), Some("<unk>"));
    }

    #[test]
    fn rejects_duplicates_and_reserved() {
        assert_eq!(
            Vocabulary::new(["a", "a"]).unwrap_err(),
            VocabError::Duplicate("a".into())
        );
        assert!(Vocabulary::new(["<eos>"]).is_err());
        assert!(Vocabulary::new(["a b"]).is_err());
    }

    #[test]
    fn detokenize_stops_at_eos() {
        let v = abc();
        let t = v.tokenize("c b");
        let mut toks = t.0.clone();
        toks.push(EOS);
        toks.push(v.id("a").unwrap());
        assert_eq!(v.detokenize(&toks), "c b");
    }

    #[test]
    fn serde_round_trip_and_digest() {
        let v = abc();
        let json = serde_json::to_string(&v).unwrap();
        let back: Vocabulary = serde_json::from_str(&json).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.digest(), v.digest());
        assert_ne!(Vocabulary::new(["a"]).unwrap().digest(), v.digest());
    }
}
