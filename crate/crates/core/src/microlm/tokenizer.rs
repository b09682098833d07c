//! Word-level tokenizer.
//!
//! Text is lowercase words separated by single spaces, with `.` attached to
//! the preceding word. Encoding splits the period into its own token;
//! decoding reattaches it, so `decode(encode(t)) == t` for canonical text.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
const PERIOD: &str = ".";
const SPECIALS: [&str; 2] = ["<pad>", "<bos>"];

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TokenizerError {
    #[error("word {0:?} is not in the vocabulary")]
    Unknown(String),
    #[error("token id {0} out of range")]
    BadId(u32),
    #[error("vocabulary must start with <pad>, <bos>")]
    BadSpecials,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "TokenizerRepr", into = "TokenizerRepr")]
pub struct Tokenizer {
    vocab: Vec<String>,
    index: BTreeMap<String, u32>,
}

#[derive(Serialize, Deserialize)]
struct TokenizerRepr {
    vocab: Vec<String>,
}

impl TryFrom<TokenizerRepr> for Tokenizer {
    type Error = TokenizerError;

    fn try_from(r: TokenizerRepr) -> Result<Self, Self::Error> {
        Tokenizer::from_vocab(r.vocab)
    }
}

impl From<Tokenizer> for TokenizerRepr {
    fn from(t: Tokenizer) -> Self {
        TokenizerRepr { vocab: t.vocab }
    }
}

impl Tokenizer {
    /// Builds a vocabulary from words; order is specials, `.`, then sorted
    /// words, so the same word set always yields the same ids.
    pub fn from_words<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut set: BTreeSet<String> = BTreeSet::new();
        for w in words {
            let w = w.as_ref();
            if w != PERIOD && !SPECIALS.contains(&w) && !w.is_empty() {
                set.insert(w.to_string());
            }
        }
        let mut vocab: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        vocab.push(PERIOD.to_string());
        vocab.extend(set);
        Self::from_vocab(vocab).expect("specials present")
    }

    pub fn from_vocab(vocab: Vec<String>) -> Result<Self, TokenizerError> {
        if vocab.len() < 2 || vocab[0] != SPECIALS[0] || vocab[1] != SPECIALS[1] {
            return Err(TokenizerError::BadSpecials);
        }
        let index = vocab.iter().enumerate().map(|(i, w)| (w.clone(), i as u32)).collect();
        Ok(Self { vocab, index })
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn len(&self) -> usize {
        self.vocab.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vocab.is_empty()
    }

    pub fn id(&self, word: &str) -> Option<u32> {
        self.index.get(word).copied()
    }

    pub fn contains(&self, word: &str) -> bool {
        self.index.contains_key(word)
    }

    pub fn encode(&self, text: &str) -> Result<Vec<u32>, TokenizerError> {
        let mut out = Vec::new();
        self.encode_into(text, &mut out)?;
        Ok(out)
    }

    pub fn encode_into(&self, text: &str, out: &mut Vec<u32>) -> Result<(), TokenizerError> {
        for raw in text.split_whitespace() {
            let (word, period) = match raw.strip_suffix('.') {
                Some(w) => (w, true),
                None => (raw, false),
            };
            if !word.is_empty() {
                let id = self.id(word).ok_or_else(|| TokenizerError::Unknown(word.to_string()))?;
                out.push(id);
            }
            if period {
                out.push(self.index[PERIOD]);
            }
        }
        Ok(())
    }

    pub fn decode(&self, ids: &[u32]) -> Result<String, TokenizerError> {
        let mut out = String::new();
        for &id in ids {
            let w = self.vocab.get(id as usize).ok_or(TokenizerError::BadId(id))?;
            if !out.is_empty() && w != PERIOD {
                out.push(' ');
            }
            out.push_str(w);
        }
        Ok(out)
    }
}
