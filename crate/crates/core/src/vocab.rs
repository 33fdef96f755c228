use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type TokenId = u32;

pub const EOS_TOKEN: &str = "<eos>";
pub const PAD_TOKEN: &str = "<pad>";
pub const EPSILON_TOKEN: &str = "<eps>";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum VocabError {
    #[error("duplicate token {0:?}")]
    Duplicate(String),
    #[error("vocabulary has no {EOS_TOKEN} token")]
    MissingEos,
    #[error("token {0:?} contains whitespace or is empty")]
    BadToken(String),
    #[error("unknown token {0:?}")]
    Unknown(String),
    #[error("token id {0} out of range")]
    OutOfRange(TokenId),
}

/// Dense token table. Ids are `0..len`; `eos` is always present, `pad` is
/// adjoined only at decode time and `<eps>` only for scorers that use it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
    eos: TokenId,
    pad: Option<TokenId>,
    epsilon: Option<TokenId>,
}

impl Vocabulary {
    pub fn new<I, S>(tokens: I) -> Result<Self, VocabError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let tokens: Vec<String> = tokens.into_iter().map(Into::into).collect();
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(VocabError::BadToken(t.clone()));
            }
            if index.insert(t.clone(), i as TokenId).is_some() {
                return Err(VocabError::Duplicate(t.clone()));
            }
        }
        let eos = *index.get(EOS_TOKEN).ok_or(VocabError::MissingEos)?;
        let pad = index.get(PAD_TOKEN).copied();
        let epsilon = index.get(EPSILON_TOKEN).copied();
        Ok(Vocabulary {
            tokens,
            index,
            eos,
            pad,
            epsilon,
        })
    }

    /// Collects every distinct token in order of first appearance, then
    /// appends `<eos>` if the corpus never mentions it.
    pub fn from_sentences<'a, I>(sentences: I) -> Result<Self, VocabError>
    where
        I: IntoIterator<Item = &'a [String]>,
    {
        let mut seen = HashMap::new();
        let mut tokens = Vec::new();
        for sent in sentences {
            for tok in sent {
                if !seen.contains_key(tok) {
                    seen.insert(tok.clone(), ());
                    tokens.push(tok.clone());
                }
            }
        }
        if !seen.contains_key(EOS_TOKEN) {
            tokens.push(EOS_TOKEN.to_string());
        }
        Self::new(tokens)
    }

    /// Copy with `<pad>` appended (no-op if already present).
    pub fn with_pad(&self) -> Vocabulary {
        if self.pad.is_some() {
            return self.clone();
        }
        let mut tokens = self.tokens.clone();
        tokens.push(PAD_TOKEN.to_string());
        Vocabulary::new(tokens).expect("adding pad keeps the table valid")
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn eos(&self) -> TokenId {
        self.eos
    }

    pub fn pad(&self) -> Option<TokenId> {
        self.pad
    }

    pub fn epsilon(&self) -> Option<TokenId> {
        self.epsilon
    }

    /// Tokens a scorer may emit: everything except `<pad>` and `<eps>`.
    pub fn emittable(&self) -> impl Iterator<Item = TokenId> + '_ {
        (0..self.tokens.len() as TokenId)
            .filter(move |&t| Some(t) != self.pad && Some(t) != self.epsilon)
    }

    pub fn emittable_count(&self) -> usize {
        self.len() - self.pad.is_some() as usize - self.epsilon.is_some() as usize
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode<S: AsRef<str>>(&self, words: &[S]) -> Result<Vec<TokenId>, VocabError> {
        words
            .iter()
            .map(|w| self.id(w.as_ref()).ok_or_else(|| VocabError::Unknown(w.as_ref().to_string())))
            .collect()
    }

    pub fn decode(&self, ids: &[TokenId]) -> Result<Vec<&str>, VocabError> {
        ids.iter()
            .map(|&i| self.token(i).ok_or(VocabError::OutOfRange(i)))
            .collect()
    }
}

impl TryFrom<Vec<String>> for Vocabulary {
    type Error = VocabError;

    fn try_from(tokens: Vec<String>) -> Result<Self, Self::Error> {
        Vocabulary::new(tokens)
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.tokens
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reserved_ids() {
        let v = Vocabulary::new(["a", "b", EOS_TOKEN]).unwrap();
        assert_eq!(v.eos(), 2);
        assert_eq!(v.pad(), None);
        let p = v.with_pad();
        assert_eq!(p.pad(), Some(3));
        assert_eq!(p.emittable().collect::<Vec<_>>(), vec![0, 1, 2]);
        assert_eq!(p.emittable_count(), 3);
    }

    #[test]
    fn rejects_duplicates_and_missing_eos() {
        assert_eq!(
            Vocabulary::new(["a", "a", EOS_TOKEN]),
            Err(VocabError::Duplicate("a".into()))
        );
        assert_eq!(Vocabulary::new(["a"]), Err(VocabError::MissingEos));
    }

    #[test]
    fn encode_unknown() {
        let v = Vocabulary::new(["a", EOS_TOKEN]).unwrap();
        assert_eq!(v.encode(&["a", "z"]), Err(VocabError::Unknown("z".into())));
    }
}
