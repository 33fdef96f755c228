use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{check_span, PotentialProvider, ProviderError};
use crate::vocab::{TokenId, VocabError, Vocabulary, EOS_TOKEN};

#[derive(Debug, Error)]
pub enum NgramError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("n-gram order must be at least 1, got {0}")]
    InvalidOrder(usize),
    #[error("add-k constant must be positive and finite, got {0}")]
    InvalidAddK(f64),
    #[error("sentence {0} does not end with {EOS_TOKEN}")]
    MissingEos(usize),
    #[error(transparent)]
    Vocab(#[from] VocabError),
    #[error("model file: {0}")]
    Format(#[from] serde_json::Error),
    #[error("model file: {0}")]
    Io(#[from] std::io::Error),
    #[error("model file: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Default, PartialEq)]
struct ContextCounts {
    total: u64,
    next: HashMap<TokenId, u64>,
}

/// Count-based n-gram language model with add-k smoothing.
///
/// `order` is the n-gram length, so contexts hold at most `order - 1`
/// tokens. Contexts are never padded with a start symbol; near the start of
/// a sentence the context is simply shorter.
#[derive(Debug, Clone, PartialEq)]
pub struct NgramModel {
    order: usize,
    add_k: f64,
    vocab: Vocabulary,
    sentences: usize,
    counts: HashMap<Vec<TokenId>, ContextCounts>,
}

pub fn train_ngram<S: AsRef<str>>(
    corpus: &[Vec<S>],
    order: usize,
    add_k: f64,
) -> Result<NgramModel, NgramError> {
    if order == 0 {
        return Err(NgramError::InvalidOrder(order));
    }
    if !(add_k > 0.0 && add_k.is_finite()) {
        return Err(NgramError::InvalidAddK(add_k));
    }
    if corpus.is_empty() {
        return Err(NgramError::EmptyCorpus);
    }
    let owned: Vec<Vec<String>> = corpus
        .iter()
        .map(|s| s.iter().map(|t| t.as_ref().to_string()).collect())
        .collect();
    for (i, sent) in owned.iter().enumerate() {
        if sent.last().map(String::as_str) != Some(EOS_TOKEN) {
            return Err(NgramError::MissingEos(i));
        }
    }
    let vocab = Vocabulary::from_sentences(owned.iter().map(Vec::as_slice))?;
    let mut counts: HashMap<Vec<TokenId>, ContextCounts> = HashMap::new();
    for sent in &owned {
        let ids = vocab.encode(sent)?;
        for j in 0..ids.len() {
            for ctx_len in 0..=j.min(order - 1) {
                let entry = counts.entry(ids[j - ctx_len..j].to_vec()).or_default();
                entry.total += 1;
                *entry.next.entry(ids[j]).or_default() += 1;
            }
        }
    }
    Ok(NgramModel {
        order,
        add_k,
        vocab,
        sentences: owned.len(),
        counts,
    })
}

impl NgramModel {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn add_k(&self) -> f64 {
        self.add_k
    }

    pub fn sentence_count(&self) -> usize {
        self.sentences
    }

    /// `ln P(token | context)`, with the context cut to its last `order - 1`
    /// tokens.
    pub fn log_prob(&self, context: &[TokenId], token: TokenId) -> f64 {
        let keep = context.len().min(self.order - 1);
        let ctx = &context[context.len() - keep..];
        let v = self.vocab.emittable_count() as f64;
        let (c_next, c_total) = match self.counts.get(ctx) {
            Some(cc) => (cc.next.get(&token).copied().unwrap_or(0), cc.total),
            None => (0, 0),
        };
        ((c_next as f64 + self.add_k) / (c_total as f64 + self.add_k * v)).ln()
    }

    /// Log-probability of a whole token sequence with contexts truncated to
    /// `max_context` tokens (and to the model order).
    pub fn sequence_log_prob(&self, tokens: &[TokenId], max_context: usize) -> f64 {
        (0..tokens.len())
            .map(|j| {
                let c = j.min(max_context);
                self.log_prob(&tokens[j - c..j], tokens[j])
            })
            .sum()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), NgramError> {
        let mut contexts: Vec<CountEntry> = self
            .counts
            .iter()
            .map(|(ctx, cc)| CountEntry {
                context: ctx.clone(),
                next: cc.next.iter().map(|(&t, &n)| (t, n)).collect::<BTreeMap<_, _>>().into_iter().collect(),
            })
            .collect();
        contexts.sort_by(|a, b| (a.context.len(), &a.context).cmp(&(b.context.len(), &b.context)));
        let file = ModelFile {
            format: MODEL_FORMAT.to_string(),
            version: 1,
            order: self.order,
            add_k: self.add_k,
            sentences: self.sentences,
            vocab: self.vocab.tokens().to_vec(),
            counts: contexts,
        };
        std::fs::write(path, serde_json::to_string(&file)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, NgramError> {
        let text = std::fs::read_to_string(path)?;
        let file: ModelFile = serde_json::from_str(&text)?;
        if file.format != MODEL_FORMAT || file.version != 1 {
            return Err(NgramError::Invalid(format!(
                "unsupported format {} v{}",
                file.format, file.version
            )));
        }
        if file.order == 0 {
            return Err(NgramError::InvalidOrder(0));
        }
        if !(file.add_k > 0.0 && file.add_k.is_finite()) {
            return Err(NgramError::InvalidAddK(file.add_k));
        }
        let vocab = Vocabulary::new(file.vocab)?;
        let mut counts = HashMap::with_capacity(file.counts.len());
        for entry in file.counts {
            let bad = entry
                .context
                .iter()
                .chain(entry.next.iter().map(|(t, _)| t))
                .any(|&t| t as usize >= vocab.len());
            if bad || entry.context.len() >= file.order {
                return Err(NgramError::Invalid(format!(
                    "bad count entry for context {:?}",
                    entry.context
                )));
            }
            let next: HashMap<TokenId, u64> = entry.next.into_iter().collect();
            let total = next.values().sum();
            counts.insert(entry.context, ContextCounts { total, next });
        }
        Ok(NgramModel {
            order: file.order,
            add_k: file.add_k,
            vocab,
            sentences: file.sentences,
            counts,
        })
    }
}

const MODEL_FORMAT: &str = "ngram-model";

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    order: usize,
    add_k: f64,
    sentences: usize,
    vocab: Vec<String>,
    counts: Vec<CountEntry>,
}

#[derive(Serialize, Deserialize)]
struct CountEntry {
    context: Vec<TokenId>,
    next: Vec<(TokenId, u64)>,
}

impl PotentialProvider for NgramModel {
    fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn max_order(&self) -> usize {
        self.order - 1
    }

    /// `f_l^(m)` is the log-probability of the span's last token given the
    /// rest of the span. The span at position 0 also carries the
    /// log-probabilities of its leading tokens, so the order-m sequence score
    /// is the sentence log-probability under contexts of at most m tokens.
    fn score(&self, order: usize, position: usize, span: &[TokenId]) -> Result<f64, ProviderError> {
        check_span(order, self.max_order(), span)?;
        if let Some(&bad) = span.iter().find(|&&t| t as usize >= self.vocab.len()) {
            return Err(ProviderError::UnknownToken(bad));
        }
        if position == 0 {
            Ok(self.sequence_log_prob(span, order))
        } else {
            Ok(self.log_prob(&span[..order], span[order]))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus(lines: &[&str]) -> Vec<Vec<String>> {
        lines
            .iter()
            .map(|l| l.split_whitespace().map(str::to_string).collect())
            .collect()
    }

    #[test]
    fn hand_counted_bigram() {
        let m = train_ngram(&corpus(&["a b <eos>"]), 2, 1.0).unwrap();
        let v = m.vocab();
        let (a, b) = (v.id("a").unwrap(), v.id("b").unwrap());
        assert!((m.log_prob(&[a], b) - 0.5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn unseen_context_is_uniform() {
        let m = train_ngram(&corpus(&["a b <eos>"]), 2, 0.3).unwrap();
        let eos = m.vocab().eos();
        // eos is never a context
        let expected = (0.3f64 / (0.3 * 3.0)).ln();
        for t in 0..3 {
            assert!((m.log_prob(&[eos], t) - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn errors() {
        assert!(matches!(
            train_ngram::<String>(&[], 2, 1.0),
            Err(NgramError::EmptyCorpus)
        ));
        assert!(matches!(
            train_ngram(&corpus(&["a <eos>"]), 0, 1.0),
            Err(NgramError::InvalidOrder(0))
        ));
        assert!(matches!(
            train_ngram(&corpus(&["a <eos>"]), 2, 0.0),
            Err(NgramError::InvalidAddK(_))
        ));
        assert!(matches!(
            train_ngram(&corpus(&["a b"]), 2, 1.0),
            Err(NgramError::MissingEos(0))
        ));
    }

    #[test]
    fn first_span_folds_prefix() {
        let m = train_ngram(&corpus(&["a b <eos>", "b a a <eos>"]), 3, 0.5).unwrap();
        let span = m.vocab().encode(&["a", "b", "<eos>"]).unwrap();
        let f0 = m.score(2, 0, &span).unwrap();
        let direct = m.log_prob(&[], span[0])
            + m.log_prob(&span[..1], span[1])
            + m.log_prob(&span[..2], span[2]);
        assert!((f0 - direct).abs() < 1e-12);
        let f1 = m.score(2, 1, &span).unwrap();
        assert_eq!(f1, m.log_prob(&span[..2], span[2]));
    }

    #[test]
    fn order_limit() {
        let m = train_ngram(&corpus(&["a <eos>"]), 2, 1.0).unwrap();
        assert!(matches!(
            m.score(2, 0, &[0, 0, 0]),
            Err(ProviderError::UnsupportedOrder { order: 2, max: 1 })
        ));
    }
}
