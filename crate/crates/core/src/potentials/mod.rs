//! Log-potential providers.
//!
//! A provider scores a span of `order + 1` tokens starting at lattice
//! position `position`. Scores are natural-log values; `-∞` marks a span
//! the model forbids. Three providers live here: a count-based m-gram model,
//! static potential tables read from text files, and a client for external
//! scorers speaking the line protocol in [`stream`].

mod file;
mod ngram;
pub mod stream;

pub use file::{load_potentials, save_potentials, tabulate, ParseError, PotentialFile};
pub use ngram::{train_ngram, NgramError, NgramModel};
pub use stream::{serve, serve_connection, ServeStats, StreamScorer};

use rayon::prelude::*;
use thiserror::Error;

use crate::vocab::{TokenId, VocabError, Vocabulary};

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("order {order} exceeds the scorer's maximum order {max}")]
    UnsupportedOrder { order: usize, max: usize },
    #[error("span of {got} tokens does not match order {order}")]
    SpanLength { order: usize, got: usize },
    #[error("token id {0} is not scorable by this provider")]
    UnknownToken(TokenId),
    #[error("scorer returned invalid value {value} for order {order} at position {position}")]
    InvalidValue {
        order: usize,
        position: usize,
        value: f64,
    },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("remote scorer error: {0}")]
    Remote(String),
    #[error("scorer timed out")]
    Timeout,
    #[error("transport error: {0}")]
    Transport(#[from] std::io::Error),
    #[error(transparent)]
    Vocab(#[from] VocabError),
}

/// One span to score.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SpanQuery {
    pub order: usize,
    pub position: usize,
    pub tokens: Vec<TokenId>,
}

/// A batch of span queries issued by one cascade iteration.
#[derive(Debug, Clone, Default)]
pub struct ScoreBatch {
    /// Cascade iteration that issued the batch; remote scorers may use it
    /// to reuse state cached during the previous iteration.
    pub iteration: Option<usize>,
    pub queries: Vec<SpanQuery>,
}

/// Source of log potentials `f_l^(m)(x_{l..=l+m})`.
///
/// Implementations must be deterministic and safe to call from many threads.
pub trait PotentialProvider: Send + Sync {
    fn vocab(&self) -> &Vocabulary;

    /// Highest order `m` the provider can score.
    fn max_order(&self) -> usize;

    /// Establishes the conditioning input for the sentence about to be decoded.
    fn set_context(&self, _source: &[TokenId]) -> Result<(), ProviderError> {
        Ok(())
    }

    fn score(&self, order: usize, position: usize, span: &[TokenId]) -> Result<f64, ProviderError>;

    fn score_batch(&self, batch: &ScoreBatch) -> Result<Vec<f64>, ProviderError> {
        batch
            .queries
            .par_iter()
            .map(|q| self.score(q.order, q.position, &q.tokens))
            .collect()
    }
}

impl<P: PotentialProvider + ?Sized> PotentialProvider for &P {
    fn vocab(&self) -> &Vocabulary {
        (**self).vocab()
    }

    fn max_order(&self) -> usize {
        (**self).max_order()
    }

    fn set_context(&self, source: &[TokenId]) -> Result<(), ProviderError> {
        (**self).set_context(source)
    }

    fn score(&self, order: usize, position: usize, span: &[TokenId]) -> Result<f64, ProviderError> {
        (**self).score(order, position, span)
    }

    fn score_batch(&self, batch: &ScoreBatch) -> Result<Vec<f64>, ProviderError> {
        (**self).score_batch(batch)
    }
}

impl<P: PotentialProvider + ?Sized> PotentialProvider for Box<P> {
    fn vocab(&self) -> &Vocabulary {
        (**self).vocab()
    }

    fn max_order(&self) -> usize {
        (**self).max_order()
    }

    fn set_context(&self, source: &[TokenId]) -> Result<(), ProviderError> {
        (**self).set_context(source)
    }

    fn score(&self, order: usize, position: usize, span: &[TokenId]) -> Result<f64, ProviderError> {
        (**self).score(order, position, span)
    }

    fn score_batch(&self, batch: &ScoreBatch) -> Result<Vec<f64>, ProviderError> {
        (**self).score_batch(batch)
    }
}

impl<P: PotentialProvider + ?Sized> PotentialProvider for std::sync::Arc<P> {
    fn vocab(&self) -> &Vocabulary {
        (**self).vocab()
    }

    fn max_order(&self) -> usize {
        (**self).max_order()
    }

    fn set_context(&self, source: &[TokenId]) -> Result<(), ProviderError> {
        (**self).set_context(source)
    }

    fn score(&self, order: usize, position: usize, span: &[TokenId]) -> Result<f64, ProviderError> {
        (**self).score(order, position, span)
    }

    fn score_batch(&self, batch: &ScoreBatch) -> Result<Vec<f64>, ProviderError> {
        (**self).score_batch(batch)
    }
}

pub(crate) fn check_span(
    order: usize,
    max_order: usize,
    span: &[TokenId],
) -> Result<(), ProviderError> {
    if order > max_order {
        return Err(ProviderError::UnsupportedOrder {
            order,
            max: max_order,
        });
    }
    if span.len() != order + 1 {
        return Err(ProviderError::SpanLength {
            order,
            got: span.len(),
        });
    }
    Ok(())
}

/// Scores the given queries and rejects NaN or `+∞` results.
pub fn score_checked(
    provider: &dyn PotentialProvider,
    batch: &ScoreBatch,
) -> Result<Vec<f64>, ProviderError> {
    let values = provider.score_batch(batch)?;
    if values.len() != batch.queries.len() {
        return Err(ProviderError::Protocol(format!(
            "expected {} scores, got {}",
            batch.queries.len(),
            values.len()
        )));
    }
    for (q, &v) in batch.queries.iter().zip(&values) {
        if v.is_nan() || v == f64::INFINITY {
            return Err(ProviderError::InvalidValue {
                order: q.order,
                position: q.position,
                value: v,
            });
        }
    }
    Ok(values)
}
