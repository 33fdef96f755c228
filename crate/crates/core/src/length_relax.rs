//! Variable-length decoding through pad/eos potential surgery.
//!
//! Candidates of `L - ΔL ..= L + ΔL` tokens (counting the final `eos`) share
//! one lattice of `L + ΔL + 1` positions. Positions are 0-based here. With
//! `p` the 0-based index of a token, the rules are:
//!
//! * `eos` must be followed by `pad`, `pad` by `pad`, and only `eos` or
//!   `pad` may precede `pad`;
//! * `eos` at `p < L - ΔL - 1` is forbidden;
//! * the token at `p = L + ΔL` must be `pad`;
//! * `pad` cannot open the lattice.
//!
//! Forbidden spans score `-∞`. A span ending in `eos → pad` or `pad → pad`
//! scores 0, so trailing pads never change a sequence's score. A span at
//! position 0 that already contains `eos` and pads scores its pad-free
//! prefix at the corresponding lower order.

use thiserror::Error;

use crate::potentials::{check_span, PotentialProvider, ProviderError, ScoreBatch, SpanQuery};
use crate::vocab::{TokenId, Vocabulary};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WindowError {
    #[error("length window invalid: predicted length {predicted} minus delta {delta} must be at least 1")]
    Invalid { predicted: usize, delta: usize },
    #[error("unterminated hypothesis: no eos in decoded path")]
    Unterminated,
}

/// Output lengths `predicted - delta ..= predicted + delta`, eos included.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub struct LengthWindow {
    predicted: usize,
    delta: usize,
}

impl LengthWindow {
    pub fn new(predicted: usize, delta: usize) -> Result<Self, WindowError> {
        if predicted < delta + 1 {
            return Err(WindowError::Invalid { predicted, delta });
        }
        Ok(LengthWindow { predicted, delta })
    }

    pub fn predicted(&self) -> usize {
        self.predicted
    }

    pub fn delta(&self) -> usize {
        self.delta
    }

    pub fn lattice_len(&self) -> usize {
        self.predicted + self.delta + 1
    }

    /// Smallest 0-based index at which `eos` may appear.
    pub fn earliest_eos(&self) -> usize {
        self.predicted - self.delta - 1
    }

    /// Largest 0-based index at which `eos` may appear.
    pub fn latest_eos(&self) -> usize {
        self.predicted + self.delta - 1
    }

    pub fn final_index(&self) -> usize {
        self.predicted + self.delta
    }
}

/// Provider wrapper applying the window rules on top of `base`.
pub struct LengthRelaxed<P> {
    base: P,
    window: LengthWindow,
    vocab: Vocabulary,
    eos: TokenId,
    pad: TokenId,
}

pub fn wrap_potentials<P: PotentialProvider>(base: P, window: LengthWindow) -> LengthRelaxed<P> {
    let vocab = base.vocab().with_pad();
    let eos = vocab.eos();
    let pad = vocab.pad().expect("with_pad adds pad");
    LengthRelaxed {
        base,
        window,
        vocab,
        eos,
        pad,
    }
}

/// How a wrapped span is resolved.
enum Resolution {
    Fixed(f64),
    Base(SpanQuery),
}

impl<P: PotentialProvider> LengthRelaxed<P> {
    pub fn window(&self) -> LengthWindow {
        self.window
    }

    pub fn base(&self) -> &P {
        &self.base
    }

    pub fn pad(&self) -> TokenId {
        self.pad
    }

    fn resolve(&self, order: usize, position: usize, span: &[TokenId]) -> Result<Resolution, ProviderError> {
        check_span(order, self.base.max_order(), span)?;
        if position + order >= self.window.lattice_len() {
            return Err(ProviderError::Protocol(format!(
                "span at {position} of order {order} runs past lattice length {}",
                self.window.lattice_len()
            )));
        }
        if let Some(&bad) = span.iter().find(|&&t| t as usize >= self.vocab.len()) {
            return Err(ProviderError::UnknownToken(bad));
        }
        let (eos, pad) = (self.eos, self.pad);
        const NEG: Resolution = Resolution::Fixed(f64::NEG_INFINITY);

        for (j, &t) in span.iter().enumerate() {
            let p = position + j;
            if t == eos && p < self.window.earliest_eos() {
                return Ok(NEG);
            }
            if p == self.window.final_index() && t != pad {
                return Ok(NEG);
            }
        }
        if position == 0 && span[0] == pad {
            return Ok(NEG);
        }
        for pair in span.windows(2) {
            let (prev, next) = (pair[0], pair[1]);
            let ok = if prev == eos || prev == pad {
                next == pad
            } else {
                next != pad
            };
            if !ok {
                return Ok(NEG);
            }
        }
        match span.iter().position(|&t| t == pad) {
            None => Ok(Resolution::Base(SpanQuery {
                order,
                position,
                tokens: span.to_vec(),
            })),
            Some(first_pad) if position == 0 => {
                // pair rules guarantee span[first_pad - 1] == eos
                Ok(Resolution::Base(SpanQuery {
                    order: first_pad - 1,
                    position: 0,
                    tokens: span[..first_pad].to_vec(),
                }))
            }
            Some(_) => Ok(Resolution::Fixed(0.0)),
        }
    }
}

impl<P: PotentialProvider> PotentialProvider for LengthRelaxed<P> {
    fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn max_order(&self) -> usize {
        self.base.max_order()
    }

    fn set_context(&self, source: &[TokenId]) -> Result<(), ProviderError> {
        self.base.set_context(source)
    }

    fn score(&self, order: usize, position: usize, span: &[TokenId]) -> Result<f64, ProviderError> {
        match self.resolve(order, position, span)? {
            Resolution::Fixed(v) => Ok(v),
            Resolution::Base(q) => self.base.score(q.order, q.position, &q.tokens),
        }
    }

    fn score_batch(&self, batch: &ScoreBatch) -> Result<Vec<f64>, ProviderError> {
        let mut out = vec![0.0; batch.queries.len()];
        let mut forwarded = Vec::new();
        let mut slots = Vec::new();
        for (i, q) in batch.queries.iter().enumerate() {
            match self.resolve(q.order, q.position, &q.tokens)? {
                Resolution::Fixed(v) => out[i] = v,
                Resolution::Base(bq) => {
                    forwarded.push(bq);
                    slots.push(i);
                }
            }
        }
        if !forwarded.is_empty() {
            let values = self.base.score_batch(&ScoreBatch {
                iteration: batch.iteration,
                queries: forwarded,
            })?;
            if values.len() != slots.len() {
                return Err(ProviderError::Protocol(format!(
                    "base scorer returned {} values for {} spans",
                    values.len(),
                    slots.len()
                )));
            }
            for (slot, v) in slots.into_iter().zip(values) {
                out[slot] = v;
            }
        }
        Ok(out)
    }
}

/// Drops the first `eos` and everything after it.
pub fn strip_padding(path: &[TokenId], eos: TokenId) -> Result<Vec<TokenId>, WindowError> {
    let end = path
        .iter()
        .position(|&t| t == eos)
        .ok_or(WindowError::Unterminated)?;
    Ok(path[..end].to_vec())
}
