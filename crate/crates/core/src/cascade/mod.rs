//! Cascaded decoding: prune spans by max-marginal at increasing Markov
//! orders, then run Viterbi over the surviving lattice.
//!
//! Iteration `m` works on a [`SpanSet`] of order `m - 1` (spans of `m`
//! tokens). Those spans are the states of a first-order chain; the edge
//! between overlapping states at positions `l` and `l + 1` is the
//! `(m + 1)`-token span starting at `l`, scored by `f_l^(m)`. Edge
//! max-marginals rank the order-`m` spans, and the top `K` per position
//! become the next span set.

mod decode;
mod prune;

pub use decode::{
    decode, run_cascade, CascadeOutput, DecodeConfig, Decoded, Diagnostics, IterationStats,
    LengthMode, LengthRule, PhaseTimes, PruneCriterion, TieBreak,
};
pub use prune::{
    build_chain, candidate_queries, init_unigram_set, prune_step, prune_with, repair,
    score_lattice, score_unigrams, PruneOutcome,
};

use std::collections::HashMap;

use thiserror::Error;

use crate::length_relax::WindowError;
use crate::potentials::ProviderError;
use crate::semiring_chain::{ChainError, ChainScores};
use crate::vocab::TokenId;

#[derive(Debug, Error)]
pub enum DecodeError {
    #[error("iteration {iteration}: {source}")]
    Provider {
        iteration: usize,
        #[source]
        source: ProviderError,
    },
    #[error("iteration {iteration}: {source}")]
    Chain {
        iteration: usize,
        #[source]
        source: ChainError,
    },
    #[error("lattice disconnected at position {position}")]
    Disconnected { position: usize },
    #[error("no feasible token at position {position}")]
    Infeasible { position: usize },
    #[error("invalid decode configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Window(#[from] WindowError),
}

/// A surviving span and the score it was selected with.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredSpan {
    pub tokens: Vec<TokenId>,
    pub score: f64,
}

/// Per-position surviving spans of `order + 1` tokens.
///
/// Spans at each position are sorted by token tuple; a span's index in that
/// order is its relabeled state id.
#[derive(Debug, Clone, PartialEq)]
pub struct SpanSet {
    order: usize,
    positions: Vec<Vec<ScoredSpan>>,
}

impl SpanSet {
    /// Sorts each position and checks span lengths and uniqueness.
    pub fn new(order: usize, mut positions: Vec<Vec<ScoredSpan>>) -> Result<Self, DecodeError> {
        for (l, spans) in positions.iter_mut().enumerate() {
            if spans.is_empty() {
                return Err(DecodeError::Disconnected { position: l });
            }
            if spans.iter().any(|s| s.tokens.len() != order + 1) {
                return Err(DecodeError::Config(format!(
                    "position {l}: span length does not match order {order}"
                )));
            }
            spans.sort_by(|a, b| a.tokens.cmp(&b.tokens));
            if spans.windows(2).any(|w| w[0].tokens == w[1].tokens) {
                return Err(DecodeError::Config(format!("position {l}: duplicate span")));
            }
        }
        Ok(SpanSet { order, positions })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn num_positions(&self) -> usize {
        self.positions.len()
    }

    /// Lattice length covered: positions plus order.
    pub fn lattice_len(&self) -> usize {
        self.positions.len() + self.order
    }

    pub fn position(&self, l: usize) -> &[ScoredSpan] {
        &self.positions[l]
    }

    pub fn positions(&self) -> &[Vec<ScoredSpan>] {
        &self.positions
    }

    pub fn total_spans(&self) -> usize {
        self.positions.iter().map(Vec::len).sum()
    }

    /// Relabeled state id of a span at position `l`.
    pub fn phi(&self, l: usize, tokens: &[TokenId]) -> Option<usize> {
        self.positions[l]
            .binary_search_by(|s| s.tokens.as_slice().cmp(tokens))
            .ok()
    }

    /// Whether a span at `l` and a span at `l + 1` share their `order`
    /// overlapping tokens.
    pub fn compatible(&self, left: &[TokenId], right: &[TokenId]) -> bool {
        left[1..] == right[..self.order]
    }

    /// Mask-only chain whose feasible paths are exactly the sequences in
    /// this lattice.
    pub fn structure(&self) -> ChainScores {
        let counts = self.positions.iter().map(Vec::len).collect();
        ChainScores::from_fn(counts, |l, i, j| {
            let (a, b) = (&self.positions[l][i].tokens, &self.positions[l + 1][j].tokens);
            self.compatible(a, b).then_some(0.0)
        })
        .expect("span set positions are non-empty")
    }

    /// Every span has a compatible neighbour on each side.
    pub fn is_connected(&self) -> bool {
        (0..self.positions.len().saturating_sub(1)).all(|l| {
            self.positions[l].iter().all(|a| {
                self.positions[l + 1]
                    .iter()
                    .any(|b| self.compatible(&a.tokens, &b.tokens))
            }) && self.positions[l + 1].iter().all(|b| {
                self.positions[l]
                    .iter()
                    .any(|a| self.compatible(&a.tokens, &b.tokens))
            })
        })
    }

    /// Tokens of a state path through the lattice.
    pub fn path_tokens(&self, states: &[usize]) -> Vec<TokenId> {
        let mut out = self.positions[0][states[0]].tokens.clone();
        for (l, &s) in states.iter().enumerate().skip(1) {
            out.push(*self.positions[l][s].tokens.last().expect("non-empty span"));
        }
        out
    }
}

/// Log potentials of one order for the spans a lattice can use.
/// Missing entries score `-∞`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PotentialTable {
    order: usize,
    positions: Vec<HashMap<Vec<TokenId>, f64>>,
}

impl PotentialTable {
    pub fn new(order: usize, positions: usize) -> Self {
        PotentialTable {
            order,
            positions: vec![HashMap::new(); positions],
        }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn num_positions(&self) -> usize {
        self.positions.len()
    }

    pub fn insert(&mut self, position: usize, tokens: Vec<TokenId>, value: f64) {
        self.positions[position].insert(tokens, value);
    }

    pub fn get(&self, position: usize, tokens: &[TokenId]) -> f64 {
        self.positions
            .get(position)
            .and_then(|m| m.get(tokens))
            .copied()
            .unwrap_or(f64::NEG_INFINITY)
    }

    pub fn entries(&self, position: usize) -> impl Iterator<Item = (&Vec<TokenId>, f64)> {
        self.positions[position].iter().map(|(k, &v)| (k, v))
    }
}
