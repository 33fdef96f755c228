//! Semiring kernels over first-order chains.
//!
//! A chain has `edges + 1` positions; position `p` carries `state_counts[p]`
//! states and edge `e` scores every transition from a state at position `e`
//! to a state at position `e + 1`. All scores are natural-log values. A cell
//! is feasible iff its mask bit is set; infeasible cells behave as `-∞`.
//!
//! The kernels here are the parallel tree scan for edge max-marginals, the
//! serial forward-backward oracle it is checked against, Viterbi with a
//! deterministic tie-break, and exact path counting.

mod semiring;
mod serial;
mod tree;

pub use semiring::{Counting, Mat, MaxPlus, Semiring};
pub use serial::{count_paths, serial_max_marginals, viterbi};
pub use tree::{tree_max_marginals, tree_scan};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ChainError {
    #[error("degenerate chain: at least one edge is required")]
    Degenerate,
    #[error("empty max-marginal set{}", match .edge { Some(e) => format!(" (edge {e} has no feasible cell)"), None => String::from(" (no feasible path)") })]
    EmptyMaxMarginalSet { edge: Option<usize> },
    #[error("edge {edge}: expected {expected} cells, got {got}")]
    Shape {
        edge: usize,
        expected: usize,
        got: usize,
    },
    #[error("edge {edge}: score {value} is not a finite real or -inf")]
    InvalidScore { edge: usize, value: f64 },
    #[error("chain needs {expected} state counts, got {got}")]
    StateCounts { expected: usize, got: usize },
    #[error("position {0} has no states")]
    EmptyPosition(usize),
}

/// Scores of one edge, row-major `[left state][right state]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeScores {
    rows: usize,
    cols: usize,
    scores: Vec<f64>,
    mask: Vec<bool>,
}

impl EdgeScores {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_feasible(&self, k1: usize, k2: usize) -> bool {
        self.mask[k1 * self.cols + k2]
    }

    /// Log-score of a cell, `-∞` when masked.
    #[inline]
    pub fn score(&self, k1: usize, k2: usize) -> f64 {
        let i = k1 * self.cols + k2;
        if self.mask[i] {
            self.scores[i]
        } else {
            f64::NEG_INFINITY
        }
    }

    pub fn any_feasible(&self) -> bool {
        self.mask.iter().any(|&m| m)
    }

    pub(crate) fn to_mat<S: Semiring>(&self, f: impl Fn(bool, f64) -> S) -> Mat<S> {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self
                .mask
                .iter()
                .zip(&self.scores)
                .map(|(&m, &s)| f(m, s))
                .collect(),
        }
    }
}

/// First-order chain of log-scores with an authoritative feasibility mask.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainScores {
    state_counts: Vec<usize>,
    edges: Vec<EdgeScores>,
}

impl ChainScores {
    /// Builds a chain from per-edge row-major score vectors. A `-∞` entry
    /// marks the cell infeasible; NaN and `+∞` are rejected.
    pub fn new(state_counts: Vec<usize>, edges: Vec<Vec<f64>>) -> Result<Self, ChainError> {
        if edges.len() + 1 != state_counts.len() {
            return Err(ChainError::StateCounts {
                expected: edges.len() + 1,
                got: state_counts.len(),
            });
        }
        for (e, cells) in edges.iter().enumerate() {
            let expected = state_counts[e] * state_counts[e + 1];
            if cells.len() != expected {
                return Err(ChainError::Shape {
                    edge: e,
                    expected,
                    got: cells.len(),
                });
            }
        }
        let widths: Vec<usize> = state_counts[1..].to_vec();
        Self::from_fn(state_counts, |e, k1, k2| Some(edges[e][k1 * widths[e] + k2]))
    }

    /// Builds a chain cell by cell; `None` marks a cell infeasible.
    pub fn from_fn<F>(state_counts: Vec<usize>, mut cell: F) -> Result<Self, ChainError>
    where
        F: FnMut(usize, usize, usize) -> Option<f64>,
    {
        if state_counts.is_empty() {
            return Err(ChainError::StateCounts {
                expected: 1,
                got: 0,
            });
        }
        if let Some(p) = state_counts.iter().position(|&k| k == 0) {
            return Err(ChainError::EmptyPosition(p));
        }
        let mut edges = Vec::with_capacity(state_counts.len() - 1);
        for e in 0..state_counts.len() - 1 {
            let (rows, cols) = (state_counts[e], state_counts[e + 1]);
            let mut scores = Vec::with_capacity(rows * cols);
            let mut mask = Vec::with_capacity(rows * cols);
            for k1 in 0..rows {
                for k2 in 0..cols {
                    match cell(e, k1, k2) {
                        Some(v) if v.is_nan() || v == f64::INFINITY => {
                            return Err(ChainError::InvalidScore { edge: e, value: v })
                        }
                        Some(v) if v == f64::NEG_INFINITY => {
                            scores.push(f64::NEG_INFINITY);
                            mask.push(false);
                        }
                        Some(v) => {
                            scores.push(v);
                            mask.push(true);
                        }
                        None => {
                            scores.push(f64::NEG_INFINITY);
                            mask.push(false);
                        }
                    }
                }
            }
            edges.push(EdgeScores {
                rows,
                cols,
                scores,
                mask,
            });
        }
        Ok(ChainScores {
            state_counts,
            edges,
        })
    }

    /// Number of edges, i.e. positions minus one.
    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn num_positions(&self) -> usize {
        self.state_counts.len()
    }

    pub fn state_counts(&self) -> &[usize] {
        &self.state_counts
    }

    pub fn edge(&self, e: usize) -> &EdgeScores {
        &self.edges[e]
    }

    pub fn edges(&self) -> &[EdgeScores] {
        &self.edges
    }

    /// Total score of a state path, `-∞` if any transition is masked.
    pub fn path_score(&self, path: &[usize]) -> f64 {
        assert_eq!(path.len(), self.num_positions());
        self.edges
            .iter()
            .enumerate()
            .map(|(e, edge)| edge.score(path[e], path[e + 1]))
            .sum()
    }

    pub(crate) fn check_scorable(&self) -> Result<(), ChainError> {
        if self.edges.is_empty() {
            return Err(ChainError::Degenerate);
        }
        if let Some(e) = self.edges.iter().position(|edge| !edge.any_feasible()) {
            return Err(ChainError::EmptyMaxMarginalSet { edge: Some(e) });
        }
        Ok(())
    }
}

/// Log max-marginals for every cell of every edge (`-∞` where no path exists).
#[derive(Debug, Clone, PartialEq)]
pub struct MaxMarginalTable {
    edges: Vec<Mat<MaxPlus>>,
}

impl MaxMarginalTable {
    pub(crate) fn from_mats(edges: Vec<Mat<MaxPlus>>) -> Self {
        MaxMarginalTable { edges }
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn dims(&self, e: usize) -> (usize, usize) {
        (self.edges[e].rows, self.edges[e].cols)
    }

    #[inline]
    pub fn get(&self, e: usize, k1: usize, k2: usize) -> f64 {
        self.edges[e].at(k1, k2).0
    }

    /// Row-major values of one edge.
    pub fn edge_values(&self, e: usize) -> impl Iterator<Item = f64> + '_ {
        self.edges[e].data.iter().map(|v| v.0)
    }

    pub fn edge_max(&self, e: usize) -> f64 {
        self.edge_values(e).fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Counters from one tree scan.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize)]
pub struct ScanTrace {
    /// Sequential bottom-up merge rounds.
    pub levels_up: usize,
    /// Sequential top-down rounds.
    pub levels_down: usize,
    /// Output cells written; each is one K-way semiring reduction.
    pub cell_ops: u64,
}
