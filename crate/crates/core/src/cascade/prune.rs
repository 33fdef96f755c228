use std::collections::{HashMap, HashSet};
use std::time::{Duration, Instant};

use super::{DecodeError, PotentialTable, PruneCriterion, ScoredSpan, SpanSet};
use crate::potentials::{score_checked, PotentialProvider, ScoreBatch, SpanQuery};
use crate::semiring_chain::{tree_max_marginals, viterbi, ChainScores, ScanTrace};
use crate::vocab::TokenId;

/// Order-0 potentials of every scorable token (all ids but `<eps>`) at
/// every position.
pub fn score_unigrams(
    provider: &dyn PotentialProvider,
    lattice_len: usize,
) -> Result<PotentialTable, DecodeError> {
    let vocab = provider.vocab();
    let ids: Vec<TokenId> = (0..vocab.len() as TokenId)
        .filter(|&t| Some(t) != vocab.epsilon())
        .collect();
    let queries: Vec<SpanQuery> = (0..lattice_len)
        .flat_map(|l| {
            ids.iter().map(move |&t| SpanQuery {
                order: 0,
                position: l,
                tokens: vec![t],
            })
        })
        .collect();
    fill_table(provider, 0, lattice_len, queries)
}

fn fill_table(
    provider: &dyn PotentialProvider,
    order: usize,
    positions: usize,
    queries: Vec<SpanQuery>,
) -> Result<PotentialTable, DecodeError> {
    let batch = ScoreBatch {
        iteration: Some(order),
        queries,
    };
    let values = score_checked(provider, &batch).map_err(|source| DecodeError::Provider {
        iteration: order,
        source,
    })?;
    let mut table = PotentialTable::new(order, positions);
    for (q, v) in batch.queries.into_iter().zip(values) {
        table.insert(q.position, q.tokens, v);
    }
    Ok(table)
}

/// Per position, the `k` tokens with the highest unary score (ties to the
/// smaller id), plus any `forced` tokens for that position, which do not
/// count against `k`. Tokens scoring `-∞` never survive.
pub fn init_unigram_set(
    table: &PotentialTable,
    k: usize,
    forced: &[Vec<TokenId>],
) -> Result<SpanSet, DecodeError> {
    assert_eq!(table.order(), 0, "unigram set needs order-0 potentials");
    let mut positions = Vec::with_capacity(table.num_positions());
    for l in 0..table.num_positions() {
        let extra: &[TokenId] = forced.get(l).map_or(&[], Vec::as_slice);
        let mut cands: Vec<ScoredSpan> = table
            .entries(l)
            .filter(|(t, v)| *v > f64::NEG_INFINITY && !extra.contains(&t[0]))
            .map(|(t, v)| ScoredSpan {
                tokens: t.clone(),
                score: v,
            })
            .collect();
        select_top_k(&mut cands, k, None);
        for &t in extra {
            let v = table.get(l, &[t]);
            if v > f64::NEG_INFINITY && !cands.iter().any(|s| s.tokens[0] == t) {
                cands.push(ScoredSpan {
                    tokens: vec![t],
                    score: v,
                });
            }
        }
        if cands.is_empty() {
            return Err(DecodeError::Infeasible { position: l });
        }
        positions.push(cands);
    }
    SpanSet::new(0, positions)
}

/// Order `spans.order() + 1` spans formed by every compatible pair of
/// adjacent states.
pub fn candidate_queries(spans: &SpanSet) -> Vec<SpanQuery> {
    let order = spans.order() + 1;
    let mut out = Vec::new();
    for l in 0..spans.num_positions().saturating_sub(1) {
        let mut by_prefix: HashMap<&[TokenId], Vec<TokenId>> = HashMap::new();
        for b in spans.position(l + 1) {
            by_prefix
                .entry(&b.tokens[..spans.order()])
                .or_default()
                .push(*b.tokens.last().expect("non-empty span"));
        }
        for a in spans.position(l) {
            if let Some(lasts) = by_prefix.get(&a.tokens[1..]) {
                for &t in lasts {
                    let mut tokens = a.tokens.clone();
                    tokens.push(t);
                    out.push(SpanQuery {
                        order,
                        position: l,
                        tokens,
                    });
                }
            }
        }
    }
    out
}

/// Scores every candidate span of the next order.
pub fn score_lattice(
    spans: &SpanSet,
    provider: &dyn PotentialProvider,
) -> Result<PotentialTable, DecodeError> {
    let queries = candidate_queries(spans);
    fill_table(
        provider,
        spans.order() + 1,
        spans.num_positions().saturating_sub(1),
        queries,
    )
}

/// Relabels `spans` into a first-order chain: states are spans, and the cell
/// between compatible states holds the potential of their union.
pub fn build_chain(spans: &SpanSet, table: &PotentialTable) -> Result<ChainScores, DecodeError> {
    assert_eq!(table.order(), spans.order() + 1, "potential order mismatch");
    let counts: Vec<usize> = spans.positions().iter().map(Vec::len).collect();
    let mut union = Vec::with_capacity(spans.order() + 2);
    let chain = ChainScores::from_fn(counts, |l, i, j| {
        let (a, b) = (&spans.position(l)[i].tokens, &spans.position(l + 1)[j].tokens);
        if !spans.compatible(a, b) {
            return None;
        }
        union.clear();
        union.extend_from_slice(a);
        union.push(*b.last().expect("non-empty span"));
        Some(table.get(l, &union))
    })
    .map_err(|source| DecodeError::Chain {
        iteration: table.order(),
        source,
    })?;
    if let Some(l) = chain.edges().iter().position(|e| !e.any_feasible()) {
        return Err(DecodeError::Disconnected { position: l });
    }
    Ok(chain)
}

/// Result of one pruning pass.
#[derive(Debug, Clone)]
pub struct PruneOutcome {
    pub spans: SpanSet,
    pub trace: ScanTrace,
    /// Best sequence score of the lattice that was pruned.
    pub best_score: f64,
    /// Raw-score pruning disconnected the lattice and max-marginals were used
    /// instead.
    pub disconnected: bool,
    /// Time spent in the max-marginal scan and Viterbi.
    pub scan_time: Duration,
}

/// Keeps the top `k` spans per position by max-marginal.
pub fn prune_step(
    spans: &SpanSet,
    table: &PotentialTable,
    k: usize,
) -> Result<PruneOutcome, DecodeError> {
    prune_with(spans, table, k, PruneCriterion::MaxMarginal)
}

pub fn prune_with(
    spans: &SpanSet,
    table: &PotentialTable,
    k: usize,
    criterion: PruneCriterion,
) -> Result<PruneOutcome, DecodeError> {
    let iteration = table.order();
    let chain = build_chain(spans, table)?;
    let chain_err = |source| DecodeError::Chain { iteration, source };
    let union_at = |l: usize, i: usize, j: usize| {
        let mut t = spans.position(l)[i].tokens.clone();
        t.push(*spans.position(l + 1)[j].tokens.last().expect("non-empty span"));
        t
    };

    if criterion == PruneCriterion::RawScore {
        let mut kept = Vec::with_capacity(chain.num_edges());
        for (l, edge) in chain.edges().iter().enumerate() {
            let mut cands = Vec::new();
            for i in 0..edge.rows() {
                for j in 0..edge.cols() {
                    if edge.is_feasible(i, j) && edge.score(i, j) > f64::NEG_INFINITY {
                        cands.push(ScoredSpan {
                            tokens: union_at(l, i, j),
                            score: edge.score(i, j),
                        });
                    }
                }
            }
            select_top_k(&mut cands, k, None);
            kept.push(cands);
        }
        let kept = repair(iteration, kept);
        if kept.iter().all(|p| !p.is_empty()) {
            let (_, best) = viterbi(&chain).map_err(chain_err)?;
            return Ok(PruneOutcome {
                spans: SpanSet::new(iteration, kept)?,
                trace: ScanTrace::default(),
                best_score: best,
                disconnected: false,
                scan_time: Duration::ZERO,
            });
        }
        let mut fallback = prune_with(spans, table, k, PruneCriterion::MaxMarginal)?;
        fallback.disconnected = true;
        return Ok(fallback);
    }

    let t = Instant::now();
    let (mm, trace) = tree_max_marginals(&chain).map_err(chain_err)?;
    let (best_path, best) = viterbi(&chain).map_err(chain_err)?;
    let scan_time = t.elapsed();
    let mut kept = Vec::with_capacity(chain.num_edges());
    for l in 0..chain.num_edges() {
        let (rows, cols) = mm.dims(l);
        let mut cands = Vec::new();
        for i in 0..rows {
            for j in 0..cols {
                let v = mm.get(l, i, j);
                if v > f64::NEG_INFINITY {
                    cands.push(ScoredSpan {
                        tokens: union_at(l, i, j),
                        score: v,
                    });
                }
            }
        }
        let protected = union_at(l, best_path[l], best_path[l + 1]);
        select_top_k(&mut cands, k, Some(&protected));
        kept.push(cands);
    }
    let kept = repair(iteration, kept);
    if let Some(l) = kept.iter().position(Vec::is_empty) {
        return Err(DecodeError::Disconnected { position: l });
    }
    Ok(PruneOutcome {
        spans: SpanSet::new(iteration, kept)?,
        trace,
        best_score: best,
        disconnected: false,
        scan_time,
    })
}

/// Sorts by (score desc, tokens asc) and keeps `k`. A `protected` span that
/// falls outside the cut replaces the last kept span.
fn select_top_k(cands: &mut Vec<ScoredSpan>, k: usize, protected: Option<&[TokenId]>) {
    cands.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.tokens.cmp(&b.tokens)));
    let rescue = protected.and_then(|p| {
        cands
            .iter()
            .skip(k)
            .position(|s| s.tokens == p)
            .map(|i| cands[k + i].clone())
    });
    cands.truncate(k);
    if let Some(span) = rescue {
        if let Some(last) = cands.last_mut() {
            *last = span;
        }
    }
}

/// Drops spans that lie on no complete path: a forward sweep keeps spans
/// reachable from position 0, a backward sweep keeps those that also reach
/// the last position. The result is the fixed point of orphan removal.
pub fn repair(order: usize, mut positions: Vec<Vec<ScoredSpan>>) -> Vec<Vec<ScoredSpan>> {
    let n = positions.len();
    for l in 1..n {
        let suffixes: HashSet<Vec<TokenId>> = positions[l - 1]
            .iter()
            .map(|a| a.tokens[1..].to_vec())
            .collect();
        positions[l].retain(|b| suffixes.contains(&b.tokens[..order]));
    }
    for l in (0..n.saturating_sub(1)).rev() {
        let prefixes: HashSet<Vec<TokenId>> = positions[l + 1]
            .iter()
            .map(|b| b.tokens[..order].to_vec())
            .collect();
        positions[l].retain(|a| prefixes.contains(&a.tokens[1..]));
    }
    positions
}
