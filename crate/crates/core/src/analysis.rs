//! Baselines and measurement: beam search, repetition ratio, the raw-score
//! pruning ablation, exhaustive optima for tiny instances, and parameter
//! sweeps producing line-oriented reports.

use std::collections::HashSet;
use std::fmt::Write as _;

use rayon::prelude::*;
use thiserror::Error;

use crate::cascade::{
    decode, prune_with, DecodeConfig, DecodeError, IterationStats, LengthMode, PotentialTable,
    PruneCriterion, PruneOutcome, SpanSet,
};
use crate::length_relax::{wrap_potentials, LengthWindow};
use crate::potentials::{score_checked, PotentialProvider, ScoreBatch, SpanQuery};
use crate::vocab::TokenId;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AnalysisError {
    #[error("sequence of {len} tokens is shorter than n = {n}")]
    TooShort { len: usize, n: usize },
    #[error("n must be at least 1")]
    ZeroN,
    #[error("sweep grid is empty")]
    EmptyGrid,
    #[error("thread pool: {0}")]
    Pool(String),
}

/// Fraction of distinct n-grams among all n-grams of `tokens`.
pub fn repetition_ratio<T: Eq + std::hash::Hash>(tokens: &[T], n: usize) -> Result<f64, AnalysisError> {
    if n == 0 {
        return Err(AnalysisError::ZeroN);
    }
    if tokens.len() < n {
        return Err(AnalysisError::TooShort {
            len: tokens.len(),
            n,
        });
    }
    let windows = tokens.windows(n);
    let total = windows.len();
    let unique: HashSet<&[T]> = windows.collect();
    Ok(unique.len() as f64 / total as f64)
}

/// Prunes by each span's own potential rather than its max-marginal.
pub fn prune_by_ngram_score(
    spans: &SpanSet,
    table: &PotentialTable,
    k: usize,
) -> Result<PruneOutcome, DecodeError> {
    prune_with(spans, table, k, PruneCriterion::RawScore)
}

/// Score of `tokens` under the order-`order` model: the sum of
/// `f_l^(order)` over every window, or `f_0` of the whole sequence when it is
/// shorter than a window.
pub fn sequence_score(
    provider: &dyn PotentialProvider,
    tokens: &[TokenId],
    order: usize,
) -> Result<f64, DecodeError> {
    if tokens.is_empty() {
        return Ok(0.0);
    }
    let m = order.min(tokens.len() - 1);
    let queries = (0..tokens.len() - m)
        .map(|l| SpanQuery {
            order: m,
            position: l,
            tokens: tokens[l..=l + m].to_vec(),
        })
        .collect();
    let batch = ScoreBatch {
        iteration: None,
        queries,
    };
    let values = score_checked(provider, &batch)
        .map_err(|source| DecodeError::Provider { iteration: m, source })?;
    Ok(values.iter().sum())
}

/// Left-to-right beam search over a lattice of `lattice_len` positions.
///
/// A hypothesis shorter than `order + 1` tokens is scored by `f_0` of its
/// whole prefix; after that each new token adds the potential of the window
/// it closes, so complete hypotheses carry their exact order-`order` score.
/// `None` for `max_order` uses the provider's maximum. Returns `None` when
/// every hypothesis scores `-∞`.
pub fn beam_search(
    provider: &dyn PotentialProvider,
    lattice_len: usize,
    beam: usize,
    max_order: Option<usize>,
) -> Result<Option<(Vec<TokenId>, f64)>, DecodeError> {
    if beam == 0 {
        return Err(DecodeError::Config("beam must be at least 1".into()));
    }
    let order = max_order
        .unwrap_or(usize::MAX)
        .min(provider.max_order())
        .min(lattice_len.saturating_sub(1));
    let vocab = provider.vocab();
    let ids: Vec<TokenId> = (0..vocab.len() as TokenId)
        .filter(|&t| Some(t) != vocab.epsilon())
        .collect();
    let mut hyps: Vec<(Vec<TokenId>, f64)> = vec![(Vec::new(), 0.0)];
    for t in 0..lattice_len {
        let mut queries = Vec::with_capacity(hyps.len() * ids.len());
        let mut parents = Vec::with_capacity(queries.capacity());
        for (h, (prefix, _)) in hyps.iter().enumerate() {
            for &tok in &ids {
                let mut ext = prefix.clone();
                ext.push(tok);
                let q = if t <= order {
                    SpanQuery {
                        order: t,
                        position: 0,
                        tokens: ext,
                    }
                } else {
                    SpanQuery {
                        order,
                        position: t - order,
                        tokens: ext[t - order..].to_vec(),
                    }
                };
                queries.push(q);
                parents.push((h, tok));
            }
        }
        let batch = ScoreBatch {
            iteration: None,
            queries,
        };
        let values = score_checked(provider, &batch).map_err(|source| DecodeError::Provider {
            iteration: order,
            source,
        })?;
        let mut next: Vec<(Vec<TokenId>, f64)> = parents
            .into_iter()
            .zip(values)
            .filter(|(_, v)| *v > f64::NEG_INFINITY)
            .map(|((h, tok), v)| {
                let (prefix, base) = &hyps[h];
                let mut ext = prefix.clone();
                ext.push(tok);
                let score = if t <= order { v } else { base + v };
                (ext, score)
            })
            .collect();
        next.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        next.truncate(beam);
        if next.is_empty() {
            return Ok(None);
        }
        hyps = next;
    }
    Ok(hyps.into_iter().next())
}

/// Best sequence of the order-`order` model over all `V^lattice_len`
/// sequences, ties to the lexicographically smallest. `None` if the space
/// exceeds `limit` sequences or nothing is finite.
pub fn exhaustive_best(
    provider: &dyn PotentialProvider,
    lattice_len: usize,
    order: usize,
    limit: u64,
) -> Result<Option<(Vec<TokenId>, f64)>, DecodeError> {
    let vocab = provider.vocab();
    let ids: Vec<TokenId> = (0..vocab.len() as TokenId)
        .filter(|&t| Some(t) != vocab.epsilon())
        .collect();
    let v = ids.len() as u64;
    let total = match v.checked_pow(lattice_len as u32) {
        Some(n) if n <= limit => n,
        _ => return Ok(None),
    };
    let m = order.min(lattice_len.saturating_sub(1));
    let mut best: Option<(Vec<TokenId>, f64)> = None;
    let mut seq = vec![ids[0]; lattice_len];
    for idx in 0..total {
        let mut r = idx;
        for slot in seq.iter_mut().rev() {
            *slot = ids[(r % v) as usize];
            r /= v;
        }
        let s = sequence_score(provider, &seq, m)?;
        if s > f64::NEG_INFINITY && best.as_ref().is_none_or(|(_, b)| s > *b) {
            best = Some((seq.clone(), s));
        }
    }
    Ok(best)
}

/// One sweep cell's outcome.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct RunReport {
    pub source: usize,
    pub k: usize,
    pub iters: usize,
    /// `None` for fixed-length decoding.
    pub delta_l: Option<usize>,
    pub score: Option<f64>,
    pub tokens: Vec<String>,
    pub iterations: Vec<IterationStats>,
    pub ms_total: f64,
    pub ms_scan: f64,
    pub ms_potentials: f64,
    pub ms_prune: f64,
    pub oracle: Option<f64>,
    pub error: Option<String>,
}

impl RunReport {
    /// `key=value` pairs separated by spaces; `tokens` comes last and takes
    /// the rest of the line.
    pub fn to_line(&self) -> String {
        let mut s = String::new();
        let _ = write!(s, "src={} k={} iters={}", self.source, self.k, self.iters);
        match self.delta_l {
            Some(d) => {
                let _ = write!(s, " delta_l={d}");
            }
            None => s.push_str(" delta_l=fixed"),
        }
        match self.score {
            Some(v) => {
                let _ = write!(s, " score={v}");
            }
            None => s.push_str(" score=none"),
        }
        for (i, it) in self.iterations.iter().enumerate() {
            let _ = write!(
                s,
                " paths_iter{i}={} spans_iter{i}={} depth_iter{i}={}",
                it.paths, it.spans, it.trace.levels_up
            );
        }
        let _ = write!(
            s,
            " ms_total={:.3} ms_scan={:.3} ms_potentials={:.3} ms_prune={:.3}",
            self.ms_total, self.ms_scan, self.ms_potentials, self.ms_prune
        );
        if let Some(o) = self.oracle {
            let _ = write!(s, " oracle={o}");
        }
        if let Some(e) = &self.error {
            let _ = write!(s, " error=\"{}\"", e.replace('"', "'"));
        }
        let _ = write!(s, " tokens={}", self.tokens.join(" "));
        s
    }
}

/// Parameter grid. Each `delta_l` entry is a window half-width, or `None`
/// for fixed-length decoding.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepGrid {
    pub ks: Vec<usize>,
    pub iters: Vec<usize>,
    pub delta_ls: Vec<Option<usize>>,
}

impl SweepGrid {
    pub fn cells(&self) -> Vec<(usize, usize, Option<usize>)> {
        let mut out = Vec::new();
        for &k in &self.ks {
            for &it in &self.iters {
                for &d in &self.delta_ls {
                    out.push((k, it, d));
                }
            }
        }
        out
    }
}

/// Largest search space the oracle column enumerates.
pub const ORACLE_LIMIT: u64 = 1 << 20;

/// Decodes every source under every grid cell. Cells of one source run
/// concurrently on up to `jobs` threads (0 picks the rayon default); rows
/// come back in source-major grid order. A failing cell is recorded in its
/// row and the sweep continues.
pub fn sweep(
    sources: &[Vec<TokenId>],
    scorer: &dyn PotentialProvider,
    grid: &SweepGrid,
    base: &DecodeConfig,
    oracle: bool,
    jobs: usize,
) -> Result<Vec<RunReport>, AnalysisError> {
    let cells = grid.cells();
    if cells.is_empty() || sources.is_empty() {
        return Err(AnalysisError::EmptyGrid);
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| AnalysisError::Pool(e.to_string()))?;
    pool.install(|| sweep_rows(sources, scorer, &cells, base, oracle))
}

fn sweep_rows(
    sources: &[Vec<TokenId>],
    scorer: &dyn PotentialProvider,
    cells: &[(usize, usize, Option<usize>)],
    base: &DecodeConfig,
    oracle: bool,
) -> Result<Vec<RunReport>, AnalysisError> {
    let mut rows = Vec::with_capacity(cells.len() * sources.len());
    for (si, src) in sources.iter().enumerate() {
        let part: Vec<RunReport> = cells
            .par_iter()
            .map(|&(k, iters, delta_l)| run_cell(si, src, scorer, base, k, iters, delta_l, oracle))
            .collect();
        rows.extend(part);
    }
    Ok(rows)
}

#[allow(clippy::too_many_arguments)]
fn run_cell(
    si: usize,
    src: &[TokenId],
    scorer: &dyn PotentialProvider,
    base: &DecodeConfig,
    k: usize,
    iters: usize,
    delta_l: Option<usize>,
    oracle: bool,
) -> RunReport {
    let cfg = DecodeConfig {
        k_limit: k,
        iterations: iters,
        length: match delta_l {
            Some(d) => LengthMode::Window { delta_l: d },
            None => LengthMode::Fixed,
        },
        ..*base
    };
    let mut row = RunReport {
        source: si,
        k,
        iters,
        delta_l,
        score: None,
        tokens: Vec::new(),
        iterations: Vec::new(),
        ms_total: 0.0,
        ms_scan: 0.0,
        ms_potentials: 0.0,
        ms_prune: 0.0,
        oracle: None,
        error: None,
    };
    match decode(src, scorer, &cfg) {
        Ok(d) => {
            row.score = Some(d.log_score);
            row.tokens = d
                .tokens
                .iter()
                .map(|&t| scorer.vocab().token(t).unwrap_or("<?>").to_string())
                .collect();
            let ms = |x: std::time::Duration| x.as_secs_f64() * 1e3;
            let t = d.diagnostics.times;
            row.ms_total = ms(t.total);
            row.ms_scan = ms(t.scan);
            row.ms_potentials = ms(t.potentials);
            row.ms_prune = ms(t.prune);
            row.iterations = d.diagnostics.iterations;
        }
        Err(e) => row.error = Some(e.to_string()),
    }
    if oracle {
        match oracle_optimum(src, scorer, &cfg) {
            Ok(v) => row.oracle = v,
            Err(e) => {
                if row.error.is_none() {
                    row.error = Some(format!("oracle: {e}"));
                }
            }
        }
    }
    row
}

/// Exhaustive optimum of the model a decode with `cfg` searches, if small
/// enough to enumerate.
pub fn oracle_optimum(
    src: &[TokenId],
    scorer: &dyn PotentialProvider,
    cfg: &DecodeConfig,
) -> Result<Option<f64>, DecodeError> {
    let predicted = cfg.length_rule.predict(src.len());
    let order = cfg.iterations.saturating_sub(1);
    let best = match cfg.length {
        LengthMode::Window { delta_l } if cfg.iterations > 1 => {
            let window = LengthWindow::new(predicted, delta_l)?;
            let wrapped = wrap_potentials(scorer, window);
            exhaustive_best(&wrapped, window.lattice_len(), order, ORACLE_LIMIT)?
        }
        _ => exhaustive_best(scorer, predicted, order, ORACLE_LIMIT)?,
    };
    Ok(best.map(|(_, s)| s))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn repetition_examples() {
        assert_eq!(repetition_ratio(&["the", "cat", "the", "cat"], 1), Ok(0.5));
        assert_eq!(repetition_ratio(&["a", "b", "c"], 2), Ok(1.0));
        assert_eq!(
            repetition_ratio(&["a"], 2),
            Err(AnalysisError::TooShort { len: 1, n: 2 })
        );
        assert_eq!(repetition_ratio::<u32>(&[], 0), Err(AnalysisError::ZeroN));
    }

    #[test]
    fn grid_order() {
        let g = SweepGrid {
            ks: vec![2, 4],
            iters: vec![1],
            delta_ls: vec![Some(0), None],
        };
        assert_eq!(
            g.cells(),
            vec![(2, 1, Some(0)), (2, 1, None), (4, 1, Some(0)), (4, 1, None)]
        );
    }
}
