use std::time::{Duration, Instant};

use num_bigint::BigUint;
use serde::Serialize;

use super::prune::{init_unigram_set, prune_with, score_lattice, score_unigrams};
use super::{build_chain, DecodeError, SpanSet};
use crate::length_relax::{strip_padding, wrap_potentials, LengthWindow};
use crate::potentials::PotentialProvider;
use crate::semiring_chain::{count_paths, tree_max_marginals, viterbi, ScanTrace};
use crate::vocab::TokenId;

/// How the output length is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum LengthMode {
    /// Exactly the predicted number of lattice positions, no pad handling.
    Fixed,
    /// Lengths `L - delta_l ..= L + delta_l` (eos included) in one lattice.
    Window { delta_l: usize },
}

/// Maps a source length to the predicted output length `L`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum LengthRule {
    Affine { slope: f64, intercept: f64 },
    Exact(usize),
}

impl Default for LengthRule {
    fn default() -> Self {
        LengthRule::Affine {
            slope: 1.0,
            intercept: 0.0,
        }
    }
}

impl LengthRule {
    /// Rounded prediction, at least 1.
    pub fn predict(&self, source_len: usize) -> usize {
        match *self {
            LengthRule::Exact(n) => n.max(1),
            LengthRule::Affine { slope, intercept } => {
                let v = (slope * source_len as f64 + intercept).round();
                if v.is_finite() && v >= 1.0 {
                    v as usize
                } else {
                    1
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub enum TieBreak {
    /// Higher score first, then the lexicographically smaller token tuple.
    #[default]
    LexSmallest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub enum PruneCriterion {
    #[default]
    MaxMarginal,
    /// Rank spans by their own potential, ignoring the rest of the lattice.
    RawScore,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecodeConfig {
    pub k_limit: usize,
    /// Number of cascade iterations, `M + 1`.
    pub iterations: usize,
    pub length: LengthMode,
    pub length_rule: LengthRule,
    pub tie_break: TieBreak,
    pub criterion: PruneCriterion,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            k_limit: 16,
            iterations: 3,
            length: LengthMode::Window { delta_l: 0 },
            length_rule: LengthRule::default(),
            tie_break: TieBreak::default(),
            criterion: PruneCriterion::default(),
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self, max_order: usize) -> Result<(), DecodeError> {
        if self.k_limit == 0 {
            return Err(DecodeError::Config("K must be at least 1".into()));
        }
        if self.iterations == 0 {
            return Err(DecodeError::Config("iterations must be at least 1".into()));
        }
        if self.iterations - 1 > max_order {
            return Err(DecodeError::Config(format!(
                "{} iterations need order {}, scorer supports at most {max_order}",
                self.iterations,
                self.iterations - 1
            )));
        }
        Ok(())
    }
}

/// Search-space statistics after one iteration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationStats {
    /// Order of the spans counted.
    pub order: usize,
    pub spans: usize,
    #[serde(serialize_with = "big_as_string")]
    pub paths: BigUint,
    pub trace: ScanTrace,
    /// Raw-score pruning disconnected the lattice and max-marginals were used.
    pub disconnected: bool,
}

fn big_as_string<S: serde::Serializer>(v: &BigUint, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&v.to_string())
}

/// Wall time split by phase.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct PhaseTimes {
    pub potentials: Duration,
    pub scan: Duration,
    pub prune: Duration,
    pub total: Duration,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CascadeOutput {
    /// Full lattice path, pads included.
    pub path: Vec<TokenId>,
    pub score: f64,
    pub iterations: Vec<IterationStats>,
    pub times: PhaseTimes,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostics {
    pub lattice_len: usize,
    pub window: Option<LengthWindow>,
    pub iterations: Vec<IterationStats>,
    pub times: PhaseTimes,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Decoded {
    /// Output tokens before the first eos.
    pub tokens: Vec<TokenId>,
    /// Full lattice path.
    pub path: Vec<TokenId>,
    pub log_score: f64,
    pub diagnostics: Diagnostics,
}

/// Runs the cascade over a lattice of `lattice_len` positions. `forced[l]`
/// lists tokens kept at position `l` after the order-0 cut regardless of `K`.
pub fn run_cascade(
    provider: &dyn PotentialProvider,
    lattice_len: usize,
    cfg: &DecodeConfig,
    forced: &[Vec<TokenId>],
) -> Result<CascadeOutput, DecodeError> {
    cfg.validate(provider.max_order())?;
    if lattice_len == 0 {
        return Err(DecodeError::Config("lattice length must be at least 1".into()));
    }
    let start = Instant::now();
    let mut times = PhaseTimes::default();
    let top = (cfg.iterations - 1).min(lattice_len - 1);

    let t = Instant::now();
    let unigrams = score_unigrams(provider, lattice_len)?;
    times.potentials += t.elapsed();
    let v = unigrams.entries(0).count();
    let mut stats = vec![IterationStats {
        order: 0,
        spans: v * lattice_len,
        paths: BigUint::from(v).pow(lattice_len as u32),
        trace: ScanTrace::default(),
        disconnected: false,
    }];

    if top == 0 {
        let mut path = Vec::with_capacity(lattice_len);
        let mut score = 0.0;
        for l in 0..lattice_len {
            let (tok, s) = unigrams
                .entries(l)
                .filter(|(_, s)| *s > f64::NEG_INFINITY)
                .map(|(t, s)| (t[0], s))
                .min_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)))
                .ok_or(DecodeError::Infeasible { position: l })?;
            path.push(tok);
            score += s;
        }
        times.total = start.elapsed();
        return Ok(CascadeOutput {
            path,
            score,
            iterations: stats,
            times,
        });
    }

    let t = Instant::now();
    let mut spans = init_unigram_set(&unigrams, cfg.k_limit, forced)?;
    times.prune += t.elapsed();
    stats.push(lattice_stats(&spans, ScanTrace::default(), false));

    for m in 1..top {
        let t = Instant::now();
        let table = score_lattice(&spans, provider)?;
        times.potentials += t.elapsed();
        let t = Instant::now();
        let outcome = prune_with(&spans, &table, cfg.k_limit, cfg.criterion)?;
        let elapsed = t.elapsed();
        debug_assert_eq!(outcome.spans.order(), m);
        times.scan += outcome.scan_time;
        times.prune += elapsed.saturating_sub(outcome.scan_time);
        spans = outcome.spans;
        stats.push(lattice_stats(&spans, outcome.trace, outcome.disconnected));
    }

    let t = Instant::now();
    let table = score_lattice(&spans, provider)?;
    times.potentials += t.elapsed();
    let t = Instant::now();
    let chain = build_chain(&spans, &table)?;
    let chain_err = |source| DecodeError::Chain {
        iteration: top,
        source,
    };
    let (_, trace) = tree_max_marginals(&chain).map_err(chain_err)?;
    let (states, score) = viterbi(&chain).map_err(chain_err)?;
    times.scan += t.elapsed();
    if score == f64::NEG_INFINITY {
        return Err(DecodeError::Infeasible { position: 0 });
    }
    let feasible = chain
        .edges()
        .iter()
        .map(|e| {
            (0..e.rows())
                .flat_map(|i| (0..e.cols()).map(move |j| (i, j)))
                .filter(|&(i, j)| e.score(i, j) > f64::NEG_INFINITY)
                .count()
        })
        .sum();
    let paths = stats.last().map(|s| s.paths.clone()).unwrap_or_default();
    stats.push(IterationStats {
        order: top,
        spans: feasible,
        paths,
        trace,
        disconnected: false,
    });
    times.total = start.elapsed();
    Ok(CascadeOutput {
        path: spans.path_tokens(&states),
        score,
        iterations: stats,
        times,
    })
}

fn lattice_stats(spans: &SpanSet, trace: ScanTrace, disconnected: bool) -> IterationStats {
    IterationStats {
        order: spans.order(),
        spans: spans.total_spans(),
        paths: if spans.num_positions() == 0 {
            BigUint::from(0u32)
        } else {
            count_paths(&spans.structure())
        },
        trace,
        disconnected,
    }
}

/// Decodes one sentence. A single iteration is a per-position argmax at the
/// predicted length and ignores the length window.
pub fn decode(
    source: &[TokenId],
    scorer: &dyn PotentialProvider,
    cfg: &DecodeConfig,
) -> Result<Decoded, DecodeError> {
    cfg.validate(scorer.max_order())?;
    scorer
        .set_context(source)
        .map_err(|source| DecodeError::Provider {
            iteration: 0,
            source,
        })?;
    let predicted = cfg.length_rule.predict(source.len());
    let eos = scorer.vocab().eos();
    match cfg.length {
        LengthMode::Window { delta_l } if cfg.iterations > 1 => {
            let window = LengthWindow::new(predicted, delta_l)?;
            let wrapped = wrap_potentials(scorer, window);
            let pad = wrapped.pad();
            let forced: Vec<Vec<TokenId>> = (0..window.lattice_len())
                .map(|l| {
                    let mut f = vec![pad];
                    if (window.earliest_eos()..=window.latest_eos()).contains(&l) {
                        f.push(eos);
                    }
                    f
                })
                .collect();
            let out = run_cascade(&wrapped, window.lattice_len(), cfg, &forced)?;
            let tokens = strip_padding(&out.path, eos)?;
            Ok(Decoded {
                tokens,
                path: out.path,
                log_score: out.score,
                diagnostics: Diagnostics {
                    lattice_len: window.lattice_len(),
                    window: Some(window),
                    iterations: out.iterations,
                    times: out.times,
                },
            })
        }
        _ => {
            let out = run_cascade(scorer, predicted, cfg, &[])?;
            let end = out.path.iter().position(|&t| t == eos).unwrap_or(out.path.len());
            Ok(Decoded {
                tokens: out.path[..end].to_vec(),
                path: out.path,
                log_score: out.score,
                diagnostics: Diagnostics {
                    lattice_len: predicted,
                    window: None,
                    iterations: out.iterations,
                    times: out.times,
                },
            })
        }
    }
}
