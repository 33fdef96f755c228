#![allow(dead_code)]

use cascade_core::potentials::{PotentialFile, PotentialProvider, ProviderError};
use cascade_core::semiring_chain::ChainScores;
use cascade_core::vocab::{TokenId, Vocabulary};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const NEG: f64 = f64::NEG_INFINITY;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `w0 .. w{n-1}` followed by `<eos>`.
pub fn vocab(words: usize) -> Vocabulary {
    let mut t: Vec<String> = (0..words).map(|i| format!("w{i}")).collect();
    t.push("<eos>".into());
    Vocabulary::new(t).unwrap()
}

/// Multiples of 1/8 in [-5, 1]; sums of a few of these are exact.
pub fn dyadic(rng: &mut ChaCha8Rng) -> f64 {
    rng.gen_range(-40i32..=8) as f64 / 8.0
}

/// Every tuple of `len` ids in lexicographic order.
pub fn tuples(ids: &[TokenId], len: usize) -> Vec<Vec<TokenId>> {
    let mut out = vec![Vec::new()];
    for _ in 0..len {
        out = out
            .into_iter()
            .flat_map(|p| {
                ids.iter().map(move |&t| {
                    let mut q = p.clone();
                    q.push(t);
                    q
                })
            })
            .collect();
    }
    out
}

/// Random table over every emittable span of orders `0..=max_order`.
pub fn random_table(
    rng: &mut ChaCha8Rng,
    vocab: &Vocabulary,
    length: usize,
    max_order: usize,
    mask_rate: f64,
    exact: bool,
) -> PotentialFile {
    let ids: Vec<TokenId> = vocab.emittable().collect();
    let mut f = PotentialFile::new(vocab.clone(), max_order, length);
    for m in 0..=max_order.min(length - 1) {
        for span in tuples(&ids, m + 1) {
            for l in 0..length - m {
                let v = if rng.gen_bool(mask_rate) {
                    NEG
                } else if exact {
                    dyadic(rng)
                } else {
                    rng.gen_range(-5.0..1.0)
                };
                f.insert(m, l, span.clone(), v);
            }
        }
    }
    f
}

/// Order-`order` model score of a full sequence, computed span by span.
pub fn model_score(p: &dyn PotentialProvider, seq: &[TokenId], order: usize) -> f64 {
    let m = order.min(seq.len() - 1);
    (0..seq.len() - m)
        .map(|l| p.score(m, l, &seq[l..=l + m]).unwrap())
        .sum()
}

/// Exhaustive best sequence over `ids^len`; the first maximum in
/// lexicographic order wins.
pub fn brute_best(
    p: &dyn PotentialProvider,
    ids: &[TokenId],
    len: usize,
    order: usize,
) -> Option<(Vec<TokenId>, f64)> {
    let mut best: Option<(Vec<TokenId>, f64)> = None;
    for seq in tuples(ids, len) {
        let s = model_score(p, &seq, order);
        if s > NEG && best.as_ref().is_none_or(|(_, b)| s > *b) {
            best = Some((seq, s));
        }
    }
    best
}

pub fn scorable_ids(v: &Vocabulary) -> Vec<TokenId> {
    (0..v.len() as TokenId).filter(|&t| Some(t) != v.epsilon()).collect()
}

pub fn random_chain(rng: &mut ChaCha8Rng, edges: usize, kmax: usize, mask_rate: f64) -> ChainScores {
    let counts: Vec<usize> = (0..=edges).map(|_| rng.gen_range(1..=kmax)).collect();
    let cells = (0..edges)
        .map(|e| {
            (0..counts[e] * counts[e + 1])
                .map(|_| {
                    if rng.gen_bool(mask_rate) {
                        NEG
                    } else {
                        rng.gen_range(-5.0..5.0)
                    }
                })
                .collect()
        })
        .collect();
    ChainScores::new(counts, cells).unwrap()
}

/// Every state path of the chain in lexicographic order.
pub fn state_paths(counts: &[usize]) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    for &k in counts {
        out = out
            .into_iter()
            .flat_map(|p| {
                (0..k).map(move |s| {
                    let mut q = p.clone();
                    q.push(s);
                    q
                })
            })
            .collect();
    }
    out
}

/// Score of a state path, `None` if it uses an infeasible cell.
pub fn brute_path_score(chain: &ChainScores, path: &[usize]) -> Option<f64> {
    let mut s = 0.0;
    for (e, w) in path.windows(2).enumerate() {
        let edge = chain.edge(e);
        if !edge.is_feasible(w[0], w[1]) {
            return None;
        }
        s += edge.score(w[0], w[1]);
    }
    Some(s)
}

/// Max-marginal of every cell by enumerating all paths.
pub fn brute_mm(chain: &ChainScores) -> Vec<Vec<Vec<f64>>> {
    let counts = chain.state_counts();
    let mut mm: Vec<Vec<Vec<f64>>> = (0..chain.num_edges())
        .map(|e| vec![vec![NEG; counts[e + 1]]; counts[e]])
        .collect();
    for path in state_paths(counts) {
        if let Some(s) = brute_path_score(chain, &path) {
            for (e, w) in path.windows(2).enumerate() {
                let c = &mut mm[e][w[0]][w[1]];
                if s > *c {
                    *c = s;
                }
            }
        }
    }
    mm
}

pub fn brute_viterbi(chain: &ChainScores) -> Option<(Vec<usize>, f64)> {
    let mut best: Option<(Vec<usize>, f64)> = None;
    for path in state_paths(chain.state_counts()) {
        if let Some(s) = brute_path_score(chain, &path) {
            if best.as_ref().is_none_or(|(_, b)| s > *b) {
                best = Some((path, s));
            }
        }
    }
    best
}

pub fn brute_count(chain: &ChainScores) -> u64 {
    state_paths(chain.state_counts())
        .iter()
        .filter(|p| brute_path_score(chain, p).is_some())
        .count() as u64
}

/// Order-2 scorer whose order-2 model equals its order-1 model: every
/// order-2 span carries the order-1 potential of its first pair, and the
/// last one also carries its second pair.
pub struct Telescoped {
    pub table: PotentialFile,
    pub length: usize,
}

impl PotentialProvider for Telescoped {
    fn vocab(&self) -> &Vocabulary {
        self.table.vocab()
    }

    fn max_order(&self) -> usize {
        2
    }

    fn score(&self, order: usize, position: usize, span: &[TokenId]) -> Result<f64, ProviderError> {
        if order < 2 {
            return self.table.score(order, position, span);
        }
        let mut v = self.table.score(1, position, &span[..2])?;
        if position + 3 == self.length {
            v += self.table.score(1, position + 1, &span[1..])?;
        }
        Ok(v)
    }
}

/// Hand-built scorer where the unary potentials slightly prefer a repeated
/// `woman` and the bigram potentials punish the repeat.
pub fn toy_scorer() -> PotentialFile {
    let v = Vocabulary::new(["an", "amazing", "woman", ".", "<eos>"]).unwrap();
    let id = |s: &str| v.id(s).unwrap();
    let mut f = PotentialFile::new(v.clone(), 1, 5);
    let unary: [&[(&str, f64)]; 5] = [
        &[("an", 0.0)],
        &[("amazing", -0.5), ("woman", -0.25)],
        &[("woman", 0.0)],
        &[(".", 0.0)],
        &[("<eos>", 0.0)],
    ];
    for (l, row) in unary.iter().enumerate() {
        for t in v.emittable() {
            let s = row.iter().find(|(w, _)| id(w) == t).map_or(-3.0, |x| x.1);
            f.insert(0, l, vec![t], s);
        }
    }
    let good = [("an", "amazing"), ("amazing", "woman"), ("woman", "."), (".", "<eos>")];
    for l in 0..4 {
        for a in v.emittable() {
            for b in v.emittable() {
                let s = if a == b {
                    -5.0
                } else if good.iter().any(|(x, y)| id(x) == a && id(y) == b) {
                    0.0
                } else {
                    -1.0
                };
                f.insert(1, l, vec![a, b], s);
            }
        }
    }
    f
}

/// Best `words ++ [eos]` over every length in `lengths`, scored by the base
/// model alone. Ties go to the smaller padded lattice path; pad's id sorts
/// after every base id.
pub fn best_terminated(
    base: &dyn PotentialProvider,
    lengths: std::ops::RangeInclusive<usize>,
    order: usize,
) -> (Vec<TokenId>, f64) {
    let eos = base.vocab().eos();
    let pad = base.vocab().len() as TokenId;
    let lattice = lengths.end() + 1;
    let words: Vec<TokenId> = base.vocab().emittable().filter(|&t| t != eos).collect();
    let padded = |s: &[TokenId]| {
        let mut p = s.to_vec();
        p.resize(lattice, pad);
        p
    };
    let mut best: Option<(Vec<TokenId>, f64)> = None;
    for n in lengths {
        for mut seq in tuples(&words, n - 1) {
            seq.push(eos);
            let s = model_score(base, &seq, order);
            let better = match &best {
                None => true,
                Some((b, bs)) => s > *bs || (s == *bs && padded(&seq) < padded(b)),
            };
            if better {
                best = Some((seq, s));
            }
        }
    }
    best.unwrap()
}


/// Two-token gadget: the top raw spans at position 0 only continue through
/// a poor span at position 1, while the best sequence uses lower raw spans.
pub fn trap(scale: f64, margin: f64) -> Telescoped {
    let v = vocab(2);
    let (a, b, eos) = (0, 1, v.eos());
    let mut t = PotentialFile::new(v.clone(), 1, 3);
    for l in 0..3 {
        t.insert(0, l, vec![a], 0.0);
        t.insert(0, l, vec![b], 0.0);
        t.insert(0, l, vec![eos], -10.0);
    }
    let first = [((a, a), 1.0 + margin), ((b, a), 0.95), ((a, b), -5.0), ((b, b), 0.9)];
    let second = [((b, b), 0.9), ((a, b), -3.0), ((a, a), -4.0), ((b, a), -5.0)];
    for x in v.emittable() {
        for y in v.emittable() {
            for (l, row) in [first, second].iter().enumerate() {
                let s = row.iter().find(|(p, _)| *p == (x, y)).map_or(-20.0, |r| r.1);
                t.insert(1, l, vec![x, y], scale * s);
            }
        }
    }
    Telescoped { table: t, length: 3 }
}
