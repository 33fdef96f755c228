mod common;

use cascade_core::analysis::{beam_search, repetition_ratio, sweep, SweepGrid};
use cascade_core::cascade::{
    decode, init_unigram_set, prune_with, score_lattice, score_unigrams, DecodeConfig, LengthMode,
    LengthRule, PruneCriterion,
};
use cascade_core::potentials::{train_ngram, PotentialProvider};
use cascade_core::vocab::TokenId;
use common::*;
use rand::Rng;

#[test]
fn exhaustive_beam_is_exact() {
    let mut r = rng(40);
    for _ in 0..100 {
        let v = vocab(r.gen_range(1..=3));
        let len = r.gen_range(1..=5);
        let order = r.gen_range(0..=2usize);
        let table = random_table(&mut r, &v, len, order, 0.0, true);
        let ids: Vec<TokenId> = v.emittable().collect();
        let beam = ids.len().pow(len as u32);
        let got = beam_search(&table, len, beam, None).unwrap().unwrap();
        assert_eq!(Some(got), brute_best(&table, &ids, len, order));
    }
}

#[test]
fn unit_beam_is_greedy() {
    let mut r = rng(41);
    for _ in 0..100 {
        let v = vocab(r.gen_range(1..=4));
        let len = r.gen_range(1..=6);
        let order = r.gen_range(0..=2usize).min(len - 1);
        let table = random_table(&mut r, &v, len, order, 0.0, false);
        let mut seq: Vec<TokenId> = Vec::new();
        let mut total = 0.0;
        for t in 0..len {
            let mut best = (0, NEG);
            for tok in v.emittable() {
                let mut ext = seq.clone();
                ext.push(tok);
                let s = if t <= order {
                    table.score(t, 0, &ext).unwrap()
                } else {
                    total + table.score(order, t - order, &ext[t - order..]).unwrap()
                };
                if s > best.1 {
                    best = (tok, s);
                }
            }
            seq.push(best.0);
            total = best.1;
        }
        assert_eq!(beam_search(&table, len, 1, None).unwrap(), Some((seq, total)));
    }
}

#[test]
fn repetition_ratio_matches_set_count() {
    let mut r = rng(42);
    for _ in 0..200 {
        let len = r.gen_range(1..=12);
        let n = r.gen_range(1..=len);
        let toks: Vec<u8> = (0..len).map(|_| r.gen_range(0..4)).collect();
        let mut grams: Vec<&[u8]> = toks.windows(n).collect();
        let total = grams.len();
        grams.sort();
        grams.dedup();
        let got = repetition_ratio(&toks, n).unwrap();
        assert_eq!(got, grams.len() as f64 / total as f64);
        assert!((0.0..=1.0).contains(&got));
        assert_eq!(got == 1.0, grams.len() == total);
    }
}

fn small_model() -> cascade_core::potentials::NgramModel {
    let corpus: Vec<Vec<&str>> = vec![
        vec!["a", "b", "<eos>"],
        vec!["a", "a", "b", "a", "<eos>"],
        vec!["b", "<eos>"],
        vec!["b", "b", "a", "b", "b", "<eos>"],
    ];
    train_ngram(&corpus, 3, 0.5).unwrap()
}

#[test]
fn sweep_rows_follow_grid_order() {
    let model = small_model();
    let grid = SweepGrid {
        ks: vec![2],
        iters: vec![1, 2],
        delta_ls: vec![Some(0)],
    };
    let base = DecodeConfig {
        length_rule: LengthRule::Exact(4),
        ..DecodeConfig::default()
    };
    let rows = sweep(&[vec![0, 1]], &model, &grid, &base, false, 2).unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!((rows[0].iters, rows[1].iters), (1, 2));
    for row in &rows {
        assert!(row.error.is_none());
        for w in row.iterations.windows(2) {
            assert!(w[1].paths <= w[0].paths);
        }
        let line = row.to_line();
        for key in ["k=", "iters=", "delta_l=", "score=", "paths_iter0=", "ms_total=", "ms_scan="] {
            assert!(line.contains(key), "{line}");
        }
        assert!(line.contains(" tokens="));
    }
}

#[test]
fn wider_window_never_lowers_the_optimum() {
    let model = small_model();
    let grid = SweepGrid {
        ks: vec![2],
        iters: vec![2, 3],
        delta_ls: vec![Some(0), Some(3)],
    };
    let base = DecodeConfig {
        length_rule: LengthRule::Exact(4),
        ..DecodeConfig::default()
    };
    let rows = sweep(&[vec![0]], &model, &grid, &base, true, 0).unwrap();
    assert_eq!(rows.len(), 4);
    for pair in rows.chunks(2) {
        let (narrow, wide) = (pair[0].oracle.unwrap(), pair[1].oracle.unwrap());
        assert!(wide >= narrow);
        assert!(pair[0].score.unwrap() <= narrow + 1e-12);
    }
}

#[test]
fn empty_grid_is_rejected() {
    let model = small_model();
    let grid = SweepGrid {
        ks: vec![],
        iters: vec![1],
        delta_ls: vec![None],
    };
    assert!(sweep(&[vec![0]], &model, &grid, &DecodeConfig::default(), false, 1).is_err());
}

fn cfg(criterion: PruneCriterion) -> DecodeConfig {
    DecodeConfig {
        k_limit: 2,
        iterations: 3,
        length: LengthMode::Fixed,
        length_rule: LengthRule::Exact(3),
        criterion,
        ..DecodeConfig::default()
    }
}

#[test]
fn raw_scores_keep_the_trap() {
    for scale in [0.5, 1.0, 2.0, 4.0] {
        for margin in [0.0, 0.05, 0.1, 0.2, 0.5, 1.0] {
            let p = trap(scale, margin);
            let ids: Vec<TokenId> = p.vocab().emittable().collect();
            let (_, best) = brute_best(&p, &ids, 3, 2).unwrap();
            let mm = decode(&[], &p, &cfg(PruneCriterion::MaxMarginal)).unwrap();
            let raw = decode(&[], &p, &cfg(PruneCriterion::RawScore)).unwrap();
            assert_eq!(mm.log_score, best);
            assert!(raw.log_score < mm.log_score);

            let uni = score_unigrams(&p, 3).unwrap();
            let spans = init_unigram_set(&uni, 2, &[]).unwrap();
            let table = score_lattice(&spans, &p).unwrap();
            let kept_raw = prune_with(&spans, &table, 2, PruneCriterion::RawScore).unwrap();
            let kept_mm = prune_with(&spans, &table, 2, PruneCriterion::MaxMarginal).unwrap();
            assert!(kept_raw.spans.phi(0, &[0, 0]).is_some());
            assert!(kept_mm.spans.phi(1, &[1, 1]).is_some());
            assert!(kept_raw.spans.phi(1, &[1, 1]).is_none());
        }
    }
}

#[test]
fn single_edge_criteria_agree() {
    let mut r = rng(43);
    for _ in 0..50 {
        let v = vocab(3);
        let table = random_table(&mut r, &v, 2, 1, 0.0, false);
        let uni = score_unigrams(&table, 2).unwrap();
        let spans = init_unigram_set(&uni, 4, &[]).unwrap();
        let pot = score_lattice(&spans, &table).unwrap();
        let k = r.gen_range(1..=5);
        let a = prune_with(&spans, &pot, k, PruneCriterion::RawScore).unwrap();
        let b = prune_with(&spans, &pot, k, PruneCriterion::MaxMarginal).unwrap();
        assert_eq!(a.spans, b.spans);
    }
}
