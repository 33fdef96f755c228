mod common;

use cascade_core::cascade::{decode, DecodeConfig, LengthMode, LengthRule};
use cascade_core::length_relax::{strip_padding, wrap_potentials, LengthWindow};
use cascade_core::vocab::TokenId;
use common::*;
use proptest::prelude::*;
use rand::Rng;

fn window_cfg(k: usize, iterations: usize, predicted: usize, delta: usize) -> DecodeConfig {
    DecodeConfig {
        k_limit: k,
        iterations,
        length: LengthMode::Window { delta_l: delta },
        length_rule: LengthRule::Exact(predicted),
        ..DecodeConfig::default()
    }
}

#[test]
fn outputs_end_inside_the_window() {
    let mut r = rng(20);
    for _ in 0..200 {
        let v = vocab(r.gen_range(1..=4));
        let predicted = r.gen_range(1..=6);
        let delta = r.gen_range(0..=3.min(predicted - 1));
        let window = LengthWindow::new(predicted, delta).unwrap();
        let base = random_table(&mut r, &v, window.lattice_len(), 2, 0.0, false);
        let cfg = window_cfg(r.gen_range(1..=4), r.gen_range(2..=3), predicted, delta);
        let d = decode(&[], &base, &cfg).unwrap();
        let eos_at = d.path.iter().position(|&t| t == v.eos()).unwrap();
        assert!((window.earliest_eos()..=window.latest_eos()).contains(&eos_at));
        assert_eq!(d.tokens.len(), eos_at);
        let pad = d.path[window.final_index()];
        assert!(d.path[eos_at + 1..].iter().all(|&t| t == pad));
        assert!(!d.tokens.contains(&pad) && !d.tokens.contains(&v.eos()));
    }
}

#[test]
fn trailing_pads_do_not_change_scores() {
    let mut r = rng(21);
    for _ in 0..200 {
        let v = vocab(r.gen_range(1..=3));
        let predicted = r.gen_range(1..=5);
        let delta = r.gen_range(0..=2.min(predicted - 1));
        let window = LengthWindow::new(predicted, delta).unwrap();
        let base = random_table(&mut r, &v, window.lattice_len(), 2, 0.0, false);
        let wrapped = wrap_potentials(&base, window);
        let pad = wrapped.pad();
        let words: Vec<TokenId> = v.emittable().filter(|&t| t != v.eos()).collect();
        let n = r.gen_range(predicted - delta..=predicted + delta);
        let mut seq: Vec<TokenId> = (0..n - 1).map(|_| words[r.gen_range(0..words.len())]).collect();
        seq.push(v.eos());
        let mut padded = seq.clone();
        padded.resize(window.lattice_len(), pad);
        for order in 0..=2 {
            let a = model_score(&wrapped, &padded, order);
            let b = model_score(&base, &seq, order);
            assert!((a - b).abs() < 1e-12, "order {order}: {a} vs {b}");
        }
    }
}

#[test]
fn zero_delta_matches_forced_terminal_eos() {
    let mut r = rng(22);
    for _ in 0..100 {
        let v = vocab(r.gen_range(1..=3));
        let predicted = r.gen_range(1..=5);
        let order = r.gen_range(1..=2);
        let window = LengthWindow::new(predicted, 0).unwrap();
        let base = random_table(&mut r, &v, window.lattice_len(), order, 0.0, true);
        let k = (v.len() + 1).pow(order as u32 + 1);
        let d = decode(&[], &base, &window_cfg(k, order + 1, predicted, 0)).unwrap();
        let (seq, best) = best_terminated(&base, predicted..=predicted, order);
        assert_eq!(d.log_score, best);
        assert_eq!(d.tokens, seq[..seq.len() - 1]);
    }
}

#[test]
fn wide_window_finds_best_length() {
    let mut r = rng(23);
    for _ in 0..60 {
        let v = vocab(r.gen_range(1..=2));
        let predicted = r.gen_range(2..=4);
        let delta = r.gen_range(1..=predicted - 1);
        let window = LengthWindow::new(predicted, delta).unwrap();
        let base = random_table(&mut r, &v, window.lattice_len(), 1, 0.0, true);
        let k = (v.len() + 1).pow(2);
        let d = decode(&[], &base, &window_cfg(k, 2, predicted, delta)).unwrap();
        let (seq, best) = best_terminated(&base, predicted - delta..=predicted + delta, 1);
        assert_eq!(d.log_score, best);
        assert_eq!(d.tokens, seq[..seq.len() - 1]);
    }
}

#[test]
fn strip_examples() {
    let v = vocab(4).with_pad();
    let (eos, pad) = (v.eos(), v.pad().unwrap());
    assert_eq!(strip_padding(&[0, 1, 2, 3, eos, pad, pad, pad], eos).unwrap(), [0, 1, 2, 3]);
    assert!(strip_padding(&[eos, pad, pad], eos).unwrap().is_empty());
    assert!(strip_padding(&[0, 1], eos).is_err());
}

proptest! {
    #[test]
    fn stripped_paths_hold_no_markers(words in prop::collection::vec(0u32..3, 0..6), pads in 0usize..4) {
        let v = vocab(3).with_pad();
        let (eos, pad) = (v.eos(), v.pad().unwrap());
        let mut path = words.clone();
        path.push(eos);
        path.extend(std::iter::repeat_n(pad, pads));
        let out = strip_padding(&path, eos).unwrap();
        prop_assert_eq!(&out, &words);
        prop_assert!(!out.contains(&eos) && !out.contains(&pad));
    }
}
